#include "s2ig/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "s2ig/backbone.hpp"
#include "s2ig/corpus.hpp"
#include "s2ig/error.hpp"
#include "s2ig/evaluation.hpp"
#include "s2ig/feature_cache.hpp"
#include "s2ig/hash.hpp"
#include "s2ig/image_io.hpp"
#include "s2ig/log.hpp"
#include "s2ig/manifest.hpp"
#include "s2ig/rdg.hpp"
#include "s2ig/sen.hpp"
#include "s2ig/synthetic.hpp"

namespace s2ig {
namespace fs = std::filesystem;

namespace {

constexpr const char* kSenCheckpoint = "sen.pt";
constexpr const char* kRdgCheckpoint = "rdg.pt";
constexpr const char* kSenHistory = "sen_history.csv";
constexpr const char* kRdgHistory = "rdg_history.csv";

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("corrupt " + path.string() + ": " + e.what());
  }
}

fs::path require_manifest(const ExperimentConfig& config) {
  const auto manifest = config.manifest();
  if (manifest.empty()) throw ValidationError("no manifest: set data.manifest or pass --manifest");
  return manifest;
}

Corpus load_corpus(const ExperimentConfig& config) {
  const auto manifest = require_manifest(config);
  const auto declared = config.get_int("data", "num_classes");
  const int num_classes = declared > 0 ? static_cast<int>(declared) : manifest_num_classes(manifest);
  return Corpus::load(manifest, config.frontend(), num_classes);
}

struct RunContext {
  ExperimentConfig config;
  ExperimentDir dir;
  bool resumed = false;
};

RunContext open_run(const RunArgs& args, const ExperimentConfig& config) {
  if (args.resume) return {config, ExperimentDir::open(*args.resume), true};
  const fs::path requested = args.out ? *args.out : experiment_root() / config.get("run", "name");
  auto dir = ExperimentDir::create(requested);
  dir.write_config(config);
  return {config, std::move(dir), false};
}

// Lineage block stored in every checkpoint of a run.
nlohmann::json lineage(const ExperimentConfig& config, const Corpus& corpus) {
  return {{"config", config.echo()},
          {"config_sha256", config.hash()},
          {"inputs", {{"manifest", fs::absolute(require_manifest(config)).string()},
                      {"manifest_sha256", corpus.fingerprint()}}}};
}

void update_run_info(const ExperimentDir& dir, const std::string& stage, const nlohmann::json& info) {
  auto j = read_json(dir.run_info());
  j[stage] = info;
  write_json(dir.run_info(), j);
}

int epochs_this_call(const RunArgs& args, int done, int total) {
  const int remaining = std::max(0, total - done);
  return args.max_epochs ? std::min(*args.max_epochs, remaining) : remaining;
}

std::string epoch_tag(int epoch, int total) {
  return "epoch " + std::to_string(epoch) + "/" + std::to_string(total);
}

fs::path rdg_checkpoint_path(const fs::path& p) {
  if (fs::is_directory(p)) return ExperimentDir::open(p).checkpoints() / kRdgCheckpoint;
  return p;
}

fs::path sen_checkpoint_path(const fs::path& p) {
  if (fs::is_directory(p)) return ExperimentDir::open(p).checkpoints() / kSenCheckpoint;
  return p;
}

std::string padded(std::size_t i, int width) {
  std::string s = std::to_string(i);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

std::unique_ptr<FeatureBackbone> make_eval_backbone(const ExperimentConfig& config,
                                                    const std::optional<fs::path>& backbone,
                                                    const std::optional<fs::path>& script) {
  const fs::path script_path = script ? *script : fs::path(config.get("eval", "backbone_script"));
  if (!script_path.empty()) {
    return std::make_unique<TorchScriptBackbone>(script_path, config.get_int("eval", "script_input_size"),
                                                 config.get_int("eval", "script_classes"),
                                                 config.get_int("eval", "script_feature_dim"));
  }
  const fs::path desk = backbone ? *backbone : fs::path(config.get("eval", "backbone"));
  if (desk.empty()) {
    throw ValidationError("no evaluation backbone: pass --backbone (see train-backbone) or --backbone-script");
  }
  return DeskBackbone::load(desk);
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split '" + s + "' (expected train or test)");
}

// Resolution of the first image of a generated directory or manifest.
int64_t native_size(const fs::path& source) {
  fs::path first;
  if (fs::is_directory(source) && fs::exists(source / kGeneratedIndexName)) {
    const auto records = read_generated_index(source);
    if (!records.empty()) first = source / records.front().image_path;
  } else {
    const auto manifest = fs::is_directory(source) ? source / "manifest.tsv" : source;
    const auto entries = load_manifest(manifest);
    if (!entries.empty()) first = entries.front().image_path;
  }
  if (first.empty()) throw ValidationError(source.string() + ": no images to evaluate");
  return read_image(first).size(-1);
}

}  // namespace

// ---- make-dataset ----------------------------------------------------------

MakeDatasetResult cmd_make_dataset(const MakeDatasetArgs& args) {
  SyntheticCorpusOptions o;
  o.seed = args.seed;
  o.num_classes = args.num_classes;
  o.images_per_class = args.per_class;
  o.out_dir = args.out_dir;
  o.image_size = args.image_size;
  o.sample_rate_hz = args.sample_rate_hz;
  o.duration_s = args.duration_s;
  MakeDatasetResult r;
  r.manifest = make_synthetic_corpus(o);
  r.corpus_hash = corpus_hash(r.manifest);
  return r;
}

// ---- configuration ---------------------------------------------------------

ExperimentConfig resolve_config(const RunArgs& args, const std::vector<std::string>& extra_overrides) {
  if (args.resume) {
    if (args.config || args.profile || !args.overrides.empty() || args.seed || args.manifest ||
        !extra_overrides.empty()) {
      throw ValidationError("--resume takes its configuration from the run directory; drop the other config flags");
    }
    return ExperimentDir::open(*args.resume).read_config();
  }
  std::vector<std::string> overrides = args.overrides;
  if (args.seed) overrides.push_back("run.seed=" + std::to_string(*args.seed));
  if (args.manifest) overrides.push_back("data.manifest=" + fs::absolute(*args.manifest).string());
  overrides.insert(overrides.end(), extra_overrides.begin(), extra_overrides.end());
  return ExperimentConfig::load(args.config, args.profile, overrides);
}

// ---- train-sen -------------------------------------------------------------

TrainResult cmd_train_sen(const RunArgs& args) {
  if (args.max_epochs && *args.max_epochs < 0) throw ValidationError("--max-epochs must be >= 0");
  const auto config = resolve_config(args);
  const auto corpus = load_corpus(config);
  auto options = config.sen_options();
  if (options.num_classes != 0 && options.num_classes != corpus.num_classes()) {
    throw ValidationError("data.num_classes disagrees with the manifest");
  }
  options.num_classes = corpus.num_classes();
  const auto schedule = config.sen_schedule();
  auto run = open_run(args, config);

  TrainResult result;
  result.run_dir = run.dir.path();
  result.checkpoint = run.dir.checkpoints() / kSenCheckpoint;
  result.history = run.dir.path() / kSenHistory;

  SenTrainer trainer(corpus, options, schedule);
  std::vector<SenHistoryRow> prior;
  if (run.resumed) {
    trainer.resume(result.checkpoint);
    if (fs::exists(result.history)) {
      for (const auto& row : read_sen_history(result.history)) {
        if (row.step < trainer.step()) prior.push_back(row);
      }
    }
    log::info("resuming " + result.run_dir.string() + " at " + epoch_tag(trainer.epoch(), schedule.epochs));
  }
  const auto extra = lineage(config, corpus);
  const int every = static_cast<int>(config.get_int("run", "checkpoint_every"));
  const int target = trainer.epoch() + epochs_this_call(args, trainer.epoch(), schedule.epochs);

  auto persist = [&] {
    std::vector<SenHistoryRow> rows = prior;
    rows.insert(rows.end(), trainer.history().begin(), trainer.history().end());
    write_sen_history(result.history, rows);
    trainer.save(result.checkpoint, extra);
  };

  try {
    while (trainer.epoch() < target) {
      const auto rows = trainer.run_epoch();
      double total = 0.0;
      for (const auto& r : rows) total += r.total;
      log::info("sen " + epoch_tag(trainer.epoch(), schedule.epochs) +
                " loss=" + std::to_string(rows.empty() ? 0.0 : total / static_cast<double>(rows.size())));
      if (trainer.epoch() % every == 0 || trainer.epoch() == target) persist();
    }
  } catch (const DivergenceError& e) {
    log::warn(std::string(e.what()) + "; last good checkpoint kept at " + result.checkpoint.string());
    throw;
  }
  if (!fs::exists(result.checkpoint)) persist();

  result.epoch = trainer.epoch();
  result.finished = trainer.epoch() >= schedule.epochs;
  if (result.finished) {
    auto network = trainer.network();
    const auto test = corpus.indices(Split::kTest);
    nlohmann::json info = {{"checkpoint", result.checkpoint.string()}, {"epochs", result.epoch},
                           {"steps", trainer.step()}};
    if (test.size() >= 2) {
      const double recall = speech_to_image_recall_at_1(network, corpus, test);
      info["test_recall_at_1"] = recall;
      log::info("held-out speech-to-image recall@1 = " + std::to_string(recall));
    }
    update_run_info(run.dir, "sen", info);
  }
  return result;
}

// ---- train-rdg -------------------------------------------------------------

TrainResult cmd_train_rdg(const TrainRdgArgs& args) {
  if (args.run.max_epochs && *args.run.max_epochs < 0) throw ValidationError("--max-epochs must be >= 0");
  std::vector<std::string> extra_overrides;
  if (args.sen_checkpoint) {
    extra_overrides.push_back("rdg.sen_checkpoint=" + fs::absolute(sen_checkpoint_path(*args.sen_checkpoint)).string());
  }
  for (const auto& name : args.ablations) {
    const auto flags = apply_ablation(AblationFlags{}, name);
    if (!flags.dense_stacking) extra_overrides.emplace_back("rdg.dense_stacking=false");
    if (!flags.relation_supervisor) extra_overrides.emplace_back("rdg.relation_supervisor=false");
    if (!flags.use_sen_embeddings) extra_overrides.emplace_back("rdg.use_sen_embeddings=false");
  }
  const auto config = resolve_config(args.run, extra_overrides);
  auto options = config.rdg_options();

  std::optional<ConditionEncoder> encoder;
  if (options.flags.use_sen_embeddings) {
    const fs::path sen = config.get("rdg", "sen_checkpoint");
    if (sen.empty()) throw ValidationError("no SEN checkpoint: set rdg.sen_checkpoint or pass --sen");
    encoder = ConditionEncoder::from_sen(sen);
    const auto sen_frontend = load_sen(sen).metadata.at("frontend").get<FrontendConfig>();
    if (nlohmann::json(sen_frontend) != nlohmann::json(config.frontend())) {
      throw CompatibilityError("the SEN checkpoint was trained with frontend " + nlohmann::json(sen_frontend).dump() +
                               " but the run configures " + nlohmann::json(config.frontend()).dump());
    }
  } else {
    encoder = ConditionEncoder::mean_spectrogram(config.frontend().num_mel);
  }
  if (options.condition_dim == 0) {
    options.condition_dim = encoder->dim();
  } else if (options.condition_dim != encoder->dim()) {
    throw CompatibilityError("RDG condition dimension " + std::to_string(options.condition_dim) +
                             " does not match the condition source dimension " + std::to_string(encoder->dim()) +
                             " (" + encoder->source().value("kind", std::string()) + ")");
  }

  const auto corpus = load_corpus(config);
  auto table = condition_table(corpus, *encoder);
  const auto schedule = config.rdg_schedule();
  auto run = open_run(args.run, config);

  TrainResult result;
  result.run_dir = run.dir.path();
  result.checkpoint = run.dir.checkpoints() / kRdgCheckpoint;
  result.history = run.dir.path() / kRdgHistory;

  RdgTrainer trainer(corpus, std::move(table), options, schedule);
  std::vector<RdgHistoryRow> prior;
  if (run.resumed) {
    trainer.resume(result.checkpoint);
    if (fs::exists(result.history)) {
      for (const auto& row : read_rdg_history(result.history)) {
        if (row.step < trainer.step()) prior.push_back(row);
      }
    }
    log::info("resuming " + result.run_dir.string() + " at " + epoch_tag(trainer.epoch(), schedule.epochs));
  }
  const auto extra = lineage(config, corpus);
  const int every = static_cast<int>(config.get_int("run", "checkpoint_every"));
  const int sample_every = static_cast<int>(config.get_int("rdg", "sample_every"));
  const int target = trainer.epoch() + epochs_this_call(args.run, trainer.epoch(), schedule.epochs);

  auto persist = [&] {
    std::vector<RdgHistoryRow> rows = prior;
    rows.insert(rows.end(), trainer.history().begin(), trainer.history().end());
    write_rdg_history(result.history, rows);
    trainer.save(result.checkpoint, extra);
  };

  try {
    while (trainer.epoch() < target) {
      const auto rows = trainer.run_epoch();
      if (!rows.empty()) {
        const auto& last = rows.back();
        log::info("rdg " + epoch_tag(trainer.epoch(), schedule.epochs) + " L_G=" + std::to_string(last.generator) +
                  " L_D0=" + std::to_string(last.discriminator[0]) + " L_RS=" + std::to_string(last.relation));
      }
      if (trainer.epoch() % sample_every == 0 || trainer.epoch() == schedule.epochs) {
        trainer.write_sample_grid(run.dir.samples() / ("samples_step" + std::to_string(trainer.step()) + ".png"));
      }
      if (trainer.epoch() % every == 0 || trainer.epoch() == target) persist();
    }
  } catch (const DivergenceError& e) {
    log::warn(std::string(e.what()) + "; last good checkpoint kept at " + result.checkpoint.string());
    throw;
  }
  if (!fs::exists(result.checkpoint)) persist();

  result.epoch = trainer.epoch();
  result.finished = trainer.epoch() >= schedule.epochs;
  if (result.finished) {
    update_run_info(run.dir, "rdg",
                    {{"checkpoint", result.checkpoint.string()}, {"epochs", result.epoch}, {"steps", trainer.step()},
                     {"flags", options.flags}, {"ablation", options.flags.label()}});
  }
  return result;
}

// ---- train-backbone --------------------------------------------------------

fs::path cmd_train_backbone(const TrainBackboneArgs& args) {
  if (args.run.resume) throw ValidationError("train-backbone does not support --resume");
  if (args.out.empty()) throw ValidationError("train-backbone needs --out");
  const auto config = resolve_config(args.run);
  const auto corpus = load_corpus(config);
  const auto train = corpus.indices(Split::kTrain);
  auto backbone = train_desk_backbone(corpus, train, config.backbone_schedule());
  const auto out = unique_path(args.out);
  backbone->save(out);
  const auto test = corpus.indices(Split::kTest);
  if (!test.empty()) {
    const auto result = backbone->run(corpus.images(test, kImageScales.back()));
    const double accuracy =
        (result.probabilities.argmax(1) == corpus.labels(test)).to(torch::kFloat64).mean().item<double>();
    log::info("desk backbone held-out accuracy = " + std::to_string(accuracy));
  }
  return out;
}

// ---- generate --------------------------------------------------------------

GenerateResult cmd_generate(const GenerateArgs& args) {
  if (args.per_caption < 1) throw ValidationError("--per-caption must be >= 1");
  if (args.out_dir.empty()) throw ValidationError("generate needs --out");
  if (!args.manifest && args.audio.empty()) throw ValidationError("generate needs --manifest or --audio");
  if (args.manifest && !args.audio.empty()) throw ValidationError("--manifest and --audio are exclusive");

  const auto checkpoint = rdg_checkpoint_path(args.checkpoint);
  auto loaded = load_rdg(checkpoint);
  auto& nets = *loaded.networks;
  auto source = loaded.metadata.at("condition");
  if (args.sen_checkpoint) {
    if (source.value("kind", std::string()) != "sen") {
      throw ValidationError("--sen given but the model is not conditioned on SEN embeddings");
    }
    source["checkpoint"] = fs::absolute(sen_checkpoint_path(*args.sen_checkpoint)).string();
  }
  auto encoder = ConditionEncoder::from_source(source);
  if (encoder.dim() != nets.options.condition_dim) {
    throw CompatibilityError("condition source yields " + std::to_string(encoder.dim()) +
                             "-d vectors but the generator expects " + std::to_string(nets.options.condition_dim));
  }
  const auto frontend = loaded.metadata.at("frontend").get<FrontendConfig>();

  struct Input {
    fs::path audio;
    int class_id;
  };
  std::vector<Input> inputs;
  if (args.manifest) {
    const bool all = args.split == "all";
    const auto split = all ? Split::kTrain : parse_split(args.split);
    for (const auto& e : load_manifest(*args.manifest)) {
      if (all || e.split == split) inputs.push_back({e.audio_path, e.class_id});
    }
  } else {
    for (const auto& a : args.audio) inputs.push_back({a, args.class_id});
  }
  if (inputs.empty()) throw ValidationError("no utterances to generate from");

  GenerateResult result;
  result.out_dir = args.out_dir;
  if (fs::exists(args.out_dir) && !fs::is_empty(args.out_dir)) result.out_dir = unique_path(args.out_dir);
  fs::create_directories(result.out_dir);

  const int width = std::max(4, static_cast<int>(std::to_string(inputs.size()).size()));
  auto generator = make_generator(derive_seed(args.seed, 0x6E4));
  std::vector<GeneratedRecord> index;
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Spectrogram spec;
    try {
      spec = load_spectrogram(inputs[i].audio, frontend);
    } catch (const std::exception& e) {
      log::warn("skipping " + inputs[i].audio.string() + ": " + e.what());
      ++result.failed;
      continue;
    }
    const Spectrogram* one[] = {&spec};
    const auto condition = encoder.encode(one).repeat({args.per_caption, 1});
    const auto z = noise(args.per_caption, nets.options.z_dim, generator);
    const auto pyramid = nets.generate(condition, z);
    const auto stem = padded(i, width) + "_" + inputs[i].audio.stem().string();
    for (int k = 0; k < args.per_caption; ++k) {
      const std::string base = args.per_caption > 1 ? stem + "_" + std::to_string(k) : stem;
      if (args.all_scales) {
        for (std::size_t s = 0; s < pyramid.images.size(); ++s) {
          const auto name = base + "_" + std::to_string(nets.options.scales[s]) + ".png";
          write_png(result.out_dir / name, pyramid.images[s][k]);
        }
      }
      const auto final_name =
          args.all_scales ? base + "_" + std::to_string(nets.options.final_scale()) + ".png" : base + ".png";
      if (!args.all_scales) write_png(result.out_dir / final_name, pyramid.images.back()[k]);
      result.images.push_back(result.out_dir / final_name);
      index.push_back({final_name, inputs[i].class_id, fs::absolute(inputs[i].audio).string()});
    }
  }
  if (index.empty()) throw Error("every input utterance failed; nothing generated");
  write_generated_index(result.out_dir, index);
  write_json(result.out_dir / "generate.json",
             {{"checkpoint", fs::absolute(checkpoint).string()},
              {"checkpoint_sha256", loaded.file_hash},
              {"seed", args.seed},
              {"per_caption", args.per_caption},
              {"flags", nets.options.flags},
              {"condition", encoder.source()},
              {"config", loaded.metadata.value("config", std::string())},
              {"failed", result.failed}});
  return result;
}

// ---- evaluate --------------------------------------------------------------

EvaluateResult cmd_evaluate(const EvaluateArgs& args) {
  if (args.out.empty()) throw ValidationError("evaluate needs --out");
  const auto config = ExperimentConfig::load(args.config, args.profile, args.overrides);
  const auto settings = config.eval_settings();
  const auto real_split = parse_split(args.real_split);

  const bool real_cached = is_feature_cache(args.real);
  const bool fake_cached = is_feature_cache(args.fake);
  std::unique_ptr<FeatureBackbone> backbone;
  if (!real_cached || !fake_cached) backbone = make_eval_backbone(config, args.backbone, args.backbone_script);

  int64_t size = config.get_int("eval", "image_size");
  if (size == 0) {
    if (!fake_cached) {
      size = native_size(args.fake);
    } else if (!real_cached) {
      size = load_feature_set(args.fake).lineage.value("image_size", int64_t{0});
    }
    if (size == 0 && !real_cached) throw ValidationError("cannot infer the evaluation size; set eval.image_size");
  }
  auto features_of = [&](const fs::path& source, bool cached, Split split, const char* name) {
    if (cached) return load_feature_set(source);
    const auto images = load_labeled_images(source, size, split);
    auto set = extract_features(*backbone, images);
    set.lineage["image_size"] = size;
    if (args.save_features) {
      fs::create_directories(*args.save_features);
      save_feature_set(unique_path(*args.save_features / (std::string(name) + ".s2f")), set);
    }
    return set;
  };
  const auto real = features_of(args.real, real_cached, real_split, "real");
  const auto fake = features_of(args.fake, fake_cached, Split::kTest, "fake");

  EvaluateResult result;
  result.report = compute_report(real, fake, settings);
  result.report.image_size = size != 0 ? size : fake.lineage.value("image_size", int64_t{0});
  result.report.config = config.echo();
  validate_report_json(report_to_json(result.report));
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  result.report_path = unique_path(args.out);
  write_report(result.report_path, result.report);
  return result;
}

}  // namespace s2ig
