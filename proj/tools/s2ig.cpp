#include <CLI11.hpp>
#include <torch/torch.h>

#include <iostream>

#include "s2ig/commands.hpp"
#include "s2ig/error.hpp"
#include "s2ig/experiment.hpp"
#include "s2ig/log.hpp"

namespace {

std::string config_help() {
  std::string out = "Configuration keys (section.key, ci default):\n";
  for (const auto& k : s2ig::config_keys()) {
    out += "  " + std::string(k.section) + "." + k.name + " = " + k.ci_default + "\n      " + k.help + "\n";
  }
  return out;
}

// Flags shared by the training commands.
void add_run_options(CLI::App* cmd, s2ig::RunArgs& run) {
  cmd->add_option("--config", run.config, "experiment config file ([run] [data] [sen] [rdg] [eval])")
      ->check(CLI::ExistingFile);
  cmd->add_option("--profile", run.profile, "default profile: ci (64 px stack) or full (64/128/256)")
      ->check(CLI::IsMember({"ci", "full"}));
  cmd->add_option("--set", run.overrides, "override a config value, section.key=value (repeatable)");
  cmd->add_option("--seed", run.seed, "global seed (run.seed)");
  cmd->add_option("--manifest", run.manifest, "corpus manifest (data.manifest)");
  cmd->add_option("--out", run.out, "run directory (default: $S2IG_EXPERIMENT_ROOT/<run.name>)");
  cmd->add_option("--resume", run.resume, "continue a run directory from its latest checkpoint")
      ->check(CLI::ExistingDirectory);
  cmd->add_option("--max-epochs", run.max_epochs, "stop after this many epochs in this invocation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech-to-image generation: corpus, SEN and RDG training, generation and evaluation.\n\n"
               "Environment: $S2IG_DATA_ROOT resolves relative data paths, $S2IG_EXPERIMENT_ROOT is the\n"
               "parent of new run directories.\n"
               "Exit codes: 0 ok, 1 failure, 2 config/validation, 3 compatibility, 4 protocol.",
               "s2ig"};
  app.require_subcommand(1);
  app.footer(config_help());
  bool quiet = false;
  int threads = 1;
  app.add_flag("-q,--quiet", quiet, "only print warnings and results");
  app.add_option("--threads", threads, "intra-op threads (results are reproducible for a fixed count)")
      ->check(CLI::PositiveNumber);

  s2ig::MakeDatasetArgs dataset;
  auto* make_dataset = app.add_subcommand("make-dataset", "write a deterministic synthetic corpus");
  make_dataset->add_option("--seed", dataset.seed, "corpus seed")->capture_default_str();
  make_dataset->add_option("--classes", dataset.num_classes, "number of classes")->capture_default_str();
  make_dataset->add_option("--per-class", dataset.per_class, "images per class")->capture_default_str();
  make_dataset->add_option("--image-size", dataset.image_size, "stored image size")->capture_default_str();
  make_dataset->add_option("--sample-rate", dataset.sample_rate_hz, "audio sample rate")->capture_default_str();
  make_dataset->add_option("--duration", dataset.duration_s, "utterance length in seconds")->capture_default_str();
  make_dataset->add_option("--out", dataset.out_dir, "output directory")->required();

  s2ig::RunArgs sen_run;
  auto* train_sen = app.add_subcommand("train-sen", "train the speech embedding network");
  add_run_options(train_sen, sen_run);

  s2ig::TrainRdgArgs rdg;
  auto* train_rdg = app.add_subcommand("train-rdg", "train the relation-supervised densely-stacked generator");
  add_run_options(train_rdg, rdg.run);
  train_rdg->add_option("--sen", rdg.sen_checkpoint, "SEN checkpoint or SEN run directory (rdg.sen_checkpoint)")
      ->check(CLI::ExistingPath);
  train_rdg->add_option("--ablate", rdg.ablations, "disable a component: no-dense, no-rs, no-sen (repeatable)")
      ->check(CLI::IsMember({"no-dense", "no-rs", "no-sen"}));

  s2ig::TrainBackboneArgs backbone;
  auto* train_backbone = app.add_subcommand("train-backbone", "train the desk-scale evaluation backbone");
  train_backbone->add_option("--config", backbone.run.config, "experiment config file")->check(CLI::ExistingFile);
  train_backbone->add_option("--profile", backbone.run.profile, "default profile")
      ->check(CLI::IsMember({"ci", "full"}));
  train_backbone->add_option("--set", backbone.run.overrides, "override a config value, section.key=value");
  train_backbone->add_option("--seed", backbone.run.seed, "seed");
  train_backbone->add_option("--manifest", backbone.run.manifest, "corpus manifest (train split is used)");
  train_backbone->add_option("--out", backbone.out, "checkpoint file")->required();

  s2ig::GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "synthesise images from speech");
  generate->add_option("--model", gen.checkpoint, "RDG checkpoint or RDG run directory")
      ->required()
      ->check(CLI::ExistingPath);
  generate->add_option("--manifest", gen.manifest, "generate for the utterances of a manifest")
      ->check(CLI::ExistingFile);
  generate->add_option("--split", gen.split, "manifest records: train, test or all")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "test", "all"}));
  generate->add_option("--audio", gen.audio, "WAV file(s) to generate from");
  generate->add_option("--class", gen.class_id, "class id recorded for --audio inputs (-1 = unknown)")
      ->capture_default_str();
  generate->add_option("--out", gen.out_dir, "output directory")->required();
  generate->add_option("--seed", gen.seed, "noise seed")->capture_default_str();
  generate->add_option("--per-caption", gen.per_caption, "images per utterance")->capture_default_str();
  generate->add_flag("--all-scales", gen.all_scales, "write every pyramid scale, not only the final one");
  generate->add_option("--sen", gen.sen_checkpoint, "relocated SEN checkpoint (its hash must match)")
      ->check(CLI::ExistingPath);

  s2ig::EvaluateArgs eval;
  auto* evaluate = app.add_subcommand("evaluate", "IS, FID and retrieval mAP of generated images");
  evaluate->add_option("--real", eval.real, "real images: manifest, corpus directory or feature cache")->required();
  evaluate->add_option("--fake", eval.fake, "generated directory (index.tsv) or feature cache")->required();
  evaluate->add_option("--real-split", eval.real_split, "manifest split used as the real set")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "test"}));
  evaluate->add_option("--backbone", eval.backbone, "desk backbone checkpoint (eval.backbone)");
  evaluate->add_option("--backbone-script", eval.backbone_script, "TorchScript backbone (eval.backbone_script)");
  evaluate->add_option("--config", eval.config, "experiment config file")->check(CLI::ExistingFile);
  evaluate->add_option("--profile", eval.profile, "default profile")->check(CLI::IsMember({"ci", "full"}));
  evaluate->add_option("--set", eval.overrides, "override a config value, section.key=value");
  evaluate->add_option("--save-features", eval.save_features, "directory for feature caches of image inputs");
  evaluate->add_option("--out", eval.out, "report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? s2ig::kExitOk : s2ig::kExitValidation;
  }

  s2ig::log::set_quiet(quiet);
  torch::set_num_threads(threads);

  try {
    if (*make_dataset) {
      const auto r = s2ig::cmd_make_dataset(dataset);
      std::cout << "manifest " << r.manifest.string() << "\ncorpus_sha256 " << r.corpus_hash << "\n";
    } else if (*train_sen) {
      const auto r = s2ig::cmd_train_sen(sen_run);
      std::cout << "run " << r.run_dir.string() << "\ncheckpoint " << r.checkpoint.string() << "\n";
    } else if (*train_rdg) {
      const auto r = s2ig::cmd_train_rdg(rdg);
      std::cout << "run " << r.run_dir.string() << "\ncheckpoint " << r.checkpoint.string() << "\n";
    } else if (*train_backbone) {
      std::cout << "backbone " << s2ig::cmd_train_backbone(backbone).string() << "\n";
    } else if (*generate) {
      const auto r = s2ig::cmd_generate(gen);
      std::cout << "generated " << r.images.size() << " images in " << r.out_dir.string() << "\n";
      if (r.failed > 0) std::cout << "failed " << r.failed << " utterances\n";
    } else if (*evaluate) {
      const auto r = s2ig::cmd_evaluate(eval);
      std::cout << "report " << r.report_path.string() << "\nIS " << r.report.is_mean << " +- " << r.report.is_std
                << "\nFID " << r.report.fid << "\nmAP " << r.report.map << "\n";
    }
  } catch (const c10::Error& e) {
    std::cerr << "s2ig: " << e.what_without_backtrace() << "\n";
    return s2ig::kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "s2ig: " << e.what() << "\n";
    return s2ig::exit_code_for(e);
  }
  return s2ig::kExitOk;
}
