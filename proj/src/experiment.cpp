#include "s2ig/experiment.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "s2ig/error.hpp"
#include "s2ig/hash.hpp"

namespace s2ig {
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSections{"run", "data", "sen", "rdg", "eval"};

std::string qualified(const std::string& section, const std::string& key) { return section + "." + key; }

const ConfigKey* find_key(const std::string& section, const std::string& key) {
  for (const auto& k : config_keys()) {
    if (section == k.section && key == k.name) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void check_profile(const std::string& profile) {
  if (profile != "ci" && profile != "full") {
    throw ValidationError("unknown profile '" + profile + "' (expected ci or full)");
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"run", "profile", "ci", "full", "budget profile the defaults come from (ci or full)"},
      {"run", "name", "s2ig", "s2ig", "run directory name under the experiment root"},
      {"run", "seed", "7", "7", "global seed: corpus, batch order, noise draws, query pools"},
      {"run", "checkpoint_every", "1", "5", "epochs between checkpoints"},

      {"data", "manifest", "", "", "manifest path; relative paths resolve against $S2IG_DATA_ROOT"},
      {"data", "num_classes", "0", "0", "label space size, 0 = from the manifest"},
      {"data", "frame_length_ms", "25", "25", "analysis window length"},
      {"data", "frame_shift_ms", "10", "10", "frame shift"},
      {"data", "num_mel", "40", "40", "Mel filterbank size"},
      {"data", "sample_rate_hz", "16000", "16000", "audio is resampled to this rate"},
      {"data", "log_floor", "1e-10", "1e-10", "added to Mel energies before the logarithm"},
      {"data", "normalize", "false", "false", "per-utterance mean/variance normalisation"},

      {"sen", "embed_dim", "1024", "1024", "common embedding size D"},
      {"sen", "beta", "10", "10", "matching-loss sharpness"},
      {"sen", "learning_rate", "2e-4", "2e-4", "Adam step size"},
      {"sen", "batch_size", "32", "32", "pairs per batch"},
      {"sen", "epochs", "30", "100", "training epochs"},
      {"sen", "augment", "true", "true", "random flip and crop of training images"},
      {"sen", "image_size", "256", "256", "image encoder input size"},
      {"sen", "freeze_backbone", "false", "false", "keep the image backbone fixed"},
      {"sen", "backbone_channels", "16", "32", "width of the convolutional image backbone"},
      {"sen", "backbone_checkpoint", "", "", "desk backbone whose weights initialise the image backbone"},
      {"sen", "backbone_script", "", "", "TorchScript backbone returning (logits, features); always frozen"},
      {"sen", "script_input_size", "299", "299", "input size of the scripted backbone"},
      {"sen", "script_feature_dim", "2048", "2048", "feature size of the scripted backbone"},
      {"sen", "speech_channels", "64", "64", "1-D convolution channels of the speech encoder"},
      {"sen", "gru_hidden", "64", "128", "GRU hidden size per direction"},
      {"sen", "gru_layers", "2", "2", "stacked bidirectional GRU layers"},
      {"sen", "attention_dim", "64", "128", "self-attention hidden size"},

      {"rdg", "sen_checkpoint", "", "", "trained SEN checkpoint providing the conditions"},
      {"rdg", "condition_dim", "0", "0", "expected condition size, 0 = taken from the condition source"},
      {"rdg", "scales", "64", "64 128 256", "generated image sizes, each doubling the previous"},
      {"rdg", "z_dim", "100", "100", "noise size"},
      {"rdg", "ca_dim", "128", "128", "conditioning augmentation size"},
      {"rdg", "gf_dim", "32", "32", "generator hidden feature channels"},
      {"rdg", "df_dim", "32", "64", "discriminator base channels"},
      {"rdg", "rs_channels", "16", "16", "relation supervisor encoder width"},
      {"rdg", "residual_blocks", "1", "2", "residual blocks per generator stage"},
      {"rdg", "kl_weight", "1", "1", "weight of the conditioning KL term in the generator loss"},
      {"rdg", "epochs", "50", "600", "training epochs"},
      {"rdg", "batch_size", "16", "16", "records per batch"},
      {"rdg", "lr_g", "2e-4", "2e-4", "generator Adam step size"},
      {"rdg", "lr_d", "2e-4", "2e-4", "discriminator and supervisor Adam step size"},
      {"rdg", "beta1", "0.5", "0.5", "Adam first moment decay"},
      {"rdg", "beta2", "0.999", "0.999", "Adam second moment decay"},
      {"rdg", "dense_stacking", "true", "true", "each stage sees all previous hidden features"},
      {"rdg", "relation_supervisor", "true", "true", "add the relation supervisor loss"},
      {"rdg", "use_sen_embeddings", "true", "true", "condition on SEN embeddings (else mean log-Mel frames)"},
      {"rdg", "sample_every", "10", "20", "epochs between sample grids"},

      {"eval", "backbone", "", "", "desk backbone checkpoint used for IS, FID and mAP"},
      {"eval", "backbone_script", "", "", "TorchScript backbone instead of a desk checkpoint"},
      {"eval", "script_input_size", "299", "299", "input size of the scripted backbone"},
      {"eval", "script_classes", "1000", "1000", "classifier outputs of the scripted backbone"},
      {"eval", "script_feature_dim", "2048", "2048", "feature size of the scripted backbone"},
      {"eval", "image_size", "0", "0", "evaluation resolution, 0 = size of the generated images"},
      {"eval", "is_splits", "10", "10", "inception score splits"},
      {"eval", "query_seed", "7", "7", "seed of the retrieval query pool"},
      {"eval", "queries_per_class", "2", "2", "real test images per class in the query pool"},
      {"eval", "fakes_per_caption", "1", "1", "generated images per test utterance"},
      {"eval", "backbone_epochs", "40", "40", "training epochs of the desk backbone"},
      {"eval", "backbone_channels", "16", "32", "width of the desk backbone"},
  };
  return keys;
}

ExperimentConfig ExperimentConfig::defaults(const std::string& profile) {
  check_profile(profile);
  ExperimentConfig c;
  c.profile_ = profile;
  for (const auto& k : config_keys()) {
    c.values_[qualified(k.section, k.name)] = profile == "ci" ? k.ci_default : k.full_default;
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::optional<fs::path>& file, const std::optional<std::string>& profile,
                                        const std::vector<std::string>& overrides) {
  if (!file) {
    auto c = defaults(profile.value_or("ci"));
    for (const auto& o : overrides) c.apply_override(o);
    c.validate();
    return c;
  }
  std::ifstream in(*file);
  if (!in) throw ValidationError("cannot read config " + file->string());
  std::stringstream text;
  text << in.rdbuf();
  return parse(text.str(), file->string(), profile, overrides);
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin,
                                         const std::optional<std::string>& profile,
                                         const std::vector<std::string>& overrides) {
  std::vector<CLI::ConfigItem> items;
  try {
    std::istringstream in(text);
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ValidationError(origin + ": " + e.what());
  }

  std::vector<std::tuple<std::string, std::string, std::string>> entries;
  std::set<std::string> seen;
  std::string file_profile;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (item.parents.empty()) {
      throw ValidationError(origin + ": key '" + item.name + "' must appear inside a [section]");
    }
    const std::string section = CLI::detail::join(item.parents, ".");
    if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
      throw ValidationError(origin + ": unknown section [" + section + "]");
    }
    if (find_key(section, item.name) == nullptr) {
      throw ValidationError(origin + ": unknown key '" + item.name + "' in [" + section + "]");
    }
    const auto q = qualified(section, item.name);
    if (!seen.insert(q).second) throw ValidationError(origin + ": duplicate key " + q);
    const std::string value = CLI::detail::join(item.inputs, " ");
    if (q == "run.profile") file_profile = value;
    entries.emplace_back(section, item.name, value);
  }

  const std::string chosen = profile ? *profile : (file_profile.empty() ? "ci" : file_profile);
  auto c = defaults(chosen);
  for (const auto& [section, key, value] : entries) {
    if (section == "run" && key == "profile") continue;
    c.set(section, key, value);
  }
  for (const auto& o : overrides) c.apply_override(o);
  c.validate();
  return c;
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ValidationError("override '" + assignment + "' is not of the form section.key=value");
  }
  const auto section = trim(assignment.substr(0, dot));
  const auto key = trim(assignment.substr(dot + 1, eq - dot - 1));
  if (section == "run" && key == "profile") {
    throw ValidationError("the profile cannot be overridden with --set; use --profile");
  }
  set(section, key, trim(assignment.substr(eq + 1)));
}

void ExperimentConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  if (find_key(section, key) == nullptr) throw ValidationError("unknown config key " + qualified(section, key));
  if (value.find('\n') != std::string::npos) {
    throw ValidationError("config value of " + qualified(section, key) + " spans several lines");
  }
  values_[qualified(section, key)] = value;
  if (section == "run" && key == "profile") profile_ = value;
}

bool ExperimentConfig::has(const std::string& section, const std::string& key) const {
  return values_.contains(qualified(section, key));
}

const std::string& ExperimentConfig::get(const std::string& section, const std::string& key) const {
  const auto it = values_.find(qualified(section, key));
  if (it == values_.end()) throw ValidationError("unknown config key " + qualified(section, key));
  return it->second;
}

std::string ExperimentConfig::get_string(const std::string& section, const std::string& key) const {
  return get(section, key);
}

int64_t ExperimentConfig::get_int(const std::string& section, const std::string& key) const {
  const auto& v = get(section, key);
  try {
    std::size_t used = 0;
    const auto out = std::stoll(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ValidationError(qualified(section, key) + ": expected an integer, got '" + v + "'");
}

double ExperimentConfig::get_double(const std::string& section, const std::string& key) const {
  const auto& v = get(section, key);
  try {
    std::size_t used = 0;
    const auto out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ValidationError(qualified(section, key) + ": expected a number, got '" + v + "'");
}

bool ExperimentConfig::get_bool(const std::string& section, const std::string& key) const {
  const auto& v = get(section, key);
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw ValidationError(qualified(section, key) + ": expected true or false, got '" + v + "'");
}

std::vector<int64_t> ExperimentConfig::get_int_list(const std::string& section, const std::string& key) const {
  std::string v = get(section, key);
  std::replace(v.begin(), v.end(), ',', ' ');
  std::istringstream in(v);
  std::vector<int64_t> out;
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ValidationError(qualified(section, key) + ": expected integers, got '" + get(section, key) + "'");
    }
  }
  if (out.empty()) throw ValidationError(qualified(section, key) + " is empty");
  return out;
}

std::uint64_t ExperimentConfig::seed() const {
  const auto s = get_int("run", "seed");
  if (s < 0) throw ValidationError("run.seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

FrontendConfig ExperimentConfig::frontend() const {
  FrontendConfig f;
  f.frame_length_ms = get_double("data", "frame_length_ms");
  f.frame_shift_ms = get_double("data", "frame_shift_ms");
  f.num_mel = static_cast<int>(get_int("data", "num_mel"));
  f.sample_rate_hz = static_cast<int>(get_int("data", "sample_rate_hz"));
  f.log_floor = get_double("data", "log_floor");
  f.normalize = get_bool("data", "normalize");
  return f;
}

fs::path ExperimentConfig::manifest() const {
  const fs::path p = get("data", "manifest");
  if (p.empty() || p.is_absolute()) return p;
  if (const char* root = std::getenv(kDataRootEnv); root != nullptr && *root != '\0') return fs::path(root) / p;
  return p;
}

SenOptions ExperimentConfig::sen_options() const {
  SenOptions o;
  o.num_classes = static_cast<int>(get_int("data", "num_classes"));
  o.embed_dim = get_int("sen", "embed_dim");
  o.image_size = get_int("sen", "image_size");
  o.beta = get_double("sen", "beta");
  o.freeze_backbone = get_bool("sen", "freeze_backbone");
  o.backbone.channels = get_int("sen", "backbone_channels");
  o.backbone_checkpoint = get("sen", "backbone_checkpoint");
  o.backbone_script = get("sen", "backbone_script");
  o.script_input_size = get_int("sen", "script_input_size");
  o.script_feature_dim = get_int("sen", "script_feature_dim");
  o.speech.num_mel = get_int("data", "num_mel");
  o.speech.conv_channels = get_int("sen", "speech_channels");
  o.speech.gru_hidden = get_int("sen", "gru_hidden");
  o.speech.gru_layers = get_int("sen", "gru_layers");
  o.speech.attention_dim = get_int("sen", "attention_dim");
  o.speech.embed_dim = o.embed_dim;
  return o;
}

SenSchedule ExperimentConfig::sen_schedule() const {
  SenSchedule s;
  s.epochs = static_cast<int>(get_int("sen", "epochs"));
  s.batch_size = get_int("sen", "batch_size");
  s.learning_rate = get_double("sen", "learning_rate");
  s.seed = seed();
  s.augment = get_bool("sen", "augment");
  return s;
}

AblationFlags ExperimentConfig::ablation_flags() const {
  AblationFlags f;
  f.dense_stacking = get_bool("rdg", "dense_stacking");
  f.relation_supervisor = get_bool("rdg", "relation_supervisor");
  f.use_sen_embeddings = get_bool("rdg", "use_sen_embeddings");
  return f;
}

RdgOptions ExperimentConfig::rdg_options() const {
  RdgOptions o;
  o.condition_dim = get_int("rdg", "condition_dim");
  o.ca_dim = get_int("rdg", "ca_dim");
  o.z_dim = get_int("rdg", "z_dim");
  o.gf_dim = get_int("rdg", "gf_dim");
  o.df_dim = get_int("rdg", "df_dim");
  o.rs_channels = get_int("rdg", "rs_channels");
  o.residual_blocks = get_int("rdg", "residual_blocks");
  o.scales = get_int_list("rdg", "scales");
  o.kl_weight = get_double("rdg", "kl_weight");
  o.flags = ablation_flags();
  return o;
}

RdgSchedule ExperimentConfig::rdg_schedule() const {
  RdgSchedule s;
  s.epochs = static_cast<int>(get_int("rdg", "epochs"));
  s.batch_size = get_int("rdg", "batch_size");
  s.lr_g = get_double("rdg", "lr_g");
  s.lr_d = get_double("rdg", "lr_d");
  s.beta1 = get_double("rdg", "beta1");
  s.beta2 = get_double("rdg", "beta2");
  s.seed = seed();
  return s;
}

EvaluationSettings ExperimentConfig::eval_settings() const {
  EvaluationSettings e;
  e.is_splits = static_cast<int>(get_int("eval", "is_splits"));
  e.query_seed = static_cast<std::uint64_t>(get_int("eval", "query_seed"));
  e.queries_per_class = static_cast<int>(get_int("eval", "queries_per_class"));
  return e;
}

DeskBackboneSchedule ExperimentConfig::backbone_schedule() const {
  DeskBackboneSchedule s;
  s.epochs = static_cast<int>(get_int("eval", "backbone_epochs"));
  s.extractor.channels = get_int("eval", "backbone_channels");
  s.seed = seed();
  return s;
}

void ExperimentConfig::validate() const {
  check_profile(profile_);
  seed();
  if (get_int("run", "checkpoint_every") < 1) throw ValidationError("run.checkpoint_every must be >= 1");
  if (get("run", "name").empty()) throw ValidationError("run.name must not be empty");
  if (get_int("data", "num_classes") < 0) throw ValidationError("data.num_classes must be >= 0");
  frontend().validate();

  auto sen = sen_options();
  if (sen.num_classes == 0) sen.num_classes = 2;  // checked against the manifest later
  sen.validate();
  const auto ss = sen_schedule();
  if (ss.epochs < 0 || ss.batch_size < 2 || !(ss.learning_rate > 0.0)) {
    throw ValidationError("sen: epochs must be >= 0, batch_size >= 2 and learning_rate > 0");
  }

  auto rdg = rdg_options();
  if (rdg.condition_dim < 0) throw ValidationError("rdg.condition_dim must be >= 0");
  if (rdg.condition_dim == 0) rdg.condition_dim = 1;
  rdg.validate();
  const auto rs = rdg_schedule();
  if (rs.epochs < 0 || rs.batch_size < 2 || !(rs.lr_g > 0.0) || !(rs.lr_d > 0.0)) {
    throw ValidationError("rdg: epochs must be >= 0, batch_size >= 2 and learning rates > 0");
  }
  if (get_int("rdg", "sample_every") < 1) throw ValidationError("rdg.sample_every must be >= 1");

  const auto ev = eval_settings();
  if (ev.is_splits < 1 || ev.queries_per_class < 1) {
    throw ValidationError("eval: is_splits and queries_per_class must be >= 1");
  }
  if (get_int("eval", "fakes_per_caption") < 1) throw ValidationError("eval.fakes_per_caption must be >= 1");
  if (get_int("eval", "image_size") < 0) throw ValidationError("eval.image_size must be >= 0");
  if (get_int("eval", "backbone_epochs") < 1 || get_int("eval", "backbone_channels") < 1) {
    throw ValidationError("eval: backbone_epochs and backbone_channels must be >= 1");
  }
}

std::string ExperimentConfig::echo() const {
  std::ostringstream out;
  for (const auto& section : kSections) {
    if (&section != &kSections.front()) out << "\n";
    out << "[" << section << "]\n";
    for (const auto& k : config_keys()) {
      if (section != k.section) continue;
      const auto& v = get(k.section, k.name);
      out << k.name << " =";
      if (!v.empty()) out << " " << (v.find_first_of(" \t;#\"") != std::string::npos ? "\"" + v + "\"" : v);
      out << "\n";
    }
  }
  return out.str();
}

std::string ExperimentConfig::hash() const { return sha256_hex(echo()); }

fs::path experiment_root() {
  if (const char* root = std::getenv(kExperimentRootEnv); root != nullptr && *root != '\0') return root;
  return "experiments";
}

fs::path unique_path(const fs::path& path) {
  if (!fs::exists(path)) return path;
  const auto parent = path.parent_path();
  const auto stem = path.stem().string();
  const auto ext = path.extension().string();
  for (int i = 1;; ++i) {
    const auto candidate = parent / (stem + "-" + std::to_string(i) + ext);
    if (!fs::exists(candidate)) return candidate;
  }
}

ExperimentDir ExperimentDir::create(const fs::path& requested) {
  fs::path path = requested;
  for (int i = 1; fs::exists(path); ++i) path = requested.string() + "-" + std::to_string(i);
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create run directory " + path.string() + ": " + ec.message());
  ExperimentDir dir(path);
  fs::create_directories(dir.checkpoints());
  fs::create_directories(dir.samples());
  fs::create_directories(dir.reports());
  return dir;
}

ExperimentDir ExperimentDir::open(const fs::path& path) {
  if (!fs::is_directory(path)) throw ValidationError("run directory not found: " + path.string());
  ExperimentDir dir(path);
  if (!fs::is_regular_file(dir.config_echo())) {
    throw ValidationError(path.string() + " has no " + kConfigEchoName + "; not a run directory");
  }
  return dir;
}

void ExperimentDir::write_config(const ExperimentConfig& config) const {
  std::ofstream out(config_echo(), std::ios::binary);
  if (!out) throw IoError("cannot write " + config_echo().string());
  out << config.echo();
}

ExperimentConfig ExperimentDir::read_config() const {
  std::ifstream in(config_echo());
  if (!in) throw ValidationError("cannot read " + config_echo().string());
  std::stringstream text;
  text << in.rdbuf();
  auto config = ExperimentConfig::parse(text.str(), config_echo().string());
  // The echo pins its own profile, so parsing it without overrides is exact.
  return config;
}

}  // namespace s2ig
