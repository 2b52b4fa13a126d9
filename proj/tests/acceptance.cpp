// Acceptance checks, one PASS/FAIL line per criterion.
//   s2ig_acceptance [--criterion N]... [--work DIR]
#include <CLI11.hpp>
#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <numbers>
#include <random>
#include <sstream>

#include "s2ig/backbone.hpp"
#include "s2ig/commands.hpp"
#include "s2ig/evaluation.hpp"
#include "s2ig/experiment.hpp"
#include "s2ig/hash.hpp"
#include "s2ig/log.hpp"
#include "s2ig/metrics.hpp"
#include "s2ig/rdg.hpp"
#include "s2ig/sen.hpp"
#include "s2ig/synthetic.hpp"

using namespace s2ig;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream out;
  out.precision(precision);
  out << v;
  return out.str();
}

// Shared fixtures, built lazily.
struct Workspace {
  fs::path root;
  std::optional<fs::path> manifest_path;
  std::unique_ptr<Corpus> corpus_ptr;
  std::optional<fs::path> sen_path;
  double sen_loss_ratio = 0.0;
  double sen_recall = 0.0;

  const fs::path& manifest() {
    if (!manifest_path) {
      SyntheticCorpusOptions o;
      o.out_dir = root / "corpus";
      manifest_path = make_synthetic_corpus(o);
    }
    return *manifest_path;
  }
  const Corpus& corpus() {
    if (!corpus_ptr) corpus_ptr = std::make_unique<Corpus>(Corpus::load(manifest(), FrontendConfig{}));
    return *corpus_ptr;
  }
  // SEN trained with the ci profile defaults.
  const fs::path& sen() {
    if (sen_path) return *sen_path;
    const auto config = ExperimentConfig::defaults("ci");
    auto options = config.sen_options();
    options.num_classes = corpus().num_classes();
    SenTrainer trainer(corpus(), options, config.sen_schedule());
    std::vector<double> epoch_means;
    for (int e = 0; e < config.sen_schedule().epochs; ++e) {
      const auto rows = trainer.run_epoch();
      double sum = 0.0;
      for (const auto& r : rows) sum += r.total;
      epoch_means.push_back(sum / static_cast<double>(rows.size()));
    }
    sen_loss_ratio = epoch_means.back() / epoch_means.front();
    auto net = trainer.network();
    sen_recall = speech_to_image_recall_at_1(net, corpus(), corpus().indices(Split::kTest));
    sen_path = root / "sen.pt";
    trainer.save(*sen_path);
    return *sen_path;
  }
};

// ---- criterion 1 ------------------------------------------------------------

Outcome loss_oracles() {
  const double ln2 = std::numbers::ln2;
  std::vector<std::string> fails;
  const auto e = torch::eye(2, torch::kFloat64);
  const auto m = matching_loss(e, e, torch::tensor({0, 1}, torch::kInt64), 2, 10.0);
  const double lm = 2.0 * std::log1p(std::exp(-10.0));
  const double err_m = std::max(std::abs(m.speech_to_image.item<double>() - lm),
                                std::abs(m.image_to_speech.item<double>() - lm));
  if (err_m > 1e-9) fails.push_back("matching");

  const int64_t n = 6;
  const int64_t k = 9;
  const auto zeros = torch::zeros({n, k}, torch::kFloat64);
  const double err_d = std::abs(distinctive_loss(zeros, zeros, torch::arange(n, torch::kInt64)).item<double>() -
                                2.0 * n * std::log(static_cast<double>(k)));
  if (err_d > 1e-9) fails.push_back("distinctive");

  RelationLogits uniform;
  uniform.positive = uniform.negative = uniform.undesired = uniform.fake = torch::zeros({n, 3}, torch::kFloat64);
  const double err_rs = std::abs(relation_loss(uniform).total.item<double>() - 4.0 * std::log(3.0));
  if (err_rs > 1e-6) fails.push_back("relation");

  const DiscriminatorOutput half{torch::full({n}, 0.5, torch::kFloat64), torch::full({n}, 0.5, torch::kFloat64)};
  const double err_dl = std::abs(discriminator_loss(half, half).item<double>() - 4.0 * ln2);
  if (err_dl > 1e-6) fails.push_back("discriminator");

  return {fails.empty(), "errors L_m " + fmt(err_m) + ", L_d " + fmt(err_d) + ", L_RS " + fmt(err_rs) + ", L_D " +
                             fmt(err_dl) + (fails.empty() ? "" : "; failing: " + fails.front())};
}

// ---- criterion 2 ------------------------------------------------------------

// Central differences on up to `samples` coordinates of each tensor; returns
// the norm-relative error between analytic and numeric gradients.
double g_step = 1e-4;

struct GradientCheck {
  double error = 0.0;
  int sampled = 0;
  int kinked = 0;
};

// Central differences on a random subset of coordinates. A coordinate whose
// step straddles a kink (LeakyReLU at 0, max-pool ties) is skipped: there the
// second differences at h, h/2 and h/4 disagree instead of all estimating f''.
GradientCheck gradient_error(const std::function<torch::Tensor()>& loss, const std::vector<torch::Tensor>& wrt,
                             std::mt19937_64& gen, int samples = 24) {
  const double h = g_step;
  for (const auto& t : wrt) {
    if (t.grad().defined()) t.mutable_grad().zero_();
  }
  loss().backward();
  GradientCheck out;
  std::vector<double> analytic;
  std::vector<double> numeric;
  torch::NoGradGuard guard;
  const double f0 = loss().item<double>();
  for (const auto& t : wrt) {
    auto flat = t.view(-1);
    const auto grad = t.grad().defined() ? t.grad().view(-1) : torch::zeros_like(flat);
    std::vector<int64_t> coords(static_cast<std::size_t>(flat.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    std::shuffle(coords.begin(), coords.end(), gen);
    coords.resize(std::min<std::size_t>(coords.size(), static_cast<std::size_t>(samples)));
    for (const int64_t c : coords) {
      const double orig = flat[c].item<double>();
      const auto at = [&](double step) {
        flat[c] = orig + step;
        const double v = loss().item<double>();
        flat[c] = orig;
        return v;
      };
      const double up = at(h);
      const double down = at(-h);
      const auto curvature = [&](double step, double fp, double fm) { return (fp + fm - 2.0 * f0) / (step * step); };
      const double c1 = curvature(h, up, down);
      const double c2 = curvature(h / 2, at(h / 2), at(-h / 2));
      const double c4 = curvature(h / 4, at(h / 4), at(-h / 4));
      const auto agree = [](double x, double y) { return std::abs(x - y) <= 1e-3 + 0.05 * std::max(std::abs(x), std::abs(y)); };
      ++out.sampled;
      if (!agree(c1, c2) || !agree(c2, c4)) {
        ++out.kinked;
        continue;
      }
      numeric.push_back((up - down) / (2.0 * h));
      analytic.push_back(grad[c].item<double>());
    }
  }
  double diff = 0.0;
  double na = 0.0;
  double nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  out.error = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return out;
}

std::vector<torch::Tensor> params_of(const torch::nn::Module& m) { return m.parameters(); }

Outcome gradient_checks() {
  constexpr int kSeeds = 20;
  constexpr double kTolerance = 1e-3;
  std::map<std::string, double> worst;
  int sampled = 0;
  int kinked = 0;
  const auto record = [&](const std::string& name, const GradientCheck& g) {
    worst[name] = std::max(worst[name], g.error);
    sampled += g.sampled;
    kinked += g.kinked;
  };
  torch::set_default_dtype(caffe2::TypeMeta::Make<double>());
  for (int seed = 0; seed < kSeeds; ++seed) {
    torch::manual_seed(seed);
    std::mt19937_64 gen(static_cast<std::uint64_t>(seed));
    const auto classes = torch::tensor({0, 1, 0, 2, 3, 1}, torch::kInt64);

    auto a = torch::randn({6, 5}).requires_grad_();
    auto v = torch::randn({6, 5}).requires_grad_();
    record("L_m", gradient_error([&] { return matching_loss(a, v, classes, 4, 10.0).total; }, {a, v}, gen));

    auto la = torch::randn({6, 4}).requires_grad_();
    auto lv = torch::randn({6, 4}).requires_grad_();
    record("L_d", gradient_error([&] { return distinctive_loss(la, lv, classes); }, {la, lv}, gen));

    RelationSupervisor rs(16, 2);
    rs->train();
    const auto gt = torch::rand({4, 3, 16, 16}) * 2 - 1;
    const auto same = torch::rand({4, 3, 16, 16}) * 2 - 1;
    const auto mism = torch::rand({4, 3, 16, 16}) * 2 - 1;
    auto fake = (torch::rand({4, 3, 16, 16}) * 2 - 1).requires_grad_();
    auto rs_wrt = params_of(*rs);
    rs_wrt.push_back(fake);
    record("L_RS", gradient_error([&] { return relation_loss(relation_logits(rs, gt, same, mism, fake)).total; }, rs_wrt, gen));

    RdgOptions o;
    o.condition_dim = 6;
    o.ca_dim = 4;
    o.z_dim = 5;
    o.gf_dim = 4;
    o.df_dim = 4;
    o.scales = {8, 16};
    o.flags.relation_supervisor = false;
    RdgNetworks nets(o);
    nets.train(true);
    const auto cond = torch::randn({3, 6});
    auto z = torch::randn({3, 5}).requires_grad_();
    for (std::size_t i = 0; i < o.scales.size(); ++i) {
      auto& d = nets.discriminators[i];
      const auto gl = [&] {
        const auto code = nets.ca->forward(cond, false);
        const auto p = nets.generator->forward(code.c, z);
        return generator_adversarial_loss(d->forward(p.images[i], code.c));
      };
      auto g_wrt = nets.generator_parameters();
      g_wrt.push_back(z);
      const std::string gname = "L_G" + std::to_string(i);
      record(gname, gradient_error(gl, g_wrt, gen, 8));

      torch::Tensor fixed_fake;
      torch::Tensor fixed_c;
      {
        torch::NoGradGuard guard;
        fixed_c = nets.ca->forward(cond, false).c;
        fixed_fake = nets.generator->forward(fixed_c, z).images[i];
      }
      const auto real = torch::rand({3, 3, o.scales[i], o.scales[i]}) * 2 - 1;
      const auto dl = [&] { return discriminator_loss(d->forward(real, fixed_c), d->forward(fixed_fake, fixed_c)); };
      const std::string dname = "L_D" + std::to_string(i);
      record(dname, gradient_error(dl, params_of(*d), gen));
    }
  }
  torch::set_default_dtype(caffe2::TypeMeta::Make<float>());
  bool pass = true;
  std::string detail = "max relative error over " + std::to_string(kSeeds) + " seeds:";
  for (const auto& [name, err] : worst) {
    pass = pass && err < kTolerance;
    detail += " " + name + " " + fmt(err, 2);
  }
  detail += "; " + std::to_string(kinked) + " of " + std::to_string(sampled) + " coordinates skipped at kinks";
  pass = pass && kinked * 10 <= sampled;
  return {pass, detail};
}

// ---- criterion 3 ------------------------------------------------------------

Outcome dense_stacking_law() {
  std::map<bool, double> effect;
  for (const bool dense : {true, false}) {
    torch::manual_seed(3);
    RdgOptions o;
    o.condition_dim = 16;
    o.ca_dim = 8;
    o.z_dim = 10;
    o.gf_dim = 8;
    o.scales = {16, 32, 64};
    o.flags.dense_stacking = dense;
    RdgNetworks nets(o);
    nets.train(false);
    torch::NoGradGuard guard;
    const auto code = nets.ca->forward(torch::randn({4, 16}), false);
    const auto p = nets.generator->forward(code.c, torch::randn({4, 10}));
    // h_1 held fixed while h_0 is perturbed.
    const std::vector<torch::Tensor> base{p.hiddens[0], p.hiddens[1]};
    const std::vector<torch::Tensor> moved{p.hiddens[0] + torch::randn_like(p.hiddens[0]), p.hiddens[1]};
    const auto i2 = nets.generator->to_image(2, nets.generator->stage(2, base, code.c));
    const auto i2_moved = nets.generator->to_image(2, nets.generator->stage(2, moved, code.c));
    effect[dense] = (i2 - i2_moved).abs().max().item<double>();
  }
  const bool pass = effect[true] > 1e-4 && effect[false] == 0.0;
  return {pass, "max |dI_2| from perturbing h_0 with h_1 fixed: dense " + fmt(effect[true]) + ", plain " +
                    fmt(effect[false])};
}

// ---- criterion 4 ------------------------------------------------------------

Matrix gaussian(int64_t n, int64_t d, std::uint64_t seed, double shift) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  Matrix m(n, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) m(i, j) = normal(gen) + (j == 0 ? shift : 0.0);
  return m;
}

Outcome metric_oracles() {
  std::vector<std::string> fails;
  const auto x = gaussian(500, 16, 1, 0.0);
  const double self = frechet_distance(x, x);
  if (std::abs(self) > 1e-6) fails.push_back("FID(X,X)");

  const double gap = 2.0;
  const double fid = frechet_distance(gaussian(10000, 8, 2, 0.0), gaussian(10000, 8, 3, gap));
  const double gap_err = std::abs(fid - gap * gap) / (gap * gap);
  if (gap_err > 0.05) fails.push_back("Gaussian gap");

  Matrix same(50, 5);
  same.rowwise() = Eigen::RowVectorXd::Constant(5, 0.2);
  const double is_one = inception_score(same, 10).mean;
  Matrix onehot = Matrix::Zero(50, 5);
  for (int i = 0; i < 50; ++i) onehot(i, i % 5) = 1.0;
  const double is_k = inception_score(onehot, 10).mean;
  if (std::abs(is_one - 1.0) > 1e-6) fails.push_back("IS=1");
  if (std::abs(is_k - 5.0) > 1e-6) fails.push_back("IS=K");

  const bool ranked[] = {true, false, true, false};
  const double ap = average_precision(ranked);
  if (std::abs(ap - 5.0 / 6.0) > 1e-12) fails.push_back("AP");

  return {fails.empty(), "FID(X,X) " + fmt(self) + ", gap error " + fmt(100 * gap_err, 3) + "%, IS " +
                             fmt(is_one, 10) + " / " + fmt(is_k, 10) + ", AP " + fmt(ap, 10) +
                             (fails.empty() ? "" : "; failing: " + fails.front())};
}

// ---- criterion 5 ------------------------------------------------------------

Outcome sen_toy(Workspace& ws) {
  const auto t = Clock::now();
  ws.sen();
  const double chance = 1.0 / ws.corpus().num_classes();
  const bool pass = ws.sen_loss_ratio < 0.25 && ws.sen_recall > 3.0 * chance;
  return {pass, "final/initial loss " + fmt(ws.sen_loss_ratio, 3) + ", test recall@1 " + fmt(ws.sen_recall, 3) +
                    " (chance " + fmt(chance, 3) + "), " + fmt(seconds_since(t), 3) + " s"};
}

// ---- criterion 6 ------------------------------------------------------------

struct RdgRun {
  double first_fid = 0.0;
  double final_fid = 0.0;
  double seconds = 0.0;
};

Outcome rdg_toy(Workspace& ws) {
  const auto& corpus = ws.corpus();
  const auto config = ExperimentConfig::defaults("ci");
  auto sen_encoder = ConditionEncoder::from_sen(ws.sen());
  auto mean_encoder = ConditionEncoder::mean_spectrogram(corpus.frontend().num_mel);
  const auto sen_table = condition_table(corpus, sen_encoder);
  const auto mean_table = condition_table(corpus, mean_encoder);

  const auto train = corpus.indices(Split::kTrain);
  auto backbone = train_desk_backbone(corpus, train, config.backbone_schedule());
  std::vector<std::size_t> every(corpus.size());
  std::iota(every.begin(), every.end(), std::size_t{0});
  LabeledImages real;
  real.images = real_images(corpus, every, 64);
  for (auto i : every) real.classes.push_back(corpus.entry(i).class_id);
  const auto real_features = extract_features(*backbone, real);

  const auto fid_of = [&](RdgTrainer& trainer) {
    LabeledImages fake;
    fake.images = trainer.sample(every, 2, 99);
    for (auto i : every) fake.classes.insert(fake.classes.end(), 2, corpus.entry(i).class_id);
    return frechet_distance(real_features.features, extract_features(*backbone, fake).features);
  };

  // Dense stacking needs at least two stages: a {16, 32, 64} pyramid ending
  // at 64 px, narrowed so one run fits the time budget.
  const auto run = [&](const std::string& variant, std::uint64_t seed) {
    auto options = config.rdg_options();
    options.scales = {16, 32, 64};
    options.gf_dim = 16;
    options.df_dim = 16;
    options.rs_channels = 8;
    if (variant != "full") options.flags = apply_ablation(options.flags, variant);
    const auto& table = options.flags.use_sen_embeddings ? sen_table : mean_table;
    options.condition_dim = table.vectors.size(1);
    auto schedule = config.rdg_schedule();
    schedule.seed = seed;
    const auto t = Clock::now();
    RdgTrainer trainer(corpus, table, options, schedule);
    RdgRun out;
    trainer.run_epoch();
    out.first_fid = fid_of(trainer);
    trainer.train_to(schedule.epochs);
    out.final_fid = fid_of(trainer);
    out.seconds = seconds_since(t);
    std::cout << "  seed " << seed << " " << variant << ": FID epoch 1 " << fmt(out.first_fid) << ", epoch "
              << schedule.epochs << " " << fmt(out.final_fid) << ", " << fmt(out.seconds, 3) << " s" << std::endl;
    return out;
  };

  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const std::vector<std::string> ablations{"no-dense", "no-rs", "no-sen"};
  int halved = 0;
  double slowest = 0.0;
  std::map<std::string, int> holds;
  for (const auto seed : seeds) {
    const auto full = run("full", seed);
    slowest = std::max(slowest, full.seconds);
    if (full.final_fid <= 0.5 * full.first_fid) ++halved;
    for (const auto& name : ablations) {
      const auto ablated = run(name, seed);
      slowest = std::max(slowest, ablated.seconds);
      if (ablated.final_fid >= full.final_fid) ++holds[name];
    }
  }
  const int majority = static_cast<int>(seeds.size()) / 2 + 1;
  bool pass = halved >= majority && slowest <= 600.0;
  std::string detail = "FID halved on " + std::to_string(halved) + "/3 seeds;";
  for (const auto& name : ablations) {
    pass = pass && holds[name] >= majority;
    detail += " " + name + " no better than full on " + std::to_string(holds[name]) + "/3;";
  }
  detail += " slowest run " + fmt(slowest, 3) + " s";
  return {pass, detail};
}

// ---- criterion 7 ------------------------------------------------------------

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(Workspace& ws) {
  std::vector<std::string> hashes;
  std::vector<std::string> sen_histories;
  std::vector<std::string> rdg_histories;
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = ws.root / ("determinism" + std::to_string(rep));
    MakeDatasetArgs data;
    data.out_dir = dir / "corpus";
    const auto made = cmd_make_dataset(data);
    hashes.push_back(made.corpus_hash);

    RunArgs sen;
    sen.manifest = made.manifest;
    sen.out = dir / "sen";
    sen.overrides = {"sen.epochs=2", "sen.embed_dim=64"};
    const auto s = cmd_train_sen(sen);
    sen_histories.push_back(file_bytes(s.history));

    TrainRdgArgs rdg;
    rdg.run.manifest = made.manifest;
    rdg.run.out = dir / "rdg";
    rdg.run.overrides = {"rdg.epochs=2", "rdg.scales=32 64", "rdg.gf_dim=8", "rdg.df_dim=8", "rdg.rs_channels=4"};
    rdg.sen_checkpoint = s.run_dir;
    rdg_histories.push_back(file_bytes(cmd_train_rdg(rdg).history));
  }
  const bool pass = hashes[0] == hashes[1] && sen_histories[0] == sen_histories[1] &&
                    rdg_histories[0] == rdg_histories[1] && !rdg_histories[0].empty();
  return {pass, "corpus " + hashes[0].substr(0, 12) + (hashes[0] == hashes[1] ? " (same)" : " (differs)") +
                    ", SEN history " + (sen_histories[0] == sen_histories[1] ? "identical" : "differs") +
                    ", RDG history " + (rdg_histories[0] == rdg_histories[1] ? "identical" : "differs")};
}

// ---- criterion 8 ------------------------------------------------------------

Outcome padding_invariance() {
  torch::manual_seed(8);
  const auto config = ExperimentConfig::defaults("ci");
  auto options = config.sen_options();
  options.num_classes = 8;
  SpeechEmbeddingNetwork net(options);
  net->eval();
  torch::NoGradGuard guard;
  constexpr int64_t kUtterances = 100;
  constexpr int64_t kPadded = 160;
  std::mt19937_64 gen(8);
  std::uniform_int_distribution<int64_t> length(5, 120);
  const auto batch = torch::randn({kUtterances, kPadded, 40}) * 3.0;
  std::vector<int64_t> lengths(kUtterances);
  for (auto& l : lengths) l = length(gen);
  const auto padded = net->encode_speech(batch, torch::tensor(lengths, torch::kInt64));
  double worst = 0.0;
  for (int64_t i = 0; i < kUtterances; ++i) {
    const auto li = lengths[static_cast<std::size_t>(i)];
    const auto alone = net->encode_speech(batch[i].slice(0, 0, li).unsqueeze(0), torch::tensor({li}, torch::kInt64));
    worst = std::max(worst, (alone[0] - padded[i]).abs().max().item<double>());
  }
  return {worst <= 1e-5, "max |embedding difference| over 100 utterances " + fmt(worst)};
}

const std::map<int, std::string> kTitles{
    {1, "loss oracles"},          {2, "gradient checks"},    {3, "dense-stacking law"},
    {4, "metric oracles"},        {5, "SEN toy training"},   {6, "RDG toy training and ablations"},
    {7, "determinism"},           {8, "padding invariance"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  fs::path work;
  app.add_option("--criterion", selected, "criterion to run (repeatable, default all)")->check(CLI::Range(1, 8));
  app.add_option("--step", g_step, "finite-difference step of the gradient checks")->capture_default_str();
  app.add_option("--work", work, "scratch directory (default: a fresh temporary directory)");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  torch::set_num_threads(1);
  log::set_quiet(true);
  const bool temporary = work.empty();
  if (temporary) work = fs::temp_directory_path() / ("s2ig-acceptance-" + std::to_string(std::random_device{}()));
  fs::create_directories(work);
  Workspace ws{work};

  int failed = 0;
  for (const int n : selected) {
    Outcome o;
    try {
      switch (n) {
        case 1: o = loss_oracles(); break;
        case 2: o = gradient_checks(); break;
        case 3: o = dense_stacking_law(); break;
        case 4: o = metric_oracles(); break;
        case 5: o = sen_toy(ws); break;
        case 6: o = rdg_toy(ws); break;
        case 7: o = determinism(ws); break;
        case 8: o = padding_invariance(); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << ": " << kTitles.at(n) << " (" << o.detail
              << ")" << std::endl;
  }
  if (temporary) {
    std::error_code ec;
    fs::remove_all(work, ec);
  }
  return failed == 0 ? 0 : 1;
}
