#include "testing.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "s2ig/error.hpp"
#include "s2ig/rdg.hpp"
#include "test_util.hpp"

using namespace s2ig;

namespace {

const double kLog2 = std::numbers::ln2;
const double kLog3 = std::log(3.0);

DiscriminatorOutput constant_d(int64_t n, double p) {
  return {torch::full({n}, p, torch::kFloat64), torch::full({n}, p, torch::kFloat64)};
}

RdgOptions small_options(std::vector<int64_t> scales, bool dense = true) {
  RdgOptions o;
  o.condition_dim = 12;
  o.ca_dim = 8;
  o.z_dim = 10;
  o.gf_dim = 8;
  o.df_dim = 8;
  o.rs_channels = 4;
  o.scales = std::move(scales);
  o.flags.dense_stacking = dense;
  return o;
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

}  // namespace

TEST_CASE("KL of the conditioning code") {
  const auto zero = kl_divergence(torch::zeros({3, 4}, torch::kFloat64), torch::zeros({3, 4}, torch::kFloat64));
  CHECK(zero.item<double>() == doctest::Approx(0.0));
  const auto one = kl_divergence(torch::ones({1, 1}, torch::kFloat64), torch::zeros({1, 1}, torch::kFloat64));
  CHECK(one.item<double>() == doctest::Approx(0.5));
}

TEST_CASE("conditioning augmentation samples around mu and returns mu at inference") {
  torch::manual_seed(2);
  ConditioningAugmentation ca(12, 8);
  const auto cond = torch::randn({4, 12});
  const auto det = ca->forward(cond, false);
  CHECK(torch::equal(det.c, det.mu));
  auto g1 = make_generator(5);
  auto g2 = make_generator(5);
  const auto a = ca->forward(cond, true, g1);
  const auto b = ca->forward(cond, true, g2);
  CHECK(torch::equal(a.c, b.c));
  CHECK_FALSE(torch::equal(a.c, a.mu));
}

TEST_CASE("discriminator loss with D = 0.5 everywhere is 4 log 2") {
  const auto loss = discriminator_loss(constant_d(6, 0.5), constant_d(6, 0.5));
  CHECK(std::abs(loss.item<double>() - 4.0 * kLog2) < 1e-6);
  CHECK(std::abs(generator_adversarial_loss(constant_d(6, 0.5)).item<double>() - 2.0 * kLog2) < 1e-12);
}

TEST_CASE("saturated probabilities are clamped and counted") {
  int64_t saturated = 0;
  const auto p = torch::tensor({0.0, 1.0, 0.5, 1e-9}, torch::kFloat64);
  const auto out = clamped_log(p, &saturated);
  CHECK(saturated == 3);
  CHECK(torch::isfinite(out).all().item<bool>());
  int64_t count = 0;
  const auto loss = discriminator_loss(constant_d(2, 1.0), constant_d(2, 1.0), &count);
  CHECK(std::isfinite(loss.item<double>()));
  CHECK(loss.item<double>() >= 0.0);
  CHECK(count == 8);
}

TEST_CASE("relation loss of a uniform classifier is 4 log 3") {
  RelationLogits logits;
  logits.positive = torch::zeros({5, 3}, torch::kFloat64);
  logits.negative = torch::zeros({5, 3}, torch::kFloat64);
  logits.undesired = torch::zeros({5, 3}, torch::kFloat64);
  logits.fake = torch::zeros({5, 3}, torch::kFloat64);
  const auto loss = relation_loss(logits);
  CHECK(std::abs(loss.total.item<double>() - 4.0 * kLog3) < 1e-6);
  CHECK(std::abs(loss.real.item<double>() - 3.0 * kLog3) < 1e-6);
}

TEST_CASE("generator loss with D = 0.5 at three scales and a uniform supervisor") {
  const std::vector<DiscriminatorOutput> outs{constant_d(4, 0.5), constant_d(4, 0.5), constant_d(4, 0.5)};
  RelationLogits logits;
  logits.positive = logits.negative = logits.undesired = logits.fake = torch::zeros({4, 3}, torch::kFloat64);
  const auto kl = torch::zeros({}, torch::kFloat64);
  const auto g = generator_loss(outs, relation_loss(logits), kl, 1.0);
  CHECK(std::abs(g.total.item<double>() - (6.0 * kLog2 + 4.0 * kLog3)) < 1e-9);
  CHECK(g.total.item<double>() == doctest::Approx(8.552).epsilon(1e-3));

  const auto off = generator_loss(outs, std::nullopt, kl, 1.0);
  CHECK(off.relation.item<double>() == 0.0);
  CHECK(off.total.item<double>() == doctest::Approx(off.adversarial.item<double>()));
}

TEST_CASE("relation supervisor shapes and the shared-feature path") {
  torch::manual_seed(3);
  RelationSupervisor rs(32, 4);
  rs->eval();
  const auto a = torch::rand({3, 3, 32, 32}) * 2 - 1;
  const auto b = torch::rand({3, 3, 32, 32}) * 2 - 1;
  CHECK(rs->forward(a, b).sizes() == torch::IntArrayRef({3, 3}));
  CHECK(rs->relation_vector(a, b).size(1) == rs->relation_dim());
  const auto logits = relation_logits(rs, a, b, b, a);
  CHECK(max_abs_diff(logits.positive, rs->forward(a, b)) < 1e-5);
  CHECK(max_abs_diff(logits.undesired, rs->forward(a, a)) < 1e-5);
  CHECK_THROWS_AS(rs->forward(torch::zeros({1, 3, 16, 16}), torch::zeros({1, 3, 16, 16})), ValidationError);
}

TEST_CASE("generator pyramid shapes, range and inference determinism") {
  torch::manual_seed(4);
  RdgNetworks nets(small_options({8, 16, 32}));
  const auto cond = torch::randn({2, 12});
  const auto z = torch::randn({2, 10});
  const auto p = nets.generate(cond, z);
  REQUIRE(p.images.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const int64_t s = 8 << i;
    CHECK(p.images[i].sizes() == torch::IntArrayRef({2, 3, s, s}));
    CHECK(p.hiddens[i].sizes() == torch::IntArrayRef({2, 8, s, s}));
    CHECK(p.images[i].abs().max().item<float>() <= 1.0f);
  }
  const auto again = nets.generate(cond, z);
  CHECK(torch::equal(p.images.back(), again.images.back()));
  const auto other = nets.generate(cond, torch::randn({2, 10}));
  CHECK(max_abs_diff(p.images.back(), other.images.back()) > 0.0);
}

TEST_CASE("dense stacking: h_2 reads h_0 directly only when enabled") {
  for (const bool dense : {true, false}) {
    torch::manual_seed(5);
    RdgNetworks nets(small_options({8, 16, 32}, dense));
    nets.train(false);
    torch::NoGradGuard guard;
    const auto code = nets.ca->forward(torch::randn({2, 12}), false);
    const auto p = nets.generator->forward(code.c, torch::randn({2, 10}));
    const std::vector<torch::Tensor> base{p.hiddens[0], p.hiddens[1]};
    const std::vector<torch::Tensor> cut{torch::zeros_like(p.hiddens[0]), p.hiddens[1]};
    const auto h2 = nets.generator->stage(2, base, code.c);
    const auto h2_cut = nets.generator->stage(2, cut, code.c);
    CHECK(max_abs_diff(h2, p.hiddens[2]) < 1e-5);
    const auto i2 = nets.generator->to_image(2, h2);
    const auto i2_cut = nets.generator->to_image(2, h2_cut);
    if (dense) {
      CHECK(max_abs_diff(i2, i2_cut) > 1e-4);
    } else {
      CHECK(max_abs_diff(i2, i2_cut) == 0.0);
    }
  }
}

TEST_CASE("pyramid options are validated") {
  auto o = small_options({64, 128, 256});
  CHECK_NOTHROW(o.validate());
  o.scales = {64, 256};
  CHECK_THROWS_AS(o.validate(), ValidationError);
  o.scales = {48};
  CHECK_THROWS_AS(o.validate(), ValidationError);
  o.scales = {8, 16, 32, 64};
  CHECK_THROWS_AS(o.validate(), ValidationError);
  o.scales = {};
  CHECK_THROWS_AS(o.validate(), ValidationError);
}

TEST_CASE("ablation names") {
  AblationFlags f;
  CHECK(f.label() == "full");
  f = apply_ablation(f, "no-rs");
  CHECK_FALSE(f.relation_supervisor);
  f = apply_ablation(f, "no-dense");
  CHECK(f.label() == "no-dense+no-rs");
  CHECK_THROWS_AS(apply_ablation(f, "no-gan"), ValidationError);
}

TEST_CASE("discriminator gradients never reach the generator") {
  torch::manual_seed(6);
  RdgNetworks nets(small_options({8, 16}));
  nets.train(true);
  const auto code = nets.ca->forward(torch::randn({4, 12}), true);
  const auto p = nets.generator->forward(code.c, torch::randn({4, 10}));
  const auto real = torch::rand({4, 3, 16, 16}) * 2 - 1;
  auto& d = nets.discriminators[1];
  const auto loss = discriminator_loss(d->forward(real, code.c.detach()), d->forward(p.images[1].detach(), code.c.detach()));
  loss.backward();
  for (const auto& w : nets.generator_parameters()) CHECK_FALSE(w.grad().defined());
  bool any = false;
  for (const auto& w : d->parameters()) any = any || (w.grad().defined() && w.grad().abs().sum().item<double>() > 0);
  CHECK(any);
}

TEST_CASE("the generator loss has a live gradient with respect to z") {
  torch::manual_seed(7);
  RdgNetworks nets(small_options({8, 16}));
  nets.train(true);
  const auto code = nets.ca->forward(torch::randn({4, 12}), true);
  const auto z = torch::randn({4, 10}).requires_grad_();
  const auto p = nets.generator->forward(code.c, z);
  std::vector<DiscriminatorOutput> outs;
  for (std::size_t i = 0; i < 2; ++i) outs.push_back(nets.discriminators[i]->forward(p.images[i], code.c));
  generator_loss(outs, std::nullopt, code.kl, 1.0).total.backward();
  REQUIRE(z.grad().defined());
  CHECK(z.grad().abs().sum().item<double>() > 0.0);
}

TEST_CASE("mean-spectrogram conditions pool over the true length only") {
  auto enc = ConditionEncoder::mean_spectrogram(4);
  Spectrogram s;
  s.frames = torch::arange(12, torch::kFloat32).view({3, 4});
  s.sample_rate_hz = 16000;
  const Spectrogram* items[] = {&s};
  const auto v = enc.encode(items);
  CHECK(v.sizes() == torch::IntArrayRef({1, 4}));
  CHECK(max_abs_diff(v[0], s.frames.mean(0)) < 1e-6);
  CHECK(enc.dim() == 4);
  CHECK(enc.source().dump().find("mean") != std::string::npos);
}

TEST_CASE("history CSV layout") {
  TempDir tmp;
  RdgHistoryRow row;
  row.step = 3;
  row.generator = 1.5;
  row.discriminator = {0.1, 0.2, 0.3};
  row.relation = 4.0;
  row.kl = 0.25;
  row.saturation = 2;
  const std::vector<RdgHistoryRow> rows{row};
  write_rdg_history(tmp.path() / "h.csv", rows);
  std::ifstream in(tmp.path() / "h.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,L_G,L_D0,L_D1,L_D2,L_RS,kl,d_saturation");
  const auto back = read_rdg_history(tmp.path() / "h.csv");
  REQUIRE(back.size() == 1);
  CHECK(back[0].step == 3);
  CHECK(back[0].discriminator[2] == doctest::Approx(0.3));
  CHECK(back[0].saturation == 2);
}

TEST_CASE("RDG training alternates updates and resumes bit-for-bit") {
  const auto& corpus = toy_corpus();
  auto enc = ConditionEncoder::mean_spectrogram(40);
  auto opts = small_options({16, 32});
  opts.condition_dim = 40;
  RdgSchedule sched;
  sched.epochs = 2;
  TempDir tmp;

  RdgTrainer trainer(corpus, condition_table(corpus, enc), opts, sched);
  const auto snapshot = [](const std::vector<torch::Tensor>& ps) {
    std::vector<torch::Tensor> out;
    for (const auto& p : ps) out.push_back(p.detach().clone());
    return out;
  };
  const auto g0 = snapshot(trainer.networks().generator_parameters());
  const auto d0 = snapshot(trainer.networks().discriminator_parameters());
  trainer.run_epoch();
  CHECK(trainer.history().size() == 4);  // 64 train records / 16
  const auto changed = [](const std::vector<torch::Tensor>& before, const std::vector<torch::Tensor>& after) {
    for (std::size_t i = 0; i < before.size(); ++i)
      if (!torch::equal(before[i], after[i].detach())) return true;
    return false;
  };
  CHECK(changed(g0, trainer.networks().generator_parameters()));
  CHECK(changed(d0, trainer.networks().discriminator_parameters()));
  for (const auto& row : trainer.history()) {
    CHECK(std::isfinite(row.generator));
    CHECK(row.relation > 0.0);
    CHECK(row.discriminator[2] == 0.0);  // two scales only
  }

  trainer.save(tmp.path() / "rdg.pt");
  auto loaded = load_rdg(tmp.path() / "rdg.pt");
  const std::vector<std::size_t> recs{0, 9, 40};
  const auto cond = condition_table(corpus, enc).vectors.index_select(0, torch::tensor({0, 9, 40}, torch::kInt64));
  const auto z = torch::randn({3, opts.z_dim});
  const auto a = trainer.networks().generate(cond, z).images.back();
  const auto b = loaded.networks->generate(cond, z).images.back();
  CHECK(max_abs_diff(a, b) < 1e-6);
  CHECK(torch::equal(trainer.sample(recs, 2, 3), trainer.sample(recs, 2, 3)));

  RdgTrainer resumed(corpus, condition_table(corpus, enc), opts, sched);
  resumed.resume(tmp.path() / "rdg.pt");
  CHECK(resumed.step() == trainer.step());
  CHECK(resumed.epoch() == 1);
  trainer.run_epoch();
  resumed.run_epoch();
  // Checkpoints carry no history; the resumed rows match the second epoch.
  REQUIRE(resumed.history().size() == 4);
  REQUIRE(trainer.history().size() == 8);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& a = trainer.history()[4 + i];
    const auto& b = resumed.history()[i];
    CHECK(b.step == a.step);
    CHECK(b.generator == a.generator);
    CHECK(b.discriminator[0] == a.discriminator[0]);
    CHECK(b.relation == a.relation);
  }

  auto wrong = opts;
  wrong.condition_dim = 16;
  CHECK_THROWS_AS(RdgTrainer(corpus, condition_table(corpus, enc), wrong, sched), CompatibilityError);
}
