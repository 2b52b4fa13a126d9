#include "testing.hpp"

#include <cmath>

#include "s2ig/error.hpp"
#include "s2ig/sen.hpp"
#include "test_util.hpp"

using namespace s2ig;

namespace {

// Direct evaluation of -sum_i log(exp(b S_ii) / sum_j M_ij exp(b S_ij)).
double loop_matching(const torch::Tensor& s, const torch::Tensor& m, double beta) {
  const auto S = s.to(torch::kFloat64);
  const auto M = m.to(torch::kFloat64);
  double total = 0.0;
  for (int64_t i = 0; i < S.size(0); ++i) {
    double denom = 0.0;
    for (int64_t j = 0; j < S.size(1); ++j) denom += M[i][j].item<double>() * std::exp(beta * S[i][j].item<double>());
    total -= beta * S[i][i].item<double>() - std::log(denom);
  }
  return total;
}

}  // namespace

TEST_CASE("matching loss of the two-item identity case") {
  const auto e = torch::eye(2, torch::kFloat64);
  const auto classes = torch::tensor({0, 1}, torch::kInt64);
  const auto loss = matching_loss(e, e, classes, 2, 10.0);
  const double expected = 2.0 * std::log1p(std::exp(-10.0));
  CHECK(std::abs(loss.speech_to_image.item<double>() - expected) < 1e-9);
  CHECK(std::abs(loss.image_to_speech.item<double>() - expected) < 1e-9);
  CHECK(std::abs(loss.total.item<double>() - 2.0 * expected) < 1e-9);
}

TEST_CASE("class mask removes same-class off-diagonal pairs") {
  const auto m = class_mask(torch::tensor({0, 0, 1}, torch::kInt64));
  const auto expected = torch::tensor({1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0}).view({3, 3});
  CHECK(torch::equal(m.to(torch::kFloat32), expected.to(torch::kFloat32)));
}

TEST_CASE("matching loss agrees with a direct loop on random inputs") {
  torch::manual_seed(4);
  const auto a = torch::randn({6, 5}, torch::kFloat64);
  const auto v = torch::randn({6, 5}, torch::kFloat64);
  const auto classes = torch::tensor({0, 1, 0, 2, 1, 3}, torch::kInt64);
  const double beta = 3.0;
  const auto loss = matching_loss(a, v, classes, 4, beta);
  const auto s = similarity_matrix(a, v);
  const auto m = class_mask(classes);
  CHECK(loss.speech_to_image.item<double>() == doctest::Approx(loop_matching(s, m, beta)).epsilon(1e-10));
  CHECK(loss.image_to_speech.item<double>() == doctest::Approx(loop_matching(s.t(), m.t(), beta)).epsilon(1e-10));
}

TEST_CASE("cosine similarity and zero-norm rows") {
  const auto a = torch::tensor({3.0, 4.0, 0.0, 1.0}, torch::kFloat64).view({2, 2});
  const auto s = similarity_matrix(a, a);
  CHECK(s[0][0].item<double>() == doctest::Approx(1.0));
  CHECK(s[0][1].item<double>() == doctest::Approx(0.8));
  CHECK_THROWS(similarity_matrix(torch::zeros({2, 2}, torch::kFloat64), a));
}

TEST_CASE("distinctive loss on uniform logits is 2 n log N") {
  const int64_t n = 5;
  const int64_t classes = 7;
  const auto logits = torch::zeros({n, classes}, torch::kFloat64);
  const auto labels = torch::tensor({0, 3, 6, 2, 2}, torch::kInt64);
  const auto loss = distinctive_loss(logits, logits, labels);
  CHECK(std::abs(loss.item<double>() - 2.0 * n * std::log(static_cast<double>(classes))) < 1e-9);
}

TEST_CASE("total loss is the sum of matching and distinctive terms") {
  torch::manual_seed(1);
  const auto a = torch::randn({4, 3}, torch::kFloat64);
  const auto v = torch::randn({4, 3}, torch::kFloat64);
  const auto la = torch::randn({4, 5}, torch::kFloat64);
  const auto lv = torch::randn({4, 5}, torch::kFloat64);
  const auto c = torch::tensor({0, 1, 2, 4}, torch::kInt64);
  const auto total = sen_total_loss(a, v, la, lv, c, 5, 10.0);
  CHECK(total.total.item<double>() ==
        doctest::Approx((total.matching.total + total.distinctive).item<double>()).epsilon(1e-12));
}

TEST_CASE("speech embeddings ignore padding") {
  torch::manual_seed(0);
  SpeechEncoderOptions o;
  o.embed_dim = 32;
  SpeechEncoder enc(o);
  enc->eval();
  torch::NoGradGuard guard;
  const auto frames = torch::randn({3, 40, 40});
  const auto lengths = torch::tensor({40, 23, 7}, torch::kInt64);
  const auto base = enc->forward(frames, lengths);
  auto padded = torch::cat({frames, 5.0 * torch::randn({3, 17, 40})}, 1);
  for (int64_t b = 1; b < 3; ++b) padded[b].slice(0, lengths[b].item<int64_t>()).normal_(0.0, 3.0);
  const auto again = enc->forward(padded, lengths);
  CHECK((base - again).abs().max().item<double>() < 1e-5);
  CHECK(base.sizes() == torch::IntArrayRef({3, 32}));
}

TEST_CASE("image encoder rejects the wrong resolution") {
  SenOptions o;
  o.num_classes = 4;
  o.embed_dim = 16;
  SpeechEmbeddingNetwork net(o);
  CHECK_THROWS(net->encode_image(torch::zeros({2, 3, 64, 64})));
  CHECK(net->encode_image(torch::zeros({2, 3, 256, 256})).sizes() == torch::IntArrayRef({2, 16}));
}

TEST_CASE("a frozen backbone is excluded from the trainable parameters") {
  SenOptions o;
  o.num_classes = 4;
  o.embed_dim = 16;
  o.freeze_backbone = true;
  SpeechEmbeddingNetwork frozen(o);
  o.freeze_backbone = false;
  SpeechEmbeddingNetwork free(o);
  const auto count = [](const std::vector<torch::Tensor>& ps) {
    int64_t n = 0;
    for (const auto& p : ps) n += p.numel();
    return n;
  };
  int64_t backbone = 0;
  for (const auto& p : free->image_encoder()->backbone()->parameters()) backbone += p.numel();
  CHECK(count(free->trainable_parameters()) - count(frozen->trainable_parameters()) == backbone);
  frozen->train(true);
  CHECK_FALSE(frozen->image_encoder()->backbone()->is_training());
}

TEST_CASE("options validation") {
  SenOptions o;
  o.num_classes = 1;
  CHECK_THROWS_AS(o.validate(), ValidationError);
  o.num_classes = 4;
  o.embed_dim = 0;
  CHECK_THROWS_AS(o.validate(), ValidationError);
}

TEST_CASE("SEN training records history and survives a checkpoint round trip") {
  const auto& corpus = toy_corpus();
  TempDir tmp;
  SenOptions o;
  o.num_classes = corpus.num_classes();
  o.embed_dim = 64;
  SenSchedule s;
  s.epochs = 2;
  SenTrainer trainer(corpus, o, s);
  trainer.train_to(2);
  CHECK(trainer.epoch() == 2);
  CHECK(trainer.history().size() == 4);  // 64 train records / 32
  trainer.save(tmp.path() / "sen.pt");

  auto loaded = load_sen(tmp.path() / "sen.pt");
  auto net = trainer.network();
  const auto records = corpus.indices(Split::kTest);
  const auto a = embed_speech(net, corpus, records);
  const auto b = embed_speech(loaded.network, corpus, records);
  CHECK((a - b).abs().max().item<double>() < 1e-6);

  SenTrainer resumed(corpus, o, s);
  resumed.resume(tmp.path() / "sen.pt");
  CHECK(resumed.step() == trainer.step());

  SenOptions other = o;
  other.embed_dim = 32;
  SenTrainer mismatch(corpus, other, s);
  CHECK_THROWS_AS(mismatch.resume(tmp.path() / "sen.pt"), CompatibilityError);
}
