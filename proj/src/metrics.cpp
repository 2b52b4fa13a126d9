#include "s2ig/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <string>

#include "s2ig/error.hpp"
#include "s2ig/rng.hpp"

namespace s2ig {

namespace {

constexpr double kImaginaryTolerance = 1e-3;

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw ValidationError(std::string(what) + " contain non-finite values");
}

Eigen::MatrixXd covariance(const Matrix& x, const Eigen::RowVectorXd& mean) {
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

InceptionScore inception_score(const Matrix& probabilities, int splits) {
  const auto n = probabilities.rows();
  if (n == 0) throw ValidationError("inception score: no images");
  if (splits < 1) throw ValidationError("inception score: splits must be >= 1");
  if (n < splits) {
    throw ValidationError("inception score: " + std::to_string(n) + " images cannot fill " +
                          std::to_string(splits) + " splits");
  }
  require_finite(probabilities, "class probabilities");
  if ((probabilities.array() < 0.0).any()) throw ValidationError("inception score: negative probability");

  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(splits));
  for (int s = 0; s < splits; ++s) {
    const auto begin = n * s / splits;
    const auto end = n * (s + 1) / splits;
    const auto part = probabilities.middleRows(begin, end - begin);
    const Eigen::RowVectorXd marginal = part.colwise().mean();
    double kl_sum = 0.0;
    for (Eigen::Index i = 0; i < part.rows(); ++i) {
      for (Eigen::Index k = 0; k < part.cols(); ++k) {
        const double p = part(i, k);
        if (p > 0.0) kl_sum += p * (std::log(p) - std::log(marginal(k)));
      }
    }
    scores.push_back(std::exp(kl_sum / static_cast<double>(part.rows())));
  }
  InceptionScore out;
  out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  double var = 0.0;
  for (double v : scores) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / static_cast<double>(scores.size()));
  return out;
}

double frechet_distance(const Matrix& real, const Matrix& fake) {
  if (real.rows() < 2 || fake.rows() < 2) throw ValidationError("FID needs at least 2 samples per set");
  if (real.cols() != fake.cols()) {
    throw ValidationError("FID feature dimensions disagree: " + std::to_string(real.cols()) + " vs " +
                          std::to_string(fake.cols()));
  }
  require_finite(real, "real features");
  require_finite(fake, "fake features");

  const Eigen::RowVectorXd mu_r = real.colwise().mean();
  const Eigen::RowVectorXd mu_f = fake.colwise().mean();
  const Eigen::MatrixXd sigma_r = covariance(real, mu_r);
  const Eigen::MatrixXd sigma_f = covariance(fake, mu_f);

  // The product of two PSD matrices has a real, non-negative spectrum; a
  // large imaginary part means the covariances are numerically broken.
  const Eigen::MatrixXd product = sigma_r * sigma_f;
  Eigen::EigenSolver<Eigen::MatrixXd> general(product, /*computeEigenvectors=*/false);
  const Eigen::VectorXcd lambda = general.eigenvalues();
  const double scale = std::max(lambda.cwiseAbs().maxCoeff(), 1e-300);
  if (lambda.imag().cwiseAbs().maxCoeff() > kImaginaryTolerance * scale) {
    throw ValidationError("FID: covariance product has a significant imaginary spectrum");
  }

  const Eigen::MatrixXd root_r = psd_sqrt(sigma_r);
  const Eigen::MatrixXd middle = root_r * sigma_f * root_r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (middle + middle.transpose()),
                                                     Eigen::EigenvaluesOnly);
  const double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double mean_term = (mu_r - mu_f).squaredNorm();
  const double value = mean_term + sigma_r.trace() + sigma_f.trace() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

double average_precision(std::span<const bool> ranked_relevance) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ranked_relevance.size(); ++k) {
    if (ranked_relevance[k]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) throw ProtocolError("average precision: no relevant items in the ranking");
  return sum / static_cast<double>(hits);
}

double expected_random_average_precision(std::size_t total, std::size_t relevant) {
  if (relevant == 0 || relevant > total) throw ValidationError("expected AP: need 1 <= relevant <= total");
  if (total == 1) return 1.0;
  const double n = static_cast<double>(total);
  const double r = static_cast<double>(relevant);
  double sum = 0.0;
  for (std::size_t i = 1; i <= total; ++i) {
    const double k = static_cast<double>(i);
    sum += 1.0 / k + (r - 1.0) * (k - 1.0) / ((n - 1.0) * k);
  }
  return sum / n;
}

RetrievalResult retrieval_map(const Matrix& queries, std::span<const int> query_classes, const Matrix& gallery,
                              std::span<const int> gallery_classes) {
  if (queries.rows() == 0) throw ValidationError("retrieval: empty query pool");
  if (static_cast<std::size_t>(queries.rows()) != query_classes.size() ||
      static_cast<std::size_t>(gallery.rows()) != gallery_classes.size()) {
    throw ValidationError("retrieval: one class label per feature row is required");
  }
  if (queries.cols() != gallery.cols()) throw ValidationError("retrieval: feature dimensions disagree");
  require_finite(queries, "query features");
  require_finite(gallery, "gallery features");

  const std::set<int> gallery_set(gallery_classes.begin(), gallery_classes.end());
  for (int c : query_classes) {
    if (!gallery_set.contains(c)) {
      throw ProtocolError("retrieval: class " + std::to_string(c) + " has no generated images");
    }
  }

  auto normalize = [](const Matrix& m) {
    Matrix out = m;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double norm = out.row(i).norm();
      if (norm > 0.0) out.row(i) /= norm;
    }
    return out;
  };
  const Matrix q = normalize(queries);
  const Matrix g = normalize(gallery);
  const Eigen::MatrixXd distance = 1.0 - (q * g.transpose()).array();

  RetrievalResult out;
  std::vector<std::size_t> order(static_cast<std::size_t>(gallery.rows()));
  auto ranked = std::make_unique<bool[]>(order.size());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return distance(i, static_cast<Eigen::Index>(a)) < distance(i, static_cast<Eigen::Index>(b));
    });
    for (std::size_t k = 0; k < order.size(); ++k) {
      ranked[k] = gallery_classes[order[k]] == query_classes[static_cast<std::size_t>(i)];
    }
    out.per_query_ap.push_back(average_precision(std::span<const bool>(ranked.get(), order.size())));
  }
  out.map = std::accumulate(out.per_query_ap.begin(), out.per_query_ap.end(), 0.0) /
            static_cast<double>(out.per_query_ap.size());
  return out;
}

std::vector<std::size_t> select_query_pool(std::span<const int> classes_of_candidates, int per_class,
                                           std::uint64_t seed) {
  if (per_class < 1) throw ValidationError("queries per class must be >= 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < classes_of_candidates.size(); ++i) by_class[classes_of_candidates[i]].push_back(i);
  if (by_class.empty()) throw ProtocolError("retrieval: no real test images to draw queries from");
  Rng rng(derive_seed(seed, 0x9E77));
  std::vector<std::size_t> out;
  for (auto& [cls, members] : by_class) {
    if (members.size() < static_cast<std::size_t>(per_class)) {
      throw ProtocolError("retrieval: class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                          " real test images, " + std::to_string(per_class) + " queries required");
    }
    for (int k = 0; k < per_class; ++k) {
      const std::size_t pick = k + uniform_index(rng, members.size() - static_cast<std::size_t>(k));
      std::swap(members[static_cast<std::size_t>(k)], members[pick]);
      out.push_back(members[static_cast<std::size_t>(k)]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace s2ig
