#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace s2ig {

// Rows are samples, columns are classes (probabilities) or feature dims.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct InceptionScore {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation across splits
};

// exp(mean_x KL(p(y|x) || p(y))) per contiguous split. Needs >= splits rows.
InceptionScore inception_score(const Matrix& probabilities, int splits = 10);

// ||mu_r - mu_f||^2 + tr(S_r + S_f - 2 (S_r S_f)^{1/2}) with unbiased
// covariances. The square-root trace comes from the symmetric product
// S_r^{1/2} S_f S_r^{1/2} with negative eigenvalues clipped at zero.
double frechet_distance(const Matrix& real, const Matrix& fake);

// Average precision of a ranked list of relevance flags: the mean of
// precision@k over the relevant positions. Zero relevant items is an error.
double average_precision(std::span<const bool> ranked_relevance);

// Closed form of the expected AP when `relevant` of `total` items are placed
// in uniformly random order.
double expected_random_average_precision(std::size_t total, std::size_t relevant);

struct RetrievalResult {
  double map = 0.0;
  std::vector<double> per_query_ap;
};

// Ranks the gallery for every query by cosine distance (ties by gallery
// order) and averages the AP with relevance = same class. Every query class
// must appear in the gallery (ProtocolError otherwise).
RetrievalResult retrieval_map(const Matrix& queries, std::span<const int> query_classes, const Matrix& gallery,
                              std::span<const int> gallery_classes);

// Picks `per_class` records of every class at random (seeded). Classes with
// fewer candidates are a ProtocolError. Output is sorted.
std::vector<std::size_t> select_query_pool(std::span<const int> classes_of_candidates, int per_class,
                                           std::uint64_t seed);

}  // namespace s2ig
