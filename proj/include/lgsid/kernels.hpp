#pragma once

// Data-parallel inner loops. Each kernel has a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::omp`; both produce
// bit-identical output for any thread count. Library code calls the
// unqualified `kernels::` names, which forward to the OpenMP versions.

#include "lgsid/common.hpp"

#include <span>
#include <vector>

namespace lgsid::kernels {

struct CooccurrenceCount {
  ItemId a = 0;  // a < b
  ItemId b = 0;
  int count = 0;
  bool operator==(const CooccurrenceCount&) const = default;
};

namespace serial {

/// Nearest center per point by squared euclidean distance; ties resolve to
/// the lowest center index.
void nearest_centers(const Matrix& points, const Matrix& centers, std::span<int> index,
                     std::span<double> dist2);

/// For each query row q of `base`, the k rows with the largest inner
/// product, query excluded, ties by ascending `ids`.
std::vector<std::vector<Eigen::Index>> topk_inner_product(const Matrix& base,
                                                          std::span<const Eigen::Index> queries,
                                                          int k, std::span<const ItemId> ids);

/// Number of baskets containing both a and b, for every pair that occurs.
/// Repeated ids inside a basket count once. Sorted by (a, b).
std::vector<CooccurrenceCount> cooccurrence_counts(std::span<const std::vector<ItemId>> baskets);

}  // namespace serial

namespace omp {

void nearest_centers(const Matrix& points, const Matrix& centers, std::span<int> index,
                     std::span<double> dist2);
std::vector<std::vector<Eigen::Index>> topk_inner_product(const Matrix& base,
                                                          std::span<const Eigen::Index> queries,
                                                          int k, std::span<const ItemId> ids);
std::vector<CooccurrenceCount> cooccurrence_counts(std::span<const std::vector<ItemId>> baskets);

}  // namespace omp

using omp::cooccurrence_counts;
using omp::nearest_centers;
using omp::topk_inner_product;

/// Sets the OpenMP team size; n <= 0 leaves the runtime default.
void set_threads(int n);
int max_threads();

namespace detail {

inline double squared_distance(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return s;
}

inline double inner_product(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

void nearest_one(const Matrix& points, const Matrix& centers, Eigen::Index i, int& index,
                 double& dist2);
std::vector<Eigen::Index> topk_one(const Matrix& base, Eigen::Index q, int k,
                                   std::span<const ItemId> ids, std::vector<double>& scratch,
                                   std::vector<Eigen::Index>& order);
void basket_pairs(const std::vector<ItemId>& basket, std::vector<std::pair<ItemId, ItemId>>& out);
std::vector<CooccurrenceCount> run_length(std::vector<std::pair<ItemId, ItemId>>& pairs);

}  // namespace detail
}  // namespace lgsid::kernels
