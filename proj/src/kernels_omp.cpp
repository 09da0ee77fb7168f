#include "lgsid/kernels.hpp"

#include <omp.h>

#include <map>

namespace lgsid::kernels {

void set_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int max_threads() { return omp_get_max_threads(); }

namespace omp {

void nearest_centers(const Matrix& points, const Matrix& centers, std::span<int> index,
                     std::span<double> dist2) {
  if (points.cols() != centers.cols()) throw ValidationError("centers", "dimension mismatch");
  if (centers.rows() == 0) throw ValidationError("centers", "need at least one center");
  if (index.size() != static_cast<std::size_t>(points.rows()) || dist2.size() != index.size())
    throw ValidationError("index", "output size mismatch");
  const Eigen::Index n = points.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) detail::nearest_one(points, centers, i, index[i], dist2[i]);
}

std::vector<std::vector<Eigen::Index>> topk_inner_product(const Matrix& base,
                                                          std::span<const Eigen::Index> queries,
                                                          int k, std::span<const ItemId> ids) {
  if (ids.size() != static_cast<std::size_t>(base.rows()))
    throw ValidationError("ids", "one id per base row required");
  std::vector<std::vector<Eigen::Index>> out(queries.size());
  const auto nq = static_cast<std::ptrdiff_t>(queries.size());
#pragma omp parallel
  {
    std::vector<double> scratch;
    std::vector<Eigen::Index> order;
#pragma omp for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < nq; ++i)
      out[i] = detail::topk_one(base, queries[i], k, ids, scratch, order);
  }
  return out;
}

std::vector<CooccurrenceCount> cooccurrence_counts(std::span<const std::vector<ItemId>> baskets) {
  const int threads = omp_get_max_threads();
  std::vector<std::vector<CooccurrenceCount>> partial(static_cast<std::size_t>(threads));
  const auto n = static_cast<std::ptrdiff_t>(baskets.size());
#pragma omp parallel num_threads(threads)
  {
    std::vector<std::pair<ItemId, ItemId>> pairs;
#pragma omp for schedule(static)
    for (std::ptrdiff_t u = 0; u < n; ++u) detail::basket_pairs(baskets[u], pairs);
    partial[static_cast<std::size_t>(omp_get_thread_num())] = detail::run_length(pairs);
  }
  if (threads == 1) return std::move(partial[0]);
  std::map<std::pair<ItemId, ItemId>, int> merged;
  for (const auto& part : partial)
    for (const CooccurrenceCount& c : part) merged[{c.a, c.b}] += c.count;
  std::vector<CooccurrenceCount> out;
  out.reserve(merged.size());
  for (const auto& [key, count] : merged) out.push_back({key.first, key.second, count});
  return out;
}

}  // namespace omp
}  // namespace lgsid::kernels
