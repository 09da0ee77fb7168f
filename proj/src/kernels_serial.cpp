#include "lgsid/kernels.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace lgsid::kernels {
namespace detail {

void nearest_one(const Matrix& points, const Matrix& centers, Eigen::Index i, int& index,
                 double& dist2) {
  const Eigen::Index d = points.cols();
  double best = std::numeric_limits<double>::infinity();
  int best_k = 0;
  for (Eigen::Index k = 0; k < centers.rows(); ++k) {
    const double s = squared_distance(points.row(i).data(), centers.row(k).data(), d);
    if (s < best) {
      best = s;
      best_k = static_cast<int>(k);
    }
  }
  index = best_k;
  dist2 = best;
}

std::vector<Eigen::Index> topk_one(const Matrix& base, Eigen::Index q, int k,
                                   std::span<const ItemId> ids, std::vector<double>& scratch,
                                   std::vector<Eigen::Index>& order) {
  const Eigen::Index n = base.rows(), d = base.cols();
  scratch.resize(static_cast<std::size_t>(n));
  order.clear();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == q) continue;
    scratch[j] = inner_product(base.row(q).data(), base.row(j).data(), d);
    order.push_back(j);
  }
  const auto kk = static_cast<std::ptrdiff_t>(std::min<std::size_t>(k, order.size()));
  std::partial_sort(order.begin(), order.begin() + kk, order.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      return scratch[a] != scratch[b] ? scratch[a] > scratch[b] : ids[a] < ids[b];
                    });
  return {order.begin(), order.begin() + kk};
}

void basket_pairs(const std::vector<ItemId>& basket, std::vector<std::pair<ItemId, ItemId>>& out) {
  std::vector<ItemId> u = basket;
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  for (std::size_t x = 0; x < u.size(); ++x)
    for (std::size_t y = x + 1; y < u.size(); ++y) out.emplace_back(u[x], u[y]);
}

std::vector<CooccurrenceCount> run_length(std::vector<std::pair<ItemId, ItemId>>& pairs) {
  std::sort(pairs.begin(), pairs.end());
  std::vector<CooccurrenceCount> out;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j] == pairs[i]) ++j;
    out.push_back({pairs[i].first, pairs[i].second, static_cast<int>(j - i)});
    i = j;
  }
  return out;
}

}  // namespace detail

namespace serial {

void nearest_centers(const Matrix& points, const Matrix& centers, std::span<int> index,
                     std::span<double> dist2) {
  if (points.cols() != centers.cols()) throw ValidationError("centers", "dimension mismatch");
  if (centers.rows() == 0) throw ValidationError("centers", "need at least one center");
  if (index.size() != static_cast<std::size_t>(points.rows()) || dist2.size() != index.size())
    throw ValidationError("index", "output size mismatch");
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    detail::nearest_one(points, centers, i, index[i], dist2[i]);
}

std::vector<std::vector<Eigen::Index>> topk_inner_product(const Matrix& base,
                                                          std::span<const Eigen::Index> queries,
                                                          int k, std::span<const ItemId> ids) {
  if (ids.size() != static_cast<std::size_t>(base.rows()))
    throw ValidationError("ids", "one id per base row required");
  std::vector<std::vector<Eigen::Index>> out(queries.size());
  std::vector<double> scratch;
  std::vector<Eigen::Index> order;
  for (std::size_t i = 0; i < queries.size(); ++i)
    out[i] = detail::topk_one(base, queries[i], k, ids, scratch, order);
  return out;
}

std::vector<CooccurrenceCount> cooccurrence_counts(std::span<const std::vector<ItemId>> baskets) {
  std::vector<std::pair<ItemId, ItemId>> pairs;
  for (const auto& b : baskets) detail::basket_pairs(b, pairs);
  return detail::run_length(pairs);
}

}  // namespace serial
}  // namespace lgsid::kernels
