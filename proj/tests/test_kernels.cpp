#include "lgsid/kernels.hpp"
#include "support.hpp"

#include <doctest.h>

#include <map>
#include <numeric>
#include <set>

using namespace lgsid;
using lgsid::test::random_matrix;

namespace {

std::vector<std::vector<ItemId>> random_baskets(int users, int items, int len, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, items - 1);
  std::vector<std::vector<ItemId>> out(users);
  for (auto& b : out)
    for (int j = 0; j < len; ++j) b.push_back(pick(rng));
  return out;
}

}  // namespace

TEST_CASE("nearest centers: serial and omp agree bit for bit across thread counts") {
  Rng rng(1);
  const Matrix pts = random_matrix(3000, 16, rng);
  const Matrix ctr = random_matrix(40, 16, rng);
  std::vector<int> idx_s(pts.rows()), idx_p(pts.rows());
  std::vector<double> d_s(pts.rows()), d_p(pts.rows());
  kernels::serial::nearest_centers(pts, ctr, idx_s, d_s);
  for (int threads : {1, 2, 4}) {
    kernels::set_threads(threads);
    kernels::omp::nearest_centers(pts, ctr, idx_p, d_p);
    CHECK(idx_s == idx_p);
    CHECK(d_s == d_p);
  }
  kernels::set_threads(0);
}

TEST_CASE("nearest centers matches a linear-scan oracle with lowest-index ties") {
  Rng rng(2);
  Matrix ctr = random_matrix(6, 3, rng);
  ctr.row(4) = ctr.row(1);  // exact duplicate: index 1 must win
  const Matrix pts = random_matrix(200, 3, rng);
  std::vector<int> idx(pts.rows());
  std::vector<double> d(pts.rows());
  kernels::nearest_centers(pts, ctr, idx, d);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    int best = 0;
    for (int k = 1; k < ctr.rows(); ++k)
      if ((pts.row(i) - ctr.row(k)).squaredNorm() < (pts.row(i) - ctr.row(best)).squaredNorm()) best = k;
    CHECK(idx[i] == best);
    CHECK(idx[i] != 4);
  }
}

TEST_CASE("top-k inner product equals a full-sort oracle on n=2000") {
  Rng rng(3);
  const Matrix base = lgsid::test::unit_rows(random_matrix(2000, 12, rng));
  std::vector<ItemId> ids(base.rows());
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<Eigen::Index> queries = {0, 17, 999, 1999};
  const int k = 25;
  const auto fast = kernels::topk_inner_product(base, queries, k, ids);
  const auto ref = kernels::serial::topk_inner_product(base, queries, k, ids);
  CHECK(fast == ref);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<Eigen::Index> order;
    for (Eigen::Index i = 0; i < base.rows(); ++i)
      if (i != queries[q]) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      const double sa = base.row(queries[q]).dot(base.row(a)), sb = base.row(queries[q]).dot(base.row(b));
      return sa != sb ? sa > sb : ids[a] < ids[b];
    });
    order.resize(k);
    CHECK(fast[q] == order);
  }
}

TEST_CASE("co-occurrence counts equal the O(n^2) brute force on 500 items, 200 users") {
  Rng rng(4);
  const auto baskets = random_baskets(200, 500, 12, rng);
  const auto counts = kernels::cooccurrence_counts(baskets);
  CHECK(counts == kernels::serial::cooccurrence_counts(baskets));

  std::vector<std::set<ItemId>> sets;
  for (const auto& b : baskets) sets.emplace_back(b.begin(), b.end());
  std::map<std::pair<ItemId, ItemId>, int> brute;
  for (ItemId a = 0; a < 500; ++a)
    for (ItemId b = a + 1; b < 500; ++b) {
      int s = 0;
      for (const auto& set : sets) s += set.count(a) && set.count(b);
      if (s > 0) brute[{a, b}] = s;
    }
  REQUIRE(counts.size() == brute.size());
  std::size_t i = 0;
  for (const auto& [key, s] : brute) {
    CHECK(counts[i].a == key.first);
    CHECK(counts[i].b == key.second);
    CHECK(counts[i].count == s);
    ++i;
  }
}

TEST_CASE("repeated ids in a basket count once") {
  const std::vector<std::vector<ItemId>> baskets = {{3, 1, 3, 1}, {1, 3}};
  const auto c = kernels::cooccurrence_counts(baskets);
  REQUIRE(c.size() == 1);
  CHECK(c[0] == kernels::CooccurrenceCount{1, 3, 2});
}
