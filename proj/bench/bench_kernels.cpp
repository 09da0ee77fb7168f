// Serial reference vs OpenMP kernels on desk-sized inputs.

#include "lgsid/kernels.hpp"

#include <benchmark/benchmark.h>

#include <numeric>
#include <random>

namespace {

using lgsid::Matrix;

Matrix random_unit_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  lgsid::Rng rng(seed);
  std::normal_distribution<double> g;
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  m.rowwise().normalize();
  return m;
}

std::vector<std::vector<lgsid::ItemId>> random_baskets(int users, int clicks, int items) {
  lgsid::Rng rng(3);
  std::uniform_int_distribution<lgsid::ItemId> pick(0, items - 1);
  std::vector<std::vector<lgsid::ItemId>> out(static_cast<std::size_t>(users));
  for (auto& b : out) {
    for (int c = 0; c < clicks; ++c) b.push_back(pick(rng));
  }
  return out;
}

template <bool Parallel>
void BM_NearestCenters(benchmark::State& state) {
  const Matrix points = random_unit_rows(state.range(0), 64, 1);
  const Matrix centers = random_unit_rows(64, 64, 2);
  std::vector<int> index(static_cast<std::size_t>(points.rows()));
  std::vector<double> dist(index.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      lgsid::kernels::omp::nearest_centers(points, centers, index, dist);
    else
      lgsid::kernels::serial::nearest_centers(points, centers, index, dist);
    benchmark::DoNotOptimize(index.data());
  }
  state.SetItemsProcessed(state.iterations() * points.rows());
}

template <bool Parallel>
void BM_TopK(benchmark::State& state) {
  const Matrix base = random_unit_rows(state.range(0), 64, 4);
  std::vector<lgsid::ItemId> ids(static_cast<std::size_t>(base.rows()));
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<Eigen::Index> queries(256);
  std::iota(queries.begin(), queries.end(), 0);
  for (auto _ : state) {
    auto r = Parallel ? lgsid::kernels::omp::topk_inner_product(base, queries, 100, ids)
                      : lgsid::kernels::serial::topk_inner_product(base, queries, 100, ids);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(queries.size()));
}

template <bool Parallel>
void BM_Cooccurrence(benchmark::State& state) {
  const auto baskets = random_baskets(static_cast<int>(state.range(0)), 20, 20000);
  for (auto _ : state) {
    auto r = Parallel ? lgsid::kernels::omp::cooccurrence_counts(baskets)
                      : lgsid::kernels::serial::cooccurrence_counts(baskets);
    benchmark::DoNotOptimize(r.data());
  }
}

}  // namespace

BENCHMARK(BM_NearestCenters<false>)->Arg(20000)->Name("nearest_centers/serial");
BENCHMARK(BM_NearestCenters<true>)->Arg(20000)->Name("nearest_centers/omp");
BENCHMARK(BM_TopK<false>)->Arg(20000)->Name("topk/serial");
BENCHMARK(BM_TopK<true>)->Arg(20000)->Name("topk/omp");
BENCHMARK(BM_Cooccurrence<false>)->Arg(4000)->Name("cooccurrence/serial");
BENCHMARK(BM_Cooccurrence<true>)->Arg(4000)->Name("cooccurrence/omp");

BENCHMARK_MAIN();
