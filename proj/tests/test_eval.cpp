#include "lgsid/eval.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace lgsid;
namespace t = lgsid::test;

namespace {

struct Fixture {
  Corpus corpus{generate_corpus(t::small_corpus_config()).items};
  Rng rng{1};
  Matrix emb = t::unit_rows(t::random_matrix(static_cast<Eigen::Index>(corpus.size()), 8, rng));
};

}  // namespace

TEST_CASE("retrieval: duplicate first, sort oracle, query excluded, k bound") {
  Fixture f;
  f.emb.row(10) = f.emb.row(3);
  const auto top = retrieve_topk(3, f.emb, f.corpus, 5);
  REQUIRE(top.size() == 5);
  CHECK(top[0] == f.corpus[10].item_id);

  for (std::size_t q = 0; q < f.corpus.size(); q += 23) {
    std::vector<std::pair<double, ItemId>> all;
    for (std::size_t j = 0; j < f.corpus.size(); ++j)
      if (j != q) all.emplace_back(-f.emb.row(q).dot(f.emb.row(j)), f.corpus[j].item_id);
    std::sort(all.begin(), all.end());
    const auto got = retrieve_topk(q, f.emb, f.corpus, 20);
    for (int i = 0; i < 20; ++i) CHECK(got[i] == all[i].second);
    CHECK(std::find(got.begin(), got.end(), f.corpus[q].item_id) == got.end());
  }
  CHECK_THROWS_AS(retrieve_topk(0, f.emb, f.corpus, static_cast<int>(f.corpus.size())), ValidationError);
  CHECK_THROWS_AS(retrieve_topk(0, f.emb, f.corpus, 0), ValidationError);
}

TEST_CASE("coverage: nesting, single-province corpus, counting oracle") {
  Fixture f;
  const auto q = sample_queries(f.corpus.size(), 60, 2);
  const auto lists = retrieve_topk_batch(q, f.emb, f.corpus, 10);
  const Coverage c = coverage_metrics(f.corpus, q, lists);
  CHECK(c.province >= c.city);
  CHECK(c.city >= c.town);
  double p = 0, ci = 0, tw = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const Item& target = f.corpus[q[i]];
    for (auto j : lists[i]) {
      p += f.corpus[j].province_id == target.province_id;
      ci += f.corpus[j].city_id == target.city_id;
      tw += f.corpus[j].town_id == target.town_id;
    }
  }
  const double denom = 10.0 * q.size();
  CHECK(c.province == doctest::Approx(p / denom).epsilon(1e-12));
  CHECK(c.city == doctest::Approx(ci / denom).epsilon(1e-12));
  CHECK(c.town == doctest::Approx(tw / denom).epsilon(1e-12));

  auto cfg = t::small_corpus_config();
  cfg.n_provinces = 1;
  const Corpus one(generate_corpus(cfg).items);
  Rng rng(3);
  const Matrix e = t::unit_rows(t::random_matrix(static_cast<Eigen::Index>(one.size()), 8, rng));
  const auto qo = sample_queries(one.size(), 20, 4);
  CHECK(coverage_metrics(one, qo, retrieve_topk_batch(qo, e, one, 10)).province == 1.0);
}

TEST_CASE("semantic similarity: duplicates, self retrieval, dot-product oracle") {
  Fixture f;
  const std::vector<Eigen::Index> q = {0, 1};
  const std::vector<std::vector<Eigen::Index>> same = {{0, 0}, {1}};
  CHECK(semantic_similarity(q, same, f.emb) == doctest::Approx(1.0));

  const auto qs = sample_queries(f.corpus.size(), 40, 5);
  const auto own = retrieve_topk_batch(qs, f.emb, f.corpus, 10);
  Rng rng(6);
  const Matrix other = t::unit_rows(t::random_matrix(f.emb.rows(), 8, rng));
  const auto foreign = retrieve_topk_batch(qs, other, f.corpus, 10);
  CHECK(semantic_similarity(qs, own, f.emb) >= semantic_similarity(qs, foreign, f.emb));

  double s = 0.0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    double row = 0.0;
    for (int j = 0; j < 5; ++j) row += f.emb.row(qs[i]).dot(f.emb.row(foreign[i][j]));
    s += row / 5.0;
  }
  CHECK(semantic_similarity(qs, foreign, f.emb, 5) == doctest::Approx(s / qs.size()).epsilon(1e-12));
}

TEST_CASE("NMI: identical, independent, hand table, symmetry, errors") {
  const std::vector<std::int64_t> a = {0, 0, 1, 1, 2, 2, 2};
  const std::vector<std::int64_t> relabel = {5, 5, 9, 9, 1, 1, 1};
  CHECK(nmi(a, a) == doctest::Approx(1.0));
  CHECK(nmi(a, relabel) == doctest::Approx(1.0));

  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    std::uniform_int_distribution<int> pick(0, 9);
    std::vector<std::int64_t> x(10000), y(10000);
    for (auto& v : x) v = pick(rng);
    for (auto& v : y) v = pick(rng);
    CHECK(nmi(x, y) < 0.05);
    CHECK(nmi(x, y) == doctest::Approx(nmi(y, x)).epsilon(1e-12));
  }

  // joint counts [[2,1],[1,2]] over 6 items
  const std::vector<std::int64_t> u = {0, 0, 0, 1, 1, 1};
  const std::vector<std::int64_t> v = {0, 0, 1, 0, 1, 1};
  const double mi = 2 * (2.0 / 6) * std::log((2.0 / 6) / 0.25) + 2 * (1.0 / 6) * std::log((1.0 / 6) / 0.25);
  CHECK(nmi(u, v) == doctest::Approx(mi / std::log(2.0)).epsilon(1e-12));

  const std::vector<std::int64_t> flat(6, 0);
  CHECK(nmi(flat, flat) == 1.0);
  CHECK(nmi(flat, u) == 0.0);
  CHECK_THROWS_AS(nmi(u, std::vector<std::int64_t>{0, 1}), ValidationError);
}

TEST_CASE("token quantiles: one token, uniform tokens, nearest-rank oracle, monotone") {
  const std::vector<double> pct = {10, 25, 50, 75, 90};
  const std::vector<SemanticID> one(40, SemanticID{{3, 1}});
  for (double q : token_quantiles(one, 1, pct)) CHECK(q == 40.0);

  std::vector<SemanticID> uni;
  for (int i = 0; i < 40; ++i) uni.push_back({{i % 8, i}});
  for (double q : token_quantiles(uni, 1, pct)) CHECK(q == 5.0);
  const auto st = token_stats(uni, pct);
  CHECK(st.collisions == 0);
  CHECK(st.populations[1].size() == 40);

  Rng rng(7);
  std::geometric_distribution<int> skew(0.2);
  std::vector<SemanticID> s;
  std::map<int, std::size_t> counts;
  for (int i = 0; i < 500; ++i) {
    const int tok = skew(rng);
    s.push_back({{tok, 0}});
    ++counts[tok];
  }
  std::vector<std::size_t> pops;
  for (const auto& [_, c] : counts) pops.push_back(c);
  std::sort(pops.begin(), pops.end());
  const auto got = token_quantiles(s, 1, pct);
  for (std::size_t i = 0; i < pct.size(); ++i) {
    const auto rank = static_cast<std::size_t>(std::ceil(pct[i] / 100.0 * pops.size()));
    CHECK(got[i] == static_cast<double>(pops[std::max<std::size_t>(rank, 1) - 1]));
    if (i > 0) CHECK(got[i] >= got[i - 1]);
  }
  CHECK_THROWS_AS(token_quantiles(s, 3, pct), ValidationError);
}

TEST_CASE("ablation table: averaging, improvement, deltas, missing variants") {
  std::vector<MetricRecord> r;
  for (std::uint64_t seed : {7, 8}) {
    r.push_back({"Origin", "town", 10, seed == 7 ? 0.10 : 0.14, seed});
    r.push_back({"G-DPO", "town", 10, seed == 7 ? 0.15 : 0.17, seed});
    r.push_back({"Origin", "similarity", 10, 0.9, seed});
    r.push_back({"G-DPO", "similarity", 10, 0.88, seed});
  }
  const std::vector<std::string> rows = {"Origin", "DPO-PR", "G-DPO"};
  const std::vector<int> ks = {10};
  const AblationTable t = ablation_report(r, rows, ks);
  REQUIRE(t.columns == std::vector<std::string>{"Top@10", "P@10", "C@10", "T@10"});
  CHECK(*t.values[0][3] == doctest::Approx(0.12));
  CHECK(*t.values[2][3] == doctest::Approx(0.16));
  CHECK(*t.improvement[3] == doctest::Approx(0.04 / 0.12));
  CHECK(*t.deltas[2][0] == doctest::Approx(-0.02));
  CHECK(*t.deltas[0][3] == 0.0);
  CHECK_FALSE(t.values[1][3].has_value());
  REQUIRE(t.warnings.size() == 1);
  CHECK(t.warnings[0].find("DPO-PR") != std::string::npos);
  CHECK(t.markdown().find("+33.3333%") != std::string::npos);
}

TEST_CASE("metric files round trip and regenerate byte-identically") {
  Fixture f;
  const auto q = sample_queries(f.corpus.size(), 50, 8);
  const auto rep = evaluate_retrieval(f.corpus, f.emb, f.emb, q);
  const auto rec = retrieval_records("Origin", rep, 7);
  CHECK(rec.size() == 12);
  const auto dir = t::scratch_dir("eval_rt");
  write_metrics_csv(rec, dir / "a.csv");
  const auto back = read_metrics_csv(dir / "a.csv");
  REQUIRE(back.size() == rec.size());
  for (std::size_t i = 0; i < rec.size(); ++i) {
    CHECK(back[i].variant == rec[i].variant);
    CHECK(back[i].metric == rec[i].metric);
    CHECK(back[i].k == rec[i].k);
    CHECK(back[i].value == rec[i].value);
    CHECK(back[i].seed == rec[i].seed);
  }
  write_metrics_csv(back, dir / "b.csv");
  CHECK(t::slurp(dir / "a.csv") == t::slurp(dir / "b.csv"));
  CHECK(rep.at(5).similarity >= rep.at(100).similarity);
  CHECK_THROWS_AS(rep.at(7), ValidationError);
}

TEST_CASE("query sampling is sorted, distinct and seeded") {
  const auto a = sample_queries(500, 100, 3);
  CHECK(a.size() == 100);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  CHECK(a == sample_queries(500, 100, 3));
  CHECK(sample_queries(10, 50, 3).size() == 10);
}
