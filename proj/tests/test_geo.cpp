#include "lgsid/geo.hpp"
#include "support.hpp"

#include <doctest.h>

#include <map>
#include <numbers>
#include <set>

using namespace lgsid;

namespace {

// Spherical law of cosines, written independently of the haversine form.
double law_of_cosines_km(LatLon a, LatLon b) {
  const double r = std::numbers::pi / 180.0;
  const double c = std::sin(a.lat * r) * std::sin(b.lat * r) +
                   std::cos(a.lat * r) * std::cos(b.lat * r) * std::cos((b.lon - a.lon) * r);
  return kEarthRadiusKm * std::acos(std::clamp(c, -1.0, 1.0));
}

LatLon random_point(Rng& rng) {
  std::uniform_real_distribution<double> lat(-89.0, 89.0), lon(-180.0, 180.0);
  return {lat(rng), lon(rng)};
}

Item at(ItemId id, double lat, double lon, int province = 0, int city = 0, int town = 0) {
  Item it;
  it.item_id = id;
  it.lat = lat;
  it.lon = lon;
  it.province_id = province;
  it.city_id = city;
  it.town_id = town;
  it.content_tokens = {1};
  return it;
}

Corpus generated(const CorpusConfig& cfg) { return Corpus(generate_corpus(cfg).items); }

}  // namespace

TEST_CASE("haversine identity, symmetry and range errors") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const LatLon a = random_point(rng), b = random_point(rng);
    CHECK(haversine_km(a, a) == 0.0);
    CHECK(haversine_km(a, b) == haversine_km(b, a));
  }
  CHECK_THROWS_AS(haversine_km({91.0, 0.0}, {0.0, 0.0}), ValidationError);
  CHECK_THROWS_AS(haversine_km({0.0, 0.0}, {0.0, -181.0}), ValidationError);
}

TEST_CASE("haversine matches the law-of-cosines oracle within 0.1% on 10^4 random pairs") {
  CHECK(haversine_km({0, 0}, {0, 1}) ==
        doctest::Approx(law_of_cosines_km({0, 0}, {0, 1})).epsilon(1e-3));
  Rng rng(2);
  int bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const LatLon a = random_point(rng), b = random_point(rng);
    const double h = haversine_km(a, b), o = law_of_cosines_km(a, b);
    if (std::abs(h - o) > 1e-3 * std::max(o, 1e-9)) ++bad;
  }
  CHECK(bad == 0);
}

TEST_CASE("triangle inequality on random triples") {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const LatLon a = random_point(rng), b = random_point(rng), c = random_point(rng);
    CHECK(haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9);
  }
}

TEST_CASE("rank_distances: ties by id, sorting, and full-sort oracle") {
  const Item target = at(100, 30.0, 110.0);
  SUBCASE("all candidates at the target's coordinates") {
    std::vector<Item> c = {at(5, 30, 110), at(2, 30, 110), at(9, 30, 110)};
    const auto r = rank_distances(target, c);
    REQUIRE(r.entries.size() == 3);
    CHECK(r.entries[0].item_id == 2);
    CHECK(r.entries[1].item_id == 5);
    CHECK(r.entries[2].item_id == 9);
    for (const auto& e : r.entries) CHECK(e.distance_km == 0.0);
  }
  SUBCASE("three candidates at roughly 1, 5 and 2 km") {
    const double deg = 1.0 / 111.195;
    std::vector<Item> c = {at(1, 30.0 + deg, 110), at(2, 30.0 + 5 * deg, 110), at(3, 30.0 + 2 * deg, 110)};
    const auto r = rank_distances(target, c);
    CHECK(r.entries[0].item_id == 1);
    CHECK(r.entries[1].item_id == 3);
    CHECK(r.entries[2].item_id == 2);
  }
  SUBCASE("random 50 candidates") {
    Rng rng(4);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<Item> c;
    for (int i = 0; i < 50; ++i) c.push_back(at(i, 30.0 + d(rng), 110.0 + d(rng)));
    std::vector<std::pair<double, ItemId>> oracle;
    for (const auto& it : c) oracle.emplace_back(haversine_km({30, 110}, {it.lat, it.lon}), it.item_id);
    std::sort(oracle.begin(), oracle.end());
    const auto r = rank_distances(target, c);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      CHECK(r.entries[i].item_id == oracle[i].second);
      CHECK(r.entries[i].distance_km == oracle[i].first);
    }
  }
}

TEST_CASE("grid index returns the brute-force set per cell") {
  const Corpus corpus = generated(lgsid::test::small_corpus_config());
  const GeoIndex index(corpus, 0.25);
  std::map<GeoIndex::CellKey, std::vector<ItemId>> brute;
  for (const Item& it : corpus.items()) {
    const GeoIndex::CellKey key{static_cast<std::int64_t>(std::floor(it.lat / 0.25)),
                                static_cast<std::int64_t>(std::floor(it.lon / 0.25))};
    brute[key].push_back(it.item_id);
  }
  CHECK(index.occupied_cells() == brute.size());
  for (auto& [key, ids] : brute) {
    std::sort(ids.begin(), ids.end());
    CHECK(index.items_in_cell(key) == ids);
  }
  CHECK(index.items_in_cell({999999, 999999}).empty());
}

TEST_CASE("stratum quotas follow the clamped density fraction") {
  CHECK(stratum_quota(0.5, 15).near == 8);
  for (double f : {0.2, 0.35, 0.8}) {
    const StratumQuota q = stratum_quota(f, 15);
    CHECK(q.near + q.mid + q.far == 15);
    CHECK(q.near >= 1);
    CHECK(q.mid >= 1);
    CHECK(q.far >= 1);
  }
}

TEST_CASE("density-aware negatives on a multi-province corpus") {
  auto cfg = lgsid::test::small_corpus_config();
  cfg.n_provinces = 3;
  const Corpus corpus = generated(cfg);
  const GeoIndex index(corpus);
  Rng rng(5);
  for (std::size_t t = 0; t < corpus.size(); t += 17) {
    const Item& target = corpus[t];
    const auto neg = density_aware_negatives(index, corpus, target, 15, rng);
    REQUIRE(neg.size() == 15);
    CHECK(std::set<ItemId>(neg.begin(), neg.end()).size() == 15);
    int near = 0, mid = 0, far = 0;
    for (ItemId id : neg) {
      const Item& n = corpus.at(id);
      CHECK(id != target.item_id);
      if (n.city_id == target.city_id)
        ++near;
      else if (n.province_id == target.province_id)
        ++mid;
      else
        ++far;
    }
    // every stratum is non-empty on this corpus, so each contributes
    CHECK(near >= 1);
    CHECK(mid >= 1);
    CHECK(far >= 1);
    const StratumQuota q = stratum_quota(near_fraction(index, target), 15);
    CHECK(near == q.near);
    CHECK(mid == q.mid);
    CHECK(far == q.far);
  }
}

TEST_CASE("single-town corpus draws every negative from the near stratum") {
  auto cfg = lgsid::test::small_corpus_config();
  cfg.n_provinces = cfg.cities_per_province = cfg.towns_per_city = 1;
  const Corpus corpus = generated(cfg);
  const GeoIndex index(corpus);
  Rng rng(6);
  const auto neg = density_aware_negatives(index, corpus, corpus[0], 15, rng);
  CHECK(neg.size() == 15);
  for (ItemId id : neg) CHECK(corpus.at(id).town_id == corpus[0].town_id);
}

TEST_CASE("negative sampling is deterministic per seed and rejects tiny corpora") {
  const Corpus corpus = generated(lgsid::test::small_corpus_config());
  const GeoIndex index(corpus);
  Rng a(7), b(7);
  CHECK(density_aware_negatives(index, corpus, corpus[3], 15, a) ==
        density_aware_negatives(index, corpus, corpus[3], 15, b));
  Rng c(8), d(8);
  CHECK(uniform_negatives(corpus, corpus[3], 15, c) == uniform_negatives(corpus, corpus[3], 15, d));
  const Corpus tiny({at(0, 30, 110), at(1, 30.01, 110)});
  const GeoIndex ti(tiny);
  CHECK_THROWS_AS(density_aware_negatives(ti, tiny, tiny[0], 3, c), Error);
  CHECK_THROWS_AS(density_aware_negatives(ti, tiny, tiny[0], 0, c), ValidationError);
}

TEST_CASE("geo-constrained pairs cross city boundaries") {
  SUBCASE("two-city corpus rejects from the other city") {
    const Corpus corpus({at(0, 30, 110, 0, 0), at(1, 30.01, 110, 0, 0), at(2, 31, 111, 0, 1, 1)});
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
      const auto p = geo_constrained_pair(corpus, corpus[0], rng);
      CHECK(p.preferred == 0);
      CHECK(p.rejected == 2);
      CHECK(p.source == PairSource::geo_constrained);
    }
  }
  SUBCASE("single-city corpus is an error") {
    const Corpus corpus({at(0, 30, 110), at(1, 30.01, 110)});
    Rng rng(10);
    CHECK_THROWS_AS(geo_constrained_pair(corpus, corpus[0], rng), Error);
  }
  SUBCASE("rejected city is roughly uniform over the other cities") {
    const Corpus corpus = generated(lgsid::test::small_corpus_config());
    Rng rng(11);
    std::map<int, int> counts;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) ++counts[corpus.at(geo_constrained_pair(corpus, corpus[0], rng).rejected).city_id];
    CHECK(counts.count(corpus[0].city_id) == 0);
    const double expected = static_cast<double>(draws) / counts.size();
    double chi2 = 0.0;
    for (const auto& [city, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
    CHECK(counts.size() == corpus.city_count() - 1);
    CHECK(chi2 < 13.8);  // chi-square, 2 dof, p = 0.001
  }
}
