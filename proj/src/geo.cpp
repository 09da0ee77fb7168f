#include "lgsid/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace lgsid {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

void check_range(LatLon p) {
  if (!std::isfinite(p.lat) || p.lat < -90.0 || p.lat > 90.0)
    throw ValidationError("lat", "must lie in [-90, 90], got " + std::to_string(p.lat));
  if (!std::isfinite(p.lon) || p.lon < -180.0 || p.lon > 180.0)
    throw ValidationError("lon", "must lie in [-180, 180], got " + std::to_string(p.lon));
}

bool same_coordinates(const Item& a, const Item& b) { return a.lat == b.lat && a.lon == b.lon; }

// Draws up to `n` members of `pool` without replacement; drawn members are
// moved to the front of `pool` and removed from further consideration by
// advancing `used`.
void draw(std::vector<std::size_t>& pool, std::size_t& used, std::size_t n, Rng& rng,
          std::vector<std::size_t>& out) {
  for (std::size_t k = 0; k < n && used < pool.size(); ++k, ++used) {
    std::uniform_int_distribution<std::size_t> pick(used, pool.size() - 1);
    std::swap(pool[used], pool[pick(rng)]);
    out.push_back(pool[used]);
  }
}

}  // namespace

double haversine_km(LatLon a, LatLon b) {
  check_range(a);
  check_range(b);
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlambda = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

GeoIndex::GeoIndex(const Corpus& corpus, double cell_deg) : cell_deg_(cell_deg) {
  if (!(cell_deg > 0.0)) throw ValidationError("cell_deg", "must be > 0");
  for (const Item& it : corpus.items()) cells_[cell_of(location_of(it))].push_back(it.item_id);
  for (auto& [key, ids] : cells_) std::sort(ids.begin(), ids.end());
  total_ = corpus.size();
}

GeoIndex::CellKey GeoIndex::cell_of(LatLon p) const {
  return {static_cast<std::int64_t>(std::floor(p.lat / cell_deg_)),
          static_cast<std::int64_t>(std::floor(p.lon / cell_deg_))};
}

const std::vector<ItemId>& GeoIndex::items_in_cell(CellKey key) const {
  static const std::vector<ItemId> kEmpty;
  auto it = cells_.find(key);
  return it == cells_.end() ? kEmpty : it->second;
}

double GeoIndex::mean_cell_count() const {
  return cells_.empty() ? 0.0 : static_cast<double>(total_) / static_cast<double>(cells_.size());
}

DistanceList rank_distances(const Item& target, std::span<const Item> candidates) {
  DistanceList out;
  out.target = target.item_id;
  std::unordered_set<ItemId> seen;
  for (const Item& c : candidates) {
    if (c.item_id == target.item_id || !seen.insert(c.item_id).second) continue;
    out.entries.push_back({c.item_id, haversine_km(location_of(target), location_of(c))});
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const auto& a, const auto& b) {
    return a.distance_km != b.distance_km ? a.distance_km < b.distance_km : a.item_id < b.item_id;
  });
  return out;
}

double near_fraction(const GeoIndex& index, const Item& target) {
  const double mean = index.mean_cell_count();
  if (mean <= 0.0) return 0.2;
  const double local = static_cast<double>(index.cell_count(index.cell_of(location_of(target))));
  return std::clamp(local / mean, 0.2, 0.8);
}

StratumQuota stratum_quota(double near_fraction, int k) {
  StratumQuota q;
  if (k <= 0) return q;
  q.near = static_cast<int>(std::lround(near_fraction * k));
  if (k >= 3) q.near = std::clamp(q.near, 1, k - 2);
  q.near = std::clamp(q.near, 0, k);
  const int rest = k - q.near;
  q.far = rest / 2;
  q.mid = rest - q.far;
  return q;
}

std::vector<ItemId> density_aware_negatives(const GeoIndex& index, const Corpus& corpus,
                                            const Item& target, int k, Rng& rng) {
  if (k < 1) throw ValidationError("k", "must be >= 1");
  std::vector<std::size_t> strata[3];
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Item& c = corpus[i];
    if (c.item_id == target.item_id || same_coordinates(c, target)) continue;
    if (c.city_id == target.city_id)
      strata[0].push_back(i);
    else if (c.province_id == target.province_id)
      strata[1].push_back(i);
    else
      strata[2].push_back(i);
  }
  const std::size_t available = strata[0].size() + strata[1].size() + strata[2].size();
  if (available < static_cast<std::size_t>(k))
    throw Error("corpus too small: need " + std::to_string(k) + " negatives, only " +
                std::to_string(available) + " eligible items");

  const StratumQuota q = stratum_quota(near_fraction(index, target), k);
  const std::size_t want[3] = {static_cast<std::size_t>(q.near), static_cast<std::size_t>(q.mid),
                               static_cast<std::size_t>(q.far)};
  std::size_t used[3] = {0, 0, 0};
  std::vector<std::size_t> picked;
  picked.reserve(k);
  std::size_t deficit = 0;
  for (int s = 0; s < 3; ++s) {
    const std::size_t before = picked.size();
    draw(strata[s], used[s], want[s] + deficit, rng, picked);
    deficit = want[s] + deficit - (picked.size() - before);
  }
  // Wrap around: far hands its deficit back to near, then mid.
  for (int s = 0; deficit > 0 && s < 3; ++s) {
    const std::size_t before = picked.size();
    draw(strata[s], used[s], deficit, rng, picked);
    deficit -= picked.size() - before;
  }

  std::vector<ItemId> out;
  out.reserve(picked.size());
  for (std::size_t i : picked) out.push_back(corpus[i].item_id);
  return out;
}

std::vector<ItemId> uniform_negatives(const Corpus& corpus, const Item& target, int k, Rng& rng) {
  if (k < 1) throw ValidationError("k", "must be >= 1");
  std::vector<std::size_t> pool;
  pool.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].item_id != target.item_id && !same_coordinates(corpus[i], target))
      pool.push_back(i);
  if (pool.size() < static_cast<std::size_t>(k))
    throw Error("corpus too small: need " + std::to_string(k) + " negatives, only " +
                std::to_string(pool.size()) + " eligible items");
  std::vector<std::size_t> picked;
  std::size_t used = 0;
  draw(pool, used, static_cast<std::size_t>(k), rng, picked);
  std::vector<ItemId> out;
  for (std::size_t i : picked) out.push_back(corpus[i].item_id);
  return out;
}

PreferencePair geo_constrained_pair(const Corpus& corpus, const Item& target, Rng& rng) {
  const std::size_t in_city = corpus.city_members(target.city_id).size();
  if (in_city >= corpus.size())
    throw Error("no item outside city " + std::to_string(target.city_id) +
                "; geo-constrained pairs need at least two cities");
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  for (int attempt = 0; attempt < 256; ++attempt) {
    const Item& c = corpus[pick(rng)];
    if (c.city_id != target.city_id)
      return {target.item_id, target.item_id, c.item_id, PairSource::geo_constrained};
  }
  std::vector<std::size_t> outside;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].city_id != target.city_id) outside.push_back(i);
  std::uniform_int_distribution<std::size_t> pick_out(0, outside.size() - 1);
  return {target.item_id, target.item_id, corpus[outside[pick_out(rng)]].item_id,
          PairSource::geo_constrained};
}

}  // namespace lgsid
