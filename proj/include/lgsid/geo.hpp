#pragma once

#include "lgsid/common.hpp"
#include "lgsid/corpus.hpp"
#include "lgsid/preference.hpp"

#include <map>
#include <span>
#include <utility>
#include <vector>

namespace lgsid {

inline constexpr double kEarthRadiusKm = 6371.0088;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

inline LatLon location_of(const Item& item) { return {item.lat, item.lon}; }

/// Great-circle distance in km. Throws ValidationError for out-of-range input.
double haversine_km(LatLon a, LatLon b);

/// Uniform grid over (lat, lon) used for local density estimates.
class GeoIndex {
 public:
  using CellKey = std::pair<std::int64_t, std::int64_t>;

  explicit GeoIndex(const Corpus& corpus, double cell_deg = 0.5);

  double cell_deg() const { return cell_deg_; }
  CellKey cell_of(LatLon p) const;
  /// Item ids in the cell, ascending. Empty when the cell is unoccupied.
  const std::vector<ItemId>& items_in_cell(CellKey key) const;
  std::size_t cell_count(CellKey key) const { return items_in_cell(key).size(); }
  std::size_t occupied_cells() const { return cells_.size(); }
  double mean_cell_count() const;
  const std::map<CellKey, std::vector<ItemId>>& cells() const { return cells_; }

 private:
  double cell_deg_;
  std::size_t total_ = 0;
  std::map<CellKey, std::vector<ItemId>> cells_;
};

struct DistanceEntry {
  ItemId item_id = 0;
  double distance_km = 0.0;
};

/// Candidates ordered by distance to the target, ascending; ties by item id.
struct DistanceList {
  ItemId target = 0;
  std::vector<DistanceEntry> entries;
};

DistanceList rank_distances(const Item& target, std::span<const Item> candidates);

/// Fraction of K drawn from the same city:
/// clamp(local_cell_count / mean_cell_count, 0.2, 0.8).
double near_fraction(const GeoIndex& index, const Item& target);

struct StratumQuota {
  int near = 0;
  int mid = 0;
  int far = 0;
};

/// Quotas before fallback. For K >= 3 each stratum gets at least one slot.
StratumQuota stratum_quota(double near_fraction, int k);

/// K distinct hard negatives from three strata: same city (near), same
/// province in another city (mid), other provinces (far). A stratum that
/// runs dry hands its deficit to the next one (near -> mid -> far -> near).
/// Items at the target's exact coordinates are never returned.
std::vector<ItemId> density_aware_negatives(const GeoIndex& index, const Corpus& corpus,
                                            const Item& target, int k, Rng& rng);

/// K distinct negatives drawn uniformly from the corpus (the ablation baseline).
std::vector<ItemId> uniform_negatives(const Corpus& corpus, const Item& target, int k, Rng& rng);

/// (target preferred, random out-of-city item rejected), source = geo.
PreferencePair geo_constrained_pair(const Corpus& corpus, const Item& target, Rng& rng);

}  // namespace lgsid
