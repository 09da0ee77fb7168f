#pragma once

#include "lgsid/common.hpp"

#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

namespace lgsid {

/// A local-life venue. Ids are hierarchical: town nests in city nests in
/// province, cat2 nests in cat1. The generator assigns ids in hierarchy
/// order so that numerically close ids are geographically related.
struct Item {
  ItemId item_id = 0;
  double lat = 0.0;
  double lon = 0.0;
  std::int32_t province_id = 0;
  std::int32_t city_id = 0;
  std::int32_t town_id = 0;
  std::int32_t cat1_id = 0;
  std::int32_t cat2_id = 0;
  std::int32_t brand_id = 0;
  std::vector<std::int32_t> content_tokens;

  bool operator==(const Item&) const = default;
};

struct ClickHistory {
  std::int64_t user_id = 0;
  std::vector<ItemId> item_ids;

  bool operator==(const ClickHistory&) const = default;
};

struct CorpusConfig {
  int n_provinces = 4;
  int cities_per_province = 5;
  int towns_per_city = 8;
  int items_per_town = 125;
  int n_cat1 = 8;
  int cat2_per_cat1 = 4;
  int n_brands = 64;
  int n_users = 4000;
  int clicks_per_user = 20;
  double click_radius_km = 5.0;
  std::uint64_t seed = 7;

  // Generator shape. Defaults give cities within ~100 km of their province
  // center, towns within ~15 km of their city, items within ~3 km of their town.
  double city_sigma_km = 35.0;
  double town_sigma_km = 5.0;
  double item_sigma_km = 1.0;
  int vocab_size = 4096;
  double region_skew = 0.35;      // P(item cat1 follows its province's favourite)
  double town_skew = 0.15;        // P(item cat1 follows its town's favourite)
  double locality_word_prob = 0.5;  // P(name carries a town / city word)
  double province_word_prob = 1.0;  // P(address carries the province word)
  double preferred_click_prob = 0.85;

  void validate() const;
};

/// Number of distinct values per categorical field (max id + 1).
struct Cardinalities {
  int provinces = 0;
  int cities = 0;
  int towns = 0;
  int cat1 = 0;
  int cat2 = 0;
  int brands = 0;
};

/// Immutable collection of items with id lookup and administrative groupings.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Item> items);

  const std::vector<Item>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  const Item& operator[](std::size_t index) const { return items_[index]; }

  bool contains(ItemId id) const { return index_.count(id) != 0; }
  std::size_t index_of(ItemId id) const;
  const Item& at(ItemId id) const { return items_[index_of(id)]; }

  /// Item indices (not ids) grouped by administrative unit, ascending.
  const std::vector<std::size_t>& city_members(std::int32_t city_id) const;
  const std::vector<std::size_t>& province_members(std::int32_t province_id) const;
  std::size_t city_count() const { return by_city_.size(); }
  std::size_t province_count() const { return by_province_.size(); }

  const Cardinalities& cardinalities() const { return cards_; }

 private:
  std::vector<Item> items_;
  std::unordered_map<ItemId, std::size_t> index_;
  std::unordered_map<std::int32_t, std::vector<std::size_t>> by_city_;
  std::unordered_map<std::int32_t, std::vector<std::size_t>> by_province_;
  Cardinalities cards_;
};

struct GeneratedCorpus {
  std::vector<Item> items;
  std::vector<ClickHistory> histories;
};

/// Synthetic geographic corpus. Deterministic for a given config (incl. seed).
GeneratedCorpus generate_corpus(const CorpusConfig& cfg);

/// Throws ValidationError on the first violated Item invariant.
void validate_item(const Item& item);

/// Parent relationships implied by the generator's id layout.
struct Hierarchy {
  int cities_per_province = 1;
  int towns_per_city = 1;
  int cat2_per_cat1 = 1;
  std::int32_t province_of_city(std::int32_t city) const { return city / cities_per_province; }
  std::int32_t city_of_town(std::int32_t town) const { return town / towns_per_city; }
  std::int32_t cat1_of_cat2(std::int32_t cat2) const { return cat2 / cat2_per_cat1; }
};

void save_corpus(std::span<const Item> items, const std::filesystem::path& path);
std::vector<Item> load_corpus(const std::filesystem::path& path);

void save_histories(std::span<const ClickHistory> histories, const std::filesystem::path& path);
std::vector<ClickHistory> load_histories(const std::filesystem::path& path);

/// Throws ValidationError if a history is too short or names an unknown item.
void validate_histories(std::span<const ClickHistory> histories, const Corpus& corpus);

}  // namespace lgsid
