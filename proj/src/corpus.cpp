#include "lgsid/corpus.hpp"

#include "lgsid/geo.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace lgsid {
namespace {

constexpr double kKmPerDegree = kEarthRadiusKm * std::numbers::pi / 180.0;

// Word vocabularies. Each (kind, key) owns a handful of word slots that are
// hashed into the shared token space.
enum WordKind : std::uint64_t { kCat1Word = 1, kCat2Word, kBrandWord, kTownWord, kCityWord, kGenericWord,
                                  kProvinceWord };
constexpr int kCat1Words = 6;
constexpr int kCat2Words = 4;
constexpr int kBrandWords = 2;
constexpr int kLocalityWords = 2;
constexpr int kGenericWords = 256;

std::int32_t word_token(std::uint64_t hash_seed, WordKind kind, std::uint64_t key, int slot,
                        int vocab) {
  const std::uint64_t h = splitmix64(hash_seed ^ (static_cast<std::uint64_t>(kind) << 56) ^
                                     (key << 16) ^ static_cast<std::uint64_t>(slot));
  return static_cast<std::int32_t>(h % static_cast<std::uint64_t>(vocab));
}

double clamp_lat(double lat) { return std::clamp(lat, -60.0, 60.0); }
double wrap_lon(double lon) { return std::clamp(lon, -180.0, 180.0); }

LatLon jitter(LatLon center, double sigma_km, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const double dlat = n01(rng) * sigma_km / kKmPerDegree;
  const double dlon =
      n01(rng) * sigma_km / (kKmPerDegree * std::cos(center.lat * std::numbers::pi / 180.0));
  return {clamp_lat(center.lat + dlat), wrap_lon(center.lon + dlon)};
}

int uniform_int(Rng& rng, int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }
double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

using Json = nlohmann::ordered_json;

std::int64_t read_int(const nlohmann::json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(line, field, "missing field");
  if (!it->is_number_integer()) throw ParseError(line, field, "expected integer");
  return it->get<std::int64_t>();
}

double read_double(const nlohmann::json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(line, field, "missing field");
  if (!it->is_number()) throw ParseError(line, field, "expected number");
  return it->get<double>();
}

std::int32_t read_i32(const nlohmann::json& obj, const char* field, std::size_t line) {
  const std::int64_t v = read_int(obj, field, line);
  if (v < INT32_MIN || v > INT32_MAX) throw ParseError(line, field, "integer out of range");
  return static_cast<std::int32_t>(v);
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty() || text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, "", std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "", "expected a JSON object");
    fn(obj, line_no);
  }
}

}  // namespace

void CorpusConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ValidationError(name, "must be >= 1");
  };
  positive(n_provinces, "n_provinces");
  positive(cities_per_province, "cities_per_province");
  positive(towns_per_city, "towns_per_city");
  positive(items_per_town, "items_per_town");
  positive(n_cat1, "n_cat1");
  positive(cat2_per_cat1, "cat2_per_cat1");
  positive(n_brands, "n_brands");
  positive(n_users, "n_users");
  positive(clicks_per_user, "clicks_per_user");
  positive(vocab_size, "vocab_size");
  if (!(click_radius_km > 0.0)) throw ValidationError("click_radius_km", "must be > 0");
  if (!(item_sigma_km >= 0.0)) throw ValidationError("item_sigma_km", "must be >= 0");
  if (clicks_per_user < 2) throw ValidationError("clicks_per_user", "histories need >= 2 clicks");
  const std::pair<const char*, double> probs[] = {{"region_skew", region_skew},
                                                  {"town_skew", town_skew},
                                                  {"locality_word_prob", locality_word_prob},
                                                  {"province_word_prob", province_word_prob},
                                                  {"preferred_click_prob", preferred_click_prob}};
  for (const auto& [name, v] : probs) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(name, "must lie in [0, 1]");
  }
  if (region_skew + town_skew > 1.0)
    throw ValidationError("town_skew", "region_skew + town_skew must not exceed 1");
}

void validate_item(const Item& item) {
  if (item.item_id < 0) throw ValidationError("item_id", "must be >= 0");
  if (!std::isfinite(item.lat) || item.lat < -90.0 || item.lat > 90.0)
    throw ValidationError("lat", "must lie in [-90, 90], got " + std::to_string(item.lat));
  if (!std::isfinite(item.lon) || item.lon < -180.0 || item.lon > 180.0)
    throw ValidationError("lon", "must lie in [-180, 180], got " + std::to_string(item.lon));
  const std::pair<const char*, std::int32_t> ids[] = {
      {"province_id", item.province_id}, {"city_id", item.city_id}, {"town_id", item.town_id},
      {"cat1_id", item.cat1_id},         {"cat2_id", item.cat2_id}, {"brand_id", item.brand_id}};
  for (const auto& [name, v] : ids)
    if (v < 0) throw ValidationError(name, "must be >= 0");
  if (item.content_tokens.empty()) throw ValidationError("content_tokens", "must be non-empty");
}

Corpus::Corpus(std::vector<Item> items) : items_(std::move(items)) {
  std::unordered_map<std::int32_t, std::int32_t> city_parent, town_parent, cat2_parent;
  auto check_parent = [](auto& map, std::int32_t child, std::int32_t parent, const char* field) {
    auto [it, inserted] = map.emplace(child, parent);
    if (!inserted && it->second != parent)
      throw ValidationError(field, std::to_string(child) + " appears under two parents (" +
                                       std::to_string(it->second) + ", " +
                                       std::to_string(parent) + ")");
  };
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Item& it = items_[i];
    validate_item(it);
    if (!index_.emplace(it.item_id, i).second)
      throw ValidationError("item_id", "duplicate id " + std::to_string(it.item_id));
    check_parent(city_parent, it.city_id, it.province_id, "city_id");
    check_parent(town_parent, it.town_id, it.city_id, "town_id");
    check_parent(cat2_parent, it.cat2_id, it.cat1_id, "cat2_id");
    by_city_[it.city_id].push_back(i);
    by_province_[it.province_id].push_back(i);
    cards_.provinces = std::max(cards_.provinces, it.province_id + 1);
    cards_.cities = std::max(cards_.cities, it.city_id + 1);
    cards_.towns = std::max(cards_.towns, it.town_id + 1);
    cards_.cat1 = std::max(cards_.cat1, it.cat1_id + 1);
    cards_.cat2 = std::max(cards_.cat2, it.cat2_id + 1);
    cards_.brands = std::max(cards_.brands, it.brand_id + 1);
  }
}

std::size_t Corpus::index_of(ItemId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error("unknown item id " + std::to_string(id));
  return it->second;
}

const std::vector<std::size_t>& Corpus::city_members(std::int32_t city_id) const {
  static const std::vector<std::size_t> kEmpty;
  auto it = by_city_.find(city_id);
  return it == by_city_.end() ? kEmpty : it->second;
}

const std::vector<std::size_t>& Corpus::province_members(std::int32_t province_id) const {
  static const std::vector<std::size_t> kEmpty;
  auto it = by_province_.find(province_id);
  return it == by_province_.end() ? kEmpty : it->second;
}

GeneratedCorpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "corpus/geography"));
  const std::uint64_t hash_seed = derive_seed(cfg.seed, "corpus/vocabulary");

  // Province centers: uniform over a mid-latitude box, loosely separated.
  std::vector<LatLon> provinces;
  for (int p = 0; p < cfg.n_provinces; ++p) {
    LatLon best{};
    for (int attempt = 0; attempt < 2000; ++attempt) {
      LatLon c{22.0 + 20.0 * uniform01(rng), 102.0 + 20.0 * uniform01(rng)};
      best = c;
      bool separated = true;
      for (const LatLon& q : provinces)
        if (haversine_km(c, q) < 250.0) separated = false;
      if (separated) break;
    }
    provinces.push_back(best);
  }

  const int n_cities = cfg.n_provinces * cfg.cities_per_province;
  const int n_towns = n_cities * cfg.towns_per_city;
  std::vector<LatLon> cities(n_cities), towns(n_towns);
  for (int c = 0; c < n_cities; ++c)
    cities[c] = jitter(provinces[c / cfg.cities_per_province], cfg.city_sigma_km, rng);
  for (int t = 0; t < n_towns; ++t)
    towns[t] = jitter(cities[t / cfg.towns_per_city], cfg.town_sigma_km, rng);

  std::vector<int> province_fav(cfg.n_provinces), town_fav(n_towns);
  for (int& f : province_fav) f = uniform_int(rng, cfg.n_cat1);
  for (int& f : town_fav) f = uniform_int(rng, cfg.n_cat1);

  // Brands belong to a cat1 (brand % n_cat1); each province has a local
  // favourite per cat1.
  auto brands_of = [&](int cat1) {
    std::vector<int> out;
    if (cfg.n_brands < cfg.n_cat1) {
      out.push_back(cat1 % cfg.n_brands);
    } else {
      for (int b = cat1; b < cfg.n_brands; b += cfg.n_cat1) out.push_back(b);
    }
    return out;
  };
  std::vector<std::vector<int>> cat1_brands(cfg.n_cat1);
  for (int c = 0; c < cfg.n_cat1; ++c) cat1_brands[c] = brands_of(c);
  std::vector<int> local_brand(static_cast<std::size_t>(cfg.n_provinces) * cfg.n_cat1);
  for (int p = 0; p < cfg.n_provinces; ++p)
    for (int c = 0; c < cfg.n_cat1; ++c)
      local_brand[p * cfg.n_cat1 + c] =
          cat1_brands[c][uniform_int(rng, static_cast<int>(cat1_brands[c].size()))];

  GeneratedCorpus out;
  out.items.reserve(static_cast<std::size_t>(n_towns) * cfg.items_per_town);
  for (int t = 0; t < n_towns; ++t) {
    const int city = t / cfg.towns_per_city;
    const int province = city / cfg.cities_per_province;
    for (int k = 0; k < cfg.items_per_town; ++k) {
      Item item;
      item.item_id = static_cast<ItemId>(out.items.size());
      const LatLon p = jitter(towns[t], cfg.item_sigma_km, rng);
      item.lat = p.lat;
      item.lon = p.lon;
      item.province_id = province;
      item.city_id = city;
      item.town_id = t;
      const double u = uniform01(rng);
      if (u < cfg.region_skew) {
        item.cat1_id = province_fav[province];
      } else if (u < cfg.region_skew + cfg.town_skew) {
        item.cat1_id = town_fav[t];
      } else {
        item.cat1_id = uniform_int(rng, cfg.n_cat1);
      }
      item.cat2_id = item.cat1_id * cfg.cat2_per_cat1 + uniform_int(rng, cfg.cat2_per_cat1);
      const auto& choices = cat1_brands[item.cat1_id];
      item.brand_id = uniform01(rng) < 0.5
                          ? local_brand[province * cfg.n_cat1 + item.cat1_id]
                          : choices[uniform_int(rng, static_cast<int>(choices.size()))];

      auto& tok = item.content_tokens;
      for (int w = 0; w < 3; ++w)
        tok.push_back(word_token(hash_seed, kCat1Word, item.cat1_id, uniform_int(rng, kCat1Words),
                                 cfg.vocab_size));
      for (int w = 0; w < 2; ++w)
        tok.push_back(word_token(hash_seed, kCat2Word, item.cat2_id, uniform_int(rng, kCat2Words),
                                 cfg.vocab_size));
      tok.push_back(word_token(hash_seed, kBrandWord, item.brand_id, uniform_int(rng, kBrandWords),
                               cfg.vocab_size));
      if (uniform01(rng) < cfg.locality_word_prob)
        tok.push_back(word_token(hash_seed, kTownWord, t, uniform_int(rng, kLocalityWords),
                                 cfg.vocab_size));
      if (uniform01(rng) < cfg.locality_word_prob)
        tok.push_back(word_token(hash_seed, kCityWord, city, uniform_int(rng, kLocalityWords),
                                 cfg.vocab_size));
      if (uniform01(rng) < cfg.province_word_prob)
        tok.push_back(word_token(hash_seed, kProvinceWord, province, 0, cfg.vocab_size));
      tok.push_back(
          word_token(hash_seed, kGenericWord, 0, uniform_int(rng, kGenericWords), cfg.vocab_size));
      out.items.push_back(std::move(item));
    }
  }

  // Clickable items per home town: everything within the radius of the
  // town center.
  std::vector<std::vector<std::size_t>> clickable(n_towns);
  const double dlat = cfg.click_radius_km / kKmPerDegree;
  for (int t = 0; t < n_towns; ++t) {
    const double dlon =
        cfg.click_radius_km / (kKmPerDegree * std::cos(towns[t].lat * std::numbers::pi / 180.0));
    for (std::size_t i = 0; i < out.items.size(); ++i) {
      const Item& it = out.items[i];
      if (std::abs(it.lat - towns[t].lat) > dlat || std::abs(it.lon - towns[t].lon) > dlon)
        continue;
      if (haversine_km(towns[t], location_of(it)) <= cfg.click_radius_km) clickable[t].push_back(i);
    }
  }
  std::vector<int> viable_towns;
  for (int t = 0; t < n_towns; ++t)
    if (clickable[t].size() >= 2) viable_towns.push_back(t);
  if (viable_towns.empty())
    throw ValidationError("click_radius_km", "no town has two items inside the click radius");

  Rng urng(derive_seed(cfg.seed, "corpus/users"));
  out.histories.reserve(cfg.n_users);
  for (int u = 0; u < cfg.n_users; ++u) {
    const int home = viable_towns[uniform_int(urng, static_cast<int>(viable_towns.size()))];
    const int pref = uniform_int(urng, cfg.n_cat1);
    std::vector<std::size_t> pool_pref, pool_other;
    for (std::size_t i : clickable[home])
      (out.items[i].cat1_id == pref ? pool_pref : pool_other).push_back(i);
    const std::size_t n = std::min<std::size_t>(cfg.clicks_per_user, clickable[home].size());
    ClickHistory h;
    h.user_id = u;
    auto take = [&](std::vector<std::size_t>& pool, std::size_t j) {
      h.item_ids.push_back(out.items[pool[j]].item_id);
      pool[j] = pool.back();
      pool.pop_back();
    };
    while (h.item_ids.size() < n) {
      if (!pool_pref.empty() && uniform01(urng) < cfg.preferred_click_prob) {
        take(pool_pref, uniform_int(urng, static_cast<int>(pool_pref.size())));
        continue;
      }
      const int j = uniform_int(urng, static_cast<int>(pool_pref.size() + pool_other.size()));
      if (j < static_cast<int>(pool_pref.size()))
        take(pool_pref, j);
      else
        take(pool_other, j - static_cast<int>(pool_pref.size()));
    }
    out.histories.push_back(std::move(h));
  }
  return out;
}

void save_corpus(std::span<const Item> items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const Item& it : items) {
    Json j;
    j["item_id"] = it.item_id;
    j["lat"] = it.lat;
    j["lon"] = it.lon;
    j["province_id"] = it.province_id;
    j["city_id"] = it.city_id;
    j["town_id"] = it.town_id;
    j["cat1_id"] = it.cat1_id;
    j["cat2_id"] = it.cat2_id;
    j["brand_id"] = it.brand_id;
    j["content_tokens"] = it.content_tokens;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<Item> load_corpus(const std::filesystem::path& path) {
  std::vector<Item> items;
  for_each_json_line(path, [&](const nlohmann::json& obj, std::size_t line) {
    Item it;
    it.item_id = read_int(obj, "item_id", line);
    it.lat = read_double(obj, "lat", line);
    it.lon = read_double(obj, "lon", line);
    it.province_id = read_i32(obj, "province_id", line);
    it.city_id = read_i32(obj, "city_id", line);
    it.town_id = read_i32(obj, "town_id", line);
    it.cat1_id = read_i32(obj, "cat1_id", line);
    it.cat2_id = read_i32(obj, "cat2_id", line);
    it.brand_id = read_i32(obj, "brand_id", line);
    auto tok = obj.find("content_tokens");
    if (tok == obj.end()) throw ParseError(line, "content_tokens", "missing field");
    if (!tok->is_array()) throw ParseError(line, "content_tokens", "expected array");
    for (const auto& t : *tok) {
      if (!t.is_number_integer()) throw ParseError(line, "content_tokens", "expected integers");
      it.content_tokens.push_back(t.get<std::int32_t>());
    }
    try {
      validate_item(it);
    } catch (const ValidationError& e) {
      throw ValidationError(e.field(), "line " + std::to_string(line) + ": " + e.what());
    }
    items.push_back(std::move(it));
  });
  return items;
}

void save_histories(std::span<const ClickHistory> histories, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const ClickHistory& h : histories) {
    Json j;
    j["user_id"] = h.user_id;
    j["item_ids"] = h.item_ids;
    out << j.dump() << '\n';
  }
}

std::vector<ClickHistory> load_histories(const std::filesystem::path& path) {
  std::vector<ClickHistory> out;
  for_each_json_line(path, [&](const nlohmann::json& obj, std::size_t line) {
    ClickHistory h;
    h.user_id = read_int(obj, "user_id", line);
    auto ids = obj.find("item_ids");
    if (ids == obj.end()) throw ParseError(line, "item_ids", "missing field");
    if (!ids->is_array()) throw ParseError(line, "item_ids", "expected array");
    for (const auto& v : *ids) {
      if (!v.is_number_integer()) throw ParseError(line, "item_ids", "expected integers");
      h.item_ids.push_back(v.get<ItemId>());
    }
    out.push_back(std::move(h));
  });
  return out;
}

void validate_histories(std::span<const ClickHistory> histories, const Corpus& corpus) {
  for (const ClickHistory& h : histories) {
    if (h.item_ids.size() < 2)
      throw ValidationError("item_ids", "user " + std::to_string(h.user_id) + " has < 2 clicks");
    for (ItemId id : h.item_ids)
      if (!corpus.contains(id))
        throw ValidationError("item_ids", "user " + std::to_string(h.user_id) +
                                              " clicked unknown item " + std::to_string(id));
  }
}

}  // namespace lgsid
