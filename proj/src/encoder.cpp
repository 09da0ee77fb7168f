#include "lgsid/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

namespace lgsid {
namespace {

constexpr double kDegenerateNorm = 1e-12;

void push_slot(std::vector<FeatureEntry>& out, int offset, int slots, std::int64_t id) {
  out.push_back({offset + static_cast<int>(id % slots), 1.0});
}

}  // namespace

FeaturizerConfig FeaturizerConfig::for_corpus(const Cardinalities& cards, int content_buckets,
                                              std::uint64_t hash_seed) {
  FeaturizerConfig c;
  c.content_buckets = content_buckets;
  c.cat1_slots = std::max(1, cards.cat1);
  c.cat2_slots = std::max(1, cards.cat2);
  c.brand_slots = std::max(1, cards.brands);
  c.province_slots = std::max(1, cards.provinces);
  c.city_slots = std::max(1, cards.cities);
  c.town_slots = std::max(1, cards.towns);
  c.hash_seed = hash_seed;
  return c;
}

void FeaturizerConfig::validate() const {
  const std::pair<const char*, int> fields[] = {
      {"content_buckets", content_buckets}, {"cat1_slots", cat1_slots},
      {"cat2_slots", cat2_slots},           {"brand_slots", brand_slots},
      {"province_slots", province_slots},   {"city_slots", city_slots},
      {"town_slots", town_slots}};
  for (const auto& [name, v] : fields)
    if (v < 1) throw ValidationError(name, "must be >= 1");
}

void to_json(nlohmann::json& j, const FeaturizerConfig& c) {
  j = nlohmann::json{{"content_buckets", c.content_buckets}, {"cat1_slots", c.cat1_slots},
                     {"cat2_slots", c.cat2_slots},           {"brand_slots", c.brand_slots},
                     {"province_slots", c.province_slots},   {"city_slots", c.city_slots},
                     {"town_slots", c.town_slots},           {"hash_seed", c.hash_seed}};
}

void from_json(const nlohmann::json& j, FeaturizerConfig& c) {
  j.at("content_buckets").get_to(c.content_buckets);
  j.at("cat1_slots").get_to(c.cat1_slots);
  j.at("cat2_slots").get_to(c.cat2_slots);
  j.at("brand_slots").get_to(c.brand_slots);
  j.at("province_slots").get_to(c.province_slots);
  j.at("city_slots").get_to(c.city_slots);
  j.at("town_slots").get_to(c.town_slots);
  j.at("hash_seed").get_to(c.hash_seed);
  c.validate();
}

PromptFeatures featurize(const FeaturizerConfig& cfg, const Item& item,
                         const Item* location_override) {
  PromptFeatures f;
  std::vector<int> buckets;
  buckets.reserve(item.content_tokens.size());
  for (std::int32_t tok : item.content_tokens)
    buckets.push_back(static_cast<int>(
        splitmix64(cfg.hash_seed ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(tok))) %
        static_cast<std::uint64_t>(cfg.content_buckets)));
  std::sort(buckets.begin(), buckets.end());
  buckets.erase(std::unique(buckets.begin(), buckets.end()), buckets.end());
  for (int b : buckets) f.content.push_back({b, 1.0});
  int offset = cfg.content_buckets;
  push_slot(f.content, offset, cfg.cat1_slots, item.cat1_id);
  offset += cfg.cat1_slots;
  push_slot(f.content, offset, cfg.cat2_slots, item.cat2_id);
  offset += cfg.cat2_slots;
  push_slot(f.content, offset, cfg.brand_slots, item.brand_id);

  const Item& loc = location_override ? *location_override : item;
  push_slot(f.location, 0, cfg.province_slots, loc.province_id);
  push_slot(f.location, cfg.province_slots, cfg.city_slots, loc.city_id);
  push_slot(f.location, cfg.province_slots + cfg.city_slots, cfg.town_slots, loc.town_id);
  return f;
}

std::size_t Encoder::Pass::degenerate_count() const {
  return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
}

Encoder::Encoder(FeaturizerConfig feat, EncoderConfig cfg, Rng& rng)
    : feat_(feat), cfg_(cfg) {
  feat_.validate();
  if (cfg_.dim < 1 || cfg_.hidden < 1) throw ValidationError("encoder", "dims must be >= 1");
  net_ = DenseNet({feat_.dim(), cfg_.hidden, cfg_.dim}, {Activation::tanh, Activation::identity},
                  rng);
}

Encoder::Encoder(FeaturizerConfig feat, EncoderConfig cfg, DenseNet net)
    : feat_(feat), cfg_(cfg), net_(std::move(net)) {
  feat_.validate();
  if (net_.input_dim() != feat_.dim() || net_.output_dim() != cfg_.dim)
    throw ValidationError("encoder", "network shape does not match featurizer/encoder config");
}

Matrix Encoder::densify(std::span<const PromptFeatures> rows) const {
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), feat_.dim());
  const int loc_offset = feat_.content_dim();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (const FeatureEntry& e : rows[r].content) x(r, e.index) = e.value;
    for (const FeatureEntry& e : rows[r].location) x(r, loc_offset + e.index) = e.value;
  }
  return x;
}

Matrix Encoder::forward(const Matrix& features, Pass* pass) const {
  Matrix y = net_.forward(features, pass ? &pass->cache : nullptr);
  Vector norms = y.rowwise().norm();
  std::vector<char> degenerate(static_cast<std::size_t>(y.rows()), 0);
  Matrix out(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    if (norms(r) < kDegenerateNorm) {
      out.row(r).setZero();
      out(r, 0) = 1.0;
      degenerate[static_cast<std::size_t>(r)] = 1;
    } else {
      out.row(r) = y.row(r) / norms(r);
    }
  }
  if (pass) {
    pass->pre_norm = std::move(y);
    pass->norms = std::move(norms);
    pass->out = out;
    pass->degenerate = std::move(degenerate);
  }
  return out;
}

void Encoder::backward(const Pass& pass, const Matrix& grad_out) {
  if (grad_out.rows() != pass.out.rows() || grad_out.cols() != pass.out.cols())
    throw ValidationError("grad_out", "shape does not match the forward pass");
  Matrix grad_pre(grad_out.rows(), grad_out.cols());
  for (Eigen::Index r = 0; r < grad_out.rows(); ++r) {
    if (pass.degenerate[static_cast<std::size_t>(r)]) {
      grad_pre.row(r).setZero();
      continue;
    }
    const double proj = pass.out.row(r).dot(grad_out.row(r));
    grad_pre.row(r) = (grad_out.row(r) - proj * pass.out.row(r)) / pass.norms(r);
  }
  net_.backward(pass.cache, grad_pre);
}

Matrix Encoder::encode(std::span<const PromptFeatures> rows, std::size_t* degenerate) const {
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Matrix out(n, cfg_.dim);
  const Eigen::Index chunks = (n + kChunkRows - 1) / kChunkRows;
  std::size_t flagged = 0;
#pragma omp parallel for schedule(static) reduction(+ : flagged)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index begin = c * kChunkRows;
    const Eigen::Index len = std::min(kChunkRows, n - begin);
    Pass pass;
    Matrix x = densify(rows.subspan(static_cast<std::size_t>(begin), static_cast<std::size_t>(len)));
    Matrix y = forward(x, &pass);
    out.middleRows(begin, len) = y;
    flagged += pass.degenerate_count();
  }
  if (degenerate) *degenerate = flagged;
  return out;
}

Matrix Encoder::encode_items(const Corpus& corpus) const {
  std::vector<PromptFeatures> rows;
  rows.reserve(corpus.size());
  for (const Item& it : corpus.items()) rows.push_back(featurize(it));
  return encode(rows);
}

void Encoder::save(const std::filesystem::path& net_path,
                   const std::filesystem::path& config_path) const {
  net_.save(net_path);
  nlohmann::json j;
  j["featurizer"] = feat_;
  j["hidden"] = cfg_.hidden;
  j["dim"] = cfg_.dim;
  std::ofstream out(config_path, std::ios::trunc);
  if (!out) throw Error("cannot write " + config_path.string());
  out << j.dump(2) << '\n';
}

Encoder Encoder::load(const std::filesystem::path& net_path,
                      const std::filesystem::path& config_path) {
  std::ifstream in(config_path);
  if (!in) throw Error("cannot open " + config_path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  EncoderConfig cfg;
  cfg.hidden = j.at("hidden").get<int>();
  cfg.dim = j.at("dim").get<int>();
  return Encoder(j.at("featurizer").get<FeaturizerConfig>(), cfg, DenseNet::load(net_path));
}

ReferenceEncoder::ReferenceEncoder(Encoder encoder) : encoder_(std::move(encoder)) {
  encoder_.net().freeze();
}

ReferenceEncoder snapshot_reference(const Encoder& policy) { return ReferenceEncoder(policy); }

double warmup_contrastive(Encoder& encoder, const Corpus& corpus, const WarmupConfig& cfg,
                          Rng& rng) {
  if (cfg.steps <= 0) return 0.0;
  if (cfg.batch < 1) throw ValidationError("batch", "must be >= 1");
  if (corpus.size() < 2) throw Error("warm-up needs at least two items");
  std::unordered_map<std::int32_t, std::vector<std::size_t>> by_cat1;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_cat1[corpus[i].cat1_id].push_back(i);

  AdamW opt({.lr = cfg.lr});
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  const int b = cfg.batch;
  const int tail_from = cfg.steps - std::max(1, cfg.steps / 10);
  double tail_loss = 0.0;
  int tail_count = 0;
  std::vector<PromptFeatures> rows(static_cast<std::size_t>(3 * b));
  for (int step = 0; step < cfg.steps; ++step) {
    for (int k = 0; k < b; ++k) {
      const std::size_t a = pick(rng);
      const auto& same = by_cat1[corpus[a].cat1_id];
      std::size_t p = a;
      if (same.size() > 1) {
        std::uniform_int_distribution<std::size_t> pick_same(0, same.size() - 1);
        while (p == a) p = same[pick_same(rng)];
      }
      const std::size_t n = pick(rng);
      rows[k] = encoder.featurize(corpus[a]);
      rows[b + k] = encoder.featurize(corpus[p]);
      rows[2 * b + k] = encoder.featurize(corpus[n]);
    }
    Encoder::Pass pass;
    const Matrix e = encoder.forward(encoder.densify(rows), &pass);
    Matrix grad = Matrix::Zero(e.rows(), e.cols());
    double loss = 0.0;
    for (int k = 0; k < b; ++k) {
      const double hinge = cfg.margin - e.row(k).dot(e.row(b + k)) + e.row(k).dot(e.row(2 * b + k));
      if (hinge <= 0.0) continue;
      loss += hinge / b;
      grad.row(k) += (e.row(2 * b + k) - e.row(b + k)) / b;
      grad.row(b + k) -= e.row(k) / b;
      grad.row(2 * b + k) += e.row(k) / b;
    }
    if (!std::isfinite(loss)) throw DivergenceError("warm-up loss is not finite");
    encoder.backward(pass, grad);
    opt.step(encoder.net());
    if (step >= tail_from) {
      tail_loss += loss;
      ++tail_count;
    }
  }
  return tail_count ? tail_loss / tail_count : 0.0;
}

}  // namespace lgsid
