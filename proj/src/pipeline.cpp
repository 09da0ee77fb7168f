#include "lgsid/pipeline.hpp"

#include "lgsid/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

namespace lgsid {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ValidationError(section, "must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ValidationError(section.empty() ? key : section + "." + key, "unknown config key");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(section + "." + key, e.what());
  }
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) || c == '.' ? static_cast<char>(std::tolower(c)) : '_';
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

const std::vector<RewardKind> kRewardKinds = {RewardKind::listwise_density,
                                              RewardKind::listwise_uniform, RewardKind::pointwise};

}  // namespace

// ---------------------------------------------------------------- config

void to_json(json& j, const PipelineConfig& c) {
  const auto& k = c.corpus;
  const auto& w = c.encoder.warmup;
  const auto& r = c.reward;
  const auto& g = c.align.gdpo;
  const auto& h = c.tokenize.hgit;
  j = json{
      {"seed", c.seed},
      {"out_dir", c.out_dir.string()},
      {"corpus",
       {{"n_provinces", k.n_provinces},
        {"cities_per_province", k.cities_per_province},
        {"towns_per_city", k.towns_per_city},
        {"items_per_town", k.items_per_town},
        {"n_cat1", k.n_cat1},
        {"cat2_per_cat1", k.cat2_per_cat1},
        {"n_brands", k.n_brands},
        {"n_users", k.n_users},
        {"clicks_per_user", k.clicks_per_user},
        {"click_radius_km", k.click_radius_km},
        {"city_sigma_km", k.city_sigma_km},
        {"town_sigma_km", k.town_sigma_km},
        {"item_sigma_km", k.item_sigma_km},
        {"vocab_size", k.vocab_size},
        {"region_skew", k.region_skew},
        {"town_skew", k.town_skew},
        {"locality_word_prob", k.locality_word_prob},
        {"province_word_prob", k.province_word_prob},
        {"preferred_click_prob", k.preferred_click_prob}}},
      {"encoder",
       {{"hidden", c.encoder.net.hidden},
        {"dim", c.encoder.net.dim},
        {"content_buckets", c.encoder.content_buckets},
        {"warmup", {{"steps", w.steps}, {"batch", w.batch}, {"margin", w.margin}, {"lr", w.lr}}}}},
      {"reward",
       {{"objective", to_string(r.train.objective)},
        {"negatives", r.negatives},
        {"heldout_fraction", r.heldout_fraction},
        {"max_targets", r.max_targets},
        {"epochs", r.train.epochs},
        {"batch", r.train.batch},
        {"log_every", r.train.log_every},
        {"lr", r.train.optimizer.lr},
        {"weight_decay", r.train.optimizer.weight_decay}}},
      {"gdpo",
       {{"beta", g.beta},
        {"lambda", g.lambda},
        {"s_th", g.s_th ? json(*g.s_th) : json(nullptr)},
        {"s_th_percentile", g.s_th_percentile},
        {"batch", g.batch},
        {"steps", g.steps},
        {"epochs", g.epochs},
        {"dc_ratio", g.dc_ratio},
        {"gc_ratio", g.gc_ratio},
        {"lr", g.optimizer.lr},
        {"decay_interval", g.optimizer.decay_interval},
        {"weight_decay", g.optimizer.weight_decay},
        {"variant", variant_to_json(g.variant)},
        {"variants", c.align.variants},
        {"lambda_sweep", c.align.lambda_sweep}}},
      {"hgit",
       {{"levels", h.levels},
        {"codebook_sizes", h.codebook_sizes},
        {"lambda_reg", h.lambda_reg},
        {"tau", h.tau},
        {"epochs", h.epochs},
        {"batch", h.batch},
        {"lr", h.optimizer.lr},
        {"kmeans_batch", h.kmeans_batch},
        {"kmeans_iters", h.kmeans_iters},
        {"weights",
         {{"admin", h.weights.admin}, {"geo", h.weights.geo}, {"cat", h.weights.cat},
          {"brand", h.weights.brand}}},
        {"aligned_variant", c.tokenize.aligned_variant}}},
      {"eval",
       {{"queries", c.eval.queries},
        {"ks", c.eval.ks},
        {"seeds", c.eval.seeds},
        {"percentiles", c.eval.percentiles}}}};
}

void from_json(const json& j, PipelineConfig& c) {
  check_keys(j, {"seed", "out_dir", "corpus", "encoder", "reward", "gdpo", "hgit", "eval"}, "");
  read(j, "seed", c.seed, "config");
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();

  if (const auto it = j.find("corpus"); it != j.end()) {
    const json& s = *it;
    check_keys(s, {"n_provinces", "cities_per_province", "towns_per_city", "items_per_town", "n_cat1",
                   "cat2_per_cat1", "n_brands", "n_users", "clicks_per_user", "click_radius_km",
                   "city_sigma_km", "town_sigma_km", "item_sigma_km", "vocab_size", "region_skew",
                   "town_skew", "locality_word_prob", "province_word_prob", "preferred_click_prob"},
               "corpus");
    auto& k = c.corpus;
    read(s, "n_provinces", k.n_provinces, "corpus");
    read(s, "cities_per_province", k.cities_per_province, "corpus");
    read(s, "towns_per_city", k.towns_per_city, "corpus");
    read(s, "items_per_town", k.items_per_town, "corpus");
    read(s, "n_cat1", k.n_cat1, "corpus");
    read(s, "cat2_per_cat1", k.cat2_per_cat1, "corpus");
    read(s, "n_brands", k.n_brands, "corpus");
    read(s, "n_users", k.n_users, "corpus");
    read(s, "clicks_per_user", k.clicks_per_user, "corpus");
    read(s, "click_radius_km", k.click_radius_km, "corpus");
    read(s, "city_sigma_km", k.city_sigma_km, "corpus");
    read(s, "town_sigma_km", k.town_sigma_km, "corpus");
    read(s, "item_sigma_km", k.item_sigma_km, "corpus");
    read(s, "vocab_size", k.vocab_size, "corpus");
    read(s, "region_skew", k.region_skew, "corpus");
    read(s, "town_skew", k.town_skew, "corpus");
    read(s, "locality_word_prob", k.locality_word_prob, "corpus");
    read(s, "province_word_prob", k.province_word_prob, "corpus");
    read(s, "preferred_click_prob", k.preferred_click_prob, "corpus");
  }
  if (const auto it = j.find("encoder"); it != j.end()) {
    const json& s = *it;
    check_keys(s, {"hidden", "dim", "content_buckets", "warmup"}, "encoder");
    read(s, "hidden", c.encoder.net.hidden, "encoder");
    read(s, "dim", c.encoder.net.dim, "encoder");
    read(s, "content_buckets", c.encoder.content_buckets, "encoder");
    if (const auto w = s.find("warmup"); w != s.end()) {
      check_keys(*w, {"steps", "batch", "margin", "lr"}, "encoder.warmup");
      read(*w, "steps", c.encoder.warmup.steps, "encoder.warmup");
      read(*w, "batch", c.encoder.warmup.batch, "encoder.warmup");
      read(*w, "margin", c.encoder.warmup.margin, "encoder.warmup");
      read(*w, "lr", c.encoder.warmup.lr, "encoder.warmup");
    }
  }
  if (const auto it = j.find("reward"); it != j.end()) {
    const json& s = *it;
    check_keys(s, {"objective", "negatives", "heldout_fraction", "max_targets", "epochs", "batch", "log_every", "lr",
                   "weight_decay"},
               "reward");
    auto& r = c.reward;
    std::string objective = to_string(r.train.objective);
    read(s, "objective", objective, "reward");
    r.train.objective = parse_reward_objective(objective);
    read(s, "negatives", r.negatives, "reward");
    read(s, "heldout_fraction", r.heldout_fraction, "reward");
    read(s, "max_targets", r.max_targets, "reward");
    read(s, "epochs", r.train.epochs, "reward");
    read(s, "batch", r.train.batch, "reward");
    read(s, "log_every", r.train.log_every, "reward");
    read(s, "lr", r.train.optimizer.lr, "reward");
    read(s, "weight_decay", r.train.optimizer.weight_decay, "reward");
  }
  if (const auto it = j.find("gdpo"); it != j.end()) {
    const json& s = *it;
    check_keys(s, {"beta", "lambda", "s_th", "s_th_percentile", "batch", "steps", "epochs", "dc_ratio",
                   "gc_ratio", "lr", "decay_interval", "weight_decay", "variant", "variants",
                   "lambda_sweep"},
               "gdpo");
    auto& g = c.align.gdpo;
    read(s, "beta", g.beta, "gdpo");
    read(s, "lambda", g.lambda, "gdpo");
    if (const auto t = s.find("s_th"); t != s.end() && !t->is_null()) g.s_th = t->get<double>();
    read(s, "s_th_percentile", g.s_th_percentile, "gdpo");
    read(s, "batch", g.batch, "gdpo");
    read(s, "steps", g.steps, "gdpo");
    read(s, "epochs", g.epochs, "gdpo");
    read(s, "dc_ratio", g.dc_ratio, "gdpo");
    read(s, "gc_ratio", g.gc_ratio, "gdpo");
    read(s, "lr", g.optimizer.lr, "gdpo");
    read(s, "decay_interval", g.optimizer.decay_interval, "gdpo");
    read(s, "weight_decay", g.optimizer.weight_decay, "gdpo");
    if (const auto v = s.find("variant"); v != s.end()) {
      check_keys(*v, {"use_listwise_rm", "use_density_sampling", "use_mixed_pairs", "use_sim_reg"},
                 "gdpo.variant");
      g.variant = variant_from_json(*v);
    }
    read(s, "variants", c.align.variants, "gdpo");
    read(s, "lambda_sweep", c.align.lambda_sweep, "gdpo");
  }
  if (const auto it = j.find("hgit"); it != j.end()) {
    const json& s = *it;
    check_keys(s, {"levels", "codebook_sizes", "lambda_reg", "tau", "epochs", "batch", "lr",
                   "kmeans_batch", "kmeans_iters", "weights", "aligned_variant"},
               "hgit");
    auto& h = c.tokenize.hgit;
    read(s, "levels", h.levels, "hgit");
    read(s, "codebook_sizes", h.codebook_sizes, "hgit");
    read(s, "lambda_reg", h.lambda_reg, "hgit");
    read(s, "tau", h.tau, "hgit");
    read(s, "epochs", h.epochs, "hgit");
    read(s, "batch", h.batch, "hgit");
    read(s, "lr", h.optimizer.lr, "hgit");
    read(s, "kmeans_batch", h.kmeans_batch, "hgit");
    read(s, "kmeans_iters", h.kmeans_iters, "hgit");
    read(s, "aligned_variant", c.tokenize.aligned_variant, "hgit");
    if (const auto w = s.find("weights"); w != s.end()) {
      check_keys(*w, {"admin", "geo", "cat", "brand"}, "hgit.weights");
      read(*w, "admin", h.weights.admin, "hgit.weights");
      read(*w, "geo", h.weights.geo, "hgit.weights");
      read(*w, "cat", h.weights.cat, "hgit.weights");
      read(*w, "brand", h.weights.brand, "hgit.weights");
    }
  }
  if (const auto it = j.find("eval"); it != j.end()) {
    const json& s = *it;
    check_keys(s, {"queries", "ks", "seeds", "percentiles"}, "eval");
    read(s, "queries", c.eval.queries, "eval");
    read(s, "ks", c.eval.ks, "eval");
    read(s, "seeds", c.eval.seeds, "eval");
    read(s, "percentiles", c.eval.percentiles, "eval");
  }
}

void PipelineConfig::validate() const {
  corpus.validate();
  if (encoder.net.dim < 2 || encoder.net.hidden < 1)
    throw ValidationError("encoder", "dim must be >= 2 and hidden >= 1");
  if (encoder.content_buckets < 1) throw ValidationError("encoder.content_buckets", "must be >= 1");
  if (encoder.warmup.steps < 0 || encoder.warmup.batch < 2)
    throw ValidationError("encoder.warmup", "steps >= 0 and batch >= 2 required");
  if (reward.negatives < 1) throw ValidationError("reward.negatives", "must be >= 1");
  if (!(reward.heldout_fraction > 0.0 && reward.heldout_fraction < 1.0))
    throw ValidationError("reward.heldout_fraction", "must be in (0, 1)");
  if (reward.train.epochs < 1 || reward.train.batch < 1)
    throw ValidationError("reward", "epochs and batch must be >= 1");
  align.gdpo.validate();
  for (const auto& v : align.variants) {
    if (v == "Origin" || std::find(kAblationRows.begin(), kAblationRows.end(), v) == kAblationRows.end())
      throw ValidationError("gdpo.variants", "unknown alignment variant " + v);
  }
  for (double l : align.lambda_sweep) {
    if (!(l >= 0.0)) throw ValidationError("gdpo.lambda_sweep", "lambda must be >= 0");
  }
  tokenize.hgit.validate();
  if (std::find(align.variants.begin(), align.variants.end(), tokenize.aligned_variant) ==
      align.variants.end())
    throw ValidationError("hgit.aligned_variant", "must be one of gdpo.variants");
  if (eval.queries < 1) throw ValidationError("eval.queries", "must be >= 1");
  if (eval.ks.empty()) throw ValidationError("eval.ks", "empty");
  for (int k : eval.ks) {
    if (k < 1) throw ValidationError("eval.ks", "every K must be >= 1");
  }
  for (double p : eval.percentiles) {
    if (p < 0 || p > 100) throw ValidationError("eval.percentiles", "must be in [0, 100]");
  }
  if (out_dir.empty()) throw ValidationError("out_dir", "empty");
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(0, "config", e.what());
  }
  PipelineConfig c = j.get<PipelineConfig>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------- variants

std::string to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::listwise_density: return "listwise_density";
    case RewardKind::listwise_uniform: return "listwise_uniform";
    case RewardKind::pointwise: return "pointwise";
  }
  return "unknown";
}

AlignmentRun variant_run(const std::string& name, const GdpoConfig& base) {
  AlignmentRun run;
  run.name = name;
  auto& v = run.variant;
  if (name == "DPO-PR") {
    v = {false, false, false, false};
  } else if (name == "DPO-LR") {
    v = {true, false, false, false};
  } else if (name == "DPO-LRD") {
    v = {true, true, false, false};
  } else if (name == "DPO-LRDM") {
    v = {true, true, true, false};
  } else if (name == "DPO-LRDMS") {
    v = {true, true, true, true};
    run.lambda = 1.0;
  } else if (name == "G-DPO") {
    v = base.variant;
    run.lambda = v.use_sim_reg ? base.lambda : 0.0;
  } else {
    throw ValidationError("variant", "unknown alignment variant " + name);
  }
  if (!v.use_listwise_rm)
    run.reward = RewardKind::pointwise;
  else if (!v.use_density_sampling)
    run.reward = RewardKind::listwise_uniform;
  else
    run.reward = RewardKind::listwise_density;
  return run;
}

std::string sweep_name(double lambda) { return "lambda=" + fixed(lambda, 2); }

std::vector<AlignmentRun> alignment_runs(const PipelineConfig& cfg) {
  std::vector<AlignmentRun> runs;
  for (const auto& name : cfg.align.variants) runs.push_back(variant_run(name, cfg.align.gdpo));
  for (double l : cfg.align.lambda_sweep) {
    AlignmentRun r;
    r.name = sweep_name(l);
    r.lambda = l;
    r.variant = {true, true, true, l > 0.0};
    runs.push_back(r);
  }
  return runs;
}

std::filesystem::path Artifacts::policy(const std::string& run) const {
  return root_ / "policies" / (slug(run) + ".net");
}

std::filesystem::path Artifacts::align_log(const std::string& run) const {
  return root_ / "policies" / (slug(run) + ".csv");
}

void require_artifact(const std::filesystem::path& path, const std::string& what,
                      const std::string& command) {
  if (!std::filesystem::exists(path))
    throw Error(what + " not found; run " + command + " (missing " + path.string() + ")");
}

// ---------------------------------------------------------------- helpers

Corpus load_corpus_artifact(const Artifacts& a) {
  require_artifact(a.corpus(), "corpus", "gen");
  return Corpus(load_corpus(a.corpus()));
}

Encoder load_reference_artifact(const Artifacts& a) {
  require_artifact(a.reference_net(), "reference encoder", "train-reward");
  require_artifact(a.reference_config(), "reference encoder config", "train-reward");
  return Encoder::load(a.reference_net(), a.reference_config());
}

std::vector<ListwiseSample> build_reward_samples(const Corpus& corpus,
                                                 std::span<const std::size_t> targets,
                                                 RewardKind kind, int negatives,
                                                 const FeaturizerConfig& feat, Rng& rng) {
  const GeoIndex index(corpus);
  std::vector<ListwiseSample> out;
  out.reserve(targets.size());
  for (std::size_t t : targets) {
    const Item& target = corpus[t];
    std::vector<ItemId> neg;
    switch (kind) {
      case RewardKind::listwise_density:
        neg = density_aware_negatives(index, corpus, target, negatives, rng);
        break;
      case RewardKind::listwise_uniform:
        neg = uniform_negatives(corpus, target, negatives, rng);
        break;
      case RewardKind::pointwise:
        neg = uniform_negatives(corpus, target, 1, rng);
        break;
    }
    out.push_back(build_listwise_sample(corpus, target, neg, feat));
  }
  return out;
}

Encoder load_policy_artifact(const Artifacts& a, const Encoder& reference, const std::string& run) {
  require_artifact(a.policy(run), "policy for " + run, "align");
  return Encoder(reference.featurizer(), reference.config(), DenseNet::load(a.policy(run)));
}

namespace {

std::vector<MetricRecord> sid_records(const std::string& tag, const Corpus& corpus,
                                      const std::vector<SemanticID>& sids,
                                      std::span<const double> percentiles, std::uint64_t seed) {
  std::vector<MetricRecord> out;
  const std::string variant = "sid-" + tag;
  const auto n = corpus.size();
  std::vector<std::int64_t> province(n), city(n), town(n), tokens(n);
  for (std::size_t i = 0; i < n; ++i) {
    province[i] = corpus[i].province_id;
    city[i] = corpus[i].city_id;
    town[i] = corpus[i].town_id;
  }
  const TokenStats stats = token_stats(sids, percentiles);
  for (std::size_t l = 0; l < stats.populations.size(); ++l) {
    for (std::size_t i = 0; i < n; ++i) tokens[i] = sids[i].tokens[l];
    const int level = static_cast<int>(l) + 1;
    out.push_back({variant, "nmi_province", level, nmi(tokens, province), seed});
    out.push_back({variant, "nmi_city", level, nmi(tokens, city), seed});
    out.push_back({variant, "nmi_town", level, nmi(tokens, town), seed});
    out.push_back({variant, "tokens_used", level, static_cast<double>(stats.populations[l].size()), seed});
    for (std::size_t p = 0; p < percentiles.size(); ++p) {
      out.push_back({variant, "population_p" + fixed(percentiles[p], 0), level, stats.quantiles[l][p],
                     seed});
    }
  }
  out.push_back({variant, "collisions", 0, static_cast<double>(stats.collisions), seed});
  return out;
}

}  // namespace

// ---------------------------------------------------------------- commands

std::string cmd_gen(const PipelineConfig& cfg) {
  const Artifacts a(cfg.out_dir);
  std::filesystem::create_directories(a.root());
  CorpusConfig cc = cfg.corpus;
  cc.seed = derive_seed(cfg.seed, "corpus");
  const GeneratedCorpus g = generate_corpus(cc);
  const Corpus corpus(g.items);
  validate_histories(g.histories, corpus);
  save_corpus(g.items, a.corpus());
  save_histories(g.histories, a.histories());
  const auto& c = corpus.cardinalities();
  return "gen: " + std::to_string(g.items.size()) + " items in " + std::to_string(c.provinces) +
         " provinces / " + std::to_string(c.cities) + " cities / " + std::to_string(c.towns) +
         " towns, " + std::to_string(g.histories.size()) + " histories -> " + a.root().string();
}

std::string cmd_train_reward(const PipelineConfig& cfg) {
  const Artifacts a(cfg.out_dir);
  const Corpus corpus = load_corpus_artifact(a);
  const FeaturizerConfig feat = FeaturizerConfig::for_corpus(
      corpus.cardinalities(), cfg.encoder.content_buckets, derive_seed(cfg.seed, "featurizer"));
  Rng init(derive_seed(cfg.seed, "encoder"));
  Encoder encoder(feat, cfg.encoder.net, init);
  Rng warm(derive_seed(cfg.seed, "warmup"));
  const double warm_loss = warmup_contrastive(encoder, corpus, cfg.encoder.warmup, warm);
  encoder.net().freeze();
  encoder.save(a.reference_net(), a.reference_config());

  std::vector<std::size_t> targets(corpus.size());
  std::iota(targets.begin(), targets.end(), std::size_t{0});
  Rng split(derive_seed(cfg.seed, "reward.split"));
  std::shuffle(targets.begin(), targets.end(), split);
  if (cfg.reward.max_targets > 0 && targets.size() > static_cast<std::size_t>(cfg.reward.max_targets))
    targets.resize(static_cast<std::size_t>(cfg.reward.max_targets));
  const auto n_held = static_cast<std::size_t>(
      std::ceil(cfg.reward.heldout_fraction * static_cast<double>(targets.size())));
  const std::span<const std::size_t> held(targets.data(), n_held);
  const std::span<const std::size_t> train(targets.data() + n_held, targets.size() - n_held);

  json summary;
  summary["warmup_loss"] = warm_loss;
  summary["objective"] = to_string(cfg.reward.train.objective);
  std::string line = "train-reward: warm-up loss " + fixed(warm_loss, 4);
  for (RewardKind kind : kRewardKinds) {
    const std::string name = to_string(kind);
    Rng samples(derive_seed(cfg.seed, "reward.samples." + name));
    const auto tr = build_reward_samples(corpus, train, kind, cfg.reward.negatives, feat, samples);
    const auto ho = build_reward_samples(corpus, held, kind, cfg.reward.negatives, feat, samples);
    Rng model_init(derive_seed(cfg.seed, "reward.init"));
    RewardModel model(encoder.dim(), model_init);
    Rng train_rng(derive_seed(cfg.seed, "reward.train"));
    const RewardReport report = train_reward(model, tr, ho, encoder, cfg.reward.train, train_rng);
    report.write_csv(a.reward_log(kind));
    freeze(std::move(model)).save(a.reward(kind));
    summary[name] = {{"heldout_accuracy", report.final_accuracy},
                     {"final_epoch_loss", report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back()},
                     {"train_samples", tr.size()},
                     {"heldout_samples", ho.size()}};
    line += ", " + name + " held-out ordering " + fixed(report.final_accuracy, 4);
  }
  write_text(a.reward_summary(), summary.dump(2) + "\n");
  return line;
}

std::string cmd_align(const PipelineConfig& cfg) {
  const Artifacts a(cfg.out_dir);
  const Corpus corpus = load_corpus_artifact(a);
  require_artifact(a.histories(), "click histories", "gen");
  const auto histories = load_histories(a.histories());
  const auto runs = alignment_runs(cfg);
  for (const auto& run : runs) require_artifact(a.reward(run.reward), "reward checkpoint", "train-reward");
  const Encoder base = load_reference_artifact(a);
  const ReferenceEncoder reference = snapshot_reference(base);
  std::filesystem::create_directories(a.root() / "policies");

  std::string line = "align:";
  for (const auto& run : runs) {
    const FrozenReward reward = FrozenReward::load(a.reward(run.reward));
    GdpoConfig g = cfg.align.gdpo;
    g.variant = run.variant;
    g.lambda = run.lambda;
    Encoder policy(base.featurizer(), base.config(), DenseNet::load(a.reference_net()));
    Rng rng(derive_seed(cfg.seed, "align"));
    const GdpoReport report = train_gdpo(g, policy, reference, reward, corpus, histories, rng);
    report.write_csv(a.align_log(run.name));
    policy.net().save(a.policy(run.name));
    const auto& last = report.rows.back();
    line += " " + run.name + " (L=" + fixed(last.l_total, 4) + ")";
  }
  return line;
}

std::string cmd_tokenize(const PipelineConfig& cfg) {
  const Artifacts a(cfg.out_dir);
  const Corpus corpus = load_corpus_artifact(a);
  const Encoder reference = load_reference_artifact(a);
  const Encoder aligned = load_policy_artifact(a, reference, cfg.tokenize.aligned_variant);
  const HgitConfig& h = cfg.tokenize.hgit;

  const Matrix features = composite_features(corpus, h.weights);
  const KMeansResult km = fit_layer1(features, h.codebook_sizes.front(), h.kmeans_batch,
                                     h.kmeans_iters, derive_seed(cfg.seed, "hgit.level1"));
  write_text(a.level1(), json{{"k", h.codebook_sizes.front()},
                              {"inertia", km.inertia},
                              {"assignments", km.assignments}}
                                 .dump() +
                             "\n");

  std::vector<ItemId> ids(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) ids[i] = corpus[i].item_id;
  const json extra = {{"weights",
                       {{"admin", h.weights.admin}, {"geo", h.weights.geo}, {"cat", h.weights.cat},
                        {"brand", h.weights.brand}}}};
  std::string line = "tokenize: level-1 inertia " + fixed(km.inertia, 4);
  for (const auto& [tag, encoder] : {std::pair<std::string, const Encoder*>{"unaligned", &reference},
                                     std::pair<std::string, const Encoder*>{"aligned", &aligned}}) {
    const Matrix x = encoder->encode_items(corpus);
    const Matrix mu = lift_layer1_centers(km.assignments, h.codebook_sizes.front(), x);
    HgitConfig hc = h;
    hc.seed = derive_seed(cfg.seed, "hgit");
    HgitReport report;
    const auto tok = HierarchicalTokenizer::train(x, km.assignments, mu, hc, &report);
    report.write_csv(a.hgit_log(tag));
    tok.save(a.codebooks(tag), extra);
    const auto sids = tok.tokenize_all(x, km.assignments);
    save_sids(ids, sids, a.sids(tag));
    line += ", " + tag + " recon " + fixed(tok.recon_loss(x, km.assignments), 4);
  }
  return line;
}

std::string cmd_eval(const PipelineConfig& cfg) {
  const Artifacts a(cfg.out_dir);
  const Corpus corpus = load_corpus_artifact(a);
  const Encoder reference = load_reference_artifact(a);
  const auto runs = alignment_runs(cfg);
  for (const auto& run : runs) require_artifact(a.policy(run.name), "policy for " + run.name, "align");
  for (const char* tag : {"unaligned", "aligned"}) require_artifact(a.sids(tag), "SID file", "tokenize");

  const auto queries = sample_queries(corpus.size(), static_cast<std::size_t>(cfg.eval.queries),
                                      derive_seed(cfg.seed, "eval.queries"));
  const Matrix ref = reference.encode_items(corpus);
  std::vector<MetricRecord> records;
  const auto add = [&](const std::string& name, const Matrix& emb) {
    const auto r = evaluate_retrieval(corpus, emb, ref, queries, cfg.eval.ks);
    const auto rec = retrieval_records(name, r, cfg.seed);
    records.insert(records.end(), rec.begin(), rec.end());
  };
  add("Origin", ref);
  for (const auto& run : runs) add(run.name, load_policy_artifact(a, reference, run.name).encode_items(corpus));

  for (const char* tag : {"unaligned", "aligned"}) {
    const auto loaded = load_sids(a.sids(tag));
    if (loaded.size() != corpus.size()) throw ValidationError("sids", "SID count differs from corpus");
    std::vector<SemanticID> sids(corpus.size());
    for (const auto& [id, sid] : loaded) sids[corpus.index_of(id)] = sid;
    const auto rec = sid_records(tag, corpus, sids, cfg.eval.percentiles, cfg.seed);
    records.insert(records.end(), rec.begin(), rec.end());
  }
  write_metrics_csv(records, a.metrics());
  return "eval: " + std::to_string(records.size()) + " metrics over " + std::to_string(queries.size()) +
         " queries -> " + a.metrics().string();
}

std::string cmd_report(const PipelineConfig& cfg) {
  const Artifacts a(cfg.out_dir);
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(a.metrics())) files.push_back(a.metrics());
  if (std::filesystem::is_directory(a.root())) {
    for (const auto& e : std::filesystem::directory_iterator(a.root())) {
      const auto m = e.path() / "metrics.csv";
      if (e.is_directory() && e.path().filename().string().rfind("seed-", 0) == 0 &&
          std::filesystem::exists(m))
        files.push_back(m);
    }
  }
  if (files.empty()) require_artifact(a.metrics(), "metric file", "eval");
  std::sort(files.begin(), files.end());
  std::vector<MetricRecord> records;
  for (const auto& f : files) {
    auto r = read_metrics_csv(f);
    records.insert(records.end(), r.begin(), r.end());
  }
  const AblationTable table = ablation_report(records, kAblationRows, cfg.eval.ks);

  std::ostringstream md;
  md << "# Variant comparison\n\n" << table.markdown();
  if (!cfg.align.lambda_sweep.empty()) {
    std::vector<std::string> names{"Origin"};
    for (double l : cfg.align.lambda_sweep) names.push_back(sweep_name(l));
    md << "\n# Similarity weight sweep\n\n" << ablation_report(records, names, cfg.eval.ks).markdown();
  }
  std::map<std::tuple<std::string, std::string, int>, std::pair<double, int>> nmi_acc;
  for (const auto& r : records) {
    if (r.metric.rfind("nmi_", 0) != 0) continue;
    auto& s = nmi_acc[{r.variant, r.metric, r.k}];
    s.first += r.value;
    s.second += 1;
  }
  if (!nmi_acc.empty()) {
    md << "\n# SID agreement with administrative labels (NMI)\n\n"
       << "| SID | level | province | city | town |\n|---|---|---|---|---|\n";
    std::set<std::pair<std::string, int>> keys;
    for (const auto& [k, _] : nmi_acc) keys.insert({std::get<0>(k), std::get<2>(k)});
    for (const auto& [variant, level] : keys) {
      md << "| " << variant << " | " << level;
      for (const char* m : {"nmi_province", "nmi_city", "nmi_town"}) {
        const auto it = nmi_acc.find({variant, m, level});
        md << " | " << (it == nmi_acc.end() ? std::string("-") : fixed(it->second.first / it->second.second, 4));
      }
      md << " |\n";
    }
  }
  for (const auto& w : table.warnings) md << "\n> warning: " << w << '\n';
  for (const auto& w : table.warnings) std::cerr << "warning: " << w << '\n';
  write_text(a.report_markdown(), md.str());
  write_text(a.report_csv(), table.csv());
  return "report: " + std::to_string(files.size()) + " metric file(s) -> " + a.report_markdown().string();
}

void run_pipeline(const PipelineConfig& cfg, bool verbose) {
  for (auto* cmd : {&cmd_gen, &cmd_train_reward, &cmd_align, &cmd_tokenize, &cmd_eval, &cmd_report}) {
    const std::string line = cmd(cfg);
    if (verbose) std::cout << line << std::endl;
  }
}

}  // namespace lgsid
