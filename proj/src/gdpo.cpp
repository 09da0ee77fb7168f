#include "lgsid/gdpo.hpp"

#include "lgsid/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lgsid {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void GdpoConfig::validate() const {
  if (!(beta > 0.0)) throw ValidationError("beta", "must be > 0");
  if (!(lambda >= 0.0)) throw ValidationError("lambda", "must be >= 0");
  if (s_th && !(*s_th >= 1.0)) throw ValidationError("s_th", "must be >= 1");
  if (!(s_th_percentile > 0.0 && s_th_percentile <= 100.0))
    throw ValidationError("s_th_percentile", "must lie in (0, 100]");
  if (batch < 2) throw ValidationError("batch", "must be >= 2");
  if (steps < 0 || epochs < 1) throw ValidationError("steps", "steps >= 0 and epochs >= 1");
  if (dc_ratio < 0.0 || gc_ratio < 0.0 || dc_ratio + gc_ratio <= 0.0)
    throw ValidationError("dc_ratio", "ratios must be >= 0 with a positive sum");
}

std::vector<kernels::CooccurrenceCount> cooccurrence_scores(
    std::span<const ClickHistory> histories) {
  std::vector<std::vector<ItemId>> baskets;
  baskets.reserve(histories.size());
  for (const ClickHistory& h : histories) baskets.push_back(h.item_ids);
  return kernels::cooccurrence_counts(baskets);
}

double cooccurrence_threshold(std::span<const kernels::CooccurrenceCount> scores,
                              double percentile) {
  std::vector<int> v;
  v.reserve(scores.size());
  for (const auto& s : scores)
    if (s.count > 0) v.push_back(s.count);
  if (v.empty()) return 1.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * v.size()));
  return std::max(1.0, static_cast<double>(v[std::clamp<std::size_t>(rank, 1, v.size()) - 1]));
}

std::vector<CooccurrencePair> mine_cooccurrence_pairs(std::span<const ClickHistory> histories,
                                                      double s_th) {
  std::vector<CooccurrencePair> out;
  for (const auto& c : cooccurrence_scores(histories)) {
    if (static_cast<double>(c.count) <= s_th) continue;
    out.push_back({c.a, c.b, c.count});
    out.push_back({c.b, c.a, c.count});
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.a != y.a ? x.a < y.a : x.b < y.b;
  });
  return out;
}

PreferencePair complete_dc_pair(const CooccurrencePair& pair, const Corpus& corpus, Rng& rng) {
  const Item& anchor = corpus.at(pair.a);
  const PreferencePair out_of_city = geo_constrained_pair(corpus, anchor, rng);
  return {pair.a, pair.b, out_of_city.rejected, PairSource::domain_collaborative};
}

MixedBatch build_mixed_batch(const GdpoConfig& cfg, const Corpus& corpus,
                             std::span<const CooccurrencePair> dc_pool, Rng& rng) {
  MixedBatch out;
  int n_dc = 0;
  if (cfg.variant.use_mixed_pairs)
    n_dc = static_cast<int>(std::lround(cfg.batch * cfg.dc_ratio / (cfg.dc_ratio + cfg.gc_ratio)));
  if (n_dc > 0 && dc_pool.empty()) {
    out.dc_fallback = true;
    n_dc = 0;
  }
  out.pairs.reserve(cfg.batch);
  if (n_dc > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, dc_pool.size() - 1);
    for (int k = 0; k < n_dc; ++k) out.pairs.push_back(complete_dc_pair(dc_pool[pick(rng)], corpus, rng));
  }
  std::uniform_int_distribution<std::size_t> pick_item(0, corpus.size() - 1);
  for (int k = n_dc; k < cfg.batch; ++k)
    out.pairs.push_back(geo_constrained_pair(corpus, corpus[pick_item(rng)], rng));
  out.n_dc = n_dc;
  out.n_gc = cfg.batch - n_dc;
  return out;
}

double alignment_loss(const FrozenReward& reward, const Matrix& policy_plus,
                      const Matrix& policy_minus, const Matrix& reference_plus,
                      const Matrix& reference_minus, double beta, Matrix* grad_plus,
                      Matrix* grad_minus) {
  const Eigen::Index b = policy_plus.rows();
  if (b == 0 || policy_minus.rows() != b || reference_plus.rows() != b ||
      reference_minus.rows() != b)
    throw ValidationError("batch", "plus/minus embedding batches must be equal and non-empty");
  const Vector delta = reward.score(policy_plus) - reward.score(policy_minus) -
                       reward.score(reference_plus) + reward.score(reference_minus);
  double loss = 0.0;
  Vector d_delta(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    loss += softplus(-beta * delta(i)) / static_cast<double>(b);
    d_delta(i) = -beta * sigmoid(-beta * delta(i)) / static_cast<double>(b);
  }
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "alignment loss is not finite; batch deltas:";
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(b, 8); ++i) msg << ' ' << delta(i);
    throw DivergenceError(msg.str());
  }
  if (grad_plus) *grad_plus = reward.input_gradient(policy_plus, d_delta);
  if (grad_minus) *grad_minus = reward.input_gradient(policy_minus, -d_delta);
  return loss;
}

double similarity_loss(const Matrix& policy, const Matrix& reference, Matrix* grad) {
  const Eigen::Index b = policy.rows();
  if (b < 2) throw ValidationError("batch", "similarity loss needs at least two items");
  if (reference.rows() != b || reference.cols() != policy.cols())
    throw ValidationError("reference", "shape must match the policy batch");
  const double inv_b = 1.0 / static_cast<double>(b);
  const double inv_others = 1.0 / static_cast<double>(b - 1);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    double push = 0.0;
    for (Eigen::Index j = 0; j < b; ++j)
      if (j != i) push += (policy.row(i) - reference.row(j)).squaredNorm();
    loss += ((policy.row(i) - reference.row(i)).squaredNorm() - inv_others * push) * inv_b;
  }
  if (grad) {
    const RowVector ref_sum = reference.colwise().sum();
    grad->resize(b, policy.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
      // d/dp_i: 2(p_i - r_i) - 2/(B-1) * sum_{j != i} (p_i - r_j)
      grad->row(i) = inv_b * (2.0 * (policy.row(i) - reference.row(i)) - 2.0 * policy.row(i) +
                              2.0 * inv_others * (ref_sum - reference.row(i)));
    }
  }
  return loss;
}

std::pair<PromptFeatures, PromptFeatures> pair_prompts(const FeaturizerConfig& feat,
                                                       const Corpus& corpus,
                                                       const PreferencePair& pair) {
  const Item& anchor = corpus.at(pair.anchor);
  return {featurize(feat, anchor, &corpus.at(pair.preferred)),
          featurize(feat, anchor, &corpus.at(pair.rejected))};
}

StepLosses gdpo_objective(Encoder& policy, const ReferenceEncoder& reference,
                          const FrozenReward& reward, const Corpus& corpus,
                          std::span<const PreferencePair> pairs, double beta, double lambda,
                          bool accumulate) {
  const auto b = static_cast<Eigen::Index>(pairs.size());
  if (b < 2) throw ValidationError("batch", "need at least two pairs");
  std::vector<PromptFeatures> rows(static_cast<std::size_t>(3 * b));
  for (Eigen::Index k = 0; k < b; ++k) {
    auto [plus, minus] = pair_prompts(policy.featurizer(), corpus, pairs[k]);
    rows[k] = std::move(plus);
    rows[b + k] = std::move(minus);
    rows[2 * b + k] = policy.featurize(corpus.at(pairs[k].anchor));
  }
  const Matrix x = policy.densify(rows);
  Encoder::Pass pass;
  const Matrix pol = policy.forward(x, &pass);
  const Matrix ref = reference.forward(x);

  StepLosses out;
  Matrix g_plus, g_minus, g_sim;
  out.align = alignment_loss(reward, pol.topRows(b), pol.middleRows(b, b), ref.topRows(b),
                             ref.middleRows(b, b), beta, accumulate ? &g_plus : nullptr,
                             accumulate ? &g_minus : nullptr);
  out.sim = similarity_loss(pol.bottomRows(b), ref.bottomRows(b), accumulate ? &g_sim : nullptr);
  out.total = out.align + lambda * out.sim;
  if (accumulate) {
    Matrix grad(pol.rows(), pol.cols());
    grad.topRows(b) = g_plus;
    grad.middleRows(b, b) = g_minus;
    grad.bottomRows(b) = lambda * g_sim;
    policy.backward(pass, grad);
  }
  return out;
}

void GdpoReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "step,l_align,l_sim,l_total,lr\n";
  out.precision(10);
  for (const GdpoLogRow& r : rows)
    out << r.step << ',' << r.l_align << ',' << r.l_sim << ',' << r.l_total << ',' << r.lr << '\n';
}

GdpoReport train_gdpo(const GdpoConfig& cfg, Encoder& policy, const ReferenceEncoder& reference,
                      const FrozenReward& reward, const Corpus& corpus,
                      std::span<const ClickHistory> histories, Rng& rng) {
  cfg.validate();
  if (reward.input_dim() != policy.dim())
    throw ValidationError("reward", "input dim differs from encoder output dim");
  GdpoReport report;
  std::vector<CooccurrencePair> pool;
  if (cfg.variant.use_mixed_pairs && !histories.empty()) {
    const auto scores = cooccurrence_scores(histories);
    report.s_th = cfg.s_th ? *cfg.s_th : cooccurrence_threshold(scores, cfg.s_th_percentile);
    for (const auto& c : scores) {
      if (static_cast<double>(c.count) <= report.s_th) continue;
      pool.push_back({c.a, c.b, c.count});
      pool.push_back({c.b, c.a, c.count});
    }
  }
  report.dc_pool_size = pool.size();

  const double lambda = cfg.effective_lambda();
  AdamW opt(cfg.optimizer);
  const std::int64_t total = static_cast<std::int64_t>(cfg.steps) * cfg.epochs;
  for (std::int64_t step = 0; step < total; ++step) {
    const MixedBatch batch = build_mixed_batch(cfg, corpus, pool, rng);
    report.dc_fallback = report.dc_fallback || batch.dc_fallback;
    const double lr = opt.current_lr();
    const StepLosses l = gdpo_objective(policy, reference, reward, corpus, batch.pairs, cfg.beta,
                                        lambda, true);
    if (!std::isfinite(l.total) || l.total > cfg.divergence_limit)
      throw DivergenceError("G-DPO diverged at step " + std::to_string(step) +
                            ": total loss " + std::to_string(l.total));
    opt.step(policy.net());
    report.rows.push_back({step, l.align, l.sim, l.total, lr});
  }
  return report;
}

nlohmann::json variant_to_json(const GdpoVariant& v) {
  return {{"use_listwise_rm", v.use_listwise_rm},
          {"use_density_sampling", v.use_density_sampling},
          {"use_mixed_pairs", v.use_mixed_pairs},
          {"use_sim_reg", v.use_sim_reg}};
}

GdpoVariant variant_from_json(const nlohmann::json& j) {
  GdpoVariant v;
  v.use_listwise_rm = j.value("use_listwise_rm", v.use_listwise_rm);
  v.use_density_sampling = j.value("use_density_sampling", v.use_density_sampling);
  v.use_mixed_pairs = j.value("use_mixed_pairs", v.use_mixed_pairs);
  v.use_sim_reg = j.value("use_sim_reg", v.use_sim_reg);
  return v;
}

}  // namespace lgsid
