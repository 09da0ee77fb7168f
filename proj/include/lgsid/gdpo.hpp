#pragma once

#include "lgsid/common.hpp"
#include "lgsid/corpus.hpp"
#include "lgsid/encoder.hpp"
#include "lgsid/kernels.hpp"
#include "lgsid/nn.hpp"
#include "lgsid/preference.hpp"
#include "lgsid/reward.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lgsid {

/// Ablation switchboard.
struct GdpoVariant {
  bool use_listwise_rm = true;        // K=15 list-wise reward model vs K=1 point-wise
  bool use_density_sampling = true;   // density-aware vs uniform negatives for the RM
  bool use_mixed_pairs = true;        // dc + gc pairs vs gc only
  bool use_sim_reg = true;            // lambda > 0 vs lambda = 0
  bool operator==(const GdpoVariant&) const = default;
};

struct GdpoConfig {
  static constexpr double kLargeScaleLambda = 155.0;
  static constexpr double kLargeScaleThreshold = 1200.0;
  static constexpr std::array<double, 3> kDefaultLambdaSweep = {1.0, 1.5, 1.8};

  double beta = 0.9;
  double lambda = 1.5;
  /// Co-occurrence threshold. Unset -> percentile of nonzero scores.
  std::optional<double> s_th;
  double s_th_percentile = 97.5;
  int batch = 64;
  int steps = 400;
  int epochs = 1;
  double dc_ratio = 1.0;
  double gc_ratio = 1.0;
  GdpoVariant variant;
  AdamWConfig optimizer{.lr = 1e-3};
  double divergence_limit = 1e3;  // upper bound only: the similarity term is negative

  double effective_lambda() const { return variant.use_sim_reg ? lambda : 0.0; }
  void validate() const;
};

/// Co-occurring ordered pair (anchor a, partner b) with score s(a, b).
struct CooccurrencePair {
  ItemId a = 0;
  ItemId b = 0;
  int score = 0;
  bool operator==(const CooccurrencePair&) const = default;
};

/// s(a, b) = number of histories containing both, for every co-occurring
/// unordered pair (a < b).
std::vector<kernels::CooccurrenceCount> cooccurrence_scores(std::span<const ClickHistory> histories);

/// Nearest-rank percentile of the nonzero scores.
double cooccurrence_threshold(std::span<const kernels::CooccurrenceCount> scores,
                              double percentile);

/// Ordered pairs (both orientations) with s > s_th, sorted by (a, b).
std::vector<CooccurrencePair> mine_cooccurrence_pairs(std::span<const ClickHistory> histories,
                                                      double s_th);

/// anchor = a, preferred = b, rejected = random item outside a's city.
PreferencePair complete_dc_pair(const CooccurrencePair& pair, const Corpus& corpus, Rng& rng);

struct MixedBatch {
  std::vector<PreferencePair> pairs;
  int n_dc = 0;
  int n_gc = 0;
  bool dc_fallback = false;  // dc requested but pool empty
};

/// Draws cfg.batch pairs in the dc:gc ratio (gc only when mixing is off).
MixedBatch build_mixed_batch(const GdpoConfig& cfg, const Corpus& corpus,
                             std::span<const CooccurrencePair> dc_pool, Rng& rng);

/// Mean over pairs of -log sigma(beta * delta),
/// delta = R(pol+) - R(pol-) - R(ref+) + R(ref-). Optional outputs are the
/// gradients w.r.t. the policy embeddings.
double alignment_loss(const FrozenReward& reward, const Matrix& policy_plus,
                      const Matrix& policy_minus, const Matrix& reference_plus,
                      const Matrix& reference_minus, double beta, Matrix* grad_plus = nullptr,
                      Matrix* grad_minus = nullptr);

/// mean_i [ ||p_i - r_i||^2 - 1/(B-1) sum_{j != i} ||p_i - r_j||^2 ].
double similarity_loss(const Matrix& policy, const Matrix& reference, Matrix* grad = nullptr);

struct StepLosses {
  double align = 0.0;
  double sim = 0.0;
  double total = 0.0;
};

/// Prompts for a pair: plus = [content(anchor), location(preferred)],
/// minus = [content(anchor), location(rejected)].
std::pair<PromptFeatures, PromptFeatures> pair_prompts(const FeaturizerConfig& feat,
                                                       const Corpus& corpus,
                                                       const PreferencePair& pair);

/// Combined objective on one batch. When `accumulate` is set, gradients
/// flow into the policy only.
StepLosses gdpo_objective(Encoder& policy, const ReferenceEncoder& reference,
                          const FrozenReward& reward, const Corpus& corpus,
                          std::span<const PreferencePair> pairs, double beta, double lambda,
                          bool accumulate);

struct GdpoLogRow {
  std::int64_t step = 0;
  double l_align = 0.0;
  double l_sim = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
};

struct GdpoReport {
  std::vector<GdpoLogRow> rows;
  double s_th = 0.0;
  std::size_t dc_pool_size = 0;
  bool dc_fallback = false;
  void write_csv(const std::filesystem::path& path) const;
};

GdpoReport train_gdpo(const GdpoConfig& cfg, Encoder& policy, const ReferenceEncoder& reference,
                      const FrozenReward& reward, const Corpus& corpus,
                      std::span<const ClickHistory> histories, Rng& rng);

nlohmann::json variant_to_json(const GdpoVariant& v);
GdpoVariant variant_from_json(const nlohmann::json& j);

}  // namespace lgsid
