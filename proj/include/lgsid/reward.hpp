#pragma once

#include "lgsid/common.hpp"
#include "lgsid/corpus.hpp"
#include "lgsid/encoder.hpp"
#include "lgsid/nn.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lgsid {

/// One scored prompt: target content at the location of `location_item`.
struct ListEntry {
  ItemId location_item = 0;
  double distance_km = 0.0;
  double label = 0.0;
};

/// Target plus K location-mismatched prompts. Entries are sorted near to
/// far with the true prompt first; labels run from K+1 down to 1.
struct ListwiseSample {
  ItemId target = 0;
  std::vector<ItemId> negatives;
  std::vector<ListEntry> entries;
  std::vector<PromptFeatures> prompts;
};

/// Soft labels in input order: list_len - rank + 1, where rank orders by
/// (distance, id) ascending starting at 1.
std::vector<double> distance_rank_labels(std::span<const double> distances,
                                         std::span<const ItemId> ids);

/// Throws ValidationError on duplicate or self negatives.
ListwiseSample build_listwise_sample(const Corpus& corpus, const Item& target,
                                     std::span<const ItemId> negatives,
                                     const FeaturizerConfig& featurizer);

/// MLP d -> d -> d/2 -> 1 (relu hidden, raw output score).
class RewardModel {
 public:
  RewardModel() = default;
  RewardModel(int embedding_dim, Rng& rng);
  explicit RewardModel(DenseNet net);

  int input_dim() const { return net_.input_dim(); }
  Vector score(const Matrix& embeddings) const;
  DenseNet& net() { return net_; }
  const DenseNet& net() const { return net_; }

 private:
  DenseNet net_;
};

/// Immutable scorer for the alignment stage.
class FrozenReward {
 public:
  explicit FrozenReward(RewardModel model);

  int input_dim() const { return model_.input_dim(); }
  Vector score(const Matrix& embeddings) const { return model_.score(embeddings); }
  /// d(sum_i upstream_i * score_i) / d(embeddings).
  Matrix input_gradient(const Matrix& embeddings, const Vector& upstream) const;
  /// Always throws FrozenError.
  DenseNet& mutable_net();
  const DenseNet& net() const { return model_.net(); }
  std::uint64_t parameter_hash() const { return model_.net().parameter_hash(); }

  void save(const std::filesystem::path& path) const { model_.net().save(path); }
  static FrozenReward load(const std::filesystem::path& path);

 private:
  RewardModel model_;
};

FrozenReward freeze(RewardModel model);

/// Weighted BCE over one minibatch of `n_samples` lists:
///   L = -(1/N) sum_ij p_ij log sigma(r_ij)
/// `grad` (optional) receives dL/dr.
double weighted_bce_loss(const Vector& scores, const Vector& labels, int n_samples,
                         Vector* grad = nullptr);

/// Cross-entropy of a softmax over each list against labels normalized to
/// sum 1. `lengths` partitions `scores` into consecutive lists.
double listwise_softmax_loss(const Vector& scores, const Vector& labels,
                             std::span<const Eigen::Index> lengths, Vector* grad = nullptr);

/// weighted_bce is the default. listwise_softmax is opt-in and adds the
/// push-down term the weighted BCE lacks.
enum class RewardObjective { weighted_bce, listwise_softmax };

std::string to_string(RewardObjective objective);
RewardObjective parse_reward_objective(const std::string& name);

struct RewardTrainConfig {
  RewardObjective objective = RewardObjective::weighted_bce;
  int epochs = 5;
  int batch = 32;
  int log_every = 50;
  AdamWConfig optimizer{.lr = 1e-3, .weight_decay = 1e-4};
};

struct RewardLogRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double heldout_accuracy = 0.0;
};

struct RewardReport {
  std::vector<RewardLogRow> rows;
  std::vector<double> epoch_loss;
  double final_accuracy = 0.0;
  void write_csv(const std::filesystem::path& path) const;
};

/// Trains on prompts encoded once by the frozen encoder.
RewardReport train_reward(RewardModel& model, std::span<const ListwiseSample> train,
                          std::span<const ListwiseSample> heldout, const Encoder& encoder,
                          const RewardTrainConfig& cfg, Rng& rng);

/// Fraction of samples whose true prompt outscores the farthest mismatch.
double ordering_accuracy(const RewardModel& model, std::span<const ListwiseSample> samples,
                         const Encoder& encoder);

}  // namespace lgsid
