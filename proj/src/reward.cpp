#include "lgsid/reward.hpp"

#include "lgsid/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

namespace lgsid {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct EncodedSamples {
  Matrix embeddings;
  Vector labels;
  std::vector<Eigen::Index> offsets;  // size n+1
};

EncodedSamples encode_samples(std::span<const ListwiseSample> samples, const Encoder& encoder) {
  EncodedSamples out;
  std::vector<PromptFeatures> rows;
  std::vector<double> labels;
  out.offsets.push_back(0);
  for (const ListwiseSample& s : samples) {
    for (std::size_t j = 0; j < s.prompts.size(); ++j) {
      rows.push_back(s.prompts[j]);
      labels.push_back(s.entries[j].label);
    }
    out.offsets.push_back(static_cast<Eigen::Index>(rows.size()));
  }
  out.embeddings = encoder.encode(rows);
  out.labels = Eigen::Map<const Vector>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  return out;
}

double accuracy_on(const RewardModel& model, const EncodedSamples& enc) {
  const std::size_t n = enc.offsets.size() - 1;
  if (n == 0) return 0.0;
  const Vector scores = model.score(enc.embeddings);
  std::size_t wins = 0;
  for (std::size_t s = 0; s < n; ++s)
    if (scores(enc.offsets[s]) > scores(enc.offsets[s + 1] - 1)) ++wins;
  return static_cast<double>(wins) / static_cast<double>(n);
}

}  // namespace

std::vector<double> distance_rank_labels(std::span<const double> distances,
                                         std::span<const ItemId> ids) {
  if (distances.size() != ids.size()) throw ValidationError("ids", "length mismatch");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return distances[a] != distances[b] ? distances[a] < distances[b] : ids[a] < ids[b];
  });
  const double len = static_cast<double>(distances.size());
  std::vector<double> labels(distances.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    labels[order[r]] = len - static_cast<double>(r + 1) + 1.0;
  return labels;
}

ListwiseSample build_listwise_sample(const Corpus& corpus, const Item& target,
                                     std::span<const ItemId> negatives,
                                     const FeaturizerConfig& featurizer) {
  std::unordered_set<ItemId> seen;
  for (ItemId id : negatives) {
    if (id == target.item_id)
      throw ValidationError("negatives", "target " + std::to_string(id) + " listed as negative");
    if (!seen.insert(id).second)
      throw ValidationError("negatives", "duplicate negative id " + std::to_string(id));
  }
  std::vector<Item> candidates;
  candidates.reserve(negatives.size());
  for (ItemId id : negatives) candidates.push_back(corpus.at(id));
  const DistanceList ranked = rank_distances(target, candidates);

  ListwiseSample s;
  s.target = target.item_id;
  s.negatives.assign(negatives.begin(), negatives.end());
  const double len = static_cast<double>(ranked.entries.size() + 1);
  s.entries.push_back({target.item_id, 0.0, len});
  s.prompts.push_back(featurize(featurizer, target));
  for (std::size_t r = 0; r < ranked.entries.size(); ++r) {
    const DistanceEntry& e = ranked.entries[r];
    s.entries.push_back({e.item_id, e.distance_km, len - static_cast<double>(r + 2) + 1.0});
    s.prompts.push_back(featurize(featurizer, target, &corpus.at(e.item_id)));
  }
  return s;
}

RewardModel::RewardModel(int embedding_dim, Rng& rng)
    : net_({embedding_dim, embedding_dim, std::max(1, embedding_dim / 2), 1},
           {Activation::relu, Activation::relu, Activation::identity}, rng) {}

RewardModel::RewardModel(DenseNet net) : net_(std::move(net)) {
  if (net_.output_dim() != 1) throw ValidationError("reward", "network must emit one score");
}

Vector RewardModel::score(const Matrix& embeddings) const {
  if (embeddings.cols() != input_dim())
    throw ValidationError("embedding", "expected dimension " + std::to_string(input_dim()) +
                                           ", got " + std::to_string(embeddings.cols()));
  return net_.forward(embeddings).col(0);
}

FrozenReward::FrozenReward(RewardModel model) : model_(std::move(model)) {
  model_.net().freeze();
}

Matrix FrozenReward::input_gradient(const Matrix& embeddings, const Vector& upstream) const {
  DenseNet::Cache cache;
  model_.net().forward(embeddings, &cache);
  return model_.net().input_gradient(cache, upstream);
}

DenseNet& FrozenReward::mutable_net() {
  throw FrozenError("reward model is frozen");
}

FrozenReward FrozenReward::load(const std::filesystem::path& path) {
  return FrozenReward(RewardModel(DenseNet::load(path)));
}

FrozenReward freeze(RewardModel model) { return FrozenReward(std::move(model)); }

double weighted_bce_loss(const Vector& scores, const Vector& labels, int n_samples, Vector* grad) {
  if (scores.size() != labels.size()) throw ValidationError("labels", "length mismatch");
  if (n_samples < 1) throw ValidationError("n_samples", "must be >= 1");
  const double inv_n = 1.0 / n_samples;
  double loss = 0.0;
  if (grad) grad->resize(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    // -log sigma(r) = softplus(-r)
    loss += labels(i) * softplus(-scores(i)) * inv_n;
    if (grad) (*grad)(i) = -labels(i) * sigmoid(-scores(i)) * inv_n;
  }
  return loss;
}

double listwise_softmax_loss(const Vector& scores, const Vector& labels,
                             std::span<const Eigen::Index> lengths, Vector* grad) {
  if (scores.size() != labels.size()) throw ValidationError("labels", "length mismatch");
  if (lengths.empty()) throw ValidationError("lengths", "need at least one list");
  const double inv_n = 1.0 / static_cast<double>(lengths.size());
  if (grad) grad->resize(scores.size());
  double loss = 0.0;
  Eigen::Index b = 0;
  for (const Eigen::Index len : lengths) {
    if (len < 1 || b + len > scores.size()) throw ValidationError("lengths", "do not cover scores");
    const auto s = scores.segment(b, len);
    const auto y = labels.segment(b, len);
    const double mass = y.sum();
    if (!(mass > 0.0)) throw ValidationError("labels", "list labels must have positive mass");
    const double mx = s.maxCoeff();
    const Vector e = (s.array() - mx).exp().matrix();
    const double log_z = mx + std::log(e.sum());
    for (Eigen::Index j = 0; j < len; ++j) loss -= y(j) / mass * (s(j) - log_z) * inv_n;
    if (grad) grad->segment(b, len) = (e / e.sum() - y / mass) * inv_n;
    b += len;
  }
  if (b != scores.size()) throw ValidationError("lengths", "do not cover scores");
  return loss;
}

std::string to_string(RewardObjective objective) {
  return objective == RewardObjective::weighted_bce ? "weighted_bce" : "listwise_softmax";
}

RewardObjective parse_reward_objective(const std::string& name) {
  if (name == "weighted_bce") return RewardObjective::weighted_bce;
  if (name == "listwise_softmax") return RewardObjective::listwise_softmax;
  throw ValidationError("reward.objective", "unknown objective '" + name + "'");
}

void RewardReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "step,loss,heldout_accuracy\n";
  out.precision(10);
  for (const RewardLogRow& r : rows) out << r.step << ',' << r.loss << ',' << r.heldout_accuracy << '\n';
}

RewardReport train_reward(RewardModel& model, std::span<const ListwiseSample> train,
                          std::span<const ListwiseSample> heldout, const Encoder& encoder,
                          const RewardTrainConfig& cfg, Rng& rng) {
  if (train.empty()) throw ValidationError("samples", "need at least one training sample");
  if (cfg.batch < 1) throw ValidationError("batch", "must be >= 1");
  if (model.input_dim() != encoder.dim())
    throw ValidationError("reward", "input dim differs from encoder output dim");
  const EncodedSamples tr = encode_samples(train, encoder);
  const EncodedSamples ho = encode_samples(heldout, encoder);

  AdamW opt(cfg.optimizer);
  RewardReport report;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double window = 0.0;
  int window_n = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      Eigen::Index rows = 0;
      for (std::size_t k = start; k < end; ++k) rows += tr.offsets[order[k] + 1] - tr.offsets[order[k]];
      Matrix x(rows, tr.embeddings.cols());
      Vector labels(rows);
      Eigen::Index r = 0;
      std::vector<Eigen::Index> lengths;
      for (std::size_t k = start; k < end; ++k) {
        const Eigen::Index b = tr.offsets[order[k]], len = tr.offsets[order[k] + 1] - b;
        lengths.push_back(len);
        x.middleRows(r, len) = tr.embeddings.middleRows(b, len);
        labels.segment(r, len) = tr.labels.segment(b, len);
        r += len;
      }
      DenseNet::Cache cache;
      const Vector scores = model.net().forward(x, &cache).col(0);
      Vector grad;
      const double loss =
          cfg.objective == RewardObjective::weighted_bce
              ? weighted_bce_loss(scores, labels, static_cast<int>(end - start), &grad)
              : listwise_softmax_loss(scores, labels, lengths, &grad);
      if (!std::isfinite(loss))
        throw DivergenceError("reward loss is not finite at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(opt.steps()) +
                              "; max |score| = " + std::to_string(scores.cwiseAbs().maxCoeff()));
      model.net().backward(cache, grad);
      opt.step(model.net());
      epoch_loss += loss;
      ++batches;
      window += loss;
      ++window_n;
      if (opt.steps() % cfg.log_every == 0) {
        report.rows.push_back({opt.steps(), window / window_n, accuracy_on(model, ho)});
        window = 0.0;
        window_n = 0;
      }
    }
    report.epoch_loss.push_back(epoch_loss / std::max(1, batches));
  }
  if (window_n > 0) report.rows.push_back({opt.steps(), window / window_n, accuracy_on(model, ho)});
  report.final_accuracy = accuracy_on(model, ho);
  return report;
}

double ordering_accuracy(const RewardModel& model, std::span<const ListwiseSample> samples,
                         const Encoder& encoder) {
  return accuracy_on(model, encode_samples(samples, encoder));
}

}  // namespace lgsid
