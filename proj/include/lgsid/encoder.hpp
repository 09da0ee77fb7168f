#pragma once

#include "lgsid/common.hpp"
#include "lgsid/corpus.hpp"
#include "lgsid/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <vector>

namespace lgsid {

/// Layout of the hashed multi-hot prompt features.
///   content  = [token buckets | cat1 | cat2 | brand]
///   location = [province | city | town]
struct FeaturizerConfig {
  int content_buckets = 256;
  int cat1_slots = 1;
  int cat2_slots = 1;
  int brand_slots = 1;
  int province_slots = 1;
  int city_slots = 1;
  int town_slots = 1;
  std::uint64_t hash_seed = 0;

  int content_dim() const { return content_buckets + cat1_slots + cat2_slots + brand_slots; }
  int location_dim() const { return province_slots + city_slots + town_slots; }
  int dim() const { return content_dim() + location_dim(); }

  /// One slot per categorical value in the corpus.
  static FeaturizerConfig for_corpus(const Cardinalities& cards, int content_buckets,
                                     std::uint64_t hash_seed);
  void validate() const;
};

void to_json(nlohmann::json& j, const FeaturizerConfig& c);
void from_json(const nlohmann::json& j, FeaturizerConfig& c);

struct FeatureEntry {
  int index = 0;
  double value = 0.0;
  bool operator==(const FeatureEntry&) const = default;
};

/// Sparse prompt. Indices are local to their part.
struct PromptFeatures {
  std::vector<FeatureEntry> content;
  std::vector<FeatureEntry> location;
  bool operator==(const PromptFeatures&) const = default;
};

/// Content comes from `item`; location from `location_override` when given.
PromptFeatures featurize(const FeaturizerConfig& cfg, const Item& item,
                         const Item* location_override = nullptr);

struct EncoderConfig {
  int hidden = 128;
  int dim = 64;
};

/// Featurizer -> dense body (tanh hidden, linear output) -> L2 normalisation.
class Encoder {
 public:
  static constexpr Eigen::Index kChunkRows = 256;

  struct Pass {
    DenseNet::Cache cache;
    Matrix pre_norm;
    Vector norms;
    Matrix out;
    std::vector<char> degenerate;
    std::size_t degenerate_count() const;
  };

  Encoder() = default;
  Encoder(FeaturizerConfig feat, EncoderConfig cfg, Rng& rng);
  Encoder(FeaturizerConfig feat, EncoderConfig cfg, DenseNet net);

  const FeaturizerConfig& featurizer() const { return feat_; }
  const EncoderConfig& config() const { return cfg_; }
  int dim() const { return cfg_.dim; }
  DenseNet& net() { return net_; }
  const DenseNet& net() const { return net_; }

  PromptFeatures featurize(const Item& item, const Item* location_override = nullptr) const {
    return lgsid::featurize(feat_, item, location_override);
  }
  Matrix densify(std::span<const PromptFeatures> rows) const;

  /// Unit-norm embeddings. A zero pre-norm row is replaced by e_0 and
  /// flagged in the pass.
  Matrix forward(const Matrix& features, Pass* pass = nullptr) const;
  /// Accumulates parameter gradients for d(loss)/d(embeddings).
  void backward(const Pass& pass, const Matrix& grad_out);

  /// Frozen-style batched encoding, parallel over fixed-size chunks.
  Matrix encode(std::span<const PromptFeatures> rows, std::size_t* degenerate = nullptr) const;
  /// True-location embeddings of every corpus item, in corpus order.
  Matrix encode_items(const Corpus& corpus) const;

  void save(const std::filesystem::path& net_path, const std::filesystem::path& config_path) const;
  static Encoder load(const std::filesystem::path& net_path,
                      const std::filesystem::path& config_path);

 private:
  FeaturizerConfig feat_;
  EncoderConfig cfg_;
  DenseNet net_;
};

/// Frozen deep copy of a policy encoder.
class ReferenceEncoder {
 public:
  explicit ReferenceEncoder(Encoder encoder);
  const Encoder& encoder() const { return encoder_; }
  Matrix forward(const Matrix& features) const { return encoder_.forward(features); }
  Matrix encode(std::span<const PromptFeatures> rows) const { return encoder_.encode(rows); }
  Matrix encode_items(const Corpus& corpus) const { return encoder_.encode_items(corpus); }
  std::uint64_t parameter_hash() const { return encoder_.net().parameter_hash(); }

 private:
  Encoder encoder_;
};

ReferenceEncoder snapshot_reference(const Encoder& policy);

struct WarmupConfig {
  int steps = 300;
  int batch = 64;
  double margin = 0.2;
  double lr = 1e-3;
};

/// Semantic pre-training: triplets (anchor, same-cat1 positive, random
/// negative) under a cosine hinge with the configured margin. Returns the
/// mean hinge loss over the last 10% of steps.
double warmup_contrastive(Encoder& encoder, const Corpus& corpus, const WarmupConfig& cfg,
                          Rng& rng);

}  // namespace lgsid
