#pragma once

#include "lgsid/common.hpp"
#include "lgsid/corpus.hpp"
#include "lgsid/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <vector>

namespace lgsid {

/// Component weights of the clustering feature
/// F = [w_admin*f_admin, w_geo*f_geo, w_cat*f_cat, w_brand*f_brand].
struct FeatureWeights {
  double admin = 4.0;
  double geo = 2.0;
  double cat = 1.0;
  double brand = 0.5;
};

/// Corpus-level constants used to scale the composite feature.
struct FeatureScaling {
  double lat_min = 0.0, lat_max = 0.0;
  double lon_min = 0.0, lon_max = 0.0;
  Cardinalities cards;
  static FeatureScaling from_corpus(const Corpus& corpus);
};

inline constexpr int kCompositeDim = 8;  // 3 admin + 2 geo + 2 cat + 1 brand

/// f_admin = (province/P, city/C, town/T), f_geo = min-max (lat, lon),
/// f_cat = (cat1/C1, cat2/C2), f_brand = brand/B.
Vector composite_feature(const Item& item, const FeatureWeights& w, const FeatureScaling& s);
Matrix composite_features(const Corpus& corpus, const FeatureWeights& w);

struct KMeansResult {
  std::vector<int> assignments;
  Matrix centers;
  double inertia = 0.0;
};

/// Mini-batch k-means with k-means++ seeding. A final full assignment
/// pass reseeds empty clusters at the farthest points until none remain.
KMeansResult fit_layer1(const Matrix& features, int k, int batch, int iters, std::uint64_t seed);

/// Per-token mean of the embeddings. Throws on an empty token.
Matrix lift_layer1_centers(std::span<const int> assignments, int k, const Matrix& embeddings);

struct Codebook {
  int level = 1;
  Matrix centers;  // K x d
  bool learnable = false;
  double tau = 0.5;
  Matrix grad;
  int size() const { return static_cast<int>(centers.rows()); }
};

struct QuantizeResult {
  std::vector<int> z;
  std::vector<double> dist2;
  Matrix quantized;
  Matrix residual;
};

/// z = argmin_k ||R - mu_k||^2 (lowest index on ties), Q = mu[z], R' = R - Q.
QuantizeResult assign_and_quantize(const Matrix& residual, const Codebook& codebook);

/// p_k = count_k / N.
Vector usage_distribution(std::span<const int> z, int k);
/// KL(p || uniform) with 0 log 0 = 0.
double kl_usage_reg(const Vector& p);
/// Shannon entropy in nats.
double usage_entropy(const Vector& p);

/// Soft usage q_ik = softmax_k(-||R_i - mu_k||^2 / tau), pbar = mean_i q_i,
/// returns KL(pbar || u). Optional gradients w.r.t. the centers and the
/// residual rows.
double soft_usage_kl(const Matrix& residual, const Codebook& codebook, Matrix* grad_centers,
                     Matrix* grad_residual);

struct SemanticID {
  std::vector<int> tokens;
  bool operator==(const SemanticID&) const = default;
  auto operator<=>(const SemanticID&) const = default;
};

struct HgitConfig {
  int levels = 3;
  std::vector<int> codebook_sizes = {64, 32, 32};
  double lambda_reg = 0.1;
  double tau = 0.05;  // residual squared distances are ~0.2 on unit-norm embeddings
  int epochs = 20;
  int batch = 1024;
  AdamWConfig optimizer{.lr = 1e-2};
  FeatureWeights weights;
  int kmeans_batch = 1024;
  int kmeans_iters = 100;
  std::uint64_t seed = 0;
  void validate() const;
};

struct HgitEpoch {
  int epoch = 0;
  double recon = 0.0;
  std::vector<double> kl;       // hard-usage KL per level >= 2
  std::vector<double> entropy;  // hard-usage entropy per level >= 2
  int reseeded = 0;
};

struct HgitReport {
  std::vector<HgitEpoch> epochs;
  void write_csv(const std::filesystem::path& path) const;
};

/// Trainable part of the tokenizer objective on one batch:
///   mean_i ||R_i^(L)||^2 + lambda_reg * sum_{l>=2} KL(pbar^(l) || u)
/// with hard assignments held fixed. R1 is the level-1 residual.
/// When `accumulate` is set, gradients are added into each codebook's grad.
double hgit_objective(const Matrix& level1_residual, std::span<Codebook> residual_books,
                      double lambda_reg, bool accumulate);

/// Frozen level-1 geographic clusters followed by learnable residual levels.
class HierarchicalTokenizer {
 public:
  HierarchicalTokenizer() = default;
  HierarchicalTokenizer(Matrix level1_centers, std::vector<Codebook> residual_books);

  /// Learns levels 2..L on top of the lifted level-1 centers.
  static HierarchicalTokenizer train(const Matrix& embeddings, std::span<const int> level1,
                                     const Matrix& level1_centers, const HgitConfig& cfg,
                                     HgitReport* report = nullptr);

  /// Adds one more learnable level and trains it (earlier levels fixed).
  void append_level(const Matrix& embeddings, std::span<const int> level1, int size,
                    const HgitConfig& cfg, HgitReport* report = nullptr);

  int levels() const { return static_cast<int>(books_.size()) + 1; }
  int dim() const { return static_cast<int>(level1_.cols()); }
  const Matrix& level1_centers() const { return level1_; }
  const std::vector<Codebook>& residual_books() const { return books_; }
  std::vector<int> codebook_sizes() const;
  bool trained() const { return level1_.rows() > 0; }

  SemanticID tokenize(const RowVector& embedding, int level1_token) const;
  std::vector<SemanticID> tokenize_all(const Matrix& embeddings, std::span<const int> level1) const;

  /// Per-level quantized vectors for a batch, plus the final residual.
  std::vector<Matrix> quantize_levels(const Matrix& embeddings, std::span<const int> level1,
                                      Matrix* final_residual,
                                      std::vector<std::vector<int>>* tokens = nullptr) const;
  /// mean_i ||X_i - sum_l Q_i^(l)||^2
  double recon_loss(const Matrix& embeddings, std::span<const int> level1) const;

  /// Binary file: magic, header length, JSON header, centers (row-major f64).
  void save(const std::filesystem::path& path, const nlohmann::json& extra_header = {}) const;
  static HierarchicalTokenizer load(const std::filesystem::path& path);

 private:
  void fit_books(const Matrix& embeddings, std::span<const int> level1, std::size_t first_trainable,
                 const HgitConfig& cfg, HgitReport* report);

  Matrix level1_;
  std::vector<Codebook> books_;
};

void save_sids(std::span<const ItemId> ids, std::span<const SemanticID> sids,
               const std::filesystem::path& path);
std::vector<std::pair<ItemId, SemanticID>> load_sids(const std::filesystem::path& path);

}  // namespace lgsid
