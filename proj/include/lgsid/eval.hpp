#pragma once

#include "lgsid/common.hpp"
#include "lgsid/corpus.hpp"
#include "lgsid/hgit.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lgsid {

inline const std::vector<int> kDefaultRetrievalKs = {5, 10, 100};

/// Exact cosine top-K over unit-norm rows, query excluded, ties by id.
std::vector<ItemId> retrieve_topk(std::size_t query_index, const Matrix& embeddings,
                                  const Corpus& corpus, int k);
std::vector<std::vector<Eigen::Index>> retrieve_topk_batch(std::span<const Eigen::Index> queries,
                                                           const Matrix& embeddings,
                                                           const Corpus& corpus, int k);

struct Coverage {
  double province = 0.0;
  double city = 0.0;
  double town = 0.0;
};

/// Mean over queries of the fraction of retrieved items sharing the
/// query's province / city / town. Only the first `k` retrieved are used
/// (all when k <= 0).
Coverage coverage_metrics(const Corpus& corpus, std::span<const Eigen::Index> queries,
                          const std::vector<std::vector<Eigen::Index>>& retrieved, int k = 0);

/// Mean cosine between each query and its retrieved items, measured with
/// the reference embeddings.
double semantic_similarity(std::span<const Eigen::Index> queries,
                           const std::vector<std::vector<Eigen::Index>>& retrieved,
                           const Matrix& reference_embeddings, int k = 0);

/// I(A;B) / sqrt(H(A) H(B)).
double nmi(std::span<const std::int64_t> a, std::span<const std::int64_t> b);

/// Nearest-rank percentiles of the per-token population sizes at `level`
/// (1-based). Only tokens in use count as populations.
std::vector<double> token_quantiles(std::span<const SemanticID> sids, int level,
                                    std::span<const double> percentiles);

struct TokenStats {
  std::vector<std::vector<std::size_t>> populations;  // per level, per used token
  std::vector<std::vector<double>> quantiles;         // per level
  std::size_t collisions = 0;  // items whose full SID is shared with an earlier item
};

TokenStats token_stats(std::span<const SemanticID> sids, std::span<const double> percentiles);

struct RetrievalRow {
  int k = 0;
  double similarity = 0.0;
  Coverage coverage;
};

struct RetrievalReport {
  std::vector<RetrievalRow> rows;
  const RetrievalRow& at(int k) const;
};

RetrievalReport evaluate_retrieval(const Corpus& corpus, const Matrix& policy_embeddings,
                                   const Matrix& reference_embeddings,
                                   std::span<const Eigen::Index> queries,
                                   std::span<const int> ks = kDefaultRetrievalKs);

/// `count` distinct item indices (all of them if count >= n), sorted.
std::vector<Eigen::Index> sample_queries(std::size_t n, std::size_t count, std::uint64_t seed);

struct MetricRecord {
  std::string variant;
  std::string metric;  // similarity | province | city | town | nmi_... | ...
  int k = 0;
  double value = 0.0;
  std::uint64_t seed = 0;
};

std::vector<MetricRecord> retrieval_records(const std::string& variant, const RetrievalReport& r,
                                            std::uint64_t seed);
void write_metrics_csv(std::span<const MetricRecord> records, const std::filesystem::path& path);
std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);

inline const std::vector<std::string> kAblationRows = {"Origin",   "DPO-PR",    "DPO-LR", "DPO-LRD",
                                                       "DPO-LRDM", "DPO-LRDMS", "G-DPO"};

struct AblationTable {
  std::vector<std::string> columns;  // Top@5 ... T@100
  std::vector<std::string> rows;
  std::vector<std::vector<std::optional<double>>> values;
  std::vector<std::vector<std::optional<double>>> deltas;  // row - Origin
  std::vector<std::optional<double>> improvement;  // (G-DPO - Origin) / Origin
  std::vector<std::string> warnings;

  std::string markdown() const;
  std::string csv() const;
};

/// Assembles the variant comparison. Metrics for the same (variant, metric,
/// k) across seeds are averaged.
AblationTable ablation_report(std::span<const MetricRecord> records,
                              std::span<const std::string> variants = kAblationRows,
                              std::span<const int> ks = kDefaultRetrievalKs);

}  // namespace lgsid
