#pragma once

#include "lgsid/common.hpp"
#include "lgsid/corpus.hpp"
#include "lgsid/encoder.hpp"
#include "lgsid/eval.hpp"
#include "lgsid/gdpo.hpp"
#include "lgsid/hgit.hpp"
#include "lgsid/reward.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace lgsid {

struct EncoderStageConfig {
  EncoderConfig net;
  int content_buckets = 256;
  WarmupConfig warmup;
};

struct RewardStageConfig {
  int negatives = 15;
  double heldout_fraction = 0.1;
  int max_targets = 0;  // 0 = every item
  RewardTrainConfig train;
};

struct AlignStageConfig {
  GdpoConfig gdpo;
  std::vector<std::string> variants;  // subset of kAblationRows minus Origin
  std::vector<double> lambda_sweep{GdpoConfig::kDefaultLambdaSweep.begin(), GdpoConfig::kDefaultLambdaSweep.end()};
};

struct TokenizeStageConfig {
  HgitConfig hgit;
  std::string aligned_variant = "G-DPO";
};

struct EvalStageConfig {
  int queries = 1000;
  std::vector<int> ks = kDefaultRetrievalKs;
  std::vector<std::uint64_t> seeds = {7, 8, 9};
  std::vector<double> percentiles = {10, 25, 50, 75, 90};
};

/// Full run description. Every stage seed is derive_seed(seed, "<stage>").
struct PipelineConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out_dir = "runs/desk";
  CorpusConfig corpus;
  EncoderStageConfig encoder;
  RewardStageConfig reward;
  AlignStageConfig align;
  TokenizeStageConfig tokenize;
  EvalStageConfig eval;

  void validate() const;
  static PipelineConfig load(const std::filesystem::path& path);
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

enum class RewardKind { listwise_density, listwise_uniform, pointwise };
std::string to_string(RewardKind kind);

/// One alignment run of the ablation / lambda sweep.
struct AlignmentRun {
  std::string name;
  GdpoVariant variant;
  double lambda = 0.0;
  RewardKind reward = RewardKind::listwise_density;
};

AlignmentRun variant_run(const std::string& name, const GdpoConfig& base);
std::vector<AlignmentRun> alignment_runs(const PipelineConfig& cfg);
std::string sweep_name(double lambda);

/// Paths of every artifact under the output directory.
class Artifacts {
 public:
  explicit Artifacts(std::filesystem::path root) : root_(std::move(root)) {}
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path corpus() const { return root_ / "corpus.jsonl"; }
  std::filesystem::path histories() const { return root_ / "histories.jsonl"; }
  std::filesystem::path reference_net() const { return root_ / "reference.net"; }
  std::filesystem::path reference_config() const { return root_ / "reference.json"; }
  std::filesystem::path reward(RewardKind k) const { return root_ / ("reward_" + to_string(k) + ".net"); }
  std::filesystem::path reward_log(RewardKind k) const {
    return root_ / ("reward_" + to_string(k) + ".csv");
  }
  std::filesystem::path reward_summary() const { return root_ / "reward_summary.json"; }
  std::filesystem::path policy(const std::string& run) const;
  std::filesystem::path align_log(const std::string& run) const;
  std::filesystem::path level1() const { return root_ / "level1.json"; }
  std::filesystem::path codebooks(const std::string& tag) const {
    return root_ / ("codebooks_" + tag + ".bin");
  }
  std::filesystem::path sids(const std::string& tag) const { return root_ / ("sids_" + tag + ".jsonl"); }
  std::filesystem::path hgit_log(const std::string& tag) const {
    return root_ / ("hgit_" + tag + ".csv");
  }
  std::filesystem::path metrics() const { return root_ / "metrics.csv"; }
  std::filesystem::path report_markdown() const { return root_ / "report.md"; }
  std::filesystem::path report_csv() const { return root_ / "report.csv"; }

 private:
  std::filesystem::path root_;
};

/// Throws Error("<what> not found; run <command>") when the file is missing.
void require_artifact(const std::filesystem::path& path, const std::string& what,
                      const std::string& command);

/// Each command returns a one-line summary.
std::string cmd_gen(const PipelineConfig& cfg);
std::string cmd_train_reward(const PipelineConfig& cfg);
std::string cmd_align(const PipelineConfig& cfg);
std::string cmd_tokenize(const PipelineConfig& cfg);
std::string cmd_eval(const PipelineConfig& cfg);
std::string cmd_report(const PipelineConfig& cfg);

/// gen -> train-reward -> align -> tokenize -> eval -> report.
void run_pipeline(const PipelineConfig& cfg, bool verbose = false);

/// Helpers shared with tools and tests.
Corpus load_corpus_artifact(const Artifacts& a);
Encoder load_reference_artifact(const Artifacts& a);
Encoder load_policy_artifact(const Artifacts& a, const Encoder& reference, const std::string& run);
std::vector<ListwiseSample> build_reward_samples(const Corpus& corpus, std::span<const std::size_t> targets,
                                                 RewardKind kind, int negatives,
                                                 const FeaturizerConfig& feat, Rng& rng);

}  // namespace lgsid
