#include "lgsid/kernels.hpp"
#include "lgsid/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>

int main(int argc, char** argv) {
  CLI::App app{"Geographic preference alignment and semantic ID toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir;

  const std::map<std::string, std::function<std::string(const lgsid::PipelineConfig&)>> commands = {
      {"gen", lgsid::cmd_gen},           {"train-reward", lgsid::cmd_train_reward},
      {"align", lgsid::cmd_align},       {"tokenize", lgsid::cmd_tokenize},
      {"eval", lgsid::cmd_eval},         {"report", lgsid::cmd_report}};
  const std::map<std::string, std::string> help = {
      {"gen", "generate the synthetic corpus and click histories"},
      {"train-reward", "warm up the encoder and train the reward models"},
      {"align", "run preference alignment for every configured variant"},
      {"tokenize", "fit level-1 clusters and residual codebooks, emit SIDs"},
      {"eval", "retrieval coverage, similarity and SID statistics"},
      {"report", "assemble the variant comparison tables"}};

  for (const auto& [name, _] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "top-level seed (overrides the config)");
    sub->add_option("--threads", threads, "OpenMP threads (default: LGSID_THREADS or all cores)");
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = lgsid::PipelineConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out_dir = *out_dir;
    cfg.validate();
    if (!threads) {
      if (const char* env = std::getenv("LGSID_THREADS")) threads = std::atoi(env);
    }
    if (threads) lgsid::kernels::set_threads(*threads);
    const std::string name = app.get_subcommands().front()->get_name();
    std::cout << commands.at(name)(cfg) << std::endl;
  } catch (const std::exception& e) {
    std::cerr << "lgsid: error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
