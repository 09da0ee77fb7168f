#include "lgsid/pipeline.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>

using namespace lgsid;
namespace t = lgsid::test;
namespace fs = std::filesystem;

namespace {

const fs::path kTiny = fs::path(LGSID_SOURCE_DIR) / "configs" / "tiny.json";

PipelineConfig tiny(const std::string& scratch) {
  PipelineConfig c = PipelineConfig::load(kTiny);
  c.out_dir = t::scratch_dir(scratch);
  return c;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(LGSID_CLI) + " " + args + " > " + log.string() + " 2>&1";
  return std::system(cmd.c_str());
}

}  // namespace

TEST_CASE("align before train-reward names the missing step") {
  const PipelineConfig c = tiny("cli_order");
  cmd_gen(c);
  try {
    cmd_align(c);
    FAIL("align should not run without a reward checkpoint");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("reward checkpoint not found; run train-reward") != std::string::npos);
  }
}

TEST_CASE("unknown config keys are rejected with the offending path") {
  const auto dir = t::scratch_dir("cli_badkey");
  auto j = nlohmann::json::parse(t::slurp(kTiny));
  j["hgit"]["temperature"] = 0.5;
  std::ofstream(dir / "bad.json") << j.dump(2);
  try {
    PipelineConfig::load(dir / "bad.json");
    FAIL("unknown key accepted");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "hgit.temperature");
  }
  CHECK(run_cli("gen --config " + (dir / "bad.json").string(), dir / "log.txt") != 0);
  CHECK(t::slurp(dir / "log.txt").find("hgit.temperature") != std::string::npos);
}

TEST_CASE("config JSON round trip") {
  const PipelineConfig c = PipelineConfig::load(kTiny);
  nlohmann::json j = c;
  PipelineConfig back = j.get<PipelineConfig>();
  nlohmann::json again = back;
  CHECK(j == again);
}

TEST_CASE("full tiny pipeline through the command-line tool; tokenize is idempotent") {
  const auto dir = t::scratch_dir("cli_full");
  const std::string base = "--config " + kTiny.string() + " --out " + dir.string() + " --threads 1";
  for (const char* step : {"gen", "train-reward", "align", "tokenize", "eval", "report"}) {
    CAPTURE(step);
    const int rc = run_cli(std::string(step) + " " + base, dir / "log.txt");
    INFO(t::slurp(dir / "log.txt"));
    REQUIRE(rc == 0);
  }
  const Artifacts a(dir);
  for (const auto& p : {a.corpus(), a.histories(), a.reference_net(), a.reward(RewardKind::listwise_density),
                        a.policy("G-DPO"), a.policy("DPO-LRD"), a.sids("aligned"), a.sids("unaligned"),
                        a.metrics(), a.report_markdown(), a.report_csv()})
    CHECK(fs::exists(p));
  const std::string report = t::slurp(a.report_markdown());
  CHECK(report.find("| G-DPO |") != std::string::npos);
  CHECK(report.find("| Origin |") != std::string::npos);

  const std::string sids = t::slurp(a.sids("aligned"));
  const std::string metrics = t::slurp(a.metrics());
  REQUIRE(run_cli("tokenize " + base, dir / "log.txt") == 0);
  CHECK(t::slurp(a.sids("aligned")) == sids);
  REQUIRE(run_cli("eval " + base, dir / "log.txt") == 0);
  CHECK(t::slurp(a.metrics()) == metrics);
}
