#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "dackgr/kg_store.h"
#include "json.hpp"
#include "support/temp_dir.h"

namespace dackgr {
namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd =
      std::string(DACKGR_CLI) + " -q " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(3);
    std::set<NamedTriple> facts;
    while (facts.size() < 300)
      facts.insert({"e" + std::to_string(rng() % 50), "r" + std::to_string(rng() % 3),
                    "e" + std::to_string(rng() % 50)});
    std::vector<NamedTriple> v(facts.begin(), facts.end());
    write_triples(dir_ / "all.tsv", v);
    ASSERT_EQ(run("sample-dataset -i " + (dir_ / "all.tsv").string() + " -o " +
                  data() + " --fraction 0.8 --seed 4"),
              0);
  }
  std::string data() const { return (dir_ / "data").string(); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string agent_flags() const {
    return " --epochs 2 --dim 6 --hidden 6 --layers 1 --steps 2 --rollouts 3"
           " --batch-size 32 --beam 8 ";
  }

  testing::TempDir dir_;
};

TEST_F(Cli, SampleWritesSplitsAndReport) {
  for (const char* f : {"train.tsv", "valid.tsv", "test.tsv", "sparsity.json"})
    EXPECT_TRUE(fs::exists(dir_ / "data" / f)) << f;
  const auto report = nlohmann::json::parse(slurp(dir_ / "data" / "sparsity.json"));
  EXPECT_EQ(report["sampled"]["facts"], 240);
  const auto s = report["splits"];
  EXPECT_EQ(s["train"].get<int>() + s["valid"].get<int>() + s["test"].get<int>(), 240);
  EXPECT_EQ(run("inspect-graph -d " + data()), 0);
}

TEST_F(Cli, AblationPipelineIsReproducible) {
  // w/o DC and w/o DA needs no KGE at all.
  ASSERT_EQ(run("train-agent -d " + data() + " -o " + path("plain") + agent_flags() +
                "--anticipation off --completion-alpha 0"),
            0);
  EXPECT_EQ(line_count(dir_ / "plain" / "epochs.jsonl"), 2u);
  ASSERT_EQ(run("evaluate -r " + path("plain") + " -o " + path("e1")), 0);
  ASSERT_EQ(run("evaluate -r " + path("plain") + " -o " + path("e2")), 0);
  EXPECT_EQ(slurp(dir_ / "e1" / "metrics.json"), slurp(dir_ / "e2" / "metrics.json"));
  EXPECT_EQ(slurp(dir_ / "e1" / "ranks.csv"), slurp(dir_ / "e2" / "ranks.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "e1" / "paths.txt"));
}

TEST_F(Cli, FullPipelineWithGridAndAnalysis) {
  ASSERT_EQ(run("train-kge -d " + data() + " -o " + path("kge") +
                " --model distmult --dim 6 --epochs 3"),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "kge" / "model" / "manifest.json"));
  ASSERT_EQ(run("train-agent -d " + data() + " -o " + path("grid") + " --kge " +
                path("kge") + agent_flags() + "--alpha-grid 0.2,0.5"),
            0);
  const auto grid = nlohmann::json::parse(slurp(dir_ / "grid" / "grid.json"));
  EXPECT_EQ(grid["grid"].size(), 2u);
  EXPECT_TRUE(fs::exists(dir_ / "grid" / "policy" / "manifest.json"));
  ASSERT_EQ(run("evaluate -r " + path("grid") + " --split valid"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "grid" / "eval_valid" / "metrics.json"));
  ASSERT_EQ(run("analyze -r " + path("grid/grid/alpha_0.5_m_20_k_2") + " " +
                path("grid/grid/alpha_0.2_m_20_k_2") + " -o " + path("an")),
            0);
  EXPECT_EQ(line_count(dir_ / "an" / "ratio_vs_alpha.csv"), 3u);
  EXPECT_EQ(line_count(dir_ / "an" / "ratio_vs_epoch.csv"), 5u);
  const std::string csv = slurp(dir_ / "an" / "ratio_vs_alpha.csv");
  EXPECT_LT(csv.find(",0.2,"), csv.find(",0.5,"));
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  std::ofstream(dir_ / "agent.json")
      << R"({"epochs": 4, "rollouts": 2, "policy": {"anticipation": "off"}})";
  ASSERT_EQ(run("train-agent -d " + data() + " -o " + path("o") + " -c " +
                path("agent.json") + " --epochs 1 --dim 4 --hidden 4 --layers 1"),
            0);
  const auto cfg = nlohmann::json::parse(slurp(dir_ / "o" / "config.json"));
  EXPECT_EQ(cfg["train"]["epochs"], 1);
  EXPECT_EQ(cfg["train"]["rollouts"], 2);
  EXPECT_EQ(line_count(dir_ / "o" / "epochs.jsonl"), 1u);
}

TEST_F(Cli, BadInputsFail) {
  EXPECT_NE(run("inspect-graph -d " + path("missing")), 0);
  EXPECT_NE(run("train-agent -d " + data() + " -o " + path("x") +
                " --anticipation sample"),
            0);  // anticipation needs a KGE
  std::ofstream(dir_ / "bad.json") << "{ not json";
  EXPECT_NE(run("train-kge -d " + data() + " -o " + path("y") + " -c " +
                path("bad.json")),
            0);
  EXPECT_NE(run("train-agent -d " + data() + " -o " + path("z") +
                " --anticipation off --completion-alpha 2"),
            0);
  EXPECT_NE(run("evaluate -r " + path("nothing")), 0);
  EXPECT_NE(run("sample-dataset -i " + path("all.tsv") + " -o " + path("s") +
                " --ratios 0.5,0.5,0.5"),
            0);
  EXPECT_NE(run("no-such-command"), 0);
}

}  // namespace
}  // namespace dackgr
