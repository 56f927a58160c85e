#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

// End-to-end smoke tests driving the real CLI binary (path from the
// MORPHOGRAPH_CLI environment variable set by ctest).

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* env = std::getenv("MORPHOGRAPH_CLI");
  if (!env) throw std::runtime_error("MORPHOGRAPH_CLI not set");
  return env;
}

int run(const std::string& args) {
  const std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct Workspace {
  fs::path root;
  Workspace() : root(fs::temp_directory_path() / "morpho_cli_ws") {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string p(const std::string& rel) const { return (root / rel).string(); }
};

std::string small_data_flags() {
  return "--train-samples 12 --val-samples 6 --test-samples 6 --seed 11";
}

}  // namespace

TEST(Cli, HelpExitsZeroAndListsCommands) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("train-graph --help"), 0);
}

TEST(Cli, UnknownCommandExitsTwo) { EXPECT_EQ(run("frobnicate"), 2); }

TEST(Cli, MissingGraphCheckpointFailsActionably) {
  Workspace ws;
  ASSERT_EQ(run("gen-data --out " + ws.p("data") + " " + small_data_flags()), 0);
  ASSERT_EQ(run("build-graphs --data-dir " + ws.p("data") + " --out " + ws.p("graphs")), 0);
  EXPECT_EQ(run("train-mmf --data-dir " + ws.p("data") + " --graphs-dir " + ws.p("graphs") + " --out " +
                ws.p("mmf") + " --steps 3"),
            1);
}

TEST(Cli, FullChainProducesArtifactsAndEvalRoundTrips) {
  Workspace ws;
  ASSERT_EQ(run("gen-data --out " + ws.p("data") + " " + small_data_flags()), 0);
  EXPECT_TRUE(fs::exists(ws.root / "data" / "manifest.jsonl"));
  EXPECT_TRUE(fs::exists(ws.root / "data" / "config.json"));

  ASSERT_EQ(run("build-graphs --data-dir " + ws.p("data") + " --out " + ws.p("graphs")), 0);
  EXPECT_TRUE(fs::exists(ws.root / "graphs" / "g_000000.json"));

  const std::string common =
      " --data-dir " + ws.p("data") + " --graphs-dir " + ws.p("graphs") + " --batch 6 --eval-every 5";
  ASSERT_EQ(run("train-graph" + common + " --out " + ws.p("graph_run") + " --steps 12 --lr 0.01 --seed 5"), 0);
  EXPECT_TRUE(fs::exists(ws.root / "graph_run" / "checkpoint.json"));
  EXPECT_TRUE(fs::exists(ws.root / "graph_run" / "train_records.csv"));
  EXPECT_TRUE(fs::exists(ws.root / "graph_run" / "eval_report.json"));

  ASSERT_EQ(run("train-mmf-mim" + common + " --out " + ws.p("mim_run") + " --steps 6 --seed 5" +
                " --graph-checkpoint " + ws.p("graph_run/checkpoint.json")),
            0);
  EXPECT_TRUE(fs::exists(ws.root / "mim_run" / "checkpoint.json"));

  // eval on the saved checkpoint reproduces the training-time test report
  ASSERT_EQ(run("eval --checkpoint " + ws.p("mim_run/checkpoint.json") + " --data-dir " + ws.p("data") +
                " --graphs-dir " + ws.p("graphs") + " --split test --out " + ws.p("eval_out")),
            0);
  EXPECT_EQ(slurp(ws.root / "mim_run" / "eval_report.json"), slurp(ws.root / "eval_out" / "eval_report.json"));

  ASSERT_EQ(run("export-embeddings --checkpoint " + ws.p("mim_run/checkpoint.json") + " --data-dir " +
                ws.p("data") + " --graphs-dir " + ws.p("graphs") + " --which z_trans --split val --out " +
                ws.p("emb_out")),
            0);
  EXPECT_TRUE(fs::exists(ws.root / "emb_out" / "embeddings_z_trans_val.csv"));
}

TEST(Cli, SeededRerunIsByteIdentical) {
  Workspace ws;
  ASSERT_EQ(run("gen-data --out " + ws.p("d1") + " " + small_data_flags()), 0);
  ASSERT_EQ(run("gen-data --out " + ws.p("d2") + " " + small_data_flags()), 0);
  EXPECT_EQ(slurp(ws.root / "d1" / "manifest.jsonl"), slurp(ws.root / "d2" / "manifest.jsonl"));
  EXPECT_EQ(slurp(ws.root / "d1" / "images" / "000003.pgm"), slurp(ws.root / "d2" / "images" / "000003.pgm"));

  ASSERT_EQ(run("build-graphs --data-dir " + ws.p("d1") + " --out " + ws.p("g1")), 0);
  const std::string train = " --data-dir " + ws.p("d1") + " --graphs-dir " + ws.p("g1") +
                            " --steps 8 --batch 6 --eval-every 4 --seed 3";
  ASSERT_EQ(run("train-graph" + train + " --out " + ws.p("r1")), 0);
  ASSERT_EQ(run("train-graph" + train + " --out " + ws.p("r2")), 0);
  EXPECT_EQ(slurp(ws.root / "r1" / "checkpoint.json"), slurp(ws.root / "r2" / "checkpoint.json"));
  EXPECT_EQ(slurp(ws.root / "r1" / "train_records.csv"), slurp(ws.root / "r2" / "train_records.csv"));
  EXPECT_EQ(slurp(ws.root / "r1" / "eval_report.json"), slurp(ws.root / "r2" / "eval_report.json"));
}

TEST(Cli, FlagOverridesConfigFile) {
  Workspace ws;
  std::ofstream f(ws.root / "cfg.json");
  f << R"({"seed": 3, "data": {"train": 12, "val": 6, "test": 6}})";
  f.close();
  ASSERT_EQ(run("gen-data --config " + ws.p("cfg.json") + " --seed 7 --out " + ws.p("data")), 0);
  auto echo = slurp(ws.root / "data" / "config.json");
  EXPECT_NE(echo.find("\"seed\": 7"), std::string::npos) << echo;
}
