#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "caae/cli.hpp"

using namespace caae;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() /
          ("caae_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_config(dir / "config.json", {});
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string p(const std::string& rel) const { return (dir / rel).string(); }

  void write_config(const fs::path& path, const nlohmann::json& extra) const {
    nlohmann::json j = {{"train_path", p("data/train.jsonl")},
                        {"test_path", p("data/test.jsonl")},
                        {"vocab_path", p("data/vocab.txt")},
                        {"out_dir", p("run")},
                        {"min_count", 1},
                        {"hidden", 8},
                        {"layers", 1},
                        {"n_candidates", 2},
                        {"noise_width", 4},
                        {"epochs", 1},
                        {"batch_size", 8},
                        {"log_wall_time", false}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    std::ofstream(path) << j.dump();
  }

  Result run(std::vector<std::string> args) const {
    std::vector<const char*> argv = {"caae"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Result r;
    r.code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

  // Subcommand followed by the shared --config flag.
  Result cmd(const std::string& sub, std::vector<std::string> rest = {}) const {
    std::vector<std::string> args = {sub, "--config", p("config.json")};
    args.insert(args.end(), rest.begin(), rest.end());
    return run(args);
  }

  void prepare(std::size_t n = 40) const {
    auto r = cmd("prepare-data", {"--synthetic", std::to_string(n)});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  std::string train_into(const std::string& sub, std::vector<std::string> flags) const {
    flags.insert(flags.end(), {"--out-dir", p(sub)});
    auto r = cmd("train", flags);
    EXPECT_EQ(r.code, 0) << r.err;
    return p(sub + "/checkpoints/epoch_1.ckpt");
  }
};

}  // namespace

TEST_F(Cli, PrepareDataReportsCountsAndIsReproducible) {
  prepare();
  auto r = cmd("prepare-data");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("examples 40\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("label entailment "), std::string::npos);
  EXPECT_NE(r.out.find("skipped_malformed 0\n"), std::string::npos);
  const std::string first = slurp(p("data/vocab.txt"));
  ASSERT_FALSE(first.empty());
  ASSERT_EQ(cmd("prepare-data").code, 0);
  EXPECT_EQ(slurp(p("data/vocab.txt")), first);
}

TEST_F(Cli, EmptyTrainingFileIsADataError) {
  fs::create_directories(p("data"));
  std::ofstream(p("data/train.jsonl")).close();
  auto r = cmd("prepare-data");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no labelled examples"), std::string::npos) << r.err;
}

TEST_F(Cli, HelpListsConfigurationTable) {
  auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* row : {"train --baseline", "--fusion mosm --aux-n 10", "--no-classifier",
                          "--no-aux-loss", "random_control", "Exit codes"})
    EXPECT_NE(r.out.find(row), std::string::npos) << row;
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"train", "--fusion", "sum"}).code, 1);
  EXPECT_EQ(run({"train", "--baseline", "--probe"}).code, 1);
  write_config(dir / "bad.json", {{"hiden", 3}});
  auto r = run({"train", "--config", p("bad.json")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("config field 'hiden'"), std::string::npos) << r.err;
  write_config(dir / "bad2.json", {{"phase_prob", 2.0}});
  r = run({"train", "--config", p("bad2.json")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("config field 'phase_prob'"), std::string::npos) << r.err;
}

TEST_F(Cli, NoAuxLossFlagZeroesTheWeight) {
  prepare();
  train_into("noaux", {"--no-aux-loss", "--no-classifier"});
  const auto j = nlohmann::json::parse(slurp(p("noaux/config.json")));
  EXPECT_EQ(j["w_aux"], 0.0);
  EXPECT_EQ(j["w_cls"], 0.0);
  EXPECT_EQ(j["w_adv"], 1.0);
  std::ifstream metrics(p("noaux/metrics.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(metrics, line)) {
    const auto m = nlohmann::json::parse(line);
    EXPECT_FALSE(m["losses"].contains("auxiliary"));
    EXPECT_FALSE(m["losses"].contains("cls_real"));
    ++lines;
  }
  EXPECT_EQ(lines, 5u);
}

TEST_F(Cli, GenerateFormatAndReproducibility) {
  prepare();
  const auto ck = train_into("full", {});
  auto bad = cmd("generate", {"--checkpoint", ck, "--hypothesis", "a dog runs .", "--label", "maybe"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("valid labels: entailment, neutral, contradiction"), std::string::npos);

  auto a = cmd("generate", {"--checkpoint", ck, "--hypothesis", "a dog is running .", "--label",
                            "neutral", "--count", "3", "--out-dir", p("gen")});
  ASSERT_EQ(a.code, 0) << a.err;
  std::istringstream lines(a.out);
  std::string l;
  std::getline(lines, l);
  EXPECT_EQ(l, "H: a dog is running .");
  std::getline(lines, l);
  EXPECT_EQ(l, "L: neutral");
  for (int i = 1; i <= 3; ++i) {
    ASSERT_TRUE(std::getline(lines, l));
    EXPECT_EQ(l.rfind("S" + std::to_string(i) + ": ", 0), 0u) << l;
  }
  EXPECT_EQ(slurp(p("gen/samples.txt")), a.out);
  auto b = cmd("generate", {"--checkpoint", ck, "--hypothesis", "a dog is running .", "--label",
                            "neutral", "--count", "3", "--out-dir", p("gen")});
  EXPECT_EQ(a.out, b.out);
}

TEST_F(Cli, EvaluateSchemaAndDebugFlags) {
  prepare();
  const auto full = train_into("full", {});
  const auto probe = train_into("probe", {"--probe"});
  const auto base = train_into("base", {"--baseline"});

  auto r = cmd("evaluate", {"--checkpoint", full, "--probe-checkpoint", probe, "--out-dir",
                            p("ev"), "--latents", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(p("ev/eval.json")));
  for (const char* k : {"count", "accuracy", "labels", "confusion", "confusion_counts",
                        "real_accuracy", "random_control", "diversity_count", "failures"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["count"], 40);
  std::ifstream lat(p("ev/latents.jsonl"));
  std::size_t rows = 0;
  for (std::string line; std::getline(lat, line);) ++rows;
  EXPECT_EQ(rows, 80u);

  r = cmd("evaluate", {"--checkpoint", full, "--probe-checkpoint", probe, "--out-dir", p("fx"),
                       "--fixed-output", "a man is outside ."});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto fx = nlohmann::json::parse(slurp(p("fx/eval.json")));
  EXPECT_EQ(fx["bleu_ss"], 100.0);

  r = cmd("evaluate", {"--checkpoint", base, "--probe-checkpoint", probe, "--out-dir", p("id"),
                       "--identity-permutation"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto id = nlohmann::json::parse(slurp(p("id/eval.json")));
  EXPECT_EQ(id["random_control"], id["real_accuracy"]);

  r = cmd("evaluate", {"--checkpoint", full, "--probe-checkpoint", full});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("not a probe checkpoint"), std::string::npos) << r.err;
}

TEST_F(Cli, ResumeContinuesTheRun) {
  prepare(24);
  const auto ck = train_into("r", {});
  auto r = cmd("train", {"--checkpoint", ck, "--epochs", "2", "--out-dir", p("r")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(p("r/checkpoints/epoch_2.ckpt")));
  EXPECT_NE(r.out.find("iterations 6\n"), std::string::npos) << r.out;
}

TEST_F(Cli, GradCheckPassesAndFaultFails) {
  auto ok = cmd("grad-check", {"--max-coords", "4"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("ops 27/27 registered"), std::string::npos) << ok.out;
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
  auto bad = cmd("grad-check", {"--max-coords", "4", "--fault", "tanh"});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("FAIL tanh"), std::string::npos) << bad.out;
}

TEST_F(Cli, BinaryExitCodes) {
  const std::string bin = CAAE_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int s = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("frobnicate"), 1);
  EXPECT_EQ(status("prepare-data --config " + p("config.json")), 2);
  EXPECT_EQ(status("prepare-data --synthetic 12 --config " + p("config.json")), 0);
}
