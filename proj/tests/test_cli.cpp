#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli/cli.hpp"
#include "support.hpp"

namespace tempo::cli {
namespace {

namespace fs = std::filesystem;
using tempo::testing::TempDir;

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run tempo(std::vector<std::string> args) {
  args.insert(args.begin(), "tempo");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return Run{code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return read_file(p); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTaskset =
    R"({"tasks":[{"id":1,"period":4,"wcet":1,"deadline":4},{"id":2,"period":6,"wcet":2,"deadline":6},{"id":3,"period":12,"wcet":3,"deadline":12}]})";

TEST(Cli, GenerateWritesTasksetAndConfig) {
  TempDir dir("cli_gen");
  const auto r = tempo({"generate", "--n", "5", "--util", "0.6", "--seed", "3", "--out", dir.path().string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto tasks = load_taskset(dir.path() / "taskset.json");
  EXPECT_EQ(tasks.size(), 5U);
  EXPECT_TRUE(fs::exists(dir.path() / "effective_config.json"));
}

TEST(Cli, ConfigErrorsExitTwo) {
  TempDir dir("cli_err");
  EXPECT_EQ(tempo({"simulate", "--taskset", (dir.path() / "missing.json").string()}).code, kExitConfig);
  EXPECT_EQ(tempo({"simulate", "--bogus-flag"}).code, kExitConfig);
  EXPECT_EQ(tempo({}).code, kExitConfig);
  write(dir.path() / "bad.json", R"({"cores": 1, "not_a_key": 3})");
  EXPECT_EQ(tempo({"simulate", "--config", (dir.path() / "bad.json").string()}).code, kExitConfig);
  write(dir.path() / "ts.json", kTaskset);
  EXPECT_EQ(tempo({"simulate", "--taskset", (dir.path() / "ts.json").string(), "--policy", "nonsense"}).code,
            kExitConfig);
}

TEST(Cli, DivergenceExitsThreeWithCheckpoint) {
  TempDir dir("cli_div");
  write(dir.path() / "ts.json", kTaskset);
  write(dir.path() / "cfg.json", R"({"train": {"divergence_threshold": 1e-12}})");
  const auto out = dir.path() / "out";
  const auto r = tempo({"train", "--config", (dir.path() / "cfg.json").string(), "--taskset",
                        (dir.path() / "ts.json").string(), "--episodes", "2", "--horizon", "40", "--warmup", "8",
                        "--batch", "4", "--d", "8", "--heads", "2", "--out", out.string()});
  EXPECT_EQ(r.code, kExitRuntime) << r.err;
  EXPECT_TRUE(fs::exists(out / "checkpoint.diverged.json"));
}

TEST(Cli, SimulateIsByteReproducible) {
  TempDir dir("cli_rep");
  write(dir.path() / "ts.json", kTaskset);
  auto once = [&](const std::string& name) {
    const auto out = dir.path() / name;
    const auto r = tempo({"simulate", "--taskset", (dir.path() / "ts.json").string(), "--policy", "random:4",
                          "--horizon", "200", "--seed", "9", "--out", out.string()});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    return std::make_pair(slurp(out / "trace.csv"), slurp(out / "metrics.json"));
  };
  EXPECT_EQ(once("a"), once("b"));
}

TEST(Cli, TrainAndEvalAreByteReproducible) {
  TempDir dir("cli_train");
  write(dir.path() / "ts.json", kTaskset);
  auto once = [&](const std::string& name) {
    const auto out = dir.path() / name;
    const auto r = tempo({"train", "--taskset", (dir.path() / "ts.json").string(), "--episodes", "2", "--horizon",
                          "48", "--warmup", "16", "--batch", "8", "--d", "8", "--heads", "2", "--seed", "5", "--out",
                          out.string()});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    const auto ev = dir.path() / (name + "_eval");
    const auto e = tempo({"eval", "--taskset", (dir.path() / "ts.json").string(), "--checkpoint",
                          (out / "checkpoint.json").string(), "--horizon", "48", "--mitigate", "on", "--out",
                          ev.string()});
    EXPECT_EQ(e.code, kExitOk) << e.err;
    EXPECT_TRUE(fs::exists(ev / "mitigation.csv"));
    EXPECT_TRUE(fs::exists(ev / "diagnostics.csv"));
    return slurp(out / "curve.csv") + slurp(out / "checkpoint.json") + slurp(ev / "trace.csv");
  };
  EXPECT_EQ(once("a"), once("b"));
}

TEST(Cli, EffectiveConfigRoundTrips) {
  TempDir dir("cli_cfg");
  write(dir.path() / "ts.json", kTaskset);
  const auto out = dir.path() / "o";
  ASSERT_EQ(tempo({"simulate", "--taskset", (dir.path() / "ts.json").string(), "--reward", "r3", "--lambda", "0.25",
                   "--Q", "12", "--burst", "5,3,2,4", "--out", out.string()})
                .code,
            kExitOk);
  const auto j = nlohmann::json::parse(slurp(out / "effective_config.json"));
  const auto cfg = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(cfg), j);
  EXPECT_EQ(cfg.quantizer.Q, 12);
  EXPECT_DOUBLE_EQ(cfg.reward.lambda, 0.25);
  ASSERT_EQ(cfg.bursts.size(), 1U);

  // Reloading the dumped config reproduces it exactly.
  const auto out2 = dir.path() / "o2";
  ASSERT_EQ(tempo({"simulate", "--config", (out / "effective_config.json").string(), "--out", out2.string()}).code,
            kExitOk);
  auto cfg2 = nlohmann::json::parse(slurp(out2 / "effective_config.json")).get<ExperimentConfig>();
  cfg2.out = cfg.out;
  EXPECT_EQ(cfg2, cfg);
  EXPECT_EQ(slurp(out / "trace.csv"), slurp(out2 / "trace.csv"));
}

TEST(Cli, FlagsOverrideConfigFile) {
  TempDir dir("cli_over");
  write(dir.path() / "ts.json", kTaskset);
  write(dir.path() / "cfg.json", R"({"cores": 2, "horizon": 30, "policy": "fcfs"})");
  const auto out = dir.path() / "o";
  ASSERT_EQ(tempo({"simulate", "--config", (dir.path() / "cfg.json").string(), "--taskset",
                   (dir.path() / "ts.json").string(), "--horizon", "60", "--out", out.string()})
                .code,
            kExitOk);
  const auto cfg = nlohmann::json::parse(slurp(out / "effective_config.json")).get<ExperimentConfig>();
  EXPECT_EQ(cfg.horizon, 60);
  EXPECT_EQ(cfg.cores, 2);
  EXPECT_EQ(cfg.policy, "fcfs");
}

TEST(Cli, SweepEmitsOneRowPerValue) {
  TempDir dir("cli_sweep");
  const auto out = dir.path() / "o";
  const auto r = tempo({"sweep", "--grid", "Q=4,8,16", "--sets", "2", "--n", "3", "--util", "0.7", "--horizon",
                        "60", "--out", out.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream csv(slurp(out / "sweep.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "key,value,sets,compliance_mean,compliance_std,pitmd_mean");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(Cli, BenchAttnAndDistillWriteArtifacts) {
  TempDir dir("cli_bench");
  const auto out = dir.path() / "b";
  ASSERT_EQ(tempo({"bench-attn", "--sizes", "8..64", "--repeats", "1", "--d", "8", "--heads", "2", "--out",
                   out.string()})
                .code,
            kExitOk);
  EXPECT_TRUE(fs::exists(out / "bench.csv"));
  const auto fit = nlohmann::json::parse(slurp(out / "fit.json"));
  EXPECT_TRUE(fit.contains("exponent"));

  write(dir.path() / "ts.json", kTaskset);
  const auto dout = dir.path() / "d";
  ASSERT_EQ(tempo({"distill", "--taskset", (dir.path() / "ts.json").string(), "--policy", "wslack:0.7,0.3",
                   "--horizon", "120", "--out", dout.string()})
                .code,
            kExitOk);
  const auto rule = nlohmann::json::parse(slurp(dout / "distill.json"));
  EXPECT_DOUBLE_EQ(rule.at("agreement").get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(dout / "heatmap.csv"));
}

TEST(Cli, DeriveSeedSplitsStreams) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

}  // namespace
}  // namespace tempo::cli
