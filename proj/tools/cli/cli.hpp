#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tempo/dispatch.hpp"
#include "tempo/encoder.hpp"
#include "tempo/sim.hpp"
#include "tempo/taskmodel.hpp"
#include "tempo/trainer.hpp"
#include "tempo/urgency.hpp"

namespace tempo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// Everything a subcommand may read. Serialized as the effective config.
struct ExperimentConfig {
  std::string taskset;  // empty: use `generator`
  TaskSetConfig generator;
  std::string policy = "edf";
  int cores = 1;
  Tick horizon = 0;  // 0: one hyperperiod, capped at kMaxDefaultHorizon
  std::uint64_t seed = 1;
  RewardConfig reward;
  QuantizerConfig quantizer;
  EncoderConfig encoder;
  TrainConfig train;
  ExplorationConfig explore;
  int bc_epochs = 0;
  std::string teacher = "edf";
  bool mitigate = false;
  MitigationConfig mitigation;
  std::vector<BurstSpec> bursts;
  std::string checkpoint;
  std::string out = "out";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

inline constexpr Tick kMaxDefaultHorizon = 100000;

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Per-component seed streams split off the root seed.
enum SeedStream : std::uint64_t { kGenerate = 1, kInit = 2, kTrain = 3, kPolicy = 4, kBench = 5, kBC = 6 };

// Independent per-component seed derived from the root seed.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t component);

// Worker count for parallel commands: TEMPONET_THREADS if set and positive,
// otherwise hardware concurrency (at least 1).
unsigned worker_count();

// Full command line, argv[0] included. Never throws; returns an exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tempo::cli
