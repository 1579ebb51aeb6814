#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tempo/dispatch.hpp"
#include "tempo/encoder.hpp"
#include "tempo/num/params.hpp"
#include "tempo/sim.hpp"
#include "tempo/urgency.hpp"

namespace tempo {

// Raw environment state; re-tokenized with the current parameters on replay.
struct Snapshot {
  Tick clock = 0;
  std::vector<JobInstance> jobs;

  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

Snapshot snapshot_of(const SimState& state);

struct Transition {
  Snapshot state;
  // Selected token rows of `state` (1 + job index, or 0 for idle).
  std::vector<int> rows;
  double reward = 0.0;
  Snapshot next;
  bool done = false;
};

// FIFO ring of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return items_.size(); }
  // i = 0 is the oldest retained transition.
  const Transition& at(std::size_t i) const;
  // Distinct indices, uniformly drawn. Throws when n exceeds size().
  std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::vector<Transition> items_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

struct ExplorationConfig {
  double eps0 = 1.0;
  double eps_min = 0.05;
  int decay_episodes = 100;
  double beta = 0.0;  // inverse-visit bonus weight; 0 disables it

  friend bool operator==(const ExplorationConfig&, const ExplorationConfig&) = default;
};

// Linear from eps0 at episode 0 to eps_min at decay_episodes, flat after.
double epsilon_at(const ExplorationConfig& cfg, int episode);

// Visit counts keyed by a hash of the sorted slack bins of a state and the
// chosen task id.
class VisitCounter {
 public:
  static std::uint64_t key(const TokenBatch& tokens, int row);
  std::int64_t count(std::uint64_t key) const;
  void increment(std::uint64_t key);
  std::int64_t total() const { return total_; }

 private:
  std::unordered_map<std::uint64_t, std::int64_t> counts_;
  std::int64_t total_ = 0;
};

struct ExploreOutcome {
  std::vector<int> rows;  // empty means every core idles
  bool explored = false;
};

// With probability epsilon a uniformly random valid action; otherwise the
// greedy action on q + beta / sqrt(N(s,a) + 1). Visit counts are incremented
// only on the greedy path and only when beta > 0.
ExploreOutcome select_exploratory(std::span<const double> q, const TokenBatch& tokens, int cores, double epsilon,
                                  double beta, VisitCounter* visits, std::mt19937_64& rng);

// Greedy rows: argmax (idle may win) for one core, masked greedy otherwise.
std::vector<int> greedy_rows(std::span<const double> q, int cores);

// Task ids behind `rows` placed on cores.
ActionSet rows_to_action(const SimState& state, std::span<const int> rows);

struct TrainConfig {
  double gamma = 0.99;
  num::AdamConfig adam;
  int batch_size = 64;
  std::size_t capacity = 100000;
  std::int64_t warmup = 1000;
  int train_interval = 1;
  double tau = 0.005;
  int episodes = 0;
  Tick horizon = 500;
  std::uint64_t seed = 1;
  double grad_clip = 10.0;  // 0 disables clipping
  double divergence_threshold = 1e6;
  // Run a greedy (epsilon = 0) evaluation episode after every episode.
  bool greedy_eval = false;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate_train_config(const TrainConfig& cfg);

// y = r / |A| + gamma * max_a' Q_target(s', a'), or r / |A| when done.
std::vector<double> td_targets(std::span<const Transition* const> batch, const num::ParamStore& target,
                               const EncoderConfig& enc, const QuantizerConfig& quant, double gamma);

// Mean over every selected token of (y - Q(s, a))^2. Fills `grads` when given.
// Throws NumericError naming the batch index on a non-finite prediction.
double dqn_loss(std::span<const Transition* const> batch, const num::ParamStore& params, std::span<const double> y,
                const EncoderConfig& enc, const QuantizerConfig& quant, num::GradStore* grads);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainSetup {
  TaskSet tasks;
  int cores = 1;
  RewardConfig reward;
  std::vector<BurstSpec> bursts;
  EncoderConfig enc;
  QuantizerConfig quant;  // resolved
  ExplorationConfig explore;
  TrainConfig train;
  // Written before TrainingDiverged is thrown.
  std::optional<std::filesystem::path> divergence_checkpoint;
};

struct CurvePoint {
  int episode = 0;
  double epsilon = 0.0;
  double loss = 0.0;  // mean over the episode's updates, 0 without updates
  double compliance = 0.0;
  double total_reward = 0.0;
  double greedy_compliance = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  num::ParamStore params;
  std::vector<CurvePoint> curve;
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;
  VisitCounter visits;
};

TrainResult train(const TrainSetup& setup, num::ParamStore initial);

// CSV: episode,epsilon,loss,compliance[,greedy_compliance when recorded]
std::string learning_curve_csv(std::span<const CurvePoint> curve);

// Greedy agent over the Q-network. With mitigation enabled the short-slack
// fraction drives the sparsity fraction of the encoder each tick.
class AgentPolicy final : public Policy {
 public:
  AgentPolicy(num::ParamStore params, EncoderConfig enc, QuantizerConfig quant);

  void enable_mitigation(const MitigationConfig& cfg);
  ActionSet act(const SimState& state) override;
  std::string name() const override { return "agent"; }

  const std::vector<double>& last_q() const { return last_q_; }
  const std::vector<int>& last_rows() const { return last_rows_; }
  const TokenBatch& last_tokens() const { return last_tokens_; }
  const AttentionRecord& last_attention() const { return last_attention_; }
  double last_alpha() const { return last_alpha_; }
  void record_attention(bool on) { record_attention_ = on; }

 private:
  num::ParamStore params_;
  EncoderConfig enc_;
  QuantizerConfig quant_;
  std::optional<MitigationState> mitigation_;
  bool record_attention_ = false;
  std::vector<double> last_q_;
  std::vector<int> last_rows_;
  TokenBatch last_tokens_;
  AttentionRecord last_attention_;
  double last_alpha_ = 0.0;
};

EpisodeResult evaluate_greedy(const TrainSetup& setup, const num::ParamStore& params);

struct BCSample {
  Snapshot state;
  std::vector<int> rows;
};

// Runs `episodes` teacher episodes and records (state, teacher rows) pairs.
std::vector<BCSample> collect_teacher_samples(const TaskSet& tasks, Policy& teacher, const EpisodeConfig& cfg,
                                              int episodes = 1);

struct BCConfig {
  int epochs = 50;
  num::AdamConfig adam;
  int batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 1;
};

// Mean over samples of -sum log softmax(q)[teacher row], softmax over the
// sample's valid rows.
double bc_loss(std::span<const BCSample> samples, const num::ParamStore& params, const EncoderConfig& enc,
               const QuantizerConfig& quant, num::GradStore* grads);

struct BCResult {
  num::ParamStore params;
  // Mean minibatch loss per epoch; with full batches this is the loss before the update.
  std::vector<double> epoch_loss;
};

BCResult bc_pretrain(std::span<const BCSample> samples, num::ParamStore params, const EncoderConfig& enc,
                     const QuantizerConfig& quant, const BCConfig& cfg);

struct Checkpoint {
  num::ParamStore params;
  EncoderConfig enc;
  QuantizerConfig quant;
  std::string config_hash;
};

void save_checkpoint(const std::filesystem::path& path, const num::ParamStore& params, const EncoderConfig& enc,
                     const QuantizerConfig& quant, const std::string& config_json = "{}");
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tempo
