#include "tempo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tempo/baselines.hpp"
#include "tempo/config_io.hpp"
#include "tempo/error.hpp"

namespace tempo {

using num::Array2;
using num::ParamStore;
using num::Tape;
using num::Var;

Snapshot snapshot_of(const SimState& state) { return Snapshot{state.clock, state.jobs}; }

ReplayBuffer::ReplayBuffer(std::size_t capacity) : items_(capacity) {
  if (capacity == 0) throw ContractError("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  const std::size_t cap = items_.size();
  items_[(head_ + size_) % cap] = std::move(t);
  if (size_ < cap) {
    ++size_;
  } else {
    head_ = (head_ + 1) % cap;
  }
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw ContractError("ReplayBuffer::at: index out of range");
  return items_[(head_ + i) % items_.size()];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (n > size_) throw ContractError("ReplayBuffer::sample: batch larger than buffer");
  // Partial Fisher-Yates over an index table.
  std::vector<std::size_t> idx(size_);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, size_ - 1)(rng);
    std::swap(idx[i], idx[j]);
    out.push_back(&at(idx[i]));
  }
  return out;
}

double epsilon_at(const ExplorationConfig& cfg, int episode) {
  if (cfg.decay_episodes <= 0 || episode >= cfg.decay_episodes) return cfg.eps_min;
  const double frac = static_cast<double>(std::max(episode, 0)) / static_cast<double>(cfg.decay_episodes);
  return cfg.eps0 + (cfg.eps_min - cfg.eps0) * frac;
}

std::uint64_t VisitCounter::key(const TokenBatch& tokens, int row) {
  std::vector<int> bins;
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    if (tokens.valid[r] && tokens.task_id[r] != kIdle) bins.push_back(tokens.bin[r]);
  }
  std::sort(bins.begin(), bins.end());
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (int b : bins) mix(static_cast<std::uint64_t>(b));
  mix(0xfeedfacecafebeefULL);
  mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(tokens.task_id[static_cast<std::size_t>(row)])));
  return h;
}

std::int64_t VisitCounter::count(std::uint64_t key) const {
  auto it = counts_.find(key);
  return it == counts_.end() ? 0 : it->second;
}

void VisitCounter::increment(std::uint64_t key) {
  ++counts_[key];
  ++total_;
}

std::vector<int> greedy_rows(std::span<const double> q, int cores) {
  if (cores == 1) {
    const int a = argmax_action(q);
    return a == kIdle ? std::vector<int>{} : std::vector<int>{a};
  }
  return masked_greedy(q, cores);
}

ExploreOutcome select_exploratory(std::span<const double> q, const TokenBatch& tokens, int cores, double epsilon,
                                  double beta, VisitCounter* visits, std::mt19937_64& rng) {
  ExploreOutcome out;
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon) {
    out.explored = true;
    std::vector<int> tasks;
    for (std::size_t r = 1; r < q.size(); ++r) {
      if (!(std::isinf(q[r]) && q[r] < 0)) tasks.push_back(static_cast<int>(r));
    }
    if (cores == 1) {
      const auto pick = std::uniform_int_distribution<std::size_t>(0, tasks.size())(rng);
      if (pick > 0) out.rows.push_back(tasks[pick - 1]);
    } else {
      std::shuffle(tasks.begin(), tasks.end(), rng);
      if (tasks.size() > static_cast<std::size_t>(cores)) tasks.resize(static_cast<std::size_t>(cores));
      out.rows = std::move(tasks);
    }
    return out;
  }
  if (beta <= 0.0 || visits == nullptr) {
    out.rows = greedy_rows(q, cores);
    return out;
  }
  std::vector<double> adjusted(q.begin(), q.end());
  for (std::size_t r = 0; r < adjusted.size(); ++r) {
    if (std::isinf(adjusted[r]) && adjusted[r] < 0) continue;
    const auto n = visits->count(VisitCounter::key(tokens, static_cast<int>(r)));
    adjusted[r] += beta / std::sqrt(static_cast<double>(n) + 1.0);
  }
  out.rows = greedy_rows(adjusted, cores);
  if (out.rows.empty()) {
    visits->increment(VisitCounter::key(tokens, kIdle));
  } else {
    for (int r : out.rows) visits->increment(VisitCounter::key(tokens, r));
  }
  return out;
}

ActionSet rows_to_action(const SimState& state, std::span<const int> rows) {
  std::vector<int> tasks;
  for (int r : rows) {
    if (r == kIdle) continue;
    if (r < 0 || static_cast<std::size_t>(r) > state.jobs.size()) throw ContractError("rows_to_action: row out of range");
    tasks.push_back(state.jobs[static_cast<std::size_t>(r - 1)].task_id);
  }
  return assign_cores(state, tasks);
}

void validate_train_config(const TrainConfig& c) {
  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) throw ContractError("train: gamma must lie in [0, 1)");
  if (!(c.tau > 0.0 && c.tau <= 1.0)) throw ContractError("train: tau must lie in (0, 1]");
  if (c.batch_size < 1) throw ContractError("train: batch size must be positive");
  if (c.capacity < 1) throw ContractError("train: buffer capacity must be positive");
  if (c.train_interval < 1) throw ContractError("train: train interval must be positive");
  if (c.episodes < 0) throw ContractError("train: episodes must be >= 0");
  if (c.horizon < 1) throw ContractError("train: horizon must be positive");
  if (!(c.adam.lr > 0.0)) throw ContractError("train: learning rate must be positive");
}

namespace {

TokenBatch pack_snapshots(std::span<const Transition* const> batch, bool next, const QuantizerConfig& quant) {
  std::vector<TokenBatch> parts;
  parts.reserve(batch.size());
  for (const auto* t : batch) {
    const Snapshot& s = next ? t->next : t->state;
    parts.push_back(make_token_batch(s.clock, s.jobs, quant));
  }
  return pack(parts);
}

std::vector<int> effective_rows(const Transition& t) { return t.rows.empty() ? std::vector<int>{kIdle} : t.rows; }

}  // namespace

std::vector<double> td_targets(std::span<const Transition* const> batch, const ParamStore& target,
                               const EncoderConfig& enc, const QuantizerConfig& quant, double gamma) {
  if (batch.empty()) throw ContractError("td_targets: empty batch");
  std::vector<double> y(batch.size());
  std::vector<const Transition*> live;
  for (const auto* t : batch) {
    if (!t->done && gamma > 0.0) live.push_back(t);
  }
  std::vector<double> next_max;
  if (!live.empty()) {
    const TokenBatch tokens = pack_snapshots(live, true, quant);
    const auto q = q_scores(target, tokens, enc);
    for (std::size_t s = 0; s < tokens.samples(); ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t r = tokens.offsets[s]; r < tokens.offsets[s + 1]; ++r) best = std::max(best, q[r]);
      next_max.push_back(best);
    }
  }
  std::size_t li = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto* t = batch[i];
    const double share = t->reward / static_cast<double>(effective_rows(*t).size());
    y[i] = share;
    if (!t->done && gamma > 0.0) y[i] += gamma * next_max[li++];
  }
  return y;
}

double dqn_loss(std::span<const Transition* const> batch, const ParamStore& params, std::span<const double> y,
                const EncoderConfig& enc, const QuantizerConfig& quant, num::GradStore* grads) {
  if (batch.empty()) throw ContractError("dqn_loss: empty batch");
  if (y.size() != batch.size()) throw ContractError("dqn_loss: one target per transition required");
  const TokenBatch tokens = pack_snapshots(batch, false, quant);
  Tape tape;
  auto fwd = forward(tape, params, tokens, enc, ForwardOptions{.trainable = grads != nullptr});
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  std::vector<double> targets;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (int r : effective_rows(*batch[i])) {
      if (static_cast<std::size_t>(r) >= tokens.sample_rows(i)) throw ContractError("dqn_loss: action row out of range");
      const std::size_t row = tokens.offsets[i] + static_cast<std::size_t>(r);
      if (!std::isfinite(fwd.q.value()[row])) {
        throw NumericError("dqn_loss: non-finite Q at batch index " + std::to_string(i));
      }
      picks.emplace_back(row, 0);
      targets.push_back(y[i]);
    }
  }
  Var pred = num::gather(fwd.q, picks);
  Var diff = num::sub(pred, tape.constant(Array2::column(targets)));
  Var loss = num::mean(num::square(diff));
  const double value = loss.value()[0];
  if (grads) {
    tape.backward(loss);
    *grads = params.zeros_like();
    tape.collect_grads(*grads);
  }
  return value;
}

namespace {

class ExplorePolicy final : public Policy {
 public:
  ExplorePolicy(const ParamStore& params, const TrainSetup& setup, VisitCounter& visits, std::mt19937_64& rng)
      : params_(params), setup_(setup), visits_(visits), rng_(rng) {}

  ActionSet act(const SimState& state) override {
    const TokenBatch tokens = make_token_batch(state.clock, state.jobs, setup_.quant);
    const auto q = q_scores(params_, tokens, setup_.enc);
    auto choice = select_exploratory(q, tokens, state.cores, epsilon, setup_.explore.beta, &visits_, rng_);
    rows = choice.rows;
    return rows_to_action(state, rows);
  }
  std::string name() const override { return "explore"; }

  double epsilon = 1.0;
  std::vector<int> rows;

 private:
  const ParamStore& params_;
  const TrainSetup& setup_;
  VisitCounter& visits_;
  std::mt19937_64& rng_;
};

EpisodeConfig episode_config(const TrainSetup& setup) {
  EpisodeConfig ec;
  ec.cores = setup.cores;
  ec.horizon = setup.train.horizon;
  ec.reward = setup.reward;
  ec.bursts = setup.bursts;
  return ec;
}

}  // namespace

TrainResult train(const TrainSetup& setup, ParamStore initial) {
  validate_train_config(setup.train);
  validate_encoder(setup.enc);
  validate_quantizer(setup.quant);
  const TrainConfig& tc = setup.train;
  TrainResult result;
  result.params = std::move(initial);
  ParamStore target = result.params;
  num::AdamState adam;
  ReplayBuffer buffer(tc.capacity);
  std::mt19937_64 rng(tc.seed);
  const EpisodeConfig ec = episode_config(setup);

  for (int ep = 0; ep < tc.episodes; ++ep) {
    ExplorePolicy policy(result.params, setup, result.visits, rng);
    policy.epsilon = epsilon_at(setup.explore, ep);
    double loss_sum = 0.0;
    int loss_n = 0;
    auto observer = [&](const SimState& before, const ActionSet&, const StepResult& res, const SimState& after) {
      Transition t;
      t.state = snapshot_of(before);
      t.rows = policy.rows;
      t.reward = res.reward;
      t.next = snapshot_of(after);
      t.done = after.clock >= tc.horizon;
      buffer.push(std::move(t));
      ++result.env_steps;
      if (result.env_steps < tc.warmup || result.env_steps % tc.train_interval != 0) return;
      const auto n = std::min(buffer.size(), static_cast<std::size_t>(tc.batch_size));
      const auto batch = buffer.sample(n, rng);
      const auto y = td_targets(batch, target, setup.enc, setup.quant, tc.gamma);
      num::GradStore grads;
      const double loss = dqn_loss(batch, result.params, y, setup.enc, setup.quant, &grads);
      if (!std::isfinite(loss) || loss > tc.divergence_threshold) {
        if (setup.divergence_checkpoint) save_checkpoint(*setup.divergence_checkpoint, result.params, setup.enc, setup.quant);
        throw TrainingDiverged("training diverged at episode " + std::to_string(ep) + ", step " +
                               std::to_string(result.env_steps) + ": loss " + std::to_string(loss));
      }
      if (tc.grad_clip > 0.0) num::clip_grad_norm(grads, tc.grad_clip);
      num::adam_step(result.params, grads, adam, tc.adam);
      num::polyak_update(target, result.params, tc.tau);
      ++result.updates;
      loss_sum += loss;
      ++loss_n;
    };
    const auto episode = run_episode(setup.tasks, policy, ec, observer);
    CurvePoint point;
    point.episode = ep;
    point.epsilon = policy.epsilon;
    point.loss = loss_n > 0 ? loss_sum / loss_n : 0.0;
    point.compliance = episode.metrics.compliance_rate;
    point.total_reward = episode.total_reward;
    if (tc.greedy_eval) point.greedy_compliance = evaluate_greedy(setup, result.params).metrics.compliance_rate;
    result.curve.push_back(point);
  }
  return result;
}

std::string learning_curve_csv(std::span<const CurvePoint> curve) {
  const bool greedy = std::any_of(curve.begin(), curve.end(), [](const CurvePoint& p) {
    return !std::isnan(p.greedy_compliance);
  });
  std::string out = greedy ? "episode,epsilon,loss,compliance,greedy_compliance\n" : "episode,epsilon,loss,compliance\n";
  char buf[160];
  for (const auto& p : curve) {
    if (greedy) {
      std::snprintf(buf, sizeof buf, "%d,%.6f,%.9g,%.6f,%.6f\n", p.episode, p.epsilon, p.loss, p.compliance,
                    p.greedy_compliance);
    } else {
      std::snprintf(buf, sizeof buf, "%d,%.6f,%.9g,%.6f\n", p.episode, p.epsilon, p.loss, p.compliance);
    }
    out += buf;
  }
  return out;
}

AgentPolicy::AgentPolicy(ParamStore params, EncoderConfig enc, QuantizerConfig quant)
    : params_(std::move(params)), enc_(std::move(enc)), quant_(std::move(quant)) {
  validate_encoder(enc_);
  validate_quantizer(quant_);
}

void AgentPolicy::enable_mitigation(const MitigationConfig& cfg) {
  validate_mitigation(cfg);
  mitigation_ = MitigationState{cfg};
}

ActionSet AgentPolicy::act(const SimState& state) {
  last_tokens_ = make_token_batch(state.clock, state.jobs, quant_);
  EncoderConfig enc = enc_;
  if (mitigation_) {
    last_alpha_ = update_mitigation(*mitigation_, short_slack_fraction(state.jobs, state.clock, quant_.delta));
    enc.sparse.alpha = last_alpha_;
  }
  Tape tape;
  auto fwd = forward(tape, params_, last_tokens_, enc, ForwardOptions{.trainable = false, .record_attention = record_attention_});
  last_q_ = std::move(fwd.q_values);
  last_attention_ = std::move(fwd.attention);
  last_rows_ = greedy_rows(last_q_, state.cores);
  return rows_to_action(state, last_rows_);
}

EpisodeResult evaluate_greedy(const TrainSetup& setup, const ParamStore& params) {
  AgentPolicy agent(params, setup.enc, setup.quant);
  return run_episode(setup.tasks, agent, episode_config(setup));
}

std::vector<BCSample> collect_teacher_samples(const TaskSet& tasks, Policy& teacher, const EpisodeConfig& cfg,
                                              int episodes) {
  std::vector<BCSample> out;
  for (int e = 0; e < episodes; ++e) {
    run_episode(tasks, teacher, cfg, [&](const SimState& before, const ActionSet& action, const StepResult&, const SimState&) {
      BCSample s;
      s.state = snapshot_of(before);
      for (int task : action.cores) {
        if (task == kIdle) continue;
        for (std::size_t j = 0; j < before.jobs.size(); ++j) {
          if (before.jobs[j].task_id == task) s.rows.push_back(static_cast<int>(j) + 1);
        }
      }
      if (s.rows.empty()) s.rows.push_back(kIdle);
      out.push_back(std::move(s));
    });
  }
  return out;
}

double bc_loss(std::span<const BCSample> samples, const ParamStore& params, const EncoderConfig& enc,
               const QuantizerConfig& quant, num::GradStore* grads) {
  if (samples.empty()) {
    if (grads) *grads = params.zeros_like();
    return 0.0;
  }
  std::vector<TokenBatch> parts;
  for (const auto& s : samples) parts.push_back(make_token_batch(s.state.clock, s.state.jobs, quant));
  const TokenBatch tokens = pack(parts);
  Tape tape;
  auto fwd = forward(tape, params, tokens, enc, ForwardOptions{.trainable = grads != nullptr});
  std::vector<std::vector<std::size_t>> groups(tokens.samples());
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t s = 0; s < tokens.samples(); ++s) {
    for (std::size_t r = tokens.offsets[s]; r < tokens.offsets[s + 1]; ++r) {
      if (tokens.valid[r]) groups[s].push_back(r);
    }
    for (int r : samples[s].rows) picks.emplace_back(tokens.offsets[s] + static_cast<std::size_t>(r), 0);
  }
  Var logp = num::group_log_softmax(fwd.q, groups);
  Var nll = num::mul_scalar(num::sum(num::gather(logp, picks)), -1.0 / static_cast<double>(samples.size()));
  const double value = nll.value()[0];
  if (grads) {
    tape.backward(nll);
    *grads = params.zeros_like();
    tape.collect_grads(*grads);
  }
  return value;
}

BCResult bc_pretrain(std::span<const BCSample> samples, ParamStore params, const EncoderConfig& enc,
                     const QuantizerConfig& quant, const BCConfig& cfg) {
  BCResult out;
  out.params = std::move(params);
  if (samples.empty()) return out;
  num::AdamState adam;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t bs = cfg.batch_size > 0 ? static_cast<std::size_t>(cfg.batch_size) : samples.size();
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < idx.size(); b += bs) {
      std::vector<BCSample> mb;
      for (std::size_t i = b; i < std::min(idx.size(), b + bs); ++i) mb.push_back(samples[idx[i]]);
      num::GradStore grads;
      epoch_loss += bc_loss(mb, out.params, enc, quant, &grads) * static_cast<double>(mb.size());
      num::adam_step(out.params, grads, adam, cfg.adam);
    }
    out.epoch_loss.push_back(epoch_loss / static_cast<double>(samples.size()));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const EncoderConfig& enc,
                     const QuantizerConfig& quant, const std::string& config_json) {
  nlohmann::json meta;
  meta["encoder"] = enc;
  meta["quantizer"] = quant;
  meta["config_hash"] = config_hash(nlohmann::json::parse(config_json));
  write_file_atomic(path, num::params_to_json(params, meta.dump()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string meta_text;
  Checkpoint cp;
  cp.params = num::params_from_json(read_file(path), &meta_text);
  try {
    const auto meta = nlohmann::json::parse(meta_text);
    cp.enc = meta.at("encoder").get<EncoderConfig>();
    cp.quant = meta.at("quantizer").get<QuantizerConfig>();
    cp.config_hash = meta.value("config_hash", "");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": bad meta block: " + e.what());
  }
  return cp;
}

}  // namespace tempo
