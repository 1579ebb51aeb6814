#include "tempo/config_io.hpp"

#include <cstdio>

namespace tempo {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<T>();
}

}  // namespace

void to_json(json& j, const QuantizerConfig& c) {
  j = json{{"Q", c.Q},         {"scheme", std::string(to_string(c.scheme))},
           {"delta", c.delta}, {"s_max", c.s_max},
           {"reserve", c.reserve}, {"reserve_threshold", c.reserve_threshold}};
  if (!c.centers.empty()) j["centers"] = c.centers;
}

void from_json(const json& j, QuantizerConfig& c) {
  read(j, "Q", c.Q);
  if (auto it = j.find("scheme"); it != j.end()) c.scheme = parse_bin_scheme(it->get<std::string>());
  read(j, "delta", c.delta);
  read(j, "s_max", c.s_max);
  read(j, "reserve", c.reserve);
  read(j, "reserve_threshold", c.reserve_threshold);
  read(j, "centers", c.centers);
}

void to_json(json& j, const SparseConfig& c) { j = to_string(c); if (c.alpha > 0.0) j = json{{"mode", to_string(c)}, {"alpha", c.alpha}}; }

void from_json(const json& j, SparseConfig& c) {
  if (j.is_string()) {
    c = parse_sparse(j.get<std::string>());
    return;
  }
  c = parse_sparse(j.at("mode").get<std::string>());
  read(j, "alpha", c.alpha);
}

void to_json(json& j, const EncoderConfig& c) {
  j = json{{"layers", c.layers}, {"heads", c.heads}, {"d", c.d}, {"d_ff", c.d_ff}, {"sparse", c.sparse}};
}

void from_json(const json& j, EncoderConfig& c) {
  read(j, "layers", c.layers);
  read(j, "heads", c.heads);
  read(j, "d", c.d);
  read(j, "d_ff", c.d_ff);
  read(j, "sparse", c.sparse);
}

void to_json(json& j, const RewardConfig& c) {
  j = json{{"scheme", std::string(to_string(c.scheme))}, {"eta", c.eta}, {"lambda", c.lambda},
           {"delta", c.delta}, {"r1_coeff", c.r1_coeff}, {"r2_coeff", c.r2_coeff}};
}

void from_json(const json& j, RewardConfig& c) {
  if (auto it = j.find("scheme"); it != j.end()) c.scheme = parse_reward_scheme(it->get<std::string>());
  read(j, "eta", c.eta);
  read(j, "lambda", c.lambda);
  read(j, "delta", c.delta);
  read(j, "r1_coeff", c.r1_coeff);
  read(j, "r2_coeff", c.r2_coeff);
}

void to_json(json& j, const BurstSpec& c) {
  j = json{{"count", c.count}, {"interval", c.interval}, {"deadline", c.deadline},
           {"duration", c.duration}, {"wcet", c.wcet}, {"start", c.start}};
}

void from_json(const json& j, BurstSpec& c) {
  read(j, "count", c.count);
  read(j, "interval", c.interval);
  read(j, "deadline", c.deadline);
  read(j, "duration", c.duration);
  read(j, "wcet", c.wcet);
  read(j, "start", c.start);
}

void to_json(json& j, const MitigationConfig& c) {
  j = json{{"tau_p", c.tau_p}, {"alpha_nom", c.alpha_nom}, {"alpha_burst", c.alpha_burst}, {"hysteresis", c.hysteresis}};
}

void from_json(const json& j, MitigationConfig& c) {
  read(j, "tau_p", c.tau_p);
  read(j, "alpha_nom", c.alpha_nom);
  read(j, "alpha_burst", c.alpha_burst);
  read(j, "hysteresis", c.hysteresis);
}

void to_json(json& j, const ExplorationConfig& c) {
  j = json{{"eps0", c.eps0}, {"eps_min", c.eps_min}, {"decay_episodes", c.decay_episodes}, {"beta", c.beta}};
}

void from_json(const json& j, ExplorationConfig& c) {
  read(j, "eps0", c.eps0);
  read(j, "eps_min", c.eps_min);
  read(j, "decay_episodes", c.decay_episodes);
  read(j, "beta", c.beta);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"gamma", c.gamma},
           {"lr", c.adam.lr},
           {"beta1", c.adam.beta1},
           {"beta2", c.adam.beta2},
           {"adam_eps", c.adam.eps},
           {"batch_size", c.batch_size},
           {"capacity", c.capacity},
           {"warmup", c.warmup},
           {"train_interval", c.train_interval},
           {"tau", c.tau},
           {"episodes", c.episodes},
           {"horizon", c.horizon},
           {"grad_clip", c.grad_clip},
           {"divergence_threshold", c.divergence_threshold},
           {"greedy_eval", c.greedy_eval}};
}

void from_json(const json& j, TrainConfig& c) {
  read(j, "gamma", c.gamma);
  read(j, "lr", c.adam.lr);
  read(j, "beta1", c.adam.beta1);
  read(j, "beta2", c.adam.beta2);
  read(j, "adam_eps", c.adam.eps);
  read(j, "batch_size", c.batch_size);
  read(j, "capacity", c.capacity);
  read(j, "warmup", c.warmup);
  read(j, "train_interval", c.train_interval);
  read(j, "tau", c.tau);
  read(j, "episodes", c.episodes);
  read(j, "horizon", c.horizon);
  read(j, "grad_clip", c.grad_clip);
  read(j, "divergence_threshold", c.divergence_threshold);
  read(j, "greedy_eval", c.greedy_eval);
}

void to_json(json& j, const TaskSetConfig& c) {
  j = json{{"n_tasks", c.n_tasks},
           {"target_utilization", c.target_utilization},
           {"period_min", c.period_min},
           {"period_max", c.period_max},
           {"period_choices", c.period_choices},
           {"deadlines", c.deadline_mode == DeadlineMode::kPareto ? "pareto" : "implicit"},
           {"pareto_alpha", c.pareto_alpha},
           {"pareto_xmin", c.pareto_xmin},
           {"critical_fraction", c.critical_fraction},
           {"seed", c.seed}};
}

void from_json(const json& j, TaskSetConfig& c) {
  read(j, "n_tasks", c.n_tasks);
  read(j, "target_utilization", c.target_utilization);
  read(j, "period_min", c.period_min);
  read(j, "period_max", c.period_max);
  read(j, "period_choices", c.period_choices);
  if (auto it = j.find("deadlines"); it != j.end()) {
    const auto mode = it->get<std::string>();
    if (mode == "pareto") {
      c.deadline_mode = DeadlineMode::kPareto;
    } else if (mode == "implicit") {
      c.deadline_mode = DeadlineMode::kImplicit;
    } else {
      throw json::type_error::create(302, "deadlines must be 'implicit' or 'pareto'", &j);
    }
  }
  read(j, "pareto_alpha", c.pareto_alpha);
  read(j, "pareto_xmin", c.pareto_xmin);
  read(j, "critical_fraction", c.critical_fraction);
  read(j, "seed", c.seed);
}

std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tempo
