#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "tempo/baselines.hpp"
#include "tempo/config_io.hpp"
#include "tempo/diagnostics.hpp"
#include "tempo/error.hpp"

namespace tempo::cli {

using nlohmann::json;
namespace fs = std::filesystem;

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"taskset", c.taskset},     {"generator", c.generator}, {"policy", c.policy},
           {"cores", c.cores},         {"horizon", c.horizon},     {"seed", c.seed},
           {"reward", c.reward},       {"quantizer", c.quantizer}, {"encoder", c.encoder},
           {"train", c.train},         {"explore", c.explore},     {"bc_epochs", c.bc_epochs},
           {"teacher", c.teacher},     {"mitigate", c.mitigate},   {"mitigation", c.mitigation},
           {"bursts", c.bursts},       {"checkpoint", c.checkpoint}, {"out", c.out}};
}

void from_json(const json& j, ExperimentConfig& c) {
  static const std::vector<std::string> known = {
      "taskset", "generator", "policy", "cores", "horizon", "seed", "reward", "quantizer", "encoder", "train",
      "explore", "bc_epochs", "teacher", "mitigate", "mitigation", "bursts", "checkpoint", "out"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ContractError("config: unknown key '" + key + "'");
    }
  }
  auto read = [&j](const char* key, auto& out) {
    if (auto it = j.find(key); it != j.end()) out = it->template get<std::decay_t<decltype(out)>>();
  };
  read("taskset", c.taskset);
  read("generator", c.generator);
  read("policy", c.policy);
  read("cores", c.cores);
  read("horizon", c.horizon);
  read("seed", c.seed);
  read("reward", c.reward);
  read("quantizer", c.quantizer);
  read("encoder", c.encoder);
  read("train", c.train);
  read("explore", c.explore);
  read("bc_epochs", c.bc_epochs);
  read("teacher", c.teacher);
  read("mitigate", c.mitigate);
  read("mitigation", c.mitigation);
  read("bursts", c.bursts);
  read("checkpoint", c.checkpoint);
  read("out", c.out);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t component) {
  // splitmix64 of the pair
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (component + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

unsigned worker_count() {
  if (const char* env = std::getenv("TEMPONET_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

namespace {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flag values are applied on top of the config file only when given.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& name, const std::string& help,
                   std::function<void(ExperimentConfig&, const T&)> apply) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    entries_.push_back({opt, [value, apply](ExperimentConfig& c) { apply(c, *value); }});
    holders_.push_back(value);
    return opt;
  }

  void apply(ExperimentConfig& cfg) const {
    for (const auto& e : entries_) {
      if (e.opt->count() > 0) e.apply(cfg);
    }
  }

 private:
  struct Entry {
    CLI::Option* opt;
    std::function<void(ExperimentConfig&)> apply;
  };
  std::vector<Entry> entries_;
  std::vector<std::shared_ptr<void>> holders_;
};

struct Command {
  CLI::App* app = nullptr;
  Overrides overrides;
  std::string config_path;
};

void add_common(Command& cmd) {
  cmd.app->add_option("--config", cmd.config_path, "JSON experiment config; flags override its fields");
  cmd.overrides.add<std::uint64_t>(cmd.app, "--seed", "root seed", [](auto& c, auto v) { c.seed = v; });
  cmd.overrides.add<std::string>(cmd.app, "--out", "output directory", [](auto& c, auto v) { c.out = v; });
}

void add_taskset(Command& cmd) {
  cmd.overrides.add<std::string>(cmd.app, "--taskset", "task-set JSON file", [](auto& c, auto v) { c.taskset = v; });
}

void add_generator(Command& cmd) {
  auto& o = cmd.overrides;
  o.add<int>(cmd.app, "--n", "number of tasks", [](auto& c, auto v) { c.generator.n_tasks = v; });
  o.add<double>(cmd.app, "--util", "target utilization", [](auto& c, auto v) { c.generator.target_utilization = v; });
  o.add<Tick>(cmd.app, "--period-min", "smallest period", [](auto& c, auto v) { c.generator.period_min = v; });
  o.add<Tick>(cmd.app, "--period-max", "largest period", [](auto& c, auto v) { c.generator.period_max = v; });
  o.add<std::string>(cmd.app, "--deadlines", "implicit|pareto", [](auto& c, const std::string& v) {
    if (v == "implicit") {
      c.generator.deadline_mode = DeadlineMode::kImplicit;
    } else if (v == "pareto") {
      c.generator.deadline_mode = DeadlineMode::kPareto;
    } else {
      throw ConfigError("--deadlines must be implicit or pareto");
    }
  });
  o.add<double>(cmd.app, "--pareto-alpha", "Pareto shape", [](auto& c, auto v) { c.generator.pareto_alpha = v; });
  o.add<double>(cmd.app, "--pareto-xmin", "Pareto scale (ticks)", [](auto& c, auto v) { c.generator.pareto_xmin = v; });
  o.add<double>(cmd.app, "--critical", "fraction of critical tasks",
                [](auto& c, auto v) { c.generator.critical_fraction = v; });
}

void add_sim(Command& cmd) {
  auto& o = cmd.overrides;
  o.add<int>(cmd.app, "--cores", "number of cores", [](auto& c, auto v) { c.cores = v; });
  o.add<Tick>(cmd.app, "--horizon", "episode length in ticks (default: hyperperiod)",
              [](auto& c, auto v) { c.horizon = v; });
  o.add<std::string>(cmd.app, "--reward", "binary|r1|r2|r3",
                     [](auto& c, const std::string& v) { c.reward.scheme = parse_reward_scheme(v); });
  o.add<double>(cmd.app, "--lambda", "migration penalty", [](auto& c, auto v) { c.reward.lambda = v; });
  o.add<double>(cmd.app, "--eta", "negative-slack penalty weight (r3)", [](auto& c, auto v) { c.reward.eta = v; });
  o.add<Tick>(cmd.app, "--delta", "slack lost per migration", [](auto& c, auto v) { c.reward.delta = v; });
  o.add<std::string>(cmd.app, "--burst", "COUNT,INTERVAL,DEADLINE,DURATION", [](auto& c, const std::string& v) {
    BurstSpec b;
    char sep = 0;
    std::istringstream in(v);
    if (!(in >> b.count >> sep >> b.interval >> sep >> b.deadline >> sep >> b.duration) || !in.eof()) {
      throw ConfigError("--burst expects COUNT,INTERVAL,DEADLINE,DURATION");
    }
    c.bursts.push_back(b);
  });
}

void add_quant(Command& cmd) {
  auto& o = cmd.overrides;
  o.add<int>(cmd.app, "--Q", "slack bins", [](auto& c, auto v) { c.quantizer.Q = v; });
  o.add<std::string>(cmd.app, "--scheme", "uniform|log|kmeans",
                     [](auto& c, const std::string& v) { c.quantizer.scheme = parse_bin_scheme(v); });
  o.add<double>(cmd.app, "--bin-width", "uniform bin width in ticks", [](auto& c, auto v) { c.quantizer.delta = v; });
}

void add_encoder(Command& cmd) {
  auto& o = cmd.overrides;
  o.add<int>(cmd.app, "--layers", "transformer blocks", [](auto& c, auto v) { c.encoder.layers = v; });
  o.add<int>(cmd.app, "--heads", "attention heads", [](auto& c, auto v) { c.encoder.heads = v; });
  o.add<int>(cmd.app, "--d", "model width", [](auto& c, auto v) { c.encoder.d = v; });
  o.add<int>(cmd.app, "--d-ff", "feed-forward width", [](auto& c, auto v) { c.encoder.d_ff = v; });
  o.add<std::string>(cmd.app, "--sparse", "auto|dense|B,k,M",
                     [](auto& c, const std::string& v) { c.encoder.sparse = parse_sparse(v); });
}

void add_train(Command& cmd) {
  auto& o = cmd.overrides;
  o.add<int>(cmd.app, "--episodes", "training episodes", [](auto& c, auto v) { c.train.episodes = v; });
  o.add<int>(cmd.app, "--batch", "minibatch size", [](auto& c, auto v) { c.train.batch_size = v; });
  o.add<std::int64_t>(cmd.app, "--warmup", "environment steps before updates",
                      [](auto& c, auto v) { c.train.warmup = v; });
  o.add<int>(cmd.app, "--interval", "environment steps per update", [](auto& c, auto v) { c.train.train_interval = v; });
  o.add<std::size_t>(cmd.app, "--capacity", "replay capacity", [](auto& c, auto v) { c.train.capacity = v; });
  o.add<double>(cmd.app, "--lr", "Adam learning rate", [](auto& c, auto v) { c.train.adam.lr = v; });
  o.add<double>(cmd.app, "--gamma", "discount", [](auto& c, auto v) { c.train.gamma = v; });
  o.add<double>(cmd.app, "--tau", "Polyak rate", [](auto& c, auto v) { c.train.tau = v; });
  o.add<int>(cmd.app, "--eps-decay", "episodes of linear epsilon decay",
             [](auto& c, auto v) { c.explore.decay_episodes = v; });
  o.add<double>(cmd.app, "--eps-min", "final epsilon", [](auto& c, auto v) { c.explore.eps_min = v; });
  o.add<double>(cmd.app, "--bonus", "inverse-visit bonus weight", [](auto& c, auto v) { c.explore.beta = v; });
  o.add<int>(cmd.app, "--bc-epochs", "behavioral-cloning warm-start epochs", [](auto& c, auto v) { c.bc_epochs = v; });
  o.add<std::string>(cmd.app, "--greedy-eval", "on|off: greedy evaluation episode after each episode",
                     [](auto& c, const std::string& v) {
                       if (v != "on" && v != "off") throw ConfigError("--greedy-eval must be on or off");
                       c.train.greedy_eval = v == "on";
                     });
  o.add<std::string>(cmd.app, "--teacher", "warm-start teacher policy", [](auto& c, auto v) { c.teacher = v; });
}

void add_mitigate(Command& cmd) {
  cmd.overrides.add<std::string>(cmd.app, "--mitigate", "on|off", [](auto& c, const std::string& v) {
    if (v == "on") {
      c.mitigate = true;
    } else if (v == "off") {
      c.mitigate = false;
    } else {
      throw ConfigError("--mitigate must be on or off");
    }
  });
}

ExperimentConfig build_config(const Command& cmd) {
  ExperimentConfig cfg;
  if (!cmd.config_path.empty()) {
    std::string text;
    try {
      text = read_file(cmd.config_path);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    try {
      cfg = json::parse(text).get<ExperimentConfig>();
    } catch (const json::exception& e) {
      throw ConfigError("config " + cmd.config_path + ": " + e.what());
    }
  }
  cmd.overrides.apply(cfg);
  if (cfg.cores < 1) throw ConfigError("cores must be >= 1");
  if (cfg.horizon < 0) throw ConfigError("horizon must be >= 0");
  return cfg;
}

TaskSet load_tasks(const ExperimentConfig& cfg) {
  if (!cfg.taskset.empty()) return load_taskset(cfg.taskset);
  TaskSetConfig g = cfg.generator;
  g.seed = derive_seed(cfg.seed, kGenerate);
  return generate_taskset(g);
}

Tick resolve_horizon(const ExperimentConfig& cfg, const TaskSet& tasks) {
  if (cfg.horizon > 0) return cfg.horizon;
  return std::min(hyperperiod(tasks), kMaxDefaultHorizon);
}

EpisodeConfig episode_config(const ExperimentConfig& cfg, Tick horizon) {
  EpisodeConfig ec;
  ec.cores = cfg.cores;
  ec.horizon = horizon;
  ec.reward = cfg.reward;
  ec.bursts = cfg.bursts;
  return ec;
}

fs::path out_dir(const ExperimentConfig& cfg) {
  fs::path dir(cfg.out);
  fs::create_directories(dir);
  return dir;
}

void write_effective(const fs::path& dir, const ExperimentConfig& cfg) {
  write_file_atomic(dir / "effective_config.json", json(cfg).dump(2) + "\n");
}

PolicySpec policy_spec(const ExperimentConfig& cfg, const std::string& text) {
  PolicySpec spec = parse_policy(text);
  if (spec.kind == PolicyKind::kRandom && text.find(':') == std::string::npos) spec.seed = derive_seed(cfg.seed, kPolicy);
  return spec;
}

// Validated pieces shared by several commands.
struct Prepared {
  TaskSet tasks;
  Tick horizon = 0;
  QuantizerConfig quant;
};

Prepared prepare(const ExperimentConfig& cfg) {
  Prepared p;
  p.tasks = load_tasks(cfg);
  validate_taskset(p.tasks);
  p.horizon = resolve_horizon(cfg, p.tasks);
  p.quant = resolve_quantizer(cfg.quantizer, p.tasks);
  return p;
}

TrainSetup train_setup(const ExperimentConfig& cfg, const Prepared& p) {
  TrainSetup setup;
  setup.tasks = p.tasks;
  setup.cores = cfg.cores;
  setup.reward = cfg.reward;
  setup.bursts = cfg.bursts;
  setup.enc = cfg.encoder;
  setup.quant = p.quant;
  setup.explore = cfg.explore;
  setup.train = cfg.train;
  setup.train.horizon = p.horizon;
  setup.train.seed = derive_seed(cfg.seed, kTrain);
  validate_train_config(setup.train);
  validate_encoder(setup.enc);
  return setup;
}

num::ParamStore initial_params(const ExperimentConfig& cfg, const TrainSetup& setup) {
  auto params = init_params(setup.enc, setup.quant, derive_seed(cfg.seed, kInit));
  if (cfg.bc_epochs > 0) {
    auto teacher = make_policy(policy_spec(cfg, cfg.teacher), setup.quant);
    EpisodeConfig ec = episode_config(cfg, setup.train.horizon);
    const auto samples = collect_teacher_samples(setup.tasks, *teacher, ec);
    BCConfig bc;
    bc.epochs = cfg.bc_epochs;
    bc.seed = derive_seed(cfg.seed, kBC);
    params = bc_pretrain(samples, std::move(params), setup.enc, setup.quant, bc).params;
  }
  return params;
}

// --- subcommands --------------------------------------------------------

int cmd_generate(const ExperimentConfig& cfg, std::ostream& out) {
  TaskSetConfig g = cfg.generator;
  g.seed = derive_seed(cfg.seed, kGenerate);
  TaskSet tasks;
  try {
    tasks = generate_taskset(g);
  } catch (const GenerationError& e) {
    throw ConfigError(e.what());
  }
  const auto dir = out_dir(cfg);
  save_taskset(tasks, dir / "taskset.json");
  write_effective(dir, cfg);
  out << "wrote " << (dir / "taskset.json").string() << " (" << tasks.size() << " tasks, U=" << utilization(tasks)
      << ")\n";
  return kExitOk;
}

int cmd_simulate(const ExperimentConfig& cfg, std::ostream& out) {
  const Prepared p = prepare(cfg);
  const auto spec = policy_spec(cfg, cfg.policy);
  auto policy = make_policy(spec, p.quant);
  const auto dir = out_dir(cfg);
  const auto res = run_episode(p.tasks, *policy, episode_config(cfg, p.horizon));
  write_file_atomic(dir / "metrics.json", metrics_to_json(res.metrics));
  write_file_atomic(dir / "trace.csv", trace_to_csv(res.trace));
  write_effective(dir, cfg);
  out << metrics_to_json(res.metrics);
  return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& out) {
  const Prepared p = prepare(cfg);
  TrainSetup setup = train_setup(cfg, p);
  const auto dir = out_dir(cfg);
  setup.divergence_checkpoint = dir / "checkpoint.diverged.json";
  // The hash identifies the experiment, not where its outputs go.
  ExperimentConfig hashed = cfg;
  hashed.out.clear();
  const std::string cfg_json = json(hashed).dump();
  auto result = train(setup, initial_params(cfg, setup));
  save_checkpoint(dir / "checkpoint.json", result.params, setup.enc, setup.quant, cfg_json);
  write_file_atomic(dir / "curve.csv", learning_curve_csv(result.curve));
  write_effective(dir, cfg);
  const auto eval = evaluate_greedy(setup, result.params);
  write_file_atomic(dir / "metrics.json", metrics_to_json(eval.metrics));
  out << "episodes=" << result.curve.size() << " updates=" << result.updates
      << " greedy_compliance=" << eval.metrics.compliance_rate << "\n";
  return kExitOk;
}

int cmd_eval(const ExperimentConfig& cfg, std::ostream& out) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const Prepared p = prepare(cfg);
  const Checkpoint cp = load_checkpoint(cfg.checkpoint);
  const auto dir = out_dir(cfg);
  const EpisodeConfig ec = episode_config(cfg, p.horizon);

  AgentPolicy agent(cp.params, cp.enc, cp.quant);
  if (cfg.mitigate) agent.enable_mitigation(cfg.mitigation);
  std::string mitigation_csv = "t,p,alpha\n";
  const auto res = run_episode(p.tasks, agent, ec, [&](const SimState& before, const ActionSet&, const StepResult&,
                                                       const SimState&) {
    if (!cfg.mitigate) return;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%lld,%.6f,%.4f\n", static_cast<long long>(before.clock),
                  short_slack_fraction(before.jobs, before.clock, cp.quant.delta), agent.last_alpha());
    mitigation_csv += buf;
  });
  write_file_atomic(dir / "metrics.json", metrics_to_json(res.metrics));
  write_file_atomic(dir / "trace.csv", trace_to_csv(res.trace));
  if (cfg.mitigate) write_file_atomic(dir / "mitigation.csv", mitigation_csv);

  AgentPolicy probe(cp.params, cp.enc, cp.quant);
  if (cfg.mitigate) probe.enable_mitigation(cfg.mitigation);
  write_file_atomic(dir / "diagnostics.csv", diagnostics_csv(diagnose_run(probe, p.tasks, ec)));
  write_effective(dir, cfg);
  out << metrics_to_json(res.metrics);
  return kExitOk;
}

std::vector<int> parse_sizes(const std::string& text) {
  std::vector<int> sizes;
  try {
    if (const auto dots = text.find(".."); dots != std::string::npos) {
      const int lo = std::stoi(text.substr(0, dots));
      const int hi = std::stoi(text.substr(dots + 2));
      if (lo < 1 || hi < lo) throw ConfigError("bad size range");
      for (long n = lo; n <= hi; n *= 2) sizes.push_back(static_cast<int>(n));
    } else {
      std::istringstream in(text);
      std::string item;
      while (std::getline(in, item, ',')) sizes.push_back(std::stoi(item));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("--sizes expects LO..HI or a comma list, got '" + text + "'");
  }
  if (sizes.empty() || std::any_of(sizes.begin(), sizes.end(), [](int n) { return n < 1; })) {
    throw ConfigError("--sizes must list positive sizes");
  }
  return sizes;
}

// Synthetic state with n active jobs spread over a range of deadlines.
TokenBatch synthetic_tokens(int n, const QuantizerConfig& quant, std::mt19937_64& rng) {
  std::vector<JobInstance> jobs;
  std::uniform_int_distribution<Tick> period(10, 1000);
  for (int i = 0; i < n; ++i) {
    JobInstance j;
    j.task_id = i + 1;
    j.period = period(rng);
    j.rel_deadline = j.period;
    j.wcet = std::max<Tick>(1, j.period / 10);
    j.remaining = std::uniform_int_distribution<Tick>(1, j.wcet)(rng);
    j.abs_deadline = std::uniform_int_distribution<Tick>(1, j.period)(rng);
    jobs.push_back(j);
  }
  return make_token_batch(0, jobs, quant);
}

int cmd_bench_attn(const ExperimentConfig& cfg, const std::string& sizes_text, int repeats, std::ostream& out) {
  const auto sizes = parse_sizes(sizes_text);
  if (repeats < 1) throw ConfigError("--repeats must be positive");
  validate_encoder(cfg.encoder);
  QuantizerConfig quant = cfg.quantizer;
  quant.s_max = quant.s_max > 0 ? quant.s_max : 1000.0;
  quant = resolve_quantizer(quant, {});
  const auto params = init_params(cfg.encoder, quant, derive_seed(cfg.seed, kInit));
  std::mt19937_64 rng(derive_seed(cfg.seed, kBench));
  std::string csv = "N,nonzeros,wall_ms\n";
  std::vector<double> ns, ts;
  for (int n : sizes) {
    const TokenBatch tokens = synthetic_tokens(n, quant, rng);
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto q = q_scores(params, tokens, cfg.encoder);
      const auto t1 = std::chrono::steady_clock::now();
      if (q.empty()) throw std::runtime_error("empty forward");
      best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    const auto nz = nonzero_count(n, cfg.encoder.sparse);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d,%lld,%.4f\n", n, static_cast<long long>(nz.total), best);
    csv += buf;
    ns.push_back(n);
    ts.push_back(best);
  }
  const auto dir = out_dir(cfg);
  write_file_atomic(dir / "bench.csv", csv);
  json fit_json = json::object();
  if (ns.size() >= 4) {
    const auto fit = fit_power_law(ns, ts);
    fit_json = {{"c", fit.c}, {"exponent", fit.exponent}, {"r2", fit.r2}};
    out << "exponent=" << fit.exponent << " r2=" << fit.r2 << "\n";
  }
  write_file_atomic(dir / "fit.json", fit_json.dump(2) + "\n");
  write_effective(dir, cfg);
  out << csv;
  return kExitOk;
}

int cmd_distill(const ExperimentConfig& cfg, std::ostream& out) {
  Prepared p = prepare(cfg);
  std::unique_ptr<Policy> source;
  if (!cfg.checkpoint.empty()) {
    const Checkpoint cp = load_checkpoint(cfg.checkpoint);
    p.quant = cp.quant;
    source = std::make_unique<AgentPolicy>(cp.params, cp.enc, cp.quant);
  } else {
    source = make_policy(policy_spec(cfg, cfg.policy), p.quant);
  }
  const auto decisions = record_decisions(p.tasks, *source, episode_config(cfg, p.horizon), p.quant);
  const auto rule = distill_rule(decisions);
  const auto dir = out_dir(cfg);
  write_file_atomic(dir / "distill.json", distilled_json(rule));
  write_file_atomic(dir / "heatmap.csv", heatmap_csv(policy_heatmap(decisions, p.quant.Q)));
  write_effective(dir, cfg);
  out << distilled_json(rule);
  return kExitOk;
}

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

GridAxis parse_grid(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--grid expects KEY=v1,v2,...");
  GridAxis axis;
  axis.key = text.substr(0, eq);
  std::istringstream in(text.substr(eq + 1));
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) axis.values.push_back(item);
  }
  static const std::vector<std::string> keys = {"Q", "layers", "heads", "d", "scheme", "reward", "lambda", "cores"};
  if (std::find(keys.begin(), keys.end(), axis.key) == keys.end()) {
    throw ConfigError("--grid key must be one of Q, layers, heads, d, scheme, reward, lambda, cores");
  }
  if (axis.values.empty()) throw ConfigError("--grid needs at least one value");
  return axis;
}

void apply_grid(ExperimentConfig& c, const std::string& key, const std::string& v) {
  try {
    if (key == "Q") c.quantizer.Q = std::stoi(v);
    else if (key == "layers") c.encoder.layers = std::stoi(v);
    else if (key == "heads") c.encoder.heads = std::stoi(v);
    else if (key == "d") c.encoder.d = std::stoi(v);
    else if (key == "scheme") c.quantizer.scheme = parse_bin_scheme(v);
    else if (key == "reward") c.reward.scheme = parse_reward_scheme(v);
    else if (key == "lambda") c.reward.lambda = std::stod(v);
    else if (key == "cores") c.cores = std::stoi(v);
  } catch (const std::logic_error& e) {
    throw ConfigError("--grid value '" + v + "' for " + key + ": " + e.what());
  }
}

int cmd_sweep(const ExperimentConfig& base, const std::string& grid_text, int sets, std::ostream& out) {
  const GridAxis axis = parse_grid(grid_text);
  if (sets < 1) throw ConfigError("--sets must be positive");
  struct Job {
    std::size_t point;
    int set;
    ExperimentConfig cfg;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < axis.values.size(); ++i) {
    for (int s = 0; s < sets; ++s) {
      ExperimentConfig c = base;
      apply_grid(c, axis.key, axis.values[i]);
      if (base.taskset.empty()) c.generator.seed = derive_seed(base.seed, 100 + static_cast<std::uint64_t>(s));
      c.seed = derive_seed(base.seed, 1000 + static_cast<std::uint64_t>(s));
      validate_encoder(c.encoder);
      jobs.push_back({i, s, std::move(c)});
    }
  }
  std::vector<MetricsReport> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      try {
        ExperimentConfig c = jobs[k].cfg;
        Prepared p;
        if (c.taskset.empty()) {
          TaskSetConfig g = c.generator;
          g.seed = jobs[k].cfg.generator.seed;
          p.tasks = generate_taskset(g);
        } else {
          p.tasks = load_taskset(c.taskset);
        }
        p.horizon = resolve_horizon(c, p.tasks);
        p.quant = resolve_quantizer(c.quantizer, p.tasks);
        TrainSetup setup = train_setup(c, p);
        auto trained = train(setup, initial_params(c, setup));
        results[k] = evaluate_greedy(setup, trained.params).metrics;
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  const unsigned n_workers = std::min<unsigned>(worker_count(), static_cast<unsigned>(jobs.size()));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    if (!errors[k].empty()) throw std::runtime_error("sweep point " + axis.key + "=" + axis.values[jobs[k].point] + ": " + errors[k]);
  }
  std::string csv = "key,value,sets,compliance_mean,compliance_std,pitmd_mean\n";
  for (std::size_t i = 0; i < axis.values.size(); ++i) {
    std::vector<double> comp, pit;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      if (jobs[k].point != i) continue;
      comp.push_back(results[k].compliance_rate);
      pit.push_back(results[k].pitmd);
    }
    const double mean = std::accumulate(comp.begin(), comp.end(), 0.0) / static_cast<double>(comp.size());
    double var = 0.0;
    for (double v : comp) var += (v - mean) * (v - mean);
    const double sd = comp.size() > 1 ? std::sqrt(var / static_cast<double>(comp.size() - 1)) : 0.0;
    const double pmean = std::accumulate(pit.begin(), pit.end(), 0.0) / static_cast<double>(pit.size());
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,%.6f,%.6f\n", axis.key.c_str(), axis.values[i].c_str(), comp.size(),
                  mean, sd, pmean);
    csv += buf;
  }
  const auto dir = out_dir(base);
  write_file_atomic(dir / "sweep.csv", csv);
  write_effective(dir, base);
  out << csv;
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Real-time scheduling lab: baselines, urgency-token Q-network, training and diagnostics", "tempo"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tempo 0.3.0");

  Command generate, simulate, trainc, evalc, bench, distill, sweep;
  generate.app = app.add_subcommand("generate", "generate a synthetic task set");
  add_common(generate);
  add_generator(generate);

  simulate.app = app.add_subcommand("simulate", "run a baseline policy and write metrics and a trace");
  add_common(simulate);
  add_taskset(simulate);
  add_generator(simulate);
  add_sim(simulate);
  add_quant(simulate);
  simulate.overrides.add<std::string>(simulate.app, "--policy", "rm|edf|srpt|fcfs|minslack|wslack:A,B|random[:S]|idle",
                                      [](auto& c, auto v) { c.policy = v; });

  trainc.app = app.add_subcommand("train", "train the Q-network with DQN");
  add_common(trainc);
  add_taskset(trainc);
  add_generator(trainc);
  add_sim(trainc);
  add_quant(trainc);
  add_encoder(trainc);
  add_train(trainc);

  evalc.app = app.add_subcommand("eval", "run a frozen checkpoint greedily");
  add_common(evalc);
  add_taskset(evalc);
  add_generator(evalc);
  add_sim(evalc);
  add_mitigate(evalc);
  evalc.overrides.add<std::string>(evalc.app, "--checkpoint", "checkpoint JSON", [](auto& c, auto v) { c.checkpoint = v; });

  std::string sizes = "32..1024";
  int repeats = 3;
  bench.app = app.add_subcommand("bench-attn", "time encoder forward passes over task counts");
  add_common(bench);
  add_encoder(bench);
  add_quant(bench);
  bench.app->add_option("--sizes", sizes, "LO..HI (doubling) or a comma list");
  bench.app->add_option("--repeats", repeats, "timings per size; the minimum is kept");

  distill.app = app.add_subcommand("distill", "fit the weighted-slack rule to a policy's decisions");
  add_common(distill);
  add_taskset(distill);
  add_generator(distill);
  add_sim(distill);
  add_quant(distill);
  distill.overrides.add<std::string>(distill.app, "--checkpoint", "agent checkpoint (else --policy)",
                                     [](auto& c, auto v) { c.checkpoint = v; });
  distill.overrides.add<std::string>(distill.app, "--policy", "baseline policy to distill",
                                     [](auto& c, auto v) { c.policy = v; });

  std::string grid;
  int sets = 3;
  sweep.app = app.add_subcommand("sweep", "train and evaluate over a parameter grid");
  add_common(sweep);
  add_taskset(sweep);
  add_generator(sweep);
  add_sim(sweep);
  add_quant(sweep);
  add_encoder(sweep);
  add_train(sweep);
  sweep.app->add_option("--grid", grid, "KEY=v1,v2,...")->required();
  sweep.app->add_option("--sets", sets, "task sets per grid point");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << "tempo 0.3.0\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  const std::vector<std::pair<Command*, std::function<int(const ExperimentConfig&)>>> table = {
      {&generate, [&](const auto& c) { return cmd_generate(c, out); }},
      {&simulate, [&](const auto& c) { return cmd_simulate(c, out); }},
      {&trainc, [&](const auto& c) { return cmd_train(c, out); }},
      {&evalc, [&](const auto& c) { return cmd_eval(c, out); }},
      {&bench, [&](const auto& c) { return cmd_bench_attn(c, sizes, repeats, out); }},
      {&distill, [&](const auto& c) { return cmd_distill(c, out); }},
      {&sweep, [&](const auto& c) { return cmd_sweep(c, grid, sets, out); }},
  };
  for (const auto& [cmd, fn] : table) {
    if (!cmd->app->parsed()) continue;
    ExperimentConfig cfg;
    try {
      cfg = build_config(*cmd);
    } catch (const std::exception& e) {
      err << "config error: " << e.what() << "\n";
      return kExitConfig;
    }
    try {
      return fn(cfg);
    } catch (const ConfigError& e) {
      err << "config error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const ContractError& e) {
      err << "config error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const ParseError& e) {
      err << "config error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const DomainError& e) {
      err << "config error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const GenerationError& e) {
      err << "config error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const std::exception& e) {
      err << "runtime error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  return kExitConfig;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace tempo::cli
