// Run orchestration: configuration files, checkpoints, training, evaluation,
// team-vs-team competitions and communication-graph dumps.
//
// File formats (each carries format_version):
//   config      key = value lines, '#' starts a comment
//   checkpoint  JSON {format_version, config, step, progress, params, optimizer}
//   metrics     CSV, one row per evaluation, preceded by a '#' version line
//   graphs      JSON lines, one adjacency matrix per (step, hop, relation, head)
//   report      JSON competition table

#pragma once

#include "sparse_att/adam.hpp"
#include "sparse_att/graph_attention.hpp"
#include "sparse_att/particle_env.hpp"
#include "sparse_att/ppo.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparse_att {

inline constexpr int kConfigFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kMetricsFormatVersion = 1;
inline constexpr int kGraphDumpFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;

namespace fs = std::filesystem;

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// RunConfig

struct RunConfig {
  TaskSpec task = TaskSpec::make(Task::coverage, 3, 3);
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  std::size_t total_steps = 200000;
  std::size_t checkpoint_every = 10;  // updates; 0 keeps only the final checkpoint

  ModelConfig effective_model() const { return model_config_for(task, model); }

  void validate() const {
    task.validate();
    model.validate();
    train.validate();
    if (total_steps == 0) throw ConfigError("total_steps must be positive");
    if (out_dir.empty()) throw ConfigError("output directory must be set");
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Ordered key list of the config file format.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  auto sz = [](std::size_t v) { return std::to_string(v); };
  auto db = [](double v) { return format_double(v); };
  return {
      {"format_version", std::to_string(kConfigFormatVersion)},
      {"task", to_string(c.task.task)},
      {"n_agents", sz(c.task.n_agents)},
      {"n_landmarks", sz(c.task.n_landmarks)},
      {"max_episode_steps", sz(c.task.max_episode_steps)},
      {"activation", to_string(c.model.activation)},
      {"heads", sz(c.model.heads)},
      {"hops", sz(c.model.hops)},
      {"embed_dim", sz(c.model.embed_dim)},
      {"key_dim", sz(c.model.key_dim)},
      {"head_hidden", sz(c.model.head_hidden)},
      {"seed", std::to_string(c.seed)},
      {"out", c.out_dir},
      {"total_steps", sz(c.total_steps)},
      {"checkpoint_every", sz(c.checkpoint_every)},
      {"gamma_discount", db(c.train.gamma_discount)},
      {"gae_lambda", db(c.train.gae_lambda)},
      {"clip_epsilon", db(c.train.clip_epsilon)},
      {"ppo_epochs", sz(c.train.ppo_epochs)},
      {"minibatches", sz(c.train.minibatches)},
      {"learning_rate", db(c.train.learning_rate)},
      {"value_coef", db(c.train.value_coef)},
      {"entropy_coef", db(c.train.entropy_coef)},
      {"max_grad_norm", db(c.train.max_grad_norm)},
      {"reward_scale", db(c.train.reward_scale)},
      {"rollout_length", sz(c.train.rollout_length)},
      {"num_envs", sz(c.train.num_envs)},
      {"eval_every_episodes", sz(c.train.eval_every_episodes)},
      {"eval_episodes", sz(c.train.eval_episodes)},
  };
}

/// Applies one key = value setting. Changing `task` resets the task-dependent
/// defaults (landmarks, episode length), so put it before those keys.
inline void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  auto sz = [&] { return parse_number<std::size_t>(key, value); };
  auto db = [&] { return parse_number<double>(key, value); };
  if (key == "format_version") {
    if (value != std::to_string(kConfigFormatVersion)) {
      throw ConfigError("config format_version " + value + " unsupported (supported: " +
                        std::to_string(kConfigFormatVersion) + ")");
    }
  } else if (key == "task") {
    const auto n = c.task.n_agents;
    c.task = TaskSpec::make(parse_task(value), n);
  } else if (key == "n_agents") {
    const auto t = c.task.task;
    const auto lm = c.task.n_landmarks;
    const auto steps = c.task.max_episode_steps;
    c.task = TaskSpec::make(t, sz(), t == Task::coverage ? lm : 0);
    c.task.max_episode_steps = steps;
  } else if (key == "n_landmarks") {
    if (c.task.task == Task::coverage) c.task.n_landmarks = sz();
  } else if (key == "max_episode_steps") {
    c.task.max_episode_steps = sz();
  } else if (key == "activation") {
    c.model.activation = parse_activation(value);
  } else if (key == "heads") {
    c.model.heads = sz();
  } else if (key == "hops") {
    c.model.hops = sz();
  } else if (key == "embed_dim") {
    c.model.embed_dim = sz();
  } else if (key == "key_dim") {
    c.model.key_dim = sz();
  } else if (key == "head_hidden") {
    c.model.head_hidden = sz();
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "out") {
    c.out_dir = value;
  } else if (key == "total_steps") {
    c.total_steps = sz();
  } else if (key == "checkpoint_every") {
    c.checkpoint_every = sz();
  } else if (key == "gamma_discount") {
    c.train.gamma_discount = db();
  } else if (key == "gae_lambda") {
    c.train.gae_lambda = db();
  } else if (key == "clip_epsilon") {
    c.train.clip_epsilon = db();
  } else if (key == "ppo_epochs") {
    c.train.ppo_epochs = sz();
  } else if (key == "minibatches") {
    c.train.minibatches = sz();
  } else if (key == "learning_rate") {
    c.train.learning_rate = db();
  } else if (key == "value_coef") {
    c.train.value_coef = db();
  } else if (key == "entropy_coef") {
    c.train.entropy_coef = db();
  } else if (key == "max_grad_norm") {
    c.train.max_grad_norm = db();
  } else if (key == "reward_scale") {
    c.train.reward_scale = db();
  } else if (key == "rollout_length") {
    c.train.rollout_length = sz();
  } else if (key == "num_envs") {
    c.train.num_envs = sz();
  } else if (key == "eval_every_episodes") {
    c.train.eval_every_episodes = sz();
  } else if (key == "eval_episodes") {
    c.train.eval_episodes = sz();
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_config_entry(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

inline std::string config_text(const RunConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

inline nlohmann::ordered_json config_json(const RunConfig& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_entries(c)) j[k] = v;
  return j;
}

inline RunConfig config_from_json(const nlohmann::ordered_json& j) {
  RunConfig c;
  for (const auto& [k, v] : j.items()) apply_config_entry(c, k, v.get<std::string>());
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct TrainingProgress {
  std::size_t updates = 0;
  std::size_t env_steps = 0;
  std::size_t episodes = 0;
  std::size_t evaluations = 0;
};

struct ParamArray {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  RunConfig config;
  TrainingProgress progress;
  std::vector<ParamArray> params;
  std::optional<AdamState> optimizer;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Checkpoint make_checkpoint(const PolicyValueNet& net, const RunConfig& config, const TrainingProgress& progress,
                                  const AdamState* optimizer = nullptr) {
  Checkpoint ck;
  ck.config = config;
  ck.progress = progress;
  for (const auto& p : net.parameters()) {
    ck.params.push_back({p.name, p.tensor.rows(), p.tensor.cols(), {p.tensor.values().begin(), p.tensor.values().end()}});
  }
  if (optimizer) ck.optimizer = *optimizer;
  return ck;
}

inline nlohmann::ordered_json checkpoint_json(const Checkpoint& ck) {
  nlohmann::ordered_json j;
  j["format_version"] = ck.format_version;
  j["config"] = config_json(ck.config);
  j["step"] = ck.progress.env_steps;
  j["progress"] = {{"updates", ck.progress.updates},
                   {"env_steps", ck.progress.env_steps},
                   {"episodes", ck.progress.episodes},
                   {"evaluations", ck.progress.evaluations}};
  j["params"] = nlohmann::ordered_json::array();
  for (const auto& p : ck.params) {
    j["params"].push_back({{"name", p.name}, {"shape", {p.rows, p.cols}}, {"data", p.data}});
  }
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    j["optimizer"] = {{"learning_rate", o.learning_rate}, {"beta1", o.beta1},
                      {"beta2", o.beta2},                 {"epsilon", o.epsilon},
                      {"step_count", o.step_count},       {"first_moment", o.first_moment},
                      {"second_moment", o.second_moment}};
  }
  return j;
}

inline void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << checkpoint_json(ck).dump() << '\n';
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
  try {
    Checkpoint ck;
    if (!j.contains("format_version")) throw CheckpointError("corrupt checkpoint: missing format_version");
    ck.format_version = j.at("format_version").get<int>();
    if (ck.format_version != kCheckpointFormatVersion) {
      throw CheckpointError("checkpoint format_version " + std::to_string(ck.format_version) +
                            " unsupported (supported: " + std::to_string(kCheckpointFormatVersion) + ")");
    }
    ck.config = config_from_json(j.at("config"));
    const auto& pr = j.at("progress");
    ck.progress = {pr.at("updates").get<std::size_t>(), pr.at("env_steps").get<std::size_t>(),
                   pr.at("episodes").get<std::size_t>(), pr.at("evaluations").get<std::size_t>()};
    for (const auto& p : j.at("params")) {
      ParamArray a;
      a.name = p.at("name").get<std::string>();
      a.rows = p.at("shape").at(0).get<std::size_t>();
      a.cols = p.at("shape").at(1).get<std::size_t>();
      a.data = p.at("data").get<std::vector<double>>();
      if (a.data.size() != a.rows * a.cols) throw CheckpointError("corrupt checkpoint: data size of '" + a.name + "'");
      ck.params.push_back(std::move(a));
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      AdamState s;
      s.learning_rate = o.at("learning_rate").get<double>();
      s.beta1 = o.at("beta1").get<double>();
      s.beta2 = o.at("beta2").get<double>();
      s.epsilon = o.at("epsilon").get<double>();
      s.step_count = o.at("step_count").get<long>();
      s.first_moment = o.at("first_moment").get<std::vector<std::vector<double>>>();
      s.second_moment = o.at("second_moment").get<std::vector<std::vector<double>>>();
      ck.optimizer = std::move(s);
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  return parse_checkpoint(read_file(path));
}

/// Copies checkpoint parameters into `net`, which must have the same names and shapes.
inline void restore_parameters(const Checkpoint& ck, PolicyValueNet& net) {
  auto params = net.parameters();
  if (params.size() != ck.params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ck.params.size()) + " parameters, model expects " +
                          std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& src = ck.params[k];
    auto& dst = params[k];
    if (src.name != dst.name) {
      throw CheckpointError("parameter " + std::to_string(k) + " is '" + src.name + "' in checkpoint, model expects '" +
                            dst.name + "'");
    }
    if (src.rows != dst.tensor.rows() || src.cols != dst.tensor.cols()) {
      throw CheckpointError("shape mismatch for parameter '" + src.name + "': checkpoint " +
                            Shape{src.rows, src.cols}.str() + ", model " + dst.tensor.shape().str());
    }
    std::copy(src.data.begin(), src.data.end(), dst.tensor.mutable_values().begin());
  }
}

inline PolicyValueNet network_from_checkpoint(const Checkpoint& ck) {
  PolicyValueNet net(ck.config.effective_model(), 0);
  restore_parameters(ck, net);
  return net;
}

// ---------------------------------------------------------------------------
// Output directory

inline void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw std::runtime_error("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

// ---------------------------------------------------------------------------
// Training

struct MetricsRow {
  std::size_t episode = 0;
  std::size_t steps = 0;
  double mean_reward_per_step = 0.0;
  double success_rate = 0.0;
  double mean_support_size = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

inline std::string metrics_header() {
  return "# sparse_att metrics format_version=" + std::to_string(kMetricsFormatVersion) +
         "\nepisode,steps,mean_reward_per_step,success_rate,mean_support_size,policy_loss,value_loss,entropy,"
         "clip_fraction\n";
}

inline std::string metrics_line(const MetricsRow& r) {
  return std::to_string(r.episode) + "," + std::to_string(r.steps) + "," + format_double(r.mean_reward_per_step) +
         "," + format_double(r.success_rate) + "," + format_double(r.mean_support_size) + "," +
         format_double(r.policy_loss) + "," + format_double(r.value_loss) + "," + format_double(r.entropy) + "," +
         format_double(r.clip_fraction) + "\n";
}

struct TrainResult {
  fs::path final_checkpoint;
  fs::path metrics;
  TrainingProgress progress;
  std::vector<MetricsRow> rows;
};

/// Collect/update until total_steps environment steps; evaluates with the greedy
/// policy each time the completed-episode count crosses a multiple of
/// eval_every_episodes. With `resume`, parameters, optimizer state and counters
/// continue from the checkpoint and metrics are appended.
inline TrainResult run_train(const RunConfig& config, const std::optional<fs::path>& resume = std::nullopt,
                             std::ostream* log = nullptr) {
  config.validate();
  const fs::path out_dir = config.out_dir;
  prepare_output_dir(out_dir);

  PolicyValueNet net(config.effective_model(), derive_seed(config.seed, 0));
  AdamState adam;
  adam.learning_rate = config.train.learning_rate;
  TrainingProgress progress;
  if (resume) {
    const auto ck = load_checkpoint(*resume);
    restore_parameters(ck, net);
    if (ck.optimizer) adam = *ck.optimizer;
    progress = ck.progress;
  }

  {
    std::ofstream cfg(out_dir / "config.txt", std::ios::trunc);
    cfg << config_text(config);
  }
  TrainResult result;
  result.metrics = out_dir / "metrics.csv";
  const bool fresh_metrics = !resume || !fs::exists(result.metrics);
  std::ofstream metrics(result.metrics, fresh_metrics ? std::ios::trunc : std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write " + result.metrics.string());
  if (fresh_metrics) metrics << metrics_header();

  const auto& task = config.task;
  RolloutWorkers workers(task, config.train.num_envs, derive_seed(config.seed, 1'000'000 + progress.updates));
  const std::size_t episodes_before = progress.episodes;
  UpdateStats last;
  while (progress.env_steps < config.total_steps) {
    auto tr = collect_rollout(task, net, workers, config.train.rollout_length);
    compute_advantages(tr, config.train);
    Rng update_rng(derive_seed(config.seed, 2'000'000 + progress.updates));
    last = ppo_update(tr, net, adam, config.train, update_rng);
    progress.updates += 1;
    progress.env_steps += config.train.rollout_length;
    progress.episodes = episodes_before + workers.episodes_completed;
    if (log) {
      *log << "update " << progress.updates << " steps " << progress.env_steps << " episodes " << progress.episodes
           << " policy_loss " << last.policy_loss << " value_loss " << last.value_loss << " entropy " << last.entropy
           << " support " << last.mean_support_size << (last.aborted ? " (aborted: " + last.abort_reason + ")" : "")
           << "\n";
    }

    while (progress.episodes >= (progress.evaluations + 1) * config.train.eval_every_episodes) {
      PolicyController greedy(net, true);
      const auto m = evaluate(task, greedy, config.train.eval_episodes, derive_seed(config.seed, 3'000'000 + progress.evaluations));
      progress.evaluations += 1;
      MetricsRow row{progress.evaluations * config.train.eval_every_episodes,
                     progress.env_steps,
                     m.mean_reward_per_step,
                     m.success_rate,
                     m.mean_support_size,
                     last.policy_loss,
                     last.value_loss,
                     last.entropy,
                     last.clip_fraction};
      metrics << metrics_line(row) << std::flush;
      result.rows.push_back(row);
      if (log) {
        *log << "eval @" << row.episode << " reward/step " << row.mean_reward_per_step << " success "
             << row.success_rate << " support " << row.mean_support_size << "\n";
      }
    }
    if (config.checkpoint_every && progress.updates % config.checkpoint_every == 0) {
      save_checkpoint(make_checkpoint(net, config, progress, &adam),
                      out_dir / ("checkpoint_" + std::to_string(progress.updates) + ".json"));
    }
  }
  result.final_checkpoint = out_dir / "final.json";
  save_checkpoint(make_checkpoint(net, config, progress, &adam), result.final_checkpoint);
  result.progress = progress;
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation report

struct EvalReport {
  EvalMetrics policy;
  EvalMetrics random_baseline;
};

inline nlohmann::ordered_json metrics_json(const EvalMetrics& m) {
  nlohmann::ordered_json j;
  j["episodes"] = m.episodes;
  j["mean_reward_per_step"] = m.mean_reward_per_step;
  j["reward_standard_error"] = m.reward_standard_error();
  j["success_rate"] = m.success_rate;
  j["mean_support_size"] = m.mean_support_size;
  j["max_support_size"] = m.max_support_size;
  j["mean_adjacency"] = nlohmann::ordered_json::array();
  for (const auto& a : m.mean_adjacency) {
    j["mean_adjacency"].push_back(
        {{"hop", a.hop}, {"head", a.head}, {"relation", to_string(a.relation)}, {"matrix", a.matrix}});
  }
  return j;
}

inline EvalReport run_eval(const Checkpoint& ck, std::size_t episodes, std::uint64_t seed,
                           const std::optional<fs::path>& out_dir = std::nullopt) {
  const auto net = network_from_checkpoint(ck);
  PolicyController greedy(net, true);
  UniformRandomController random(derive_seed(seed, 1));
  EvalReport r{evaluate(ck.config.task, greedy, episodes, seed), evaluate(ck.config.task, random, episodes, seed)};
  if (out_dir) {
    prepare_output_dir(*out_dir);
    nlohmann::ordered_json j;
    j["format_version"] = kReportFormatVersion;
    j["task"] = to_string(ck.config.task.task);
    j["activation"] = to_string(ck.config.model.activation);
    j["seed"] = seed;
    j["policy"] = metrics_json(r.policy);
    j["random_baseline"] = metrics_json(r.random_baseline);
    std::ofstream(*out_dir / "eval.json", std::ios::trunc) << j.dump(2) << '\n';
  }
  return r;
}

// ---------------------------------------------------------------------------
// Competition

/// Drives every agent of `team` toward the spot behind the ball (seen from the
/// goal it attacks) and then through the ball toward that goal.
class ScriptedAttacker : public Controller {
 public:
  std::vector<JointAction> act(const TaskSpec& spec, std::span<const WorldState> states) override {
    std::vector<JointAction> out;
    for (const auto& s : states) {
      JointAction a(s.agents(), kNoop);
      for (std::size_t i = 0; i < s.agents(); ++i) a[i] = choose(spec, s, i);
      out.push_back(std::move(a));
    }
    return out;
  }

 private:
  static Vec2 unit(Vec2 v) { return v * (1.0 / std::max(v.norm(), 1e-9)); }

  static int choose(const TaskSpec& spec, const WorldState& s, std::size_t i) {
    const auto& ph = spec.physics;
    const Vec2 ball = s.ball->position;
    const double contact = s.ball->radius + ph.agent_radius;
    const double reach = contact + 0.05;
    const double lim = ph.arena_half - ph.agent_radius;
    auto inside = [&](Vec2 v) { return Vec2{std::clamp(v.x, -lim, lim), std::clamp(v.y, -lim, lim)}; };

    // Near a wall the spot straight behind the ball may be unreachable; push
    // from the nearest reachable spot instead, which steers the ball inward.
    const Vec2 behind = inside(ball - unit(spec.opponent_goal(s.team[i]) - ball) * reach);
    const Vec2 dir = unit(ball - behind);
    const Vec2 perp{-dir.y, dir.x};
    const Vec2 p = s.position[i];
    const Vec2 rel = p - ball;
    const double along = rel.x * dir.x + rel.y * dir.y;
    const double lateral = rel.x * perp.x + rel.y * perp.y;

    Vec2 target = behind;
    if (along < 0.0 && std::fabs(lateral) < 0.5 * contact) {
      target = ball + dir * 0.5;
    } else if (along > -0.5 * reach) {
      // Go around the ball on the agent's side rather than through it.
      double side = lateral >= 0.0 ? 1.0 : -1.0;
      Vec2 around = ball + perp * (side * (contact + 0.1)) - dir * reach;
      if (inside(around) != around) {
        side = -side;
        around = ball + perp * (side * (contact + 0.1)) - dir * reach;
      }
      target = inside(around);
    }
    const Vec2 want = (target - p) * 3.0 - s.velocity[i];
    if (std::fabs(want.x) < 0.05 && std::fabs(want.y) < 0.05) return kNoop;
    if (std::fabs(want.x) >= std::fabs(want.y)) return want.x > 0.0 ? kPlusX : kMinusX;
    return want.y > 0.0 ? kPlusY : kMinusY;
  }
};

class NoopController : public Controller {
 public:
  std::vector<JointAction> act(const TaskSpec& spec, std::span<const WorldState> states) override {
    return std::vector<JointAction>(states.size(), JointAction(spec.n_agents, kNoop));
  }
};

/// One side of a match: a scripted stub or a trained network.
struct Competitor {
  std::string label;
  std::shared_ptr<PolicyValueNet> net;  // null for stubs
  std::function<std::unique_ptr<Controller>()> make;
  std::optional<TaskSpec> task;         // set for networks
};

inline Competitor make_competitor(const std::string& source) {
  Competitor c;
  c.label = source;
  if (source == "stub:noop") {
    c.make = [] { return std::make_unique<NoopController>(); };
  } else if (source == "stub:attacker") {
    c.make = [] { return std::make_unique<ScriptedAttacker>(); };
  } else if (source.rfind("stub:", 0) == 0) {
    throw std::invalid_argument("unknown stub '" + source + "' (expected stub:noop or stub:attacker)");
  } else {
    const auto ck = load_checkpoint(source);
    c.net = std::make_shared<PolicyValueNet>(network_from_checkpoint(ck));
    c.task = ck.config.task;
    auto net = c.net;
    c.make = [net] { return std::make_unique<PolicyController>(*net, true); };
  }
  return c;
}

struct CompetitionCell {
  std::string red;
  std::string blue;
  std::size_t red_wins = 0;
  std::size_t blue_wins = 0;
  std::size_t draws = 0;
  std::size_t episodes() const { return red_wins + blue_wins + draws; }
};

struct CompetitionReport {
  std::size_t episodes = 0;
  std::vector<CompetitionCell> cells;
};

/// Red agents follow `red`, blue agents follow `blue`; a draw is an episode in
/// which neither team scores.
inline CompetitionCell play_match(const TaskSpec& spec, Controller& red, Controller& blue, std::size_t episodes,
                                  std::uint64_t seed) {
  if (spec.task != Task::soccer) throw ConfigError("competitions need the soccer task");
  CompetitionCell cell;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    WorldState s = reset(spec, derive_seed(seed, ep));
    std::optional<int> scorer;
    while (true) {
      const auto ra = red.act(spec, std::span<const WorldState>(&s, 1)).front();
      const auto ba = blue.act(spec, std::span<const WorldState>(&s, 1)).front();
      JointAction a(s.agents());
      for (std::size_t i = 0; i < s.agents(); ++i) a[i] = s.team[i] == 0 ? ra[i] : ba[i];
      auto res = step(spec, s, a);
      s = std::move(res.state);
      if (res.info.scorer) scorer = res.info.scorer;
      if (res.done) break;
    }
    if (!scorer) ++cell.draws;
    else if (*scorer == 0) ++cell.red_wins;
    else ++cell.blue_wins;
  }
  return cell;
}

/// Plays every (red, blue) pairing. Network competitors must all be soccer
/// models with the same team sizes; `fallback` is the task used when every
/// competitor is a stub.
inline CompetitionReport run_compete(const std::vector<std::string>& red_sources,
                                     const std::vector<std::string>& blue_sources, std::size_t episodes,
                                     std::uint64_t seed, const TaskSpec& fallback) {
  if (episodes == 0) throw std::invalid_argument("compete: need at least one episode");
  std::vector<Competitor> reds, blues;
  for (const auto& s : red_sources) reds.push_back(make_competitor(s));
  for (const auto& s : blue_sources) blues.push_back(make_competitor(s));
  std::optional<TaskSpec> task;
  for (const auto* side : {&reds, &blues}) {
    for (const auto& c : *side) {
      if (!c.task) continue;
      if (c.task->task != Task::soccer) {
        throw ConfigError("competitor '" + c.label + "' was trained on " + to_string(c.task->task) + ", not soccer");
      }
      if (task && task->n_agents != c.task->n_agents) {
        throw ConfigError("competitor '" + c.label + "' has " + std::to_string(c.task->n_agents) +
                          " agents, expected " + std::to_string(task->n_agents));
      }
      if (!task) task = c.task;
    }
  }
  const TaskSpec spec = task ? *task : fallback;
  spec.validate();
  CompetitionReport report;
  report.episodes = episodes;
  for (auto& r : reds) {
    for (auto& b : blues) {
      auto rc = r.make();
      auto bc = b.make();
      auto cell = play_match(spec, *rc, *bc, episodes, seed);
      cell.red = r.label;
      cell.blue = b.label;
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

inline nlohmann::ordered_json report_json(const CompetitionReport& r) {
  nlohmann::ordered_json j;
  j["format_version"] = kReportFormatVersion;
  j["episodes"] = r.episodes;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) {
    j["cells"].push_back({{"red", c.red}, {"blue", c.blue}, {"red_wins", c.red_wins}, {"blue_wins", c.blue_wins},
                          {"draws", c.draws}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Graph dumps

struct GraphDumpSummary {
  std::size_t steps = 0;
  std::size_t matrices = 0;
  double mean_support_size = 0.0;
  double max_support_size = 0.0;
  std::optional<double> inter_team_mass_fraction;
};

inline nlohmann::ordered_json adjacency_json(std::size_t step, const AdjacencyMatrix& a, std::size_t n) {
  nlohmann::ordered_json j;
  j["format_version"] = kGraphDumpFormatVersion;
  j["step"] = step;
  j["hop"] = a.hop;
  j["head"] = a.head;
  j["relation"] = to_string(a.relation);
  j["n"] = n;
  j["matrix"] = a.matrix;
  return j;
}

/// Rolls the greedy policy for `steps` steps from reset(task, seed) (resetting
/// with derived seeds when an episode ends) and writes graphs.jsonl and
/// graph_summary.json into out_dir.
inline GraphDumpSummary dump_graph(const Checkpoint& ck, std::uint64_t seed, std::size_t steps, const fs::path& out_dir) {
  prepare_output_dir(out_dir);
  const auto net = network_from_checkpoint(ck);
  const auto& spec = ck.config.task;
  const std::size_t n = spec.n_agents;
  PolicyController greedy(net, true);
  std::ofstream lines(out_dir / "graphs.jsonl", std::ios::trunc);
  if (!lines) throw std::runtime_error("cannot write graphs.jsonl");

  GraphDumpSummary summary;
  double support_total = 0.0;
  std::size_t support_rows = 0;
  double cross_mass = 0.0, total_mass = 0.0;
  WorldState s = reset(spec, seed);
  std::size_t episode = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto actions = greedy.act(spec, std::span<const WorldState>(&s, 1)).front();
    const auto* fr = greedy.last_forward();
    std::vector<int> group(n, 0);
    if (spec.task == Task::soccer) {
      group = s.team;
    } else if (spec.task == Task::formation) {
      const auto f = formation_terms(spec, s);
      for (std::size_t i : f.outer.members) group[i] = 1;
    }
    for (const auto& rec : fr->attention) {
      const AdjacencyMatrix a{rec.hop, rec.head, rec.relation, adjacency_for_scene(rec, 0, n)};
      lines << adjacency_json(t, a, n).dump() << '\n';
      summary.matrices += 1;
      for (std::size_t k : support_sizes(rec)) {
        support_total += static_cast<double>(k);
        summary.max_support_size = std::max(summary.max_support_size, static_cast<double>(k));
        ++support_rows;
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double w = a.matrix[i * n + j];
          total_mass += w;
          if (group[i] != group[j]) cross_mass += w;
        }
      }
    }
    auto res = step(spec, s, actions);
    s = res.done ? reset(spec, derive_seed(seed, ++episode)) : std::move(res.state);
    summary.steps += 1;
  }
  if (support_rows) summary.mean_support_size = support_total / static_cast<double>(support_rows);
  if (spec.task != Task::coverage && total_mass > 0.0) summary.inter_team_mass_fraction = cross_mass / total_mass;

  nlohmann::ordered_json j;
  j["format_version"] = kGraphDumpFormatVersion;
  j["task"] = to_string(spec.task);
  j["activation"] = to_string(ck.config.model.activation);
  j["n_agents"] = n;
  j["steps"] = summary.steps;
  j["matrices"] = summary.matrices;
  j["mean_support_size"] = summary.mean_support_size;
  j["max_support_size"] = summary.max_support_size;
  j["inter_team_mass_fraction"] = nullptr;
  if (summary.inter_team_mass_fraction) j["inter_team_mass_fraction"] = *summary.inter_team_mass_fraction;
  std::ofstream(out_dir / "graph_summary.json", std::ios::trunc) << j.dump(2) << '\n';
  return summary;
}

}  // namespace sparse_att
