// On-policy training with a single parameter set shared by every agent.
//
// A rollout runs `num_envs` environments in lockstep and batches all their
// agents through one forward pass per step. Every agent-step becomes one PPO
// sample; advantages come from GAE along each (env, agent) sequence and are
// normalized over the whole rollout.

#pragma once

#include "sparse_att/adam.hpp"
#include "sparse_att/graph_attention.hpp"
#include "sparse_att/nn.hpp"
#include "sparse_att/particle_env.hpp"
#include "sparse_att/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparse_att {

struct TrainConfig {
  double gamma_discount = 0.95;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  std::size_t ppo_epochs = 4;
  std::size_t minibatches = 32;
  double learning_rate = 1e-3;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;  // 0 disables clipping
  double reward_scale = 0.1;   // applied to rewards before GAE; metrics stay unscaled
  std::size_t rollout_length = 4096;
  std::size_t num_envs = 8;
  std::size_t eval_every_episodes = 320;
  std::size_t eval_episodes = 32;

  void validate() const {
    if (rollout_length == 0 || num_envs == 0 || rollout_length % num_envs != 0) {
      throw ConfigError("rollout_length must be a positive multiple of num_envs");
    }
    if (minibatches == 0 || minibatches > rollout_length) throw ConfigError("minibatches must be in [1, rollout_length]");
    if (ppo_epochs == 0) throw ConfigError("ppo_epochs must be positive");
    if (!(gamma_discount >= 0.0 && gamma_discount <= 1.0)) throw ConfigError("gamma_discount must be in [0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must be in [0, 1]");
    if (!(clip_epsilon > 0.0)) throw ConfigError("clip_epsilon must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(reward_scale > 0.0 && std::isfinite(reward_scale))) throw ConfigError("reward_scale must be positive");
    if (eval_every_episodes == 0 || eval_episodes == 0) throw ConfigError("evaluation cadence and size must be positive");
  }
};

/// splitmix64; derives independent seeds from (base, stream).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Observations -> network batch

inline void append_scene(const TaskSpec& spec, const WorldState& s, SceneBatch& b) {
  for (std::size_t i = 0; i < s.agents(); ++i) {
    const auto o = observe(spec, s, i);
    b.agent_states.insert(b.agent_states.end(), o.agent.begin(), o.agent.end());
    for (const auto& e : o.entities) {
      b.entity_states.push_back(e.x);
      b.entity_states.push_back(e.y);
    }
    b.team.push_back(o.team);
  }
  b.scenes += 1;
}

inline SceneBatch make_scene_batch(const TaskSpec& spec, std::span<const WorldState> states) {
  SceneBatch b;
  b.agents = spec.n_agents;
  b.entities = spec.entity_count();
  for (const auto& s : states) append_scene(spec, s, b);
  return b;
}

inline ModelConfig model_config_for(const TaskSpec& spec, ModelConfig base) {
  base.heterogeneous = spec.heterogeneous();
  return base;
}

// ---------------------------------------------------------------------------
// Acting

/// Row-wise categorical sampling from logits. Returns log-probabilities of the
/// chosen actions; greedy picks the lowest-index argmax.
struct Sampled {
  std::vector<int> actions;
  std::vector<double> log_probs;
};

inline Sampled sample_actions(const Tensor& logits, bool greedy, Rng* rng) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  Sampled out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = logits.values().data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!std::isfinite(l[c])) {
        std::ostringstream msg;
        msg << "non-finite policy logits at row " << r << ": [";
        for (std::size_t k = 0; k < cols; ++k) msg << (k ? ", " : "") << l[k];
        msg << "]";
        throw std::runtime_error(msg.str());
      }
    }
    const double m = *std::max_element(l, l + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(l[c] - m);
    const double lse = m + std::log(z);
    int a = 0;
    if (greedy) {
      a = static_cast<int>(std::max_element(l, l + cols) - l);
    } else {
      const double target = u(*rng);
      double acc = 0.0;
      a = static_cast<int>(cols) - 1;
      for (std::size_t c = 0; c < cols; ++c) {
        acc += std::exp(l[c] - lse);
        if (target < acc) {
          a = static_cast<int>(c);
          break;
        }
      }
    }
    out.actions.push_back(a);
    out.log_probs.push_back(l[a] - lse);
  }
  return out;
}

/// Chooses joint actions for a team-agnostic set of world states.
class Controller {
 public:
  virtual ~Controller() = default;
  /// World-frame actions for every agent of every state.
  virtual std::vector<JointAction> act(const TaskSpec& spec, std::span<const WorldState> states) = 0;
  /// Attention of the last call, when the controller is a network.
  virtual const ForwardResult* last_forward() const { return nullptr; }
};

class PolicyController : public Controller {
 public:
  PolicyController(const PolicyValueNet& net, bool greedy, std::uint64_t seed = 0)
      : net_(&net), greedy_(greedy), rng_(seed) {}

  std::vector<JointAction> act(const TaskSpec& spec, std::span<const WorldState> states) override {
    NoGradGuard no_grad;
    const auto batch = make_scene_batch(spec, states);
    last_ = net_->forward(batch);
    const auto sampled = sample_actions(last_.logits, greedy_, &rng_);
    std::vector<JointAction> out;
    for (std::size_t s = 0; s < states.size(); ++s) {
      JointAction a(spec.n_agents);
      for (std::size_t i = 0; i < spec.n_agents; ++i)
        a[i] = to_world_action(spec, states[s], i, sampled.actions[s * spec.n_agents + i]);
      out.push_back(std::move(a));
    }
    return out;
  }
  const ForwardResult* last_forward() const override { return &last_; }

 private:
  const PolicyValueNet* net_;
  bool greedy_;
  Rng rng_;
  ForwardResult last_;
};

/// Parameter-free baseline: every agent picks uniformly among the actions.
class UniformRandomController : public Controller {
 public:
  explicit UniformRandomController(std::uint64_t seed) : rng_(seed) {}
  std::vector<JointAction> act(const TaskSpec& spec, std::span<const WorldState> states) override {
    std::uniform_int_distribution<int> pick(0, kActionCount - 1);
    std::vector<JointAction> out;
    for (std::size_t s = 0; s < states.size(); ++s) {
      JointAction a(spec.n_agents);
      for (int& x : a) x = pick(rng_);
      out.push_back(std::move(a));
    }
    return out;
  }

 private:
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Rollouts

struct Trajectory {
  std::size_t num_envs = 0;
  std::size_t steps_per_env = 0;
  std::size_t agents = 0;
  std::size_t entities = 0;
  // Per sample k = t * num_envs + env.
  std::vector<double> agent_states;   // k, agent, 4
  std::vector<double> entity_states;  // k, agent, entity, 2
  std::vector<int> team;              // k, agent
  std::vector<int> actions;           // k, agent (policy frame)
  std::vector<double> log_probs;      // k, agent
  std::vector<double> values;         // k, agent
  std::vector<double> rewards;        // k, agent
  std::vector<std::uint8_t> dones;    // k
  std::vector<double> bootstrap;      // env, agent: V of the state after the buffer
  std::vector<double> advantages;     // k, agent
  std::vector<double> returns;        // k, agent

  std::size_t timesteps() const { return num_envs * steps_per_env; }

  SceneBatch scenes(std::span<const std::size_t> samples) const {
    SceneBatch b;
    b.agents = agents;
    b.entities = entities;
    b.scenes = samples.size();
    const std::size_t as = agents * 4, es = agents * entities * 2;
    for (std::size_t k : samples) {
      b.agent_states.insert(b.agent_states.end(), agent_states.begin() + k * as, agent_states.begin() + (k + 1) * as);
      b.entity_states.insert(b.entity_states.end(), entity_states.begin() + k * es,
                             entity_states.begin() + (k + 1) * es);
      b.team.insert(b.team.end(), team.begin() + k * agents, team.begin() + (k + 1) * agents);
    }
    return b;
  }
};

/// Environments that persist across rollouts; episodes roll over buffer ends.
struct RolloutWorkers {
  std::vector<WorldState> envs;
  std::vector<double> episode_return;  // env: sum over steps of mean agent reward
  Rng rng;
  std::size_t episodes_completed = 0;
  std::vector<double> finished_reward_per_step;

  RolloutWorkers(const TaskSpec& spec, std::size_t num_envs, std::uint64_t seed) : rng(seed) {
    for (std::size_t e = 0; e < num_envs; ++e) envs.push_back(reset(spec, rng()));
    episode_return.assign(num_envs, 0.0);
  }
};

inline Trajectory collect_rollout(const TaskSpec& spec, const PolicyValueNet& net, RolloutWorkers& workers,
                                  std::size_t length, bool greedy = false) {
  const std::size_t num_envs = workers.envs.size();
  if (length == 0 || length % num_envs != 0) {
    throw std::invalid_argument("collect_rollout: length must be a positive multiple of the env count");
  }
  NoGradGuard no_grad;
  Trajectory tr;
  tr.num_envs = num_envs;
  tr.steps_per_env = length / num_envs;
  tr.agents = spec.n_agents;
  tr.entities = spec.entity_count();
  const std::size_t n = spec.n_agents;

  for (std::size_t t = 0; t < tr.steps_per_env; ++t) {
    const auto batch = make_scene_batch(spec, workers.envs);
    const auto fr = net.forward(batch);
    const auto sampled = sample_actions(fr.logits, greedy, &workers.rng);
    tr.agent_states.insert(tr.agent_states.end(), batch.agent_states.begin(), batch.agent_states.end());
    tr.entity_states.insert(tr.entity_states.end(), batch.entity_states.begin(), batch.entity_states.end());
    tr.team.insert(tr.team.end(), batch.team.begin(), batch.team.end());
    tr.actions.insert(tr.actions.end(), sampled.actions.begin(), sampled.actions.end());
    tr.log_probs.insert(tr.log_probs.end(), sampled.log_probs.begin(), sampled.log_probs.end());
    tr.values.insert(tr.values.end(), fr.values.values().begin(), fr.values.values().end());

    for (std::size_t e = 0; e < num_envs; ++e) {
      auto& env = workers.envs[e];
      JointAction world(n);
      for (std::size_t i = 0; i < n; ++i) world[i] = to_world_action(spec, env, i, sampled.actions[e * n + i]);
      auto res = step(spec, env, world);
      tr.rewards.insert(tr.rewards.end(), res.rewards.begin(), res.rewards.end());
      tr.dones.push_back(res.done);
      workers.episode_return[e] += std::accumulate(res.rewards.begin(), res.rewards.end(), 0.0) / static_cast<double>(n);
      if (res.done) {
        workers.finished_reward_per_step.push_back(workers.episode_return[e] /
                                                   static_cast<double>(res.state.step_index));
        workers.episode_return[e] = 0.0;
        workers.episodes_completed += 1;
        env = reset(spec, workers.rng());
      } else {
        env = std::move(res.state);
      }
    }
  }
  const auto tail = net.forward(make_scene_batch(spec, workers.envs));
  tr.bootstrap.assign(tail.values.values().begin(), tail.values.values().end());
  return tr;
}

// ---------------------------------------------------------------------------
// Advantages

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// GAE over one sequence. dones[t] marks that the episode ended with step t;
/// `bootstrap` is V of the state following the last step.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda) {
  if (rewards.size() != values.size() || rewards.size() != dones.size()) {
    throw std::invalid_argument("compute_gae: rewards, values and dones differ in length");
  }
  const std::size_t T = rewards.size();
  GaeResult out;
  out.advantages.assign(T, 0.0);
  out.returns.assign(T, 0.0);
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[t] = next_adv;
    out.returns[t] = next_adv + values[t];
    next_value = values[t];
  }
  return out;
}

/// Shifts and scales to zero mean, unit (population) variance.
inline void normalize_advantages(std::vector<double>& adv) {
  if (adv.size() < 2) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = (a - mean) / (sd + 1e-12);
  // A large offset leaves a rounding residue in the mean; one more pass removes it.
  const double residue = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  for (double& a : adv) a -= residue;
}

inline void compute_advantages(Trajectory& tr, const TrainConfig& cfg, bool normalize = true) {
  const std::size_t n = tr.agents, E = tr.num_envs, T = tr.steps_per_env;
  tr.advantages.assign(tr.timesteps() * n, 0.0);
  tr.returns.assign(tr.timesteps() * n, 0.0);
  std::vector<double> r(T), v(T);
  std::vector<std::uint8_t> d(T);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t k = t * E + e;
        r[t] = cfg.reward_scale * tr.rewards[k * n + i];
        v[t] = tr.values[k * n + i];
        d[t] = tr.dones[k];
      }
      const auto g = compute_gae(r, v, d, tr.bootstrap[e * n + i], cfg.gamma_discount, cfg.gae_lambda);
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t k = t * E + e;
        tr.advantages[k * n + i] = g.advantages[t];
        tr.returns[k * n + i] = g.returns[t];
      }
    }
  }
  if (normalize) normalize_advantages(tr.advantages);
}

// ---------------------------------------------------------------------------
// Loss

/// min(rho * A, clip(rho, 1 - eps, 1 + eps) * A) for one sample.
inline double clipped_objective(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

struct PpoLoss {
  Tensor total;
  Tensor surrogate;  // mean clipped objective (to be maximized)
  Tensor value_loss;
  Tensor entropy;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

inline PpoLoss ppo_loss(const ForwardResult& fr, std::span<const int> actions, std::span<const double> old_log_probs,
                        std::span<const double> advantages, std::span<const double> returns, const TrainConfig& cfg) {
  const std::size_t rows = fr.logits.rows();
  if (actions.size() != rows || old_log_probs.size() != rows || advantages.size() != rows || returns.size() != rows) {
    throw DimensionError("ppo_loss: per-sample inputs must match the batch rows");
  }
  const Tensor log_p = log_softmax_rows(fr.logits);
  std::vector<std::size_t> idx(actions.begin(), actions.end());
  const Tensor chosen = pick(log_p, std::move(idx));
  const Tensor old = Tensor::column({old_log_probs.begin(), old_log_probs.end()});
  const Tensor adv = Tensor::column({advantages.begin(), advantages.end()});
  const Tensor ratio = exp(sub(chosen, old));
  const Tensor s1 = mul(ratio, adv);
  const Tensor s2 = mul(clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon), adv);

  PpoLoss out;
  out.surrogate = mean(minimum(s1, s2));
  out.value_loss = mean(square(sub(fr.values, Tensor::column({returns.begin(), returns.end()}))));
  out.entropy = neg(scale(reduce(Reduce::sum, mul(exp(log_p), log_p)), 1.0 / static_cast<double>(rows)));
  out.total = add(sub(scale(out.value_loss, cfg.value_coef), out.surrogate), scale(out.entropy, -cfg.entropy_coef));

  std::size_t clipped = 0;
  double kl = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double rho = ratio.values()[r];
    clipped += std::fabs(rho - 1.0) > cfg.clip_epsilon;
    kl += old_log_probs[r] - chosen.values()[r];
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(rows);
  out.approx_kl = kl / static_cast<double>(rows);
  return out;
}

// ---------------------------------------------------------------------------
// Update

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double mean_support_size = 0.0;
  std::size_t minibatch_steps = 0;
  bool aborted = false;
  std::string abort_reason;
};

inline double mean_support(const std::vector<AttentionRecord>& records) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& rec : records) {
    for (std::size_t k : support_sizes(rec)) {
      total += static_cast<double>(k);
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

/// PPO epochs over shuffled minibatches of timesteps (each timestep carries all
/// of its agents). A non-finite loss or gradient restores the parameters and
/// optimizer state from before the update and reports the abort.
inline UpdateStats ppo_update(const Trajectory& tr, PolicyValueNet& net, AdamState& adam, const TrainConfig& cfg,
                              Rng& rng) {
  auto params = net.parameters();
  std::vector<std::vector<double>> saved_params;
  for (const auto& p : params) saved_params.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  const AdamState saved_adam = adam;
  adam.learning_rate = cfg.learning_rate;

  const std::size_t K = tr.timesteps(), n = tr.agents;
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), std::size_t{0});
  UpdateStats stats;
  auto abort = [&](std::string why) {
    for (std::size_t k = 0; k < params.size(); ++k)
      std::copy(saved_params[k].begin(), saved_params[k].end(), params[k].tensor.mutable_values().begin());
    adam = saved_adam;
    zero_grads(params);
    stats.aborted = true;
    stats.abort_reason = std::move(why);
    return stats;
  };

  for (std::size_t epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t mb = 0; mb < cfg.minibatches; ++mb) {
      const std::size_t lo = mb * K / cfg.minibatches, hi = (mb + 1) * K / cfg.minibatches;
      if (lo == hi) continue;
      std::span<const std::size_t> samples(order.data() + lo, hi - lo);
      std::vector<int> actions;
      std::vector<double> old_lp, adv, ret;
      for (std::size_t k : samples) {
        for (std::size_t i = 0; i < n; ++i) {
          actions.push_back(tr.actions[k * n + i]);
          old_lp.push_back(tr.log_probs[k * n + i]);
          adv.push_back(tr.advantages[k * n + i]);
          ret.push_back(tr.returns[k * n + i]);
        }
      }
      const auto fr = net.forward(tr.scenes(samples));
      const auto loss = ppo_loss(fr, actions, old_lp, adv, ret, cfg);
      if (!std::isfinite(loss.total.item())) return abort("non-finite loss");
      zero_grads(params);
      backward(loss.total);
      const double norm = grad_norm(params);
      if (!std::isfinite(norm)) return abort("non-finite gradient");
      if (cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm) scale_grads(params, cfg.max_grad_norm / norm);
      adam_step(params, adam);

      stats.policy_loss += -loss.surrogate.item();
      stats.value_loss += loss.value_loss.item();
      stats.entropy += loss.entropy.item();
      stats.approx_kl += loss.approx_kl;
      stats.clip_fraction += loss.clip_fraction;
      stats.mean_support_size += mean_support(fr.attention);
      stats.minibatch_steps += 1;
    }
  }
  zero_grads(params);
  if (stats.minibatch_steps) {
    const double m = static_cast<double>(stats.minibatch_steps);
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.approx_kl /= m;
    stats.clip_fraction /= m;
    stats.mean_support_size /= m;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalMetrics {
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double mean_reward_per_step = 0.0;
  double success_rate = 0.0;
  std::vector<double> episode_reward_per_step;
  double mean_support_size = 0.0;
  double max_support_size = 0.0;
  std::vector<AdjacencyMatrix> mean_adjacency;  // per (hop, relation, head), averaged over steps

  /// Standard error of mean_reward_per_step over episodes.
  double reward_standard_error() const {
    const auto& x = episode_reward_per_step;
    if (x.size() < 2) return 0.0;
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - m) * (v - m);
    var /= static_cast<double>(x.size() - 1);
    return std::sqrt(var / static_cast<double>(x.size()));
  }
};

/// Plays `episodes` full episodes, one at a time, with the given controller.
/// Episode e starts from reset(spec, derive_seed(seed, e)).
inline EvalMetrics evaluate(const TaskSpec& spec, Controller& controller, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw std::invalid_argument("evaluate: need at least one episode");
  EvalMetrics m;
  double support_total = 0.0;
  std::size_t support_rows = 0;
  std::size_t adjacency_steps = 0;
  const std::size_t n = spec.n_agents;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    WorldState s = reset(spec, derive_seed(seed, ep));
    double total = 0.0;
    while (true) {
      const auto actions = controller.act(spec, std::span<const WorldState>(&s, 1)).front();
      if (const auto* fr = controller.last_forward()) {
        if (m.mean_adjacency.empty()) {
          for (const auto& rec : fr->attention) m.mean_adjacency.push_back({rec.hop, rec.head, rec.relation, std::vector<double>(n * n, 0.0)});
        }
        for (std::size_t r = 0; r < fr->attention.size(); ++r) {
          const auto adj = adjacency_for_scene(fr->attention[r], 0, n);
          for (std::size_t k = 0; k < adj.size(); ++k) m.mean_adjacency[r].matrix[k] += adj[k];
          for (std::size_t sz : support_sizes(fr->attention[r])) {
            support_total += static_cast<double>(sz);
            m.max_support_size = std::max(m.max_support_size, static_cast<double>(sz));
            ++support_rows;
          }
        }
        ++adjacency_steps;
      }
      auto res = step(spec, s, actions);
      total += std::accumulate(res.rewards.begin(), res.rewards.end(), 0.0) / static_cast<double>(n);
      s = std::move(res.state);
      if (res.done) break;
    }
    m.episode_reward_per_step.push_back(total / static_cast<double>(s.step_index));
    if (spec.task != Task::soccer && success(spec, s)) ++m.successes;
  }
  m.episodes = episodes;
  m.mean_reward_per_step = std::accumulate(m.episode_reward_per_step.begin(), m.episode_reward_per_step.end(), 0.0) /
                           static_cast<double>(episodes);
  m.success_rate = static_cast<double>(m.successes) / static_cast<double>(episodes);
  if (support_rows) m.mean_support_size = support_total / static_cast<double>(support_rows);
  for (auto& adj : m.mean_adjacency)
    for (double& v : adj.matrix) v /= static_cast<double>(adjacency_steps);
  return m;
}

}  // namespace sparse_att
