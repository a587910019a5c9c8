// 2-D particle world with double-integrator agents.
//
// Tasks:
//   coverage   n_A agents spread over n_L landmarks
//   formation  n_A agents build two rings (inner/outer) around one landmark
//   soccer     two equal teams push a ball into the opponent goal
//
// Every function here is a pure function of its arguments; a WorldState is a
// plain value and (seed, action sequence) determines a trajectory bit-exactly.
//
// Soccer geometry: red (team 0) defends the goal at x = -arena_half and
// attacks the one at x = +arena_half. Observations of blue agents are
// mirrored in x so both teams see their opponent goal at +x; the same mirror
// maps their policy actions back to world actions.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparse_att {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
  bool operator==(const Vec2&) const = default;
  double norm() const { return std::hypot(x, y); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

enum class Task { coverage, formation, soccer };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::coverage: return "coverage";
    case Task::formation: return "formation";
    case Task::soccer: return "soccer";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  if (s == "coverage") return Task::coverage;
  if (s == "formation") return Task::formation;
  if (s == "soccer") return Task::soccer;
  throw std::invalid_argument("unknown task '" + s + "' (expected coverage|formation|soccer)");
}

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PhysicsParams {
  double dt = 0.1;
  double damping = 0.25;
  double mass = 1.0;
  double ball_mass = 1.0;
  double accel_unit = 1.0;
  double sensitivity = 5.0;
  double max_speed_agent = 1.3;
  double max_speed_ball = 1.0;
  double arena_half = 1.0;
  double agent_radius = 0.05;
  double ball_radius = 0.15;
  double contact_stiffness = 100.0;
};

struct RewardParams {
  double time_penalty = 0.05;
  double goal = 10.0;
  double ball_progress = 0.1;
  double ball_chase = 0.01;
};

struct TaskSpec {
  Task task = Task::coverage;
  std::size_t n_agents = 3;
  std::size_t n_landmarks = 3;
  std::size_t max_episode_steps = 50;
  PhysicsParams physics;
  RewardParams rewards;
  double inner_radius = 0.3;
  double outer_radius = 0.6;
  double goal_half_width = 0.3;
  double cover_tolerance = 0.1;
  double formation_tolerance = 0.1;
  double formation_gap_tolerance = 0.2;  // fraction of the ideal angular gap

  /// Defaults per task. n_landmarks of 0 means "same as n_agents" for coverage;
  /// formation always has one landmark and soccer two goals.
  static TaskSpec make(Task task, std::size_t n_agents, std::size_t n_landmarks = 0) {
    TaskSpec s;
    s.task = task;
    s.n_agents = n_agents;
    switch (task) {
      case Task::coverage:
        s.n_landmarks = n_landmarks == 0 ? n_agents : n_landmarks;
        s.max_episode_steps = 50;
        break;
      case Task::formation:
        s.n_landmarks = 1;
        s.max_episode_steps = 50;
        break;
      case Task::soccer:
        s.n_landmarks = 2;
        s.max_episode_steps = 100;
        break;
    }
    return s;
  }

  void validate() const {
    if (n_agents == 0) throw ConfigError("task needs at least one agent");
    if (max_episode_steps == 0) throw ConfigError("max_episode_steps must be positive");
    if (task == Task::formation && n_agents % 2 != 0) {
      throw ConfigError("formation needs an even agent count, got " + std::to_string(n_agents));
    }
    if (task == Task::soccer && n_agents % 2 != 0) {
      throw ConfigError("soccer needs two equal teams, got " + std::to_string(n_agents) + " agents");
    }
    if (task == Task::coverage && n_landmarks == 0) throw ConfigError("coverage needs at least one landmark");
    if (task == Task::formation && !(inner_radius > 0.0 && outer_radius > inner_radius &&
                                     outer_radius < physics.arena_half)) {
      throw ConfigError("formation radii must satisfy 0 < inner < outer < arena_half");
    }
  }

  bool heterogeneous() const { return task == Task::soccer; }
  int team_of(std::size_t agent) const {
    return task == Task::soccer && agent >= n_agents / 2 ? 1 : 0;
  }
  /// Entities each agent observes: landmarks, or the ball in soccer.
  std::size_t entity_count() const { return task == Task::soccer ? 1 : n_landmarks; }
  /// Center of the goal `team` must score into.
  Vec2 opponent_goal(int team) const { return {team == 0 ? physics.arena_half : -physics.arena_half, 0.0}; }
};

enum Action : int { kNoop = 0, kPlusX = 1, kMinusX = 2, kPlusY = 3, kMinusY = 4 };
inline constexpr int kActionCount = 5;

using JointAction = std::vector<int>;

inline Vec2 action_direction(int a) {
  switch (a) {
    case kNoop: return {0.0, 0.0};
    case kPlusX: return {1.0, 0.0};
    case kMinusX: return {-1.0, 0.0};
    case kPlusY: return {0.0, 1.0};
    case kMinusY: return {0.0, -1.0};
    default: throw std::out_of_range("action index " + std::to_string(a) + " outside [0, 5)");
  }
}

struct Ball {
  Vec2 position;
  Vec2 velocity;
  double radius = 0.15;
  bool operator==(const Ball&) const = default;
};

struct WorldState {
  std::vector<Vec2> position;
  std::vector<Vec2> velocity;
  std::vector<int> team;
  std::vector<Vec2> landmarks;
  std::optional<Ball> ball;
  std::size_t step_index = 0;
  std::uint64_t seed = 0;
  bool done = false;

  bool operator==(const WorldState&) const = default;
  std::size_t agents() const { return position.size(); }
};

inline WorldState reset(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const double a = spec.physics.arena_half;
  std::uniform_real_distribution<double> coord(-a, a);
  WorldState s;
  s.seed = seed;
  s.position.resize(spec.n_agents);
  s.velocity.assign(spec.n_agents, Vec2{});
  s.team.resize(spec.n_agents);
  for (std::size_t i = 0; i < spec.n_agents; ++i) {
    s.position[i] = {coord(rng), coord(rng)};
    s.team[i] = spec.team_of(i);
  }
  switch (spec.task) {
    case Task::coverage:
      for (std::size_t l = 0; l < spec.n_landmarks; ++l) s.landmarks.push_back({coord(rng), coord(rng)});
      break;
    case Task::formation: {
      // The outer ring has to fit inside the arena.
      std::uniform_real_distribution<double> inner(-(a - spec.outer_radius), a - spec.outer_radius);
      s.landmarks.push_back({inner(rng), inner(rng)});
      break;
    }
    case Task::soccer:
      s.landmarks = {spec.opponent_goal(1), spec.opponent_goal(0)};  // red goal, blue goal
      s.ball = Ball{{0.0, 0.0}, {0.0, 0.0}, spec.physics.ball_radius};
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Observation

struct Observation {
  std::array<double, 4> agent{};  // position x, y, velocity x, y
  std::vector<Vec2> entities;     // relative to the agent
  int team = 0;
};

inline bool mirrored(const TaskSpec& spec, int team) { return spec.task == Task::soccer && team == 1; }

inline Observation observe(const TaskSpec& spec, const WorldState& s, std::size_t i) {
  if (i >= s.agents()) throw std::out_of_range("observe: agent index " + std::to_string(i));
  Observation o;
  o.team = s.team[i];
  const double sx = mirrored(spec, o.team) ? -1.0 : 1.0;
  o.agent = {sx * s.position[i].x, s.position[i].y, sx * s.velocity[i].x, s.velocity[i].y};
  auto rel = [&](Vec2 p) {
    const Vec2 d = p - s.position[i];
    return Vec2{sx * d.x, d.y};
  };
  if (spec.task == Task::soccer) {
    o.entities.push_back(rel(s.ball->position));
  } else {
    for (const auto& l : s.landmarks) o.entities.push_back(rel(l));
  }
  return o;
}

/// Maps an action chosen in agent i's observation frame to the world frame.
/// The mirror is an involution, so the same call maps world to agent frame.
inline int to_world_action(const TaskSpec& spec, const WorldState& s, std::size_t i, int a) {
  if (!mirrored(spec, s.team[i])) return a;
  if (a == kPlusX) return kMinusX;
  if (a == kMinusX) return kPlusX;
  return a;
}

// ---------------------------------------------------------------------------
// Rewards

inline std::vector<double> coverage_reward(const TaskSpec& spec, const WorldState& s) {
  double total = 0.0;
  for (const auto& l : s.landmarks) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : s.position) best = std::min(best, distance(p, l));
    total += best;
  }
  const double r = -total / static_cast<double>(s.landmarks.size()) - spec.rewards.time_penalty;
  return std::vector<double>(s.agents(), r);
}

struct RingTerms {
  double radius = 0.0;
  std::vector<std::size_t> members;
  double distance_term = 0.0;    // -mean |dist - radius|
  double regularity_term = 0.0;  // -variance of the sorted angular gaps
  double max_gap_deviation = 0.0;
  double max_radial_error = 0.0;
};

struct FormationTerms {
  RingTerms inner;
  RingTerms outer;
  double reward() const {
    return 0.5 * (inner.distance_term + inner.regularity_term + outer.distance_term + outer.regularity_term);
  }
  double distance_term() const { return 0.5 * (inner.distance_term + outer.distance_term); }
};

inline RingTerms ring_terms(const WorldState& s, Vec2 center, double radius, std::vector<std::size_t> members) {
  RingTerms t;
  t.radius = radius;
  t.members = std::move(members);
  if (t.members.empty()) return t;
  std::vector<double> angles;
  for (std::size_t i : t.members) {
    const Vec2 d = s.position[i] - center;
    const double err = std::fabs(d.norm() - radius);
    t.distance_term -= err;
    t.max_radial_error = std::max(t.max_radial_error, err);
    angles.push_back(std::atan2(d.y, d.x));
  }
  const double k = static_cast<double>(t.members.size());
  t.distance_term /= k;
  std::sort(angles.begin(), angles.end());
  std::vector<double> gaps;
  for (std::size_t j = 0; j + 1 < angles.size(); ++j) gaps.push_back(angles[j + 1] - angles[j]);
  gaps.push_back(2.0 * std::numbers::pi - (angles.back() - angles.front()));
  const double ideal = 2.0 * std::numbers::pi / k;
  double var = 0.0;
  for (double g : gaps) {
    var += (g - ideal) * (g - ideal);
    t.max_gap_deviation = std::max(t.max_gap_deviation, std::fabs(g - ideal));
  }
  t.regularity_term = -var / k;
  return t;
}

/// Nearest half of the agents (by distance to the landmark, ties by index) form
/// the inner ring, the rest the outer ring.
inline FormationTerms formation_terms(const TaskSpec& spec, const WorldState& s) {
  const Vec2 center = s.landmarks.front();
  std::vector<std::size_t> order(s.agents());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return distance(s.position[a], center) < distance(s.position[b], center);
  });
  const std::size_t half = s.agents() / 2;
  FormationTerms f;
  f.inner = ring_terms(s, center, spec.inner_radius, {order.begin(), order.begin() + half});
  f.outer = ring_terms(s, center, spec.outer_radius, {order.begin() + half, order.end()});
  return f;
}

inline std::vector<double> formation_reward(const TaskSpec& spec, const WorldState& s) {
  return std::vector<double>(s.agents(), formation_terms(spec, s).reward());
}

inline double min_team_distance(const WorldState& s, int team, Vec2 target) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.agents(); ++i)
    if (s.team[i] == team) best = std::min(best, distance(s.position[i], target));
  return best;
}

/// Team-shared soccer reward for the transition before -> after.
/// `scorer` is the team that scored on this transition, if any.
inline std::vector<double> soccer_reward(const TaskSpec& spec, const WorldState& before, const WorldState& after,
                                         std::optional<int> scorer) {
  std::array<double, 2> team_reward{};
  for (int team = 0; team < 2; ++team) {
    const Vec2 goal = spec.opponent_goal(team);
    const double progress = distance(before.ball->position, goal) - distance(after.ball->position, goal);
    const double chase = min_team_distance(before, team, before.ball->position) -
                         min_team_distance(after, team, after.ball->position);
    team_reward[team] = spec.rewards.ball_progress * progress + spec.rewards.ball_chase * chase;
    if (scorer) team_reward[team] += *scorer == team ? spec.rewards.goal : -spec.rewards.goal;
  }
  std::vector<double> r(after.agents());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = team_reward[after.team[i]];
  return r;
}

// ---------------------------------------------------------------------------
// Dynamics

struct StepInfo {
  std::optional<int> scorer;
  std::array<double, 2> terminal_reward{};  // goal component per team
};

struct StepResult {
  WorldState state;
  std::vector<double> rewards;
  bool done = false;
  StepInfo info;
};

namespace detail {

struct Body {
  Vec2* position;
  Vec2* velocity;
  double radius;
  double mass;
  double max_speed;
};

inline void clamp_to_arena(Vec2& p, Vec2& v, double half) {
  if (p.x > half) { p.x = half; v.x = std::min(v.x, 0.0); }
  if (p.x < -half) { p.x = -half; v.x = std::max(v.x, 0.0); }
  if (p.y > half) { p.y = half; v.y = std::min(v.y, 0.0); }
  if (p.y < -half) { p.y = -half; v.y = std::max(v.y, 0.0); }
}

}  // namespace detail

/// Scoring requires the ball center to reach the goal line, which sits one
/// ball radius inside the arena edge, within the goal mouth.
inline std::optional<int> goal_scored(const TaskSpec& spec, const Ball& ball) {
  const double line = spec.physics.arena_half - ball.radius;
  if (std::fabs(ball.position.y) > spec.goal_half_width) return std::nullopt;
  if (ball.position.x >= line) return 0;
  if (ball.position.x <= -line) return 1;
  return std::nullopt;
}

inline StepResult step(const TaskSpec& spec, const WorldState& state, const JointAction& actions) {
  if (actions.size() != state.agents()) {
    throw std::invalid_argument("step: got " + std::to_string(actions.size()) + " actions for " +
                                std::to_string(state.agents()) + " agents");
  }
  if (state.done) throw std::logic_error("step: episode already finished");
  const auto& ph = spec.physics;

  StepResult out;
  out.state = state;
  WorldState& s = out.state;

  std::vector<detail::Body> bodies;
  for (std::size_t i = 0; i < s.agents(); ++i)
    bodies.push_back({&s.position[i], &s.velocity[i], ph.agent_radius, ph.mass, ph.max_speed_agent});
  if (s.ball) bodies.push_back({&s.ball->position, &s.ball->velocity, s.ball->radius, ph.ball_mass, ph.max_speed_ball});

  std::vector<Vec2> force(bodies.size());
  for (std::size_t i = 0; i < s.agents(); ++i)
    force[i] = action_direction(actions[i]) * (ph.accel_unit * ph.sensitivity * ph.mass);
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    for (std::size_t j = i + 1; j < bodies.size(); ++j) {
      const Vec2 d = *bodies[j].position - *bodies[i].position;
      const double dist = d.norm();
      const double penetration = bodies[i].radius + bodies[j].radius - dist;
      if (penetration <= 0.0) continue;
      const Vec2 normal = dist > 0.0 ? d * (1.0 / dist) : Vec2{1.0, 0.0};
      const Vec2 f = normal * (ph.contact_stiffness * penetration);
      force[i] -= f;
      force[j] += f;
    }
  }
  for (std::size_t k = 0; k < bodies.size(); ++k) {
    auto& b = bodies[k];
    Vec2 v = *b.velocity * (1.0 - ph.damping) + force[k] * (ph.dt / b.mass);
    const double speed = v.norm();
    if (speed > b.max_speed) v = v * (b.max_speed / speed);
    *b.velocity = v;
    *b.position += v * ph.dt;
    detail::clamp_to_arena(*b.position, *b.velocity, ph.arena_half);
  }
  s.step_index += 1;

  switch (spec.task) {
    case Task::coverage: out.rewards = coverage_reward(spec, s); break;
    case Task::formation: out.rewards = formation_reward(spec, s); break;
    case Task::soccer: {
      out.info.scorer = goal_scored(spec, *s.ball);
      if (out.info.scorer) {
        out.info.terminal_reward[*out.info.scorer] = spec.rewards.goal;
        out.info.terminal_reward[1 - *out.info.scorer] = -spec.rewards.goal;
      }
      out.rewards = soccer_reward(spec, state, s, out.info.scorer);
      break;
    }
  }
  out.done = s.step_index >= spec.max_episode_steps || out.info.scorer.has_value();
  s.done = out.done;
  return out;
}

/// Task completion judged on the final state of a cooperative episode.
/// Tolerances are closed: a distance exactly at the tolerance passes.
inline bool success(const TaskSpec& spec, const WorldState& final_state) {
  switch (spec.task) {
    case Task::coverage:
      for (const auto& l : final_state.landmarks) {
        bool covered = false;
        for (const auto& p : final_state.position) covered = covered || distance(p, l) <= spec.cover_tolerance;
        if (!covered) return false;
      }
      return true;
    case Task::formation: {
      const auto f = formation_terms(spec, final_state);
      for (const RingTerms* ring : {&f.inner, &f.outer}) {
        if (ring->members.empty()) continue;
        const double ideal = 2.0 * std::numbers::pi / static_cast<double>(ring->members.size());
        if (ring->max_radial_error > spec.formation_tolerance) return false;
        if (!(ring->max_gap_deviation < spec.formation_gap_tolerance * ideal)) return false;
      }
      return true;
    }
    case Task::soccer: return false;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Episode trace export (JSON lines)

inline constexpr int kTraceFormatVersion = 1;

inline nlohmann::json trace_record(const WorldState& s, const JointAction& actions, const std::vector<double>& rewards) {
  nlohmann::json positions = nlohmann::json::array(), velocities = nlohmann::json::array();
  for (std::size_t i = 0; i < s.agents(); ++i) {
    positions.push_back({s.position[i].x, s.position[i].y});
    velocities.push_back({s.velocity[i].x, s.velocity[i].y});
  }
  nlohmann::json rec = {{"format_version", kTraceFormatVersion},
                        {"step", s.step_index},
                        {"positions", positions},
                        {"velocities", velocities},
                        {"actions", actions},
                        {"rewards", rewards}};
  if (s.ball) rec["ball"] = {s.ball->position.x, s.ball->position.y};
  return rec;
}

inline void write_trace_line(std::ostream& os, const WorldState& s, const JointAction& actions,
                             const std::vector<double>& rewards) {
  os << trace_record(s, actions, rewards).dump() << '\n';
}

}  // namespace sparse_att
