#include "sparse_att/particle_env.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace sparse_att;

namespace {

JointAction random_actions(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> a(0, kActionCount - 1);
  JointAction out(n);
  for (auto& x : out) x = a(rng);
  return out;
}

/// Places agents on both rings around the landmark at regular angles.
WorldState perfect_formation(const TaskSpec& spec, Vec2 center, double phase) {
  WorldState s = reset(spec, 1);
  s.landmarks = {center};
  const std::size_t half = spec.n_agents / 2;
  for (std::size_t k = 0; k < spec.n_agents; ++k) {
    const bool inner = k < half;
    const double r = inner ? spec.inner_radius : spec.outer_radius;
    const double angle = phase + 2.0 * std::numbers::pi * static_cast<double>(inner ? k : k - half) / half;
    s.position[k] = center + Vec2{r * std::cos(angle), r * std::sin(angle)};
  }
  return s;
}

}  // namespace

TEST(TaskSpec, ValidatesTeamSizes) {
  EXPECT_THROW(TaskSpec::make(Task::formation, 5).validate(), ConfigError);
  EXPECT_THROW(TaskSpec::make(Task::soccer, 3).validate(), ConfigError);
  EXPECT_NO_THROW(TaskSpec::make(Task::soccer, 4).validate());
  EXPECT_THROW(reset(TaskSpec::make(Task::formation, 3), 0), ConfigError);
  EXPECT_THROW(parse_task("hockey"), std::invalid_argument);
  EXPECT_EQ(parse_task("soccer"), Task::soccer);
}

TEST(Reset, DeterministicAndAtRest) {
  const auto spec = TaskSpec::make(Task::coverage, 30);
  const auto a = reset(spec, 42), b = reset(spec, 42);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.agents(), 30u);
  EXPECT_EQ(a.landmarks.size(), 30u);
  for (const auto& v : a.velocity) EXPECT_EQ(v, Vec2{});
  EXPECT_NE(reset(spec, 43).position, a.position);
}

TEST(Reset, SoccerBallCenteredAndTeamsSplit) {
  const auto spec = TaskSpec::make(Task::soccer, 4);
  const auto s = reset(spec, 3);
  ASSERT_TRUE(s.ball.has_value());
  EXPECT_EQ(s.ball->position, Vec2{});
  EXPECT_EQ(s.team, (std::vector<int>{0, 0, 1, 1}));
}

TEST(Step, AtRestWithNoopStaysPut) {
  const auto spec = TaskSpec::make(Task::coverage, 3);
  auto s = reset(spec, 1);
  const auto r = step(spec, s, JointAction(3, kNoop));
  EXPECT_EQ(r.state.position, s.position);
  EXPECT_EQ(r.state.step_index, 1u);
}

TEST(Step, DampedDriftMatchesHandEvaluation) {
  const auto spec = TaskSpec::make(Task::coverage, 1);
  auto s = reset(spec, 1);
  s.position[0] = {0.0, 0.0};
  s.velocity[0] = {1.0, 0.0};
  const auto r = step(spec, s, {kNoop});
  EXPECT_NEAR(r.state.velocity[0].x, 0.75, 1e-15);
  EXPECT_NEAR(r.state.position[0].x, 0.075, 1e-15);
  EXPECT_EQ(r.state.velocity[0].y, 0.0);
}

TEST(Step, ActionAcceleratesAlongAxis) {
  const auto spec = TaskSpec::make(Task::coverage, 1);
  auto s = reset(spec, 1);
  s.position[0] = {0.0, 0.0};
  const auto r = step(spec, s, {kMinusY});
  EXPECT_NEAR(r.state.velocity[0].y, -0.5, 1e-15);
  EXPECT_NEAR(r.state.position[0].y, -0.05, 1e-15);
}

TEST(Step, Errors) {
  const auto spec = TaskSpec::make(Task::coverage, 2);
  auto s = reset(spec, 1);
  EXPECT_THROW(step(spec, s, {kNoop}), std::invalid_argument);
  EXPECT_THROW(step(spec, s, {kNoop, 7}), std::out_of_range);
  s.done = true;
  EXPECT_THROW(step(spec, s, {kNoop, kNoop}), std::logic_error);
}

TEST(Step, EpisodeEndsAtTimeLimit) {
  const auto spec = TaskSpec::make(Task::coverage, 2);
  auto s = reset(spec, 1);
  std::size_t steps = 0;
  while (true) {
    auto r = step(spec, s, {kPlusX, kMinusY});
    ++steps;
    s = r.state;
    if (r.done) break;
  }
  EXPECT_EQ(steps, spec.max_episode_steps);
}

TEST(Observe, RelativeEntitiesAndDims) {
  const auto spec = TaskSpec::make(Task::coverage, 1, 2);
  auto s = reset(spec, 1);
  s.position[0] = {0.0, 0.0};
  s.landmarks = {{1.0, 1.0}, {-0.5, 0.25}};
  const auto o = observe(spec, s, 0);
  EXPECT_EQ(o.agent.size(), 4u);
  ASSERT_EQ(o.entities.size(), 2u);
  EXPECT_EQ(o.entities[0], (Vec2{1.0, 1.0}));

  auto moved = s;
  const Vec2 shift{0.3, -0.2};
  moved.position[0] += shift;
  for (auto& l : moved.landmarks) l += shift;
  const auto om = observe(spec, moved, 0);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(om.entities[k].x, o.entities[k].x, 1e-15);
    EXPECT_NEAR(om.entities[k].y, o.entities[k].y, 1e-15);
  }
  EXPECT_THROW(observe(spec, s, 1), std::out_of_range);
}

TEST(Observe, SoccerBlueSeesMirroredWorld) {
  const auto spec = TaskSpec::make(Task::soccer, 2);
  auto s = reset(spec, 1);
  s.position = {{-0.5, 0.2}, {0.5, 0.2}};
  const auto red = observe(spec, s, 0), blue = observe(spec, s, 1);
  ASSERT_EQ(red.entities.size(), 1u);
  EXPECT_EQ(red.entities[0], (Vec2{0.5, -0.2}));
  EXPECT_EQ(blue.entities[0], (Vec2{0.5, -0.2}));
  EXPECT_EQ(blue.team, 1);
  EXPECT_EQ(to_world_action(spec, s, 1, kPlusX), kMinusX);
  EXPECT_EQ(to_world_action(spec, s, 0, kPlusX), kPlusX);
  EXPECT_EQ(to_world_action(spec, s, 1, kPlusY), kPlusY);
}

TEST(CoverageReward, SpecExamples) {
  const auto spec = TaskSpec::make(Task::coverage, 3);
  auto s = reset(spec, 1);
  s.position = s.landmarks;
  for (double r : coverage_reward(spec, s)) EXPECT_DOUBLE_EQ(r, -0.05);

  const auto one = TaskSpec::make(Task::coverage, 1, 1);
  auto t = reset(one, 1);
  t.position[0] = {0.0, 0.0};
  t.landmarks[0] = {0.6, 0.8};
  EXPECT_DOUBLE_EQ(coverage_reward(one, t)[0], -1.05);

  auto p = reset(spec, 2);
  const auto before = coverage_reward(spec, p);
  std::swap(p.position[0], p.position[2]);
  EXPECT_EQ(coverage_reward(spec, p), before);
}

TEST(FormationReward, OptimumIsZero) {
  const auto spec = TaskSpec::make(Task::formation, 10);
  const auto s = perfect_formation(spec, {0.1, -0.2}, 0.3);
  const auto f = formation_terms(spec, s);
  EXPECT_NEAR(f.inner.distance_term, 0.0, 1e-12);
  EXPECT_NEAR(f.outer.distance_term, 0.0, 1e-12);
  EXPECT_NEAR(f.inner.regularity_term, 0.0, 1e-12);
  EXPECT_NEAR(f.outer.regularity_term, 0.0, 1e-12);
  EXPECT_TRUE(success(spec, s));
}

TEST(FormationReward, CollocatedAgentsDistanceTerm) {
  const auto spec = TaskSpec::make(Task::formation, 4);
  auto s = reset(spec, 1);
  for (auto& p : s.position) p = s.landmarks[0];
  const auto f = formation_terms(spec, s);
  EXPECT_NEAR(0.5 * (f.inner.distance_term + f.outer.distance_term), -(0.3 + 0.6) / 2.0, 1e-12);
}

TEST(FormationReward, RotationInvariant) {
  const auto spec = TaskSpec::make(Task::formation, 6);
  auto s = reset(spec, 5);
  const Vec2 c = s.landmarks[0];
  const double before = formation_reward(spec, s)[0];
  for (auto& p : s.position) {
    const Vec2 d = p - c;
    const double a = 0.7;
    p = c + Vec2{d.x * std::cos(a) - d.y * std::sin(a), d.x * std::sin(a) + d.y * std::cos(a)};
  }
  EXPECT_NEAR(formation_reward(spec, s)[0], before, 1e-12);
}

TEST(SoccerReward, SpecExamples) {
  const auto spec = TaskSpec::make(Task::soccer, 2);
  auto before = reset(spec, 1);
  before.position = {{-0.5, 0.5}, {0.5, 0.5}};
  for (double r : soccer_reward(spec, before, before, std::nullopt)) EXPECT_EQ(r, 0.0);

  auto after = before;
  after.ball->position = {0.5, 0.0};  // 0.5 closer to blue's goal at +x
  const auto r = soccer_reward(spec, before, after, std::nullopt);
  // The ball also moved relative to red's nearest agent, so the chase term is nonzero.
  const double chase_red = min_team_distance(before, 0, before.ball->position) -
                           min_team_distance(after, 0, after.ball->position);
  EXPECT_NEAR(r[0], 0.05 + 0.01 * chase_red, 1e-12);

  auto goal = before;
  goal.ball->position = {0.9, 0.0};
  const auto res = step(spec, goal, {kNoop, kNoop});
  ASSERT_TRUE(res.info.scorer.has_value());
  EXPECT_EQ(*res.info.scorer, 0);
  EXPECT_TRUE(res.done);
  EXPECT_EQ(res.info.terminal_reward[0], 10.0);
  EXPECT_EQ(res.info.terminal_reward[1], -10.0);
  EXPECT_GT(res.rewards[0], 9.0);
  EXPECT_LT(res.rewards[1], -9.0);
}

TEST(SoccerReward, AgentPushesBall) {
  const auto spec = TaskSpec::make(Task::soccer, 2);
  auto s = reset(spec, 1);
  s.position = {{-0.25, 0.0}, {-0.9, 0.9}};
  for (int t = 0; t < 10; ++t) s = step(spec, s, {kPlusX, kNoop}).state;
  EXPECT_GT(s.ball->position.x, 0.1);
}

TEST(Success, CoverageThresholdIsClosed) {
  const auto spec = TaskSpec::make(Task::coverage, 2, 2);
  auto s = reset(spec, 1);
  s.landmarks = {{0.0, 0.0}, {0.5, 0.5}};
  s.position = {{0.0, 0.0}, {0.5, 0.5}};
  EXPECT_TRUE(success(spec, s));
  s.position[1] = {0.5 + 0.1, 0.5};
  EXPECT_TRUE(success(spec, s));
  s.position[1] = {0.5 + 0.1 + 1e-9, 0.5};
  EXPECT_FALSE(success(spec, s));
  s.position[1] = {-0.8, -0.8};
  EXPECT_FALSE(success(spec, s));
}

TEST(Trace, RecordCarriesVersionAndFields) {
  const auto spec = TaskSpec::make(Task::coverage, 2);
  auto s = reset(spec, 1);
  const auto r = step(spec, s, {kPlusX, kNoop});
  std::ostringstream os;
  write_trace_line(os, r.state, {kPlusX, kNoop}, r.rewards);
  const auto j = nlohmann::json::parse(os.str());
  EXPECT_EQ(j["format_version"], kTraceFormatVersion);
  EXPECT_EQ(j["step"], 1);
  EXPECT_EQ(j["positions"].size(), 2u);
  EXPECT_EQ(j["actions"][0], kPlusX);
}

// ---------------------------------------------------------------------------
// Properties

TEST(Property, ReplayIsBitIdentical) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const Task task = static_cast<Task>(trial % 3);
    const auto spec = TaskSpec::make(task, 4);
    const std::uint64_t seed = rng();
    std::vector<JointAction> actions;
    for (std::size_t t = 0; t < spec.max_episode_steps; ++t) actions.push_back(random_actions(4, rng));
    auto run = [&] {
      std::vector<WorldState> states{reset(spec, seed)};
      std::vector<std::vector<double>> rewards;
      for (const auto& a : actions) {
        if (states.back().done) break;
        auto r = step(spec, states.back(), a);
        states.push_back(r.state);
        rewards.push_back(r.rewards);
      }
      return std::make_pair(states, rewards);
    };
    EXPECT_EQ(run(), run());
  }
}

TEST(Property, PhysicsBoundsHold) {
  std::mt19937_64 rng(2);
  for (Task task : {Task::coverage, Task::formation, Task::soccer}) {
    const auto spec = TaskSpec::make(task, 6);
    auto s = reset(spec, 9);
    for (int t = 0; t < 2000; ++t) {
      auto r = step(spec, s, random_actions(6, rng));
      s = r.done ? reset(spec, rng()) : r.state;
      ASSERT_LE(s.step_index, spec.max_episode_steps);
      for (std::size_t i = 0; i < s.agents(); ++i) {
        ASSERT_LE(s.velocity[i].norm(), spec.physics.max_speed_agent + 1e-12);
        ASSERT_LE(std::fabs(s.position[i].x), 1.0);
        ASSERT_LE(std::fabs(s.position[i].y), 1.0);
      }
      if (s.ball) ASSERT_LE(s.ball->velocity.norm(), spec.physics.max_speed_ball + 1e-12);
    }
  }
}

TEST(Property, WithinTeamPermutationKeepsRewards) {
  std::mt19937_64 rng(3);
  for (Task task : {Task::coverage, Task::formation, Task::soccer}) {
    const auto spec = TaskSpec::make(task, 4);
    for (int trial = 0; trial < 20; ++trial) {
      auto s = reset(spec, rng());
      const auto a = random_actions(4, rng);
      const auto r = step(spec, s, a);
      auto p = s;
      std::swap(p.position[0], p.position[1]);
      auto pa = a;
      std::swap(pa[0], pa[1]);
      const auto rp = step(spec, p, pa);
      for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(rp.rewards[i], r.rewards[i], 1e-12);
    }
  }
}

TEST(Property, SoccerTerminalIsZeroSum) {
  std::mt19937_64 rng(4);
  const auto spec = TaskSpec::make(Task::soccer, 4);
  std::size_t goals = 0;
  for (int trial = 0; trial < 200 && goals < 5; ++trial) {
    auto s = reset(spec, rng());
    s.ball->position = {std::uniform_real_distribution<double>(-0.85, 0.85)(rng), 0.0};
    s.ball->velocity = {trial % 2 ? 1.0 : -1.0, 0.0};
    while (!s.done) {
      const auto r = step(spec, s, random_actions(4, rng));
      EXPECT_EQ(r.info.terminal_reward[0] + r.info.terminal_reward[1], 0.0);
      goals += r.info.scorer.has_value();
      s = r.state;
    }
  }
  EXPECT_GT(goals, 0u);
}
