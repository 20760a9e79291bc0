#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "safeq/cmdp.hpp"

using namespace safeq;

namespace {

// Two absorbing states; action 0 is free and pays 1, action 1 costs 1 and pays 2.
CmdpSpec hand_instance(double budget) {
  CmdpSpec s;
  s.num_states = 2;
  s.num_actions = 2;
  s.gamma = 0.5;
  s.transitions = {MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2)};
  s.reward = MatrixXd(2, 2);
  s.reward << 1.0, 2.0, 1.0, 2.0;
  MatrixXd c(2, 2);
  c << 0.0, 1.0, 0.0, 1.0;
  s.costs = {c};
  s.budgets = {budget};
  s.initial = VectorXd(2);
  s.initial << 0.7, 0.3;
  return s;
}

}  // namespace

TEST_CASE("random instances are stochastic and seeded") {
  const auto a = random_cmdp(4, 5, 3, 2);
  for (const auto& p : a.transitions) {
    CHECK(((p.rowwise().sum().array() - 1.0).abs() < 1e-12).all());
    CHECK((p.array() >= 0.0).all());
  }
  CHECK(a.costs.size() == 2);
  CHECK(a.budgets.size() == 2);
  const auto b = random_cmdp(4, 5, 3, 2);
  CHECK(a.reward == b.reward);
  CHECK(a.costs[1] == b.costs[1]);
  CHECK(a.transitions[2] == b.transitions[2]);
  CHECK(a.budgets == b.budgets);
  CHECK_FALSE(random_cmdp(5, 5, 3, 2).reward == a.reward);
  CHECK_THROWS_AS(random_cmdp(1, 1, 3, 1), ConfigError);

  CmdpSpec bad = hand_instance(1.0);
  bad.transitions[0](0, 0) = 0.9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("budget binds on most seeds") {
  int binding = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto spec = random_cmdp(seed, 5, 3, 1);
    const auto pv = policy_value(spec, value_iteration(spec, spec.reward));
    binding += pv.costs[0] > spec.budgets[0] ? 1 : 0;
  }
  CHECK(binding >= 45);
}

TEST_CASE("policy evaluation closed forms") {
  auto spec = random_cmdp(2, 5, 3, 1);
  spec.reward.setOnes();
  const DeterministicPolicy pi{0, 1, 2, 0, 1};
  const auto v = evaluate_signal(spec, pi, spec.reward);
  for (int s = 0; s < 5; ++s) CHECK(v(s) == doctest::Approx(1.0 / (1.0 - spec.gamma)).epsilon(1e-12));

  auto myopic = random_cmdp(3, 5, 3, 1);
  myopic.gamma = 0.0;
  const auto v0 = evaluate_signal(myopic, pi, myopic.reward);
  for (int s = 0; s < 5; ++s) CHECK(v0(s) == myopic.reward(s, pi[s]));

  const auto pv = policy_value(random_cmdp(6, 5, 3, 1), pi);
  CHECK(pv.residual < 1e-10);
  CHECK_THROWS_AS(policy_value(spec, DeterministicPolicy{0, 1}), ConfigError);
}

TEST_CASE("policy evaluation matches Monte Carlo rollouts") {
  const auto spec = random_cmdp(7, 5, 3, 1);
  const DeterministicPolicy pi{2, 0, 1, 1, 0};
  const auto pv = policy_value(spec, pi);
  CmdpEnv env(spec);
  const int episodes = 10000;
  const int horizon = 100;  // gamma^100 ~ 3e-5
  double sum = 0.0;
  double sq = 0.0;
  double csum = 0.0;
  for (int e = 0; e < episodes; ++e) {
    env.reset(derive_seed(11, static_cast<std::uint64_t>(e)));
    double ret = 0.0;
    double cost = 0.0;
    double disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const auto out = env.step(std::vector<int>{pi[env.state()]});
      ret += disc * out[0].reward;
      cost += disc * out[0].costs.c.at("cost_0");
      disc *= spec.gamma;
    }
    sum += ret;
    sq += ret * ret;
    csum += cost;
  }
  const double mean = sum / episodes;
  const double se = std::sqrt((sq / episodes - mean * mean) / episodes);
  CHECK(std::abs(mean - pv.reward) < 3.0 * se);
  CHECK(std::abs(csum / episodes - pv.costs[0]) < 0.05);
}

TEST_CASE("oracle on a hand instance") {
  // Costly action in state 1 alone spends 0.3 * 2 = 0.6; in state 0 alone 1.4.
  const auto best = best_feasible_deterministic(hand_instance(0.8));
  CHECK(best.feasible_exists);
  CHECK(best.policy == DeterministicPolicy{0, 1});
  CHECK(best.v_r == doctest::Approx(0.7 * 2.0 + 0.3 * 4.0));
  CHECK(best.v_c[0] == doctest::Approx(0.6));
  CHECK(best.enumerated == 4);

  const auto loose = best_feasible_deterministic(hand_instance(10.0));
  CHECK(loose.policy == DeterministicPolicy{1, 1});

  const auto none = best_feasible_deterministic(hand_instance(-1.0));
  CHECK_FALSE(none.feasible_exists);

  CHECK_THROWS_AS(best_feasible_deterministic(random_cmdp(1, 5, 3, 1), 100), ConfigError);
}

TEST_CASE("unconstrained oracle matches value iteration") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto spec = random_cmdp(seed, 5, 3, 1);
    spec.budgets = {std::numeric_limits<double>::infinity()};
    const auto best = best_feasible_deterministic(spec);
    const auto vi = value_iteration(spec, spec.reward);
    CHECK(std::abs(best.v_r - policy_value(spec, vi).reward) < 1e-8);
  }
}

TEST_CASE("oracle dominance") {
  std::uint64_t seed = 12;
  while (!best_feasible_deterministic(random_cmdp(seed, 4, 3, 1)).feasible_exists) ++seed;
  const auto spec = random_cmdp(seed, 4, 3, 1);
  const auto best = best_feasible_deterministic(spec);
  DeterministicPolicy pi(4, 0);
  while (true) {
    const auto pv = policy_value(spec, pi);
    if (pv.costs[0] <= spec.budgets[0]) REQUIRE(pv.reward <= best.v_r);
    int s = 0;
    while (s < 4 && ++pi[s] == 3) pi[s++] = 0;
    if (s == 4) break;
  }
}

TEST_CASE("environment wrapper reports every constraint type") {
  CmdpSpec spec = hand_instance(0.8);
  MatrixXd e(2, 2);
  e << 0.0, 0.5, 0.0, 0.0;
  MatrixXd g(2, 2);
  g << -1.0, 1.0, -1.0, -1.0;
  spec.eq_costs = {e};
  spec.inst_costs = {g};
  CmdpEnv env(spec);
  const auto cs = env.constraints();
  CHECK(cs.at("cost_0").kind == ConstraintKind::CumulativeInequality);
  CHECK(cs.at("e_0").kind == ConstraintKind::InstantEquality);
  CHECK(cs.at("g_0").kind == ConstraintKind::InstantInequality);
  CHECK(env.observation_size() == 2);

  // Pick a seed that starts in state 0.
  std::uint64_t seed = 0;
  while (env.reset(seed), env.state() != 0) ++seed;
  auto out = env.step(std::vector<int>{1});
  CHECK(out[0].reward == 2.0);
  CHECK(out[0].costs.e.at("e_0") == 0.5);
  CHECK(out[0].costs.g.at("g_0") == 1.0);
  CHECK_FALSE(out[0].feasible);
  CHECK(env.state() == 0);  // absorbing
  out = env.step(std::vector<int>{0});
  CHECK(out[0].feasible);
  CHECK(out[0].obs == VectorXd::Unit(2, 0));
  CHECK_THROWS_AS(env.step(std::vector<int>{2}), ConfigError);
}

TEST_CASE("feasible iterate selection") {
  const std::vector<double> budgets{1.0};
  std::vector<IterateStats> it{
      {{0}, 10, 50.0, {20.0}},  // mean cost 2: infeasible
      {{1}, 10, 30.0, {9.0}},   // feasible, mean return 3
      {{2}, 10, 40.0, {10.0}},  // feasible on the boundary, mean return 4
      {{3}, 2, 100.0, {0.0}},   // too few episodes
  };
  CHECK(select_feasible_iterate(it, budgets, 5) == 2);
  CHECK(select_feasible_iterate(it, budgets, 1) == 3);
  CHECK(select_feasible_iterate({it[0]}, budgets, 5) == -1);
  CHECK(select_feasible_iterate({}, budgets, 5) == -1);
}

TEST_CASE("benchmark rows and penalty contrast") {
  OracleBenchmarkConfig cfg;
  cfg.episodes = 200;
  cfg.agent.batch_size = 32;
  cfg.agent.epsilon_decay_fraction = 0.2;
  cfg.agent.duals.beta_lambda = 0.02;
  const auto rows = run_oracle_benchmark({1, 2, 3}, cfg);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.env_steps == 200LL * cfg.agent.training.horizon);
    CHECK(r.learned.size() == 5);
    CHECK(r.pass == (r.oracle_feasible && r.feasible && r.ratio >= 0.95));
  }
  const std::string csv = oracle_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  // Penalties off: the learner heads for the reward-optimal policy, which breaks the budget.
  OracleBenchmarkConfig off = cfg;
  off.agent.penalties_enabled = false;
  off.select_iterate = false;
  int infeasible = 0;
  for (const auto& r : run_oracle_benchmark({1, 2, 3}, off)) {
    const auto spec = random_cmdp(r.seed, 5, 3, 1);
    const auto opt = policy_value(spec, value_iteration(spec, spec.reward));
    CHECK(r.final_v_r >= 0.95 * opt.reward);
    infeasible += r.final_feasible ? 0 : 1;
  }
  CHECK(infeasible >= 2);
}
