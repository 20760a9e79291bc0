#include <doctest.h>

#include <cmath>
#include <numeric>

#include "safeq/agent.hpp"
#include "safeq/qfunction.hpp"
#include "safeq/replay.hpp"
#include "safeq/training.hpp"

using namespace safeq;

namespace {

/// Deterministic chain: state s in {0..S-1}, action a moves to a mod S; reward
/// table r(s, a); optional instantaneous cost g(s, a) under id "g".
class ChainEnv final : public Environment {
 public:
  ChainEnv(MatrixXd reward, std::optional<MatrixXd> g = std::nullopt, int horizon = 1000)
      : r_(std::move(reward)), g_(std::move(g)), horizon_(horizon) {}
  int num_agents() const override { return 1; }
  int observation_size() const override { return static_cast<int>(r_.rows()); }
  int num_actions() const override { return static_cast<int>(r_.cols()); }
  ConstraintSet constraints() const override {
    if (!g_) return {};
    return ConstraintSet({{"g", ConstraintKind::InstantInequality, std::nullopt, ""}});
  }
  std::vector<VectorXd> reset(std::uint64_t) override {
    s_ = 0;
    t_ = 0;
    return {one_hot(s_)};
  }
  ActionMask safe_action_mask(int) const override { return ActionMask(static_cast<std::size_t>(num_actions()), true); }
  int fallback_action(int) const override { return 0; }
  std::vector<EnvStep> step(std::span<const int> a) override {
    EnvStep st;
    st.reward = r_(s_, a[0]);
    if (g_) {
      st.costs.g["g"] = (*g_)(s_, a[0]);
      st.feasible = st.costs.g["g"] <= 0.0;
    }
    s_ = a[0] % observation_size();
    st.obs = one_hot(s_);
    st.terminal = ++t_ >= horizon_;
    return {st};
  }
  std::string name() const override { return "chain"; }

 private:
  VectorXd one_hot(int s) const {
    VectorXd v = VectorXd::Zero(observation_size());
    v(s) = 1.0;
    return v;
  }
  MatrixXd r_;
  std::optional<MatrixXd> g_;
  int horizon_;
  int s_ = 0;
  int t_ = 0;
};

VectorXd vec(std::initializer_list<double> xs) {
  VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

AgentConfig tabular_config() {
  AgentConfig cfg;
  cfg.tabular = true;
  cfg.batch_size = 1;
  cfg.buffer_capacity = 100;
  return cfg;
}

}  // namespace

TEST_CASE("select_action examples") {
  Rng rng(1);
  const VectorXd q = vec({1, 5, 3});
  CHECK(select_action(q, {true, true, true}, 0.0, rng) == 1);
  CHECK(select_action(q, {true, false, true}, 0.0, rng) == 2);
  CHECK(masked_argmax(vec({2, 2, 1}), {true, true, true}) == 0);
  CHECK(masked_argmax(q, {false, false, false}) == -1);
}

TEST_CASE("epsilon = 1 draws uniformly over the safe set (chi-square)") {
  Rng rng(2024);
  const ActionMask mask{true, false, true, true, false, true};
  std::vector<int> counts(mask.size(), 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(select_action(VectorXd::Zero(6), mask, 1.0, rng))];
  CHECK(counts[1] == 0);
  CHECK(counts[4] == 0);
  double chi2 = 0.0;
  const double expected = n / 4.0;
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (mask[a]) chi2 += (counts[a] - expected) * (counts[a] - expected) / expected;
  }
  CHECK(chi2 < 16.27);  // chi-square, 3 dof, p = 0.001
}

TEST_CASE("epsilon schedule is linear then zero") {
  CHECK(epsilon_schedule(0, 100, 0.8) == 1.0);
  CHECK(epsilon_schedule(40, 100, 0.8) == doctest::Approx(0.5));
  CHECK(epsilon_schedule(80, 100, 0.8) == 0.0);
  CHECK(epsilon_schedule(99, 100, 0.8) == 0.0);
}

TEST_CASE("augmented target examples") {
  QTable q(2, 2, 0.5);
  q.table() << 0.0, 0.0, 2.0, 1.0;
  const ConstraintSet specs({{"g", ConstraintKind::InstantInequality, std::nullopt, ""}});
  DualState duals = initial_duals(specs, DualParams{});
  TrainingConfig cfg;
  cfg.gamma = 0.95;

  Transition t{vec({1, 0}), 0, 1.0, vec({0, 1}), {}, {true, true}, false};
  t.costs.g["g"] = -1.0;
  const Transition* batch[] = {&t};
  CHECK(augmented_target(batch, q, duals, specs, cfg)(0) == doctest::Approx(1.0 + 0.95 * 2.0));

  duals.nu["g"] = 1.0;
  duals.rho_inst["g"] = 2.0;
  t.costs.g["g"] = 0.5;  // phi_step = 0.75
  CHECK(augmented_target(batch, q, duals, specs, cfg)(0) == doctest::Approx(2.15));
  CHECK(augmented_target(batch, q, duals, specs, cfg, false)(0) == doctest::Approx(2.9));

  t.terminal = true;
  CHECK(augmented_target(batch, q, duals, specs, cfg)(0) == doctest::Approx(0.25));

  // Masked bootstrap: the best next action is unsafe.
  t.terminal = false;
  t.next_mask = {false, true};
  t.costs.g["g"] = -1.0;
  CHECK(augmented_target(batch, q, duals, specs, cfg)(0) == doctest::Approx(1.0 + 0.95 * 1.0));

  t.reward = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(augmented_target(batch, q, duals, specs, cfg), NumericalError);
}

TEST_CASE("replay buffer: FIFO eviction and uniform sampling") {
  ReplayBuffer buf(5);
  for (int i = 0; i < 8; ++i) {
    Transition t;
    t.action = i;
    buf.push(t);
  }
  CHECK(buf.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(buf.at(i).action == static_cast<int>(i) + 3);

  Rng rng(9);
  const auto batch = buf.sample_indices(3, rng);
  CHECK(batch.size() == 3);
  CHECK(std::set<std::size_t>(batch.begin(), batch.end()).size() == 3);
  CHECK_THROWS(buf.sample(6, rng));

  std::vector<int> counts(5, 0);
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    for (auto k : buf.sample_indices(2, rng)) ++counts[k];
  }
  double chi2 = 0.0;
  const double expected = 2.0 * draws / 5.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 18.47);  // 4 dof, p = 0.001
}

TEST_CASE("factored layout agrees with the expanded action table") {
  const auto layout = ActionLayout::factored({3, 2, 4});
  CHECK(layout.num_actions() == 24);
  CHECK(layout.output_size() == 9);
  Rng rng(4);
  VectorXd out(9);
  for (int i = 0; i < 9; ++i) out(i) = std::round(standard_normal(rng) * 2.0) / 2.0;  // provoke ties
  const VectorXd full = layout.expand(out);
  for (int a = 0; a < 24; ++a) {
    double sum = 0.0;
    for (int h : layout.heads(a)) sum += out(h);
    CHECK(full(a) == sum);
  }
  CHECK(layout.unmasked_argmax(out) == masked_argmax(full, ActionMask(24, true)));

  // Product mask: digit 0 in {0, 2}, digit 1 in {1}, digit 2 any.
  ActionMask mask(24, false);
  for (int a = 0; a < 24; ++a) {
    const int d0 = a % 3;
    const int d1 = (a / 3) % 2;
    mask[static_cast<std::size_t>(a)] = d0 != 1 && d1 == 1;
  }
  const auto digits = layout.product_decomposition(mask);
  REQUIRE(digits.has_value());
  CHECK(layout.product_argmax(out, *digits) == masked_argmax(full, mask));

  ActionMask ragged(24, false);
  ragged[0] = ragged[4] = true;
  CHECK_FALSE(layout.product_decomposition(ragged).has_value());
}

TEST_CASE("neural Q: factored greedy equals flat argmax of expanded values") {
  NeuralQConfig cfg;
  cfg.hidden = {16};
  cfg.factored_head = true;
  Rng rng(12);
  NeuralQ q(4, {5, 4, 5}, cfg, rng);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd obs = VectorXd::Random(4);
    ActionMask mask(100, false);
    for (int a = 0; a < 100; ++a) mask[static_cast<std::size_t>(a)] = (a % 5 == 4) || trial % 2 == 0;
    CHECK(q.greedy(obs, mask) == masked_argmax(q.values(obs), mask));
    CHECK(q.max_target(obs, mask) == doctest::Approx(q.target_values(obs)(masked_argmax(q.target_values(obs), mask))));
  }
}

TEST_CASE("stage2 grid refine") {
  const VectorXd q = vec({0.1, 0.9, 0.4, 0.9});
  const std::vector<int> single{2};
  CHECK(stage2_grid_refine(q, single, [](int) { return true; }, 0) == 2);
  const std::vector<int> all{0, 1, 2, 3};
  CHECK(stage2_grid_refine(q, all, [](int) { return false; }, 7) == 7);
  CHECK(stage2_grid_refine(q, all, [](int) { return true; }, 7) == 1);
  CHECK(stage2_grid_refine(q, all, [](int a) { return a != 1; }, 7) == 3);
  CHECK_THROWS_AS(stage2_grid_refine(q, std::vector<int>{}, [](int) { return true; }, 0), ConfigError);
}

TEST_CASE("end_of_episode dual examples") {
  const ConstraintSet specs({{"c", ConstraintKind::CumulativeInequality, 2.0, ""},
                             {"e", ConstraintKind::InstantEquality, std::nullopt, ""},
                             {"g", ConstraintKind::InstantInequality, std::nullopt, ""}});
  AgentConfig cfg = tabular_config();
  cfg.vhat_window = 1;

  SafeAgent feasible(cfg, specs, 2, {2}, 1);
  const DualState before = feasible.duals();
  EpisodeCostStats ok;
  ok.vhat_c = {{"c", 1.0}};
  ok.mean_e = {{"e", 0.0}};
  ok.mean_abs_e = {{"e", 0.0}};
  ok.mean_gplus = {{"g", 0.0}};
  feasible.end_of_episode(ok);
  CHECK(feasible.duals().lambda == before.lambda);
  CHECK(feasible.duals().nu == before.nu);
  CHECK(feasible.duals().rho_inst == before.rho_inst);

  SafeAgent violated(cfg, specs, 2, {2}, 1);
  EpisodeCostStats bad = ok;
  bad.vhat_c = {{"c", 3.0}};  // V - d = 1
  bad.mean_e = {{"e", -0.2}};
  bad.mean_abs_e = {{"e", 0.2}};
  bad.mean_gplus = {{"g", 0.5}};
  violated.end_of_episode(bad);
  CHECK(violated.duals().lambda.at("c") == doctest::Approx(0.1));
  CHECK(violated.duals().mu.at("e") == doctest::Approx(-0.02));
  CHECK(violated.duals().nu.at("g") == doctest::Approx(0.05));
  CHECK(violated.duals().rho_inst.at("g") == doctest::Approx(0.055));
  CHECK(violated.duals().rho_eq.at("e") == doctest::Approx(0.055));

  cfg.penalties_enabled = false;
  SafeAgent off(cfg, specs, 2, {2}, 1);
  off.end_of_episode(bad);
  CHECK(off.duals().lambda.at("c") == 0.0);
}

TEST_CASE("T = 1 episode with zero rewards and costs reports zeros") {
  ChainEnv env(MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 2));
  AgentConfig cfg = tabular_config();
  cfg.training.horizon = 1;
  auto agents = make_agents(env, cfg, 3);
  const auto run = run_training(env, agents, 1, 5);
  const auto& r = run.episodes.at(0).at(0);
  CHECK(r.steps == 1);
  CHECK(r.ret == 0.0);
  CHECK(r.violations == 0);
  CHECK(r.stats.mean_gplus.at("g") == 0.0);
}

TEST_CASE("tabular Q with gamma = 0 learns immediate rewards") {
  MatrixXd r(2, 2);
  r << 1.0, -0.5, 0.25, 2.0;
  ChainEnv env(r);
  AgentConfig cfg = tabular_config();
  cfg.training.gamma = 0.0;
  cfg.training.horizon = 20;
  cfg.penalties_enabled = false;
  auto agents = make_agents(env, cfg, 4);
  run_training(env, agents, 200, 6);
  const auto& table = dynamic_cast<const QTable&>(agents[0].q()).table();
  CHECK((table - r).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("always-violated constraint lowers learned Q versus a penalty-free run") {
  MatrixXd r = MatrixXd::Constant(2, 2, 1.0);
  ChainEnv env(r, MatrixXd::Constant(2, 2, 1.0));
  AgentConfig cfg = tabular_config();
  cfg.training.horizon = 20;
  cfg.training.gamma = 0.5;
  auto with = make_agents(env, cfg, 8);
  run_training(env, with, 30, 9);
  cfg.penalties_enabled = false;
  auto without = make_agents(env, cfg, 8);
  run_training(env, without, 30, 9);
  const auto& a = dynamic_cast<const QTable&>(with[0].q()).table();
  const auto& b = dynamic_cast<const QTable&>(without[0].q()).table();
  CHECK(with[0].duals().nu.at("g") > 0.0);
  CHECK((a.array() < b.array()).all());
}

TEST_CASE("duals change only at episode boundaries") {
  ChainEnv env(MatrixXd::Ones(2, 2), MatrixXd::Constant(2, 2, 0.5));
  AgentConfig cfg = tabular_config();
  cfg.training.horizon = 10;
  auto agents = make_agents(env, cfg, 10);
  DualState at_start;
  bool changed_mid_episode = false;
  int episode_steps = 0;
  auto observer = [&](int t, const Environment&, std::span<const int>, const std::vector<EnvStep>&) {
    if (t == 0) at_start = agents[0].duals();
    changed_mid_episode = changed_mid_episode || agents[0].duals().nu != at_start.nu ||
                          agents[0].duals().rho_inst != at_start.rho_inst;
    ++episode_steps;
  };
  run_training(env, agents, 5, 11, {}, observer);
  CHECK(episode_steps == 50);
  CHECK_FALSE(changed_mid_episode);
  CHECK(agents[0].duals().nu.at("g") > 0.0);
}

TEST_CASE("penalty-free reduction on sampled batches") {
  ChainEnv env(MatrixXd::Random(3, 3), MatrixXd::Constant(3, 3, -1.0));
  AgentConfig cfg = tabular_config();
  cfg.training.horizon = 30;
  auto agents = make_agents(env, cfg, 12);
  run_training(env, agents, 3, 13);
  auto& agent = agents[0];
  Rng rng(14);
  const auto batch = agent.buffer().sample(16, rng);
  const VectorXd aug = augmented_target(batch, agent.q(), agent.duals(), agent.constraints(), cfg.training);
  const VectorXd plain = augmented_target(batch, agent.q(), agent.duals(), agent.constraints(), cfg.training, false);
  CHECK((aug - plain).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("metrics rows: one per agent per episode, deterministic") {
  ChainEnv env(MatrixXd::Random(2, 2), MatrixXd::Constant(2, 2, 0.2));
  AgentConfig cfg = tabular_config();
  cfg.training.horizon = 5;
  std::string first;
  for (int rep = 0; rep < 2; ++rep) {
    auto agents = make_agents(env, cfg, 15);
    const auto run = run_training(env, agents, 3, 16);
    std::string text = MetricsWriter::header(agents[0].constraints());
    for (const auto& ep : run.episodes) {
      CHECK(ep.size() == 1);
      for (const auto& r : ep) text += MetricsWriter::row(r, agents[0].constraints());
    }
    if (rep == 0) first = text;
    else CHECK(text == first);
  }
  CHECK(first.rfind("episode,agent,return", 0) == 0);
  CHECK(first.find("mean_gplus_g") != std::string::npos);
  CHECK(first.find("rho_g") != std::string::npos);
}

TEST_CASE("QTable checkpoint round trip and shape mismatch") {
  QTable q(3, 2, 0.5);
  q.table() << 1, 2, 3, 4, 5, 6;
  QTable back(3, 2, 0.5);
  back.load_checkpoint(q.checkpoint());
  CHECK(back.table() == q.table());
  QTable wrong(4, 2, 0.5);
  CHECK_THROWS(wrong.load_checkpoint(q.checkpoint()));
}
