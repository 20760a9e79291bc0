#include "safeq/cmdp.hpp"

#include <fmt/format.h>

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>

#include "safeq/training.hpp"

namespace safeq {

void CmdpSpec::validate() const {
  if (num_states < 1 || num_actions < 1) throw ConfigError("CMDP needs at least one state and action");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("CMDP discount must lie in [0, 1)");
  if (static_cast<int>(transitions.size()) != num_actions) throw ConfigError("one transition matrix per action required");
  for (const auto& p : transitions) {
    if (p.rows() != num_states || p.cols() != num_states) throw ConfigError("transition matrix has wrong shape");
    if (!p.allFinite() || (p.array() < 0.0).any()) throw ConfigError("transition probabilities must be finite and >= 0");
    for (Eigen::Index s = 0; s < num_states; ++s) {
      if (std::abs(p.row(s).sum() - 1.0) > 1e-12) throw ConfigError("transition rows must sum to 1");
    }
  }
  auto check_sa = [&](const MatrixXd& m, const char* what) {
    if (m.rows() != num_states || m.cols() != num_actions || !m.allFinite()) {
      throw ConfigError(std::string(what) + " must be a finite S x A matrix");
    }
  };
  check_sa(reward, "reward");
  for (const auto& c : costs) check_sa(c, "cumulative cost");
  for (const auto& g : inst_costs) check_sa(g, "instantaneous cost");
  for (const auto& e : eq_costs) check_sa(e, "equality cost");
  if (budgets.size() != costs.size()) throw ConfigError("one budget per cumulative cost required");
  if (initial.size() != num_states || std::abs(initial.sum() - 1.0) > 1e-12 || (initial.array() < 0.0).any()) {
    throw ConfigError("initial distribution must be a probability vector over states");
  }
}

CmdpSpec random_cmdp(std::uint64_t seed, int num_states, int num_actions, int num_constraints, double gamma,
                     double budget_fraction) {
  if (num_states < 2 || num_actions < 2) throw ConfigError("random CMDPs need S, A >= 2");
  Rng rng(seed);
  CmdpSpec spec;
  spec.num_states = num_states;
  spec.num_actions = num_actions;
  spec.gamma = gamma;
  for (int a = 0; a < num_actions; ++a) {
    MatrixXd p(num_states, num_states);
    for (int s = 0; s < num_states; ++s) {
      for (int s2 = 0; s2 < num_states; ++s2) {
        double u;
        do {
          u = uniform01(rng);
        } while (u <= 0.0);
        p(s, s2) = -std::log(u);
      }
      p.row(s) /= p.row(s).sum();
    }
    spec.transitions.push_back(p);
  }
  auto uniform_sa = [&] {
    MatrixXd m(num_states, num_actions);
    for (int s = 0; s < num_states; ++s) {
      for (int a = 0; a < num_actions; ++a) m(s, a) = uniform01(rng);
    }
    return m;
  };
  spec.reward = uniform_sa();
  for (int i = 0; i < num_constraints; ++i) spec.costs.push_back(uniform_sa());
  spec.initial = VectorXd::Constant(num_states, 1.0 / num_states);

  // Budgets bind against the reward-optimal policy.
  spec.budgets.assign(static_cast<std::size_t>(num_constraints), 0.0);
  const DeterministicPolicy unconstrained = value_iteration(spec, spec.reward);
  const PolicyValue pv = policy_value(spec, unconstrained);
  for (int i = 0; i < num_constraints; ++i) spec.budgets[i] = budget_fraction * pv.costs[i];
  spec.validate();
  return spec;
}

VectorXd evaluate_signal(const CmdpSpec& spec, const DeterministicPolicy& policy, const MatrixXd& signal,
                         double* residual) {
  const int S = spec.num_states;
  if (static_cast<int>(policy.size()) != S) throw ConfigError("policy must assign an action to every state");
  MatrixXd p_pi(S, S);
  VectorXd r_pi(S);
  for (int s = 0; s < S; ++s) {
    const int a = policy[s];
    if (a < 0 || a >= spec.num_actions) throw ConfigError("policy action out of range");
    p_pi.row(s) = spec.transitions[a].row(s);
    r_pi(s) = signal(s, a);
  }
  const MatrixXd system = MatrixXd::Identity(S, S) - spec.gamma * p_pi;
  const VectorXd v = system.partialPivLu().solve(r_pi);
  if (residual) *residual = (system * v - r_pi).cwiseAbs().maxCoeff();
  return v;
}

PolicyValue policy_value(const CmdpSpec& spec, const DeterministicPolicy& policy) {
  PolicyValue out;
  double res = 0.0;
  out.reward_by_state = evaluate_signal(spec, policy, spec.reward, &res);
  out.residual = res;
  out.reward = spec.initial.dot(out.reward_by_state);
  for (const auto& c : spec.costs) {
    out.costs.push_back(spec.initial.dot(evaluate_signal(spec, policy, c, &res)));
    out.residual = std::max(out.residual, res);
  }
  return out;
}

DeterministicPolicy value_iteration(const CmdpSpec& spec, const MatrixXd& signal, VectorXd* values, double tol) {
  const int S = spec.num_states;
  const int A = spec.num_actions;
  VectorXd v = VectorXd::Zero(S);
  MatrixXd q(S, A);
  for (int iter = 0; iter < 100000; ++iter) {
    for (int a = 0; a < A; ++a) q.col(a) = signal.col(a) + spec.gamma * spec.transitions[a] * v;
    const VectorXd next = q.rowwise().maxCoeff();
    const double delta = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (delta < tol) break;
  }
  for (int a = 0; a < A; ++a) q.col(a) = signal.col(a) + spec.gamma * spec.transitions[a] * v;
  DeterministicPolicy policy(static_cast<std::size_t>(S), 0);
  for (int s = 0; s < S; ++s) {
    for (int a = 1; a < A; ++a) {
      if (q(s, a) > q(s, policy[s])) policy[s] = a;
    }
  }
  if (values) *values = v;
  return policy;
}

OracleResult best_feasible_deterministic(const CmdpSpec& spec, std::size_t max_policies) {
  const int S = spec.num_states;
  const int A = spec.num_actions;
  double count = std::pow(static_cast<double>(A), S);
  if (count > static_cast<double>(max_policies)) {
    throw ConfigError(fmt::format("enumeration budget exceeded: {} policies > {}", count, max_policies));
  }
  OracleResult best;
  best.v_r = -std::numeric_limits<double>::infinity();
  DeterministicPolicy policy(static_cast<std::size_t>(S), 0);
  while (true) {
    ++best.enumerated;
    const PolicyValue pv = policy_value(spec, policy);
    bool feasible = true;
    for (std::size_t i = 0; i < pv.costs.size(); ++i) feasible = feasible && pv.costs[i] <= spec.budgets[i];
    if (feasible && pv.reward > best.v_r) {
      best.feasible_exists = true;
      best.policy = policy;
      best.v_r = pv.reward;
      best.v_c = pv.costs;
    }
    int s = 0;
    while (s < S && ++policy[s] == A) policy[s++] = 0;
    if (s == S) break;
  }
  if (!best.feasible_exists) best.v_r = 0.0;
  return best;
}

// ---------------------------------------------------------------------------

CmdpEnv::CmdpEnv(CmdpSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

ConstraintSet CmdpEnv::constraints() const {
  std::vector<ConstraintSpec> specs;
  for (std::size_t i = 0; i < spec_.costs.size(); ++i) {
    specs.push_back({spec_.cost_id(i), ConstraintKind::CumulativeInequality, spec_.budgets[i], "discounted cost budget"});
  }
  for (std::size_t j = 0; j < spec_.eq_costs.size(); ++j) {
    specs.push_back({spec_.eq_id(j), ConstraintKind::InstantEquality, std::nullopt, "equality"});
  }
  for (std::size_t k = 0; k < spec_.inst_costs.size(); ++k) {
    specs.push_back({spec_.inst_id(k), ConstraintKind::InstantInequality, std::nullopt, "instantaneous bound"});
  }
  return ConstraintSet(std::move(specs));
}

VectorXd CmdpEnv::one_hot(int s) const {
  VectorXd v = VectorXd::Zero(spec_.num_states);
  v(s) = 1.0;
  return v;
}

std::vector<VectorXd> CmdpEnv::reset(std::uint64_t seed) {
  rng_.seed(seed);
  double u = uniform01(rng_);
  state_ = spec_.num_states - 1;
  for (int s = 0; s < spec_.num_states; ++s) {
    u -= spec_.initial(s);
    if (u < 0.0) {
      state_ = s;
      break;
    }
  }
  return {one_hot(state_)};
}

int CmdpEnv::sample_next(int s, int a) {
  double u = uniform01(rng_);
  const auto& row = spec_.transitions[a];
  for (int s2 = 0; s2 < spec_.num_states; ++s2) {
    u -= row(s, s2);
    if (u < 0.0) return s2;
  }
  return spec_.num_states - 1;
}

std::vector<EnvStep> CmdpEnv::step(std::span<const int> actions) {
  if (actions.size() != 1) throw ConfigError("CMDP environment takes exactly one action");
  const int a = actions[0];
  if (a < 0 || a >= spec_.num_actions) throw ConfigError("CMDP action out of range");
  EnvStep out;
  out.reward = spec_.reward(state_, a);
  for (std::size_t i = 0; i < spec_.costs.size(); ++i) out.costs.c[spec_.cost_id(i)] = spec_.costs[i](state_, a);
  for (std::size_t j = 0; j < spec_.eq_costs.size(); ++j) {
    const double e = spec_.eq_costs[j](state_, a);
    out.costs.e[spec_.eq_id(j)] = e;
    out.feasible = out.feasible && e == 0.0;
  }
  for (std::size_t k = 0; k < spec_.inst_costs.size(); ++k) {
    const double g = spec_.inst_costs[k](state_, a);
    out.costs.g[spec_.inst_id(k)] = g;
    out.feasible = out.feasible && g <= 0.0;
  }
  out.violation = !out.feasible;
  state_ = sample_next(state_, a);
  out.obs = one_hot(state_);
  return {out};
}

// ---------------------------------------------------------------------------

DeterministicPolicy greedy_policy(const SafeAgent& agent, int num_states) {
  DeterministicPolicy policy(static_cast<std::size_t>(num_states), 0);
  const ActionMask all(static_cast<std::size_t>(agent.q().num_actions()), true);
  for (int s = 0; s < num_states; ++s) {
    VectorXd obs = VectorXd::Zero(num_states);
    obs(s) = 1.0;
    policy[s] = agent.greedy(obs, all);
  }
  return policy;
}

int select_feasible_iterate(const std::vector<IterateStats>& iterates, const std::vector<double>& budgets,
                            int min_episodes) {
  int best = -1;
  double best_reward = 0.0;
  for (std::size_t k = 0; k < iterates.size(); ++k) {
    const auto& it = iterates[k];
    if (it.episodes < std::max(min_episodes, 1)) continue;
    const double n = static_cast<double>(it.episodes);
    bool ok = true;
    for (std::size_t i = 0; i < budgets.size(); ++i) ok = ok && it.cost_sums.at(i) / n <= budgets[i];
    if (!ok) continue;
    if (best < 0 || it.reward_sum / n > best_reward) {
      best = static_cast<int>(k);
      best_reward = it.reward_sum / n;
    }
  }
  return best;
}

namespace {

bool within_budgets(const PolicyValue& pv, const CmdpSpec& spec, double tol) {
  for (std::size_t i = 0; i < pv.costs.size(); ++i) {
    if (pv.costs[i] > spec.budgets[i] + tol) return false;
  }
  return true;
}

}  // namespace

std::vector<OracleRow> run_oracle_benchmark(const std::vector<std::uint64_t>& seeds, const OracleBenchmarkConfig& cfg) {
  std::vector<OracleRow> rows;
  for (std::uint64_t seed : seeds) {
    OracleRow row;
    row.seed = seed;
    const CmdpSpec spec = random_cmdp(seed, cfg.num_states, cfg.num_actions, cfg.num_constraints, cfg.gamma,
                                      cfg.budget_fraction);
    row.budgets = spec.budgets;
    const OracleResult oracle = best_feasible_deterministic(spec);
    row.oracle_feasible = oracle.feasible_exists;
    row.v_r_star = oracle.v_r;
    row.best = oracle.policy;

    AgentConfig acfg = cfg.agent;
    acfg.tabular = true;
    acfg.training.gamma = cfg.gamma;
    CmdpEnv env(spec);
    auto agents = make_agents(env, acfg, derive_seed(seed, 0x5AFE));

    // Greedy-phase bookkeeping: an episode counts for a policy when the greedy
    // policy was the same before and after it.
    std::vector<IterateStats> iterates;
    DeterministicPolicy before = greedy_policy(agents.front(), spec.num_states);
    double disc_reward = 0.0;
    std::vector<double> disc_cost(spec.costs.size(), 0.0);
    double discount = 1.0;
    auto observer = [&](int, const Environment&, std::span<const int>, const std::vector<EnvStep>& steps) {
      disc_reward += discount * steps.front().reward;
      for (std::size_t i = 0; i < disc_cost.size(); ++i) {
        disc_cost[i] += discount * steps.front().costs.c.at(spec.cost_id(i));
      }
      discount *= spec.gamma;
    };
    auto on_episode = [&](const std::vector<EpisodeReport>& reports) {
      DeterministicPolicy after = greedy_policy(agents.front(), spec.num_states);
      if (reports.front().epsilon == 0.0 && after == before) {
        auto it = std::find_if(iterates.begin(), iterates.end(), [&](const IterateStats& s) { return s.policy == after; });
        if (it == iterates.end()) {
          iterates.push_back({after, 0, 0.0, std::vector<double>(disc_cost.size(), 0.0)});
          it = std::prev(iterates.end());
        }
        ++it->episodes;
        it->reward_sum += disc_reward;
        for (std::size_t i = 0; i < disc_cost.size(); ++i) it->cost_sums[i] += disc_cost[i];
      }
      before = std::move(after);
      disc_reward = 0.0;
      std::fill(disc_cost.begin(), disc_cost.end(), 0.0);
      discount = 1.0;
    };
    run_training(env, agents, cfg.episodes, derive_seed(seed, 0x7EA1), on_episode, observer);
    row.env_steps = agents.front().env_steps();

    row.final_policy = greedy_policy(agents.front(), spec.num_states);
    const PolicyValue final_pv = policy_value(spec, row.final_policy);
    row.final_v_r = final_pv.reward;
    row.final_feasible = within_budgets(final_pv, spec, cfg.feasibility_tolerance);

    row.learned = row.final_policy;
    if (cfg.select_iterate) {
      const int k = select_feasible_iterate(iterates, spec.budgets, cfg.selection_min_episodes);
      if (k >= 0) {
        row.learned = iterates[static_cast<std::size_t>(k)].policy;
        row.selected_episodes = iterates[static_cast<std::size_t>(k)].episodes;
      }
    }
    const PolicyValue pv = policy_value(spec, row.learned);
    row.v_r = pv.reward;
    row.v_c = pv.costs;
    row.feasible = within_budgets(pv, spec, cfg.feasibility_tolerance);
    row.ratio = oracle.v_r > 0.0 ? pv.reward / oracle.v_r : 0.0;
    row.pass = row.oracle_feasible && row.feasible && row.ratio >= cfg.value_ratio;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string oracle_csv(const std::vector<OracleRow>& rows) {
  std::string out =
      "seed,oracle_feasible,v_r_star,v_r,ratio,v_c,budget,feasible,env_steps,selected_episodes,final_v_r,"
      "final_feasible,pass\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.10g},{:.10g},{:.6f},{:.10g},{:.10g},{},{},{},{:.10g},{},{}\n", r.seed,
                       r.oracle_feasible ? 1 : 0, r.v_r_star, r.v_r, r.ratio, r.v_c.empty() ? 0.0 : r.v_c.front(),
                       r.budgets.empty() ? 0.0 : r.budgets.front(), r.feasible ? 1 : 0, r.env_steps,
                       r.selected_episodes, r.final_v_r, r.final_feasible ? 1 : 0, r.pass ? 1 : 0);
  }
  return out;
}

}  // namespace safeq
