#include "safeq/training.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

namespace safeq {

std::uint64_t episode_seed(std::uint64_t run_seed, int episode) {
  return derive_seed(run_seed, 1000003ULL + static_cast<std::uint64_t>(episode));
}

std::vector<SafeAgent> make_agents(const Environment& env, const AgentConfig& cfg, std::uint64_t seed,
                                   const ConstraintSet* specs) {
  const ConstraintSet set = specs ? *specs : env.constraints();
  std::vector<SafeAgent> agents;
  agents.reserve(static_cast<std::size_t>(env.num_agents()));
  for (int n = 0; n < env.num_agents(); ++n) {
    agents.emplace_back(cfg, set, env.observation_size(), env.action_radices(),
                        derive_seed(seed, static_cast<std::uint64_t>(n)));
  }
  return agents;
}

std::vector<EpisodeReport> run_episode(Environment& env, std::vector<SafeAgent>& agents, int episode,
                                       std::uint64_t env_seed, const EpisodeOptions& opts,
                                       const StepObserver& observer) {
  const int n_agents = env.num_agents();
  if (static_cast<int>(agents.size()) != n_agents) throw ConfigError("one agent per environment agent required");
  const TrainingConfig& tcfg = agents.front().config().training;
  const double tol = tcfg.violation_tolerance;

  std::vector<EpisodeReport> reports(static_cast<std::size_t>(n_agents));
  std::vector<std::vector<CostSample>> trajectories(static_cast<std::size_t>(n_agents));
  for (int n = 0; n < n_agents; ++n) {
    reports[n].episode = episode;
    reports[n].agent = n;
    reports[n].epsilon = opts.epsilon;
  }

  std::vector<VectorXd> obs = env.reset(env_seed);
  std::vector<int> intended(static_cast<std::size_t>(n_agents));
  for (int t = 0; t < tcfg.horizon; ++t) {
    for (int n = 0; n < n_agents; ++n) {
      ActionMask mask = env.safe_action_mask(n);
      if (ensure_nonempty(mask, env.fallback_action(n))) ++reports[n].mask_fallbacks;
      intended[n] = agents[n].act(obs[n], mask, opts.epsilon);
    }

    std::vector<EnvStep> steps;
    try {
      steps = env.step(intended);
    } catch (const std::exception& e) {
      for (auto& r : reports) {
        r.aborted = true;
        r.abort_reason = e.what();
      }
      break;
    }
    if (observer) observer(t, env, intended, steps);

    bool done = false;
    for (int n = 0; n < n_agents; ++n) {
      const EnvStep& s = steps[n];
      EpisodeReport& r = reports[n];
      r.ret += s.reward;
      ++r.steps;
      bool violated = false;
      for (const auto& [id, g] : s.costs.g) {
        if (g > tol) {
          ++r.violation_steps[id];
          violated = true;
        }
      }
      for (const auto& [id, e] : s.costs.e) {
        if (std::abs(e) > tol) {
          ++r.violation_steps[id];
          violated = true;
        }
      }
      r.violations += violated ? 1 : 0;
      r.collisions += s.collision ? 1 : 0;
      r.shield_overrides += s.overridden ? 1 : 0;
      r.infeasible_steps += s.feasible ? 0 : 1;
      trajectories[n].push_back(s.costs);

      if (opts.learn) {
        ActionMask next_mask = env.safe_action_mask(n);
        if (!s.terminal) ensure_nonempty(next_mask, env.fallback_action(n));
        Transition tr{obs[n], intended[n], s.reward, s.obs, s.costs, std::move(next_mask), s.terminal};
        if (auto loss = agents[n].observe(std::move(tr))) {
          r.loss_mean += *loss;
          ++r.loss_count;
        }
      }
      obs[n] = s.obs;
      done = done || s.terminal;
      if (s.failure) {
        r.aborted = true;
        r.abort_reason = "environment failure";
      }
    }
    if (done) break;
  }

  for (int n = 0; n < n_agents; ++n) {
    EpisodeReport& r = reports[n];
    if (r.loss_count > 0) r.loss_mean /= r.loss_count;
    r.stats = summarize_costs(trajectories[n], agents[n].constraints(), tcfg.gamma);
    if (opts.update_duals) agents[n].end_of_episode(r.stats);
    r.duals = agents[n].duals();
  }
  return reports;
}

namespace {

RunArtifacts run_loop(Environment& env, std::vector<SafeAgent>& agents, int episodes, std::uint64_t seed,
                      bool training, const EpisodeCallback& on_episode, const StepObserver& observer) {
  if (agents.empty()) throw ConfigError("no agents");
  RunArtifacts run;
  run.episodes.reserve(static_cast<std::size_t>(episodes));
  const double fraction = agents.front().config().epsilon_decay_fraction;
  for (int ep = 0; ep < episodes; ++ep) {
    EpisodeOptions opts;
    opts.learn = training;
    opts.update_duals = training;
    opts.epsilon = training ? epsilon_schedule(ep, episodes, fraction) : 0.0;
    run.episodes.push_back(run_episode(env, agents, ep, episode_seed(seed, ep), opts, observer));
    if (on_episode) on_episode(run.episodes.back());
  }
  return run;
}

}  // namespace

RunArtifacts run_training(Environment& env, std::vector<SafeAgent>& agents, int episodes, std::uint64_t seed,
                          const EpisodeCallback& on_episode, const StepObserver& observer) {
  return run_loop(env, agents, episodes, seed, true, on_episode, observer);
}

RunArtifacts run_evaluation(Environment& env, std::vector<SafeAgent>& agents, int episodes, std::uint64_t seed,
                            const EpisodeCallback& on_episode, const StepObserver& observer) {
  // Evaluation episodes draw from a stream disjoint from training.
  return run_loop(env, agents, episodes, derive_seed(seed, 0xE7A1), false, on_episode, observer);
}

int convergence_episode(const RunArtifacts& run, int window) {
  int clean = 0;
  for (int ep = static_cast<int>(run.episodes.size()) - 1; ep >= 0; --ep) {
    bool ok = true;
    for (const auto& r : run.episodes[ep]) ok = ok && r.violations == 0;
    if (!ok) break;
    ++clean;
  }
  if (clean < window) return -1;
  return static_cast<int>(run.episodes.size()) - clean;
}

// ---------------------------------------------------------------------------

MetricsWriter::MetricsWriter(const std::string& path, const ConstraintSet& specs) : specs_(specs) {
  file_ = std::fopen(path.c_str(), "w");
  if (!file_) throw std::runtime_error("cannot open metrics file " + path);
  const std::string h = header(specs_);
  std::fputs(h.c_str(), file_);
  std::fflush(file_);
}

MetricsWriter::~MetricsWriter() {
  if (file_) std::fclose(file_);
}

std::string MetricsWriter::header(const ConstraintSet& specs) {
  std::string h = "episode,agent,return";
  const auto cum = specs.ids(ConstraintKind::CumulativeInequality);
  const auto eq = specs.ids(ConstraintKind::InstantEquality);
  const auto inst = specs.ids(ConstraintKind::InstantInequality);
  for (const auto& id : cum) h += ",v_hat_" + id;
  for (const auto& id : inst) h += ",mean_gplus_" + id;
  for (const auto& id : eq) h += ",mean_abs_e_" + id;
  for (const auto& id : cum) h += ",lambda_" + id;
  for (const auto& id : inst) h += ",nu_" + id;
  for (const auto& id : eq) h += ",mu_" + id;
  for (const auto& id : eq) h += ",rho_" + id;
  for (const auto& id : inst) h += ",rho_" + id;
  h += ",violations,collisions,shield_overrides,epsilon,loss_mean\n";
  return h;
}

std::string MetricsWriter::row(const EpisodeReport& r, const ConstraintSet& specs) {
  auto num = [](double v) { return fmt::format(",{:.12g}", v); };
  std::string s = fmt::format("{},{},{:.12g}", r.episode, r.agent, r.ret);
  const auto cum = specs.ids(ConstraintKind::CumulativeInequality);
  const auto eq = specs.ids(ConstraintKind::InstantEquality);
  const auto inst = specs.ids(ConstraintKind::InstantInequality);
  for (const auto& id : cum) s += num(r.stats.vhat_c.at(id));
  for (const auto& id : inst) s += num(r.stats.mean_gplus.at(id));
  for (const auto& id : eq) s += num(r.stats.mean_abs_e.at(id));
  for (const auto& id : cum) s += num(r.duals.lambda.at(id));
  for (const auto& id : inst) s += num(r.duals.nu.at(id));
  for (const auto& id : eq) s += num(r.duals.mu.at(id));
  for (const auto& id : eq) s += num(r.duals.rho_eq.at(id));
  for (const auto& id : inst) s += num(r.duals.rho_inst.at(id));
  s += fmt::format(",{},{},{},{:.12g},{:.12g}\n", r.violations, r.collisions, r.shield_overrides, r.epsilon,
                   r.loss_mean);
  return s;
}

void MetricsWriter::write(const std::vector<EpisodeReport>& reports) {
  for (const auto& r : reports) {
    const std::string line = row(r, specs_);
    std::fputs(line.c_str(), file_);
  }
  std::fflush(file_);
}

}  // namespace safeq
