#include "safeq/lagrangian.hpp"

#include <algorithm>
#include <cmath>

namespace safeq {

namespace {

double lookup(const IdMap& map, const std::string& id, const char* what) {
  const auto it = map.find(id);
  if (it == map.end()) {
    throw ConfigError(std::string("unknown constraint id '") + id + "' for " + what);
  }
  return it->second;
}

}  // namespace

std::string to_string(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::CumulativeInequality:
      return "cumulative";
    case ConstraintKind::InstantEquality:
      return "equality";
    case ConstraintKind::InstantInequality:
      return "instantaneous";
  }
  return "unknown";
}

ConstraintKind constraint_kind_from_string(const std::string& name) {
  if (name == "cumulative") return ConstraintKind::CumulativeInequality;
  if (name == "equality") return ConstraintKind::InstantEquality;
  if (name == "instantaneous") return ConstraintKind::InstantInequality;
  throw ConfigError("unknown constraint kind '" + name + "'");
}

ConstraintSet::ConstraintSet(std::vector<ConstraintSpec> specs) : specs_(std::move(specs)) {
  std::set<std::string> seen;
  for (const auto& s : specs_) {
    if (s.id.empty()) throw ConfigError("constraint id must be non-empty");
    if (!seen.insert(s.id).second) throw ConfigError("constraint id collision: '" + s.id + "'");
    const bool cumulative = s.kind == ConstraintKind::CumulativeInequality;
    if (cumulative != s.budget.has_value()) {
      throw ConfigError("constraint '" + s.id + "': budget must be given iff the constraint is cumulative");
    }
    if (cumulative && !(*s.budget >= 0.0)) {
      throw ConfigError("constraint '" + s.id + "': budget must be >= 0");
    }
  }
}

const ConstraintSpec& ConstraintSet::at(const std::string& id) const {
  for (const auto& s : specs_) {
    if (s.id == id) return s;
  }
  throw ConfigError("unknown constraint id '" + id + "'");
}

bool ConstraintSet::contains(const std::string& id) const {
  return std::any_of(specs_.begin(), specs_.end(), [&](const auto& s) { return s.id == id; });
}

std::vector<std::string> ConstraintSet::ids(ConstraintKind kind) const {
  std::vector<std::string> out;
  for (const auto& s : specs_) {
    if (s.kind == kind) out.push_back(s.id);
  }
  return out;
}

DualState initial_duals(const ConstraintSet& specs, const DualParams& params) {
  if (!(params.rho0 > 0.0) || !(params.rho_max > 0.0) || params.rho0 > params.rho_max) {
    throw ConfigError("penalty factors must satisfy 0 < rho0 <= rho_max");
  }
  if (!(params.xi > 1.0)) throw ConfigError("penalty scaling xi must exceed 1");
  if (!(params.beta_lambda > 0.0) || !(params.beta_mu > 0.0) || !(params.beta_nu > 0.0)) {
    throw ConfigError("dual learning rates must be positive");
  }
  DualState d;
  d.xi = params.xi;
  d.rho_max = params.rho_max;
  d.beta_lambda = params.beta_lambda;
  d.beta_mu = params.beta_mu;
  d.beta_nu = params.beta_nu;
  for (const auto& s : specs.specs()) {
    switch (s.kind) {
      case ConstraintKind::CumulativeInequality:
        d.lambda[s.id] = 0.0;
        break;
      case ConstraintKind::InstantEquality:
        d.mu[s.id] = 0.0;
        d.rho_eq[s.id] = params.rho0;
        break;
      case ConstraintKind::InstantInequality:
        d.nu[s.id] = 0.0;
        d.rho_inst[s.id] = params.rho0;
        break;
    }
  }
  return d;
}

void TrainingConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (dual_update_period < 1) throw ConfigError("dual update period must be >= 1");
}

double penalty_inst(const CostSample& costs, const DualState& duals) {
  double total = 0.0;
  for (const auto& [id, g] : costs.g) {
    const double nu = lookup(duals.nu, id, "instantaneous multiplier");
    const double rho = lookup(duals.rho_inst, id, "instantaneous penalty");
    const double gp = positive_part(g);
    total += nu * gp + 0.5 * rho * gp * gp;
  }
  return total;
}

double penalty_eq(const CostSample& costs, const DualState& duals) {
  double total = 0.0;
  for (const auto& [id, e] : costs.e) {
    const double mu = lookup(duals.mu, id, "equality multiplier");
    const double rho = lookup(duals.rho_eq, id, "equality penalty");
    total += mu * e + 0.5 * rho * e * e;
  }
  return total;
}

double penalty_cum_step(const CostSample& costs, const DualState& duals, const ConstraintSet& specs,
                        const TrainingConfig& cfg) {
  double total = 0.0;
  for (const auto& [id, c] : costs.c) {
    const auto& spec = specs.at(id);
    if (!spec.budget) throw ConfigError("constraint '" + id + "' has no budget");
    const double lambda = lookup(duals.lambda, id, "cumulative multiplier");
    total += lambda * (c - (1.0 - cfg.gamma) * *spec.budget);
  }
  return total;
}

double penalty_step(const CostSample& costs, const DualState& duals, const ConstraintSet& specs,
                    const TrainingConfig& cfg) {
  return penalty_inst(costs, duals) + penalty_eq(costs, duals) + penalty_cum_step(costs, duals, specs, cfg);
}

IdMap estimate_cumulative_cost(std::span<const CostSample> trajectory, double gamma) {
  IdMap out;
  double discount = 1.0;
  for (const auto& step : trajectory) {
    for (const auto& [id, c] : step.c) out[id] += discount * c;
    discount *= gamma;
  }
  return out;
}

DualState dual_ascent(const DualState& duals, const ConstraintSet& specs, const IdMap& vhat_c,
                      const IdMap& mean_e, const IdMap& mean_gplus) {
  if (duals.beta_lambda < 0.0 || duals.beta_mu < 0.0 || duals.beta_nu < 0.0) {
    throw ConfigError("dual learning rates must be non-negative");
  }
  DualState next = duals;
  for (const auto& [id, v] : vhat_c) {
    const auto& spec = specs.at(id);
    if (!spec.budget) throw ConfigError("constraint '" + id + "' has no budget");
    const double lambda = lookup(duals.lambda, id, "cumulative multiplier");
    next.lambda[id] = positive_part(lambda + duals.beta_lambda * (v - *spec.budget));
  }
  for (const auto& [id, e] : mean_e) {
    next.mu[id] = lookup(duals.mu, id, "equality multiplier") + duals.beta_mu * e;
  }
  for (const auto& [id, gp] : mean_gplus) {
    next.nu[id] = positive_part(lookup(duals.nu, id, "instantaneous multiplier") + duals.beta_nu * gp);
  }
  return next;
}

DualState scale_penalties(const DualState& duals, const std::set<std::string>& violated) {
  DualState next = duals;
  for (const auto& id : violated) {
    for (IdMap* rho : {&next.rho_eq, &next.rho_inst}) {
      auto it = rho->find(id);
      if (it != rho->end()) it->second = std::min(duals.xi * it->second, duals.rho_max);
    }
  }
  return next;
}

EpisodeCostStats summarize_costs(std::span<const CostSample> trajectory, const ConstraintSet& specs,
                                 double gamma) {
  EpisodeCostStats stats;
  for (const auto& id : specs.ids(ConstraintKind::CumulativeInequality)) stats.vhat_c[id] = 0.0;
  for (const auto& id : specs.ids(ConstraintKind::InstantEquality)) {
    stats.mean_e[id] = stats.mean_abs_e[id] = stats.max_abs_e[id] = 0.0;
  }
  for (const auto& id : specs.ids(ConstraintKind::InstantInequality)) {
    stats.mean_gplus[id] = stats.max_gplus[id] = 0.0;
  }
  if (trajectory.empty()) return stats;

  for (const auto& [id, v] : estimate_cumulative_cost(trajectory, gamma)) stats.vhat_c[id] = v;
  const double n = static_cast<double>(trajectory.size());
  for (const auto& step : trajectory) {
    for (const auto& [id, e] : step.e) {
      stats.mean_e[id] += e / n;
      stats.mean_abs_e[id] += std::abs(e) / n;
      stats.max_abs_e[id] = std::max(stats.max_abs_e[id], std::abs(e));
    }
    for (const auto& [id, g] : step.g) {
      const double gp = positive_part(g);
      stats.mean_gplus[id] += gp / n;
      stats.max_gplus[id] = std::max(stats.max_gplus[id], gp);
    }
  }
  return stats;
}

std::set<std::string> violated_constraints(const EpisodeCostStats& stats, const ConstraintSet& specs,
                                           const TrainingConfig& cfg) {
  const bool any = cfg.trigger == PenaltyTrigger::OnAnyViolation;
  const double tol = cfg.violation_tolerance;
  std::set<std::string> out;
  for (const auto& [id, v] : stats.vhat_c) {
    if (v > *specs.at(id).budget) out.insert(id);
  }
  const IdMap& e_stat = any ? stats.max_abs_e : stats.mean_abs_e;
  for (const auto& [id, e] : e_stat) {
    if (e > tol) out.insert(id);
  }
  const IdMap& g_stat = any ? stats.max_gplus : stats.mean_gplus;
  for (const auto& [id, g] : g_stat) {
    if (g > tol) out.insert(id);
  }
  return out;
}

}  // namespace safeq
