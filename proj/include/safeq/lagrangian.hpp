#pragma once

// Constraint taxonomy and augmented-Lagrangian arithmetic shared by every
// learner: penalty terms for the three constraint kinds, projected dual
// ascent and adaptive penalty scaling. Everything here is a pure function of
// value inputs.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "safeq/types.hpp"

namespace safeq {

enum class ConstraintKind { CumulativeInequality, InstantEquality, InstantInequality };

std::string to_string(ConstraintKind kind);
ConstraintKind constraint_kind_from_string(const std::string& name);

struct ConstraintSpec {
  std::string id;
  ConstraintKind kind = ConstraintKind::InstantInequality;
  /// Long-term budget d_i; present iff kind == CumulativeInequality.
  std::optional<double> budget;
  std::string description;
};

/// Validated, id-unique collection of constraint specs for one agent.
class ConstraintSet {
 public:
  ConstraintSet() = default;
  explicit ConstraintSet(std::vector<ConstraintSpec> specs);

  const std::vector<ConstraintSpec>& specs() const { return specs_; }
  const ConstraintSpec& at(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::vector<std::string> ids(ConstraintKind kind) const;
  bool empty() const { return specs_.empty(); }

 private:
  std::vector<ConstraintSpec> specs_;
};

using IdMap = std::map<std::string, double>;

/// Multipliers, penalty factors and dual step sizes of one agent.
struct DualState {
  IdMap lambda;    // cumulative, >= 0
  IdMap mu;        // equality, sign-free
  IdMap nu;        // instantaneous inequality, >= 0
  IdMap rho_eq;    // (0, rho_max]
  IdMap rho_inst;  // (0, rho_max]
  double xi = 1.1;
  double rho_max = 100000.0;
  double beta_lambda = 0.1;
  double beta_mu = 0.1;
  double beta_nu = 0.1;
};

struct DualParams {
  double rho0 = 0.05;
  double xi = 1.1;
  double rho_max = 100000.0;
  double beta_lambda = 0.1;
  double beta_mu = 0.1;
  double beta_nu = 0.1;
};

/// Zero multipliers and rho0 penalties for every registered constraint.
DualState initial_duals(const ConstraintSet& specs, const DualParams& params);

/// Instantaneous cost values of one (s, a) pair, keyed by constraint id.
struct CostSample {
  IdMap g;  // instantaneous inequality, feasible iff <= 0
  IdMap e;  // equality, feasible iff == 0
  IdMap c;  // per-step cumulative cost
};

enum class PenaltyTrigger { OnAnyViolation, OnMeanViolation };

struct TrainingConfig {
  double gamma = 0.95;
  int horizon = 100;
  int dual_update_period = 1;  // episodes
  PenaltyTrigger trigger = PenaltyTrigger::OnMeanViolation;
  double violation_tolerance = 1e-9;

  void validate() const;
};

inline double positive_part(double x) { return x > 0.0 ? x : 0.0; }

double penalty_inst(const CostSample& costs, const DualState& duals);
double penalty_eq(const CostSample& costs, const DualState& duals);
double penalty_cum_step(const CostSample& costs, const DualState& duals, const ConstraintSet& specs,
                        const TrainingConfig& cfg);
double penalty_step(const CostSample& costs, const DualState& duals, const ConstraintSet& specs,
                    const TrainingConfig& cfg);

/// Single-trajectory Monte-Carlo estimate of sum_t gamma^t c_i(s_t, a_t) per id.
IdMap estimate_cumulative_cost(std::span<const CostSample> trajectory, double gamma);

/// Projected dual ascent. vhat_c holds discounted cost estimates (not yet
/// offset by the budget); mean_e / mean_gplus are per-episode step means.
DualState dual_ascent(const DualState& duals, const ConstraintSet& specs, const IdMap& vhat_c,
                      const IdMap& mean_e, const IdMap& mean_gplus);

/// rho <- min(xi * rho, rho_max) for every violated equality/instantaneous id.
DualState scale_penalties(const DualState& duals, const std::set<std::string>& violated);

/// Per-episode statistics the dual update consumes.
struct EpisodeCostStats {
  IdMap vhat_c;
  IdMap mean_e;
  IdMap mean_abs_e;
  IdMap max_abs_e;
  IdMap mean_gplus;
  IdMap max_gplus;
};

EpisodeCostStats summarize_costs(std::span<const CostSample> trajectory, const ConstraintSet& specs,
                                 double gamma);

/// Ids whose episode estimate violates its constraint under the configured trigger.
std::set<std::string> violated_constraints(const EpisodeCostStats& stats, const ConstraintSet& specs,
                                           const TrainingConfig& cfg);

}  // namespace safeq
