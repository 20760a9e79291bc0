#pragma once

// Run configuration: a JSON document with nested keys. Every key has a
// default; unknown keys and type mismatches are rejected with their path.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "safeq/agent.hpp"
#include "safeq/env_ris.hpp"
#include "safeq/env_uav.hpp"

namespace safeq {

using Json = nlohmann::json;

enum class EnvKind { Uav, Ris, Cmdp };
std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& name);

struct CmdpEnvConfig {
  int states = 5;
  int actions = 3;
  int constraints = 1;
  double gamma = 0.9;
  double budget_fraction = 0.7;
  std::vector<std::uint64_t> oracle_seeds{1, 2, 3};
  double feasibility_tolerance = 1e-2;
  double value_ratio = 0.95;
};

/// Declared constraint: must name a constraint of the environment with the same kind;
/// a budget given here replaces the environment's.
struct ConstraintDecl {
  std::string id;
  ConstraintKind kind = ConstraintKind::InstantInequality;
  std::optional<double> budget;
};

struct RunConfig {
  EnvKind env = EnvKind::Cmdp;
  std::string mode = "train";
  int episodes = 500;
  std::uint64_t seed = 0;
  int eval_episodes = 100;
  std::string output_dir;
  std::string checkpoint_dir;
  bool trajectory = false;

  AgentConfig agent;
  UavConfig uav;
  RisConfig ris;
  CmdpEnvConfig cmdp;
  std::vector<ConstraintDecl> constraints;
  bool shield_enabled = true;

  void validate() const;
};

/// The fully resolved configuration as JSON (every key present).
Json to_json(const RunConfig& cfg);
/// Defaults overlaid with `doc`; throws ConfigError naming the offending path.
RunConfig run_config_from_json(const Json& doc);

/// Reads a JSON config file; ParseError carries the byte offset on malformed input.
Json load_config_file(const std::string& path);

/// Applies `--a.b.c value` style overrides to a config document. Values are
/// parsed as JSON when possible (numbers, booleans, arrays) and as strings otherwise.
void apply_overrides(Json& doc, const std::vector<std::pair<std::string, std::string>>& overrides);

/// Short flags mapped onto dotted paths.
std::string expand_alias(const std::string& flag);

/// Environment constraints with the config's declarations applied.
ConstraintSet resolve_constraints(const ConstraintSet& env_specs, const std::vector<ConstraintDecl>& decls);

}  // namespace safeq
