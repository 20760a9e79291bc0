#include "safeq/config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <set>
#include <sstream>

namespace safeq {

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::Uav: return "uav";
    case EnvKind::Ris: return "ris";
    case EnvKind::Cmdp: return "cmdp";
  }
  return "?";
}

EnvKind env_kind_from_string(const std::string& name) {
  if (name == "uav") return EnvKind::Uav;
  if (name == "ris") return EnvKind::Ris;
  if (name == "cmdp") return EnvKind::Cmdp;
  throw ConfigError("env.kind: unknown environment '" + name + "' (expected uav, ris or cmdp)");
}

void RunConfig::validate() const {
  if (mode != "train" && mode != "eval" && mode != "oracle-check") {
    throw ConfigError("mode: expected train, eval or oracle-check, got '" + mode + "'");
  }
  if (episodes < 1) throw ConfigError("episodes: must be >= 1");
  if (eval_episodes < 1) throw ConfigError("eval_episodes: must be >= 1");
  agent.validate();
  uav.validate();
  ris.validate();
  if (cmdp.states < 2 || cmdp.actions < 2 || cmdp.constraints < 0) {
    throw ConfigError("env.cmdp: states and actions must be >= 2, constraints >= 0");
  }
  if (!(cmdp.gamma >= 0.0 && cmdp.gamma < 1.0)) throw ConfigError("env.cmdp.gamma: must lie in [0, 1)");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    if (!seen.insert(constraints[i].id).second) {
      throw ConfigError(fmt::format("constraints[{}].id: duplicate constraint id '{}'", i, constraints[i].id));
    }
  }
}

namespace {

std::string trigger_name(PenaltyTrigger t) { return t == PenaltyTrigger::OnAnyViolation ? "any" : "mean"; }

PenaltyTrigger trigger_from(const std::string& s) {
  if (s == "any") return PenaltyTrigger::OnAnyViolation;
  if (s == "mean") return PenaltyTrigger::OnMeanViolation;
  throw ConfigError("agent.penalty_trigger: expected 'any' or 'mean', got '" + s + "'");
}

Json constraint_json(const ConstraintDecl& d) {
  Json j{{"id", d.id}, {"kind", to_string(d.kind)}};
  if (d.budget) j["budget"] = *d.budget;
  return j;
}

std::string type_name(const Json& j) {
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  return j.type_name();
}

bool compatible(const Json& def, const Json& val) {
  if (def.is_number_float()) return val.is_number();
  if (def.is_number_unsigned()) return val.is_number_unsigned() || (val.is_number_integer() && val.get<long long>() >= 0);
  if (def.is_number_integer()) return val.is_number_integer();
  return def.type() == val.type();
}

void check_constraints(const Json& val) {
  if (!val.is_array()) throw ConfigError("constraints: expected array, got " + type_name(val));
  for (std::size_t i = 0; i < val.size(); ++i) {
    const Json& d = val[i];
    const std::string at = fmt::format("constraints[{}]", i);
    if (!d.is_object()) throw ConfigError(at + ": expected object");
    for (auto it = d.begin(); it != d.end(); ++it) {
      const std::string& k = it.key();
      if (k == "id" || k == "kind") {
        if (!it->is_string()) throw ConfigError(at + "." + k + ": expected string, got " + type_name(*it));
      } else if (k == "budget") {
        if (!it->is_number()) throw ConfigError(at + ".budget: expected number, got " + type_name(*it));
      } else {
        throw ConfigError(at + "." + k + ": unknown key");
      }
    }
    if (!d.contains("id") || !d.contains("kind")) throw ConfigError(at + ": 'id' and 'kind' are required");
  }
}

void check_against(const Json& def, const Json& val, const std::string& path) {
  if (path == "constraints") {
    check_constraints(val);
    return;
  }
  if (def.is_object()) {
    if (!val.is_object()) throw ConfigError(path + ": expected object, got " + type_name(val));
    for (auto it = val.begin(); it != val.end(); ++it) {
      const std::string sub = path.empty() ? it.key() : path + "." + it.key();
      if (!def.contains(it.key())) throw ConfigError(sub + ": unknown key");
      check_against(def.at(it.key()), *it, sub);
    }
    return;
  }
  if (def.is_array()) {
    if (!val.is_array()) throw ConfigError(path + ": expected array, got " + type_name(val));
    if (!def.empty()) {
      for (std::size_t i = 0; i < val.size(); ++i) {
        if (!compatible(def.front(), val[i])) {
          throw ConfigError(fmt::format("{}[{}]: expected {}, got {}", path, i, type_name(def.front()), type_name(val[i])));
        }
      }
    }
    return;
  }
  if (!compatible(def, val)) throw ConfigError(path + ": expected " + type_name(def) + ", got " + type_name(val));
}

}  // namespace

Json to_json(const RunConfig& c) {
  const auto& a = c.agent;
  const auto& u = c.uav;
  const auto& r = c.ris;
  Json cons = Json::array();
  for (const auto& d : c.constraints) cons.push_back(constraint_json(d));
  return Json{
      {"mode", c.mode},
      {"episodes", c.episodes},
      {"seed", c.seed},
      {"eval_episodes", c.eval_episodes},
      {"output_dir", c.output_dir},
      {"checkpoint_dir", c.checkpoint_dir},
      {"trajectory", c.trajectory},
      {"env",
       {{"kind", to_string(c.env)},
        {"uav",
         {{"num_uavs", u.num_uavs},
          {"subchannels", u.subchannels},
          {"bandwidth_hz", u.bandwidth_hz},
          {"noise_dbm", u.noise_dbm},
          {"power_levels_dbm", u.power_levels_dbm},
          {"d_min", u.d_min},
          {"energy_initial", u.energy_initial},
          {"energy_min", u.energy_min},
          {"energy_overhead", u.energy_overhead},
          {"delta_t", u.delta_t},
          {"slow_interval", u.slow_interval},
          {"daa_bits", u.daa_bits},
          {"eta_min", u.eta_min},
          {"arena_x", u.arena_x},
          {"arena_y", u.arena_y},
          {"altitude", u.altitude},
          {"base_station", u.base_station},
          {"rician_k_db", u.rician_k_db},
          {"pathloss_exponent", u.pathloss_exponent},
          {"ref_loss_db", u.ref_loss_db},
          {"step_size", u.step_size},
          {"knn_k", u.knn_k},
          {"energy_cost", u.energy_cost},
          {"energy_budget", u.energy_budget}}},
        {"ris",
         {{"antennas", r.antennas},
          {"elements_x", r.elements_x},
          {"elements_z", r.elements_z},
          {"blocks_x", r.blocks_x},
          {"blocks_z", r.blocks_z},
          {"users", r.users},
          {"codebook_size", r.codebook_size},
          {"power_levels_dbm", r.power_levels_dbm},
          {"sinr_threshold_db", r.sinr_threshold_db},
          {"noise_dbm", r.noise_dbm},
          {"cascade_loss_db", r.cascade_loss_db},
          {"rician_k_db", r.rician_k_db},
          {"clusters", r.clusters},
          {"precoder", to_string(r.precoder)},
          {"episode_length", r.episode_length},
          {"freeze_channels", r.freeze_channels}}},
        {"cmdp",
         {{"states", c.cmdp.states},
          {"actions", c.cmdp.actions},
          {"constraints", c.cmdp.constraints},
          {"gamma", c.cmdp.gamma},
          {"budget_fraction", c.cmdp.budget_fraction},
          {"oracle_seeds", c.cmdp.oracle_seeds},
          {"feasibility_tolerance", c.cmdp.feasibility_tolerance},
          {"value_ratio", c.cmdp.value_ratio}}}}},
      {"agent",
       {{"gamma", a.training.gamma},
        {"horizon", a.training.horizon},
        {"dual_update_period", a.training.dual_update_period},
        {"penalty_trigger", trigger_name(a.training.trigger)},
        {"violation_tolerance", a.training.violation_tolerance},
        {"q_function", a.tabular ? "tabular" : "neural"},
        {"tabular_learning_rate", a.tabular_learning_rate},
        {"hidden", a.network.hidden},
        {"learning_rate", a.network.adam.learning_rate},
        {"adam_beta1", a.network.adam.beta1},
        {"adam_beta2", a.network.adam.beta2},
        {"adam_epsilon", a.network.adam.epsilon},
        {"clip_norm", a.network.adam.clip_norm},
        {"target_sync", a.network.target_sync},
        {"q_head", a.network.factored_head ? "factored" : "flat"},
        {"batch_size", a.batch_size},
        {"buffer_capacity", a.buffer_capacity},
        {"update_period", a.update_period},
        {"epsilon_decay_fraction", a.epsilon_decay_fraction},
        {"vhat_window", a.vhat_window}}},
      {"duals",
       {{"rho0", a.duals.rho0},
        {"xi", a.duals.xi},
        {"rho_max", a.duals.rho_max},
        {"beta_lambda", a.duals.beta_lambda},
        {"beta_mu", a.duals.beta_mu},
        {"beta_nu", a.duals.beta_nu}}},
      {"ablation", {{"penalties_enabled", a.penalties_enabled}, {"shield_enabled", c.shield_enabled}}},
      {"constraints", cons},
  };
}

RunConfig run_config_from_json(const Json& doc) {
  const Json defaults = to_json(RunConfig{});
  check_against(defaults, doc, "");
  Json j = defaults;
  j.merge_patch(doc);

  RunConfig c;
  c.mode = j["mode"].get<std::string>();
  c.episodes = j["episodes"].get<int>();
  c.seed = j["seed"].get<std::uint64_t>();
  c.eval_episodes = j["eval_episodes"].get<int>();
  c.output_dir = j["output_dir"].get<std::string>();
  c.checkpoint_dir = j["checkpoint_dir"].get<std::string>();
  c.trajectory = j["trajectory"].get<bool>();

  const Json& e = j["env"];
  c.env = env_kind_from_string(e["kind"].get<std::string>());
  const Json& u = e["uav"];
  auto& uc = c.uav;
  uc.num_uavs = u["num_uavs"].get<int>();
  uc.subchannels = u["subchannels"].get<int>();
  uc.bandwidth_hz = u["bandwidth_hz"].get<double>();
  uc.noise_dbm = u["noise_dbm"].get<double>();
  uc.power_levels_dbm = u["power_levels_dbm"].get<std::vector<double>>();
  uc.d_min = u["d_min"].get<double>();
  uc.energy_initial = u["energy_initial"].get<double>();
  uc.energy_min = u["energy_min"].get<double>();
  uc.energy_overhead = u["energy_overhead"].get<double>();
  uc.delta_t = u["delta_t"].get<double>();
  uc.slow_interval = u["slow_interval"].get<int>();
  uc.daa_bits = u["daa_bits"].get<double>();
  uc.eta_min = u["eta_min"].get<double>();
  uc.arena_x = u["arena_x"].get<double>();
  uc.arena_y = u["arena_y"].get<double>();
  uc.altitude = u["altitude"].get<double>();
  const auto bs = u["base_station"].get<std::vector<double>>();
  if (bs.size() != 3) throw ConfigError("env.uav.base_station: expected 3 coordinates");
  uc.base_station = {bs[0], bs[1], bs[2]};
  uc.rician_k_db = u["rician_k_db"].get<double>();
  uc.pathloss_exponent = u["pathloss_exponent"].get<double>();
  uc.ref_loss_db = u["ref_loss_db"].get<double>();
  uc.step_size = u["step_size"].get<double>();
  uc.knn_k = u["knn_k"].get<int>();
  uc.energy_cost = u["energy_cost"].get<bool>();
  uc.energy_budget = u["energy_budget"].get<double>();

  const Json& r = e["ris"];
  auto& rc = c.ris;
  rc.antennas = r["antennas"].get<int>();
  rc.elements_x = r["elements_x"].get<int>();
  rc.elements_z = r["elements_z"].get<int>();
  rc.blocks_x = r["blocks_x"].get<int>();
  rc.blocks_z = r["blocks_z"].get<int>();
  rc.users = r["users"].get<int>();
  rc.codebook_size = r["codebook_size"].get<int>();
  rc.power_levels_dbm = r["power_levels_dbm"].get<std::vector<double>>();
  rc.sinr_threshold_db = r["sinr_threshold_db"].get<double>();
  rc.noise_dbm = r["noise_dbm"].get<double>();
  rc.cascade_loss_db = r["cascade_loss_db"].get<double>();
  rc.rician_k_db = r["rician_k_db"].get<double>();
  rc.clusters = r["clusters"].get<int>();
  rc.precoder = precoder_from_string(r["precoder"].get<std::string>());
  rc.episode_length = r["episode_length"].get<int>();
  rc.freeze_channels = r["freeze_channels"].get<bool>();

  const Json& m = e["cmdp"];
  c.cmdp.states = m["states"].get<int>();
  c.cmdp.actions = m["actions"].get<int>();
  c.cmdp.constraints = m["constraints"].get<int>();
  c.cmdp.gamma = m["gamma"].get<double>();
  c.cmdp.budget_fraction = m["budget_fraction"].get<double>();
  c.cmdp.oracle_seeds = m["oracle_seeds"].get<std::vector<std::uint64_t>>();
  c.cmdp.feasibility_tolerance = m["feasibility_tolerance"].get<double>();
  c.cmdp.value_ratio = m["value_ratio"].get<double>();

  const Json& a = j["agent"];
  auto& ac = c.agent;
  ac.training.gamma = a["gamma"].get<double>();
  // A CMDP's budgets are calibrated at its own discount; the learner follows it unless told otherwise.
  const bool gamma_given = doc.contains("agent") && doc["agent"].is_object() && doc["agent"].contains("gamma");
  if (c.env == EnvKind::Cmdp && !gamma_given) ac.training.gamma = c.cmdp.gamma;
  ac.training.horizon = a["horizon"].get<int>();
  ac.training.dual_update_period = a["dual_update_period"].get<int>();
  ac.training.trigger = trigger_from(a["penalty_trigger"].get<std::string>());
  ac.training.violation_tolerance = a["violation_tolerance"].get<double>();
  const auto qf = a["q_function"].get<std::string>();
  if (qf != "neural" && qf != "tabular") throw ConfigError("agent.q_function: expected 'neural' or 'tabular'");
  ac.tabular = qf == "tabular";
  ac.tabular_learning_rate = a["tabular_learning_rate"].get<double>();
  ac.network.hidden = a["hidden"].get<std::vector<int>>();
  ac.network.adam.learning_rate = a["learning_rate"].get<double>();
  ac.network.adam.beta1 = a["adam_beta1"].get<double>();
  ac.network.adam.beta2 = a["adam_beta2"].get<double>();
  ac.network.adam.epsilon = a["adam_epsilon"].get<double>();
  ac.network.adam.clip_norm = a["clip_norm"].get<double>();
  ac.network.target_sync = a["target_sync"].get<int>();
  const auto head = a["q_head"].get<std::string>();
  if (head != "flat" && head != "factored") throw ConfigError("agent.q_head: expected 'flat' or 'factored'");
  ac.network.factored_head = head == "factored";
  ac.batch_size = a["batch_size"].get<int>();
  ac.buffer_capacity = a["buffer_capacity"].get<int>();
  ac.update_period = a["update_period"].get<int>();
  ac.epsilon_decay_fraction = a["epsilon_decay_fraction"].get<double>();
  ac.vhat_window = a["vhat_window"].get<int>();

  const Json& d = j["duals"];
  ac.duals.rho0 = d["rho0"].get<double>();
  ac.duals.xi = d["xi"].get<double>();
  ac.duals.rho_max = d["rho_max"].get<double>();
  ac.duals.beta_lambda = d["beta_lambda"].get<double>();
  ac.duals.beta_mu = d["beta_mu"].get<double>();
  ac.duals.beta_nu = d["beta_nu"].get<double>();

  ac.penalties_enabled = j["ablation"]["penalties_enabled"].get<bool>();
  c.shield_enabled = j["ablation"]["shield_enabled"].get<bool>();
  c.uav.shield = c.shield_enabled;

  for (std::size_t i = 0; i < j["constraints"].size(); ++i) {
    const Json& dj = j["constraints"][i];
    ConstraintDecl decl;
    decl.id = dj["id"].get<std::string>();
    try {
      decl.kind = constraint_kind_from_string(dj["kind"].get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("constraints[{}].kind: {}", i, e.what()));
    }
    if (dj.contains("budget")) decl.budget = dj["budget"].get<double>();
    c.constraints.push_back(decl);
  }
  c.validate();
  return c;
}

Json load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw ParseError(path + ": malformed JSON: " + e.what(), e.byte);
  }
}

std::string expand_alias(const std::string& flag) {
  static const std::map<std::string, std::string> aliases{
      {"gamma", "agent.gamma"}, {"env", "env.kind"}, {"out", "output_dir"}, {"horizon", "agent.horizon"},
      {"penalties", "ablation.penalties_enabled"}, {"shield", "ablation.shield_enabled"},
      {"checkpoint", "checkpoint_dir"}};
  const auto it = aliases.find(flag);
  return it == aliases.end() ? flag : it->second;
}

void apply_overrides(Json& doc, const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [key, raw] : overrides) {
    const std::string path = expand_alias(key);
    Json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("malformed override path '" + path + "'");
      if (node->is_null()) *node = Json::object();
      if (!node->is_object()) throw ConfigError("override path '" + path + "' descends into a non-object");
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    Json value = Json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    *node = value;
  }
}

ConstraintSet resolve_constraints(const ConstraintSet& env_specs, const std::vector<ConstraintDecl>& decls) {
  std::vector<ConstraintSpec> specs = env_specs.specs();
  for (std::size_t i = 0; i < decls.size(); ++i) {
    const auto& d = decls[i];
    auto it = std::find_if(specs.begin(), specs.end(), [&](const ConstraintSpec& s) { return s.id == d.id; });
    if (it == specs.end()) {
      throw ConfigError(fmt::format("constraints[{}].id: environment has no constraint '{}'", i, d.id));
    }
    if (it->kind != d.kind) {
      throw ConfigError(fmt::format("constraints[{}].kind: '{}' is {} in the environment", i, d.id, to_string(it->kind)));
    }
    if (d.budget) {
      if (d.kind != ConstraintKind::CumulativeInequality) {
        throw ConfigError(fmt::format("constraints[{}].budget: only cumulative constraints take a budget", i));
      }
      it->budget = d.budget;
    }
  }
  return ConstraintSet(std::move(specs));
}

}  // namespace safeq
