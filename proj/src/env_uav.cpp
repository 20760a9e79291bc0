#include "safeq/env_uav.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace safeq {

void UavConfig::validate() const {
  if (num_uavs < 2) throw ConfigError("env.uav.num_uavs must be >= 2");
  if (subchannels < 2) throw ConfigError("env.uav.subchannels must be >= 2 (U2U and U2R use distinct subchannels)");
  if (!(bandwidth_hz > 0.0)) throw ConfigError("env.uav.bandwidth_hz must be positive");
  if (power_levels_dbm.empty()) throw ConfigError("env.uav.power_levels_dbm must not be empty");
  for (std::size_t i = 1; i < power_levels_dbm.size(); ++i) {
    if (!(power_levels_dbm[i] > power_levels_dbm[i - 1])) {
      throw ConfigError("env.uav.power_levels_dbm must be strictly increasing");
    }
  }
  if (!(d_min > 0.0)) throw ConfigError("env.uav.d_min must be positive");
  if (!(energy_min < energy_initial)) throw ConfigError("env.uav.energy_min must be below energy_initial");
  if (energy_overhead < 0.0 || !(delta_t > 0.0)) throw ConfigError("env.uav energy overhead and delta_t invalid");
  if (slow_interval < 1) throw ConfigError("env.uav.slow_interval must be >= 1");
  if (!(daa_bits > 0.0)) throw ConfigError("env.uav.daa_bits must be positive");
  if (!(arena_x > 0.0 && arena_y > 0.0)) throw ConfigError("env.uav arena must have positive extent");
  if (!(step_size > 0.0)) throw ConfigError("env.uav.step_size must be positive");
  if (knn_k < 0 || knn_k > num_uavs - 1) throw ConfigError("env.uav.knn_k must lie in [0, num_uavs - 1]");
  if (energy_cost && energy_budget < 0.0) throw ConfigError("env.uav.energy_budget must be >= 0");
}

std::array<double, 2> mobility_delta(Mobility m, double step) {
  switch (m) {
    case Mobility::Forward: return {step, 0.0};
    case Mobility::Backward: return {-step, 0.0};
    case Mobility::Left: return {0.0, step};
    case Mobility::Right: return {0.0, -step};
    case Mobility::Hover: break;
  }
  return {0.0, 0.0};
}

std::vector<int> uav_action_radices(const UavConfig& cfg) {
  const int zp = cfg.power_count();
  return {kMobilityCount, zp, cfg.subchannels, zp, cfg.subchannels - 1};
}

UavAction decode_uav_action(int a, const UavConfig& cfg) {
  const auto radices = uav_action_radices(cfg);
  const int total = std::accumulate(radices.begin(), radices.end(), 1, std::multiplies<>());
  if (a < 0 || a >= total) throw ConfigError(fmt::format("UAV action {} out of range [0, {})", a, total));
  std::array<int, 5> d{};
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = a % radices[i];
    a /= radices[i];
  }
  UavAction out;
  out.mobility = static_cast<Mobility>(d[0]);
  out.u2u_power = d[1];
  out.u2u_sub = d[2];
  out.u2r_power = d[3];
  out.u2r_sub = (d[2] + 1 + d[4]) % cfg.subchannels;
  return out;
}

int encode_uav_action(const UavAction& action, const UavConfig& cfg) {
  const int B = cfg.subchannels;
  if (action.u2u_sub == action.u2r_sub) throw ConfigError("U2U and U2R must use distinct subchannels");
  const int offset = ((action.u2r_sub - action.u2u_sub - 1) % B + B) % B;
  const std::array<int, 5> d{static_cast<int>(action.mobility), action.u2u_power, action.u2u_sub, action.u2r_power,
                             offset};
  const auto radices = uav_action_radices(cfg);
  int a = 0;
  for (std::size_t i = d.size(); i-- > 0;) {
    if (d[i] < 0 || d[i] >= radices[i]) throw ConfigError("UAV action field out of range");
    a = a * radices[i] + d[i];
  }
  return a;
}

double path_gain(double distance, const UavConfig& cfg) {
  return db_to_linear(cfg.ref_loss_db) * std::pow(std::max(distance, 1.0), -cfg.pathloss_exponent);
}

cd rician_coefficient(double k_linear, Rng& rng) {
  if (std::isinf(k_linear)) return {1.0, 0.0};
  // LoS phase taken as 0; the scattered part is circular so |f| is unaffected.
  const double los = std::sqrt(k_linear / (k_linear + 1.0));
  return cd(los, 0.0) + std::sqrt(1.0 / (k_linear + 1.0)) * complex_normal(rng, 1.0);
}

std::vector<cd> sample_channel(const std::array<double, 3>& tx, const std::array<double, 3>& rx, const UavConfig& cfg,
                               Rng& rng, int* floored) {
  const double d = std::hypot(tx[0] - rx[0], tx[1] - rx[1], tx[2] - rx[2]);
  if (d < 1.0 && floored) ++*floored;
  const double amp = std::sqrt(path_gain(d, cfg));
  const double k = db_to_linear(cfg.rician_k_db);
  std::vector<cd> h(static_cast<std::size_t>(cfg.subchannels));
  for (auto& v : h) v = amp * rician_coefficient(k, rng);
  return h;
}

// ---------------------------------------------------------------------------

UavEnv::UavEnv(UavConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  k_linear_ = db_to_linear(cfg_.rician_k_db);
  for (double p : cfg_.power_levels_dbm) power_w_.push_back(dbm_to_watts(p));
  pos_.assign(static_cast<std::size_t>(cfg_.num_uavs), {0.0, 0.0, cfg_.altitude});
  energy_.assign(static_cast<std::size_t>(cfg_.num_uavs), cfg_.energy_initial);
  info_.resize(static_cast<std::size_t>(cfg_.num_uavs));
  dist_ = MatrixXd::Zero(cfg_.num_uavs, cfg_.num_uavs);
}

int UavEnv::observation_size() const { return cfg_.subchannels + 2 * cfg_.visible_peers() + 4; }

int UavEnv::num_actions() const {
  const auto r = uav_action_radices(cfg_);
  return std::accumulate(r.begin(), r.end(), 1, std::multiplies<>());
}

ConstraintSet UavEnv::constraints() const {
  std::vector<ConstraintSpec> specs{
      {"collision", ConstraintKind::InstantInequality, std::nullopt, "(d_min - nearest peer distance) / d_min"},
      {"reliability", ConstraintKind::InstantInequality, std::nullopt, "eta_min - swarm U2U reliability"},
      {"energy", ConstraintKind::InstantInequality, std::nullopt, "(E_min - E) / E0"},
  };
  if (cfg_.energy_cost) {
    specs.push_back({"energy_spend", ConstraintKind::CumulativeInequality, cfg_.energy_budget, "per-step spend (J)"});
  }
  return ConstraintSet(std::move(specs));
}

double UavEnv::distance(const std::array<double, 3>& a, const std::array<double, 3>& b) const {
  return std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
}

bool UavEnv::inside(const std::array<double, 3>& p) const {
  return p[0] >= 0.0 && p[0] <= cfg_.arena_x && p[1] >= 0.0 && p[1] <= cfg_.arena_y;
}

std::array<double, 3> UavEnv::moved(int agent, Mobility m) const {
  auto p = pos_[static_cast<std::size_t>(agent)];
  const auto d = mobility_delta(m, cfg_.step_size);
  p[0] += d[0];
  p[1] += d[1];
  return p;
}

double UavEnv::predicted_min_distance(int agent, Mobility m) const {
  const auto p = moved(agent, m);
  double best = std::numeric_limits<double>::infinity();
  for (int j = 0; j < cfg_.num_uavs; ++j) {
    if (j != agent) best = std::min(best, distance(p, pos_[static_cast<std::size_t>(j)]));
  }
  return best;
}

double UavEnv::min_distance(int agent) const { return predicted_min_distance(agent, Mobility::Hover); }

double UavEnv::min_pairwise_distance() const {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < cfg_.num_uavs; ++i) best = std::min(best, min_distance(i));
  return best;
}

void UavEnv::set_positions(std::vector<std::array<double, 3>> p) {
  if (static_cast<int>(p.size()) != cfg_.num_uavs) throw ConfigError("one position per UAV required");
  pos_ = std::move(p);
  refresh_distances();
  sample_channels();
}

double UavEnv::step_spend(const UavAction& a) const {
  return cfg_.energy_overhead + (power_w_[a.u2u_power] + power_w_[a.u2r_power]) * cfg_.delta_t;
}

double UavEnv::max_step_spend() const { return cfg_.energy_overhead + 2.0 * power_w_.back() * cfg_.delta_t; }

void UavEnv::refresh_distances() {
  for (int i = 0; i < cfg_.num_uavs; ++i) {
    for (int j = 0; j < cfg_.num_uavs; ++j) dist_(i, j) = distance(pos_[i], pos_[j]);
  }
}

void UavEnv::sample_channels() {
  const int N = cfg_.num_uavs;
  h_uu_.assign(static_cast<std::size_t>(N), std::vector<std::vector<cd>>(static_cast<std::size_t>(N)));
  h_ur_.assign(static_cast<std::size_t>(N), {});
  int floored = 0;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      if (i != j) h_uu_[i][j] = sample_channel(pos_[i], pos_[j], cfg_, rng_, &floored);
    }
    h_ur_[i] = sample_channel(pos_[i], cfg_.base_station, cfg_, rng_, &floored);
  }
  floors_ += floored;
}

std::vector<VectorXd> UavEnv::reset(std::uint64_t seed) {
  rng_.seed(seed);
  const int N = cfg_.num_uavs;
  const double sep = 2.0 * cfg_.d_min;
  int tries = 0;
  pos_.clear();
  while (static_cast<int>(pos_.size()) < N) {
    if (++tries > 1000) {
      throw ConfigError(fmt::format("arena {}x{} m too small to place {} UAVs {} m apart", cfg_.arena_x, cfg_.arena_y,
                                    N, sep));
    }
    const std::array<double, 3> p{uniform(rng_, 0.0, cfg_.arena_x), uniform(rng_, 0.0, cfg_.arena_y), cfg_.altitude};
    bool ok = true;
    for (const auto& q : pos_) ok = ok && distance(p, q) >= sep;
    if (ok) pos_.push_back(p);
  }
  energy_.assign(static_cast<std::size_t>(N), cfg_.energy_initial);
  t_ = 0;
  refresh_distances();
  sample_channels();
  for (int n = 0; n < N; ++n) {
    info_[n] = UavStepInfo{};
    info_[n].x = pos_[n][0];
    info_[n].y = pos_[n][1];
    info_[n].energy = energy_[n];
    info_[n].min_dist = min_distance(n);
  }
  std::vector<VectorXd> obs;
  for (int n = 0; n < N; ++n) obs.push_back(observe(n));
  return obs;
}

namespace {

double log_gain(double g) { return (10.0 * std::log10(std::max(g, 1e-30)) + 85.0) / 10.0; }

}  // namespace

VectorXd UavEnv::observe(int agent) const {
  const int B = cfg_.subchannels;
  const int k = cfg_.visible_peers();
  VectorXd o(observation_size());
  int at = 0;
  for (int b = 0; b < B; ++b) o(at++) = log_gain(std::norm(h_ur_[agent][b]));

  // Peers ordered by the slow-timescale distance matrix, ties by index.
  std::vector<int> peers;
  for (int j = 0; j < cfg_.num_uavs; ++j) {
    if (j != agent) peers.push_back(j);
  }
  std::stable_sort(peers.begin(), peers.end(), [&](int a, int b) { return dist_(agent, a) < dist_(agent, b); });
  for (int i = 0; i < k; ++i) {
    double best = 0.0;
    for (const cd& h : h_uu_[agent][peers[i]]) best = std::max(best, std::norm(h));
    o(at++) = log_gain(best);
  }
  o(at++) = energy_[agent] / cfg_.energy_initial;
  o(at++) = pos_[agent][0] / cfg_.arena_x;
  o(at++) = pos_[agent][1] / cfg_.arena_y;
  const double diag = std::hypot(cfg_.arena_x, cfg_.arena_y);
  for (int i = 0; i < k; ++i) o(at++) = dist_(agent, peers[i]) / diag;
  o(at++) = is_slow_step() ? 1.0 : 0.0;
  return o;
}

ActionMask UavEnv::safe_action_mask(int agent) const {
  const auto radices = uav_action_radices(cfg_);
  std::array<bool, kMobilityCount> move_ok{};
  for (int m = 0; m < kMobilityCount; ++m) {
    const auto mob = static_cast<Mobility>(m);
    if (mob == Mobility::Hover) {
      move_ok[m] = true;
    } else if (is_slow_step()) {
      move_ok[m] = inside(moved(agent, mob)) && predicted_min_distance(agent, mob) >= cfg_.d_min;
    }
  }
  ActionMask mask(static_cast<std::size_t>(num_actions()), false);
  for (std::size_t a = 0; a < mask.size(); ++a) mask[a] = move_ok[a % kMobilityCount];
  return mask;
}

int UavEnv::fallback_action(int) const {
  UavAction a;
  a.mobility = Mobility::Hover;
  a.u2u_sub = 0;
  a.u2r_sub = 1;
  return encode_uav_action(a, cfg_);
}

UavAction UavEnv::shield(int agent, const UavAction& intended, bool* overridden) const {
  bool unsafe = energy_[agent] <= cfg_.energy_min + max_step_spend();
  if (intended.mobility != Mobility::Hover && is_slow_step()) {
    unsafe = unsafe || !inside(moved(agent, intended.mobility)) ||
             predicted_min_distance(agent, intended.mobility) < cfg_.d_min + cfg_.step_size;
  }
  if (overridden) *overridden = unsafe;
  if (!unsafe) return intended;
  UavAction safe = intended;
  safe.mobility = Mobility::Hover;
  safe.u2u_power = 0;
  safe.u2r_power = 0;
  return safe;
}

std::vector<EnvStep> UavEnv::step(std::span<const int> actions) {
  const int N = cfg_.num_uavs;
  const int B = cfg_.subchannels;
  if (static_cast<int>(actions.size()) != N) throw ConfigError("one action per UAV required");
  const bool slow = is_slow_step();

  std::vector<UavAction> intended(static_cast<std::size_t>(N));
  std::vector<UavAction> exec(static_cast<std::size_t>(N));
  std::vector<char> over(static_cast<std::size_t>(N), 0);
  for (int n = 0; n < N; ++n) {
    intended[n] = decode_uav_action(actions[n], cfg_);
    if (!slow) intended[n].mobility = Mobility::Hover;  // mobility only acts on the slow timescale
    bool o = false;
    exec[n] = cfg_.shield ? shield(n, intended[n], &o) : intended[n];
    over[n] = o;
  }

  // Receivers 0..N-1 are UAVs, N is the base station.
  auto tx_power = [&](int n, int b) {
    double p = 0.0;
    if (exec[n].u2u_sub == b) p += power_w_[exec[n].u2u_power];
    if (exec[n].u2r_sub == b) p += power_w_[exec[n].u2r_power];
    return p;
  };
  auto gain_to = [&](int tx, int rcv, int b) {
    return rcv == N ? std::norm(h_ur_[tx][b]) : std::norm(h_uu_[tx][rcv][b]);
  };
  // Co-channel power arriving at rcv on b from every UAV other than rcv and `skip`.
  auto interference_at = [&](int rcv, int b, int skip) {
    double sum = 0.0;
    for (int k = 0; k < N; ++k) {
      if (k != rcv && k != skip) sum += gain_to(k, rcv, b) * tx_power(k, b);
    }
    return sum;
  };
  const double sigma2 = cfg_.noise_watts();

  int decodable = 0;
  std::vector<double> u2r_rate(static_cast<std::size_t>(N));
  std::vector<char> ok(static_cast<std::size_t>(N), 0);
  for (int n = 0; n < N; ++n) {
    const int bu = exec[n].u2u_sub;
    const double pu = power_w_[exec[n].u2u_power];
    double worst = std::numeric_limits<double>::infinity();
    for (int m = 0; m < N; ++m) {
      if (m == n) continue;
      const double signal = gain_to(n, m, bu);
      // The receiver's own transmissions are not counted (full-duplex assumption).
      worst = std::min(worst, rate(sinr(signal, pu, interference_at(m, bu, n), sigma2), cfg_.bandwidth_hz));
    }
    ok[n] = worst * cfg_.delta_t >= cfg_.daa_bits;
    decodable += ok[n];

    const int br = exec[n].u2r_sub;
    const double pr = power_w_[exec[n].u2r_power];
    const double signal = gain_to(n, N, br);
    u2r_rate[n] = rate(sinr(signal, pr, interference_at(N, br, n), sigma2), cfg_.bandwidth_hz);
  }
  const double reliability = static_cast<double>(decodable) / N;

  std::vector<double> spend(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    spend[n] = step_spend(exec[n]);
    energy_[n] = energy_[n] - spend[n];
  }

  // Predicted costs of the intended action, reported when the shield intervened.
  std::vector<double> pred_col(static_cast<std::size_t>(N), -std::numeric_limits<double>::infinity());
  std::vector<double> pred_energy(static_cast<std::size_t>(N), -std::numeric_limits<double>::infinity());
  for (int n = 0; n < N; ++n) {
    if (!over[n]) continue;
    pred_col[n] = (cfg_.d_min - predicted_min_distance(n, intended[n].mobility)) / cfg_.d_min;
    const double e_int = energy_[n] + spend[n] - step_spend(intended[n]);
    pred_energy[n] = (cfg_.energy_min - e_int) / cfg_.energy_initial;
  }

  if (slow) {
    for (int n = 0; n < N; ++n) {
      auto p = moved(n, exec[n].mobility);
      const double cx = std::clamp(p[0], 0.0, cfg_.arena_x);
      const double cy = std::clamp(p[1], 0.0, cfg_.arena_y);
      if (cx != p[0] || cy != p[1]) ++clamps_;
      pos_[n] = {cx, cy, p[2]};
    }
    refresh_distances();
  }

  ++t_;
  sample_channels();

  std::vector<EnvStep> out(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    EnvStep& s = out[n];
    const double dmin = min_distance(n);
    const double g_col = (cfg_.d_min - dmin) / cfg_.d_min;
    const double g_rel = cfg_.eta_min - reliability;
    const double g_en = (cfg_.energy_min - energy_[n]) / cfg_.energy_initial;
    s.costs.g["collision"] = std::max(g_col, pred_col[n]);
    s.costs.g["reliability"] = g_rel;
    s.costs.g["energy"] = std::max(g_en, pred_energy[n]);
    if (cfg_.energy_cost) s.costs.c["energy_spend"] = spend[n];
    s.reward = u2r_rate[n] / 1e6;
    s.collision = dmin < cfg_.d_min;
    s.overridden = over[n];
    s.feasible = g_col <= 0.0 && g_rel <= 0.0 && g_en <= 0.0;
    s.violation = !s.feasible;
    if (energy_[n] <= 0.0) {
      s.failure = true;
      s.terminal = true;
    }
    info_[n] = UavStepInfo{pos_[n][0], pos_[n][1], energy_[n], dmin, ok[n] != 0, u2r_rate[n], over[n] != 0, exec[n]};
  }
  for (int n = 0; n < N; ++n) out[n].obs = observe(n);
  return out;
}

}  // namespace safeq
