#pragma once

// Multi-UAV swarm: planar mobility on a slow timescale, U2U broadcast and U2R
// unicast on B subchannels every fast step, Rician block fading, energy
// bookkeeping and an execution-layer shield.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "safeq/env.hpp"
#include "safeq/types.hpp"

namespace safeq {

struct UavConfig {
  int num_uavs = 5;
  int subchannels = 5;
  double bandwidth_hz = 1e6;
  double noise_dbm = -104.0;
  std::vector<double> power_levels_dbm{5.0, 10.0, 15.0, 23.0};
  double d_min = 30.0;
  double energy_initial = 0.08;  // J
  double energy_min = 0.035;     // J
  double energy_overhead = 1e-4;  // J per fast step
  double delta_t = 1e-3;          // s
  int slow_interval = 20;
  double daa_bits = 2000.0;
  double eta_min = 1.0;
  double arena_x = 200.0;
  double arena_y = 200.0;
  double altitude = 100.0;
  std::array<double, 3> base_station{100.0, 100.0, 0.0};
  double rician_k_db = 10.0;  // +inf gives pure line of sight
  double pathloss_exponent = 2.2;
  double ref_loss_db = -40.0;
  double step_size = 1.0;  // m per mobility primitive
  int knn_k = 0;           // 0 = all peers
  bool shield = true;
  bool energy_cost = false;  // emit the per-step spend as cumulative cost "energy_spend"
  double energy_budget = 0.0;

  void validate() const;
  double noise_watts() const { return dbm_to_watts(noise_dbm); }
  int power_count() const { return static_cast<int>(power_levels_dbm.size()); }
  int visible_peers() const { return knn_k == 0 ? num_uavs - 1 : knn_k; }
};

enum class Mobility { Forward = 0, Backward = 1, Left = 2, Right = 3, Hover = 4 };
inline constexpr int kMobilityCount = 5;

/// Planar displacement of one primitive: Forward +x, Backward -x, Left +y, Right -y.
std::array<double, 2> mobility_delta(Mobility m, double step);

struct UavAction {
  Mobility mobility = Mobility::Hover;
  int u2u_power = 0;
  int u2u_sub = 0;
  int u2r_power = 0;
  int u2r_sub = 1;
};

/// Mixed-radix encoding, least significant first: mobility, U2U power, U2U
/// subchannel, U2R power, U2R subchannel offset (u2r = (u2u + 1 + offset) mod B).
std::vector<int> uav_action_radices(const UavConfig& cfg);
UavAction decode_uav_action(int a, const UavConfig& cfg);
int encode_uav_action(const UavAction& action, const UavConfig& cfg);

/// Path-loss amplitude squared: ref_loss * max(d, 1)^-exponent.
double path_gain(double distance, const UavConfig& cfg);
/// Small-scale Rician coefficient with E|f|^2 = 1; K linear, may be +inf.
cd rician_coefficient(double k_linear, Rng& rng);
/// One complex gain per subchannel between two positions. Counts coincident
/// positions (distance floored at 1 m) into *floored when given.
std::vector<cd> sample_channel(const std::array<double, 3>& tx, const std::array<double, 3>& rx, const UavConfig& cfg,
                               Rng& rng, int* floored = nullptr);

inline double sinr(double gain, double power, double interference, double sigma2) {
  return gain * power / (sigma2 + interference);
}
inline double rate(double sinr_value, double bandwidth) { return bandwidth * std::log2(1.0 + sinr_value); }

/// Per-agent diagnostics of the last executed step.
struct UavStepInfo {
  double x = 0.0;
  double y = 0.0;
  double energy = 0.0;
  double min_dist = 0.0;
  bool u2u_ok = false;
  double u2r_rate = 0.0;  // bit/s
  bool overridden = false;
  UavAction executed;
};

class UavEnv final : public Environment {
 public:
  explicit UavEnv(UavConfig cfg);

  int num_agents() const override { return cfg_.num_uavs; }
  int observation_size() const override;
  int num_actions() const override;
  std::vector<int> action_radices() const override { return uav_action_radices(cfg_); }
  ConstraintSet constraints() const override;

  std::vector<VectorXd> reset(std::uint64_t seed) override;
  ActionMask safe_action_mask(int agent) const override;
  int fallback_action(int agent) const override;
  std::vector<EnvStep> step(std::span<const int> actions) override;

  void set_shield_enabled(bool on) override { cfg_.shield = on; }
  bool shield_enabled() const override { return cfg_.shield; }
  std::string name() const override { return "uav"; }

  /// Shield rule applied to one agent against the current state.
  UavAction shield(int agent, const UavAction& intended, bool* overridden) const;

  const UavConfig& config() const { return cfg_; }
  const std::vector<std::array<double, 3>>& positions() const { return pos_; }
  void set_positions(std::vector<std::array<double, 3>> p);
  const std::vector<double>& energies() const { return energy_; }
  void set_energy(int agent, double e) { energy_.at(static_cast<std::size_t>(agent)) = e; }
  int time_step() const { return t_; }
  bool is_slow_step() const { return t_ % cfg_.slow_interval == 0; }
  double min_distance(int agent) const;
  double min_pairwise_distance() const;
  const std::vector<UavStepInfo>& last_info() const { return info_; }
  long long clamp_events() const { return clamps_; }
  long long distance_floor_events() const { return floors_; }

  /// Worst-case one-step energy spend (max power on both links plus overhead).
  double max_step_spend() const;
  double step_spend(const UavAction& a) const;

  // Channel state of the current fast step: [tx][rx][b] between UAVs, [tx][b] to the base station.
  const std::vector<std::vector<std::vector<cd>>>& u2u_channels() const { return h_uu_; }
  const std::vector<std::vector<cd>>& u2r_channels() const { return h_ur_; }

 private:
  void sample_channels();
  void refresh_distances();
  VectorXd observe(int agent) const;
  double distance(const std::array<double, 3>& a, const std::array<double, 3>& b) const;
  std::array<double, 3> moved(int agent, Mobility m) const;
  bool inside(const std::array<double, 3>& p) const;
  double predicted_min_distance(int agent, Mobility m) const;

  UavConfig cfg_;
  double k_linear_ = 0.0;
  std::vector<double> power_w_;
  Rng rng_;
  std::vector<std::array<double, 3>> pos_;
  std::vector<double> energy_;
  MatrixXd dist_;  // pairwise distances as of the last slow step
  std::vector<std::vector<std::vector<cd>>> h_uu_;
  std::vector<std::vector<cd>> h_ur_;
  std::vector<UavStepInfo> info_;
  int t_ = 0;
  long long clamps_ = 0;
  long long floors_ = 0;
};

}  // namespace safeq
