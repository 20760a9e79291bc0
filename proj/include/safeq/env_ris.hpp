#pragma once

// RIS-assisted downlink: blocked direct links, cascaded EBS -> RIS -> user
// channels, block-wise codebook phases and per-user linear precoding at
// discrete powers. Reward is the negative total transmit power.

#include <cstdint>
#include <string>
#include <vector>

#include "safeq/env.hpp"
#include "safeq/types.hpp"

namespace safeq {

enum class Precoder { MaximumRatio, ZeroForcing };

std::string to_string(Precoder p);
Precoder precoder_from_string(const std::string& name);

struct RisConfig {
  int antennas = 8;     // M_t
  int elements_x = 8;   // M_r = elements_x * elements_z
  int elements_z = 8;
  int blocks_x = 2;
  int blocks_z = 2;
  int users = 4;        // M_u
  int codebook_size = 8;
  std::vector<double> power_levels_dbm{0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0};
  double sinr_threshold_db = 10.0;  // Gamma
  double noise_dbm = -94.0;
  double cascade_loss_db = -100.0;  // large-scale gain of the EBS -> RIS -> user path
  double rician_k_db = 10.0;
  int clusters = 5;
  Precoder precoder = Precoder::MaximumRatio;
  int episode_length = 1;       // steps per channel draw
  bool freeze_channels = false;  // keep the first draw for the whole run

  void validate() const;
  int elements() const { return elements_x * elements_z; }
  int blocks() const { return blocks_x * blocks_z; }
  int power_count() const { return static_cast<int>(power_levels_dbm.size()); }
  double threshold_linear() const { return db_to_linear(sinr_threshold_db); }
  double noise_watts() const { return dbm_to_watts(noise_dbm); }
};

struct RisAction {
  std::vector<int> power;  // per user
  std::vector<int> phase;  // per block, row-major
};

/// Mixed-radix layout, least significant first: one power digit per user,
/// then one phase digit per block.
std::vector<int> ris_action_radices(const RisConfig& cfg);
long long ris_action_count(const RisConfig& cfg);
RisAction decode_ris_action(long long a, const RisConfig& cfg);
long long encode_ris_action(const RisAction& action, const RisConfig& cfg);

/// Block index of element (x, z) on the row-major element grid.
int block_of_element(int element, const RisConfig& cfg);
/// Diagonal of Theta: element m carries exp(j 2 pi phase[block(m)] / codebook_size).
VectorXcd build_theta(const std::vector<int>& phase, const RisConfig& cfg);

struct RisChannels {
  MatrixXcd G;                 // M_r x M_t, EBS -> RIS (rows are RIS elements)
  std::vector<VectorXcd> h_r;  // per user, M_r, RIS -> user
};

/// Steering vector of a uniform linear array with half-wavelength spacing.
VectorXcd ula_steering(int n, double angle);
/// Steering vector of the row-major elements_x x elements_z planar array.
VectorXcd upa_steering(int nx, int nz, double azimuth, double elevation);

RisChannels sample_ris_channels(const RisConfig& cfg, Rng& rng);

/// Effective channel h_eff,u = (h_r,u^H Theta G)^H scaled by the cascade gain.
MatrixXcd effective_channels(const RisChannels& ch, const VectorXcd& theta, const RisConfig& cfg);

struct Beamforming {
  MatrixXcd W;  // M_t x M_u, column u is w_u
  std::vector<bool> unreachable;
};

/// Per-user precoders with ||w_u||^2 = p_u exactly (zero for unreachable users).
Beamforming beamform(const MatrixXcd& h_eff, const std::vector<double>& powers_w, Precoder kind);

/// |h_u^H w_u|^2 / (sum_{k != u} |h_u^H w_k|^2 + sigma2), columns of h_eff being h_u.
double sinr_user(const MatrixXcd& h_eff, const MatrixXcd& W, int u, double sigma2);
/// Same quantity evaluated by explicit scalar loops.
double sinr_user_reference(const MatrixXcd& h_eff, const MatrixXcd& W, int u, double sigma2);

struct RisOutcome {
  std::vector<double> sinr;
  double power_w = 0.0;
  bool feasible = false;
  double min_sinr_db = 0.0;
  double unit_modulus_deviation = 0.0;  // max ||theta_m| - 1|
};

class RisEnv final : public Environment {
 public:
  explicit RisEnv(RisConfig cfg);

  int num_agents() const override { return 1; }
  int observation_size() const override;
  int num_actions() const override { return static_cast<int>(ris_action_count(cfg_)); }
  std::vector<int> action_radices() const override { return ris_action_radices(cfg_); }
  ConstraintSet constraints() const override;

  std::vector<VectorXd> reset(std::uint64_t seed) override;
  ActionMask safe_action_mask(int) const override { return ActionMask(static_cast<std::size_t>(num_actions()), true); }
  int fallback_action(int) const override;
  std::vector<EnvStep> step(std::span<const int> actions) override;
  std::string name() const override { return "ris"; }

  /// Outcome of an action on the current channels without advancing the episode.
  RisOutcome evaluate(long long action) const;
  const RisChannels& channels() const { return ch_; }
  void set_channels(RisChannels ch);
  const RisConfig& config() const { return cfg_; }
  const RisOutcome& last_outcome() const { return last_; }

 private:
  VectorXd observe() const;

  RisConfig cfg_;
  std::vector<double> power_w_;
  Rng rng_;
  RisChannels ch_;
  bool have_channels_ = false;
  int t_ = 0;
  RisOutcome last_;
};

}  // namespace safeq
