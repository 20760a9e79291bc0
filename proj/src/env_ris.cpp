#include "safeq/env_ris.hpp"

#include <fmt/format.h>

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace safeq {

std::string to_string(Precoder p) { return p == Precoder::ZeroForcing ? "zf" : "mrt"; }

Precoder precoder_from_string(const std::string& name) {
  if (name == "mrt") return Precoder::MaximumRatio;
  if (name == "zf") return Precoder::ZeroForcing;
  throw ConfigError("unknown precoder '" + name + "' (expected mrt or zf)");
}

void RisConfig::validate() const {
  if (antennas < 1 || users < 1) throw ConfigError("env.ris needs at least one antenna and one user");
  if (elements_x < 1 || elements_z < 1) throw ConfigError("env.ris element grid must be non-empty");
  if (blocks_x < 1 || blocks_z < 1 || elements_x % blocks_x != 0 || elements_z % blocks_z != 0) {
    throw ConfigError(fmt::format("env.ris blocks {}x{} do not tile the {}x{} element grid", blocks_x, blocks_z,
                                  elements_x, elements_z));
  }
  if (codebook_size < 2) throw ConfigError("env.ris.codebook_size must be >= 2");
  if (power_levels_dbm.empty()) throw ConfigError("env.ris.power_levels_dbm must not be empty");
  for (std::size_t i = 1; i < power_levels_dbm.size(); ++i) {
    if (!(power_levels_dbm[i] > power_levels_dbm[i - 1])) {
      throw ConfigError("env.ris.power_levels_dbm must be strictly increasing");
    }
  }
  if (clusters < 1) throw ConfigError("env.ris.clusters must be >= 1");
  if (episode_length < 1) throw ConfigError("env.ris.episode_length must be >= 1");
  const double count = std::pow(static_cast<double>(power_levels_dbm.size()), users) *
                       std::pow(static_cast<double>(codebook_size), blocks());
  if (count > static_cast<double>(std::numeric_limits<int>::max())) {
    throw ConfigError(fmt::format("env.ris action space of {} actions does not fit an int index", count));
  }
}

std::vector<int> ris_action_radices(const RisConfig& cfg) {
  std::vector<int> r(static_cast<std::size_t>(cfg.users), cfg.power_count());
  r.insert(r.end(), static_cast<std::size_t>(cfg.blocks()), cfg.codebook_size);
  return r;
}

long long ris_action_count(const RisConfig& cfg) {
  long long n = 1;
  for (int r : ris_action_radices(cfg)) n *= r;
  return n;
}

RisAction decode_ris_action(long long a, const RisConfig& cfg) {
  const long long total = ris_action_count(cfg);
  if (a < 0 || a >= total) throw ConfigError(fmt::format("RIS action {} out of range [0, {})", a, total));
  RisAction out;
  for (int u = 0; u < cfg.users; ++u) {
    out.power.push_back(static_cast<int>(a % cfg.power_count()));
    a /= cfg.power_count();
  }
  for (int k = 0; k < cfg.blocks(); ++k) {
    out.phase.push_back(static_cast<int>(a % cfg.codebook_size));
    a /= cfg.codebook_size;
  }
  return out;
}

long long encode_ris_action(const RisAction& action, const RisConfig& cfg) {
  if (static_cast<int>(action.power.size()) != cfg.users || static_cast<int>(action.phase.size()) != cfg.blocks()) {
    throw ConfigError("RIS action has the wrong number of fields");
  }
  long long a = 0;
  for (int k = cfg.blocks(); k-- > 0;) {
    if (action.phase[k] < 0 || action.phase[k] >= cfg.codebook_size) throw ConfigError("phase index out of range");
    a = a * cfg.codebook_size + action.phase[k];
  }
  for (int u = cfg.users; u-- > 0;) {
    if (action.power[u] < 0 || action.power[u] >= cfg.power_count()) throw ConfigError("power index out of range");
    a = a * cfg.power_count() + action.power[u];
  }
  return a;
}

int block_of_element(int element, const RisConfig& cfg) {
  const int x = element % cfg.elements_x;
  const int z = element / cfg.elements_x;
  const int bx = x / (cfg.elements_x / cfg.blocks_x);
  const int bz = z / (cfg.elements_z / cfg.blocks_z);
  return bz * cfg.blocks_x + bx;
}

VectorXcd build_theta(const std::vector<int>& phase, const RisConfig& cfg) {
  if (static_cast<int>(phase.size()) != cfg.blocks()) throw ConfigError("one phase index per block required");
  VectorXcd theta(cfg.elements());
  for (int m = 0; m < cfg.elements(); ++m) {
    const int idx = phase[static_cast<std::size_t>(block_of_element(m, cfg))];
    if (idx < 0 || idx >= cfg.codebook_size) throw ConfigError("phase index out of range");
    theta(m) = std::polar(1.0, 2.0 * std::numbers::pi * idx / cfg.codebook_size);
  }
  return theta;
}

VectorXcd ula_steering(int n, double angle) {
  VectorXcd a(n);
  for (int i = 0; i < n; ++i) a(i) = std::polar(1.0, std::numbers::pi * i * std::sin(angle));
  return a;
}

VectorXcd upa_steering(int nx, int nz, double azimuth, double elevation) {
  VectorXcd a(nx * nz);
  for (int z = 0; z < nz; ++z) {
    for (int x = 0; x < nx; ++x) {
      const double ph = std::numbers::pi * (x * std::sin(azimuth) * std::cos(elevation) + z * std::sin(elevation));
      a(z * nx + x) = std::polar(1.0, ph);
    }
  }
  return a;
}

RisChannels sample_ris_channels(const RisConfig& cfg, Rng& rng) {
  const int Mr = cfg.elements();
  const double pi = std::numbers::pi;
  RisChannels ch;
  // G is stored RIS x EBS so that h^H Theta G is a row over the EBS antennas.
  ch.G = MatrixXcd::Zero(Mr, cfg.antennas);
  for (int l = 0; l < cfg.clusters; ++l) {
    const cd alpha = complex_normal(rng, 1.0 / cfg.clusters);
    const VectorXcd at = ula_steering(cfg.antennas, uniform(rng, -pi / 2, pi / 2));
    const VectorXcd ar = upa_steering(cfg.elements_x, cfg.elements_z, uniform(rng, -pi / 2, pi / 2),
                                      uniform(rng, -pi / 2, pi / 2));
    ch.G.noalias() += alpha * ar * at.adjoint();
  }
  const double k = db_to_linear(cfg.rician_k_db);
  const double los = std::sqrt(k / (k + 1.0));
  const double nlos = std::sqrt(1.0 / (k + 1.0));
  for (int u = 0; u < cfg.users; ++u) {
    const VectorXcd a = upa_steering(cfg.elements_x, cfg.elements_z, uniform(rng, -pi / 2, pi / 2),
                                     uniform(rng, -pi / 2, pi / 2));
    VectorXcd h(Mr);
    for (int m = 0; m < Mr; ++m) h(m) = los * a(m) + nlos * complex_normal(rng, 1.0);
    ch.h_r.push_back(std::move(h));
  }
  return ch;
}

MatrixXcd effective_channels(const RisChannels& ch, const VectorXcd& theta, const RisConfig& cfg) {
  const double scale = std::sqrt(db_to_linear(cfg.cascade_loss_db));
  MatrixXcd h_eff(cfg.antennas, cfg.users);
  for (int u = 0; u < cfg.users; ++u) {
    // row = h^H Theta G; the effective channel is its conjugate transpose.
    const Eigen::RowVectorXcd row = (ch.h_r[u].adjoint() * theta.asDiagonal()) * ch.G;
    h_eff.col(u) = scale * row.adjoint();
  }
  return h_eff;
}

Beamforming beamform(const MatrixXcd& h_eff, const std::vector<double>& powers_w, Precoder kind) {
  const Eigen::Index Mt = h_eff.rows();
  const Eigen::Index U = h_eff.cols();
  if (static_cast<Eigen::Index>(powers_w.size()) != U) throw ConfigError("one power per user required");
  Beamforming bf;
  bf.W = MatrixXcd::Zero(Mt, U);
  bf.unreachable.assign(static_cast<std::size_t>(U), false);

  MatrixXcd dirs = h_eff;
  if (kind == Precoder::ZeroForcing) {
    // Columns of H^H (H H^H)^-1 with H = h_eff^H; rank-deficient sets fall back to unreachable.
    if (U > Mt) {
      bf.unreachable.assign(static_cast<std::size_t>(U), true);
      return bf;
    }
    const MatrixXcd gram = h_eff.adjoint() * h_eff;
    Eigen::FullPivLU<MatrixXcd> lu(gram);
    if (!lu.isInvertible()) {
      bf.unreachable.assign(static_cast<std::size_t>(U), true);
      return bf;
    }
    dirs = h_eff * lu.inverse();
  }
  for (Eigen::Index u = 0; u < U; ++u) {
    const double norm = dirs.col(u).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      bf.unreachable[u] = true;
      continue;
    }
    bf.W.col(u) = (std::sqrt(powers_w[u]) / norm) * dirs.col(u);
  }
  return bf;
}

double sinr_user(const MatrixXcd& h_eff, const MatrixXcd& W, int u, double sigma2) {
  Eigen::RowVectorXd gains = (h_eff.col(u).adjoint() * W).cwiseAbs2();
  const double signal = gains(u);
  gains(u) = 0.0;
  return signal / (gains.sum() + sigma2);
}

double sinr_user_reference(const MatrixXcd& h_eff, const MatrixXcd& W, int u, double sigma2) {
  double signal = 0.0;
  double interference = 0.0;
  for (Eigen::Index k = 0; k < W.cols(); ++k) {
    cd acc(0.0, 0.0);
    for (Eigen::Index i = 0; i < h_eff.rows(); ++i) acc += std::conj(h_eff(i, u)) * W(i, k);
    if (k == u) {
      signal = std::norm(acc);
    } else {
      interference += std::norm(acc);
    }
  }
  return signal / (interference + sigma2);
}

// ---------------------------------------------------------------------------

RisEnv::RisEnv(RisConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (double p : cfg_.power_levels_dbm) power_w_.push_back(dbm_to_watts(p));
}

int RisEnv::observation_size() const { return 2 * cfg_.users * cfg_.blocks() * cfg_.antennas; }

ConstraintSet RisEnv::constraints() const {
  std::vector<ConstraintSpec> specs;
  for (int u = 0; u < cfg_.users; ++u) {
    specs.push_back({"sinr_" + std::to_string(u), ConstraintKind::InstantInequality, std::nullopt,
                     "Gamma - SINR (linear)"});
  }
  specs.push_back({"unit_modulus", ConstraintKind::InstantEquality, std::nullopt, "|theta_m| - 1"});
  return ConstraintSet(std::move(specs));
}

int RisEnv::fallback_action(int) const {
  RisAction a;
  a.power.assign(static_cast<std::size_t>(cfg_.users), cfg_.power_count() - 1);
  a.phase.assign(static_cast<std::size_t>(cfg_.blocks()), 0);
  return static_cast<int>(encode_ris_action(a, cfg_));
}

void RisEnv::set_channels(RisChannels ch) {
  ch_ = std::move(ch);
  have_channels_ = true;
}

std::vector<VectorXd> RisEnv::reset(std::uint64_t seed) {
  rng_.seed(seed);
  if (!(cfg_.freeze_channels && have_channels_)) {
    ch_ = sample_ris_channels(cfg_, rng_);
    have_channels_ = true;
  }
  t_ = 0;
  return {observe()};
}

VectorXd RisEnv::observe() const {
  // Per user and block: sum over the block's elements of conj(h_m) G[m, :],
  // so that h^H Theta G = sum_k theta_k * feature_k. Scaled to unit entry variance.
  const int Mt = cfg_.antennas;
  const double norm = 1.0 / std::sqrt(static_cast<double>(cfg_.elements()) / cfg_.blocks());
  VectorXd o = VectorXd::Zero(observation_size());
  for (int u = 0; u < cfg_.users; ++u) {
    for (int m = 0; m < cfg_.elements(); ++m) {
      const int k = block_of_element(m, cfg_);
      const int base = 2 * ((u * cfg_.blocks() + k) * Mt);
      for (int i = 0; i < Mt; ++i) {
        const cd v = std::conj(ch_.h_r[u](m)) * ch_.G(m, i) * norm;
        o(base + 2 * i) += v.real();
        o(base + 2 * i + 1) += v.imag();
      }
    }
  }
  return o;
}

RisOutcome RisEnv::evaluate(long long action) const {
  const RisAction a = decode_ris_action(action, cfg_);
  const VectorXcd theta = build_theta(a.phase, cfg_);
  std::vector<double> p;
  for (int idx : a.power) p.push_back(power_w_[idx]);
  const MatrixXcd h_eff = effective_channels(ch_, theta, cfg_);
  const Beamforming bf = beamform(h_eff, p, cfg_.precoder);

  RisOutcome out;
  out.feasible = true;
  double min_sinr = std::numeric_limits<double>::infinity();
  for (int u = 0; u < cfg_.users; ++u) {
    const double s = sinr_user(h_eff, bf.W, u, cfg_.noise_watts());
    out.sinr.push_back(s);
    out.feasible = out.feasible && s >= cfg_.threshold_linear();
    min_sinr = std::min(min_sinr, s);
    out.power_w += bf.W.col(u).squaredNorm();
  }
  out.min_sinr_db = linear_to_db(std::max(min_sinr, 1e-300));
  for (Eigen::Index m = 0; m < theta.size(); ++m) {
    out.unit_modulus_deviation = std::max(out.unit_modulus_deviation, std::abs(std::abs(theta(m)) - 1.0));
  }
  return out;
}

std::vector<EnvStep> RisEnv::step(std::span<const int> actions) {
  if (actions.size() != 1) throw ConfigError("RIS environment takes exactly one action");
  const RisAction decoded = decode_ris_action(actions[0], cfg_);
  last_ = evaluate(actions[0]);

  EnvStep s;
  // Reward charges the nominal powers; they equal sum ||w_u||^2 unless a user is unreachable.
  double nominal = 0.0;
  for (int idx : decoded.power) nominal += power_w_[idx];
  s.reward = -nominal;
  for (int u = 0; u < cfg_.users; ++u) s.costs.g["sinr_" + std::to_string(u)] = cfg_.threshold_linear() - last_.sinr[u];
  // Theta is unit-modulus by construction; the measured deviation is kept in last_outcome().
  s.costs.e["unit_modulus"] = 0.0;
  s.feasible = last_.feasible;
  s.violation = !last_.feasible;
  ++t_;
  s.terminal = t_ >= cfg_.episode_length;
  s.obs = observe();
  return {s};
}

}  // namespace safeq
