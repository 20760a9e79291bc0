#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "safeq/env_ris.hpp"

using namespace safeq;

namespace {

RisConfig small_ris() {
  RisConfig c;
  c.antennas = 4;
  c.elements_x = 4;
  c.elements_z = 4;
  c.blocks_x = 2;
  c.blocks_z = 2;
  c.users = 2;
  c.power_levels_dbm = {0.0, 7.0, 14.0, 21.0};
  return c;
}

MatrixXcd random_channels(int mt, int users, Rng& rng) {
  MatrixXcd h(mt, users);
  for (int i = 0; i < mt; ++i) {
    for (int u = 0; u < users; ++u) h(i, u) = complex_normal(rng, 1.0);
  }
  return h;
}

}  // namespace

TEST_CASE("action decode and encode") {
  const auto cfg = small_ris();
  const long long n = ris_action_count(cfg);
  CHECK(n == 4 * 4 * 8 * 8 * 8 * 8);
  const auto zero = decode_ris_action(0, cfg);
  CHECK(zero.power == std::vector<int>{0, 0});
  CHECK(zero.phase == std::vector<int>{0, 0, 0, 0});
  const auto top = decode_ris_action(n - 1, cfg);
  CHECK(top.power == std::vector<int>{3, 3});
  CHECK(top.phase == std::vector<int>{7, 7, 7, 7});
  // Least significant digit is user 0's power.
  CHECK(decode_ris_action(1, cfg).power == std::vector<int>{1, 0});
  CHECK(decode_ris_action(16, cfg).phase == std::vector<int>{1, 0, 0, 0});
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto a = static_cast<long long>(uniform_index(rng, static_cast<std::size_t>(n)));
    REQUIRE(encode_ris_action(decode_ris_action(a, cfg), cfg) == a);
  }
  CHECK_THROWS_AS(decode_ris_action(n, cfg), ConfigError);
  CHECK_THROWS_AS(decode_ris_action(-1, cfg), ConfigError);
}

TEST_CASE("theta construction") {
  const auto cfg = small_ris();
  const VectorXcd ones = build_theta({0, 0, 0, 0}, cfg);
  for (Eigen::Index m = 0; m < ones.size(); ++m) CHECK(ones(m) == cd(1.0, 0.0));
  const VectorXcd half = build_theta({4, 4, 4, 4}, cfg);
  for (Eigen::Index m = 0; m < half.size(); ++m) {
    CHECK(half(m).real() == -1.0);
    CHECK(std::abs(half(m).imag()) < 1e-15);
  }
  // Elements of a block share a phase; 4x4 grid split into 2x2 blocks.
  const VectorXcd mixed = build_theta({0, 2, 4, 6}, cfg);
  CHECK(block_of_element(0, cfg) == 0);
  CHECK(block_of_element(3, cfg) == 1);
  CHECK(block_of_element(8, cfg) == 2);
  CHECK(block_of_element(15, cfg) == 3);
  for (int m = 0; m < cfg.elements(); ++m) {
    for (int n = 0; n < cfg.elements(); ++n) {
      if (block_of_element(m, cfg) == block_of_element(n, cfg)) REQUIRE(mixed(m) == mixed(n));
    }
  }
  CHECK(std::abs(mixed(3) - cd(0.0, 1.0)) < 1e-15);
  CHECK(mixed(5) == mixed(0));
  CHECK(mixed(6) == mixed(3));
}

TEST_CASE("unit modulus over random actions") {
  RisConfig cfg;
  RisEnv env(cfg);
  env.reset(1);
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const auto a = decode_ris_action(static_cast<long long>(uniform_index(rng, env.num_actions())), cfg);
    const VectorXcd theta = build_theta(a.phase, cfg);
    REQUIRE(((theta.cwiseAbs().array() - 1.0).abs() <= 1e-12).all());
  }
  const auto out = env.step(std::vector<int>{17});
  CHECK(out[0].costs.e.at("unit_modulus") == 0.0);
  CHECK(env.last_outcome().unit_modulus_deviation <= 1e-12);
}

TEST_CASE("beamforming power normalization") {
  Rng rng(4);
  for (const auto kind : {Precoder::MaximumRatio, Precoder::ZeroForcing}) {
    for (int trial = 0; trial < 50; ++trial) {
      const MatrixXcd h = random_channels(4, 3, rng);
      const std::vector<double> p{uniform(rng, 0.0, 2.0), 0.0, uniform(rng, 0.0, 2.0)};
      const auto bf = beamform(h, p, kind);
      for (int u = 0; u < 3; ++u) {
        REQUIRE_FALSE(bf.unreachable[u]);
        REQUIRE(std::abs(bf.W.col(u).squaredNorm() - p[u]) <= 1e-12 * std::max(1.0, p[u]));
      }
      CHECK(bf.W.col(1).isZero());
    }
  }
  MatrixXcd h = random_channels(4, 2, rng);
  h.col(1).setZero();
  const auto bf = beamform(h, {1.0, 1.0}, Precoder::MaximumRatio);
  CHECK(bf.unreachable[1]);
  CHECK(bf.W.col(1).isZero());
  CHECK_FALSE(bf.unreachable[0]);

  // ZF nulls inter-user leakage.
  const MatrixXcd hz = random_channels(4, 3, rng);
  const auto zf = beamform(hz, {1.0, 1.0, 1.0}, Precoder::ZeroForcing);
  const MatrixXcd leak = hz.adjoint() * zf.W;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i != j) CHECK(std::abs(leak(i, j)) < 1e-10);
    }
  }
  CHECK(beamform(random_channels(2, 3, rng), {1.0, 1.0, 1.0}, Precoder::ZeroForcing).unreachable[0]);
}

TEST_CASE("sinr closed forms and reference path") {
  Rng rng(5);
  const double sigma2 = 0.3;
  // Single user, no interference.
  const MatrixXcd h1 = random_channels(4, 1, rng);
  const auto bf1 = beamform(h1, {2.0}, Precoder::MaximumRatio);
  CHECK(sinr_user(h1, bf1.W, 0, sigma2) == doctest::Approx(2.0 * h1.col(0).squaredNorm() / sigma2).epsilon(1e-12));

  // Interferers at zero power reduce to the single-user form.
  const MatrixXcd h = random_channels(4, 3, rng);
  const auto quiet = beamform(h, {1.5, 0.0, 0.0}, Precoder::MaximumRatio);
  CHECK(sinr_user(h, quiet.W, 0, sigma2) ==
        doctest::Approx(std::norm(h.col(0).dot(quiet.W.col(0))) / sigma2).epsilon(1e-12));

  for (int trial = 0; trial < 200; ++trial) {
    const MatrixXcd hh = random_channels(4, 3, rng);
    const auto bf = beamform(hh, {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)},
                             Precoder::MaximumRatio);
    for (int u = 0; u < 3; ++u) {
      const double a = sinr_user(hh, bf.W, u, sigma2);
      const double b = sinr_user_reference(hh, bf.W, u, sigma2);
      REQUIRE(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)));
    }
  }

  // Homogeneity: a common scale cancels only without noise.
  const auto bf = beamform(h, {1.0, 0.5, 0.25}, Precoder::MaximumRatio);
  const MatrixXcd scaled = cd(0.0, 3.0) * bf.W;
  CHECK(sinr_user(h, scaled, 1, 0.0) == doctest::Approx(sinr_user(h, bf.W, 1, 0.0)).epsilon(1e-12));
  CHECK(sinr_user(h, scaled, 1, sigma2) > sinr_user(h, bf.W, 1, sigma2));
}

TEST_CASE("sinr monotone in own power") {
  Rng rng(6);
  for (const auto kind : {Precoder::MaximumRatio, Precoder::ZeroForcing}) {
    for (int trial = 0; trial < 100; ++trial) {
      const MatrixXcd h = random_channels(4, 3, rng);
      std::vector<double> p{0.5, 0.5, 0.5};
      const auto lo = beamform(h, p, kind);
      p[0] = 1.0;
      const auto hi = beamform(h, p, kind);
      REQUIRE(sinr_user(h, hi.W, 0, 0.1) > sinr_user(h, lo.W, 0, 0.1));
      for (int u = 1; u < 3; ++u) REQUIRE(sinr_user(h, hi.W, u, 0.1) <= sinr_user(h, lo.W, u, 0.1) * (1 + 1e-12));
    }
  }
}

TEST_CASE("channel normalization") {
  RisConfig cfg;
  cfg.users = 1;
  cfg.antennas = 1;
  cfg.clusters = 1;
  Rng rng(7);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += sample_ris_channels(cfg, rng).h_r[0].squaredNorm();
  const double mr = cfg.elements();
  CHECK(sum / n >= 0.98 * mr);
  CHECK(sum / n <= 1.02 * mr);
}

TEST_CASE("observation features recompose the cascaded channel") {
  const auto cfg = small_ris();
  RisEnv env(cfg);
  const VectorXd obs = env.reset(8)[0];
  CHECK(obs.size() == env.observation_size());
  const std::vector<int> phase{1, 3, 5, 7};
  const VectorXcd theta = build_theta(phase, cfg);
  const MatrixXcd h_eff = effective_channels(env.channels(), theta, cfg);
  const double norm = 1.0 / std::sqrt(static_cast<double>(cfg.elements()) / cfg.blocks());
  const double scale = std::sqrt(db_to_linear(cfg.cascade_loss_db));
  for (int u = 0; u < cfg.users; ++u) {
    for (int i = 0; i < cfg.antennas; ++i) {
      cd acc(0.0, 0.0);
      for (int k = 0; k < cfg.blocks(); ++k) {
        const int base = 2 * ((u * cfg.blocks() + k) * cfg.antennas + i);
        acc += std::polar(1.0, 2.0 * std::numbers::pi * phase[k] / cfg.codebook_size) * cd(obs(base), obs(base + 1));
      }
      CHECK(std::abs(acc / norm - std::conj(h_eff(i, u)) / scale) < 1e-9);
    }
  }
}

TEST_CASE("step examples") {
  RisConfig cfg = small_ris();
  cfg.users = 1;
  cfg.cascade_loss_db = 0.0;  // strong channel
  RisEnv env(cfg);
  env.reset(9);
  RisAction a;
  a.power = {3};
  a.phase = {0, 0, 0, 0};
  auto out = env.step(std::vector<int>{static_cast<int>(encode_ris_action(a, cfg))});
  CHECK(out[0].feasible);
  CHECK(out[0].reward == -dbm_to_watts(21.0));
  CHECK(out[0].terminal);
  CHECK(env.last_outcome().power_w == doctest::Approx(dbm_to_watts(21.0)).epsilon(1e-12));
  CHECK(env.fallback_action(0) == encode_ris_action(a, cfg));

  RisConfig silent = small_ris();
  silent.power_levels_dbm = {-INFINITY, 10.0};
  RisEnv env0(silent);
  env0.reset(9);
  out = env0.step(std::vector<int>{0});
  for (int u = 0; u < silent.users; ++u) CHECK(out[0].costs.g.at("sinr_" + std::to_string(u)) == silent.threshold_linear());
  CHECK_FALSE(out[0].feasible);
  CHECK(out[0].violation);

  const auto mask = env.safe_action_mask(0);
  CHECK(std::all_of(mask.begin(), mask.end(), [](bool b) { return b; }));
}

TEST_CASE("frozen channels and multi-step episodes") {
  RisConfig cfg = small_ris();
  cfg.freeze_channels = true;
  cfg.episode_length = 3;
  RisEnv env(cfg);
  env.reset(1);
  const MatrixXcd g = env.channels().G;
  env.reset(2);
  CHECK(env.channels().G == g);
  CHECK_FALSE(env.step(std::vector<int>{0})[0].terminal);
  CHECK_FALSE(env.step(std::vector<int>{0})[0].terminal);
  CHECK(env.step(std::vector<int>{0})[0].terminal);

  RisConfig live = small_ris();
  RisEnv env2(live);
  env2.reset(1);
  const MatrixXcd g1 = env2.channels().G;
  env2.reset(2);
  CHECK_FALSE(env2.channels().G == g1);

  RisConfig bad = small_ris();
  bad.blocks_x = 3;
  CHECK_THROWS_AS(RisEnv{bad}, ConfigError);
}
