#include <doctest.h>

#include <cmath>
#include <set>

#include "safeq/env_uav.hpp"

using namespace safeq;

namespace {

UavConfig two_uavs() {
  UavConfig c;
  c.num_uavs = 2;
  c.subchannels = 3;
  c.arena_x = 1000.0;
  c.arena_y = 1000.0;
  return c;
}

int hover_action(const UavConfig& cfg, int u2u_sub, int u2r_sub, int pu = 0, int pr = 0) {
  UavAction a;
  a.u2u_sub = u2u_sub;
  a.u2r_sub = u2r_sub;
  a.u2u_power = pu;
  a.u2r_power = pr;
  return encode_uav_action(a, cfg);
}

}  // namespace

TEST_CASE("action encoding round trip and exclusivity") {
  UavConfig cfg;
  UavEnv env(cfg);
  CHECK(env.num_actions() == 5 * 4 * 5 * 4 * 4);
  std::set<int> seen;
  for (int a = 0; a < env.num_actions(); ++a) {
    const auto act = decode_uav_action(a, cfg);
    REQUIRE(act.u2u_sub != act.u2r_sub);
    REQUIRE(encode_uav_action(act, cfg) == a);
    seen.insert(a);
  }
  CHECK(static_cast<int>(seen.size()) == env.num_actions());
  CHECK_THROWS_AS(decode_uav_action(env.num_actions(), cfg), ConfigError);
  UavAction clash;
  clash.u2u_sub = clash.u2r_sub = 2;
  CHECK_THROWS_AS(encode_uav_action(clash, cfg), ConfigError);
}

TEST_CASE("mobility primitives") {
  CHECK(mobility_delta(Mobility::Forward, 1.0) == std::array<double, 2>{1.0, 0.0});
  CHECK(mobility_delta(Mobility::Backward, 1.0) == std::array<double, 2>{-1.0, 0.0});
  CHECK(mobility_delta(Mobility::Left, 1.0) == std::array<double, 2>{0.0, 1.0});
  CHECK(mobility_delta(Mobility::Right, 1.0) == std::array<double, 2>{0.0, -1.0});
  CHECK(mobility_delta(Mobility::Hover, 1.0) == std::array<double, 2>{0.0, 0.0});

  // Forward from (0,0,h) lands on (1,0,h).
  auto cfg = two_uavs();
  cfg.shield = false;
  UavEnv env(cfg);
  env.reset(1);
  env.set_positions({{0.0, 0.0, 100.0}, {500.0, 500.0, 100.0}});
  UavAction fwd;
  fwd.mobility = Mobility::Forward;
  const std::vector<int> acts{encode_uav_action(fwd, cfg), hover_action(cfg, 0, 1)};
  env.step(acts);
  CHECK(env.positions()[0] == std::array<double, 3>{1.0, 0.0, 100.0});
  CHECK(env.positions()[1] == std::array<double, 3>{500.0, 500.0, 100.0});
}

TEST_CASE("path loss and Rician normalization") {
  UavConfig cfg;
  cfg.pathloss_exponent = 2.0;
  CHECK(path_gain(10.0, cfg) / path_gain(20.0, cfg) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(path_gain(0.2, cfg) == path_gain(1.0, cfg));

  Rng rng(7);
  for (int i = 0; i < 100; ++i) CHECK(std::abs(rician_coefficient(INFINITY, rng)) == 1.0);
  for (double k_db : {-10.0, 0.0, 10.0}) {
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += std::norm(rician_coefficient(db_to_linear(k_db), rng));
    CHECK(sum / n >= 0.98);
    CHECK(sum / n <= 1.02);
  }
  int floored = 0;
  const auto h = sample_channel({5.0, 5.0, 100.0}, {5.0, 5.0, 100.0}, cfg, rng, &floored);
  CHECK(floored == 1);
  CHECK(h.size() == static_cast<std::size_t>(cfg.subchannels));
}

TEST_CASE("sinr and rate examples") {
  CHECK(sinr(1.0, 1.0, 0.0, 1.0) == 1.0);
  CHECK(sinr(1.0, 0.0, 0.0, 1.0) == 0.0);
  CHECK(sinr(1.0, 1.0, 1.0, 1.0) == 0.5);
  CHECK(rate(1.0, 1.0) == 1.0);
  CHECK(rate(0.0, 1.0) == 0.0);
  CHECK(rate(3.0, 1e6) == 2e6);
}

TEST_CASE("reset spacing, determinism and packing error") {
  UavConfig cfg;
  UavEnv env(cfg);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    env.reset(seed);
    CHECK(env.min_pairwise_distance() >= 2.0 * cfg.d_min);
    for (int n = 0; n < cfg.num_uavs; ++n) CHECK(env.energies()[n] == cfg.energy_initial);
  }
  UavEnv a(cfg), b(cfg);
  const auto oa = a.reset(42);
  const auto ob = b.reset(42);
  CHECK(a.positions() == b.positions());
  for (std::size_t i = 0; i < oa.size(); ++i) CHECK(oa[i] == ob[i]);

  UavConfig tight = cfg;
  tight.arena_x = tight.arena_y = 50.0;
  UavEnv small(tight);
  CHECK_THROWS_AS(small.reset(1), ConfigError);
}

TEST_CASE("interference uses co-channel transmissions only") {
  auto cfg = two_uavs();
  cfg.shield = false;
  UavEnv env(cfg);
  env.reset(3);
  env.set_positions({{100.0, 100.0, 100.0}, {300.0, 100.0, 100.0}});
  const double sigma2 = cfg.noise_watts();
  const double p = dbm_to_watts(cfg.power_levels_dbm[0]);

  // Distinct U2R subchannels: no co-channel peer at the base station, I = 0.
  {
    const auto h = env.u2r_channels();
    const std::vector<int> acts{hover_action(cfg, 0, 1), hover_action(cfg, 0, 2)};
    env.step(acts);
    CHECK(env.last_info()[0].u2r_rate == rate(sinr(std::norm(h[0][1]), p, 0.0, sigma2), cfg.bandwidth_hz));
    CHECK(env.last_info()[1].u2r_rate == rate(sinr(std::norm(h[1][2]), p, 0.0, sigma2), cfg.bandwidth_hz));
  }
  // Same U2R subchannel: each sees the other's received power as I.
  {
    const auto h = env.u2r_channels();
    const std::vector<int> acts{hover_action(cfg, 0, 1), hover_action(cfg, 2, 1)};
    env.step(acts);
    const double g0 = std::norm(h[0][1]);
    const double g1 = std::norm(h[1][1]);
    CHECK(env.last_info()[0].u2r_rate == doctest::Approx(rate(sinr(g0, p, g1 * p, sigma2), cfg.bandwidth_hz)));
    CHECK(env.last_info()[1].u2r_rate == doctest::Approx(rate(sinr(g1, p, g0 * p, sigma2), cfg.bandwidth_hz)));
  }
}

TEST_CASE("energy identity per step") {
  UavConfig cfg;
  cfg.shield = false;
  UavEnv env(cfg);
  env.reset(5);
  Rng rng(9);
  for (int t = 0; t < 60; ++t) {
    std::vector<int> acts;
    std::vector<double> before = env.energies();
    std::vector<double> expect;
    for (int n = 0; n < cfg.num_uavs; ++n) {
      UavAction a = decode_uav_action(static_cast<int>(uniform_index(rng, env.num_actions())), cfg);
      a.mobility = Mobility::Hover;
      acts.push_back(encode_uav_action(a, cfg));
      expect.push_back(before[n] - (cfg.energy_overhead + (dbm_to_watts(cfg.power_levels_dbm[a.u2u_power]) +
                                                           dbm_to_watts(cfg.power_levels_dbm[a.u2r_power])) *
                                                              cfg.delta_t));
    }
    const auto positions = env.positions();
    env.step(acts);
    CHECK(env.positions() == positions);  // all hover
    for (int n = 0; n < cfg.num_uavs; ++n) {
      CHECK(std::abs(env.energies()[n] - expect[n]) <= 1e-12);
      CHECK(env.energies()[n] <= before[n]);
    }
  }
}

TEST_CASE("collision cost at the boundary") {
  auto cfg = two_uavs();
  cfg.shield = false;
  UavEnv env(cfg);
  env.reset(1);
  env.set_positions({{100.0, 100.0, 100.0}, {130.0, 100.0, 100.0}});
  const std::vector<int> acts{hover_action(cfg, 0, 1), hover_action(cfg, 0, 1)};
  const auto out = env.step(acts);
  CHECK(out[0].costs.g.at("collision") == 0.0);
  CHECK(out[1].costs.g.at("collision") == 0.0);
  CHECK_FALSE(out[0].collision);
}

TEST_CASE("shield rule") {
  auto cfg = two_uavs();
  UavEnv env(cfg);
  env.reset(1);
  REQUIRE(env.is_slow_step());
  UavAction fwd;
  fwd.mobility = Mobility::Forward;
  fwd.u2u_power = 3;
  fwd.u2r_power = 2;
  bool over = false;

  // Neighbor at exactly d_min in the movement direction.
  env.set_positions({{100.0, 100.0, 100.0}, {130.0, 100.0, 100.0}});
  auto exec = env.shield(0, fwd, &over);
  CHECK(over);
  CHECK(exec.mobility == Mobility::Hover);
  CHECK(exec.u2u_power == 0);
  CHECK(exec.u2r_power == 0);

  // Isolated agent mid-arena with a full battery passes through.
  env.set_positions({{500.0, 500.0, 100.0}, {100.0, 100.0, 100.0}});
  exec = env.shield(0, fwd, &over);
  CHECK_FALSE(over);
  CHECK(encode_uav_action(exec, cfg) == encode_uav_action(fwd, cfg));

  // Leaving the arena.
  env.set_positions({{1000.0, 500.0, 100.0}, {100.0, 100.0, 100.0}});
  env.shield(0, fwd, &over);
  CHECK(over);

  // Energy just above the floor curtails power even when hovering.
  env.set_positions({{500.0, 500.0, 100.0}, {100.0, 100.0, 100.0}});
  env.set_energy(0, cfg.energy_min + 1e-9);
  UavAction hover_loud = fwd;
  hover_loud.mobility = Mobility::Hover;
  exec = env.shield(0, hover_loud, &over);
  CHECK(over);
  CHECK(exec.u2u_power == 0);
  CHECK(exec.u2r_power == 0);
}

TEST_CASE("safe action mask") {
  auto cfg = two_uavs();
  UavEnv env(cfg);
  env.reset(1);
  env.set_positions({{100.0, 100.0, 100.0}, {130.5, 100.0, 100.0}});
  auto mask = env.safe_action_mask(0);
  for (int a = 0; a < env.num_actions(); ++a) {
    const auto m = decode_uav_action(a, cfg).mobility;
    REQUIRE(mask[a] == (m != Mobility::Forward));
  }
  // Off the slow step only hover survives.
  env.step(std::vector<int>{env.fallback_action(0), env.fallback_action(1)});
  REQUIRE_FALSE(env.is_slow_step());
  mask = env.safe_action_mask(0);
  for (int a = 0; a < env.num_actions(); ++a) REQUIRE(mask[a] == (decode_uav_action(a, cfg).mobility == Mobility::Hover));
  const auto fb = decode_uav_action(env.fallback_action(0), cfg);
  CHECK(fb.mobility == Mobility::Hover);
}

TEST_CASE("observation layout and slow-timescale distances") {
  UavConfig cfg;
  cfg.shield = false;
  UavEnv env(cfg);
  auto obs = env.reset(2);
  const int len = cfg.subchannels + 2 * (cfg.num_uavs - 1) + 4;
  CHECK(env.observation_size() == len);
  const int dist_at = cfg.subchannels + (cfg.num_uavs - 1) + 3;
  const VectorXd d0 = obs[0].segment(dist_at, cfg.num_uavs - 1);
  CHECK((d0.array() > 0.0).all());
  Rng rng(1);
  for (int t = 0; t + 1 < cfg.slow_interval; ++t) {
    std::vector<int> acts(static_cast<std::size_t>(cfg.num_uavs));
    for (auto& a : acts) a = static_cast<int>(uniform_index(rng, env.num_actions()));
    if (t == 0) {
      for (auto& a : acts) a = env.fallback_action(0);  // step 0 is slow; hover keeps distances
    }
    const auto out = env.step(acts);
    REQUIRE(out[0].obs.size() == len);
    CHECK(out[0].obs.segment(dist_at, cfg.num_uavs - 1) == d0);
  }

  UavConfig knn = cfg;
  knn.knn_k = 2;
  UavEnv env2(knn);
  CHECK(env2.reset(2)[0].size() == cfg.subchannels + 4 + 4);
}

TEST_CASE("shielded random exploration never breaches d_min") {
  UavConfig cfg;
  cfg.slow_interval = 1;
  cfg.step_size = 5.0;
  UavEnv env(cfg);
  Rng rng(13);
  long long overrides = 0;
  for (std::uint64_t ep = 0; ep < 20; ++ep) {
    env.reset(ep);
    for (int t = 0; t < 100; ++t) {
      std::vector<int> acts(static_cast<std::size_t>(cfg.num_uavs));
      for (auto& a : acts) a = static_cast<int>(uniform_index(rng, env.num_actions()));
      const auto out = env.step(acts);
      for (const auto& s : out) {
        REQUIRE_FALSE(s.collision);
        overrides += s.overridden;
      }
      REQUIRE(env.min_pairwise_distance() >= cfg.d_min);
      for (double e : env.energies()) REQUIRE(e >= 0.0);
      if (out[0].terminal) break;
    }
  }
  CHECK(overrides > 0);
}
