#include <doctest.h>

#include <cmath>
#include <vector>

#include "vdyn/actuation.hpp"
#include "vdyn/arena.hpp"
#include "vdyn/ops.hpp"
#include "vdyn/rng.hpp"
#include "vdyn/tape.hpp"

using namespace vdyn;

namespace {

// small shapes so the tests stay fast; pred input 3 (brake) / 5 (steer)
const NetArch kBrakeArch = NetArch::parse("[2][4]x[6,8,4]-[3][2]x[5,6,1]");
const NetArch kSteerArch = NetArch::parse("[4][4]x[8,8,4]-[5][2]x[7,6,1]");

DelayModel zero_brake_model(double gain, double limit) {
  DelayModel m;
  m.gain = gain;
  m.rate_limit = limit;
  m.net = make_net(kBrakeArch);
  return m;
}

DelayModel zero_steer_model(double gain, double limit) {
  DelayModel m;
  m.gain = gain;
  m.rate_limit = limit;
  m.net = make_net(kSteerArch);
  return m;
}

DelayModel random_brake_model(std::uint64_t seed) {
  DelayModel m = zero_brake_model(2.0, 0.8);
  Rng rng(seed);
  init_weights(m.net, rng);
  return m;
}

LstmState zero_hidden(const DelayModel& m) {
  LstmState s;
  s.h.assign(m.net.pred_lstm.hidden, 0.0);
  s.c.assign(m.net.pred_lstm.hidden, 0.0);
  return s;
}

}  // namespace

TEST_CASE("parametric lag rate") {
  CHECK(brake_parametric(0.4, 0.4, 2.0, 0.8) == 0.0);
  CHECK(brake_parametric(1.0, 0.0, 8.0, 0.8) == 0.8);   // saturated high
  CHECK(brake_parametric(0.0, 1.0, 8.0, 0.8) == -0.8);  // saturated low
  CHECK(brake_parametric(0.5, 0.3, 2.0, 0.8) == doctest::Approx(0.4));
  CHECK(steer_parametric(0.2, 0.2, 3.0, 6.0) == 0.0);
  CHECK(steer_parametric(8.0, -8.0, 3.0, 6.0) == 6.0);
  CHECK(steer_parametric(1.0, 0.5, 3.0, 6.0) == doctest::Approx(1.5));
}

TEST_CASE("brake_step with zero residual net") {
  ParametricConstants c;
  auto m = zero_brake_model(2.0, 0.8);
  auto h = zero_hidden(m);

  SUBCASE("command equals state: unchanged") {
    VehicleState s;
    s.brake = 0.37;
    ControlInput u;
    u.brake = 0.37;
    auto r = brake_step(s, u, m, h, c);
    CHECK(r.brake == 0.37);
  }
  SUBCASE("rate-limited rise from zero") {
    VehicleState s;
    s.brake = 0.0;
    ControlInput u;
    u.brake = 1.0;  // error * gain = 2.0 > limit
    auto r = brake_step(s, u, m, h, c);
    CHECK(r.brake == doctest::Approx(0.8 * c.dt));
  }
  SUBCASE("clamped at 1") {
    VehicleState s;
    s.brake = 0.999;
    ControlInput u;
    u.brake = 1.0;
    m.gain = 1000.0;
    auto r = brake_step(s, u, m, h, c);
    CHECK(r.brake == 1.0);
  }
  SUBCASE("clamped at 0") {
    VehicleState s;
    s.brake = 0.005;
    ControlInput u;
    u.brake = 0.0;
    m.gain = 1000.0;
    auto r = brake_step(s, u, m, h, c);
    CHECK(r.brake == 0.0);
  }
}

TEST_CASE("brake zero-net lag is monotone without overshoot") {
  // while |error|*gain <= limit and gain*dt <= 1, one step moves toward the
  // command and never past it
  ParametricConstants c;
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    double gain = rng.uniform(0.1, 1.0 / c.dt);
    auto m = zero_brake_model(gain, rng.uniform(0.1, 5.0));
    auto h = zero_hidden(m);
    VehicleState s;
    s.brake = rng.uniform(0, 1);
    ControlInput u;
    u.brake = rng.uniform(0, 1);
    auto r = brake_step(s, u, m, h, c);
    if (u.brake >= s.brake) {
      CHECK(r.brake >= s.brake);
      CHECK(r.brake <= u.brake + 1e-15);
    } else {
      CHECK(r.brake <= s.brake);
      CHECK(r.brake >= u.brake - 1e-15);
    }
  }
}

TEST_CASE("brake step change bound holds for arbitrary residual nets") {
  ParametricConstants c;
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_brake_model(1000 + trial);
    auto h = zero_hidden(m);
    VehicleState s;
    s.brake = rng.uniform(0, 1);
    ControlInput u;
    u.brake = rng.uniform(0, 1);
    auto r = brake_step(s, u, m, h, c);
    CHECK(std::abs(r.brake - s.brake) <=
          (m.rate_limit + kNetOutputScale) * c.dt + 1e-12);
    CHECK(r.brake >= 0.0);
    CHECK(r.brake <= 1.0);
  }
}

TEST_CASE("brake_step advances the hidden state deterministically") {
  ParametricConstants c;
  auto m = random_brake_model(5);
  auto h = zero_hidden(m);
  VehicleState s;
  s.brake = 0.2;
  ControlInput u;
  u.brake = 0.9;
  auto r1 = brake_step(s, u, m, h, c);
  auto r2 = brake_step(s, u, m, h, c);
  CHECK(r1.brake == r2.brake);
  CHECK(r1.hidden.h == r2.hidden.h);
  bool changed = false;
  for (double v : r1.hidden.h) changed |= (v != 0.0);
  CHECK(changed);
  // feeding the advanced hidden back changes the next output
  auto r3 = brake_step(s, u, m, r1.hidden, c);
  CHECK(r3.brake != r1.brake);
}

TEST_CASE("brake_step reports non-finite model output") {
  ParametricConstants c;
  auto m = random_brake_model(6);
  m.net.pred_out.layers.back().b[0] = std::nan("");
  auto h = zero_hidden(m);
  VehicleState s;
  ControlInput u;
  u.brake = 1.0;
  CHECK_THROWS_AS(brake_step(s, u, m, h, c), NumericError);
}

TEST_CASE("steer_step with zero residual net") {
  ParametricConstants c;
  auto m = zero_steer_model(2.5, 6.0);
  auto h = zero_hidden(m);

  SUBCASE("command equals state: unchanged, zero rate") {
    VehicleState s;
    s.delta = 1.2;
    s.delta_dot = 0.4;
    ControlInput u;
    u.steer = 1.2 / c.max_hand_wheel();
    auto r = steer_step(s, u, m, h, c);
    CHECK(r.delta == 1.2);
    CHECK(r.delta_dot == 0.0);
  }
  SUBCASE("rate-limited ramp toward a far command") {
    // saturation holds while (cmd - delta) * gain >= limit, i.e. delta <= 5.6
    VehicleState s;
    ControlInput u;
    u.steer = 1.0;  // cmd = 8 rad, initial error * gain = 20 >> limit
    double delta = 0.0;
    for (int i = 0; i < 40; ++i) {
      s.delta = delta;
      s.delta_dot = (i == 0) ? 0.0 : 6.0;
      auto r = steer_step(s, u, m, h, c);
      CHECK(r.delta == doctest::Approx(delta + 6.0 * c.dt));
      CHECK(r.delta_dot == 6.0);
      delta = r.delta;
    }
    CHECK(delta == doctest::Approx(40 * 6.0 * c.dt));
  }
  SUBCASE("hand-wheel clamp") {
    VehicleState s;
    s.delta = c.max_hand_wheel() - 0.01;
    ControlInput u;
    u.steer = 1.0;
    m.gain = 1000.0;
    auto r = steer_step(s, u, m, h, c);
    CHECK(r.delta == c.max_hand_wheel());
  }
}

TEST_CASE("taped brake update equals the eager one bitwise") {
  ParametricConstants c;
  auto m = random_brake_model(301);
  auto h0 = zero_hidden(m);
  VehicleState s;
  s.brake = 0.31;
  ControlInput u;
  u.brake = 0.77;

  auto eager = brake_step(s, u, m, h0, c);

  ad::Tape tape;
  TapeCtx cx(tape);
  auto mr = make_ref(cx, m, nullptr);
  LstmStateRef<TapeCtx> h{cx.vec(h0.h), cx.vec(h0.c)};
  auto b = brake_apply(cx, mr, cx.scalar(s.brake), cx.scalar(u.brake), h, c.dt);
  CHECK(tape.value0(b) == eager.brake);
  auto hv = tape.value(h.h);
  for (std::size_t i = 0; i < hv.size(); ++i) CHECK(hv[i] == eager.hidden.h[i]);
}

TEST_CASE("delay constant fit recovers oracle values") {
  // synthesize brake traces from the pure parametric lag with known constants
  const double true_gain = 2.0, true_limit = 0.8, dt = 0.02;
  Rng rng(99);
  std::vector<DelaySeries> data;
  for (int seq = 0; seq < 3; ++seq) {
    DelaySeries s;
    double b = 0.0;
    double cmd = 0.0;
    for (int t = 0; t < 1200; ++t) {
      if (t % 25 == 0) cmd = rng.uniform(0, 1);
      s.cmd.push_back(cmd);
      s.actual.push_back(b);
      b += brake_parametric(cmd, b, true_gain, true_limit) * dt;
    }
    data.push_back(std::move(s));
  }

  DelayFitConfig cfg;
  cfg.dt = dt;
  auto rep = fit_delay_constants(data, cfg);
  CHECK(rep.converged);
  CHECK_FALSE(rep.unidentifiable);
  CHECK(std::abs(rep.gain - true_gain) / true_gain < 0.05);
  CHECK(std::abs(rep.rate_limit - true_limit) / true_limit < 0.05);
  CHECK(rep.final_loss < rep.initial_loss);
}

TEST_CASE("delay fit failure modes") {
  DelayFitConfig cfg;
  SUBCASE("empty dataset") {
    std::vector<DelaySeries> data;
    CHECK_THROWS_AS(fit_delay_constants(data, cfg), DataError);
  }
  SUBCASE("all sequences too short") {
    std::vector<DelaySeries> data(2);
    data[0].cmd = {0.5};
    data[0].actual = {0.5};
    CHECK_THROWS_AS(fit_delay_constants(data, cfg), DataError);
  }
  SUBCASE("length mismatch") {
    std::vector<DelaySeries> data(1);
    data[0].cmd = {0.5, 0.5, 0.5};
    data[0].actual = {0.5, 0.5};
    CHECK_THROWS_AS(fit_delay_constants(data, cfg), DataError);
  }
  SUBCASE("no excitation is reported unidentifiable") {
    std::vector<DelaySeries> data(1);
    data[0].cmd.assign(200, 0.4);
    data[0].actual.assign(200, 0.4);  // command pinned to state, zero error
    auto rep = fit_delay_constants(data, cfg);
    CHECK(rep.unidentifiable);
    CHECK_FALSE(rep.converged);
  }
}
