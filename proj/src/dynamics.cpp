#include "vdyn/dynamics.hpp"

#include <cmath>
#include <string>

#include "vdyn/arena.hpp"
#include "vdyn/kernels.hpp"
#include "vdyn/ops.hpp"

namespace vdyn {

double wheel_angle(double delta, double wheel_divisor) {
  double a = delta / wheel_divisor;
  if (!(std::abs(a) < M_PI / 2)) {
    throw NumericError("steering angle outside the tan() domain");
  }
  return std::tan(a);
}

double yaw_rate_parametric(double vx, double delta, double wheelbase,
                           double steer_divisor) {
  double a = delta / steer_divisor;
  if (!(std::abs(a) < M_PI / 2)) {
    throw NumericError("steering angle outside the tan() domain");
  }
  return (vx / wheelbase) * std::tan(a);
}

Accels compose_accels(double zeta_e, const std::array<double, 3>& zeta_t,
                      double xi, double p_psi) {
  double diff = zeta_e - zeta_t[0];
  double cxi = std::cos(xi);
  double sxi = std::sin(xi);
  Accels a;
  a.vx_dot = (diff + diff * cxi) + zeta_t[1] * sxi;
  a.vy_dot = (-1.0 * zeta_t[1] - zeta_t[1] * cxi) + diff * sxi;
  a.psi_dot = p_psi - zeta_t[2];
  return a;
}

VehicleState kinematic_step(const VehicleState& s, double vx_dot,
                            double vy_dot, double psi_dot, double dt) {
  double cpsi = std::cos(s.psi);
  double spsi = std::sin(s.psi);
  double wx = s.vx * cpsi - s.vy * spsi;
  double wy = s.vx * spsi + s.vy * cpsi;
  VehicleState out = s;
  out.x = s.x + dt * wx;
  out.y = s.y + dt * wy;
  out.psi = wrap_angle(s.psi + dt * psi_dot);
  out.vx = s.vx + dt * vx_dot;
  out.vy = s.vy + dt * vy_dot;
  out.psi_dot = psi_dot;
  if (!std::isfinite(out.x) || !std::isfinite(out.y) ||
      !std::isfinite(out.psi) || !std::isfinite(out.vx) ||
      !std::isfinite(out.vy) || !std::isfinite(out.psi_dot)) {
    throw NumericError("kinematic step produced a non-finite state");
  }
  return out;
}

namespace {

template <typename T>
LstmStateT<T> zero_state(const InitializedLstmT<T>& net) {
  auto n = static_cast<std::size_t>(net.pred_lstm.hidden);
  return {std::vector<T>(n, T(0)), std::vector<T>(n, T(0))};
}

LstmState read_hidden(const LstmStateRef<EagerCtx<double>>& s) {
  return {{s.h.begin(), s.h.end()}, {s.c.begin(), s.c.end()}};
}

}  // namespace

std::pair<VehicleState, HybridHidden> hybrid_step(const HybridModel& m,
                                                  const VehicleState& s,
                                                  const ControlInput& u,
                                                  EnvironmentId env,
                                                  const HybridHidden& h) {
  Arena<double> arena;
  EagerCtx<double> cx(arena);
  auto mr = make_ref(cx, m, env);
  auto sr = make_state_refs(cx, s);
  ControlRefs<EagerCtx<double>> ur{cx.scalar(u.throttle), cx.scalar(u.brake),
                                   cx.scalar(u.steer)};
  HybridHiddenRefs<EagerCtx<double>> hr{
      {cx.view(h.brake.h), cx.view(h.brake.c)},
      {cx.view(h.steer.h), cx.view(h.steer.c)},
      {cx.view(h.engine.h), cx.view(h.engine.c)},
      {cx.view(h.terra.h), cx.view(h.terra.c)}};
  auto out = hybrid_apply(cx, mr, sr, ur, hr);
  VehicleState r = read_state(cx, out);
  auto problems = validate_state(r, m.constants);
  if (!problems.empty()) {
    throw NumericError("hybrid step produced an invalid state: " +
                       problems.front());
  }
  return {r,
          {read_hidden(hr.brake), read_hidden(hr.steer), read_hidden(hr.engine),
           read_hidden(hr.terra)}};
}

std::pair<VehicleState, KinematicHidden> kinematic_variant_step(
    const KinematicModel& m, const VehicleState& s, const ControlInput& u,
    EnvironmentId env, const KinematicHidden& h) {
  Arena<double> arena;
  EagerCtx<double> cx(arena);
  auto mr = make_ref(cx, m, env);
  auto sr = make_state_refs(cx, s);
  ControlRefs<EagerCtx<double>> ur{cx.scalar(u.throttle), cx.scalar(u.brake),
                                   cx.scalar(u.steer)};
  KinematicHiddenRefs<EagerCtx<double>> hr{
      {cx.view(h.combo.h), cx.view(h.combo.c)},
      {cx.view(h.brake.h), cx.view(h.brake.c)},
      {cx.view(h.steer.h), cx.view(h.steer.c)}};
  auto out = kinematic_apply(cx, mr, sr, ur, hr);
  VehicleState r = read_state(cx, out);
  auto problems = validate_state(r, m.constants);
  if (!problems.empty()) {
    throw NumericError("kinematic-variant step produced an invalid state: " +
                       problems.front());
  }
  return {r,
          {read_hidden(hr.combo), read_hidden(hr.brake), read_hidden(hr.steer)}};
}

VehicleState parametric_step(const ParametricModel& m, const VehicleState& s,
                             const ControlInput& u, double dt) {
  const auto& c = m.constants;
  double sgn = 0.0;
  if (std::abs(s.vx) >= kSpeedDeadband) sgn = (s.vx > 0) ? 1.0 : -1.0;
  double vx_dot =
      m.throttle_gain * u.throttle - m.brake_gain * s.brake * sgn -
      m.drag_gain * s.vx;
  double psi_dot =
      yaw_rate_parametric(s.vx, s.delta, c.wheelbase, c.steer_divisor);

  double p_b = brake_parametric(u.brake, s.brake, c.brake_gain,
                                c.brake_rate_limit);
  double cmd = u.steer * c.max_hand_wheel();
  double p_d =
      steer_parametric(cmd, s.delta, c.steer_gain, c.steer_rate_limit);

  VehicleState out = kinematic_step(s, vx_dot, 0.0, psi_dot, dt);
  out.vy = 0.0;
  out.brake = kern::clamp(s.brake + p_b * dt, 0.0, 1.0);
  out.delta = kern::clamp(s.delta + p_d * dt, -c.max_hand_wheel(),
                          c.max_hand_wheel());
  out.delta_dot = p_d;
  return out;
}

HybridHidden make_hidden(const HybridModel& m) {
  HybridHidden h;
  h.brake = zero_state(m.brake.net);
  h.steer = zero_state(m.steer.net);
  h.engine = zero_state(m.engine);
  if (m.terra.empty()) {
    throw ConfigError("hybrid model has no terradynamics network");
  }
  h.terra = zero_state(m.terra.front());
  return h;
}

KinematicHidden make_hidden(const KinematicModel& m) {
  return {zero_state(m.combo), zero_state(m.brake.net),
          zero_state(m.steer.net)};
}

std::vector<double> brake_history_input(const VehicleState& s,
                                        const ControlInput& u) {
  return {s.brake, u.brake};
}

std::vector<double> steer_history_input(const VehicleState& s,
                                        const ControlInput& u,
                                        const ParametricConstants& c) {
  return {s.vx, u.steer * c.max_hand_wheel(), s.delta, s.delta_dot};
}

std::vector<double> engine_history_input(const VehicleState& s,
                                         const ControlInput& u) {
  return {s.vx, u.throttle, s.brake};
}

std::vector<double> terra_history_input(const VehicleState& s,
                                        const ControlInput& u,
                                        const ParametricConstants& c) {
  double p_psi =
      yaw_rate_parametric(s.vx, s.delta, c.wheelbase, c.steer_divisor);
  double xi = wheel_angle(s.delta, c.wheel_divisor);
  // The last slot holds the engine-force estimate during prediction; the
  // initializer sees the commanded throttle there instead.
  return {s.vx,
          s.vy,
          s.psi_dot,
          s.delta,
          s.delta_dot,
          c.gravity * std::sin(s.roll),
          c.gravity * std::sin(s.pitch),
          p_psi,
          xi,
          u.throttle};
}

std::vector<double> combo_history_input(const VehicleState& s,
                                        const ControlInput& u,
                                        EnvironmentId env) {
  return {s.vx,   s.vy,       s.psi_dot, s.delta,   s.delta_dot,
          s.roll, s.pitch,    u.throttle, u.brake,  env.eta()};
}

namespace {

template <typename F>
std::vector<std::vector<double>> gather_history(
    std::span<const VehicleState> states, std::span<const ControlInput> controls,
    F&& input_fn) {
  if (states.size() != controls.size()) {
    throw DataError("history: state/control length mismatch");
  }
  if (states.empty()) throw DataError("history: empty");
  std::vector<std::vector<double>> hist;
  hist.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    hist.push_back(input_fn(states[i], controls[i]));
  }
  return hist;
}

}  // namespace

HybridHidden init_hidden(const HybridModel& m,
                         std::span<const VehicleState> states,
                         std::span<const ControlInput> controls,
                         EnvironmentId env) {
  if (env.index < 0 || env.index >= static_cast<int>(m.terra.size())) {
    throw ConfigError("hybrid model: unknown environment index " +
                      std::to_string(env.index));
  }
  const auto& c = m.constants;
  HybridHidden h;
  h.brake = init_forward(
      m.brake.net, gather_history(states, controls, [](auto& s, auto& u) {
        return brake_history_input(s, u);
      }));
  h.steer = init_forward(
      m.steer.net, gather_history(states, controls, [&](auto& s, auto& u) {
        return steer_history_input(s, u, c);
      }));
  h.engine = init_forward(
      m.engine, gather_history(states, controls, [](auto& s, auto& u) {
        return engine_history_input(s, u);
      }));
  h.terra = init_forward(
      m.terra[static_cast<std::size_t>(env.index)],
      gather_history(states, controls, [&](auto& s, auto& u) {
        return terra_history_input(s, u, c);
      }));
  return h;
}

KinematicHidden init_hidden(const KinematicModel& m,
                            std::span<const VehicleState> states,
                            std::span<const ControlInput> controls,
                            EnvironmentId env) {
  KinematicHidden h;
  h.combo = init_forward(
      m.combo, gather_history(states, controls, [&](auto& s, auto& u) {
        return combo_history_input(s, u, env);
      }));
  h.brake = init_forward(
      m.brake.net, gather_history(states, controls, [](auto& s, auto& u) {
        return brake_history_input(s, u);
      }));
  h.steer = init_forward(
      m.steer.net, gather_history(states, controls, [&](auto& s, auto& u) {
        return steer_history_input(s, u, m.constants);
      }));
  return h;
}

}  // namespace vdyn
