#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "vdyn/actuation.hpp"
#include "vdyn/core.hpp"
#include "vdyn/net.hpp"

namespace vdyn {

// The force model: a small engine network and a per-environment
// terradynamics network produce mass-normalized wheel-frame accelerations,
// composed with the parametric steering geometry and integrated with the
// planar kinematic equations. The same math runs eagerly (double or float)
// or recorded on the autodiff tape; all entry points funnel into the
// generic *_apply functions below.

/// Divergence guard on the longitudinal acceleration: with tanh outputs
/// scaled by 10, a magnitude past this bound means several networks pinned
/// at saturation, which a healthy model never does.
inline constexpr double kMaxAbsVxDot = 40.0;

/// Speeds below this are treated as standstill by sign-dependent terms.
inline constexpr double kSpeedDeadband = 0.05;

template <typename T>
struct HybridModelT {
  DelayModelT<T> brake;
  DelayModelT<T> steer;
  InitializedLstmT<T> engine;             // (vx, u_t, b_u) -> 1
  std::vector<InitializedLstmT<T>> terra;  // per environment, 10 -> 3
  ParametricConstants constants;
};

using HybridModel = HybridModelT<double>;
using HybridModelF = HybridModelT<float>;

template <typename T, typename U>
HybridModelT<T> hybrid_cast(const HybridModelT<U>& m) {
  HybridModelT<T> r;
  r.brake = delay_cast<T>(m.brake);
  r.steer = delay_cast<T>(m.steer);
  r.engine = net_cast<T>(m.engine);
  for (const auto& t : m.terra) r.terra.push_back(net_cast<T>(t));
  r.constants = m.constants;
  return r;
}

/// Kinematic variant: one network predicts the body accelerations directly
/// (no force decomposition, no parametric steering terms), and the delay
/// models predict actuator rates without parametric assistance.
template <typename T>
struct KinematicModelT {
  InitializedLstmT<T> combo;  // (vx, vy, psi_dot, delta, delta_dot, roll,
                              //  pitch, u_t, u_b, eta) -> 3
  DelayModelT<T> brake;
  DelayModelT<T> steer;
  ParametricConstants constants;
};

using KinematicModel = KinematicModelT<double>;
using KinematicModelF = KinematicModelT<float>;

template <typename T, typename U>
KinematicModelT<T> kinematic_cast(const KinematicModelT<U>& m) {
  return {net_cast<T>(m.combo), delay_cast<T>(m.brake), delay_cast<T>(m.steer),
          m.constants};
}

/// Purely parametric baseline: linear engine/drag law, no lateral velocity.
struct ParametricModel {
  double throttle_gain = 4.0;  // C_T, m/s^2 per unit throttle
  double brake_gain = 10.0;    // m/s^2 per unit brake, opposing motion
  double drag_gain = 0.2;      // 1/s
  ParametricConstants constants;
};

/// Check that every network's widths match its role (actuator nets take the
/// actuator tuple, engine 3 -> 1, terradynamics 10 -> 3, combo 10 -> 3) and
/// that the terradynamics variants agree on hidden size. Throws ShapeError /
/// ConfigError.
template <typename T>
void validate_model(const HybridModelT<T>& m) {
  auto expect = [](const InitializedLstmT<T>& n, int init_in, int pred_in,
                   int out, const char* name) {
    if (n.init_lstm.input != init_in || n.pred_lstm.input != pred_in ||
        n.pred_out.output() != out) {
      throw ShapeError(std::string(name) +
                       " network widths do not match its inputs");
    }
  };
  expect(m.brake.net, 2, m.brake.parametric_assist ? 3 : 2, 1, "brake delay");
  expect(m.steer.net, 4, m.steer.parametric_assist ? 5 : 4, 1,
         "steering delay");
  expect(m.engine, 3, 3, 1, "engine");
  if (m.terra.empty()) {
    throw ConfigError("hybrid model has no terradynamics network");
  }
  for (const auto& t : m.terra) {
    expect(t, 10, 10, 3, "terradynamics");
    if (t.pred_lstm.hidden != m.terra.front().pred_lstm.hidden) {
      throw ShapeError(
          "terradynamics variants disagree on predictor hidden size");
    }
  }
}

template <typename T>
void validate_model(const KinematicModelT<T>& m) {
  auto expect = [](const InitializedLstmT<T>& n, int init_in, int pred_in,
                   int out, const char* name) {
    if (n.init_lstm.input != init_in || n.pred_lstm.input != pred_in ||
        n.pred_out.output() != out) {
      throw ShapeError(std::string(name) +
                       " network widths do not match its inputs");
    }
  };
  expect(m.combo, 10, 10, 3, "combined acceleration");
  expect(m.brake.net, 2, m.brake.parametric_assist ? 3 : 2, 1, "brake delay");
  expect(m.steer.net, 4, m.steer.parametric_assist ? 5 : 4, 1,
         "steering delay");
}

template <typename T>
struct HybridHiddenT {
  LstmStateT<T> brake, steer, engine, terra;
};
using HybridHidden = HybridHiddenT<double>;
using HybridHiddenF = HybridHiddenT<float>;

template <typename T>
struct KinematicHiddenT {
  LstmStateT<T> combo, brake, steer;
};
using KinematicHidden = KinematicHiddenT<double>;
using KinematicHiddenF = KinematicHiddenT<float>;

// ---------------------------------------------------------------------------
// Plain scalar operations (the spec-level sub-operations; the generic step
// below performs the identical floating-point expressions).

/// Road-wheel angle from the hand-wheel angle: tan(delta / divisor).
/// Throws NumericError when |delta / divisor| reaches pi/2.
double wheel_angle(double delta, double wheel_divisor);

/// Parametric yaw rate (vx / wheelbase) * tan(delta / steer_divisor).
double yaw_rate_parametric(double vx, double delta, double wheelbase,
                           double steer_divisor);

struct Accels {
  double vx_dot = 0, vy_dot = 0, psi_dot = 0;
};

/// Wheel-frame force composition into body accelerations.
Accels compose_accels(double zeta_e, const std::array<double, 3>& zeta_t,
                      double xi, double p_psi);

/// Euler-integrate one step: x, y via the body-to-world rotation, psi
/// (wrapped), vx, vy; the state's psi_dot is set to the supplied rate.
/// roll/pitch/actuation fields pass through. Throws NumericError when the
/// result is non-finite.
VehicleState kinematic_step(const VehicleState& s, double vx_dot,
                            double vy_dot, double psi_dot, double dt);

// ---------------------------------------------------------------------------
// Generic model step.

template <class Ctx>
struct StateRefs {
  typename Ctx::V x, y, psi, vx, vy, psi_dot, roll, pitch, delta, delta_dot,
      brake;
};

template <class Ctx>
struct ControlRefs {
  typename Ctx::V throttle, brake, steer;  // steer normalized [-1, 1]
};

template <class Ctx>
struct HybridRefs {
  DelayRefs<Ctx> brake, steer;
  InitLstmRef<Ctx> engine, terra;
  typename Ctx::V wheel_divisor, steer_divisor, wheelbase;
  double dt = 0.02, gravity = kGravity, max_hand_wheel = 8.0;
};

template <class Ctx>
struct HybridHiddenRefs {
  LstmStateRef<Ctx> brake, steer, engine, terra;
};

template <class Ctx>
struct KinematicRefs {
  DelayRefs<Ctx> brake, steer;
  InitLstmRef<Ctx> combo;
  double dt = 0.02, max_hand_wheel = 8.0, eta = 1.0;
};

template <class Ctx>
struct KinematicHiddenRefs {
  LstmStateRef<Ctx> combo, brake, steer;
};

template <typename T>
StateRefs<EagerCtx<T>> make_state_refs(EagerCtx<T>& cx,
                                       const VehicleStateT<T>& s) {
  return {cx.scalar(s.x),     cx.scalar(s.y),         cx.scalar(s.psi),
          cx.scalar(s.vx),    cx.scalar(s.vy),        cx.scalar(s.psi_dot),
          cx.scalar(s.roll),  cx.scalar(s.pitch),     cx.scalar(s.delta),
          cx.scalar(s.delta_dot), cx.scalar(s.brake)};
}

inline StateRefs<TapeCtx> make_state_refs(TapeCtx& cx, const VehicleState& s) {
  return {cx.scalar(s.x),     cx.scalar(s.y),         cx.scalar(s.psi),
          cx.scalar(s.vx),    cx.scalar(s.vy),        cx.scalar(s.psi_dot),
          cx.scalar(s.roll),  cx.scalar(s.pitch),     cx.scalar(s.delta),
          cx.scalar(s.delta_dot), cx.scalar(s.brake)};
}

template <class Ctx>
VehicleState read_state(const Ctx& cx, const StateRefs<Ctx>& s) {
  VehicleState r;
  r.x = cx.first(s.x);
  r.y = cx.first(s.y);
  r.psi = cx.first(s.psi);
  r.vx = cx.first(s.vx);
  r.vy = cx.first(s.vy);
  r.psi_dot = cx.first(s.psi_dot);
  r.roll = cx.first(s.roll);
  r.pitch = cx.first(s.pitch);
  r.delta = cx.first(s.delta);
  r.delta_dot = cx.first(s.delta_dot);
  r.brake = cx.first(s.brake);
  return r;
}

template <typename T>
HybridRefs<EagerCtx<T>> make_ref(EagerCtx<T>& cx, const HybridModelT<T>& m,
                                 EnvironmentId env) {
  validate_model(m);
  if (env.index < 0 || env.index >= static_cast<int>(m.terra.size())) {
    throw ConfigError("hybrid model: unknown environment index " +
                      std::to_string(env.index));
  }
  HybridRefs<EagerCtx<T>> r;
  r.brake = make_ref(cx, m.brake);
  r.steer = make_ref(cx, m.steer);
  r.engine = make_ref(cx, m.engine);
  r.terra = make_ref(cx, m.terra[static_cast<std::size_t>(env.index)]);
  r.wheel_divisor = cx.scalar(m.constants.wheel_divisor);
  r.steer_divisor = cx.scalar(m.constants.steer_divisor);
  r.wheelbase = cx.scalar(m.constants.wheelbase);
  r.dt = m.constants.dt;
  r.gravity = m.constants.gravity;
  r.max_hand_wheel = m.constants.max_hand_wheel();
  return r;
}

inline HybridRefs<TapeCtx> make_ref(TapeCtx& cx, const HybridModel& m,
                                    EnvironmentId env, const ParamIndex* idx) {
  validate_model(m);
  if (env.index < 0 || env.index >= static_cast<int>(m.terra.size())) {
    throw ConfigError("hybrid model: unknown environment index " +
                      std::to_string(env.index));
  }
  HybridRefs<TapeCtx> r;
  r.brake = make_ref(cx, m.brake, idx);
  r.steer = make_ref(cx, m.steer, idx);
  r.engine = make_ref(cx, m.engine, idx);
  r.terra = make_ref(cx, m.terra[static_cast<std::size_t>(env.index)], idx);
  r.wheel_divisor = cx.scalar(m.constants.wheel_divisor);
  r.steer_divisor = detail::tape_scalar(cx, m.constants.steer_divisor, idx);
  r.wheelbase = detail::tape_scalar(cx, m.constants.wheelbase, idx);
  r.dt = m.constants.dt;
  r.gravity = m.constants.gravity;
  r.max_hand_wheel = m.constants.max_hand_wheel();
  return r;
}

template <typename T>
KinematicRefs<EagerCtx<T>> make_ref(EagerCtx<T>& cx,
                                    const KinematicModelT<T>& m,
                                    EnvironmentId env) {
  validate_model(m);
  KinematicRefs<EagerCtx<T>> r;
  r.brake = make_ref(cx, m.brake);
  r.steer = make_ref(cx, m.steer);
  r.combo = make_ref(cx, m.combo);
  r.dt = m.constants.dt;
  r.max_hand_wheel = m.constants.max_hand_wheel();
  r.eta = env.eta();
  return r;
}

inline KinematicRefs<TapeCtx> make_ref(TapeCtx& cx, const KinematicModel& m,
                                       EnvironmentId env,
                                       const ParamIndex* idx) {
  validate_model(m);
  KinematicRefs<TapeCtx> r;
  r.brake = make_ref(cx, m.brake, idx);
  r.steer = make_ref(cx, m.steer, idx);
  r.combo = make_ref(cx, m.combo, idx);
  r.dt = m.constants.dt;
  r.max_hand_wheel = m.constants.max_hand_wheel();
  r.eta = env.eta();
  return r;
}

namespace detail {
template <class Ctx>
typename Ctx::V concat_all(Ctx& cx, std::initializer_list<typename Ctx::V> vs) {
  auto it = vs.begin();
  auto acc = *it++;
  for (; it != vs.end(); ++it) acc = cx.concat(acc, *it);
  return acc;
}

/// Shared Euler integrator over context values.
template <class Ctx>
StateRefs<Ctx> integrate_refs(Ctx& cx, const StateRefs<Ctx>& s,
                              typename Ctx::V vx_dot, typename Ctx::V vy_dot,
                              typename Ctx::V psi_dot_out, double dt) {
  auto cpsi = cx.cos_(s.psi);
  auto spsi = cx.sin_(s.psi);
  auto wx = cx.sub(cx.mul(s.vx, cpsi), cx.mul(s.vy, spsi));
  auto wy = cx.add(cx.mul(s.vx, spsi), cx.mul(s.vy, cpsi));
  StateRefs<Ctx> out;
  out.x = cx.add(s.x, cx.scale(wx, dt));
  out.y = cx.add(s.y, cx.scale(wy, dt));
  out.psi = cx.wrap(cx.add(s.psi, cx.scale(psi_dot_out, dt)));
  out.vx = cx.add(s.vx, cx.scale(vx_dot, dt));
  out.vy = cx.add(s.vy, cx.scale(vy_dot, dt));
  out.psi_dot = psi_dot_out;
  out.roll = s.roll;
  out.pitch = s.pitch;
  // delta/delta_dot/brake are filled by the caller's actuation update
  out.delta = s.delta;
  out.delta_dot = s.delta_dot;
  out.brake = s.brake;
  return out;
}
}  // namespace detail

/// Force networks, parametric steering geometry and kinematic integration
/// only: the actuator fields (delta, delta_dot, brake) pass through from s
/// unchanged. Used directly when logged actuator trajectories are fed in
/// place of the delay models; hybrid_apply adds the delay-model update on
/// top. Hidden states advance in place. Throws NumericError on
/// steering-domain violation or when |vx_dot| exceeds kMaxAbsVxDot.
template <class Ctx>
StateRefs<Ctx> hybrid_force_apply(Ctx& cx, const HybridRefs<Ctx>& m,
                                  const StateRefs<Ctx>& s,
                                  const ControlRefs<Ctx>& u,
                                  LstmStateRef<Ctx>& h_engine,
                                  LstmStateRef<Ctx>& h_terra) {
  // parametric steering geometry
  auto xi = cx.tan_(cx.div(s.delta, m.wheel_divisor));
  auto p_psi = cx.mul(cx.div(s.vx, m.wheelbase),
                      cx.tan_(cx.div(s.delta, m.steer_divisor)));
  {
    double dw = cx.first(s.delta) / cx.first(m.wheel_divisor);
    double ds = cx.first(s.delta) / cx.first(m.steer_divisor);
    if (!(std::abs(dw) < M_PI / 2) || !(std::abs(ds) < M_PI / 2)) {
      throw NumericError("steering angle outside the tan() domain");
    }
  }

  // force networks (time-t inputs)
  auto ein = detail::concat_all(cx, {s.vx, u.throttle, s.brake});
  auto [ze_raw, eh] = predict_apply(cx, m.engine, ein, h_engine);
  h_engine = eh;
  auto ze = cx.scale(ze_raw, kNetOutputScale);

  auto g_sin_roll = cx.scale(cx.sin_(s.roll), m.gravity);
  auto g_sin_pitch = cx.scale(cx.sin_(s.pitch), m.gravity);
  auto tin = detail::concat_all(
      cx, {s.vx, s.vy, s.psi_dot, s.delta, s.delta_dot, g_sin_roll,
           g_sin_pitch, p_psi, xi, ze});
  auto [zt_raw, th] = predict_apply(cx, m.terra, tin, h_terra);
  h_terra = th;
  auto zt = cx.scale(zt_raw, kNetOutputScale);

  // composition
  auto zt0 = cx.slice(zt, 0, 1);
  auto zt1 = cx.slice(zt, 1, 1);
  auto zt2 = cx.slice(zt, 2, 1);
  auto diff = cx.sub(ze, zt0);
  auto cxi = cx.cos_(xi);
  auto sxi = cx.sin_(xi);
  auto vx_dot = cx.add(cx.add(diff, cx.mul(diff, cxi)), cx.mul(zt1, sxi));
  auto vy_dot = cx.add(cx.sub(cx.scale(zt1, -1.0), cx.mul(zt1, cxi)),
                       cx.mul(diff, sxi));
  auto psi_dot_out = cx.sub(p_psi, zt2);
  if (!(std::abs(cx.first(vx_dot)) <= kMaxAbsVxDot)) {
    throw NumericError("model divergence: |vx_dot| exceeds guard");
  }

  return detail::integrate_refs(cx, s, vx_dot, vy_dot, psi_dot_out, m.dt);
}

/// One hybrid-model step. Every network and parametric term reads the
/// time-t state; actuation and kinematics then advance simultaneously.
/// Throws NumericError on steering-domain violation or when |vx_dot|
/// exceeds kMaxAbsVxDot (divergence guard).
template <class Ctx>
StateRefs<Ctx> hybrid_apply(Ctx& cx, const HybridRefs<Ctx>& m,
                            const StateRefs<Ctx>& s, const ControlRefs<Ctx>& u,
                            HybridHiddenRefs<Ctx>& h) {
  auto out = hybrid_force_apply(cx, m, s, u, h.engine, h.terra);

  // actuation (also time-t inputs)
  auto b2 = brake_apply(cx, m.brake, s.brake, u.brake, h.brake, m.dt);
  auto cmd = cx.scale(u.steer, m.max_hand_wheel);
  auto so = steer_apply(cx, m.steer, s.vx, cmd, s.delta, s.delta_dot, h.steer,
                        m.dt, m.max_hand_wheel);
  out.delta = so.delta;
  out.delta_dot = so.delta_dot;
  out.brake = b2;
  return out;
}

/// Combo-network accelerations + kinematic integration only; actuator
/// fields pass through from s (see hybrid_force_apply).
template <class Ctx>
StateRefs<Ctx> kinematic_force_apply(Ctx& cx, const KinematicRefs<Ctx>& m,
                                     const StateRefs<Ctx>& s,
                                     const ControlRefs<Ctx>& u,
                                     LstmStateRef<Ctx>& h_combo) {
  auto zin = detail::concat_all(
      cx, {s.vx, s.vy, s.psi_dot, s.delta, s.delta_dot, s.roll, s.pitch,
           u.throttle, u.brake, cx.scalar(m.eta)});
  auto [z_raw, ch] = predict_apply(cx, m.combo, zin, h_combo);
  h_combo = ch;
  auto acc = cx.scale(z_raw, kNetOutputScale);
  auto vx_dot = cx.slice(acc, 0, 1);
  auto vy_dot = cx.slice(acc, 1, 1);
  auto psi_dot_out = cx.slice(acc, 2, 1);
  return detail::integrate_refs(cx, s, vx_dot, vy_dot, psi_dot_out, m.dt);
}

/// One kinematic-variant step: the combo network output, scaled by 10, is
/// (vx_dot, vy_dot, psi_dot); delay nets advance actuation with no
/// parametric term.
template <class Ctx>
StateRefs<Ctx> kinematic_apply(Ctx& cx, const KinematicRefs<Ctx>& m,
                               const StateRefs<Ctx>& s,
                               const ControlRefs<Ctx>& u,
                               KinematicHiddenRefs<Ctx>& h) {
  auto out = kinematic_force_apply(cx, m, s, u, h.combo);

  auto b2 = brake_apply(cx, m.brake, s.brake, u.brake, h.brake, m.dt);
  auto cmd = cx.scale(u.steer, m.max_hand_wheel);
  auto so = steer_apply(cx, m.steer, s.vx, cmd, s.delta, s.delta_dot, h.steer,
                        m.dt, m.max_hand_wheel);
  out.delta = so.delta;
  out.delta_dot = so.delta_dot;
  out.brake = b2;
  return out;
}

// ---------------------------------------------------------------------------
// Eager single-step entry points.

std::pair<VehicleState, HybridHidden> hybrid_step(const HybridModel& m,
                                                  const VehicleState& s,
                                                  const ControlInput& u,
                                                  EnvironmentId env,
                                                  const HybridHidden& h);

std::pair<VehicleState, KinematicHidden> kinematic_variant_step(
    const KinematicModel& m, const VehicleState& s, const ControlInput& u,
    EnvironmentId env, const KinematicHidden& h);

/// Baseline step: vx_dot = C_T*u_t - C_B*b_u*sgn(vx) - C_V*vx with the brake
/// term zeroed inside the speed deadband; vy forced to zero; parametric-only
/// actuation lag.
VehicleState parametric_step(const ParametricModel& m, const VehicleState& s,
                             const ControlInput& u, double dt);

// ---------------------------------------------------------------------------
// Zero-state and history helpers shared by training and rollout.

HybridHidden make_hidden(const HybridModel& m);
KinematicHidden make_hidden(const KinematicModel& m);

/// Initializer input vectors for one logged history step, per network. The
/// terradynamics initializer receives the commanded throttle in the slot the
/// predictor reserves for the engine-force estimate.
std::vector<double> brake_history_input(const VehicleState& s,
                                        const ControlInput& u);
std::vector<double> steer_history_input(const VehicleState& s,
                                        const ControlInput& u,
                                        const ParametricConstants& c);
std::vector<double> engine_history_input(const VehicleState& s,
                                         const ControlInput& u);
std::vector<double> terra_history_input(const VehicleState& s,
                                        const ControlInput& u,
                                        const ParametricConstants& c);
std::vector<double> combo_history_input(const VehicleState& s,
                                        const ControlInput& u,
                                        EnvironmentId env);

/// Seed the predictor states by running every initializer over the history
/// (init_forward once per network).
HybridHidden init_hidden(const HybridModel& m,
                         std::span<const VehicleState> states,
                         std::span<const ControlInput> controls,
                         EnvironmentId env);
KinematicHidden init_hidden(const KinematicModel& m,
                            std::span<const VehicleState> states,
                            std::span<const ControlInput> controls,
                            EnvironmentId env);

}  // namespace vdyn
