#pragma once

#include <span>
#include <vector>

#include "vdyn/core.hpp"
#include "vdyn/net.hpp"

namespace vdyn {

// Actuation delay models. The physical actuators (brake cylinder, steering
// column motor) track their commands with significant lag; each is modeled
// as a rate-limited first-order parametric lag plus a learned residual
// network, so the parametric part carries the bulk of the behavior and the
// network only corrects it. A purely learned variant (parametric_assist =
// false) predicts the rate directly; it exists for the baseline comparison
// models.

/// One actuator's delay model. gain and rate_limit are fit from data before
/// network training and may remain trainable afterwards.
template <typename T>
struct DelayModelT {
  double gain = 1.0;        // 1/s
  double rate_limit = 0.5;  // units of the actuator state per second
  InitializedLstmT<T> net;
  bool parametric_assist = true;
  bool train_constants = true;
};

using DelayModel = DelayModelT<double>;
using DelayModelF = DelayModelT<float>;

template <typename T, typename U>
DelayModelT<T> delay_cast(const DelayModelT<U>& m) {
  return {m.gain, m.rate_limit, net_cast<T>(m.net), m.parametric_assist,
          m.train_constants};
}

/// Parametric lag rate: clamp((cmd - state) * gain, -limit, +limit).
double brake_parametric(double u_b, double b_u, double gain, double limit);
double steer_parametric(double u_delta, double delta, double gain,
                        double limit);

// ---------------------------------------------------------------------------
// Generic single-step updates, usable with EagerCtx<T> and TapeCtx. All
// scalars are length-1 vectors of the context.

template <class Ctx>
struct DelayRefs {
  InitLstmRef<Ctx> net;
  typename Ctx::V gain, rate_limit;
  bool parametric_assist = true;
};

template <typename T>
DelayRefs<EagerCtx<T>> make_ref(EagerCtx<T>& cx, const DelayModelT<T>& m) {
  return {make_ref(cx, m.net), cx.scalar(m.gain), cx.scalar(m.rate_limit),
          m.parametric_assist};
}

inline DelayRefs<TapeCtx> make_ref(TapeCtx& cx, const DelayModel& m,
                                   const ParamIndex* idx) {
  return {make_ref(cx, m.net, idx), detail::tape_scalar(cx, m.gain, idx),
          detail::tape_scalar(cx, m.rate_limit, idx), m.parametric_assist};
}

/// Advance the brake state one step. Network inputs (b_u, u_b, p_b) with
/// parametric assist, (b_u, u_b) without. Returns the new brake state;
/// hidden is advanced in place.
template <class Ctx>
typename Ctx::V brake_apply(Ctx& cx, const DelayRefs<Ctx>& m,
                            typename Ctx::V b, typename Ctx::V u_b,
                            LstmStateRef<Ctx>& hidden, double dt) {
  typename Ctx::V rate;
  if (m.parametric_assist) {
    auto raw = cx.mul(cx.sub(u_b, b), m.gain);
    auto p = cx.clamp(raw, cx.scale(m.rate_limit, -1.0), m.rate_limit);
    auto zin = cx.concat(cx.concat(b, u_b), p);
    auto [z, h2] = predict_apply(cx, m.net, zin, hidden);
    hidden = h2;
    rate = cx.add(p, cx.scale(z, kNetOutputScale));
  } else {
    auto zin = cx.concat(b, u_b);
    auto [z, h2] = predict_apply(cx, m.net, zin, hidden);
    hidden = h2;
    rate = cx.scale(z, kNetOutputScale);
  }
  auto b2 = cx.add(b, cx.scale(rate, dt));
  return cx.clamp(b2, cx.scalar(0.0), cx.scalar(1.0));
}

template <class Ctx>
struct SteerOut {
  typename Ctx::V delta, delta_dot;
};

/// Advance the hand-wheel angle one step. cmd is the command already scaled
/// to hand-wheel radians. Network inputs (vx, cmd, delta, delta_dot, p_delta)
/// with parametric assist, (vx, cmd, delta, delta_dot) without. The new
/// angle is clamped to +-max_hand_wheel.
template <class Ctx>
SteerOut<Ctx> steer_apply(Ctx& cx, const DelayRefs<Ctx>& m, typename Ctx::V vx,
                          typename Ctx::V cmd, typename Ctx::V delta,
                          typename Ctx::V delta_dot, LstmStateRef<Ctx>& hidden,
                          double dt, double max_hand_wheel) {
  typename Ctx::V rate;
  auto base = cx.concat(cx.concat(vx, cmd), cx.concat(delta, delta_dot));
  if (m.parametric_assist) {
    auto raw = cx.mul(cx.sub(cmd, delta), m.gain);
    auto p = cx.clamp(raw, cx.scale(m.rate_limit, -1.0), m.rate_limit);
    auto [z, h2] = predict_apply(cx, m.net, cx.concat(base, p), hidden);
    hidden = h2;
    rate = cx.add(p, cx.scale(z, kNetOutputScale));
  } else {
    auto [z, h2] = predict_apply(cx, m.net, base, hidden);
    hidden = h2;
    rate = cx.scale(z, kNetOutputScale);
  }
  auto d2 = cx.add(delta, cx.scale(rate, dt));
  auto d = cx.clamp(d2, cx.scalar(-max_hand_wheel), cx.scalar(max_hand_wheel));
  return {d, rate};
}

// ---------------------------------------------------------------------------
// Eager single-call wrappers over VehicleState (tests and diagnostics; the
// rollout engine drives the generic forms directly).

struct BrakeStepResult {
  double brake;
  LstmState hidden;
};
/// Throws NumericError if the updated state is non-finite.
BrakeStepResult brake_step(const VehicleState& s, const ControlInput& u,
                           const DelayModel& m, const LstmState& hidden,
                           const ParametricConstants& c);

struct SteerStepResult {
  double delta;
  double delta_dot;
  LstmState hidden;
};
SteerStepResult steer_step(const VehicleState& s, const ControlInput& u,
                           const DelayModel& m, const LstmState& hidden,
                           const ParametricConstants& c);

// ---------------------------------------------------------------------------
// Parametric pre-fit.

/// One logged actuation sequence: the command and the measured actuator
/// state, both in the actuator's own units and sampled at fixed dt.
struct DelaySeries {
  std::vector<double> cmd;
  std::vector<double> actual;
};

struct DelayFitConfig {
  double dt = 0.02;
  double init_gain = 1.0;
  double init_limit = 0.5;
  int iterations = 600;
  double lr = 0.05;
};

struct DelayFitReport {
  double gain = 0;
  double rate_limit = 0;
  double initial_loss = 0;
  double final_loss = 0;
  int iterations = 0;
  bool converged = false;
  /// Loss gradient vanished at the start: the data never exercises the lag
  /// (command pinned to the state), so gain and limit are unconstrained.
  bool unidentifiable = false;
};

/// Fit gain and rate limit of the purely parametric lag by Adam on the
/// one-step-ahead MSE against logged actuator states. Networks are not
/// involved. Throws DataError when no series has at least two samples.
DelayFitReport fit_delay_constants(std::span<const DelaySeries> series,
                                   const DelayFitConfig& cfg);

}  // namespace vdyn
