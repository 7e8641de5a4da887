#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vdyn/error.hpp"

namespace vdyn {

inline constexpr double kGravity = 9.81;

/// All residual networks end in tanh and their outputs are multiplied by
/// this, chosen as the largest magnitude the corrections are expected to
/// need; it keeps the pre-activation range in [-1, 1].
inline constexpr double kNetOutputScale = 10.0;

/// Planar vehicle state. World frame is z-up with x forward at psi = 0 and
/// y to the left; psi is the heading, wrapped to (-pi, pi]. Velocities are
/// body-frame. delta is the hand-wheel steering angle in rad (road-wheel
/// angle is delta / wheel_divisor), brake is the normalized brake actuator
/// position in [0, 1]. roll/pitch are exogenous terrain attitude.
template <typename T>
struct VehicleStateT {
  T x = 0;
  T y = 0;
  T psi = 0;
  T vx = 0;
  T vy = 0;
  T psi_dot = 0;
  T roll = 0;
  T pitch = 0;
  T delta = 0;
  T delta_dot = 0;
  T brake = 0;
};

using VehicleState = VehicleStateT<double>;
using VehicleStateF = VehicleStateT<float>;

template <typename T, typename U>
VehicleStateT<T> state_cast(const VehicleStateT<U>& s) {
  VehicleStateT<T> r;
  r.x = static_cast<T>(s.x);
  r.y = static_cast<T>(s.y);
  r.psi = static_cast<T>(s.psi);
  r.vx = static_cast<T>(s.vx);
  r.vy = static_cast<T>(s.vy);
  r.psi_dot = static_cast<T>(s.psi_dot);
  r.roll = static_cast<T>(s.roll);
  r.pitch = static_cast<T>(s.pitch);
  r.delta = static_cast<T>(s.delta);
  r.delta_dot = static_cast<T>(s.delta_dot);
  r.brake = static_cast<T>(s.brake);
  return r;
}

/// Driver command. throttle and brake are normalized [0, 1], steer is the
/// normalized hand-wheel command in [-1, 1] (scaled to rad by the actuation
/// model via max_hand_wheel()).
struct ControlInput {
  double throttle = 0;
  double brake = 0;
  double steer = 0;
};

/// Environment handle. index selects the per-environment terradynamics
/// network; eta() is the scalar environment flag fed to single-network
/// model variants.
struct EnvironmentId {
  int index = 0;

  double eta() const {
    if (index == 0) return 1.0;
    if (index == 1) return -1.0;
    return static_cast<double>(index);
  }

  bool operator==(const EnvironmentId&) const = default;
};

/// Physical constants of the parametric model layer. The delay gains/limits
/// and steer_divisor are fit from data and stay trainable during network
/// training; wheel geometry is measured; the base_* constants belong to the
/// purely parametric baseline model.
struct ParametricConstants {
  double brake_gain = 1.0;        // 1/s, first-order lag gain on brake position error
  double brake_rate_limit = 0.5;  // 1/s, |db/dt| cap
  double steer_gain = 1.0;        // 1/s, lag gain on hand-wheel error
  double steer_rate_limit = 2.0;  // rad/s, |ddelta/dt| cap at the hand wheel
  double wheel_divisor = 16.0;    // hand-wheel angle / road-wheel angle
  double steer_divisor = 16.0;    // divisor inside the parametric yaw-rate tan()
  double wheelbase = 2.72;        // m
  double base_throttle_gain = 4.0;  // m/s^2 per unit throttle (baseline model)
  double base_brake_gain = 10.0;    // m/s^2 per unit brake (baseline model)
  double base_drag_gain = 0.2;      // 1/s linear drag (baseline model)
  double max_road_wheel = 0.5;      // rad, road-wheel clamp
  double dt = 0.02;                 // s, model integration step
  double gravity = kGravity;

  /// Hand-wheel clamp in rad: the road-wheel limit seen through the ratio.
  double max_hand_wheel() const { return max_road_wheel * wheel_divisor; }
};

/// Wrap an angle to (-pi, pi].
template <typename T>
T wrap_angle(T a) {
  T r = std::remainder(a, T(2) * T(M_PI));
  if (r <= T(-M_PI)) r += T(2) * T(M_PI);
  return r;
}

/// Rotate a body-frame velocity into the world frame.
/// Throws NumericError on non-finite input.
std::pair<double, double> body_to_world(double vx, double vy, double psi);

/// Check state invariants (finiteness, brake in [0,1], |delta| within the
/// hand-wheel clamp, psi wrapped). Returns one message per violation; empty
/// means valid. Total: never throws.
std::vector<std::string> validate_state(const VehicleState& s,
                                        const ParametricConstants& c);

}  // namespace vdyn
