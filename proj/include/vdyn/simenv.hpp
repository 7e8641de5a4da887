#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vdyn/core.hpp"

namespace vdyn {

// Synthetic ground-truth vehicle: a planar bicycle model with saturating
// tire-slip forces, speed-dependent engine and brake maps, per-environment
// drag, slope coupling, and first-order actuator lags. It integrates at a
// 4x finer step than the logging rate so learned models cannot match it by
// merely sharing the integrator. Everything here is test/data
// infrastructure: the learners never see these equations, only the logs.

/// Per-environment drag and grip coefficients.
struct EnvDrag {
  std::string name;
  double drag_lin = 0.05;   // 1/s, linear rolling drag
  double drag_quad = 0.01;  // 1/m, quadratic aero drag
  double grip = 30.0;       // m/s^2 per saturated slip radian
  double slip_sat = 0.15;   // rad, slip angle where the tire force saturates
};

struct OracleParams {
  // engine: accel = engine_gain * throttle * (1 - vx / top_speed)
  double engine_gain = 5.5;  // m/s^2 at full throttle from rest
  double top_speed = 17.0;   // m/s, engine force crosses zero here
  // brake: decel = brake_coeff * brake_state * tanh(vx / brake_speed_scale)
  double brake_coeff = 9.0;
  double brake_speed_scale = 0.2;
  // actuator lags, autonomous-stack mode
  double auto_brake_gain = 2.0;  // 1/s
  double auto_brake_rate = 0.8;  // 1/s rate limit on brake state
  double auto_steer_gain = 2.5;
  double auto_steer_rate = 6.0;  // rad/s at the hand wheel
  // actuator lags, human mode (a driver works the controls more sharply)
  double human_brake_gain = 3.5;
  double human_brake_rate = 1.6;
  double human_steer_gain = 4.0;
  double human_steer_rate = 9.0;
  // chassis
  double lf = 1.30;          // m, CoG to front axle
  double lr = 1.42;          // m, CoG to rear axle (lf + lr = wheelbase)
  double yaw_inertia = 1.9;  // m, normalized Izz / m
  double yaw_damping = 0.35;
  double vy_damping = 0.6;
  std::vector<EnvDrag> envs{
      {"desert", 0.05, 0.010, 30.0, 0.15},
      {"grassland", 0.35, 0.015, 55.0, 0.12},
  };
  ParametricConstants vehicle;  // dt, wheel divisors, hand-wheel range
};

/// Smooth rolling terrain: roll/pitch as a function of world position, plus
/// constant offsets. The all-defaults profile is flat ground.
struct TerrainProfile {
  double roll_base = 0.0;
  double pitch_base = 0.0;
  double roll_amp = 0.0;
  double roll_wavelength = 40.0;
  double pitch_amp = 0.0;
  double pitch_wavelength = 55.0;

  std::pair<double, double> at(double x, double y) const;  // (roll, pitch)
};

enum class DriveMode { autonomous = 0, human = 1 };

/// Advance the ground-truth vehicle one logging step (four internal
/// sub-steps). Controls are held constant across the sub-steps; roll and
/// pitch are re-sampled from the terrain at each new position. Total and
/// bounded for any finite state. Throws ConfigError on an unknown
/// environment.
VehicleState oracle_step(const OracleParams& p, const VehicleState& s,
                         const ControlInput& u, EnvironmentId env,
                         const TerrainProfile& terrain,
                         DriveMode mode = DriveMode::autonomous);

/// Closed-form steady-state speed for constant throttle on flat ground
/// (root of the engine-drag balance); the oracle must converge to it.
double oracle_steady_speed(const OracleParams& p, EnvironmentId env,
                           double throttle);

/// Odometry corruption model: Gaussian noise on the velocity channels, a
/// low-frequency random-walk drift on position, and occasional small
/// position jumps.
struct NoiseModel {
  double vel_sigma = 0.05;       // m/s, on vx and vy
  double yaw_rate_sigma = 0.01;  // rad/s
  double pos_drift_rate = 0.02;  // m/sqrt(s) random-walk intensity
  double jump_prob = 0.001;      // per logged step, per axis
  double jump_mag = 0.15;        // m, uniform jump half-range
};

/// Column-oriented trajectory log. Rows are uniformly spaced at dt inside a
/// segment; seg_begin marks the first row of each contiguous segment (time
/// is not continuous across segments). When the observed channels have been
/// perturbed, `truth` holds the clean original with identical shape.
struct Dataset {
  double dt = 0.02;
  std::uint64_t seed = 0;
  std::string oracle_hash;  // hash of the generating oracle's parameters

  std::vector<double> t, x, y, psi, vx, vy, psi_dot, roll, pitch, delta,
      delta_dot, brake_state, u_throttle, u_brake, u_steer;
  std::vector<int> env_id, mode;
  std::vector<std::size_t> seg_begin;

  std::shared_ptr<const Dataset> truth;

  std::size_t size() const { return t.size(); }
  VehicleState state_at(std::size_t i) const;
  ControlInput control_at(std::size_t i) const;
  void append(double time, const VehicleState& s, const ControlInput& u,
              EnvironmentId env, DriveMode m);
  /// Largest |vx| in the log (0 for an empty log).
  double max_speed() const;
};

/// Deterministic driver policies for dataset generation.
struct DriverPolicy {
  enum class Kind { step_throttle, sine_steer, brake_test, pursuit };
  Kind kind = Kind::pursuit;
  DriveMode mode = DriveMode::autonomous;
  // sine_steer
  double steer_amp = 0.6;    // normalized command amplitude
  double steer_period = 6.0; // s
  double base_throttle = 0.4;
  // pursuit
  double speed_cap = 10.0;      // m/s
  double course_extent = 60.0;  // m, half-size of the waypoint box
};

/// Roll the oracle under a driver policy for `duration` seconds starting at
/// rest, logging one row per dt (the state and the controls that produced
/// the step away from it). Deterministic per seed. Throws DataError when
/// duration is not positive, ConfigError on an unknown environment.
Dataset generate_dataset(const OracleParams& p, const DriverPolicy& policy,
                         double duration, EnvironmentId env,
                         std::uint64_t seed,
                         const TerrainProfile& terrain = {});

/// Apply the noise model to the observed channels (x, y, vx, vy, psi_dot)
/// and keep the clean copy in `truth`. Deterministic per seed. Throws
/// ConfigError on negative noise parameters.
Dataset perturb_odometry(const Dataset& d, const NoiseModel& n,
                         std::uint64_t seed);

/// Concatenate `tail` onto `d` as a new segment. Throws DataError on dt
/// mismatch or when either dataset carries a truth companion (append clean
/// data first, perturb afterwards).
void append_segment(Dataset& d, const Dataset& tail);

/// Persistence. base_path names a file set: "<base>.csv" holds the observed
/// channels, "<base>.truth.csv" the companion clean copy when present, and
/// "<base>.meta.json" the schema version, dt, seed, oracle hash and segment
/// table. Round trips are bitwise exact. Throws DataError on IO failure,
/// schema-version mismatch, malformed rows, or truncation.
void save_dataset(const Dataset& d, const std::string& base_path);
Dataset load_dataset(const std::string& base_path);

/// Stable content hash of the oracle parameters (hex string).
std::string oracle_params_hash(const OracleParams& p);

}  // namespace vdyn
