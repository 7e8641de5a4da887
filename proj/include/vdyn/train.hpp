#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vdyn/dynamics.hpp"
#include "vdyn/simenv.hpp"

namespace vdyn {

// Multi-step training: window extraction from logs, free-running rollouts
// with teacher-forced controls, the integrated position loss, gradient
// descent over the whole 10-epoch schedule with per-environment
// terradynamics specialization, and the evaluation metrics used by the
// model-comparison tables.

// ---------------------------------------------------------------------------
// Windows.

/// One contiguous log slice: tau history rows feed the initializer
/// networks, the remaining rows are the free-running prediction horizon.
/// The rollout starts from the last history state; the control logged with
/// row (tau - 1 + k) drives prediction step k, whose target is row (tau + k).
struct TrainingWindow {
  std::vector<VehicleState> states;    // tau + horizon rows
  std::vector<ControlInput> controls;  // tau + horizon rows
  int tau = 0;
  EnvironmentId env;
  DriveMode mode = DriveMode::autonomous;
  std::size_t src_row = 0;  // first dataset row, for diagnostics

  int horizon() const { return static_cast<int>(states.size()) - tau; }
  std::span<const VehicleState> horizon_states() const {
    return {states.data() + tau, static_cast<std::size_t>(horizon())};
  }
  /// tau >= 1, horizon >= 1, equal-length rows. Throws DataError.
  void validate() const;
};

/// How a dataset is cut into train/validation/test ranges. Each segment is
/// divided at row boundaries into three contiguous chunks; windows are then
/// extracted inside one chunk only, so overlapping windows stay within one
/// split and no sample row is shared across splits.
struct SplitSpec {
  double train_frac = 0.7;
  double val_frac = 0.15;  // the remainder of each segment is test
  std::uint64_t seed = 0;
  bool shuffle_order = true;  // randomize the chunk order per segment

  void validate() const;  // fractions >= 0, train + val <= 1
};

struct WindowSet {
  std::vector<TrainingWindow> train, val, test;
  std::size_t skipped_segments = 0;  // segments shorter than tau + horizon
};

/// Cut the dataset into windows of tau history + horizon prediction rows,
/// advancing by stride rows between window starts. Windows never span a
/// segment boundary or a split cut. Throws ConfigError on bad sizes,
/// DataError when a window would mix environments or drive modes.
WindowSet slice_windows(const Dataset& d, int tau, int horizon, int stride,
                        const SplitSpec& split);

// ---------------------------------------------------------------------------
// Integrated loss.

enum class StepWeighting { mean, terminal };

struct LossConfig {
  double position_weight = 1.0;
  double yaw_weight = 0.1;
  double velocity_weight = 0.1;
  double velocity_gate = 1.0;  // m/s; |vx error| below this is not penalized
  StepWeighting weighting = StepWeighting::mean;

  void validate() const;  // weights >= 0, gate > 0
};

/// Per-term weighted means plus the authoritative total. The total is the
/// single scalar the optimizer sees; the components are reported separately
/// for the loss curves and may differ from their sum in the last ulp.
struct LossTerms {
  double position = 0;
  double yaw = 0;
  double velocity = 0;
  double total = 0;
};

/// Mean over steps of squared position error, plus yaw_weight times the
/// squared wrapped yaw error, plus velocity_weight times the squared
/// longitudinal velocity error on steps where it exceeds the gate. With
/// terminal weighting only the last step is scored. Throws ShapeError on
/// length mismatch, DataError when empty.
LossTerms integrated_loss_terms(std::span<const VehicleState> pred,
                                std::span<const VehicleState> truth,
                                const LossConfig& cfg);
double integrated_loss(std::span<const VehicleState> pred,
                       std::span<const VehicleState> truth,
                       const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Training rollouts.

/// Whether the predictor hidden state comes from the initializer networks
/// run over the window history, or starts at zero (the non-initialized
/// model variants).
enum class InitMode { initializer, zero };

/// Free-run the model over the window horizon with teacher-forced controls;
/// returns the horizon() predicted states. Human-mode windows feed the
/// logged delta, delta_dot and brake state each step and never evaluate the
/// delay models. Throws NumericError (with the step index) on divergence.
std::vector<VehicleState> training_rollout(
    const HybridModel& m, const TrainingWindow& w,
    InitMode init = InitMode::initializer);
std::vector<VehicleState> training_rollout(
    const KinematicModel& m, const TrainingWindow& w,
    InitMode init = InitMode::initializer);
std::vector<VehicleState> training_rollout(const ParametricModel& m,
                                           const TrainingWindow& w);

// ---------------------------------------------------------------------------
// Gradients.

/// Flat trainable-parameter index over a model: network arrays first (in
/// visit_params order: brake, steer, engine, terradynamics variants), then
/// the parametric constants. entries[net_params..] are the constants group,
/// which trains at its own learning rate. The index holds pointers into the
/// model; rebuild it whenever the model's structure changes.
struct ModelParamIndex {
  ParamIndex idx;
  std::size_t net_params = 0;  // flat size of the network group
};

ModelParamIndex make_param_index(HybridModel& m, bool include_constants = true);
ModelParamIndex make_param_index(KinematicModel& m);

struct WindowGradResult {
  LossTerms terms;
  bool diverged = false;  // guard tripped; nothing was accumulated
};

/// Record the window rollout and loss on the autodiff tape and accumulate
/// d(loss)/d(param) into grad_accum (size idx.idx.total). terra_slot picks
/// the terradynamics network (-1 = the window's environment index); the
/// shared-phase schedule routes every environment through slot 0.
WindowGradResult window_gradient(const HybridModel& m, const TrainingWindow& w,
                                 const LossConfig& cfg,
                                 const ModelParamIndex& idx,
                                 std::span<double> grad_accum,
                                 InitMode init = InitMode::initializer,
                                 int terra_slot = -1);
WindowGradResult window_gradient(const KinematicModel& m,
                                 const TrainingWindow& w,
                                 const LossConfig& cfg,
                                 const ModelParamIndex& idx,
                                 std::span<double> grad_accum,
                                 InitMode init = InitMode::initializer);

// ---------------------------------------------------------------------------
// Schedule.

struct Schedule {
  int total_epochs = 10;
  /// 1-based epoch at which the shared terradynamics network is deep-copied
  /// per environment; the copies then train only on their own environment's
  /// windows. 8 of 10 leaves the last three epochs specialized.
  int specialize_epoch = 8;
  int batch_size = 64;
  double lr_nets = 1e-3;
  double lr_constants = 1e-4;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  LossConfig loss;
  InitMode init = InitMode::initializer;
  bool train_constants = true;   // hybrid only
  bool specialize = true;        // hybrid only
  bool record_val_each_epoch = true;

  void validate() const;
};

struct LossCurvePoint {
  long step = 0;  // global optimizer step
  int epoch = 0;
  std::string phase;  // "shared" or "specialized"
  LossTerms terms;    // batch mean
  double grad_norm = 0;  // pre-clip global norm
  double constants_drift_pct = 0;  // max |c/c0 - 1| * 100 over the group
};

struct EpochVal {
  int epoch = 0;
  double val_loss = 0;
  std::size_t diverged = 0;
};

struct TrainReport {
  std::vector<LossCurvePoint> curve;
  std::vector<EpochVal> val_curve;
  std::vector<std::string> constant_names;
  std::vector<double> constants_start, constants_final;
  double max_constant_drift_pct = 0;
  std::size_t diverged_windows = 0;
  long adam_steps = 0;
  int specialized_at_epoch = -1;  // -1 = never reached
  /// Deep copy of the model taken just before the terradynamics split, for
  /// frozen-shared-versus-specialized comparisons.
  std::optional<HybridModel> shared_snapshot;
  std::vector<double> val_loss_by_env;  // final model, one entry per slot
};

/// Run the full training schedule in place. Shared phase routes every
/// window through terradynamics slot 0; at the specialization epoch the
/// terra net is copied per environment (engine and delay networks stay
/// shared). Gradients are summed over each batch in window order, scaled to
/// the batch mean, clipped by global norm, and applied with Adam (separate
/// learning rate for the constants group). Fixed seed gives a bitwise
/// deterministic result for any worker count. Throws DataError when the
/// training set is empty or an environment has no training windows.
TrainReport run_schedule(HybridModel& m, const WindowSet& windows,
                         const Schedule& sched);
TrainReport run_schedule(KinematicModel& m, const WindowSet& windows,
                         const Schedule& sched);

/// Line-delimited records, one JSON object per curve point; byte-identical
/// for identical curves. Throws DataError on IO failure.
void write_loss_curve(const std::string& path,
                      std::span<const LossCurvePoint> curve);

// ---------------------------------------------------------------------------
// Evaluation helpers.

struct WindowEvalResult {
  LossTerms mean;          // over the windows that completed
  std::size_t count = 0;   // windows scored
  std::size_t diverged = 0;
};

/// Mean integrated loss over a window set (rollout + loss per window,
/// divergent windows counted and excluded).
WindowEvalResult evaluate_windows(const HybridModel& m,
                                  std::span<const TrainingWindow> ws,
                                  const LossConfig& cfg,
                                  InitMode init = InitMode::initializer);
WindowEvalResult evaluate_windows(const KinematicModel& m,
                                  std::span<const TrainingWindow> ws,
                                  const LossConfig& cfg,
                                  InitMode init = InitMode::initializer);

/// A model whose single shared terradynamics network is duplicated to
/// env_count slots, so shared-phase snapshots can be evaluated per
/// environment. Throws ConfigError unless the model has exactly one terra
/// net and env_count >= 1.
HybridModel broadcast_terra(const HybridModel& m, int env_count);

struct HorizonMetric {
  double horizon_s = 0;
  std::size_t samples = 0;
  double dist_mean = 0, dist_std = 0;  // Euclidean position error, m
  double yaw_mean = 0, yaw_std = 0;    // |wrapped yaw error|, rad
};

/// Position and yaw error sampled at fixed horizons into each rollout
/// (population standard deviation). Horizon h maps to predicted step
/// round(h/dt). Throws DataError when a horizon exceeds a rollout length
/// or the sets are empty, ShapeError on pred/truth count mismatch.
std::vector<HorizonMetric> eval_metrics(
    std::span<const std::vector<VehicleState>> preds,
    std::span<const std::vector<VehicleState>> truths,
    std::span<const double> horizons_s, double dt);

// ---------------------------------------------------------------------------
// Parametric pre-fits.

struct SteeringFitConfig {
  int iterations = 800;
  std::size_t max_rows = 4000;  // deterministic subsample cap
  double lr = 0.02;
  std::uint64_t seed = 0;
  double min_speed = 0.5;     // m/s, rows below carry no yaw information
  double min_yaw_rate = 0.02; // rad/s, require some excitation in the set
};

struct SteeringFitReport {
  double steer_divisor = 0;
  double wheelbase = 0;
  double initial_loss = 0;
  double final_loss = 0;
  std::size_t rows_used = 0;
  int iterations = 0;
  bool converged = false;
};

/// Fit the steering divisor and wheelbase by Adam on the squared error of
/// the parametric yaw rate against the logged one, starting from the values
/// in c. Throws DataError when the log has no usable yaw excitation.
SteeringFitReport fit_steering_constants(const Dataset& d,
                                         const ParametricConstants& c,
                                         const SteeringFitConfig& cfg);

struct BaselineFitReport {
  double throttle_gain = 0;
  double brake_gain = 0;
  double drag_gain = 0;
  double mse = 0;  // on the finite-difference acceleration targets
  std::size_t rows_used = 0;
};

/// Closed-form least squares for the baseline acceleration law
/// vx_dot = throttle_gain * u_t - brake_gain * b * sgn(vx) - drag_gain * vx
/// against finite-difference targets from consecutive in-segment rows.
/// Throws DataError when the regressors are degenerate (a control channel
/// never exercised) or fewer than 10 usable rows exist.
BaselineFitReport fit_parametric_baseline(const Dataset& d);

}  // namespace vdyn
