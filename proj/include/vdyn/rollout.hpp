#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vdyn/dynamics.hpp"

namespace vdyn {

// Batched trajectory sampling engine. Rollout arithmetic is single
// precision: the caller casts a trained model down once (hybrid_cast /
// kinematic_cast) and the engine free-runs N samples of T steps each from a
// shared start state and a shared initializer output. Every sample is a
// pure function of (model, seed, start, its control sequence), so results
// are bitwise identical for any worker count; an OpenMP path and a serial
// reference path run the same per-sample kernel and are compared in tests
// and in the benchmark tool.

// ---------------------------------------------------------------------------
// Shared initializer output.

/// Run every sub-network's initializer once over the history and return the
/// predictor seed state shared by all samples of a batch. Same history
/// construction as training; the initializer math runs in single precision
/// on the already-cast model. Throws DataError on an empty history,
/// ConfigError on a bad environment index.
HybridHiddenF shared_init(const HybridModelF& m,
                          std::span<const VehicleState> states,
                          std::span<const ControlInput> controls,
                          EnvironmentId env);
KinematicHiddenF shared_init(const KinematicModelF& m,
                             std::span<const VehicleState> states,
                             std::span<const ControlInput> controls,
                             EnvironmentId env);

/// Cold-start seeds (all-zero hidden/cell), for models without an
/// initializer network.
HybridHiddenF zero_init(const HybridModelF& m);
KinematicHiddenF zero_init(const KinematicModelF& m);

// ---------------------------------------------------------------------------
// Batch description and results.

/// Parametric rollouts carry no hidden state.
struct ParametricSeed {};

/// One batch: N control sequences sharing a start state and one
/// initializer output.
template <typename Seed>
struct RolloutBatchT {
  VehicleState start;
  EnvironmentId env;
  Seed seed{};
  std::vector<std::vector<ControlInput>> controls;  // N sequences, equal T

  std::size_t samples() const { return controls.size(); }
  std::size_t horizon() const {
    return controls.empty() ? 0 : controls.front().size();
  }
  /// N >= 1, T >= 1, all sequences the same length. Throws ConfigError /
  /// ShapeError.
  void validate() const {
    if (controls.empty()) {
      throw ConfigError("rollout batch has no control sequences");
    }
    const std::size_t t = controls.front().size();
    if (t == 0) throw ConfigError("rollout batch has a zero-length horizon");
    for (const auto& seq : controls) {
      if (seq.size() != t) {
        throw ShapeError("rollout batch control sequences differ in length");
      }
    }
  }
};

using HybridBatch = RolloutBatchT<HybridHiddenF>;
using KinematicBatch = RolloutBatchT<KinematicHiddenF>;
using ParametricBatch = RolloutBatchT<ParametricSeed>;

/// N x T trajectories, flat row-major: sample i's step k lives at
/// states[i * t + k]. A sample that trips a numeric guard at step k is
/// flagged with diverged_at[i] = k and its remaining slots repeat the last
/// valid state, so downstream cost math stays total.
struct BatchTrajectories {
  std::size_t n = 0;
  std::size_t t = 0;
  std::vector<VehicleStateF> states;
  std::vector<long> diverged_at;  // per sample; -1 = clean
  std::size_t diverged = 0;

  std::span<const VehicleStateF> sample(std::size_t i) const {
    return {states.data() + i * t, t};
  }
};

// ---------------------------------------------------------------------------
// Batch rollout. workers <= 0 means all available cores; the serial_*
// variants are the plain-loop reference implementations used to check the
// parallel path bitwise.

BatchTrajectories batch_rollout(const HybridModelF& m, const HybridBatch& b,
                                int workers);
BatchTrajectories batch_rollout(const KinematicModelF& m,
                                const KinematicBatch& b, int workers);
BatchTrajectories batch_rollout(const ParametricModel& m,
                                const ParametricBatch& b, int workers);

BatchTrajectories serial_batch_rollout(const HybridModelF& m,
                                       const HybridBatch& b);
BatchTrajectories serial_batch_rollout(const KinematicModelF& m,
                                       const KinematicBatch& b);
BatchTrajectories serial_batch_rollout(const ParametricModel& m,
                                       const ParametricBatch& b);

// ---------------------------------------------------------------------------
// MPPI controller.

struct MppiConfig {
  std::size_t samples = 18432;
  int horizon = 250;
  double lambda = 1.0;  // softmin temperature
  // Exploration noise std-dev per channel.
  double sigma_throttle = 0.3;
  double sigma_brake = 0.3;
  double sigma_steer = 0.25;
  // Command bounds (clamped after perturbation and after the update).
  std::array<double, 2> throttle_bounds{0.0, 1.0};
  std::array<double, 2> brake_bounds{0.0, 1.0};
  std::array<double, 2> steer_bounds{-1.0, 1.0};
  int iterations = 1;  // optimization passes per replan
  std::uint64_t seed = 0;
  int workers = 0;  // <= 0: all cores

  void validate() const;  // throws ConfigError
};

/// Scalar cost >= 0 over one predicted trajectory.
using TrajectoryCost = std::function<double(std::span<const VehicleStateF>)>;

struct MppiDiagnostics {
  double best_cost = 0;
  double mean_cost = 0;
  long best_index = -1;
  double ess = 0;  // effective sample size, 1/sum(w^2)
  std::size_t diverged = 0;
  std::vector<double> costs;    // per sample (diverged replaced by 1e9)
  std::vector<double> weights;  // normalized softmin weights, sum 1
};

struct MppiResult {
  std::vector<ControlInput> nominal;  // updated plan, length = cfg.horizon
  MppiDiagnostics diag;               // from the last iteration
};

inline constexpr double kDivergedCost = 1e9;

/// One MPPI replan: perturb the nominal plan with clamped Gaussian noise,
/// roll all samples from `state` with the shared initializer output over
/// `history`, softmin-weight the sample costs and apply the weighted-noise
/// update. Diverged samples stay in the weight math at cost 1e9. Throws
/// NumericError when every sample diverged, ConfigError on bad
/// configuration or a cost function returning a negative/non-finite value.
MppiResult mppi_step(const MppiConfig& cfg, const HybridModelF& m,
                     const VehicleState& state,
                     std::span<const VehicleState> hist_states,
                     std::span<const ControlInput> hist_controls,
                     std::span<const ControlInput> nominal,
                     const TrajectoryCost& cost, EnvironmentId env);
MppiResult mppi_step(const MppiConfig& cfg, const KinematicModelF& m,
                     const VehicleState& state,
                     std::span<const VehicleState> hist_states,
                     std::span<const ControlInput> hist_controls,
                     std::span<const ControlInput> nominal,
                     const TrajectoryCost& cost, EnvironmentId env);
/// Parametric baseline: no history, no hidden state.
MppiResult mppi_step(const MppiConfig& cfg, const ParametricModel& m,
                     const VehicleState& state,
                     std::span<const ControlInput> nominal,
                     const TrajectoryCost& cost);

// ---------------------------------------------------------------------------
// Benchmarking and memory accounting.

struct ThroughputReport {
  std::string model;  // short descriptor, e.g. "hybrid[terra 10x10]"
  std::size_t n = 0;
  int t = 0;
  int workers = 0;
  int reps = 0;
  double median_ms = 0, min_ms = 0, max_ms = 0;  // per timed iteration
  double steps_per_s = 0;  // n * t / median iteration time
  // Equivalent full-scale MPPI rate at N=18432, T=250, for context next to
  // reference GPU figures at that sampling scale.
  double full_scale_iters_per_s = 0;
  std::size_t scratch_bytes = 0;
  std::size_t param_bytes = 0;

  /// One line-delimited JSON record.
  std::string to_record() const;
};

/// Median of `reps` timed batch rollouts (N x T) after one warm-up pass.
/// workers == 0 uses every core, workers < 0 times the serial reference
/// implementation instead of the OpenMP path (reported as workers = -1).
/// Requires reps >= 5 so the median is meaningful; throws BenchError
/// otherwise.
ThroughputReport bench_throughput(const HybridModelF& m, std::size_t n, int t,
                                  int workers, int reps = 5);
ThroughputReport bench_throughput(const KinematicModelF& m, std::size_t n,
                                  int t, int workers, int reps = 5);
ThroughputReport bench_throughput(const ParametricModel& m, std::size_t n,
                                  int t, int workers, int reps = 5);

/// Closed-form per-sample arena usage (in floats) of one predictor step of
/// one network: the LSTM advance, the hidden/input concat and the output
/// net, mirroring the op schedule in net.hpp. Zero-size architectures cost
/// zero.
std::size_t predict_scratch_floats(const NetArch& arch);

struct MemoryReport {
  std::size_t param_bytes = 0;       // every weight, as floats
  std::size_t pred_param_bytes = 0;  // predictor-side weights only
  std::size_t hidden_floats = 0;     // persistent h/c per sample
  std::size_t step_floats = 0;       // arena usage of one step, closed form
  std::size_t state_floats = 0;      // the carried vehicle state
  std::size_t scratch_bytes = 0;     // (hidden + state + step) * sizeof(float)

  std::string to_string() const;
};

/// Deterministic closed-form accounting of the per-sample memory a batch
/// rollout touches: persistent hidden state, the carried vehicle state and
/// the exact arena high-water mark of one step. Tests cross-check the
/// formula against a measured step.
MemoryReport memory_report(const HybridModelF& m);
MemoryReport memory_report(const KinematicModelF& m);
MemoryReport memory_report(const ParametricModel& m);

}  // namespace vdyn
