#include "vdyn/rollout.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <type_traits>
#include <utility>

#include "json.hpp"
#include "vdyn/rng.hpp"

namespace vdyn {

namespace {

std::vector<float> to_float(const std::vector<double>& v) {
  return std::vector<float>(v.begin(), v.end());
}

LstmStateF zero_state(int hidden) {
  auto n = static_cast<std::size_t>(hidden);
  return {std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f)};
}

void check_history(std::span<const VehicleState> states,
                   std::span<const ControlInput> controls) {
  if (states.empty()) throw DataError("shared_init: empty history");
  if (states.size() != controls.size()) {
    throw DataError("shared_init: history states/controls length mismatch");
  }
}

void check_seed(const LstmStateT<float>& s, int hidden, const char* name) {
  if (static_cast<int>(s.h.size()) != hidden ||
      static_cast<int>(s.c.size()) != hidden) {
    throw ShapeError(std::string("rollout seed for the ") + name +
                     " network does not match its predictor width");
  }
}

bool finite_state(const VehicleStateF& s) {
  return std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.psi) &&
         std::isfinite(s.vx) && std::isfinite(s.vy) &&
         std::isfinite(s.psi_dot) && std::isfinite(s.roll) &&
         std::isfinite(s.pitch) && std::isfinite(s.delta) &&
         std::isfinite(s.delta_dot) && std::isfinite(s.brake);
}

using Cx = EagerCtx<float>;

VehicleStateF read_state_f(const StateRefs<Cx>& r) {
  VehicleStateF s;
  s.x = r.x[0];
  s.y = r.y[0];
  s.psi = r.psi[0];
  s.vx = r.vx[0];
  s.vy = r.vy[0];
  s.psi_dot = r.psi_dot[0];
  s.roll = r.roll[0];
  s.pitch = r.pitch[0];
  s.delta = r.delta[0];
  s.delta_dot = r.delta_dot[0];
  s.brake = r.brake[0];
  return s;
}

void copy_span(std::vector<float>& dst, std::span<const float> src) {
  dst.assign(src.begin(), src.end());
}

// One worker's scratch: the ref arena holds the zero-copy model views and
// constant scalars for the whole batch; the step arena is reset every step.
// Hidden states live in worker-owned vectors because the arena reset
// invalidates the spans predict_apply returned.
struct HybridWorker {
  Arena<float> ref_arena;
  Arena<float> step_arena;
  Cx cx;
  HybridRefs<Cx> refs;
  LstmStateF brake, steer, engine, terra;

  HybridWorker(const HybridModelF& m, EnvironmentId env)
      : cx(ref_arena), refs(make_ref(cx, m, env)) {
    cx.arena = &step_arena;
  }

  void load(const HybridHiddenF& seed) {
    brake = seed.brake;
    steer = seed.steer;
    engine = seed.engine;
    terra = seed.terra;
  }

  // Free-run one sample; returns the step at which it diverged, -1 if clean.
  long run(const HybridHiddenF& seed, const VehicleStateF& start,
           std::span<const ControlInput> controls, VehicleStateF* out) {
    load(seed);
    VehicleStateF s = start;
    const long t = static_cast<long>(controls.size());
    for (long k = 0; k < t; ++k) {
      step_arena.reset();
      auto sr = make_state_refs(cx, s);
      const ControlInput& u = controls[static_cast<std::size_t>(k)];
      ControlRefs<Cx> ur{cx.scalar(u.throttle), cx.scalar(u.brake),
                         cx.scalar(u.steer)};
      HybridHiddenRefs<Cx> hr{{cx.view(brake.h), cx.view(brake.c)},
                              {cx.view(steer.h), cx.view(steer.c)},
                              {cx.view(engine.h), cx.view(engine.c)},
                              {cx.view(terra.h), cx.view(terra.c)}};
      try {
        auto nr = hybrid_apply(cx, refs, sr, ur, hr);
        VehicleStateF ns = read_state_f(nr);
        if (!finite_state(ns)) {
          throw NumericError("rollout produced a non-finite state",
                             static_cast<int>(k));
        }
        copy_span(brake.h, hr.brake.h);
        copy_span(brake.c, hr.brake.c);
        copy_span(steer.h, hr.steer.h);
        copy_span(steer.c, hr.steer.c);
        copy_span(engine.h, hr.engine.h);
        copy_span(engine.c, hr.engine.c);
        copy_span(terra.h, hr.terra.h);
        copy_span(terra.c, hr.terra.c);
        s = ns;
      } catch (const NumericError&) {
        for (long j = k; j < t; ++j) out[j] = s;  // hold the last valid state
        return k;
      }
      out[k] = s;
    }
    return -1;
  }
};

struct KinematicWorker {
  Arena<float> ref_arena;
  Arena<float> step_arena;
  Cx cx;
  KinematicRefs<Cx> refs;
  LstmStateF combo, brake, steer;

  KinematicWorker(const KinematicModelF& m, EnvironmentId env)
      : cx(ref_arena), refs(make_ref(cx, m, env)) {
    cx.arena = &step_arena;
  }

  void load(const KinematicHiddenF& seed) {
    combo = seed.combo;
    brake = seed.brake;
    steer = seed.steer;
  }

  long run(const KinematicHiddenF& seed, const VehicleStateF& start,
           std::span<const ControlInput> controls, VehicleStateF* out) {
    load(seed);
    VehicleStateF s = start;
    const long t = static_cast<long>(controls.size());
    for (long k = 0; k < t; ++k) {
      step_arena.reset();
      auto sr = make_state_refs(cx, s);
      const ControlInput& u = controls[static_cast<std::size_t>(k)];
      ControlRefs<Cx> ur{cx.scalar(u.throttle), cx.scalar(u.brake),
                         cx.scalar(u.steer)};
      KinematicHiddenRefs<Cx> hr{{cx.view(combo.h), cx.view(combo.c)},
                                 {cx.view(brake.h), cx.view(brake.c)},
                                 {cx.view(steer.h), cx.view(steer.c)}};
      try {
        auto nr = kinematic_apply(cx, refs, sr, ur, hr);
        VehicleStateF ns = read_state_f(nr);
        if (!finite_state(ns)) {
          throw NumericError("rollout produced a non-finite state",
                             static_cast<int>(k));
        }
        copy_span(combo.h, hr.combo.h);
        copy_span(combo.c, hr.combo.c);
        copy_span(brake.h, hr.brake.h);
        copy_span(brake.c, hr.brake.c);
        copy_span(steer.h, hr.steer.h);
        copy_span(steer.c, hr.steer.c);
        s = ns;
      } catch (const NumericError&) {
        for (long j = k; j < t; ++j) out[j] = s;
        return k;
      }
      out[k] = s;
    }
    return -1;
  }
};

// The baseline steps in double (its native arithmetic; there is no network
// math to amortize) and stores the trajectory in the shared float layout.
struct ParametricWorker {
  const ParametricModel* m;

  explicit ParametricWorker(const ParametricModel& model, EnvironmentId)
      : m(&model) {}

  long run(const ParametricSeed&, const VehicleState& start,
           std::span<const ControlInput> controls, VehicleStateF* out) {
    VehicleState s = start;
    const long t = static_cast<long>(controls.size());
    for (long k = 0; k < t; ++k) {
      try {
        s = parametric_step(*m, s, controls[static_cast<std::size_t>(k)],
                            m->constants.dt);
      } catch (const NumericError&) {
        auto held = state_cast<float>(s);
        for (long j = k; j < t; ++j) out[j] = held;
        return k;
      }
      out[k] = state_cast<float>(s);
    }
    return -1;
  }
};

template <class Worker, class Model, class Seed>
BatchTrajectories rollout_impl(const Model& m, const RolloutBatchT<Seed>& b,
                               int workers, bool parallel) {
  b.validate();
  BatchTrajectories r;
  r.n = b.samples();
  r.t = b.horizon();
  r.states.resize(r.n * r.t);
  r.diverged_at.assign(r.n, -1);

  // Surface model/environment problems here, on one thread, so worker
  // construction inside the parallel region cannot throw.
  {
    Worker probe(m, b.env);
    (void)probe;
  }

  if constexpr (std::is_same_v<Worker, ParametricWorker>) {
    const VehicleState start = b.start;
    if (parallel) {
      const int nw = workers <= 0 ? omp_get_max_threads() : workers;
#pragma omp parallel num_threads(nw)
      {
        Worker w(m, b.env);
#pragma omp for schedule(dynamic)
        for (long i = 0; i < static_cast<long>(r.n); ++i) {
          auto iu = static_cast<std::size_t>(i);
          r.diverged_at[iu] =
              w.run(b.seed, start, b.controls[iu], &r.states[iu * r.t]);
        }
      }
    } else {
      Worker w(m, b.env);
      for (std::size_t i = 0; i < r.n; ++i) {
        r.diverged_at[i] =
            w.run(b.seed, start, b.controls[i], &r.states[i * r.t]);
      }
    }
  } else {
    const VehicleStateF start = state_cast<float>(b.start);
    if (parallel) {
      const int nw = workers <= 0 ? omp_get_max_threads() : workers;
#pragma omp parallel num_threads(nw)
      {
        Worker w(m, b.env);
#pragma omp for schedule(dynamic)
        for (long i = 0; i < static_cast<long>(r.n); ++i) {
          auto iu = static_cast<std::size_t>(i);
          r.diverged_at[iu] =
              w.run(b.seed, start, b.controls[iu], &r.states[iu * r.t]);
        }
      }
    } else {
      Worker w(m, b.env);
      for (std::size_t i = 0; i < r.n; ++i) {
        r.diverged_at[i] =
            w.run(b.seed, start, b.controls[i], &r.states[i * r.t]);
      }
    }
  }

  r.diverged = static_cast<std::size_t>(
      std::count_if(r.diverged_at.begin(), r.diverged_at.end(),
                    [](long d) { return d >= 0; }));
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Shared initializer output.

HybridHiddenF shared_init(const HybridModelF& m,
                          std::span<const VehicleState> states,
                          std::span<const ControlInput> controls,
                          EnvironmentId env) {
  validate_model(m);
  if (env.index < 0 || env.index >= static_cast<int>(m.terra.size())) {
    throw ConfigError("hybrid model: unknown environment index " +
                      std::to_string(env.index));
  }
  check_history(states, controls);
  std::vector<std::vector<float>> hb, hs, he, ht;
  hb.reserve(states.size());
  hs.reserve(states.size());
  he.reserve(states.size());
  ht.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    hb.push_back(to_float(brake_history_input(states[i], controls[i])));
    hs.push_back(
        to_float(steer_history_input(states[i], controls[i], m.constants)));
    he.push_back(to_float(engine_history_input(states[i], controls[i])));
    ht.push_back(
        to_float(terra_history_input(states[i], controls[i], m.constants)));
  }
  HybridHiddenF h;
  h.brake = init_forward(m.brake.net, hb);
  h.steer = init_forward(m.steer.net, hs);
  h.engine = init_forward(m.engine, he);
  h.terra = init_forward(m.terra[static_cast<std::size_t>(env.index)], ht);
  return h;
}

KinematicHiddenF shared_init(const KinematicModelF& m,
                             std::span<const VehicleState> states,
                             std::span<const ControlInput> controls,
                             EnvironmentId env) {
  validate_model(m);
  check_history(states, controls);
  std::vector<std::vector<float>> hc, hb, hs;
  hc.reserve(states.size());
  hb.reserve(states.size());
  hs.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    hc.push_back(to_float(combo_history_input(states[i], controls[i], env)));
    hb.push_back(to_float(brake_history_input(states[i], controls[i])));
    hs.push_back(
        to_float(steer_history_input(states[i], controls[i], m.constants)));
  }
  KinematicHiddenF h;
  h.combo = init_forward(m.combo, hc);
  h.brake = init_forward(m.brake.net, hb);
  h.steer = init_forward(m.steer.net, hs);
  return h;
}

HybridHiddenF zero_init(const HybridModelF& m) {
  HybridHiddenF h;
  h.brake = zero_state(m.brake.net.pred_lstm.hidden);
  h.steer = zero_state(m.steer.net.pred_lstm.hidden);
  h.engine = zero_state(m.engine.pred_lstm.hidden);
  h.terra = zero_state(m.terra.empty() ? 0 : m.terra.front().pred_lstm.hidden);
  return h;
}

KinematicHiddenF zero_init(const KinematicModelF& m) {
  KinematicHiddenF h;
  h.combo = zero_state(m.combo.pred_lstm.hidden);
  h.brake = zero_state(m.brake.net.pred_lstm.hidden);
  h.steer = zero_state(m.steer.net.pred_lstm.hidden);
  return h;
}

// ---------------------------------------------------------------------------
// Batch rollout.

BatchTrajectories batch_rollout(const HybridModelF& m, const HybridBatch& b,
                                int workers) {
  check_seed(b.seed.brake, m.brake.net.pred_lstm.hidden, "brake");
  check_seed(b.seed.steer, m.steer.net.pred_lstm.hidden, "steer");
  check_seed(b.seed.engine, m.engine.pred_lstm.hidden, "engine");
  if (b.env.index >= 0 && b.env.index < static_cast<int>(m.terra.size())) {
    check_seed(b.seed.terra,
               m.terra[static_cast<std::size_t>(b.env.index)].pred_lstm.hidden,
               "terradynamics");
  }
  return rollout_impl<HybridWorker>(m, b, workers, true);
}

BatchTrajectories batch_rollout(const KinematicModelF& m,
                                const KinematicBatch& b, int workers) {
  check_seed(b.seed.combo, m.combo.pred_lstm.hidden, "combo");
  check_seed(b.seed.brake, m.brake.net.pred_lstm.hidden, "brake");
  check_seed(b.seed.steer, m.steer.net.pred_lstm.hidden, "steer");
  return rollout_impl<KinematicWorker>(m, b, workers, true);
}

BatchTrajectories batch_rollout(const ParametricModel& m,
                                const ParametricBatch& b, int workers) {
  return rollout_impl<ParametricWorker>(m, b, workers, true);
}

BatchTrajectories serial_batch_rollout(const HybridModelF& m,
                                       const HybridBatch& b) {
  check_seed(b.seed.brake, m.brake.net.pred_lstm.hidden, "brake");
  check_seed(b.seed.steer, m.steer.net.pred_lstm.hidden, "steer");
  check_seed(b.seed.engine, m.engine.pred_lstm.hidden, "engine");
  if (b.env.index >= 0 && b.env.index < static_cast<int>(m.terra.size())) {
    check_seed(b.seed.terra,
               m.terra[static_cast<std::size_t>(b.env.index)].pred_lstm.hidden,
               "terradynamics");
  }
  return rollout_impl<HybridWorker>(m, b, 1, false);
}

BatchTrajectories serial_batch_rollout(const KinematicModelF& m,
                                       const KinematicBatch& b) {
  check_seed(b.seed.combo, m.combo.pred_lstm.hidden, "combo");
  check_seed(b.seed.brake, m.brake.net.pred_lstm.hidden, "brake");
  check_seed(b.seed.steer, m.steer.net.pred_lstm.hidden, "steer");
  return rollout_impl<KinematicWorker>(m, b, 1, false);
}

BatchTrajectories serial_batch_rollout(const ParametricModel& m,
                                       const ParametricBatch& b) {
  return rollout_impl<ParametricWorker>(m, b, 1, false);
}

// ---------------------------------------------------------------------------
// MPPI.

void MppiConfig::validate() const {
  if (samples < 1) throw ConfigError("mppi: samples must be >= 1");
  if (horizon < 1) throw ConfigError("mppi: horizon must be >= 1");
  if (!(lambda > 0)) throw ConfigError("mppi: lambda must be > 0");
  if (!(sigma_throttle > 0) || !(sigma_brake > 0) || !(sigma_steer > 0)) {
    throw ConfigError("mppi: every noise sigma must be > 0");
  }
  if (iterations < 1) throw ConfigError("mppi: iterations must be >= 1");
  auto ordered = [](const std::array<double, 2>& b) { return b[0] < b[1]; };
  if (!ordered(throttle_bounds) || !ordered(brake_bounds) ||
      !ordered(steer_bounds)) {
    throw ConfigError("mppi: control bounds must satisfy lo < hi");
  }
}

namespace {

double clampd(double v, const std::array<double, 2>& b) {
  return std::min(std::max(v, b[0]), b[1]);
}

// Shared MPPI update loop. roll(controls) runs the model-specific batch
// rollout over the perturbed plans. Noise is drawn serially, sample-major
// then step-major, channels in (throttle, brake, steer) order, from
// derive_seed(cfg.seed, "mppi-noise", iteration), so a test can replay it.
template <class RollFn>
MppiResult mppi_impl(const MppiConfig& cfg,
                     std::span<const ControlInput> nominal,
                     const TrajectoryCost& cost, RollFn&& roll) {
  cfg.validate();
  if (!cost) throw ConfigError("mppi: cost function is empty");
  if (nominal.size() != static_cast<std::size_t>(cfg.horizon)) {
    throw ConfigError("mppi: nominal plan length " +
                      std::to_string(nominal.size()) +
                      " does not match the horizon " +
                      std::to_string(cfg.horizon));
  }

  const std::size_t n = cfg.samples;
  const std::size_t t = static_cast<std::size_t>(cfg.horizon);
  MppiResult res;
  res.nominal.assign(nominal.begin(), nominal.end());

  std::vector<std::vector<ControlInput>> controls(
      n, std::vector<ControlInput>(t));
  for (int it = 0; it < cfg.iterations; ++it) {
    Rng rng(derive_seed(cfg.seed, "mppi-noise", static_cast<std::size_t>(it)));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < t; ++k) {
        const ControlInput& c = res.nominal[k];
        ControlInput& p = controls[i][k];
        p.throttle = clampd(c.throttle + cfg.sigma_throttle * rng.gaussian(),
                            cfg.throttle_bounds);
        p.brake =
            clampd(c.brake + cfg.sigma_brake * rng.gaussian(), cfg.brake_bounds);
        p.steer =
            clampd(c.steer + cfg.sigma_steer * rng.gaussian(), cfg.steer_bounds);
      }
    }

    BatchTrajectories traj = roll(controls);
    if (traj.diverged == n) {
      throw NumericError(
          "mppi: every rollout sample diverged; no control update possible");
    }

    MppiDiagnostics diag;
    diag.costs.resize(n);
    diag.diverged = traj.diverged;
    for (std::size_t i = 0; i < n; ++i) {
      if (traj.diverged_at[i] >= 0) {
        diag.costs[i] = kDivergedCost;
        continue;
      }
      double s = cost(traj.sample(i));
      if (!std::isfinite(s) || s < 0) {
        throw ConfigError(
            "mppi: cost function must return a finite value >= 0");
      }
      diag.costs[i] = s;
    }

    double min_s = diag.costs[0];
    long best = 0;
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (diag.costs[i] < min_s) {
        min_s = diag.costs[i];
        best = static_cast<long>(i);
      }
      mean += diag.costs[i];
    }
    diag.best_cost = min_s;
    diag.best_index = best;
    diag.mean_cost = mean / static_cast<double>(n);

    // Softmin weights, accumulated serially for determinism.
    diag.weights.resize(n);
    double wsum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      diag.weights[i] = std::exp(-(diag.costs[i] - min_s) / cfg.lambda);
      wsum += diag.weights[i];
    }
    double ww = 0;
    for (std::size_t i = 0; i < n; ++i) {
      diag.weights[i] /= wsum;
      ww += diag.weights[i] * diag.weights[i];
    }
    diag.ess = 1.0 / ww;

    // Weighted update with the effective (bound-clamped) noise, then clamp
    // the result; a convex combination of in-bounds plans stays in bounds,
    // the clamp just pins float dust.
    std::vector<ControlInput> next(res.nominal);
    for (std::size_t k = 0; k < t; ++k) {
      double dt_ = 0, db = 0, ds = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const ControlInput& p = controls[i][k];
        const ControlInput& c = res.nominal[k];
        dt_ += diag.weights[i] * (p.throttle - c.throttle);
        db += diag.weights[i] * (p.brake - c.brake);
        ds += diag.weights[i] * (p.steer - c.steer);
      }
      next[k].throttle =
          clampd(res.nominal[k].throttle + dt_, cfg.throttle_bounds);
      next[k].brake = clampd(res.nominal[k].brake + db, cfg.brake_bounds);
      next[k].steer = clampd(res.nominal[k].steer + ds, cfg.steer_bounds);
    }
    res.nominal = std::move(next);
    res.diag = std::move(diag);
  }
  return res;
}

}  // namespace

MppiResult mppi_step(const MppiConfig& cfg, const HybridModelF& m,
                     const VehicleState& state,
                     std::span<const VehicleState> hist_states,
                     std::span<const ControlInput> hist_controls,
                     std::span<const ControlInput> nominal,
                     const TrajectoryCost& cost, EnvironmentId env) {
  cfg.validate();
  HybridHiddenF seed = shared_init(m, hist_states, hist_controls, env);
  return mppi_impl(cfg, nominal, cost, [&](const auto& cs) {
    HybridBatch b;
    b.start = state;
    b.env = env;
    b.seed = seed;
    b.controls = cs;
    return batch_rollout(m, b, cfg.workers);
  });
}

MppiResult mppi_step(const MppiConfig& cfg, const KinematicModelF& m,
                     const VehicleState& state,
                     std::span<const VehicleState> hist_states,
                     std::span<const ControlInput> hist_controls,
                     std::span<const ControlInput> nominal,
                     const TrajectoryCost& cost, EnvironmentId env) {
  cfg.validate();
  KinematicHiddenF seed = shared_init(m, hist_states, hist_controls, env);
  return mppi_impl(cfg, nominal, cost, [&](const auto& cs) {
    KinematicBatch b;
    b.start = state;
    b.env = env;
    b.seed = seed;
    b.controls = cs;
    return batch_rollout(m, b, cfg.workers);
  });
}

MppiResult mppi_step(const MppiConfig& cfg, const ParametricModel& m,
                     const VehicleState& state,
                     std::span<const ControlInput> nominal,
                     const TrajectoryCost& cost) {
  return mppi_impl(cfg, nominal, cost, [&](const auto& cs) {
    ParametricBatch b;
    b.start = state;
    b.controls = cs;
    return batch_rollout(m, b, cfg.workers);
  });
}

// ---------------------------------------------------------------------------
// Memory accounting.

std::size_t predict_scratch_floats(const NetArch& arch) {
  const auto h = static_cast<std::size_t>(arch.pred_hidden);
  const auto in = static_cast<std::size_t>(arch.pred_in);
  std::size_t fnn = 0;
  for (std::size_t j = 1; j < arch.pred_layers.size(); ++j) {
    fnn += 3 * static_cast<std::size_t>(arch.pred_layers[j]);
  }
  return 25 * h + (h + in) + fnn;
}

namespace {

std::size_t count_params(const LstmT<float>& l) {
  std::size_t n = 0;
  for (int k = 0; k < 4; ++k) n += l.wx[k].size() + l.wh[k].size() + l.b[k].size();
  return n;
}

std::size_t count_params(const FnnT<float>& f) {
  std::size_t n = 0;
  for (const auto& l : f.layers) n += l.w.size() + l.b.size();
  return n;
}

std::size_t count_params(const InitializedLstmT<float>& net) {
  return count_params(net.init_lstm) + count_params(net.init_out) +
         count_params(net.pred_lstm) + count_params(net.pred_out);
}

std::size_t count_pred_params(const InitializedLstmT<float>& net) {
  return count_params(net.pred_lstm) + count_params(net.pred_out);
}

// Fixed (architecture-independent) arena cost of the per-step op schedule,
// mirroring the apply functions term by term.
constexpr std::size_t kStateRefFloats = 11;    // make_state_refs
constexpr std::size_t kControlRefFloats = 3;   // three command scalars
constexpr std::size_t kIntegrateFloats = 19;   // detail::integrate_refs
constexpr std::size_t kHybridForceFixed =      // hybrid_force_apply sans nets
    2 + 4 + 5 + 1 + 2 + 2 + 54 + 3 + 1 + 2 + 4 + 5 + 1 + kIntegrateFloats;
constexpr std::size_t kKinematicForceFixed =   // kinematic_force_apply sans net
    55 + 3 + kIntegrateFloats;
constexpr std::size_t kSteerCmdFloats = 1;     // hand-wheel scaling

std::size_t delay_fixed_floats(bool parametric_assist, bool steer) {
  if (steer) return parametric_assist ? 24 : 14;
  return parametric_assist ? 16 : 8;
}

std::size_t net_arch_scratch(const InitializedLstmT<float>& net) {
  NetArch a;
  a.pred_in = net.pred_lstm.input;
  a.pred_hidden = net.pred_lstm.hidden;
  a.pred_layers.push_back(net.pred_lstm.hidden + net.pred_lstm.input);
  for (const auto& l : net.pred_out.layers) a.pred_layers.push_back(l.out);
  return predict_scratch_floats(a);
}

}  // namespace

std::string MemoryReport::to_string() const {
  std::ostringstream os;
  os << "params " << param_bytes << " B (predictor side " << pred_param_bytes
     << " B); per-sample scratch " << scratch_bytes << " B = (" << hidden_floats
     << " hidden + " << state_floats << " state + " << step_floats
     << " step activations) * 4 B";
  return os.str();
}

MemoryReport memory_report(const HybridModelF& m) {
  MemoryReport r;
  std::size_t p = count_params(m.brake.net) + count_params(m.steer.net) +
                  count_params(m.engine);
  std::size_t pp = count_pred_params(m.brake.net) +
                   count_pred_params(m.steer.net) + count_pred_params(m.engine);
  for (const auto& terra : m.terra) {
    p += count_params(terra);
    pp += count_pred_params(terra);
  }
  r.param_bytes = p * sizeof(float);
  r.pred_param_bytes = pp * sizeof(float);

  // One terra network is active per sample.
  const auto& terra = m.terra.empty() ? m.engine : m.terra.front();
  r.hidden_floats =
      2 * (static_cast<std::size_t>(m.brake.net.pred_lstm.hidden) +
           m.steer.net.pred_lstm.hidden + m.engine.pred_lstm.hidden +
           terra.pred_lstm.hidden);
  r.state_floats = kStateRefFloats;
  r.step_floats = kStateRefFloats + kControlRefFloats + kHybridForceFixed +
                  kSteerCmdFloats +
                  delay_fixed_floats(m.brake.parametric_assist, false) +
                  delay_fixed_floats(m.steer.parametric_assist, true) +
                  net_arch_scratch(m.engine) + net_arch_scratch(terra) +
                  net_arch_scratch(m.brake.net) + net_arch_scratch(m.steer.net);
  r.scratch_bytes =
      (r.hidden_floats + r.state_floats + r.step_floats) * sizeof(float);
  return r;
}

MemoryReport memory_report(const KinematicModelF& m) {
  MemoryReport r;
  std::size_t p = count_params(m.combo) + count_params(m.brake.net) +
                  count_params(m.steer.net);
  std::size_t pp = count_pred_params(m.combo) + count_pred_params(m.brake.net) +
                   count_pred_params(m.steer.net);
  r.param_bytes = p * sizeof(float);
  r.pred_param_bytes = pp * sizeof(float);
  r.hidden_floats =
      2 * (static_cast<std::size_t>(m.combo.pred_lstm.hidden) +
           m.brake.net.pred_lstm.hidden + m.steer.net.pred_lstm.hidden);
  r.state_floats = kStateRefFloats;
  r.step_floats = kStateRefFloats + kControlRefFloats + kKinematicForceFixed +
                  kSteerCmdFloats +
                  delay_fixed_floats(m.brake.parametric_assist, false) +
                  delay_fixed_floats(m.steer.parametric_assist, true) +
                  net_arch_scratch(m.combo) + net_arch_scratch(m.brake.net) +
                  net_arch_scratch(m.steer.net);
  r.scratch_bytes =
      (r.hidden_floats + r.state_floats + r.step_floats) * sizeof(float);
  return r;
}

MemoryReport memory_report(const ParametricModel&) {
  MemoryReport r;
  // Three gain scalars, stored in double like the rest of the constants.
  r.param_bytes = 3 * sizeof(double);
  r.pred_param_bytes = r.param_bytes;
  r.hidden_floats = 0;
  r.state_floats = kStateRefFloats;
  r.step_floats = 0;  // plain scalar arithmetic, no arena
  r.scratch_bytes =
      (r.hidden_floats + r.state_floats + r.step_floats) * sizeof(float);
  return r;
}

// ---------------------------------------------------------------------------
// Throughput benchmark.

namespace {

// Gentle pseudo-random command tape: enough excitation to exercise every
// network without tripping the divergence guards on a sane model.
std::vector<std::vector<ControlInput>> bench_controls(std::size_t n,
                                                      int t_steps) {
  Rng rng(derive_seed(20260819, "bench-controls", 0));
  std::vector<std::vector<ControlInput>> cs(
      n, std::vector<ControlInput>(static_cast<std::size_t>(t_steps)));
  for (auto& seq : cs) {
    for (auto& u : seq) {
      u.throttle = rng.uniform(0.1, 0.5);
      u.brake = rng.uniform() < 0.1 ? rng.uniform(0.0, 0.3) : 0.0;
      u.steer = rng.uniform(-0.25, 0.25);
    }
  }
  return cs;
}

VehicleState bench_start() {
  VehicleState s;
  s.vx = 5.0;
  return s;
}

struct BenchTimes {
  double median_ms = 0, min_ms = 0, max_ms = 0;
};

template <class Fn>
BenchTimes time_reps(int reps, Fn&& fn) {
  fn();  // warm-up: touch every weight and fault in the arenas
  std::vector<double> ms(static_cast<std::size_t>(reps));
  for (auto& sample : ms) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    sample = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(ms.begin(), ms.end());
  BenchTimes bt;
  bt.min_ms = ms.front();
  bt.max_ms = ms.back();
  const std::size_t mid = ms.size() / 2;
  bt.median_ms = ms.size() % 2 == 1 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
  return bt;
}

ThroughputReport finish_report(std::string model, std::size_t n, int t,
                               int workers, int reps, BenchTimes bt,
                               const MemoryReport& mem) {
  ThroughputReport r;
  r.model = std::move(model);
  r.n = n;
  r.t = t;
  r.workers = workers < 0 ? -1 : workers == 0 ? omp_get_max_threads() : workers;
  r.reps = reps;
  r.median_ms = bt.median_ms;
  r.min_ms = bt.min_ms;
  r.max_ms = bt.max_ms;
  const double steps = static_cast<double>(n) * t;
  r.steps_per_s = steps / (bt.median_ms / 1000.0);
  r.full_scale_iters_per_s = r.steps_per_s / (18432.0 * 250.0);
  r.scratch_bytes = mem.scratch_bytes;
  r.param_bytes = mem.param_bytes;
  return r;
}

void check_bench_args(std::size_t n, int t, int reps) {
  if (n < 1 || t < 1) throw BenchError("bench: n and t must be >= 1");
  if (reps < 5) throw BenchError("bench: at least 5 timed reps required");
}

}  // namespace

std::string ThroughputReport::to_record() const {
  nlohmann::json j;
  j["model"] = model;
  j["n"] = n;
  j["t"] = t;
  j["workers"] = workers;
  j["reps"] = reps;
  j["median_ms"] = median_ms;
  j["min_ms"] = min_ms;
  j["max_ms"] = max_ms;
  j["steps_per_s"] = steps_per_s;
  j["mppi_iters_per_s_at_18432x250"] = full_scale_iters_per_s;
  j["scratch_bytes"] = scratch_bytes;
  j["param_bytes"] = param_bytes;
  return j.dump();
}

ThroughputReport bench_throughput(const HybridModelF& m, std::size_t n, int t,
                                  int workers, int reps) {
  check_bench_args(n, t, reps);
  HybridBatch b;
  b.start = bench_start();
  b.env = EnvironmentId{0};
  b.seed = zero_init(m);
  b.controls = bench_controls(n, t);
  auto bt = time_reps(reps, [&] {
    if (workers < 0)
      serial_batch_rollout(m, b);
    else
      batch_rollout(m, b, workers);
  });
  const auto& terra = m.terra.empty() ? m.engine : m.terra.front();
  NetArch ta;
  ta.pred_in = terra.pred_lstm.input;
  ta.pred_hidden = terra.pred_lstm.hidden;
  std::ostringstream name;
  name << "hybrid[terra " << ta.pred_in << "->" << ta.pred_hidden << "h]";
  return finish_report(name.str(), n, t, workers, reps, bt, memory_report(m));
}

ThroughputReport bench_throughput(const KinematicModelF& m, std::size_t n,
                                  int t, int workers, int reps) {
  check_bench_args(n, t, reps);
  KinematicBatch b;
  b.start = bench_start();
  b.env = EnvironmentId{0};
  b.seed = zero_init(m);
  b.controls = bench_controls(n, t);
  auto bt = time_reps(reps, [&] {
    if (workers < 0)
      serial_batch_rollout(m, b);
    else
      batch_rollout(m, b, workers);
  });
  std::ostringstream name;
  name << "kinematic[combo " << m.combo.pred_lstm.input << "->"
       << m.combo.pred_lstm.hidden << "h]";
  return finish_report(name.str(), n, t, workers, reps, bt, memory_report(m));
}

ThroughputReport bench_throughput(const ParametricModel& m, std::size_t n,
                                  int t, int workers, int reps) {
  check_bench_args(n, t, reps);
  ParametricBatch b;
  b.start = bench_start();
  b.controls = bench_controls(n, t);
  auto bt = time_reps(reps, [&] {
    if (workers < 0)
      serial_batch_rollout(m, b);
    else
      batch_rollout(m, b, workers);
  });
  return finish_report("parametric", n, t, workers, reps, bt,
                       memory_report(m));
}

}  // namespace vdyn
