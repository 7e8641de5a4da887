#include "vdyn/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <exception>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vdyn/adam.hpp"
#include "vdyn/tape.hpp"

namespace vdyn {

// ---------------------------------------------------------------------------
// Window and config validation

void TrainingWindow::validate() const {
  if (tau < 1) throw DataError("training window: tau must be at least 1");
  if (states.size() != controls.size()) {
    throw DataError("training window: state/control row count mismatch");
  }
  if (static_cast<int>(states.size()) <= tau) {
    throw DataError("training window: no prediction steps after the history");
  }
  if (env.index < 0) {
    throw DataError("training window: negative environment index");
  }
}

void SplitSpec::validate() const {
  if (!std::isfinite(train_frac) || !std::isfinite(val_frac) ||
      train_frac < 0.0 || val_frac < 0.0) {
    throw ConfigError("split: fractions must be finite and non-negative");
  }
  if (train_frac + val_frac > 1.0 + 1e-12) {
    throw ConfigError("split: train and validation fractions exceed 1");
  }
}

void LossConfig::validate() const {
  auto weight = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError(std::string("loss: ") + name +
                        " must be finite and non-negative");
    }
  };
  weight(position_weight, "position weight");
  weight(yaw_weight, "yaw weight");
  weight(velocity_weight, "velocity weight");
  if (!std::isfinite(velocity_gate) || velocity_gate <= 0.0) {
    throw ConfigError("loss: velocity gate must be positive");
  }
}

void Schedule::validate() const {
  if (total_epochs < 0) throw ConfigError("schedule: negative epoch count");
  if (specialize_epoch < 1) {
    throw ConfigError("schedule: specialization epoch must be at least 1");
  }
  if (batch_size < 1) throw ConfigError("schedule: batch size must be at least 1");
  if (!(lr_nets > 0.0) || !(lr_constants > 0.0)) {
    throw ConfigError("schedule: learning rates must be positive");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("schedule: clip norm must be positive");
  loss.validate();
}

// ---------------------------------------------------------------------------
// Window slicing

namespace {

TrainingWindow make_window(const Dataset& d, std::size_t start, int tau,
                           int horizon) {
  TrainingWindow w;
  w.tau = tau;
  w.src_row = start;
  const std::size_t len = static_cast<std::size_t>(tau) +
                          static_cast<std::size_t>(horizon);
  w.states.reserve(len);
  w.controls.reserve(len);
  const int env = d.env_id[start];
  const int mode = d.mode[start];
  for (std::size_t i = start; i < start + len; ++i) {
    if (d.env_id[i] != env) {
      throw DataError("slice_windows: window spans multiple environments");
    }
    if (d.mode[i] != mode) {
      throw DataError("slice_windows: window spans multiple drive modes");
    }
    w.states.push_back(d.state_at(i));
    w.controls.push_back(d.control_at(i));
  }
  w.env = EnvironmentId{env};
  w.mode = static_cast<DriveMode>(mode);
  return w;
}

std::vector<std::pair<std::size_t, std::size_t>> segment_ranges(
    const Dataset& d) {
  std::vector<std::pair<std::size_t, std::size_t>> segs;
  for (std::size_t si = 0; si < d.seg_begin.size(); ++si) {
    std::size_t b = d.seg_begin[si];
    std::size_t e = (si + 1 < d.seg_begin.size()) ? d.seg_begin[si + 1]
                                                  : d.size();
    if (b > e || e > d.size()) {
      throw DataError("dataset: segment table out of order");
    }
    if (b < e) segs.emplace_back(b, e);
  }
  // Hand-built logs may omit the segment table; treat them as one segment.
  if (segs.empty() && d.size() > 0) segs.emplace_back(0, d.size());
  return segs;
}

}  // namespace

WindowSet slice_windows(const Dataset& d, int tau, int horizon, int stride,
                        const SplitSpec& split) {
  split.validate();
  if (tau < 1) throw ConfigError("slice_windows: tau must be at least 1");
  if (horizon < 1) throw ConfigError("slice_windows: horizon must be at least 1");
  if (stride < 1) throw ConfigError("slice_windows: stride must be at least 1");
  const std::size_t len = static_cast<std::size_t>(tau) +
                          static_cast<std::size_t>(horizon);
  WindowSet out;
  const auto segs = segment_ranges(d);
  for (std::size_t si = 0; si < segs.size(); ++si) {
    const auto [b, e] = segs[si];
    const std::size_t n = e - b;
    if (n < len) {
      ++out.skipped_segments;
      continue;
    }
    long n_train = std::lround(split.train_frac * static_cast<double>(n));
    n_train = std::clamp(n_train, 0L, static_cast<long>(n));
    long n_val = std::lround(split.val_frac * static_cast<double>(n));
    n_val = std::clamp(n_val, 0L, static_cast<long>(n) - n_train);
    const long n_test = static_cast<long>(n) - n_train - n_val;
    // Chunk order is shuffled per segment so no split systematically gets
    // the same part of every drive; windows never leave their chunk, so no
    // dataset row feeds two splits.
    std::array<std::pair<int, long>, 3> parts{
        {{0, n_train}, {1, n_val}, {2, n_test}}};
    if (split.shuffle_order) {
      Rng rng(derive_seed(split.seed, "window-split",
                          static_cast<std::uint64_t>(si)));
      for (std::size_t i = parts.size() - 1; i > 0; --i) {
        auto j = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<long>(i)));
        std::swap(parts[i], parts[j]);
      }
    }
    std::size_t cur = b;
    for (const auto& [which, plen] : parts) {
      const std::size_t cb = cur;
      const std::size_t ce = cur + static_cast<std::size_t>(plen);
      cur = ce;
      if (ce - cb < len) continue;
      auto& dst = which == 0 ? out.train : which == 1 ? out.val : out.test;
      for (std::size_t st = cb; st + len <= ce;
           st += static_cast<std::size_t>(stride)) {
        dst.push_back(make_window(d, st, tau, horizon));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Integrated loss (plain and recorded paths share one arithmetic layout)

namespace {

// Generic loss over state refs. The plain overload below mirrors this node
// for node so a recorded loss value equals the eager one bitwise.
template <class Ctx>
typename Ctx::V integrated_loss_refs(Ctx& cx,
                                     std::span<const StateRefs<Ctx>> pred,
                                     std::span<const VehicleState> truth,
                                     const LossConfig& cfg) {
  if (pred.size() != truth.size()) {
    throw ShapeError("integrated loss: prediction/truth length mismatch");
  }
  if (pred.empty()) throw DataError("integrated loss: no steps");
  const bool terminal = cfg.weighting == StepWeighting::terminal;
  auto acc_pos = cx.scalar(0.0);
  auto acc_yaw = cx.scalar(0.0);
  auto acc_vel = cx.scalar(0.0);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (terminal && k + 1 != pred.size()) continue;
    auto dx = cx.sub(pred[k].x, cx.scalar(truth[k].x));
    auto dy = cx.sub(pred[k].y, cx.scalar(truth[k].y));
    acc_pos = cx.add(acc_pos, cx.add(cx.mul(dx, dx), cx.mul(dy, dy)));
    auto dpsi = cx.wrap(cx.sub(pred[k].psi, cx.scalar(truth[k].psi)));
    acc_yaw = cx.add(acc_yaw, cx.mul(dpsi, dpsi));
    auto dvx = cx.sub(pred[k].vx, cx.scalar(truth[k].vx));
    if (std::abs(cx.first(dvx)) > cfg.velocity_gate) {
      acc_vel = cx.add(acc_vel, cx.mul(dvx, dvx));
    }
  }
  const double inv =
      terminal ? 1.0 : 1.0 / static_cast<double>(pred.size());
  auto weighted = cx.add(cx.add(cx.scale(acc_pos, cfg.position_weight),
                                cx.scale(acc_yaw, cfg.yaw_weight)),
                         cx.scale(acc_vel, cfg.velocity_weight));
  return cx.scale(weighted, inv);
}

}  // namespace

LossTerms integrated_loss_terms(std::span<const VehicleState> pred,
                                std::span<const VehicleState> truth,
                                const LossConfig& cfg) {
  cfg.validate();
  if (pred.size() != truth.size()) {
    throw ShapeError("integrated loss: prediction/truth length mismatch");
  }
  if (pred.empty()) throw DataError("integrated loss: no steps");
  const bool terminal = cfg.weighting == StepWeighting::terminal;
  double acc_pos = 0.0;
  double acc_yaw = 0.0;
  double acc_vel = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (terminal && k + 1 != pred.size()) continue;
    const double dx = pred[k].x - truth[k].x;
    const double dy = pred[k].y - truth[k].y;
    acc_pos = acc_pos + (dx * dx + dy * dy);
    const double dpsi = wrap_angle(pred[k].psi - truth[k].psi);
    acc_yaw = acc_yaw + dpsi * dpsi;
    const double dvx = pred[k].vx - truth[k].vx;
    if (std::abs(dvx) > cfg.velocity_gate) acc_vel = acc_vel + dvx * dvx;
  }
  const double inv =
      terminal ? 1.0 : 1.0 / static_cast<double>(pred.size());
  LossTerms t;
  t.position = cfg.position_weight * acc_pos * inv;
  t.yaw = cfg.yaw_weight * acc_yaw * inv;
  t.velocity = cfg.velocity_weight * acc_vel * inv;
  t.total = inv * ((cfg.position_weight * acc_pos + cfg.yaw_weight * acc_yaw) +
                   cfg.velocity_weight * acc_vel);
  return t;
}

double integrated_loss(std::span<const VehicleState> pred,
                       std::span<const VehicleState> truth,
                       const LossConfig& cfg) {
  return integrated_loss_terms(pred, truth, cfg).total;
}

// ---------------------------------------------------------------------------
// Free-running window rollouts (shared by the eager and recorded paths)

namespace {

template <class Ctx>
LstmStateRef<Ctx> zero_lstm_state(Ctx& cx, const LstmRef<Ctx>& l) {
  return {cx.zeros(static_cast<std::size_t>(l.hidden)),
          cx.zeros(static_cast<std::size_t>(l.hidden))};
}

// Build the initializer histories from the logged window prefix and warm up
// the predictor states. The rows repeat the logged-history layouts used by
// init_hidden value for value; the terradynamics parametric-yaw slot is
// assembled from the constants refs so its sensitivity is kept when those
// constants are trainable leaves.
template <class Ctx>
void warm_start_hybrid(Ctx& cx, const HybridRefs<Ctx>& mr,
                       const TrainingWindow& w, bool with_delay,
                       HybridHiddenRefs<Ctx>& h) {
  using V = typename Ctx::V;
  const auto tau = static_cast<std::size_t>(w.tau);
  std::vector<V> engine_rows, terra_rows, brake_rows, steer_rows;
  engine_rows.reserve(tau);
  terra_rows.reserve(tau);
  if (with_delay) {
    brake_rows.reserve(tau);
    steer_rows.reserve(tau);
  }
  for (std::size_t i = 0; i < tau; ++i) {
    const VehicleState& s = w.states[i];
    const ControlInput& u = w.controls[i];
    {
      const double row[3] = {s.vx, u.throttle, s.brake};
      engine_rows.push_back(cx.vec({row, 3}));
    }
    {
      {
        const double a = s.delta / cx.first(mr.steer_divisor);
        if (!(std::abs(a) < M_PI / 2)) {
          throw NumericError("steering angle outside the tan() domain");
        }
      }
      const double xi = wheel_angle(s.delta, cx.first(mr.wheel_divisor));
      auto p_psi =
          cx.mul(cx.div(cx.scalar(s.vx), mr.wheelbase),
                 cx.tan_(cx.div(cx.scalar(s.delta), mr.steer_divisor)));
      const double head[7] = {s.vx,
                              s.vy,
                              s.psi_dot,
                              s.delta,
                              s.delta_dot,
                              mr.gravity * std::sin(s.roll),
                              mr.gravity * std::sin(s.pitch)};
      const double tail[2] = {xi, u.throttle};
      terra_rows.push_back(
          cx.concat(cx.concat(cx.vec({head, 7}), p_psi), cx.vec({tail, 2})));
    }
    if (with_delay) {
      const double brow[2] = {s.brake, u.brake};
      brake_rows.push_back(cx.vec({brow, 2}));
      const double srow[4] = {s.vx, u.steer * mr.max_hand_wheel, s.delta,
                              s.delta_dot};
      steer_rows.push_back(cx.vec({srow, 4}));
    }
  }
  h.engine = init_apply(cx, mr.engine, std::span<const V>(engine_rows));
  h.terra = init_apply(cx, mr.terra, std::span<const V>(terra_rows));
  if (with_delay) {
    h.brake = init_apply(cx, mr.brake.net, std::span<const V>(brake_rows));
    h.steer = init_apply(cx, mr.steer.net, std::span<const V>(steer_rows));
  }
}

template <class Ctx>
void warm_start_kinematic(Ctx& cx, const KinematicRefs<Ctx>& mr,
                          const TrainingWindow& w, bool with_delay,
                          KinematicHiddenRefs<Ctx>& h) {
  using V = typename Ctx::V;
  const auto tau = static_cast<std::size_t>(w.tau);
  std::vector<V> combo_rows, brake_rows, steer_rows;
  combo_rows.reserve(tau);
  if (with_delay) {
    brake_rows.reserve(tau);
    steer_rows.reserve(tau);
  }
  for (std::size_t i = 0; i < tau; ++i) {
    const VehicleState& s = w.states[i];
    const ControlInput& u = w.controls[i];
    const double crow[10] = {s.vx,   s.vy,    s.psi_dot,  s.delta, s.delta_dot,
                             s.roll, s.pitch, u.throttle, u.brake, mr.eta};
    combo_rows.push_back(cx.vec({crow, 10}));
    if (with_delay) {
      const double brow[2] = {s.brake, u.brake};
      brake_rows.push_back(cx.vec({brow, 2}));
      const double srow[4] = {s.vx, u.steer * mr.max_hand_wheel, s.delta,
                              s.delta_dot};
      steer_rows.push_back(cx.vec({srow, 4}));
    }
  }
  h.combo = init_apply(cx, mr.combo, std::span<const V>(combo_rows));
  if (with_delay) {
    h.brake = init_apply(cx, mr.brake.net, std::span<const V>(brake_rows));
    h.steer = init_apply(cx, mr.steer.net, std::span<const V>(steer_rows));
  }
}

// Free-run over the window horizon with teacher-forced controls. Human-mode
// windows bypass the actuation delay networks entirely and feed the logged
// actuation back into the state, so those networks and the delay constants
// see exactly zero sensitivity. Divergence surfaces as a NumericError
// carrying the horizon step index.
template <class Ctx, class Refs, class Hidden, class StepFn>
std::vector<StateRefs<Ctx>> roll_window(Ctx& cx, const Refs& mr,
                                        const ParametricConstants& c,
                                        const TrainingWindow& w,
                                        Hidden& h, StepFn&& step) {
  const int tau = w.tau;
  const int horizon = w.horizon();
  std::vector<StateRefs<Ctx>> preds;
  preds.reserve(static_cast<std::size_t>(horizon));
  StateRefs<Ctx> s =
      make_state_refs(cx, w.states[static_cast<std::size_t>(tau - 1)]);
  for (int k = 0; k < horizon; ++k) {
    const ControlInput& u = w.controls[static_cast<std::size_t>(tau - 1 + k)];
    ControlRefs<Ctx> ur{cx.scalar(u.throttle), cx.scalar(u.brake),
                        cx.scalar(u.steer)};
    try {
      StateRefs<Ctx> out = step(cx, mr, s, ur, h, k);
      VehicleState v = read_state(cx, out);
      auto problems = validate_state(v, c);
      if (!problems.empty()) {
        throw NumericError("rollout produced an invalid state: " +
                           problems.front());
      }
      preds.push_back(out);
      s = out;
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at horizon step " +
                             std::to_string(k),
                         k);
    }
  }
  return preds;
}

template <class Ctx>
std::vector<StateRefs<Ctx>> roll_hybrid(Ctx& cx, const HybridRefs<Ctx>& mr,
                                        const ParametricConstants& c,
                                        const TrainingWindow& w,
                                        InitMode init) {
  const bool human = w.mode == DriveMode::human;
  HybridHiddenRefs<Ctx> h;
  if (init == InitMode::initializer) {
    warm_start_hybrid(cx, mr, w, !human, h);
  } else {
    h.engine = zero_lstm_state(cx, mr.engine.pred_lstm);
    h.terra = zero_lstm_state(cx, mr.terra.pred_lstm);
    if (!human) {
      h.brake = zero_lstm_state(cx, mr.brake.net.pred_lstm);
      h.steer = zero_lstm_state(cx, mr.steer.net.pred_lstm);
    }
  }
  return roll_window(cx, mr, c, w, h,
                     [&](Ctx& cxi, const HybridRefs<Ctx>& m,
                         const StateRefs<Ctx>& s, const ControlRefs<Ctx>& u,
                         HybridHiddenRefs<Ctx>& hh, int k) {
                       if (!human) return hybrid_apply(cxi, m, s, u, hh);
                       auto out = hybrid_force_apply(cxi, m, s, u, hh.engine,
                                                     hh.terra);
                       const VehicleState& nxt =
                           w.states[static_cast<std::size_t>(w.tau + k)];
                       out.delta = cxi.scalar(nxt.delta);
                       out.delta_dot = cxi.scalar(nxt.delta_dot);
                       out.brake = cxi.scalar(nxt.brake);
                       return out;
                     });
}

template <class Ctx>
std::vector<StateRefs<Ctx>> roll_kinematic(Ctx& cx,
                                           const KinematicRefs<Ctx>& mr,
                                           const ParametricConstants& c,
                                           const TrainingWindow& w,
                                           InitMode init) {
  const bool human = w.mode == DriveMode::human;
  KinematicHiddenRefs<Ctx> h;
  if (init == InitMode::initializer) {
    warm_start_kinematic(cx, mr, w, !human, h);
  } else {
    h.combo = zero_lstm_state(cx, mr.combo.pred_lstm);
    if (!human) {
      h.brake = zero_lstm_state(cx, mr.brake.net.pred_lstm);
      h.steer = zero_lstm_state(cx, mr.steer.net.pred_lstm);
    }
  }
  return roll_window(cx, mr, c, w, h,
                     [&](Ctx& cxi, const KinematicRefs<Ctx>& m,
                         const StateRefs<Ctx>& s, const ControlRefs<Ctx>& u,
                         KinematicHiddenRefs<Ctx>& hh, int k) {
                       if (!human) return kinematic_apply(cxi, m, s, u, hh);
                       auto out = kinematic_force_apply(cxi, m, s, u, hh.combo);
                       const VehicleState& nxt =
                           w.states[static_cast<std::size_t>(w.tau + k)];
                       out.delta = cxi.scalar(nxt.delta);
                       out.delta_dot = cxi.scalar(nxt.delta_dot);
                       out.brake = cxi.scalar(nxt.brake);
                       return out;
                     });
}

template <class Ctx>
std::vector<VehicleState> read_states(const Ctx& cx,
                                      const std::vector<StateRefs<Ctx>>& refs) {
  std::vector<VehicleState> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(read_state(cx, r));
  return out;
}

int terra_slot_for(const HybridModel& m, EnvironmentId env) {
  if (env.index < 0) {
    throw ConfigError("hybrid model: negative environment index");
  }
  if (m.terra.size() == 1) return 0;  // one shared terradynamics net
  if (static_cast<std::size_t>(env.index) >= m.terra.size()) {
    throw ConfigError("hybrid model: unknown environment index " +
                      std::to_string(env.index));
  }
  return env.index;
}

}  // namespace

std::vector<VehicleState> training_rollout(const HybridModel& m,
                                           const TrainingWindow& w,
                                           InitMode init) {
  w.validate();
  const int slot = terra_slot_for(m, w.env);
  Arena<double> arena;
  EagerCtx<double> cx(arena);
  auto mr = make_ref(cx, m, EnvironmentId{slot});
  auto preds = roll_hybrid(cx, mr, m.constants, w, init);
  return read_states(cx, preds);
}

std::vector<VehicleState> training_rollout(const KinematicModel& m,
                                           const TrainingWindow& w,
                                           InitMode init) {
  w.validate();
  Arena<double> arena;
  EagerCtx<double> cx(arena);
  auto mr = make_ref(cx, m, w.env);
  auto preds = roll_kinematic(cx, mr, m.constants, w, init);
  return read_states(cx, preds);
}

std::vector<VehicleState> training_rollout(const ParametricModel& m,
                                           const TrainingWindow& w) {
  w.validate();
  const int horizon = w.horizon();
  std::vector<VehicleState> preds;
  preds.reserve(static_cast<std::size_t>(horizon));
  VehicleState s = w.states[static_cast<std::size_t>(w.tau - 1)];
  for (int k = 0; k < horizon; ++k) {
    const ControlInput& u = w.controls[static_cast<std::size_t>(w.tau - 1 + k)];
    try {
      VehicleState out = parametric_step(m, s, u, m.constants.dt);
      if (w.mode == DriveMode::human) {
        const VehicleState& nxt = w.states[static_cast<std::size_t>(w.tau + k)];
        out.delta = nxt.delta;
        out.delta_dot = nxt.delta_dot;
        out.brake = nxt.brake;
      }
      auto problems = validate_state(out, m.constants);
      if (!problems.empty()) {
        throw NumericError("rollout produced an invalid state: " +
                           problems.front());
      }
      preds.push_back(out);
      s = out;
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at horizon step " +
                             std::to_string(k),
                         k);
    }
  }
  return preds;
}

// ---------------------------------------------------------------------------
// Parameter indexing

ModelParamIndex make_param_index(HybridModel& m, bool include_constants) {
  validate_model(m);
  ModelParamIndex r;
  auto add = [&r](const std::string& name, std::vector<double>& v) {
    r.idx.add(name, v);
  };
  visit_params(m.brake.net, "brake.net", add);
  visit_params(m.steer.net, "steer.net", add);
  visit_params(m.engine, "engine", add);
  for (std::size_t i = 0; i < m.terra.size(); ++i) {
    visit_params(m.terra[i], "terra" + std::to_string(i), add);
  }
  r.net_params = r.idx.total;
  if (include_constants) {
    if (m.brake.train_constants) {
      r.idx.add("brake.gain", m.brake.gain);
      r.idx.add("brake.rate_limit", m.brake.rate_limit);
    }
    if (m.steer.train_constants) {
      r.idx.add("steer.gain", m.steer.gain);
      r.idx.add("steer.rate_limit", m.steer.rate_limit);
    }
    r.idx.add("constants.steer_divisor", m.constants.steer_divisor);
    r.idx.add("constants.wheelbase", m.constants.wheelbase);
  }
  return r;
}

ModelParamIndex make_param_index(KinematicModel& m) {
  validate_model(m);
  ModelParamIndex r;
  auto add = [&r](const std::string& name, std::vector<double>& v) {
    r.idx.add(name, v);
  };
  visit_params(m.combo, "combo", add);
  visit_params(m.brake.net, "brake.net", add);
  visit_params(m.steer.net, "steer.net", add);
  r.net_params = r.idx.total;
  return r;
}

// ---------------------------------------------------------------------------
// Per-window gradients

WindowGradResult window_gradient(const HybridModel& m, const TrainingWindow& w,
                                 const LossConfig& cfg,
                                 const ModelParamIndex& idx,
                                 std::span<double> grad_accum, InitMode init,
                                 int terra_slot) {
  w.validate();
  cfg.validate();
  if (grad_accum.size() != idx.idx.total) {
    throw ShapeError("window_gradient: gradient buffer size mismatch");
  }
  const int slot =
      terra_slot < 0 ? terra_slot_for(m, w.env) : terra_slot;
  if (slot < 0 || static_cast<std::size_t>(slot) >= m.terra.size()) {
    throw ConfigError("window_gradient: terra slot out of range");
  }
  WindowGradResult r;
  try {
    ad::Tape tape;
    TapeCtx cx(tape);
    auto mr = make_ref(cx, m, EnvironmentId{slot}, &idx.idx);
    auto preds = roll_hybrid(cx, mr, m.constants, w, init);
    auto loss = integrated_loss_refs<TapeCtx>(cx, preds, w.horizon_states(), cfg);
    tape.backward(loss);
    cx.collect_grads(grad_accum);
    r.terms = integrated_loss_terms(read_states(cx, preds),
                                    w.horizon_states(), cfg);
  } catch (const NumericError&) {
    r.diverged = true;
  }
  return r;
}

WindowGradResult window_gradient(const KinematicModel& m,
                                 const TrainingWindow& w,
                                 const LossConfig& cfg,
                                 const ModelParamIndex& idx,
                                 std::span<double> grad_accum, InitMode init) {
  w.validate();
  cfg.validate();
  if (grad_accum.size() != idx.idx.total) {
    throw ShapeError("window_gradient: gradient buffer size mismatch");
  }
  WindowGradResult r;
  try {
    ad::Tape tape;
    TapeCtx cx(tape);
    auto mr = make_ref(cx, m, w.env, &idx.idx);
    auto preds = roll_kinematic(cx, mr, m.constants, w, init);
    auto loss = integrated_loss_refs<TapeCtx>(cx, preds, w.horizon_states(), cfg);
    tape.backward(loss);
    cx.collect_grads(grad_accum);
    r.terms = integrated_loss_terms(read_states(cx, preds),
                                    w.horizon_states(), cfg);
  } catch (const NumericError&) {
    r.diverged = true;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Batched helpers (parallel evaluation, deterministic reduction order)

namespace {

struct BatchResult {
  std::vector<double> grads;  // sum over contributing windows, window order
  LossTerms mean;             // mean loss over contributing windows
  std::size_t contributed = 0;
  std::size_t diverged = 0;
};

// Evaluate per-window gradients in parallel, then reduce serially in window
// order so the sum is independent of the worker count and scheduling.
template <typename GradFn>
BatchResult batch_gradients(std::span<const TrainingWindow* const> batch,
                            std::size_t nparams, GradFn&& grad_of) {
  const auto n = static_cast<long>(batch.size());
  std::vector<std::vector<double>> wg(batch.size());
  std::vector<WindowGradResult> res(batch.size());
  std::vector<std::exception_ptr> errs(batch.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    try {
      wg[ui].assign(nparams, 0.0);
      res[ui] = grad_of(*batch[ui], std::span<double>(wg[ui]));
    } catch (...) {
      errs[ui] = std::current_exception();
    }
  }
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
  BatchResult out;
  out.grads.assign(nparams, 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (res[i].diverged) {
      ++out.diverged;
    } else {
      const auto& g = wg[i];
      for (std::size_t k = 0; k < nparams; ++k) out.grads[k] += g[k];
      out.mean.position += res[i].terms.position;
      out.mean.yaw += res[i].terms.yaw;
      out.mean.velocity += res[i].terms.velocity;
      out.mean.total += res[i].terms.total;
      ++out.contributed;
    }
    wg[i] = {};
  }
  if (out.contributed > 0) {
    const double inv = 1.0 / static_cast<double>(out.contributed);
    out.mean.position *= inv;
    out.mean.yaw *= inv;
    out.mean.velocity *= inv;
    out.mean.total *= inv;
  }
  return out;
}

struct EvalAccum {
  LossTerms sum;
  std::size_t count = 0;
  std::size_t diverged = 0;
};

// terms_of returns nullopt for a diverged window and may throw for real
// errors; sums accumulate in window order.
template <typename TermsFn>
EvalAccum eval_windows_core(std::span<const TrainingWindow> ws,
                            TermsFn&& terms_of) {
  const auto n = static_cast<long>(ws.size());
  std::vector<std::optional<LossTerms>> out(ws.size());
  std::vector<std::exception_ptr> errs(ws.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    try {
      out[ui] = terms_of(ws[ui]);
    } catch (...) {
      errs[ui] = std::current_exception();
    }
  }
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
  EvalAccum a;
  for (const auto& o : out) {
    if (!o) {
      ++a.diverged;
      continue;
    }
    a.sum.position += o->position;
    a.sum.yaw += o->yaw;
    a.sum.velocity += o->velocity;
    a.sum.total += o->total;
    ++a.count;
  }
  return a;
}

std::optional<LossTerms> hybrid_window_terms(const HybridModel& m,
                                             const TrainingWindow& w,
                                             const LossConfig& cfg,
                                             InitMode init, int slot) {
  try {
    Arena<double> arena;
    EagerCtx<double> cx(arena);
    auto mr = make_ref(cx, m, EnvironmentId{slot});
    auto preds = roll_hybrid(cx, mr, m.constants, w, init);
    return integrated_loss_terms(read_states(cx, preds), w.horizon_states(),
                                 cfg);
  } catch (const NumericError&) {
    return std::nullopt;
  }
}

std::optional<LossTerms> kinematic_window_terms(const KinematicModel& m,
                                                const TrainingWindow& w,
                                                const LossConfig& cfg,
                                                InitMode init) {
  try {
    Arena<double> arena;
    EagerCtx<double> cx(arena);
    auto mr = make_ref(cx, m, w.env);
    auto preds = roll_kinematic(cx, mr, m.constants, w, init);
    return integrated_loss_terms(read_states(cx, preds), w.horizon_states(),
                                 cfg);
  } catch (const NumericError&) {
    return std::nullopt;
  }
}

void fisher_yates(std::vector<const TrainingWindow*>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

WindowEvalResult evaluate_windows(const HybridModel& m,
                                  std::span<const TrainingWindow> ws,
                                  const LossConfig& cfg, InitMode init) {
  cfg.validate();
  validate_model(m);
  auto a = eval_windows_core(ws, [&](const TrainingWindow& w) {
    w.validate();
    return hybrid_window_terms(m, w, cfg, init, terra_slot_for(m, w.env));
  });
  WindowEvalResult r;
  r.count = a.count;
  r.diverged = a.diverged;
  if (a.count > 0) {
    const double inv = 1.0 / static_cast<double>(a.count);
    r.mean.position = a.sum.position * inv;
    r.mean.yaw = a.sum.yaw * inv;
    r.mean.velocity = a.sum.velocity * inv;
    r.mean.total = a.sum.total * inv;
  }
  return r;
}

WindowEvalResult evaluate_windows(const KinematicModel& m,
                                  std::span<const TrainingWindow> ws,
                                  const LossConfig& cfg, InitMode init) {
  cfg.validate();
  validate_model(m);
  auto a = eval_windows_core(ws, [&](const TrainingWindow& w) {
    w.validate();
    return kinematic_window_terms(m, w, cfg, init);
  });
  WindowEvalResult r;
  r.count = a.count;
  r.diverged = a.diverged;
  if (a.count > 0) {
    const double inv = 1.0 / static_cast<double>(a.count);
    r.mean.position = a.sum.position * inv;
    r.mean.yaw = a.sum.yaw * inv;
    r.mean.velocity = a.sum.velocity * inv;
    r.mean.total = a.sum.total * inv;
  }
  return r;
}

HybridModel broadcast_terra(const HybridModel& m, int env_count) {
  if (m.terra.size() != 1) {
    throw ConfigError(
        "broadcast_terra: model already has per-environment networks");
  }
  if (env_count < 1) {
    throw ConfigError("broadcast_terra: environment count must be positive");
  }
  HybridModel r = m;
  r.terra.assign(static_cast<std::size_t>(env_count), m.terra.front());
  return r;
}

// ---------------------------------------------------------------------------
// Training schedule

TrainReport run_schedule(HybridModel& m, const WindowSet& windows,
                         const Schedule& sched) {
  sched.validate();
  validate_model(m);
  if (windows.train.empty() && sched.total_epochs > 0) {
    throw DataError("run_schedule: no training windows");
  }

  int max_env = -1;
  for (const auto& w : windows.train) max_env = std::max(max_env, w.env.index);
  for (const auto& w : windows.val) max_env = std::max(max_env, w.env.index);
  const int env_count = m.terra.size() > 1 ? static_cast<int>(m.terra.size())
                                           : max_env + 1;
  if (max_env >= env_count) {
    throw ConfigError("run_schedule: window environment index " +
                      std::to_string(max_env) +
                      " outside the model's environment nets");
  }

  bool shared_phase = m.terra.size() == 1;
  if (sched.specialize && shared_phase && sched.total_epochs > 0 &&
      sched.specialize_epoch > sched.total_epochs) {
    throw ConfigError(
        "run_schedule: specialization epoch exceeds the epoch count");
  }
  const bool will_specialize =
      sched.specialize && shared_phase && sched.total_epochs > 0 && env_count >= 1;

  // Specialized nets train only on their own environment's windows, so every
  // environment slot needs coverage before the run starts.
  if (will_specialize || m.terra.size() > 1) {
    std::vector<long> cnt(static_cast<std::size_t>(env_count), 0);
    for (const auto& w : windows.train) {
      ++cnt[static_cast<std::size_t>(w.env.index)];
    }
    for (int e = 0; e < env_count; ++e) {
      if (cnt[static_cast<std::size_t>(e)] == 0) {
        throw DataError("run_schedule: no training windows for environment " +
                        std::to_string(e));
      }
    }
  }

  TrainReport rep;
  ModelParamIndex mpi;
  std::vector<double> params, grads;
  AdamState adam_nets, adam_consts;
  // The terra expansion at specialization reallocates weight storage, so the
  // whole index is rebuilt and both optimizer states restart from scratch.
  auto rebuild = [&]() {
    mpi = make_param_index(m, sched.train_constants);
    params.assign(mpi.idx.total, 0.0);
    grads.assign(mpi.idx.total, 0.0);
    adam_nets = AdamState{};
    adam_consts = AdamState{};
  };
  rebuild();

  mpi.idx.gather(params);
  std::vector<double> c0(params.begin() + static_cast<long>(mpi.net_params),
                         params.end());
  for (const auto& e : mpi.idx.entries) {
    if (e.off >= mpi.net_params) rep.constant_names.push_back(e.name);
  }
  rep.constants_start = c0;

  std::vector<const TrainingWindow*> order(windows.train.size());
  const AdamConfig cfg_nets{sched.lr_nets, 0.9, 0.999, 1e-8};
  const AdamConfig cfg_consts{sched.lr_constants, 0.9, 0.999, 1e-8};
  long gstep = 0;

  for (int epoch = 1; epoch <= sched.total_epochs; ++epoch) {
    if (will_specialize && shared_phase && epoch == sched.specialize_epoch) {
      rep.shared_snapshot = m;
      auto shared = m.terra.front();
      m.terra.assign(static_cast<std::size_t>(env_count), shared);
      shared_phase = false;
      rep.specialized_at_epoch = epoch;
      rebuild();
    }
    const char* phase = shared_phase ? "shared" : "specialized";

    for (std::size_t i = 0; i < order.size(); ++i) {
      order[i] = &windows.train[i];
    }
    Rng rng(derive_seed(sched.seed, "epoch-shuffle",
                        static_cast<std::uint64_t>(epoch)));
    fisher_yates(order, rng);

    for (std::size_t b0 = 0; b0 < order.size();
         b0 += static_cast<std::size_t>(sched.batch_size)) {
      const std::size_t b1 =
          std::min(order.size(), b0 + static_cast<std::size_t>(sched.batch_size));
      auto br = batch_gradients(
          std::span<const TrainingWindow* const>(order.data() + b0, b1 - b0),
          mpi.idx.total, [&](const TrainingWindow& w, std::span<double> g) {
            const int slot = shared_phase ? 0 : w.env.index;
            return window_gradient(m, w, sched.loss, mpi, g, sched.init, slot);
          });
      rep.diverged_windows += br.diverged;
      if (br.contributed == 0) continue;  // every window in the batch diverged

      const double inv = 1.0 / static_cast<double>(br.contributed);
      for (auto& g : br.grads) g *= inv;
      const double gnorm =
          clip_global_norm(std::span<double>(br.grads), sched.clip_norm);

      mpi.idx.gather(params);
      adam_update(std::span<double>(params).first(mpi.net_params),
                  std::span<const double>(br.grads).first(mpi.net_params),
                  adam_nets, cfg_nets);
      const std::size_t nc = mpi.idx.total - mpi.net_params;
      if (nc > 0) {
        adam_update(std::span<double>(params).subspan(mpi.net_params),
                    std::span<const double>(br.grads).subspan(mpi.net_params),
                    adam_consts, cfg_consts);
      }
      mpi.idx.scatter(params);
      ++gstep;

      double drift = 0.0;
      for (std::size_t i = 0; i < nc; ++i) {
        if (c0[i] != 0.0) {
          drift = std::max(
              drift, std::abs(params[mpi.net_params + i] / c0[i] - 1.0) * 100.0);
        }
      }
      rep.max_constant_drift_pct = std::max(rep.max_constant_drift_pct, drift);

      LossCurvePoint p;
      p.step = gstep;
      p.epoch = epoch;
      p.phase = phase;
      p.terms = br.mean;
      p.grad_norm = gnorm;
      p.constants_drift_pct = drift;
      rep.curve.push_back(std::move(p));
    }

    if (sched.record_val_each_epoch && !windows.val.empty()) {
      auto a = eval_windows_core(windows.val, [&](const TrainingWindow& w) {
        const int slot = shared_phase ? 0 : w.env.index;
        return hybrid_window_terms(m, w, sched.loss, sched.init, slot);
      });
      EpochVal ev;
      ev.epoch = epoch;
      ev.diverged = a.diverged;
      ev.val_loss = a.count > 0
                        ? a.sum.total * (1.0 / static_cast<double>(a.count))
                        : std::numeric_limits<double>::quiet_NaN();
      rep.val_curve.push_back(ev);
    }
  }
  rep.adam_steps = gstep;

  mpi.idx.gather(params);
  rep.constants_final.assign(params.begin() + static_cast<long>(mpi.net_params),
                             params.end());

  if (!windows.val.empty()) {
    rep.val_loss_by_env.assign(static_cast<std::size_t>(env_count),
                               std::numeric_limits<double>::quiet_NaN());
    for (int e = 0; e < env_count; ++e) {
      std::vector<TrainingWindow> ws;
      for (const auto& w : windows.val) {
        if (w.env.index == e) ws.push_back(w);
      }
      if (ws.empty()) continue;
      const int slot = m.terra.size() == 1 ? 0 : e;
      auto a = eval_windows_core(ws, [&](const TrainingWindow& w) {
        return hybrid_window_terms(m, w, sched.loss, sched.init, slot);
      });
      if (a.count > 0) {
        rep.val_loss_by_env[static_cast<std::size_t>(e)] =
            a.sum.total * (1.0 / static_cast<double>(a.count));
      }
    }
  }
  return rep;
}

TrainReport run_schedule(KinematicModel& m, const WindowSet& windows,
                         const Schedule& sched) {
  sched.validate();
  validate_model(m);
  if (windows.train.empty() && sched.total_epochs > 0) {
    throw DataError("run_schedule: no training windows");
  }

  TrainReport rep;
  ModelParamIndex mpi = make_param_index(m);
  std::vector<double> params(mpi.idx.total, 0.0);
  AdamState adam;
  const AdamConfig cfg_nets{sched.lr_nets, 0.9, 0.999, 1e-8};

  std::vector<const TrainingWindow*> order(windows.train.size());
  long gstep = 0;

  for (int epoch = 1; epoch <= sched.total_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      order[i] = &windows.train[i];
    }
    Rng rng(derive_seed(sched.seed, "epoch-shuffle",
                        static_cast<std::uint64_t>(epoch)));
    fisher_yates(order, rng);

    for (std::size_t b0 = 0; b0 < order.size();
         b0 += static_cast<std::size_t>(sched.batch_size)) {
      const std::size_t b1 =
          std::min(order.size(), b0 + static_cast<std::size_t>(sched.batch_size));
      auto br = batch_gradients(
          std::span<const TrainingWindow* const>(order.data() + b0, b1 - b0),
          mpi.idx.total, [&](const TrainingWindow& w, std::span<double> g) {
            return window_gradient(m, w, sched.loss, mpi, g, sched.init);
          });
      rep.diverged_windows += br.diverged;
      if (br.contributed == 0) continue;

      const double inv = 1.0 / static_cast<double>(br.contributed);
      for (auto& g : br.grads) g *= inv;
      const double gnorm =
          clip_global_norm(std::span<double>(br.grads), sched.clip_norm);

      mpi.idx.gather(params);
      adam_update(params, br.grads, adam, cfg_nets);
      mpi.idx.scatter(params);
      ++gstep;

      LossCurvePoint p;
      p.step = gstep;
      p.epoch = epoch;
      p.phase = "shared";
      p.terms = br.mean;
      p.grad_norm = gnorm;
      rep.curve.push_back(std::move(p));
    }

    if (sched.record_val_each_epoch && !windows.val.empty()) {
      auto a = eval_windows_core(windows.val, [&](const TrainingWindow& w) {
        return kinematic_window_terms(m, w, sched.loss, sched.init);
      });
      EpochVal ev;
      ev.epoch = epoch;
      ev.diverged = a.diverged;
      ev.val_loss = a.count > 0
                        ? a.sum.total * (1.0 / static_cast<double>(a.count))
                        : std::numeric_limits<double>::quiet_NaN();
      rep.val_curve.push_back(ev);
    }
  }
  rep.adam_steps = gstep;

  if (!windows.val.empty()) {
    int max_env = 0;
    for (const auto& w : windows.val) max_env = std::max(max_env, w.env.index);
    rep.val_loss_by_env.assign(static_cast<std::size_t>(max_env) + 1,
                               std::numeric_limits<double>::quiet_NaN());
    for (int e = 0; e <= max_env; ++e) {
      std::vector<TrainingWindow> ws;
      for (const auto& w : windows.val) {
        if (w.env.index == e) ws.push_back(w);
      }
      if (ws.empty()) continue;
      auto a = eval_windows_core(ws, [&](const TrainingWindow& w) {
        return kinematic_window_terms(m, w, sched.loss, sched.init);
      });
      if (a.count > 0) {
        rep.val_loss_by_env[static_cast<std::size_t>(e)] =
            a.sum.total * (1.0 / static_cast<double>(a.count));
      }
    }
  }
  return rep;
}

void write_loss_curve(const std::string& path,
                      std::span<const LossCurvePoint> curve) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open loss-curve file: " + path);
  for (const auto& p : curve) {
    nlohmann::json j{{"step", p.step},
                     {"epoch", p.epoch},
                     {"phase", p.phase},
                     {"position", p.terms.position},
                     {"yaw", p.terms.yaw},
                     {"velocity", p.terms.velocity},
                     {"total", p.terms.total},
                     {"grad_norm", p.grad_norm},
                     {"constants_drift_pct", p.constants_drift_pct}};
    f << j.dump() << "\n";
  }
  f.flush();
  if (!f.good()) throw DataError("failed writing loss-curve file: " + path);
}

// ---------------------------------------------------------------------------
// Horizon metrics

std::vector<HorizonMetric> eval_metrics(
    std::span<const std::vector<VehicleState>> preds,
    std::span<const std::vector<VehicleState>> truths,
    std::span<const double> horizons_s, double dt) {
  if (preds.size() != truths.size()) {
    throw ShapeError("eval_metrics: prediction/truth rollout count mismatch");
  }
  if (preds.empty()) throw DataError("eval_metrics: no rollouts");
  if (!(dt > 0.0)) throw ConfigError("eval_metrics: step size must be positive");
  std::vector<HorizonMetric> out;
  out.reserve(horizons_s.size());
  for (double hs : horizons_s) {
    const long k = std::lround(hs / dt);
    if (k < 1) {
      throw ConfigError("eval_metrics: horizon shorter than one step");
    }
    std::vector<double> dist, yaw;
    dist.reserve(preds.size());
    yaw.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i].size() != truths[i].size()) {
        throw ShapeError("eval_metrics: rollout length mismatch");
      }
      if (static_cast<std::size_t>(k) > preds[i].size()) {
        throw DataError("eval_metrics: horizon exceeds rollout length");
      }
      const auto& p = preds[i][static_cast<std::size_t>(k - 1)];
      const auto& t = truths[i][static_cast<std::size_t>(k - 1)];
      dist.push_back(std::hypot(p.x - t.x, p.y - t.y));
      yaw.push_back(std::abs(wrap_angle(p.psi - t.psi)));
    }
    auto stats = [](const std::vector<double>& v) {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      var /= static_cast<double>(v.size());
      return std::pair<double, double>{mean, std::sqrt(var)};
    };
    HorizonMetric hm;
    hm.horizon_s = hs;
    hm.samples = dist.size();
    std::tie(hm.dist_mean, hm.dist_std) = stats(dist);
    std::tie(hm.yaw_mean, hm.yaw_std) = stats(yaw);
    out.push_back(hm);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pre-fits for the parametric pieces

SteeringFitReport fit_steering_constants(const Dataset& d,
                                         const ParametricConstants& c,
                                         const SteeringFitConfig& cfg) {
  if (cfg.iterations < 1) {
    throw ConfigError("steering fit: iterations must be positive");
  }
  if (!(cfg.lr > 0.0)) {
    throw ConfigError("steering fit: learning rate must be positive");
  }
  if (cfg.max_rows < 16) throw ConfigError("steering fit: max_rows too small");
  if (!(c.steer_divisor > 0.0) || !(c.wheelbase > 0.0)) {
    throw ConfigError("steering fit: starting constants must be positive");
  }

  std::vector<std::size_t> rows;
  std::size_t excited = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (std::abs(d.vx[i]) < cfg.min_speed) continue;
    if (!(std::abs(d.delta[i] / c.steer_divisor) < 0.95 * (M_PI / 2))) continue;
    rows.push_back(i);
    if (std::abs(d.psi_dot[i]) > cfg.min_yaw_rate) ++excited;
  }
  if (rows.size() < 32 || excited < 32) {
    throw DataError("steering fit: not enough yaw excitation in the log");
  }
  if (rows.size() > cfg.max_rows) {
    Rng rng(derive_seed(cfg.seed, "steering-fit", 0));
    for (std::size_t i = 0; i < cfg.max_rows; ++i) {
      const auto j =
          i + static_cast<std::size_t>(rng.uniform_int(
                  0, static_cast<long>(rows.size() - 1 - i)));
      std::swap(rows[i], rows[j]);
    }
    rows.resize(cfg.max_rows);
    std::sort(rows.begin(), rows.end());
  }

  // Largest usable steering magnitude pins a lower bound on the divisor so
  // every iteration stays inside the tan() domain.
  double dmax = 0.0;
  for (std::size_t i : rows) dmax = std::max(dmax, std::abs(d.delta[i]));
  const double s_floor = dmax / (0.95 * (M_PI / 2)) + 1e-9;

  auto eval = [&](double s_div, double wb) {
    double acc = 0.0;
    for (std::size_t i : rows) {
      const double pp = (d.vx[i] / wb) * std::tan(d.delta[i] / s_div);
      const double r = pp - d.psi_dot[i];
      acc += r * r;
    }
    return acc / static_cast<double>(rows.size());
  };

  double s_div = c.steer_divisor;
  double wb = c.wheelbase;
  SteeringFitReport rep;
  rep.rows_used = rows.size();
  rep.initial_loss = eval(s_div, wb);

  AdamState adam;
  const AdamConfig acfg{cfg.lr, 0.9, 0.999, 1e-8};
  for (int it = 0; it < cfg.iterations; ++it) {
    ad::Tape tape;
    TapeCtx cx(tape);
    auto s_node = cx.param(std::span<const double>(&s_div, 1), 0);
    auto w_node = cx.param(std::span<const double>(&wb, 1), 1);
    auto acc = cx.scalar(0.0);
    for (std::size_t i : rows) {
      auto pp = cx.mul(cx.div(cx.scalar(d.vx[i]), w_node),
                       cx.tan_(cx.div(cx.scalar(d.delta[i]), s_node)));
      auto r = cx.sub(pp, cx.scalar(d.psi_dot[i]));
      acc = cx.add(acc, cx.mul(r, r));
    }
    auto loss = cx.scale(acc, 1.0 / static_cast<double>(rows.size()));
    tape.backward(loss);
    double g[2] = {0.0, 0.0};
    cx.collect_grads({g, 2});
    double p[2] = {s_div, wb};
    adam_update({p, 2}, {g, 2}, adam, acfg);
    s_div = std::max(p[0], s_floor);
    wb = std::max(p[1], 0.05);
  }

  rep.steer_divisor = s_div;
  rep.wheelbase = wb;
  rep.final_loss = eval(s_div, wb);
  rep.iterations = cfg.iterations;
  rep.converged = rep.final_loss <= rep.initial_loss;
  return rep;
}

BaselineFitReport fit_parametric_baseline(const Dataset& d) {
  if (!(d.dt > 0.0)) throw ConfigError("baseline fit: step size must be positive");
  double a[3][3] = {{0.0}};
  double b[3] = {0.0, 0.0, 0.0};
  std::size_t n = 0;
  for (const auto& [s0, s1] : segment_ranges(d)) {
    for (std::size_t k = s0; k + 1 < s1; ++k) {
      const double target = (d.vx[k + 1] - d.vx[k]) / d.dt;
      double sgn = 0.0;
      if (std::abs(d.vx[k]) >= kSpeedDeadband) sgn = d.vx[k] > 0 ? 1.0 : -1.0;
      const double f[3] = {d.u_throttle[k], -(d.brake_state[k] * sgn),
                           -d.vx[k]};
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) a[i][j] += f[i] * f[j];
        b[i] += f[i] * target;
      }
      ++n;
    }
  }
  if (n < 10) throw DataError("baseline fit: fewer than 10 usable samples");

  // Normal equations by Gaussian elimination with partial pivoting; a tiny
  // pivot means some control channel is never exercised in the log.
  double mat[3][4];
  double scale_ref = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      mat[i][j] = a[i][j];
      scale_ref = std::max(scale_ref, std::abs(a[i][j]));
    }
    mat[i][3] = b[i];
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(mat[r][col]) > std::abs(mat[piv][col])) piv = r;
    }
    if (std::abs(mat[piv][col]) <= 1e-12 * std::max(1.0, scale_ref)) {
      throw DataError(
          "baseline fit: degenerate regressors (a control channel is never "
          "exercised)");
    }
    if (piv != col) {
      for (int j = col; j < 4; ++j) std::swap(mat[piv][j], mat[col][j]);
    }
    for (int r = col + 1; r < 3; ++r) {
      const double factor = mat[r][col] / mat[col][col];
      for (int j = col; j < 4; ++j) mat[r][j] -= factor * mat[col][j];
    }
  }
  double x[3];
  for (int i = 2; i >= 0; --i) {
    double acc = mat[i][3];
    for (int j = i + 1; j < 3; ++j) acc -= mat[i][j] * x[j];
    x[i] = acc / mat[i][i];
  }

  BaselineFitReport rep;
  rep.throttle_gain = x[0];
  rep.brake_gain = x[1];
  rep.drag_gain = x[2];
  rep.rows_used = n;
  double sse = 0.0;
  for (const auto& [s0, s1] : segment_ranges(d)) {
    for (std::size_t k = s0; k + 1 < s1; ++k) {
      const double target = (d.vx[k + 1] - d.vx[k]) / d.dt;
      double sgn = 0.0;
      if (std::abs(d.vx[k]) >= kSpeedDeadband) sgn = d.vx[k] > 0 ? 1.0 : -1.0;
      const double fit = x[0] * d.u_throttle[k] -
                         x[1] * (d.brake_state[k] * sgn) - x[2] * d.vx[k];
      sse += (target - fit) * (target - fit);
    }
  }
  rep.mse = sse / static_cast<double>(n);
  return rep;
}

}  // namespace vdyn
