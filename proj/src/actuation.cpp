#include "vdyn/actuation.hpp"

#include <cmath>
#include <vector>

#include "vdyn/adam.hpp"
#include "vdyn/arena.hpp"
#include "vdyn/kernels.hpp"
#include "vdyn/ops.hpp"
#include "vdyn/tape.hpp"

namespace vdyn {

double brake_parametric(double u_b, double b_u, double gain, double limit) {
  return kern::clamp((u_b - b_u) * gain, -limit, limit);
}

double steer_parametric(double u_delta, double delta, double gain,
                        double limit) {
  return kern::clamp((u_delta - delta) * gain, -limit, limit);
}

BrakeStepResult brake_step(const VehicleState& s, const ControlInput& u,
                           const DelayModel& m, const LstmState& hidden,
                           const ParametricConstants& c) {
  Arena<double> arena;
  EagerCtx<double> cx(arena);
  auto mr = make_ref(cx, m);
  LstmStateRef<EagerCtx<double>> h{cx.view(hidden.h), cx.view(hidden.c)};
  auto b = brake_apply(cx, mr, cx.scalar(s.brake), cx.scalar(u.brake), h, c.dt);
  double out = b[0];
  if (!std::isfinite(out)) {
    throw NumericError("brake delay model produced a non-finite state");
  }
  return {out, {{h.h.begin(), h.h.end()}, {h.c.begin(), h.c.end()}}};
}

SteerStepResult steer_step(const VehicleState& s, const ControlInput& u,
                           const DelayModel& m, const LstmState& hidden,
                           const ParametricConstants& c) {
  Arena<double> arena;
  EagerCtx<double> cx(arena);
  auto mr = make_ref(cx, m);
  LstmStateRef<EagerCtx<double>> h{cx.view(hidden.h), cx.view(hidden.c)};
  double cmd = u.steer * c.max_hand_wheel();
  auto out = steer_apply(cx, mr, cx.scalar(s.vx), cx.scalar(cmd),
                         cx.scalar(s.delta), cx.scalar(s.delta_dot), h, c.dt,
                         c.max_hand_wheel());
  double d = out.delta[0];
  double dd = out.delta_dot[0];
  if (!std::isfinite(d) || !std::isfinite(dd)) {
    throw NumericError("steering delay model produced a non-finite state");
  }
  return {d, dd, {{h.h.begin(), h.h.end()}, {h.c.begin(), h.c.end()}}};
}

DelayFitReport fit_delay_constants(std::span<const DelaySeries> series,
                                   const DelayFitConfig& cfg) {
  std::size_t usable = 0;
  std::size_t samples = 0;
  for (const auto& s : series) {
    if (s.cmd.size() != s.actual.size()) {
      throw DataError("delay fit: cmd/actual length mismatch");
    }
    if (s.actual.size() >= 2) {
      ++usable;
      samples += s.actual.size() - 1;
    }
  }
  if (usable == 0) {
    throw DataError("delay fit: no sequence with at least two samples");
  }

  DelayFitReport rep;
  double gain = cfg.init_gain;
  double limit = cfg.init_limit;

  ParamIndex idx;
  idx.add("gain", gain);
  idx.add("limit", limit);

  AdamState adam;
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  // One-step-ahead predictions over a whole series are data-parallel, so
  // each iteration is a handful of vector nodes: the per-step errors enter
  // as an (n x 1) matrix against the scalar gain.
  auto iteration = [&](std::vector<double>* grad_out) {
    ad::Tape tape;
    TapeCtx cx(tape);
    auto g = cx.param({&gain, 1}, idx.offset_of(&gain));
    auto l = cx.param({&limit, 1}, idx.offset_of(&limit));
    auto lo = cx.scale(l, -1.0);
    TapeCtx::V total = cx.scalar(0.0);
    for (const auto& s : series) {
      if (s.actual.size() < 2) continue;
      std::size_t n = s.actual.size() - 1;
      std::vector<double> err(n);
      for (std::size_t t = 0; t < n; ++t) err[t] = s.cmd[t] - s.actual[t];
      auto raw = cx.matvec(cx.vec(err), g, n, 1);
      auto p = cx.clamp(raw, lo, l);
      auto prev = cx.vec({s.actual.data(), n});
      auto next = cx.vec({s.actual.data() + 1, n});
      auto e = cx.sub(cx.add(prev, cx.scale(p, cfg.dt)), next);
      auto sq = cx.mul(e, e);
      std::vector<double> ones(n, 1.0);
      total = cx.add(total, cx.matvec(cx.vec(ones), sq, 1, n));
    }
    auto loss = cx.scale(total, 1.0 / static_cast<double>(samples));
    if (grad_out != nullptr) {
      tape.backward(loss);
      cx.collect_grads(*grad_out);
    }
    return tape.value0(loss);
  };

  std::vector<double> grad(2);
  std::vector<double> flat(2);
  for (int it = 0; it < cfg.iterations; ++it) {
    grad.assign(2, 0.0);
    double loss = iteration(&grad);
    if (it == 0) {
      rep.initial_loss = loss;
      double gnorm = std::hypot(grad[0], grad[1]);
      if (gnorm < 1e-14) {
        rep.unidentifiable = true;
        rep.gain = gain;
        rep.rate_limit = limit;
        rep.final_loss = loss;
        rep.iterations = 0;
        return rep;
      }
    }
    idx.gather(flat);
    adam_update(flat, grad, adam, acfg);
    // both constants are physically positive
    flat[0] = std::max(flat[0], 1e-3);
    flat[1] = std::max(flat[1], 1e-3);
    idx.scatter(flat);
    rep.iterations = it + 1;
  }
  rep.final_loss = iteration(nullptr);
  rep.gain = gain;
  rep.rate_limit = limit;
  rep.converged = rep.final_loss < rep.initial_loss;
  return rep;
}

}  // namespace vdyn
