#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "vdyn/error.hpp"

namespace vdyn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long step = 0;

  void ensure(std::size_t n) {
    if (m.size() != n) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
      step = 0;
    }
  }
};

/// One bias-corrected Adam update, in place.
/// Throws ShapeError on size mismatch, NumericError on non-finite gradients.
inline void adam_update(std::span<double> params,
                        std::span<const double> grads, AdamState& st,
                        const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_update: params/grads size mismatch");
  }
  st.ensure(params.size());
  ++st.step;
  double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    if (!std::isfinite(g)) {
      throw NumericError("adam_update: non-finite gradient");
    }
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
    double mhat = st.m[i] / c1;
    double vhat = st.v[i] / c2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// Scale gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
inline double clip_global_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (double& g : grads) g *= s;
  }
  return norm;
}

}  // namespace vdyn
