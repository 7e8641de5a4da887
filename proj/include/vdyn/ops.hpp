#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "vdyn/arena.hpp"
#include "vdyn/kernels.hpp"
#include "vdyn/tape.hpp"

namespace vdyn {

// Model math is written once, generic over an execution context. EagerCtx
// evaluates immediately into an arena (float for rollout, double for tests
// and evaluation); TapeCtx records the identical op sequence on the autodiff
// tape. Both run the kernels in vdyn/kernels.hpp, so for double precision
// the two paths agree bitwise.

/// Immediate execution context.
template <typename T>
struct EagerCtx {
  using V = std::span<const T>;

  explicit EagerCtx(Arena<T>& a) : arena(&a) {}

  Arena<T>* arena;

  V vec(std::span<const T> v) {
    auto s = arena->alloc(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) s[i] = v[i];
    return s;
  }

  /// Zero-copy view, used for weights.
  V view(const std::vector<T>& w) { return {w.data(), w.size()}; }

  V scalar(double v) {
    auto s = arena->alloc(1);
    s[0] = static_cast<T>(v);
    return s;
  }

  V zeros(std::size_t n) {
    auto s = arena->alloc(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = T(0);
    return s;
  }

  double first(V v) const { return static_cast<double>(v[0]); }

  V add(V a, V b) {
    auto y = arena->alloc(a.size());
    kern::add(a.data(), b.data(), y.data(), a.size());
    return y;
  }
  V sub(V a, V b) {
    auto y = arena->alloc(a.size());
    kern::sub(a.data(), b.data(), y.data(), a.size());
    return y;
  }
  V mul(V a, V b) {
    auto y = arena->alloc(a.size());
    kern::mul(a.data(), b.data(), y.data(), a.size());
    return y;
  }
  V div(V a, V b) {
    auto y = arena->alloc(a.size());
    kern::div(a.data(), b.data(), y.data(), a.size());
    return y;
  }
  V matvec(V m, V x, std::size_t rows, std::size_t cols) {
    auto y = arena->alloc(rows);
    kern::matvec(m.data(), x.data(), y.data(), rows, cols);
    return y;
  }
  V tanh_(V a) {
    auto y = arena->alloc(a.size());
    kern::tanh_v(a.data(), y.data(), a.size());
    return y;
  }
  V sigmoid_(V a) {
    auto y = arena->alloc(a.size());
    kern::sigmoid_v(a.data(), y.data(), a.size());
    return y;
  }
  V sin_(V a) {
    auto y = arena->alloc(a.size());
    kern::sin_v(a.data(), y.data(), a.size());
    return y;
  }
  V cos_(V a) {
    auto y = arena->alloc(a.size());
    kern::cos_v(a.data(), y.data(), a.size());
    return y;
  }
  V tan_(V a) {
    auto y = arena->alloc(a.size());
    kern::tan_v(a.data(), y.data(), a.size());
    return y;
  }
  V clamp(V x, V lo, V hi) {
    auto y = arena->alloc(x.size());
    kern::clamp_v(x.data(), lo[0], hi[0], y.data(), x.size());
    return y;
  }
  V wrap(V a) {
    auto y = arena->alloc(a.size());
    kern::wrap_v(a.data(), y.data(), a.size());
    return y;
  }
  V concat(V a, V b) {
    auto y = arena->alloc(a.size() + b.size());
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) y[a.size() + i] = b[i];
    return y;
  }
  V slice(V a, std::size_t start, std::size_t n) {
    return a.subspan(start, n);
  }
  V scale(V a, double c) {
    auto y = arena->alloc(a.size());
    kern::scale(a.data(), static_cast<T>(c), y.data(), a.size());
    return y;
  }
};

/// Recording context. Parameter leaves remember their offset into the flat
/// trainable-parameter vector so adjoints can be gathered after backward().
struct TapeCtx {
  using V = ad::Tape::Id;

  explicit TapeCtx(ad::Tape& t) : tape(&t) {}

  ad::Tape* tape;
  struct ParamLeaf {
    V node;
    std::size_t flat_off;
    std::size_t len;
  };
  std::vector<ParamLeaf> param_leaves;

  V vec(std::span<const double> v) { return tape->leaf(v); }
  V view(const std::vector<double>& w) {
    return tape->leaf({w.data(), w.size()});
  }
  V param(std::span<const double> w, std::size_t flat_off) {
    V id = tape->leaf(w);
    param_leaves.push_back({id, flat_off, w.size()});
    return id;
  }
  V scalar(double v) { return tape->scalar(v); }
  V zeros(std::size_t n) {
    std::vector<double> z(n, 0.0);
    return tape->leaf(z);
  }

  double first(V v) const { return tape->value0(v); }

  V add(V a, V b) { return tape->add(a, b); }
  V sub(V a, V b) { return tape->sub(a, b); }
  V mul(V a, V b) { return tape->mul(a, b); }
  V div(V a, V b) { return tape->div(a, b); }
  V matvec(V m, V x, std::size_t rows, std::size_t cols) {
    return tape->matvec(m, x, rows, cols);
  }
  V tanh_(V a) { return tape->tanh_v(a); }
  V sigmoid_(V a) { return tape->sigmoid_v(a); }
  V sin_(V a) { return tape->sin_v(a); }
  V cos_(V a) { return tape->cos_v(a); }
  V tan_(V a) { return tape->tan_v(a); }
  V clamp(V x, V lo, V hi) { return tape->clamp(x, lo, hi); }
  V wrap(V a) { return tape->wrap(a); }
  V concat(V a, V b) { return tape->concat(a, b); }
  V slice(V a, std::size_t start, std::size_t n) {
    return tape->slice(a, start, n);
  }
  V scale(V a, double c) { return tape->scale(a, c); }

  /// Accumulate d(loss)/d(param) into the flat gradient vector.
  void collect_grads(std::span<double> flat) const {
    for (const auto& p : param_leaves) {
      auto g = tape->grad(p.node);
      for (std::size_t i = 0; i < p.len; ++i) flat[p.flat_off + i] += g[i];
    }
  }
};

}  // namespace vdyn
