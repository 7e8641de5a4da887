#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vdyn/error.hpp"

namespace vdyn::ad {

/// Op set of the recorded tape. Fixed and small on purpose: every model in
/// this codebase is expressible with these, and each op has a hand-checked
/// adjoint.
enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatVec,
  kTanh,
  kSigmoid,
  kSin,
  kCos,
  kTan,
  kClamp,
  kWrap,
  kConcat,
  kSlice,
  kScale,
};

/// Reverse-mode autodiff tape over vector-valued nodes (double precision).
///
/// Recording is eager: building a node also computes its value, through the
/// same kernels the plain forward path uses, in the same order. A taped
/// rollout therefore reproduces the eager rollout bitwise, and backward()
/// walks the records in reverse.
///
/// clamp follows the straight-through-at-interior convention: gradient 1
/// strictly inside [lo, hi], 0 outside, with the boundary gradient routed to
/// the active bound (which may itself be a trainable node). wrap passes the
/// gradient through unchanged.
class Tape {
 public:
  using Id = std::uint32_t;

  Id leaf(std::span<const double> v);
  Id scalar(double v);

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id div(Id a, Id b);
  /// y = M x. m holds rows*cols values row-major, x holds cols.
  Id matvec(Id m, Id x, std::size_t rows, std::size_t cols);
  Id tanh_v(Id a);
  Id sigmoid_v(Id a);
  Id sin_v(Id a);
  Id cos_v(Id a);
  Id tan_v(Id a);
  /// Elementwise clamp of x into [lo, hi]; lo and hi are scalar nodes.
  Id clamp(Id x, Id lo, Id hi);
  /// Wrap to (-pi, pi]; adjoint is identity.
  Id wrap(Id a);
  Id concat(Id a, Id b);
  Id slice(Id a, std::size_t start, std::size_t len);
  Id scale(Id a, double c);

  std::span<const double> value(Id id) const;
  double value0(Id id) const { return value(id)[0]; }
  std::size_t len(Id id) const { return nodes_[id].len; }

  /// Mark subsequent nodes as belonging to rollout step `idx` (for error
  /// attribution). -1 means outside any step.
  void begin_step(long idx) { step_ = idx; }

  /// Seed d(loss)/d(loss) = 1 and accumulate adjoints for every node.
  /// loss must be scalar. Throws NumericError (with the step index of the
  /// offending node) if a non-finite adjoint appears.
  void backward(Id loss);

  /// Adjoint of a node; valid after backward().
  std::span<const double> grad(Id id) const;

  void clear();
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t value_count() const { return val_.size(); }

 private:
  struct Node {
    Op op;
    Id a = 0;
    Id b = 0;
    Id c = 0;
    std::uint32_t off = 0;
    std::uint32_t len = 0;
    std::uint32_t aux = 0;
    double caux = 0.0;
    long step = -1;
  };

  Id push(Op op, std::size_t len, Id a = 0, Id b = 0, Id c = 0,
          std::uint32_t aux = 0, double caux = 0.0);
  double* data(Id id) { return val_.data() + nodes_[id].off; }
  const double* data(Id id) const { return val_.data() + nodes_[id].off; }

  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> grad_;
  long step_ = -1;
  bool has_grad_ = false;
};

}  // namespace vdyn::ad
