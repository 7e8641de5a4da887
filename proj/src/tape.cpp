#include "vdyn/tape.hpp"

#include <cmath>
#include <string>

#include "vdyn/kernels.hpp"

namespace vdyn::ad {

Tape::Id Tape::push(Op op, std::size_t len, Id a, Id b, Id c,
                    std::uint32_t aux, double caux) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.c = c;
  n.off = static_cast<std::uint32_t>(val_.size());
  n.len = static_cast<std::uint32_t>(len);
  n.aux = aux;
  n.caux = caux;
  n.step = step_;
  val_.resize(val_.size() + len);
  nodes_.push_back(n);
  has_grad_ = false;
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(std::span<const double> v) {
  Id id = push(Op::kLeaf, v.size());
  double* y = data(id);
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i];
  return id;
}

Tape::Id Tape::scalar(double v) { return leaf({&v, 1}); }

Tape::Id Tape::add(Id a, Id b) {
  if (len(a) != len(b)) throw ShapeError("tape add: length mismatch");
  Id id = push(Op::kAdd, len(a), a, b);
  kern::add(data(a), data(b), data(id), len(id));
  return id;
}

Tape::Id Tape::sub(Id a, Id b) {
  if (len(a) != len(b)) throw ShapeError("tape sub: length mismatch");
  Id id = push(Op::kSub, len(a), a, b);
  kern::sub(data(a), data(b), data(id), len(id));
  return id;
}

Tape::Id Tape::mul(Id a, Id b) {
  if (len(a) != len(b)) throw ShapeError("tape mul: length mismatch");
  Id id = push(Op::kMul, len(a), a, b);
  kern::mul(data(a), data(b), data(id), len(id));
  return id;
}

Tape::Id Tape::div(Id a, Id b) {
  if (len(a) != len(b)) throw ShapeError("tape div: length mismatch");
  Id id = push(Op::kDiv, len(a), a, b);
  kern::div(data(a), data(b), data(id), len(id));
  return id;
}

Tape::Id Tape::matvec(Id m, Id x, std::size_t rows, std::size_t cols) {
  if (len(m) != rows * cols || len(x) != cols) {
    throw ShapeError("tape matvec: dimension mismatch");
  }
  Id id = push(Op::kMatVec, rows, m, x, 0, static_cast<std::uint32_t>(cols));
  kern::matvec(data(m), data(x), data(id), rows, cols);
  return id;
}

Tape::Id Tape::tanh_v(Id a) {
  Id id = push(Op::kTanh, len(a), a);
  kern::tanh_v(data(a), data(id), len(id));
  return id;
}

Tape::Id Tape::sigmoid_v(Id a) {
  Id id = push(Op::kSigmoid, len(a), a);
  kern::sigmoid_v(data(a), data(id), len(id));
  return id;
}

Tape::Id Tape::sin_v(Id a) {
  Id id = push(Op::kSin, len(a), a);
  kern::sin_v(data(a), data(id), len(id));
  return id;
}

Tape::Id Tape::cos_v(Id a) {
  Id id = push(Op::kCos, len(a), a);
  kern::cos_v(data(a), data(id), len(id));
  return id;
}

Tape::Id Tape::tan_v(Id a) {
  Id id = push(Op::kTan, len(a), a);
  kern::tan_v(data(a), data(id), len(id));
  return id;
}

Tape::Id Tape::clamp(Id x, Id lo, Id hi) {
  if (len(lo) != 1 || len(hi) != 1) {
    throw ShapeError("tape clamp: bounds must be scalar");
  }
  Id id = push(Op::kClamp, len(x), x, lo, hi);
  kern::clamp_v(data(x), value0(lo), value0(hi), data(id), len(id));
  return id;
}

Tape::Id Tape::wrap(Id a) {
  Id id = push(Op::kWrap, len(a), a);
  kern::wrap_v(data(a), data(id), len(id));
  return id;
}

Tape::Id Tape::concat(Id a, Id b) {
  Id id = push(Op::kConcat, len(a) + len(b), a, b);
  double* y = data(id);
  const double* va = data(a);
  const double* vb = data(b);
  std::size_t na = len(a);
  for (std::size_t i = 0; i < na; ++i) y[i] = va[i];
  for (std::size_t i = 0; i < len(b); ++i) y[na + i] = vb[i];
  return id;
}

Tape::Id Tape::slice(Id a, std::size_t start, std::size_t n) {
  if (start + n > len(a)) throw ShapeError("tape slice: out of range");
  Id id = push(Op::kSlice, n, a, 0, 0, static_cast<std::uint32_t>(start));
  const double* va = data(a) + start;
  double* y = data(id);
  for (std::size_t i = 0; i < n; ++i) y[i] = va[i];
  return id;
}

Tape::Id Tape::scale(Id a, double c) {
  Id id = push(Op::kScale, len(a), a, 0, 0, 0, c);
  kern::scale(data(a), c, data(id), len(id));
  return id;
}

std::span<const double> Tape::value(Id id) const {
  const Node& n = nodes_[id];
  return {val_.data() + n.off, n.len};
}

std::span<const double> Tape::grad(Id id) const {
  const Node& n = nodes_[id];
  return {grad_.data() + n.off, n.len};
}

void Tape::backward(Id loss) {
  if (nodes_[loss].len != 1) {
    throw ShapeError("tape backward: loss must be scalar");
  }
  grad_.assign(val_.size(), 0.0);
  grad_[nodes_[loss].off] = 1.0;
  has_grad_ = true;

  for (std::size_t k = nodes_.size(); k-- > 0;) {
    const Node& n = nodes_[k];
    if (n.op == Op::kLeaf) continue;
    const double* g = grad_.data() + n.off;
    bool any = false;
    for (std::uint32_t i = 0; i < n.len; ++i) {
      if (g[i] != 0.0) {
        any = true;
        if (!std::isfinite(g[i])) {
          throw NumericError(
              "gradient explosion: non-finite adjoint at node " +
                  std::to_string(k),
              n.step);
        }
      }
    }
    if (!any) continue;

    double* ga = grad_.data() + nodes_[n.a].off;
    const double* va = val_.data() + nodes_[n.a].off;
    const double* vy = val_.data() + n.off;

    switch (n.op) {
      case Op::kAdd: {
        double* gb = grad_.data() + nodes_[n.b].off;
        for (std::uint32_t i = 0; i < n.len; ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        double* gb = grad_.data() + nodes_[n.b].off;
        for (std::uint32_t i = 0; i < n.len; ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        double* gb = grad_.data() + nodes_[n.b].off;
        const double* vb = val_.data() + nodes_[n.b].off;
        for (std::uint32_t i = 0; i < n.len; ++i) {
          ga[i] += g[i] * vb[i];
          gb[i] += g[i] * va[i];
        }
        break;
      }
      case Op::kDiv: {
        double* gb = grad_.data() + nodes_[n.b].off;
        const double* vb = val_.data() + nodes_[n.b].off;
        for (std::uint32_t i = 0; i < n.len; ++i) {
          ga[i] += g[i] / vb[i];
          gb[i] -= g[i] * vy[i] / vb[i];
        }
        break;
      }
      case Op::kMatVec: {
        double* gm = ga;
        double* gx = grad_.data() + nodes_[n.b].off;
        const double* vm = va;
        const double* vx = val_.data() + nodes_[n.b].off;
        std::uint32_t cols = n.aux;
        for (std::uint32_t i = 0; i < n.len; ++i) {
          double gi = g[i];
          if (gi == 0.0) continue;
          double* gmrow = gm + static_cast<std::size_t>(i) * cols;
          const double* vmrow = vm + static_cast<std::size_t>(i) * cols;
          for (std::uint32_t j = 0; j < cols; ++j) {
            gmrow[j] += gi * vx[j];
            gx[j] += vmrow[j] * gi;
          }
        }
        break;
      }
      case Op::kTanh:
        for (std::uint32_t i = 0; i < n.len; ++i) {
          ga[i] += g[i] * (1.0 - vy[i] * vy[i]);
        }
        break;
      case Op::kSigmoid:
        for (std::uint32_t i = 0; i < n.len; ++i) {
          ga[i] += g[i] * vy[i] * (1.0 - vy[i]);
        }
        break;
      case Op::kSin:
        for (std::uint32_t i = 0; i < n.len; ++i) {
          ga[i] += g[i] * std::cos(va[i]);
        }
        break;
      case Op::kCos:
        for (std::uint32_t i = 0; i < n.len; ++i) {
          ga[i] -= g[i] * std::sin(va[i]);
        }
        break;
      case Op::kTan:
        for (std::uint32_t i = 0; i < n.len; ++i) {
          ga[i] += g[i] * (1.0 + vy[i] * vy[i]);
        }
        break;
      case Op::kClamp: {
        double* glo = grad_.data() + nodes_[n.b].off;
        double* ghi = grad_.data() + nodes_[n.c].off;
        double lo = val_[nodes_[n.b].off];
        double hi = val_[nodes_[n.c].off];
        for (std::uint32_t i = 0; i < n.len; ++i) {
          if (va[i] > lo && va[i] < hi) {
            ga[i] += g[i];
          } else if (va[i] <= lo) {
            glo[0] += g[i];
          } else {
            ghi[0] += g[i];
          }
        }
        break;
      }
      case Op::kWrap:
        for (std::uint32_t i = 0; i < n.len; ++i) ga[i] += g[i];
        break;
      case Op::kConcat: {
        double* gb = grad_.data() + nodes_[n.b].off;
        std::uint32_t na = nodes_[n.a].len;
        for (std::uint32_t i = 0; i < na; ++i) ga[i] += g[i];
        for (std::uint32_t i = 0; i < nodes_[n.b].len; ++i) {
          gb[i] += g[na + i];
        }
        break;
      }
      case Op::kSlice:
        for (std::uint32_t i = 0; i < n.len; ++i) ga[n.aux + i] += g[i];
        break;
      case Op::kScale:
        for (std::uint32_t i = 0; i < n.len; ++i) ga[i] += n.caux * g[i];
        break;
      case Op::kLeaf:
        break;
    }
  }

  // Adjoints that land directly on leaves bypass the per-node check above.
  for (double g : grad_) {
    if (!std::isfinite(g)) {
      throw NumericError("gradient explosion: non-finite leaf adjoint");
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  val_.clear();
  grad_.clear();
  step_ = -1;
  has_grad_ = false;
}

}  // namespace vdyn::ad
