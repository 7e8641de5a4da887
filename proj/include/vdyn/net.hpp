#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vdyn/arena.hpp"
#include "vdyn/error.hpp"
#include "vdyn/ops.hpp"
#include "vdyn/rng.hpp"

namespace vdyn {

/// Feed-forward net. Hidden layers are tanh; the final layer is tanh or
/// linear per tanh_out of its Layer.
template <typename T>
struct FnnT {
  struct Layer {
    std::vector<T> w;  // out x in, row-major
    std::vector<T> b;  // out
    int in = 0;
    int out = 0;
    bool tanh_out = true;
  };
  std::vector<Layer> layers;

  int input() const { return layers.empty() ? 0 : layers.front().in; }
  int output() const { return layers.empty() ? 0 : layers.back().out; }
};

/// LSTM cell parameters. Gate order: input, forget, cell, output.
template <typename T>
struct LstmT {
  std::vector<T> wx[4];  // hidden x input
  std::vector<T> wh[4];  // hidden x hidden
  std::vector<T> b[4];   // hidden
  int input = 0;
  int hidden = 0;
};

template <typename T>
struct LstmStateT {
  std::vector<T> h, c;
};

/// LSTM pair with learned initialization: an initializer LSTM consumes the
/// recent history once and an output net maps its final hidden state to the
/// predictor LSTM's starting (cell, hidden) state; the predictor then runs
/// the horizon.
template <typename T>
struct InitializedLstmT {
  LstmT<T> init_lstm;
  FnnT<T> init_out;  // maps [init hidden ; last history input] -> [c ; h]
  LstmT<T> pred_lstm;
  FnnT<T> pred_out;  // maps [pred hidden ; input] -> output
};

using Fnn = FnnT<double>;
using Lstm = LstmT<double>;
using LstmState = LstmStateT<double>;
using InitializedLstm = InitializedLstmT<double>;
using FnnF = FnnT<float>;
using LstmF = LstmT<float>;
using LstmStateF = LstmStateT<float>;
using InitializedLstmF = InitializedLstmT<float>;

/// Architecture descriptor, string form
/// "[init_in][init_hidden]x[w0,w1,...]-[pred_in][pred_hidden]x[w0,w1,...]"
/// where each width list is the full layer-width chain of the output net
/// (first entry = its input width, last = its output width).
struct NetArch {
  int init_in = 0;
  int init_hidden = 0;
  std::vector<int> init_layers;
  int pred_in = 0;
  int pred_hidden = 0;
  std::vector<int> pred_layers;

  int output() const { return pred_layers.empty() ? 0 : pred_layers.back(); }

  std::string to_string() const;
  /// Parse the bracket notation. Throws ConfigError naming the offending
  /// position on malformed input.
  static NetArch parse(const std::string& s);
  /// Consistency: init_layers.front == init_hidden + init_in,
  /// init_layers.back == 2 * pred_hidden, pred_layers.front == pred_hidden +
  /// pred_in, all widths positive. Throws ConfigError.
  void validate() const;

  bool operator==(const NetArch&) const = default;
};

/// Allocate a network of the given shape, weights zero.
InitializedLstm make_net(const NetArch& arch);

/// Architecture of an existing network (inverse of make_net modulo weights).
NetArch arch_of(const InitializedLstm& net);

/// Seeded weight init: every weight uniform in +-1/sqrt(fan_in) where
/// fan_in counts all inputs of the receiving unit (input + hidden for LSTM
/// gates), biases zero except the forget gate at +1.
void init_weights(InitializedLstm& net, Rng& rng);

template <typename T, typename U>
FnnT<T> fnn_cast(const FnnT<U>& f) {
  FnnT<T> r;
  r.layers.resize(f.layers.size());
  for (std::size_t i = 0; i < f.layers.size(); ++i) {
    const auto& a = f.layers[i];
    auto& b = r.layers[i];
    b.in = a.in;
    b.out = a.out;
    b.tanh_out = a.tanh_out;
    b.w.assign(a.w.begin(), a.w.end());
    b.b.assign(a.b.begin(), a.b.end());
  }
  return r;
}

template <typename T, typename U>
LstmT<T> lstm_cast(const LstmT<U>& l) {
  LstmT<T> r;
  r.input = l.input;
  r.hidden = l.hidden;
  for (int k = 0; k < 4; ++k) {
    r.wx[k].assign(l.wx[k].begin(), l.wx[k].end());
    r.wh[k].assign(l.wh[k].begin(), l.wh[k].end());
    r.b[k].assign(l.b[k].begin(), l.b[k].end());
  }
  return r;
}

template <typename T, typename U>
InitializedLstmT<T> net_cast(const InitializedLstmT<U>& n) {
  InitializedLstmT<T> r;
  r.init_lstm = lstm_cast<T>(n.init_lstm);
  r.init_out = fnn_cast<T>(n.init_out);
  r.pred_lstm = lstm_cast<T>(n.pred_lstm);
  r.pred_out = fnn_cast<T>(n.pred_out);
  return r;
}

/// Visit every parameter array in a fixed, documented order (the same order
/// the binary file format uses): init_lstm gates i,f,g,o each as wx,wh,b;
/// init_out layers as w,b; pred_lstm; pred_out.
template <typename T, typename Fn>
void visit_params(LstmT<T>& l, const std::string& prefix, Fn&& fn) {
  static const char* kGate[4] = {"i", "f", "g", "o"};
  for (int k = 0; k < 4; ++k) {
    fn(prefix + ".wx." + kGate[k], l.wx[k]);
    fn(prefix + ".wh." + kGate[k], l.wh[k]);
    fn(prefix + ".b." + kGate[k], l.b[k]);
  }
}

template <typename T, typename Fn>
void visit_params(FnnT<T>& f, const std::string& prefix, Fn&& fn) {
  for (std::size_t i = 0; i < f.layers.size(); ++i) {
    fn(prefix + ".w" + std::to_string(i), f.layers[i].w);
    fn(prefix + ".b" + std::to_string(i), f.layers[i].b);
  }
}

template <typename T, typename Fn>
void visit_params(InitializedLstmT<T>& n, const std::string& prefix, Fn&& fn) {
  visit_params(n.init_lstm, prefix + ".init_lstm", fn);
  visit_params(n.init_out, prefix + ".init_out", fn);
  visit_params(n.pred_lstm, prefix + ".pred_lstm", fn);
  visit_params(n.pred_out, prefix + ".pred_out", fn);
}

/// Flat index over a set of trainable parameter arrays (and bare scalars).
/// Supplies the offset map for tape leaves, Adam state and finite
/// differencing.
struct ParamIndex {
  struct Entry {
    std::string name;
    double* data;
    std::size_t len;
    std::size_t off;
  };
  std::vector<Entry> entries;
  std::size_t total = 0;

  void add(std::string name, double* data, std::size_t len) {
    by_ptr_[data] = entries.size();
    entries.push_back({std::move(name), data, len, total});
    total += len;
  }
  void add(std::string name, std::vector<double>& v) {
    add(std::move(name), v.data(), v.size());
  }
  void add(std::string name, double& s) { add(std::move(name), &s, 1); }

  bool contains(const double* data) const {
    return by_ptr_.count(data) != 0;
  }
  std::size_t offset_of(const double* data) const {
    auto it = by_ptr_.find(data);
    if (it == by_ptr_.end()) throw ShapeError("ParamIndex: unknown array");
    return entries[it->second].off;
  }

  void gather(std::span<double> out) const {
    for (const auto& e : entries) {
      for (std::size_t i = 0; i < e.len; ++i) out[e.off + i] = e.data[i];
    }
  }
  void scatter(std::span<const double> in) const {
    for (const auto& e : entries) {
      for (std::size_t i = 0; i < e.len; ++i) e.data[i] = in[e.off + i];
    }
  }

 private:
  std::unordered_map<const double*, std::size_t> by_ptr_;
};

namespace nn_stats {
/// Counts init_forward evaluations; the rollout engine's initializer
/// amortization tests read it.
extern std::atomic<std::uint64_t> init_forward_calls;
inline void bump_init() {
  init_forward_calls.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace nn_stats

// ---------------------------------------------------------------------------
// Generic forward ops, usable with EagerCtx<T> and TapeCtx.

template <class Ctx>
struct FnnRef {
  struct Layer {
    typename Ctx::V w, b;
    int in = 0, out = 0;
    bool tanh_out = true;
  };
  std::vector<Layer> layers;
};

template <class Ctx>
struct LstmRef {
  typename Ctx::V wx[4], wh[4], b[4];
  int input = 0, hidden = 0;
};

template <class Ctx>
struct LstmStateRef {
  typename Ctx::V h, c;
};

template <class Ctx>
struct InitLstmRef {
  LstmRef<Ctx> init_lstm;
  FnnRef<Ctx> init_out;
  LstmRef<Ctx> pred_lstm;
  FnnRef<Ctx> pred_out;
};

template <typename T>
FnnRef<EagerCtx<T>> make_ref(EagerCtx<T>& cx, const FnnT<T>& f) {
  FnnRef<EagerCtx<T>> r;
  for (const auto& l : f.layers) {
    r.layers.push_back({cx.view(l.w), cx.view(l.b), l.in, l.out, l.tanh_out});
  }
  return r;
}

template <typename T>
LstmRef<EagerCtx<T>> make_ref(EagerCtx<T>& cx, const LstmT<T>& l) {
  LstmRef<EagerCtx<T>> r;
  for (int k = 0; k < 4; ++k) {
    r.wx[k] = cx.view(l.wx[k]);
    r.wh[k] = cx.view(l.wh[k]);
    r.b[k] = cx.view(l.b[k]);
  }
  r.input = l.input;
  r.hidden = l.hidden;
  return r;
}

template <typename T>
InitLstmRef<EagerCtx<T>> make_ref(EagerCtx<T>& cx,
                                  const InitializedLstmT<T>& n) {
  InitLstmRef<EagerCtx<T>> r;
  r.init_lstm = make_ref(cx, n.init_lstm);
  r.init_out = make_ref(cx, n.init_out);
  r.pred_lstm = make_ref(cx, n.pred_lstm);
  r.pred_out = make_ref(cx, n.pred_out);
  return r;
}

// Tape refs: arrays present in the index become trainable parameter leaves,
// anything else becomes a constant leaf.
namespace detail {
inline TapeCtx::V tape_array(TapeCtx& cx, const std::vector<double>& w,
                             const ParamIndex* idx) {
  if (idx != nullptr && idx->contains(w.data())) {
    return cx.param({w.data(), w.size()}, idx->offset_of(w.data()));
  }
  return cx.view(w);
}
inline TapeCtx::V tape_scalar(TapeCtx& cx, const double& s,
                              const ParamIndex* idx) {
  if (idx != nullptr && idx->contains(&s)) {
    return cx.param({&s, 1}, idx->offset_of(&s));
  }
  return cx.scalar(s);
}
}  // namespace detail

inline FnnRef<TapeCtx> make_ref(TapeCtx& cx, const Fnn& f,
                                const ParamIndex* idx) {
  FnnRef<TapeCtx> r;
  for (const auto& l : f.layers) {
    r.layers.push_back({detail::tape_array(cx, l.w, idx),
                        detail::tape_array(cx, l.b, idx), l.in, l.out,
                        l.tanh_out});
  }
  return r;
}

inline LstmRef<TapeCtx> make_ref(TapeCtx& cx, const Lstm& l,
                                 const ParamIndex* idx) {
  LstmRef<TapeCtx> r;
  for (int k = 0; k < 4; ++k) {
    r.wx[k] = detail::tape_array(cx, l.wx[k], idx);
    r.wh[k] = detail::tape_array(cx, l.wh[k], idx);
    r.b[k] = detail::tape_array(cx, l.b[k], idx);
  }
  r.input = l.input;
  r.hidden = l.hidden;
  return r;
}

inline InitLstmRef<TapeCtx> make_ref(TapeCtx& cx, const InitializedLstm& n,
                                     const ParamIndex* idx) {
  InitLstmRef<TapeCtx> r;
  r.init_lstm = make_ref(cx, n.init_lstm, idx);
  r.init_out = make_ref(cx, n.init_out, idx);
  r.pred_lstm = make_ref(cx, n.pred_lstm, idx);
  r.pred_out = make_ref(cx, n.pred_out, idx);
  return r;
}

template <class Ctx>
typename Ctx::V fnn_apply(Ctx& cx, const FnnRef<Ctx>& f, typename Ctx::V x) {
  auto h = x;
  for (const auto& l : f.layers) {
    auto z = cx.add(cx.matvec(l.w, h, l.out, l.in), l.b);
    h = l.tanh_out ? cx.tanh_(z) : z;
  }
  return h;
}

template <class Ctx>
LstmStateRef<Ctx> lstm_apply(Ctx& cx, const LstmRef<Ctx>& l, typename Ctx::V x,
                             const LstmStateRef<Ctx>& s) {
  auto pre = [&](int k) {
    auto zx = cx.matvec(l.wx[k], x, l.hidden, l.input);
    auto zh = cx.matvec(l.wh[k], s.h, l.hidden, l.hidden);
    return cx.add(cx.add(zx, zh), l.b[k]);
  };
  auto gi = cx.sigmoid_(pre(0));
  auto gf = cx.sigmoid_(pre(1));
  auto gg = cx.tanh_(pre(2));
  auto go = cx.sigmoid_(pre(3));
  auto c = cx.add(cx.mul(gf, s.c), cx.mul(gi, gg));
  auto h = cx.mul(go, cx.tanh_(c));
  return {h, c};
}

/// Run the initializer over the history (zero initial state) and map its
/// final hidden state, together with the last history input, to the
/// predictor's starting state. history must be non-empty.
template <class Ctx>
LstmStateRef<Ctx> init_apply(Ctx& cx, const InitLstmRef<Ctx>& net,
                             std::span<const typename Ctx::V> history) {
  if (history.empty()) throw DataError("init_apply: empty history");
  nn_stats::bump_init();
  LstmStateRef<Ctx> s{cx.zeros(static_cast<std::size_t>(net.init_lstm.hidden)),
                      cx.zeros(static_cast<std::size_t>(net.init_lstm.hidden))};
  for (auto x : history) s = lstm_apply(cx, net.init_lstm, x, s);
  auto z = fnn_apply(cx, net.init_out, cx.concat(s.h, history.back()));
  auto hp = static_cast<std::size_t>(net.pred_lstm.hidden);
  return {cx.slice(z, hp, hp), cx.slice(z, 0, hp)};  // z = [c ; h]
}

/// One predictor step: advance the LSTM, then evaluate the output net on
/// (new hidden, input).
template <class Ctx>
std::pair<typename Ctx::V, LstmStateRef<Ctx>> predict_apply(
    Ctx& cx, const InitLstmRef<Ctx>& net, typename Ctx::V x,
    const LstmStateRef<Ctx>& s) {
  auto s2 = lstm_apply(cx, net.pred_lstm, x, s);
  auto z = fnn_apply(cx, net.pred_out, cx.concat(s2.h, x));
  return {z, s2};
}

// ---------------------------------------------------------------------------
// Plain eager entry points (convenience signatures over the generic core).

template <typename T>
std::vector<T> fnn_forward(const FnnT<T>& f, std::span<const T> x) {
  if (static_cast<int>(x.size()) != f.input()) {
    throw ShapeError("fnn_forward: input size mismatch");
  }
  Arena<T> arena;
  EagerCtx<T> cx(arena);
  auto r = make_ref(cx, f);
  auto y = fnn_apply(cx, r, typename EagerCtx<T>::V{x.data(), x.size()});
  return {y.begin(), y.end()};
}

template <typename T>
LstmStateT<T> lstm_step(const LstmT<T>& l, std::span<const T> x,
                        const LstmStateT<T>& s) {
  if (static_cast<int>(x.size()) != l.input ||
      static_cast<int>(s.h.size()) != l.hidden ||
      static_cast<int>(s.c.size()) != l.hidden) {
    throw ShapeError("lstm_step: size mismatch");
  }
  Arena<T> arena;
  EagerCtx<T> cx(arena);
  auto r = make_ref(cx, l);
  auto y = lstm_apply(cx, r, typename EagerCtx<T>::V{x.data(), x.size()},
                      LstmStateRef<EagerCtx<T>>{cx.view(s.h), cx.view(s.c)});
  return {{y.h.begin(), y.h.end()}, {y.c.begin(), y.c.end()}};
}

template <typename T>
LstmStateT<T> init_forward(const InitializedLstmT<T>& net,
                           const std::vector<std::vector<T>>& history) {
  Arena<T> arena;
  EagerCtx<T> cx(arena);
  auto r = make_ref(cx, net);
  std::vector<typename EagerCtx<T>::V> hist;
  hist.reserve(history.size());
  for (const auto& x : history) {
    if (static_cast<int>(x.size()) != net.init_lstm.input) {
      throw ShapeError("init_forward: history input size mismatch");
    }
    hist.push_back(typename EagerCtx<T>::V{x.data(), x.size()});
  }
  auto s = init_apply(cx, r, std::span<const typename EagerCtx<T>::V>(hist));
  return {{s.h.begin(), s.h.end()}, {s.c.begin(), s.c.end()}};
}

template <typename T>
std::pair<std::vector<T>, LstmStateT<T>> predict_forward(
    const InitializedLstmT<T>& net, std::span<const T> x,
    const LstmStateT<T>& s) {
  if (static_cast<int>(x.size()) != net.pred_lstm.input) {
    throw ShapeError("predict_forward: input size mismatch");
  }
  Arena<T> arena;
  EagerCtx<T> cx(arena);
  auto r = make_ref(cx, net);
  auto [z, s2] =
      predict_apply(cx, r, typename EagerCtx<T>::V{x.data(), x.size()},
                    LstmStateRef<EagerCtx<T>>{cx.view(s.h), cx.view(s.c)});
  return {{z.begin(), z.end()},
          LstmStateT<T>{{s2.h.begin(), s2.h.end()}, {s2.c.begin(), s2.c.end()}}};
}

}  // namespace vdyn
