#include "vdyn/net.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace vdyn {

namespace nn_stats {
std::atomic<std::uint64_t> init_forward_calls{0};
}

std::string NetArch::to_string() const {
  std::ostringstream os;
  auto list = [&os](const std::vector<int>& v) {
    os << "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) os << ",";
      os << v[i];
    }
    os << "]";
  };
  os << "[" << init_in << "][" << init_hidden << "]x";
  list(init_layers);
  os << "-[" << pred_in << "][" << pred_hidden << "]x";
  list(pred_layers);
  return os.str();
}

namespace {

struct Scanner {
  const std::string& s;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("bad architecture descriptor at position " +
                      std::to_string(pos) + ": " + why + " in '" + s + "'");
  }
  void expect(char c) {
    if (pos >= s.size() || s[pos] != c) {
      fail(std::string("expected '") + c + "'");
    }
    ++pos;
  }
  bool accept(char c) {
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }
  /// Accepts 'x' or the UTF-8 multiplication sign.
  void expect_times() {
    if (accept('x') || accept('X')) return;
    if (pos + 1 < s.size() && static_cast<unsigned char>(s[pos]) == 0xC3 &&
        static_cast<unsigned char>(s[pos + 1]) == 0x97) {
      pos += 2;
      return;
    }
    fail("expected 'x'");
  }
  int integer() {
    std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    }
    if (pos == start) fail("expected integer");
    if (pos - start > 7) fail("integer too large");
    return std::stoi(s.substr(start, pos - start));
  }
  int bracketed_int() {
    expect('[');
    int v = integer();
    expect(']');
    return v;
  }
  std::vector<int> bracketed_list() {
    expect('[');
    std::vector<int> v;
    v.push_back(integer());
    while (accept(',')) v.push_back(integer());
    expect(']');
    return v;
  }
};

}  // namespace

NetArch NetArch::parse(const std::string& s) {
  Scanner sc{s};
  NetArch a;
  a.init_in = sc.bracketed_int();
  a.init_hidden = sc.bracketed_int();
  sc.expect_times();
  a.init_layers = sc.bracketed_list();
  sc.expect('-');
  a.pred_in = sc.bracketed_int();
  a.pred_hidden = sc.bracketed_int();
  sc.expect_times();
  a.pred_layers = sc.bracketed_list();
  if (sc.pos != s.size()) sc.fail("trailing characters");
  a.validate();
  return a;
}

void NetArch::validate() const {
  auto bad = [this](const std::string& why) {
    throw ConfigError("inconsistent architecture '" + to_string() +
                      "': " + why);
  };
  if (init_in <= 0 || init_hidden <= 0 || pred_in <= 0 || pred_hidden <= 0) {
    bad("all dims must be positive");
  }
  if (init_layers.size() < 2 || pred_layers.size() < 2) {
    bad("output nets need at least input and output widths");
  }
  for (int w : init_layers) {
    if (w <= 0) bad("all widths must be positive");
  }
  for (int w : pred_layers) {
    if (w <= 0) bad("all widths must be positive");
  }
  if (init_layers.front() != init_hidden + init_in) {
    bad("initializer output net input width must equal init_hidden + init_in");
  }
  if (init_layers.back() != 2 * pred_hidden) {
    bad("initializer output net must emit 2 * pred_hidden values");
  }
  if (pred_layers.front() != pred_hidden + pred_in) {
    bad("predictor output net input width must equal pred_hidden + pred_in");
  }
}

namespace {

Fnn make_fnn(const std::vector<int>& widths) {
  Fnn f;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Fnn::Layer l;
    l.in = widths[i];
    l.out = widths[i + 1];
    l.w.assign(static_cast<std::size_t>(l.in) * l.out, 0.0);
    l.b.assign(static_cast<std::size_t>(l.out), 0.0);
    l.tanh_out = true;
    f.layers.push_back(std::move(l));
  }
  return f;
}

Lstm make_lstm(int input, int hidden) {
  Lstm l;
  l.input = input;
  l.hidden = hidden;
  for (int k = 0; k < 4; ++k) {
    l.wx[k].assign(static_cast<std::size_t>(hidden) * input, 0.0);
    l.wh[k].assign(static_cast<std::size_t>(hidden) * hidden, 0.0);
    l.b[k].assign(static_cast<std::size_t>(hidden), 0.0);
  }
  return l;
}

}  // namespace

InitializedLstm make_net(const NetArch& arch) {
  arch.validate();
  InitializedLstm n;
  n.init_lstm = make_lstm(arch.init_in, arch.init_hidden);
  n.init_out = make_fnn(arch.init_layers);
  n.pred_lstm = make_lstm(arch.pred_in, arch.pred_hidden);
  n.pred_out = make_fnn(arch.pred_layers);
  return n;
}

NetArch arch_of(const InitializedLstm& net) {
  NetArch a;
  a.init_in = net.init_lstm.input;
  a.init_hidden = net.init_lstm.hidden;
  for (const auto& l : net.init_out.layers) a.init_layers.push_back(l.in);
  if (!net.init_out.layers.empty()) {
    a.init_layers.push_back(net.init_out.layers.back().out);
  }
  a.pred_in = net.pred_lstm.input;
  a.pred_hidden = net.pred_lstm.hidden;
  for (const auto& l : net.pred_out.layers) a.pred_layers.push_back(l.in);
  if (!net.pred_out.layers.empty()) {
    a.pred_layers.push_back(net.pred_out.layers.back().out);
  }
  return a;
}

namespace {

void init_lstm_weights(Lstm& l, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(l.input + l.hidden));
  for (int k = 0; k < 4; ++k) {
    for (auto& v : l.wx[k]) v = rng.uniform(-bound, bound);
    for (auto& v : l.wh[k]) v = rng.uniform(-bound, bound);
    for (auto& v : l.b[k]) v = (k == 1) ? 1.0 : 0.0;
  }
}

void init_fnn_weights(Fnn& f, Rng& rng) {
  for (auto& l : f.layers) {
    double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (auto& v : l.w) v = rng.uniform(-bound, bound);
    for (auto& v : l.b) v = 0.0;
  }
}

}  // namespace

void init_weights(InitializedLstm& net, Rng& rng) {
  init_lstm_weights(net.init_lstm, rng);
  init_fnn_weights(net.init_out, rng);
  init_lstm_weights(net.pred_lstm, rng);
  init_fnn_weights(net.pred_out, rng);
}

}  // namespace vdyn
