#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "vdyn/adam.hpp"
#include "vdyn/net.hpp"
#include "vdyn/net_io.hpp"
#include "vdyn/rng.hpp"

using namespace vdyn;

namespace {

// Independent scalar-loop oracles, written straight from the definitions.

std::vector<double> oracle_fnn(const Fnn& f, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (const auto& l : f.layers) {
    std::vector<double> z(l.out);
    for (int i = 0; i < l.out; ++i) {
      double acc = l.b[static_cast<std::size_t>(i)];
      for (int j = 0; j < l.in; ++j) {
        acc += l.w[static_cast<std::size_t>(i) * l.in + j] * h[j];
      }
      z[i] = l.tanh_out ? std::tanh(acc) : acc;
    }
    h = std::move(z);
  }
  return h;
}

LstmState oracle_lstm(const Lstm& l, const std::vector<double>& x,
                      const LstmState& s) {
  auto gate = [&](int k, bool use_tanh) {
    std::vector<double> g(l.hidden);
    for (int i = 0; i < l.hidden; ++i) {
      double acc = l.b[k][static_cast<std::size_t>(i)];
      for (int j = 0; j < l.input; ++j) {
        acc += l.wx[k][static_cast<std::size_t>(i) * l.input + j] * x[j];
      }
      for (int j = 0; j < l.hidden; ++j) {
        acc += l.wh[k][static_cast<std::size_t>(i) * l.hidden + j] * s.h[j];
      }
      g[i] = use_tanh ? std::tanh(acc) : 1.0 / (1.0 + std::exp(-acc));
    }
    return g;
  };
  auto gi = gate(0, false);
  auto gf = gate(1, false);
  auto gg = gate(2, true);
  auto go = gate(3, false);
  LstmState out;
  out.c.resize(l.hidden);
  out.h.resize(l.hidden);
  for (int i = 0; i < l.hidden; ++i) {
    out.c[i] = gf[i] * s.c[i] + gi[i] * gg[i];
    out.h[i] = go[i] * std::tanh(out.c[i]);
  }
  return out;
}

InitializedLstm random_net(const NetArch& arch, std::uint64_t seed) {
  InitializedLstm net = make_net(arch);
  Rng rng(seed);
  init_weights(net, rng);
  return net;
}

const NetArch kSmallArch = NetArch::parse("[3][6]x[9,12,8]-[4][4]x[8,10,2]");

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("fnn_forward matches scalar-loop oracle") {
  Rng rng(3);
  Fnn f;
  Fnn::Layer l1{{}, {}, 4, 5, true};
  Fnn::Layer l2{{}, {}, 5, 3, true};
  l1.w.resize(20);
  l1.b.resize(5);
  l2.w.resize(15);
  l2.b.resize(3);
  f.layers = {l1, l2};
  for (auto& layer : f.layers) {
    for (auto& v : layer.w) v = rng.uniform(-1, 1);
    for (auto& v : layer.b) v = rng.uniform(-0.5, 0.5);
  }
  std::vector<double> x = {0.2, -1.4, 0.9, 0.5};
  auto got = fnn_forward(f, std::span<const double>(x));
  auto want = oracle_fnn(f, x);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-15));
  }
}

TEST_CASE("fnn_forward zero weights, linear output layer emits biases") {
  Fnn f;
  Fnn::Layer l{{}, {}, 3, 2, false};
  l.w.assign(6, 0.0);
  l.b = {0.7, -0.3};
  f.layers = {l};
  std::vector<double> x = {5.0, -2.0, 11.0};
  auto y = fnn_forward(f, std::span<const double>(x));
  CHECK(y[0] == 0.7);
  CHECK(y[1] == -0.3);
}

TEST_CASE("fnn_forward rejects wrong input size") {
  Fnn f;
  Fnn::Layer l{{}, {}, 3, 2, true};
  l.w.assign(6, 0.0);
  l.b.assign(2, 0.0);
  f.layers = {l};
  std::vector<double> x = {1.0, 2.0};
  CHECK_THROWS_AS(fnn_forward(f, std::span<const double>(x)), ShapeError);
}

TEST_CASE("lstm_step matches scalar-loop oracle") {
  auto net = random_net(kSmallArch, 77);
  const Lstm& l = net.pred_lstm;
  Rng rng(5);
  std::vector<double> x(l.input);
  for (auto& v : x) v = rng.uniform(-2, 2);
  LstmState s;
  s.h.resize(l.hidden);
  s.c.resize(l.hidden);
  for (auto& v : s.h) v = rng.uniform(-1, 1);
  for (auto& v : s.c) v = rng.uniform(-2, 2);

  auto got = lstm_step(l, std::span<const double>(x), s);
  auto want = oracle_lstm(l, x, s);
  for (int i = 0; i < l.hidden; ++i) {
    CHECK(got.h[i] == doctest::Approx(want.h[i]).epsilon(1e-15));
    CHECK(got.c[i] == doctest::Approx(want.c[i]).epsilon(1e-15));
  }
}

TEST_CASE("lstm hidden state stays inside (-1, 1)") {
  auto net = random_net(kSmallArch, 123);
  Rng rng(9);
  LstmState s;
  s.h.assign(net.pred_lstm.hidden, 0.0);
  s.c.assign(net.pred_lstm.hidden, 0.0);
  for (int step = 0; step < 200; ++step) {
    std::vector<double> x(net.pred_lstm.input);
    for (auto& v : x) v = rng.uniform(-5, 5);
    s = lstm_step(net.pred_lstm, std::span<const double>(x), s);
    for (double h : s.h) {
      CHECK(std::abs(h) < 1.0);
    }
  }
}

TEST_CASE("init_forward equals manual unroll") {
  auto net = random_net(kSmallArch, 200);
  Rng rng(6);
  std::vector<std::vector<double>> hist(7);
  for (auto& x : hist) {
    x.resize(net.init_lstm.input);
    for (auto& v : x) v = rng.uniform(-1.5, 1.5);
  }
  auto got = init_forward(net, hist);

  // manual unroll: initializer LSTM from zero state, then the output net on
  // the concatenation, split as [c ; h]
  LstmState s;
  s.h.assign(net.init_lstm.hidden, 0.0);
  s.c.assign(net.init_lstm.hidden, 0.0);
  for (const auto& x : hist) {
    s = lstm_step(net.init_lstm, std::span<const double>(x), s);
  }
  std::vector<double> cat = s.h;
  cat.insert(cat.end(), hist.back().begin(), hist.back().end());
  auto z = fnn_forward(net.init_out, std::span<const double>(cat));
  int hp = net.pred_lstm.hidden;
  for (int i = 0; i < hp; ++i) {
    CHECK(got.c[i] == z[static_cast<std::size_t>(i)]);
    CHECK(got.h[i] == z[static_cast<std::size_t>(i + hp)]);
  }
}

TEST_CASE("init_forward with zero output net yields zero predictor state") {
  auto net = random_net(kSmallArch, 300);
  for (auto& l : net.init_out.layers) {
    std::fill(l.w.begin(), l.w.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
  std::vector<std::vector<double>> hist(5,
                                        std::vector<double>(net.init_lstm.input, 0.3));
  auto s = init_forward(net, hist);
  for (double v : s.c) CHECK(v == 0.0);
  for (double v : s.h) CHECK(v == 0.0);
}

TEST_CASE("init_forward rejects empty history") {
  auto net = random_net(kSmallArch, 301);
  std::vector<std::vector<double>> hist;
  CHECK_THROWS_AS(init_forward(net, hist), DataError);
}

TEST_CASE("predict_forward composition and zero-network cases") {
  auto net = random_net(kSmallArch, 400);
  Rng rng(8);
  std::vector<double> x(net.pred_lstm.input);
  for (auto& v : x) v = rng.uniform(-1, 1);
  LstmState s;
  s.h.resize(net.pred_lstm.hidden);
  s.c.resize(net.pred_lstm.hidden);
  for (auto& v : s.h) v = rng.uniform(-0.9, 0.9);
  for (auto& v : s.c) v = rng.uniform(-1, 1);

  auto [z, s2] = predict_forward(net, std::span<const double>(x), s);
  // composition: one LSTM step, then the output net on (new hidden, input)
  auto s_ref = lstm_step(net.pred_lstm, std::span<const double>(x), s);
  std::vector<double> cat = s_ref.h;
  cat.insert(cat.end(), x.begin(), x.end());
  auto z_ref = fnn_forward(net.pred_out, std::span<const double>(cat));
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == z_ref[i]);
  for (int i = 0; i < net.pred_lstm.hidden; ++i) {
    CHECK(s2.h[i] == s_ref.h[i]);
    CHECK(s2.c[i] == s_ref.c[i]);
  }

  SUBCASE("zero predictor LSTM from zero state evaluates output net at (0,x)") {
    for (int k = 0; k < 4; ++k) {
      std::fill(net.pred_lstm.wx[k].begin(), net.pred_lstm.wx[k].end(), 0.0);
      std::fill(net.pred_lstm.wh[k].begin(), net.pred_lstm.wh[k].end(), 0.0);
      std::fill(net.pred_lstm.b[k].begin(), net.pred_lstm.b[k].end(), 0.0);
    }
    LstmState z0;
    z0.h.assign(net.pred_lstm.hidden, 0.0);
    z0.c.assign(net.pred_lstm.hidden, 0.0);
    auto [out, _] = predict_forward(net, std::span<const double>(x), z0);
    std::vector<double> cat0(static_cast<std::size_t>(net.pred_lstm.hidden), 0.0);
    cat0.insert(cat0.end(), x.begin(), x.end());
    auto want = fnn_forward(net.pred_out, std::span<const double>(cat0));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == want[i]);
  }

  SUBCASE("zero output net emits zero") {
    for (auto& l : net.pred_out.layers) {
      std::fill(l.w.begin(), l.w.end(), 0.0);
      std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    auto [out, _] = predict_forward(net, std::span<const double>(x), s);
    for (double v : out) CHECK(v == 0.0);
  }
}

TEST_CASE("weight init bounds and forget bias") {
  auto arch = NetArch::parse("[2][60]x[62,100,10]-[3][5]x[8,10,1]");
  auto net = random_net(arch, 555);
  double bound_init =
      1.0 / std::sqrt(static_cast<double>(net.init_lstm.input + net.init_lstm.hidden));
  for (int k = 0; k < 4; ++k) {
    for (double v : net.init_lstm.wx[k]) {
      CHECK(std::abs(v) <= bound_init);
    }
    for (double v : net.init_lstm.b[k]) {
      CHECK(v == (k == 1 ? 1.0 : 0.0));
    }
  }
  for (const auto& l : net.init_out.layers) {
    double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (double v : l.w) CHECK(std::abs(v) <= bound);
    for (double v : l.b) CHECK(v == 0.0);
  }
  // deterministic per seed
  auto net2 = random_net(arch, 555);
  CHECK(net2.pred_lstm.wx[0] == net.pred_lstm.wx[0]);
  auto net3 = random_net(arch, 556);
  CHECK(net3.pred_lstm.wx[0] != net.pred_lstm.wx[0]);
}

TEST_CASE("architecture descriptor round trip and errors") {
  const char* strings[] = {
      "[2][60]x[62,100,10]-[3][5]x[8,10,1]",
      "[4][60]x[64,100,10]-[5][5]x[10,5,1]",
      "[3][60]x[63,100,10]-[3][5]x[8,20,1]",
      "[10][60]x[70,100,20]-[10][10]x[20,20,3]",
      "[2][60]x[62,100,10]-[2][5]x[7,10,1]",
      "[4][60]x[64,100,10]-[4][5]x[9,5,1]",
      "[10][60]x[70,100,60]-[10][30]x[40,40,3]",
  };
  for (const char* s : strings) {
    auto a = NetArch::parse(s);
    CHECK(a.to_string() == s);
    auto b = NetArch::parse(a.to_string());
    CHECK(a == b);
  }
  // multiplication sign form is accepted
  auto a = NetArch::parse("[2][60]\xC3\x97[62,100,10]-[3][5]\xC3\x97[8,10,1]");
  CHECK(a.to_string() == strings[0]);

  CHECK_THROWS_AS(NetArch::parse(""), ConfigError);
  CHECK_THROWS_AS(NetArch::parse("[2][60]x[62,100,10]"), ConfigError);
  CHECK_THROWS_AS(NetArch::parse("[2][60]y[62,100,10]-[3][5]x[8,10,1]"),
                  ConfigError);
  CHECK_THROWS_AS(NetArch::parse("[2][60]x[62,100,10]-[3][5]x[8,10,1]junk"),
                  ConfigError);
  CHECK_THROWS_AS(NetArch::parse("[2][60]x[62,100]-[3][5]x[8,10,1]"),
                  ConfigError);  // init out width != 2*pred_hidden
  CHECK_THROWS_AS(NetArch::parse("[2][60]x[63,100,10]-[3][5]x[8,10,1]"),
                  ConfigError);  // init in width mismatch
  CHECK_THROWS_AS(NetArch::parse("[2][0]x[2,10]-[3][5]x[8,10,1]"), ConfigError);

  // position is reported
  try {
    NetArch::parse("[2][60]q");
    FAIL("expected throw");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("position 7") != std::string::npos);
  }
}

TEST_CASE("parameter file round trip") {
  auto net = random_net(kSmallArch, 808);
  auto p1 = temp_file("vdyn_net_a.bin");
  auto p2 = temp_file("vdyn_net_b.bin");
  save_params(net, p1.string());
  auto back = load_params(p1.string());
  save_params(back, p2.string());

  // file-level round trip is byte-identical
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // loaded values are the float-rounded originals, exactly
  bool all_match = true;
  std::vector<double> orig, loaded;
  visit_params(net, "net", [&orig](const std::string&, std::vector<double>& a) {
    orig.insert(orig.end(), a.begin(), a.end());
  });
  visit_params(back, "net",
               [&loaded](const std::string&, std::vector<double>& a) {
                 loaded.insert(loaded.end(), a.begin(), a.end());
               });
  REQUIRE(orig.size() == loaded.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    if (loaded[i] != static_cast<double>(static_cast<float>(orig[i]))) {
      all_match = false;
    }
  }
  CHECK(all_match);

  // descriptor check
  CHECK_NOTHROW(load_params(p1.string(), kSmallArch));
  CHECK_THROWS_AS(
      load_params(p1.string(), NetArch::parse("[2][4]x[6,4]-[2][2]x[4,3,1]")),
      DataError);

  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("parameter file errors") {
  CHECK_THROWS_AS(load_params("/nonexistent/net.bin"), DataError);

  auto net = random_net(kSmallArch, 808);
  auto p = temp_file("vdyn_net_c.bin");
  save_params(net, p.string());

  SUBCASE("corrupted byte fails the checksum") {
    std::fstream f(p, std::ios::binary | std::ios::in | std::ios::out);
    f.seekg(64);
    char z = 0;
    f.read(&z, 1);
    z = static_cast<char>(z ^ 0x5a);  // guaranteed to change the byte
    f.seekp(64);
    f.write(&z, 1);
    f.close();
    CHECK_THROWS_AS(load_params(p.string()), DataError);
  }
  SUBCASE("truncation detected") {
    std::filesystem::resize_file(p, std::filesystem::file_size(p) - 12);
    CHECK_THROWS_AS(load_params(p.string()), DataError);
  }
  SUBCASE("bad magic detected") {
    std::fstream f(p, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_AS(load_params(p.string()), DataError);
  }
  std::filesystem::remove(p);
}

TEST_CASE("adam first step moves by about lr in the gradient direction") {
  std::vector<double> p = {1.0, -2.0};
  std::vector<double> g = {0.3, -4.0};
  AdamState st;
  AdamConfig cfg;
  adam_update(p, g, st, cfg);
  // bias-corrected first step: p -= lr * g / (|g| + eps')
  CHECK(p[0] == doctest::Approx(1.0 - cfg.lr).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(-2.0 + cfg.lr).epsilon(1e-4));
}

TEST_CASE("adam matches reference transcription over 100 steps") {
  // independent reference, straight from the published update equations
  std::vector<double> p_ref = {0.5, -1.25, 2.0};
  std::vector<double> m(3, 0.0), v(3, 0.0);
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  std::vector<double> p = p_ref;
  AdamState st;
  AdamConfig cfg;
  Rng rng(31);
  for (int t = 1; t <= 100; ++t) {
    std::vector<double> g = {rng.uniform(-1, 1), rng.uniform(-1, 1),
                             rng.uniform(-1, 1)};
    for (int i = 0; i < 3; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      double mhat = m[i] / (1 - std::pow(b1, t));
      double vhat = v[i] / (1 - std::pow(b2, t));
      p_ref[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    adam_update(p, g, st, cfg);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(p[i] - p_ref[i]) < 1e-12);
    }
  }
}

TEST_CASE("adam errors") {
  std::vector<double> p = {1.0};
  std::vector<double> g2 = {1.0, 2.0};
  AdamState st;
  AdamConfig cfg;
  CHECK_THROWS_AS(adam_update(p, g2, st, cfg), ShapeError);
  std::vector<double> gn = {std::nan("")};
  CHECK_THROWS_AS(adam_update(p, gn, st, cfg), NumericError);
}

TEST_CASE("global norm clipping") {
  std::vector<double> g = {3.0, 4.0};  // norm 5
  double pre = clip_global_norm(g, 1.0);
  CHECK(pre == doctest::Approx(5.0));
  CHECK(std::hypot(g[0], g[1]) == doctest::Approx(1.0));
  std::vector<double> g2 = {0.3, 0.4};
  clip_global_norm(g2, 1.0);
  CHECK(g2[0] == 0.3);
  CHECK(g2[1] == 0.4);
}

TEST_CASE("param index gather/scatter round trip") {
  auto net = random_net(kSmallArch, 900);
  ParamIndex idx;
  visit_params(net, "net", [&idx](const std::string& name,
                                  std::vector<double>& a) {
    idx.add(name, a);
  });
  double extra = 3.5;
  idx.add("constants.extra", extra);

  std::vector<double> flat(idx.total);
  idx.gather(flat);
  CHECK(flat.back() == 3.5);

  for (auto& v : flat) v += 1.0;
  idx.scatter(flat);
  CHECK(extra == 4.5);
  std::vector<double> flat2(idx.total);
  idx.gather(flat2);
  for (std::size_t i = 0; i < flat.size(); ++i) CHECK(flat[i] == flat2[i]);
}

TEST_CASE("taped network forward is bitwise equal to the eager double path") {
  auto net = random_net(kSmallArch, 1000);
  Rng rng(21);
  std::vector<std::vector<double>> hist(6);
  for (auto& x : hist) {
    x.resize(net.init_lstm.input);
    for (auto& v : x) v = rng.uniform(-1, 1);
  }
  std::vector<double> px(net.pred_lstm.input);
  for (auto& v : px) v = rng.uniform(-1, 1);

  // eager
  auto s_eager = init_forward(net, hist);
  auto [z_eager, s2_eager] =
      predict_forward(net, std::span<const double>(px), s_eager);

  // taped
  ad::Tape tape;
  TapeCtx cx(tape);
  auto ref = make_ref(cx, net, nullptr);
  std::vector<TapeCtx::V> hleaves;
  for (auto& x : hist) hleaves.push_back(cx.vec(x));
  auto s_tape = init_apply(cx, ref, std::span<const TapeCtx::V>(hleaves));
  auto [z_tape, s2_tape] = predict_apply(cx, ref, cx.vec(px), s_tape);

  auto zv = tape.value(z_tape);
  REQUIRE(zv.size() == z_eager.size());
  for (std::size_t i = 0; i < zv.size(); ++i) {
    CHECK(zv[i] == z_eager[i]);
  }
  auto hv = tape.value(s2_tape.h);
  for (std::size_t i = 0; i < hv.size(); ++i) {
    CHECK(hv[i] == s2_eager.h[i]);
  }
}

TEST_CASE("taped network gradients match central differences") {
  auto arch = NetArch::parse("[2][4]x[6,8,4]-[3][2]x[5,6,1]");
  auto net = random_net(arch, 1100);
  Rng rng(22);
  std::vector<std::vector<double>> hist(4);
  for (auto& x : hist) {
    x.resize(net.init_lstm.input);
    for (auto& v : x) v = rng.uniform(-1, 1);
  }
  std::vector<std::vector<double>> steps(3);
  for (auto& x : steps) {
    x.resize(net.pred_lstm.input);
    for (auto& v : x) v = rng.uniform(-1, 1);
  }

  ParamIndex idx;
  visit_params(net, "net", [&idx](const std::string& name,
                                  std::vector<double>& a) {
    idx.add(name, a);
  });

  // loss: sum over steps of squared outputs, through init + predict
  auto eval_loss = [&]() {
    auto s = init_forward(net, hist);
    double loss = 0;
    for (auto& x : steps) {
      auto [z, s2] = predict_forward(net, std::span<const double>(x), s);
      s = s2;
      for (double v : z) loss += v * v;
    }
    return loss;
  };

  ad::Tape tape;
  TapeCtx cx(tape);
  auto ref = make_ref(cx, net, &idx);
  std::vector<TapeCtx::V> hleaves;
  for (auto& x : hist) hleaves.push_back(cx.vec(x));
  auto s = init_apply(cx, ref, std::span<const TapeCtx::V>(hleaves));
  auto loss = cx.scalar(0.0);
  for (auto& x : steps) {
    auto [z, s2] = predict_apply(cx, ref, cx.vec(x), s);
    s = s2;
    auto sq = cx.mul(z, z);
    loss = cx.add(loss, cx.slice(sq, 0, 1));
  }
  tape.backward(loss);
  std::vector<double> grad(idx.total, 0.0);
  cx.collect_grads(grad);

  CHECK(tape.value0(loss) == doctest::Approx(eval_loss()).epsilon(1e-14));

  // probe a deterministic spread of parameters with central differences
  std::vector<double> flat(idx.total);
  idx.gather(flat);
  const double h = 1e-6;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < idx.total; i += 2) {
    double keep = flat[i];
    flat[i] = keep + h;
    idx.scatter(flat);
    double up = eval_loss();
    flat[i] = keep - h;
    idx.scatter(flat);
    double dn = eval_loss();
    flat[i] = keep;
    idx.scatter(flat);
    double fd = (up - dn) / (2 * h);
    double scale = std::max({1e-6, std::abs(fd), std::abs(grad[i])});
    CHECK(std::abs(fd - grad[i]) / scale < 1e-4);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("init_forward invocation counter") {
  auto net = random_net(kSmallArch, 1200);
  std::vector<std::vector<double>> hist(
      3, std::vector<double>(net.init_lstm.input, 0.1));
  auto before = nn_stats::init_forward_calls.load();
  (void)init_forward(net, hist);
  (void)init_forward(net, hist);
  CHECK(nn_stats::init_forward_calls.load() == before + 2);
}
