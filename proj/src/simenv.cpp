#include "vdyn/simenv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vdyn/kernels.hpp"
#include "vdyn/rng.hpp"

namespace vdyn {

namespace {

constexpr const char* kCsvHeader =
    "t,x,y,psi,vx,vy,psi_dot,roll,pitch,delta,delta_dot,brake_state,"
    "u_throttle,u_brake,u_steer,env_id,mode";
constexpr int kSchemaVersion = 1;
constexpr int kSubsteps = 4;

void check_env(const OracleParams& p, EnvironmentId env) {
  if (env.index < 0 || env.index >= static_cast<int>(p.envs.size())) {
    throw ConfigError("oracle: unknown environment index " +
                      std::to_string(env.index));
  }
}

}  // namespace

std::pair<double, double> TerrainProfile::at(double x, double y) const {
  double roll = roll_base;
  double pitch = pitch_base;
  if (roll_amp != 0.0 && roll_wavelength > 0.0) {
    roll += roll_amp * std::sin(2.0 * M_PI * (x + 0.7 * y) / roll_wavelength);
  }
  if (pitch_amp != 0.0 && pitch_wavelength > 0.0) {
    pitch +=
        pitch_amp * std::sin(2.0 * M_PI * (y - 0.3 * x) / pitch_wavelength);
  }
  return {roll, pitch};
}

VehicleState oracle_step(const OracleParams& p, const VehicleState& s,
                         const ControlInput& u, EnvironmentId env,
                         const TerrainProfile& terrain, DriveMode mode) {
  check_env(p, env);
  const EnvDrag& e = p.envs[static_cast<std::size_t>(env.index)];
  const bool human = mode == DriveMode::human;
  const double bg = human ? p.human_brake_gain : p.auto_brake_gain;
  const double br = human ? p.human_brake_rate : p.auto_brake_rate;
  const double sg = human ? p.human_steer_gain : p.auto_steer_gain;
  const double sr = human ? p.human_steer_rate : p.auto_steer_rate;
  const double max_hw = p.vehicle.max_hand_wheel();
  const double h = p.vehicle.dt / kSubsteps;
  const double steer_cmd = u.steer * max_hw;

  VehicleState cur = s;
  for (int sub = 0; sub < kSubsteps; ++sub) {
    // actuators
    double pb = kern::clamp((u.brake - cur.brake) * bg, -br, br);
    double brake2 = kern::clamp(cur.brake + pb * h, 0.0, 1.0);
    double pd = kern::clamp((steer_cmd - cur.delta) * sg, -sr, sr);
    double delta2 = kern::clamp(cur.delta + pd * h, -max_hw, max_hw);

    // tire slip forces (bicycle approximation, saturating curve)
    double delta_road = cur.delta / p.vehicle.wheel_divisor;
    double vx_eff = std::max(std::abs(cur.vx), 0.8);
    double alpha_f =
        std::atan((cur.vy + p.lf * cur.psi_dot) / vx_eff) - delta_road;
    double alpha_r = std::atan((cur.vy - p.lr * cur.psi_dot) / vx_eff);
    auto sat = [&](double a) { return e.slip_sat * std::tanh(a / e.slip_sat); };
    double ff = -e.grip * sat(alpha_f);
    double fr = -e.grip * sat(alpha_r);
    // tire forces vanish quartically at standstill: a parked car with turned
    // wheels must not creep sideways (keeps coasting strictly dissipative)
    double q = cur.vx * cur.vx / 0.25;
    double fade = std::tanh(q * q);

    // longitudinal force balance
    double engine = p.engine_gain * u.throttle * (1.0 - cur.vx / p.top_speed);
    double brake_force =
        p.brake_coeff * cur.brake * std::tanh(cur.vx / p.brake_speed_scale);
    double drag = e.drag_lin * cur.vx + e.drag_quad * cur.vx * std::abs(cur.vx);

    double vx_dot = engine - brake_force - drag -
                    p.vehicle.gravity * std::sin(cur.pitch) +
                    cur.vy * cur.psi_dot;
    double vy_dot = (ff + fr) * fade - cur.vx * cur.psi_dot -
                    p.vy_damping * cur.vy +
                    p.vehicle.gravity * std::sin(cur.roll);
    double psi_ddot =
        ((p.lf * ff - p.lr * fr) / p.yaw_inertia) * fade -
        p.yaw_damping * cur.psi_dot;

    VehicleState nxt = cur;
    nxt.x = cur.x + h * (cur.vx * std::cos(cur.psi) -
                         cur.vy * std::sin(cur.psi));
    nxt.y = cur.y + h * (cur.vx * std::sin(cur.psi) +
                         cur.vy * std::cos(cur.psi));
    nxt.psi = wrap_angle(cur.psi + h * cur.psi_dot);
    nxt.vx = cur.vx + h * vx_dot;
    nxt.vy = cur.vy + h * vy_dot;
    nxt.psi_dot = cur.psi_dot + h * psi_ddot;
    nxt.brake = brake2;
    nxt.delta = delta2;
    nxt.delta_dot = pd;
    auto [roll, pitch] = terrain.at(nxt.x, nxt.y);
    nxt.roll = roll;
    nxt.pitch = pitch;
    cur = nxt;
  }
  return cur;
}

double oracle_steady_speed(const OracleParams& p, EnvironmentId env,
                           double throttle) {
  check_env(p, env);
  const EnvDrag& e = p.envs[static_cast<std::size_t>(env.index)];
  double gu = p.engine_gain * throttle;
  if (gu <= 0.0) return 0.0;
  double b = e.drag_lin + gu / p.top_speed;
  if (e.drag_quad <= 0.0) return gu / b;
  return (-b + std::sqrt(b * b + 4.0 * e.drag_quad * gu)) /
         (2.0 * e.drag_quad);
}

VehicleState Dataset::state_at(std::size_t i) const {
  VehicleState s;
  s.x = x[i];
  s.y = y[i];
  s.psi = psi[i];
  s.vx = vx[i];
  s.vy = vy[i];
  s.psi_dot = psi_dot[i];
  s.roll = roll[i];
  s.pitch = pitch[i];
  s.delta = delta[i];
  s.delta_dot = delta_dot[i];
  s.brake = brake_state[i];
  return s;
}

ControlInput Dataset::control_at(std::size_t i) const {
  return {u_throttle[i], u_brake[i], u_steer[i]};
}

void Dataset::append(double time, const VehicleState& s, const ControlInput& u,
                     EnvironmentId env, DriveMode m) {
  if (t.empty()) seg_begin = {0};
  t.push_back(time);
  x.push_back(s.x);
  y.push_back(s.y);
  psi.push_back(s.psi);
  vx.push_back(s.vx);
  vy.push_back(s.vy);
  psi_dot.push_back(s.psi_dot);
  roll.push_back(s.roll);
  pitch.push_back(s.pitch);
  delta.push_back(s.delta);
  delta_dot.push_back(s.delta_dot);
  brake_state.push_back(s.brake);
  u_throttle.push_back(u.throttle);
  u_brake.push_back(u.brake);
  u_steer.push_back(u.steer);
  env_id.push_back(env.index);
  mode.push_back(static_cast<int>(m));
}

double Dataset::max_speed() const {
  double m = 0.0;
  for (double v : vx) m = std::max(m, std::abs(v));
  return m;
}

namespace {

/// Stateful control source: the scripted maneuvers and the waypoint-pursuit
/// driver, all deterministic from the seed.
class PolicyRunner {
 public:
  PolicyRunner(const DriverPolicy& pol, const OracleParams& p,
               std::uint64_t seed)
      : pol_(pol), rng_(derive_seed(seed, "driver-policy")) {
    (void)p;
  }

  ControlInput next(double t, const VehicleState& s) {
    switch (pol_.kind) {
      case DriverPolicy::Kind::step_throttle: {
        if (t >= next_switch_) {
          level_ = rng_.uniform(0.0, 1.0);
          steer_ = rng_.uniform(-0.3, 0.3);
          next_switch_ = t + rng_.uniform(2.5, 6.0);
        }
        return {level_, 0.0, steer_};
      }
      case DriverPolicy::Kind::sine_steer: {
        double cmd =
            pol_.steer_amp * std::sin(2.0 * M_PI * t / pol_.steer_period);
        return {pol_.base_throttle, 0.0, cmd};
      }
      case DriverPolicy::Kind::brake_test: {
        // 6 s acceleration, 3 s braking at a cycling level
        double phase = std::fmod(t, 9.0);
        if (phase < 6.0) return {0.8, 0.0, 0.0};
        int cycle = static_cast<int>(t / 9.0) % 3;
        double level = cycle == 0 ? 0.3 : (cycle == 1 ? 0.6 : 1.0);
        return {0.0, level, 0.0};
      }
      case DriverPolicy::Kind::pursuit:
        return pursuit(s);
    }
    throw ConfigError("unknown driver policy kind");
  }

 private:
  ControlInput pursuit(const VehicleState& s) {
    double dx = wp_x_ - s.x;
    double dy = wp_y_ - s.y;
    if (!have_wp_ || dx * dx + dy * dy < 16.0) {
      wp_x_ = rng_.uniform(-pol_.course_extent, pol_.course_extent);
      wp_y_ = rng_.uniform(-pol_.course_extent, pol_.course_extent);
      target_ = rng_.uniform(0.4, 1.0) * pol_.speed_cap;
      have_wp_ = true;
      dx = wp_x_ - s.x;
      dy = wp_y_ - s.y;
    }
    double err = wrap_angle(std::atan2(dy, dx) - s.psi);
    double steer = kern::clamp(1.2 * err, -1.0, 1.0);
    double eff =
        target_ * (1.0 - 0.7 * std::min(std::abs(err) / M_PI, 1.0));
    double ev = eff - s.vx;
    double throttle = kern::clamp(0.8 * ev, 0.0, 1.0);
    double brake = ev < -0.5 ? kern::clamp(-0.4 * (ev + 0.5), 0.0, 1.0) : 0.0;
    return {throttle, brake, steer};
  }

  DriverPolicy pol_;
  Rng rng_;
  // step_throttle
  double next_switch_ = -1.0, level_ = 0.0, steer_ = 0.0;
  // pursuit
  bool have_wp_ = false;
  double wp_x_ = 0.0, wp_y_ = 0.0, target_ = 0.0;
};

}  // namespace

Dataset generate_dataset(const OracleParams& p, const DriverPolicy& policy,
                         double duration, EnvironmentId env,
                         std::uint64_t seed, const TerrainProfile& terrain) {
  check_env(p, env);
  if (!(duration > 0.0)) {
    throw DataError("generate_dataset: duration must be positive");
  }
  auto n = static_cast<std::size_t>(std::llround(duration / p.vehicle.dt));
  if (n == 0) n = 1;

  Dataset d;
  d.dt = p.vehicle.dt;
  d.seed = seed;
  d.oracle_hash = oracle_params_hash(p);

  VehicleState s;
  auto [roll, pitch] = terrain.at(0.0, 0.0);
  s.roll = roll;
  s.pitch = pitch;
  PolicyRunner runner(policy, p, seed);
  for (std::size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) * d.dt;
    ControlInput u = runner.next(t, s);
    d.append(t, s, u, env, policy.mode);
    s = oracle_step(p, s, u, env, terrain, policy.mode);
  }
  return d;
}

Dataset perturb_odometry(const Dataset& d, const NoiseModel& n,
                         std::uint64_t seed) {
  if (n.vel_sigma < 0 || n.yaw_rate_sigma < 0 || n.pos_drift_rate < 0 ||
      n.jump_prob < 0 || n.jump_mag < 0) {
    throw ConfigError("noise model parameters must be non-negative");
  }
  Dataset out = d;
  out.truth.reset();
  auto clean = std::make_shared<Dataset>(d);
  clean->truth.reset();
  out.truth = std::move(clean);

  Rng rng(derive_seed(seed, "odometry-noise"));
  double drift_x = 0.0, drift_y = 0.0;
  const double step_sigma = n.pos_drift_rate * std::sqrt(d.dt);
  std::size_t next_seg = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (next_seg < out.seg_begin.size() && out.seg_begin[next_seg] == i) {
      drift_x = drift_y = 0.0;  // drift is per contiguous run
      ++next_seg;
    }
    drift_x += step_sigma * rng.gaussian();
    drift_y += step_sigma * rng.gaussian();
    if (rng.uniform() < n.jump_prob) {
      drift_x += rng.uniform(-1.0, 1.0) * n.jump_mag;
    }
    if (rng.uniform() < n.jump_prob) {
      drift_y += rng.uniform(-1.0, 1.0) * n.jump_mag;
    }
    out.x[i] += drift_x;
    out.y[i] += drift_y;
    out.vx[i] += n.vel_sigma * rng.gaussian();
    out.vy[i] += n.vel_sigma * rng.gaussian();
    out.psi_dot[i] += n.yaw_rate_sigma * rng.gaussian();
  }
  return out;
}

void append_segment(Dataset& d, const Dataset& tail) {
  if (d.truth || tail.truth) {
    throw DataError("append_segment: perturb after assembling segments");
  }
  if (!d.t.empty() && d.dt != tail.dt) {
    throw DataError("append_segment: dt mismatch");
  }
  if (tail.t.empty()) return;
  if (d.t.empty()) {
    d = tail;
    return;
  }
  std::size_t base = d.size();
  auto cat_d = [](std::vector<double>& a, const std::vector<double>& b) {
    a.insert(a.end(), b.begin(), b.end());
  };
  auto cat_i = [](std::vector<int>& a, const std::vector<int>& b) {
    a.insert(a.end(), b.begin(), b.end());
  };
  cat_d(d.t, tail.t);
  cat_d(d.x, tail.x);
  cat_d(d.y, tail.y);
  cat_d(d.psi, tail.psi);
  cat_d(d.vx, tail.vx);
  cat_d(d.vy, tail.vy);
  cat_d(d.psi_dot, tail.psi_dot);
  cat_d(d.roll, tail.roll);
  cat_d(d.pitch, tail.pitch);
  cat_d(d.delta, tail.delta);
  cat_d(d.delta_dot, tail.delta_dot);
  cat_d(d.brake_state, tail.brake_state);
  cat_d(d.u_throttle, tail.u_throttle);
  cat_d(d.u_brake, tail.u_brake);
  cat_d(d.u_steer, tail.u_steer);
  cat_i(d.env_id, tail.env_id);
  cat_i(d.mode, tail.mode);
  for (std::size_t sb : tail.seg_begin) d.seg_begin.push_back(base + sb);
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << kCsvHeader << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    f << fmt_double(d.t[i]) << ',' << fmt_double(d.x[i]) << ','
      << fmt_double(d.y[i]) << ',' << fmt_double(d.psi[i]) << ','
      << fmt_double(d.vx[i]) << ',' << fmt_double(d.vy[i]) << ','
      << fmt_double(d.psi_dot[i]) << ',' << fmt_double(d.roll[i]) << ','
      << fmt_double(d.pitch[i]) << ',' << fmt_double(d.delta[i]) << ','
      << fmt_double(d.delta_dot[i]) << ',' << fmt_double(d.brake_state[i])
      << ',' << fmt_double(d.u_throttle[i]) << ','
      << fmt_double(d.u_brake[i]) << ',' << fmt_double(d.u_steer[i]) << ','
      << d.env_id[i] << ',' << d.mode[i] << '\n';
  }
  if (!f) throw DataError("write failed for " + path);
}

double parse_double(std::string_view s, const std::string& path) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("malformed number '" + std::string(s) + "' in " + path);
  }
  return v;
}

int parse_int(std::string_view s, const std::string& path) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("malformed integer '" + std::string(s) + "' in " + path);
  }
  return v;
}

Dataset read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataError("empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) {
    throw DataError("unexpected column header in " + path);
  }
  Dataset d;
  std::vector<std::string_view> fields;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fields.clear();
    std::string_view rest = line;
    while (true) {
      auto pos = rest.find(',');
      if (pos == std::string_view::npos) {
        fields.push_back(rest);
        break;
      }
      fields.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + 1);
    }
    if (fields.size() != 17) {
      throw DataError("row with " + std::to_string(fields.size()) +
                      " columns (want 17) in " + path);
    }
    d.t.push_back(parse_double(fields[0], path));
    d.x.push_back(parse_double(fields[1], path));
    d.y.push_back(parse_double(fields[2], path));
    d.psi.push_back(parse_double(fields[3], path));
    d.vx.push_back(parse_double(fields[4], path));
    d.vy.push_back(parse_double(fields[5], path));
    d.psi_dot.push_back(parse_double(fields[6], path));
    d.roll.push_back(parse_double(fields[7], path));
    d.pitch.push_back(parse_double(fields[8], path));
    d.delta.push_back(parse_double(fields[9], path));
    d.delta_dot.push_back(parse_double(fields[10], path));
    d.brake_state.push_back(parse_double(fields[11], path));
    d.u_throttle.push_back(parse_double(fields[12], path));
    d.u_brake.push_back(parse_double(fields[13], path));
    d.u_steer.push_back(parse_double(fields[14], path));
    d.env_id.push_back(parse_int(fields[15], path));
    d.mode.push_back(parse_int(fields[16], path));
  }
  return d;
}

}  // namespace

void save_dataset(const Dataset& d, const std::string& base_path) {
  write_csv(d, base_path + ".csv");
  if (d.truth) {
    if (d.truth->size() != d.size()) {
      throw DataError("truth companion row count differs from observed");
    }
    write_csv(*d.truth, base_path + ".truth.csv");
  }
  nlohmann::json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["dt"] = d.dt;
  meta["seed"] = d.seed;
  meta["oracle_params_hash"] = d.oracle_hash;
  meta["rows"] = d.size();
  meta["segments"] = d.seg_begin;
  meta["has_truth"] = static_cast<bool>(d.truth);
  std::ofstream mf(base_path + ".meta.json", std::ios::binary);
  if (!mf) throw DataError("cannot write " + base_path + ".meta.json");
  mf << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::string& base_path) {
  std::ifstream mf(base_path + ".meta.json", std::ios::binary);
  if (!mf) throw DataError("cannot open " + base_path + ".meta.json");
  nlohmann::json meta;
  try {
    mf >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed metadata in " + base_path + ".meta.json: " +
                    e.what());
  }
  int version = meta.value("schema_version", -1);
  if (version != kSchemaVersion) {
    throw DataError("dataset schema version " + std::to_string(version) +
                    " unsupported (want " + std::to_string(kSchemaVersion) +
                    ")");
  }
  Dataset d = read_csv(base_path + ".csv");
  d.dt = meta.at("dt").get<double>();
  d.seed = meta.at("seed").get<std::uint64_t>();
  d.oracle_hash = meta.value("oracle_params_hash", "");
  d.seg_begin = meta.at("segments").get<std::vector<std::size_t>>();
  auto rows = meta.at("rows").get<std::size_t>();
  if (rows != d.size()) {
    throw DataError("dataset " + base_path + ".csv is truncated: " +
                    std::to_string(d.size()) + " rows, metadata says " +
                    std::to_string(rows));
  }
  if (meta.value("has_truth", false)) {
    Dataset truth = read_csv(base_path + ".truth.csv");
    if (truth.size() != d.size()) {
      throw DataError("truth companion of " + base_path +
                      " is truncated or padded");
    }
    truth.dt = d.dt;
    truth.seed = d.seed;
    truth.oracle_hash = d.oracle_hash;
    truth.seg_begin = d.seg_begin;
    d.truth = std::make_shared<Dataset>(std::move(truth));
  }
  return d;
}

std::string oracle_params_hash(const OracleParams& p) {
  std::ostringstream os;
  auto put = [&](double v) { os << fmt_double(v) << ';'; };
  put(p.engine_gain);
  put(p.top_speed);
  put(p.brake_coeff);
  put(p.brake_speed_scale);
  put(p.auto_brake_gain);
  put(p.auto_brake_rate);
  put(p.auto_steer_gain);
  put(p.auto_steer_rate);
  put(p.human_brake_gain);
  put(p.human_brake_rate);
  put(p.human_steer_gain);
  put(p.human_steer_rate);
  put(p.lf);
  put(p.lr);
  put(p.yaw_inertia);
  put(p.yaw_damping);
  put(p.vy_damping);
  for (const auto& e : p.envs) {
    os << e.name << ';';
    put(e.drag_lin);
    put(e.drag_quad);
    put(e.grip);
    put(e.slip_sat);
  }
  put(p.vehicle.dt);
  put(p.vehicle.wheel_divisor);
  put(p.vehicle.steer_divisor);
  put(p.vehicle.wheelbase);
  put(p.vehicle.max_road_wheel);
  put(p.vehicle.gravity);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(os.str())));
  return buf;
}

}  // namespace vdyn
