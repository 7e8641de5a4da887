#include "vdyn/core.hpp"

#include <cmath>

namespace vdyn {

std::pair<double, double> body_to_world(double vx, double vy, double psi) {
  if (!std::isfinite(vx) || !std::isfinite(vy) || !std::isfinite(psi)) {
    throw NumericError("body_to_world: non-finite input");
  }
  double c = std::cos(psi);
  double s = std::sin(psi);
  return {vx * c - vy * s, vx * s + vy * c};
}

std::vector<std::string> validate_state(const VehicleState& s,
                                        const ParametricConstants& c) {
  std::vector<std::string> out;
  auto finite = [&out](double v, const char* name) {
    if (!std::isfinite(v)) out.push_back(std::string(name) + ": non-finite");
  };
  finite(s.x, "x");
  finite(s.y, "y");
  finite(s.psi, "psi");
  finite(s.vx, "vx");
  finite(s.vy, "vy");
  finite(s.psi_dot, "psi_dot");
  finite(s.roll, "roll");
  finite(s.pitch, "pitch");
  finite(s.delta, "delta");
  finite(s.delta_dot, "delta_dot");
  finite(s.brake, "brake");
  if (std::isfinite(s.brake) && (s.brake < 0.0 || s.brake > 1.0)) {
    out.push_back("brake: outside [0, 1]");
  }
  if (std::isfinite(s.delta) && std::abs(s.delta) > c.max_hand_wheel() + 1e-12) {
    out.push_back("delta: exceeds hand-wheel clamp");
  }
  if (std::isfinite(s.psi) && (s.psi <= -M_PI || s.psi > M_PI)) {
    out.push_back("psi: not wrapped to (-pi, pi]");
  }
  return out;
}

}  // namespace vdyn
