#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace pidimt {

// Mean Euclidean displacement between predicted and true positions.
inline double ade(const std::vector<std::array<double, 2>>& pred,
                  const std::vector<std::array<double, 2>>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("ade: prediction and truth lengths differ");
  if (pred.empty()) throw std::invalid_argument("ade: empty trajectory");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    s += std::hypot(pred[i][0] - truth[i][0], pred[i][1] - truth[i][1]);
  return s / double(pred.size());
}

// Euclidean displacement at the final frame.
inline double fde(const std::vector<std::array<double, 2>>& pred,
                  const std::vector<std::array<double, 2>>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("fde: prediction and truth lengths differ");
  if (pred.empty()) throw std::invalid_argument("fde: empty trajectory");
  return std::hypot(pred.back()[0] - truth.back()[0], pred.back()[1] - truth.back()[1]);
}

// Mean magnitude of the second finite difference of position over dt^2.
inline double accel_metric(const std::vector<std::array<double, 2>>& pos, double dt) {
  if (pos.size() < 3) throw std::invalid_argument("accel metric: need at least 3 frames");
  if (!(dt > 0.0)) throw std::invalid_argument("accel metric: dt must be positive");
  double s = 0.0;
  for (std::size_t k = 0; k + 2 < pos.size(); ++k) {
    const double ax = pos[k + 2][0] - 2.0 * pos[k + 1][0] + pos[k][0];
    const double ay = pos[k + 2][1] - 2.0 * pos[k + 1][1] + pos[k][1];
    s += std::hypot(ax, ay);
  }
  return s / (double(pos.size() - 2) * dt * dt);
}

// Mean magnitude of the third finite difference of position over dt^3.
inline double jerk_metric(const std::vector<std::array<double, 2>>& pos, double dt) {
  if (pos.size() < 4) throw std::invalid_argument("jerk metric: need at least 4 frames");
  if (!(dt > 0.0)) throw std::invalid_argument("jerk metric: dt must be positive");
  double s = 0.0;
  for (std::size_t k = 0; k + 3 < pos.size(); ++k) {
    const double jx = pos[k + 3][0] - 3.0 * pos[k + 2][0] + 3.0 * pos[k + 1][0] - pos[k][0];
    const double jy = pos[k + 3][1] - 3.0 * pos[k + 2][1] + 3.0 * pos[k + 1][1] - pos[k][1];
    s += std::hypot(jx, jy);
  }
  return s / (double(pos.size() - 3) * dt * dt * dt);
}

}  // namespace pidimt
