#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace pidimt {

// Continuous-time variance-preserving noise schedule with a linear
// beta(t) = beta_min + (beta_max - beta_min) * t on t in [0, 1].
//
//   alpha(t) = exp(-0.5 * integral_0^t beta(s) ds)
//   sigma(t) = sqrt(1 - alpha(t)^2)
//   lambda(t) = log(alpha(t) / sigma(t))        (log signal-to-noise)
//
// alpha^2 + sigma^2 == 1 for every t, and lambda is strictly decreasing
// in t (noise grows monotonically).
struct NoiseSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double t_min = 1e-3;

  NoiseSchedule() = default;
  NoiseSchedule(double bmin, double bmax, double tmin = 1e-3)
      : beta_min(bmin), beta_max(bmax), t_min(tmin) {
    if (!(beta_min > 0.0) || !(beta_max > beta_min))
      throw std::invalid_argument("NoiseSchedule: need 0 < beta_min < beta_max, got " +
                                  std::to_string(bmin) + ", " + std::to_string(bmax));
    if (!(t_min > 0.0) || !(t_min < 1.0))
      throw std::invalid_argument("NoiseSchedule: t_min must lie in (0, 1)");
  }

  double beta(double t) const { return beta_min + (beta_max - beta_min) * t; }

  // integral_0^t beta(s) ds
  double beta_integral(double t) const {
    return beta_min * t + 0.5 * (beta_max - beta_min) * t * t;
  }

  double alpha(double t) const {
    check_t(t);
    return std::exp(-0.5 * beta_integral(t));
  }

  double sigma(double t) const {
    check_t(t);
    double a = alpha(t);
    return std::sqrt(std::max(0.0, 1.0 - a * a));
  }

  double log_snr(double t) const {
    check_t(t);
    double a = alpha(t);
    double s = sigma(t);
    if (s <= 0.0) throw std::invalid_argument("NoiseSchedule::log_snr: sigma(t) == 0 at t=" +
                                              std::to_string(t));
    return std::log(a / s);
  }

  // Inverse of log_snr, in closed form: lambda fixes sigma^2/alpha^2 =
  // exp(-2 lambda), hence integral beta = log(1 + exp(-2 lambda)), a
  // quadratic in t.
  double t_of_log_snr(double lam) const {
    double c = std::log1p(std::exp(-2.0 * lam));
    double db = beta_max - beta_min;
    double t = (-beta_min + std::sqrt(beta_min * beta_min + 2.0 * db * c)) / db;
    return t;
  }

 private:
  static void check_t(double t) {
    if (!(t >= 0.0) || !(t <= 1.0))
      throw std::invalid_argument("NoiseSchedule: t must lie in [0, 1], got " + std::to_string(t));
  }
};

}  // namespace pidimt
