#pragma once

#include <cstddef>
#include <stdexcept>

#include "pidimt/core/ops.hpp"
#include "pidimt/core/rng.hpp"
#include "pidimt/diffusion/schedule.hpp"

namespace pidimt {

// Forward perturbation x_t = alpha(t) * x0 + sigma(t) * eps. Pure: the
// caller draws eps, so the same inputs always give the same output.
template <typename T>
Tensor<T> perturb(const Tensor<T>& x0, const Tensor<T>& eps, double t,
                  const NoiseSchedule& sch) {
  if (x0.shape() != eps.shape())
    throw std::invalid_argument("perturb: noise shape " + shape_str(eps.shape()) +
                                " does not match data shape " + shape_str(x0.shape()));
  const T a = T(sch.alpha(t));
  const T s = T(sch.sigma(t));
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < x0.numel(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

// Training times are uniform over [t_min, 1]; below t_min the noise level
// underflows the anchored region and adds no signal.
inline double sample_time(Rng& rng, const NoiseSchedule& sch) {
  return rng.uniform(sch.t_min, 1.0);
}

// Mean squared error over the cells with weight 1. Weights select the
// supervised region (valid agents, future frames); everything else is
// excluded from both the sum and the divisor.
template <typename T>
Value<T> masked_mse(Graph<T>& g, const Value<T>& pred, const Value<T>& target,
                    const Tensor<T>& weight) {
  if (pred.val().shape() != target.val().shape())
    throw std::invalid_argument("masked_mse: prediction and target shapes differ");
  if (pred.val().shape() != weight.shape())
    throw std::invalid_argument("masked_mse: weight shape does not match the prediction");
  double count = 0.0;
  for (std::size_t i = 0; i < weight.numel(); ++i) {
    if (weight[i] != T(0) && weight[i] != T(1))
      throw std::invalid_argument("masked_mse: weights must be 0 or 1");
    count += double(weight[i]);
  }
  if (count == 0.0) throw std::invalid_argument("masked_mse: no supervised cells");
  auto diff = sub(pred, target);
  return scale(sum_all(mul(mul(diff, diff), g.constant(weight))), 1.0 / count);
}

}  // namespace pidimt
