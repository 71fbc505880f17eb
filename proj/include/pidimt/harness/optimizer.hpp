#pragma once

// Decoupled-weight-decay Adam with global gradient-norm clipping, plus the
// depth-scaled warmup-then-cosine learning-rate schedule.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/tape.hpp"

namespace pidimt {

// Base rate scaled by 1/sqrt(depth), ramped linearly over the warmup and
// decayed along a half cosine to zero at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup,
                    std::size_t n_blocks, double base) {
  if (n_blocks == 0) throw std::invalid_argument("lr_at: block count must be positive");
  if (!(base > 0.0)) throw std::invalid_argument("lr_at: base rate must be positive");
  const double lr = base / std::sqrt(static_cast<double>(n_blocks));
  if (warmup > 0 && step < warmup)
    return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total_steps <= warmup) return lr;
  double u = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  if (u > 1.0) u = 1.0;
  constexpr double kPi = 3.14159265358979323846;
  return lr * 0.5 * (1.0 + std::cos(kPi * u));
}

template <typename T>
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip = 1.0;  // global grad-norm ceiling; 0 disables clipping

  std::vector<Tensor<double>> m_, v_;  // first and second moments, in double
  std::size_t t_ = 0;                  // updates applied

  void build(const ParamMap<T>& params) {
    m_.clear();
    v_.clear();
    m_.reserve(params.entries.size());
    v_.reserve(params.entries.size());
    for (const auto& [name, tensor] : params.entries) {
      m_.emplace_back(tensor->shape());
      v_.emplace_back(tensor->shape());
    }
    t_ = 0;
  }

  // Applies one update from the gradients recorded on the graph and returns
  // the post-clip global gradient norm. Parameters the loss never touched
  // have no gradient and are left unchanged.
  double step(ParamMap<T>& params, const Graph<T>& g, double lr) {
    if (m_.size() != params.entries.size())
      throw std::invalid_argument("optimizer: built for a different parameter set");
    std::vector<const Tensor<T>*> grads(params.entries.size(), nullptr);
    double sq = 0.0;
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
      const Tensor<T>* gr = g.grad_of(*params.entries[i].second);
      grads[i] = gr;
      if (!gr) continue;
      for (std::size_t j = 0; j < gr->numel(); ++j) {
        const double v = static_cast<double>((*gr)[j]);
        sq += v * v;
      }
    }
    const double norm = std::sqrt(sq);
    const double scale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
      if (!grads[i]) continue;
      Tensor<T>& p = *params.entries[i].second;
      Tensor<double>& m = m_[i];
      Tensor<double>& v = v_[i];
      for (std::size_t j = 0; j < p.numel(); ++j) {
        const double gval = static_cast<double>((*grads[i])[j]) * scale;
        m[j] = beta1 * m[j] + (1.0 - beta1) * gval;
        v[j] = beta2 * v[j] + (1.0 - beta2) * gval * gval;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        const double pv = static_cast<double>(p[j]);
        p[j] = static_cast<T>(pv - lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * pv));
      }
    }
    return norm * scale;
  }
};

}  // namespace pidimt
