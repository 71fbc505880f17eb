#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pidimt/core/ops.hpp"
#include "pidimt/core/rng.hpp"
#include "pidimt/core/tape.hpp"
#include "pidimt/core/tensor.hpp"

namespace pidimt {

// Flat name -> tensor registry used by the optimizer and the checkpoint
// writer. Iteration order is the registration order, which is fixed by the
// model's construction order.
template <typename T>
struct ParamMap {
  std::vector<std::pair<std::string, Tensor<T>*>> entries;

  void add(std::string name, Tensor<T>* t) { entries.emplace_back(std::move(name), t); }

  Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return t;
    return nullptr;
  }

  std::size_t total_size() const {
    std::size_t s = 0;
    for (const auto& [n, t] : entries) s += t->numel();
    return s;
  }
};

template <typename T>
void init_gaussian(Tensor<T>& t, Rng& rng, double std) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.gaussian() * std);
}

template <typename T>
struct Linear {
  Tensor<T> w;  // (in, out)
  Tensor<T> b;  // (out), absent when numel == 0

  void build(std::size_t in, std::size_t out, bool bias = true) {
    w = Tensor<T>(Shape{in, out});
    b = bias ? Tensor<T>(Shape{out}) : Tensor<T>();
  }

  void init(Rng& rng) {
    double std = std::sqrt(2.0 / static_cast<double>(w.dim(0) + w.dim(1)));
    init_gaussian(w, rng, std);
    if (b.numel() > 0) b = Tensor<T>::zeros(b.shape());
  }

  void zero_init() {
    w = Tensor<T>::zeros(w.shape());
    if (b.numel() > 0) b = Tensor<T>::zeros(b.shape());
  }

  Value<T> operator()(Graph<T>& g, const Value<T>& x) const {
    Value<T> y = matmul(x, g.param(w));
    if (b.numel() > 0) y = add_rowvec(y, g.param(b));
    return y;
  }

  void collect(ParamMap<T>& out, const std::string& prefix) {
    out.add(prefix + ".w", &w);
    if (b.numel() > 0) out.add(prefix + ".b", &b);
  }
};

// Two-layer perceptron with SiLU in the middle.
template <typename T>
struct Mlp2 {
  Linear<T> fc1, fc2;

  void build(std::size_t in, std::size_t hidden, std::size_t out) {
    fc1.build(in, hidden);
    fc2.build(hidden, out);
  }

  void init(Rng& rng) {
    fc1.init(rng);
    fc2.init(rng);
  }

  Value<T> operator()(Graph<T>& g, const Value<T>& x) const { return fc2(g, silu(fc1(g, x))); }

  void collect(ParamMap<T>& out, const std::string& prefix) {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Learned LayerNorm affine pair.
template <typename T>
struct NormAffine {
  Tensor<T> gain, bias;

  void build(std::size_t width) {
    gain = Tensor<T>::ones(Shape{width});
    bias = Tensor<T>::zeros(Shape{width});
  }

  Value<T> operator()(Graph<T>& g, const Value<T>& x, double eps = 1e-5) const {
    return layer_norm(x, g.param(gain), g.param(bias), eps);
  }

  void collect(ParamMap<T>& out, const std::string& prefix) {
    out.add(prefix + ".gain", &gain);
    out.add(prefix + ".bias", &bias);
  }
};

}  // namespace pidimt
