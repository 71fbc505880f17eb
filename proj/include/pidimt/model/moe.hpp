#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/ops.hpp"
#include "pidimt/core/rng.hpp"

namespace pidimt {

// Per-row top-k selection on values; ties resolve to the lowest index.
inline std::vector<std::size_t> top_k_indices(const double* row, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Mixture of experts: a router picks top-k of the shallow experts per token
// (softmax-renormalized over the selected logits), while every deep expert
// always runs and contributes an unweighted average. Training adds annealed
// Gaussian noise to the router logits.
template <typename T>
struct MoeLayer {
  std::size_t dim = 0, e_shallow = 0, e_deep = 0, k = 0;
  Linear<T> router;                 // d -> e_shallow
  std::vector<Mlp2<T>> shallow;     // d -> 2d -> d
  struct DeepExpert {
    Linear<T> fc1, fc2, fc3;        // d -> 2d -> 2d -> d
    void build(std::size_t d) {
      fc1.build(d, 2 * d);
      fc2.build(2 * d, 2 * d);
      fc3.build(2 * d, d);
    }
    void init(Rng& rng) {
      fc1.init(rng);
      fc2.init(rng);
      fc3.init(rng);
    }
    void collect(ParamMap<T>& m, const std::string& p) {
      fc1.collect(m, p + ".fc1");
      fc2.collect(m, p + ".fc2");
      fc3.collect(m, p + ".fc3");
    }
    Value<T> operator()(Graph<T>& g, const Value<T>& x) const {
      return fc3(g, silu(fc2(g, silu(fc1(g, x)))));
    }
  };
  std::vector<DeepExpert> deep;

  void build(std::size_t d, std::size_t n_shallow, std::size_t n_deep, std::size_t top_k) {
    if (top_k == 0 || top_k > n_shallow)
      throw std::invalid_argument("moe: top_k must be in [1, e_shallow], got k=" +
                                  std::to_string(top_k) + " with " + std::to_string(n_shallow) +
                                  " shallow experts");
    if (n_deep == 0) throw std::invalid_argument("moe: need at least one deep expert");
    dim = d;
    e_shallow = n_shallow;
    e_deep = n_deep;
    k = top_k;
    router.build(d, e_shallow);
    shallow.resize(e_shallow);
    for (auto& e : shallow) e.build(d, 2 * d, d);
    deep.resize(e_deep);
    for (auto& e : deep) e.build(d);
  }
  void init(Rng& rng) {
    router.init(rng);
    for (auto& e : shallow) e.init(rng);
    for (auto& e : deep) e.init(rng);
  }
  void collect(ParamMap<T>& m, const std::string& p) {
    router.collect(m, p + ".router");
    for (std::size_t i = 0; i < shallow.size(); ++i)
      shallow[i].collect(m, p + ".shallow" + std::to_string(i));
    for (std::size_t i = 0; i < deep.size(); ++i)
      deep[i].collect(m, p + ".deep" + std::to_string(i));
  }

  // noise_sigma > 0 requires an rng; the noise is an untracked additive term,
  // so routing gradients flow through the clean logits.
  Value<T> operator()(Graph<T>& g, const Value<T>& x, double noise_sigma = 0.0,
                      Rng* rng = nullptr) const {
    const std::size_t S = x.val().rows();
    auto logits = router(g, x);
    if (noise_sigma > 0.0) {
      if (!rng) throw std::invalid_argument("moe: gate noise requires an rng");
      Tensor<T> noise(Shape{S, e_shallow});
      for (std::size_t i = 0; i < noise.numel(); ++i)
        noise[i] = static_cast<T>(noise_sigma * rng->gaussian());
      logits = add(logits, g.constant(std::move(noise)));
    }

    // Routing decisions are made on the (noisy) logit values.
    std::vector<std::vector<std::size_t>> sel(S);
    std::vector<double> row(e_shallow);
    for (std::size_t r = 0; r < S; ++r) {
      for (std::size_t e = 0; e < e_shallow; ++e)
        row[e] = static_cast<double>(logits.val().at2(r, e));
      sel[r] = top_k_indices(row.data(), e_shallow, k);
    }
    auto sel_logits = row_gather(logits, sel);
    auto weights = softmax(sel_logits, 1);  // (S, k)

    // Group rows by (expert, slot) and run each expert once per group.
    Value<T> mixed = g.constant(Tensor<T>::zeros(Shape{S, dim}));
    for (std::size_t e = 0; e < e_shallow; ++e) {
      std::vector<std::size_t> rows;
      std::vector<std::size_t> slots;
      for (std::size_t r = 0; r < S; ++r)
        for (std::size_t j = 0; j < k; ++j)
          if (sel[r][j] == e) {
            rows.push_back(r);
            slots.push_back(j);
          }
      if (rows.empty()) continue;
      auto xe = gather_rows(x, rows);
      auto ye = shallow[e](g, xe);
      // Per-row gate weight for this expert group.
      std::vector<std::vector<std::size_t>> wcols(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) wcols[i] = {slots[i]};
      auto we = row_gather(gather_rows(weights, rows), wcols);  // (|rows|, 1)
      mixed = add(mixed, scatter_rows(row_scale(ye, we), rows, S));
    }

    // Always-on deep experts, plain average.
    Value<T> deep_sum = deep[0](g, x);
    for (std::size_t e = 1; e < e_deep; ++e) deep_sum = add(deep_sum, deep[e](g, x));
    return add(mixed, scale(deep_sum, 1.0 / static_cast<double>(e_deep)));
  }
};

}  // namespace pidimt
