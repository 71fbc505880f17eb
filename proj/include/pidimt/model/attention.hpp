#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/ops.hpp"

namespace pidimt {

// Multi-head scaled dot-product attention with queries from x and keys and
// values from kv; kv positions with a cleared mask bit are excluded from
// every softmax row. Plain subpath: no norm or residual inside.
template <typename T>
struct MultiHeadAttention {
  std::size_t dim = 0, heads = 0;
  Linear<T> wq, wk, wv, wo;

  void build(std::size_t d, std::size_t h) {
    if (d % h != 0) throw std::invalid_argument("attention: d must be divisible by heads");
    dim = d;
    heads = h;
    wq.build(d, d);
    wk.build(d, d);
    wv.build(d, d);
    wo.build(d, d);
  }
  void init(Rng& rng) {
    wq.init(rng);
    wk.init(rng);
    wv.init(rng);
    wo.init(rng);
  }
  void collect(ParamMap<T>& m, const std::string& p) {
    wq.collect(m, p + ".wq");
    wk.collect(m, p + ".wk");
    wv.collect(m, p + ".wv");
    wo.collect(m, p + ".wo");
  }

  Value<T> operator()(Graph<T>& g, const Value<T>& x, const Value<T>& kv,
                      const std::vector<std::uint8_t>& kv_mask) const {
    if (kv.val().cols() != dim || x.val().cols() != dim)
      throw std::invalid_argument("attention: token width mismatch");
    if (kv_mask.size() != kv.val().rows())
      throw std::invalid_argument("attention: mask length must equal kv rows");
    bool any = false;
    for (std::uint8_t b : kv_mask) any = any || (b != 0);
    if (!any) throw std::invalid_argument("attention: all key tokens masked");
    auto q = wq(g, x), k = wk(g, kv), v = wv(g, kv);
    std::size_t dh = dim / heads;
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Value<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = slice_cols(q, h * dh, dh);
      auto kh = slice_cols(k, h * dh, dh);
      auto vh = slice_cols(v, h * dh, dh);
      auto scores = scale(matmul_bt(qh, kh), inv_sqrt_dh);
      auto attn = masked_softmax_rows(scores, kv_mask);
      head_out.push_back(matmul(attn, vh));
    }
    return wo(g, concat_cols(head_out));
  }

  // Self-attention: keys and values are the input tokens themselves.
  Value<T> operator()(Graph<T>& g, const Value<T>& x,
                      const std::vector<std::uint8_t>& mask) const {
    return (*this)(g, x, x, mask);
  }
};

}  // namespace pidimt
