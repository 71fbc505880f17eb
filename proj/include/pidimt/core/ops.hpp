#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pidimt/core/tape.hpp"
#include "pidimt/core/tensor.hpp"

namespace pidimt {
namespace kern {

// Raw kernels shared by forward ops and backward closures.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out(Shape{m, n});
  const T* A = a.data();
  const T* B = b.data();
  T* C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T(0)) continue;
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

// a (m,k) times b^T where b is (n,k).
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw std::invalid_argument("matmul_bt: incompatible shapes " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<T> out(Shape{m, n});
  const T* A = a.data();
  const T* B = b.data();
  T* C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = B + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      C[i * n + j] = acc;
    }
  }
  return out;
}

// a^T times b where a is (m,k), b is (m,n); result (k,n).
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    throw std::invalid_argument("matmul_tn: incompatible shapes " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out(Shape{k, n});
  const T* A = a.data();
  const T* B = b.data();
  T* C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T(0)) continue;
      T* crow = C + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at2(j, i) = a.at2(i, j);
  return out;
}

}  // namespace kern

namespace detail {

template <typename T, typename BackFn>
Value<T> emit(Tape<T>* tape, Tensor<T> out, BackFn&& back) {
  auto p = std::make_shared<const Tensor<T>>(std::move(out));
  if (!tape) return Value<T>{p, nullptr, -1};
  int id = tape->record(p, std::forward<BackFn>(back));
  return Value<T>{p, tape, id};
}

}  // namespace detail

// ---- elementwise binary ----

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor<T> out = a.val();
  const T* bp = b.val().data();
  T* op = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) op[i] += bp[i];
  Tape<T>* tape = common_tape(a, b);
  return detail::emit(tape, std::move(out), [ia = a.id, ib = b.id](const Tensor<T>& g, Tape<T>& t) {
    t.add_grad(ia, Tensor<T>(g));
    t.add_grad(ib, Tensor<T>(g));
  });
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  check_same_shape(a.val(), b.val(), "sub");
  Tensor<T> out = a.val();
  const T* bp = b.val().data();
  T* op = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) op[i] -= bp[i];
  Tape<T>* tape = common_tape(a, b);
  return detail::emit(tape, std::move(out), [ia = a.id, ib = b.id](const Tensor<T>& g, Tape<T>& t) {
    t.add_grad(ia, Tensor<T>(g));
    if (ib >= 0) {
      Tensor<T> ng = g;
      for (T& v : ng.vec()) v = -v;
      t.add_grad(ib, std::move(ng));
    }
  });
}

template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor<T> out = a.val();
  const T* bp = b.val().data();
  T* op = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) op[i] *= bp[i];
  Tape<T>* tape = common_tape(a, b);
  return detail::emit(tape, std::move(out),
                      [ia = a.id, ib = b.id, pa = a.data, pb = b.data](const Tensor<T>& g, Tape<T>& t) {
                        if (ia >= 0) {
                          Tensor<T> ga = g;
                          const T* q = pb->data();
                          T* r = ga.data();
                          for (std::size_t i = 0; i < ga.numel(); ++i) r[i] *= q[i];
                          t.add_grad(ia, std::move(ga));
                        }
                        if (ib >= 0) {
                          Tensor<T> gb = g;
                          const T* q = pa->data();
                          T* r = gb.data();
                          for (std::size_t i = 0; i < gb.numel(); ++i) r[i] *= q[i];
                          t.add_grad(ib, std::move(gb));
                        }
                      });
}

template <typename T>
Value<T> scale(const Value<T>& a, double c) {
  Tensor<T> out = a.val();
  for (T& v : out.vec()) v = static_cast<T>(v * c);
  return detail::emit(a.tape, std::move(out), [ia = a.id, c](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> ga = g;
    for (T& v : ga.vec()) v = static_cast<T>(v * c);
    t.add_grad(ia, std::move(ga));
  });
}

template <typename T>
Value<T> neg(const Value<T>& a) {
  return scale(a, -1.0);
}

// ---- broadcast against row vector / per-row scalar ----

template <typename T>
Value<T> add_rowvec(const Value<T>& x, const Value<T>& v) {
  if (x.val().rank() != 2 || v.val().numel() != x.val().cols())
    throw std::invalid_argument("add_rowvec: shapes " + shape_str(x.val().shape()) + " vs " +
                                shape_str(v.val().shape()));
  const std::size_t m = x.val().rows(), n = x.val().cols();
  Tensor<T> out = x.val();
  const T* vp = v.val().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += vp[j];
  }
  Tape<T>* tape = common_tape(x, v);
  return detail::emit(tape, std::move(out), [ix = x.id, iv = v.id, n, m, vshape = v.val().shape()](
                                                const Tensor<T>& g, Tape<T>& t) {
    t.add_grad(ix, Tensor<T>(g));
    if (iv >= 0) {
      Tensor<T> gv(vshape);
      T* q = gv.data();
      const T* gp = g.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) q[j] += gp[i * n + j];
      t.add_grad(iv, std::move(gv));
    }
  });
}

template <typename T>
Value<T> mul_rowvec(const Value<T>& x, const Value<T>& v) {
  if (x.val().rank() != 2 || v.val().numel() != x.val().cols())
    throw std::invalid_argument("mul_rowvec: shapes " + shape_str(x.val().shape()) + " vs " +
                                shape_str(v.val().shape()));
  const std::size_t m = x.val().rows(), n = x.val().cols();
  Tensor<T> out = x.val();
  const T* vp = v.val().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] *= vp[j];
  }
  Tape<T>* tape = common_tape(x, v);
  return detail::emit(
      tape, std::move(out),
      [ix = x.id, iv = v.id, px = x.data, pv = v.data, n, m, vshape = v.val().shape()](
          const Tensor<T>& g, Tape<T>& t) {
        if (ix >= 0) {
          Tensor<T> gx = g;
          const T* vp = pv->data();
          for (std::size_t i = 0; i < m; ++i) {
            T* row = gx.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) row[j] *= vp[j];
          }
          t.add_grad(ix, std::move(gx));
        }
        if (iv >= 0) {
          Tensor<T> gv(vshape);
          T* q = gv.data();
          const T* gp = g.data();
          const T* xp = px->data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) q[j] += gp[i * n + j] * xp[i * n + j];
          t.add_grad(iv, std::move(gv));
        }
      });
}

// Multiplies row i of x by w[i]; w has one entry per row.
template <typename T>
Value<T> row_scale(const Value<T>& x, const Value<T>& w) {
  if (x.val().rank() != 2 || w.val().numel() != x.val().rows())
    throw std::invalid_argument("row_scale: shapes " + shape_str(x.val().shape()) + " vs " +
                                shape_str(w.val().shape()));
  const std::size_t m = x.val().rows(), n = x.val().cols();
  Tensor<T> out = x.val();
  const T* wp = w.val().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] *= wp[i];
  }
  Tape<T>* tape = common_tape(x, w);
  return detail::emit(
      tape, std::move(out),
      [ix = x.id, iw = w.id, px = x.data, pw = w.data, n, m, wshape = w.val().shape()](
          const Tensor<T>& g, Tape<T>& t) {
        if (ix >= 0) {
          Tensor<T> gx = g;
          const T* wp = pw->data();
          for (std::size_t i = 0; i < m; ++i) {
            T* row = gx.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) row[j] *= wp[i];
          }
          t.add_grad(ix, std::move(gx));
        }
        if (iw >= 0) {
          Tensor<T> gw(wshape);
          T* q = gw.data();
          const T* gp = g.data();
          const T* xp = px->data();
          for (std::size_t i = 0; i < m; ++i) {
            T acc = T(0);
            for (std::size_t j = 0; j < n; ++j) acc += gp[i * n + j] * xp[i * n + j];
            q[i] = acc;
          }
          t.add_grad(iw, std::move(gw));
        }
      });
}

// ---- matmul ----

template <typename T>
Value<T> matmul(const Value<T>& a, const Value<T>& b) {
  Tensor<T> out = kern::matmul(a.val(), b.val());
  Tape<T>* tape = common_tape(a, b);
  return detail::emit(tape, std::move(out),
                      [ia = a.id, ib = b.id, pa = a.data, pb = b.data](const Tensor<T>& g, Tape<T>& t) {
                        if (ia >= 0) t.add_grad(ia, kern::matmul_bt(g, *pb));
                        if (ib >= 0) t.add_grad(ib, kern::matmul_tn(*pa, g));
                      });
}

// a times b^T without materializing the transpose.
template <typename T>
Value<T> matmul_bt(const Value<T>& a, const Value<T>& b) {
  Tensor<T> out = kern::matmul_bt(a.val(), b.val());
  Tape<T>* tape = common_tape(a, b);
  return detail::emit(tape, std::move(out),
                      [ia = a.id, ib = b.id, pa = a.data, pb = b.data](const Tensor<T>& g, Tape<T>& t) {
                        if (ia >= 0) t.add_grad(ia, kern::matmul(g, *pb));
                        if (ib >= 0) t.add_grad(ib, kern::matmul_tn(g, *pa));
                      });
}

template <typename T>
Value<T> transpose2d(const Value<T>& a) {
  Tensor<T> out = kern::transpose2d(a.val());
  return detail::emit(a.tape, std::move(out), [ia = a.id](const Tensor<T>& g, Tape<T>& t) {
    t.add_grad(ia, kern::transpose2d(g));
  });
}

// ---- reductions ----

template <typename T>
Value<T> sum_all(const Value<T>& a) {
  T acc = T(0);
  for (T v : a.val().vec()) acc += v;
  return detail::emit(a.tape, Tensor<T>::scalar(acc),
                      [ia = a.id, shape = a.val().shape()](const Tensor<T>& g, Tape<T>& t) {
                        t.add_grad(ia, Tensor<T>::full(shape, g[0]));
                      });
}

template <typename T>
Value<T> mean_all(const Value<T>& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.val().numel()));
}

template <typename T>
Value<T> sum_rows(const Value<T>& a) {
  const std::size_t m = a.val().rows(), n = a.val().cols();
  Tensor<T> out(Shape{n});
  const T* ap = a.val().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += ap[i * n + j];
  return detail::emit(a.tape, std::move(out), [ia = a.id, m, n](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> ga(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[j];
    t.add_grad(ia, std::move(ga));
  });
}

template <typename T>
Value<T> mean_rows(const Value<T>& a) {
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.val().rows()));
}

// ---- normalization and softmax ----

// Per-row zero-mean unit-variance normalization (population variance, eps
// inside the square root), then the affine transform gain * xhat + bias.
template <typename T>
Value<T> layer_norm(const Value<T>& x, const Value<T>& gain, const Value<T>& bias, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
  if (x.val().rank() != 2)
    throw std::invalid_argument("layer_norm: expected rank-2 input, shape " +
                                shape_str(x.val().shape()));
  const std::size_t m = x.val().rows(), n = x.val().cols();
  if (gain.val().numel() != n || bias.val().numel() != n)
    throw std::invalid_argument("layer_norm: affine shapes " + shape_str(gain.val().shape()) +
                                "/" + shape_str(bias.val().shape()) + " do not match width " +
                                std::to_string(n));
  auto xhat = std::make_shared<Tensor<T>>(Shape{m, n});
  auto inv = std::make_shared<Tensor<T>>(Shape{m});
  Tensor<T> out(Shape{m, n});
  const T* xp = x.val().data();
  const T* gp = gain.val().data();
  const T* bp = bias.val().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xp + i * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      T d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*inv)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      T xh = (row[j] - mu) * is;
      (*xhat)[i * n + j] = xh;
      out[i * n + j] = gp[j] * xh + bp[j];
    }
  }
  Tape<T>* tape = common_tape(x, gain, bias);
  return detail::emit(
      tape, std::move(out),
      [ix = x.id, ig = gain.id, ib = bias.id, xhat, inv, pg = gain.data, m, n,
       gshape = gain.val().shape()](const Tensor<T>& g, Tape<T>& t) {
        if (ig >= 0) {
          Tensor<T> gg(gshape);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * (*xhat)[i * n + j];
          t.add_grad(ig, std::move(gg));
        }
        if (ib >= 0) {
          Tensor<T> gb(gshape);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
          t.add_grad(ib, std::move(gb));
        }
        if (ix >= 0) {
          Tensor<T> gx(Shape{m, n});
          const T* gainp = pg->data();
          for (std::size_t i = 0; i < m; ++i) {
            T mean_dxh = T(0), mean_dxh_xh = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              T dxh = g[i * n + j] * gainp[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * (*xhat)[i * n + j];
            }
            mean_dxh /= static_cast<T>(n);
            mean_dxh_xh /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              T dxh = g[i * n + j] * gainp[j];
              gx[i * n + j] = (*inv)[i] * (dxh - mean_dxh - (*xhat)[i * n + j] * mean_dxh_xh);
            }
          }
          t.add_grad(ix, std::move(gx));
        }
      });
}

// Normalization without a learned affine pair (the modulation pathway
// supplies scale and shift instead).
template <typename T>
Value<T> layer_norm_plain(const Value<T>& x, double eps) {
  const std::size_t n = x.val().cols();
  Value<T> one = make_untracked(Tensor<T>::ones(Shape{n}));
  Value<T> zero = make_untracked(Tensor<T>::zeros(Shape{n}));
  return layer_norm(x, one, zero, eps);
}

// Softmax along an arbitrary axis with max subtraction.
template <typename T>
Value<T> softmax(const Value<T>& x, std::size_t axis) {
  const Shape& s = x.val().shape();
  if (axis >= s.size())
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(s));
  const std::size_t len = s[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  Tensor<T> out(s);
  const T* xp = x.val().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xp[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xp[base + k * inner]);
      T denom = T(0);
      for (std::size_t k = 0; k < len; ++k) {
        T e = std::exp(xp[base + k * inner] - mx);
        out[base + k * inner] = e;
        denom += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= denom;
    }
  }
  auto pout = std::make_shared<const Tensor<T>>(std::move(out));
  if (!x.tape) return Value<T>{pout, nullptr, -1};
  int id = x.tape->record(pout, [ix = x.id, pout, len, inner, outer](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> gx(pout->shape());
    const T* pp = pout->data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = T(0);
        for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * pp[base + k * inner];
        for (std::size_t k = 0; k < len; ++k)
          gx[base + k * inner] = pp[base + k * inner] * (g[base + k * inner] - dot);
      }
    }
    t.add_grad(ix, std::move(gx));
  });
  return Value<T>{pout, x.tape, id};
}

// Row-wise softmax over the key axis where only columns with mask==1
// participate; masked columns get exactly zero weight. A row with no
// unmasked key is a caller error.
template <typename T>
Value<T> masked_softmax_rows(const Value<T>& x, const std::vector<std::uint8_t>& key_mask) {
  if (x.val().rank() != 2 || key_mask.size() != x.val().cols())
    throw std::invalid_argument("masked_softmax_rows: mask length " +
                                std::to_string(key_mask.size()) + " vs shape " +
                                shape_str(x.val().shape()));
  const std::size_t m = x.val().rows(), n = x.val().cols();
  bool any = false;
  for (std::uint8_t b : key_mask) any = any || (b != 0);
  if (!any) throw std::invalid_argument("masked_softmax_rows: all keys masked");
  Tensor<T> out(Shape{m, n});
  const T* xp = x.val().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xp + i * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (key_mask[j]) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      if (key_mask[j]) {
        T e = std::exp(row[j] - mx);
        out[i * n + j] = e;
        denom += e;
      } else {
        out[i * n + j] = T(0);
      }
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= denom;
  }
  auto pout = std::make_shared<const Tensor<T>>(std::move(out));
  if (!x.tape) return Value<T>{pout, nullptr, -1};
  int id = x.tape->record(pout, [ix = x.id, pout, m, n](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> gx(Shape{m, n});
    const T* pp = pout->data();
    for (std::size_t i = 0; i < m; ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * pp[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        gx[i * n + j] = pp[i * n + j] * (g[i * n + j] - dot);
    }
    t.add_grad(ix, std::move(gx));
  });
  return Value<T>{pout, x.tape, id};
}

// ---- elementwise nonlinearities ----

namespace detail {

template <typename T, typename F, typename DF>
Value<T> unary(const Value<T>& x, F&& f, DF&& df) {
  Tensor<T> out(x.val().shape());
  const T* xp = x.val().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(xp[i]);
  auto pout = std::make_shared<const Tensor<T>>(std::move(out));
  if (!x.tape) return Value<T>{pout, nullptr, -1};
  int id = x.tape->record(pout, [ix = x.id, px = x.data, pout, df](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> gx(g.shape());
    const T* xp = px->data();
    const T* yp = pout->data();
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = g[i] * df(xp[i], yp[i]);
    t.add_grad(ix, std::move(gx));
  });
  return Value<T>{pout, x.tape, id};
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Value<T> silu(const Value<T>& x) {
  return detail::unary(
      x, [](T v) { return v * detail::sigmoid_scalar(v); },
      [](T v, T) {
        T s = detail::sigmoid_scalar(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Value<T> gelu_tanh(const Value<T>& x) {
  constexpr double kC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return detail::unary(
      x,
      [](T v) {
        T u = static_cast<T>(kC) * (v + static_cast<T>(kA) * v * v * v);
        return T(0.5) * v * (T(1) + std::tanh(u));
      },
      [](T v, T) {
        T u = static_cast<T>(kC) * (v + static_cast<T>(kA) * v * v * v);
        T th = std::tanh(u);
        T du = static_cast<T>(kC) * (T(1) + T(3) * static_cast<T>(kA) * v * v);
        return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
      });
}

template <typename T>
Value<T> softplus(const Value<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v > T(30)) return v;
        if (v < T(-30)) return std::exp(v);
        return std::log1p(std::exp(v));
      },
      [](T v, T) { return detail::sigmoid_scalar(v); });
}

template <typename T>
Value<T> tanh_v(const Value<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Value<T> sigmoid_v(const Value<T>& x) {
  return detail::unary(
      x, [](T v) { return detail::sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Value<T> exp_v(const Value<T>& x) {
  return detail::unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

// ---- structural ops ----

template <typename T>
Value<T> reshape(const Value<T>& x, Shape shape) {
  if (shape_numel(shape) != x.val().numel())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(x.val().shape()) + " -> " +
                                shape_str(shape));
  Tensor<T> out(shape, x.val().vec());
  return detail::emit(x.tape, std::move(out),
                      [ix = x.id, old_shape = x.val().shape()](const Tensor<T>& g, Tape<T>& t) {
                        t.add_grad(ix, Tensor<T>(old_shape, g.vec()));
                      });
}

template <typename T>
Value<T> slice_cols(const Value<T>& x, std::size_t c0, std::size_t width) {
  const std::size_t m = x.val().rows(), n = x.val().cols();
  if (c0 + width > n)
    throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," +
                                std::to_string(c0 + width) + ") exceeds width " + std::to_string(n));
  Tensor<T> out(Shape{m, width});
  const T* xp = x.val().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = xp[i * n + c0 + j];
  return detail::emit(x.tape, std::move(out), [ix = x.id, m, n, c0, width](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> gx(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < width; ++j) gx[i * n + c0 + j] = g[i * width + j];
    t.add_grad(ix, std::move(gx));
  });
}

template <typename T>
Value<T> slice_rows(const Value<T>& x, std::size_t r0, std::size_t count) {
  const std::size_t m = x.val().rows(), n = x.val().cols();
  if (r0 + count > m)
    throw std::invalid_argument("slice_rows: [" + std::to_string(r0) + "," +
                                std::to_string(r0 + count) + ") exceeds rows " + std::to_string(m));
  Tensor<T> out(Shape{count, n});
  std::copy(x.val().data() + r0 * n, x.val().data() + (r0 + count) * n, out.data());
  return detail::emit(x.tape, std::move(out), [ix = x.id, m, n, r0, count](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> gx(Shape{m, n});
    std::copy(g.data(), g.data() + count * n, gx.data() + r0 * n);
    t.add_grad(ix, std::move(gx));
  });
}

template <typename T>
Value<T> concat_cols(const std::vector<Value<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const std::size_t m = parts[0].val().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.val().rows() != m)
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.val().shape()));
    total += p.val().cols();
  }
  Tensor<T> out(Shape{m, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.val().cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(p.val().data() + i * w, p.val().data() + (i + 1) * w, out.data() + i * total + off);
    off += w;
  }
  Tape<T>* tape = nullptr;
  std::vector<std::pair<int, std::size_t>> meta;  // (node id, width)
  for (const auto& p : parts) {
    if (p.tape) {
      if (tape && tape != p.tape) throw std::invalid_argument("concat_cols: mixed tapes");
      tape = p.tape;
    }
    meta.emplace_back(p.id, p.val().cols());
  }
  return detail::emit(tape, std::move(out), [meta, m, total](const Tensor<T>& g, Tape<T>& t) {
    std::size_t off = 0;
    for (const auto& [id, w] : meta) {
      if (id >= 0) {
        Tensor<T> gp(Shape{m, w});
        for (std::size_t i = 0; i < m; ++i)
          std::copy(g.data() + i * total + off, g.data() + i * total + off + w, gp.data() + i * w);
        t.add_grad(id, std::move(gp));
      }
      off += w;
    }
  });
}

template <typename T>
Value<T> concat_rows(const std::vector<Value<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  const std::size_t n = parts[0].val().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.val().cols() != n)
      throw std::invalid_argument("concat_rows: col mismatch " + shape_str(p.val().shape()));
    total += p.val().rows();
  }
  Tensor<T> out(Shape{total, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.val().data(), p.val().data() + p.val().numel(), out.data() + off * n);
    off += p.val().rows();
  }
  Tape<T>* tape = nullptr;
  std::vector<std::pair<int, std::size_t>> meta;  // (node id, rows)
  for (const auto& p : parts) {
    if (p.tape) {
      if (tape && tape != p.tape) throw std::invalid_argument("concat_rows: mixed tapes");
      tape = p.tape;
    }
    meta.emplace_back(p.id, p.val().rows());
  }
  return detail::emit(tape, std::move(out), [meta, n](const Tensor<T>& g, Tape<T>& t) {
    std::size_t off = 0;
    for (const auto& [id, r] : meta) {
      if (id >= 0) {
        Tensor<T> gp(Shape{r, n});
        std::copy(g.data() + off * n, g.data() + (off + r) * n, gp.data());
        t.add_grad(id, std::move(gp));
      }
      off += r;
    }
  });
}

// Selects rows by index; duplicate indices accumulate in the backward pass,
// which makes this double as the embedding-lookup primitive.
template <typename T>
Value<T> gather_rows(const Value<T>& x, const std::vector<std::size_t>& idx) {
  const std::size_t m = x.val().rows(), n = x.val().cols();
  Tensor<T> out(Shape{idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m)
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx[i]) +
                                  " out of range for " + std::to_string(m) + " rows");
    std::copy(x.val().data() + idx[i] * n, x.val().data() + (idx[i] + 1) * n, out.data() + i * n);
  }
  return detail::emit(x.tape, std::move(out), [ix = x.id, idx, m, n](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> gx(Shape{m, n});
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gx[idx[i] * n + j] += g[i * n + j];
    t.add_grad(ix, std::move(gx));
  });
}

template <typename T>
Value<T> embedding_lookup(const Value<T>& table, const std::vector<std::size_t>& idx) {
  return gather_rows(table, idx);
}

// Places row j of x at row idx[j] of an otherwise-zero (total_rows, n)
// output. Indices must be distinct.
template <typename T>
Value<T> scatter_rows(const Value<T>& x, const std::vector<std::size_t>& idx,
                      std::size_t total_rows) {
  const std::size_t r = x.val().rows(), n = x.val().cols();
  if (idx.size() != r)
    throw std::invalid_argument("scatter_rows: " + std::to_string(idx.size()) + " indices for " +
                                std::to_string(r) + " rows");
  Tensor<T> out(Shape{total_rows, n});
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] >= total_rows)
      throw std::invalid_argument("scatter_rows: index " + std::to_string(idx[i]) +
                                  " out of range for " + std::to_string(total_rows) + " rows");
    std::copy(x.val().data() + i * n, x.val().data() + (i + 1) * n, out.data() + idx[i] * n);
  }
  return detail::emit(x.tape, std::move(out), [ix = x.id, idx, n](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> gx(Shape{idx.size(), n});
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy(g.data() + idx[i] * n, g.data() + (idx[i] + 1) * n, gx.data() + i * n);
    t.add_grad(ix, std::move(gx));
  });
}

// Per-row column gather: out[i][j] = x[i][idx[i][j]].
template <typename T>
Value<T> row_gather(const Value<T>& x, const std::vector<std::vector<std::size_t>>& idx) {
  const std::size_t m = x.val().rows(), n = x.val().cols();
  if (idx.size() != m) throw std::invalid_argument("row_gather: index rows != input rows");
  const std::size_t k = idx.empty() ? 0 : idx[0].size();
  Tensor<T> out(Shape{m, k});
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i].size() != k) throw std::invalid_argument("row_gather: ragged index matrix");
    for (std::size_t j = 0; j < k; ++j) {
      if (idx[i][j] >= n) throw std::invalid_argument("row_gather: column index out of range");
      out[i * k + j] = x.val()[i * n + idx[i][j]];
    }
  }
  return detail::emit(x.tape, std::move(out), [ix = x.id, idx, m, n, k](const Tensor<T>& g, Tape<T>& t) {
    Tensor<T> gx(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gx[i * n + idx[i][j]] += g[i * k + j];
    t.add_grad(ix, std::move(gx));
  });
}

}  // namespace pidimt
