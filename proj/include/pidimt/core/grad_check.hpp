#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pidimt/core/ops.hpp"
#include "pidimt/core/tape.hpp"
#include "pidimt/core/tensor.hpp"

namespace pidimt {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_coord = 0;
  std::string worst_label;
  double tol = 0.0;
  bool pass = false;
};

namespace detail {

inline double rel_err(double a, double b) {
  double denom = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

}  // namespace detail

// Compares the tape gradient of a scalar function against central finite
// differences (f(x+h) - f(x-h)) / 2h, coordinate by coordinate. The
// finite-difference side re-evaluates f on perturbed copies with gradients
// disabled, so it exercises none of the tape machinery it is checking.
// Relative error uses a unit floor: |a-b| / max(1, |a|, |b|).
inline GradCheckReport grad_check(
    const std::function<Value<double>(Graph<double>&, const Value<double>&)>& f,
    const Tensor<double>& x, double h = 1e-5, double tol = 1e-4,
    const std::vector<std::size_t>* coords = nullptr) {
  Graph<double> g(true);
  Value<double> vx = g.input(x);
  Value<double> y = f(g, vx);
  if (y.val().numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  g.backward(y);
  const Tensor<double>* gp = g.grad_of_value(vx);
  Tensor<double> tape_grad = gp ? *gp : Tensor<double>::zeros(x.shape());

  auto eval = [&](const Tensor<double>& xt) {
    Graph<double> ng(false);
    Value<double> v = ng.constant(xt);
    return f(ng, v).val().item();
  };

  GradCheckReport rep;
  rep.tol = tol;
  std::vector<std::size_t> all;
  if (!coords) {
    all.resize(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) all[i] = i;
    coords = &all;
  }
  for (std::size_t i : *coords) {
    Tensor<double> xp = x;
    Tensor<double> xm = x;
    xp[i] += h;
    xm[i] -= h;
    double fd = (eval(xp) - eval(xm)) / (2.0 * h);
    double err = detail::rel_err(tape_grad[i], fd);
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst_coord = i;
    }
    ++rep.coords_checked;
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

// Multi-tensor variant for whole-model checks: f reads each listed tensor
// through Graph::param, and the finite-difference side perturbs the tensors
// in place (restoring them afterwards). Only the listed coordinates of each
// tensor are probed.
struct ParamProbe {
  Tensor<double>* tensor = nullptr;
  std::string label;
  std::vector<std::size_t> coords;
};

inline GradCheckReport grad_check_params(const std::function<Value<double>(Graph<double>&)>& f,
                                         std::vector<ParamProbe>& probes, double h = 1e-5,
                                         double tol = 1e-4) {
  Graph<double> g(true);
  Value<double> y = f(g);
  if (y.val().numel() != 1)
    throw std::invalid_argument("grad_check_params: f must return a scalar");
  g.backward(y);

  auto eval = [&]() {
    Graph<double> ng(false);
    return f(ng).val().item();
  };

  GradCheckReport rep;
  rep.tol = tol;
  for (auto& probe : probes) {
    Tensor<double>& t = *probe.tensor;
    const Tensor<double>* gp = g.grad_of(t);
    for (std::size_t i : probe.coords) {
      double tape_g = gp ? (*gp)[i] : 0.0;
      double keep = t[i];
      t[i] = keep + h;
      double fp = eval();
      t[i] = keep - h;
      double fm = eval();
      t[i] = keep;
      double fd = (fp - fm) / (2.0 * h);
      double err = detail::rel_err(tape_g, fd);
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_coord = i;
        rep.worst_label = probe.label;
      }
      ++rep.coords_checked;
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace pidimt
