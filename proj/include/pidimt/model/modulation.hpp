#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/ops.hpp"
#include "pidimt/model/config.hpp"

namespace pidimt {

// scale/shift precondition a subpath's normalized input; gate multiplies its
// residual contribution. All three are (1, d) row vectors from one y.
template <typename T>
struct SubpathModulation {
  Value<T> scale, shift, gate;
};

// One linear map from the conditioning vector to scale/shift/gate for all
// five subpaths. Slices are keyed by SubpathKind in enum order, so the block
// application order never changes the parameter layout. Zero-initialized
// weights plus gate bias 0 make every residual branch the identity at init;
// scale bias starts at 1 and shift at 0.
template <typename T>
struct ModulationHead {
  static constexpr std::size_t kSubpaths = 5;
  std::size_t dim = 0;
  Linear<T> proj;  // d -> 15d

  void build(std::size_t d) {
    dim = d;
    proj.build(d, 3 * kSubpaths * d);
  }

  void init() {
    proj.zero_init();
    for (std::size_t s = 0; s < kSubpaths; ++s)
      for (std::size_t j = 0; j < dim; ++j) proj.b[3 * s * dim + j] = T(1);
  }

  void collect(ParamMap<T>& m, const std::string& p) { proj.collect(m, p + ".proj"); }

  std::array<SubpathModulation<T>, kSubpaths> operator()(Graph<T>& g, const Value<T>& y) const {
    if (y.val().rows() != 1 || y.val().cols() != dim)
      throw std::invalid_argument("modulation: conditioning vector must be (1, " +
                                  std::to_string(dim) + "), got " + shape_str(y.val().shape()));
    auto params = proj(g, y);  // (1, 15d)
    std::array<SubpathModulation<T>, kSubpaths> out;
    for (std::size_t s = 0; s < kSubpaths; ++s) {
      const std::size_t off = 3 * s * dim;
      out[s].scale = slice_cols(params, off, dim);
      out[s].shift = slice_cols(params, off + dim, dim);
      out[s].gate = slice_cols(params, off + 2 * dim, dim);
    }
    return out;
  }

  const SubpathModulation<T>& pick(const std::array<SubpathModulation<T>, kSubpaths>& all,
                                   SubpathKind kind) const {
    return all[static_cast<std::size_t>(kind)];
  }
};

}  // namespace pidimt
