#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "pnpt/tensor.hpp"

namespace pnpt {

enum class Provenance { input, prior, reconstruction_prior, reconstruction_self, fused };

/// Multi-scale feature hierarchy: one C_i x H_i x W_i tensor per scale,
/// coarsest last.
struct MultiScaleFeatureSet {
  std::vector<Tensor> scales;
  Provenance provenance = Provenance::input;

  int num_scales() const { return static_cast<int>(scales.size()); }

  bool all_finite() const {
    for (const auto& s : scales)
      if (!s.all_finite()) return false;
    return true;
  }

  bool same_shapes(const MultiScaleFeatureSet& o) const {
    if (scales.size() != o.scales.size()) return false;
    for (std::size_t i = 0; i < scales.size(); ++i)
      if (!scales[i].same_shape(o.scales[i])) return false;
    return true;
  }
};

inline void require_same_shapes(const MultiScaleFeatureSet& a, const MultiScaleFeatureSet& b, const std::string& what) {
  if (!a.same_shapes(b)) throw std::invalid_argument(what + ": feature sets have mismatched shapes");
}

}  // namespace pnpt
