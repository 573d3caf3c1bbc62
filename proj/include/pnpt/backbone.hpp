#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnpt/features.hpp"
#include "pnpt/tensor.hpp"

namespace pnpt {

/// Describes the frozen convolutional extractor: per-scale channel counts and
/// strides (strictly increasing powers of two), input size, and either a
/// weights file or a deterministic random init seed.
struct BackboneSpec {
  std::string name;
  int input_size = 256;
  std::vector<int> scale_channels;
  std::vector<int> scale_strides;
  std::string weights_path;  // empty -> random init from seed
  std::uint64_t seed = 0;

  int num_scales() const { return static_cast<int>(scale_channels.size()); }
  void validate() const;
};

/// Built-in specs: "tiny" (16/32/64 at strides 4/8/16) for desk-scale runs and
/// "wide-residual-50-style" (256/512/1024 at strides 4/8/16).
BackboneSpec tiny_backbone_spec(int input_size = 256, std::uint64_t seed = 0);
BackboneSpec wide_backbone_spec(int input_size = 256, std::uint64_t seed = 0);
BackboneSpec backbone_spec_by_name(const std::string& name, int input_size, std::uint64_t seed);

/// Frozen conv pyramid: a chain of stride-2 3x3 conv + ReLU layers with taps
/// at the requested strides. Immutable after construction.
class Backbone {
 public:
  const BackboneSpec& spec() const { return spec_; }

  /// image: 3 x S x S in [0,1]; applies the fixed per-channel normalization
  /// then the conv chain. Pure function of (weights, image).
  MultiScaleFeatureSet extract_features(const Tensor& image) const;

  /// Spatial side of scale i: input_size / scale_strides[i].
  int scale_size(int i) const { return spec_.input_size / spec_.scale_strides[static_cast<std::size_t>(i)]; }

  void save_weights(const std::string& path) const;

  /// Hash over the spec and every weight byte; pools record it so a pool is
  /// only ever queried against the extractor that built it.
  std::string fingerprint() const;

  friend Backbone load_backbone(const BackboneSpec& spec);

 private:
  struct ConvLayer {
    Tensor weight;  // out x in x 3 x 3
    Tensor bias;    // out
    int tap = -1;   // scale index emitted after this layer, -1 for none
  };

  BackboneSpec spec_;
  std::vector<ConvLayer> layers_;
};

Backbone load_backbone(const BackboneSpec& spec);

}  // namespace pnpt
