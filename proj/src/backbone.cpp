#include "pnpt/backbone.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pnpt/archive.hpp"
#include "pnpt/rng.hpp"

namespace pnpt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

constexpr double kMean[3] = {0.485, 0.456, 0.406};
constexpr double kStd[3] = {0.229, 0.224, 0.225};

int log2_exact(int v) {
  int p = 0;
  while ((1 << p) < v) ++p;
  if ((1 << p) != v) throw std::invalid_argument("backbone strides must be powers of two, got " + std::to_string(v));
  return p;
}

// 3x3 stride-2 pad-1 convolution via im2col + GEMM, followed by ReLU.
Tensor conv3x3_s2_relu(const Tensor& in, const Tensor& weight, const Tensor& bias) {
  const int ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const int co = weight.dim(0);
  const int ho = (h + 2 - 3) / 2 + 1, wo = (w + 2 - 3) / 2 + 1;
  const std::int64_t cols = static_cast<std::int64_t>(ho) * wo;
  Tensor patches({ci * 9, static_cast<int>(cols)});
  for (int c = 0; c < ci; ++c) {
    const double* plane = in.data() + static_cast<std::int64_t>(c) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = patches.data() + (static_cast<std::int64_t>(c) * 9 + ky * 3 + kx) * cols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * 2 + ky - 1;
          if (iy < 0 || iy >= h) continue;  // row stays zero (padding)
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * 2 + kx - 1;
            if (ix >= 0 && ix < w) row[static_cast<std::int64_t>(oy) * wo + ox] = plane[static_cast<std::int64_t>(iy) * w + ix];
          }
        }
      }
    }
  }
  Tensor out({co, ho, wo});
  CMapMat wm(weight.data(), co, ci * 9);
  CMapMat pm(patches.data(), ci * 9, cols);
  MapMat om(out.data(), co, cols);
  om.noalias() = wm * pm;
  for (int o = 0; o < co; ++o) {
    double* row = out.data() + static_cast<std::int64_t>(o) * cols;
    const double b = bias[o];
    for (std::int64_t i = 0; i < cols; ++i) row[i] = std::max(row[i] + b, 0.0);
  }
  return out;
}

}  // namespace

void BackboneSpec::validate() const {
  if (scale_channels.empty() || scale_channels.size() != scale_strides.size()) {
    throw std::invalid_argument("backbone spec: scale_channels and scale_strides must be non-empty and equal length");
  }
  int prev = 0;
  for (std::size_t i = 0; i < scale_strides.size(); ++i) {
    const int s = scale_strides[i];
    if (s <= prev) throw std::invalid_argument("backbone spec: scale_strides must be strictly increasing");
    log2_exact(s);
    if (input_size % s != 0) {
      throw std::invalid_argument("backbone spec: input_size " + std::to_string(input_size) + " not divisible by stride " + std::to_string(s));
    }
    if (scale_channels[i] <= 0) throw std::invalid_argument("backbone spec: channel counts must be positive");
    prev = s;
  }
  if (input_size <= 0) throw std::invalid_argument("backbone spec: input_size must be positive");
}

BackboneSpec tiny_backbone_spec(int input_size, std::uint64_t seed) {
  return BackboneSpec{"tiny", input_size, {16, 32, 64}, {4, 8, 16}, "", seed};
}

BackboneSpec wide_backbone_spec(int input_size, std::uint64_t seed) {
  return BackboneSpec{"wide-residual-50-style", input_size, {256, 512, 1024}, {4, 8, 16}, "", seed};
}

BackboneSpec backbone_spec_by_name(const std::string& name, int input_size, std::uint64_t seed) {
  if (name == "tiny") return tiny_backbone_spec(input_size, seed);
  if (name == "wide-residual-50-style") return wide_backbone_spec(input_size, seed);
  throw std::invalid_argument("unknown backbone '" + name + "' (expected 'tiny' or 'wide-residual-50-style')");
}

Backbone load_backbone(const BackboneSpec& spec) {
  spec.validate();
  Backbone bb;
  bb.spec_ = spec;

  // Layer k (1-based) downsamples to stride 2^k; its width is the channel
  // count of the nearest tap at or above that stride, and it emits scale i
  // when 2^k == scale_strides[i].
  const int n_layers = log2_exact(spec.scale_strides.back());
  int prev_width = 3;
  for (int k = 1; k <= n_layers; ++k) {
    const int stride = 1 << k;
    int width = spec.scale_channels.back(), tap = -1;
    for (int i = 0; i < spec.num_scales(); ++i) {
      if (spec.scale_strides[static_cast<std::size_t>(i)] >= stride) {
        width = spec.scale_channels[static_cast<std::size_t>(i)];
        if (spec.scale_strides[static_cast<std::size_t>(i)] == stride) tap = i;
        break;
      }
    }
    Backbone::ConvLayer layer;
    layer.weight = Tensor({width, prev_width, 3, 3});
    layer.bias = Tensor({width});
    layer.tap = tap;
    bb.layers_.push_back(std::move(layer));
    prev_width = width;
  }

  if (!spec.weights_path.empty()) {
    TensorArchive arch = TensorArchive::load(spec.weights_path);
    for (std::size_t k = 0; k < bb.layers_.size(); ++k) {
      for (const char* part : {"weight", "bias"}) {
        const std::string name = "conv" + std::to_string(k + 1) + "." + part;
        if (!arch.has(name)) throw std::runtime_error("backbone load error: missing tensor " + name + " in " + spec.weights_path);
        const Tensor& t = arch.get(name);
        Tensor& dst = std::string(part) == "weight" ? bb.layers_[k].weight : bb.layers_[k].bias;
        if (t.shape() != dst.shape()) {
          throw std::runtime_error("backbone load error: tensor " + name + " has shape " + shape_str(t.shape()) + ", spec requires " + shape_str(dst.shape()));
        }
        dst = t;
      }
    }
  } else {
    // He-normal init keeps activation magnitude stable through the ReLU chain.
    Rng rng(derive_seed(spec.seed, "backbone." + spec.name));
    for (auto& layer : bb.layers_) {
      const int fan_in = layer.weight.dim(1) * 9;
      const double std = std::sqrt(2.0 / fan_in);
      for (std::int64_t i = 0; i < layer.weight.numel(); ++i) layer.weight[i] = rng.normal(0.0, std);
    }
  }
  return bb;
}

MultiScaleFeatureSet Backbone::extract_features(const Tensor& image) const {
  if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) != spec_.input_size || image.dim(2) != spec_.input_size) {
    throw std::invalid_argument("extract_features: expected image of shape [3, " + std::to_string(spec_.input_size) + ", " + std::to_string(spec_.input_size) + "], got " + shape_str(image.shape()));
  }
  Tensor x = image;
  const std::int64_t plane = static_cast<std::int64_t>(spec_.input_size) * spec_.input_size;
  for (int c = 0; c < 3; ++c) {
    double* p = x.data() + c * plane;
    for (std::int64_t i = 0; i < plane; ++i) p[i] = (p[i] - kMean[c]) / kStd[c];
  }
  MultiScaleFeatureSet out;
  out.provenance = Provenance::input;
  out.scales.resize(static_cast<std::size_t>(spec_.num_scales()));
  for (const auto& layer : layers_) {
    x = conv3x3_s2_relu(x, layer.weight, layer.bias);
    if (layer.tap >= 0) out.scales[static_cast<std::size_t>(layer.tap)] = x;
  }
  return out;
}

void Backbone::save_weights(const std::string& path) const {
  TensorArchive arch;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    arch.add("conv" + std::to_string(k + 1) + ".weight", layers_[k].weight);
    arch.add("conv" + std::to_string(k + 1) + ".bias", layers_[k].bias);
  }
  arch.meta()["kind"] = "backbone";
  arch.meta()["backbone"] = spec_.name;
  arch.save(path);
}

std::string Backbone::fingerprint() const {
  std::ostringstream canon;
  canon << spec_.name << '|' << spec_.input_size;
  for (int c : spec_.scale_channels) canon << '|' << c;
  for (int s : spec_.scale_strides) canon << '|' << s;
  std::uint64_t h = fnv1a64(canon.str());
  for (const auto& layer : layers_) {
    for (const Tensor* t : {&layer.weight, &layer.bias}) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(t->data());
      for (std::int64_t i = 0; i < t->numel() * 8; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
  }
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

}  // namespace pnpt
