#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pnpt/tensor.hpp"

namespace pnpt {

/// One synthetic product class: a procedural texture with class-specific
/// period, orientation, and palette, chosen so classes stay separable.
struct ClassRecipe {
  std::string name;
  std::string texture;  // checkerboard | stripes | dots | gradient
  int period = 16;
  double angle_deg = 0.0;
  std::array<double, 3> fg{1.0, 1.0, 1.0};
  std::array<double, 3> bg{0.0, 0.0, 0.0};
};

struct SynthSpec {
  int image_size = 128;
  int n_train = 20;
  int n_test_normal = 8;
  int n_test_anomalous = 8;
  std::uint64_t seed = 0;
  std::vector<ClassRecipe> classes;

  static std::vector<ClassRecipe> default_classes();
  static SynthSpec defaults();
  void validate() const;
};

/// Defect recipes cycled over the anomalous test images:
/// swap (foreign-texture rectangle), blotch (intensity shift ellipse),
/// cutout (texture replaced by plain background — the missing-element case).
const std::vector<std::string>& defect_types();

/// Writes the MVTec-style tree under out_root:
///   <class>/train/good/NNN.png, <class>/test/good/NNN.png,
///   <class>/test/<defect>/NNN.png, <class>/ground_truth/<defect>/NNN_mask.png
/// plus manifest.json. Fully determined by the spec (per-image streams are
/// derived from (seed, relative path)). Refuses a non-empty out_root unless
/// force is set.
nlohmann::json generate_dataset(const SynthSpec& spec, const std::string& out_root, bool force = false);

/// The defect-free twin of any generated image (identical jitter and noise,
/// no defect), 8-bit quantized, as a 3 x S x S tensor of k/255 values.
/// rel_path is the image path relative to out_root, as in the manifest.
Tensor render_defect_free(const SynthSpec& spec, int class_index, const std::string& rel_path);

}  // namespace pnpt
