#pragma once

#include <string>
#include <vector>

#include "pnpt/autograd.hpp"
#include "pnpt/features.hpp"

namespace pnpt {

struct FusionWeights {
  double w_prior = 0.5;
  double w_self = 0.5;
  void validate() const;
};

enum class ScoreReduction { max, mean_top_k };

ScoreReduction score_reduction_from_string(const std::string& s);
std::string to_string(ScoreReduction r);

struct ScoreConfig {
  double smooth_sigma = 4.0;  // pixels, for the image-level reduction only
  ScoreReduction reduction = ScoreReduction::max;
  double top_k_frac = 0.01;   // mean_top_k: fraction of pixels averaged
};

struct AnomalyResult {
  Tensor pixel_map;    // S x S, sum over scales of upsampled cosine distance
  double image_score = 0.0;
  std::vector<Tensor> per_scale_maps;  // native resolutions, pre-upsampling
};

constexpr double kCosineEps = 1e-8;

/// 1 - <a,b> / ((||a|| + eps)(||b|| + eps)) over flattened tensors.
Var cosine_distance_flat(Tape& t, Var a, Var b, double eps = kCosineEps);
double cosine_distance_value(const Tensor& a, const Tensor& b, double eps = kCosineEps);

/// l_rec = sum over branches of sum over scales of (1 - cos(vec F_input,
/// vec F*)). recon_prior may be empty (single-stream ablation).
Var reconstruction_loss_tape(Tape& t, const std::vector<Var>& input_scales,
                             const std::vector<Var>& recon_prior,
                             const std::vector<Var>& recon_self);

double reconstruction_loss_value(const MultiScaleFeatureSet& input,
                                 const MultiScaleFeatureSet* recon_prior,
                                 const MultiScaleFeatureSet& recon_self);

/// Element-wise w_prior * F*_prior + w_self * F*_self per scale.
MultiScaleFeatureSet fuse_reconstructions(const MultiScaleFeatureSet& recon_prior,
                                          const MultiScaleFeatureSet& recon_self,
                                          const FusionWeights& w);

/// Per scale, per location: cosine distance along the channel axis; each map
/// is bilinearly upsampled to out_size and the scales are summed. The image
/// score reduces a Gaussian-smoothed copy of the pixel map.
AnomalyResult anomaly_score(const MultiScaleFeatureSet& input, const MultiScaleFeatureSet& fused,
                            int out_size, const ScoreConfig& cfg = {});

/// Writes <prefix>_map.png (16-bit, affine rule u16 = round(v / (2 * H) *
/// 65535)), <prefix>_raw.pnpt (lossless archive), and <prefix>.json
/// ({image_score, class_id_retrieved}).
void save_anomaly_result(const AnomalyResult& result, const std::string& prefix,
                         const std::string& retrieved_class);

}  // namespace pnpt
