#include "pnpt/objective.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pnpt/archive.hpp"
#include "pnpt/image.hpp"

namespace pnpt {

void FusionWeights::validate() const {
  if (w_prior < 0.0 || w_self < 0.0 || std::abs(w_prior + w_self - 1.0) > 1e-9) {
    throw std::invalid_argument("fusion weights must be non-negative and sum to 1");
  }
}

ScoreReduction score_reduction_from_string(const std::string& s) {
  if (s == "max") return ScoreReduction::max;
  if (s == "mean_top_k") return ScoreReduction::mean_top_k;
  throw std::invalid_argument("unknown score reduction '" + s + "' (expected 'max' or 'mean_top_k')");
}

std::string to_string(ScoreReduction r) { return r == ScoreReduction::max ? "max" : "mean_top_k"; }

Var cosine_distance_flat(Tape& t, Var a, Var b, double eps) {
  Var dot = t.sum(t.mul(a, b));
  Var na = t.add_scalar(t.sqrt_elem(t.sum(t.mul(a, a))), eps);
  Var nb = t.add_scalar(t.sqrt_elem(t.sum(t.mul(b, b))), eps);
  Var cos = t.div(dot, t.mul(na, nb));
  return t.add_scalar(t.scale(cos, -1.0), 1.0);
}

double cosine_distance_value(const Tensor& a, const Tensor& b, double eps) {
  if (a.numel() != b.numel()) throw std::invalid_argument("cosine distance: element count mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / ((std::sqrt(na) + eps) * (std::sqrt(nb) + eps));
}

Var reconstruction_loss_tape(Tape& t, const std::vector<Var>& input_scales,
                             const std::vector<Var>& recon_prior,
                             const std::vector<Var>& recon_self) {
  if (recon_self.size() != input_scales.size() || (!recon_prior.empty() && recon_prior.size() != input_scales.size())) {
    throw std::invalid_argument("reconstruction loss: scale count mismatch");
  }
  Var loss;
  auto branch = [&](const std::vector<Var>& recon) {
    for (std::size_t i = 0; i < input_scales.size(); ++i) {
      Var term = cosine_distance_flat(t, input_scales[i], recon[i]);
      loss = loss.valid() ? t.add(loss, term) : term;
    }
  };
  if (!recon_prior.empty()) branch(recon_prior);
  branch(recon_self);
  return loss;
}

double reconstruction_loss_value(const MultiScaleFeatureSet& input,
                                 const MultiScaleFeatureSet* recon_prior,
                                 const MultiScaleFeatureSet& recon_self) {
  require_same_shapes(input, recon_self, "reconstruction loss");
  double loss = 0.0;
  if (recon_prior) {
    require_same_shapes(input, *recon_prior, "reconstruction loss");
    for (std::size_t i = 0; i < input.scales.size(); ++i) loss += cosine_distance_value(input.scales[i], recon_prior->scales[i]);
  }
  for (std::size_t i = 0; i < input.scales.size(); ++i) loss += cosine_distance_value(input.scales[i], recon_self.scales[i]);
  return loss;
}

MultiScaleFeatureSet fuse_reconstructions(const MultiScaleFeatureSet& recon_prior,
                                          const MultiScaleFeatureSet& recon_self,
                                          const FusionWeights& w) {
  w.validate();
  require_same_shapes(recon_prior, recon_self, "fuse_reconstructions");
  MultiScaleFeatureSet out;
  out.provenance = Provenance::fused;
  for (std::size_t i = 0; i < recon_prior.scales.size(); ++i) {
    Tensor s = recon_prior.scales[i];
    const Tensor& b = recon_self.scales[i];
    for (std::int64_t j = 0; j < s.numel(); ++j) s[j] = w.w_prior * s[j] + w.w_self * b[j];
    out.scales.push_back(std::move(s));
  }
  return out;
}

AnomalyResult anomaly_score(const MultiScaleFeatureSet& input, const MultiScaleFeatureSet& fused,
                            int out_size, const ScoreConfig& cfg) {
  require_same_shapes(input, fused, "anomaly_score");
  if (out_size <= 0) throw std::invalid_argument("anomaly_score: output size must be positive");
  AnomalyResult result;
  result.pixel_map = Tensor({out_size, out_size});
  for (std::size_t s = 0; s < input.scales.size(); ++s) {
    const Tensor& a = input.scales[s];
    const Tensor& b = fused.scales[s];
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor map({h, w});
    for (std::int64_t p = 0; p < plane; ++p) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double av = a[ch * plane + p], bv = b[ch * plane + p];
        dot += av * bv;
        na += av * av;
        nb += bv * bv;
      }
      map[p] = 1.0 - dot / ((std::sqrt(na) + kCosineEps) * (std::sqrt(nb) + kCosineEps));
    }
    Tensor up = resize_map_bilinear(map, out_size, out_size);
    for (std::int64_t i = 0; i < result.pixel_map.numel(); ++i) result.pixel_map[i] += up[i];
    result.per_scale_maps.push_back(std::move(map));
  }
  Tensor smoothed = gaussian_blur(result.pixel_map, cfg.smooth_sigma);
  if (cfg.reduction == ScoreReduction::max) {
    result.image_score = *std::max_element(smoothed.data(), smoothed.data() + smoothed.numel());
  } else {
    std::vector<double> vals(smoothed.data(), smoothed.data() + smoothed.numel());
    const std::int64_t k = std::max<std::int64_t>(1, std::llround(cfg.top_k_frac * static_cast<double>(vals.size())));
    std::partial_sort(vals.begin(), vals.begin() + k, vals.end(), std::greater<double>());
    double sum = 0.0;
    for (std::int64_t i = 0; i < k; ++i) sum += vals[static_cast<std::size_t>(i)];
    result.image_score = sum / static_cast<double>(k);
  }
  return result;
}

void save_anomaly_result(const AnomalyResult& result, const std::string& prefix,
                         const std::string& retrieved_class) {
  const double hi = 2.0 * static_cast<double>(std::max<std::size_t>(result.per_scale_maps.size(), 1));
  save_image_gray16(result.pixel_map, prefix + "_map.png", 0.0, hi);
  TensorArchive raw;
  raw.add("pixel_map", result.pixel_map);
  for (std::size_t i = 0; i < result.per_scale_maps.size(); ++i) raw.add("scale/" + std::to_string(i), result.per_scale_maps[i]);
  raw.meta()["kind"] = "anomaly_result";
  raw.meta()["image_score"] = result.image_score;
  raw.save(prefix + "_raw.pnpt");
  nlohmann::json rec{{"image_score", result.image_score}, {"class_id_retrieved", retrieved_class}};
  std::ofstream out(prefix + ".json");
  if (!out) throw std::runtime_error("cannot write " + prefix + ".json");
  out << rec.dump(2) << '\n';
}

}  // namespace pnpt
