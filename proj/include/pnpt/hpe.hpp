#pragma once

#include <memory>
#include <vector>

#include "pnpt/features.hpp"
#include "pnpt/nn.hpp"

namespace pnpt {

/// Hierarchical patch embedding geometry. Patch sizes shrink with depth so
/// every scale yields the same G x G token grid; per-scale projections are
/// concatenated along the channel axis into C-dim tokens (or stacked along
/// the sequence axis when sequence_axis_concat is set).
struct HPEConfig {
  std::vector<int> scale_channels;  // C_i
  std::vector<int> scale_sizes;     // spatial side H_i (square maps)
  std::vector<int> patch_sizes;     // p_i, H_i / p_i == G for all i
  std::vector<int> per_scale_dims;  // d_i; channel mode: sum == hidden_dim
  int token_grid = 0;               // G
  int hidden_dim = 0;               // C
  double noise_std = 0.1;
  bool sequence_axis_concat = false;

  int num_scales() const { return static_cast<int>(scale_channels.size()); }
  int seq_len() const { return sequence_axis_concat ? num_scales() * token_grid * token_grid : token_grid * token_grid; }
  int patch_elems(int i) const {
    const int p = patch_sizes[static_cast<std::size_t>(i)];
    return p * p * scale_channels[static_cast<std::size_t>(i)];
  }
  void validate() const;
};

/// Derives the token grid and the as-equal-as-possible d_i split.
HPEConfig make_hpe_config(std::vector<int> scale_channels, std::vector<int> scale_sizes,
                          std::vector<int> patch_sizes, int hidden_dim, double noise_std,
                          bool sequence_axis_concat = false);

struct HPEParams {
  std::vector<LinearParams> proj_fwd;  // patch_elems(i) -> d_i (or C)
  std::vector<LinearParams> proj_inv;  // d_i (or C) -> patch_elems(i)
  Parameter* pos = nullptr;            // seq_len x C, zero-initialized
};

HPEParams make_hpe_params(ParameterStore& ps, const HPEConfig& cfg, Rng& rng);

/// Precomputed gather index maps between feature planes and patch matrices.
struct HPEPlan {
  std::vector<std::shared_ptr<const std::vector<std::int64_t>>> fwd_maps;  // feature -> (G^2, p^2 C_i)
  std::vector<std::shared_ptr<const std::vector<std::int64_t>>> inv_maps;  // patch matrix -> (C_i, H_i^2)
};

HPEPlan make_hpe_plan(const HPEConfig& cfg);

/// Features (one Var per scale, any shape with C_i * H_i * W_i elements) to a
/// seq_len x C token sequence: patchify, project, concatenate, add positional
/// embedding, and in training mode add N(0, noise_std^2) noise.
Var hpe_forward(Tape& t, const std::vector<Var>& feature_scales, const HPEParams& params,
                const HPEConfig& cfg, const HPEPlan& plan, bool training, Rng* noise_rng);

/// Symmetric inverse: tokens back to per-scale features of shape
/// (C_i, H_i * W_i). No noise, no positional term.
std::vector<Var> hpe_inverse(Tape& t, Var tokens, const HPEParams& params,
                             const HPEConfig& cfg, const HPEPlan& plan);

}  // namespace pnpt
