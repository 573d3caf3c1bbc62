#include "pnpt/hpe.hpp"

#include <stdexcept>
#include <string>

namespace pnpt {

void HPEConfig::validate() const {
  const int h = num_scales();
  if (h == 0) throw std::invalid_argument("hpe: no scales");
  if (static_cast<int>(scale_sizes.size()) != h || static_cast<int>(patch_sizes.size()) != h || static_cast<int>(per_scale_dims.size()) != h) {
    throw std::invalid_argument("hpe: per-scale field lengths disagree");
  }
  if (hidden_dim <= 0 || token_grid <= 0) throw std::invalid_argument("hpe: hidden_dim and token_grid must be positive");
  if (noise_std < 0.0) throw std::invalid_argument("hpe: noise_std must be >= 0");
  int dim_sum = 0;
  for (int i = 0; i < h; ++i) {
    const int size = scale_sizes[static_cast<std::size_t>(i)], p = patch_sizes[static_cast<std::size_t>(i)];
    if (p <= 0 || size % p != 0) {
      throw std::invalid_argument("hpe: scale " + std::to_string(i) + " spatial size " + std::to_string(size) + " not divisible by patch size " + std::to_string(p));
    }
    if (size / p != token_grid) {
      throw std::invalid_argument("hpe: scale " + std::to_string(i) + " yields token grid " + std::to_string(size / p) + ", expected uniform grid " + std::to_string(token_grid));
    }
    dim_sum += per_scale_dims[static_cast<std::size_t>(i)];
  }
  if (sequence_axis_concat) {
    for (int d : per_scale_dims)
      if (d != hidden_dim) throw std::invalid_argument("hpe: sequence-axis mode requires every per-scale dim == hidden_dim");
  } else if (dim_sum != hidden_dim) {
    throw std::invalid_argument("hpe: per-scale dims sum to " + std::to_string(dim_sum) + ", expected hidden_dim " + std::to_string(hidden_dim));
  }
}

HPEConfig make_hpe_config(std::vector<int> scale_channels, std::vector<int> scale_sizes,
                          std::vector<int> patch_sizes, int hidden_dim, double noise_std,
                          bool sequence_axis_concat) {
  HPEConfig cfg;
  cfg.scale_channels = std::move(scale_channels);
  cfg.scale_sizes = std::move(scale_sizes);
  cfg.patch_sizes = std::move(patch_sizes);
  cfg.hidden_dim = hidden_dim;
  cfg.noise_std = noise_std;
  cfg.sequence_axis_concat = sequence_axis_concat;
  const int h = cfg.num_scales();
  if (h == 0 || static_cast<int>(cfg.scale_sizes.size()) != h || static_cast<int>(cfg.patch_sizes.size()) != h) {
    throw std::invalid_argument("hpe: scale_channels/scale_sizes/patch_sizes must be non-empty and equal length");
  }
  if (cfg.patch_sizes[0] <= 0 || cfg.scale_sizes[0] % cfg.patch_sizes[0] != 0) {
    throw std::invalid_argument("hpe: scale 0 spatial size " + std::to_string(cfg.scale_sizes[0]) + " not divisible by patch size " + std::to_string(cfg.patch_sizes[0]));
  }
  cfg.token_grid = cfg.scale_sizes[0] / cfg.patch_sizes[0];
  if (sequence_axis_concat) {
    cfg.per_scale_dims.assign(static_cast<std::size_t>(h), hidden_dim);
  } else {
    // As equal as possible; earlier scales take the remainder.
    const int q = hidden_dim / h, r = hidden_dim % h;
    for (int i = 0; i < h; ++i) cfg.per_scale_dims.push_back(q + (i < r ? 1 : 0));
  }
  cfg.validate();
  return cfg;
}

HPEParams make_hpe_params(ParameterStore& ps, const HPEConfig& cfg, Rng& rng) {
  cfg.validate();
  HPEParams params;
  for (int i = 0; i < cfg.num_scales(); ++i) {
    params.proj_fwd.push_back(make_linear(ps, "hpe.proj_fwd." + std::to_string(i), cfg.patch_elems(i), cfg.per_scale_dims[static_cast<std::size_t>(i)], rng));
    params.proj_inv.push_back(make_linear(ps, "hpe.proj_inv." + std::to_string(i), cfg.per_scale_dims[static_cast<std::size_t>(i)], cfg.patch_elems(i), rng));
  }
  params.pos = &ps.create("hpe.pos", {cfg.seq_len(), cfg.hidden_dim}, /*decay=*/false);
  return params;
}

HPEPlan make_hpe_plan(const HPEConfig& cfg) {
  cfg.validate();
  HPEPlan plan;
  const int g = cfg.token_grid;
  for (int i = 0; i < cfg.num_scales(); ++i) {
    const int c = cfg.scale_channels[static_cast<std::size_t>(i)];
    const int size = cfg.scale_sizes[static_cast<std::size_t>(i)];
    const int p = cfg.patch_sizes[static_cast<std::size_t>(i)];
    const int pe = cfg.patch_elems(i);
    // Patch flattening order is channel-major: element j = (ch * p + dy) * p + dx.
    auto fwd = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(g) * g * pe);
    for (int gy = 0; gy < g; ++gy) {
      for (int gx = 0; gx < g; ++gx) {
        const std::int64_t token = static_cast<std::int64_t>(gy) * g + gx;
        for (int ch = 0; ch < c; ++ch) {
          for (int dy = 0; dy < p; ++dy) {
            for (int dx = 0; dx < p; ++dx) {
              const std::int64_t j = (static_cast<std::int64_t>(ch) * p + dy) * p + dx;
              (*fwd)[static_cast<std::size_t>(token * pe + j)] =
                  (static_cast<std::int64_t>(ch) * size + gy * p + dy) * size + gx * p + dx;
            }
          }
        }
      }
    }
    auto inv = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(c) * size * size);
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const std::int64_t token = static_cast<std::int64_t>(y / p) * g + x / p;
          const std::int64_t j = (static_cast<std::int64_t>(ch) * p + y % p) * p + x % p;
          (*inv)[static_cast<std::size_t>((static_cast<std::int64_t>(ch) * size + y) * size + x)] = token * pe + j;
        }
      }
    }
    plan.fwd_maps.push_back(std::move(fwd));
    plan.inv_maps.push_back(std::move(inv));
  }
  return plan;
}

Var hpe_forward(Tape& t, const std::vector<Var>& feature_scales, const HPEParams& params,
                const HPEConfig& cfg, const HPEPlan& plan, bool training, Rng* noise_rng) {
  if (static_cast<int>(feature_scales.size()) != cfg.num_scales()) {
    throw std::invalid_argument("hpe_forward: got " + std::to_string(feature_scales.size()) + " scales, config has " + std::to_string(cfg.num_scales()));
  }
  const int l_scale = cfg.token_grid * cfg.token_grid;
  std::vector<Var> projected;
  for (int i = 0; i < cfg.num_scales(); ++i) {
    const std::int64_t expect = static_cast<std::int64_t>(cfg.scale_channels[static_cast<std::size_t>(i)]) * cfg.scale_sizes[static_cast<std::size_t>(i)] * cfg.scale_sizes[static_cast<std::size_t>(i)];
    if (t.value(feature_scales[static_cast<std::size_t>(i)]).numel() != expect) {
      throw std::invalid_argument("hpe_forward: scale " + std::to_string(i) + " has wrong element count");
    }
    Var patches = t.gather(feature_scales[static_cast<std::size_t>(i)], plan.fwd_maps[static_cast<std::size_t>(i)], {l_scale, cfg.patch_elems(i)});
    projected.push_back(linear(t, patches, params.proj_fwd[static_cast<std::size_t>(i)]));
  }
  Var tokens = projected.size() == 1 ? projected[0]
               : cfg.sequence_axis_concat ? t.concat_rows(projected)
                                          : t.concat_cols(projected);
  tokens = t.add(tokens, t.param(*params.pos));
  if (training && cfg.noise_std > 0.0) {
    if (!noise_rng) throw std::invalid_argument("hpe_forward: training with noise requires an rng");
    Tensor noise({cfg.seq_len(), cfg.hidden_dim});
    for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = noise_rng->normal(0.0, cfg.noise_std);
    tokens = t.add(tokens, t.constant(std::move(noise)));
  }
  return tokens;
}

std::vector<Var> hpe_inverse(Tape& t, Var tokens, const HPEParams& params,
                             const HPEConfig& cfg, const HPEPlan& plan) {
  const auto& shape = t.value(tokens).shape();
  if (shape.size() != 2 || shape[0] != cfg.seq_len() || shape[1] != cfg.hidden_dim) {
    throw std::invalid_argument("hpe_inverse: tokens shaped " + shape_str(shape) + ", expected [" + std::to_string(cfg.seq_len()) + ", " + std::to_string(cfg.hidden_dim) + "]");
  }
  const int l_scale = cfg.token_grid * cfg.token_grid;
  std::vector<Var> out;
  int col = 0;
  for (int i = 0; i < cfg.num_scales(); ++i) {
    const int d = cfg.per_scale_dims[static_cast<std::size_t>(i)];
    Var slab = cfg.sequence_axis_concat ? t.slice_rows(tokens, i * l_scale, (i + 1) * l_scale)
                                        : t.slice_cols(tokens, col, col + d);
    col += d;
    Var patches = linear(t, slab, params.proj_inv[static_cast<std::size_t>(i)]);
    const int c = cfg.scale_channels[static_cast<std::size_t>(i)];
    const int size = cfg.scale_sizes[static_cast<std::size_t>(i)];
    out.push_back(t.gather(patches, plan.inv_maps[static_cast<std::size_t>(i)], {c, size * size}));
  }
  return out;
}

}  // namespace pnpt
