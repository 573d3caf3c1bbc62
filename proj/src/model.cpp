#include "pnpt/model.hpp"

#include <stdexcept>

namespace pnpt {

SaceOut sace_aggregate(Tape& t, Var patch_tokens, std::optional<Var> semantic_tokens,
                       const SaceParams& p, std::vector<Tensor>* attn_trace) {
  const int l = t.value(patch_tokens).dim(0);
  Var joint = semantic_tokens ? t.concat_rows({patch_tokens, *semantic_tokens}) : patch_tokens;
  Var z = layer_norm(t, t.add(attention(t, joint, joint, p.sam, attn_trace), joint), p.ln1);
  Var r = layer_norm(t, t.add(feed_forward(t, z, p.fp), z), p.ln2);
  SaceOut out;
  if (semantic_tokens) {
    const int n = t.value(*semantic_tokens).dim(0);
    out.patch = t.slice_rows(r, 0, l);
    out.semantic = t.slice_rows(r, l, l + n);
  } else {
    out.patch = r;
  }
  return out;
}

Var semantic_alignment_fusion(Tape& t, Var rs_prior, Var rs_self, const FusionParams& p,
                              std::vector<Tensor>* attn_trace) {
  Var coupled = layer_norm(t, t.add(attention(t, rs_prior, rs_self, p.cam1, attn_trace), rs_prior), p.ln1);
  Var z = layer_norm(t, t.add(attention(t, rs_self, coupled, p.cam2, attn_trace), rs_self), p.ln2);
  return layer_norm(t, t.add(feed_forward(t, z, p.fp), z), p.ln3);
}

Var fusion_single_stream(Tape& t, Var rs_self, const FusionParams& p) {
  return layer_norm(t, t.add(feed_forward(t, rs_self, p.fp), rs_self), p.ln3);
}

Var cscd_decode(Tape& t, Var r_patch, Var fused, const CscdParams& p, std::vector<Tensor>* attn_trace) {
  Var z = layer_norm(t, t.add(attention(t, r_patch, fused, p.cam, attn_trace), r_patch), p.ln1);
  return layer_norm(t, t.add(feed_forward(t, z, p.fp), z), p.ln2);
}

Tensor init_semantic_tokens(int n, int c, std::uint64_t seed) {
  if (n <= 0 || c <= 0) throw std::invalid_argument("init_semantic_tokens: N and C must be positive");
  Rng rng(derive_seed(seed, "semantic"));
  Tensor t({n, c});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, 0.02);
  return t;
}

namespace {

SaceParams make_sace(ParameterStore& ps, const std::string& prefix, const AttentionConfig& a, Rng& rng) {
  SaceParams p;
  p.sam = make_attention(ps, prefix + ".sam", a.hidden_dim, a.heads, rng);
  p.ln1 = make_layer_norm(ps, prefix + ".ln1", a.hidden_dim);
  p.fp = make_feed_forward(ps, prefix + ".fp", a.hidden_dim, a.ff_expansion, rng);
  p.ln2 = make_layer_norm(ps, prefix + ".ln2", a.hidden_dim);
  return p;
}

FusionParams make_fusion(ParameterStore& ps, const std::string& prefix, const AttentionConfig& a, Rng& rng, bool dual) {
  FusionParams p;
  if (dual) {
    p.cam1 = make_attention(ps, prefix + ".cam1", a.hidden_dim, a.heads, rng);
    p.ln1 = make_layer_norm(ps, prefix + ".ln1", a.hidden_dim);
    p.cam2 = make_attention(ps, prefix + ".cam2", a.hidden_dim, a.heads, rng);
    p.ln2 = make_layer_norm(ps, prefix + ".ln2", a.hidden_dim);
  }
  p.fp = make_feed_forward(ps, prefix + ".fp", a.hidden_dim, a.ff_expansion, rng);
  p.ln3 = make_layer_norm(ps, prefix + ".ln3", a.hidden_dim);
  return p;
}

CscdParams make_cscd(ParameterStore& ps, const std::string& prefix, const AttentionConfig& a, Rng& rng) {
  CscdParams p;
  p.cam = make_attention(ps, prefix + ".cam", a.hidden_dim, a.heads, rng);
  p.ln1 = make_layer_norm(ps, prefix + ".ln1", a.hidden_dim);
  p.fp = make_feed_forward(ps, prefix + ".fp", a.hidden_dim, a.ff_expansion, rng);
  p.ln2 = make_layer_norm(ps, prefix + ".ln2", a.hidden_dim);
  return p;
}

}  // namespace

PNPTModel::PNPTModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.hpe.validate();
  if (cfg_.attn.hidden_dim != cfg_.hpe.hidden_dim) throw std::invalid_argument("model: attention hidden_dim must equal HPE hidden_dim");
  if (cfg_.attn.blocks < 0) throw std::invalid_argument("model: block count must be >= 0");
  if (cfg_.semantic_count <= 0) throw std::invalid_argument("model: semantic_count must be >= 1");

  Rng rng(derive_seed(cfg_.init_seed, "model"));
  hpe_params_ = make_hpe_params(params_, cfg_.hpe, rng);
  hpe_plan_ = make_hpe_plan(cfg_.hpe);

  const bool semantics = !cfg_.ablation.disable_semantic_tokens;
  const bool dual = !cfg_.ablation.disable_pool;
  if (semantics) {
    semantic_table_ = &params_.create("semantic.table", {cfg_.semantic_count, cfg_.attn.hidden_dim}, /*decay=*/false);
    semantic_table_->value = init_semantic_tokens(cfg_.semantic_count, cfg_.attn.hidden_dim, cfg_.init_seed);
  }
  const bool fusion_needed = semantics || !cfg_.ablation.disable_cscd;
  for (int l = 0; l < cfg_.attn.blocks; ++l) {
    const std::string bp = "block" + std::to_string(l);
    BlockParams block;
    if (cfg_.attn.share_branch_weights || !dual) {
      block.sace_shared = make_sace(params_, bp + ".sace", cfg_.attn, rng);
    } else {
      block.sace_prior = make_sace(params_, bp + ".sace.prior", cfg_.attn, rng);
      block.sace_self = make_sace(params_, bp + ".sace.self", cfg_.attn, rng);
    }
    if (fusion_needed) block.fuse = make_fusion(params_, bp + ".fuse", cfg_.attn, rng, dual);
    if (!cfg_.ablation.disable_cscd) {
      if (cfg_.attn.share_branch_weights || !dual) {
        block.cscd_shared = make_cscd(params_, bp + ".cscd", cfg_.attn, rng);
      } else {
        block.cscd_prior = make_cscd(params_, bp + ".cscd.prior", cfg_.attn, rng);
        block.cscd_self = make_cscd(params_, bp + ".cscd.self", cfg_.attn, rng);
      }
    }
    blocks_.push_back(std::move(block));
  }
}

const SaceParams& PNPTModel::sace_for(int block, bool prior_branch) const {
  const BlockParams& b = blocks_[static_cast<std::size_t>(block)];
  if (cfg_.attn.share_branch_weights || cfg_.ablation.disable_pool) return b.sace_shared;
  return prior_branch ? b.sace_prior : b.sace_self;
}

const CscdParams& PNPTModel::cscd_for(int block, bool prior_branch) const {
  const BlockParams& b = blocks_[static_cast<std::size_t>(block)];
  if (cfg_.attn.share_branch_weights || cfg_.ablation.disable_pool) return b.cscd_shared;
  return prior_branch ? b.cscd_prior : b.cscd_self;
}

PNPTModel::TrunkOut PNPTModel::forward_tokens(Tape& t, std::optional<Var> e_prior, Var e_self) const {
  const bool dual = dual_stream();
  const bool semantics = !cfg_.ablation.disable_semantic_tokens;
  if (dual && !e_prior) throw std::invalid_argument("pnpt_forward: dual-stream model needs prior tokens");

  std::optional<Var> semantic;
  if (semantics) semantic = t.param(*semantic_table_);
  Var prior = dual ? *e_prior : Var{};
  Var self_ = e_self;

  for (int l = 0; l < cfg_.attn.blocks; ++l) {
    const BlockParams& block = blocks_[static_cast<std::size_t>(l)];
    SaceOut sp, ss;
    if (dual) sp = sace_aggregate(t, prior, semantic, sace_for(l, true));
    ss = sace_aggregate(t, self_, semantic, sace_for(l, false));

    // Fusion input: semantic sub-sequences, or the patch tokens themselves
    // when semantic tokens are disabled.
    std::optional<Var> fused;
    const bool fusion_needed = semantics || !cfg_.ablation.disable_cscd;
    if (fusion_needed) {
      Var in_self = semantics ? ss.semantic : ss.patch;
      if (dual) {
        Var in_prior = semantics ? sp.semantic : sp.patch;
        fused = semantic_alignment_fusion(t, in_prior, in_self, block.fuse);
      } else {
        fused = fusion_single_stream(t, in_self, block.fuse);
      }
    }

    if (cfg_.ablation.disable_cscd) {
      if (dual) prior = sp.patch;
      self_ = ss.patch;
    } else {
      if (dual) prior = cscd_decode(t, sp.patch, *fused, cscd_for(l, true));
      self_ = cscd_decode(t, ss.patch, *fused, cscd_for(l, false));
    }
    if (semantics) semantic = *fused;

    if (!t.value(self_).all_finite() || (dual && !t.value(prior).all_finite()) ||
        (semantic && !t.value(*semantic).all_finite())) {
      throw std::runtime_error("pnpt_forward: non-finite activations in block " + std::to_string(l));
    }
  }
  TrunkOut out;
  if (dual) out.prior = prior;
  out.self_ = self_;
  return out;
}

PNPTModel::ForwardOut PNPTModel::forward_features(Tape& t, const MultiScaleFeatureSet& input,
                                                  const MultiScaleFeatureSet* prior, bool training,
                                                  Rng* noise_rng) const {
  const bool dual = dual_stream();
  if (dual && !prior) throw std::invalid_argument("forward_features: dual-stream model needs prior features");
  auto tokens_of = [&](const MultiScaleFeatureSet& fs) {
    if (fs.num_scales() != cfg_.hpe.num_scales()) {
      throw std::invalid_argument("forward_features: feature set has " + std::to_string(fs.num_scales()) + " scales, model expects " + std::to_string(cfg_.hpe.num_scales()));
    }
    std::vector<Var> vars;
    for (const auto& s : fs.scales) vars.push_back(t.constant(s));
    return hpe_forward(t, vars, hpe_params_, cfg_.hpe, hpe_plan_, training, noise_rng);
  };
  Var e_self = tokens_of(input);
  std::optional<Var> e_prior;
  if (dual) e_prior = tokens_of(*prior);
  TrunkOut trunk = forward_tokens(t, e_prior, e_self);
  ForwardOut out;
  out.recon_self = hpe_inverse(t, trunk.self_, hpe_params_, cfg_.hpe, hpe_plan_);
  if (dual) out.recon_prior = hpe_inverse(t, trunk.prior, hpe_params_, cfg_.hpe, hpe_plan_);
  return out;
}

void PNPTModel::add_to_archive(TensorArchive& arch) const {
  for (const Parameter* p : params_.all()) arch.add(p->name, p->value);
}

void PNPTModel::load_from_archive(const TensorArchive& arch) {
  for (Parameter* p : params_.all()) {
    if (!arch.has(p->name)) throw std::runtime_error("model load error: missing tensor " + p->name);
    const Tensor& t = arch.get(p->name);
    if (t.shape() != p->value.shape()) {
      throw std::runtime_error("model load error: tensor " + p->name + " has shape " + shape_str(t.shape()) + ", model requires " + shape_str(p->value.shape()));
    }
    p->value = t;
  }
}

MultiScaleFeatureSet select_scales(const MultiScaleFeatureSet& fs, const AblationFlags& flags) {
  if (!flags.disable_hpe_multiscale || fs.scales.empty()) return fs;
  MultiScaleFeatureSet out;
  out.provenance = fs.provenance;
  out.scales.push_back(fs.scales.back());
  return out;
}

}  // namespace pnpt
