#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pnpt/archive.hpp"
#include "pnpt/backbone.hpp"
#include "pnpt/hpe.hpp"
#include "pnpt/nn.hpp"

namespace pnpt {

struct AttentionConfig {
  int heads = 8;
  int hidden_dim = 0;  // C
  int blocks = 4;      // M
  bool share_branch_weights = true;
  int ff_expansion = 4;
};

/// One-to-one switches for the ablation variants: B = disable_hpe_multiscale,
/// C = disable_pool, D = disable_semantic_tokens, E = disable_cscd; variant A
/// (plain single-stream transformer) = C + D + E together.
struct AblationFlags {
  bool disable_pool = false;
  bool disable_semantic_tokens = false;
  bool disable_cscd = false;
  bool disable_hpe_multiscale = false;
};

struct ModelConfig {
  HPEConfig hpe;
  AttentionConfig attn;
  int semantic_count = 40;  // N
  AblationFlags ablation;
  std::uint64_t init_seed = 0;
};

struct SaceParams {
  AttentionParams sam;
  LayerNormParams ln1, ln2;
  FeedForwardParams fp;
};

struct FusionParams {
  AttentionParams cam1, cam2;
  LayerNormParams ln1, ln2, ln3;
  FeedForwardParams fp;
};

struct CscdParams {
  AttentionParams cam;
  LayerNormParams ln1, ln2;
  FeedForwardParams fp;
};

struct SaceOut {
  Var patch;     // R_X
  Var semantic;  // R_S(X); invalid when no semantic tokens were appended
};

/// Joint [patch; semantic] self-attention: Z = LN(SAM(A)+A), R = LN(FP(Z)+Z),
/// then split back into the patch and semantic sub-sequences.
SaceOut sace_aggregate(Tape& t, Var patch_tokens, std::optional<Var> semantic_tokens,
                       const SaceParams& p, std::vector<Tensor>* attn_trace = nullptr);

/// Second-order cross-attention fusion:
///   R'   = LN(CAM(q=prior, kv=self) + prior)
///   Z'   = LN(CAM(q=self,  kv=R')   + self)
///   out  = LN(FP(Z') + Z')
Var semantic_alignment_fusion(Tape& t, Var rs_prior, Var rs_self, const FusionParams& p,
                              std::vector<Tensor>* attn_trace = nullptr);

/// Single-stream degenerate fusion (pool disabled): out = LN(FP(x) + x).
Var fusion_single_stream(Tape& t, Var rs_self, const FusionParams& p);

/// Cross-attention decode of one branch against the fused semantics:
///   Z = LN(CAM(q=R_X, kv=fused) + R_X), out = LN(FP(Z) + Z).
/// The fused semantics pass to the next block unchanged.
Var cscd_decode(Tape& t, Var r_patch, Var fused, const CscdParams& p,
                std::vector<Tensor>* attn_trace = nullptr);

/// Learnable semantic-token table init, N(0, 0.02^2).
Tensor init_semantic_tokens(int n, int c, std::uint64_t seed);

/// The M-stage dual-branch trunk plus its HPE ends. Parameters live in an
/// insertion-ordered store whose order is the checkpoint layout.
class PNPTModel {
 public:
  explicit PNPTModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const HPEParams& hpe_params() const { return hpe_params_; }
  const HPEPlan& hpe_plan() const { return hpe_plan_; }

  bool dual_stream() const { return !cfg_.ablation.disable_pool; }

  struct TrunkOut {
    Var prior;  // invalid in single-stream mode
    Var self_;
  };

  /// M iterations of SACE -> fusion -> CSCD threading the semantic tokens.
  /// e_prior is ignored in single-stream mode. Throws a numeric error naming
  /// the block index if activations go non-finite.
  TrunkOut forward_tokens(Tape& t, std::optional<Var> e_prior, Var e_self) const;

  struct ForwardOut {
    std::vector<Var> recon_prior;  // empty in single-stream mode
    std::vector<Var> recon_self;
  };

  /// Full path: features -> HPE -> trunk -> inverse HPE. prior may be null
  /// only in single-stream mode. Training mode adds HPE noise from noise_rng.
  ForwardOut forward_features(Tape& t, const MultiScaleFeatureSet& input,
                              const MultiScaleFeatureSet* prior, bool training,
                              Rng* noise_rng) const;

  void add_to_archive(TensorArchive& arch) const;
  /// Strict by-name load; errors name the first missing/mismatched tensor.
  void load_from_archive(const TensorArchive& arch);

 private:
  struct BlockParams {
    SaceParams sace_shared;              // used when share_branch_weights
    SaceParams sace_prior, sace_self;    // used otherwise
    FusionParams fuse;
    CscdParams cscd_shared, cscd_prior, cscd_self;
  };

  const SaceParams& sace_for(int block, bool prior_branch) const;
  const CscdParams& cscd_for(int block, bool prior_branch) const;

  ModelConfig cfg_;
  ParameterStore params_;
  HPEParams hpe_params_;
  HPEPlan hpe_plan_;
  Parameter* semantic_table_ = nullptr;
  std::vector<BlockParams> blocks_;
};

/// Restricts a feature set to the scales the model consumes (the last scale
/// only under disable_hpe_multiscale).
MultiScaleFeatureSet select_scales(const MultiScaleFeatureSet& fs, const AblationFlags& flags);

}  // namespace pnpt
