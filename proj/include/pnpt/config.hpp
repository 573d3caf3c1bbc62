#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pnpt/backbone.hpp"
#include "pnpt/model.hpp"
#include "pnpt/objective.hpp"
#include "pnpt/pool.hpp"

namespace pnpt {

/// Plain-text dotted key=value configuration ('#' comments, blank lines
/// ignored). The file is the source of truth; CLI flags override.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_text(const std::string& text, const std::string& origin = "<text>");

  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& key_equals_value);
  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;

  /// Sorted key=value lines; the serialized form embedded in checkpoints.
  std::string canonical_text() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

/// Every tunable in one place, defaults matching the reference
/// hyperparameters (wide backbone, C=760, N=40, M=4, 8 heads, 300 epochs,
/// AdamW 1e-4, batch 8, input 256). Desk-scale runs override via config.
struct RunConfig {
  std::string backbone_name = "wide-residual-50-style";
  std::uint64_t backbone_seed = 0;
  std::string backbone_weights;
  int input_size = 256;

  int hidden_dim = 760;
  std::vector<int> patch_sizes = {4, 2, 1};
  double noise_std = 0.1;
  bool sequence_axis_concat = false;

  int heads = 8;
  int blocks = 4;
  bool share_branch_weights = true;
  int ff_expansion = 4;
  int semantic_count = 40;

  AblationFlags ablation;
  FusionWeights fusion;

  PoolMetric pool_metric = PoolMetric::euclidean;
  bool normalize_codings = false;

  int epochs = 300;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int max_steps = 0;         // 0 = no cap; test hook
  int checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = final only

  ScoreConfig score;
  std::string device = "cpu";

  void validate() const;
  BackboneSpec backbone_spec() const;
  /// Model geometry for this config (honors disable_hpe_multiscale).
  ModelConfig model_config() const;
};

/// Parses a Config into a RunConfig; rejects unknown keys.
RunConfig run_config_from(const Config& cfg);

/// Materializes every effective value back into a Config (for embedding in
/// checkpoints and for --json echoes).
Config materialize(const RunConfig& rc);

/// Hash over the canonical text minus operational keys (train.max_steps,
/// train.checkpoint_every, device); resume demands it match.
std::uint64_t config_hash(const RunConfig& rc);

}  // namespace pnpt
