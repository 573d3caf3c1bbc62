#include "pnpt/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pnpt {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "backbone.name", "backbone.seed", "backbone.weights_path",
      "model.input_size",
      "hpe.hidden_dim", "hpe.patch_sizes", "hpe.noise_std", "hpe.sequence_axis_concat",
      "attn.heads", "attn.blocks", "attn.share_branch_weights", "attn.ff_expansion",
      "semantic.count",
      "fusion.w_prior", "fusion.w_self",
      "pool.metric", "pool.normalize_codings",
      "ablation.disable_pool", "ablation.disable_semantic_tokens", "ablation.disable_cscd", "ablation.disable_hpe_multiscale",
      "train.epochs", "train.batch_size", "train.learning_rate", "train.weight_decay",
      "train.grad_clip", "train.seed", "train.max_steps", "train.checkpoint_every",
      "score.smooth_sigma", "score.reduction", "score.top_k_frac",
      "device",
  };
  return keys;
}

// Keys that do not alter the training trajectory; excluded from the resume hash.
const std::set<std::string>& operational_keys() {
  static const std::set<std::string> keys = {"train.max_steps", "train.checkpoint_every", "device"};
  return keys;
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), path);
}

Config Config::from_text(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + s + "'");
    const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
    if (key.empty()) throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.kv_[key] = value;
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

void Config::apply_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must be key=value, got '" + kv + "'");
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config key " + key + ": expected integer, got '" + it->second + "'");
  }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config key " + key + ": expected unsigned integer, got '" + it->second + "'");
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config key " + key + ": expected number, got '" + it->second + "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config key " + key + ": expected boolean, got '" + it->second + "'");
}

std::vector<int> Config::get_int_list(const std::string& key, std::vector<int> fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<int> out;
  std::istringstream in(it->second);
  std::string piece;
  while (std::getline(in, piece, ',')) {
    piece = trim(piece);
    if (piece.empty()) continue;
    try {
      out.push_back(std::stoi(piece));
    } catch (...) {
      throw std::invalid_argument("config key " + key + ": expected comma-separated integers, got '" + it->second + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument("config key " + key + ": empty list");
  return out;
}

std::string Config::canonical_text() const {
  std::ostringstream out;
  for (const auto& [k, v] : kv_) out << k << '=' << v << '\n';
  return out.str();
}

void RunConfig::validate() const {
  if (input_size <= 0 || hidden_dim <= 0 || heads <= 0 || blocks < 0 || semantic_count <= 0 || ff_expansion <= 0) {
    throw std::invalid_argument("config: sizes and counts must be positive (blocks may be 0)");
  }
  if (hidden_dim % heads != 0) throw std::invalid_argument("config: hpe.hidden_dim must be divisible by attn.heads");
  if (epochs <= 0 || batch_size <= 0 || learning_rate <= 0.0 || weight_decay < 0.0 || grad_clip < 0.0) {
    throw std::invalid_argument("config: train.* values out of range");
  }
  if (noise_std < 0.0) throw std::invalid_argument("config: hpe.noise_std must be >= 0");
  if (max_steps < 0 || checkpoint_every < 0) throw std::invalid_argument("config: train.max_steps/checkpoint_every must be >= 0");
  if (score.smooth_sigma < 0.0 || score.top_k_frac <= 0.0 || score.top_k_frac > 1.0) {
    throw std::invalid_argument("config: score.* values out of range");
  }
  if (device != "cpu") throw std::invalid_argument("device '" + device + "' not supported; this build is CPU-only");
  fusion.validate();
  backbone_spec().validate();
  model_config();  // exercises HPE geometry checks
}

BackboneSpec RunConfig::backbone_spec() const {
  BackboneSpec spec = backbone_spec_by_name(backbone_name, input_size, backbone_seed);
  spec.weights_path = backbone_weights;
  return spec;
}

ModelConfig RunConfig::model_config() const {
  const BackboneSpec bb = backbone_spec();
  std::vector<int> channels, sizes, patches;
  if (static_cast<int>(patch_sizes.size()) != bb.num_scales()) {
    throw std::invalid_argument("config: hpe.patch_sizes has " + std::to_string(patch_sizes.size()) + " entries, backbone has " + std::to_string(bb.num_scales()) + " scales");
  }
  for (int i = 0; i < bb.num_scales(); ++i) {
    if (ablation.disable_hpe_multiscale && i != bb.num_scales() - 1) continue;
    channels.push_back(bb.scale_channels[static_cast<std::size_t>(i)]);
    sizes.push_back(bb.input_size / bb.scale_strides[static_cast<std::size_t>(i)]);
    patches.push_back(patch_sizes[static_cast<std::size_t>(i)]);
  }
  ModelConfig mc;
  mc.hpe = make_hpe_config(channels, sizes, patches, hidden_dim, noise_std, sequence_axis_concat);
  mc.attn = AttentionConfig{heads, hidden_dim, blocks, share_branch_weights, ff_expansion};
  mc.semantic_count = semantic_count;
  mc.ablation = ablation;
  mc.init_seed = seed;
  return mc;
}

RunConfig run_config_from(const Config& cfg) {
  for (const auto& [k, v] : cfg.entries()) {
    if (!known_keys().count(k)) throw std::invalid_argument("unknown config key '" + k + "'");
  }
  RunConfig rc;
  rc.backbone_name = cfg.get_str("backbone.name", rc.backbone_name);
  rc.backbone_seed = cfg.get_u64("backbone.seed", rc.backbone_seed);
  rc.backbone_weights = cfg.get_str("backbone.weights_path", rc.backbone_weights);
  rc.input_size = cfg.get_int("model.input_size", rc.input_size);
  rc.hidden_dim = cfg.get_int("hpe.hidden_dim", rc.hidden_dim);
  rc.patch_sizes = cfg.get_int_list("hpe.patch_sizes", rc.patch_sizes);
  rc.noise_std = cfg.get_double("hpe.noise_std", rc.noise_std);
  rc.sequence_axis_concat = cfg.get_bool("hpe.sequence_axis_concat", rc.sequence_axis_concat);
  rc.heads = cfg.get_int("attn.heads", rc.heads);
  rc.blocks = cfg.get_int("attn.blocks", rc.blocks);
  rc.share_branch_weights = cfg.get_bool("attn.share_branch_weights", rc.share_branch_weights);
  rc.ff_expansion = cfg.get_int("attn.ff_expansion", rc.ff_expansion);
  rc.semantic_count = cfg.get_int("semantic.count", rc.semantic_count);
  rc.fusion.w_prior = cfg.get_double("fusion.w_prior", rc.fusion.w_prior);
  rc.fusion.w_self = cfg.get_double("fusion.w_self", rc.fusion.w_self);
  rc.pool_metric = pool_metric_from_string(cfg.get_str("pool.metric", to_string(rc.pool_metric)));
  rc.normalize_codings = cfg.get_bool("pool.normalize_codings", rc.normalize_codings);
  rc.ablation.disable_pool = cfg.get_bool("ablation.disable_pool", false);
  rc.ablation.disable_semantic_tokens = cfg.get_bool("ablation.disable_semantic_tokens", false);
  rc.ablation.disable_cscd = cfg.get_bool("ablation.disable_cscd", false);
  rc.ablation.disable_hpe_multiscale = cfg.get_bool("ablation.disable_hpe_multiscale", false);
  rc.epochs = cfg.get_int("train.epochs", rc.epochs);
  rc.batch_size = cfg.get_int("train.batch_size", rc.batch_size);
  rc.learning_rate = cfg.get_double("train.learning_rate", rc.learning_rate);
  rc.weight_decay = cfg.get_double("train.weight_decay", rc.weight_decay);
  rc.grad_clip = cfg.get_double("train.grad_clip", rc.grad_clip);
  rc.seed = cfg.get_u64("train.seed", rc.seed);
  rc.max_steps = cfg.get_int("train.max_steps", rc.max_steps);
  rc.checkpoint_every = cfg.get_int("train.checkpoint_every", rc.checkpoint_every);
  rc.score.smooth_sigma = cfg.get_double("score.smooth_sigma", rc.score.smooth_sigma);
  rc.score.reduction = score_reduction_from_string(cfg.get_str("score.reduction", to_string(rc.score.reduction)));
  rc.score.top_k_frac = cfg.get_double("score.top_k_frac", rc.score.top_k_frac);
  rc.device = cfg.get_str("device", rc.device);
  rc.validate();
  return rc;
}

Config materialize(const RunConfig& rc) {
  Config cfg;
  std::ostringstream patches;
  for (std::size_t i = 0; i < rc.patch_sizes.size(); ++i) patches << (i ? "," : "") << rc.patch_sizes[i];
  cfg.set("backbone.name", rc.backbone_name);
  cfg.set("backbone.seed", std::to_string(rc.backbone_seed));
  cfg.set("backbone.weights_path", rc.backbone_weights);
  cfg.set("model.input_size", std::to_string(rc.input_size));
  cfg.set("hpe.hidden_dim", std::to_string(rc.hidden_dim));
  cfg.set("hpe.patch_sizes", patches.str());
  cfg.set("hpe.noise_std", std::to_string(rc.noise_std));
  cfg.set("hpe.sequence_axis_concat", rc.sequence_axis_concat ? "true" : "false");
  cfg.set("attn.heads", std::to_string(rc.heads));
  cfg.set("attn.blocks", std::to_string(rc.blocks));
  cfg.set("attn.share_branch_weights", rc.share_branch_weights ? "true" : "false");
  cfg.set("attn.ff_expansion", std::to_string(rc.ff_expansion));
  cfg.set("semantic.count", std::to_string(rc.semantic_count));
  cfg.set("fusion.w_prior", std::to_string(rc.fusion.w_prior));
  cfg.set("fusion.w_self", std::to_string(rc.fusion.w_self));
  cfg.set("pool.metric", to_string(rc.pool_metric));
  cfg.set("pool.normalize_codings", rc.normalize_codings ? "true" : "false");
  cfg.set("ablation.disable_pool", rc.ablation.disable_pool ? "true" : "false");
  cfg.set("ablation.disable_semantic_tokens", rc.ablation.disable_semantic_tokens ? "true" : "false");
  cfg.set("ablation.disable_cscd", rc.ablation.disable_cscd ? "true" : "false");
  cfg.set("ablation.disable_hpe_multiscale", rc.ablation.disable_hpe_multiscale ? "true" : "false");
  cfg.set("train.epochs", std::to_string(rc.epochs));
  cfg.set("train.batch_size", std::to_string(rc.batch_size));
  cfg.set("train.learning_rate", std::to_string(rc.learning_rate));
  cfg.set("train.weight_decay", std::to_string(rc.weight_decay));
  cfg.set("train.grad_clip", std::to_string(rc.grad_clip));
  cfg.set("train.seed", std::to_string(rc.seed));
  cfg.set("train.max_steps", std::to_string(rc.max_steps));
  cfg.set("train.checkpoint_every", std::to_string(rc.checkpoint_every));
  cfg.set("score.smooth_sigma", std::to_string(rc.score.smooth_sigma));
  cfg.set("score.reduction", to_string(rc.score.reduction));
  cfg.set("score.top_k_frac", std::to_string(rc.score.top_k_frac));
  cfg.set("device", rc.device);
  return cfg;
}

std::uint64_t config_hash(const RunConfig& rc) {
  const Config cfg = materialize(rc);
  std::ostringstream hashed;
  for (const auto& [k, v] : cfg.entries()) {
    if (operational_keys().count(k)) continue;
    hashed << k << '=' << v << '\n';
  }
  return fnv1a64(hashed.str());
}

}  // namespace pnpt
