#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pnpt/autograd.hpp"
#include "pnpt/rng.hpp"

namespace pnpt {

/// Owns named parameters in a stable insertion order (the order is the
/// checkpoint layout contract).
class ParameterStore {
 public:
  Parameter& create(const std::string& name, std::vector<int> shape, bool decay = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  const Parameter* find(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return order_.size(); }
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Parameter>> order_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

struct LinearParams {
  Parameter* w = nullptr;  // in x out
  Parameter* b = nullptr;  // out
};

/// Xavier-normal weight init, zero bias.
LinearParams make_linear(ParameterStore& ps, const std::string& prefix, int in, int out, Rng& rng);
Var linear(Tape& t, Var x, const LinearParams& p);

struct LayerNormParams {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
};

LayerNormParams make_layer_norm(ParameterStore& ps, const std::string& prefix, int dim);
Var layer_norm(Tape& t, Var x, const LayerNormParams& p);

struct AttentionParams {
  LinearParams q, k, v, o;
  int heads = 1;
};

AttentionParams make_attention(ParameterStore& ps, const std::string& prefix, int dim, int heads, Rng& rng);

/// Scaled dot-product multi-head attention. q_in: (Tq,C), kv_in: (Tk,C).
/// When attn_trace is non-null every head's softmax matrix is appended to it.
Var attention(Tape& t, Var q_in, Var kv_in, const AttentionParams& p, std::vector<Tensor>* attn_trace = nullptr);

struct FeedForwardParams {
  LinearParams fc1, fc2;
};

FeedForwardParams make_feed_forward(ParameterStore& ps, const std::string& prefix, int dim, int expansion, Rng& rng);
Var feed_forward(Tape& t, Var x, const FeedForwardParams& p);

}  // namespace pnpt
