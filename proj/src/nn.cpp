#include "pnpt/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace pnpt {

Parameter& ParameterStore::create(const std::string& name, std::vector<int> shape, bool decay) {
  if (by_name_.count(name)) throw std::invalid_argument("parameter already exists: " + name);
  order_.push_back(std::make_unique<Parameter>(name, Tensor(std::move(shape)), decay));
  by_name_[name] = order_.back().get();
  return *order_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("no such parameter: " + name);
  return *it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("no such parameter: " + name);
  return *it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(order_.size());
  for (auto& p : order_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(order_.size());
  for (auto& p : order_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& p : order_) p->zero_grad();
}

LinearParams make_linear(ParameterStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
  LinearParams lp;
  lp.w = &ps.create(prefix + ".weight", {in, out}, /*decay=*/true);
  lp.b = &ps.create(prefix + ".bias", {out}, /*decay=*/false);
  const double std = std::sqrt(2.0 / (in + out));
  for (std::int64_t i = 0; i < lp.w->value.numel(); ++i) lp.w->value[i] = rng.normal(0.0, std);
  return lp;
}

Var linear(Tape& t, Var x, const LinearParams& p) {
  return t.add_row(t.matmul(x, t.param(*p.w)), t.param(*p.b));
}

LayerNormParams make_layer_norm(ParameterStore& ps, const std::string& prefix, int dim) {
  LayerNormParams lp;
  lp.gamma = &ps.create(prefix + ".gamma", {dim}, /*decay=*/false);
  lp.beta = &ps.create(prefix + ".beta", {dim}, /*decay=*/false);
  lp.gamma->value.fill(1.0);
  return lp;
}

Var layer_norm(Tape& t, Var x, const LayerNormParams& p) {
  return t.layer_norm(x, t.param(*p.gamma), t.param(*p.beta));
}

AttentionParams make_attention(ParameterStore& ps, const std::string& prefix, int dim, int heads, Rng& rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: hidden dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  AttentionParams ap;
  ap.q = make_linear(ps, prefix + ".wq", dim, dim, rng);
  ap.k = make_linear(ps, prefix + ".wk", dim, dim, rng);
  ap.v = make_linear(ps, prefix + ".wv", dim, dim, rng);
  ap.o = make_linear(ps, prefix + ".wo", dim, dim, rng);
  ap.heads = heads;
  return ap;
}

Var attention(Tape& t, Var q_in, Var kv_in, const AttentionParams& p, std::vector<Tensor>* attn_trace) {
  const int dim = t.value(q_in).dim(1);
  const int hd = dim / p.heads;
  Var q = linear(t, q_in, p.q);
  Var k = linear(t, kv_in, p.k);
  Var v = linear(t, kv_in, p.v);
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Var> heads_out;
  heads_out.reserve(static_cast<std::size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    Var qh = t.slice_cols(q, h * hd, (h + 1) * hd);
    Var kh = t.slice_cols(k, h * hd, (h + 1) * hd);
    Var vh = t.slice_cols(v, h * hd, (h + 1) * hd);
    Var scores = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt_hd);
    Var probs = t.softmax_rows(scores);
    if (attn_trace) attn_trace->push_back(t.value(probs));
    heads_out.push_back(t.matmul(probs, vh));
  }
  Var merged = p.heads == 1 ? heads_out[0] : t.concat_cols(heads_out);
  return linear(t, merged, p.o);
}

FeedForwardParams make_feed_forward(ParameterStore& ps, const std::string& prefix, int dim, int expansion, Rng& rng) {
  FeedForwardParams fp;
  fp.fc1 = make_linear(ps, prefix + ".fc1", dim, dim * expansion, rng);
  fp.fc2 = make_linear(ps, prefix + ".fc2", dim * expansion, dim, rng);
  return fp;
}

Var feed_forward(Tape& t, Var x, const FeedForwardParams& p) {
  return linear(t, t.gelu(linear(t, x, p.fc1)), p.fc2);
}

}  // namespace pnpt
