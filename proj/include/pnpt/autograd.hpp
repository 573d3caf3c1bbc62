#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pnpt/tensor.hpp"

namespace pnpt {

/// Named trainable tensor. Gradients accumulate across backward calls until
/// zero_grad(); the optimizer owns when to consume and clear them.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool decay = true;  // participates in decoupled weight decay

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool decay_flag = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), decay(decay_flag) {}
  void zero_grad() { grad.fill(0.0); }
};

struct Var {
  std::int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape. Ops compute values eagerly and record a backward
/// closure; backward() walks the tape in reverse creation order, which is a
/// valid topological order by construction.
class Tape {
 public:
  // --- leaves ---
  Var constant(Tensor v);        // no gradient ever
  Var input(Tensor v);           // gradient-tracked leaf (for checks against inputs)
  Var param(Parameter& p);       // gradient flows into p.grad on backward()

  // --- elementwise ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var sqrt_elem(Var a);
  Var gelu(Var a);

  // --- 2-D linear algebra ---
  Var matmul(Var a, Var b);                    // (m,k) x (k,n) -> (m,n)
  Var transpose(Var a);                        // 2-D
  Var add_row(Var a, Var row);                 // (m,n) + (n,) broadcast over rows
  Var softmax_rows(Var a);
  Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);

  // --- structure ---
  Var reshape(Var a, std::vector<int> shape);
  Var slice_rows(Var a, int r0, int r1);       // half-open
  Var slice_cols(Var a, int c0, int c1);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  /// out[i] = a[map[i]]; backward scatter-adds. map entries index a's flat storage.
  Var gather(Var a, std::shared_ptr<const std::vector<std::int64_t>> map, std::vector<int> out_shape);

  // --- reductions ---
  Var sum(Var a);                              // -> shape {1}

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;             // zero-shaped if untouched
  void backward(Var loss);                     // loss must have numel()==1
  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // lazily allocated
    std::function<void()> back;
    bool requires_grad = false;
    Parameter* bound = nullptr;
  };

  Var push(Tensor value, bool requires_grad);
  Tensor& g(int idx);  // grad of node idx, allocated on demand
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].requires_grad; }
  const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].value; }

  std::vector<Node> nodes_;
};

}  // namespace pnpt
