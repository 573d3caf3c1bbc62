#include "pnpt/autograd.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace pnpt {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument("tape: " + msg);
}

void require_2d(const Tensor& t, const char* who) {
  require(t.ndim() == 2, std::string(who) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Var Tape::push(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::g(int idx) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Tape::constant(Tensor v) { return push(std::move(v), false); }

Var Tape::input(Tensor v) { return push(std::move(v), true); }

Var Tape::param(Parameter& p) {
  Var out = push(p.value, p.trainable);
  Node& n = nodes_.back();
  n.bound = &p;
  if (p.trainable) {
    const int oi = out.idx;
    Parameter* bp = &p;
    n.back = [this, oi, bp]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      for (std::int64_t i = 0; i < go.numel(); ++i) bp->grad[i] += go[i];
    };
  }
  return out;
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.same_shape(tb), "add: shape mismatch " + shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + tb[i];
  Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, bi = b.idx, oi = o.idx;
    const bool na = needs(a), nb = needs(b);
    nodes_.back().back = [this, ai, bi, oi, na, nb]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      if (na) {
        Tensor& ga = g(ai);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
      }
      if (nb) {
        Tensor& gb = g(bi);
        for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i];
      }
    };
  }
  return o;
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.same_shape(tb), "sub: shape mismatch");
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] - tb[i];
  Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, bi = b.idx, oi = o.idx;
    const bool na = needs(a), nb = needs(b);
    nodes_.back().back = [this, ai, bi, oi, na, nb]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      if (na) {
        Tensor& ga = g(ai);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
      }
      if (nb) {
        Tensor& gb = g(bi);
        for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] -= go[i];
      }
    };
  }
  return o;
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.same_shape(tb), "mul: shape mismatch");
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * tb[i];
  Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, bi = b.idx, oi = o.idx;
    const bool na = needs(a), nb = needs(b);
    nodes_.back().back = [this, ai, bi, oi, na, nb]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      const Tensor& va = nodes_[static_cast<std::size_t>(ai)].value;
      const Tensor& vb = nodes_[static_cast<std::size_t>(bi)].value;
      if (na) {
        Tensor& ga = g(ai);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * vb[i];
      }
      if (nb) {
        Tensor& gb = g(bi);
        for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * va[i];
      }
    };
  }
  return o;
}

Var Tape::div(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.same_shape(tb), "div: shape mismatch");
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] / tb[i];
  Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, bi = b.idx, oi = o.idx;
    const bool na = needs(a), nb = needs(b);
    nodes_.back().back = [this, ai, bi, oi, na, nb]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      const Tensor& va = nodes_[static_cast<std::size_t>(ai)].value;
      const Tensor& vb = nodes_[static_cast<std::size_t>(bi)].value;
      if (na) {
        Tensor& ga = g(ai);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / vb[i];
      }
      if (nb) {
        Tensor& gb = g(bi);
        for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] -= go[i] * va[i] / (vb[i] * vb[i]);
      }
    };
  }
  return o;
}

Var Tape::scale(Var a, double s) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * s;
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi, s]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      Tensor& ga = g(ai);
      for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * s;
    };
  }
  return o;
}

Var Tape::add_scalar(Var a, double s) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + s;
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      Tensor& ga = g(ai);
      for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    };
  }
  return o;
}

Var Tape::sqrt_elem(Var a) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = std::sqrt(ta[i]);
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      const Tensor& vo = nodes_[static_cast<std::size_t>(oi)].value;
      Tensor& ga = g(ai);
      for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * 0.5 / vo[i];
    };
  }
  return o;
}

Var Tape::gelu(Var a) {
  // Exact GELU: x * Phi(x).
  const Tensor& ta = val(a);
  Tensor out(ta.shape());
  for (std::int64_t i = 0; i < ta.numel(); ++i) {
    const double x = ta[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      const Tensor& va = nodes_[static_cast<std::size_t>(ai)].value;
      Tensor& ga = g(ai);
      for (std::int64_t i = 0; i < go.numel(); ++i) {
        const double x = va[i];
        const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[i] += go[i] * (phi + x * pdf);
      }
    };
  }
  return o;
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_2d(ta, "matmul lhs");
  require_2d(tb, "matmul rhs");
  const int m = ta.dim(0), k = ta.dim(1), k2 = tb.dim(0), n = tb.dim(1);
  require(k == k2, "matmul: inner dims " + shape_str(ta.shape()) + " x " + shape_str(tb.shape()));
  Tensor out({m, n});
  MapM(out.data(), m, n).noalias() = MapC(ta.data(), m, k) * MapC(tb.data(), k, n);
  Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, bi = b.idx, oi = o.idx;
    const bool na = needs(a), nb = needs(b);
    nodes_.back().back = [this, ai, bi, oi, na, nb, m, k, n]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      const Tensor& va = nodes_[static_cast<std::size_t>(ai)].value;
      const Tensor& vb = nodes_[static_cast<std::size_t>(bi)].value;
      if (na) {
        MapM(g(ai).data(), m, k).noalias() += MapC(go.data(), m, n) * MapC(vb.data(), k, n).transpose();
      }
      if (nb) {
        MapM(g(bi).data(), k, n).noalias() += MapC(va.data(), m, k).transpose() * MapC(go.data(), m, n);
      }
    };
  }
  return o;
}

Var Tape::transpose(Var a) {
  const Tensor& ta = val(a);
  require_2d(ta, "transpose");
  const int m = ta.dim(0), n = ta.dim(1);
  Tensor out({n, m});
  MapM(out.data(), n, m) = MapC(ta.data(), m, n).transpose();
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi, m, n]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      MapM(g(ai).data(), m, n) += MapC(go.data(), n, m).transpose();
    };
  }
  return o;
}

Var Tape::add_row(Var a, Var row) {
  const Tensor& ta = val(a);
  const Tensor& tr = val(row);
  require_2d(ta, "add_row lhs");
  require(tr.numel() == ta.dim(1), "add_row: bias length != columns");
  const int m = ta.dim(0), n = ta.dim(1);
  Tensor out({m, n});
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.at2(r, c) = ta.at2(r, c) + tr[c];
  Var o = push(std::move(out), needs(a) || needs(row));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, ri = row.idx, oi = o.idx;
    const bool na = needs(a), nr = needs(row);
    nodes_.back().back = [this, ai, ri, oi, na, nr, m, n]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      if (na) {
        Tensor& ga = g(ai);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
      }
      if (nr) {
        Tensor& gr = g(ri);
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) gr[c] += go.at2(r, c);
      }
    };
  }
  return o;
}

Var Tape::softmax_rows(Var a) {
  const Tensor& ta = val(a);
  require_2d(ta, "softmax_rows");
  const int m = ta.dim(0), n = ta.dim(1);
  Tensor out({m, n});
  for (int r = 0; r < m; ++r) {
    double mx = ta.at2(r, 0);
    for (int c = 1; c < n; ++c) mx = std::max(mx, ta.at2(r, c));
    double denom = 0.0;
    for (int c = 0; c < n; ++c) {
      const double e = std::exp(ta.at2(r, c) - mx);
      out.at2(r, c) = e;
      denom += e;
    }
    for (int c = 0; c < n; ++c) out.at2(r, c) /= denom;
  }
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi, m, n]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      const Tensor& y = nodes_[static_cast<std::size_t>(oi)].value;
      Tensor& ga = g(ai);
      for (int r = 0; r < m; ++r) {
        double dot = 0.0;
        for (int c = 0; c < n; ++c) dot += go.at2(r, c) * y.at2(r, c);
        for (int c = 0; c < n; ++c) ga.at2(r, c) += y.at2(r, c) * (go.at2(r, c) - dot);
      }
    };
  }
  return o;
}

Var Tape::layer_norm(Var a, Var gamma, Var beta, double eps) {
  const Tensor& ta = val(a);
  const Tensor& tg = val(gamma);
  const Tensor& tb = val(beta);
  require_2d(ta, "layer_norm");
  const int m = ta.dim(0), n = ta.dim(1);
  require(tg.numel() == n && tb.numel() == n, "layer_norm: gamma/beta length != columns");
  Tensor out({m, n});
  Tensor xhat({m, n});
  Tensor inv_sigma({m});
  for (int r = 0; r < m; ++r) {
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += ta.at2(r, c);
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) {
      const double d = ta.at2(r, c) - mean;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (int c = 0; c < n; ++c) {
      const double xh = (ta.at2(r, c) - mean) * is;
      xhat.at2(r, c) = xh;
      out.at2(r, c) = xh * tg[c] + tb[c];
    }
  }
  Var o = push(std::move(out), needs(a) || needs(gamma) || needs(beta));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, gi = gamma.idx, bi = beta.idx, oi = o.idx;
    const bool na = needs(a), ng = needs(gamma), nb = needs(beta);
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto is = std::make_shared<Tensor>(std::move(inv_sigma));
    nodes_.back().back = [this, ai, gi, bi, oi, na, ng, nb, m, n, xh, is]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      const Tensor& vg = nodes_[static_cast<std::size_t>(gi)].value;
      if (ng) {
        Tensor& gg = g(gi);
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) gg[c] += go.at2(r, c) * xh->at2(r, c);
      }
      if (nb) {
        Tensor& gb = g(bi);
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) gb[c] += go.at2(r, c);
      }
      if (na) {
        Tensor& ga = g(ai);
        for (int r = 0; r < m; ++r) {
          // dxhat = go * gamma; dx via the standard normalized-row identity.
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int c = 0; c < n; ++c) {
            const double dxh = go.at2(r, c) * vg[c];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh->at2(r, c);
          }
          const double isr = (*is)[r];
          for (int c = 0; c < n; ++c) {
            const double dxh = go.at2(r, c) * vg[c];
            ga.at2(r, c) += isr * (dxh - sum_dxhat / n - xh->at2(r, c) * sum_dxhat_xhat / n);
          }
        }
      }
    };
  }
  return o;
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  const Tensor& ta = val(a);
  Tensor out = ta.reshaped(shape);
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      Tensor& ga = g(ai);
      for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    };
  }
  return o;
}

Var Tape::slice_rows(Var a, int r0, int r1) {
  const Tensor& ta = val(a);
  require_2d(ta, "slice_rows");
  const int m = ta.dim(0), n = ta.dim(1);
  require(0 <= r0 && r0 < r1 && r1 <= m, "slice_rows: bad range");
  Tensor out({r1 - r0, n});
  for (int r = r0; r < r1; ++r)
    for (int c = 0; c < n; ++c) out.at2(r - r0, c) = ta.at2(r, c);
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi, r0, r1, n]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      Tensor& ga = g(ai);
      for (int r = r0; r < r1; ++r)
        for (int c = 0; c < n; ++c) ga.at2(r, c) += go.at2(r - r0, c);
    };
  }
  return o;
}

Var Tape::slice_cols(Var a, int c0, int c1) {
  const Tensor& ta = val(a);
  require_2d(ta, "slice_cols");
  const int m = ta.dim(0), n = ta.dim(1);
  require(0 <= c0 && c0 < c1 && c1 <= n, "slice_cols: bad range");
  Tensor out({m, c1 - c0});
  for (int r = 0; r < m; ++r)
    for (int c = c0; c < c1; ++c) out.at2(r, c - c0) = ta.at2(r, c);
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi, c0, c1, m]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      Tensor& ga = g(ai);
      for (int r = 0; r < m; ++r)
        for (int c = c0; c < c1; ++c) ga.at2(r, c) += go.at2(r, c - c0);
    };
  }
  return o;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  int n = val(parts[0]).dim(1);
  int m = 0;
  bool any = false;
  for (Var p : parts) {
    require_2d(val(p), "concat_rows part");
    require(val(p).dim(1) == n, "concat_rows: column mismatch");
    m += val(p).dim(0);
    any = any || needs(p);
  }
  Tensor out({m, n});
  int r_off = 0;
  for (Var p : parts) {
    const Tensor& tp = val(p);
    for (int r = 0; r < tp.dim(0); ++r)
      for (int c = 0; c < n; ++c) out.at2(r_off + r, c) = tp.at2(r, c);
    r_off += tp.dim(0);
  }
  Var o = push(std::move(out), any);
  if (nodes_.back().requires_grad) {
    std::vector<int> idxs;
    std::vector<int> rows;
    std::vector<char> track;
    for (Var p : parts) {
      idxs.push_back(p.idx);
      rows.push_back(val(p).dim(0));
      track.push_back(needs(p) ? 1 : 0);
    }
    const int oi = o.idx;
    nodes_.back().back = [this, idxs, rows, track, oi, n]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      int off = 0;
      for (std::size_t k = 0; k < idxs.size(); ++k) {
        if (track[k]) {
          Tensor& gp = g(idxs[k]);
          for (int r = 0; r < rows[k]; ++r)
            for (int c = 0; c < n; ++c) gp.at2(r, c) += go.at2(off + r, c);
        }
        off += rows[k];
      }
    };
  }
  return o;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  int m = val(parts[0]).dim(0);
  int n = 0;
  bool any = false;
  for (Var p : parts) {
    require_2d(val(p), "concat_cols part");
    require(val(p).dim(0) == m, "concat_cols: row mismatch");
    n += val(p).dim(1);
    any = any || needs(p);
  }
  Tensor out({m, n});
  int c_off = 0;
  for (Var p : parts) {
    const Tensor& tp = val(p);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < tp.dim(1); ++c) out.at2(r, c_off + c) = tp.at2(r, c);
    c_off += tp.dim(1);
  }
  Var o = push(std::move(out), any);
  if (nodes_.back().requires_grad) {
    std::vector<int> idxs;
    std::vector<int> cols;
    std::vector<char> track;
    for (Var p : parts) {
      idxs.push_back(p.idx);
      cols.push_back(val(p).dim(1));
      track.push_back(needs(p) ? 1 : 0);
    }
    const int oi = o.idx;
    nodes_.back().back = [this, idxs, cols, track, oi, m]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      int off = 0;
      for (std::size_t k = 0; k < idxs.size(); ++k) {
        if (track[k]) {
          Tensor& gp = g(idxs[k]);
          for (int r = 0; r < m; ++r)
            for (int c = 0; c < cols[k]; ++c) gp.at2(r, c) += go.at2(r, off + c);
        }
        off += cols[k];
      }
    };
  }
  return o;
}

Var Tape::gather(Var a, std::shared_ptr<const std::vector<std::int64_t>> map, std::vector<int> out_shape) {
  const Tensor& ta = val(a);
  require(static_cast<std::int64_t>(map->size()) == Tensor::count(out_shape), "gather: map size != out shape");
  Tensor out(std::move(out_shape));
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = ta[(*map)[static_cast<std::size_t>(i)]];
  Var o = push(std::move(out), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi, map]() {
      const Tensor& go = nodes_[static_cast<std::size_t>(oi)].grad;
      Tensor& ga = g(ai);
      for (std::int64_t i = 0; i < go.numel(); ++i) ga[(*map)[static_cast<std::size_t>(i)]] += go[i];
    };
  }
  return o;
}

Var Tape::sum(Var a) {
  const Tensor& ta = val(a);
  double s = 0.0;
  for (std::int64_t i = 0; i < ta.numel(); ++i) s += ta[i];
  Var o = push(Tensor::scalar(s), needs(a));
  if (nodes_.back().requires_grad) {
    const int ai = a.idx, oi = o.idx;
    nodes_.back().back = [this, ai, oi]() {
      const double go = nodes_[static_cast<std::size_t>(oi)].grad[0];
      Tensor& ga = g(ai);
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += go;
    };
  }
  return o;
}

const Tensor& Tape::value(Var v) const {
  return nodes_.at(static_cast<std::size_t>(v.idx)).value;
}

const Tensor& Tape::grad(Var v) const {
  return nodes_.at(static_cast<std::size_t>(v.idx)).grad;
}

void Tape::backward(Var loss) {
  require(val(loss).numel() == 1, "backward: loss must be scalar");
  g(loss.idx)[0] += 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && !n.grad.empty() && n.back) n.back();
  }
}

void Tape::clear() { nodes_.clear(); }

}  // namespace pnpt
