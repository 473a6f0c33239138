#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "graphmaker/rng.hpp"
#include "graphmaker/tensor.hpp"

namespace graphmaker {

// Forward kernels shared by the tape ops and the no-tape inference paths.
namespace kernels {

inline void relu_inplace(Tensor& x) {
  for (double& v : x.data) v = v > 0.0 ? v : 0.0;
}

// Row-wise layer normalization with learned affine, epsilon 1e-5.
// Optionally records x_hat and the per-row inverse stddev for backward.
inline void layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& out,
                       Tensor* xhat_out = nullptr, std::vector<double>* inv_std_out = nullptr) {
  const int64_t n = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine size mismatch");
  }
  out = Tensor({n, d});
  if (xhat_out) *xhat_out = Tensor({n, d});
  if (inv_std_out) inv_std_out->assign(static_cast<size_t>(n), 0.0);
  constexpr double kEps = 1e-5;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = x.data.data() + i * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    if (inv_std_out) (*inv_std_out)[static_cast<size_t>(i)] = inv_std;
    for (int64_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * inv_std;
      if (xhat_out) xhat_out->data[static_cast<size_t>(i * d + j)] = xh;
      out.data[static_cast<size_t>(i * d + j)] =
          gamma.data[static_cast<size_t>(j)] * xh + beta.data[static_cast<size_t>(j)];
    }
  }
}

inline void add_rowvec_inplace(Tensor& x, const Tensor& r) {
  const int64_t n = x.rows(), d = x.cols();
  if (r.numel() != d) throw DimensionError("add_rowvec: size mismatch");
  parallel_chunks(n, 1024, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      double* row = x.data.data() + i * d;
      for (int64_t j = 0; j < d; ++j) row[j] += r.data[static_cast<size_t>(j)];
    }
  });
}

// Numerically stabilized row softmax.
inline void softmax_rows_inplace(Tensor& x) {
  const int64_t n = x.rows(), d = x.cols();
  for (int64_t i = 0; i < n; ++i) {
    double* row = x.data.data() + i * d;
    double m = row[0];
    for (int64_t j = 1; j < d; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - m);
      s += row[j];
    }
    for (int64_t j = 0; j < d; ++j) row[j] /= s;
  }
}

}  // namespace kernels

// Weighted sparse row aggregation: out[i] = sum_k w[k] * x[col[k]]. Used for
// neighborhood means and the normalized propagations of the discriminators.
struct Csr {
  std::vector<int64_t> indptr;  // size nrows + 1
  std::vector<int32_t> col;
  std::vector<double> w;
  int64_t ncols = 0;

  int64_t nrows() const { return static_cast<int64_t>(indptr.size()) - 1; }

  Csr transposed() const {
    Csr t;
    t.ncols = nrows();
    t.indptr.assign(static_cast<size_t>(ncols) + 1, 0);
    for (int32_t c : col) t.indptr[static_cast<size_t>(c) + 1]++;
    for (int64_t i = 0; i < ncols; ++i) {
      t.indptr[static_cast<size_t>(i) + 1] += t.indptr[static_cast<size_t>(i)];
    }
    t.col.resize(col.size());
    t.w.resize(w.size());
    std::vector<int64_t> cur(t.indptr.begin(), t.indptr.end() - 1);
    for (int64_t r = 0; r < nrows(); ++r) {
      for (int64_t k = indptr[static_cast<size_t>(r)]; k < indptr[static_cast<size_t>(r) + 1];
           ++k) {
        const int64_t pos = cur[static_cast<size_t>(col[static_cast<size_t>(k)])]++;
        t.col[static_cast<size_t>(pos)] = static_cast<int32_t>(r);
        t.w[static_cast<size_t>(pos)] = w[static_cast<size_t>(k)];
      }
    }
    return t;
  }

  void multiply(const Tensor& x, Tensor& out) const {
    if (x.rows() != ncols) throw DimensionError("csr multiply: shape mismatch");
    const int64_t d = x.cols();
    out = Tensor({nrows(), d});
    parallel_chunks(nrows(), 256, [&](int64_t r0, int64_t r1) {
      for (int64_t i = r0; i < r1; ++i) {
        double* orow = out.data.data() + i * d;
        for (int64_t k = indptr[static_cast<size_t>(i)]; k < indptr[static_cast<size_t>(i) + 1];
             ++k) {
          const double wk = w[static_cast<size_t>(k)];
          const double* xrow =
              x.data.data() + static_cast<int64_t>(col[static_cast<size_t>(k)]) * d;
          for (int64_t j = 0; j < d; ++j) orow[j] += wk * xrow[j];
        }
      }
    });
  }
};

// A sparse operator paired with its transpose so the backward pass does not
// rebuild structure.
struct Propagator {
  Csr fwd;
  Csr bwd;
  static Propagator from(Csr c) {
    Propagator p;
    p.bwd = c.transposed();
    p.fwd = std::move(c);
    return p;
  }
};

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Records primitive ops during the forward pass and
// replays them backward to accumulate one gradient per parameter leaf.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  bool needs_grad(Var v) const { return nodes_[check(v)].needs_grad; }

  // Gradient of the last backward() w.r.t. v; zeros if v was never reached.
  Tensor grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.data.empty()) return Tensor(n.value.shape);
    return n.grad;
  }

  Tensor& grad_mut(Var v) {
    Node& n = nodes_[check(v)];
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
    return n.grad;
  }

  bool has_grad(Var v) const { return !nodes_[check(v)].grad.data.empty(); }

  void backward(Var loss) {
    Node& ln = nodes_[check(loss)];
    if (ln.value.numel() != 1) throw DimensionError("backward: loss must be scalar");
    grad_mut(loss).data[0] = 1.0;
    run_backward();
  }

  // Seeds the gradient of an interior var and replays; lets callers split a
  // graph into stages (e.g. per-chunk decoder passes feeding one encoder).
  void backward_from(Var v, const Tensor& seed) {
    Tensor& g = grad_mut(v);
    if (!g.same_shape(seed)) throw DimensionError("backward_from: seed shape mismatch");
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += seed.data[i];
    run_backward();
  }

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&)> bw) {
    nodes_.push_back(Node{std::move(value), Tensor{}, needs_grad, std::move(bw)});
    return Var{static_cast<int32_t>(nodes_.size()) - 1};
  }

  void set_backward(Var v, std::function<void(Tape&)> bw) {
    nodes_[check(v)].backward = std::move(bw);
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&)> backward;
  };

  size_t check(Var v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
      throw ArgumentError("tape: invalid var");
    }
    return static_cast<size_t>(v.id);
  }

  void run_backward() {
    for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.backward && n.needs_grad && !n.grad.data.empty()) n.backward(*this);
    }
  }

  std::vector<Node> nodes_;
};

namespace ops {

inline Var matmul(Tape& t, Var a, Var b) {
  Tensor out = matmul_raw(t.value(a), t.value(b));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [a, b, r](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      if (tp.needs_grad(a)) matmul_nt_into(g, tp.value(b), tp.grad_mut(a), /*accumulate=*/true);
      if (tp.needs_grad(b)) matmul_tn_into(tp.value(a), g, tp.grad_mut(b), /*accumulate=*/true);
    });
  }
  return r;
}

inline Var add(Tape& t, Var a, Var b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (!va.same_shape(vb)) throw DimensionError("add: shape mismatch");
  Tensor out = va;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [a, b, r](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      for (Var v : {a, b}) {
        if (!tp.needs_grad(v)) continue;
        Tensor& gv = tp.grad_mut(v);
        for (size_t i = 0; i < g.data.size(); ++i) gv.data[i] += g.data[i];
      }
    });
  }
  return r;
}

// ca*a + cb*b with fixed scalars.
inline Var axpby(Tape& t, Var a, Var b, double ca, double cb) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (!va.same_shape(vb)) throw DimensionError("axpby: shape mismatch");
  Tensor out(va.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ca * va.data[i] + cb * vb.data[i];
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [a, b, ca, cb, r](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      if (tp.needs_grad(a)) {
        Tensor& ga = tp.grad_mut(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += ca * g.data[i];
      }
      if (tp.needs_grad(b)) {
        Tensor& gb = tp.grad_mut(b);
        for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += cb * g.data[i];
      }
    });
  }
  return r;
}

// (n x d) + broadcast (1 x d) row.
inline Var add_rowvec(Tape& t, Var x, Var row) {
  const Tensor& vx = t.value(x);
  const Tensor& vr = t.value(row);
  if (vr.numel() != vx.cols()) throw DimensionError("add_rowvec: size mismatch");
  Tensor out = vx;
  kernels::add_rowvec_inplace(out, vr);
  const bool ng = t.needs_grad(x) || t.needs_grad(row);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [x, row, r](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      const int64_t n = g.rows(), d = g.cols();
      if (tp.needs_grad(x)) {
        Tensor& gx = tp.grad_mut(x);
        for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
      }
      if (tp.needs_grad(row)) {
        Tensor& gr = tp.grad_mut(row);
        for (int64_t i = 0; i < n; ++i) {
          const double* grow = g.data.data() + i * d;
          for (int64_t j = 0; j < d; ++j) gr.data[static_cast<size_t>(j)] += grow[j];
        }
      }
    });
  }
  return r;
}

inline Var relu(Tape& t, Var x) {
  Tensor out = t.value(x);
  kernels::relu_inplace(out);
  const bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [x, r](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      const Tensor& vx = tp.value(x);
      Tensor& gx = tp.grad_mut(x);
      for (size_t i = 0; i < g.data.size(); ++i) {
        if (vx.data[i] > 0.0) gx.data[i] += g.data[i];
      }
    });
  }
  return r;
}

inline Var layer_norm(Tape& t, Var x, Var gamma, Var beta) {
  const bool ng = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
  auto saved_xhat = std::make_shared<Tensor>();
  auto saved_inv = std::make_shared<std::vector<double>>();
  Tensor out;
  kernels::layer_norm(t.value(x), t.value(gamma), t.value(beta), out, ng ? saved_xhat.get() : nullptr,
                      ng ? saved_inv.get() : nullptr);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [x, gamma, beta, r, saved_xhat, saved_inv](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      const Tensor& xh = *saved_xhat;
      const int64_t n = g.rows(), d = g.cols();
      const Tensor& vg = tp.value(gamma);
      if (tp.needs_grad(gamma)) {
        Tensor& gg = tp.grad_mut(gamma);
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t j = 0; j < d; ++j) {
            gg.data[static_cast<size_t>(j)] +=
                g.data[static_cast<size_t>(i * d + j)] * xh.data[static_cast<size_t>(i * d + j)];
          }
        }
      }
      if (tp.needs_grad(beta)) {
        Tensor& gb = tp.grad_mut(beta);
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t j = 0; j < d; ++j) {
            gb.data[static_cast<size_t>(j)] += g.data[static_cast<size_t>(i * d + j)];
          }
        }
      }
      if (tp.needs_grad(x)) {
        Tensor& gx = tp.grad_mut(x);
        for (int64_t i = 0; i < n; ++i) {
          const double inv_std = (*saved_inv)[static_cast<size_t>(i)];
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double dxh =
                g.data[static_cast<size_t>(i * d + j)] * vg.data[static_cast<size_t>(j)];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh.data[static_cast<size_t>(i * d + j)];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (int64_t j = 0; j < d; ++j) {
            const double dxh =
                g.data[static_cast<size_t>(i * d + j)] * vg.data[static_cast<size_t>(j)];
            gx.data[static_cast<size_t>(i * d + j)] +=
                inv_std *
                (dxh - mean_dxh - xh.data[static_cast<size_t>(i * d + j)] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return r;
}

// Inverted dropout; identity when training is off or rate is 0.
inline Var dropout(Tape& t, Var x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ArgumentError("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  const Tensor& vx = t.value(x);
  auto mask = std::make_shared<std::vector<double>>(vx.data.size());
  const double keep = 1.0 - rate;
  Tensor out(vx.shape);
  for (size_t i = 0; i < vx.data.size(); ++i) {
    const double m = rng.next_double() < keep ? 1.0 / keep : 0.0;
    (*mask)[i] = m;
    out.data[i] = vx.data[i] * m;
  }
  const bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [x, r, mask](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      Tensor& gx = tp.grad_mut(x);
      for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * (*mask)[i];
    });
  }
  return r;
}

inline Var hadamard(Tape& t, Var a, Var b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (!va.same_shape(vb)) throw DimensionError("hadamard: shape mismatch");
  Tensor out(va.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] * vb.data[i];
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [a, b, r](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      if (tp.needs_grad(a)) {
        Tensor& ga = tp.grad_mut(a);
        const Tensor& vb2 = tp.value(b);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * vb2.data[i];
      }
      if (tp.needs_grad(b)) {
        Tensor& gb = tp.grad_mut(b);
        const Tensor& va2 = tp.value(a);
        for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * va2.data[i];
      }
    });
  }
  return r;
}

inline Var concat_cols(Tape& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw ArgumentError("concat_cols: empty input");
  const int64_t n = t.value(xs[0]).rows();
  int64_t dtot = 0;
  bool ng = false;
  for (Var v : xs) {
    if (t.value(v).rows() != n) throw DimensionError("concat_cols: row mismatch");
    dtot += t.value(v).cols();
    ng = ng || t.needs_grad(v);
  }
  Tensor out({n, dtot});
  int64_t off = 0;
  for (Var v : xs) {
    const Tensor& vx = t.value(v);
    const int64_t d = vx.cols();
    for (int64_t i = 0; i < n; ++i) {
      std::copy_n(vx.data.data() + i * d, d, out.data.data() + i * dtot + off);
    }
    off += d;
  }
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    auto parts = std::make_shared<std::vector<Var>>(xs);
    t.set_backward(r, [parts, r, n, dtot](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      int64_t off2 = 0;
      for (Var v : *parts) {
        const int64_t d = tp.value(v).cols();
        if (tp.needs_grad(v)) {
          Tensor& gv = tp.grad_mut(v);
          for (int64_t i = 0; i < n; ++i) {
            const double* gsrc = g.data.data() + i * dtot + off2;
            double* gdst = gv.data.data() + i * d;
            for (int64_t j = 0; j < d; ++j) gdst[j] += gsrc[j];
          }
        }
        off2 += d;
      }
    });
  }
  return r;
}

inline Var gather_rows(Tape& t, Var x, std::vector<int32_t> idx) {
  const Tensor& vx = t.value(x);
  const int64_t d = vx.cols();
  const int64_t p = static_cast<int64_t>(idx.size());
  Tensor out({p, d});
  for (int64_t i = 0; i < p; ++i) {
    const int64_t src = idx[static_cast<size_t>(i)];
    if (src < 0 || src >= vx.rows()) throw ArgumentError("gather_rows: index out of range");
    std::copy_n(vx.data.data() + src * d, d, out.data.data() + i * d);
  }
  const bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    auto ids = std::make_shared<std::vector<int32_t>>(std::move(idx));
    t.set_backward(r, [x, r, ids, d](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      Tensor& gx = tp.grad_mut(x);
      for (int64_t i = 0; i < static_cast<int64_t>(ids->size()); ++i) {
        const double* gsrc = g.data.data() + i * d;
        double* gdst = gx.data.data() + static_cast<int64_t>((*ids)[static_cast<size_t>(i)]) * d;
        for (int64_t j = 0; j < d; ++j) gdst[j] += gsrc[j];
      }
    });
  }
  return r;
}

// Sparse propagation out = P.fwd * x; the caller keeps P alive for the step.
inline Var propagate(Tape& t, Var x, const Propagator& p) {
  Tensor out;
  p.fwd.multiply(t.value(x), out);
  const bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    const Propagator* pp = &p;
    t.set_backward(r, [x, r, pp](Tape& tp) {
      Tensor gback;
      pp->bwd.multiply(tp.grad_mut(r), gback);
      Tensor& gx = tp.grad_mut(x);
      for (size_t i = 0; i < gback.data.size(); ++i) gx.data[i] += gback.data[i];
    });
  }
  return r;
}

// Tiles a (1 x d) row to (n x d); backward sums over rows.
inline Var broadcast_rows(Tape& t, Var row, int64_t n) {
  const Tensor& vr = t.value(row);
  if (vr.rows() != 1) throw DimensionError("broadcast_rows: expect a single row");
  const int64_t d = vr.cols();
  Tensor out({n, d});
  for (int64_t i = 0; i < n; ++i) std::copy_n(vr.data.data(), d, out.data.data() + i * d);
  const bool ng = t.needs_grad(row);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [row, r, n, d](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      Tensor& gr = tp.grad_mut(row);
      for (int64_t i = 0; i < n; ++i) {
        const double* grow = g.data.data() + i * d;
        for (int64_t j = 0; j < d; ++j) gr.data[static_cast<size_t>(j)] += grow[j];
      }
    });
  }
  return r;
}

inline Var row_sum(Tape& t, Var x) {
  const Tensor& vx = t.value(x);
  const int64_t n = vx.rows(), d = vx.cols();
  Tensor out({n, 1});
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = vx.data.data() + i * d;
    for (int64_t j = 0; j < d; ++j) s += row[j];
    out.data[static_cast<size_t>(i)] = s;
  }
  const bool ng = t.needs_grad(x);
  Var r = t.push(std::move(out), ng, nullptr);
  if (ng) {
    t.set_backward(r, [x, r, d](Tape& tp) {
      const Tensor& g = tp.grad_mut(r);
      Tensor& gx = tp.grad_mut(x);
      const int64_t n2 = g.rows();
      for (int64_t i = 0; i < n2; ++i) {
        const double gi = g.data[static_cast<size_t>(i)];
        double* grow = gx.data.data() + i * d;
        for (int64_t j = 0; j < d; ++j) grow[j] += gi;
      }
    });
  }
  return r;
}

// Mean of -log softmax(logits)[target] over rows. Targets must be in [0, C).
inline Var softmax_cross_entropy(Tape& t, Var logits, std::vector<int32_t> targets) {
  const Tensor& vl = t.value(logits);
  const int64_t n = vl.rows(), c = vl.cols();
  if (static_cast<int64_t>(targets.size()) != n) {
    throw DimensionError("softmax_ce: one target per row required");
  }
  if (c < 2) throw DimensionError("softmax_ce: need at least two classes");
  auto probs = std::make_shared<Tensor>(vl);
  kernels::softmax_rows_inplace(*probs);
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const int32_t tgt = targets[static_cast<size_t>(i)];
    if (tgt < 0 || tgt >= c) throw ArgumentError("softmax_ce: target class out of range");
    loss -= std::log(std::max(probs->data[static_cast<size_t>(i * c + tgt)], 1e-300));
  }
  loss /= static_cast<double>(n);
  const bool ng = t.needs_grad(logits);
  Var r = t.push(Tensor({1, 1}, {loss}), ng, nullptr);
  if (ng) {
    auto tgts = std::make_shared<std::vector<int32_t>>(std::move(targets));
    t.set_backward(r, [logits, r, probs, tgts, n, c](Tape& tp) {
      const double gl = tp.grad_mut(r).data[0] / static_cast<double>(n);
      Tensor& gx = tp.grad_mut(logits);
      for (int64_t i = 0; i < n; ++i) {
        const double* prow = probs->data.data() + i * c;
        double* grow = gx.data.data() + i * c;
        const int32_t tgt = (*tgts)[static_cast<size_t>(i)];
        for (int64_t j = 0; j < c; ++j) {
          grow[j] += gl * (prow[j] - (j == tgt ? 1.0 : 0.0));
        }
      }
    });
  }
  return r;
}

// Cross entropy over column blocks: block f spans [offsets[f], offsets[f+1])
// and holds the class logits of attribute f. Mean over all n*F cells.
inline Var blockwise_softmax_ce(Tape& t, Var logits, std::vector<int64_t> offsets,
                                std::vector<int32_t> targets) {
  const Tensor& vl = t.value(logits);
  const int64_t n = vl.rows(), c = vl.cols();
  const int64_t nf = static_cast<int64_t>(offsets.size()) - 1;
  if (offsets.front() != 0 || offsets.back() != c) {
    throw DimensionError("blockwise_ce: offsets must span the logit columns");
  }
  if (static_cast<int64_t>(targets.size()) != n * nf) {
    throw DimensionError("blockwise_ce: one target per cell required");
  }
  auto probs = std::make_shared<Tensor>(vl);
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double* row = probs->data.data() + i * c;
    for (int64_t f = 0; f < nf; ++f) {
      const int64_t b0 = offsets[static_cast<size_t>(f)], b1 = offsets[static_cast<size_t>(f) + 1];
      double m = row[b0];
      for (int64_t j = b0 + 1; j < b1; ++j) m = std::max(m, row[j]);
      double s = 0.0;
      for (int64_t j = b0; j < b1; ++j) {
        row[j] = std::exp(row[j] - m);
        s += row[j];
      }
      for (int64_t j = b0; j < b1; ++j) row[j] /= s;
      const int32_t tgt = targets[static_cast<size_t>(i * nf + f)];
      if (tgt < 0 || tgt >= b1 - b0) throw ArgumentError("blockwise_ce: target out of range");
      loss -= std::log(std::max(row[b0 + tgt], 1e-300));
    }
  }
  loss /= static_cast<double>(n * nf);
  const bool ng = t.needs_grad(logits);
  Var r = t.push(Tensor({1, 1}, {loss}), ng, nullptr);
  if (ng) {
    auto offs = std::make_shared<std::vector<int64_t>>(std::move(offsets));
    auto tgts = std::make_shared<std::vector<int32_t>>(std::move(targets));
    t.set_backward(r, [logits, r, probs, offs, tgts, n, c, nf](Tape& tp) {
      const double gl = tp.grad_mut(r).data[0] / static_cast<double>(n * nf);
      Tensor& gx = tp.grad_mut(logits);
      for (int64_t i = 0; i < n; ++i) {
        const double* prow = probs->data.data() + i * c;
        double* grow = gx.data.data() + i * c;
        for (int64_t f = 0; f < nf; ++f) {
          const int64_t b0 = (*offs)[static_cast<size_t>(f)],
                        b1 = (*offs)[static_cast<size_t>(f) + 1];
          const int32_t tgt = (*tgts)[static_cast<size_t>(i * nf + f)];
          for (int64_t j = b0; j < b1; ++j) {
            grow[j] += gl * (prow[j] - (j - b0 == tgt ? 1.0 : 0.0));
          }
        }
      }
    });
  }
  return r;
}

}  // namespace ops

}  // namespace graphmaker
