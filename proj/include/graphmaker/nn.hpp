#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphmaker/autodiff.hpp"

namespace graphmaker {

// Named parameter tensors. Order is insertion order and is part of the
// checkpoint contract.
class ParamSet {
 public:
  int add(std::string name, Tensor value) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    index_[name] = static_cast<int>(values_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size()) - 1;
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  size_t size() const { return values_.size(); }
  const std::string& name(int i) const { return names_[static_cast<size_t>(i)]; }
  Tensor& value(int i) { return values_[static_cast<size_t>(i)]; }
  const Tensor& value(int i) const { return values_[static_cast<size_t>(i)]; }
  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, int> index_;
};

// Per-pass binding of every parameter as a tape leaf.
struct Bound {
  std::vector<Var> vars;
  Var operator[](int i) const { return vars[static_cast<size_t>(i)]; }
};

inline Bound bind_params(Tape& tape, const ParamSet& ps, bool requires_grad = true) {
  Bound b;
  b.vars.reserve(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    b.vars.push_back(tape.leaf(ps.value(static_cast<int>(i)), requires_grad));
  }
  return b;
}

inline std::vector<Tensor> grads_of(Tape& tape, const Bound& b) {
  std::vector<Tensor> out;
  out.reserve(b.vars.size());
  for (Var v : b.vars) out.push_back(tape.grad(v));
  return out;
}

// He-style uniform fan-in init, zero biases.
inline Tensor kaiming_uniform(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
  for (double& v : t.data) v = rng.uniform_sym(limit);
  return t;
}

enum class Activation { kNone, kRelu };
enum class Normalize { kNone, kLayerNorm };

// One linear layer plus the optional relu -> layer norm -> dropout stack.
struct DenseLayer {
  int w = -1, b = -1;
  int gamma = -1, beta = -1;
  Activation act = Activation::kNone;
  Normalize norm = Normalize::kNone;
  double dropout = 0.0;
};

inline DenseLayer make_dense(ParamSet& ps, const std::string& name, int64_t in, int64_t out,
                             Rng& rng, Activation act = Activation::kNone,
                             Normalize norm = Normalize::kNone, double dropout = 0.0) {
  DenseLayer l;
  l.w = ps.add(name + ".w", kaiming_uniform({in, out}, in, rng));
  l.b = ps.add(name + ".b", Tensor({1, out}));
  if (norm == Normalize::kLayerNorm) {
    l.gamma = ps.add(name + ".ln_g", Tensor::full({1, out}, 1.0));
    l.beta = ps.add(name + ".ln_b", Tensor({1, out}));
  }
  l.act = act;
  l.norm = norm;
  l.dropout = dropout;
  return l;
}

// y = dropout(layernorm(act(x W + b))). Dropout is identity when training is
// off.
inline Var layer_forward(Tape& t, Var x, const Bound& p, const DenseLayer& l, bool training,
                         Rng& rng) {
  Var y = ops::add_rowvec(t, ops::matmul(t, x, p[l.w]), p[l.b]);
  if (l.act == Activation::kRelu) y = ops::relu(t, y);
  if (l.norm == Normalize::kLayerNorm) y = ops::layer_norm(t, y, p[l.gamma], p[l.beta]);
  if (l.dropout > 0.0) y = ops::dropout(t, y, l.dropout, rng, training);
  return y;
}

// Scales gradients so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.data) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.data) v *= scale;
    }
  }
  return norm;
}

// AMSGrad with bias correction (the PyTorch formulation).
class AmsGrad {
 public:
  explicit AmsGrad(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
            const std::vector<double>& lrs) {
    if (params.size() != grads.size() || params.size() != lrs.size()) {
      throw ArgumentError("amsgrad: param/grad/lr count mismatch");
    }
    if (m_.empty()) {
      for (const Tensor& p : params) {
        m_.emplace_back(p.shape);
        v_.emplace_back(p.shape);
        vhat_.emplace_back(p.shape);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i];
      const Tensor& g = grads[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      Tensor& vh = vhat_[i];
      const double lr = lrs[i];
      for (size_t j = 0; j < p.data.size(); ++j) {
        m.data[j] = beta1_ * m.data[j] + (1.0 - beta1_) * g.data[j];
        v.data[j] = beta2_ * v.data[j] + (1.0 - beta2_) * g.data[j] * g.data[j];
        vh.data[j] = std::max(vh.data[j], v.data[j]);
        const double denom = std::sqrt(vh.data[j] / bc2) + eps_;
        p.data[j] -= lr * (m.data[j] / bc1) / denom;
      }
    }
  }

  int64_t steps() const { return t_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

  // Exposed for checkpointing.
  std::vector<Tensor>& m() { return m_; }
  std::vector<Tensor>& v() { return v_; }
  std::vector<Tensor>& vhat() { return vhat_; }
  void restore(int64_t t, std::vector<Tensor> m, std::vector<Tensor> v, std::vector<Tensor> vh) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
    vhat_ = std::move(vh);
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_, vhat_;
};

// Compares analytic gradients against central finite differences
// (f(x+h) - f(x-h)) / 2h componentwise; returns the max relative error with
// denominator max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<double()>& eval, std::vector<Tensor*> params,
                         const std::vector<Tensor>& analytic, double h = 1e-5) {
  if (params.size() != analytic.size()) throw ArgumentError("grad_check: size mismatch");
  double max_rel = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    for (size_t j = 0; j < t.data.size(); ++j) {
      const double saved = t.data[j];
      t.data[j] = saved + h;
      const double fp = eval();
      t.data[j] = saved - h;
      const double fm = eval();
      t.data[j] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p].data[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace graphmaker
