#pragma once

#include <numbers>
#include <optional>

#include "graphmaker/diffusion.hpp"
#include "graphmaker/nn.hpp"

namespace graphmaker {

// Dimensions of one denoising network family.
struct DenoiserConfig {
  bool conditional = false;
  std::vector<int32_t> cards;  // per-attribute cardinalities as seen by the net
  int64_t num_labels = 0;      // C_Y, used when conditional
  int64_t hidden = 512;        // node representation size d
  int64_t label_hidden = 64;   // d_y
  int64_t time_hidden = 32;    // d_t
  int64_t edge_hidden = 128;   // edge head hidden size
  int64_t layers = 2;          // MPNN layers L (also async trunk depth)
  double dropout = 0.0;

  int64_t num_attrs() const { return static_cast<int64_t>(cards.size()); }
  int64_t onehot_dim() const {
    int64_t s = 0;
    for (int32_t c : cards) s += c;
    return s;
  }
  std::vector<int64_t> head_offsets() const {
    std::vector<int64_t> off = {0};
    for (int32_t c : cards) off.push_back(off.back() + c);
    return off;
  }
  // H_v = X^(0..L) [ || Y^(0..L) ] || h^(t)
  int64_t readout_dim() const {
    int64_t d = (layers + 1) * hidden + time_hidden;
    if (conditional) d += (layers + 1) * label_hidden;
    return d;
  }
};

// ---- shared input encodings ----

inline Tensor onehot_attrs(const std::vector<int32_t>& attrs, const std::vector<int32_t>& cards,
                           int64_t n) {
  const int64_t nf = static_cast<int64_t>(cards.size());
  std::vector<int64_t> off = {0};
  for (int32_t c : cards) off.push_back(off.back() + c);
  Tensor out({n, off.back()});
  for (int64_t v = 0; v < n; ++v) {
    for (int64_t f = 0; f < nf; ++f) {
      const int32_t a = attrs[static_cast<size_t>(v * nf + f)];
      out.at(v, off[static_cast<size_t>(f)] + a) = 1.0;
    }
  }
  return out;
}

inline Tensor onehot_labels(const std::vector<int32_t>& labels, int64_t num_labels) {
  Tensor out({static_cast<int64_t>(labels.size()), num_labels});
  for (size_t v = 0; v < labels.size(); ++v) {
    out.at(static_cast<int64_t>(v), labels[v]) = 1.0;
  }
  return out;
}

// Mean aggregation over N(v) plus v itself; rows in ascending neighbor order.
inline Propagator mean_self_propagator(int64_t n, const std::vector<Edge>& edges) {
  std::vector<std::vector<int32_t>> nbr(static_cast<size_t>(n));
  for (const Edge& e : edges) {
    nbr[static_cast<size_t>(e.first)].push_back(e.second);
    nbr[static_cast<size_t>(e.second)].push_back(e.first);
  }
  Csr csr;
  csr.ncols = n;
  csr.indptr.reserve(static_cast<size_t>(n) + 1);
  csr.indptr.push_back(0);
  for (int64_t v = 0; v < n; ++v) {
    auto& row = nbr[static_cast<size_t>(v)];
    row.push_back(static_cast<int32_t>(v));
    std::sort(row.begin(), row.end());
    const double w = 1.0 / static_cast<double>(row.size());
    for (int32_t u : row) {
      csr.col.push_back(u);
      csr.w.push_back(w);
    }
    csr.indptr.push_back(static_cast<int64_t>(csr.col.size()));
  }
  return Propagator::from(std::move(csr));
}

// Normalized time features: the scalar t/T plus sin/cos at four geometric
// frequencies. Keeps the conditioning informative even for T as small as 3.
inline Tensor time_features(int64_t t, int64_t total) {
  const double tau = static_cast<double>(t) / static_cast<double>(std::max<int64_t>(total, 1));
  std::vector<double> f = {tau};
  for (int i = 0; i < 4; ++i) {
    const double w = std::numbers::pi * static_cast<double>(1 << i);
    f.push_back(std::sin(w * tau));
    f.push_back(std::cos(w * tau));
  }
  return Tensor::row(std::move(f));
}

constexpr int64_t kTimeFeatureDim = 9;

// ---- MPNN encoder with decoders ----

// Parameter layout of one message-passing denoiser (indices into ParamSet).
struct MpnnLayout {
  DenseLayer input1, input2;      // one-hot attrs -> d
  DenseLayer time1, time2;        // time features -> d_t
  std::vector<DenseLayer> tproj;  // h^(t) -> d, holds b_X
  std::vector<int> w_xx;          // aggregated [X || Y] -> d
  std::vector<int> ln_g, ln_b;    // sigma affine per layer
  // conditional label channel
  DenseLayer y_in;
  std::vector<int> w_yy, y_b, y_ln_g, y_ln_b;
  // decoders
  DenseLayer attr_head;           // d_H -> sum C_f
  DenseLayer edge_h1, edge_h2;    // d_H -> edge_hidden -> 2
};

enum class MpnnRole { kAttrDenoise, kEdgeDenoise };

struct MpnnDenoiser {
  DenoiserConfig cfg;
  MpnnRole role = MpnnRole::kAttrDenoise;
  ParamSet params;
  MpnnLayout layout;
};

inline MpnnDenoiser make_mpnn_denoiser(const DenoiserConfig& cfg, MpnnRole role, uint64_t seed) {
  MpnnDenoiser d;
  d.cfg = cfg;
  d.role = role;
  Rng rng(seed, {0x3a4e7ULL});
  ParamSet& ps = d.params;
  MpnnLayout& L = d.layout;
  const int64_t dh = cfg.hidden, dy = cfg.label_hidden, dt = cfg.time_hidden;
  L.input1 = make_dense(ps, "input1", cfg.onehot_dim(), dh, rng, Activation::kRelu,
                        Normalize::kLayerNorm, cfg.dropout);
  L.input2 = make_dense(ps, "input2", dh, dh, rng);
  L.time1 = make_dense(ps, "time1", kTimeFeatureDim, dt, rng, Activation::kRelu);
  L.time2 = make_dense(ps, "time2", dt, dt, rng);
  const int64_t agg_in = cfg.conditional ? dh + dy : dh;
  for (int64_t l = 0; l < cfg.layers; ++l) {
    const std::string tag = std::to_string(l);
    L.tproj.push_back(make_dense(ps, "tproj" + tag, dt, dh, rng));
    L.w_xx.push_back(ps.add("w_xx" + tag, kaiming_uniform({agg_in, dh}, agg_in, rng)));
    L.ln_g.push_back(ps.add("ln_g" + tag, Tensor::full({1, dh}, 1.0)));
    L.ln_b.push_back(ps.add("ln_b" + tag, Tensor({1, dh})));
  }
  if (cfg.conditional) {
    L.y_in = make_dense(ps, "y_in", cfg.num_labels, dy, rng);
    for (int64_t l = 0; l < cfg.layers; ++l) {
      const std::string tag = std::to_string(l);
      L.w_yy.push_back(ps.add("w_yy" + tag, kaiming_uniform({dy, dy}, dy, rng)));
      L.y_b.push_back(ps.add("y_b" + tag, Tensor({1, dy})));
      L.y_ln_g.push_back(ps.add("y_ln_g" + tag, Tensor::full({1, dy}, 1.0)));
      L.y_ln_b.push_back(ps.add("y_ln_b" + tag, Tensor({1, dy})));
    }
  }
  if (role == MpnnRole::kAttrDenoise) {
    L.attr_head = make_dense(ps, "attr_head", cfg.readout_dim(), cfg.onehot_dim(), rng);
  } else {
    L.edge_h1 = make_dense(ps, "edge_h1", cfg.readout_dim(), cfg.edge_hidden, rng,
                           Activation::kRelu, Normalize::kLayerNorm, cfg.dropout);
    L.edge_h2 = make_dense(ps, "edge_h2", cfg.edge_hidden, 2, rng);
  }
  return d;
}

inline Var time_embedding(Tape& t, const Bound& p, const MpnnDenoiser& d, int64_t step,
                          int64_t total) {
  Var f = t.leaf(time_features(step, total));
  Rng unused(0);
  Var h = layer_forward(t, f, p, d.layout.time1, false, unused);
  return layer_forward(t, h, p, d.layout.time2, false, unused);
}

// H_v = X^(t,0) || ... || X^(t,L) [ || Y^(0,0..L) ] || h^(t).
// One mean-aggregation pass per layer over the self-inclusive neighborhood;
// the conditional label channel runs in parallel without time conditioning
// and feeds [X_u || Y_u] into the X update.
inline Var mpnn_encode(Tape& t, const Bound& p, const MpnnDenoiser& d, const Tensor& onehot_x,
                       const Propagator& prop, const Tensor* onehot_y, int64_t step, int64_t total,
                       bool training, Rng& rng) {
  const DenoiserConfig& cfg = d.cfg;
  const MpnnLayout& L = d.layout;
  if (cfg.conditional && onehot_y == nullptr) {
    throw ConfigError("mpnn_encode: conditional model requires labels");
  }
  const int64_t n = onehot_x.rows();
  Var x_in = t.leaf(onehot_x);
  Var x = layer_forward(t, x_in, p, L.input1, training, rng);
  x = layer_forward(t, x, p, L.input2, training, rng);
  Var h = time_embedding(t, p, d, step, total);

  std::vector<Var> reads = {x};
  Var y{};
  std::vector<Var> y_reads;
  if (cfg.conditional) {
    Var y_in = t.leaf(*onehot_y);
    y = layer_forward(t, y_in, p, L.y_in, training, rng);
    y_reads.push_back(y);
  }

  for (int64_t l = 0; l < cfg.layers; ++l) {
    const size_t li = static_cast<size_t>(l);
    Var agg_x = ops::propagate(t, x, prop);
    Var agg_in = agg_x;
    if (cfg.conditional) {
      Var agg_y = ops::propagate(t, y, prop);
      agg_in = ops::concat_cols(t, {agg_x, agg_y});
    }
    Var msg = ops::matmul(t, agg_in, p[L.w_xx[li]]);
    Var time_part = ops::add_rowvec(t, ops::matmul(t, h, p[L.tproj[li].w]), p[L.tproj[li].b]);
    Var pre = ops::add(t, msg, ops::broadcast_rows(t, time_part, n));
    Var act = ops::relu(t, pre);
    act = ops::layer_norm(t, act, p[L.ln_g[li]], p[L.ln_b[li]]);
    x = ops::dropout(t, act, cfg.dropout, rng, training);
    reads.push_back(x);

    if (cfg.conditional) {
      Var agg_y2 = ops::propagate(t, y, prop);
      Var ymsg = ops::matmul(t, agg_y2, p[L.w_yy[li]]);
      Var ypre = ops::add_rowvec(t, ymsg, p[L.y_b[li]]);
      Var yact = ops::relu(t, ypre);
      yact = ops::layer_norm(t, yact, p[L.y_ln_g[li]], p[L.y_ln_b[li]]);
      y = ops::dropout(t, yact, cfg.dropout, rng, training);
      y_reads.push_back(y);
    }
  }

  std::vector<Var> parts = reads;
  parts.insert(parts.end(), y_reads.begin(), y_reads.end());
  parts.push_back(ops::broadcast_rows(t, h, n));
  return ops::concat_cols(t, parts);
}

// Per-node class logits, one independent linear head per attribute laid out
// in the one-hot column blocks.
inline Var attr_logits(Tape& t, const Bound& p, const MpnnDenoiser& d, Var h_read) {
  if (d.role != MpnnRole::kAttrDenoise) throw ConfigError("attr_logits: wrong denoiser role");
  Rng unused(0);
  return layer_forward(t, h_read, p, d.layout.attr_head, false, unused);
}

// Two-class logits for node pairs from an MLP over H_u (*) H_v.
inline Var edge_logits(Tape& t, const Bound& p, const MpnnDenoiser& d, Var h_read,
                       const std::vector<int32_t>& us, const std::vector<int32_t>& vs,
                       bool training, Rng& rng) {
  if (d.role != MpnnRole::kEdgeDenoise) throw ConfigError("edge_logits: wrong denoiser role");
  if (us.size() != vs.size()) throw DimensionError("edge_logits: pair lists differ in length");
  Var hu = ops::gather_rows(t, h_read, us);
  Var hv = ops::gather_rows(t, h_read, vs);
  Var prod = ops::hadamard(t, hu, hv);
  Var z = layer_forward(t, prod, p, d.layout.edge_h1, training, rng);
  return layer_forward(t, z, p, d.layout.edge_h2, false, rng);
}

// ---- async attribute MLP ----

struct AsyncAttrMlp {
  DenoiserConfig cfg;
  ParamSet params;
  DenseLayer time1, time2;
  DenseLayer l1, l2;
  DenseLayer heads;
};

inline AsyncAttrMlp make_async_attr_mlp(const DenoiserConfig& cfg, uint64_t seed) {
  AsyncAttrMlp m;
  m.cfg = cfg;
  Rng rng(seed, {0xa5c1ULL});
  const int64_t dt = cfg.time_hidden;
  const int64_t in = cfg.onehot_dim() + (cfg.conditional ? cfg.num_labels : 0) + dt;
  m.time1 = make_dense(m.params, "time1", kTimeFeatureDim, dt, rng, Activation::kRelu);
  m.time2 = make_dense(m.params, "time2", dt, dt, rng);
  m.l1 = make_dense(m.params, "l1", in, cfg.hidden, rng, Activation::kRelu, Normalize::kLayerNorm,
                    cfg.dropout);
  m.l2 = make_dense(m.params, "l2", cfg.hidden, cfg.hidden, rng, Activation::kRelu,
                    Normalize::kLayerNorm, cfg.dropout);
  m.heads = make_dense(m.params, "heads", cfg.hidden, cfg.onehot_dim(), rng);
  return m;
}

// Structure-free per-cell logits from (X^(t), optional labels, t).
inline Var async_attr_logits(Tape& t, const Bound& p, const AsyncAttrMlp& m,
                             const Tensor& onehot_x, const Tensor* onehot_y, int64_t step,
                             int64_t total, bool training, Rng& rng) {
  if (m.cfg.conditional && onehot_y == nullptr) {
    throw ConfigError("async_attr_logits: conditional model requires labels");
  }
  const int64_t n = onehot_x.rows();
  Rng unused(0);
  Var f = t.leaf(time_features(step, total));
  Var h = layer_forward(t, f, p, m.time1, false, unused);
  h = layer_forward(t, h, p, m.time2, false, unused);
  std::vector<Var> parts = {t.leaf(onehot_x)};
  if (m.cfg.conditional) parts.push_back(t.leaf(*onehot_y));
  parts.push_back(ops::broadcast_rows(t, h, n));
  Var z = ops::concat_cols(t, parts);
  z = layer_forward(t, z, p, m.l1, training, rng);
  z = layer_forward(t, z, p, m.l2, training, rng);
  return layer_forward(t, z, p, m.heads, false, rng);
}

// ---- no-tape edge scorer for the generation hot path ----

// Streams minibatches of pairs through the edge head with reusable buffers.
// Uses the same kernels as the tape ops, so scores match edge_logits
// bit for bit (dropout off).
class EdgeScorer {
 public:
  EdgeScorer(const MpnnDenoiser& d, const Tensor& h_read) : d_(d), h_(h_read) {
    if (d.role != MpnnRole::kEdgeDenoise) throw ConfigError("EdgeScorer: wrong denoiser role");
  }

  // p_edge[i] = softmax(logits_i)[1]
  void score(const std::vector<int32_t>& us, const std::vector<int32_t>& vs,
             std::vector<double>& p_edge) {
    const int64_t pcount = static_cast<int64_t>(us.size());
    const int64_t dh = h_.cols();
    const ParamSet& ps = d_.params;
    prod_ = Tensor({pcount, dh});
    parallel_chunks(pcount, 2048, [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) {
        const double* a = h_.data.data() + static_cast<int64_t>(us[static_cast<size_t>(i)]) * dh;
        const double* b = h_.data.data() + static_cast<int64_t>(vs[static_cast<size_t>(i)]) * dh;
        double* o = prod_.data.data() + i * dh;
        for (int64_t j = 0; j < dh; ++j) o[j] = a[j] * b[j];
      }
    });
    matmul_into(prod_, ps.value(d_.layout.edge_h1.w), z1_);
    kernels::add_rowvec_inplace(z1_, ps.value(d_.layout.edge_h1.b));
    kernels::relu_inplace(z1_);
    Tensor z1n;
    kernels::layer_norm(z1_, ps.value(d_.layout.edge_h1.gamma), ps.value(d_.layout.edge_h1.beta),
                        z1n);
    matmul_into(z1n, ps.value(d_.layout.edge_h2.w), z2_);
    kernels::add_rowvec_inplace(z2_, ps.value(d_.layout.edge_h2.b));
    kernels::softmax_rows_inplace(z2_);
    p_edge.resize(static_cast<size_t>(pcount));
    for (int64_t i = 0; i < pcount; ++i) p_edge[static_cast<size_t>(i)] = z2_.at(i, 1);
  }

 private:
  const MpnnDenoiser& d_;
  const Tensor& h_;
  Tensor prod_, z1_, z2_;
};

}  // namespace graphmaker
