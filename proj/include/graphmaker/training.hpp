#pragma once

#include <cstring>
#include <limits>
#include <optional>

#include "graphmaker/config.hpp"
#include "graphmaker/denoiser.hpp"

namespace graphmaker {

// Trained model bundle; also the checkpoint payload written to disk.
struct Checkpoint {
  static constexpr uint16_t kVersion = 1;
  TrainConfig cfg;
  NoiseSchedule sched;
  int64_t n = 0;
  std::vector<int32_t> cards;  // original attribute cardinalities
  int32_t num_labels = 0;
  std::vector<double> label_marg;  // empirical p(Y), empty when unlabeled
  bool label_as_attr = false;      // unconditional model of a labeled graph
  std::string graph_name;

  std::optional<MpnnDenoiser> sync_attr;   // sync variant only
  std::optional<AsyncAttrMlp> async_attr;  // async variant only
  std::optional<MpnnDenoiser> edge;

  AmsGrad opt_attr, opt_edge;
  int64_t step = 0;
  double best_val = std::numeric_limits<double>::infinity();

  // Cardinalities as the networks see them (label folded in when the model
  // is unconditional but the graph carries labels).
  std::vector<int32_t> data_cards() const {
    std::vector<int32_t> c = cards;
    if (label_as_attr) c.push_back(num_labels);
    return c;
  }
};

namespace detail {

// Training-side view of the graph: attributes with the label column folded
// in for unconditional modeling of labeled data.
struct WorkingData {
  std::vector<int32_t> attrs;  // n x F'
  std::vector<int32_t> cards;
  std::vector<int64_t> offsets;
  Tensor onehot_clean;
  std::optional<Tensor> onehot_y;  // when conditional
  AttributedGraph view;            // graph with working attrs (edges shared)
};

inline WorkingData make_working(const AttributedGraph& g, bool conditional) {
  WorkingData w;
  w.cards = g.cardinalities;
  if (!conditional && g.has_labels()) {
    w.cards.push_back(g.num_labels);
    const int64_t nf = g.num_attrs();
    w.attrs.reserve(static_cast<size_t>(g.n * (nf + 1)));
    for (int64_t v = 0; v < g.n; ++v) {
      for (int64_t f = 0; f < nf; ++f) w.attrs.push_back(g.attr(v, f));
      w.attrs.push_back(g.labels[static_cast<size_t>(v)]);
    }
  } else {
    w.attrs = g.attrs;
  }
  w.offsets = {0};
  for (int32_t c : w.cards) w.offsets.push_back(w.offsets.back() + c);
  w.onehot_clean = onehot_attrs(w.attrs, w.cards, g.n);
  if (conditional) w.onehot_y = onehot_labels(g.labels, g.num_labels);
  w.view = make_graph(g.n, g.edges, w.cards, w.attrs, {}, 0, g.name);
  return w;
}

inline DenoiserConfig denoiser_config(const TrainConfig& cfg, const std::vector<int32_t>& cards,
                                      int32_t num_labels, bool edge_net) {
  DenoiserConfig d;
  d.conditional = cfg.conditional;
  d.cards = cards;
  d.num_labels = num_labels;
  d.hidden = edge_net ? cfg.hidden_edge : cfg.hidden_attr;
  d.label_hidden = cfg.label_hidden;
  d.time_hidden = cfg.time_hidden;
  d.edge_hidden = cfg.edge_hidden;
  d.layers = cfg.layers;
  d.dropout = cfg.dropout;
  return d;
}

constexpr int64_t kEdgeChunk = 16384;

}  // namespace detail

// ---- loss pieces ----

struct StepLoss {
  double loss = 0.0;
  std::vector<Tensor> grads;  // aligned with the network's ParamSet
};

// Cross entropy of the attribute-denoising networks against the clean
// attributes, averaged over all n*F cells.
inline StepLoss attr_loss(const Checkpoint& ck, const detail::WorkingData& wd,
                          const std::vector<int32_t>& noisy_attrs,
                          const std::vector<Edge>* noisy_edges, int64_t t, bool training,
                          Rng& dropout_rng, bool want_grads) {
  StepLoss out;
  const Tensor ox = onehot_attrs(noisy_attrs, wd.cards, wd.view.n);
  const Tensor* oy = wd.onehot_y ? &*wd.onehot_y : nullptr;
  std::vector<int32_t> targets(wd.attrs.begin(), wd.attrs.end());
  Tape tape;
  Var logits;
  Bound b;
  if (ck.cfg.variant == "sync") {
    b = bind_params(tape, ck.sync_attr->params, want_grads);
    Propagator prop = mean_self_propagator(wd.view.n, *noisy_edges);
    Var h = mpnn_encode(tape, b, *ck.sync_attr, ox, prop, oy, t, ck.sched.total_steps, training,
                        dropout_rng);
    logits = attr_logits(tape, b, *ck.sync_attr, h);
  } else {
    b = bind_params(tape, ck.async_attr->params, want_grads);
    logits = async_attr_logits(tape, b, *ck.async_attr, ox, oy, t, ck.sched.total_steps, training,
                               dropout_rng);
  }
  Var loss = ops::blockwise_softmax_ce(tape, logits, wd.offsets, targets);
  out.loss = tape.value(loss).data[0];
  if (want_grads) {
    tape.backward(loss);
    out.grads = grads_of(tape, b);
  }
  return out;
}

// Edge-denoising cross entropy over a sampled pair minibatch, decoder run in
// bounded chunks so the pair batch size never dictates peak memory. The
// label for a pair is edge/no-edge in the clean graph.
inline StepLoss edge_loss(const Checkpoint& ck, const detail::WorkingData& wd,
                          const std::vector<int32_t>& enc_attrs,
                          const std::vector<Edge>& noisy_edges, int64_t t,
                          const std::vector<int32_t>& us, const std::vector<int32_t>& vs,
                          const std::vector<int32_t>& targets, bool training, Rng& dropout_rng,
                          bool want_grads) {
  StepLoss out;
  const MpnnDenoiser& net = *ck.edge;
  const Tensor ox = onehot_attrs(enc_attrs, wd.cards, wd.view.n);
  const Tensor* oy = wd.onehot_y ? &*wd.onehot_y : nullptr;
  Propagator prop = mean_self_propagator(wd.view.n, noisy_edges);

  Tape enc_tape;
  Bound enc_b = bind_params(enc_tape, net.params, want_grads);
  Var h = mpnn_encode(enc_tape, enc_b, net, ox, prop, oy, t, ck.sched.total_steps, training,
                      dropout_rng);
  const Tensor h_val = enc_tape.value(h);

  const int64_t total_pairs = static_cast<int64_t>(us.size());
  Tensor dh(h_val.shape);
  if (want_grads) {
    out.grads.clear();
    for (size_t i = 0; i < net.params.size(); ++i) {
      out.grads.emplace_back(net.params.value(static_cast<int>(i)).shape);
    }
  }
  for (int64_t c0 = 0; c0 < total_pairs; c0 += detail::kEdgeChunk) {
    const int64_t c1 = std::min(total_pairs, c0 + detail::kEdgeChunk);
    std::vector<int32_t> cus(us.begin() + c0, us.begin() + c1);
    std::vector<int32_t> cvs(vs.begin() + c0, vs.begin() + c1);
    std::vector<int32_t> ctg(targets.begin() + c0, targets.begin() + c1);
    Tape tape;
    Bound b = bind_params(tape, net.params, want_grads);
    Var hv = tape.leaf(h_val, want_grads);
    Var logits = edge_logits(tape, b, net, hv, cus, cvs, training, dropout_rng);
    Var ce = ops::softmax_cross_entropy(tape, logits, ctg);
    const double weight = static_cast<double>(c1 - c0) / static_cast<double>(total_pairs);
    out.loss += tape.value(ce).data[0] * weight;
    if (want_grads) {
      tape.backward_from(ce, Tensor({1, 1}, {weight}));
      for (size_t i = 0; i < out.grads.size(); ++i) {
        const Tensor gi = tape.grad(b.vars[i]);
        for (size_t j = 0; j < gi.data.size(); ++j) out.grads[i].data[j] += gi.data[j];
      }
      const Tensor gh = tape.grad(hv);
      for (size_t j = 0; j < gh.data.size(); ++j) dh.data[j] += gh.data[j];
    }
  }
  if (want_grads) {
    enc_tape.backward_from(h, dh);
    for (size_t i = 0; i < out.grads.size(); ++i) {
      const Tensor gi = enc_tape.grad(enc_b.vars[i]);
      for (size_t j = 0; j < gi.data.size(); ++j) out.grads[i].data[j] += gi.data[j];
    }
  }
  return out;
}

// Uniform pair minibatch (i.i.d. over unordered pairs) with clean-graph
// labels.
inline void sample_pair_batch(const AttributedGraph& g, int64_t batch, Rng& rng,
                              std::vector<int32_t>& us, std::vector<int32_t>& vs,
                              std::vector<int32_t>& targets) {
  us.resize(static_cast<size_t>(batch));
  vs.resize(static_cast<size_t>(batch));
  targets.resize(static_cast<size_t>(batch));
  const int64_t total = g.num_pairs();
  for (int64_t i = 0; i < batch; ++i) {
    const Edge e = pair_from_index(g.n, static_cast<int64_t>(rng.next_below(total)));
    us[static_cast<size_t>(i)] = e.first;
    vs[static_cast<size_t>(i)] = e.second;
    targets[static_cast<size_t>(i)] = g.has_edge(e.first, e.second) ? 1 : 0;
  }
}

// One combined training objective evaluation: sync couples both networks on
// a shared corruption; async evaluates each network on its own window.
struct LossStepResult {
  double loss = 0.0;
  double attr_ce = 0.0, edge_ce = 0.0;
  std::vector<Tensor> grads_attr, grads_edge;
};

inline LossStepResult loss_step(const AttributedGraph& g, Checkpoint& ck, Rng& rng,
                                bool want_grads = true, bool training = true) {
  detail::WorkingData wd = detail::make_working(g, ck.cfg.conditional);
  LossStepResult out;
  std::vector<int32_t> us, vs, tg;
  if (ck.cfg.variant == "sync") {
    const int64_t t = 1 + static_cast<int64_t>(rng.next_below(ck.sched.total_steps));
    const uint64_t cseed = rng.next_u64();
    NoisyGraph ng = corrupt(wd.view, ck.sched, t, cseed);
    Rng drop_a = rng.fork(0xd0a);
    StepLoss al = attr_loss(ck, wd, ng.attrs, &ng.edges, t, training, drop_a, want_grads);
    sample_pair_batch(wd.view, ck.cfg.edge_batch, rng, us, vs, tg);
    Rng drop_e = rng.fork(0xd0e);
    StepLoss el = edge_loss(ck, wd, ng.attrs, ng.edges, t, us, vs, tg, training, drop_e, want_grads);
    out.attr_ce = al.loss;
    out.edge_ce = el.loss;
    out.loss = al.loss + el.loss;
    out.grads_attr = std::move(al.grads);
    out.grads_edge = std::move(el.grads);
  } else {
    // attribute window
    const auto& tx = ck.sched.steps_attr;
    const int64_t t_attr = tx[static_cast<size_t>(rng.next_below(tx.size()))];
    std::vector<int32_t> noisy = corrupt_attrs(wd.view, ck.sched, t_attr, rng.next_u64());
    Rng drop_a = rng.fork(0xd0a);
    StepLoss al = attr_loss(ck, wd, noisy, nullptr, t_attr, training, drop_a, want_grads);
    // edge window, clean attributes
    const auto& ta = ck.sched.steps_edge;
    const int64_t t_edge = ta[static_cast<size_t>(rng.next_below(ta.size()))];
    std::vector<Edge> noisy_e = corrupt_edges(wd.view, ck.sched, t_edge, rng.next_u64());
    sample_pair_batch(wd.view, ck.cfg.edge_batch, rng, us, vs, tg);
    Rng drop_e = rng.fork(0xd0e);
    StepLoss el =
        edge_loss(ck, wd, wd.attrs, noisy_e, t_edge, us, vs, tg, training, drop_e, want_grads);
    out.attr_ce = al.loss;
    out.edge_ce = el.loss;
    out.loss = al.loss + el.loss;
    out.grads_attr = std::move(al.grads);
    out.grads_edge = std::move(el.grads);
  }
  return out;
}

// ---- ELBO-proxy validation ----

// Frozen draws: fixed timesteps, corruption substreams, and pair samples,
// decided once at training start. The proxy is the mean denoising cross
// entropy over them; lower is better.
struct ValDraw {
  int64_t t = 1;
  uint64_t seed = 0;
};

inline std::vector<ValDraw> make_val_draws(const std::vector<int32_t>& window, int64_t count,
                                           Rng& rng) {
  std::vector<ValDraw> out;
  for (int64_t i = 0; i < count; ++i) {
    ValDraw d;
    d.t = window[static_cast<size_t>(rng.next_below(window.size()))];
    d.seed = rng.next_u64();
    out.push_back(d);
  }
  return out;
}

inline double elbo_proxy_attr(const Checkpoint& ck, const detail::WorkingData& wd,
                              const std::vector<ValDraw>& draws) {
  double total = 0.0;
  for (const ValDraw& d : draws) {
    std::vector<int32_t> noisy = corrupt_attrs(wd.view, ck.sched, d.t, d.seed);
    std::vector<Edge> noisy_e;
    const std::vector<Edge>* ep = nullptr;
    if (ck.cfg.variant == "sync") {
      noisy_e = corrupt_edges(wd.view, ck.sched, d.t, d.seed);
      ep = &noisy_e;
    }
    Rng unused(0);
    total += attr_loss(ck, wd, noisy, ep, d.t, false, unused, false).loss;
  }
  return total / static_cast<double>(draws.size());
}

inline double elbo_proxy_edge(const Checkpoint& ck, const detail::WorkingData& wd,
                              const std::vector<ValDraw>& draws) {
  double total = 0.0;
  for (const ValDraw& d : draws) {
    std::vector<Edge> noisy_e = corrupt_edges(wd.view, ck.sched, d.t, d.seed);
    const std::vector<int32_t>* enc_attrs = &wd.attrs;
    std::vector<int32_t> noisy_attrs;
    if (ck.cfg.variant == "sync") {
      noisy_attrs = corrupt_attrs(wd.view, ck.sched, d.t, d.seed);
      enc_attrs = &noisy_attrs;
    }
    std::vector<int32_t> us, vs, tg;
    Rng prng(d.seed, {0x9a125ULL});
    sample_pair_batch(wd.view, ck.cfg.edge_batch, prng, us, vs, tg);
    Rng unused(0);
    total += edge_loss(ck, wd, *enc_attrs, noisy_e, d.t, us, vs, tg, false, unused, false).loss;
  }
  return total / static_cast<double>(draws.size());
}

// ---- training loops ----

namespace detail {

struct EarlyStop {
  double best = std::numeric_limits<double>::infinity();
  int64_t since_improve = 0;
  bool improved(double v) {
    if (v < best) {
      best = v;
      since_improve = 0;
      return true;
    }
    ++since_improve;
    return false;
  }
};

inline std::vector<Tensor> snapshot(const ParamSet& ps) { return ps.values(); }
inline void restore(ParamSet& ps, const std::vector<Tensor>& snap) { ps.values() = snap; }

}  // namespace detail

// Trains the configured variant to early stop and returns the best-proxy
// parameters. Pure function of (graph, config): identical seeds give
// bitwise-identical checkpoints.
inline Checkpoint train(const AttributedGraph& g, TrainConfig cfg,
                        std::ostream* log = nullptr) {
  cfg.validate();
  if (cfg.conditional && !g.has_labels()) {
    throw ConfigError("train: conditional model requires labels");
  }
  Checkpoint ck;
  ck.cfg = cfg;
  ck.n = g.n;
  ck.cards = g.cardinalities;
  ck.num_labels = g.num_labels;
  ck.label_as_attr = !cfg.conditional && g.has_labels();
  ck.graph_name = g.name;
  if (g.has_labels()) ck.label_marg = label_marginal(g);

  detail::WorkingData wd = detail::make_working(g, cfg.conditional);
  Marginals marg = empirical_marginals(wd.view);
  ck.sched = cfg.variant == "sync"
                 ? make_sync_schedule(cfg.sync_steps, cfg.cosine_s, marg)
                 : make_async_schedule(cfg.attr_steps, cfg.edge_steps, cfg.cosine_s, marg);

  const DenoiserConfig acfg = detail::denoiser_config(cfg, wd.cards, g.num_labels, false);
  const DenoiserConfig ecfg = detail::denoiser_config(cfg, wd.cards, g.num_labels, true);
  Rng master(cfg.seed, {0x7ea1ULL});
  if (cfg.variant == "sync") {
    ck.sync_attr = make_mpnn_denoiser(acfg, MpnnRole::kAttrDenoise, master.next_u64());
  } else {
    ck.async_attr = make_async_attr_mlp(acfg, master.next_u64());
  }
  ck.edge = make_mpnn_denoiser(ecfg, MpnnRole::kEdgeDenoise, master.next_u64());
  ck.opt_attr = AmsGrad(cfg.beta1, cfg.beta2, cfg.adam_eps);
  ck.opt_edge = AmsGrad(cfg.beta1, cfg.beta2, cfg.adam_eps);

  Rng val_rng = master.fork(0xva1);
  const std::vector<ValDraw> val_attr = make_val_draws(ck.sched.steps_attr, cfg.val_draws, val_rng);
  const std::vector<ValDraw> val_edge = make_val_draws(ck.sched.steps_edge, cfg.val_draws, val_rng);

  auto check_finite = [](double v, int64_t step) {
    if (!std::isfinite(v)) {
      throw TrainingError("training diverged (non-finite loss) at step " + std::to_string(step));
    }
  };

  if (cfg.variant == "sync") {
    Rng rng = master.fork(0x57e9);
    detail::EarlyStop stop;
    std::vector<Tensor> best_a = detail::snapshot(ck.sync_attr->params);
    std::vector<Tensor> best_e = detail::snapshot(ck.edge->params);
    for (int64_t step = 1; step <= cfg.max_steps; ++step) {
      LossStepResult r = loss_step(g, ck, rng, true, true);
      check_finite(r.loss, step);
      std::vector<Tensor> all = r.grads_attr;
      all.insert(all.end(), r.grads_edge.begin(), r.grads_edge.end());
      clip_global_norm(all, cfg.clip_norm);
      const size_t na = r.grads_attr.size();
      std::vector<Tensor> ga(all.begin(), all.begin() + na);
      std::vector<Tensor> ge(all.begin() + na, all.end());
      ck.opt_attr.step(ck.sync_attr->params.values(), ga,
                       std::vector<double>(ga.size(), cfg.lr_attr));
      ck.opt_edge.step(ck.edge->params.values(), ge, std::vector<double>(ge.size(), cfg.lr_edge));
      ck.step = step;
      if (step % cfg.eval_interval == 0) {
        const double proxy =
            elbo_proxy_attr(ck, wd, val_attr) + elbo_proxy_edge(ck, wd, val_edge);
        check_finite(proxy, step);
        if (log) {
          (*log) << "step=" << step << " loss=" << r.loss << " proxy=" << proxy << "\n";
        }
        if (stop.improved(proxy)) {
          best_a = detail::snapshot(ck.sync_attr->params);
          best_e = detail::snapshot(ck.edge->params);
        } else if (stop.since_improve >= cfg.patience) {
          break;
        }
      }
    }
    detail::restore(ck.sync_attr->params, best_a);
    detail::restore(ck.edge->params, best_e);
    ck.best_val = stop.best;
  } else {
    // attribute network first, then the edge network; they share nothing
    Rng rng_a = master.fork(0x57ea);
    detail::EarlyStop stop_a;
    std::vector<Tensor> best_a = detail::snapshot(ck.async_attr->params);
    const auto& tx = ck.sched.steps_attr;
    for (int64_t step = 1; step <= cfg.max_steps; ++step) {
      const int64_t t = tx[static_cast<size_t>(rng_a.next_below(tx.size()))];
      std::vector<int32_t> noisy = corrupt_attrs(wd.view, ck.sched, t, rng_a.next_u64());
      Rng drop = rng_a.fork(0xd0a);
      StepLoss sl = attr_loss(ck, wd, noisy, nullptr, t, true, drop, true);
      check_finite(sl.loss, step);
      clip_global_norm(sl.grads, cfg.clip_norm);
      ck.opt_attr.step(ck.async_attr->params.values(), sl.grads,
                       std::vector<double>(sl.grads.size(), cfg.lr_attr));
      if (step % cfg.eval_interval == 0) {
        const double proxy = elbo_proxy_attr(ck, wd, val_attr);
        check_finite(proxy, step);
        if (log) (*log) << "attr step=" << step << " loss=" << sl.loss << " proxy=" << proxy << "\n";
        if (stop_a.improved(proxy)) {
          best_a = detail::snapshot(ck.async_attr->params);
        } else if (stop_a.since_improve >= cfg.patience) {
          break;
        }
      }
    }
    detail::restore(ck.async_attr->params, best_a);

    Rng rng_e = master.fork(0x57ee);
    detail::EarlyStop stop_e;
    std::vector<Tensor> best_e = detail::snapshot(ck.edge->params);
    const auto& ta = ck.sched.steps_edge;
    std::vector<int32_t> us, vs, tg;
    for (int64_t step = 1; step <= cfg.max_steps; ++step) {
      const int64_t t = ta[static_cast<size_t>(rng_e.next_below(ta.size()))];
      std::vector<Edge> noisy_e = corrupt_edges(wd.view, ck.sched, t, rng_e.next_u64());
      sample_pair_batch(wd.view, cfg.edge_batch, rng_e, us, vs, tg);
      Rng drop = rng_e.fork(0xd0e);
      StepLoss sl = edge_loss(ck, wd, wd.attrs, noisy_e, t, us, vs, tg, true, drop, true);
      check_finite(sl.loss, step);
      clip_global_norm(sl.grads, cfg.clip_norm);
      ck.opt_edge.step(ck.edge->params.values(), sl.grads,
                       std::vector<double>(sl.grads.size(), cfg.lr_edge));
      ck.step = step;
      if (step % cfg.eval_interval == 0) {
        const double proxy = elbo_proxy_edge(ck, wd, val_edge);
        check_finite(proxy, step);
        if (log) (*log) << "edge step=" << step << " loss=" << sl.loss << " proxy=" << proxy << "\n";
        if (stop_e.improved(proxy)) {
          best_e = detail::snapshot(ck.edge->params);
        } else if (stop_e.since_improve >= cfg.patience) {
          break;
        }
      }
    }
    detail::restore(ck.edge->params, best_e);
    ck.best_val = stop_a.best + stop_e.best;
  }
  return ck;
}

// ---- checkpoint serialization ----

namespace ckio {

inline void put_u32(std::string& s, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}
inline void put_u64(std::string& s, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  s.append(b, 8);
}
inline void put_i64(std::string& s, int64_t v) { put_u64(s, static_cast<uint64_t>(v)); }
inline void put_f64(std::string& s, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  s.append(b, 8);
}
inline void put_str(std::string& s, const std::string& v) {
  put_u32(s, static_cast<uint32_t>(v.size()));
  s.append(v);
}
inline void put_f64_vec(std::string& s, const std::vector<double>& v) {
  put_u64(s, v.size());
  for (double x : v) put_f64(s, x);
}
inline void put_i32_vec(std::string& s, const std::vector<int32_t>& v) {
  put_u64(s, v.size());
  for (int32_t x : v) put_u32(s, static_cast<uint32_t>(x));
}
inline void put_tensor(std::string& s, const Tensor& t) {
  put_u32(s, static_cast<uint32_t>(t.shape.size()));
  for (int64_t d : t.shape) put_i64(s, d);
  put_f64_vec(s, t.data);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size()) throw FormatError("checkpoint: truncated section");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string v = buf.substr(pos, n);
    pos += n;
    return v;
  }
  std::vector<double> f64_vec() {
    const uint64_t n = u64();
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::vector<int32_t> i32_vec() {
    const uint64_t n = u64();
    std::vector<int32_t> v(n);
    for (auto& x : v) x = static_cast<int32_t>(u32());
    return v;
  }
  Tensor tensor() {
    const uint32_t rank = u32();
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = i64();
    std::vector<double> data = f64_vec();
    return Tensor(std::move(shape), std::move(data));
  }
};

inline std::string params_blob(const ParamSet& ps) {
  std::string s;
  put_u64(s, ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    put_str(s, ps.name(static_cast<int>(i)));
    put_tensor(s, ps.value(static_cast<int>(i)));
  }
  return s;
}

inline void load_params(const std::string& blob, ParamSet& ps) {
  Reader r(blob);
  const uint64_t count = r.u64();
  if (count != ps.size()) throw FormatError("checkpoint: parameter count mismatch");
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Tensor t = r.tensor();
    const int idx = ps.find(name);
    if (idx < 0) throw FormatError("checkpoint: unknown parameter " + name);
    if (t.shape != ps.value(idx).shape) {
      throw FormatError("checkpoint: shape mismatch for " + name);
    }
    ps.value(idx) = std::move(t);
  }
}

inline std::string opt_blob(AmsGrad& o) {
  std::string s;
  put_i64(s, o.steps());
  put_u64(s, o.m().size());
  for (size_t i = 0; i < o.m().size(); ++i) {
    put_tensor(s, o.m()[i]);
    put_tensor(s, o.v()[i]);
    put_tensor(s, o.vhat()[i]);
  }
  return s;
}

inline void load_opt(const std::string& blob, AmsGrad& o) {
  Reader r(blob);
  const int64_t t = r.i64();
  const uint64_t n = r.u64();
  std::vector<Tensor> m, v, vh;
  for (uint64_t i = 0; i < n; ++i) {
    m.push_back(r.tensor());
    v.push_back(r.tensor());
    vh.push_back(r.tensor());
  }
  o.restore(t, std::move(m), std::move(v), std::move(vh));
}

inline int64_t meta_int(const KvConfig& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint: missing " + key);
  return std::stoll(it->second);
}

}  // namespace ckio

inline void save_checkpoint(Checkpoint& ck, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> sections;

  std::string meta = train_config_text(ck.cfg);
  {
    std::ostringstream os;
    os << "meta.n=" << ck.n << "\n";
    os << "meta.num_labels=" << ck.num_labels << "\n";
    os << "meta.label_as_attr=" << (ck.label_as_attr ? "true" : "false") << "\n";
    os << "meta.name=" << ck.graph_name << "\n";
    os << "meta.cards=";
    for (size_t i = 0; i < ck.cards.size(); ++i) os << (i ? "," : "") << ck.cards[i];
    os << "\n";
    meta += os.str();
  }
  sections.emplace_back("config", meta);

  {
    std::string s;
    ckio::put_i64(s, ck.sched.total_steps);
    ckio::put_f64(s, ck.sched.s);
    ckio::put_i32_vec(s, ck.sched.steps_attr);
    ckio::put_i32_vec(s, ck.sched.steps_edge);
    ckio::put_f64_vec(s, ck.sched.alpha_bar_attr);
    ckio::put_f64_vec(s, ck.sched.alpha_bar_edge);
    ckio::put_f64(s, ck.sched.marginals.m_edge[0]);
    ckio::put_f64(s, ck.sched.marginals.m_edge[1]);
    ckio::put_u64(s, ck.sched.marginals.m_attr.size());
    for (const auto& v : ck.sched.marginals.m_attr) ckio::put_f64_vec(s, v);
    sections.emplace_back("schedule", s);
  }
  {
    std::string s;
    ckio::put_f64_vec(s, ck.label_marg);
    sections.emplace_back("label_marg", s);
  }
  if (ck.sync_attr) sections.emplace_back("attr.params", ckio::params_blob(ck.sync_attr->params));
  if (ck.async_attr) {
    sections.emplace_back("attr_mlp.params", ckio::params_blob(ck.async_attr->params));
  }
  sections.emplace_back("edge.params", ckio::params_blob(ck.edge->params));
  sections.emplace_back("attr.opt", ckio::opt_blob(ck.opt_attr));
  sections.emplace_back("edge.opt", ckio::opt_blob(ck.opt_edge));
  {
    std::string s;
    ckio::put_i64(s, ck.step);
    ckio::put_f64(s, ck.best_val);
    sections.emplace_back("trainer", s);
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
  f.write("GMKR1", 5);
  const uint16_t version = Checkpoint::kVersion;
  f.write(reinterpret_cast<const char*>(&version), 2);
  for (const auto& [name, payload] : sections) {
    std::string hdr;
    ckio::put_u32(hdr, static_cast<uint32_t>(name.size()));
    hdr += name;
    ckio::put_u64(hdr, payload.size());
    f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path.string());
  char magic[5];
  if (!f.read(magic, 5) || std::string(magic, 5) != "GMKR1") {
    throw FormatError("checkpoint: bad magic, expected \"GMKR1\"");
  }
  uint16_t version = 0;
  if (!f.read(reinterpret_cast<char*>(&version), 2) || version != Checkpoint::kVersion) {
    throw FormatError("checkpoint: unsupported version");
  }
  std::map<std::string, std::string> sections;
  for (;;) {
    uint32_t name_len;
    if (!f.read(reinterpret_cast<char*>(&name_len), 4)) break;
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) throw FormatError("checkpoint: truncated section name");
    uint64_t payload_len;
    if (!f.read(reinterpret_cast<char*>(&payload_len), 8)) {
      throw FormatError("checkpoint: truncated section header");
    }
    std::string payload(payload_len, '\0');
    if (!f.read(payload.data(), static_cast<std::streamsize>(payload_len))) {
      throw FormatError("checkpoint: truncated section payload");
    }
    sections[name] = std::move(payload);
  }
  auto section = [&](const std::string& name) -> const std::string& {
    auto it = sections.find(name);
    if (it == sections.end()) throw FormatError("checkpoint: missing section " + name);
    return it->second;
  };

  Checkpoint ck;
  {
    std::istringstream is(section("config"));
    KvConfig kv = parse_kv_text(is, "checkpoint");
    apply_train_overrides(ck.cfg, kv);
    ck.n = ckio::meta_int(kv, "meta.n");
    ck.num_labels = static_cast<int32_t>(ckio::meta_int(kv, "meta.num_labels"));
    ck.label_as_attr = kv.at("meta.label_as_attr") == "true";
    ck.graph_name = kv.count("meta.name") ? kv.at("meta.name") : "";
    std::stringstream cs(kv.at("meta.cards"));
    std::string tok;
    while (std::getline(cs, tok, ',')) ck.cards.push_back(std::stoi(tok));
  }
  {
    ckio::Reader r(section("schedule"));
    ck.sched.total_steps = r.i64();
    ck.sched.s = r.f64();
    ck.sched.steps_attr = r.i32_vec();
    ck.sched.steps_edge = r.i32_vec();
    ck.sched.alpha_bar_attr = r.f64_vec();
    ck.sched.alpha_bar_edge = r.f64_vec();
    ck.sched.marginals.m_edge[0] = r.f64();
    ck.sched.marginals.m_edge[1] = r.f64();
    const uint64_t nm = r.u64();
    for (uint64_t i = 0; i < nm; ++i) ck.sched.marginals.m_attr.push_back(r.f64_vec());
  }
  {
    ckio::Reader r(section("label_marg"));
    ck.label_marg = r.f64_vec();
  }
  const std::vector<int32_t> dcards = ck.data_cards();
  const DenoiserConfig acfg = detail::denoiser_config(ck.cfg, dcards, ck.num_labels, false);
  const DenoiserConfig ecfg = detail::denoiser_config(ck.cfg, dcards, ck.num_labels, true);
  if (ck.cfg.variant == "sync") {
    ck.sync_attr = make_mpnn_denoiser(acfg, MpnnRole::kAttrDenoise, 0);
    ckio::load_params(section("attr.params"), ck.sync_attr->params);
  } else {
    ck.async_attr = make_async_attr_mlp(acfg, 0);
    ckio::load_params(section("attr_mlp.params"), ck.async_attr->params);
  }
  ck.edge = make_mpnn_denoiser(ecfg, MpnnRole::kEdgeDenoise, 0);
  ckio::load_params(section("edge.params"), ck.edge->params);
  ck.opt_attr = AmsGrad(ck.cfg.beta1, ck.cfg.beta2, ck.cfg.adam_eps);
  ck.opt_edge = AmsGrad(ck.cfg.beta1, ck.cfg.beta2, ck.cfg.adam_eps);
  ckio::load_opt(section("attr.opt"), ck.opt_attr);
  ckio::load_opt(section("edge.opt"), ck.opt_edge);
  {
    ckio::Reader r(section("trainer"));
    ck.step = r.i64();
    ck.best_val = r.f64();
  }
  return ck;
}

}  // namespace graphmaker
