#include <catch_amalgamated.hpp>

#include "graphmaker/denoiser.hpp"

using namespace graphmaker;

namespace {

DenoiserConfig tiny_config(bool conditional) {
  DenoiserConfig cfg;
  cfg.conditional = conditional;
  cfg.cards = {2, 3};
  cfg.num_labels = conditional ? 2 : 0;
  cfg.hidden = 6;
  cfg.label_hidden = 4;
  cfg.time_hidden = 5;
  cfg.edge_hidden = 7;
  cfg.layers = 2;
  cfg.dropout = 0.0;
  return cfg;
}

struct TestGraph {
  int64_t n;
  std::vector<Edge> edges;
  std::vector<int32_t> attrs;
  std::vector<int32_t> labels;
};

TestGraph random_test_graph(int64_t n, double p, Rng& rng, const std::vector<int32_t>& cards,
                            int32_t num_labels) {
  TestGraph g;
  g.n = n;
  for (int32_t u = 0; u < n; ++u) {
    for (int32_t v = u + 1; v < n; ++v) {
      if (rng.next_double() < p) g.edges.push_back({u, v});
    }
  }
  for (int64_t v = 0; v < n; ++v) {
    for (int32_t c : cards) g.attrs.push_back(static_cast<int32_t>(rng.next_below(c)));
    if (num_labels > 0) g.labels.push_back(static_cast<int32_t>(rng.next_below(num_labels)));
  }
  return g;
}

Tensor encode_graph(const MpnnDenoiser& den, const TestGraph& g, int64_t t, int64_t total) {
  Tape tape;
  Bound b = bind_params(tape, den.params, false);
  Tensor ox = onehot_attrs(g.attrs, den.cfg.cards, g.n);
  Propagator prop = mean_self_propagator(g.n, g.edges);
  Rng rng(0);
  std::optional<Tensor> oy;
  if (den.cfg.conditional) oy = onehot_labels(g.labels, den.cfg.num_labels);
  Var h = mpnn_encode(tape, b, den, ox, prop, oy ? &*oy : nullptr, t, total, false, rng);
  return tape.value(h);
}

}  // namespace

TEST_CASE("time embedding shape and determinism") {
  DenoiserConfig cfg = tiny_config(false);
  MpnnDenoiser den = make_mpnn_denoiser(cfg, MpnnRole::kAttrDenoise, 3);
  Tape t;
  Bound b = bind_params(t, den.params, false);
  Var h0 = time_embedding(t, b, den, 0, 15);
  Var h0b = time_embedding(t, b, den, 0, 15);
  Var hT = time_embedding(t, b, den, 15, 15);
  CHECK(t.value(h0).cols() == cfg.time_hidden);
  CHECK(t.value(h0).data == t.value(h0b).data);
  CHECK(t.value(h0).data != t.value(hT).data);
}

TEST_CASE("readout dimension matches the concatenation arithmetic") {
  DenoiserConfig cfg;
  cfg.cards = {2};
  cfg.hidden = 512;
  cfg.time_hidden = 32;
  cfg.layers = 2;
  CHECK(cfg.readout_dim() == 512 * 3 + 32);
  cfg.conditional = true;
  cfg.num_labels = 7;
  cfg.label_hidden = 64;
  CHECK(cfg.readout_dim() == 512 * 3 + 64 * 3 + 32);
}

TEST_CASE("isolated node reduces to the self term") {
  DenoiserConfig cfg = tiny_config(false);
  MpnnDenoiser den = make_mpnn_denoiser(cfg, MpnnRole::kAttrDenoise, 17);
  // node 2 isolated in a 3-node graph
  TestGraph g{3, {{0, 1}}, {0, 1, 1, 0, 1, 2}, {}};
  Tensor h3 = encode_graph(den, g, 1, 3);
  // same node alone in a one-node graph
  TestGraph g1{1, {}, {1, 2}, {}};
  Tensor h1 = encode_graph(den, g1, 1, 3);
  for (int64_t j = 0; j < h1.cols(); ++j) {
    CHECK(h3.at(2, j) == h1.at(0, j));
  }
}

TEST_CASE("permutation equivariance of mpnn_encode") {
  Rng rng(2024);
  for (bool conditional : {false, true}) {
    DenoiserConfig cfg = tiny_config(conditional);
    MpnnDenoiser den = make_mpnn_denoiser(cfg, MpnnRole::kAttrDenoise, 5);
    for (int trial = 0; trial < 5; ++trial) {
      TestGraph g = random_test_graph(20, 0.2, rng, cfg.cards, cfg.num_labels);
      std::vector<int32_t> perm(20);
      for (int i = 0; i < 20; ++i) perm[static_cast<size_t>(i)] = i;
      rng.shuffle(perm);
      TestGraph pg;
      pg.n = 20;
      pg.attrs.resize(g.attrs.size());
      if (conditional) pg.labels.resize(g.labels.size());
      const int64_t nf = den.cfg.num_attrs();
      for (int64_t v = 0; v < 20; ++v) {
        const int32_t pv = perm[static_cast<size_t>(v)];
        for (int64_t f = 0; f < nf; ++f) {
          pg.attrs[static_cast<size_t>(pv * nf + f)] = g.attrs[static_cast<size_t>(v * nf + f)];
        }
        if (conditional) pg.labels[static_cast<size_t>(pv)] = g.labels[static_cast<size_t>(v)];
      }
      for (const Edge& e : g.edges) {
        int32_t a = perm[static_cast<size_t>(e.first)], b = perm[static_cast<size_t>(e.second)];
        pg.edges.push_back({std::min(a, b), std::max(a, b)});
      }
      Tensor h = encode_graph(den, g, 2, 3);
      Tensor hp = encode_graph(den, pg, 2, 3);
      for (int64_t v = 0; v < 20; ++v) {
        const int32_t pv = perm[static_cast<size_t>(v)];
        for (int64_t j = 0; j < h.cols(); ++j) {
          CHECK_THAT(hp.at(pv, j), Catch::Matchers::WithinAbs(h.at(v, j), 1e-10));
        }
      }
    }
  }
}

TEST_CASE("attr_logits zero case and shape") {
  DenoiserConfig cfg = tiny_config(false);
  MpnnDenoiser den = make_mpnn_denoiser(cfg, MpnnRole::kAttrDenoise, 9);
  // zero the head
  for (double& v : den.params.value(den.layout.attr_head.w).data) v = 0.0;
  Tape t;
  Bound b = bind_params(t, den.params, false);
  Var h = t.leaf(Tensor::zeros({4, cfg.readout_dim()}));
  Var logits = attr_logits(t, b, den, h);
  CHECK(t.value(logits).shape == std::vector<int64_t>{4, cfg.onehot_dim()});
  for (double v : t.value(logits).data) CHECK(v == 0.0);
}

TEST_CASE("edge logits are bitwise symmetric and collapse at zero rows") {
  DenoiserConfig cfg = tiny_config(false);
  MpnnDenoiser den = make_mpnn_denoiser(cfg, MpnnRole::kEdgeDenoise, 21);
  Rng rng(5);
  Tensor h({6, cfg.readout_dim()});
  for (double& v : h.data) v = rng.uniform_sym(1.0);
  // zero out node 3's representation
  for (int64_t j = 0; j < h.cols(); ++j) h.at(3, j) = 0.0;

  Tape t;
  Bound b = bind_params(t, den.params, false);
  Var hv = t.leaf(h);
  Rng drng(0);
  Var fwd = edge_logits(t, b, den, hv, {0, 1, 3, 3}, {1, 2, 4, 5}, false, drng);
  Var rev = edge_logits(t, b, den, hv, {1, 2, 4, 5}, {0, 1, 3, 3}, false, drng);
  CHECK(t.value(fwd).data == t.value(rev).data);
  // zero row pairs all evaluate to the MLP value at zero
  CHECK(t.value(fwd).at(2, 0) == t.value(fwd).at(3, 0));
  CHECK(t.value(fwd).at(2, 1) == t.value(fwd).at(3, 1));
}

TEST_CASE("edge scorer matches the tape path bitwise") {
  DenoiserConfig cfg = tiny_config(false);
  MpnnDenoiser den = make_mpnn_denoiser(cfg, MpnnRole::kEdgeDenoise, 31);
  Rng rng(6);
  Tensor h({8, cfg.readout_dim()});
  for (double& v : h.data) v = rng.uniform_sym(1.0);
  std::vector<int32_t> us = {0, 1, 2, 6}, vs = {3, 4, 5, 7};

  Tape t;
  Bound b = bind_params(t, den.params, false);
  Rng drng(0);
  Var logits = edge_logits(t, b, den, t.leaf(h), us, vs, false, drng);
  Tensor probs = t.value(logits);
  kernels::softmax_rows_inplace(probs);

  EdgeScorer scorer(den, h);
  std::vector<double> p_edge;
  scorer.score(us, vs, p_edge);
  for (size_t i = 0; i < us.size(); ++i) {
    CHECK(p_edge[i] == probs.at(static_cast<int64_t>(i), 1));
  }
}

TEST_CASE("label perturbation only reaches L hops") {
  DenoiserConfig cfg = tiny_config(true);
  MpnnDenoiser den = make_mpnn_denoiser(cfg, MpnnRole::kAttrDenoise, 13);
  // path 0-1-2-3-4-5, L=2
  TestGraph g;
  g.n = 6;
  g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}};
  Rng rng(8);
  for (int64_t v = 0; v < 6; ++v) {
    g.attrs.push_back(static_cast<int32_t>(rng.next_below(2)));
    g.attrs.push_back(static_cast<int32_t>(rng.next_below(3)));
    g.labels.push_back(0);
  }
  Tensor h0 = encode_graph(den, g, 1, 3);
  g.labels[0] = 1;
  Tensor h1 = encode_graph(den, g, 1, 3);
  bool near_changed = false;
  for (int64_t v = 0; v <= 2; ++v) {
    for (int64_t j = 0; j < h0.cols(); ++j) {
      if (h0.at(v, j) != h1.at(v, j)) near_changed = true;
    }
  }
  CHECK(near_changed);
  for (int64_t v = 3; v < 6; ++v) {
    for (int64_t j = 0; j < h0.cols(); ++j) CHECK(h0.at(v, j) == h1.at(v, j));
  }
}

TEST_CASE("async attribute MLP is structure-free and shape-compatible") {
  DenoiserConfig cfg = tiny_config(true);
  AsyncAttrMlp mlp = make_async_attr_mlp(cfg, 77);
  // two nodes with identical rows and labels -> identical logits
  std::vector<int32_t> attrs = {1, 2, 1, 2, 0, 1};
  std::vector<int32_t> labels = {1, 1, 0};
  Tensor ox = onehot_attrs(attrs, cfg.cards, 3);
  Tensor oy = onehot_labels(labels, cfg.num_labels);
  Tape t;
  Bound b = bind_params(t, mlp.params, false);
  Rng rng(0);
  Var logits = async_attr_logits(t, b, mlp, ox, &oy, 12, 15, false, rng);
  CHECK(t.value(logits).shape == std::vector<int64_t>{3, cfg.onehot_dim()});
  for (int64_t j = 0; j < cfg.onehot_dim(); ++j) {
    CHECK(t.value(logits).at(0, j) == t.value(logits).at(1, j));
  }
}

TEST_CASE("denoiser gradient checks") {
  Rng grng(42);

  SECTION("attr path through the MPNN encoder") {
    for (bool conditional : {false, true}) {
      DenoiserConfig cfg = tiny_config(conditional);
      MpnnDenoiser den = make_mpnn_denoiser(cfg, MpnnRole::kAttrDenoise, 101);
      TestGraph g = random_test_graph(7, 0.3, grng, cfg.cards, cfg.num_labels);
      Tensor ox = onehot_attrs(g.attrs, cfg.cards, g.n);
      std::optional<Tensor> oy;
      if (conditional) oy = onehot_labels(g.labels, cfg.num_labels);
      Propagator prop = mean_self_propagator(g.n, g.edges);
      std::vector<int32_t> targets(g.attrs.begin(), g.attrs.end());
      auto offsets = cfg.head_offsets();

      auto run = [&](bool want, std::vector<Tensor>* grads) {
        Tape t;
        Bound b = bind_params(t, den.params, want);
        Rng rng(0);
        Var h = mpnn_encode(t, b, den, ox, prop, oy ? &*oy : nullptr, 2, 3, false, rng);
        Var logits = attr_logits(t, b, den, h);
        Var loss = ops::blockwise_softmax_ce(t, logits, offsets, targets);
        if (want) {
          t.backward(loss);
          *grads = grads_of(t, b);
        }
        return t.value(loss).data[0];
      };
      std::vector<Tensor> analytic;
      run(true, &analytic);
      std::vector<Tensor*> prms;
      for (size_t i = 0; i < den.params.size(); ++i) prms.push_back(&den.params.value(static_cast<int>(i)));
      CHECK(grad_check([&] { return run(false, nullptr); }, prms, analytic) < 1e-4);
    }
  }

  SECTION("edge path") {
    DenoiserConfig cfg = tiny_config(false);
    MpnnDenoiser den = make_mpnn_denoiser(cfg, MpnnRole::kEdgeDenoise, 202);
    Rng erng(58);
    TestGraph g = random_test_graph(7, 0.4, erng, cfg.cards, 0);
    Tensor ox = onehot_attrs(g.attrs, cfg.cards, g.n);
    Propagator prop = mean_self_propagator(g.n, g.edges);
    std::vector<int32_t> us = {0, 2, 4, 5, 0, 1, 3, 2}, vs = {1, 3, 5, 6, 6, 5, 4, 6};
    std::vector<int32_t> tgt = {1, 0, 1, 0, 1, 1, 0, 0};

    auto run = [&](bool want, std::vector<Tensor>* grads) {
      Tape t;
      Bound b = bind_params(t, den.params, want);
      Rng rng(0);
      Var h = mpnn_encode(t, b, den, ox, prop, nullptr, 1, 3, false, rng);
      Var logits = edge_logits(t, b, den, h, us, vs, false, rng);
      Var loss = ops::softmax_cross_entropy(t, logits, tgt);
      if (want) {
        t.backward(loss);
        *grads = grads_of(t, b);
      }
      return t.value(loss).data[0];
    };
    std::vector<Tensor> analytic;
    run(true, &analytic);
    std::vector<Tensor*> prms;
    for (size_t i = 0; i < den.params.size(); ++i) prms.push_back(&den.params.value(static_cast<int>(i)));
    CHECK(grad_check([&] { return run(false, nullptr); }, prms, analytic) < 1e-4);
  }

  SECTION("async attribute MLP") {
    DenoiserConfig cfg = tiny_config(true);
    AsyncAttrMlp mlp = make_async_attr_mlp(cfg, 303);
    TestGraph g = random_test_graph(6, 0.0, grng, cfg.cards, cfg.num_labels);
    Tensor ox = onehot_attrs(g.attrs, cfg.cards, g.n);
    Tensor oy = onehot_labels(g.labels, cfg.num_labels);
    std::vector<int32_t> targets(g.attrs.begin(), g.attrs.end());
    auto offsets = cfg.head_offsets();

    auto run = [&](bool want, std::vector<Tensor>* grads) {
      Tape t;
      Bound b = bind_params(t, mlp.params, want);
      Rng rng(0);
      Var logits = async_attr_logits(t, b, mlp, ox, &oy, 12, 15, false, rng);
      Var loss = ops::blockwise_softmax_ce(t, logits, offsets, targets);
      if (want) {
        t.backward(loss);
        *grads = grads_of(t, b);
      }
      return t.value(loss).data[0];
    };
    std::vector<Tensor> analytic;
    run(true, &analytic);
    std::vector<Tensor*> prms;
    for (size_t i = 0; i < mlp.params.size(); ++i) prms.push_back(&mlp.params.value(static_cast<int>(i)));
    CHECK(grad_check([&] { return run(false, nullptr); }, prms, analytic) < 1e-4);
  }
}
