#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "graphmaker/graph.hpp"
#include "graphmaker/tensor.hpp"

namespace graphmaker {

struct SingularityError : Error {
  using Error::Error;
};

enum class Component { kAttr, kEdge };

// Diffusion clock. Each component Z in {attributes, edges} owns a step set
// T_Z inside [1, T]; its within-component step count gamma_Z(t) counts the
// steps of T_Z that are <= t. alpha_bar arrays are indexed by gamma, with
// alpha_bar[0] = 1 exactly and the cosine law for gamma >= 1.
struct NoiseSchedule {
  int64_t total_steps = 0;
  std::vector<int32_t> steps_attr;  // sorted, subset of [1, T]
  std::vector<int32_t> steps_edge;
  double s = 0.008;
  std::vector<double> alpha_bar_attr;  // size |T_X| + 1
  std::vector<double> alpha_bar_edge;  // size |T_A| + 1
  Marginals marginals;

  const std::vector<int32_t>& steps(Component c) const {
    return c == Component::kAttr ? steps_attr : steps_edge;
  }
  const std::vector<double>& alpha_bars(Component c) const {
    return c == Component::kAttr ? alpha_bar_attr : alpha_bar_edge;
  }

  int64_t gamma(Component c, int64_t t) const {
    const auto& st = steps(c);
    return std::upper_bound(st.begin(), st.end(), static_cast<int32_t>(t)) - st.begin();
  }

  // First step of the edge window in async mode; equals T in sync mode.
  int64_t t_mid() const { return steps_edge.empty() ? 0 : steps_edge.back(); }
};

namespace detail {
inline std::vector<double> cosine_alpha_bars(int64_t count, double s) {
  std::vector<double> out(static_cast<size_t>(count) + 1);
  out[0] = 1.0;
  for (int64_t g = 1; g <= count; ++g) {
    const double frac = (static_cast<double>(g) / static_cast<double>(count) + s) / (1.0 + s);
    const double c = std::cos(0.5 * std::numbers::pi * frac);
    out[static_cast<size_t>(g)] = c * c;
  }
  return out;
}
}  // namespace detail

// Sync: T_X = T_A = {1..T}.
inline NoiseSchedule make_sync_schedule(int64_t total_steps, double s, Marginals m) {
  if (total_steps < 1) throw ArgumentError("schedule: T must be >= 1");
  NoiseSchedule sch;
  sch.total_steps = total_steps;
  sch.s = s;
  for (int64_t t = 1; t <= total_steps; ++t) {
    sch.steps_attr.push_back(static_cast<int32_t>(t));
    sch.steps_edge.push_back(static_cast<int32_t>(t));
  }
  sch.alpha_bar_attr = detail::cosine_alpha_bars(total_steps, s);
  sch.alpha_bar_edge = sch.alpha_bar_attr;
  sch.marginals = std::move(m);
  return sch;
}

// Async: edges корrupt first on T_A = {1..t_m}, attributes on
// T_X = {t_m+1..T}; the reverse process therefore generates attributes first.
inline NoiseSchedule make_async_schedule(int64_t attr_steps, int64_t edge_steps, double s,
                                         Marginals m) {
  if (attr_steps < 1 || edge_steps < 1) throw ArgumentError("schedule: step counts must be >= 1");
  NoiseSchedule sch;
  sch.total_steps = attr_steps + edge_steps;
  sch.s = s;
  for (int64_t t = 1; t <= edge_steps; ++t) sch.steps_edge.push_back(static_cast<int32_t>(t));
  for (int64_t t = edge_steps + 1; t <= sch.total_steps; ++t) {
    sch.steps_attr.push_back(static_cast<int32_t>(t));
  }
  sch.alpha_bar_attr = detail::cosine_alpha_bars(attr_steps, s);
  sch.alpha_bar_edge = detail::cosine_alpha_bars(edge_steps, s);
  sch.marginals = std::move(m);
  return sch;
}

inline double alpha_bar(const NoiseSchedule& sch, int64_t t, Component c) {
  if (t < 0 || t > sch.total_steps) throw ArgumentError("alpha_bar: step out of range");
  return sch.alpha_bars(c)[static_cast<size_t>(sch.gamma(c, t))];
}

// alpha * I + (1 - alpha) * 1 m^T, stored without the dense matrix.
struct TransitionMatrix {
  double alpha = 1.0;
  std::vector<double> m;

  int size() const { return static_cast<int>(m.size()); }
  double prob(int from, int to) const {
    return (from == to ? alpha : 0.0) + (1.0 - alpha) * m[static_cast<size_t>(to)];
  }
  Tensor dense() const {
    const int c = size();
    Tensor t({c, c});
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < c; ++j) t.at(i, j) = prob(i, j);
    }
    return t;
  }
  // Sample the destination class for a source class.
  int sample_row(int from, Rng& rng) const {
    if (rng.next_double() < alpha) return from;
    return rng.sample_discrete(m);
  }
};

inline const std::vector<double>& marginal_of(const NoiseSchedule& sch, Component c, int64_t f) {
  if (c == Component::kAttr) return sch.marginals.m_attr[static_cast<size_t>(f)];
  static thread_local std::vector<double> edge_m;
  edge_m = {sch.marginals.m_edge[0], sch.marginals.m_edge[1]};
  return edge_m;
}

// Cumulative transition matrix Q_bar^(t).
inline TransitionMatrix qbar(const NoiseSchedule& sch, int64_t t, Component c, int64_t f = 0) {
  TransitionMatrix tm;
  tm.alpha = alpha_bar(sch, t, c);
  tm.m = marginal_of(sch, c, f);
  return tm;
}

// One-step matrix Q^(t) = inverse(Q_bar^(t-1)) * Q_bar^(t); for this
// identity-plus-rank-one family the quotient stays in the family with
// alpha = alpha_bar_t / alpha_bar_{t-1}.
inline TransitionMatrix q_step(const NoiseSchedule& sch, int64_t t, Component c, int64_t f = 0) {
  if (t < 1) throw ArgumentError("q_step: t must be >= 1");
  const double prev = alpha_bar(sch, t - 1, c);
  if (prev == 0.0) throw SingularityError("q_step: alpha_bar at t-1 is zero");
  TransitionMatrix tm;
  tm.alpha = alpha_bar(sch, t, c) / prev;
  tm.m = marginal_of(sch, c, f);
  return tm;
}

// q(x_{t-1} | x_t, x_0): normalized elementwise product of the Q^(t) column
// at x_t and the Q_bar^(t-1) row at x_0.
inline std::vector<double> true_posterior(int x0, int xt, const NoiseSchedule& sch, int64_t t,
                                          Component c, int64_t f = 0) {
  const TransitionMatrix step = q_step(sch, t, c, f);
  const TransitionMatrix prev = qbar(sch, t - 1, c, f);
  const int n = step.size();
  std::vector<double> out(static_cast<size_t>(n));
  double z = 0.0;
  for (int j = 0; j < n; ++j) {
    out[static_cast<size_t>(j)] = step.prob(j, xt) * prev.prob(x0, j);
    z += out[static_cast<size_t>(j)];
  }
  if (z <= 0.0) throw SamplingError("true_posterior: impossible transition");
  for (double& v : out) v /= z;
  return out;
}

// Model posterior: mixture of true posteriors weighted by the predicted
// distribution over the clean class.
inline std::vector<double> model_posterior(std::span<const double> p0, int xt,
                                           const NoiseSchedule& sch, int64_t t, Component c,
                                           int64_t f = 0) {
  std::vector<double> out;
  for (int x0 = 0; x0 < static_cast<int>(p0.size()); ++x0) {
    const std::vector<double> tp = true_posterior(x0, xt, sch, t, c, f);
    if (out.empty()) out.assign(tp.size(), 0.0);
    for (size_t j = 0; j < tp.size(); ++j) out[j] += p0[static_cast<size_t>(x0)] * tp[j];
  }
  return out;
}

// P(a_{t-1} = edge | a_t, x0) for the four (a_t, x0) combinations; the hot
// path of reverse edge sampling.
inline std::array<std::array<double, 2>, 2> edge_posterior_table(const NoiseSchedule& sch,
                                                                 int64_t t) {
  std::array<std::array<double, 2>, 2> tab{};
  for (int at = 0; at < 2; ++at) {
    for (int x0 = 0; x0 < 2; ++x0) {
      tab[static_cast<size_t>(at)][static_cast<size_t>(x0)] =
          true_posterior(x0, at, sch, t, Component::kEdge)[1];
    }
  }
  return tab;
}

// Corrupted snapshot of a graph at a given step.
struct NoisyGraph {
  int64_t n = 0;
  std::vector<int32_t> attrs;  // n x F
  std::vector<Edge> edges;     // canonical sorted
};

namespace detail {

constexpr uint64_t kAttrStream = 0xa77151;
constexpr uint64_t kEdgeKeepStream = 0xed6e0001;
constexpr uint64_t kEdgeFreshStream = 0xed6e0002;

// k distinct pair indices out of [0, total), rejecting indices where
// excluded(idx) holds. Throws after 100 * k + 64 failed attempts.
template <typename ExcludedFn>
std::vector<int64_t> sample_distinct_pair_indices(int64_t total, int64_t k, Rng& rng,
                                                  const ExcludedFn& excluded) {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(k));
  std::unordered_set<int64_t> seen;
  int64_t attempts = 0;
  const int64_t max_attempts = 100 * k + 64;
  while (static_cast<int64_t>(out.size()) < k) {
    if (++attempts > max_attempts) {
      throw SamplingError("pair sampling: attempt budget exhausted");
    }
    const int64_t idx = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total)));
    if (excluded(idx) || seen.count(idx)) continue;
    seen.insert(idx);
    out.push_back(idx);
  }
  return out;
}

}  // namespace detail

// Attribute half of single-shot forward corruption. Cells draw from their
// qbar row through substreams keyed by (seed, gamma_X(t), cell), so a step
// before the attribute window reproduces the clean attributes exactly.
inline std::vector<int32_t> corrupt_attrs(const AttributedGraph& g, const NoiseSchedule& sch,
                                          int64_t t, uint64_t seed) {
  if (t < 0 || t > sch.total_steps) throw ArgumentError("corrupt: step out of range");
  const double a_attr = alpha_bar(sch, t, Component::kAttr);
  if (a_attr >= 1.0) return g.attrs;
  const int64_t nf = g.num_attrs();
  std::vector<int32_t> out(static_cast<size_t>(g.n * nf));
  const uint64_t gamma_x = static_cast<uint64_t>(sch.gamma(Component::kAttr, t));
  Rng base(seed);
  for (int64_t v = 0; v < g.n; ++v) {
    for (int64_t f = 0; f < nf; ++f) {
      Rng cell = base.fork(detail::kAttrStream, gamma_x, static_cast<uint64_t>(v * nf + f));
      const auto& m = sch.marginals.m_attr[static_cast<size_t>(f)];
      const int32_t x0 = g.attr(v, f);
      int32_t xt = x0;
      if (!(cell.next_double() < a_attr)) xt = static_cast<int32_t>(cell.sample_discrete(m));
      out[static_cast<size_t>(v * nf + f)] = xt;
    }
  }
  return out;
}

// Edge half under the retained-mass decomposition: an original edge stays an
// edge w.p. alpha + (1-alpha) m_A[1]; a non-edge turns into an edge w.p.
// (1-alpha) m_A[1], realized as a binomial count of fresh pairs. No O(N^2)
// enumeration.
inline std::vector<Edge> corrupt_edges(const AttributedGraph& g, const NoiseSchedule& sch,
                                       int64_t t, uint64_t seed) {
  if (t < 0 || t > sch.total_steps) throw ArgumentError("corrupt: step out of range");
  const double a_edge = alpha_bar(sch, t, Component::kEdge);
  if (a_edge >= 1.0) return g.edges;
  std::vector<Edge> out;
  const uint64_t gamma_a = static_cast<uint64_t>(sch.gamma(Component::kEdge, t));
  Rng base(seed);
  const double m1 = sch.marginals.m_edge[1];
  const double keep = a_edge + (1.0 - a_edge) * m1;
  const double fresh = (1.0 - a_edge) * m1;
  for (const Edge& e : g.edges) {
    const int64_t pid = static_cast<int64_t>(e.first) * g.n + e.second;
    Rng cell = base.fork(detail::kEdgeKeepStream, gamma_a, static_cast<uint64_t>(pid));
    if (cell.next_double() < keep) out.push_back(e);
  }
  const int64_t nonedges = g.num_pairs() - g.num_edges();
  if (nonedges > 0 && fresh > 0.0) {
    Rng frng = base.fork(detail::kEdgeFreshStream, gamma_a);
    const int64_t k = frng.binomial(nonedges, fresh);
    auto picked =
        detail::sample_distinct_pair_indices(g.num_pairs(), k, frng, [&](int64_t idx) {
          const Edge e = pair_from_index(g.n, idx);
          return g.has_edge(e.first, e.second);
        });
    for (int64_t idx : picked) out.push_back(pair_from_index(g.n, idx));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline NoisyGraph corrupt(const AttributedGraph& g, const NoiseSchedule& sch, int64_t t,
                          uint64_t seed) {
  NoisyGraph out;
  out.n = g.n;
  out.attrs = corrupt_attrs(g, sch, t, seed);
  out.edges = corrupt_edges(g, sch, t, seed);
  return out;
}

// Prior draw: attributes i.i.d. from the attribute marginals, pairs i.i.d.
// Bernoulli(m_A[1]) realized as a binomial edge count plus distinct uniform
// pairs.
inline NoisyGraph prior_sample(const NoiseSchedule& sch, int64_t n_hat,
                               const std::vector<int32_t>& cardinalities, uint64_t seed) {
  if (n_hat < 1) throw ArgumentError("prior_sample: n_hat must be >= 1");
  NoisyGraph out;
  out.n = n_hat;
  const int64_t nf = static_cast<int64_t>(cardinalities.size());
  out.attrs.resize(static_cast<size_t>(n_hat * nf));
  Rng base(seed);
  for (int64_t v = 0; v < n_hat; ++v) {
    for (int64_t f = 0; f < nf; ++f) {
      Rng cell = base.fork(detail::kAttrStream, 0xa110ULL, static_cast<uint64_t>(v * nf + f));
      out.attrs[static_cast<size_t>(v * nf + f)] =
          static_cast<int32_t>(cell.sample_discrete(sch.marginals.m_attr[static_cast<size_t>(f)]));
    }
  }
  const int64_t total = n_hat * (n_hat - 1) / 2;
  if (total > 0) {
    Rng erng = base.fork(detail::kEdgeFreshStream, 0xa110ULL);
    const int64_t k = erng.binomial(total, sch.marginals.m_edge[1]);
    if (k == total) {
      for (int64_t idx = 0; idx < total; ++idx) out.edges.push_back(pair_from_index(n_hat, idx));
    } else if (k > total / 2) {
      // dense draw: pick the complement instead
      auto excl = detail::sample_distinct_pair_indices(total, total - k, erng,
                                                       [](int64_t) { return false; });
      std::unordered_set<int64_t> drop(excl.begin(), excl.end());
      for (int64_t idx = 0; idx < total; ++idx) {
        if (!drop.count(idx)) out.edges.push_back(pair_from_index(n_hat, idx));
      }
    } else {
      auto picked = detail::sample_distinct_pair_indices(total, k, erng,
                                                         [](int64_t) { return false; });
      for (int64_t idx : picked) out.edges.push_back(pair_from_index(n_hat, idx));
    }
    std::sort(out.edges.begin(), out.edges.end());
  }
  return out;
}

}  // namespace graphmaker
