#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "graphmaker/rng.hpp"

namespace graphmaker {

using Edge = std::pair<int32_t, int32_t>;  // canonical u < v

// One undirected graph with categorical node attributes and optional node
// labels. Edges are a sorted canonical pair list plus a per-node adjacency
// index; the dense pair representation is never materialized.
struct AttributedGraph {
  int64_t n = 0;
  std::vector<Edge> edges;
  std::vector<int32_t> cardinalities;  // C_f per attribute, each >= 2
  std::vector<int32_t> attrs;          // row-major n x F
  std::vector<int32_t> labels;         // empty when unlabeled
  int32_t num_labels = 0;
  std::string name;

  // adjacency index, neighbors sorted ascending
  std::vector<int64_t> adj_ptr;
  std::vector<int32_t> adj;

  int64_t num_attrs() const { return static_cast<int64_t>(cardinalities.size()); }
  bool has_labels() const { return num_labels > 0; }
  int64_t num_edges() const { return static_cast<int64_t>(edges.size()); }
  int64_t num_pairs() const { return n * (n - 1) / 2; }

  int32_t attr(int64_t v, int64_t f) const {
    return attrs[static_cast<size_t>(v * num_attrs() + f)];
  }

  std::span<const int32_t> neighbors(int32_t v) const {
    return {adj.data() + adj_ptr[static_cast<size_t>(v)],
            adj.data() + adj_ptr[static_cast<size_t>(v) + 1]};
  }

  int64_t degree(int32_t v) const {
    return adj_ptr[static_cast<size_t>(v) + 1] - adj_ptr[static_cast<size_t>(v)];
  }

  bool has_edge(int32_t u, int32_t v) const {
    auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), v);
  }

  void rebuild_index() {
    adj_ptr.assign(static_cast<size_t>(n) + 1, 0);
    for (const Edge& e : edges) {
      adj_ptr[static_cast<size_t>(e.first) + 1]++;
      adj_ptr[static_cast<size_t>(e.second) + 1]++;
    }
    for (int64_t i = 0; i < n; ++i) adj_ptr[static_cast<size_t>(i) + 1] += adj_ptr[static_cast<size_t>(i)];
    adj.resize(edges.size() * 2);
    std::vector<int64_t> cur(adj_ptr.begin(), adj_ptr.end() - 1);
    for (const Edge& e : edges) {
      adj[static_cast<size_t>(cur[static_cast<size_t>(e.first)]++)] = e.second;
      adj[static_cast<size_t>(cur[static_cast<size_t>(e.second)]++)] = e.first;
    }
    for (int64_t i = 0; i < n; ++i) {
      std::sort(adj.begin() + adj_ptr[static_cast<size_t>(i)],
                adj.begin() + adj_ptr[static_cast<size_t>(i) + 1]);
    }
  }

  bool operator==(const AttributedGraph& o) const {
    return n == o.n && edges == o.edges && cardinalities == o.cardinalities && attrs == o.attrs &&
           labels == o.labels && num_labels == o.num_labels && name == o.name;
  }
};

// Canonicalizes (swap to u<v, sort, dedupe) and validates, then builds the
// adjacency index. Self loops are rejected.
inline AttributedGraph make_graph(int64_t n, std::vector<Edge> edges,
                                  std::vector<int32_t> cardinalities, std::vector<int32_t> attrs,
                                  std::vector<int32_t> labels, int32_t num_labels,
                                  std::string name) {
  AttributedGraph g;
  g.n = n;
  g.name = std::move(name);
  g.num_labels = num_labels;
  for (Edge& e : edges) {
    if (e.first == e.second) throw ArgumentError("self loop " + std::to_string(e.first));
    if (e.first > e.second) std::swap(e.first, e.second);
    if (e.first < 0 || e.second >= n) throw ArgumentError("edge endpoint out of range");
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  g.edges = std::move(edges);
  const int64_t f = static_cast<int64_t>(cardinalities.size());
  if (f < 1) throw ArgumentError("graph needs at least one attribute");
  for (int32_t c : cardinalities) {
    if (c < 2) throw ArgumentError("attribute cardinality must be >= 2");
  }
  if (static_cast<int64_t>(attrs.size()) != n * f) {
    throw ArgumentError("attrs must be n x F");
  }
  for (int64_t v = 0; v < n; ++v) {
    for (int64_t j = 0; j < f; ++j) {
      const int32_t a = attrs[static_cast<size_t>(v * f + j)];
      if (a < 0 || a >= cardinalities[static_cast<size_t>(j)]) {
        throw ArgumentError("attribute value out of range");
      }
    }
  }
  if (num_labels > 0) {
    if (static_cast<int64_t>(labels.size()) != n) throw ArgumentError("labels must have n entries");
    for (int32_t y : labels) {
      if (y < 0 || y >= num_labels) throw ArgumentError("label out of range");
    }
  } else if (!labels.empty()) {
    throw ArgumentError("labels given but num_labels is 0");
  }
  g.cardinalities = std::move(cardinalities);
  g.attrs = std::move(attrs);
  g.labels = std::move(labels);
  g.rebuild_index();
  return g;
}

// Empirical class frequencies: the diffusion prior.
struct Marginals {
  std::vector<std::vector<double>> m_attr;  // per attribute, length C_f
  std::array<double, 2> m_edge = {1.0, 0.0};
};

inline Marginals empirical_marginals(const AttributedGraph& g) {
  Marginals m;
  const int64_t f = g.num_attrs();
  m.m_attr.resize(static_cast<size_t>(f));
  for (int64_t j = 0; j < f; ++j) {
    std::vector<int64_t> counts(static_cast<size_t>(g.cardinalities[static_cast<size_t>(j)]), 0);
    for (int64_t v = 0; v < g.n; ++v) counts[static_cast<size_t>(g.attr(v, j))]++;
    auto& mv = m.m_attr[static_cast<size_t>(j)];
    mv.resize(counts.size());
    for (size_t c = 0; c < counts.size(); ++c) {
      mv[c] = static_cast<double>(counts[c]) / static_cast<double>(g.n);
    }
  }
  const int64_t pairs = g.num_pairs();
  if (pairs > 0) {
    m.m_edge[1] = static_cast<double>(g.num_edges()) / static_cast<double>(pairs);
    m.m_edge[0] = static_cast<double>(pairs - g.num_edges()) / static_cast<double>(pairs);
  }
  return m;
}

inline std::vector<double> label_marginal(const AttributedGraph& g) {
  if (!g.has_labels()) throw ArgumentError("label_marginal: graph has no labels");
  std::vector<int64_t> counts(static_cast<size_t>(g.num_labels), 0);
  for (int32_t y : g.labels) counts[static_cast<size_t>(y)]++;
  std::vector<double> out(counts.size());
  for (size_t c = 0; c < counts.size(); ++c) {
    out[c] = static_cast<double>(counts[c]) / static_cast<double>(g.n);
  }
  return out;
}

// ---- on-disk format ----

namespace detail {

inline std::string meta_value(const std::string& line, const std::string& file, int lineno) {
  auto eq = line.find('=');
  if (eq == std::string::npos) {
    throw ParseError(file + ":" + std::to_string(lineno) + ": expected key=value");
  }
  return line.substr(eq + 1);
}

inline int64_t parse_int(const std::string& s, const std::string& file, int lineno) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError(file + ":" + std::to_string(lineno) + ": bad integer '" + s + "'");
  }
}

}  // namespace detail

inline void save_graph(const AttributedGraph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "meta");
    f << "n=" << g.n << "\n";
    f << "f=" << g.num_attrs() << "\n";
    f << "cardinalities=";
    for (size_t j = 0; j < g.cardinalities.size(); ++j) f << (j ? "," : "") << g.cardinalities[j];
    f << "\n";
    f << "num_labels=" << g.num_labels << "\n";
    f << "name=" << g.name << "\n";
  }
  {
    std::ofstream f(dir / "edges");
    for (const Edge& e : g.edges) f << e.first << '\t' << e.second << '\n';
  }
  {
    std::ofstream f(dir / "attrs");
    const int64_t nf = g.num_attrs();
    for (int64_t v = 0; v < g.n; ++v) {
      for (int64_t j = 0; j < nf; ++j) f << (j ? "," : "") << g.attr(v, j);
      f << '\n';
    }
  }
  if (g.has_labels()) {
    std::ofstream f(dir / "labels");
    for (int32_t y : g.labels) f << y << '\n';
  }
}

inline AttributedGraph load_graph(const std::filesystem::path& dir) {
  const std::string meta_path = (dir / "meta").string();
  std::ifstream meta(meta_path);
  if (!meta) throw ParseError(meta_path + ": cannot open");
  int64_t n = -1, f = -1;
  int32_t num_labels = -1;
  std::vector<int32_t> cards;
  std::string name, line;
  int lineno = 0;
  while (std::getline(meta, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("n=", 0) == 0) {
      n = detail::parse_int(line.substr(2), meta_path, lineno);
    } else if (line.rfind("f=", 0) == 0) {
      f = detail::parse_int(line.substr(2), meta_path, lineno);
    } else if (line.rfind("cardinalities=", 0) == 0) {
      std::stringstream ss(line.substr(14));
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        cards.push_back(static_cast<int32_t>(detail::parse_int(tok, meta_path, lineno)));
      }
    } else if (line.rfind("num_labels=", 0) == 0) {
      num_labels = static_cast<int32_t>(detail::parse_int(line.substr(11), meta_path, lineno));
    } else if (line.rfind("name=", 0) == 0) {
      name = line.substr(5);
    } else {
      throw ParseError(meta_path + ":" + std::to_string(lineno) + ": unknown key");
    }
  }
  if (n < 1 || f < 1 || num_labels < 0) {
    throw ParseError(meta_path + ": missing or invalid n/f/num_labels");
  }
  if (static_cast<int64_t>(cards.size()) != f) {
    throw ParseError(meta_path + ": cardinalities count does not match f");
  }

  const std::string edges_path = (dir / "edges").string();
  std::ifstream ef(edges_path);
  if (!ef) throw ParseError(edges_path + ": cannot open");
  std::vector<Edge> edges;
  lineno = 0;
  while (std::getline(ef, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int64_t u, v;
    if (!(ss >> u >> v)) {
      throw ParseError(edges_path + ":" + std::to_string(lineno) + ": expected two integers");
    }
    if (u < 0 || v < 0 || u >= n || v >= n) {
      throw ParseError(edges_path + ":" + std::to_string(lineno) + ": endpoint out of range");
    }
    if (u == v) {
      throw ParseError(edges_path + ":" + std::to_string(lineno) + ": self-loop");
    }
    edges.emplace_back(static_cast<int32_t>(u), static_cast<int32_t>(v));
  }

  const std::string attrs_path = (dir / "attrs").string();
  std::ifstream af(attrs_path);
  if (!af) throw ParseError(attrs_path + ": cannot open");
  std::vector<int32_t> attrs;
  attrs.reserve(static_cast<size_t>(n * f));
  lineno = 0;
  while (std::getline(af, line)) {
    ++lineno;
    if (line.empty() && lineno > n) continue;
    std::stringstream ss(line);
    std::string tok;
    int64_t cnt = 0;
    while (std::getline(ss, tok, ',')) {
      const int64_t a = detail::parse_int(tok, attrs_path, lineno);
      if (cnt >= f) throw ParseError(attrs_path + ":" + std::to_string(lineno) + ": too many values");
      if (a < 0 || a >= cards[static_cast<size_t>(cnt)]) {
        throw ParseError(attrs_path + ":" + std::to_string(lineno) + ": value out of range");
      }
      attrs.push_back(static_cast<int32_t>(a));
      ++cnt;
    }
    if (cnt != f) throw ParseError(attrs_path + ":" + std::to_string(lineno) + ": expected " +
                                   std::to_string(f) + " values");
  }
  if (static_cast<int64_t>(attrs.size()) != n * f) {
    throw ParseError(attrs_path + ": expected " + std::to_string(n) + " attribute rows");
  }

  std::vector<int32_t> labels;
  if (num_labels > 0) {
    const std::string labels_path = (dir / "labels").string();
    std::ifstream lf(labels_path);
    if (!lf) throw ParseError(labels_path + ": cannot open");
    lineno = 0;
    while (std::getline(lf, line)) {
      ++lineno;
      if (line.empty() && lineno > n) continue;
      const int64_t y = detail::parse_int(line, labels_path, lineno);
      if (y < 0 || y >= num_labels) {
        throw ParseError(labels_path + ":" + std::to_string(lineno) + ": label out of range");
      }
      labels.push_back(static_cast<int32_t>(y));
    }
    if (static_cast<int64_t>(labels.size()) != n) {
      throw ParseError(labels_path + ": expected " + std::to_string(n) + " labels");
    }
  }

  try {
    return make_graph(n, std::move(edges), std::move(cards), std::move(attrs), std::move(labels),
                      num_labels, name);
  } catch (const ArgumentError& e) {
    throw ParseError(dir.string() + ": " + e.what());
  }
}

// All nodes at shortest-path distance in [1, K] from v.
inline std::vector<int32_t> khop_neighbors(const AttributedGraph& g, int32_t v, int k) {
  if (k < 1) throw ArgumentError("khop_neighbors: K must be >= 1");
  std::vector<int32_t> dist(static_cast<size_t>(g.n), -1);
  std::vector<int32_t> out;
  std::queue<int32_t> q;
  dist[static_cast<size_t>(v)] = 0;
  q.push(v);
  while (!q.empty()) {
    const int32_t u = q.front();
    q.pop();
    if (dist[static_cast<size_t>(u)] == k) continue;
    for (int32_t w : g.neighbors(u)) {
      if (dist[static_cast<size_t>(w)] < 0) {
        dist[static_cast<size_t>(w)] = dist[static_cast<size_t>(u)] + 1;
        out.push_back(w);
        q.push(w);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Uniformly samples m edges without replacement; the result is the subgraph
// induced by their endpoints, relabeled compactly in ascending order.
inline AttributedGraph edge_induced_subsample(const AttributedGraph& g, int64_t m, uint64_t seed) {
  if (m > g.num_edges() || m < 0) {
    throw ArgumentError("edge_induced_subsample: m exceeds edge count");
  }
  std::vector<int64_t> idx(static_cast<size_t>(g.num_edges()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
  Rng rng(seed, {0x5e1ec7edULL});
  for (int64_t i = 0; i < m; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(idx.size() - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  std::vector<Edge> picked;
  picked.reserve(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) picked.push_back(g.edges[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
  std::vector<int32_t> nodes;
  for (const Edge& e : picked) {
    nodes.push_back(e.first);
    nodes.push_back(e.second);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  std::vector<int32_t> remap(static_cast<size_t>(g.n), -1);
  for (size_t i = 0; i < nodes.size(); ++i) remap[static_cast<size_t>(nodes[i])] = static_cast<int32_t>(i);
  for (Edge& e : picked) {
    e.first = remap[static_cast<size_t>(e.first)];
    e.second = remap[static_cast<size_t>(e.second)];
  }
  const int64_t f = g.num_attrs();
  std::vector<int32_t> attrs;
  attrs.reserve(nodes.size() * static_cast<size_t>(f));
  std::vector<int32_t> labels;
  for (int32_t old : nodes) {
    for (int64_t j = 0; j < f; ++j) attrs.push_back(g.attr(old, j));
    if (g.has_labels()) labels.push_back(g.labels[static_cast<size_t>(old)]);
  }
  return make_graph(static_cast<int64_t>(nodes.size()), std::move(picked), g.cardinalities,
                    std::move(attrs), std::move(labels), g.num_labels, g.name + "-esub");
}

// Decodes a flat upper-triangular pair index into (u, v), u < v.
inline Edge pair_from_index(int64_t n, int64_t idx) {
  auto row_start = [n](int64_t u) { return u * (n - 1) - u * (u - 1) / 2; };
  const double nn = static_cast<double>(n);
  int64_t u = static_cast<int64_t>(nn - 0.5 - std::sqrt((nn - 0.5) * (nn - 0.5) - 2.0 * static_cast<double>(idx)));
  if (u < 0) u = 0;
  if (u > n - 2) u = n - 2;
  while (u + 1 <= n - 2 && row_start(u + 1) <= idx) ++u;
  while (u > 0 && row_start(u) > idx) --u;
  const int64_t v = u + 1 + (idx - row_start(u));
  return {static_cast<int32_t>(u), static_cast<int32_t>(v)};
}

}  // namespace graphmaker
