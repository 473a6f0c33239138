#pragma once

#include <unordered_set>

#include "graphmaker/graph.hpp"

namespace graphmaker {

// Deterministic node / edge partitions used by the discriminative protocol.
struct SplitSpec {
  std::vector<int32_t> train_nodes, val_nodes, test_nodes;
  std::vector<Edge> train_pos, val_pos, test_pos;
  std::vector<Edge> val_neg, test_neg;
  uint64_t seed = 0;
};

// Exactly per_class_train train nodes per class, then val/test drawn
// uniformly from the remainder.
inline SplitSpec node_split(const AttributedGraph& g, int64_t per_class_train, int64_t val_size,
                            int64_t test_size, uint64_t seed) {
  if (!g.has_labels()) throw ConfigError("node_split: labels required");
  SplitSpec s;
  s.seed = seed;
  Rng rng(seed, {0x0de50117ULL});
  std::vector<std::vector<int32_t>> by_class(static_cast<size_t>(g.num_labels));
  for (int64_t v = 0; v < g.n; ++v) {
    by_class[static_cast<size_t>(g.labels[static_cast<size_t>(v)])].push_back(
        static_cast<int32_t>(v));
  }
  std::vector<int32_t> rest;
  for (int32_t c = 0; c < g.num_labels; ++c) {
    auto& members = by_class[static_cast<size_t>(c)];
    if (static_cast<int64_t>(members.size()) < per_class_train) {
      throw ConfigError("node_split: class " + std::to_string(c) + " has only " +
                        std::to_string(members.size()) + " nodes, needs " +
                        std::to_string(per_class_train));
    }
    rng.shuffle(members);
    s.train_nodes.insert(s.train_nodes.end(), members.begin(), members.begin() + per_class_train);
    rest.insert(rest.end(), members.begin() + per_class_train, members.end());
  }
  if (static_cast<int64_t>(rest.size()) < val_size + test_size) {
    throw ConfigError("node_split: not enough nodes left for val+test");
  }
  std::sort(rest.begin(), rest.end());
  rng.shuffle(rest);
  s.val_nodes.assign(rest.begin(), rest.begin() + val_size);
  s.test_nodes.assign(rest.begin() + val_size, rest.begin() + val_size + test_size);
  std::sort(s.train_nodes.begin(), s.train_nodes.end());
  std::sort(s.val_nodes.begin(), s.val_nodes.end());
  std::sort(s.test_nodes.begin(), s.test_nodes.end());
  return s;
}

// Partitions canonical u<v edges into train/val/test (floor-sized val/test)
// and attaches equal-count uniformly sampled non-edge negatives to val and
// test, disjoint across the two.
inline SplitSpec edge_split(const AttributedGraph& g, double val_frac, double test_frac,
                            uint64_t seed) {
  if (val_frac < 0 || test_frac < 0 || val_frac + test_frac >= 1.0) {
    throw ArgumentError("edge_split: need val_frac + test_frac < 1");
  }
  SplitSpec s;
  s.seed = seed;
  Rng rng(seed, {0xed6e0117ULL});
  std::vector<Edge> shuffled = g.edges;
  rng.shuffle(shuffled);
  const int64_t m = g.num_edges();
  const int64_t n_val = static_cast<int64_t>(std::floor(static_cast<double>(m) * val_frac));
  const int64_t n_test = static_cast<int64_t>(std::floor(static_cast<double>(m) * test_frac));
  s.val_pos.assign(shuffled.begin(), shuffled.begin() + n_val);
  s.test_pos.assign(shuffled.begin() + n_val, shuffled.begin() + n_val + n_test);
  s.train_pos.assign(shuffled.begin() + n_val + n_test, shuffled.end());
  std::sort(s.val_pos.begin(), s.val_pos.end());
  std::sort(s.test_pos.begin(), s.test_pos.end());
  std::sort(s.train_pos.begin(), s.train_pos.end());

  const int64_t needed = n_val + n_test;
  if (needed > 0) {
    const int64_t total = g.num_pairs();
    std::vector<Edge> negs;
    negs.reserve(static_cast<size_t>(needed));
    std::unordered_set<int64_t> seen;
    int64_t attempts = 0;
    const int64_t max_attempts = 100 * needed;
    while (static_cast<int64_t>(negs.size()) < needed) {
      if (++attempts > max_attempts) {
        throw SamplingError("edge_split: could not sample " + std::to_string(needed) +
                            " non-edges after " + std::to_string(max_attempts) + " attempts");
      }
      const int64_t idx = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total)));
      if (seen.count(idx)) continue;
      const Edge e = pair_from_index(g.n, idx);
      if (g.has_edge(e.first, e.second)) continue;
      seen.insert(idx);
      negs.push_back(e);
    }
    s.val_neg.assign(negs.begin(), negs.begin() + n_val);
    s.test_neg.assign(negs.begin() + n_val, negs.end());
    std::sort(s.val_neg.begin(), s.val_neg.end());
    std::sort(s.test_neg.begin(), s.test_neg.end());
  }
  return s;
}

}  // namespace graphmaker
