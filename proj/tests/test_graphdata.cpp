#include <catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "graphmaker/splits.hpp"

using namespace graphmaker;
namespace fs = std::filesystem;

namespace {

// 4-node path 0-1-2-3 with one binary attribute and two classes.
AttributedGraph path4() {
  return make_graph(4, {{0, 1}, {1, 2}, {2, 3}}, {2}, {0, 1, 1, 0}, {0, 0, 1, 1}, 2, "path4");
}

AttributedGraph complete4() {
  std::vector<Edge> e;
  for (int32_t u = 0; u < 4; ++u) {
    for (int32_t v = u + 1; v < 4; ++v) e.push_back({u, v});
  }
  return make_graph(4, e, {2}, {0, 1, 0, 1}, {}, 0, "k4");
}

fs::path tmpdir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("gm_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("graph canonicalization and validation") {
  // reverse and duplicate edges collapse
  AttributedGraph g = make_graph(3, {{1, 0}, {0, 1}, {2, 1}}, {2}, {0, 0, 1}, {}, 0, "t");
  CHECK(g.edges == std::vector<Edge>{{0, 1}, {1, 2}});
  CHECK(g.degree(1) == 2);
  CHECK(g.has_edge(1, 0));
  CHECK_FALSE(g.has_edge(0, 2));
  CHECK_THROWS_AS(make_graph(3, {{1, 1}}, {2}, {0, 0, 0}, {}, 0, "t"), ArgumentError);
  CHECK_THROWS_AS(make_graph(3, {{0, 5}}, {2}, {0, 0, 0}, {}, 0, "t"), ArgumentError);
  CHECK_THROWS_AS(make_graph(2, {}, {2}, {0, 2}, {}, 0, "t"), ArgumentError);
}

TEST_CASE("save/load round trip") {
  AttributedGraph g = path4();
  fs::path dir = tmpdir("roundtrip");
  save_graph(g, dir);
  AttributedGraph h = load_graph(dir);
  CHECK(g == h);
  CHECK(h.n == 4);
  CHECK(h.num_edges() == 3);
}

TEST_CASE("load rejects malformed input with file and line") {
  fs::path dir = tmpdir("badload");
  save_graph(path4(), dir);
  {
    std::ofstream e(dir / "edges", std::ios::app);
    e << "5\t5\n";
  }
  try {
    load_graph(dir);
    FAIL("expected parse error");
  } catch (const ParseError& err) {
    const std::string msg = err.what();
    CHECK(msg.find("edges") != std::string::npos);
    CHECK(msg.find(":4") != std::string::npos);
  }
}

TEST_CASE("load rejects out-of-range attribute values") {
  fs::path dir = tmpdir("badattr");
  save_graph(path4(), dir);
  {
    std::ofstream a(dir / "attrs");
    a << "0\n7\n1\n0\n";
  }
  CHECK_THROWS_AS(load_graph(dir), ParseError);
}

TEST_CASE("empirical marginals") {
  AttributedGraph g = path4();
  Marginals m = empirical_marginals(g);
  // 3 edges of 6 pairs
  CHECK_THAT(m.m_edge[1], Catch::Matchers::WithinAbs(0.5, 1e-15));
  CHECK_THAT(m.m_edge[0] + m.m_edge[1], Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THAT(m.m_attr[0][0], Catch::Matchers::WithinAbs(0.5, 1e-15));

  AttributedGraph ones = make_graph(4, {{0, 1}}, {2}, {1, 1, 1, 1}, {}, 0, "ones");
  Marginals m1 = empirical_marginals(ones);
  CHECK(m1.m_attr[0][0] == 0.0);
  CHECK(m1.m_attr[0][1] == 1.0);
}

TEST_CASE("node split counts and determinism") {
  // 3 classes x 30 nodes
  std::vector<int32_t> labels;
  std::vector<int32_t> attrs;
  for (int i = 0; i < 90; ++i) {
    labels.push_back(i / 30);
    attrs.push_back(i % 2);
  }
  AttributedGraph g = make_graph(90, {{0, 1}}, {2}, attrs, labels, 3, "classes");
  SplitSpec s = node_split(g, 20, 10, 15, 7);
  CHECK(s.train_nodes.size() == 60);
  CHECK(s.val_nodes.size() == 10);
  CHECK(s.test_nodes.size() == 15);
  std::vector<int> per_class(3, 0);
  for (int32_t v : s.train_nodes) per_class[static_cast<size_t>(g.labels[static_cast<size_t>(v)])]++;
  CHECK(per_class == std::vector<int>{20, 20, 20});
  // disjoint
  std::vector<int32_t> all = s.train_nodes;
  all.insert(all.end(), s.val_nodes.begin(), s.val_nodes.end());
  all.insert(all.end(), s.test_nodes.begin(), s.test_nodes.end());
  std::sort(all.begin(), all.end());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());

  SplitSpec s2 = node_split(g, 20, 10, 15, 7);
  CHECK(s.train_nodes == s2.train_nodes);
  CHECK(s.val_nodes == s2.val_nodes);
  CHECK(s.test_nodes == s2.test_nodes);

  CHECK_THROWS_AS(node_split(g, 31, 5, 5, 7), ConfigError);
}

TEST_CASE("edge split partitions positives and samples negatives") {
  // ring of 40 nodes: sparse enough for negatives
  std::vector<Edge> e;
  for (int32_t i = 0; i < 40; ++i) e.push_back({std::min(i, (i + 1) % 40), std::max(i, (i + 1) % 40)});
  std::vector<int32_t> attrs(40, 0);
  AttributedGraph g = make_graph(40, e, {2}, attrs, {}, 0, "ring");
  SplitSpec s = edge_split(g, 0.1, 0.2, 3);
  CHECK(s.val_pos.size() == 4);
  CHECK(s.test_pos.size() == 8);
  CHECK(s.train_pos.size() == 40 - 12);
  CHECK(s.val_neg.size() == 4);
  CHECK(s.test_neg.size() == 8);
  // positives partition the edge set
  std::vector<Edge> all = s.train_pos;
  all.insert(all.end(), s.val_pos.begin(), s.val_pos.end());
  all.insert(all.end(), s.test_pos.begin(), s.test_pos.end());
  std::sort(all.begin(), all.end());
  CHECK(all == g.edges);
  // negatives are non-edges, disjoint across val/test
  for (const Edge& ed : s.val_neg) CHECK_FALSE(g.has_edge(ed.first, ed.second));
  for (const Edge& ed : s.test_neg) CHECK_FALSE(g.has_edge(ed.first, ed.second));
  std::vector<Edge> negs = s.val_neg;
  negs.insert(negs.end(), s.test_neg.begin(), s.test_neg.end());
  std::sort(negs.begin(), negs.end());
  CHECK(std::adjacent_find(negs.begin(), negs.end()) == negs.end());

  SplitSpec s2 = edge_split(g, 0.1, 0.2, 3);
  CHECK(s.train_pos == s2.train_pos);
  CHECK(s.val_neg == s2.val_neg);

  CHECK_THROWS_AS(edge_split(complete4(), 0.2, 0.3, 1), SamplingError);
}

TEST_CASE("edge induced subsample") {
  AttributedGraph g = path4();
  AttributedGraph full = edge_induced_subsample(g, 3, 1);
  CHECK(full.n == 4);
  CHECK(full.num_edges() == 3);
  CHECK(full.attrs == g.attrs);

  AttributedGraph one = edge_induced_subsample(g, 1, 1);
  CHECK(one.n == 2);
  CHECK(one.num_edges() == 1);

  // distinct seeds give distinct edge sets with overwhelming probability
  std::vector<Edge> e;
  for (int32_t i = 0; i < 100; ++i) e.push_back({i, static_cast<int32_t>((i + 1) % 101)});
  for (Edge& ed : e) {
    if (ed.first > ed.second) std::swap(ed.first, ed.second);
  }
  AttributedGraph big = make_graph(101, e, {2}, std::vector<int32_t>(101, 0), {}, 0, "big");
  AttributedGraph a = edge_induced_subsample(big, 50, 1);
  AttributedGraph b = edge_induced_subsample(big, 50, 2);
  CHECK(a.edges != b.edges);

  CHECK_THROWS_AS(edge_induced_subsample(g, 4, 1), ArgumentError);
}

TEST_CASE("khop neighbors") {
  AttributedGraph g = path4();
  CHECK(khop_neighbors(g, 0, 1) == std::vector<int32_t>{1});
  CHECK(khop_neighbors(g, 0, 2) == std::vector<int32_t>{1, 2});
  AttributedGraph iso = make_graph(3, {{1, 2}}, {2}, {0, 0, 0}, {}, 0, "iso");
  CHECK(khop_neighbors(iso, 0, 2).empty());
}

TEST_CASE("pair index decode covers the triangle") {
  for (int64_t n : {2, 3, 7, 50}) {
    int64_t idx = 0;
    for (int32_t u = 0; u < n - 1; ++u) {
      for (int32_t v = u + 1; v < n; ++v) {
        CHECK(pair_from_index(n, idx) == Edge{u, v});
        ++idx;
      }
    }
  }
}
