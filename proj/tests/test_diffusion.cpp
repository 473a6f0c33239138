#include <catch_amalgamated.hpp>
#include <cmath>
#include <map>

#include "graphmaker/diffusion.hpp"

using namespace graphmaker;

namespace {

Marginals binary_marginals(double attr_p1, double edge_p1) {
  Marginals m;
  m.m_attr = {{1.0 - attr_p1, attr_p1}};
  m.m_edge = {1.0 - edge_p1, edge_p1};
  return m;
}

// Brute-force Bayes oracle: numerator over the intermediate state z of
// Qbar^{t-1}[x0, z] * Q^{t}[z, xt], normalized. Built from dense matrices so
// it shares no code path with true_posterior.
std::vector<double> bayes_oracle(int x0, int xt, const Tensor& qbar_prev, const Tensor& qstep) {
  const int n = static_cast<int>(qbar_prev.rows());
  std::vector<double> out(static_cast<size_t>(n));
  double z = 0.0;
  for (int j = 0; j < n; ++j) {
    out[static_cast<size_t>(j)] = qbar_prev.at(x0, j) * qstep.at(j, xt);
    z += out[static_cast<size_t>(j)];
  }
  for (double& v : out) v /= z;
  return out;
}

double tv_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

AttributedGraph path4() {
  return make_graph(4, {{0, 1}, {1, 2}, {2, 3}}, {2}, {0, 1, 1, 0}, {}, 0, "path4");
}

}  // namespace

TEST_CASE("alpha_bar boundary values") {
  NoiseSchedule sch = make_async_schedule(6, 9, 0.008, binary_marginals(0.7, 0.5));
  CHECK(sch.total_steps == 15);
  CHECK(alpha_bar(sch, 0, Component::kAttr) == 1.0);
  CHECK(alpha_bar(sch, 0, Component::kEdge) == 1.0);
  // attribute clock has not started at t=5
  CHECK(alpha_bar(sch, 5, Component::kAttr) == 1.0);
  // edge clock frozen past t_m
  CHECK(alpha_bar(sch, 12, Component::kEdge) == alpha_bar(sch, 9, Component::kEdge));
  CHECK_THROWS_AS(alpha_bar(sch, 16, Component::kAttr), ArgumentError);
  CHECK_THROWS_AS(alpha_bar(sch, -1, Component::kAttr), ArgumentError);

  // terminal cosine value: cos^2(pi/2) in floating point
  NoiseSchedule s10 = make_sync_schedule(10, 0.008, binary_marginals(0.7, 0.5));
  const double last = alpha_bar(s10, 10, Component::kAttr);
  CHECK(last > 0.0);
  CHECK(last <= 1e-30);

  // monotone decreasing in gamma, alpha_bar_0 = 1 exactly
  for (size_t g = 1; g < s10.alpha_bar_attr.size(); ++g) {
    CHECK(s10.alpha_bar_attr[g] < s10.alpha_bar_attr[g - 1]);
  }
  CHECK(s10.alpha_bar_attr[0] == 1.0);
}

TEST_CASE("qbar degenerate and hand-computed rows") {
  NoiseSchedule sch = make_sync_schedule(3, 0.008, binary_marginals(0.7, 0.5));
  TransitionMatrix id = qbar(sch, 0, Component::kAttr, 0);
  CHECK(id.prob(0, 0) == 1.0);
  CHECK(id.prob(0, 1) == 0.0);
  CHECK(id.prob(1, 1) == 1.0);

  TransitionMatrix tm;
  tm.alpha = 0.0;
  tm.m = {0.3, 0.7};
  for (int from = 0; from < 2; ++from) {
    CHECK(tm.prob(from, 0) == 0.3);
    CHECK(tm.prob(from, 1) == 0.7);
  }

  tm.alpha = 0.5;
  CHECK_THAT(tm.prob(0, 0), Catch::Matchers::WithinAbs(0.65, 1e-15));
  CHECK_THAT(tm.prob(0, 1), Catch::Matchers::WithinAbs(0.35, 1e-15));
  CHECK_THAT(tm.prob(1, 0), Catch::Matchers::WithinAbs(0.15, 1e-15));
  CHECK_THAT(tm.prob(1, 1), Catch::Matchers::WithinAbs(0.85, 1e-15));
}

TEST_CASE("q_step ratio and composition identity") {
  Marginals m = binary_marginals(0.7, 0.3);
  for (auto sch : {make_sync_schedule(3, 0.008, m), make_async_schedule(6, 9, 0.008, m)}) {
    for (Component c : {Component::kAttr, Component::kEdge}) {
      for (int64_t t = 1; t <= sch.total_steps; ++t) {
        Tensor lhs = matmul_raw(qbar(sch, t - 1, c).dense(), q_step(sch, t, c).dense());
        Tensor rhs = qbar(sch, t, c).dense();
        for (size_t i = 0; i < lhs.data.size(); ++i) {
          CHECK_THAT(lhs.data[i], Catch::Matchers::WithinAbs(rhs.data[i], 1e-12));
        }
      }
    }
  }

  // alpha ratio example
  Marginals m2 = binary_marginals(0.7, 0.3);
  NoiseSchedule sch = make_sync_schedule(2, 0.008, m2);
  sch.alpha_bar_attr = {1.0, 0.8, 0.5};
  CHECK_THAT(q_step(sch, 2, Component::kAttr).alpha, Catch::Matchers::WithinAbs(0.625, 1e-15));
  CHECK(q_step(sch, 1, Component::kAttr).alpha == sch.alpha_bar_attr[1]);
}

TEST_CASE("true_posterior equals brute-force enumeration") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 2 + static_cast<int>(rng.next_below(4));  // C in [2,5]
    std::vector<double> m(static_cast<size_t>(c));
    double z = 0.0;
    for (double& v : m) {
      v = 0.05 + rng.next_double();
      z += v;
    }
    for (double& v : m) v /= z;
    double a_prev = 0.05 + 0.9 * rng.next_double();
    double a_cur = a_prev * (0.05 + 0.9 * rng.next_double());
    Marginals mm;
    mm.m_attr = {m};
    mm.m_edge = {0.5, 0.5};
    NoiseSchedule sch = make_sync_schedule(2, 0.008, mm);
    sch.alpha_bar_attr = {1.0, a_prev, a_cur};
    const int x0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(c)));
    const int xt = static_cast<int>(rng.next_below(static_cast<uint64_t>(c)));
    auto post = true_posterior(x0, xt, sch, 2, Component::kAttr, 0);
    auto oracle = bayes_oracle(x0, xt, qbar(sch, 1, Component::kAttr).dense(),
                               q_step(sch, 2, Component::kAttr).dense());
    double sum = 0.0;
    for (size_t j = 0; j < post.size(); ++j) {
      CHECK_THAT(post[j], Catch::Matchers::WithinAbs(oracle[j], 1e-12));
      sum += post[j];
    }
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("true_posterior at the first corrupting step is a point mass") {
  NoiseSchedule sch = make_sync_schedule(3, 0.008, binary_marginals(0.7, 0.5));
  for (int x0 = 0; x0 < 2; ++x0) {
    for (int xt = 0; xt < 2; ++xt) {
      auto post = true_posterior(x0, xt, sch, 1, Component::kAttr, 0);
      CHECK(post[static_cast<size_t>(x0)] == 1.0);
      CHECK(post[static_cast<size_t>(1 - x0)] == 0.0);
    }
  }
}

TEST_CASE("model_posterior reductions") {
  NoiseSchedule sch = make_sync_schedule(3, 0.008, binary_marginals(0.7, 0.4));

  // point mass reduction, exact
  for (int x0 = 0; x0 < 2; ++x0) {
    std::vector<double> p0 = {x0 == 0 ? 1.0 : 0.0, x0 == 1 ? 1.0 : 0.0};
    auto mp = model_posterior(p0, 1, sch, 2, Component::kAttr, 0);
    auto tp = true_posterior(x0, 1, sch, 2, Component::kAttr, 0);
    CHECK(mp == tp);
  }

  // symmetric case: uniform p0 and symmetric marginal
  NoiseSchedule ssym = make_sync_schedule(3, 0.008, binary_marginals(0.5, 0.5));
  std::vector<double> uniform = {0.5, 0.5};
  auto mp = model_posterior(uniform, 0, ssym, 2, Component::kAttr, 0);
  auto mp_flip = model_posterior(uniform, 1, ssym, 2, Component::kAttr, 0);
  CHECK_THAT(mp[0], Catch::Matchers::WithinAbs(mp_flip[1], 1e-12));
  CHECK_THAT(mp[1], Catch::Matchers::WithinAbs(mp_flip[0], 1e-12));

  // linearity in p0
  Rng rng(4);
  std::vector<double> p = {0.2, 0.8}, q = {0.6, 0.4};
  const double lam = 0.3;
  std::vector<double> mix = {lam * p[0] + (1 - lam) * q[0], lam * p[1] + (1 - lam) * q[1]};
  auto mpp = model_posterior(p, 1, sch, 2, Component::kAttr, 0);
  auto mpq = model_posterior(q, 1, sch, 2, Component::kAttr, 0);
  auto mpm = model_posterior(mix, 1, sch, 2, Component::kAttr, 0);
  for (size_t j = 0; j < 2; ++j) {
    CHECK_THAT(mpm[j], Catch::Matchers::WithinAbs(lam * mpp[j] + (1 - lam) * mpq[j], 1e-12));
  }

  // edge posterior table matches model_posterior through the same schedule
  auto tab = edge_posterior_table(sch, 2);
  for (int at = 0; at < 2; ++at) {
    for (int x0 = 0; x0 < 2; ++x0) {
      auto tp = true_posterior(x0, at, sch, 2, Component::kEdge);
      CHECK(tab[static_cast<size_t>(at)][static_cast<size_t>(x0)] == tp[1]);
    }
  }
}

TEST_CASE("corrupt identity at t=0 and async freezing") {
  AttributedGraph g = path4();
  Marginals m = empirical_marginals(g);
  NoiseSchedule sch = make_async_schedule(3, 4, 0.008, m);

  NoisyGraph clean = corrupt(g, sch, 0, 7);
  CHECK(clean.attrs == g.attrs);
  CHECK(clean.edges == g.edges);

  // attributes untouched for t <= t_m
  for (int64_t t = 1; t <= 4; ++t) {
    NoisyGraph ng = corrupt(g, sch, t, 7);
    CHECK(ng.attrs == g.attrs);
  }
  // edges untouched relative to their t_m state for t > t_m
  NoisyGraph at_tm = corrupt(g, sch, 4, 7);
  for (int64_t t = 5; t <= 7; ++t) {
    NoisyGraph ng = corrupt(g, sch, t, 7);
    CHECK(ng.edges == at_tm.edges);
  }
}

TEST_CASE("corrupt at full noise matches the marginal (Monte Carlo)") {
  // single node, single binary attribute with m = (0.3, 0.7)
  AttributedGraph g = make_graph(2, {{0, 1}}, {2}, {0, 0}, {}, 0, "mc");
  Marginals m = binary_marginals(0.7, 0.5);
  NoiseSchedule sch = make_sync_schedule(10, 0.008, m);
  int64_t ones = 0;
  const int64_t samples = 100000;
  for (int64_t i = 0; i < samples; ++i) {
    NoisyGraph ng = corrupt(g, sch, 10, static_cast<uint64_t>(i));
    ones += ng.attrs[0];
  }
  const double freq = static_cast<double>(ones) / static_cast<double>(samples);
  CHECK_THAT(freq, Catch::Matchers::WithinAbs(0.7, 0.01));
}

TEST_CASE("stepwise corruption composes to the single-shot kernel") {
  // TV distance between empirical distributions of x_t via stepwise chain
  // and via single-shot qbar, 1e5 samples, 10 random schedule points.
  Rng seeder(1234);
  const int64_t samples = 100000;
  for (int rep = 0; rep < 10; ++rep) {
    const int c = 2 + static_cast<int>(seeder.next_below(3));
    std::vector<double> m(static_cast<size_t>(c));
    double z = 0.0;
    for (double& v : m) {
      v = 0.05 + seeder.next_double();
      z += v;
    }
    for (double& v : m) v /= z;
    Marginals mm;
    mm.m_attr = {m};
    mm.m_edge = {0.5, 0.5};
    const int64_t steps = 2 + static_cast<int64_t>(seeder.next_below(5));
    NoiseSchedule sch = make_sync_schedule(steps, 0.008, mm);
    const int64_t t = 1 + static_cast<int64_t>(seeder.next_below(static_cast<uint64_t>(steps)));
    const int x0 = static_cast<int>(seeder.next_below(static_cast<uint64_t>(c)));

    std::vector<double> emp_step(static_cast<size_t>(c), 0.0);
    std::vector<double> emp_shot(static_cast<size_t>(c), 0.0);
    Rng rng(seeder.next_u64());
    for (int64_t i = 0; i < samples; ++i) {
      int x = x0;
      for (int64_t tt = 1; tt <= t; ++tt) {
        x = q_step(sch, tt, Component::kAttr, 0).sample_row(x, rng);
      }
      emp_step[static_cast<size_t>(x)] += 1.0;
      const int y = qbar(sch, t, Component::kAttr, 0).sample_row(x0, rng);
      emp_shot[static_cast<size_t>(y)] += 1.0;
    }
    for (double& v : emp_step) v /= static_cast<double>(samples);
    for (double& v : emp_shot) v /= static_cast<double>(samples);
    CHECK(tv_distance(emp_step, emp_shot) < 0.02);
  }
}

TEST_CASE("prior_sample extremes and statistics") {
  Marginals m0 = binary_marginals(0.7, 0.0);
  NoiseSchedule s0 = make_sync_schedule(3, 0.008, m0);
  CHECK(prior_sample(s0, 10, {2}, 1).edges.empty());

  Marginals m1 = binary_marginals(0.7, 1.0);
  NoiseSchedule s1 = make_sync_schedule(3, 0.008, m1);
  CHECK(static_cast<int64_t>(prior_sample(s1, 10, {2}, 1).edges.size()) == 45);

  // Cora-like density: expected edges 5278 out of C(2708, 2) pairs
  const double p = 5278.0 / 3665278.0;
  Marginals mc = binary_marginals(0.5, p);
  NoiseSchedule sc = make_sync_schedule(3, 0.008, mc);
  double total = 0.0;
  const int draws = 20;
  for (int i = 0; i < draws; ++i) {
    total += static_cast<double>(prior_sample(sc, 2708, {2}, static_cast<uint64_t>(i)).edges.size());
  }
  const double mean = total / draws;
  const double expect = 3665278.0 * p;
  const double sigma = std::sqrt(3665278.0 * p * (1 - p));
  CHECK(std::abs(mean - expect) < 3.0 * sigma / std::sqrt(static_cast<double>(draws)) + 1e-9);

  // attribute marginal convergence
  NoiseSchedule sa = make_sync_schedule(3, 0.008, binary_marginals(0.7, 0.0));
  int64_t ones = 0;
  NoisyGraph big = prior_sample(sa, 100000, {2}, 42);
  for (int32_t a : big.attrs) ones += a;
  CHECK_THAT(static_cast<double>(ones) / 100000.0, Catch::Matchers::WithinAbs(0.7, 0.01));
}

TEST_CASE("corrupt determinism per seed") {
  AttributedGraph g = path4();
  NoiseSchedule sch = make_sync_schedule(3, 0.008, empirical_marginals(g));
  NoisyGraph a = corrupt(g, sch, 2, 11);
  NoisyGraph b = corrupt(g, sch, 2, 11);
  CHECK(a.attrs == b.attrs);
  CHECK(a.edges == b.edges);
}
