#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "virel/discovery.hpp"
#include "virel/rng.hpp"

using namespace virel;

namespace {

RelGraph random_relgraph(int max_nodes, Rng& rng) {
  RelGraph g;
  g.n_nodes = rng.uniform_int(2, max_nodes);
  for (int k = 0; k < g.n_nodes; ++k)
    for (int l = k + 1; l < g.n_nodes; ++l)
      if (rng.uniform() < 0.45) {
        auto rel = static_cast<RelationType>(rng.uniform_int(1, 3));
        g.edges.push_back({k, l, rel});
      }
  return g;
}

// Brute-force maximum common edge subgraph size: try every injective partial
// mapping from a's nodes into b's nodes (including the skip option) and count
// preserved labeled edges.
int brute_mcs_edges(const RelGraph& a, const RelGraph& b) {
  std::vector<int> map(a.n_nodes, -1);
  std::vector<bool> used(b.n_nodes, false);
  int best = 0;
  auto count_edges = [&] {
    int n = 0;
    for (const auto& ea : a.edges) {
      int u = map[ea.k], v = map[ea.l];
      if (u < 0 || v < 0) continue;
      for (const auto& eb : b.edges) {
        int x = std::min(u, v), y = std::max(u, v);
        if (eb.k == x && eb.l == y && eb.rel == ea.rel) n++;
      }
    }
    return n;
  };
  std::function<void(int)> rec = [&](int i) {
    if (i == a.n_nodes) {
      best = std::max(best, count_edges());
      return;
    }
    rec(i + 1);  // leave node i unmapped
    for (int j = 0; j < b.n_nodes; ++j)
      if (!used[j]) {
        used[j] = true;
        map[i] = j;
        rec(i + 1);
        map[i] = -1;
        used[j] = false;
      }
  };
  rec(0);
  return best;
}

// Brute-force label isomorphism for graphs of equal node count.
bool brute_isomorphic(const RelGraph& a, const RelGraph& b) {
  auto strip = [](const RelGraph& g) {
    // drop isolated nodes: compact touched nodes only
    std::set<int> touched;
    for (const auto& e : g.edges) {
      touched.insert(e.k);
      touched.insert(e.l);
    }
    std::map<int, int> re;
    int next = 0;
    for (int t : touched) re[t] = next++;
    RelGraph out;
    out.n_nodes = next;
    for (const auto& e : g.edges) out.edges.push_back({re[e.k], re[e.l], e.rel});
    std::sort(out.edges.begin(), out.edges.end());
    return out;
  };
  RelGraph x = strip(a), y = strip(b);
  if (x.n_nodes != y.n_nodes || x.edges.size() != y.edges.size()) return false;
  std::vector<int> perm(x.n_nodes);
  std::iota(perm.begin(), perm.end(), 0);
  do {
    std::vector<Edge> mapped;
    for (const auto& e : x.edges) {
      int u = perm[e.k], v = perm[e.l];
      mapped.push_back({std::min(u, v), std::max(u, v), e.rel});
    }
    std::sort(mapped.begin(), mapped.end());
    if (mapped == y.edges) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return x.n_nodes == 0;
}

}  // namespace

TEST_CASE("kmeans separates well-separated clusters") {
  Rng rng(1);
  std::vector<std::vector<double>> pts;
  std::vector<int> truth;
  double centers[3][2] = {{0, 0}, {40, 0}, {0, 40}};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 30; ++i) {
      pts.push_back({centers[c][0] + rng.normal(), centers[c][1] + rng.normal()});
      truth.push_back(c);
    }
  auto model = fit_kmeans(pts, 3, 7);
  REQUIRE(model.centroids.size() == 3);
  std::vector<int> pred;
  for (const auto& p : pts) pred.push_back(model.assign(p));
  auto [acc, assign] = permutation_accuracy(pred, truth, 3);
  CHECK(acc == doctest::Approx(1.0));
  // every true centroid is recovered to within sampling noise
  for (int c = 0; c < 3; ++c) {
    double best = 1e18;
    for (const auto& ct : model.centroids) {
      double d = std::hypot(ct[0] - centers[c][0], ct[1] - centers[c][1]);
      best = std::min(best, d);
    }
    CHECK(best < 1.0);
  }
}

TEST_CASE("kmeans with k=1 returns the global mean") {
  std::vector<std::vector<double>> pts = {{1, 1}, {3, 5}, {5, 0}};
  auto model = fit_kmeans(pts, 1, 0);
  REQUIRE(model.centroids.size() == 1);
  CHECK(model.centroids[0][0] == doctest::Approx(3.0));
  CHECK(model.centroids[0][1] == doctest::Approx(2.0));
  double inertia = 0;
  for (const auto& p : pts)
    inertia += (p[0] - 3) * (p[0] - 3) + (p[1] - 2) * (p[1] - 2);
  CHECK(model.inertia == doctest::Approx(inertia));
}

TEST_CASE("more restarts never increase the best inertia") {
  Rng rng(5);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 60; ++i)
    pts.push_back({rng.uniform() * 10, rng.uniform() * 10, rng.uniform() * 10});
  KMeansOptions one;
  one.restarts = 1;
  KMeansOptions many;
  many.restarts = 10;
  auto a = fit_kmeans(pts, 5, 42, one);
  auto b = fit_kmeans(pts, 5, 42, many);
  CHECK(b.inertia <= a.inertia + 1e-9);
}

TEST_CASE("kmeans rejects degenerate input") {
  std::vector<std::vector<double>> same(5, std::vector<double>{2.0, 2.0});
  CHECK_THROWS_AS(fit_kmeans(same, 3, 1), DegenerateData);
  std::vector<std::vector<double>> few = {{1, 0}, {0, 1}};
  CHECK_THROWS_AS(fit_kmeans(few, 3, 1), DegenerateData);
}

TEST_CASE("permutation accuracy oracle cases") {
  SUBCASE("relabeled perfect clustering scores 1") {
    std::vector<int> pred = {2, 2, 0, 0, 1, 1};
    std::vector<int> truth = {0, 0, 1, 1, 3, 3};
    auto [acc, assign] = permutation_accuracy(pred, truth, 4);
    CHECK(acc == doctest::Approx(1.0));
    CHECK(assign[2] == 0);
    CHECK(assign[0] == 1);
    CHECK(assign[1] == 3);
  }
  SUBCASE("hand-computed 3/4") {
    std::vector<int> pred = {0, 0, 0, 1};
    std::vector<int> truth = {1, 1, 0, 0};
    auto [acc, assign] = permutation_accuracy(pred, truth, 2);
    CHECK(acc == doctest::Approx(0.75));
  }
  SUBCASE("length mismatch throws") {
    CHECK_THROWS_AS(permutation_accuracy({0, 1}, {0}, 2), LengthMismatch);
  }
}

TEST_CASE("permutation accuracy matches brute force over all bijections") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    int n = rng.uniform_int(4, 24);
    std::vector<int> pred(n), truth(n);
    for (int i = 0; i < n; ++i) {
      pred[i] = rng.uniform_int(0, 3);
      truth[i] = rng.uniform_int(0, 3);
    }
    auto [acc, assign] = permutation_accuracy(pred, truth, 4);
    // brute force over the 24 bijections
    std::vector<int> perm = {0, 1, 2, 3};
    double best = 0;
    do {
      int hits = 0;
      for (int i = 0; i < n; ++i) hits += perm[pred[i]] == truth[i];
      best = std::max(best, static_cast<double>(hits) / n);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(acc == doctest::Approx(best).epsilon(1e-12));
    // reported assignment achieves the reported accuracy
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += assign[pred[i]] == truth[i];
    CHECK(static_cast<double>(hits) / n == doctest::Approx(acc));
  }
}

TEST_CASE("canonicalize basics") {
  RelGraph empty;
  empty.n_nodes = 3;
  CHECK(canonicalize(empty) == "<empty>");

  RelGraph a;
  a.n_nodes = 3;
  a.edges = {{0, 1, RelationType::Inside}};
  RelGraph b;
  b.n_nodes = 5;
  b.edges = {{2, 4, RelationType::Inside}};
  CHECK(canonicalize(a) == canonicalize(b));  // isolated nodes are immaterial

  RelGraph c;
  c.n_nodes = 3;
  c.edges = {{0, 1, RelationType::SameColor}};
  CHECK(canonicalize(a) != canonicalize(c));

  RelGraph big;
  big.n_nodes = 9;
  big.edges = {{0, 8, RelationType::Inside}};
  CHECK_THROWS_AS(canonicalize(big), NodeBudgetExceeded);
}

TEST_CASE("canonicalize agrees with brute-force isomorphism") {
  Rng rng(314);
  std::vector<RelGraph> graphs;
  for (int i = 0; i < 60; ++i) graphs.push_back(random_relgraph(5, rng));
  for (size_t i = 0; i < graphs.size(); ++i)
    for (size_t j = i; j < graphs.size(); ++j) {
      bool iso = brute_isomorphic(graphs[i], graphs[j]);
      bool canon = canonicalize(graphs[i]) == canonicalize(graphs[j]);
      INFO("pair ", i, ",", j);
      CHECK(iso == canon);
    }
}

TEST_CASE("format_relgraph renders appendix style") {
  RelGraph g;
  g.n_nodes = 3;
  g.edges = {{0, 1, RelationType::Inside}, {1, 2, RelationType::SameColor}};
  CHECK(format_relgraph(g) == "[(0, 1), 'inside'], [(1, 2), 'same-color']");
  RelGraph empty;
  empty.n_nodes = 2;
  CHECK(format_relgraph(empty) == "[]");
}

TEST_CASE("MCS matches exhaustive enumeration on random small pairs") {
  Rng rng(2718);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = random_relgraph(5, rng);
    auto b = random_relgraph(5, rng);
    auto witness = mcs_of_pair(a, b);
    int expect = brute_mcs_edges(a, b);
    INFO("trial ", trial);
    CHECK(static_cast<int>(witness.graph.edges.size()) == expect);
    // the witness must embed into both inputs
    CHECK(contains_subgraph(a, witness.graph));
    CHECK(contains_subgraph(b, witness.graph));
    // and the maps must realize it edge by edge
    for (const auto& e : witness.graph.edges) {
      auto check_in = [&](const RelGraph& g, const std::vector<int>& m) {
        int u = m[e.k], v = m[e.l];
        Edge want{std::min(u, v), std::max(u, v), e.rel};
        CHECK(std::find(g.edges.begin(), g.edges.end(), want) != g.edges.end());
      };
      check_in(a, witness.map_a);
      check_in(b, witness.map_b);
    }
  }
}

TEST_CASE("MCS of a graph with itself is itself") {
  RelGraph g;
  g.n_nodes = 4;
  g.edges = {{0, 1, RelationType::Inside},
             {1, 2, RelationType::SameColor},
             {2, 3, RelationType::SameShape}};
  auto w = mcs_of_pair(g, g);
  CHECK(canonicalize(w.graph) == canonicalize(g));
}

TEST_CASE("MCS of disjoint label sets is empty") {
  RelGraph a;
  a.n_nodes = 2;
  a.edges = {{0, 1, RelationType::Inside}};
  RelGraph b;
  b.n_nodes = 2;
  b.edges = {{0, 1, RelationType::SameShape}};
  auto w = mcs_of_pair(a, b);
  CHECK(w.graph.edges.empty());
  CHECK(canonicalize(w.graph) == "<empty>");
}

TEST_CASE("contains_subgraph") {
  RelGraph g;
  g.n_nodes = 3;
  g.edges = {{0, 1, RelationType::Inside}, {0, 2, RelationType::SameColor}};
  RelGraph sub;
  sub.n_nodes = 2;
  sub.edges = {{0, 1, RelationType::Inside}};
  CHECK(contains_subgraph(g, sub));
  RelGraph not_sub;
  not_sub.n_nodes = 2;
  not_sub.edges = {{0, 1, RelationType::SameShape}};
  CHECK(!contains_subgraph(g, not_sub));
  RelGraph empty;
  empty.n_nodes = 1;
  CHECK(contains_subgraph(g, empty));
}

TEST_CASE("retrieval groups, folds and tallies") {
  RelGraph inside;
  inside.n_nodes = 2;
  inside.edges = {{0, 1, RelationType::Inside}};
  RelGraph color;
  color.n_nodes = 2;
  color.edges = {{0, 1, RelationType::SameColor}};
  RelGraph both;
  both.n_nodes = 3;
  both.edges = {{0, 1, RelationType::Inside}, {1, 2, RelationType::SameColor}};

  SUBCASE("uniform groups agree on the shared structure") {
    // 12 graphs -> groups of 5, 5, and a kept tail of 2
    std::vector<RelGraph> gs(12, both);
    auto top = task_mcs_retrieval(gs, 5, 3);
    REQUIRE(top.size() == 1);
    CHECK(top[0].count == 3);
    CHECK(canonicalize(top[0].graph) == canonicalize(both));
  }
  SUBCASE("a tail of one is dropped") {
    std::vector<RelGraph> gs(11, inside);
    auto top = task_mcs_retrieval(gs, 5, 3);
    REQUIRE(top.size() == 1);
    CHECK(top[0].count == 2);
  }
  SUBCASE("mixed groups fold to the common subgraph") {
    std::vector<RelGraph> gs;
    for (int i = 0; i < 4; ++i) gs.push_back(both);
    gs.push_back(inside);  // group 1 folds to 'inside'
    for (int i = 0; i < 5; ++i) gs.push_back(both);
    for (int i = 0; i < 5; ++i) gs.push_back(color);
    auto top = task_mcs_retrieval(gs, 5, 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0].count == 1);  // three distinct forms, one group each
    std::set<std::string> forms;
    for (const auto& e : top) forms.insert(canonicalize(e.graph));
    CHECK(forms.count(canonicalize(inside)) == 1);
    CHECK(forms.count(canonicalize(both)) == 1);
    CHECK(forms.count(canonicalize(color)) == 1);
  }
  SUBCASE("top_k truncates") {
    std::vector<RelGraph> gs;
    for (int i = 0; i < 10; ++i) gs.push_back(inside);
    for (int i = 0; i < 5; ++i) gs.push_back(color);
    for (int i = 0; i < 5; ++i) gs.push_back(both);
    auto top = task_mcs_retrieval(gs, 5, 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].count == 2);
    CHECK(canonicalize(top[0].graph) == canonicalize(inside));
  }
  SUBCASE("too few graphs") {
    std::vector<RelGraph> gs = {inside};
    CHECK_THROWS_AS(task_mcs_retrieval(gs, 5, 3), TooFewGraphs);
  }
}

TEST_CASE("relgraph_from_edges") {
  std::vector<Edge> edges = {{1, 3, RelationType::Inside}};
  auto g = relgraph_from_edges(4, edges);
  CHECK(g.n_nodes == 4);
  CHECK(g.edges == edges);
}
