#include "virel/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "virel/rng.hpp"

namespace virel {

namespace {

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

int ClusterModel::assign(const std::vector<double>& x) const {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < centroids.size(); ++c) {
    double d = sqdist(x, centroids[c]);
    if (d < bd) {
      bd = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

ClusterModel fit_kmeans(const std::vector<std::vector<double>>& points, int k,
                        uint64_t seed, const KMeansOptions& opt) {
  if (k < 1) throw DegenerateData("k < 1");
  std::set<std::vector<double>> distinct(points.begin(), points.end());
  if (static_cast<int>(distinct.size()) < k)
    throw DegenerateData("fewer than k distinct points");
  const size_t n = points.size();
  const size_t dim = points[0].size();
  Rng rng(seed);

  ClusterModel best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < opt.restarts; ++restart) {
    // k-means++ seeding
    std::vector<std::vector<double>> cents;
    cents.push_back(points[rng.next_u64() % n]);
    std::vector<double> d2(n);
    while (static_cast<int>(cents.size()) < k) {
      double total = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double d = std::numeric_limits<double>::infinity();
        for (const auto& c : cents) d = std::min(d, sqdist(points[i], c));
        d2[i] = d;
        total += d;
      }
      double r = rng.uniform() * total;
      size_t pick = 0;
      double acc = 0.0;
      for (size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
      cents.push_back(points[pick]);
    }

    std::vector<int> assign(n, -1);
    double inertia = 0.0;
    for (int iter = 0; iter < opt.max_iters; ++iter) {
      inertia = 0.0;
      for (size_t i = 0; i < n; ++i) {
        int bi = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          double d = sqdist(points[i], cents[c]);
          if (d < bd) {
            bd = d;
            bi = c;
          }
        }
        assign[i] = bi;
        inertia += bd;
      }
      std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
      std::vector<int> count(k, 0);
      for (size_t i = 0; i < n; ++i) {
        ++count[assign[i]];
        for (size_t d = 0; d < dim; ++d) next[assign[i]][d] += points[i][d];
      }
      double shift = 0.0;
      for (int c = 0; c < k; ++c) {
        if (count[c] == 0) {
          // Re-seed an empty cluster at the farthest point.
          size_t far = 0;
          double fd = -1.0;
          for (size_t i = 0; i < n; ++i) {
            double d = sqdist(points[i], cents[assign[i]]);
            if (d > fd) {
              fd = d;
              far = i;
            }
          }
          next[c] = points[far];
        } else {
          for (size_t d = 0; d < dim; ++d) next[c][d] /= count[c];
        }
        shift += sqdist(next[c], cents[c]);
        cents[c] = next[c];
      }
      if (shift < opt.tol) break;
    }
    // Final inertia with the settled centroids.
    inertia = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) bd = std::min(bd, sqdist(points[i], cents[c]));
      inertia += bd;
    }
    if (inertia < best.inertia) {
      best.centroids = cents;
      best.inertia = inertia;
    }
  }
  best.restarts = opt.restarts;
  return best;
}

std::pair<double, std::vector<int>> permutation_accuracy(
    const std::vector<int>& predicted_clusters, const std::vector<int>& true_labels,
    int k) {
  if (predicted_clusters.size() != true_labels.size()) throw LengthMismatch();
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  double best_acc = -1.0;
  std::vector<int> best_perm = perm;
  do {
    size_t hits = 0;
    for (size_t i = 0; i < predicted_clusters.size(); ++i)
      if (perm[predicted_clusters[i]] == true_labels[i]) ++hits;
    double acc = predicted_clusters.empty()
                     ? 0.0
                     : static_cast<double>(hits) / predicted_clusters.size();
    if (acc > best_acc) {
      best_acc = acc;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best_acc, best_perm};
}

// ---- relation graphs ----

RelGraph relgraph_from_edges(int n_nodes, const std::vector<Edge>& edges) {
  RelGraph g;
  g.n_nodes = n_nodes;
  for (const auto& e : edges)
    if (e.rel != RelationType::None) g.edges.push_back(e);
  std::sort(g.edges.begin(), g.edges.end());
  return g;
}

namespace {

constexpr int kNodeBudget = 8;

std::string serialize_edges(std::vector<Edge> edges) {
  std::sort(edges.begin(), edges.end());
  std::string s;
  for (const auto& e : edges) {
    s.push_back(static_cast<char>('0' + e.k));
    s.push_back(static_cast<char>('0' + e.l));
    s.push_back(static_cast<char>('a' + static_cast<int>(e.rel)));
  }
  return s;
}

// Compact the graph to its touched nodes, preserving relative order.
std::pair<std::vector<Edge>, int> compact(const std::vector<Edge>& edges) {
  std::set<int> nodes;
  for (const auto& e : edges) {
    nodes.insert(e.k);
    nodes.insert(e.l);
  }
  std::map<int, int> remap;
  int next = 0;
  for (int v : nodes) remap[v] = next++;
  std::vector<Edge> out;
  for (const auto& e : edges) out.push_back({remap[e.k], remap[e.l], e.rel});
  return {out, next};
}

}  // namespace

std::string canonicalize(const RelGraph& g) {
  if (g.n_nodes > kNodeBudget) throw NodeBudgetExceeded(g.n_nodes);
  if (g.edges.empty()) return "<empty>";
  auto [edges, n] = compact(g.edges);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::string best;
  do {
    std::vector<Edge> mapped;
    for (const auto& e : edges) {
      int a = perm[e.k], b = perm[e.l];
      if (a > b) std::swap(a, b);
      mapped.push_back({a, b, e.rel});
    }
    std::string s = serialize_edges(std::move(mapped));
    if (best.empty() || s < best) best = s;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::string format_relgraph(const RelGraph& g) {
  std::string s;
  for (size_t i = 0; i < g.edges.size(); ++i) {
    if (i) s += ", ";
    s += "[(" + std::to_string(g.edges[i].k) + ", " + std::to_string(g.edges[i].l) +
         "), '" + to_string(g.edges[i].rel) + "']";
  }
  return s.empty() ? "[]" : s;
}

namespace {

struct McsSearch {
  const RelGraph* a;
  const RelGraph* b;
  std::vector<std::vector<RelationType>> adj_a, adj_b;
  std::vector<int> mapping;       // a-node -> b-node or -1
  std::vector<bool> used_b;
  int best_count = -1;
  std::string best_canon;
  std::vector<int> best_mapping;

  // Edges of `a` wholly among nodes >= i can still be matched.
  std::vector<int> remaining_edges;  // for pruning: edges of a touching node >= i

  void run() {
    int na = a->n_nodes;
    mapping.assign(na, -1);
    used_b.assign(b->n_nodes, false);
    remaining_edges.assign(na + 1, 0);
    for (int i = na - 1; i >= 0; --i) {
      int cnt = 0;
      for (const auto& e : a->edges)
        if (e.k >= i || e.l >= i) ++cnt;
      remaining_edges[i] = cnt;
    }
    dfs(0, 0);
  }

  void dfs(int i, int matched) {
    if (matched + remaining_edges[i] < best_count) return;
    if (i == static_cast<int>(mapping.size())) {
      consider(matched);
      return;
    }
    for (int j = -1; j < b->n_nodes; ++j) {
      if (j >= 0 && used_b[j]) continue;
      int gain = 0;
      if (j >= 0) {
        for (const auto& e : a->edges) {
          int other = e.k == i ? e.l : (e.l == i ? e.k : -1);
          if (other < 0 || other >= i) continue;  // count edges to earlier nodes
          int mo = mapping[other];
          if (mo >= 0 && adj_b[std::min(j, mo)][std::max(j, mo)] == e.rel &&
              e.rel != RelationType::None)
            ++gain;
        }
        used_b[j] = true;
      }
      mapping[i] = j;
      dfs(i + 1, matched + gain);
      mapping[i] = -1;
      if (j >= 0) used_b[j] = false;
    }
  }

  void consider(int matched) {
    if (matched < best_count) return;
    std::vector<Edge> common;
    for (const auto& e : a->edges) {
      int mk = mapping[e.k], ml = mapping[e.l];
      if (mk >= 0 && ml >= 0 &&
          adj_b[std::min(mk, ml)][std::max(mk, ml)] == e.rel)
        common.push_back(e);
    }
    RelGraph g;
    g.n_nodes = a->n_nodes;
    g.edges = common;
    std::string canon = canonicalize(g);
    if (matched > best_count || canon < best_canon) {
      best_count = matched;
      best_canon = canon;
      best_mapping = mapping;
    }
  }
};

std::vector<std::vector<RelationType>> adjacency(const RelGraph& g) {
  std::vector<std::vector<RelationType>> adj(
      g.n_nodes, std::vector<RelationType>(g.n_nodes, RelationType::None));
  for (const auto& e : g.edges) adj[e.k][e.l] = e.rel;
  return adj;
}

}  // namespace

McsWitness mcs_of_pair(const RelGraph& a, const RelGraph& b) {
  if (a.n_nodes > kNodeBudget) throw NodeBudgetExceeded(a.n_nodes);
  if (b.n_nodes > kNodeBudget) throw NodeBudgetExceeded(b.n_nodes);
  McsSearch s;
  s.a = &a;
  s.b = &b;
  s.adj_a = adjacency(a);
  s.adj_b = adjacency(b);
  s.best_count = 0;
  s.best_canon = "<unset>";
  s.best_mapping.assign(a.n_nodes, -1);
  s.run();

  // Rebuild the winning common subgraph with witness maps.
  std::vector<Edge> common;
  for (const auto& e : a.edges) {
    int mk = s.best_mapping[e.k], ml = s.best_mapping[e.l];
    if (mk >= 0 && ml >= 0 &&
        s.adj_b[std::min(mk, ml)][std::max(mk, ml)] == e.rel)
      common.push_back(e);
  }
  std::set<int> nodes;
  for (const auto& e : common) {
    nodes.insert(e.k);
    nodes.insert(e.l);
  }
  McsWitness w;
  std::map<int, int> remap;
  for (int v : nodes) {
    remap[v] = static_cast<int>(w.map_a.size());
    w.map_a.push_back(v);
    w.map_b.push_back(s.best_mapping[v]);
  }
  w.graph.n_nodes = static_cast<int>(nodes.size());
  for (const auto& e : common)
    w.graph.edges.push_back({remap[e.k], remap[e.l], e.rel});
  std::sort(w.graph.edges.begin(), w.graph.edges.end());
  return w;
}

bool contains_subgraph(const RelGraph& g, const RelGraph& sub) {
  auto w = mcs_of_pair(sub, g);
  return w.graph.edges.size() == sub.edges.size();
}

std::vector<McsTallyEntry> task_mcs_retrieval(const std::vector<RelGraph>& graphs,
                                              int group_size, int top_k) {
  if (static_cast<int>(graphs.size()) < group_size)
    throw TooFewGraphs(std::to_string(graphs.size()) + " < group size " +
                       std::to_string(group_size));
  std::map<std::string, McsTallyEntry> tally;
  for (size_t i = 0; i < graphs.size(); i += group_size) {
    size_t end = std::min(graphs.size(), i + group_size);
    if (end - i < 2) break;  // a remainder group of one is dropped
    RelGraph folded = graphs[i];
    for (size_t j = i + 1; j < end; ++j) folded = mcs_of_pair(folded, graphs[j]).graph;
    std::string key = canonicalize(folded);
    auto it = tally.find(key);
    if (it == tally.end())
      tally[key] = {folded, 1};
    else
      it->second.count += 1;
  }
  std::vector<McsTallyEntry> out;
  for (auto& [k, v] : tally) out.push_back(v);
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.count > y.count;
  });
  if (static_cast<int>(out.size()) > top_k) out.resize(top_k);
  return out;
}

}  // namespace virel
