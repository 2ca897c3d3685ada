#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "virel/scene.hpp"

namespace virel {

struct DegenerateData : std::runtime_error {
  explicit DegenerateData(const std::string& m)
      : std::runtime_error("DegenerateData: " + m) {}
};
struct LengthMismatch : std::runtime_error {
  LengthMismatch() : std::runtime_error("LengthMismatch") {}
};
struct NodeBudgetExceeded : std::runtime_error {
  explicit NodeBudgetExceeded(int n)
      : std::runtime_error("NodeBudgetExceeded: " + std::to_string(n) + " nodes") {}
};
struct TooFewGraphs : std::runtime_error {
  explicit TooFewGraphs(const std::string& m)
      : std::runtime_error("TooFewGraphs: " + m) {}
};

// ---- k-means ----

struct ClusterModel {
  std::vector<std::vector<double>> centroids;  // K x dim
  double inertia = 0.0;
  int restarts = 0;

  int assign(const std::vector<double>& x) const;
};

struct KMeansOptions {
  int restarts = 10;
  int max_iters = 300;
  double tol = 1e-6;
};

// Lloyd's algorithm with k-means++ seeding, best of `restarts` by inertia.
ClusterModel fit_kmeans(const std::vector<std::vector<double>>& points, int k,
                        uint64_t seed, const KMeansOptions& opt = {});

// Max over all K! cluster->label bijections of mean agreement. Returns the
// accuracy and the maximizing assignment (cluster id -> label id).
std::pair<double, std::vector<int>> permutation_accuracy(
    const std::vector<int>& predicted_clusters, const std::vector<int>& true_labels,
    int k);

// ---- relation graphs ----

struct RelGraph {
  int n_nodes = 0;
  std::vector<Edge> edges;  // k < l, labels never None

  bool operator==(const RelGraph&) const = default;
};

// Minimum over node permutations of the sorted edge-list serialization.
// Isolated nodes do not contribute; equal strings iff label-isomorphic.
std::string canonicalize(const RelGraph& g);

// Appendix-style rendering, e.g. [(0, 1), 'inside'], [(1, 2), 'same-color'].
std::string format_relgraph(const RelGraph& g);

struct McsWitness {
  RelGraph graph;
  std::vector<int> map_a;  // result node -> node of a
  std::vector<int> map_b;  // result node -> node of b
};

// Exact maximum common edge subgraph under label-preserving node injection,
// branch and bound; ties broken by smallest canonical form.
McsWitness mcs_of_pair(const RelGraph& a, const RelGraph& b);

// True when `sub` embeds into `g` label-preservingly.
bool contains_subgraph(const RelGraph& g, const RelGraph& sub);

struct McsTallyEntry {
  RelGraph graph;
  int count = 0;
};

// Partition graphs into consecutive groups of group_size (tail kept if >= 2),
// left-fold MCS per group, tally canonical results, return top_k by count.
std::vector<McsTallyEntry> task_mcs_retrieval(const std::vector<RelGraph>& graphs,
                                              int group_size = 5, int top_k = 3);

RelGraph relgraph_from_edges(int n_nodes, const std::vector<Edge>& edges);

}  // namespace virel
