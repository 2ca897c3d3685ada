#pragma once

#include <string>
#include <array>
#include <vector>

#include "virel/dataset.hpp"
#include "virel/rng.hpp"
#include "virel/tensor.hpp"

namespace virel {

struct EmptyScene : std::runtime_error {
  EmptyScene() : std::runtime_error("EmptyScene: observation has no objects") {}
};
struct EmptyGraph : std::runtime_error {
  EmptyGraph() : std::runtime_error("EmptyGraph: line graph has no nodes") {}
};

struct ModelConfig {
  int obj_dim = 100;
  int rel_dim = 20;
  bool ib = false;
  int n_tasks = 0;  // > 0 registers the task-classification head
  int max_objects = 6;
  // Hidden widths; the paper does not publish them.
  std::array<int, 4> conv_ch = {32, 32, 64, 64};
  std::array<int, 2> fr_hidden = {128, 64};
  std::array<int, 2> gin_hidden = {64, 64};
  static constexpr double kLeakySlope = 0.01;
};

// Line graph over the n(n-1)/2 unordered object pairs of one observation,
// pairs adjacent when they share an object. Returned as (1+eps)I + A with
// eps = 0, the aggregation operator of one GIN layer.
template <class T>
Tensor<T> line_graph_operator(int n_objects) {
  std::vector<std::pair<int, int>> pairs;
  for (int k = 0; k < n_objects; ++k)
    for (int l = k + 1; l < n_objects; ++l) pairs.emplace_back(k, l);
  int p = static_cast<int>(pairs.size());
  if (p == 0) throw EmptyGraph();
  Tensor<T> s({p, p});
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      bool share = i != j && (pairs[i].first == pairs[j].first ||
                              pairs[i].first == pairs[j].second ||
                              pairs[i].second == pairs[j].first ||
                              pairs[i].second == pairs[j].second);
      s.v[static_cast<size_t>(i) * p + j] = (i == j) ? T(1) : (share ? T(1) : T(0));
    }
  return s;
}

template <class T>
class CrGnn {
 public:
  using Id = typename Tape<T>::Id;

  ModelConfig cfg;
  ParamStore<T> params;

  explicit CrGnn(ModelConfig c) : cfg(c) { register_params(); }

  void init(uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params.params) {
      if (p.name.ends_with(".b")) continue;  // biases start at zero
      int fan_in;
      if (p.shape.size() == 4)
        fan_in = p.shape[1] * p.shape[2] * p.shape[3];  // {out,in,kh,kw}
      else
        fan_in = p.shape[0];  // matmul weights are {in,out}
      double std = std::sqrt(2.0 / fan_in);
      for (auto& x : p.data) x = static_cast<T>(rng.normal() * std);
    }
  }

  // Leaf every parameter onto a tape; ids parallel params.params.
  std::vector<Id> bind(Tape<T>& tp, bool requires_grad) const {
    std::vector<Id> ids;
    ids.reserve(params.params.size());
    for (const auto& p : params.params)
      ids.push_back(tp.leaf(Tensor<T>(p.shape, p.data), requires_grad, true));
    return ids;
  }

  // f_o: 4 convs (9->32->32->64->64), pool after layers 2 and 4, linear to 100.
  Id encode_objects(Tape<T>& tp, const std::vector<Id>& w, Id slabs) const {
    const Shape s = tp.shape(slabs);  // copy: the tape reallocates as ops append
    if (s.size() != 4 || s[0] == 0) throw EmptyScene();
    T slope = static_cast<T>(ModelConfig::kLeakySlope);
    Id h = tp.leaky_relu(tp.conv2d(slabs, w[i_.conv_w[0]], w[i_.conv_b[0]]), slope);
    h = tp.leaky_relu(tp.conv2d(h, w[i_.conv_w[1]], w[i_.conv_b[1]]), slope);
    h = tp.maxpool2(h);
    h = tp.leaky_relu(tp.conv2d(h, w[i_.conv_w[2]], w[i_.conv_b[2]]), slope);
    h = tp.leaky_relu(tp.conv2d(h, w[i_.conv_w[3]], w[i_.conv_b[3]]), slope);
    h = tp.maxpool2(h);
    h = tp.reshape(h, {s[0], cfg.conv_ch[3] * 4 * 4});
    return tp.add_rowvec(tp.matmul(h, w[i_.fc_w]), w[i_.fc_b]);
  }

  // f_r applied to both concatenation orders, averaged. rows_a/rows_b index
  // into the object-embedding matrix; output [P, 20] (or [P, 40] in IB mode,
  // mean | logvar).
  Id encode_relations(Tape<T>& tp, const std::vector<Id>& w, Id obj_emb,
                      const std::vector<int>& rows_a,
                      const std::vector<int>& rows_b) const {
    Id a = tp.gather_rows(obj_emb, rows_a);
    Id b = tp.gather_rows(obj_emb, rows_b);
    Id h1 = relation_mlp(tp, w, tp.concat_cols(a, b));
    Id h2 = relation_mlp(tp, w, tp.concat_cols(b, a));
    return tp.affine(tp.add(h1, h2), T(0.5), T(0));
  }

  // f_g: 2 GIN layers, sum readout. node_features [p, 20], op = (1+eps)I + A.
  Id gin_embed(Tape<T>& tp, const std::vector<Id>& w, Id node_features,
               Id op) const {
    Id h = gin_mlp(tp, w, tp.matmul(op, node_features), 0);
    h = gin_mlp(tp, w, tp.matmul(op, h), 1);
    int p = tp.shape(h)[0];
    T scale = std::getenv("VIREL_MEANREADOUT") ? T(1) / p : T(1);  // TEMP experiment hook
    Id ones = tp.leaf(Tensor<T>({1, p}, std::vector<T>(p, scale)));
    return tp.matmul(ones, h);  // [1, 20]
  }

  Id classify_logits(Tape<T>& tp, const std::vector<Id>& w, Id graph_emb) const {
    return tp.add_rowvec(tp.matmul(graph_emb, w[i_.cls_w]), w[i_.cls_b]);
  }

  bool has_classify_head() const { return cfg.n_tasks > 0; }

 private:
  struct Indices {
    int conv_w[4], conv_b[4], fc_w, fc_b;
    int fr_w[3], fr_b[3];
    int gin_w[2][3], gin_b[2][3];
    int cls_w = -1, cls_b = -1;
  } i_;

  void register_params() {
    // Registration order fixes the checkpoint layout: f_o, f_r, f_g, head.
    const int ch[5] = {9, cfg.conv_ch[0], cfg.conv_ch[1], cfg.conv_ch[2],
                       cfg.conv_ch[3]};
    for (int l = 0; l < 4; ++l) {
      i_.conv_w[l] = params.add("fo.conv" + std::to_string(l) + ".w",
                                {ch[l + 1], ch[l], 3, 3});
      i_.conv_b[l] = params.add("fo.conv" + std::to_string(l) + ".b", {ch[l + 1]});
    }
    i_.fc_w = params.add("fo.fc.w", {cfg.conv_ch[3] * 4 * 4, cfg.obj_dim});
    i_.fc_b = params.add("fo.fc.b", {cfg.obj_dim});
    int fr_out = cfg.ib ? 2 * cfg.rel_dim : cfg.rel_dim;
    const int fr_dims[4] = {2 * cfg.obj_dim, cfg.fr_hidden[0], cfg.fr_hidden[1], fr_out};
    for (int l = 0; l < 3; ++l) {
      i_.fr_w[l] = params.add("fr.l" + std::to_string(l) + ".w",
                              {fr_dims[l], fr_dims[l + 1]});
      i_.fr_b[l] = params.add("fr.l" + std::to_string(l) + ".b", {fr_dims[l + 1]});
    }
    const int gin_dims[4] = {cfg.rel_dim, cfg.gin_hidden[0], cfg.gin_hidden[1], cfg.rel_dim};
    for (int layer = 0; layer < 2; ++layer)
      for (int l = 0; l < 3; ++l) {
        std::string base =
            "fg.gin" + std::to_string(layer) + ".l" + std::to_string(l);
        i_.gin_w[layer][l] = params.add(base + ".w", {gin_dims[l], gin_dims[l + 1]});
        i_.gin_b[layer][l] = params.add(base + ".b", {gin_dims[l + 1]});
      }
    if (cfg.n_tasks > 0) {
      i_.cls_w = params.add("head.cls.w", {cfg.rel_dim, cfg.n_tasks});
      i_.cls_b = params.add("head.cls.b", {cfg.n_tasks});
    }
  }

  Id relation_mlp(Tape<T>& tp, const std::vector<Id>& w, Id x) const {
    T slope = static_cast<T>(ModelConfig::kLeakySlope);
    Id h = tp.leaky_relu(tp.add_rowvec(tp.matmul(x, w[i_.fr_w[0]]), w[i_.fr_b[0]]), slope);
    h = tp.leaky_relu(tp.add_rowvec(tp.matmul(h, w[i_.fr_w[1]]), w[i_.fr_b[1]]), slope);
    return tp.add_rowvec(tp.matmul(h, w[i_.fr_w[2]]), w[i_.fr_b[2]]);
  }

  Id gin_mlp(Tape<T>& tp, const std::vector<Id>& w, Id x, int layer) const {
    T slope = static_cast<T>(ModelConfig::kLeakySlope);
    Id h = tp.leaky_relu(
        tp.add_rowvec(tp.matmul(x, w[i_.gin_w[layer][0]]), w[i_.gin_b[layer][0]]), slope);
    h = tp.leaky_relu(
        tp.add_rowvec(tp.matmul(h, w[i_.gin_w[layer][1]]), w[i_.gin_b[layer][1]]), slope);
    return tp.add_rowvec(tp.matmul(h, w[i_.gin_w[layer][2]]), w[i_.gin_b[layer][2]]);
  }
};

// One relation slot of a batch forward.
struct PairRef {
  int obs_index = 0;  // position within the batch
  int k = 0, l = 0;   // object indices within the observation
};

template <class T>
struct BatchForward {
  typename Tape<T>::Id rel_mean = -1;    // [P, rel_dim]
  typename Tape<T>::Id rel_logvar = -1;  // [P, rel_dim], IB mode only
  typename Tape<T>::Id graph_emb = -1;   // [B, rel_dim]
  std::vector<PairRef> pairs;
};

// Object color is recovered from the grid under the mask; the slab is the
// one-hot color plane restricted to the object's cells.
template <class T>
std::vector<T> object_slab(const TrainObs& o, int k) {
  std::vector<T> slab(static_cast<size_t>(kColors) * kGrid * kGrid, T(0));
  for (int r = 0; r < kGrid; ++r)
    for (int c = 0; c < kGrid; ++c)
      if (o.masks[k][r][c] && o.grid[r][c] > 0)
        slab[(static_cast<size_t>(o.grid[r][c] - 1) * kGrid + r) * kGrid + c] = T(1);
  return slab;
}

// Runs the whole CR-GNN over a batch of observations on one tape.
// noise_rng non-null: IB training mode, relation features are reparameterized
// samples; null: features are the means.
template <class T>
BatchForward<T> forward_batch(Tape<T>& tp, const CrGnn<T>& model,
                              const std::vector<typename Tape<T>::Id>& w,
                              const std::vector<const TrainObs*>& batch,
                              Rng* noise_rng) {
  int total = 0;
  std::vector<int> offset;
  for (const auto* o : batch) {
    if (o->n_objects() == 0) throw EmptyScene();
    offset.push_back(total);
    total += o->n_objects();
  }
  Tensor<T> slabs({total, kColors, kGrid, kGrid});
  for (size_t i = 0; i < batch.size(); ++i)
    for (int k = 0; k < batch[i]->n_objects(); ++k) {
      auto s = object_slab<T>(*batch[i], k);
      std::copy(s.begin(), s.end(),
                slabs.v.begin() +
                    (static_cast<size_t>(offset[i]) + k) * kColors * kGrid * kGrid);
    }
  typename Tape<T>::Id slabs_id = tp.leaf(std::move(slabs));
  typename Tape<T>::Id obj_emb = model.encode_objects(tp, w, slabs_id);

  BatchForward<T> out;
  std::vector<int> rows_a, rows_b;
  std::vector<std::pair<int, int>> pair_span;  // [begin, end) per observation
  for (size_t i = 0; i < batch.size(); ++i) {
    int begin = static_cast<int>(rows_a.size());
    int n = batch[i]->n_objects();
    for (int k = 0; k < n; ++k)
      for (int l = k + 1; l < n; ++l) {
        rows_a.push_back(offset[i] + k);
        rows_b.push_back(offset[i] + l);
        out.pairs.push_back({static_cast<int>(i), k, l});
      }
    pair_span.emplace_back(begin, static_cast<int>(rows_a.size()));
  }
  if (rows_a.empty()) throw EmptyGraph();

  typename Tape<T>::Id rel = model.encode_relations(tp, w, obj_emb, rows_a, rows_b);
  typename Tape<T>::Id features;
  if (model.cfg.ib) {
    int P = tp.shape(rel)[0];
    int D = model.cfg.rel_dim;
    out.rel_mean = tp.slice_cols(rel, 0, D);
    out.rel_logvar = tp.slice_cols(rel, D, 2 * D);
    if (noise_rng) {
      Tensor<T> xi({P, D});
      for (auto& x : xi.v) x = static_cast<T>(noise_rng->normal());
      typename Tape<T>::Id xi_id = tp.leaf(std::move(xi));
      typename Tape<T>::Id std_id = tp.exp(tp.affine(out.rel_logvar, T(0.5), T(0)));
      features = tp.add(out.rel_mean, tp.mul(std_id, xi_id));
    } else {
      features = out.rel_mean;
    }
  } else {
    out.rel_mean = rel;
    features = rel;
  }

  std::vector<typename Tape<T>::Id> graph_rows;
  for (size_t i = 0; i < batch.size(); ++i) {
    auto [begin, end] = pair_span[i];
    std::vector<int> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    typename Tape<T>::Id h = tp.gather_rows(features, idx);
    typename Tape<T>::Id op =
        tp.leaf(line_graph_operator<T>(batch[i]->n_objects()));
    graph_rows.push_back(model.gin_embed(tp, w, h, op));
  }
  out.graph_emb = tp.stack_rows(graph_rows);
  return out;
}

}  // namespace virel
