#pragma once

#include <stdexcept>
#include <vector>

#include "virel/crgnn.hpp"
#include "virel/tensor.hpp"

namespace virel {

struct SingleTaskBatch : std::runtime_error {
  SingleTaskBatch()
      : std::runtime_error("SingleTaskBatch: contrastive loss needs >= 2 tasks") {}
};

enum class Objective { Contrastive, Classify };

struct LossWeights {
  double contrastive = 1.0;
  double classify = 1.0;
  double ib = 0.1;
};

struct BatchPlan {
  int tasks_per_batch = 4;
  int obs_per_task = 8;
};

// Margin eta = rel_dim * 2/3.
inline double contrastive_margin(int rel_dim = 20) { return rel_dim * 2.0 / 3.0; }

// Eq-style hinge contrastive loss over graph embeddings [B, D]:
// mean intra-task distance + mean inter-task max(0, eta - distance). Each sum
// is normalized by its pair count so the scale is batch-size invariant.
template <class T>
typename Tape<T>::Id contrastive_loss(Tape<T>& tp, typename Tape<T>::Id emb,
                                      const std::vector<int>& task_ids,
                                      T margin) {
  int B = tp.shape(emb)[0];
  if (static_cast<int>(task_ids.size()) != B)
    throw ShapeMismatch("contrastive_loss ids vs embeddings");
  bool multi = false;
  for (int i = 1; i < B; ++i) multi = multi || task_ids[i] != task_ids[0];
  if (!multi) throw SingleTaskBatch();

  std::vector<typename Tape<T>::Id> intra, inter;
  for (int i = 0; i < B; ++i)
    for (int j = i + 1; j < B; ++j) {
      auto d = tp.l2_norm(tp.sub(tp.gather_rows(emb, {i}), tp.gather_rows(emb, {j})));
      if (task_ids[i] == task_ids[j]) {
        intra.push_back(d);
      } else {
        // max(0, eta - d) as a zero-slope leaky relu
        auto h = tp.leaky_relu(tp.affine(d, T(-1), margin), T(0));
        if (std::getenv("VIREL_SQHINGE"))  // TEMP experiment hook: max(0,eta-d)^2/eta
          h = tp.affine(tp.mul(h, h), T(1) / margin, T(0));
        inter.push_back(h);
      }
    }
  typename Tape<T>::Id loss = -1;
  if (!intra.empty())
    loss = tp.mean_all(tp.stack_rows(intra));
  if (!inter.empty()) {
    auto t = tp.mean_all(tp.stack_rows(inter));
    loss = loss < 0 ? t : tp.add(loss, t);
  }
  return loss;
}

// Mean cross-entropy of the linear head against true task ids.
template <class T>
typename Tape<T>::Id classify_loss(Tape<T>& tp, const CrGnn<T>& model,
                                   const std::vector<typename Tape<T>::Id>& w,
                                   typename Tape<T>::Id emb,
                                   const std::vector<int>& task_ids) {
  return tp.softmax_cross_entropy(model.classify_logits(tp, w, emb), task_ids);
}

// Mean over relation nodes of KL(N(mu, diag e^lv) || N(0, I)).
template <class T>
typename Tape<T>::Id ib_loss(Tape<T>& tp, typename Tape<T>::Id mean,
                             typename Tape<T>::Id logvar) {
  int P = tp.shape(mean)[0];
  // 1/2 sum_d (mu^2 + e^lv - 1 - lv), averaged over the P nodes.
  auto mu2 = tp.mul(mean, mean);
  auto term = tp.sub(tp.add(mu2, tp.exp(logvar)), tp.affine(logvar, T(1), T(1)));
  return tp.affine(tp.sum_all(term), T(0.5) / static_cast<T>(P), T(0));
}

struct LossTerms {
  double contrastive = 0.0;
  double classify = 0.0;
  double ib = 0.0;
  double total = 0.0;
};

// Weighted sum of the enabled terms; returns the tape node for backward plus
// the individual values for logging.
template <class T>
std::pair<typename Tape<T>::Id, LossTerms> total_loss(
    Tape<T>& tp, const CrGnn<T>& model, const std::vector<typename Tape<T>::Id>& w,
    const BatchForward<T>& fwd, const std::vector<int>& task_ids,
    Objective objective, const LossWeights& weights) {
  LossTerms terms;
  typename Tape<T>::Id loss = -1;
  auto weigh = [&](typename Tape<T>::Id term, double wgt) {
    auto scaled = tp.affine(term, static_cast<T>(wgt), T(0));
    loss = loss < 0 ? scaled : tp.add(loss, scaled);
  };
  if (objective == Objective::Contrastive) {
    auto c = contrastive_loss<T>(tp, fwd.graph_emb, task_ids,
                                 static_cast<T>(contrastive_margin(model.cfg.rel_dim)));
    terms.contrastive = tp.val(c).v[0];
    weigh(c, weights.contrastive);
  } else {
    auto c = classify_loss<T>(tp, model, w, fwd.graph_emb, task_ids);
    terms.classify = tp.val(c).v[0];
    weigh(c, weights.classify);
  }
  if (model.cfg.ib) {
    auto k = ib_loss<T>(tp, fwd.rel_mean, fwd.rel_logvar);
    terms.ib = tp.val(k).v[0];
    weigh(k, weights.ib);
  }
  terms.total = tp.val(loss).v[0];
  return {loss, terms};
}

}  // namespace virel
