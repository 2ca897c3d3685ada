#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "virel/rng.hpp"

namespace virel {

struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& m) : std::runtime_error(m) {}
};
struct ShapeMismatch : TensorError {
  explicit ShapeMismatch(const std::string& m) : TensorError("ShapeMismatch: " + m) {}
};
struct NonScalarLoss : TensorError {
  NonScalarLoss() : TensorError("NonScalarLoss: backward requires a scalar loss") {}
};

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

// Dense value; no autodiff state of its own.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), v(numel_of(shape), T(0)) {}
  Tensor(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != numel_of(shape))
      throw ShapeMismatch("data size vs " + shape_str(shape));
  }
  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int dim(int i) const { return shape[i]; }
};

template <class T>
using EigenMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using EigenCMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Reverse-mode tape. Nodes are appended in execution order; backward walks the
// list in reverse. A tape is single-writer (see module contract).
template <class T>
class Tape {
 public:
  using Id = int;

  struct Node {
    Tensor<T> val;
    std::vector<T> grad;
    bool requires_grad = false;
    bool is_param_leaf = false;
    std::function<void(Tape&)> back;  // accumulates into parent grads
  };

  Id leaf(Tensor<T> t, bool requires_grad = false, bool is_param = false) {
    Node n;
    n.val = std::move(t);
    n.requires_grad = requires_grad;
    n.is_param_leaf = is_param;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  const Tensor<T>& val(Id id) const { return nodes_[id].val; }
  const std::vector<T>& grad(Id id) const { return nodes_[id].grad; }
  const Shape& shape(Id id) const { return nodes_[id].val.shape; }
  size_t size() const { return nodes_.size(); }

  // ---- primitives ----

  Id add(Id a, Id b) {
    check_same(a, b, "add");
    Tensor<T> out = nodes_[a].val;
    const auto& bv = nodes_[b].val.v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv[i];
    return unary_binary(std::move(out), a, b, [](Tape& tp, Id self, Id a, Id b) {
      const auto& g = tp.nodes_[self].grad;
      tp.accumulate(a, g);
      tp.accumulate(b, g);
    });
  }

  Id sub(Id a, Id b) {
    check_same(a, b, "sub");
    Tensor<T> out = nodes_[a].val;
    const auto& bv = nodes_[b].val.v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv[i];
    return unary_binary(std::move(out), a, b, [](Tape& tp, Id self, Id a, Id b) {
      const auto& g = tp.nodes_[self].grad;
      tp.accumulate(a, g);
      auto neg = g;
      for (auto& x : neg) x = -x;
      tp.accumulate(b, neg);
    });
  }

  Id mul(Id a, Id b) {
    check_same(a, b, "mul");
    Tensor<T> out = nodes_[a].val;
    const auto& bv = nodes_[b].val.v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv[i];
    return unary_binary(std::move(out), a, b, [](Tape& tp, Id self, Id a, Id b) {
      const auto& g = tp.nodes_[self].grad;
      const auto& av = tp.nodes_[a].val.v;
      const auto& bv = tp.nodes_[b].val.v;
      std::vector<T> ga(g.size()), gb(g.size());
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] = g[i] * bv[i];
        gb[i] = g[i] * av[i];
      }
      tp.accumulate(a, ga);
      tp.accumulate(b, gb);
    });
  }

  // y = scale * x + shift, elementwise with scalar constants.
  Id affine(Id a, T scale, T shift) {
    Tensor<T> out = nodes_[a].val;
    for (auto& x : out.v) x = scale * x + shift;
    return unary(std::move(out), a, [scale](Tape& tp, Id self, Id a) {
      auto g = tp.nodes_[self].grad;
      for (auto& x : g) x *= scale;
      tp.accumulate(a, g);
    });
  }

  Id leaky_relu(Id a, T slope) {
    Tensor<T> out = nodes_[a].val;
    for (auto& x : out.v) x = x > T(0) ? x : slope * x;
    return unary(std::move(out), a, [slope](Tape& tp, Id self, Id a) {
      const auto& g = tp.nodes_[self].grad;
      const auto& av = tp.nodes_[a].val.v;
      std::vector<T> ga(g.size());
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] = av[i] > T(0) ? g[i] : slope * g[i];
      tp.accumulate(a, ga);
    });
  }

  Id exp(Id a) {
    Tensor<T> out = nodes_[a].val;
    for (auto& x : out.v) x = std::exp(x);
    return unary(std::move(out), a, [](Tape& tp, Id self, Id a) {
      const auto& g = tp.nodes_[self].grad;
      const auto& ov = tp.nodes_[self].val.v;
      std::vector<T> ga(g.size());
      for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * ov[i];
      tp.accumulate(a, ga);
    });
  }

  Id log(Id a) {
    Tensor<T> out = nodes_[a].val;
    for (auto& x : out.v) x = std::log(x);
    return unary(std::move(out), a, [](Tape& tp, Id self, Id a) {
      const auto& g = tp.nodes_[self].grad;
      const auto& av = tp.nodes_[a].val.v;
      std::vector<T> ga(g.size());
      for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / av[i];
      tp.accumulate(a, ga);
    });
  }

  Id reshape(Id a, Shape s) {
    if (numel_of(s) != nodes_[a].val.numel())
      throw ShapeMismatch("reshape " + shape_str(nodes_[a].val.shape) + " -> " +
                          shape_str(s));
    Tensor<T> out(s, nodes_[a].val.v);
    return unary(std::move(out), a, [](Tape& tp, Id self, Id a) {
      tp.accumulate(a, tp.nodes_[self].grad);
    });
  }

  // [M,K] x [K,N] -> [M,N]
  Id matmul(Id a, Id b) {
    const auto& as = shape(a);
    const auto& bs = shape(b);
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
      throw ShapeMismatch("matmul " + shape_str(as) + " x " + shape_str(bs));
    int M = as[0], K = as[1], N = bs[1];
    Tensor<T> out({M, N});
    EigenCMap<T> A(nodes_[a].val.v.data(), M, K);
    EigenCMap<T> B(nodes_[b].val.v.data(), K, N);
    EigenMap<T> O(out.v.data(), M, N);
    O.noalias() = A * B;
    return unary_binary(std::move(out), a, b,
                        [M, K, N](Tape& tp, Id self, Id a, Id b) {
      EigenCMap<T> G(tp.nodes_[self].grad.data(), M, N);
      EigenCMap<T> A(tp.nodes_[a].val.v.data(), M, K);
      EigenCMap<T> B(tp.nodes_[b].val.v.data(), K, N);
      if (tp.nodes_[a].requires_grad) {
        std::vector<T> ga(static_cast<size_t>(M) * K);
        EigenMap<T>(ga.data(), M, K).noalias() = G * B.transpose();
        tp.accumulate(a, ga);
      }
      if (tp.nodes_[b].requires_grad) {
        std::vector<T> gb(static_cast<size_t>(K) * N);
        EigenMap<T>(gb.data(), K, N).noalias() = A.transpose() * G;
        tp.accumulate(b, gb);
      }
    });
  }

  // Bias add: [M,N] + [N]
  Id add_rowvec(Id a, Id b) {
    const auto& as = shape(a);
    const auto& bs = shape(b);
    if (as.size() != 2 || bs.size() != 1 || as[1] != bs[0])
      throw ShapeMismatch("add_rowvec " + shape_str(as) + " + " + shape_str(bs));
    int M = as[0], N = as[1];
    Tensor<T> out = nodes_[a].val;
    const auto& bv = nodes_[b].val.v;
    for (int r = 0; r < M; ++r)
      for (int c = 0; c < N; ++c) out.v[static_cast<size_t>(r) * N + c] += bv[c];
    return unary_binary(std::move(out), a, b,
                        [M, N](Tape& tp, Id self, Id a, Id b) {
      const auto& g = tp.nodes_[self].grad;
      tp.accumulate(a, g);
      std::vector<T> gb(N, T(0));
      for (int r = 0; r < M; ++r)
        for (int c = 0; c < N; ++c) gb[c] += g[static_cast<size_t>(r) * N + c];
      tp.accumulate(b, gb);
    });
  }

  Id concat_cols(Id a, Id b) {
    const auto& as = shape(a);
    const auto& bs = shape(b);
    if (as.size() != 2 || bs.size() != 2 || as[0] != bs[0])
      throw ShapeMismatch("concat_cols " + shape_str(as) + " | " + shape_str(bs));
    int M = as[0], N1 = as[1], N2 = bs[1];
    Tensor<T> out({M, N1 + N2});
    const auto& av = nodes_[a].val.v;
    const auto& bv = nodes_[b].val.v;
    for (int r = 0; r < M; ++r) {
      std::copy(av.begin() + static_cast<size_t>(r) * N1,
                av.begin() + static_cast<size_t>(r + 1) * N1,
                out.v.begin() + static_cast<size_t>(r) * (N1 + N2));
      std::copy(bv.begin() + static_cast<size_t>(r) * N2,
                bv.begin() + static_cast<size_t>(r + 1) * N2,
                out.v.begin() + static_cast<size_t>(r) * (N1 + N2) + N1);
    }
    return unary_binary(std::move(out), a, b,
                        [M, N1, N2](Tape& tp, Id self, Id a, Id b) {
      const auto& g = tp.nodes_[self].grad;
      std::vector<T> ga(static_cast<size_t>(M) * N1), gb(static_cast<size_t>(M) * N2);
      for (int r = 0; r < M; ++r) {
        std::copy(g.begin() + static_cast<size_t>(r) * (N1 + N2),
                  g.begin() + static_cast<size_t>(r) * (N1 + N2) + N1,
                  ga.begin() + static_cast<size_t>(r) * N1);
        std::copy(g.begin() + static_cast<size_t>(r) * (N1 + N2) + N1,
                  g.begin() + static_cast<size_t>(r + 1) * (N1 + N2),
                  gb.begin() + static_cast<size_t>(r) * N2);
      }
      tp.accumulate(a, ga);
      tp.accumulate(b, gb);
    });
  }

  // Columns [c0, c1) of a 2-D tensor.
  Id slice_cols(Id a, int c0, int c1) {
    const auto& as = shape(a);
    if (as.size() != 2 || c0 < 0 || c1 > as[1] || c0 >= c1)
      throw ShapeMismatch("slice_cols " + shape_str(as));
    int M = as[0], N = as[1], W = c1 - c0;
    Tensor<T> out({M, W});
    const auto& av = nodes_[a].val.v;
    for (int r = 0; r < M; ++r)
      std::copy(av.begin() + static_cast<size_t>(r) * N + c0,
                av.begin() + static_cast<size_t>(r) * N + c1,
                out.v.begin() + static_cast<size_t>(r) * W);
    return unary(std::move(out), a, [M, N, c0, W](Tape& tp, Id self, Id a) {
      const auto& g = tp.nodes_[self].grad;
      std::vector<T> ga(static_cast<size_t>(M) * N, T(0));
      for (int r = 0; r < M; ++r)
        std::copy(g.begin() + static_cast<size_t>(r) * W,
                  g.begin() + static_cast<size_t>(r + 1) * W,
                  ga.begin() + static_cast<size_t>(r) * N + c0);
      tp.accumulate(a, ga);
    });
  }

  // Row gather with repetition; backward scatter-adds.
  Id gather_rows(Id a, std::vector<int> idx) {
    const auto& as = shape(a);
    if (as.size() != 2) throw ShapeMismatch("gather_rows needs 2-D input");
    int N = as[1];
    int M = static_cast<int>(idx.size());
    Tensor<T> out({M, N});
    const auto& av = nodes_[a].val.v;
    for (int r = 0; r < M; ++r)
      std::copy(av.begin() + static_cast<size_t>(idx[r]) * N,
                av.begin() + static_cast<size_t>(idx[r] + 1) * N,
                out.v.begin() + static_cast<size_t>(r) * N);
    auto idx_keep = std::move(idx);
    return unary(std::move(out), a,
                 [idx = std::move(idx_keep), N](Tape& tp, Id self, Id a) {
      const auto& g = tp.nodes_[self].grad;
      std::vector<T> ga(tp.nodes_[a].val.v.size(), T(0));
      for (size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < N; ++c)
          ga[static_cast<size_t>(idx[r]) * N + c] += g[r * N + c];
      tp.accumulate(a, ga);
    });
  }

  // Stack 1-D (or [1,N]) nodes into [K,N].
  Id stack_rows(const std::vector<Id>& rows) {
    if (rows.empty()) throw ShapeMismatch("stack_rows of nothing");
    int N = static_cast<int>(nodes_[rows[0]].val.numel());
    int K = static_cast<int>(rows.size());
    Tensor<T> out({K, N});
    bool rg = false;
    for (int r = 0; r < K; ++r) {
      const auto& rv = nodes_[rows[r]].val;
      if (rv.numel() != N) throw ShapeMismatch("stack_rows ragged input");
      std::copy(rv.v.begin(), rv.v.end(), out.v.begin() + static_cast<size_t>(r) * N);
      rg = rg || nodes_[rows[r]].requires_grad;
    }
    Node n;
    n.val = std::move(out);
    n.requires_grad = rg;
    Id self = static_cast<Id>(nodes_.size());
    if (rg) {
      n.back = [self, rows, N](Tape& tp) {
        const auto& g = tp.nodes_[self].grad;
        for (size_t r = 0; r < rows.size(); ++r) {
          std::vector<T> gr(g.begin() + r * N, g.begin() + (r + 1) * N);
          tp.accumulate(rows[r], gr);
        }
      };
    }
    nodes_.push_back(std::move(n));
    return self;
  }

  // axis 0: column sums -> [N]; axis 1: row sums -> [M]. 2-D only.
  Id sum_axis(Id a, int axis) { return reduce_axis(a, axis, false); }
  Id mean_axis(Id a, int axis) { return reduce_axis(a, axis, true); }

  Id sum_all(Id a) {
    T s = T(0);
    for (T x : nodes_[a].val.v) s += x;
    Tensor<T> out({1});
    out.v[0] = s;
    return unary(std::move(out), a, [](Tape& tp, Id self, Id a) {
      T g = tp.nodes_[self].grad[0];
      std::vector<T> ga(tp.nodes_[a].val.v.size(), g);
      tp.accumulate(a, ga);
    });
  }

  Id mean_all(Id a) {
    return affine(sum_all(a), T(1) / static_cast<T>(nodes_[a].val.numel()), T(0));
  }

  // Euclidean norm of all entries -> scalar.
  Id l2_norm(Id a) {
    T s = T(0);
    for (T x : nodes_[a].val.v) s += x * x;
    T n = std::sqrt(s);
    Tensor<T> out({1});
    out.v[0] = n;
    return unary(std::move(out), a, [](Tape& tp, Id self, Id a) {
      T g = tp.nodes_[self].grad[0];
      T n = tp.nodes_[self].val.v[0];
      const auto& av = tp.nodes_[a].val.v;
      std::vector<T> ga(av.size());
      T inv = n > T(0) ? g / n : T(0);  // subgradient 0 at the origin
      for (size_t i = 0; i < av.size(); ++i) ga[i] = av[i] * inv;
      tp.accumulate(a, ga);
    });
  }

  // Mean cross-entropy of logits [B,C] against integer labels.
  Id softmax_cross_entropy(Id logits, std::vector<int> labels) {
    const auto& ls = shape(logits);
    if (ls.size() != 2 || static_cast<int>(labels.size()) != ls[0])
      throw ShapeMismatch("softmax_cross_entropy " + shape_str(ls));
    int B = ls[0], C = ls[1];
    for (int y : labels)
      if (y < 0 || y >= C) throw TensorError("TaskIdOutOfRange: label " + std::to_string(y));
    const auto& lv = nodes_[logits].val.v;
    std::vector<T> probs(static_cast<size_t>(B) * C);
    T loss = T(0);
    for (int r = 0; r < B; ++r) {
      const T* row = lv.data() + static_cast<size_t>(r) * C;
      T mx = row[0];
      for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      T z = T(0);
      for (int c = 0; c < C; ++c) {
        probs[static_cast<size_t>(r) * C + c] = std::exp(row[c] - mx);
        z += probs[static_cast<size_t>(r) * C + c];
      }
      for (int c = 0; c < C; ++c) probs[static_cast<size_t>(r) * C + c] /= z;
      loss -= std::log(std::max(probs[static_cast<size_t>(r) * C + labels[r]],
                                std::numeric_limits<T>::min()));
    }
    Tensor<T> out({1});
    out.v[0] = loss / static_cast<T>(B);
    auto lab = std::move(labels);
    return unary(std::move(out), logits,
                 [probs = std::move(probs), lab = std::move(lab), B,
                  C](Tape& tp, Id self, Id a) {
      T g = tp.nodes_[self].grad[0] / static_cast<T>(B);
      std::vector<T> ga(probs.size());
      for (int r = 0; r < B; ++r)
        for (int c = 0; c < C; ++c) {
          size_t i = static_cast<size_t>(r) * C + c;
          ga[i] = g * (probs[i] - (c == lab[r] ? T(1) : T(0)));
        }
      tp.accumulate(a, ga);
    });
  }

  // 3x3 convolution, stride 1, pad 1, NCHW. Weight [F,C,3,3], bias [F].
  Id conv2d(Id x, Id w, Id b) {
    const auto& xs = shape(x);
    const auto& ws = shape(w);
    const auto& bs = shape(b);
    if (xs.size() != 4 || ws.size() != 4 || ws[2] != 3 || ws[3] != 3 ||
        ws[1] != xs[1] || bs.size() != 1 || bs[0] != ws[0])
      throw ShapeMismatch("conv2d x" + shape_str(xs) + " w" + shape_str(ws));
    int N = xs[0], C = xs[1], H = xs[2], W = xs[3], F = ws[0];
    const int K = C * 9;
    // im2col over the whole batch, then one matmul.
    std::vector<T> col(static_cast<size_t>(N) * H * W * K, T(0));
    const auto& xv = nodes_[x].val.v;
    im2col(xv.data(), N, C, H, W, col.data());
    Tensor<T> out({N, F, H, W});
    {
      EigenCMap<T> Col(col.data(), N * H * W, K);
      EigenCMap<T> Wm(nodes_[w].val.v.data(), F, K);
      // out rows are (n,h,w), cols F; transpose into NCHW after.
      std::vector<T> tmp(static_cast<size_t>(N) * H * W * F);
      EigenMap<T>(tmp.data(), N * H * W, F).noalias() = Col * Wm.transpose();
      const auto& bv = nodes_[b].val.v;
      for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f)
          for (int p = 0; p < H * W; ++p)
            out.v[((static_cast<size_t>(n) * F + f) * H * W) + p] =
                tmp[(static_cast<size_t>(n) * H * W + p) * F + f] + bv[f];
    }
    auto col_keep = std::move(col);
    return ternary(std::move(out), x, w, b,
                   [col = std::move(col_keep), N, C, H, W, F,
                    K](Tape& tp, Id self, Id x, Id w, Id b) {
      const auto& g = tp.nodes_[self].grad;
      // regroup grad to rows (n,h,w) x F
      std::vector<T> gt(static_cast<size_t>(N) * H * W * F);
      for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f)
          for (int p = 0; p < H * W; ++p)
            gt[(static_cast<size_t>(n) * H * W + p) * F + f] =
                g[((static_cast<size_t>(n) * F + f) * H * W) + p];
      EigenCMap<T> G(gt.data(), N * H * W, F);
      if (tp.nodes_[w].requires_grad) {
        std::vector<T> gw(static_cast<size_t>(F) * K);
        EigenCMap<T> Col(col.data(), N * H * W, K);
        EigenMap<T>(gw.data(), F, K).noalias() = G.transpose() * Col;
        tp.accumulate(w, gw);
      }
      if (tp.nodes_[b].requires_grad) {
        std::vector<T> gb(F, T(0));
        for (int64_t r = 0; r < static_cast<int64_t>(N) * H * W; ++r)
          for (int f = 0; f < F; ++f) gb[f] += gt[r * F + f];
        tp.accumulate(b, gb);
      }
      if (tp.nodes_[x].requires_grad) {
        std::vector<T> gcol(static_cast<size_t>(N) * H * W * K);
        EigenCMap<T> Wm(tp.nodes_[w].val.v.data(), F, K);
        EigenMap<T>(gcol.data(), N * H * W, K).noalias() = G * Wm;
        std::vector<T> gx(tp.nodes_[x].val.v.size(), T(0));
        col2im(gcol.data(), N, C, H, W, gx.data());
        tp.accumulate(x, gx);
      }
    });
  }

  // 2x2 max-pool, stride 2, NCHW.
  Id maxpool2(Id x) {
    const auto& xs = shape(x);
    if (xs.size() != 4 || xs[2] % 2 || xs[3] % 2)
      throw ShapeMismatch("maxpool2 " + shape_str(xs));
    int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    int Ho = H / 2, Wo = W / 2;
    Tensor<T> out({N, C, Ho, Wo});
    std::vector<int> arg(out.v.size());
    const auto& xv = nodes_[x].val.v;
    for (int nc = 0; nc < N * C; ++nc) {
      const T* in = xv.data() + static_cast<size_t>(nc) * H * W;
      T* o = out.v.data() + static_cast<size_t>(nc) * Ho * Wo;
      int* am = arg.data() + static_cast<size_t>(nc) * Ho * Wo;
      for (int r = 0; r < Ho; ++r)
        for (int c = 0; c < Wo; ++c) {
          int base = 2 * r * W + 2 * c;
          int best = base;
          if (in[base + 1] > in[best]) best = base + 1;
          if (in[base + W] > in[best]) best = base + W;
          if (in[base + W + 1] > in[best]) best = base + W + 1;
          o[r * Wo + c] = in[best];
          am[r * Wo + c] = nc * H * W + best;
        }
    }
    auto arg_keep = std::move(arg);
    return unary(std::move(out), x,
                 [arg = std::move(arg_keep)](Tape& tp, Id self, Id a) {
      const auto& g = tp.nodes_[self].grad;
      std::vector<T> ga(tp.nodes_[a].val.v.size(), T(0));
      for (size_t i = 0; i < g.size(); ++i) ga[arg[i]] += g[i];
      tp.accumulate(a, ga);
    });
  }

  // ---- backward ----

  void backward(Id loss) {
    if (nodes_[loss].val.numel() != 1) throw NonScalarLoss();
    for (auto& n : nodes_) n.grad.clear();
    nodes_[loss].grad.assign(1, T(1));
    for (int i = loss; i >= 0; --i) {
      auto& n = nodes_[i];
      if (n.back && !n.grad.empty()) n.back(*this);
    }
  }

 private:
  std::vector<Node> nodes_;

  void check_same(Id a, Id b, const char* op) {
    if (shape(a) != shape(b))
      throw ShapeMismatch(std::string(op) + " " + shape_str(shape(a)) + " vs " +
                          shape_str(shape(b)));
  }

  void accumulate(Id id, const std::vector<T>& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad.assign(n.val.v.size(), T(0));
    for (size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  template <class F>
  Id unary(Tensor<T> out, Id a, F&& f) {
    Node n;
    n.val = std::move(out);
    n.requires_grad = nodes_[a].requires_grad;
    Id self = static_cast<Id>(nodes_.size());
    if (n.requires_grad)
      n.back = [self, a, f = std::forward<F>(f)](Tape& tp) { f(tp, self, a); };
    nodes_.push_back(std::move(n));
    return self;
  }

  template <class F>
  Id unary_binary(Tensor<T> out, Id a, Id b, F&& f) {
    Node n;
    n.val = std::move(out);
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Id self = static_cast<Id>(nodes_.size());
    if (n.requires_grad)
      n.back = [self, a, b, f = std::forward<F>(f)](Tape& tp) { f(tp, self, a, b); };
    nodes_.push_back(std::move(n));
    return self;
  }

  template <class F>
  Id ternary(Tensor<T> out, Id a, Id b, Id c, F&& f) {
    Node n;
    n.val = std::move(out);
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad ||
                      nodes_[c].requires_grad;
    Id self = static_cast<Id>(nodes_.size());
    if (n.requires_grad)
      n.back = [self, a, b, c, f = std::forward<F>(f)](Tape& tp) {
        f(tp, self, a, b, c);
      };
    nodes_.push_back(std::move(n));
    return self;
  }

  Id reduce_axis(Id a, int axis, bool mean) {
    const auto& as = shape(a);
    if (as.size() != 2 || (axis != 0 && axis != 1))
      throw ShapeMismatch("reduce_axis " + shape_str(as));
    int M = as[0], N = as[1];
    int out_n = axis == 0 ? N : M;
    T denom = mean ? static_cast<T>(axis == 0 ? M : N) : T(1);
    Tensor<T> out({out_n});
    const auto& av = nodes_[a].val.v;
    for (int r = 0; r < M; ++r)
      for (int c = 0; c < N; ++c)
        out.v[axis == 0 ? c : r] += av[static_cast<size_t>(r) * N + c];
    for (auto& x : out.v) x /= denom;
    return unary(std::move(out), a, [M, N, axis, denom](Tape& tp, Id self, Id a) {
      const auto& g = tp.nodes_[self].grad;
      std::vector<T> ga(static_cast<size_t>(M) * N);
      for (int r = 0; r < M; ++r)
        for (int c = 0; c < N; ++c)
          ga[static_cast<size_t>(r) * N + c] = g[axis == 0 ? c : r] / denom;
      tp.accumulate(a, ga);
    });
  }

  static void im2col(const T* x, int N, int C, int H, int W, T* col) {
    const int K = C * 9;
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          T* dst = col + ((static_cast<size_t>(n) * H + h) * W + w) * K;
          for (int c = 0; c < C; ++c) {
            const T* src = x + (static_cast<size_t>(n) * C + c) * H * W;
            for (int dr = -1; dr <= 1; ++dr)
              for (int dc = -1; dc <= 1; ++dc) {
                int r = h + dr, cc = w + dc;
                *dst++ = (r >= 0 && r < H && cc >= 0 && cc < W)
                             ? src[r * W + cc]
                             : T(0);
              }
          }
        }
  }

  static void col2im(const T* col, int N, int C, int H, int W, T* x) {
    const int K = C * 9;
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const T* src = col + ((static_cast<size_t>(n) * H + h) * W + w) * K;
          for (int c = 0; c < C; ++c) {
            T* dst = x + (static_cast<size_t>(n) * C + c) * H * W;
            for (int dr = -1; dr <= 1; ++dr)
              for (int dc = -1; dc <= 1; ++dc) {
                int r = h + dr, cc = w + dc;
                if (r >= 0 && r < H && cc >= 0 && cc < W)
                  dst[r * W + cc] += *src;
                ++src;
              }
          }
        }
  }
};

// ---- parameters and Adam ----

template <class T>
struct Param {
  std::string name;
  Shape shape;
  std::vector<T> data;
  std::vector<T> m;  // first moment
  std::vector<T> v;  // second moment
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <class T>
struct ParamStore {
  std::vector<Param<T>> params;
  int64_t step = 0;

  int add(std::string name, Shape shape) {
    Param<T> p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    int64_t n = numel_of(p.shape);
    p.data.assign(n, T(0));
    p.m.assign(n, T(0));
    p.v.assign(n, T(0));
    params.push_back(std::move(p));
    return static_cast<int>(params.size()) - 1;
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : params) n += static_cast<int64_t>(p.data.size());
    return n;
  }
};

// Bias-corrected Adam over the whole store. Missing grads (empty vectors) are
// treated as zero-gradient and skipped entirely so the step count stays shared.
template <class T>
void adam_step(ParamStore<T>& store, const std::vector<std::vector<T>>& grads,
               const AdamConfig& cfg = {}) {
  if (grads.size() != store.params.size())
    throw ShapeMismatch("adam_step grads count");
  store.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step));
  for (size_t i = 0; i < store.params.size(); ++i) {
    auto& p = store.params[i];
    const auto& g = grads[i];
    if (g.empty()) continue;
    if (g.size() != p.data.size()) throw ShapeMismatch("adam_step grad shape for " + p.name);
    for (size_t j = 0; j < p.data.size(); ++j) {
      double gj = static_cast<double>(g[j]) +
                  cfg.weight_decay * static_cast<double>(p.data[j]);
      double m = cfg.beta1 * static_cast<double>(p.m[j]) + (1.0 - cfg.beta1) * gj;
      double v = cfg.beta2 * static_cast<double>(p.v[j]) + (1.0 - cfg.beta2) * gj * gj;
      p.m[j] = static_cast<T>(m);
      p.v[j] = static_cast<T>(v);
      double mhat = m / bc1;
      double vhat = v / bc2;
      p.data[j] = static_cast<T>(static_cast<double>(p.data[j]) -
                                 cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace virel
