#include <cmath>

#include "doctest.h"
#include "virel/tensor.hpp"

using namespace virel;

namespace {

// Central finite-difference check: builds the graph twice per perturbed input
// entry through `make_loss`, which maps leaf values to a scalar loss id.
using LossBuilder =
    std::function<Tape<double>::Id(Tape<double>&, const std::vector<Tape<double>::Id>&)>;

void check_gradients(std::vector<Tensor<double>> inputs, const LossBuilder& make_loss,
                     double tol = 1e-4) {
  Tape<double> tape;
  std::vector<Tape<double>::Id> ids;
  for (auto& t : inputs) ids.push_back(tape.leaf(t, true));
  auto loss = make_loss(tape, ids);
  tape.backward(loss);

  const double h = 1e-5;
  for (size_t which = 0; which < inputs.size(); ++which) {
    const auto& analytic = tape.grad(ids[which]);
    for (size_t j = 0; j < inputs[which].v.size(); ++j) {
      auto eval = [&](double delta) {
        auto shifted = inputs;
        shifted[which].v[j] += delta;
        Tape<double> tp;
        std::vector<Tape<double>::Id> lids;
        for (auto& t : shifted) lids.push_back(tp.leaf(t, false));
        return tp.val(make_loss(tp, lids)).v[0];
      };
      double fd = (eval(h) - eval(-h)) / (2 * h);
      double an = analytic.empty() ? 0.0 : analytic[j];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      INFO("input ", which, " entry ", j, " fd=", fd, " analytic=", an);
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

Tensor<double> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& x : t.v) x = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("leaky_relu forward matches definition") {
  Tape<float> tp;
  auto x = tp.leaf(Tensor<float>({2}, {-1.f, 2.f}));
  auto y = tp.leaky_relu(x, 0.01f);
  CHECK(tp.val(y).v[0] == doctest::Approx(-0.01));
  CHECK(tp.val(y).v[1] == doctest::Approx(2.0));
}

TEST_CASE("matmul identity") {
  Tape<float> tp;
  auto eye = tp.leaf(Tensor<float>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  auto a = tp.leaf(Tensor<float>({3, 2}, {1, 2, 3, 4, 5, 6}));
  auto y = tp.matmul(eye, a);
  for (int i = 0; i < 6; ++i) CHECK(tp.val(y).v[i] == doctest::Approx(tp.val(a).v[i]));
}

TEST_CASE("conv2d with a centered delta kernel is the identity") {
  Rng rng(7);
  Tensor<double> x = random_tensor({1, 1, 16, 16}, rng);
  Tensor<double> w({1, 1, 3, 3});
  w.v[4] = 1.0;  // kernel center
  Tensor<double> b({1});
  Tape<double> tp;
  auto y = tp.conv2d(tp.leaf(x), tp.leaf(w), tp.leaf(b));
  for (size_t i = 0; i < x.v.size(); ++i)
    CHECK(tp.val(y).v[i] == doctest::Approx(x.v[i]));
}

TEST_CASE("conv2d forward matches a direct loop oracle") {
  Rng rng(13);
  int N = 2, C = 3, F = 4, H = 6, W = 5;
  Tensor<double> x = random_tensor({N, C, H, W}, rng);
  Tensor<double> wt = random_tensor({F, C, 3, 3}, rng);
  Tensor<double> b = random_tensor({F}, rng);
  Tape<double> tp;
  auto y = tp.conv2d(tp.leaf(x), tp.leaf(wt), tp.leaf(b));
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
          double acc = b.v[f];
          for (int ch = 0; ch < C; ++ch)
            for (int dr = -1; dr <= 1; ++dr)
              for (int dc = -1; dc <= 1; ++dc) {
                int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                acc += x.v[((n * C + ch) * H + rr) * W + cc] *
                       wt.v[((f * C + ch) * 3 + dr + 1) * 3 + dc + 1];
              }
          CHECK(tp.val(y).v[((n * F + f) * H + r) * W + c] == doctest::Approx(acc));
        }
}

TEST_CASE("backward of sum is all-ones") {
  Tape<double> tp;
  auto p = tp.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}), true);
  tp.backward(tp.sum_all(p));
  for (double g : tp.grad(p)) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward of l2_norm at [3,4] is the unit vector") {
  Tape<double> tp;
  auto p = tp.leaf(Tensor<double>({2}, {3, 4}), true);
  tp.backward(tp.l2_norm(p));
  CHECK(tp.grad(p)[0] == doctest::Approx(0.6));
  CHECK(tp.grad(p)[1] == doctest::Approx(0.8));
}

TEST_CASE("backward requires a scalar loss") {
  Tape<double> tp;
  auto p = tp.leaf(Tensor<double>({2}, {1, 2}), true);
  CHECK_THROWS_AS(tp.backward(p), NonScalarLoss);
}

TEST_CASE("shape mismatch reports offending extents") {
  Tape<float> tp;
  auto a = tp.leaf(Tensor<float>({2, 3}));
  auto b = tp.leaf(Tensor<float>({2, 2}));
  CHECK_THROWS_WITH_AS(tp.add(a, b), doctest::Contains("[2,3]"), ShapeMismatch);
}

TEST_CASE("re-running backward reproduces identical gradients") {
  Rng rng(3);
  Tape<double> tp;
  auto p = tp.leaf(random_tensor({4, 4}, rng), true);
  auto loss = tp.l2_norm(tp.leaky_relu(p, 0.01));
  tp.backward(loss);
  auto g1 = tp.grad(p);
  tp.backward(loss);
  CHECK(tp.grad(p) == g1);
}

TEST_CASE("finite differences: every primitive") {
  Rng rng(42);

  SUBCASE("matmul") {
    check_gradients({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                    [](auto& tp, const auto& ids) {
                      return tp.sum_all(tp.matmul(ids[0], ids[1]));
                    });
  }
  SUBCASE("conv2d") {
    check_gradients({random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng),
                     random_tensor({3}, rng)},
                    [](auto& tp, const auto& ids) {
                      return tp.l2_norm(tp.conv2d(ids[0], ids[1], ids[2]));
                    });
  }
  SUBCASE("maxpool2") {
    check_gradients({random_tensor({1, 2, 4, 4}, rng)}, [](auto& tp, const auto& ids) {
      return tp.l2_norm(tp.maxpool2(ids[0]));
    });
  }
  SUBCASE("leaky_relu") {
    check_gradients({random_tensor({8}, rng)}, [](auto& tp, const auto& ids) {
      return tp.sum_all(tp.leaky_relu(ids[0], 0.01));
    });
  }
  SUBCASE("add mul sub affine") {
    check_gradients({random_tensor({5}, rng), random_tensor({5}, rng)},
                    [](auto& tp, const auto& ids) {
                      auto s = tp.add(tp.mul(ids[0], ids[1]), tp.sub(ids[0], ids[1]));
                      return tp.sum_all(tp.affine(s, 1.7, 0.3));
                    });
  }
  SUBCASE("concat and slice") {
    check_gradients({random_tensor({3, 2}, rng), random_tensor({3, 3}, rng)},
                    [](auto& tp, const auto& ids) {
                      auto c = tp.concat_cols(ids[0], ids[1]);
                      return tp.l2_norm(tp.slice_cols(c, 1, 4));
                    });
  }
  SUBCASE("reshape, sum_axis, mean_axis") {
    check_gradients({random_tensor({2, 6}, rng)}, [](auto& tp, const auto& ids) {
      auto r = tp.reshape(ids[0], {3, 4});
      auto s = tp.sum_axis(r, 0);
      auto m = tp.mean_axis(r, 1);
      return tp.add(tp.l2_norm(s), tp.l2_norm(m));
    });
  }
  SUBCASE("softmax_cross_entropy") {
    check_gradients({random_tensor({4, 3}, rng)}, [](auto& tp, const auto& ids) {
      return tp.softmax_cross_entropy(ids[0], {0, 2, 1, 2});
    });
  }
  SUBCASE("l2_norm") {
    check_gradients({random_tensor({7}, rng)}, [](auto& tp, const auto& ids) {
      return tp.l2_norm(ids[0]);
    });
  }
  SUBCASE("exp log") {
    Tensor<double> pos = random_tensor({6}, rng);
    for (auto& x : pos.v) x = std::abs(x) + 0.5;
    check_gradients({pos}, [](auto& tp, const auto& ids) {
      return tp.sum_all(tp.log(tp.exp(ids[0])));
    });
  }
  SUBCASE("gather and stack") {
    check_gradients({random_tensor({3, 4}, rng)}, [](auto& tp, const auto& ids) {
      auto g = tp.gather_rows(ids[0], {2, 0, 2});
      auto r0 = tp.gather_rows(ids[0], {1});
      return tp.add(tp.l2_norm(g), tp.l2_norm(tp.stack_rows({r0, r0})));
    });
  }
  SUBCASE("add_rowvec") {
    check_gradients({random_tensor({3, 4}, rng), random_tensor({4}, rng)},
                    [](auto& tp, const auto& ids) {
                      return tp.l2_norm(tp.add_rowvec(ids[0], ids[1]));
                    });
  }
}

TEST_CASE("softmax_cross_entropy values") {
  Tape<double> tp;
  auto uniform = tp.leaf(Tensor<double>({1, 6}));
  CHECK(tp.val(tp.softmax_cross_entropy(uniform, {3})).v[0] ==
        doctest::Approx(std::log(6.0)));
  Tensor<double> hot({1, 3});
  hot.v = {0, 1000, 0};
  Tape<double> tp2;
  CHECK(tp2.val(tp2.softmax_cross_entropy(tp2.leaf(hot), {1})).v[0] ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore<double> store;
  store.add("p", {3});
  store.params[0].data = {1.0, -2.0, 3.0};
  adam_step(store, {std::vector<double>(3, 0.0)});
  CHECK(store.params[0].data == std::vector<double>{1.0, -2.0, 3.0});
  CHECK(store.step == 1);
}

TEST_CASE("adam: first step moves a unit-gradient scalar by about lr") {
  ParamStore<double> store;
  store.add("p", {1});
  store.params[0].data = {0.5};
  AdamConfig cfg;
  adam_step(store, {std::vector<double>{1.0}}, cfg);
  // bias-corrected mhat/sqrt(vhat) = 1 on the first step
  CHECK(store.params[0].data[0] ==
        doctest::Approx(0.5 - cfg.lr).epsilon(1e-6));
}

TEST_CASE("adam: two identical steps follow the moment recurrence") {
  ParamStore<double> store;
  store.add("p", {1});
  store.params[0].data = {0.0};
  AdamConfig cfg;
  double g = 0.7;
  adam_step(store, {std::vector<double>{g}}, cfg);
  adam_step(store, {std::vector<double>{g}}, cfg);
  CHECK(store.step == 2);

  // hand-iterated recurrence
  double m = 0, v = 0, p = 0;
  for (int t = 1; t <= 2; ++t) {
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    double mhat = m / (1 - std::pow(cfg.beta1, t));
    double vhat = v / (1 - std::pow(cfg.beta2, t));
    p -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  CHECK(store.params[0].data[0] == doctest::Approx(p).epsilon(1e-10));
  CHECK(store.params[0].m[0] == doctest::Approx(m).epsilon(1e-10));
  CHECK(store.params[0].v[0] == doctest::Approx(v).epsilon(1e-10));
}
