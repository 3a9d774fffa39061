#include <doctest.h>

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <vector>

#include "ssre/autodiff.hpp"
#include "ssre/errors.hpp"
#include "ssre/rng.hpp"

using namespace ssre;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Central-difference check of d(loss)/d(x) for a loss built by `build` from
// a single input node. Returns the worst relative error over entries.
double fd_input_check(const Eigen::MatrixXd& x0,
                      const std::function<Var(Graph&, Var)>& build,
                      double eps = 1e-5) {
  Graph g(true);
  Var x = g.input(x0);
  Var loss = build(g, x);
  g.backward(loss);
  Eigen::MatrixXd analytic = g.grad(x);

  double worst = 0.0;
  for (int i = 0; i < x0.rows(); ++i) {
    for (int j = 0; j < x0.cols(); ++j) {
      Eigen::MatrixXd xp = x0, xm = x0;
      xp(i, j) += eps;
      xm(i, j) -= eps;
      Graph gp(false), gm(false);
      double lp = gp.value(build(gp, gp.input(xp)))(0, 0);
      double lm = gm.value(build(gm, gm.input(xm)))(0, 0);
      double fd = (lp - lm) / (2 * eps);
      double denom = std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-6});
      worst = std::max(worst, std::abs(fd - analytic(i, j)) / denom);
    }
  }
  return worst;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("matmul gradients") {
  Rng rng(1);
  auto B = random_matrix(rng, 4, 2);
  auto W = random_matrix(rng, 3, 2);
  CHECK(fd_input_check(random_matrix(rng, 3, 4), [&](Graph& g, Var x) {
          return g.weighted_sum(g.matmul(x, g.input(B)), W);
        }) < kTol);
  // Also as the right operand.
  auto A = random_matrix(rng, 3, 4);
  CHECK(fd_input_check(random_matrix(rng, 4, 2), [&](Graph& g, Var x) {
          return g.weighted_sum(g.matmul(g.input(A), x), W);
        }) < kTol);
}

TEST_CASE("add, scale, lincomb, transpose gradients") {
  Rng rng(2);
  auto B = random_matrix(rng, 3, 3);
  auto W = random_matrix(rng, 3, 3);
  CHECK(fd_input_check(random_matrix(rng, 3, 3), [&](Graph& g, Var x) {
          return g.weighted_sum(g.add(x, g.input(B)), W);
        }) < kTol);
  CHECK(fd_input_check(random_matrix(rng, 3, 3), [&](Graph& g, Var x) {
          return g.weighted_sum(g.scale(x, -2.75), W);
        }) < kTol);
  CHECK(fd_input_check(random_matrix(rng, 3, 3), [&](Graph& g, Var x) {
          return g.weighted_sum(g.lincomb(0.3, x, 0.7, g.input(B)), W);
        }) < kTol);
  CHECK(fd_input_check(random_matrix(rng, 3, 3), [&](Graph& g, Var x) {
          return g.weighted_sum(g.lincomb(0.6, x, 0.4, x), W);
        }) < kTol);
  auto Wt = random_matrix(rng, 4, 2);
  CHECK(fd_input_check(random_matrix(rng, 2, 4), [&](Graph& g, Var x) {
          return g.weighted_sum(g.transpose(x), Wt);
        }) < kTol);
}

TEST_CASE("row broadcast gradients for both operands") {
  Rng rng(3);
  auto bias = random_matrix(rng, 1, 5);
  auto W = random_matrix(rng, 4, 5);
  CHECK(fd_input_check(random_matrix(rng, 4, 5), [&](Graph& g, Var x) {
          return g.weighted_sum(g.add_row_broadcast(x, g.input(bias)), W);
        }) < kTol);
  auto A = random_matrix(rng, 4, 5);
  CHECK(fd_input_check(bias, [&](Graph& g, Var x) {
          return g.weighted_sum(g.add_row_broadcast(g.input(A), x), W);
        }) < kTol);
}

TEST_CASE("slice and concat gradients") {
  Rng rng(4);
  auto W2 = random_matrix(rng, 2, 6);
  CHECK(fd_input_check(random_matrix(rng, 5, 6), [&](Graph& g, Var x) {
          return g.weighted_sum(g.slice_rows(x, 1, 3), W2);
        }) < kTol);
  auto W3 = random_matrix(rng, 5, 2);
  CHECK(fd_input_check(random_matrix(rng, 5, 6), [&](Graph& g, Var x) {
          return g.weighted_sum(g.slice_cols(x, 4, 6), W3);
        }) < kTol);
  auto other = random_matrix(rng, 2, 3);
  auto Wr = random_matrix(rng, 5, 3);
  CHECK(fd_input_check(random_matrix(rng, 3, 3), [&](Graph& g, Var x) {
          return g.weighted_sum(g.concat_rows({x, g.input(other)}), Wr);
        }) < kTol);
  auto Wc = random_matrix(rng, 2, 7);
  auto right = random_matrix(rng, 2, 4);
  CHECK(fd_input_check(random_matrix(rng, 2, 3), [&](Graph& g, Var x) {
          return g.weighted_sum(g.concat_cols({x, g.input(right)}), Wc);
        }) < kTol);
}

TEST_CASE("gelu gradient and reference values") {
  Rng rng(5);
  auto W = random_matrix(rng, 3, 4);
  CHECK(fd_input_check(random_matrix(rng, 3, 4, 2.0), [&](Graph& g, Var x) {
          return g.weighted_sum(g.gelu(x), W);
        }) < kTol);
  Graph g(false);
  Eigen::MatrixXd pts(1, 3);
  pts << 0.0, 1.0, -1.0;
  auto out = g.value(g.gelu(g.input(pts)));
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(out(0, 2) == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
}

TEST_CASE("layer norm gradients for input, gain, and bias") {
  Rng rng(6);
  auto gain = random_matrix(rng, 1, 6);
  auto bias = random_matrix(rng, 1, 6);
  auto W = random_matrix(rng, 4, 6);
  auto A = random_matrix(rng, 4, 6);
  CHECK(fd_input_check(A, [&](Graph& g, Var x) {
          return g.weighted_sum(
              g.layer_norm(x, g.input(gain), g.input(bias), 1e-5), W);
        }) < kTol);
  CHECK(fd_input_check(gain, [&](Graph& g, Var x) {
          return g.weighted_sum(g.layer_norm(g.input(A), x, g.input(bias), 1e-5),
                                W);
        }) < kTol);
  CHECK(fd_input_check(bias, [&](Graph& g, Var x) {
          return g.weighted_sum(g.layer_norm(g.input(A), g.input(gain), x, 1e-5),
                                W);
        }) < kTol);
}

TEST_CASE("masked softmax rows: exact zeros, unit mass, gradients") {
  Rng rng(7);
  std::vector<unsigned char> mask{1, 1, 0, 1, 0};
  auto S = random_matrix(rng, 3, 5);
  Graph g(true);
  Var s = g.input(S);
  Var p = g.masked_softmax_rows(s, mask);
  const auto& P = g.value(p);
  for (int r = 0; r < 3; ++r) {
    CHECK(P(r, 2) == 0.0);
    CHECK(P(r, 4) == 0.0);
    CHECK(P.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto W = random_matrix(rng, 3, 5);
  CHECK(fd_input_check(S, [&](Graph& gg, Var x) {
          return gg.weighted_sum(gg.masked_softmax_rows(x, mask), W);
        }) < kTol);
  // Masked positions receive exactly zero gradient.
  Var loss = g.weighted_sum(p, W);
  g.backward(loss);
  for (int r = 0; r < 3; ++r) {
    CHECK(g.grad(s)(r, 2) == 0.0);
    CHECK(g.grad(s)(r, 4) == 0.0);
  }
  Graph g_all_masked(false);
  Var s_all = g_all_masked.input(S);
  CHECK_THROWS_AS(
      g_all_masked.masked_softmax_rows(s_all, std::vector<unsigned char>(5, 0)),
      DataError);
}

TEST_CASE("plain softmax matches masked softmax with a full mask") {
  Rng rng(8);
  auto S = random_matrix(rng, 2, 4);
  Graph g(false);
  auto a = g.value(g.softmax_rows(g.input(S)));
  auto b = g.value(
      g.masked_softmax_rows(g.input(S), std::vector<unsigned char>(4, 1)));
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross entropy mean: value, gradients, exact masking") {
  Rng rng(9);
  Eigen::MatrixXd targets(3, 4);
  targets << 1, 0, 0, 0, 0, 0.5, 0.5, 0, 0.25, 0.25, 0.25, 0.25;
  Eigen::VectorXd weights(3);
  weights << 1.0, 0.0, 2.0;
  auto Z = random_matrix(rng, 3, 4);
  CHECK(fd_input_check(Z, [&](Graph& g, Var x) {
          return g.cross_entropy_mean(x, targets, weights);
        }) < kTol);

  // The weight-zero row gets exactly zero gradient and contributes exactly
  // nothing to the value.
  Graph g(true);
  Var z = g.input(Z);
  Var loss = g.cross_entropy_mean(z, targets, weights);
  g.backward(loss);
  CHECK(g.grad(z).row(1).cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd t2 = targets;
  Eigen::MatrixXd z2 = Z;
  t2.row(1).setZero();
  z2.row(1).setConstant(1e6);  // a wild masked row must change nothing
  Graph g2(false);
  double with_wild =
      g2.value(g2.cross_entropy_mean(g2.input(z2), t2, weights))(0, 0);
  CHECK(with_wild == g.value(loss)(0, 0));

  // Hand-computed reference on a tiny case.
  Eigen::MatrixXd logits(1, 2);
  logits << std::log(3.0), std::log(1.0);
  Eigen::MatrixXd tgt(1, 2);
  tgt << 1.0, 0.0;
  Eigen::VectorXd w1 = Eigen::VectorXd::Ones(1);
  Graph g3(false);
  double ce = g3.value(g3.cross_entropy_mean(g3.input(logits), tgt, w1))(0, 0);
  CHECK(ce == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("parameter gradients accumulate into tensors") {
  Rng rng(10);
  ParamStore store;
  Tensor* w = store.create("w", 3, 3, true);
  w->value = random_matrix(rng, 3, 3);
  auto probe = random_matrix(rng, 3, 3);

  auto loss_value = [&]() {
    Graph g(false);
    Var x = g.param(*w);
    return g.value(g.weighted_sum(g.matmul(x, x), probe))(0, 0);
  };

  Graph g(true);
  Var x = g.param(*w);
  Var loss = g.weighted_sum(g.matmul(x, x), probe);
  g.backward(loss);

  double eps = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double keep = w->value(i, j);
      w->value(i, j) = keep + eps;
      double lp = loss_value();
      w->value(i, j) = keep - eps;
      double lm = loss_value();
      w->value(i, j) = keep;
      double fd = (lp - lm) / (2 * eps);
      double denom = std::max({std::abs(fd), std::abs(w->grad(i, j)), 1e-6});
      worst = std::max(worst, std::abs(fd - w->grad(i, j)) / denom);
    }
  }
  CHECK(worst < kTol);

  // A second backward without zeroing doubles the accumulator.
  Eigen::MatrixXd once = w->grad;
  Graph g2(true);
  Var x2 = g2.param(*w);
  g2.backward(g2.weighted_sum(g2.matmul(x2, x2), probe));
  CHECK((w->grad - 2.0 * once).cwiseAbs().maxCoeff() < 1e-12);
  store.zero_grads();
  CHECK(w->grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("embedding rows gather and scatter") {
  Rng rng(11);
  ParamStore store;
  Tensor* table = store.create("emb", 6, 4, false);
  table->value = random_matrix(rng, 6, 4);
  std::vector<int> ids{2, 0, 2, 5};
  auto W = random_matrix(rng, 4, 4);

  Graph g(true);
  Var e = g.embedding_rows(*table, ids);
  CHECK(g.value(e).row(0) == table->value.row(2));
  CHECK(g.value(e).row(2) == table->value.row(2));
  g.backward(g.weighted_sum(e, W));
  // Row 2 was used twice, so its gradient is the sum of both probe rows.
  CHECK((table->grad.row(2) - (W.row(0) + W.row(2))).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK(table->grad.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((table->grad.row(5) - W.row(3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(g.embedding_rows(*table, std::vector<int>{6}), DataError);
}

TEST_CASE("fanout accumulates gradients") {
  Rng rng(12);
  auto B = random_matrix(rng, 3, 3);
  auto W = random_matrix(rng, 3, 3);
  CHECK(fd_input_check(random_matrix(rng, 3, 3), [&](Graph& g, Var x) {
          Var y1 = g.matmul(x, g.input(B));
          Var y2 = g.gelu(x);
          return g.add(g.weighted_sum(y1, W), g.weighted_sum(y2, W));
        }) < kTol);
}

TEST_CASE("composite attention-like block") {
  Rng rng(13);
  int t = 5, d = 8;
  auto Wq = random_matrix(rng, d, d, 0.3);
  auto Wk = random_matrix(rng, d, d, 0.3);
  auto Wv = random_matrix(rng, d, d, 0.3);
  auto gain = Eigen::MatrixXd::Ones(1, d);
  auto bias = Eigen::MatrixXd::Zero(1, d);
  std::vector<unsigned char> mask{1, 1, 1, 1, 0};
  auto W = random_matrix(rng, t, d);
  CHECK(fd_input_check(random_matrix(rng, t, d, 0.5), [&](Graph& g, Var x) {
          Var q = g.matmul(x, g.input(Wq));
          Var k = g.matmul(x, g.input(Wk));
          Var v = g.matmul(x, g.input(Wv));
          Var scores = g.scale(g.matmul(q, g.transpose(k)),
                               1.0 / std::sqrt(static_cast<double>(d)));
          Var p = g.masked_softmax_rows(scores, mask);
          Var ctx = g.matmul(p, v);
          Var res = g.add(x, ctx);
          Var ln = g.layer_norm(res, g.input(gain), g.input(bias), 1e-5);
          return g.weighted_sum(ln, W);
        }, 1e-5) < 1e-5);
}

TEST_CASE("backward guards") {
  Graph g(false);
  Var x = g.input(Eigen::MatrixXd::Ones(2, 2));
  CHECK_THROWS_AS(g.backward(x), ConfigError);
  Graph g2(true);
  Var y = g2.input(Eigen::MatrixXd::Ones(2, 2));
  CHECK_THROWS_AS(g2.backward(y), DataError);
}
