#include <random>

#include "doctest.h"
#include "cpsa/autodiff.hpp"
#include "cpsa/nn.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using cpsa::MatrixXd;
using cpsa::VectorXd;
using cpsa::ad::Tape;
using cpsa::ad::Tensor;
namespace ad = cpsa::ad;

namespace {

MatrixXd mat(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixXd m(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("matmul values and shape errors") {
  Tape tape;
  const auto a = Tensor::constant(MatrixXd::Identity(2, 2));
  const auto b = Tensor::constant(mat({{3}, {4}}));
  CHECK(ad::matmul(tape, a, b).value().isApprox(mat({{3}, {4}})));
  const auto c = ad::matmul(tape, Tensor::constant(mat({{1, 2}})), b);
  CHECK(c.item() == doctest::Approx(11.0));
  CHECK_THROWS_AS(ad::matmul(tape, b, b), cpsa::DimensionError);
}

TEST_CASE("relu forward and subgradient at zero") {
  Tape tape;
  const auto x = Tensor::parameter(mat({{-1}, {0}, {2}}));
  const auto r = ad::relu(tape, x);
  CHECK(r.value().isApprox(mat({{0}, {0}, {2}})));
  tape.backward(ad::sum(tape, r));
  CHECK(x.grad().isApprox(mat({{0}, {0}, {1}})));

  Tape t2;
  const auto neg = Tensor::parameter(mat({{-1}, {-2}}));
  const auto out = ad::relu(t2, neg);
  CHECK(out.value().isZero());
  t2.backward(ad::sum(t2, out));
  CHECK(neg.grad().isZero());

  Tape t3;
  const auto pm = Tensor::parameter(mat({{3}, {-3}}));
  t3.backward(ad::sum(t3, ad::relu(t3, pm)));
  CHECK(pm.grad().isApprox(mat({{1}, {0}})));
}

TEST_CASE("weighted quadratic") {
  Tape tape;
  CHECK(ad::weighted_quadratic(tape, Tensor::constant(mat({{1}, {0}})),
                               MatrixXd::Identity(2, 2))
            .item() == doctest::Approx(1.0));
  CHECK(ad::weighted_quadratic(tape, Tensor::constant(VectorXd::Zero(2)),
                               MatrixXd::Identity(2, 2))
            .item() == 0.0);
  CHECK(ad::weighted_quadratic(tape, Tensor::constant(mat({{1}, {1}})),
                               Eigen::Vector2d(2, 3).asDiagonal().toDenseMatrix())
            .item() == doctest::Approx(5.0));
  CHECK_THROWS_AS(ad::weighted_quadratic(tape, Tensor::constant(mat({{1}, {1}})),
                                         MatrixXd::Ones(2, 3)),
                  cpsa::DimensionError);
}

TEST_CASE("smooth norm") {
  Tape tape;
  CHECK(ad::smooth_norm(tape, Tensor::constant(mat({{3}, {4}})), 1e-12).item() ==
        doctest::Approx(5.0));
  const auto zero = Tensor::parameter(VectorXd::Zero(3));
  const auto n = ad::smooth_norm(tape, zero, 1e-12);
  CHECK(n.item() == doctest::Approx(1e-6).epsilon(1e-12));
  tape.backward(n);
  CHECK(zero.grad().allFinite());
  CHECK(zero.grad().isZero());
}

TEST_CASE("backward on spec losses") {
  Tape tape;
  const auto theta = Tensor::parameter(VectorXd::Zero(3));
  tape.backward(ad::sum(tape, theta));
  CHECK(theta.grad().isApprox(VectorXd::Ones(3)));

  Tape t2;
  const auto z = Tensor::parameter(mat({{1}, {2}}));
  t2.backward(ad::weighted_quadratic(t2, z, MatrixXd::Identity(2, 2)));
  CHECK(z.grad().isApprox(mat({{2}, {4}})));
}

TEST_CASE("backward contract errors") {
  Tape tape;
  const auto x = Tensor::parameter(mat({{1}, {2}}));
  const auto y = ad::scale(tape, x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), cpsa::ContractError);
  Tape other;
  const auto loss = ad::sum(other, x);
  CHECK_THROWS_AS(tape.backward(loss), cpsa::ContractError);
}

TEST_CASE("parameters untouched by the loss get zero gradient") {
  Tape tape;
  const auto used = Tensor::parameter(mat({{1}}));
  const auto unused = Tensor::parameter(mat({{5}}));
  (void)unused;
  tape.backward(ad::sum(tape, used));
  CHECK(used.grad()(0, 0) == 1.0);
}

TEST_CASE("sgd step") {
  auto theta = Tensor::parameter(mat({{1}}));
  {
    Tape tape;
    tape.backward(ad::scale(tape, theta, 2.0));
    std::vector<Tensor> p{theta};
    ad::sgd_step(p, 0.1);
  }
  CHECK(theta.value()(0, 0) == doctest::Approx(0.8));

  // zero gradient leaves parameters unchanged
  auto still = Tensor::parameter(mat({{0.5}, {-2}}));
  {
    Tape tape;
    tape.backward(ad::sum(tape, ad::scale(tape, still, 0.0)));
    std::vector<Tensor> p{still};
    ad::sgd_step(p, 1.0);
  }
  CHECK(still.value().isApprox(mat({{0.5}, {-2}})));

  // two steps on 0.5 theta^2 from 1 with beta 0.5
  auto q = Tensor::parameter(mat({{1}}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(ad::scale(tape, ad::weighted_quadratic(tape, q, MatrixXd::Identity(1, 1)), 0.5));
    std::vector<Tensor> p{q};
    ad::sgd_step(p, 0.5);
  }
  CHECK(q.value()(0, 0) == doctest::Approx(0.25));

  auto fresh = Tensor::parameter(mat({{1}}));
  std::vector<Tensor> p{fresh};
  CHECK_THROWS_AS(ad::sgd_step(p, 0.1), cpsa::ContractError);
  CHECK_THROWS_AS(ad::sgd_step(p, 0.0), cpsa::ContractError);
}

TEST_CASE("every primitive matches central differences") {
  std::mt19937_64 rng(7);
  for (const auto& pc : gradcheck::primitive_cases()) {
    CAPTURE(pc.name);
    CHECK(gradcheck::primitive_error(pc, 100, rng) < 1e-5);
  }
}

TEST_CASE("three-layer ReLU net matches central differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    ad::Mlp net({4, 6, 5, 2}, rng);
    const MatrixXd x = oracle::uniform(4, 3, rng);
    Tape tape;
    const auto out = net.forward(tape, Tensor::constant(x));
    tape.backward(ad::sum(tape, out));
    for (auto p : net.parameters()) {
      const MatrixXd base = p.value();
      const MatrixXd numeric = oracle::numeric_gradient(
          [&](const MatrixXd& v) {
            p.mutable_value() = v;
            const double s = net.evaluate(x).sum();
            p.mutable_value() = base;
            return s;
          },
          base);
      CHECK(oracle::rel_error(p.grad(), numeric) < 1e-5);
    }
  }
}

TEST_CASE("fused recurrent unroll equals per-step forward") {
  std::mt19937_64 rng(3);
  ad::Mlp net({5, 7, 3}, rng);
  const MatrixXd feats = oracle::uniform(2, 8, rng);
  Tape tape;
  const auto R = net.unroll(tape, feats, VectorXd::Zero(3));
  VectorXd r = VectorXd::Zero(3);
  for (Eigen::Index j = 0; j < feats.cols(); ++j) {
    VectorXd in(5);
    in << feats.col(j), r;
    r = net.evaluate(in);
    CHECK((R.value().col(j) - r).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("backward is repeatable on a fresh tape") {
  std::mt19937_64 rng(5);
  ad::Mlp net({3, 4, 1}, rng);
  const MatrixXd x = oracle::uniform(3, 2, rng);
  MatrixXd first;
  for (int k = 0; k < 2; ++k) {
    Tape tape;
    tape.backward(ad::sum(tape, net.forward(tape, Tensor::constant(x))));
    if (k == 0) {
      first = net.weights()[0].grad();
      for (auto p : net.parameters()) p.zero_grad();
    } else {
      CHECK(net.weights()[0].grad() == first);
    }
  }
}

TEST_CASE("composed objective gradients") {
  std::mt19937_64 rng(13);
  CHECK(gradcheck::composed_objective_error(5, 4, rng, false) < 1e-4);
  CHECK(gradcheck::composed_objective_error(5, 4, rng, true) < 1e-4);
}
