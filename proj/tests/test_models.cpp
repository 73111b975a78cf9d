#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "cpsa/models.hpp"
#include "oracles.hpp"

using namespace cpsa;

namespace {

MatrixXd fd_jacobian(const std::function<VectorXd(const VectorXd&)>& fn, const VectorXd& x) {
  const VectorXd f0 = fn(x);
  MatrixXd J(f0.size(), x.size());
  for (Index k = 0; k < x.size(); ++k) {
    const auto column = [&](const MatrixXd& xk) {
      VectorXd probe = x;
      probe(k) = xk(0, 0);
      return fn(probe);
    };
    for (Index i = 0; i < f0.size(); ++i) {
      J(i, k) = oracle::numeric_gradient(
          [&](const MatrixXd& xk) { return column(xk)(i); },
          MatrixXd::Constant(1, 1, x(k)))(0, 0);
    }
  }
  return J;
}

BicycleModel noiseless_car() {
  return BicycleModel(MatrixXd::Zero(4, 4), 0.01 * MatrixXd::Identity(2, 2));
}

}  // namespace

TEST_CASE("LTI identity step without noise") {
  LinearModel m({MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2)},
                MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2));
  Rng rng(1);
  const auto next = step(m, {Eigen::Vector2d(1, 1), 0}, Eigen::Vector2d::Zero(), rng);
  CHECK(next.x == Eigen::Vector2d(1, 1));
  CHECK(next.t == 1);
}

TEST_CASE("bicycle one Euler step at constant speed") {
  const auto car = noiseless_car();
  Rng rng(1);
  const VectorXd x0 = Eigen::Vector4d(0, 0, 0, 10);
  const auto next = step(car, {x0, 0}, Eigen::Vector2d::Zero(), rng);
  // x += dt * v cos(psi) = 0.05 * 10
  CHECK(next.x(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(next.x(1) == 0.0);
  CHECK(next.x(2) == 0.0);
  CHECK(next.x(3) == 10.0);
}

TEST_CASE("quadrotor holds altitude at hover thrust") {
  QuadrotorModel quad(MatrixXd::Zero(12, 12), MatrixXd::Identity(9, 9));
  const QuadrotorConstants c;
  Rng rng(1);
  VectorXd x = VectorXd::Zero(12);
  x(QuadrotorModel::Z) = 20.0;
  VectorXd u = VectorXd::Zero(4);
  u(0) = c.mass * c.gravity;
  const auto next = step(quad, {x, 0}, u, rng);
  CHECK(next.x(QuadrotorModel::Z) == doctest::Approx(20.0).epsilon(1e-14));
  CHECK(std::abs(next.x(QuadrotorModel::VZ)) < 1e-12);
}

TEST_CASE("outputs select the measured states") {
  // R must stay positive definite, so the noise-free map is checked through h.
  const auto car = noiseless_car();
  const VectorXd x = Eigen::Vector4d(3, -2, 0.4, 9);
  CHECK(car.output(x) == Eigen::Vector2d(3, -2));

  QuadrotorModel quad(MatrixXd::Zero(12, 12), MatrixXd::Identity(9, 9));
  VectorXd s(12);
  for (int i = 0; i < 12; ++i) s(i) = i + 1;
  VectorXd expect(9);
  expect << 1, 2, 3, 4, 5, 6, 10, 11, 12;
  CHECK(quad.output(s) == expect);
}

TEST_CASE("measurement noise matches R") {
  BicycleModel car(MatrixXd::Zero(4, 4), 0.01 * MatrixXd::Identity(2, 2));
  Rng rng(3);
  const int N = 100000;
  MatrixXd samples(2, N);
  const PlantState s{VectorXd::Zero(4), 0};
  for (int k = 0; k < N; ++k) samples.col(k) = observe(car, s, rng);
  const VectorXd mean = samples.rowwise().mean();
  const MatrixXd centered = samples.colwise() - mean;
  const MatrixXd cov = centered * centered.transpose() / (N - 1);
  CHECK(std::abs(cov(0, 0) - 0.01) < 0.05 * 0.01);
  CHECK(std::abs(cov(1, 1) - 0.01) < 0.05 * 0.01);
  CHECK(std::abs(cov(0, 1)) < 5e-4);
}

TEST_CASE("process noise matches a correlated Q") {
  MatrixXd Q(2, 2);
  Q << 0.04, 0.01, 0.01, 0.02;
  GaussianSampler w(Q);
  Rng rng(4);
  const int N = 100000;
  MatrixXd acc = MatrixXd::Zero(2, 2);
  for (int k = 0; k < N; ++k) {
    const VectorXd d = w(rng);
    acc += d * d.transpose();
  }
  acc /= N;
  CHECK(((acc - Q).array().abs() < 0.05 * Q.array().abs().maxCoeff()).all());
}

TEST_CASE("same seed, same trajectory") {
  BicycleModel car(0.001 * MatrixXd::Identity(4, 4), 0.01 * MatrixXd::Identity(2, 2));
  auto run = [&](std::uint64_t seed) {
    Rng rng(seed);
    PlantState s{Eigen::Vector4d(0, 0, 0, 10), 0};
    for (int k = 0; k < 50; ++k) s = step(car, s, Eigen::Vector2d(0.1, 0.01), rng);
    return s.x;
  };
  CHECK(run(9) == run(9));
  CHECK(run(9) != run(10));
}

TEST_CASE("non-finite transitions are rejected") {
  CallableModel bad("bad", 1, 1, 1,
                    [](const VectorXd& x, const VectorXd&) { return VectorXd(x.array() / 0.0); },
                    [](const VectorXd& x) { return x; }, MatrixXd::Zero(1, 1),
                    MatrixXd::Identity(1, 1), 1.0);
  Rng rng(1);
  CHECK_THROWS_AS(step(bad, {VectorXd::Zero(1), 0}, VectorXd::Zero(1), rng), NumericError);
}

TEST_CASE("LTI linearization is exact everywhere") {
  MatrixXd A(2, 2), B(2, 1), C(1, 2);
  A << 1.1, 0.2, 0, 0.9;
  B << 0, 1;
  C << 1, 0;
  LinearModel m({A, B, C}, MatrixXd::Zero(2, 2), MatrixXd::Identity(1, 1));
  Rng rng(5);
  for (int k = 0; k < 10; ++k) {
    const auto lin = jacobians(m, oracle::uniform(2, 1, rng, -50, 50), oracle::uniform(1, 1, rng));
    CHECK(lin.A == A);
    CHECK(lin.C == C);
  }
}

TEST_CASE("analytic Jacobians agree with central differences at 100 points") {
  std::mt19937_64 rng(6);
  const auto car = noiseless_car();
  QuadrotorModel quad(MatrixXd::Zero(12, 12), MatrixXd::Identity(9, 9));
  for (int k = 0; k < 100; ++k) {
    const VectorXd xc = oracle::uniform(4, 1, rng, -3, 3);
    const VectorXd uc = oracle::uniform(2, 1, rng, -0.4, 0.4);
    const auto fc = [&](const VectorXd& x) { return car.transition(x, uc); };
    CHECK(oracle::rel_error(car.state_jacobian(xc, uc), fd_jacobian(fc, xc)) < 1e-6);
    CHECK(oracle::rel_error(car.output_jacobian(xc),
                            fd_jacobian([&](const VectorXd& x) { return car.output(x); }, xc)) < 1e-6);

    const VectorXd xq = oracle::uniform(12, 1, rng, -1, 1);
    const VectorXd uq = oracle::uniform(4, 1, rng, 0, 10);
    const auto fq = [&](const VectorXd& x) { return quad.transition(x, uq); };
    CHECK(oracle::rel_error(quad.state_jacobian(xq, uq), fd_jacobian(fq, xq)) < 1e-6);
  }
}

TEST_CASE("bicycle heading column at psi = 0") {
  const auto car = noiseless_car();
  const VectorXd x = Eigen::Vector4d(0, 0, 0, 10);
  const MatrixXd A = car.state_jacobian(x, Eigen::Vector2d::Zero());
  // dX/dpsi = -dt v sin(psi) vanishes; dY/dpsi = dt v cos(psi).
  CHECK(A(0, 2) == doctest::Approx(0.0));
  CHECK(A(1, 2) == doctest::Approx(0.05 * 10));
}

TEST_CASE("callable models linearize by finite differences") {
  CallableModel pend(
      "pend", 2, 1, 1,
      [](const VectorXd& x, const VectorXd& u) {
        VectorXd n(2);
        n << x(0) + 0.1 * x(1), x(1) - 0.1 * std::sin(x(0)) + 0.1 * u(0);
        return n;
      },
      [](const VectorXd& x) { return VectorXd::Constant(1, x(0) * x(0)); },
      MatrixXd::Zero(2, 2), MatrixXd::Identity(1, 1), 0.1);
  const VectorXd x = Eigen::Vector2d(0.3, -0.2);
  const auto lin = jacobians(pend, x, VectorXd::Zero(1));
  MatrixXd A(2, 2);
  A << 1, 0.1, -0.1 * std::cos(0.3), 1;
  CHECK((lin.A - A).cwiseAbs().maxCoeff() < 1e-8);
  // C is taken at the prediction f(x, u).
  const double x_pred0 = 0.3 + 0.1 * -0.2;
  CHECK(lin.C(0, 0) == doctest::Approx(2 * x_pred0).epsilon(1e-7));
}

TEST_CASE("constructors reject inconsistent shapes") {
  CHECK_THROWS_AS(LinearModel({MatrixXd::Identity(2, 2), MatrixXd::Identity(3, 1),
                               MatrixXd::Identity(1, 2)},
                              MatrixXd::Zero(2, 2), MatrixXd::Identity(1, 1)),
                  DimensionError);
  CHECK_THROWS(BicycleModel(MatrixXd::Zero(3, 3), MatrixXd::Identity(2, 2)));
  CHECK_THROWS_AS(BicycleModel(MatrixXd::Zero(4, 4), MatrixXd::Zero(2, 2)), InputError);
}
