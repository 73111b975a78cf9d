#include "cpsa/models.hpp"

#include <cmath>

namespace cpsa {

namespace {

void require_square(const MatrixXd& m, int dim, const char* what) {
  if (m.rows() != dim || m.cols() != dim) {
    throw DimensionError(std::string(what) + " must be " + std::to_string(dim) +
                         "x" + std::to_string(dim));
  }
}

bool is_symmetric(const MatrixXd& m, double tol = 1e-12) {
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + m.cwiseAbs().maxCoeff());
}

}  // namespace

GaussianSampler::GaussianSampler(const MatrixXd& cov) {
  if (cov.rows() != cov.cols()) throw DimensionError("covariance must be square");
  const Index n = cov.rows();
  if (n == 0) return;
  if (cov.isDiagonal()) {
    if ((cov.diagonal().array() < 0.0).any()) {
      throw InputError("covariance has a negative variance");
    }
    factor_ = cov.diagonal().cwiseSqrt().asDiagonal();
  } else {
    if (!is_symmetric(cov)) throw InputError("covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    const VectorXd lambda = es.eigenvalues();
    if (lambda.minCoeff() < -1e-12 * (1.0 + lambda.cwiseAbs().maxCoeff())) {
      throw InputError("covariance is not positive semidefinite");
    }
    factor_ = es.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  zero_ = factor_.isZero(0.0);
}

VectorXd GaussianSampler::operator()(Rng& rng) const {
  const Index n = factor_.rows();
  if (zero_) return VectorXd::Zero(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd e(n);
  for (Index i = 0; i < n; ++i) e(i) = normal(rng);
  return factor_ * e;
}

// ---- PlantModel -----------------------------------------------------------

PlantModel::PlantModel(int n, int m, int p, MatrixXd Q, MatrixXd R, double dt,
                       std::optional<double> lipschitz)
    : n_(n), m_(m), p_(p), Q_(std::move(Q)), R_(std::move(R)), dt_(dt),
      lipschitz_(lipschitz) {
  if (n <= 0 || m < 0 || p <= 0) throw DimensionError("model dimensions must be positive");
  require_square(Q_, n, "Q");
  require_square(R_, p, "R");
  if (!(dt > 0.0)) throw InputError("dt must be positive");
  if (lipschitz_ && !(*lipschitz_ > 0.0)) throw InputError("Lipschitz constant must be positive");
  w_ = GaussianSampler(Q_);
  v_ = GaussianSampler(R_);
  if (R_.llt().info() != Eigen::Success) {
    throw InputError("R must be positive definite");
  }
}

MatrixXd PlantModel::state_jacobian(const VectorXd& x, const VectorXd& u) const {
  return finite_difference_jacobian(
      [&](const VectorXd& xx) { return transition(xx, u); }, x);
}

MatrixXd PlantModel::output_jacobian(const VectorXd& x) const {
  return finite_difference_jacobian([&](const VectorXd& xx) { return output(xx); }, x);
}

MatrixXd finite_difference_jacobian(
    const std::function<VectorXd(const VectorXd&)>& fn, const VectorXd& x,
    double h) {
  const VectorXd f0 = fn(x);
  MatrixXd J(f0.size(), x.size());
  VectorXd xp = x, xm = x;
  for (Index j = 0; j < x.size(); ++j) {
    xp(j) = x(j) + h;
    xm(j) = x(j) - h;
    J.col(j) = (fn(xp) - fn(xm)) / (2.0 * h);
    xp(j) = x(j);
    xm(j) = x(j);
  }
  return J;
}

PlantState step(const PlantModel& model, const PlantState& state,
                const VectorXd& u, Rng& rng) {
  if (u.size() != model.m()) throw DimensionError("step: input has wrong size");
  if (!u.allFinite()) throw InputError("step: input is not finite");
  PlantState next{model.transition(state.x, u), state.t + 1};
  next.x += model.process_noise()(rng);
  if (!next.x.allFinite()) {
    throw NumericError("step: state left the finite range at t=" +
                       std::to_string(next.t));
  }
  return next;
}

VectorXd observe(const PlantModel& model, const PlantState& state, Rng& rng) {
  return model.output(state.x) + model.measurement_noise()(rng);
}

Linearization jacobians(const PlantModel& model, const VectorXd& x_lin,
                        const VectorXd& u_lin) {
  if (!x_lin.allFinite() || !u_lin.allFinite()) {
    throw InputError("jacobians: linearization point is not finite");
  }
  return {model.state_jacobian(x_lin, u_lin),
          model.output_jacobian(model.transition(x_lin, u_lin))};
}

// ---- LinearModel ----------------------------------------------------------

LinearModel::LinearModel(LtiMatrices lti, MatrixXd Q, MatrixXd R, double dt)
    : PlantModel(static_cast<int>(lti.A.rows()), static_cast<int>(lti.B.cols()),
                 static_cast<int>(lti.C.rows()), std::move(Q), std::move(R), dt,
                 std::nullopt),
      lti_(std::move(lti)) {
  if (lti_.A.rows() != lti_.A.cols()) throw DimensionError("A must be square");
  if (lti_.B.rows() != lti_.A.rows()) throw DimensionError("B rows must match A");
  if (lti_.C.cols() != lti_.A.rows()) throw DimensionError("C cols must match A");
}

VectorXd LinearModel::transition(const VectorXd& x, const VectorXd& u) const {
  return lti_.A * x + lti_.B * u;
}

VectorXd LinearModel::output(const VectorXd& x) const { return lti_.C * x; }

MatrixXd LinearModel::state_jacobian(const VectorXd&, const VectorXd&) const {
  return lti_.A;
}

MatrixXd LinearModel::output_jacobian(const VectorXd&) const { return lti_.C; }

// ---- BicycleModel ---------------------------------------------------------

BicycleModel::BicycleModel(MatrixXd Q, MatrixXd R, double dt, Geometry g)
    : PlantModel(4, 2, 2, std::move(Q), std::move(R), dt, 1.0), geo_(g) {}

double BicycleModel::slip(double steering) const {
  return std::atan(geo_.lr / (geo_.lf + geo_.lr) * std::tan(steering));
}

VectorXd BicycleModel::transition(const VectorXd& x, const VectorXd& u) const {
  const double beta = slip(u(1));
  const double h = dt();
  VectorXd next(4);
  next(0) = x(0) + h * x(3) * std::cos(x(2) + beta);
  next(1) = x(1) + h * x(3) * std::sin(x(2) + beta);
  next(2) = x(2) + h * x(3) / geo_.lr * std::sin(beta);
  next(3) = x(3) + h * u(0);
  return next;
}

VectorXd BicycleModel::output(const VectorXd& x) const { return x.head(2); }

MatrixXd BicycleModel::state_jacobian(const VectorXd& x, const VectorXd& u) const {
  const double beta = slip(u(1));
  const double h = dt();
  const double c = std::cos(x(2) + beta);
  const double s = std::sin(x(2) + beta);
  MatrixXd A = MatrixXd::Identity(4, 4);
  A(0, 2) = -h * x(3) * s;
  A(0, 3) = h * c;
  A(1, 2) = h * x(3) * c;
  A(1, 3) = h * s;
  A(2, 3) = h / geo_.lr * std::sin(beta);
  return A;
}

MatrixXd BicycleModel::output_jacobian(const VectorXd&) const {
  MatrixXd C = MatrixXd::Zero(2, 4);
  C(0, 0) = 1.0;
  C(1, 1) = 1.0;
  return C;
}

// ---- QuadrotorModel -------------------------------------------------------

QuadrotorModel::QuadrotorModel(MatrixXd Q, MatrixXd R, double dt, Constants c)
    : PlantModel(12, 4, 9, std::move(Q), std::move(R), dt, 1.0), c_(c),
      selection_(MatrixXd::Zero(9, 12)) {
  const int measured[9] = {X, Y, Z, PSI, THETA, PHI, PSI_D, THETA_D, PHI_D};
  for (int i = 0; i < 9; ++i) selection_(i, measured[i]) = 1.0;
}

VectorXd QuadrotorModel::transition(const VectorXd& x, const VectorXd& u) const {
  const double cps = std::cos(x(PSI)), sps = std::sin(x(PSI));
  const double cth = std::cos(x(THETA)), sth = std::sin(x(THETA));
  const double cph = std::cos(x(PHI)), sph = std::sin(x(PHI));
  const double T = u(0) / c_.mass;
  const double h = dt();

  VectorXd d(12);
  d.segment<3>(X) = x.segment<3>(VX);
  d(PSI) = x(PSI_D);
  d(THETA) = x(THETA_D);
  d(PHI) = x(PHI_D);
  d(VX) = T * (cph * sth * cps + sph * sps);
  d(VY) = T * (cph * sth * sps - sph * cps);
  d(VZ) = T * cph * cth - c_.gravity;
  d(PHI_D) = x(THETA_D) * x(PSI_D) * (c_.Iy - c_.Iz) / c_.Ix + u(1) / c_.Ix;
  d(THETA_D) = x(PHI_D) * x(PSI_D) * (c_.Iz - c_.Ix) / c_.Iy + u(2) / c_.Iy;
  d(PSI_D) = x(PHI_D) * x(THETA_D) * (c_.Ix - c_.Iy) / c_.Iz + u(3) / c_.Iz;
  return x + h * d;
}

VectorXd QuadrotorModel::output(const VectorXd& x) const { return selection_ * x; }

MatrixXd QuadrotorModel::state_jacobian(const VectorXd& x, const VectorXd& u) const {
  const double cps = std::cos(x(PSI)), sps = std::sin(x(PSI));
  const double cth = std::cos(x(THETA)), sth = std::sin(x(THETA));
  const double cph = std::cos(x(PHI)), sph = std::sin(x(PHI));
  const double T = u(0) / c_.mass;
  const double a1 = (c_.Iy - c_.Iz) / c_.Ix;
  const double a2 = (c_.Iz - c_.Ix) / c_.Iy;
  const double a3 = (c_.Ix - c_.Iy) / c_.Iz;

  MatrixXd J = MatrixXd::Zero(12, 12);
  J(X, VX) = J(Y, VY) = J(Z, VZ) = 1.0;
  J(PSI, PSI_D) = J(THETA, THETA_D) = J(PHI, PHI_D) = 1.0;

  J(VX, PSI) = T * (-cph * sth * sps + sph * cps);
  J(VX, THETA) = T * cph * cth * cps;
  J(VX, PHI) = T * (-sph * sth * cps + cph * sps);
  J(VY, PSI) = T * (cph * sth * cps + sph * sps);
  J(VY, THETA) = T * cph * cth * sps;
  J(VY, PHI) = T * (-sph * sth * sps - cph * cps);
  J(VZ, THETA) = -T * cph * sth;
  J(VZ, PHI) = -T * sph * cth;

  J(PHI_D, THETA_D) = a1 * x(PSI_D);
  J(PHI_D, PSI_D) = a1 * x(THETA_D);
  J(THETA_D, PHI_D) = a2 * x(PSI_D);
  J(THETA_D, PSI_D) = a2 * x(PHI_D);
  J(PSI_D, PHI_D) = a3 * x(THETA_D);
  J(PSI_D, THETA_D) = a3 * x(PHI_D);

  return MatrixXd::Identity(12, 12) + dt() * J;
}

MatrixXd QuadrotorModel::output_jacobian(const VectorXd&) const { return selection_; }

// ---- CallableModel --------------------------------------------------------

CallableModel::CallableModel(std::string id, int n, int m, int p, Transition f,
                             Output h, MatrixXd Q, MatrixXd R, double dt,
                             std::optional<double> lipschitz)
    : PlantModel(n, m, p, std::move(Q), std::move(R), dt, lipschitz),
      id_(std::move(id)), f_(std::move(f)), h_(std::move(h)) {}

}  // namespace cpsa
