#pragma once

// Extended Kalman filter with innovation (residue) extraction. For linear
// plants it is exactly the standard Kalman filter.

#include "cpsa/autodiff.hpp"
#include "cpsa/models.hpp"

namespace cpsa {

/// How the gain is formed from the a-priori covariance P_t.
///  - Filter:    L_t = P_t C_t^T S_t^-1, posterior P via Joseph form, then
///               P_{t+1} = A P A^T + Q at the next predict (default).
///  - Predictor: L_t = A_t P_t C_t^T S_t^-1 and
///               P_{t+1} = A_t P_t A_t^T + Q - L_t S_t L_t^T, with the same
///               L_t used in the measurement update. Identical to Filter when
///               A_t = I; kept for sensitivity studies.
enum class GainForm { Filter, Predictor };

struct EstimatorState {
  VectorXd x_hat;   // updated estimate
  VectorXd x_pred;  // one-step prediction
  VectorXd y_pred;  // h(x_pred)
  MatrixXd P;       // a-priori covariance after predict, posterior after update
  MatrixXd L_gain;
  MatrixXd S;
  MatrixXd S_inv;
  MatrixXd A;       // df/dx used for this step
  MatrixXd C;       // dh/dx at x_pred
  long t = 0;
  bool predicted = false;
  GainForm form = GainForm::Filter;
  MatrixXd P_next;  // Predictor form only
};

struct Residue {
  VectorXd z;
  MatrixXd S;
  double g = 0.0;
};

EstimatorState make_estimator(VectorXd x_hat0, MatrixXd P0,
                              GainForm form = GainForm::Filter);

/// Time update: prediction, Jacobians, innovation covariance and gain.
/// Throws SingularityError if S is not positive definite.
EstimatorState predict(EstimatorState est, const PlantModel& model,
                       const VectorXd& u);

/// Measurement update with the received output y_c.
std::pair<EstimatorState, Residue> update(EstimatorState est,
                                          const PlantModel& model,
                                          const VectorXd& y_c);

struct DifferentiableUpdate {
  ad::Tensor x_hat;  // n x 1
  ad::Tensor g;      // 1 x 1
  ad::Tensor z;      // p x 1
};

/// The measurement update for y_c = y + a recorded on a tape; the gain,
/// prediction and S^-1 of the current step are constants.
DifferentiableUpdate update_differentiable(ad::Tape& tape,
                                           const EstimatorState& est,
                                           const ad::Tensor& y,
                                           const ad::Tensor& a);

/// Chi-square statistic z^T S^-1 z through a Cholesky solve.
template <typename DerivedZ, typename DerivedS>
double detection_statistic(const Eigen::MatrixBase<DerivedZ>& z,
                           const Eigen::MatrixBase<DerivedS>& S) {
  Eigen::LLT<Matrix<typename DerivedS::Scalar>> llt(S);
  if (llt.info() != Eigen::Success) {
    throw SingularityError("innovation covariance is not positive definite");
  }
  return z.dot(llt.solve(z));
}

}  // namespace cpsa
