#include "cpsa/estimation.hpp"

namespace cpsa {

namespace {

void symmetrize(MatrixXd& P) { P = (0.5 * (P + P.transpose())).eval(); }

}  // namespace

EstimatorState make_estimator(VectorXd x_hat0, MatrixXd P0, GainForm form) {
  if (P0.rows() != x_hat0.size() || P0.cols() != x_hat0.size()) {
    throw DimensionError("make_estimator: P0 does not match the state size");
  }
  EstimatorState est;
  est.x_hat = std::move(x_hat0);
  est.P = std::move(P0);
  est.form = form;
  return est;
}

EstimatorState predict(EstimatorState est, const PlantModel& model,
                       const VectorXd& u) {
  if (!u.allFinite()) throw InputError("predict: input is not finite");
  if (est.x_hat.size() != model.n()) {
    throw DimensionError("predict: estimate does not match the model");
  }
  est.A = model.state_jacobian(est.x_hat, u);
  est.x_pred = model.transition(est.x_hat, u);
  if (est.form == GainForm::Filter) {
    est.P = est.A * est.P * est.A.transpose() + model.Q();
    symmetrize(est.P);
  }
  est.C = model.output_jacobian(est.x_pred);
  est.y_pred = model.output(est.x_pred);
  est.S = est.C * est.P * est.C.transpose() + model.R();
  symmetrize(est.S);

  Eigen::LLT<MatrixXd> llt(est.S);
  if (llt.info() != Eigen::Success) {
    throw SingularityError("predict: innovation covariance S is singular at t=" +
                           std::to_string(est.t + 1));
  }
  est.S_inv = llt.solve(MatrixXd::Identity(model.p(), model.p()));
  symmetrize(est.S_inv);

  const MatrixXd PCt = est.P * est.C.transpose();
  if (est.form == GainForm::Filter) {
    est.L_gain = PCt * est.S_inv;
  } else {
    est.L_gain = est.A * PCt * est.S_inv;
    est.P_next = est.A * est.P * est.A.transpose() + model.Q() -
                 est.L_gain * est.S * est.L_gain.transpose();
    symmetrize(est.P_next);
  }
  est.t += 1;
  est.predicted = true;
  return est;
}

std::pair<EstimatorState, Residue> update(EstimatorState est,
                                          const PlantModel& model,
                                          const VectorXd& y_c) {
  if (!est.predicted) throw ContractError("update: predict was not called this step");
  if (y_c.size() != model.p()) throw DimensionError("update: output has wrong size");
  if (!y_c.allFinite()) throw InputError("update: received output is not finite");

  Residue r;
  r.z = y_c - est.y_pred;
  r.S = est.S;
  r.g = r.z.dot(est.S_inv * r.z);
  est.x_hat = est.x_pred + est.L_gain * r.z;

  if (est.form == GainForm::Filter) {
    const Index n = est.x_hat.size();
    const MatrixXd IKC = MatrixXd::Identity(n, n) - est.L_gain * est.C;
    est.P = IKC * est.P * IKC.transpose() +
            est.L_gain * model.R() * est.L_gain.transpose();
  } else {
    est.P = est.P_next;
  }
  symmetrize(est.P);
  est.predicted = false;
  return {std::move(est), std::move(r)};
}

DifferentiableUpdate update_differentiable(ad::Tape& tape,
                                           const EstimatorState& est,
                                           const ad::Tensor& y,
                                           const ad::Tensor& a) {
  if (!est.predicted) {
    throw ContractError("update_differentiable: predict was not called this step");
  }
  using ad::Tensor;
  const Tensor y_c = ad::add(tape, y, a);
  if (!y_c.value().allFinite()) {
    throw InputError("update_differentiable: received output is not finite");
  }
  const Tensor z = ad::sub(tape, y_c, Tensor::constant(est.y_pred));
  const Tensor correction = ad::matmul(tape, Tensor::constant(est.L_gain), z);
  const Tensor x_hat = ad::add(tape, Tensor::constant(est.x_pred), correction);
  const Tensor g = ad::weighted_quadratic(tape, z, est.S_inv);
  return {x_hat, g, z};
}

}  // namespace cpsa
