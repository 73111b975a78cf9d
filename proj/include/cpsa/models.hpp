#pragma once

// Discrete-time plants x' = f(x, u) + w, y = h(x) + v with additive Gaussian
// noise. PlantModel instances are immutable after construction and can be
// shared across runs; PlantState is owned by a single run.

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cpsa/types.hpp"

namespace cpsa {

using Rng = std::mt19937_64;

/// Zero-mean Gaussian draw with covariance cov; the factor is computed once.
class GaussianSampler {
 public:
  GaussianSampler() = default;
  explicit GaussianSampler(const MatrixXd& cov);
  VectorXd operator()(Rng& rng) const;
  [[nodiscard]] const MatrixXd& factor() const { return factor_; }
  [[nodiscard]] bool is_zero() const { return zero_; }

 private:
  MatrixXd factor_;
  bool zero_ = true;
};

struct PlantState {
  VectorXd x;
  long t = 0;
};

class PlantModel {
 public:
  PlantModel(int n, int m, int p, MatrixXd Q, MatrixXd R, double dt,
             std::optional<double> lipschitz = std::nullopt);
  virtual ~PlantModel() = default;

  [[nodiscard]] virtual std::string id() const = 0;
  /// Noise-free transition f(x, u).
  [[nodiscard]] virtual VectorXd transition(const VectorXd& x,
                                            const VectorXd& u) const = 0;
  /// Noise-free observation h(x).
  [[nodiscard]] virtual VectorXd output(const VectorXd& x) const = 0;
  /// df/dx. Default: central differences with step 1e-6.
  [[nodiscard]] virtual MatrixXd state_jacobian(const VectorXd& x,
                                                const VectorXd& u) const;
  /// dh/dx. Default: central differences with step 1e-6.
  [[nodiscard]] virtual MatrixXd output_jacobian(const VectorXd& x) const;

  /// State coordinates in which the dynamics are translation invariant
  /// (positions), and the output channels that measure them directly.
  /// C when h(x) = C x exactly; lets batched code replace per-sample calls.
  [[nodiscard]] virtual std::optional<MatrixXd> output_matrix() const { return std::nullopt; }
  [[nodiscard]] virtual std::vector<int> translation_states() const { return {}; }
  [[nodiscard]] virtual std::vector<int> translation_outputs() const { return {}; }

  [[nodiscard]] int n() const { return n_; }
  [[nodiscard]] int m() const { return m_; }
  [[nodiscard]] int p() const { return p_; }
  [[nodiscard]] const MatrixXd& Q() const { return Q_; }
  [[nodiscard]] const MatrixXd& R() const { return R_; }
  [[nodiscard]] double dt() const { return dt_; }
  [[nodiscard]] std::optional<double> lipschitz() const { return lipschitz_; }
  [[nodiscard]] const GaussianSampler& process_noise() const { return w_; }
  [[nodiscard]] const GaussianSampler& measurement_noise() const { return v_; }

 private:
  int n_, m_, p_;
  MatrixXd Q_, R_;
  double dt_;
  std::optional<double> lipschitz_;
  GaussianSampler w_, v_;
};

using ModelPtr = std::shared_ptr<const PlantModel>;

/// f(x,u) + w with w ~ N(0, Q); throws NumericError on a non-finite result.
PlantState step(const PlantModel& model, const PlantState& state,
                const VectorXd& u, Rng& rng);
/// h(x) + v with v ~ N(0, R).
VectorXd observe(const PlantModel& model, const PlantState& state, Rng& rng);

struct Linearization {
  MatrixXd A;  // df/dx at (x_lin, u_lin)
  MatrixXd C;  // dh/dx at the predicted state f(x_lin, u_lin)
};
Linearization jacobians(const PlantModel& model, const VectorXd& x_lin,
                        const VectorXd& u_lin);

/// Central-difference Jacobian of a vector function, step h.
MatrixXd finite_difference_jacobian(
    const std::function<VectorXd(const VectorXd&)>& fn, const VectorXd& x,
    double h = 1e-6);

// ---- built-in plants ------------------------------------------------------

struct LtiMatrices {
  MatrixXd A, B, C;
};

class LinearModel final : public PlantModel {
 public:
  LinearModel(LtiMatrices lti, MatrixXd Q, MatrixXd R, double dt = 1.0);
  [[nodiscard]] std::string id() const override { return "lti"; }
  [[nodiscard]] VectorXd transition(const VectorXd& x,
                                    const VectorXd& u) const override;
  [[nodiscard]] VectorXd output(const VectorXd& x) const override;
  [[nodiscard]] MatrixXd state_jacobian(const VectorXd& x,
                                        const VectorXd& u) const override;
  [[nodiscard]] MatrixXd output_jacobian(const VectorXd& x) const override;
  [[nodiscard]] std::optional<MatrixXd> output_matrix() const override { return lti_.C; }
  [[nodiscard]] const LtiMatrices& matrices() const { return lti_; }

 private:
  LtiMatrices lti_;
};

struct BicycleGeometry {
  double lf = 1.25;  // CoM to front axle [m]
  double lr = 1.25;  // CoM to rear axle [m]
};

struct QuadrotorConstants {
  double mass = 0.65;     // kg
  double gravity = 9.81;  // m/s^2
  double Ix = 7.5e-3;     // kg m^2
  double Iy = 7.5e-3;
  double Iz = 1.3e-2;
};

/// Center-of-mass kinematic bicycle. State [x, y, psi, v], input
/// [acceleration, front steering angle], output [x, y].
class BicycleModel final : public PlantModel {
 public:
  using Geometry = BicycleGeometry;
  BicycleModel(MatrixXd Q, MatrixXd R, double dt = 0.05, Geometry g = {});
  [[nodiscard]] std::string id() const override { return "vehicle"; }
  [[nodiscard]] VectorXd transition(const VectorXd& x,
                                    const VectorXd& u) const override;
  [[nodiscard]] VectorXd output(const VectorXd& x) const override;
  [[nodiscard]] MatrixXd state_jacobian(const VectorXd& x,
                                        const VectorXd& u) const override;
  [[nodiscard]] MatrixXd output_jacobian(const VectorXd& x) const override;
  [[nodiscard]] std::optional<MatrixXd> output_matrix() const override {
    return output_jacobian(VectorXd());
  }
  [[nodiscard]] std::vector<int> translation_states() const override { return {0, 1}; }
  [[nodiscard]] std::vector<int> translation_outputs() const override { return {0, 1}; }
  [[nodiscard]] const Geometry& geometry() const { return geo_; }
  /// Body slip angle for a steering angle.
  [[nodiscard]] double slip(double steering) const;

 private:
  Geometry geo_;
};

/// Rigid-body quadrotor, Euler-discretized Newton-Euler equations without
/// rotor dynamics or drag.
/// State  [x, y, z, psi, theta, phi, vx, vy, vz, psi_dot, theta_dot, phi_dot]
/// Input  [thrust, roll torque, pitch torque, yaw torque]
/// Output [x, y, z, psi, theta, phi, psi_dot, theta_dot, phi_dot]
class QuadrotorModel final : public PlantModel {
 public:
  using Constants = QuadrotorConstants;
  enum : int { X, Y, Z, PSI, THETA, PHI, VX, VY, VZ, PSI_D, THETA_D, PHI_D };

  QuadrotorModel(MatrixXd Q, MatrixXd R, double dt = 0.05, Constants c = {});
  [[nodiscard]] std::string id() const override { return "quadrotor"; }
  [[nodiscard]] VectorXd transition(const VectorXd& x,
                                    const VectorXd& u) const override;
  [[nodiscard]] VectorXd output(const VectorXd& x) const override;
  [[nodiscard]] MatrixXd state_jacobian(const VectorXd& x,
                                        const VectorXd& u) const override;
  [[nodiscard]] MatrixXd output_jacobian(const VectorXd& x) const override;
  [[nodiscard]] std::optional<MatrixXd> output_matrix() const override { return selection_; }
  [[nodiscard]] std::vector<int> translation_states() const override { return {0, 1, 2}; }
  [[nodiscard]] std::vector<int> translation_outputs() const override { return {0, 1, 2}; }
  [[nodiscard]] const Constants& constants() const { return c_; }
  [[nodiscard]] double hover_thrust() const { return c_.mass * c_.gravity; }

 private:
  Constants c_;
  MatrixXd selection_;
};

/// Plant defined by user callables; Jacobians by central differences.
class CallableModel final : public PlantModel {
 public:
  using Transition = std::function<VectorXd(const VectorXd&, const VectorXd&)>;
  using Output = std::function<VectorXd(const VectorXd&)>;
  CallableModel(std::string id, int n, int m, int p, Transition f, Output h,
                MatrixXd Q, MatrixXd R, double dt,
                std::optional<double> lipschitz = std::nullopt);
  [[nodiscard]] std::string id() const override { return id_; }
  [[nodiscard]] VectorXd transition(const VectorXd& x,
                                    const VectorXd& u) const override {
    return f_(x, u);
  }
  [[nodiscard]] VectorXd output(const VectorXd& x) const override { return h_(x); }

 private:
  std::string id_;
  Transition f_;
  Output h_;
};

}  // namespace cpsa
