#pragma once

// Minimal reverse-mode automatic differentiation over dense 2-D tensors.
//
// A Tensor is a cheap handle onto a shared node (value, gradient, flag).
// Operations are free functions that compute the forward value eagerly and
// record a local backward rule on an explicit Tape. Column vectors are
// n x 1 tensors; scalars are 1 x 1. Batched ("columnwise") primitives treat
// each column as an independent sample, which is how the attack objective
// is evaluated over a history window in one pass.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cpsa/types.hpp"

namespace cpsa::ad {

namespace detail {
struct Node {
  MatrixXd value;
  MatrixXd grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool is_leaf = true;
  bool grad_ready = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(MatrixXd value);
  static Tensor parameter(MatrixXd value);
  /// Builds a tensor from a shape ({n} or {rows, cols}) and row-major data.
  static Tensor from_data(const std::vector<Index>& shape,
                          const std::vector<double>& data,
                          bool requires_grad = false);

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const MatrixXd& value() const { return node_->value; }
  /// In-place access for optimizers; never use on a tensor that is already
  /// recorded on a live tape.
  MatrixXd& mutable_value() { return node_->value; }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] bool has_grad() const { return node_->grad_ready; }
  /// Gradient with the tensor's shape; zeros if nothing was accumulated.
  [[nodiscard]] MatrixXd grad() const;
  void zero_grad();

  [[nodiscard]] Index rows() const { return node_->value.rows(); }
  [[nodiscard]] Index cols() const { return node_->value.cols(); }
  [[nodiscard]] std::vector<Index> shape() const { return {rows(), cols()}; }
  [[nodiscard]] double item() const;
  [[nodiscard]] std::vector<double> data() const;  // row-major

  [[nodiscard]] bool same_node(const Tensor& other) const {
    return node_ == other.node_;
  }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Tape;
  friend void accumulate(const Tensor& t, const MatrixXd& delta);
};

/// Adds `delta` into the gradient of `t` if it participates in
/// differentiation. Used by backward rules.
void accumulate(const Tensor& t, const MatrixXd& delta);

class Tape {
 public:
  using BackwardFn = std::function<void(const MatrixXd& upstream)>;

  /// Records a primitive whose output is `value`. The backward rule is kept
  /// only if at least one input requires a gradient.
  Tensor record(MatrixXd value, std::initializer_list<Tensor> inputs,
                BackwardFn backward);
  Tensor record(MatrixXd value, const std::vector<Tensor>& inputs,
                BackwardFn backward);

  /// Reverse sweep from a scalar loss produced on this tape. Leaf
  /// parameters accumulate; every requires_grad leaf seen by the tape is
  /// marked as having a (possibly zero) gradient.
  void backward(const Tensor& loss);

  void clear();
  [[nodiscard]] std::size_t size() const { return records_.size(); }

 private:
  struct Record {
    std::shared_ptr<detail::Node> output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
  std::vector<std::shared_ptr<detail::Node>> leaves_;
};

// ---- primitives -----------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
/// a (m x n) plus a column bias (m x 1) broadcast across columns.
Tensor add_bias(Tape& tape, const Tensor& a, const Tensor& bias);
Tensor scale(Tape& tape, const Tensor& x, double factor);
/// Multiplies row i by mask(i); the mask is a constant.
Tensor mask_rows(Tape& tape, const Tensor& x, const VectorXd& mask);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sum(Tape& tape, const Tensor& x);
/// sum_j w(j) * x(0, j) for a row tensor x.
Tensor weighted_sum(Tape& tape, const Tensor& row, const VectorXd& weights);

/// z^T Sinv z for a column z. Sinv is a constant (no gradient flows into it).
Tensor weighted_quadratic(Tape& tape, const Tensor& z, const MatrixXd& Sinv);
/// sqrt(sum x_i^2 + eps), smooth at the origin.
Tensor smooth_norm(Tape& tape, const Tensor& x, double eps);

using MatrixList = std::shared_ptr<const std::vector<MatrixXd>>;

/// Row vector whose column j is z_j^T Sinv_j z_j.
Tensor columnwise_quadratic(Tape& tape, const Tensor& Z,
                            std::span<const MatrixXd> Sinv);
Tensor columnwise_quadratic(Tape& tape, const Tensor& Z, MatrixList Sinv);
/// Row vector whose column j is sqrt(|x_j|^2 + eps).
Tensor columnwise_smooth_norm(Tape& tape, const Tensor& X, double eps);
/// Column j of the result is M_j * z_j.
Tensor columnwise_linear(Tape& tape, const Tensor& Z,
                         std::span<const MatrixXd> mats);
Tensor columnwise_linear(Tape& tape, const Tensor& Z, MatrixList mats);

using VectorMap = std::function<VectorXd(const VectorXd&)>;
using JacobianMap = std::function<MatrixXd(const VectorXd&)>;
/// Applies a differentiable vector function to each column; the backward
/// rule uses the supplied Jacobian evaluated at that column.
Tensor columnwise_map(Tape& tape, const Tensor& X, const VectorMap& fn,
                      const JacobianMap& jacobian);

Tensor vstack(Tape& tape, const Tensor& top, const Tensor& bottom);
Tensor hstack(Tape& tape, const std::vector<Tensor>& columns);

// ---- optimizers -----------------------------------------------------------

/// theta <- theta - beta * grad, then zero the gradients.
void sgd_step(std::span<Tensor> params, double beta);

/// Adaptive-moment alternative to sgd_step, opt-in via configuration.
class Adam {
 public:
  explicit Adam(double beta, double b1 = 0.9, double b2 = 0.999,
                double eps = 1e-8)
      : lr_(beta), b1_(b1), b2_(b2), eps_(eps) {}
  void step(std::span<Tensor> params);

 private:
  double lr_, b1_, b2_, eps_;
  long steps_ = 0;
  std::vector<MatrixXd> m_, v_;
};

double grad_inf_norm(std::span<const Tensor> params);

}  // namespace cpsa::ad
