#include "cpsa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cpsa::ad {

namespace {

std::string shape_str(const MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::constant(MatrixXd value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(MatrixXd value) {
  auto node = std::make_shared<detail::Node>();
  node->grad = MatrixXd::Zero(value.rows(), value.cols());
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(const std::vector<Index>& shape,
                         const std::vector<double>& data, bool requires_grad) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("from_data: only 1-D and 2-D shapes are supported");
  }
  const Index rows = shape[0];
  const Index cols = shape.size() == 2 ? shape[1] : 1;
  if (rows <= 0 || cols <= 0) {
    throw DimensionError("from_data: dimensions must be positive");
  }
  if (static_cast<Index>(data.size()) != rows * cols) {
    throw DimensionError("from_data: data length " +
                         std::to_string(data.size()) +
                         " does not match shape product " +
                         std::to_string(rows * cols));
  }
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = data[i * cols + j];
  }
  return requires_grad ? parameter(std::move(m)) : constant(std::move(m));
}

MatrixXd Tensor::grad() const {
  if (node_->grad.size() == 0) return MatrixXd::Zero(rows(), cols());
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.setZero(rows(), cols());
  node_->grad_ready = false;
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) {
    throw DimensionError("item: tensor is " + shape_str(value()) +
                         ", not a scalar");
  }
  return node_->value(0, 0);
}

std::vector<double> Tensor::data() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(value().size()));
  for (Index i = 0; i < rows(); ++i) {
    for (Index j = 0; j < cols(); ++j) out.push_back(value()(i, j));
  }
  return out;
}

void accumulate(const Tensor& t, const MatrixXd& delta) {
  auto& node = *t.node_;
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = delta;
  } else {
    node.grad += delta;
  }
}

// ---- Tape -----------------------------------------------------------------

Tensor Tape::record(MatrixXd value, std::initializer_list<Tensor> inputs,
                    BackwardFn backward) {
  return record(std::move(value), std::vector<Tensor>(inputs),
                std::move(backward));
}

Tensor Tape::record(MatrixXd value, const std::vector<Tensor>& inputs,
                    BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  for (const auto& in : inputs) {
    if (!in.node_->requires_grad) continue;
    node->requires_grad = true;
    if (in.node_->is_leaf) leaves_.push_back(in.node_);
  }
  records_.push_back(
      {node, node->requires_grad ? std::move(backward) : BackwardFn{}});
  return Tensor(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  auto it = std::find_if(records_.rbegin(), records_.rend(),
                         [&](const Record& r) { return r.output == loss.node_; });
  if (it == records_.rend()) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  for (auto& r : records_) r.output->grad.resize(0, 0);
  loss.node_->grad = MatrixXd::Ones(1, 1);
  for (; it != records_.rend(); ++it) {
    if (it->backward && it->output->grad.size() != 0) {
      it->backward(it->output->grad);
    }
  }
  for (auto& leaf : leaves_) {
    if (leaf->grad.size() == 0) {
      leaf->grad = MatrixXd::Zero(leaf->value.rows(), leaf->value.cols());
    }
    leaf->grad_ready = true;
  }
}

void Tape::clear() {
  records_.clear();
  leaves_.clear();
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree (" +
                         shape_str(a.value()) + " x " + shape_str(b.value()) +
                         ")");
  }
  return tape.record(a.value() * b.value(), {a, b},
                     [a, b](const MatrixXd& up) {
                       if (a.requires_grad()) accumulate(a, up * b.value().transpose());
                       if (b.requires_grad()) accumulate(b, a.value().transpose() * up);
                     });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return tape.record(a.value() + b.value(), {a, b},
                     [a, b](const MatrixXd& up) {
                       accumulate(a, up);
                       accumulate(b, up);
                     });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return tape.record(a.value() - b.value(), {a, b},
                     [a, b](const MatrixXd& up) {
                       accumulate(a, up);
                       if (b.requires_grad()) accumulate(b, -up);
                     });
}

Tensor add_bias(Tape& tape, const Tensor& a, const Tensor& bias) {
  if (bias.cols() != 1 || bias.rows() != a.rows()) {
    throw DimensionError("add_bias: bias must be " + std::to_string(a.rows()) +
                         "x1, got " + shape_str(bias.value()));
  }
  MatrixXd out = a.value().colwise() + bias.value().col(0);
  return tape.record(std::move(out), {a, bias},
                     [a, bias](const MatrixXd& up) {
                       accumulate(a, up);
                       if (bias.requires_grad()) accumulate(bias, up.rowwise().sum());
                     });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  return tape.record(x.value() * factor, {x},
                     [x, factor](const MatrixXd& up) { accumulate(x, up * factor); });
}

Tensor mask_rows(Tape& tape, const Tensor& x, const VectorXd& mask) {
  if (mask.size() != x.rows()) {
    throw DimensionError("mask_rows: mask length does not match rows");
  }
  MatrixXd out = mask.asDiagonal() * x.value();
  return tape.record(std::move(out), {x}, [x, mask](const MatrixXd& up) {
    accumulate(x, mask.asDiagonal() * up);
  });
}

Tensor relu(Tape& tape, const Tensor& x) {
  MatrixXd out = x.value().cwiseMax(0.0);
  return tape.record(std::move(out), {x}, [x](const MatrixXd& up) {
    // Subgradient at exactly zero is zero.
    accumulate(x, MatrixXd((x.value().array() > 0.0).select(up.array(), 0.0)));
  });
}

Tensor sum(Tape& tape, const Tensor& x) {
  MatrixXd out(1, 1);
  out(0, 0) = x.value().sum();
  return tape.record(std::move(out), {x}, [x](const MatrixXd& up) {
    accumulate(x, MatrixXd::Constant(x.rows(), x.cols(), up(0, 0)));
  });
}

Tensor weighted_sum(Tape& tape, const Tensor& row, const VectorXd& weights) {
  if (row.rows() != 1 || row.cols() != weights.size()) {
    throw DimensionError("weighted_sum: expected 1x" +
                         std::to_string(weights.size()) + " row, got " +
                         shape_str(row.value()));
  }
  MatrixXd out(1, 1);
  out(0, 0) = row.value().row(0).dot(weights);
  return tape.record(std::move(out), {row}, [row, weights](const MatrixXd& up) {
    accumulate(row, up(0, 0) * weights.transpose());
  });
}

Tensor weighted_quadratic(Tape& tape, const Tensor& z, const MatrixXd& Sinv) {
  if (Sinv.rows() != Sinv.cols()) {
    throw DimensionError("weighted_quadratic: Sinv must be square, got " +
                         shape_str(Sinv));
  }
  if (z.cols() != 1 || z.rows() != Sinv.rows()) {
    throw DimensionError("weighted_quadratic: z is " + shape_str(z.value()) +
                         ", Sinv is " + shape_str(Sinv));
  }
  MatrixXd out(1, 1);
  out(0, 0) = (z.value().transpose() * Sinv * z.value())(0, 0);
  return tape.record(std::move(out), {z}, [z, Sinv](const MatrixXd& up) {
    // Symmetrized so the rule stays exact if Sinv carries rounding asymmetry.
    accumulate(z, up(0, 0) * (Sinv + Sinv.transpose()) * z.value());
  });
}

Tensor smooth_norm(Tape& tape, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw InputError("smooth_norm: eps must be positive");
  const double n = std::sqrt(x.value().squaredNorm() + eps);
  MatrixXd out(1, 1);
  out(0, 0) = n;
  return tape.record(std::move(out), {x}, [x, n](const MatrixXd& up) {
    accumulate(x, (up(0, 0) / n) * x.value());
  });
}

Tensor columnwise_quadratic(Tape& tape, const Tensor& Z,
                            std::span<const MatrixXd> Sinv) {
  return columnwise_quadratic(
      tape, Z, std::make_shared<const std::vector<MatrixXd>>(Sinv.begin(), Sinv.end()));
}

Tensor columnwise_quadratic(Tape& tape, const Tensor& Z, MatrixList Sinv) {
  if (!Sinv || static_cast<Index>(Sinv->size()) != Z.cols()) {
    throw DimensionError("columnwise_quadratic: need one weight per column");
  }
  const MatrixXd& z = Z.value();
  MatrixXd wz(z.rows(), z.cols());
  for (Index j = 0; j < z.cols(); ++j) {
    const auto& W = (*Sinv)[static_cast<std::size_t>(j)];
    if (W.rows() != z.rows() || W.cols() != z.rows()) {
      throw DimensionError("columnwise_quadratic: weight " + std::to_string(j) +
                           " is " + shape_str(W));
    }
    wz.col(j).noalias() = W * z.col(j);
  }
  MatrixXd out = z.cwiseProduct(wz).colwise().sum();
  return tape.record(std::move(out), {Z}, [Z, Sinv](const MatrixXd& up) {
    const MatrixXd& z = Z.value();
    MatrixXd g(z.rows(), z.cols());
    for (Index j = 0; j < z.cols(); ++j) {
      const auto& W = (*Sinv)[static_cast<std::size_t>(j)];
      g.col(j).noalias() = W * z.col(j);
      g.col(j).noalias() += W.transpose() * z.col(j);
      g.col(j) *= up(0, j);
    }
    accumulate(Z, g);
  });
}

Tensor columnwise_smooth_norm(Tape& tape, const Tensor& X, double eps) {
  if (!(eps > 0.0)) throw InputError("smooth_norm: eps must be positive");
  const Eigen::RowVectorXd norms =
      (X.value().colwise().squaredNorm().array() + eps).sqrt().matrix();
  MatrixXd out = norms;
  return tape.record(std::move(out), {X}, [X, norms](const MatrixXd& up) {
    const Eigen::RowVectorXd factor = up.row(0).array() / norms.array();
    accumulate(X, X.value() * factor.asDiagonal());
  });
}

Tensor columnwise_linear(Tape& tape, const Tensor& Z,
                         std::span<const MatrixXd> mats) {
  return columnwise_linear(
      tape, Z, std::make_shared<const std::vector<MatrixXd>>(mats.begin(), mats.end()));
}

Tensor columnwise_linear(Tape& tape, const Tensor& Z, MatrixList mats) {
  if (!mats || static_cast<Index>(mats->size()) != Z.cols() || mats->empty()) {
    throw DimensionError("columnwise_linear: need one matrix per column");
  }
  const Index out_rows = mats->front().rows();
  MatrixXd out(out_rows, Z.cols());
  for (Index j = 0; j < Z.cols(); ++j) {
    const auto& M = (*mats)[static_cast<std::size_t>(j)];
    if (M.cols() != Z.rows() || M.rows() != out_rows) {
      throw DimensionError("columnwise_linear: matrix " + std::to_string(j) +
                           " is " + shape_str(M));
    }
    out.col(j).noalias() = M * Z.value().col(j);
  }
  return tape.record(std::move(out), {Z}, [Z, mats](const MatrixXd& up) {
    MatrixXd g(Z.rows(), Z.cols());
    for (Index j = 0; j < Z.cols(); ++j) {
      g.col(j).noalias() = (*mats)[static_cast<std::size_t>(j)].transpose() * up.col(j);
    }
    accumulate(Z, g);
  });
}

Tensor columnwise_map(Tape& tape, const Tensor& X, const VectorMap& fn,
                      const JacobianMap& jacobian) {
  MatrixXd out;
  for (Index j = 0; j < X.cols(); ++j) {
    VectorXd yj = fn(X.value().col(j));
    if (j == 0) out.resize(yj.size(), X.cols());
    out.col(j) = yj;
  }
  return tape.record(std::move(out), {X}, [X, jacobian](const MatrixXd& up) {
    MatrixXd g(X.rows(), X.cols());
    for (Index j = 0; j < X.cols(); ++j) {
      g.col(j) = jacobian(X.value().col(j)).transpose() * up.col(j);
    }
    accumulate(X, g);
  });
}

Tensor vstack(Tape& tape, const Tensor& top, const Tensor& bottom) {
  if (top.cols() != bottom.cols()) {
    throw DimensionError("vstack: column counts differ");
  }
  MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out << top.value(), bottom.value();
  const Index split = top.rows();
  return tape.record(std::move(out), {top, bottom},
                     [top, bottom, split](const MatrixXd& up) {
                       if (top.requires_grad()) accumulate(top, up.topRows(split));
                       if (bottom.requires_grad())
                         accumulate(bottom, up.bottomRows(up.rows() - split));
                     });
}

Tensor hstack(Tape& tape, const std::vector<Tensor>& columns) {
  if (columns.empty()) throw DimensionError("hstack: no inputs");
  const Index rows = columns.front().rows();
  Index total = 0;
  for (const auto& c : columns) {
    if (c.rows() != rows) throw DimensionError("hstack: row counts differ");
    total += c.cols();
  }
  MatrixXd out(rows, total);
  Index offset = 0;
  for (const auto& c : columns) {
    out.middleCols(offset, c.cols()) = c.value();
    offset += c.cols();
  }
  return tape.record(std::move(out), columns, [columns](const MatrixXd& up) {
    Index off = 0;
    for (const auto& c : columns) {
      if (c.requires_grad()) accumulate(c, up.middleCols(off, c.cols()));
      off += c.cols();
    }
  });
}

// ---- optimizers -----------------------------------------------------------

void sgd_step(std::span<Tensor> params, double beta) {
  if (!(beta > 0.0)) throw ContractError("sgd_step: beta must be positive");
  for (const auto& p : params) {
    if (!p.requires_grad() || !p.has_grad()) {
      throw ContractError("sgd_step: parameter has no populated gradient");
    }
  }
  for (auto& p : params) {
    p.mutable_value() -= beta * p.grad();
    p.zero_grad();
  }
}

void Adam::step(std::span<Tensor> params) {
  for (const auto& p : params) {
    if (!p.requires_grad() || !p.has_grad()) {
      throw ContractError("Adam::step: parameter has no populated gradient");
    }
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(MatrixXd::Zero(p.rows(), p.cols()));
      v_.push_back(MatrixXd::Zero(p.rows(), p.cols()));
    }
  }
  if (m_.size() != params.size()) {
    throw ContractError("Adam::step: parameter set changed between steps");
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const MatrixXd g = params[i].grad();
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    params[i].mutable_value().array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    params[i].zero_grad();
  }
}

double grad_inf_norm(std::span<const Tensor> params) {
  double m = 0.0;
  for (const auto& p : params) {
    if (p.requires_grad()) m = std::max(m, p.grad().cwiseAbs().maxCoeff());
  }
  return m;
}

}  // namespace cpsa::ad
