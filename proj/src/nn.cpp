#include "cpsa/nn.hpp"

#include <cmath>

namespace cpsa::ad {

Mlp::Mlp(const std::vector<int>& sizes, std::mt19937_64& rng,
         double init_scale) {
  if (sizes.size() < 2) throw DimensionError("Mlp: need at least in/out sizes");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    if (fan_in <= 0 || fan_out <= 0) {
      throw DimensionError("Mlp: layer sizes must be positive");
    }
    const double s = init_scale * std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> dist(-s, s);
    MatrixXd w(fan_out, fan_in);
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
    MatrixXd b(fan_out, 1);
    for (Index i = 0; i < b.rows(); ++i) b(i, 0) = dist(rng);
    weights_.push_back(Tensor::parameter(std::move(w)));
    biases_.push_back(Tensor::parameter(std::move(b)));
  }
}

Mlp Mlp::zeros(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw DimensionError("Mlp: need at least in/out sizes");
  Mlp net;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    net.weights_.push_back(Tensor::parameter(MatrixXd::Zero(sizes[l + 1], sizes[l])));
    net.biases_.push_back(Tensor::parameter(MatrixXd::Zero(sizes[l + 1], 1)));
  }
  return net;
}

Tensor Mlp::forward(Tape& tape, const Tensor& input) const {
  if (input.rows() != input_dim()) {
    throw DimensionError("Mlp::forward: expected " + std::to_string(input_dim()) +
                         " input rows, got " + std::to_string(input.rows()));
  }
  Tensor h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = add_bias(tape, matmul(tape, weights_[l], h), biases_[l]);
    if (l + 1 < weights_.size()) h = relu(tape, h);
  }
  return h;
}

Tensor Mlp::unroll(Tape& tape, const MatrixXd& features, const VectorXd& r0) const {
  const Index latent = output_dim();
  if (r0.size() != latent || features.rows() + latent != input_dim()) {
    throw DimensionError("Mlp::unroll: features (" + std::to_string(features.rows()) +
                         ") plus latent (" + std::to_string(r0.size()) +
                         ") must match input " + std::to_string(input_dim()));
  }
  const std::size_t L = weights_.size();
  const Index N = features.cols();
  // acts[l] holds the input to layer l for every column.
  auto acts = std::make_shared<std::vector<MatrixXd>>(L);
  for (std::size_t l = 0; l < L; ++l) (*acts)[l].resize(weights_[l].cols(), N);
  MatrixXd R(latent, N);
  VectorXd r = r0;
  VectorXd h, next;
  for (Index j = 0; j < N; ++j) {
    (*acts)[0].col(j) << features.col(j), r;
    for (std::size_t l = 0; l < L; ++l) {
      next.noalias() = weights_[l].value() * (*acts)[l].col(j);
      next += biases_[l].value().col(0);
      if (l + 1 < L) {
        (*acts)[l + 1].col(j) = next.cwiseMax(0.0);
      } else {
        r = next;
      }
    }
    R.col(j) = r;
  }
  std::vector<Tensor> inputs = parameters();
  return tape.record(std::move(R), inputs,
                     [w = weights_, b = biases_, acts, latent](const MatrixXd& up) {
    const std::size_t L = w.size();
    const Index N = up.cols();
    std::vector<MatrixXd> deltas(L);
    for (std::size_t l = 0; l < L; ++l) deltas[l].resize(w[l].rows(), N);
    VectorXd carry = VectorXd::Zero(latent);
    VectorXd d, dh;
    for (Index j = N - 1; j >= 0; --j) {
      d = up.col(j) + carry;
      for (std::size_t l = L; l-- > 0;) {
        deltas[l].col(j) = d;
        dh.noalias() = w[l].value().transpose() * d;
        if (l > 0) {
          d = dh.cwiseProduct(((*acts)[l].col(j).array() > 0.0).cast<double>().matrix());
        } else {
          carry = dh.tail(latent);
        }
      }
    }
    for (std::size_t l = 0; l < L; ++l) {
      if (w[l].requires_grad()) accumulate(w[l], deltas[l] * (*acts)[l].transpose());
      if (b[l].requires_grad()) accumulate(b[l], deltas[l].rowwise().sum());
    }
  });
}

MatrixXd Mlp::evaluate(const MatrixXd& input) const {
  if (input.rows() != input_dim()) {
    throw DimensionError("Mlp::evaluate: expected " + std::to_string(input_dim()) +
                         " input rows, got " + std::to_string(input.rows()));
  }
  MatrixXd h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    MatrixXd next = weights_[l].value() * h;
    next.colwise() += biases_[l].value().col(0);
    if (l + 1 < weights_.size()) next = next.cwiseMax(0.0);
    h = std::move(next);
  }
  return h;
}

std::vector<int> Mlp::sizes() const {
  std::vector<int> s;
  if (weights_.empty()) return s;
  s.push_back(static_cast<int>(weights_.front().cols()));
  for (const auto& w : weights_) s.push_back(static_cast<int>(w.rows()));
  return s;
}

int Mlp::input_dim() const {
  return weights_.empty() ? 0 : static_cast<int>(weights_.front().cols());
}

int Mlp::output_dim() const {
  return weights_.empty() ? 0 : static_cast<int>(weights_.back().rows());
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> p;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    p.push_back(weights_[l]);
    p.push_back(biases_[l]);
  }
  return p;
}

Mlp Mlp::clone() const {
  Mlp out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.weights_.push_back(Tensor::parameter(weights_[l].value()));
    out.biases_.push_back(Tensor::parameter(biases_[l].value()));
  }
  return out;
}

}  // namespace cpsa::ad
