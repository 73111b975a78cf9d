#pragma once

#include <random>
#include <vector>

#include "cpsa/autodiff.hpp"

namespace cpsa::ad {

/// Fully connected stack: ReLU on every hidden layer, linear output layer.
/// Weights are (out x in), biases (out x 1); inputs are columns.
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {in, hidden..., out}. Entries drawn uniform in [-s, s] with
  /// s = init_scale * sqrt(1 / fan_in).
  Mlp(const std::vector<int>& sizes, std::mt19937_64& rng,
      double init_scale = 1.0);
  /// All-zero network of the given shape.
  static Mlp zeros(const std::vector<int>& sizes);

  Tensor forward(Tape& tape, const Tensor& input) const;
  /// Recurrent unroll r_j = net([features_j; r_{j-1}]) from r_{-1} = r0,
  /// recorded as one tape node with truncation-free backpropagation through
  /// time. Returns the latents as columns (out x N).
  Tensor unroll(Tape& tape, const MatrixXd& features, const VectorXd& r0) const;
  /// Tape-free evaluation for rollouts.
  [[nodiscard]] MatrixXd evaluate(const MatrixXd& input) const;

  [[nodiscard]] std::vector<int> sizes() const;
  [[nodiscard]] int input_dim() const;
  [[nodiscard]] int output_dim() const;
  [[nodiscard]] std::size_t layer_count() const { return weights_.size(); }

  std::vector<Tensor>& weights() { return weights_; }
  std::vector<Tensor>& biases() { return biases_; }
  [[nodiscard]] const std::vector<Tensor>& weights() const { return weights_; }
  [[nodiscard]] const std::vector<Tensor>& biases() const { return biases_; }

  /// Weights and biases interleaved per layer.
  [[nodiscard]] std::vector<Tensor> parameters() const;
  [[nodiscard]] Mlp clone() const;

 private:
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

}  // namespace cpsa::ad
