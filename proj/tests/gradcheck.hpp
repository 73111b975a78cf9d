#pragma once

// Finite-difference checks for every autodiff primitive and for the full
// cumulative attack objective. Shared by the unit tests and the acceptance
// runner.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cpsa/attack.hpp"
#include "cpsa/autodiff.hpp"
#include "cpsa/estimation.hpp"
#include "cpsa/models.hpp"
#include "cpsa/nn.hpp"
#include "oracles.hpp"

namespace gradcheck {

using cpsa::MatrixXd;
using cpsa::VectorXd;
using cpsa::ad::Tape;
using cpsa::ad::Tensor;

/// Builds a primitive's output from its inputs on the given tape.
using Build = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;
/// Draws fresh inputs for one trial.
using Draw = std::function<std::vector<MatrixXd>(std::mt19937_64&)>;

struct PrimitiveCase {
  std::string name;
  Draw draw;
  Build build;
  // Only the first `differentiable` inputs carry gradients; the rest are
  // constants of the primitive (S^-1, per-column matrices). -1 means all.
  int differentiable = -1;
};

/// Scalar readout sum_ij U_ij out_ij built from library ops.
inline Tensor contract(Tape& tape, const Tensor& out, const MatrixXd& U) {
  Tensor total;
  for (cpsa::Index i = 0; i < out.rows(); ++i) {
    const Tensor row = cpsa::ad::matmul(
        tape, Tensor::constant(VectorXd::Unit(out.rows(), i).transpose()), out);
    const Tensor part = cpsa::ad::weighted_sum(tape, row, U.row(i).transpose());
    total = total.defined() ? cpsa::ad::add(tape, total, part) : part;
  }
  return total;
}

/// Worst relative error between backward() and central differences over
/// `trials` random draws.
inline double primitive_error(const PrimitiveCase& pc, int trials,
                              std::mt19937_64& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const auto values = pc.draw(rng);
    const std::size_t n_diff =
        pc.differentiable < 0 ? values.size() : static_cast<std::size_t>(pc.differentiable);
    std::vector<Tensor> inputs;
    for (std::size_t k = 0; k < values.size(); ++k) {
      inputs.push_back(k < n_diff ? Tensor::parameter(values[k])
                                  : Tensor::constant(values[k]));
    }
    Tape tape;
    const Tensor out = pc.build(tape, inputs);
    const MatrixXd U = oracle::uniform(out.rows(), out.cols(), rng);
    tape.backward(contract(tape, out, U));
    for (std::size_t k = 0; k < n_diff; ++k) {
      const MatrixXd numeric = oracle::numeric_gradient(
          [&](const MatrixXd& x) {
            std::vector<Tensor> probe;
            for (std::size_t q = 0; q < values.size(); ++q) {
              probe.push_back(Tensor::constant(q == k ? x : values[q]));
            }
            Tape t;
            return pc.build(t, probe).value().cwiseProduct(U).sum();
          },
          values[k]);
      worst = std::max(worst, oracle::rel_error(inputs[k].grad(), numeric));
    }
  }
  return worst;
}

inline std::vector<PrimitiveCase> primitive_cases() {
  namespace ad = cpsa::ad;
  using oracle::uniform;
  std::vector<PrimitiveCase> cases;
  auto shapes = [](std::vector<std::pair<int, int>> dims) {
    return [dims](std::mt19937_64& rng) {
      std::vector<MatrixXd> v;
      for (auto [r, c] : dims) v.push_back(uniform(r, c, rng));
      return v;
    };
  };
  cases.push_back({"matmul", shapes({{3, 4}, {4, 2}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::matmul(t, in[0], in[1]);
                   }});
  cases.push_back({"add", shapes({{3, 2}, {3, 2}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::add(t, in[0], in[1]);
                   }});
  cases.push_back({"sub", shapes({{3, 2}, {3, 2}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::sub(t, in[0], in[1]);
                   }});
  cases.push_back({"add_bias", shapes({{4, 3}, {4, 1}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::add_bias(t, in[0], in[1]);
                   }});
  cases.push_back({"scale", shapes({{3, 3}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::scale(t, in[0], -0.7);
                   }});
  cases.push_back({"mask_rows", shapes({{3, 2}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::mask_rows(t, in[0], Eigen::Vector3d(1.0, 0.0, 1.0));
                   }});
  cases.push_back({"relu", shapes({{5, 3}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::relu(t, in[0]);
                   }});
  cases.push_back({"sum", shapes({{3, 4}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::sum(t, in[0]);
                   }});
  cases.push_back({"weighted_sum", shapes({{1, 5}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     VectorXd w(5);
                     w << 0.5, -1.0, 2.0, 0.1, 3.0;
                     return ad::weighted_sum(t, in[0], w);
                   }});
  cases.push_back({"weighted_quadratic",
                   [](std::mt19937_64& rng) {
                     return std::vector<MatrixXd>{uniform(3, 1, rng),
                                                  oracle::random_spd(3, rng)};
                   },
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::weighted_quadratic(t, in[0], in[1].value());
                   },
                   1});
  cases.push_back({"smooth_norm", shapes({{4, 1}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::smooth_norm(t, in[0], 1e-12);
                   }});
  cases.push_back({"columnwise_quadratic",
                   [](std::mt19937_64& rng) {
                     std::vector<MatrixXd> v{uniform(2, 4, rng)};
                     for (int j = 0; j < 4; ++j) v.push_back(oracle::random_spd(2, rng));
                     return v;
                   },
                   [](Tape& t, const std::vector<Tensor>& in) {
                     std::vector<MatrixXd> w;
                     for (std::size_t j = 1; j < in.size(); ++j) w.push_back(in[j].value());
                     return ad::columnwise_quadratic(t, in[0], std::span<const MatrixXd>(w));
                   },
                   1});
  cases.push_back({"columnwise_smooth_norm", shapes({{3, 4}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::columnwise_smooth_norm(t, in[0], 1e-12);
                   }});
  cases.push_back({"columnwise_linear",
                   [](std::mt19937_64& rng) {
                     std::vector<MatrixXd> v{uniform(2, 3, rng)};
                     for (int j = 0; j < 3; ++j) v.push_back(uniform(4, 2, rng));
                     return v;
                   },
                   [](Tape& t, const std::vector<Tensor>& in) {
                     std::vector<MatrixXd> m;
                     for (std::size_t j = 1; j < in.size(); ++j) m.push_back(in[j].value());
                     return ad::columnwise_linear(t, in[0], std::span<const MatrixXd>(m));
                   },
                   1});
  cases.push_back({"columnwise_map", shapes({{2, 3}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     // (sin x0 * x1, x0^2, exp(x1))
                     auto fn = [](const VectorXd& x) {
                       VectorXd o(3);
                       o << std::sin(x(0)) * x(1), x(0) * x(0), std::exp(x(1));
                       return o;
                     };
                     auto jac = [](const VectorXd& x) {
                       MatrixXd j(3, 2);
                       j << std::cos(x(0)) * x(1), std::sin(x(0)), 2.0 * x(0), 0.0, 0.0,
                           std::exp(x(1));
                       return j;
                     };
                     return ad::columnwise_map(t, in[0], fn, jac);
                   }});
  cases.push_back({"vstack", shapes({{2, 3}, {1, 3}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::vstack(t, in[0], in[1]);
                   }});
  cases.push_back({"hstack", shapes({{3, 1}, {3, 2}, {3, 1}}),
                   [](Tape& t, const std::vector<Tensor>& in) {
                     return ad::hstack(t, in);
                   }});
  cases.push_back({"recurrent_unroll",
                   [](std::mt19937_64& rng) {
                     // layer weights/biases of a 5-4-3 net, then features (2 x 6)
                     return std::vector<MatrixXd>{uniform(4, 5, rng), uniform(4, 1, rng),
                                                  uniform(3, 4, rng), uniform(3, 1, rng),
                                                  uniform(2, 6, rng)};
                   },
                   [](Tape& t, const std::vector<Tensor>& in) {
                     cpsa::ad::Mlp net = cpsa::ad::Mlp::zeros({5, 4, 3});
                     net.weights()[0] = in[0];
                     net.biases()[0] = in[1];
                     net.weights()[1] = in[2];
                     net.biases()[1] = in[3];
                     return net.unroll(t, in[4].value(), VectorXd::Zero(3));
                   },
                   4});
  return cases;
}

// ---- composed objective ---------------------------------------------------

/// A short vehicle history produced by a real predict step at random states.
inline std::vector<cpsa::HistoryEntry> random_vehicle_history(
    const cpsa::PlantModel& model, int steps, std::mt19937_64& rng) {
  std::vector<cpsa::HistoryEntry> h;
  std::normal_distribution<double> n01(0.0, 1.0);
  VectorXd x_hat(4);
  x_hat << 10.0 * n01(rng), n01(rng), 0.2 * n01(rng), 10.0 + n01(rng);
  VectorXd y_prev = model.output(x_hat);
  cpsa::EstimatorState est =
      cpsa::make_estimator(x_hat, MatrixXd::Identity(4, 4) + 0.1 * oracle::random_spd(4, rng));
  for (int j = 0; j < steps; ++j) {
    VectorXd u(2);
    u << 0.5 * n01(rng), 0.1 * n01(rng);
    const VectorXd prev = est.x_hat;
    est = cpsa::predict(est, model, u);
    VectorXd y = est.y_pred;
    y(0) += 0.3 * n01(rng);
    y(1) += 0.3 * n01(rng);
    h.push_back(cpsa::make_history_entry(est, y, prev, y_prev));
    est = cpsa::update(est, model, y).first;
    y_prev = y;
  }
  return h;
}

/// Relative error of dJ'/dtheta for both generator kinds on random vehicle
/// histories, against central differences over every parameter entry.
inline double composed_objective_error(int trials, int steps, std::mt19937_64& rng,
                                       bool dfnn) {
  const auto model = std::make_shared<cpsa::BicycleModel>(
      0.001 * MatrixXd::Identity(4, 4), 0.01 * MatrixXd::Identity(2, 2));
  cpsa::TrainingConfig cfg;
  cfg.delta = 0.2;
  cfg.lambda = 0.05;
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const auto hist = random_vehicle_history(*model, steps, rng);
    const auto support = cpsa::SensorSupport::all(2);
    std::vector<Tensor> params;
    std::function<double()> value;
    std::function<Tensor(Tape&)> objective;
    cpsa::FnnGenerator fnn;
    cpsa::DfnnGenerator dg;
    if (dfnn) {
      dg = cpsa::DfnnGenerator::create(*model, {6, 5}, 3, support,
                                       cpsa::InputFrame::Relative, rng, 0.5);
      params = dg.parameters();
      objective = [&](Tape& t) { return cpsa::dfnn_objective(t, dg, *model, hist, cfg).total; };
    } else {
      fnn = cpsa::FnnGenerator::create(*model, {6, 5}, support,
                                       cpsa::InputFrame::Relative, rng, 0.5);
      params = fnn.parameters();
      objective = [&](Tape& t) { return cpsa::fnn_objective(t, fnn, *model, hist, cfg).total; };
    }
    Tape tape;
    tape.backward(objective(tape));
    for (auto& p : params) {
      const MatrixXd analytic = p.grad();
      const MatrixXd base = p.value();
      const MatrixXd numeric = oracle::numeric_gradient(
          [&](const MatrixXd& x) {
            p.mutable_value() = x;
            Tape t;
            const double v = objective(t).item();
            p.mutable_value() = base;
            return v;
          },
          base);
      worst = std::max(worst, oracle::rel_error(analytic, numeric));
      p.zero_grad();
    }
  }
  return worst;
}

}  // namespace gradcheck
