#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace cpsa {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Error taxonomy. Each maps onto one failure class of the toolkit; the CLI
// turns ConfigError into exit code 1 and everything else into exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct SingularityError : NumericError {
  using NumericError::NumericError;
};
struct TrainingError : NumericError {
  using NumericError::NumericError;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace cpsa
