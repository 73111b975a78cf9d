#pragma once

// Chi-square residue detector: threshold calibration, alarms, empirical
// alarm rates and the output-error to state-error bound.

#include <cstddef>
#include <span>
#include <vector>

#include "cpsa/types.hpp"

namespace cpsa {

/// P(X <= q) for X ~ chi2(dof).
double chi2_cdf(double q, int dof);

/// q with P(X <= q) = prob for X ~ chi2(dof).
double chi2_quantile(double prob, int dof);

struct DetectorConfig {
  double epsilon = 0.05;
  double eta = 0.0;
  int dof = 1;

  /// eta = chi2_quantile(1 - epsilon, dof).
  static DetectorConfig calibrate(double epsilon, int dof);
};

/// Alarm iff g > eta (strict).
inline bool evaluate(const DetectorConfig& det, double g) { return g > det.eta; }

struct AlarmTrace {
  std::vector<double> g_values;
  std::vector<bool> alarms;
  double alarm_rate = 0.0;

  static AlarmTrace from_values(const DetectorConfig& det,
                                std::vector<double> g_values);
};

/// Fraction of alarmed steps in [begin, end) of the trace.
double empirical_alarm_rate(const AlarmTrace& trace, std::size_t begin,
                            std::size_t end);
double empirical_alarm_rate(std::span<const double> g_values, double eta);

/// One-sided 95% binomial allowance above epsilon for a window of n samples.
double stealth_allowance(double epsilon, std::size_t n);

struct OutputErrorBound {
  double state_error_bound = 0.0;
  double confidence = 0.0;
};

/// If ||y - h(x_hat)|| >= alpha then ||x - x_hat|| >= (alpha - sqrt(sigma) k)/L
/// with probability at least 1 - p/k^2, for R <= sigma I and k < alpha/sigma.
OutputErrorBound theorem2_bound(double alpha, double sigma, double k, double L,
                                int p_dof);

}  // namespace cpsa
