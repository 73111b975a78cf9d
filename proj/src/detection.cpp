#include "cpsa/detection.hpp"

#include <cmath>

#include <boost/math/special_functions/gamma.hpp>

namespace cpsa {

double chi2_cdf(double q, int dof) {
  if (dof <= 0) throw InputError("chi2_cdf: dof must be positive");
  if (q <= 0.0) return 0.0;
  return boost::math::gamma_p(0.5 * dof, 0.5 * q);
}

double chi2_quantile(double prob, int dof) {
  if (!(prob > 0.0 && prob < 1.0)) {
    throw InputError("chi2_quantile: probability must lie in (0, 1)");
  }
  if (dof <= 0) throw InputError("chi2_quantile: dof must be positive");
  return 2.0 * boost::math::gamma_p_inv(0.5 * dof, prob);
}

DetectorConfig DetectorConfig::calibrate(double epsilon, int dof) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw InputError("detector epsilon must lie in (0, 1)");
  }
  return {epsilon, chi2_quantile(1.0 - epsilon, dof), dof};
}

AlarmTrace AlarmTrace::from_values(const DetectorConfig& det,
                                   std::vector<double> g_values) {
  AlarmTrace trace;
  trace.alarms.reserve(g_values.size());
  std::size_t count = 0;
  for (double g : g_values) {
    const bool alarm = evaluate(det, g);
    trace.alarms.push_back(alarm);
    count += alarm ? 1 : 0;
  }
  trace.alarm_rate =
      g_values.empty() ? 0.0 : static_cast<double>(count) / g_values.size();
  trace.g_values = std::move(g_values);
  return trace;
}

double empirical_alarm_rate(const AlarmTrace& trace, std::size_t begin,
                            std::size_t end) {
  if (end > trace.alarms.size()) end = trace.alarms.size();
  if (begin >= end) throw InputError("empirical_alarm_rate: empty window");
  std::size_t count = 0;
  for (std::size_t i = begin; i < end; ++i) count += trace.alarms[i] ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(end - begin);
}

double empirical_alarm_rate(std::span<const double> g_values, double eta) {
  if (g_values.empty()) throw InputError("empirical_alarm_rate: empty window");
  std::size_t count = 0;
  for (double g : g_values) count += g > eta ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(g_values.size());
}

double stealth_allowance(double epsilon, std::size_t n) {
  if (n == 0) return 0.0;
  constexpr double z95 = 1.6448536269514722;
  return z95 * std::sqrt(epsilon * (1.0 - epsilon) / static_cast<double>(n));
}

OutputErrorBound theorem2_bound(double alpha, double sigma, double k, double L,
                                int p_dof) {
  if (!(alpha > 0.0) || !(sigma > 0.0) || !(k > 0.0) || !(L > 0.0) || p_dof <= 0) {
    throw InputError("theorem2_bound: alpha, sigma, k, L and p must be positive");
  }
  if (!(k < alpha / sigma)) {
    throw InputError("theorem2_bound: k must satisfy k < alpha / sigma");
  }
  return {(alpha - std::sqrt(sigma) * k) / L,
          1.0 - static_cast<double>(p_dof) / (k * k)};
}

}  // namespace cpsa
