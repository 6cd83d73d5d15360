#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace taskiq {

/// Observer output on a signal-present case, with u(estimate, truth) already evaluated.
struct PresentScore {
  double statistic = 0.0;
  double utility = 1.0;
};

struct ErocPoint {
  double threshold = 0.0;  // -inf for the first point
  double fpf = 1.0;
  double u_tp = 0.0;
};

/// Ordered by increasing threshold; FPF is non-increasing along the points.
struct ErocCurve {
  std::vector<ErocPoint> points;
};

struct AerocEstimate {
  double value = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n_present = 0;
  std::size_t n_absent = 0;
  std::size_t n_bootstrap = 0;
  std::uint64_t seed = 0;
};

struct BootstrapConfig {
  std::size_t resamples = 2000;
  double level = 0.90;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Decision "signal present" is T > tau (ties at the threshold count as negative).
/// FPF(tau) = #{T0 > tau}/n0, U_TP(tau) = sum_i u_i 1(T1_i > tau) / n1.
ErocCurve eroc_curve(std::span<const PresentScore> present, std::span<const double> absent);

/// Utility-weighted Mann-Whitney statistic with half weight on ties:
/// (1/(n1 n0)) sum_i sum_j u_i [1(T1_i > T0_j) + 0.5 * 1(T1_i == T0_j)].
double aeroc_value(std::span<const PresentScore> present, std::span<const double> absent);

/// Point estimate plus percentile-bootstrap interval (both classes resampled independently).
AerocEstimate aeroc(std::span<const PresentScore> present, std::span<const double> absent,
                    const BootstrapConfig& cfg = {});

/// Trapezoidal area under the curve over FPF.
double aeroc_from_curve(const ErocCurve& curve);

void write_curve_csv(const std::filesystem::path& path, const ErocCurve& curve);
std::string aeroc_to_json(const AerocEstimate& est);
AerocEstimate aeroc_from_json(const std::string& text);

}  // namespace taskiq
