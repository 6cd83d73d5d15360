#pragma once

#include <span>
#include <stdexcept>
#include <string>

namespace taskiq {

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Utility u(estimate, truth) scoring a parameter estimate. Values may be negative
/// for the quadratic and l1 variants.
class UtilityFn {
 public:
  enum class Kind { gaussian, quadratic, l1, constant };

  static UtilityFn gaussian(double sigma);
  static UtilityFn quadratic(double epsilon);
  static UtilityFn l1(double epsilon);
  static UtilityFn constant();

  /// Parses "gaussian:3", "quadratic:200", "l1:20", "constant".
  static UtilityFn parse(const std::string& text);

  Kind kind() const { return kind_; }
  double parameter() const { return parameter_; }
  std::string to_string() const;

  double operator()(std::span<const double> estimate, std::span<const double> truth) const;

  /// d u / d estimate written into `grad`. The l1 variant uses the subgradient 0 at ties.
  void gradient(std::span<const double> estimate, std::span<const double> truth,
                std::span<double> grad) const;

  bool operator==(const UtilityFn&) const = default;

 private:
  UtilityFn(Kind k, double p) : kind_(k), parameter_(p) {}
  Kind kind_ = Kind::constant;
  double parameter_ = 0.0;
};

double evaluate_utility(const UtilityFn& u, std::span<const double> estimate,
                        std::span<const double> truth);

}  // namespace taskiq
