#include "taskiq/utility.hpp"

#include <charconv>
#include <cmath>

namespace taskiq {

namespace {

void check_dims(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("utility: estimate has " + std::to_string(a.size()) +
                            " components, truth has " + std::to_string(b.size()));
  }
}

}  // namespace

UtilityFn UtilityFn::gaussian(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian utility: sigma must be > 0");
  return {Kind::gaussian, sigma};
}

UtilityFn UtilityFn::quadratic(double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("quadratic utility: epsilon must be > 0");
  return {Kind::quadratic, epsilon};
}

UtilityFn UtilityFn::l1(double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("l1 utility: epsilon must be > 0");
  return {Kind::l1, epsilon};
}

UtilityFn UtilityFn::constant() { return {Kind::constant, 0.0}; }

UtilityFn UtilityFn::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  if (name == "constant" || name == "one") return constant();
  if (colon == std::string::npos) {
    throw std::invalid_argument("utility '" + text + "': expected <kind>:<parameter>");
  }
  const double p = std::stod(text.substr(colon + 1));
  if (name == "gaussian") return gaussian(p);
  if (name == "quadratic") return quadratic(p);
  if (name == "l1") return l1(p);
  throw std::invalid_argument("utility '" + text + "': unknown kind '" + name + "'");
}

std::string UtilityFn::to_string() const {
  // shortest text that parses back to the same double
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), parameter_);
  const std::string p(buf, res.ptr);
  switch (kind_) {
    case Kind::gaussian: return "gaussian:" + p;
    case Kind::quadratic: return "quadratic:" + p;
    case Kind::l1: return "l1:" + p;
    case Kind::constant: return "constant";
  }
  return "constant";
}

double UtilityFn::operator()(std::span<const double> estimate, std::span<const double> truth) const {
  check_dims(estimate, truth);
  switch (kind_) {
    case Kind::gaussian: {
      double sq = 0.0;
      for (std::size_t i = 0; i < estimate.size(); ++i) {
        const double d = estimate[i] - truth[i];
        sq += d * d;
      }
      return std::exp(-sq / (2.0 * parameter_ * parameter_));
    }
    case Kind::quadratic: {
      double sq = 0.0;
      for (std::size_t i = 0; i < estimate.size(); ++i) {
        const double d = estimate[i] - truth[i];
        sq += d * d;
      }
      return 1.0 - sq / parameter_;
    }
    case Kind::l1: {
      double abs_sum = 0.0;
      for (std::size_t i = 0; i < estimate.size(); ++i) abs_sum += std::abs(estimate[i] - truth[i]);
      return 1.0 - abs_sum / parameter_;
    }
    case Kind::constant:
      return 1.0;
  }
  return 1.0;
}

void UtilityFn::gradient(std::span<const double> estimate, std::span<const double> truth,
                         std::span<double> grad) const {
  check_dims(estimate, truth);
  switch (kind_) {
    case Kind::gaussian: {
      const double u = (*this)(estimate, truth);
      const double s2 = parameter_ * parameter_;
      for (std::size_t i = 0; i < estimate.size(); ++i) grad[i] = -u * (estimate[i] - truth[i]) / s2;
      return;
    }
    case Kind::quadratic:
      for (std::size_t i = 0; i < estimate.size(); ++i)
        grad[i] = -2.0 * (estimate[i] - truth[i]) / parameter_;
      return;
    case Kind::l1:
      for (std::size_t i = 0; i < estimate.size(); ++i) {
        const double d = estimate[i] - truth[i];
        grad[i] = d > 0.0 ? -1.0 / parameter_ : (d < 0.0 ? 1.0 / parameter_ : 0.0);
      }
      return;
    case Kind::constant:
      for (auto& g : grad) g = 0.0;
      return;
  }
}

double evaluate_utility(const UtilityFn& u, std::span<const double> estimate,
                        std::span<const double> truth) {
  return u(estimate, truth);
}

}  // namespace taskiq
