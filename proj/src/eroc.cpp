#include "taskiq/eroc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "taskiq/parallel.hpp"
#include "taskiq/rng.hpp"

namespace taskiq {

namespace {

void require_nonempty(std::size_t n1, std::size_t n0, const char* what) {
  if (n1 == 0 || n0 == 0) {
    throw std::invalid_argument(std::string(what) + ": both classes need at least one case (n1=" +
                                std::to_string(n1) + ", n0=" + std::to_string(n0) + ")");
  }
}

double aeroc_sorted_absent(std::span<const PresentScore> present, std::span<const double> sorted_absent) {
  double total = 0.0;
  for (const PresentScore& p : present) {
    const auto lo = std::lower_bound(sorted_absent.begin(), sorted_absent.end(), p.statistic);
    const auto hi = std::upper_bound(lo, sorted_absent.end(), p.statistic);
    const double below = static_cast<double>(lo - sorted_absent.begin());
    const double tied = static_cast<double>(hi - lo);
    total += p.utility * (below + 0.5 * tied);
  }
  return total / (static_cast<double>(present.size()) * static_cast<double>(sorted_absent.size()));
}

double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(i);
  if (i + 1 >= v.size()) return v.back();
  return v[i] + frac * (v[i + 1] - v[i]);
}

}  // namespace

ErocCurve eroc_curve(std::span<const PresentScore> present, std::span<const double> absent) {
  require_nonempty(present.size(), absent.size(), "eroc_curve");
  std::vector<double> t0(absent.begin(), absent.end());
  std::sort(t0.begin(), t0.end());
  std::vector<PresentScore> t1(present.begin(), present.end());
  std::sort(t1.begin(), t1.end(),
            [](const PresentScore& a, const PresentScore& b) { return a.statistic < b.statistic; });

  // suffix[k] = sum of utilities of t1[k..end)
  std::vector<double> suffix(t1.size() + 1, 0.0);
  for (std::size_t k = t1.size(); k-- > 0;) suffix[k] = suffix[k + 1] + t1[k].utility;

  std::vector<double> thresholds;
  thresholds.reserve(t0.size() + t1.size());
  thresholds.insert(thresholds.end(), t0.begin(), t0.end());
  for (const auto& p : t1) thresholds.push_back(p.statistic);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double n0 = static_cast<double>(t0.size());
  const double n1 = static_cast<double>(t1.size());
  ErocCurve curve;
  curve.points.reserve(thresholds.size() + 1);
  curve.points.push_back({-std::numeric_limits<double>::infinity(), 1.0, suffix[0] / n1});
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  for (double tau : thresholds) {
    while (i0 < t0.size() && t0[i0] <= tau) ++i0;
    while (i1 < t1.size() && t1[i1].statistic <= tau) ++i1;
    curve.points.push_back({tau, static_cast<double>(t0.size() - i0) / n0, suffix[i1] / n1});
  }
  return curve;
}

double aeroc_value(std::span<const PresentScore> present, std::span<const double> absent) {
  require_nonempty(present.size(), absent.size(), "aeroc");
  std::vector<double> t0(absent.begin(), absent.end());
  std::sort(t0.begin(), t0.end());
  return aeroc_sorted_absent(present, t0);
}

AerocEstimate aeroc(std::span<const PresentScore> present, std::span<const double> absent,
                    const BootstrapConfig& cfg) {
  AerocEstimate est;
  est.value = aeroc_value(present, absent);
  est.n_present = present.size();
  est.n_absent = absent.size();
  est.n_bootstrap = cfg.resamples;
  est.seed = cfg.seed;
  est.ci_lo = est.ci_hi = est.value;
  if (cfg.resamples == 0) return est;
  if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw std::invalid_argument("aeroc: CI level must be in (0,1)");

  const Rng root = Rng(cfg.seed).split(stream::kBootstrap);
  std::vector<double> stats(cfg.resamples);
  parallel_for(cfg.resamples, cfg.threads, [&](std::size_t b) {
    Rng rng = root.split(b);
    std::vector<PresentScore> p(present.size());
    for (auto& s : p) s = present[rng.uniform_index(present.size())];
    std::vector<double> a(absent.size());
    for (auto& s : a) s = absent[rng.uniform_index(absent.size())];
    std::sort(a.begin(), a.end());
    stats[b] = aeroc_sorted_absent(p, a);
  });
  std::sort(stats.begin(), stats.end());
  const double tail = 0.5 * (1.0 - cfg.level);
  // Percentile intervals can exclude the point estimate for skewed statistics; widen to keep it.
  est.ci_lo = std::min(quantile_sorted(stats, tail), est.value);
  est.ci_hi = std::max(quantile_sorted(stats, 1.0 - tail), est.value);
  return est;
}

double aeroc_from_curve(const ErocCurve& curve) {
  if (curve.points.empty()) throw std::invalid_argument("aeroc_from_curve: empty curve");
  double area = 0.0;
  for (std::size_t k = 0; k + 1 < curve.points.size(); ++k) {
    const auto& a = curve.points[k];
    const auto& b = curve.points[k + 1];
    area += (a.fpf - b.fpf) * 0.5 * (a.u_tp + b.u_tp);
  }
  // Close the curve down to FPF = 0 if the last threshold did not reach it.
  const auto& last = curve.points.back();
  area += last.fpf * 0.5 * last.u_tp;
  return area;
}

void write_curve_csv(const std::filesystem::path& path, const ErocCurve& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "tau,fpf,u_tp\n" << std::setprecision(17);
  for (const auto& p : curve.points) {
    if (std::isinf(p.threshold)) {
      out << (p.threshold < 0 ? "-inf" : "inf");
    } else {
      out << p.threshold;
    }
    out << ',' << p.fpf << ',' << p.u_tp << '\n';
  }
}

std::string aeroc_to_json(const AerocEstimate& est) {
  nlohmann::ordered_json j;
  j["value"] = est.value;
  j["ci_lo"] = est.ci_lo;
  j["ci_hi"] = est.ci_hi;
  j["n1"] = est.n_present;
  j["n0"] = est.n_absent;
  j["n_bootstrap"] = est.n_bootstrap;
  j["seed"] = est.seed;
  return j.dump(2);
}

AerocEstimate aeroc_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  AerocEstimate est;
  est.value = j.at("value").get<double>();
  est.ci_lo = j.at("ci_lo").get<double>();
  est.ci_hi = j.at("ci_hi").get<double>();
  est.n_present = j.at("n1").get<std::size_t>();
  est.n_absent = j.at("n0").get<std::size_t>();
  est.n_bootstrap = j.value("n_bootstrap", std::size_t{0});
  est.seed = j.at("seed").get<std::uint64_t>();
  return est;
}

}  // namespace taskiq
