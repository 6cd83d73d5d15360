#include "taskiq/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "taskiq/binary_io.hpp"

namespace taskiq {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint32_t kTraceVersion = 1;
// Incremental background updates are re-synchronised with a full render this often.
constexpr std::size_t kResyncEvery = 512;

Image residual(const Image& g, const Image& b) {
  require_same_grid(g, b, "residual");
  Image r = g;
  for (std::size_t m = 0; m < r.size(); ++m) r.pixels[m] -= b.pixels[m];
  return r;
}

/// Log-likelihood of theta against a residual r = g - b:
/// (s^T r - s^T s / 2 - r^T r / 2) / sigma^2 == -||r - s||^2 / (2 sigma^2).
class ThetaLikelihood {
 public:
  explicit ThetaLikelihood(const TaskSpec& task)
      : task_(task), inv_var_(1.0 / (task.noise.sd * task.noise.sd)), fast_(task.amplitude_only()) {
    if (fast_) {
      sref_ = task.reference_signal();
      ss_ = squared_norm(sref_.pixels);
    }
  }

  struct Bound {
    const Image* r = nullptr;
    double rr = 0.0;
    double x = 0.0;  // s_ref^T r on the fast path
  };

  Bound bind(const Image& r) const {
    Bound b{&r, squared_norm(r.pixels), 0.0};
    if (fast_) b.x = dot(sref_.pixels, r.pixels);
    return b;
  }

  double operator()(const Bound& b, std::span<const double> theta) const {
    if (fast_) {
      const double a = theta[0];
      return (a * b.x - 0.5 * a * a * ss_ - 0.5 * b.rr) * inv_var_;
    }
    const Image s = task_.render_signal(theta);
    return (dot(s.pixels, b.r->pixels) - 0.5 * squared_norm(s.pixels) - 0.5 * b.rr) * inv_var_;
  }

  /// log Lambda_BSKE against the same residual.
  double log_ratio(const Bound& b, std::span<const double> theta) const {
    if (fast_) {
      const double a = theta[0];
      return (a * b.x - 0.5 * a * a * ss_) * inv_var_;
    }
    const Image s = task_.render_signal(theta);
    return (dot(s.pixels, b.r->pixels) - 0.5 * squared_norm(s.pixels)) * inv_var_;
  }

 private:
  const TaskSpec& task_;
  double inv_var_;
  bool fast_;
  Image sref_;
  double ss_ = 0.0;
};

/// Lump-center state with an incrementally maintained residual g - b(alpha).
struct LumpState {
  const ImagingSystem* system = nullptr;
  const LumpyModel* model = nullptr;
  const Image* g = nullptr;
  std::vector<Vec2> centers;
  Image r;
  std::size_t moves_since_resync = 0;

  void resync() {
    LumpyBackground bg{*model, centers};
    r = residual(*g, render_lumpy_background(*system, bg));
    moves_since_resync = 0;
  }

  /// Residual after moving lump k to `to`.
  Image moved(std::size_t k, Vec2 to) const {
    Image out = r;
    accumulate_lump(*system, *model, centers[k], 1.0, out);
    accumulate_lump(*system, *model, to, -1.0, out);
    return out;
  }

  void commit(std::size_t k, Vec2 to, Image&& new_r) {
    centers[k] = to;
    r = std::move(new_r);
    if (++moves_since_resync >= kResyncEvery) resync();
  }
};

LumpState init_lumps(const Image& g, const TaskSpec& task, const ChainConfig& cfg, Rng& rng) {
  const auto& model = std::get<LumpyModel>(task.background);
  LumpState st;
  st.system = &task.system;
  st.model = &model;
  st.g = &g;
  if (cfg.has_initial_alpha || !cfg.initial_alpha.empty()) {
    st.centers = cfg.initial_alpha;
    for (const Vec2& c : st.centers) {
      if (!task.system.in_support(c)) throw std::invalid_argument("chain: initial lump center outside support");
    }
  } else {
    st.centers = sample_lumpy(rng, task.system, model).centers;
  }
  st.resync();
  return st;
}

struct LumpMove {
  std::size_t k = 0;
  Vec2 to;
  bool valid = false;
};

LumpMove propose_lump(const LumpState& st, const ImagingSystem& system, double step, Rng& rng) {
  LumpMove mv;
  if (st.centers.empty()) return mv;
  mv.k = rng.uniform_index(st.centers.size());
  const Vec2 from = st.centers[mv.k];
  const double dx = rng.normal(0.0, step);
  const double dy = rng.normal(0.0, step);
  mv.to = {from.x + dx, from.y + dy};
  mv.valid = system.in_support(mv.to);
  return mv;
}

std::vector<double> initial_theta(const TaskSpec& task, const ChainConfig& cfg) {
  std::vector<double> theta = cfg.initial_theta.empty() ? task.signal.initial_state() : cfg.initial_theta;
  if (theta.size() != task.theta_dim()) throw DimensionMismatch("chain: initial theta has wrong dimension");
  if (!std::isfinite(task.signal.log_density(theta)))
    throw std::invalid_argument("chain: initial theta has zero prior probability");
  return theta;
}

void keep(ChainTrace& trace, std::span<const double> state, double loglik, bool accepted) {
  trace.samples.insert(trace.samples.end(), state.begin(), state.end());
  trace.log_likelihood.push_back(loglik);
  trace.accepted.push_back(accepted ? 1 : 0);
}

ChainTrace start_trace(std::size_t dim, const ChainConfig& cfg) {
  ChainTrace t;
  t.dim = dim;
  t.burn_in = cfg.burn_in;
  t.thin = cfg.thin;
  t.samples.reserve(cfg.n_samples * dim);
  t.log_likelihood.reserve(cfg.n_samples);
  t.accepted.reserve(cfg.n_samples);
  return t;
}

/// Shared (theta, alpha) chain. `lumps == nullptr` or a frozen config runs theta only
/// against `fixed_r`.
ChainTrace run_theta_chain(const TaskSpec& task, const ProposalDensity& prop, const ChainConfig& cfg,
                           Rng& rng, const Image& fixed_r, LumpState* lumps) {
  cfg.validate();
  prop.validate();
  if (prop.dim() != task.theta_dim()) throw DimensionMismatch("chain: proposal dimension differs from theta");
  const ThetaLikelihood like(task);
  const bool move_alpha = lumps != nullptr && !cfg.freeze_alpha;

  std::vector<double> theta = initial_theta(task, cfg);
  std::vector<double> cand(theta.size());
  auto bound = like.bind(lumps ? lumps->r : fixed_r);
  double lp = task.signal.log_density(theta);
  double ll = like(bound, theta);

  ChainTrace trace = start_trace(theta.size(), cfg);
  const std::size_t total = cfg.burn_in + cfg.n_samples * cfg.thin;
  for (std::size_t step = 1; step <= total; ++step) {
    prop.propose(theta, cand, rng);
    LumpMove mv;
    if (move_alpha) mv = propose_lump(*lumps, task.system, prop.lump_step, rng);
    ++trace.n_proposed;

    bool accepted = false;
    const double lp_new = task.signal.log_density(cand);
    const bool alpha_ok = !move_alpha || lumps->centers.empty() || mv.valid;
    if (std::isfinite(lp_new) && alpha_ok) {
      if (move_alpha && mv.valid) {
        Image new_r = lumps->moved(mv.k, mv.to);
        const auto nb = like.bind(new_r);
        const double ll_new = like(nb, cand);
        if (rng.uniform() < acceptance_probability(ll_new + lp_new, ll + lp)) {
          lumps->commit(mv.k, mv.to, std::move(new_r));
          bound = like.bind(lumps->r);
          // a resync may have nudged the residual; keep ll consistent with it
          ll = like(bound, cand);
          accepted = true;
        }
      } else {
        const double ll_new = like(bound, cand);
        if (rng.uniform() < acceptance_probability(ll_new + lp_new, ll + lp)) {
          ll = ll_new;
          accepted = true;
        }
      }
      if (accepted) {
        theta.swap(cand);
        lp = lp_new;
        ++trace.n_accepted;
      }
    }
    if (step > cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0) keep(trace, theta, ll, accepted);
  }
  return trace;
}

}  // namespace

// ---- proposal -----------------------------------------------------------------

ProposalDensity ProposalDensity::diagonal(std::vector<double> sd, double lump_step) {
  ProposalDensity p;
  p.sd = std::move(sd);
  p.lump_step = lump_step;
  p.validate();
  return p;
}

ProposalDensity ProposalDensity::correlated(std::vector<double> covariance, std::size_t dim,
                                            double lump_step) {
  if (covariance.size() != dim * dim) throw DimensionMismatch("proposal covariance must be dim x dim");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> k(
      covariance.data(), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  if (!k.isApprox(k.transpose())) throw std::invalid_argument("proposal covariance must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("proposal covariance must be positive definite");
  ProposalDensity p;
  p.covariance = std::move(covariance);
  p.lump_step = lump_step;
  p.sd.resize(dim);
  p.chol_.assign(dim * dim, 0.0);
  const Eigen::MatrixXd l = llt.matrixL();
  for (std::size_t i = 0; i < dim; ++i) {
    p.sd[i] = std::sqrt(k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
    for (std::size_t j = 0; j <= i; ++j)
      p.chol_[i * dim + j] = l(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return p;
}

void ProposalDensity::validate() const {
  if (sd.empty()) throw std::invalid_argument("proposal: no components");
  for (double s : sd) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("proposal: every std must be > 0");
  }
  if (!(lump_step > 0.0)) throw std::invalid_argument("proposal: lump step must be > 0");
}

void ProposalDensity::propose(std::span<const double> current, std::span<double> out, Rng& rng) const {
  const std::size_t d = sd.size();
  if (chol_.empty()) {
    for (std::size_t i = 0; i < d; ++i) out[i] = current[i] + sd[i] * rng.normal();
    return;
  }
  double z[16];
  std::vector<double> big;
  double* zp = z;
  if (d > 16) {
    big.resize(d);
    zp = big.data();
  }
  for (std::size_t i = 0; i < d; ++i) zp[i] = rng.normal();
  for (std::size_t i = 0; i < d; ++i) {
    double step = 0.0;
    for (std::size_t j = 0; j <= i; ++j) step += chol_[i * d + j] * zp[j];
    out[i] = current[i] + step;
  }
}

ProposalDensity default_proposal(const TaskSpec& task) {
  switch (task.signal.kind) {
    case SignalPrior::Kind::gaussian_amplitude:
      return ProposalDensity::diagonal({3.0});
    case SignalPrior::Kind::uniform_location:
      return ProposalDensity::diagonal({4.0, 4.0});
    case SignalPrior::Kind::uniform_width:
      return ProposalDensity::diagonal({0.5});
  }
  return ProposalDensity::diagonal({1.0});
}

void ChainConfig::validate() const {
  if (n_samples < 1) throw std::invalid_argument("chain: need at least one kept sample");
  if (thin < 1) throw std::invalid_argument("chain: thinning must be >= 1");
}

bool ChainTrace::flagged() const {
  const double a = acceptance_rate();
  return a < 0.05 || a > 0.95;
}

std::vector<double> ChainTrace::mean() const {
  const std::size_t n = size();
  if (n == 0) throw std::invalid_argument("chain: empty trace");
  std::vector<double> m(dim, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < dim; ++k) m[k] += samples[j * dim + k];
  }
  for (double& v : m) v /= static_cast<double>(n);
  return m;
}

double acceptance_probability(double log_target_new, double log_target_old, double log_q_forward,
                              double log_q_reverse) {
  if (log_target_new == kNegInf) return 0.0;
  const double log_ratio = log_target_new - log_target_old + log_q_reverse - log_q_forward;
  if (std::isnan(log_ratio)) return 0.0;
  return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

ChainTrace run_metropolis(const LogDensityFn& log_target, const ProposalFn& propose,
                          std::span<const double> initial, const ChainConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<double> state(initial.begin(), initial.end());
  std::vector<double> cand(state.size());
  double lt = log_target(state);
  if (!std::isfinite(lt)) throw std::invalid_argument("metropolis: initial state has zero density");
  ChainTrace trace = start_trace(state.size(), cfg);
  const std::size_t total = cfg.burn_in + cfg.n_samples * cfg.thin;
  for (std::size_t step = 1; step <= total; ++step) {
    propose(state, cand, rng);
    ++trace.n_proposed;
    bool accepted = false;
    const double lt_new = log_target(cand);
    if (lt_new != kNegInf && rng.uniform() < acceptance_probability(lt_new, lt)) {
      state.swap(cand);
      lt = lt_new;
      accepted = true;
      ++trace.n_accepted;
    }
    if (step > cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0) keep(trace, state, lt, accepted);
  }
  return trace;
}

double log_likelihood(const Image& g, const Image& s, const Image& b, const NoiseModel& noise) {
  noise.validate();
  require_same_grid(g, s, "log_likelihood");
  require_same_grid(g, b, "log_likelihood");
  double acc = 0.0;
  for (std::size_t m = 0; m < g.size(); ++m) {
    const double e = g.pixels[m] - b.pixels[m] - s.pixels[m];
    acc += e * e;
  }
  return -acc / (2.0 * noise.sd * noise.sd);
}

double log_bske_likelihood_ratio(const Image& g, const Image& s, const Image& b, const NoiseModel& noise) {
  noise.validate();
  require_same_grid(g, s, "log_bske_likelihood_ratio");
  require_same_grid(g, b, "log_bske_likelihood_ratio");
  double sr = 0.0;
  double ss = 0.0;
  for (std::size_t m = 0; m < g.size(); ++m) {
    sr += s.pixels[m] * (g.pixels[m] - b.pixels[m]);
    ss += s.pixels[m] * s.pixels[m];
  }
  return (sr - 0.5 * ss) / (noise.sd * noise.sd);
}

ChainTrace sample_posterior_theta(const Image& g, const TaskSpec& task, const ProposalDensity& prop,
                                  const ChainConfig& cfg, Rng& rng, const Image* known_background) {
  task.validate();
  const Image zero = task.system.blank();
  require_same_grid(g, zero, "sample_posterior_theta");
  if (known_background == nullptr && !task.background_known())
    throw UnsupportedTask("sample_posterior_theta: background is random; pass it explicitly or use the joint chain");
  const Image r = residual(g, known_background ? *known_background : zero);
  return run_theta_chain(task, prop, cfg, rng, r, nullptr);
}

ChainTrace sample_posterior_theta_alpha(const Image& g, const TaskSpec& task, const ProposalDensity& prop,
                                        const ChainConfig& cfg, Rng& rng) {
  task.validate();
  if (!task.is_lumpy()) throw UnsupportedTask("sample_posterior_theta_alpha: needs a lumpy background");
  require_same_grid(g, task.system.blank(), "sample_posterior_theta_alpha");
  LumpState lumps = init_lumps(g, task, cfg, rng);
  return run_theta_chain(task, prop, cfg, rng, lumps.r, &lumps);
}

ChainTrace sample_posterior(const Image& g, const TaskSpec& task, const ProposalDensity& prop,
                            const ChainConfig& cfg, Rng& rng) {
  if (task.background_known()) return sample_posterior_theta(g, task, prop, cfg, rng);
  if (task.is_lumpy()) return sample_posterior_theta_alpha(g, task, prop, cfg, rng);
  throw UnsupportedTask("posterior sampling is not available for task '" + task.name +
                        "': its background has no parametric likelihood");
}

double utility_weighted_posterior_mean(std::span<const double> theta_hat, const UtilityFn& u,
                                       const ChainTrace& chain) {
  const std::size_t n = chain.size();
  if (n == 0) throw std::invalid_argument("utility_weighted_posterior_mean: empty chain");
  if (theta_hat.size() != chain.dim) throw DimensionMismatch("utility_weighted_posterior_mean: theta dimension");
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) acc += u(theta_hat, chain.sample(j));
  return acc / static_cast<double>(n);
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return kNegInf;
  const double mx = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

LikelihoodRatioEstimate mcmc_io_likelihood_ratio(const Image& g, const TaskSpec& task,
                                                 const ProposalDensity& prop, const ChainConfig& cfg,
                                                 Rng& rng) {
  task.validate();
  cfg.validate();
  require_same_grid(g, task.system.blank(), "mcmc_io_likelihood_ratio");
  const ThetaLikelihood like(task);
  Rng theta_rng = rng.split(stream::kObserver);
  std::vector<double> terms;
  terms.reserve(cfg.n_samples);
  LikelihoodRatioEstimate est;

  if (task.background_known()) {
    const auto bound = like.bind(g);
    for (std::size_t j = 0; j < cfg.n_samples; ++j) terms.push_back(like.log_ratio(bound, task.signal.sample(theta_rng)));
  } else if (task.is_lumpy()) {
    prop.validate();
    LumpState lumps = init_lumps(g, task, cfg, rng);
    const double inv_var = 1.0 / (task.noise.sd * task.noise.sd);
    double ll = -0.5 * squared_norm(lumps.r.pixels) * inv_var;
    std::size_t proposed = 0;
    std::size_t accepted = 0;
    auto bound = like.bind(lumps.r);
    const std::size_t total = cfg.burn_in + cfg.n_samples * cfg.thin;
    for (std::size_t step = 1; step <= total; ++step) {
      if (!lumps.centers.empty()) {
        const LumpMove mv = propose_lump(lumps, task.system, prop.lump_step, rng);
        ++proposed;
        if (mv.valid) {
          Image new_r = lumps.moved(mv.k, mv.to);
          const double ll_new = -0.5 * squared_norm(new_r.pixels) * inv_var;
          if (rng.uniform() < acceptance_probability(ll_new, ll)) {
            lumps.commit(mv.k, mv.to, std::move(new_r));
            ll = -0.5 * squared_norm(lumps.r.pixels) * inv_var;
            bound = like.bind(lumps.r);
            ++accepted;
          }
        }
      }
      if (step > cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0)
        terms.push_back(like.log_ratio(bound, task.signal.sample(theta_rng)));
    }
    if (proposed > 0) {
      est.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(proposed);
      est.flagged = est.acceptance_rate < 0.05 || est.acceptance_rate > 0.95;
    }
  } else {
    throw UnsupportedTask("likelihood-ratio estimation is not available for task '" + task.name + "'");
  }
  est.log_value = log_sum_exp(terms) - std::log(static_cast<double>(terms.size()));
  return est;
}

bool posterior_mean_is_optimal(const TaskSpec& task) {
  switch (task.utility.kind()) {
    case UtilityFn::Kind::quadratic:
    case UtilityFn::Kind::constant:
      return true;
    case UtilityFn::Kind::gaussian:
      return task.amplitude_only() && task.background_known();
    case UtilityFn::Kind::l1:
      return false;
  }
  return false;
}

std::vector<double> mcmc_io_ideal_estimate(const Image& g, const TaskSpec& task,
                                           const ProposalDensity& prop, const ChainConfig& cfg,
                                           Rng& rng) {
  if (!posterior_mean_is_optimal(task)) {
    throw UnsupportedUtility("mcmc_io_ideal_estimate: the posterior mean is the optimal estimate only for a "
                             "quadratic utility (or a Gaussian utility with a Gaussian posterior); got '" +
                             task.utility.to_string() + "' on task '" + task.name + "'");
  }
  return sample_posterior(g, task, prop, cfg, rng).mean();
}

void write_trace(const std::filesystem::path& path, const ChainTrace& trace) {
  ByteWriter w;
  w.put_magic("TIQTRACE");
  w.put<std::uint32_t>(kTraceVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(trace.dim));
  w.put<std::uint64_t>(trace.size());
  w.put<std::uint64_t>(trace.n_proposed);
  w.put<std::uint64_t>(trace.n_accepted);
  w.put<std::uint64_t>(trace.burn_in);
  w.put<std::uint64_t>(trace.thin);
  for (std::size_t j = 0; j < trace.size(); ++j) {
    w.put<std::uint64_t>(trace.step(j));
    w.put<double>(trace.log_likelihood[j]);
    w.put<std::uint8_t>(trace.accepted[j]);
    for (double v : trace.sample(j)) w.put<double>(v);
  }
  w.save(path);
}

ChainTrace read_trace(const std::filesystem::path& path) {
  ByteReader r = ByteReader::load(path);
  r.expect_magic("TIQTRACE");
  if (r.get<std::uint32_t>() != kTraceVersion) throw FormatError("trace: unsupported version");
  ChainTrace t;
  t.dim = r.get<std::uint32_t>();
  const auto n = r.get<std::uint64_t>();
  t.n_proposed = r.get<std::uint64_t>();
  t.n_accepted = r.get<std::uint64_t>();
  t.burn_in = r.get<std::uint64_t>();
  t.thin = r.get<std::uint64_t>();
  if (t.thin == 0 || t.n_accepted > t.n_proposed) throw FormatError("trace: inconsistent header");
  for (std::uint64_t j = 0; j < n; ++j) {
    if (r.get<std::uint64_t>() != t.burn_in + (j + 1) * t.thin) throw FormatError("trace: step index out of order");
    t.log_likelihood.push_back(r.get<double>());
    t.accepted.push_back(r.get<std::uint8_t>());
    for (std::size_t k = 0; k < t.dim; ++k) t.samples.push_back(r.get<double>());
  }
  return t;
}

}  // namespace taskiq
