#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "taskiq/image.hpp"
#include "taskiq/rng.hpp"
#include "taskiq/task.hpp"

namespace taskiq {

/// Thrown when an operation is asked to work with a utility it cannot be optimal for.
class UnsupportedUtility : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for tasks an MCMC routine has no background parameterization for.
class UnsupportedTask : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Gaussian random-walk proposal. With `covariance` set, steps are drawn as L z where
/// L L^T = covariance; otherwise each component gets its own `sd`.
struct ProposalDensity {
  std::vector<double> sd;
  std::vector<double> covariance;  // row-major dim x dim, empty for diagonal
  double lump_step = 2.0;          // std of a lump-center move (pixels)

  static ProposalDensity diagonal(std::vector<double> sd, double lump_step = 2.0);
  static ProposalDensity correlated(std::vector<double> covariance, std::size_t dim,
                                    double lump_step = 2.0);

  void validate() const;
  std::size_t dim() const { return sd.size(); }
  void propose(std::span<const double> current, std::span<double> out, Rng& rng) const;

 private:
  std::vector<double> chol_;  // lower factor, row-major
};

/// Proposal widths used by default: 3 for amplitude, 4 per location coordinate,
/// 0.5 for width; lump centers move by 2 px.
ProposalDensity default_proposal(const TaskSpec& task);

struct ChainConfig {
  std::size_t n_samples = 10'000;  // kept samples J
  std::size_t burn_in = 1'000;
  std::size_t thin = 1;
  std::vector<double> initial_theta;  // empty: prior mean / support midpoint
  std::vector<Vec2> initial_alpha;    // lump centers; empty: fresh prior draw
  bool has_initial_alpha = false;     // distinguishes "no lumps" from "draw"
  bool freeze_alpha = false;

  void validate() const;
};

struct ChainTrace {
  std::size_t dim = 0;
  std::vector<double> samples;           // n_kept x dim, row-major
  std::vector<double> log_likelihood;    // per kept sample
  std::vector<std::uint8_t> accepted;    // whether the step that produced the sample accepted
  std::size_t n_proposed = 0;
  std::size_t n_accepted = 0;
  std::size_t burn_in = 0;
  std::size_t thin = 1;

  std::size_t size() const { return dim == 0 ? 0 : samples.size() / dim; }
  std::span<const double> sample(std::size_t j) const { return {samples.data() + j * dim, dim}; }
  /// 1-based index of the proposal that produced kept sample j.
  std::uint64_t step(std::size_t j) const { return burn_in + (j + 1) * thin; }
  double acceptance_rate() const {
    return n_proposed == 0 ? 0.0 : static_cast<double>(n_accepted) / static_cast<double>(n_proposed);
  }
  /// Acceptance rate outside [0.05, 0.95].
  bool flagged() const;
  std::vector<double> mean() const;
};

/// min(1, exp(log_target_new - log_target_old + log_q_reverse - log_q_forward)).
/// log_q_forward is log q(new | old), log_q_reverse is log q(old | new).
double acceptance_probability(double log_target_new, double log_target_old, double log_q_forward = 0.0,
                              double log_q_reverse = 0.0);

using LogDensityFn = std::function<double(std::span<const double>)>;
using ProposalFn = std::function<void(std::span<const double>, std::span<double>, Rng&)>;

/// Plain Metropolis-Hastings with a symmetric proposal. `initial` must have finite log density.
ChainTrace run_metropolis(const LogDensityFn& log_target, const ProposalFn& propose,
                          std::span<const double> initial, const ChainConfig& cfg, Rng& rng);

/// -||g - b - s||^2 / (2 sigma_n^2).
double log_likelihood(const Image& g, const Image& s, const Image& b, const NoiseModel& noise);

/// log of the likelihood ratio with signal and background both known:
/// (s^T (g - b) - s^T s / 2) / sigma_n^2.
double log_bske_likelihood_ratio(const Image& g, const Image& s, const Image& b, const NoiseModel& noise);

/// Chain on p(theta | g, H1) with the background known. Tasks with a random background
/// need `known_background`; a zero-background task uses the zero image when it is null.
ChainTrace sample_posterior_theta(const Image& g, const TaskSpec& task, const ProposalDensity& prop,
                                  const ChainConfig& cfg, Rng& rng,
                                  const Image* known_background = nullptr);

/// Joint chain on (theta, alpha) for a lumpy background, alpha being the lump centers
/// with the lump count held fixed per chain. The trace keeps theta only.
/// With `cfg.freeze_alpha` the chain reproduces sample_posterior_theta run against
/// the initial background, draw for draw.
ChainTrace sample_posterior_theta_alpha(const Image& g, const TaskSpec& task, const ProposalDensity& prop,
                                        const ChainConfig& cfg, Rng& rng);

/// Dispatches to the theta-only or joint chain depending on the background model.
ChainTrace sample_posterior(const Image& g, const TaskSpec& task, const ProposalDensity& prop,
                            const ChainConfig& cfg, Rng& rng);

/// (1/J) sum_j u(theta_hat, theta_j).
double utility_weighted_posterior_mean(std::span<const double> theta_hat, const UtilityFn& u,
                                       const ChainTrace& chain);

struct LikelihoodRatioEstimate {
  double log_value = 0.0;
  double acceptance_rate = 1.0;  // of the H0 background chain; 1 when there is none
  bool flagged = false;
};

/// Monte Carlo estimate of the likelihood ratio, averaged over background draws from
/// p(alpha | g, H0) and signal draws from the prior, accumulated with log-sum-exp.
/// Known-background tasks draw theta i.i.d. from the prior.
LikelihoodRatioEstimate mcmc_io_likelihood_ratio(const Image& g, const TaskSpec& task,
                                                 const ProposalDensity& prop, const ChainConfig& cfg,
                                                 Rng& rng);

/// Posterior mean of theta under H1, which is the optimal estimate for a quadratic utility.
/// It is also optimal for the Gaussian utility when the posterior is Gaussian, i.e. the
/// amplitude task with a known background; every other combination is rejected.
std::vector<double> mcmc_io_ideal_estimate(const Image& g, const TaskSpec& task,
                                           const ProposalDensity& prop, const ChainConfig& cfg,
                                           Rng& rng);

/// True when the posterior mean maximizes the expected utility for this task.
bool posterior_mean_is_optimal(const TaskSpec& task);

/// Binary trace: magic "TIQTRACE", u32 version, u32 dim, u64 count, then per record
/// u64 step, f64 log-likelihood, u8 accepted, dim x f64 state.
void write_trace(const std::filesystem::path& path, const ChainTrace& trace);
ChainTrace read_trace(const std::filesystem::path& path);

double log_sum_exp(std::span<const double> values);

}  // namespace taskiq
