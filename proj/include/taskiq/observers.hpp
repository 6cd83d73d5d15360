#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "taskiq/dataset.hpp"
#include "taskiq/eroc.hpp"
#include "taskiq/mcmc.hpp"
#include "taskiq/nn/network.hpp"
#include "taskiq/task.hpp"

namespace taskiq {

struct ObserverOutput {
  double statistic = 0.0;
  std::vector<double> estimate;
  // diagnostics; NaN when the observer does not produce them
  double log_lambda = std::numeric_limits<double>::quiet_NaN();
  double utility_mean = std::numeric_limits<double>::quiet_NaN();
  bool flagged = false;
};

// ---- analytic ideal observer (known background, Gaussian amplitude prior) ----------

/// Closed-form observer for the amplitude task: s(A) = A s_ref, A ~ N(mu, sigma_A^2),
/// white Gaussian noise. Precomputes s_ref and its energy.
class AnalyticIo {
 public:
  explicit AnalyticIo(const TaskSpec& task);

  /// (sigma_A^2 s_ref^T g + sigma_n^2 mu) / (sigma_n^2 + sigma_A^2 s_ref^T s_ref).
  double estimate(const Image& g) const;
  /// mu x + sigma_A^2 x^2 / (2 sigma_n^2), x = s_ref^T g.
  double statistic(const Image& g) const;
  /// Exact log of the marginal likelihood ratio.
  double log_likelihood_ratio(const Image& g) const;
  /// Posterior variance of A, the same for every g.
  double posterior_variance() const;
  ObserverOutput operator()(const Image& g) const;

  double reference_energy() const { return ss_; }
  const Image& reference_signal() const { return sref_; }

 private:
  Image sref_;
  double ss_ = 0.0;
  double mu_ = 0.0;
  double var_a_ = 0.0;
  double var_n_ = 0.0;
};

ObserverOutput analytic_io(const Image& g, const TaskSpec& task);

// ---- network-based observers -------------------------------------------------------

/// log of p/(1-p): the likelihood ratio for a detector trained on equal-prior batches.
double log_odds(double p);

struct HybridConfig {
  ChainConfig chain;
  std::optional<ProposalDensity> proposal;  // default_proposal(task) when unset
  /// Optional map from detector output p to log Lambda; the odds identity when unset.
  std::function<double(double)> calibration;
};

/// T = Lambda_hat * U_hat with Lambda_hat from the detection head, theta_hat from the
/// estimation head and U_hat averaged over a posterior chain at fixed theta_hat.
ObserverOutput hybrid_io(const Image& g, const nn::MultiTaskNet<float>& net, const TaskSpec& task,
                         const HybridConfig& cfg, Rng& rng);
/// Same with the network outputs already computed.
ObserverOutput hybrid_io(const Image& g, double posterior, std::span<const double> estimate, const TaskSpec& task,
                         const HybridConfig& cfg, Rng& rng);

/// T = p/(1-p), theta_hat from the estimation head.
ObserverOutput sub_ideal_no(const Image& g, const nn::MultiTaskNet<float>& net);
ObserverOutput sub_ideal_no(double posterior, std::span<const double> estimate);

/// Lambda * U product with both factors linear; log_lambda is clamped to keep exp finite.
double combine_statistic(double log_lambda, double utility_mean);

// ---- MCMC reference observer -------------------------------------------------------

struct McmcIoConfig {
  ChainConfig estimate_chain;
  ChainConfig utility_chain;
  ChainConfig ratio_chain;
  std::optional<ProposalDensity> proposal;
};

/// theta_hat = posterior mean, Lambda_hat from the H0 background chain, U_hat from a second,
/// independent H1 chain. Throws UnsupportedUtility where the posterior mean is not optimal.
ObserverOutput mcmc_io(const Image& g, const TaskSpec& task, const McmcIoConfig& cfg, Rng& rng);

// ---- scanning linear observer ------------------------------------------------------

struct SloGridSpec {
  int scalar_points = 257;      // amplitude and width grids
  double amplitude_span_sd = 4.0;
  double eigen_floor = 1e-6;    // eigenvalues clamped at floor * max eigenvalue
};

/// Parameter grid for the task's theta: the integer lattice of the prior support for
/// location, evenly spaced points for amplitude (mean +/- span sd) and width (support).
std::vector<std::vector<double>> slo_grid(const TaskSpec& task, const SloGridSpec& spec = {});

struct SloModel {
  int width = 0;
  int height = 0;
  std::size_t theta_dim = 0;
  std::vector<double> grid;        // n_grid x theta_dim
  std::vector<double> log_prior;   // n_grid
  std::vector<double> background_mean;
  std::vector<double> templates;   // n_grid x n_pix, K^{-1} gbar(theta)
  std::vector<double> constants;   // n_grid, -gbar^T K^{-1} gbar / 2 + ln p
  std::size_t eigen_clamped = 0;   // eigenvalues raised to the floor
  std::size_t n_training = 0;

  std::size_t n_grid() const { return log_prior.size(); }
  std::size_t n_pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::span<const double> grid_point(std::size_t k) const { return {grid.data() + k * theta_dim, theta_dim}; }
  std::span<const double> template_at(std::size_t k) const {
    return {templates.data() + k * n_pixels(), n_pixels()};
  }
};

/// Builds the observer from noiseless images: mean background and background covariance
/// from all images (signal subtracted where present), plus sigma_n^2 I.
SloModel build_slo(const TaskSpec& task, const Dataset& noiseless, const SloGridSpec& spec = {});
SloModel build_slo(const TaskSpec& task, std::size_t n_present, std::size_t n_absent, const Rng& rng,
                   const SloGridSpec& spec = {}, int threads = 1);

/// argmax over the grid (lowest index on ties); T is the maximized objective.
ObserverOutput slo(const Image& g, const SloModel& model);

void save_slo(const std::filesystem::path& path, const SloModel& model);
SloModel load_slo(const std::filesystem::path& path);

// ---- batch scoring -------------------------------------------------------------------

struct ScoreRow {
  std::size_t image_id = 0;
  int label = 0;
  double statistic = 0.0;
  std::vector<double> estimate;
  std::vector<double> theta;
  double utility = std::numeric_limits<double>::quiet_NaN();  // present rows only
};

using ObserverFn = std::function<ObserverOutput(std::size_t image_id, const Image& g)>;

/// Runs the observer over every image (in parallel) and evaluates u(theta_hat, theta)
/// on signal-present rows.
std::vector<ScoreRow> score_dataset(const Dataset& data, const ObserverFn& observer, const UtilityFn& u,
                                    int threads = 1);

/// Recomputes the utility column with a different utility.
void rescore_utility(std::vector<ScoreRow>& rows, const UtilityFn& u);

struct ErocInputs {
  std::vector<PresentScore> present;
  std::vector<double> absent;
};
ErocInputs eroc_inputs(std::span<const ScoreRow> rows);

/// image_id,label,T,theta_hat_0..,theta_0..,utility
void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows, std::size_t theta_dim);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

}  // namespace taskiq
