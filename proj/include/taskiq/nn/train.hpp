#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskiq/dataset.hpp"
#include "taskiq/nn/network.hpp"
#include "taskiq/task.hpp"
#include "taskiq/utility.hpp"

namespace taskiq::nn {

inline constexpr double kProbClip = 1e-7;

/// Mean binary cross-entropy with p clamped to [kProbClip, 1 - kProbClip].
double detection_loss(std::span<const double> p, std::span<const int> y);
/// d BCE / d p for one sample (unclamped derivative at the clamped p).
double detection_loss_grad(double p, int y);
/// Per-sample d loss / d logit for the mean loss; zero where the clamp is active.
template <class T>
void detection_logit_grad(std::span<const T> p, std::span<const int> y, std::span<T> out);

/// -(1/J) sum_j u(theta_hat_j, theta_j); estimates are J x dim row-major.
double estimation_loss(std::span<const double> theta_hat, std::span<const double> theta, std::size_t dim,
                       const UtilityFn& u);
/// d loss / d theta_hat for the mean loss.
void estimation_loss_grad(std::span<const double> theta_hat, std::span<const double> theta, std::size_t dim,
                          const UtilityFn& u, std::span<double> out);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over one contiguous slice of a parameter vector.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamRange range, AdamConfig cfg);
  void step(std::span<T> params, std::span<const T> grad);
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  ParamRange range_;
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t n_present = 32;  // per mini-batch
  std::size_t n_absent = 32;
  std::size_t n_batches = 2'000;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool semi_online = true;          // add fresh noise to noiseless images per draw
  bool estimation_into_trunk = true;
  std::size_t validate_every = 100;  // 0: only at the end
  std::size_t shards = 1;            // data-parallel split of each mini-batch
  int threads = 1;
  bool fit_normalization = true;

  void validate() const;
};

struct HistoryEntry {
  std::size_t batch = 0;
  double train_detection = 0.0;
  double train_estimation = 0.0;
  double val_detection = 0.0;
  double val_estimation = 0.0;
};

struct TrainHistory {
  std::vector<HistoryEntry> entries;
  double final_val_detection() const { return entries.empty() ? 0.0 : entries.back().val_detection; }
  double final_val_estimation() const { return entries.empty() ? 0.0 : entries.back().val_estimation; }
};

/// Input standardization from the training pool (noise variance added for noiseless
/// pools) and an output map from the prior location and spread.
template <class T>
void fit_normalization(MultiTaskNet<T>& net, const Dataset& train, const TaskSpec& task, bool noiseless);

struct ValidationLoss {
  double detection = 0.0;
  double estimation = 0.0;
};
template <class T>
ValidationLoss evaluate_losses(const MultiTaskNet<T>& net, const Dataset& data, const UtilityFn& u,
                               int batch = 128);

/// Alternating training: per mini-batch one Adam step on the estimation loss (present
/// members only) followed by one on the detection loss.
template <class T>
TrainHistory train(MultiTaskNet<T>& net, const Dataset& train_set, const Dataset& validation,
                   const TaskSpec& task, const TrainConfig& cfg);

/// Number of accepted growth steps: counts leading relative improvements >= min_gain.
std::size_t accepted_growth_steps(std::span<const double> improvements, double min_gain = 0.01);

struct GrowthStep {
  std::string block;  // "shared" or "estimation"
  int shared_layers = 0;
  int estimation_layers = 0;
  double val_loss = 0.0;
  double improvement = 0.0;  // relative to the previous candidate; 0 for the first
  bool accepted = false;
};

struct GrowthResult {
  Architecture selected;
  std::vector<GrowthStep> audit;
  MultiTaskNet<float> net;
  TrainHistory history;
};

struct GrowthConfig {
  double min_gain = 0.01;
  int max_shared = 8;
  int max_estimation = 4;
};

/// Adds shared conv layers while validation cross-entropy keeps improving by min_gain,
/// then estimation layers against validation estimation loss by the same rule.
GrowthResult grow_architecture(const Architecture& base, const Dataset& train_set, const Dataset& validation,
                               const TaskSpec& task, const TrainConfig& cfg, const GrowthConfig& growth = {});

}  // namespace taskiq::nn
