#pragma once

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "taskiq/image.hpp"
#include "taskiq/rng.hpp"

namespace taskiq {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Parallel-hole collimator with Gaussian point response of height h and width w_m,
/// sampled on an integer pixel lattice {0..N_x-1} x {0..N_y-1}.
struct ImagingSystem {
  double height = 1.0;
  double prf_width = 1.0;
  int grid_width = 64;
  int grid_height = 64;

  void validate() const;
  std::size_t size() const {
    return static_cast<std::size_t>(grid_width) * static_cast<std::size_t>(grid_height);
  }
  Image blank() const { return Image(grid_width, grid_height); }

  /// Continuous spatial support [-0.5, N-0.5) covered by the pixels.
  Vec2 support_lo() const { return {-0.5, -0.5}; }
  Vec2 support_hi() const { return {grid_width - 0.5, grid_height - 0.5}; }
  bool in_support(Vec2 r) const;
};

struct GaussianSignal {
  double amplitude = 0.0;
  double width = 1.0;
  Vec2 center;
};

/// Prior over the to-be-estimated signal parameters theta. Components of the
/// signal that are not estimated come from `base`.
struct SignalPrior {
  enum class Kind { gaussian_amplitude, uniform_location, uniform_width };

  Kind kind = Kind::gaussian_amplitude;
  double mean = 0.0;  // gaussian-amplitude
  double sd = 1.0;    // gaussian-amplitude
  Vec2 lo;            // uniform-location per coordinate; uniform-width uses lo.x
  Vec2 hi;
  GaussianSignal base;

  static SignalPrior gaussian_amplitude(GaussianSignal base, double mean, double sd);
  static SignalPrior uniform_location(GaussianSignal base, Vec2 lo, Vec2 hi);
  static SignalPrior uniform_width(GaussianSignal base, double lo, double hi);

  void validate() const;
  std::size_t dim() const { return kind == Kind::uniform_location ? 2 : 1; }
  std::vector<double> sample(Rng& rng) const;
  /// Log density up to a constant that is the same for every theta; -inf off support.
  double log_density(std::span<const double> theta) const;
  /// Prior mean for the Gaussian prior, support midpoint for uniform priors.
  std::vector<double> initial_state() const;
  /// Per-component spread (sd, or half-width of the support).
  std::vector<double> spread() const;
  GaussianSignal signal(std::span<const double> theta) const;
};

struct LumpyModel {
  double mean_count = 5.0;
  double lump_amplitude = 10.0;
  double lump_width = 7.0;
};

struct LumpyBackground {
  LumpyModel model;
  std::vector<Vec2> centers;
};

struct ClbModel {
  double mean_clusters = 70.0;
  double mean_blobs = 20.0;
  double half_axis_x = 5.0;
  double half_axis_y = 2.0;
  double shape_exponent = 2.1;  // alpha
  double decay_exponent = 0.5;  // beta
  double cluster_spread = 12.0;
};

struct ClbBlob {
  Vec2 offset;  // relative to the cluster center
  double angle = 0.0;
};

struct ClbCluster {
  Vec2 center;
  std::vector<ClbBlob> blobs;
};

struct ClusteredLumpyBackground {
  ClbModel model;
  std::vector<ClbCluster> clusters;
};

struct ZeroBackground {};

using BackgroundModel = std::variant<ZeroBackground, LumpyModel, ClbModel>;

struct NoiseModel {
  double sd = 1.0;
  void validate() const;
};

struct LabeledImage {
  Image pixels;
  int label = 0;
  std::vector<double> theta;             // present iff label == 1
  std::vector<double> background_params;  // optional, for oracle tests
};

// ---- signal ---------------------------------------------------------------

Image render_signal_image(const ImagingSystem& system, const GaussianSignal& sig);

// ---- lumpy background -----------------------------------------------------

LumpyBackground sample_lumpy(Rng& rng, const ImagingSystem& system, const LumpyModel& model);
Image render_lumpy_background(const ImagingSystem& system, const LumpyBackground& bg);
/// Adds `weight` times the image of one lump at `center` into `out`.
void accumulate_lump(const ImagingSystem& system, const LumpyModel& model, Vec2 center,
                     double weight, Image& out);
std::vector<double> flatten_centers(const std::vector<Vec2>& centers);
std::vector<Vec2> unflatten_centers(std::span<const double> flat);

// ---- clustered lumpy background ------------------------------------------

ClusteredLumpyBackground sample_clb(Rng& rng, const ImagingSystem& system, const ClbModel& model);
/// Blob value l(r | R_angle) before normalization.
double clb_blob_value(Vec2 r, double angle, const ClbModel& model);

struct ClbRender {
  Image image;
  bool degenerate = false;  // raw render was constant; image left all-zero
};
ClbRender render_clb_background(int width, int height, const ClusteredLumpyBackground& bg);

// ---- backgrounds through the model variant -------------------------------

struct BackgroundSample {
  Image image;
  std::vector<double> params;
  bool degenerate = false;
};
BackgroundSample sample_background(const ImagingSystem& system, const BackgroundModel& model,
                                   Rng& rng);

// ---- measurement ------------------------------------------------------------

void add_noise(Image& image, const NoiseModel& noise, Rng& rng);

/// g = b + s + n. Label is 1 iff a signal image is supplied.
LabeledImage simulate_measurement(const ImagingSystem& system, const std::optional<Image>& signal,
                                  const Image& background, const NoiseModel& noise, Rng& rng,
                                  std::vector<double> theta = {});

}  // namespace taskiq
