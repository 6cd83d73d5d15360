#include "taskiq/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace taskiq {

void ImagingSystem::validate() const {
  if (!(height > 0.0)) throw std::invalid_argument("imaging system: PRF height must be > 0");
  if (!(prf_width > 0.0)) throw std::invalid_argument("imaging system: PRF width must be > 0");
  if (grid_width <= 0 || grid_height <= 0)
    throw std::invalid_argument("imaging system: grid dimensions must be positive");
}

bool ImagingSystem::in_support(Vec2 r) const {
  const Vec2 lo = support_lo();
  const Vec2 hi = support_hi();
  return r.x >= lo.x && r.x < hi.x && r.y >= lo.y && r.y < hi.y;
}

void NoiseModel::validate() const {
  if (!(sd > 0.0)) throw std::invalid_argument("noise model: sd must be > 0");
}

// ---- signal prior -----------------------------------------------------------

SignalPrior SignalPrior::gaussian_amplitude(GaussianSignal base, double mean, double sd) {
  SignalPrior p;
  p.kind = Kind::gaussian_amplitude;
  p.base = base;
  p.mean = mean;
  p.sd = sd;
  p.validate();
  return p;
}

SignalPrior SignalPrior::uniform_location(GaussianSignal base, Vec2 lo, Vec2 hi) {
  SignalPrior p;
  p.kind = Kind::uniform_location;
  p.base = base;
  p.lo = lo;
  p.hi = hi;
  p.validate();
  return p;
}

SignalPrior SignalPrior::uniform_width(GaussianSignal base, double lo, double hi) {
  SignalPrior p;
  p.kind = Kind::uniform_width;
  p.base = base;
  p.lo = {lo, 0.0};
  p.hi = {hi, 0.0};
  p.validate();
  return p;
}

void SignalPrior::validate() const {
  switch (kind) {
    case Kind::gaussian_amplitude:
      if (!(sd > 0.0)) throw std::invalid_argument("signal prior: amplitude sd must be > 0");
      break;
    case Kind::uniform_location:
      if (!(lo.x < hi.x) || !(lo.y < hi.y))
        throw std::invalid_argument("signal prior: location support needs lo < hi");
      break;
    case Kind::uniform_width:
      if (!(lo.x < hi.x)) throw std::invalid_argument("signal prior: width support needs lo < hi");
      if (!(lo.x >= 0.0)) throw std::invalid_argument("signal prior: width support must be >= 0");
      break;
  }
  if (kind != Kind::uniform_width && !(base.width > 0.0))
    throw std::invalid_argument("signal prior: base signal width must be > 0");
}

std::vector<double> SignalPrior::sample(Rng& rng) const {
  switch (kind) {
    case Kind::gaussian_amplitude:
      return {rng.normal(mean, sd)};
    case Kind::uniform_location: {
      const double x = rng.uniform(lo.x, hi.x);
      const double y = rng.uniform(lo.y, hi.y);
      return {x, y};
    }
    case Kind::uniform_width:
      return {rng.uniform(lo.x, hi.x)};
  }
  return {};
}

double SignalPrior::log_density(std::span<const double> theta) const {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (theta.size() != dim()) throw std::invalid_argument("signal prior: wrong theta dimension");
  switch (kind) {
    case Kind::gaussian_amplitude: {
      const double z = (theta[0] - mean) / sd;
      return -0.5 * z * z;
    }
    case Kind::uniform_location:
      if (theta[0] <= lo.x || theta[0] >= hi.x || theta[1] <= lo.y || theta[1] >= hi.y) return kNegInf;
      return 0.0;
    case Kind::uniform_width:
      if (theta[0] <= lo.x || theta[0] >= hi.x) return kNegInf;
      return 0.0;
  }
  return kNegInf;
}

std::vector<double> SignalPrior::initial_state() const {
  switch (kind) {
    case Kind::gaussian_amplitude:
      return {mean};
    case Kind::uniform_location:
      return {0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y)};
    case Kind::uniform_width:
      return {0.5 * (lo.x + hi.x)};
  }
  return {};
}

std::vector<double> SignalPrior::spread() const {
  switch (kind) {
    case Kind::gaussian_amplitude:
      return {sd};
    case Kind::uniform_location:
      return {0.5 * (hi.x - lo.x), 0.5 * (hi.y - lo.y)};
    case Kind::uniform_width:
      return {0.5 * (hi.x - lo.x)};
  }
  return {};
}

GaussianSignal SignalPrior::signal(std::span<const double> theta) const {
  if (theta.size() != dim()) throw std::invalid_argument("signal prior: wrong theta dimension");
  GaussianSignal s = base;
  switch (kind) {
    case Kind::gaussian_amplitude: s.amplitude = theta[0]; break;
    case Kind::uniform_location: s.center = {theta[0], theta[1]}; break;
    case Kind::uniform_width: s.width = theta[0]; break;
  }
  return s;
}

// ---- signal image -------------------------------------------------------------

Image render_signal_image(const ImagingSystem& system, const GaussianSignal& sig) {
  system.validate();
  if (!(sig.width > 0.0)) throw std::invalid_argument("signal: width must be > 0");
  Image out = system.blank();
  const double var = system.prf_width * system.prf_width + sig.width * sig.width;
  const double peak = sig.amplitude * system.height * sig.width * sig.width / var;
  if (peak == 0.0) return out;
  const double inv = 1.0 / (2.0 * var);
  // exp(-(dx^2+dy^2)/2v) factorizes into a row and a column profile.
  std::vector<double> col(static_cast<std::size_t>(system.grid_width));
  for (int x = 0; x < system.grid_width; ++x) {
    const double dx = x - sig.center.x;
    col[static_cast<std::size_t>(x)] = std::exp(-dx * dx * inv);
  }
  for (int y = 0; y < system.grid_height; ++y) {
    const double dy = y - sig.center.y;
    const double row = peak * std::exp(-dy * dy * inv);
    for (int x = 0; x < system.grid_width; ++x) out(x, y) = row * col[static_cast<std::size_t>(x)];
  }
  return out;
}

// ---- lumpy background -------------------------------------------------------------

LumpyBackground sample_lumpy(Rng& rng, const ImagingSystem& system, const LumpyModel& model) {
  if (!(model.mean_count > 0.0)) throw std::invalid_argument("lumpy model: mean count must be > 0");
  LumpyBackground bg;
  bg.model = model;
  const int n = rng.poisson(model.mean_count);
  const Vec2 lo = system.support_lo();
  const Vec2 hi = system.support_hi();
  bg.centers.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(lo.x, hi.x);
    const double y = rng.uniform(lo.y, hi.y);
    bg.centers.push_back({x, y});
  }
  return bg;
}

void accumulate_lump(const ImagingSystem& system, const LumpyModel& model, Vec2 center,
                     double weight, Image& out) {
  const double wb2 = model.lump_width * model.lump_width;
  const double var = system.prf_width * system.prf_width + wb2;
  const double peak = weight * model.lump_amplitude * system.height * wb2 / var;
  const double inv = 1.0 / (2.0 * var);
  std::vector<double> col(static_cast<std::size_t>(out.width));
  for (int x = 0; x < out.width; ++x) {
    const double dx = x - center.x;
    col[static_cast<std::size_t>(x)] = std::exp(-dx * dx * inv);
  }
  for (int y = 0; y < out.height; ++y) {
    const double dy = y - center.y;
    const double row = peak * std::exp(-dy * dy * inv);
    double* dst = &out.pixels[static_cast<std::size_t>(y) * out.width];
    for (int x = 0; x < out.width; ++x) dst[x] += row * col[static_cast<std::size_t>(x)];
  }
}

Image render_lumpy_background(const ImagingSystem& system, const LumpyBackground& bg) {
  system.validate();
  Image out = system.blank();
  for (const Vec2& c : bg.centers) accumulate_lump(system, bg.model, c, 1.0, out);
  return out;
}

std::vector<double> flatten_centers(const std::vector<Vec2>& centers) {
  std::vector<double> flat;
  flat.reserve(2 * centers.size());
  for (const Vec2& c : centers) {
    flat.push_back(c.x);
    flat.push_back(c.y);
  }
  return flat;
}

std::vector<Vec2> unflatten_centers(std::span<const double> flat) {
  std::vector<Vec2> out;
  out.reserve(flat.size() / 2);
  for (std::size_t i = 0; i + 1 < flat.size(); i += 2) out.push_back({flat[i], flat[i + 1]});
  return out;
}

// ---- clustered lumpy background -------------------------------------------------

ClusteredLumpyBackground sample_clb(Rng& rng, const ImagingSystem& system, const ClbModel& model) {
  ClusteredLumpyBackground bg;
  bg.model = model;
  const int k = rng.poisson(model.mean_clusters);
  const Vec2 lo = system.support_lo();
  const Vec2 hi = system.support_hi();
  bg.clusters.resize(static_cast<std::size_t>(k));
  for (auto& cluster : bg.clusters) {
    cluster.center = {rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
    const int n = rng.poisson(model.mean_blobs);
    cluster.blobs.resize(static_cast<std::size_t>(n));
    for (auto& blob : cluster.blobs) {
      const double ox = rng.normal(0.0, model.cluster_spread);
      const double oy = rng.normal(0.0, model.cluster_spread);
      blob.offset = {ox, oy};
      blob.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }
  return bg;
}

double clb_blob_value(Vec2 r, double angle, const ClbModel& model) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double xr = c * r.x - s * r.y;
  const double yr = s * r.x + c * r.y;
  const double rho = std::hypot(xr, yr);
  if (rho == 0.0) return 1.0;
  // rho^beta / L(R r), with L the ellipse radius along the direction of R r.
  const double lx = model.half_axis_x;
  const double ly = model.half_axis_y;
  const double ellipse = std::hypot(ly * xr, lx * yr) / (lx * ly * rho);
  return std::exp(-model.shape_exponent * std::pow(rho, model.decay_exponent) * ellipse);
}

ClbRender render_clb_background(int width, int height, const ClusteredLumpyBackground& bg) {
  ClbRender out{Image(width, height), false};
  const ClbModel& m = bg.model;
  for (const auto& cluster : bg.clusters) {
    for (const auto& blob : cluster.blobs) {
      const double bx = cluster.center.x + blob.offset.x;
      const double by = cluster.center.y + blob.offset.y;
      const double c = std::cos(blob.angle);
      const double s = std::sin(blob.angle);
      for (int y = 0; y < height; ++y) {
        const double ry = y - by;
        double* dst = &out.image.pixels[static_cast<std::size_t>(y) * width];
        for (int x = 0; x < width; ++x) {
          const double rx = x - bx;
          const double xr = c * rx - s * ry;
          const double yr = s * rx + c * ry;
          const double rho2 = xr * xr + yr * yr;
          if (rho2 == 0.0) {
            dst[x] += 1.0;
            continue;
          }
          const double rho = std::sqrt(rho2);
          const double ellipse = std::hypot(m.half_axis_y * xr, m.half_axis_x * yr) /
                                 (m.half_axis_x * m.half_axis_y * rho);
          dst[x] += std::exp(-m.shape_exponent * std::pow(rho, m.decay_exponent) * ellipse);
        }
      }
    }
  }
  auto& px = out.image.pixels;
  const auto [lo_it, hi_it] = std::minmax_element(px.begin(), px.end());
  const double lo = *lo_it;
  const double span = *hi_it - lo;
  if (!(span > 0.0)) {
    std::fill(px.begin(), px.end(), 0.0);
    out.degenerate = true;
    return out;
  }
  // (lo - lo) / span == 0 and span / span == 1 exactly in IEEE arithmetic.
  for (double& v : px) v = (v - lo) / span;
  return out;
}

// ---- background dispatch ------------------------------------------------------

BackgroundSample sample_background(const ImagingSystem& system, const BackgroundModel& model,
                                   Rng& rng) {
  struct Visitor {
    const ImagingSystem& system;
    Rng& rng;
    BackgroundSample operator()(const ZeroBackground&) const { return {system.blank(), {}, false}; }
    BackgroundSample operator()(const LumpyModel& m) const {
      LumpyBackground bg = sample_lumpy(rng, system, m);
      return {render_lumpy_background(system, bg), flatten_centers(bg.centers), false};
    }
    BackgroundSample operator()(const ClbModel& m) const {
      ClusteredLumpyBackground bg = sample_clb(rng, system, m);
      ClbRender r = render_clb_background(system.grid_width, system.grid_height, bg);
      return {std::move(r.image), {static_cast<double>(bg.clusters.size())}, r.degenerate};
    }
  };
  return std::visit(Visitor{system, rng}, model);
}

// ---- measurement ------------------------------------------------------------------

void add_noise(Image& image, const NoiseModel& noise, Rng& rng) {
  noise.validate();
  for (double& v : image.pixels) v += rng.normal(0.0, noise.sd);
}

LabeledImage simulate_measurement(const ImagingSystem& system, const std::optional<Image>& signal,
                                  const Image& background, const NoiseModel& noise, Rng& rng,
                                  std::vector<double> theta) {
  const Image blank = system.blank();
  require_same_grid(blank, background, "simulate_measurement(background)");
  LabeledImage out;
  out.pixels = background;
  if (signal) {
    require_same_grid(blank, *signal, "simulate_measurement(signal)");
    for (std::size_t m = 0; m < out.pixels.size(); ++m) out.pixels.pixels[m] += signal->pixels[m];
    out.label = 1;
    out.theta = std::move(theta);
  }
  add_noise(out.pixels, noise, rng);
  return out;
}

}  // namespace taskiq
