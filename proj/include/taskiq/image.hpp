#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace taskiq {

/// Row-major image. Pixel m sits at lattice point (m % width, m / width).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::size_t size() const { return pixels.size(); }
  double& operator()(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double operator()(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::span<const double> view() const { return pixels; }
  std::span<double> view() { return pixels; }

  bool same_grid(const Image& other) const { return width == other.width && height == other.height; }
};

class GridMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_same_grid(const Image& a, const Image& b, const char* what) {
  if (!a.same_grid(b)) {
    throw GridMismatch(std::string(what) + ": grid mismatch (" + std::to_string(a.width) + "x" +
                       std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                       std::to_string(b.height) + ")");
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

}  // namespace taskiq
