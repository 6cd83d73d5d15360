#pragma once

#include <filesystem>
#include <vector>

#include "taskiq/task.hpp"

namespace taskiq {

struct Dataset {
  int width = 0;
  int height = 0;
  std::size_t theta_dim = 0;
  bool noiseless = false;
  std::vector<LabeledImage> images;

  std::size_t size() const { return images.size(); }
  std::size_t n_present() const;
  std::size_t n_absent() const { return size() - n_present(); }
};

/// Signal-present images first, then signal-absent ones. Image i draws from
/// `base.split(i)`, so the result does not depend on `threads`.
Dataset generate_dataset(const TaskSpec& task, std::size_t n_present, std::size_t n_absent,
                         const Rng& base, bool noiseless = false, int threads = 1);

/// Copy of a noiseless dataset with fresh noise on every image.
Dataset with_noise(const Dataset& clean, const NoiseModel& noise, const Rng& base, int threads = 1);

/// Binary container: little-endian header (magic "TIQDSET1", version, grid dims,
/// theta dim, counts, noiseless flag), float32 pixel blocks, u8 labels, then per-image
/// parameter records (theta as f64 with NaN for absent images, u32 background-param
/// count, f64 background params).
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

/// One JSON object per image: {"id", "label", "theta", "n_background_params", "mean", "min", "max"}.
void write_dataset_sidecar(const std::filesystem::path& path, const Dataset& data);

inline constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace taskiq
