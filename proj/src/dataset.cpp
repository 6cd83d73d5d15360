#include "taskiq/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "taskiq/binary_io.hpp"
#include "taskiq/parallel.hpp"

namespace taskiq {

std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::size_t Dataset::n_present() const {
  return static_cast<std::size_t>(
      std::count_if(images.begin(), images.end(), [](const LabeledImage& im) { return im.label == 1; }));
}

Dataset generate_dataset(const TaskSpec& task, std::size_t n_present, std::size_t n_absent,
                         const Rng& base, bool noiseless, int threads) {
  task.validate();
  Dataset out;
  out.width = task.system.grid_width;
  out.height = task.system.grid_height;
  out.theta_dim = task.theta_dim();
  out.noiseless = noiseless;
  out.images.resize(n_present + n_absent);
  parallel_for(out.images.size(), threads, [&](std::size_t i) {
    Rng rng = base.split(i);
    LabeledImage& im = out.images[i];
    const bool present = i < n_present;
    std::vector<double> theta;
    if (present) theta = task.signal.sample(rng);
    BackgroundSample bg = sample_background(task.system, task.background, rng);
    im.pixels = std::move(bg.image);
    im.background_params = std::move(bg.params);
    if (present) {
      const Image s = task.render_signal(theta);
      for (std::size_t m = 0; m < s.size(); ++m) im.pixels.pixels[m] += s.pixels[m];
      im.label = 1;
      im.theta = std::move(theta);
    }
    if (!noiseless) add_noise(im.pixels, task.noise, rng);
  });
  return out;
}

Dataset with_noise(const Dataset& clean, const NoiseModel& noise, const Rng& base, int threads) {
  Dataset out = clean;
  out.noiseless = false;
  parallel_for(out.images.size(), threads, [&](std::size_t i) {
    Rng rng = base.split(i);
    add_noise(out.images[i].pixels, noise, rng);
  });
  return out;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  ByteWriter w;
  w.put_magic("TIQDSET1");
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(data.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(data.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(data.theta_dim));
  w.put<std::uint64_t>(data.size());
  w.put<std::uint64_t>(data.n_present());
  w.put<std::uint64_t>(data.n_absent());
  w.put<std::uint8_t>(data.noiseless ? 1 : 0);
  const std::size_t npix = static_cast<std::size_t>(data.width) * static_cast<std::size_t>(data.height);
  for (const auto& im : data.images) {
    if (im.pixels.size() != npix) throw FormatError("write_dataset: image grid does not match header");
    for (double v : im.pixels.pixels) w.put<float>(static_cast<float>(v));
  }
  for (const auto& im : data.images) w.put<std::uint8_t>(static_cast<std::uint8_t>(im.label));
  for (const auto& im : data.images) {
    for (std::size_t k = 0; k < data.theta_dim; ++k) {
      w.put<double>(im.label == 1 && k < im.theta.size() ? im.theta[k]
                                                          : std::numeric_limits<double>::quiet_NaN());
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(im.background_params.size()));
    for (double v : im.background_params) w.put<double>(v);
  }
  w.save(path);
}

Dataset read_dataset(const std::filesystem::path& path) {
  ByteReader r = ByteReader::load(path);
  r.expect_magic("TIQDSET1");
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion)
    throw FormatError("dataset '" + path.string() + "': unsupported version " + std::to_string(version));
  Dataset d;
  d.width = static_cast<int>(r.get<std::uint32_t>());
  d.height = static_cast<int>(r.get<std::uint32_t>());
  d.theta_dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  const auto n_present = r.get<std::uint64_t>();
  const auto n_absent = r.get<std::uint64_t>();
  d.noiseless = r.get<std::uint8_t>() != 0;
  if (n_present + n_absent != count) throw FormatError("dataset: inconsistent counts in header");
  const std::size_t npix = static_cast<std::size_t>(d.width) * static_cast<std::size_t>(d.height);
  if (count > 0 && r.remaining() / count < npix * sizeof(float)) throw FormatError("dataset: truncated pixel blocks");
  d.images.resize(count);
  for (auto& im : d.images) {
    im.pixels = Image(d.width, d.height);
    for (auto& v : im.pixels.pixels) v = r.get<float>();
  }
  for (auto& im : d.images) im.label = r.get<std::uint8_t>();
  for (auto& im : d.images) {
    std::vector<double> theta(d.theta_dim);
    for (auto& v : theta) v = r.get<double>();
    if (im.label == 1) im.theta = std::move(theta);
    const auto nb = r.get<std::uint32_t>();
    im.background_params.resize(nb);
    for (auto& v : im.background_params) v = r.get<double>();
  }
  if (d.n_present() != n_present) throw FormatError("dataset: label block disagrees with header counts");
  return d;
}

void write_dataset_sidecar(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    const auto& im = data.images[i];
    const auto [lo, hi] = std::minmax_element(im.pixels.pixels.begin(), im.pixels.pixels.end());
    double mean = 0.0;
    for (double v : im.pixels.pixels) mean += v;
    mean /= static_cast<double>(std::max<std::size_t>(1, im.pixels.size()));
    nlohmann::json j;
    j["id"] = i;
    j["label"] = im.label;
    j["theta"] = im.theta;
    j["n_background_params"] = im.background_params.size();
    j["mean"] = mean;
    j["min"] = im.pixels.size() ? *lo : 0.0;
    j["max"] = im.pixels.size() ? *hi : 0.0;
    out << j.dump() << '\n';
  }
}

}  // namespace taskiq
