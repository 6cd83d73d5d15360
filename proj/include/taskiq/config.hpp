#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskiq/eroc.hpp"
#include "taskiq/mcmc.hpp"
#include "taskiq/nn/network.hpp"
#include "taskiq/nn/train.hpp"
#include "taskiq/observers.hpp"
#include "taskiq/task.hpp"

namespace taskiq {

/// Invalid configuration. `path` is the dotted field path, e.g. "task.noise.sd".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct SplitSize {
  std::size_t present = 0;
  std::size_t absent = 0;
  std::size_t total() const { return present + absent; }
  bool operator==(const SplitSize&) const = default;
};

struct VerifyTarget {
  double aeroc = 0.0;
  double tolerance = 0.0;
  bool operator==(const VerifyTarget&) const = default;
};

inline const std::vector<std::string>& known_observers() {
  static const std::vector<std::string> names{"analytic", "hybrid", "sub-ideal", "mcmc-io", "slo"};
  return names;
}

struct ExperimentConfig {
  std::string name = "experiment";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  Profile profile = Profile::desk;
  std::filesystem::path out = "runs/experiment";

  std::string preset = "custom";
  TaskSpec task;

  SplitSize train{0, 0};
  SplitSize validation{0, 0};
  SplitSize test{500, 500};

  std::vector<std::string> observers{"analytic"};

  ChainConfig chain;  // posterior chain behind U(g)
  std::size_t ratio_samples = 10'000;
  std::size_t ratio_burn_in = 1'000;
  std::optional<ProposalDensity> proposal;

  nn::Architecture network;
  bool grow = false;
  std::filesystem::path model;  // load instead of train when set
  nn::TrainConfig training;

  SplitSize slo_training{400, 400};
  SloGridSpec slo_grid;

  BootstrapConfig bootstrap;
  std::map<std::string, VerifyTarget> verify;

  bool uses_network() const;
  bool uses(const std::string& observer) const;
  /// Throws ConfigError with a field path on the first problem found.
  void validate() const;
};

/// Values that outrank the file. Filled from flags and from TASKIQ_* environment variables.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<Profile> profile;
  std::optional<std::filesystem::path> out;
};

/// TASKIQ_SEED, TASKIQ_THREADS, TASKIQ_PROFILE, TASKIQ_OUT.
ConfigOverrides overrides_from_env();
/// Flag values win over environment values.
ConfigOverrides merge_overrides(const ConfigOverrides& flags, const ConfigOverrides& env);

/// Parses YAML text. The profile (override > experiment.profile > desk) selects the
/// `profiles.<name>` overlay, which is deep-merged over the document before parsing.
ExperimentConfig parse_config(const std::string& yaml_text, const ConfigOverrides& overrides = {},
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

/// Fully explicit YAML (no preset lookups, no overlay) that parses back to the same config.
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace taskiq
