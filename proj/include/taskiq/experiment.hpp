#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "taskiq/config.hpp"
#include "taskiq/dataset.hpp"
#include "taskiq/eroc.hpp"
#include "taskiq/nn/network.hpp"
#include "taskiq/observers.hpp"

namespace taskiq {

inline constexpr const char* kToolVersion = "0.3.0";

/// A pipeline stage could not find what an earlier stage should have produced.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hex SHA-1 of "blob <size>\0" + bytes, the identifier git gives a file with this content.
std::string git_blob_sha1(std::string_view bytes);
std::string git_blob_sha1_file(const std::filesystem::path& file);

struct ObserverResult {
  std::string observer;
  AerocEstimate aeroc;
  double seconds = 0.0;
  std::size_t flagged = 0;  // chains outside the acceptance band
  /// Variance of U_hat over signal-present test images (NaN for observers without it).
  double utility_variance = std::numeric_limits<double>::quiet_NaN();
};

struct ResultManifest {
  std::string tool_version = kToolVersion;
  std::string config_hash;  // git blob hash of the resolved config text
  std::string resolved_config;
  std::map<std::string, std::string> input_hashes;   // artifact name -> git blob hash
  std::map<std::string, std::string> output_hashes;  // file name -> git blob hash
  std::vector<ObserverResult> observers;
  double runtime_seconds = 0.0;

  std::string to_json() const;
  static ResultManifest from_json(const std::string& text);
  const ObserverResult* find(const std::string& observer) const;
};

/// Human-readable list of what `run_experiment` would do.
std::string execution_plan(const ExperimentConfig& cfg);

// ---- stages -------------------------------------------------------------------------

/// Split datasets, each from its own child stream of the experiment seed.
Dataset make_test_set(const ExperimentConfig& cfg);
Dataset make_train_set(const ExperimentConfig& cfg);
Dataset make_validation_set(const ExperimentConfig& cfg);

struct TrainedModel {
  nn::MultiTaskNet<float> net;
  nn::TrainHistory history;
  std::vector<nn::GrowthStep> growth;
};
/// Trains (or grows) the network described by the config.
TrainedModel train_model(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Everything an observer may need besides the image.
struct ObserverContext {
  const ExperimentConfig* cfg = nullptr;
  const nn::MultiTaskNet<float>* net = nullptr;  // hybrid, sub-ideal
  const SloModel* slo = nullptr;                 // slo
};

struct ScoredObserver {
  std::vector<ScoreRow> rows;
  ObserverResult result;
};

/// Scores every test image with one observer and computes its AEROC.
ScoredObserver score_observer(const std::string& observer, const Dataset& test, const ObserverContext& ctx);

/// Full pipeline. Outputs go to `<out>.partial`, which is renamed to `out` on success and
/// removed on failure.
ResultManifest run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct VerifyLine {
  std::string observer;
  double measured = 0.0;
  double target = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};
std::vector<VerifyLine> verify_results(const ExperimentConfig& cfg, const ResultManifest& manifest);

/// Plain-text table with one row per run and one column per observer.
std::string report_table(const std::vector<std::pair<std::string, ResultManifest>>& runs);
/// gnuplot script drawing every curve_<observer>.csv found in the run directories.
std::string gnuplot_script(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace taskiq
