#include "taskiq/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "taskiq/nn/model_io.hpp"
#include "taskiq/nn/train.hpp"

namespace taskiq {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw StageError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
}

std::uint64_t observer_code(const std::string& name) {
  const auto& names = known_observers();
  return static_cast<std::uint64_t>(std::find(names.begin(), names.end(), name) - names.begin()) + 1;
}

Rng root_rng(const ExperimentConfig& cfg) {
  if (!cfg.seed) throw ConfigError("experiment.seed", "required");
  return Rng(*cfg.seed);
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string git_blob_sha1(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

std::string git_blob_sha1_file(const fs::path& file) { return git_blob_sha1(read_file(file)); }

// ---- manifest -----------------------------------------------------------------------

std::string ResultManifest::to_json() const {
  json j;
  j["tool_version"] = tool_version;
  j["config_hash"] = config_hash;
  j["resolved_config"] = resolved_config;
  j["hypothesis_priors"] = "P(H0) = P(H1) = 0.5; network likelihood ratios use the odds identity p/(1-p)";
  j["inputs"] = input_hashes;
  j["outputs"] = output_hashes;
  json obs = json::array();
  for (const auto& o : observers) {
    json r;
    r["observer"] = o.observer;
    r["aeroc"] = json::parse(aeroc_to_json(o.aeroc));
    r["seconds"] = o.seconds;
    r["flagged_chains"] = o.flagged;
    r["utility_variance"] = nullable(o.utility_variance);
    obs.push_back(r);
  }
  j["observers"] = obs;
  j["runtime_seconds"] = runtime_seconds;
  return j.dump(2) + "\n";
}

ResultManifest ResultManifest::from_json(const std::string& text) {
  ResultManifest m;
  try {
    const json j = json::parse(text);
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.resolved_config = j.at("resolved_config").get<std::string>();
    m.input_hashes = j.at("inputs").get<std::map<std::string, std::string>>();
    m.output_hashes = j.at("outputs").get<std::map<std::string, std::string>>();
    for (const auto& r : j.at("observers")) {
      ObserverResult o;
      o.observer = r.at("observer").get<std::string>();
      o.aeroc = aeroc_from_json(r.at("aeroc").dump());
      o.seconds = r.at("seconds").get<double>();
      o.flagged = r.at("flagged_chains").get<std::size_t>();
      const auto& uv = r.at("utility_variance");
      if (!uv.is_null()) o.utility_variance = uv.get<double>();
      m.observers.push_back(o);
    }
    m.runtime_seconds = j.at("runtime_seconds").get<double>();
  } catch (const json::exception& e) {
    throw StageError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

const ObserverResult* ResultManifest::find(const std::string& observer) const {
  for (const auto& o : observers) {
    if (o.observer == observer) return &o;
  }
  return nullptr;
}

// ---- plan ---------------------------------------------------------------------------

std::string execution_plan(const ExperimentConfig& cfg) {
  std::ostringstream os;
  const auto& t = cfg.task;
  os << "experiment " << cfg.name << " (profile " << to_string(cfg.profile) << ", seed " << *cfg.seed << ", "
     << cfg.threads << " thread" << (cfg.threads == 1 ? "" : "s") << ")\n";
  os << "task: " << cfg.preset << ", " << t.system.grid_width << "x" << t.system.grid_height << " px, theta dim "
     << t.theta_dim() << ", utility " << t.utility.to_string() << "\n";
  int step = 1;
  os << step++ << ". generate test set: " << cfg.test.present << " present + " << cfg.test.absent << " absent\n";
  if (cfg.uses_network()) {
    if (!cfg.model.empty()) {
      os << step++ << ". load network from " << cfg.model.string() << "\n";
    } else {
      os << step++ << ". generate training set " << cfg.train.present << " + " << cfg.train.absent
         << (cfg.training.semi_online ? " (noiseless, fresh noise per draw)" : "") << ", validation set "
         << cfg.validation.present << " + " << cfg.validation.absent << "\n";
      os << step++ << ". " << (cfg.grow ? "grow and train" : "train") << " network: " << cfg.network.shared_layers
         << " shared + " << cfg.network.estimation_layers << " estimation conv layers, " << cfg.network.filters
         << " filters, " << cfg.training.n_batches << " mini-batches of " << cfg.training.n_present << " + "
         << cfg.training.n_absent << "\n";
    }
  }
  if (cfg.uses("slo"))
    os << step++ << ". build SLO from " << cfg.slo_training.present << " + " << cfg.slo_training.absent
       << " noiseless images\n";
  for (const auto& o : cfg.observers) {
    os << step++ << ". score " << o;
    if (o == "hybrid" && t.utility.kind() != UtilityFn::Kind::constant)
      os << " (posterior chain " << cfg.chain.n_samples << " samples, burn-in " << cfg.chain.burn_in << ")";
    if (o == "mcmc-io")
      os << " (posterior chains " << cfg.chain.n_samples << ", ratio samples " << cfg.ratio_samples << ")";
    os << ", EROC curve, AEROC with " << cfg.bootstrap.resamples << " bootstrap resamples\n";
  }
  os << step++ << ". write outputs to " << cfg.out.string() << "\n";
  for (const auto& [obs, v] : cfg.verify)
    os << "verify: " << obs << " AEROC " << v.aeroc << " +/- " << v.tolerance << "\n";
  return os.str();
}

// ---- stages -------------------------------------------------------------------------

Dataset make_test_set(const ExperimentConfig& cfg) {
  return generate_dataset(cfg.task, cfg.test.present, cfg.test.absent, root_rng(cfg).split(stream::kTest), false,
                          cfg.threads);
}

Dataset make_train_set(const ExperimentConfig& cfg) {
  return generate_dataset(cfg.task, cfg.train.present, cfg.train.absent, root_rng(cfg).split(stream::kDataset),
                          cfg.training.semi_online, cfg.threads);
}

Dataset make_validation_set(const ExperimentConfig& cfg) {
  return generate_dataset(cfg.task, cfg.validation.present, cfg.validation.absent,
                          root_rng(cfg).split(stream::kValidation), false, cfg.threads);
}

TrainedModel train_model(const ExperimentConfig& cfg, std::ostream* log) {
  const auto t0 = Clock::now();
  const Dataset train_set = make_train_set(cfg);
  const Dataset validation = make_validation_set(cfg);
  if (log) *log << "generated " << train_set.size() << " training and " << validation.size() << " validation images\n";
  TrainedModel out;
  if (cfg.grow) {
    nn::GrowthResult g = nn::grow_architecture(cfg.network, train_set, validation, cfg.task, cfg.training);
    out.net = std::move(g.net);
    out.history = std::move(g.history);
    out.growth = std::move(g.audit);
  } else {
    out.net = nn::MultiTaskNet<float>(cfg.network);
    Rng init = root_rng(cfg).split(stream::kInit);
    out.net.initialize(init);
    out.history = nn::train(out.net, train_set, validation, cfg.task, cfg.training);
  }
  if (log) {
    *log << "trained in " << std::fixed << std::setprecision(1) << seconds_since(t0) << " s";
    if (!out.history.entries.empty())
      *log << std::setprecision(4) << ", validation detection loss " << out.history.final_val_detection()
           << ", estimation loss " << out.history.final_val_estimation();
    *log << "\n" << std::defaultfloat;
  }
  return out;
}

ScoredObserver score_observer(const std::string& observer, const Dataset& test, const ObserverContext& ctx) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const TaskSpec& task = cfg.task;
  const auto t0 = Clock::now();
  const Rng obs_rng = root_rng(cfg).split(stream::kObserver).split(observer_code(observer));

  std::vector<double> utility_mean(test.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<char> flagged(test.size(), 0);
  std::vector<nn::MultiTaskNet<float>::Prediction> predictions;
  std::optional<AnalyticIo> analytic;

  if (observer == "hybrid" || observer == "sub-ideal") {
    if (ctx.net == nullptr) throw StageError(observer + " needs a trained network (train first or set network.model)");
    std::vector<const Image*> ptrs;
    ptrs.reserve(test.size());
    for (const auto& im : test.images) ptrs.push_back(&im.pixels);
    predictions = ctx.net->predict(ptrs);
  } else if (observer == "analytic") {
    analytic.emplace(task);
  } else if (observer == "slo") {
    if (ctx.slo == nullptr) throw StageError("slo needs a built SLO model");
  }

  HybridConfig hcfg;
  hcfg.chain = cfg.chain;
  hcfg.proposal = cfg.proposal;
  McmcIoConfig mcfg;
  mcfg.estimate_chain = cfg.chain;
  mcfg.utility_chain = cfg.chain;
  mcfg.ratio_chain.n_samples = cfg.ratio_samples;
  mcfg.ratio_chain.burn_in = cfg.ratio_burn_in;
  mcfg.proposal = cfg.proposal;

  ObserverFn fn = [&](std::size_t id, const Image& g) -> ObserverOutput {
    ObserverOutput o;
    Rng rng = obs_rng.split(id);
    if (observer == "analytic") {
      o = (*analytic)(g);
    } else if (observer == "sub-ideal") {
      o = sub_ideal_no(predictions[id].posterior, predictions[id].estimate);
    } else if (observer == "hybrid") {
      o = hybrid_io(g, predictions[id].posterior, predictions[id].estimate, task, hcfg, rng);
    } else if (observer == "mcmc-io") {
      o = mcmc_io(g, task, mcfg, rng);
    } else if (observer == "slo") {
      o = slo(g, *ctx.slo);
    } else {
      throw ConfigError("observers", "unknown observer '" + observer + "'");
    }
    utility_mean[id] = o.utility_mean;
    flagged[id] = o.flagged ? 1 : 0;
    return o;
  };

  ScoredObserver out;
  out.rows = score_dataset(test, fn, task.utility, cfg.threads);
  const ErocInputs in = eroc_inputs(out.rows);
  out.result.observer = observer;
  out.result.aeroc = aeroc(in.present, in.absent, cfg.bootstrap);
  out.result.flagged = static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), 1));

  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.images[i].label != 1 || !std::isfinite(utility_mean[i])) continue;
    sum += utility_mean[i];
    sum_sq += utility_mean[i] * utility_mean[i];
    ++n;
  }
  if (n > 1) {
    const double mean = sum / static_cast<double>(n);
    out.result.utility_variance = std::max(0.0, (sum_sq - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1));
  }
  out.result.seconds = seconds_since(t0);
  return out;
}

// ---- pipeline -----------------------------------------------------------------------

namespace {

json training_manifest(const ExperimentConfig& cfg, const TrainedModel& m) {
  json j;
  j["seed"] = *cfg.seed;
  j["architecture"] = {{"shared_layers", m.net.architecture().shared_layers},
                       {"estimation_layers", m.net.architecture().estimation_layers},
                       {"filters", m.net.architecture().filters},
                       {"kernel_px", m.net.architecture().kernel}};
  json hist = json::array();
  for (const auto& e : m.history.entries)
    hist.push_back({{"batch", e.batch},
                    {"train_detection", e.train_detection},
                    {"train_estimation", e.train_estimation},
                    {"val_detection", e.val_detection},
                    {"val_estimation", e.val_estimation}});
  j["history"] = hist;
  json growth = json::array();
  for (const auto& g : m.growth)
    growth.push_back({{"block", g.block},
                      {"shared_layers", g.shared_layers},
                      {"estimation_layers", g.estimation_layers},
                      {"val_loss", g.val_loss},
                      {"improvement", g.improvement},
                      {"accepted", g.accepted}});
  j["growth"] = growth;
  return j;
}

std::string summary_text(const ExperimentConfig& cfg, const ResultManifest& m) {
  std::ostringstream os;
  os << cfg.name << " (" << cfg.preset << ", profile " << to_string(cfg.profile) << ", seed " << *cfg.seed
     << ", utility " << cfg.task.utility.to_string() << ")\n";
  os << std::left << std::setw(12) << "observer" << std::right << std::setw(9) << "AEROC" << std::setw(20)
     << "90% CI" << std::setw(10) << "flagged" << std::setw(12) << "var U(g)" << std::setw(10) << "seconds" << "\n";
  os << std::fixed;
  for (const auto& o : m.observers) {
    std::ostringstream ci;
    ci << std::fixed << std::setprecision(4) << "[" << o.aeroc.ci_lo << ", " << o.aeroc.ci_hi << "]";
    os << std::left << std::setw(12) << o.observer << std::right << std::setprecision(4) << std::setw(9)
       << o.aeroc.value << std::setw(20) << ci.str() << std::setw(10) << o.flagged << std::setw(12);
    if (std::isfinite(o.utility_variance)) os << o.utility_variance;
    else os << "-";
    os << std::setprecision(1) << std::setw(10) << o.seconds << "\n";
  }
  os << "runtime " << std::setprecision(1) << m.runtime_seconds << " s\n";
  return os.str();
}

}  // namespace

ResultManifest run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto t0 = Clock::now();
  const fs::path out = cfg.out;
  const fs::path partial = fs::path(out.string() + ".partial");
  if (fs::exists(out) && !fs::is_empty(out) && !fs::exists(out / "manifest.json"))
    throw StageError("output directory '" + out.string() + "' exists and was not written by this tool");
  fs::remove_all(partial);
  fs::create_directories(partial);

  try {
    ResultManifest manifest;
    manifest.resolved_config = serialize_config(cfg);
    manifest.config_hash = git_blob_sha1(manifest.resolved_config);
    write_file(partial / "config.resolved.yaml", manifest.resolved_config);

    const Dataset test = make_test_set(cfg);
    write_dataset(partial / "test.tiqd", test);
    manifest.input_hashes["test.tiqd"] = git_blob_sha1_file(partial / "test.tiqd");
    if (log) *log << "generated " << test.size() << " test images\n";

    ObserverContext ctx;
    ctx.cfg = &cfg;
    std::optional<nn::MultiTaskNet<float>> net;
    if (cfg.uses_network()) {
      if (!cfg.model.empty()) {
        net = nn::load_model(cfg.model);
        manifest.input_hashes["model"] = git_blob_sha1_file(cfg.model);
        if (log) *log << "loaded network from " << cfg.model.string() << "\n";
      } else {
        TrainedModel m = train_model(cfg, log);
        net = std::move(m.net);
        nn::save_model(partial / "model.tiqm", *net);
        nn::save_model_manifest(partial / "model.tiqm", training_manifest(cfg, m).dump(2) + "\n");
        manifest.input_hashes["model.tiqm"] = git_blob_sha1_file(partial / "model.tiqm");
      }
      ctx.net = &*net;
    }
    std::optional<SloModel> slo_model;
    if (cfg.uses("slo")) {
      const auto ts = Clock::now();
      slo_model = build_slo(cfg.task, cfg.slo_training.present, cfg.slo_training.absent,
                            root_rng(cfg).split(stream::kSlo), cfg.slo_grid, cfg.threads);
      save_slo(partial / "slo.tiqs", *slo_model);
      manifest.input_hashes["slo.tiqs"] = git_blob_sha1_file(partial / "slo.tiqs");
      ctx.slo = &*slo_model;
      if (log)
        *log << "built SLO over " << slo_model->n_grid() << " grid points in " << std::fixed << std::setprecision(1)
             << seconds_since(ts) << " s (" << slo_model->eigen_clamped << " eigenvalues floored)\n"
             << std::defaultfloat;
    }

    for (const auto& obs : cfg.observers) {
      ScoredObserver s = score_observer(obs, test, ctx);
      const std::string scores = "scores_" + obs + ".csv";
      const std::string curve = "curve_" + obs + ".csv";
      const std::string result = "aeroc_" + obs + ".json";
      write_scores_csv(partial / scores, s.rows, cfg.task.theta_dim());
      const ErocInputs in = eroc_inputs(s.rows);
      write_curve_csv(partial / curve, eroc_curve(in.present, in.absent));
      write_file(partial / result, aeroc_to_json(s.result.aeroc) + "\n");
      for (const auto& f : {scores, curve, result}) manifest.output_hashes[f] = git_blob_sha1_file(partial / f);
      if (log)
        *log << obs << ": AEROC " << std::fixed << std::setprecision(4) << s.result.aeroc.value << " ["
             << s.result.aeroc.ci_lo << ", " << s.result.aeroc.ci_hi << "] in " << std::setprecision(1)
             << s.result.seconds << " s" << (s.result.flagged ? ", " + std::to_string(s.result.flagged) + " flagged chains" : "")
             << "\n" << std::defaultfloat;
      manifest.observers.push_back(s.result);
    }

    manifest.runtime_seconds = seconds_since(t0);
    write_file(partial / "summary.txt", summary_text(cfg, manifest));
    write_file(partial / "manifest.json", manifest.to_json());

    fs::remove_all(out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    fs::rename(partial, out);
    return manifest;
  } catch (...) {
    std::error_code ec;
    fs::remove_all(partial, ec);
    throw;
  }
}

std::vector<VerifyLine> verify_results(const ExperimentConfig& cfg, const ResultManifest& manifest) {
  std::vector<VerifyLine> lines;
  for (const auto& [obs, target] : cfg.verify) {
    VerifyLine l;
    l.observer = obs;
    l.target = target.aeroc;
    l.tolerance = target.tolerance;
    const ObserverResult* r = manifest.find(obs);
    if (r == nullptr) throw StageError("verify: no result for observer '" + obs + "'");
    l.measured = r->aeroc.value;
    l.pass = std::abs(l.measured - l.target) <= l.tolerance;
    lines.push_back(l);
  }
  return lines;
}

std::string report_table(const std::vector<std::pair<std::string, ResultManifest>>& runs) {
  std::vector<std::string> columns;
  for (const auto& name : known_observers()) {
    for (const auto& [run, m] : runs) {
      if (m.find(name) != nullptr) {
        columns.push_back(name);
        break;
      }
    }
  }
  std::size_t run_w = 3;
  for (const auto& [run, m] : runs) run_w = std::max(run_w, run.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(run_w) + 2) << "run";
  for (const auto& c : columns) os << std::setw(26) << c;
  os << "\n" << std::fixed << std::setprecision(3);
  for (const auto& [run, m] : runs) {
    os << std::left << std::setw(static_cast<int>(run_w) + 2) << run;
    for (const auto& c : columns) {
      std::ostringstream cell;
      if (const ObserverResult* r = m.find(c)) {
        cell << std::fixed << std::setprecision(3) << r->aeroc.value << " [" << r->aeroc.ci_lo << ", "
             << r->aeroc.ci_hi << "]";
      } else {
        cell << "-";
      }
      os << std::setw(26) << cell.str();
    }
    os << "\n";
  }
  return os.str();
}

std::string gnuplot_script(const std::vector<fs::path>& run_dirs) {
  std::ostringstream os;
  os << "set datafile separator ','\n"
     << "set key outside right\n"
     << "set xlabel 'FPF'\n"
     << "set ylabel 'expected utility of true positives'\n"
     << "set xrange [0:1]\n"
     << "plot \\\n";
  bool first = true;
  for (const auto& dir : run_dirs) {
    for (const auto& name : known_observers()) {
      const fs::path curve = dir / ("curve_" + name + ".csv");
      if (!fs::exists(curve)) continue;
      if (!first) os << ", \\\n";
      first = false;
      os << "  '" << curve.string() << "' skip 1 using 2:3 with steps title '" << dir.filename().string() << " "
         << name << "'";
    }
  }
  if (first) os << "  NaN notitle";
  os << "\n";
  return os.str();
}

}  // namespace taskiq
