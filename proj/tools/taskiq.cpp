// taskiq: experiment driver for detection-estimation observer studies.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "taskiq/config.hpp"
#include "taskiq/dataset.hpp"
#include "taskiq/experiment.hpp"
#include "taskiq/nn/model_io.hpp"

namespace fs = std::filesystem;
using namespace taskiq;

namespace {

enum Exit { kOk = 0, kConfigError = 2, kRuntimeError = 3, kVerifyMiss = 4 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string profile;
  std::string out;
  bool dry_run = false;

  ConfigOverrides overrides() const {
    ConfigOverrides f;
    f.seed = seed;
    f.threads = threads;
    if (!profile.empty()) f.profile = parse_profile(profile);
    if (!out.empty()) f.out = out;
    return merge_overrides(f, overrides_from_env());
  }
};

void add_common(CLI::App* app, CommonFlags& f, bool needs_config) {
  auto* c = app->add_option("--config", f.config, "experiment file (YAML)");
  if (needs_config) c->required()->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "master seed (overrides TASKIQ_SEED and the file)");
  app->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
  app->add_option("--profile", f.profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app->add_option("--out", f.out, "output path");
  app->add_flag("--dry-run", f.dry_run, "validate and print the plan only");
}

ExperimentConfig load(const CommonFlags& f) { return load_config(f.config, f.overrides()); }

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw StageError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_generate(const CommonFlags& f, const std::string& preset, std::size_t count, bool noiseless, bool sidecar) {
  ExperimentConfig cfg;
  if (!f.config.empty()) {
    cfg = load(f);
    if (count > 0) cfg.test = {count, count};
  } else {
    if (preset.empty()) throw ConfigError("--preset", "give --preset or --config");
    const ConfigOverrides o = f.overrides();
    cfg.profile = o.profile.value_or(Profile::desk);
    cfg.preset = preset;
    try {
      cfg.task = preset_task(preset, cfg.profile);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("--preset", e.what());
    }
    cfg.seed = o.seed;
    if (!cfg.seed) {
      cfg.seed = 0;
      std::cerr << "note: no seed given, using 0\n";
    }
    cfg.threads = o.threads.value_or(1);
    const std::size_t n = count > 0 ? count : 100;
    cfg.test = {n, n};
  }
  const fs::path out = f.out.empty() ? fs::path(cfg.preset + ".tiqd") : fs::path(f.out);
  if (f.dry_run) {
    std::cout << "generate " << cfg.test.present << " present + " << cfg.test.absent << " absent " << cfg.preset
              << " images (seed " << *cfg.seed << ") -> " << out.string() << "\n";
    return kOk;
  }
  Dataset d = noiseless ? generate_dataset(cfg.task, cfg.test.present, cfg.test.absent,
                                           Rng(*cfg.seed).split(stream::kTest), true, cfg.threads)
                        : make_test_set(cfg);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_dataset(out, d);
  if (sidecar) write_dataset_sidecar(fs::path(out.string() + ".json"), d);
  std::cout << "wrote " << d.n_present() << " + " << d.n_absent() << " images to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const CommonFlags& f) {
  ExperimentConfig cfg = load(f);
  if (!cfg.uses_network()) throw ConfigError("observers", "no network observer listed; nothing to train");
  if (!cfg.model.empty()) throw ConfigError("network.model", "set; the model is loaded, not trained");
  const fs::path out = f.out.empty() ? cfg.out / "model.tiqm" : fs::path(f.out);
  if (f.dry_run) {
    std::cout << execution_plan(cfg) << "train only, model -> " << out.string() << "\n";
    return kOk;
  }
  TrainedModel m = train_model(cfg, &std::cerr);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  nn::save_model(out, m.net);
  std::ostringstream js;
  js << "{\n  \"seed\": " << *cfg.seed << ",\n  \"config_hash\": \"" << git_blob_sha1(serialize_config(cfg))
     << "\",\n  \"batches\": " << cfg.training.n_batches << ",\n  \"final_val_detection\": "
     << m.history.final_val_detection() << ",\n  \"final_val_estimation\": " << m.history.final_val_estimation()
     << "\n}\n";
  nn::save_model_manifest(out, js.str());
  std::cout << "wrote " << out.string() << "\n";
  return kOk;
}

int cmd_score(const CommonFlags& f, std::vector<std::string> observers, const std::string& data_path,
              const std::string& model_path) {
  ExperimentConfig cfg = load(f);
  if (!model_path.empty()) cfg.model = model_path;
  if (observers.empty()) observers = cfg.observers;
  const fs::path out = f.out.empty() ? cfg.out : fs::path(f.out);
  if (f.dry_run) {
    std::cout << "score " << observers.size() << " observer(s) on "
              << (data_path.empty() ? "a generated test set" : data_path) << " -> " << out.string() << "\n";
    return kOk;
  }
  Dataset test;
  if (data_path.empty()) {
    test = make_test_set(cfg);
  } else {
    if (!fs::exists(data_path)) throw StageError("no dataset at '" + data_path + "'; run `taskiq generate` first");
    test = read_dataset(data_path);
  }
  if (test.width != cfg.task.system.grid_width || test.height != cfg.task.system.grid_height)
    throw StageError("dataset grid does not match the task grid in the config");
  ObserverContext ctx;
  ctx.cfg = &cfg;
  std::optional<nn::MultiTaskNet<float>> net;
  std::optional<SloModel> slo_model;
  for (const auto& o : observers) {
    if ((o == "hybrid" || o == "sub-ideal") && !net) {
      if (cfg.model.empty()) throw StageError(o + " needs a trained model; run `taskiq train` and pass --model");
      if (!fs::exists(cfg.model)) throw StageError("no model at '" + cfg.model.string() + "'; run `taskiq train` first");
      net = nn::load_model(cfg.model);
      ctx.net = &*net;
    }
    if (o == "slo" && !slo_model) {
      slo_model = build_slo(cfg.task, cfg.slo_training.present, cfg.slo_training.absent,
                            Rng(*cfg.seed).split(stream::kSlo), cfg.slo_grid, cfg.threads);
      ctx.slo = &*slo_model;
    }
  }
  fs::create_directories(out);
  for (const auto& o : observers) {
    ScoredObserver s = score_observer(o, test, ctx);
    const fs::path p = out / ("scores_" + o + ".csv");
    write_scores_csv(p, s.rows, cfg.task.theta_dim());
    std::cout << o << ": wrote " << p.string() << " (AEROC " << std::fixed << std::setprecision(4)
              << s.result.aeroc.value << ")\n";
  }
  return kOk;
}

int cmd_eroc(const CommonFlags& f, const std::string& scores_path, const std::string& utility,
             std::size_t resamples, double level) {
  if (!fs::exists(scores_path)) throw StageError("no score table at '" + scores_path + "'; run `taskiq score` first");
  std::vector<ScoreRow> rows = read_scores_csv(scores_path);
  if (!utility.empty()) {
    UtilityFn u = UtilityFn::constant();
    try {
      u = UtilityFn::parse(utility);
    } catch (const std::exception& e) {
      throw ConfigError("--utility", e.what());
    }
    rescore_utility(rows, u);
  }
  BootstrapConfig bc;
  bc.resamples = resamples;
  bc.level = level;
  const ConfigOverrides o = f.overrides();
  bc.seed = Rng(o.seed.value_or(0)).split(stream::kBootstrap).key();
  bc.threads = o.threads.value_or(1);
  const ErocInputs in = eroc_inputs(rows);
  if (in.present.empty() || in.absent.empty()) throw StageError("score table needs both signal-present and signal-absent rows");
  const fs::path src(scores_path);
  std::string stem = src.stem().string();
  if (stem.rfind("scores_", 0) == 0) stem = stem.substr(7);
  const fs::path dir = f.out.empty() ? src.parent_path() : fs::path(f.out);
  if (f.dry_run) {
    std::cout << "EROC of " << rows.size() << " rows -> " << (dir / ("curve_" + stem + ".csv")).string() << "\n";
    return kOk;
  }
  if (!dir.empty()) fs::create_directories(dir);
  write_curve_csv(dir / ("curve_" + stem + ".csv"), eroc_curve(in.present, in.absent));
  const AerocEstimate est = aeroc(in.present, in.absent, bc);
  write_text(dir / ("aeroc_" + stem + ".json"), aeroc_to_json(est) + "\n");
  const bool roc = !utility.empty() && UtilityFn::parse(utility).kind() == UtilityFn::Kind::constant;
  std::cout << (roc ? "AUC " : "AEROC ") << std::fixed << std::setprecision(4) << est.value << " [" << est.ci_lo
            << ", " << est.ci_hi << "] (" << est.n_present << " present, " << est.n_absent << " absent)\n";
  return kOk;
}

int cmd_report(const CommonFlags& f, const std::vector<std::string>& runs) {
  std::vector<std::pair<std::string, ResultManifest>> loaded;
  std::vector<fs::path> dirs;
  for (const auto& r : runs) {
    const fs::path m = fs::path(r) / "manifest.json";
    if (!fs::exists(m)) throw StageError("no manifest in '" + r + "'; run `taskiq run` for it first");
    loaded.emplace_back(fs::path(r).filename().string(), ResultManifest::from_json(read_text(m)));
    dirs.emplace_back(r);
  }
  const std::string table = report_table(loaded);
  std::cout << table;
  if (!f.out.empty() && !f.dry_run) {
    write_text(fs::path(f.out) / "report.txt", table);
    write_text(fs::path(f.out) / "eroc.gp", gnuplot_script(dirs));
    std::cout << "wrote " << (fs::path(f.out) / "report.txt").string() << " and eroc.gp\n";
  }
  return kOk;
}

int cmd_run(const CommonFlags& f, bool verify) {
  const ExperimentConfig cfg = load(f);
  if (f.dry_run) {
    std::cout << execution_plan(cfg);
    return kOk;
  }
  const ResultManifest m = run_experiment(cfg, &std::cerr);
  std::cout << read_text(cfg.out / "summary.txt");
  if (!verify) return kOk;
  if (cfg.verify.empty()) throw ConfigError("verify", "no targets in the config");
  bool ok = true;
  for (const auto& l : verify_results(cfg, m)) {
    std::cout << (l.pass ? "PASS " : "MISS ") << l.observer << ": AEROC " << std::fixed << std::setprecision(4)
              << l.measured << ", target " << l.target << " +/- " << l.tolerance << "\n";
    ok = ok && l.pass;
  }
  return ok ? kOk : kVerifyMiss;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"taskiq: detection-estimation observer experiments"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, score_f, eroc_f, report_f, run_f, verify_f;

  std::string preset;
  std::size_t count = 0;
  bool noiseless = false, sidecar = false;
  auto* gen = app.add_subcommand("generate", "write a dataset container");
  add_common(gen, gen_f, false);
  gen->add_option("--preset", preset, "bke, lb or clb")->check(CLI::IsMember({"bke", "lb", "clb"}));
  gen->add_option("--count", count, "images per class");
  gen->add_flag("--noiseless", noiseless, "omit measurement noise");
  gen->add_flag("--sidecar", sidecar, "also write per-image JSON parameters");

  auto* train = app.add_subcommand("train", "train the multi-task network");
  add_common(train, train_f, true);

  std::vector<std::string> observers;
  std::string data, model;
  auto* score = app.add_subcommand("score", "score a dataset with one or more observers");
  add_common(score, score_f, true);
  score->add_option("--observer", observers, "observer name (repeatable)")
      ->check(CLI::IsMember(known_observers()));
  score->add_option("--data", data, "dataset container (generated from the config when omitted)");
  score->add_option("--model", model, "trained network");

  std::string scores, utility;
  std::size_t resamples = 2000;
  double level = 0.90;
  auto* eroc = app.add_subcommand("eroc", "EROC curve and AEROC of a score table");
  add_common(eroc, eroc_f, false);
  eroc->add_option("--scores", scores, "scores CSV")->required();
  eroc->add_option("--utility", utility, "re-evaluate utilities, e.g. constant, gaussian:3, quadratic:200, l1:20");
  eroc->add_option("--resamples", resamples, "bootstrap resamples");
  eroc->add_option("--level", level, "interval level");

  std::vector<std::string> runs;
  auto* report = app.add_subcommand("report", "comparison table over finished runs");
  add_common(report, report_f, false);
  report->add_option("runs", runs, "run directories")->required();

  auto* run = app.add_subcommand("run", "full pipeline");
  add_common(run, run_f, true);
  auto* verify = app.add_subcommand("verify", "full pipeline, then check AEROC targets");
  add_common(verify, verify_f, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) return cmd_generate(gen_f, preset, count, noiseless, sidecar);
    if (*train) return cmd_train(train_f);
    if (*score) return cmd_score(score_f, observers, data, model);
    if (*eroc) return cmd_eroc(eroc_f, scores, utility, resamples, level);
    if (*report) return cmd_report(report_f, runs);
    if (*run) return cmd_run(run_f, false);
    if (*verify) return cmd_run(verify_f, true);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
