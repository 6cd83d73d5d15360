#include "taskiq/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace taskiq {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_integral_v<T>) return "an integer";
  else if constexpr (std::is_floating_point_v<T>) return "a number";
  else return "a string";
}

template <class T>
T as(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) throw ConfigError(path, std::string("expected ") + type_name<T>());
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!n.Scalar().empty() && n.Scalar()[0] == '-') throw ConfigError(path, "must not be negative");
  }
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(path, std::string("expected ") + type_name<T>() + ", got '" + n.Scalar() + "'");
  }
}

void check_map(const YAML::Node& n, const std::string& path) {
  if (!n.IsMap()) throw ConfigError(path, "expected a mapping");
}

void check_keys(const YAML::Node& n, const std::string& path, std::initializer_list<const char*> allowed) {
  check_map(n, path);
  for (const auto& kv : n) {
    const std::string key = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      std::string list;
      for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
      throw ConfigError(join(path, key), "unknown key (expected one of: " + list + ")");
    }
  }
}

template <class T>
void read(const YAML::Node& parent, const std::string& path, const char* key, T& out) {
  const YAML::Node n = parent[key];
  if (n) out = as<T>(n, join(path, key));
}

Vec2 read_vec2(const YAML::Node& n, const std::string& path) {
  if (!n.IsSequence() || n.size() != 2) throw ConfigError(path, "expected a two-element list [x, y]");
  return {as<double>(n[0], path + "[0]"), as<double>(n[1], path + "[1]")};
}

/// Overlays `over` onto `base`: mappings merge key by key, everything else is replaced.
YAML::Node deep_merge(const YAML::Node& base, const YAML::Node& over) {
  if (!base || !base.IsMap() || !over.IsMap()) return YAML::Clone(over);
  YAML::Node out = YAML::Clone(base);
  for (const auto& kv : over) {
    const std::string key = kv.first.as<std::string>();
    out[key] = out[key] ? deep_merge(out[key], kv.second) : YAML::Clone(kv.second);
  }
  return out;
}

void parse_prior(const YAML::Node& n, const std::string& path, SignalPrior& prior) {
  check_keys(n, path, {"kind", "mean", "sd", "lo_px", "hi_px"});
  if (n["kind"]) {
    const std::string kind = as<std::string>(n["kind"], join(path, "kind"));
    if (kind == "gaussian-amplitude") prior.kind = SignalPrior::Kind::gaussian_amplitude;
    else if (kind == "uniform-location") prior.kind = SignalPrior::Kind::uniform_location;
    else if (kind == "uniform-width") prior.kind = SignalPrior::Kind::uniform_width;
    else throw ConfigError(join(path, "kind"), "unknown prior '" + kind + "' (gaussian-amplitude, uniform-location, uniform-width)");
  }
  read(n, path, "mean", prior.mean);
  read(n, path, "sd", prior.sd);
  if (prior.kind == SignalPrior::Kind::uniform_location) {
    if (n["lo_px"]) prior.lo = read_vec2(n["lo_px"], join(path, "lo_px"));
    if (n["hi_px"]) prior.hi = read_vec2(n["hi_px"], join(path, "hi_px"));
  } else {
    if (n["lo_px"]) prior.lo = {as<double>(n["lo_px"], join(path, "lo_px")), 0.0};
    if (n["hi_px"]) prior.hi = {as<double>(n["hi_px"], join(path, "hi_px")), 0.0};
  }
}

void parse_background(const YAML::Node& n, const std::string& path, BackgroundModel& bg) {
  check_map(n, path);
  std::string kind = std::holds_alternative<LumpyModel>(bg) ? "lumpy" : std::holds_alternative<ClbModel>(bg) ? "clb" : "none";
  read(n, path, "kind", kind);
  if (kind == "none") {
    check_keys(n, path, {"kind"});
    bg = ZeroBackground{};
  } else if (kind == "lumpy") {
    check_keys(n, path, {"kind", "mean_count", "lump_amplitude", "lump_width_px"});
    LumpyModel m = std::holds_alternative<LumpyModel>(bg) ? std::get<LumpyModel>(bg) : LumpyModel{};
    read(n, path, "mean_count", m.mean_count);
    read(n, path, "lump_amplitude", m.lump_amplitude);
    read(n, path, "lump_width_px", m.lump_width);
    bg = m;
  } else if (kind == "clb") {
    check_keys(n, path, {"kind", "mean_clusters", "mean_blobs", "half_axis_x_px", "half_axis_y_px", "shape_exponent",
                         "decay_exponent", "cluster_spread_px"});
    ClbModel m = std::holds_alternative<ClbModel>(bg) ? std::get<ClbModel>(bg) : ClbModel{};
    read(n, path, "mean_clusters", m.mean_clusters);
    read(n, path, "mean_blobs", m.mean_blobs);
    read(n, path, "half_axis_x_px", m.half_axis_x);
    read(n, path, "half_axis_y_px", m.half_axis_y);
    read(n, path, "shape_exponent", m.shape_exponent);
    read(n, path, "decay_exponent", m.decay_exponent);
    read(n, path, "cluster_spread_px", m.cluster_spread);
    bg = m;
  } else {
    throw ConfigError(join(path, "kind"), "unknown background '" + kind + "' (none, lumpy, clb)");
  }
}

void parse_task(const YAML::Node& n, const std::string& path, Profile profile, ExperimentConfig& cfg) {
  check_keys(n, path, {"preset", "grid", "imaging", "signal", "background", "noise", "utility"});
  read(n, path, "preset", cfg.preset);
  if (cfg.preset == "custom") {
    cfg.task = TaskSpec{};
    cfg.task.name = "custom";
  } else {
    try {
      cfg.task = preset_task(cfg.preset, profile);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(join(path, "preset"), e.what());
    }
  }
  TaskSpec& t = cfg.task;
  if (const auto g = n["grid"]) {
    const std::string p = join(path, "grid");
    check_keys(g, p, {"width_px", "height_px"});
    read(g, p, "width_px", t.system.grid_width);
    read(g, p, "height_px", t.system.grid_height);
  }
  if (const auto im = n["imaging"]) {
    const std::string p = join(path, "imaging");
    check_keys(im, p, {"prf_height", "prf_width_px"});
    read(im, p, "prf_height", t.system.height);
    read(im, p, "prf_width_px", t.system.prf_width);
  }
  if (const auto s = n["signal"]) {
    const std::string p = join(path, "signal");
    check_keys(s, p, {"amplitude", "width_px", "center_px", "prior"});
    read(s, p, "amplitude", t.signal.base.amplitude);
    read(s, p, "width_px", t.signal.base.width);
    if (s["center_px"]) t.signal.base.center = read_vec2(s["center_px"], join(p, "center_px"));
    if (s["prior"]) parse_prior(s["prior"], join(p, "prior"), t.signal);
  }
  if (n["background"]) parse_background(n["background"], join(path, "background"), t.background);
  if (const auto nz = n["noise"]) {
    const std::string p = join(path, "noise");
    check_keys(nz, p, {"sd"});
    read(nz, p, "sd", t.noise.sd);
  }
  if (n["utility"]) {
    const std::string text = as<std::string>(n["utility"], join(path, "utility"));
    try {
      t.utility = UtilityFn::parse(text);
    } catch (const std::exception& e) {
      throw ConfigError(join(path, "utility"), e.what());
    }
  }
}

void parse_split(const YAML::Node& n, const std::string& path, SplitSize& s) {
  check_keys(n, path, {"present", "absent"});
  read(n, path, "present", s.present);
  read(n, path, "absent", s.absent);
}

Profile parse_profile_at(const std::string& text, const std::string& path) {
  try {
    return parse_profile(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace

bool ExperimentConfig::uses(const std::string& observer) const {
  return std::find(observers.begin(), observers.end(), observer) != observers.end();
}

bool ExperimentConfig::uses_network() const { return uses("hybrid") || uses("sub-ideal"); }

void ExperimentConfig::validate() const {
  if (!seed) throw ConfigError("experiment.seed", "required (set it in the file, with --seed, or TASKIQ_SEED)");
  if (threads < 1) throw ConfigError("experiment.threads", "must be >= 1");
  if (name.empty()) throw ConfigError("experiment.name", "must not be empty");
  if (out.empty()) throw ConfigError("experiment.out", "must not be empty");
  try {
    task.system.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("task.imaging", e.what());
  }
  try {
    task.signal.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("task.signal.prior", e.what());
  }
  if (!(task.signal.base.width > 0.0)) throw ConfigError("task.signal.width_px", "must be > 0");
  if (!(task.noise.sd > 0.0)) throw ConfigError("task.noise.sd", "must be > 0");
  if (observers.empty()) throw ConfigError("observers", "list at least one observer");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < observers.size(); ++i) {
    const auto& o = observers[i];
    const std::string p = "observers[" + std::to_string(i) + "]";
    if (std::find(known_observers().begin(), known_observers().end(), o) == known_observers().end())
      throw ConfigError(p, "unknown observer '" + o + "' (analytic, hybrid, sub-ideal, mcmc-io, slo)");
    if (!seen.insert(o).second) throw ConfigError(p, "observer '" + o + "' listed twice");
  }
  if (test.present == 0 || test.absent == 0) throw ConfigError("data.test", "both classes need at least one image");
  if (uses("analytic") && !(task.amplitude_only() && task.background_known()))
    throw ConfigError("observers", "the analytic observer needs the known-background amplitude task");
  if (uses("mcmc-io")) {
    if (!(task.background_known() || task.is_lumpy()))
      throw ConfigError("observers", "mcmc-io needs a known or lumpy background");
    if (!posterior_mean_is_optimal(task))
      throw ConfigError("task.utility", "mcmc-io needs a quadratic utility (or the Gaussian utility on the known-background amplitude task)");
  }
  if (uses("hybrid") && !(task.background_known() || task.is_lumpy()) &&
      task.utility.kind() != UtilityFn::Kind::constant)
    throw ConfigError("observers", "hybrid needs a posterior chain, which this background does not support");
  if (chain.n_samples < 1) throw ConfigError("chain.samples", "must be >= 1");
  if (chain.thin < 1) throw ConfigError("chain.thin", "must be >= 1");
  if (ratio_samples < 1) throw ConfigError("likelihood_ratio.samples", "must be >= 1");
  if (proposal) {
    try {
      proposal->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("proposal", e.what());
    }
    if (proposal->dim() != task.theta_dim())
      throw ConfigError("proposal.sd", "needs " + std::to_string(task.theta_dim()) + " entries");
  }
  if (uses_network()) {
    try {
      network.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("network", e.what());
    }
    if (network.input_width != task.system.grid_width || network.input_height != task.system.grid_height)
      throw ConfigError("network", "input size must match the task grid");
    if (!model.empty()) {
      if (!std::filesystem::exists(model)) throw ConfigError("network.model", "file '" + model.string() + "' does not exist");
    } else {
      if (train.present == 0 || train.absent == 0) throw ConfigError("data.train", "network observers need training images of both classes");
      if (validation.present == 0 || validation.absent == 0)
        throw ConfigError("data.validation", "network observers need validation images of both classes");
      try {
        training.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError("training", e.what());
      }
    }
  }
  if (uses("slo") && (slo_training.present + slo_training.absent < 2))
    throw ConfigError("slo", "needs at least two noiseless training images");
  if (uses("slo") && slo_grid.scalar_points < 2) throw ConfigError("slo.scalar_points", "must be >= 2");
  if (bootstrap.resamples < 1) throw ConfigError("bootstrap.resamples", "must be >= 1");
  if (!(bootstrap.level > 0.0 && bootstrap.level < 1.0)) throw ConfigError("bootstrap.level", "must be in (0, 1)");
  for (const auto& [obs, v] : verify) {
    if (!uses(obs)) throw ConfigError("verify." + obs, "observer is not in the observer list");
    if (!(v.tolerance >= 0.0)) throw ConfigError("verify." + obs + ".tolerance", "must be >= 0");
  }
}

ConfigOverrides overrides_from_env() {
  ConfigOverrides o;
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  if (auto v = env("TASKIQ_SEED")) {
    try {
      std::size_t used = 0;
      o.seed = std::stoull(*v, &used);
      if (used != v->size() || v->front() == '-') throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("TASKIQ_SEED", "expected a non-negative integer, got '" + *v + "'");
    }
  }
  if (auto v = env("TASKIQ_THREADS")) {
    try {
      std::size_t used = 0;
      o.threads = std::stoi(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("TASKIQ_THREADS", "expected an integer, got '" + *v + "'");
    }
  }
  if (auto v = env("TASKIQ_PROFILE")) o.profile = parse_profile_at(*v, "TASKIQ_PROFILE");
  if (auto v = env("TASKIQ_OUT")) o.out = *v;
  return o;
}

ConfigOverrides merge_overrides(const ConfigOverrides& flags, const ConfigOverrides& env) {
  ConfigOverrides o = env;
  if (flags.seed) o.seed = flags.seed;
  if (flags.threads) o.threads = flags.threads;
  if (flags.profile) o.profile = flags.profile;
  if (flags.out) o.out = flags.out;
  return o;
}

ExperimentConfig parse_config(const std::string& yaml_text, const ConfigOverrides& overrides,
                              const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("", std::string("YAML syntax error: ") + e.what());
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  check_keys(root, "", {"experiment", "task", "data", "observers", "chain", "likelihood_ratio", "proposal", "network",
                        "training", "slo", "bootstrap", "verify", "profiles"});

  Profile profile = Profile::desk;
  if (root["experiment"] && root["experiment"]["profile"])
    profile = parse_profile_at(as<std::string>(root["experiment"]["profile"], "experiment.profile"), "experiment.profile");
  if (overrides.profile) profile = *overrides.profile;
  if (const auto profiles = root["profiles"]) {
    check_keys(profiles, "profiles", {"desk", "paper"});
    if (const auto overlay = profiles[to_string(profile)]) {
      check_map(overlay, "profiles." + to_string(profile));
      if (overlay["profiles"]) throw ConfigError("profiles." + to_string(profile) + ".profiles", "overlays cannot nest");
      root = deep_merge(root, overlay);
    }
  }

  ExperimentConfig cfg;
  cfg.profile = profile;
  if (const auto e = root["experiment"]) {
    check_keys(e, "experiment", {"name", "seed", "threads", "profile", "out"});
    read(e, "experiment", "name", cfg.name);
    if (e["seed"]) cfg.seed = as<std::uint64_t>(e["seed"], "experiment.seed");
    read(e, "experiment", "threads", cfg.threads);
    if (e["out"]) cfg.out = as<std::string>(e["out"], "experiment.out");
  }
  cfg.out = "runs/" + cfg.name;
  if (root["experiment"] && root["experiment"]["out"]) cfg.out = as<std::string>(root["experiment"]["out"], "experiment.out");

  if (root["task"]) {
    parse_task(root["task"], "task", profile, cfg);
  } else {
    cfg.preset = "bke";
    cfg.task = bke_task(profile);
  }

  if (const auto d = root["data"]) {
    check_keys(d, "data", {"train", "validation", "test"});
    if (d["train"]) parse_split(d["train"], "data.train", cfg.train);
    if (d["validation"]) parse_split(d["validation"], "data.validation", cfg.validation);
    if (d["test"]) parse_split(d["test"], "data.test", cfg.test);
  }
  if (const auto o = root["observers"]) {
    if (!o.IsSequence()) throw ConfigError("observers", "expected a list");
    cfg.observers.clear();
    for (std::size_t i = 0; i < o.size(); ++i)
      cfg.observers.push_back(as<std::string>(o[i], "observers[" + std::to_string(i) + "]"));
  }
  if (const auto c = root["chain"]) {
    check_keys(c, "chain", {"samples", "burn_in", "thin"});
    read(c, "chain", "samples", cfg.chain.n_samples);
    read(c, "chain", "burn_in", cfg.chain.burn_in);
    read(c, "chain", "thin", cfg.chain.thin);
  }
  if (const auto c = root["likelihood_ratio"]) {
    check_keys(c, "likelihood_ratio", {"samples", "burn_in"});
    read(c, "likelihood_ratio", "samples", cfg.ratio_samples);
    read(c, "likelihood_ratio", "burn_in", cfg.ratio_burn_in);
  }
  if (const auto p = root["proposal"]) {
    check_keys(p, "proposal", {"sd", "lump_step_px"});
    ProposalDensity prop = default_proposal(cfg.task);
    if (p["sd"]) {
      if (!p["sd"].IsSequence()) throw ConfigError("proposal.sd", "expected a list");
      prop.sd.clear();
      for (std::size_t i = 0; i < p["sd"].size(); ++i)
        prop.sd.push_back(as<double>(p["sd"][i], "proposal.sd[" + std::to_string(i) + "]"));
    }
    read(p, "proposal", "lump_step_px", prop.lump_step);
    cfg.proposal = prop;
  }

  cfg.network.filters = 16;
  cfg.network.kernel = 5;
  cfg.network.shared_layers = 2;
  cfg.network.estimation_layers = 1;
  if (const auto nw = root["network"]) {
    check_keys(nw, "network", {"filters", "kernel_px", "shared_layers", "estimation_layers", "leaky_slope", "grow", "model"});
    read(nw, "network", "filters", cfg.network.filters);
    read(nw, "network", "kernel_px", cfg.network.kernel);
    read(nw, "network", "shared_layers", cfg.network.shared_layers);
    read(nw, "network", "estimation_layers", cfg.network.estimation_layers);
    read(nw, "network", "leaky_slope", cfg.network.leaky_slope);
    read(nw, "network", "grow", cfg.grow);
    if (nw["model"]) {
      cfg.model = as<std::string>(nw["model"], "network.model");
      if (cfg.model.is_relative() && !base_dir.empty()) cfg.model = base_dir / cfg.model;
    }
  }
  cfg.network.input_width = cfg.task.system.grid_width;
  cfg.network.input_height = cfg.task.system.grid_height;
  cfg.network.theta_dim = static_cast<int>(cfg.task.theta_dim());

  if (const auto tr = root["training"]) {
    check_keys(tr, "training", {"batches", "present_per_batch", "absent_per_batch", "learning_rate", "beta1", "beta2",
                                "epsilon", "semi_online", "estimation_into_trunk", "validate_every", "shards"});
    read(tr, "training", "batches", cfg.training.n_batches);
    read(tr, "training", "present_per_batch", cfg.training.n_present);
    read(tr, "training", "absent_per_batch", cfg.training.n_absent);
    read(tr, "training", "learning_rate", cfg.training.adam.lr);
    read(tr, "training", "beta1", cfg.training.adam.beta1);
    read(tr, "training", "beta2", cfg.training.adam.beta2);
    read(tr, "training", "epsilon", cfg.training.adam.eps);
    read(tr, "training", "semi_online", cfg.training.semi_online);
    read(tr, "training", "estimation_into_trunk", cfg.training.estimation_into_trunk);
    read(tr, "training", "validate_every", cfg.training.validate_every);
    read(tr, "training", "shards", cfg.training.shards);
  }
  if (const auto s = root["slo"]) {
    check_keys(s, "slo", {"present", "absent", "scalar_points", "amplitude_span_sd", "eigen_floor"});
    read(s, "slo", "present", cfg.slo_training.present);
    read(s, "slo", "absent", cfg.slo_training.absent);
    read(s, "slo", "scalar_points", cfg.slo_grid.scalar_points);
    read(s, "slo", "amplitude_span_sd", cfg.slo_grid.amplitude_span_sd);
    read(s, "slo", "eigen_floor", cfg.slo_grid.eigen_floor);
  }
  if (const auto b = root["bootstrap"]) {
    check_keys(b, "bootstrap", {"resamples", "level"});
    read(b, "bootstrap", "resamples", cfg.bootstrap.resamples);
    read(b, "bootstrap", "level", cfg.bootstrap.level);
  }
  if (const auto v = root["verify"]) {
    check_map(v, "verify");
    for (const auto& kv : v) {
      const std::string obs = kv.first.as<std::string>();
      const std::string p = "verify." + obs;
      check_keys(kv.second, p, {"aeroc", "tolerance"});
      VerifyTarget t;
      if (!kv.second["aeroc"]) throw ConfigError(join(p, "aeroc"), "required");
      read(kv.second, p, "aeroc", t.aeroc);
      read(kv.second, p, "tolerance", t.tolerance);
      cfg.verify[obs] = t;
    }
  }

  if (overrides.seed) cfg.seed = overrides.seed;
  if (overrides.threads) cfg.threads = *overrides.threads;
  if (overrides.out) cfg.out = *overrides.out;
  cfg.training.threads = cfg.threads;
  cfg.bootstrap.threads = cfg.threads;
  if (cfg.seed) {
    cfg.training.seed = Rng(*cfg.seed).split(stream::kTraining).key();
    cfg.bootstrap.seed = Rng(*cfg.seed).split(stream::kBootstrap).key();
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides, path.parent_path());
}

namespace {

std::string prior_kind_name(SignalPrior::Kind k) {
  switch (k) {
    case SignalPrior::Kind::gaussian_amplitude: return "gaussian-amplitude";
    case SignalPrior::Kind::uniform_location: return "uniform-location";
    case SignalPrior::Kind::uniform_width: return "uniform-width";
  }
  return "?";
}

void emit_vec2(YAML::Emitter& e, const char* key, Vec2 v) {
  e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq << v.x << v.y << YAML::EndSeq;
}

void emit_split(YAML::Emitter& e, const char* key, const SplitSize& s) {
  e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "present" << YAML::Value
    << s.present << YAML::Key << "absent" << YAML::Value << s.absent << YAML::EndMap;
}

}  // namespace

std::string serialize_config(const ExperimentConfig& cfg) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;

  e << YAML::Key << "experiment" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << cfg.name;
  if (cfg.seed) e << YAML::Key << "seed" << YAML::Value << *cfg.seed;
  e << YAML::Key << "threads" << YAML::Value << cfg.threads;
  e << YAML::Key << "profile" << YAML::Value << to_string(cfg.profile);
  e << YAML::Key << "out" << YAML::Value << cfg.out.string();
  e << YAML::EndMap;

  const TaskSpec& t = cfg.task;
  e << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "preset" << YAML::Value << cfg.preset;
  e << YAML::Key << "grid" << YAML::Value << YAML::BeginMap << YAML::Key << "width_px" << YAML::Value
    << t.system.grid_width << YAML::Key << "height_px" << YAML::Value << t.system.grid_height << YAML::EndMap;
  e << YAML::Key << "imaging" << YAML::Value << YAML::BeginMap << YAML::Key << "prf_height" << YAML::Value
    << t.system.height << YAML::Key << "prf_width_px" << YAML::Value << t.system.prf_width << YAML::EndMap;
  e << YAML::Key << "signal" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "amplitude" << YAML::Value << t.signal.base.amplitude;
  e << YAML::Key << "width_px" << YAML::Value << t.signal.base.width;
  emit_vec2(e, "center_px", t.signal.base.center);
  e << YAML::Key << "prior" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << prior_kind_name(t.signal.kind);
  switch (t.signal.kind) {
    case SignalPrior::Kind::gaussian_amplitude:
      e << YAML::Key << "mean" << YAML::Value << t.signal.mean << YAML::Key << "sd" << YAML::Value << t.signal.sd;
      break;
    case SignalPrior::Kind::uniform_location:
      emit_vec2(e, "lo_px", t.signal.lo);
      emit_vec2(e, "hi_px", t.signal.hi);
      break;
    case SignalPrior::Kind::uniform_width:
      e << YAML::Key << "lo_px" << YAML::Value << t.signal.lo.x << YAML::Key << "hi_px" << YAML::Value << t.signal.hi.x;
      break;
  }
  e << YAML::EndMap << YAML::EndMap;
  e << YAML::Key << "background" << YAML::Value << YAML::BeginMap;
  if (const auto* m = std::get_if<LumpyModel>(&t.background)) {
    e << YAML::Key << "kind" << YAML::Value << "lumpy";
    e << YAML::Key << "mean_count" << YAML::Value << m->mean_count;
    e << YAML::Key << "lump_amplitude" << YAML::Value << m->lump_amplitude;
    e << YAML::Key << "lump_width_px" << YAML::Value << m->lump_width;
  } else if (const auto* c = std::get_if<ClbModel>(&t.background)) {
    e << YAML::Key << "kind" << YAML::Value << "clb";
    e << YAML::Key << "mean_clusters" << YAML::Value << c->mean_clusters;
    e << YAML::Key << "mean_blobs" << YAML::Value << c->mean_blobs;
    e << YAML::Key << "half_axis_x_px" << YAML::Value << c->half_axis_x;
    e << YAML::Key << "half_axis_y_px" << YAML::Value << c->half_axis_y;
    e << YAML::Key << "shape_exponent" << YAML::Value << c->shape_exponent;
    e << YAML::Key << "decay_exponent" << YAML::Value << c->decay_exponent;
    e << YAML::Key << "cluster_spread_px" << YAML::Value << c->cluster_spread;
  } else {
    e << YAML::Key << "kind" << YAML::Value << "none";
  }
  e << YAML::EndMap;
  e << YAML::Key << "noise" << YAML::Value << YAML::BeginMap << YAML::Key << "sd" << YAML::Value << t.noise.sd
    << YAML::EndMap;
  e << YAML::Key << "utility" << YAML::Value << t.utility.to_string();
  e << YAML::EndMap;

  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  emit_split(e, "train", cfg.train);
  emit_split(e, "validation", cfg.validation);
  emit_split(e, "test", cfg.test);
  e << YAML::EndMap;

  e << YAML::Key << "observers" << YAML::Value << YAML::Flow << cfg.observers;

  e << YAML::Key << "chain" << YAML::Value << YAML::BeginMap << YAML::Key << "samples" << YAML::Value
    << cfg.chain.n_samples << YAML::Key << "burn_in" << YAML::Value << cfg.chain.burn_in << YAML::Key << "thin"
    << YAML::Value << cfg.chain.thin << YAML::EndMap;
  e << YAML::Key << "likelihood_ratio" << YAML::Value << YAML::BeginMap << YAML::Key << "samples" << YAML::Value
    << cfg.ratio_samples << YAML::Key << "burn_in" << YAML::Value << cfg.ratio_burn_in << YAML::EndMap;
  if (cfg.proposal) {
    e << YAML::Key << "proposal" << YAML::Value << YAML::BeginMap << YAML::Key << "sd" << YAML::Value << YAML::Flow
      << cfg.proposal->sd << YAML::Key << "lump_step_px" << YAML::Value << cfg.proposal->lump_step << YAML::EndMap;
  }

  e << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "filters" << YAML::Value << cfg.network.filters;
  e << YAML::Key << "kernel_px" << YAML::Value << cfg.network.kernel;
  e << YAML::Key << "shared_layers" << YAML::Value << cfg.network.shared_layers;
  e << YAML::Key << "estimation_layers" << YAML::Value << cfg.network.estimation_layers;
  e << YAML::Key << "leaky_slope" << YAML::Value << cfg.network.leaky_slope;
  e << YAML::Key << "grow" << YAML::Value << cfg.grow;
  if (!cfg.model.empty()) e << YAML::Key << "model" << YAML::Value << cfg.model.string();
  e << YAML::EndMap;

  const auto& tr = cfg.training;
  e << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "batches" << YAML::Value << tr.n_batches;
  e << YAML::Key << "present_per_batch" << YAML::Value << tr.n_present;
  e << YAML::Key << "absent_per_batch" << YAML::Value << tr.n_absent;
  e << YAML::Key << "learning_rate" << YAML::Value << tr.adam.lr;
  e << YAML::Key << "beta1" << YAML::Value << tr.adam.beta1;
  e << YAML::Key << "beta2" << YAML::Value << tr.adam.beta2;
  e << YAML::Key << "epsilon" << YAML::Value << tr.adam.eps;
  e << YAML::Key << "semi_online" << YAML::Value << tr.semi_online;
  e << YAML::Key << "estimation_into_trunk" << YAML::Value << tr.estimation_into_trunk;
  e << YAML::Key << "validate_every" << YAML::Value << tr.validate_every;
  e << YAML::Key << "shards" << YAML::Value << tr.shards;
  e << YAML::EndMap;

  e << YAML::Key << "slo" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "present" << YAML::Value << cfg.slo_training.present;
  e << YAML::Key << "absent" << YAML::Value << cfg.slo_training.absent;
  e << YAML::Key << "scalar_points" << YAML::Value << cfg.slo_grid.scalar_points;
  e << YAML::Key << "amplitude_span_sd" << YAML::Value << cfg.slo_grid.amplitude_span_sd;
  e << YAML::Key << "eigen_floor" << YAML::Value << cfg.slo_grid.eigen_floor;
  e << YAML::EndMap;

  e << YAML::Key << "bootstrap" << YAML::Value << YAML::BeginMap << YAML::Key << "resamples" << YAML::Value
    << cfg.bootstrap.resamples << YAML::Key << "level" << YAML::Value << cfg.bootstrap.level << YAML::EndMap;

  if (!cfg.verify.empty()) {
    e << YAML::Key << "verify" << YAML::Value << YAML::BeginMap;
    for (const auto& [obs, v] : cfg.verify) {
      e << YAML::Key << obs << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "aeroc" << YAML::Value
        << v.aeroc << YAML::Key << "tolerance" << YAML::Value << v.tolerance << YAML::EndMap;
    }
    e << YAML::EndMap;
  }
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace taskiq
