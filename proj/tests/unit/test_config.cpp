#include <gtest/gtest.h>

#include <cstdlib>
#include <string>

#include "taskiq/config.hpp"

using namespace taskiq;

namespace {

const char* kMinimal = R"(
experiment: {name: t, seed: 5}
task: {preset: bke}
data: {test: {present: 10, absent: 10}}
observers: [analytic]
)";

std::string error_path(const std::string& text, const ConfigOverrides& o = {}) {
  try {
    parse_config(text, o);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

std::string preset(const char* name) { return std::string(TASKIQ_SOURCE_DIR "/presets/") + name; }

}  // namespace

TEST(Config, MinimalDefaults) {
  const ExperimentConfig c = parse_config(kMinimal);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.profile, Profile::desk);
  EXPECT_EQ(c.task.system.grid_width, 16);
  EXPECT_EQ(c.out, "runs/t");
  EXPECT_EQ(c.test.present, 10u);
}

TEST(Config, RoundTripIsIdentity) {
  for (const char* file : {"bke-analytic.yaml", "bke-hybrid.yaml", "lb-quadratic-200.yaml", "lb-quadratic-100.yaml",
                           "lb-l1-20.yaml", "clb.yaml"}) {
    for (Profile p : {Profile::desk, Profile::paper}) {
      ConfigOverrides o;
      o.profile = p;
      const ExperimentConfig a = load_config(preset(file), o);
      const std::string text = serialize_config(a);
      const ExperimentConfig b = parse_config(text);
      EXPECT_EQ(serialize_config(b), text) << file;
      EXPECT_EQ(b.task.utility, a.task.utility);
      EXPECT_EQ(b.task.noise.sd, a.task.noise.sd);
      EXPECT_EQ(b.network, a.network);
      EXPECT_EQ(b.verify, a.verify);
      EXPECT_EQ(b.profile, p);
    }
  }
}

TEST(Config, ErrorPaths) {
  EXPECT_EQ(error_path("experiment: {seed: 1, colour: red}\n"), "experiment.colour");
  EXPECT_EQ(error_path(std::string(kMinimal) + "chain: {samples: 10, burnin: 3}\n"), "chain.burnin");
  EXPECT_EQ(error_path("experiment: {seed: 1}\ntask: {preset: bke, noise: {sd: -2}}\n"), "task.noise.sd");
  EXPECT_EQ(error_path("experiment: {seed: 1}\ntask: {preset: bke, noise: {sd: loud}}\n"), "task.noise.sd");
  EXPECT_EQ(error_path("experiment: {name: x}\n"), "experiment.seed");
  EXPECT_EQ(error_path("experiment: {seed: 1}\nobservers: [ideal]\n"), "observers[0]");
  EXPECT_EQ(error_path("experiment: {seed: 1}\ntask: {preset: lb}\nobservers: [analytic]\n"), "observers");
  EXPECT_EQ(error_path("experiment: {seed: 1}\nobservers: [analytic]\nverify: {slo: {aeroc: 0.5}}\n"), "verify.slo");
  EXPECT_EQ(error_path("experiment: {seed: 1}\nnetwork: {model: /no/such/model.tiqm}\nobservers: [sub-ideal]\n"),
            "network.model");
  EXPECT_EQ(error_path("experiment: {seed: 1}\ntask: {preset: lb, utility: \"l1:20\"}\nobservers: [mcmc-io]\n"),
            "task.utility");
  EXPECT_EQ(error_path("profiles: {paper: {profiles: {}}}\nexperiment: {seed: 1, profile: paper}\n"),
            "profiles.paper.profiles");
  EXPECT_THROW(parse_config("experiment: [1, 2"), ConfigError);
}

TEST(Config, ProfileOverlayAndPrecedence) {
  const std::string text = std::string(kMinimal) + R"(
profiles:
  paper:
    task: {grid: {width_px: 64, height_px: 64}, signal: {center_px: [32, 32]}}
    data: {test: {present: 1000}}
)";
  const ExperimentConfig desk = parse_config(text);
  EXPECT_EQ(desk.test.present, 10u);
  ConfigOverrides o;
  o.profile = Profile::paper;
  o.seed = 99;
  o.threads = 3;
  o.out = "elsewhere";
  const ExperimentConfig paper = parse_config(text, o);
  EXPECT_EQ(paper.test.present, 1000u);
  EXPECT_EQ(paper.test.absent, 10u);  // deep merge keeps siblings
  EXPECT_EQ(paper.task.system.grid_width, 64);
  EXPECT_EQ(paper.seed, 99u);
  EXPECT_EQ(paper.training.threads, 3);
  EXPECT_EQ(paper.bootstrap.threads, 3);
  EXPECT_EQ(paper.out, "elsewhere");
}

TEST(Config, FlagsBeatEnvironment) {
  ::setenv("TASKIQ_SEED", "17", 1);
  ::setenv("TASKIQ_PROFILE", "paper", 1);
  ::setenv("TASKIQ_THREADS", "2", 1);
  const ConfigOverrides env = overrides_from_env();
  EXPECT_EQ(env.seed, 17u);
  EXPECT_EQ(env.profile, Profile::paper);
  EXPECT_EQ(env.threads, 2);
  ConfigOverrides flags;
  flags.seed = 4;
  const ConfigOverrides m = merge_overrides(flags, env);
  EXPECT_EQ(m.seed, 4u);
  EXPECT_EQ(m.profile, Profile::paper);
  ::setenv("TASKIQ_SEED", "minus one", 1);
  EXPECT_THROW(overrides_from_env(), ConfigError);
  ::unsetenv("TASKIQ_SEED");
  ::unsetenv("TASKIQ_PROFILE");
  ::unsetenv("TASKIQ_THREADS");
  EXPECT_FALSE(overrides_from_env().seed.has_value());
}

TEST(Config, PresetsValidateInBothProfiles) {
  for (const char* file : {"bke-analytic.yaml", "bke-hybrid.yaml", "lb-quadratic-200.yaml", "lb-quadratic-100.yaml",
                           "lb-l1-20.yaml", "clb.yaml"}) {
    for (Profile p : {Profile::desk, Profile::paper}) {
      ConfigOverrides o;
      o.profile = p;
      EXPECT_NO_THROW(load_config(preset(file), o)) << file;
    }
  }
}
