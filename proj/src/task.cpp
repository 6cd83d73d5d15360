#include "taskiq/task.hpp"

#include <stdexcept>

namespace taskiq {

std::string to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::bke_amplitude: return "bke-amplitude";
    case TaskFamily::lb_location: return "lb-location";
    case TaskFamily::clb_width: return "clb-width";
    case TaskFamily::custom: return "custom";
  }
  return "custom";
}

TaskFamily parse_task_family(const std::string& text) {
  if (text == "bke-amplitude") return TaskFamily::bke_amplitude;
  if (text == "lb-location") return TaskFamily::lb_location;
  if (text == "clb-width") return TaskFamily::clb_width;
  if (text == "custom") return TaskFamily::custom;
  throw std::invalid_argument("unknown task family '" + text + "'");
}

std::string to_string(Profile profile) { return profile == Profile::paper ? "paper" : "desk"; }

Profile parse_profile(const std::string& text) {
  if (text == "desk") return Profile::desk;
  if (text == "paper") return Profile::paper;
  throw std::invalid_argument("unknown profile '" + text + "' (expected desk or paper)");
}

void TaskSpec::validate() const {
  system.validate();
  signal.validate();
  noise.validate();
  if (const auto* lumpy = std::get_if<LumpyModel>(&background)) {
    if (!(lumpy->mean_count > 0.0)) throw std::invalid_argument("task: lumpy mean count must be > 0");
    if (!(lumpy->lump_width > 0.0)) throw std::invalid_argument("task: lump width must be > 0");
  }
  if (const auto* clb = std::get_if<ClbModel>(&background)) {
    if (!(clb->half_axis_x > 0.0) || !(clb->half_axis_y > 0.0))
      throw std::invalid_argument("task: CLB half axes must be > 0");
  }
}

Image TaskSpec::render_signal(std::span<const double> theta) const {
  return render_signal_image(system, signal.signal(theta));
}

Image TaskSpec::reference_signal() const {
  GaussianSignal s = signal.base;
  s.amplitude = 1.0;
  return render_signal_image(system, s);
}

TaskSpec bke_task(Profile profile) {
  TaskSpec t;
  t.name = "bke";
  t.family = TaskFamily::bke_amplitude;
  const int n = profile == Profile::paper ? 64 : 16;
  const double c = n / 2;
  t.system = {16.0, 3.87, n, n};
  t.signal = SignalPrior::gaussian_amplitude({9.0, 1.0, {c, c}}, 9.0, 4.0);
  t.background = ZeroBackground{};
  t.noise = {40.0};
  t.utility = UtilityFn::gaussian(3.0);
  return t;
}

TaskSpec lb_task(Profile profile, UtilityFn utility) {
  TaskSpec t;
  t.name = "lb";
  t.family = TaskFamily::lb_location;
  const bool paper = profile == Profile::paper;
  const int n = paper ? 64 : 32;
  const double lo = paper ? 16.0 : 8.0;
  const double hi = paper ? 48.0 : 24.0;
  t.system = {40.0, 0.5, n, n};
  t.signal = SignalPrior::uniform_location({6.0, 3.0, {n / 2.0, n / 2.0}}, {lo, lo}, {hi, hi});
  // Desk scale keeps the lump density per unit area.
  t.background = LumpyModel{paper ? 5.0 : 5.0 / 4.0, 10.0, 7.0};
  t.noise = {320.0};
  t.utility = utility;
  return t;
}

TaskSpec clb_task(Profile profile) {
  TaskSpec t;
  t.name = "clb";
  t.family = TaskFamily::clb_width;
  const bool paper = profile == Profile::paper;
  const int n = paper ? 64 : 32;
  // The signal image itself has amplitude 0.05; a unit-height, near-delta PRF keeps
  // the rendered peak at 0.05 * w^2 / (w_m^2 + w^2) ~= 0.05.
  t.system = {1.0, 0.01, n, n};
  t.signal = SignalPrior::uniform_width({0.05, 3.5, {n / 2.0, n / 2.0}}, 1.0, 6.0);
  t.background = ClbModel{paper ? 70.0 : 70.0 / 4.0, 20.0, 5.0, 2.0, 2.1, 0.5, 12.0};
  t.noise = {0.33};
  t.utility = UtilityFn::gaussian(3.0);
  return t;
}

TaskSpec preset_task(const std::string& name, Profile profile) {
  if (name == "bke") return bke_task(profile);
  if (name == "lb") return lb_task(profile, UtilityFn::quadratic(200.0));
  if (name == "clb") return clb_task(profile);
  throw std::invalid_argument("unknown task preset '" + name + "' (expected bke, lb or clb)");
}

}  // namespace taskiq
