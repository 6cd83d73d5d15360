#pragma once

#include <span>
#include <string>

#include "taskiq/sim.hpp"
#include "taskiq/utility.hpp"

namespace taskiq {

enum class TaskFamily { bke_amplitude, lb_location, clb_width, custom };
enum class Profile { desk, paper };

std::string to_string(TaskFamily family);
TaskFamily parse_task_family(const std::string& text);
std::string to_string(Profile profile);
Profile parse_profile(const std::string& text);

/// Full generative description of one detection-estimation experiment.
/// Hypotheses are equally likely.
struct TaskSpec {
  std::string name;
  TaskFamily family = TaskFamily::custom;
  ImagingSystem system;
  SignalPrior signal;
  BackgroundModel background = ZeroBackground{};
  NoiseModel noise;
  UtilityFn utility = UtilityFn::constant();

  void validate() const;
  std::size_t theta_dim() const { return signal.dim(); }
  bool background_known() const { return std::holds_alternative<ZeroBackground>(background); }
  bool is_lumpy() const { return std::holds_alternative<LumpyModel>(background); }
  bool is_clb() const { return std::holds_alternative<ClbModel>(background); }
  /// True when theta is the amplitude of an otherwise fixed signal, so s(theta) = theta * s_ref.
  bool amplitude_only() const { return signal.kind == SignalPrior::Kind::gaussian_amplitude; }

  Image render_signal(std::span<const double> theta) const;
  /// Unit-amplitude signal image s_ref.
  Image reference_signal() const;
};

/// SKS/BKE amplitude task. Paper profile: 64x64, h=16, w_m=3.87, w_s=1, r_s=(32,32),
/// A ~ N(9, 4^2), sigma_n = 40, Gaussian utility sigma_u = 3. Desk profile shrinks
/// the grid to 16x16 centred at (8,8) and keeps every other constant.
TaskSpec bke_task(Profile profile = Profile::paper);

/// SKS/BKS location task on a lumpy background. Paper profile: 64x64, h=40, w_m=0.5,
/// A_s=6, w_s=3, r_s ~ U(16,48)^2, Nbar=5, a=10, w_b=7, sigma_n=320.
TaskSpec lb_task(Profile profile, UtilityFn utility);

/// SKS/BKS width task on a clustered lumpy background (normalized to [0,1]).
/// Paper profile: 64x64, amplitude 0.05 at (32,32), w ~ U(1,6), CLB Kbar=70, Nbar=20,
/// Lx=5, Ly=2, alpha=2.1, beta=0.5, sigma=12, sigma_n=0.33, Gaussian utility sigma_u=3.
TaskSpec clb_task(Profile profile);

/// "bke", "lb" (quadratic:200 utility unless overridden), "clb".
TaskSpec preset_task(const std::string& name, Profile profile);

}  // namespace taskiq
