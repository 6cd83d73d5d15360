#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "taskiq/dataset.hpp"
#include "taskiq/eroc.hpp"
#include "taskiq/observers.hpp"
#include "taskiq/task.hpp"

using namespace taskiq;

TEST(AnalyticIo, ZeroImage) {
  const TaskSpec t = bke_task(Profile::paper);
  const AnalyticIo io(t);
  const double ss = io.reference_energy();
  const double var_n = 1600.0, var_a = 16.0;
  EXPECT_NEAR(io.estimate(t.system.blank()), var_n * 9.0 / (var_n + var_a * ss), 1e-12);
  EXPECT_EQ(io.statistic(t.system.blank()), 0.0);
  EXPECT_NEAR(io.posterior_variance(), 1.0 / (ss / var_n + 1.0 / var_a), 1e-12);
}

TEST(AnalyticIo, FlatPriorLimitRecoversAmplitude) {
  TaskSpec t = bke_task(Profile::desk);
  t.signal.sd = 1e6;
  const AnalyticIo io(t);
  Image g = t.reference_signal();
  for (auto& v : g.pixels) v *= 7.25;
  EXPECT_NEAR(io.estimate(g), 7.25, 1e-6);
}

TEST(AnalyticIo, RejectsOtherTasks) {
  EXPECT_THROW(AnalyticIo(lb_task(Profile::desk, UtilityFn::quadratic(200))), std::invalid_argument);
}

TEST(AnalyticIo, StatisticIsMonotoneInLogLambda) {
  const TaskSpec t = bke_task(Profile::desk);
  const AnalyticIo io(t);
  const Dataset d = generate_dataset(t, 50, 50, Rng(1));
  std::vector<std::pair<double, double>> pairs;
  for (const auto& im : d.images) pairs.emplace_back(io.statistic(im.pixels), io.log_likelihood_ratio(im.pixels));
  std::sort(pairs.begin(), pairs.end());
  for (std::size_t i = 1; i < pairs.size(); ++i) EXPECT_LE(pairs[i - 1].second, pairs[i].second + 1e-12);
}

TEST(NetworkObservers, OddsAndSharedEstimate) {
  const std::vector<double> est{3.5};
  const ObserverOutput s = sub_ideal_no(0.8, est);
  EXPECT_NEAR(s.statistic, 4.0, 1e-12);
  EXPECT_EQ(s.estimate, est);
  const TaskSpec t = bke_task(Profile::desk);
  HybridConfig hc;
  hc.chain.n_samples = 500;
  Rng rng(2);
  const ObserverOutput h = hybrid_io(t.system.blank(), 0.8, est, t, hc, rng);
  EXPECT_EQ(h.estimate, s.estimate);
  EXPECT_NEAR(log_odds(0.8), std::log(4.0), 1e-15);
}

TEST(NetworkObservers, ConstantUtilityHybridMatchesSubIdealExactly) {
  TaskSpec t = bke_task(Profile::desk);
  t.utility = UtilityFn::constant();
  const Dataset d = generate_dataset(t, 40, 40, Rng(3));
  Rng pr(4);
  HybridConfig hc;
  hc.chain.n_samples = 200;
  hc.chain.burn_in = 10;
  std::vector<PresentScore> ph, ps;
  std::vector<double> ah, as;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double p = pr.uniform(0.01, 0.99);
    const std::vector<double> est{pr.normal(9, 4)};
    Rng rng(100 + i);
    const ObserverOutput h = hybrid_io(d.images[i].pixels, p, est, t, hc, rng);
    const ObserverOutput s = sub_ideal_no(p, est);
    EXPECT_EQ(h.utility_mean, 1.0);
    EXPECT_EQ(h.statistic, s.statistic);
    if (d.images[i].label) {
      const double u = t.utility(est, d.images[i].theta);
      ph.push_back({h.statistic, u});
      ps.push_back({s.statistic, u});
    } else {
      ah.push_back(h.statistic);
      as.push_back(s.statistic);
    }
  }
  EXPECT_EQ(aeroc_value(ph, ah), aeroc_value(ps, as));
}

TEST(NetworkObservers, CombineStaysFiniteAndOrdered) {
  EXPECT_TRUE(std::isfinite(combine_statistic(5000.0, 0.3)));
  EXPECT_LT(combine_statistic(5000.0, 0.3), combine_statistic(5000.0, 0.4));
  EXPECT_LT(combine_statistic(5000.0, -0.4), combine_statistic(5000.0, -0.3));
  EXPECT_GE(combine_statistic(-5000.0, 1.0), 0.0);
  EXPECT_LT(combine_statistic(-5000.0, 1.0), 1e-300);
}

TEST(McmcIo, RejectsNonOptimalUtility) {
  const TaskSpec t = lb_task(Profile::desk, UtilityFn::l1(20));
  Rng rng(5);
  EXPECT_THROW(mcmc_io(t.system.blank(), t, McmcIoConfig{}, rng), UnsupportedUtility);
}

TEST(McmcIo, PureGivenStream) {
  const TaskSpec t = bke_task(Profile::desk);
  const Dataset d = generate_dataset(t, 1, 0, Rng(6));
  McmcIoConfig mc;
  mc.estimate_chain.n_samples = mc.utility_chain.n_samples = mc.ratio_chain.n_samples = 1000;
  Rng r1(7), r2(7);
  const ObserverOutput a = mcmc_io(d.images[0].pixels, t, mc, r1);
  const ObserverOutput b = mcmc_io(d.images[0].pixels, t, mc, r2);
  EXPECT_EQ(a.statistic, b.statistic);
  EXPECT_EQ(a.estimate, b.estimate);
}

TEST(Slo, GridShapes) {
  const TaskSpec bke = bke_task(Profile::desk);
  const auto g = slo_grid(bke);
  ASSERT_EQ(g.size(), 257u);
  EXPECT_NEAR(g.front()[0], bke.signal.mean - 4 * bke.signal.sd, 1e-12);
  EXPECT_NEAR(g.back()[0], bke.signal.mean + 4 * bke.signal.sd, 1e-12);
  const TaskSpec lb = lb_task(Profile::paper, UtilityFn::quadratic(200));
  const auto gl = slo_grid(lb);
  for (const auto& p : gl) {
    EXPECT_EQ(p[0], std::round(p[0]));
    EXPECT_GE(p[0], 16.0);
    EXPECT_LE(p[1], 48.0);
  }
  const TaskSpec clb = clb_task(Profile::paper);
  const auto gc = slo_grid(clb);
  EXPECT_EQ(gc.front()[0], 1.0);
  EXPECT_EQ(gc.back()[0], 6.0);
}

TEST(Slo, MeanImageAtGridPointIsSignalPlusMeanBackground) {
  const TaskSpec t = lb_task(Profile::desk, UtilityFn::quadratic(200));
  const Dataset clean = generate_dataset(t, 60, 60, Rng(8), true);
  const SloModel m = build_slo(t, clean);
  std::vector<double> bbar(m.n_pixels(), 0.0);
  for (const auto& im : clean.images) {
    Image r = im.pixels;
    if (im.label) {
      const Image s = t.render_signal(im.theta);
      for (std::size_t i = 0; i < r.size(); ++i) r.pixels[i] -= s.pixels[i];
    }
    for (std::size_t i = 0; i < r.size(); ++i) bbar[i] += r.pixels[i] / clean.size();
  }
  for (std::size_t i = 0; i < bbar.size(); ++i) EXPECT_NEAR(m.background_mean[i], bbar[i], 1e-9);
  EXPECT_EQ(m.n_training, 120u);
}

TEST(Slo, PriorShiftLeavesArgmax) {
  const TaskSpec t = bke_task(Profile::desk);
  const Dataset clean = generate_dataset(t, 20, 20, Rng(9), true);
  SloModel m = build_slo(t, clean, {65, 4.0, 1e-6});
  SloModel shifted = m;
  for (auto& c : shifted.constants) c += 12.5;
  for (auto& l : shifted.log_prior) l += 12.5;
  const Dataset test = generate_dataset(t, 20, 20, Rng(10));
  for (const auto& im : test.images) {
    const ObserverOutput a = slo(im.pixels, m), b = slo(im.pixels, shifted);
    EXPECT_EQ(a.estimate, b.estimate);
    EXPECT_NEAR(b.statistic - a.statistic, 12.5, 1e-9);
  }
}

TEST(Slo, UniformPriorIsConstant) {
  const TaskSpec t = clb_task(Profile::desk);
  const Dataset clean = generate_dataset(t, 10, 10, Rng(11), true);
  const SloModel m = build_slo(t, clean, {17, 4.0, 1e-6});
  for (double lp : m.log_prior) EXPECT_EQ(lp, m.log_prior.front());
}

TEST(Slo, SaveLoadRoundTrip) {
  const TaskSpec t = bke_task(Profile::desk);
  const SloModel m = build_slo(t, generate_dataset(t, 10, 10, Rng(12), true), {9, 4.0, 1e-6});
  const auto path = std::filesystem::temp_directory_path() / "taskiq_test.tiqs";
  save_slo(path, m);
  const SloModel r = load_slo(path);
  EXPECT_EQ(r.templates, m.templates);
  EXPECT_EQ(r.constants, m.constants);
  EXPECT_EQ(r.grid, m.grid);
  std::filesystem::remove(path);
}

TEST(Scores, MonotoneMapLeavesAeroc) {
  const TaskSpec t = bke_task(Profile::desk);
  const Dataset d = generate_dataset(t, 100, 100, Rng(13));
  const AnalyticIo io(t);
  auto rows = score_dataset(d, [&](std::size_t, const Image& g) { return io(g); }, t.utility, 2);
  const ErocInputs in = eroc_inputs(rows);
  for (auto& r : rows) r.statistic = std::exp(r.statistic / 1000.0) - 7.0;
  const ErocInputs mapped = eroc_inputs(rows);
  EXPECT_EQ(aeroc_value(in.present, in.absent), aeroc_value(mapped.present, mapped.absent));
}

TEST(Scores, CsvRoundTripAndRescore) {
  const TaskSpec t = lb_task(Profile::desk, UtilityFn::quadratic(200));
  const Dataset d = generate_dataset(t, 5, 5, Rng(14));
  auto rows = score_dataset(
      d, [](std::size_t i, const Image&) { return ObserverOutput{0.1 * static_cast<double>(i), {1.0 + i, 2.5}}; },
      t.utility);
  const auto path = std::filesystem::temp_directory_path() / "taskiq_test_scores.csv";
  write_scores_csv(path, rows, 2);
  const auto back = read_scores_csv(path);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].image_id, rows[i].image_id);
    EXPECT_EQ(back[i].label, rows[i].label);
    EXPECT_EQ(back[i].statistic, rows[i].statistic);
    EXPECT_EQ(back[i].estimate, rows[i].estimate);
    if (rows[i].label) {
      EXPECT_EQ(back[i].theta, rows[i].theta);
      EXPECT_EQ(back[i].utility, rows[i].utility);
    } else {
      EXPECT_TRUE(std::isnan(back[i].utility));
    }
  }
  rescore_utility(rows, UtilityFn::constant());
  for (const auto& r : rows)
    if (r.label) EXPECT_EQ(r.utility, 1.0);
  std::filesystem::remove(path);
}
