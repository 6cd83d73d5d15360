#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "taskiq/mcmc.hpp"
#include "taskiq/observers.hpp"
#include "taskiq/task.hpp"

using namespace taskiq;

namespace {

ChainTrace toy_chain(const std::vector<double>& weight, std::size_t n, std::uint64_t seed) {
  LogDensityFn target = [&](std::span<const double> s) { return std::log(weight[static_cast<int>(s[0])]); };
  const int k = static_cast<int>(weight.size());
  ProposalFn propose = [k](std::span<const double> cur, std::span<double> out, Rng& rng) {
    const int step = rng.uniform() < 0.5 ? -1 : 1;
    out[0] = static_cast<double>(((static_cast<int>(cur[0]) + step) % k + k) % k);
  };
  ChainConfig cc;
  cc.n_samples = n;
  cc.burn_in = 100;
  Rng rng(seed);
  const std::vector<double> init{0.0};
  return run_metropolis(target, propose, init, cc, rng);
}

// 8x8 amplitude task on a single-lump background
TaskSpec single_lump_task() {
  TaskSpec t;
  t.name = "single-lump";
  t.system = {1.0, 1.0, 8, 8};
  t.signal = SignalPrior::gaussian_amplitude({1.0, 1.2, {3.5, 3.5}}, 4.0, 2.0);
  t.background = LumpyModel{1.0, 3.0, 1.5};
  t.noise = {0.7};
  t.utility = UtilityFn::quadratic(10);
  return t;
}

}  // namespace

TEST(Metropolis, ThreeStateFrequencies) {
  const std::vector<double> w{0.2, 0.5, 0.3};
  const ChainTrace tr = toy_chain(w, 1'000'000, 1);
  std::vector<double> f(3, 0.0);
  for (std::size_t j = 0; j < tr.size(); ++j) f[static_cast<int>(tr.sample(j)[0])] += 1.0 / tr.size();
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(f[k], w[k], 0.01);
}

TEST(Metropolis, DetailedBalanceFiveStates) {
  const std::vector<double> w{0.1, 0.3, 0.15, 0.25, 0.2};
  const ChainTrace tr = toy_chain(w, 1'000'000, 2);
  std::vector<std::vector<double>> count(5, std::vector<double>(5, 0.0));
  for (std::size_t j = 1; j < tr.size(); ++j)
    count[static_cast<int>(tr.sample(j - 1)[0])][static_cast<int>(tr.sample(j)[0])] += 1.0;
  const double n = static_cast<double>(tr.size() - 1);
  // pi(i) P(i->j) is the flow i->j; it must match j->i
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) EXPECT_NEAR(count[i][j] / n, count[j][i] / n, 0.003) << i << "," << j;
}

TEST(Metropolis, AcceptanceProbability) {
  EXPECT_DOUBLE_EQ(acceptance_probability(0.0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(acceptance_probability(-1.0, -1.0, 0.3, 0.3), 1.0);
  EXPECT_NEAR(acceptance_probability(-1.0, 0.0), std::exp(-1.0), 1e-15);
  EXPECT_EQ(acceptance_probability(-INFINITY, 0.0), 0.0);
  // symmetric q-terms cancel
  EXPECT_DOUBLE_EQ(acceptance_probability(-2.0, -1.0, 0.7, 0.7), acceptance_probability(-2.0, -1.0));
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const double a = acceptance_probability(r.normal(0, 50), r.normal(0, 50), r.normal(), r.normal());
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(Likelihood, Identities) {
  const TaskSpec t = bke_task(Profile::desk);
  Rng r(4);
  Image g = t.system.blank(), b = t.system.blank();
  for (auto& v : g.pixels) v = r.normal(0, 40);
  for (auto& v : b.pixels) v = r.uniform(0, 5);
  const std::vector<double> a1{7.0}, a2{11.0};
  const Image s1 = t.render_signal(a1), s2 = t.render_signal(a2);
  double d = 0, n1 = 0, n2 = 0;
  for (std::size_t m = 0; m < g.size(); ++m) {
    d += (s1.pixels[m] - s2.pixels[m]) * (g.pixels[m] - b.pixels[m]);
    n1 += s1.pixels[m] * s1.pixels[m];
    n2 += s2.pixels[m] * s2.pixels[m];
  }
  const double var = 1600.0;
  EXPECT_NEAR(log_likelihood(g, s1, b, t.noise) - log_likelihood(g, s2, b, t.noise), d / var - (n1 - n2) / (2 * var),
              1e-9);
  // log Lambda_BSKE = log p(g|s) - log p(g|0)
  EXPECT_NEAR(log_bske_likelihood_ratio(g, s1, b, t.noise),
              log_likelihood(g, s1, b, t.noise) - log_likelihood(g, t.system.blank(), b, t.noise), 1e-9);
  EXPECT_EQ(log_bske_likelihood_ratio(g, t.system.blank(), b, t.noise), 0.0);

  Image gs = b;
  for (std::size_t m = 0; m < g.size(); ++m) gs.pixels[m] += s1.pixels[m];
  EXPECT_NEAR(log_likelihood(gs, s1, b, t.noise), 0.0, 1e-20);
  gs.pixels[5] += 3.0;
  EXPECT_NEAR(log_likelihood(gs, s1, b, t.noise), -9.0 / (2 * var), 1e-12);
}

TEST(PosteriorChain, MatchesConjugateMean) {
  const TaskSpec t = bke_task(Profile::paper);
  const AnalyticIo io(t);
  const Dataset d = generate_dataset(t, 3, 0, Rng(5));
  for (std::size_t i = 0; i < d.size(); ++i) {
    ChainConfig cc;
    Rng rng(6 + i);
    const ChainTrace tr = sample_posterior_theta(d.images[i].pixels, t, default_proposal(t), cc, rng);
    EXPECT_EQ(tr.size(), 10'000u);
    EXPECT_NEAR(tr.mean()[0] / io.estimate(d.images[i].pixels), 1.0, 0.02);
    EXPECT_FALSE(tr.flagged());
  }
}

TEST(PosteriorChain, TinyProposalAcceptsAlmostEverything) {
  const TaskSpec t = bke_task(Profile::desk);
  const Dataset d = generate_dataset(t, 1, 0, Rng(7));
  ChainConfig cc;
  cc.n_samples = 2000;
  Rng rng(8);
  const ChainTrace tr = sample_posterior_theta(d.images[0].pixels, t, ProposalDensity::diagonal({1e-6}), cc, rng);
  EXPECT_GT(tr.acceptance_rate(), 0.99);
  EXPECT_NEAR(tr.sample(tr.size() - 1)[0], t.signal.mean, 1e-3);
}

TEST(PosteriorChain, UtilityWeightedMean) {
  ChainTrace tr;
  tr.dim = 1;
  tr.samples.assign(50, 2.0);
  const std::vector<double> th{3.0}, t0{2.0};
  EXPECT_DOUBLE_EQ(utility_weighted_posterior_mean(th, UtilityFn::constant(), tr), 1.0);
  EXPECT_DOUBLE_EQ(utility_weighted_posterior_mean(th, UtilityFn::gaussian(1.5), tr), UtilityFn::gaussian(1.5)(th, t0));
  ChainTrace empty;
  empty.dim = 1;
  EXPECT_THROW(utility_weighted_posterior_mean(th, UtilityFn::constant(), empty), std::invalid_argument);
}

TEST(PosteriorChain, IndependentSeedsAgreeOnUtilityMean) {
  const TaskSpec t = bke_task(Profile::desk);
  const Dataset d = generate_dataset(t, 1, 0, Rng(9));
  ChainConfig cc;
  cc.n_samples = 20000;
  const std::vector<double> th{9.0};
  std::vector<double> est, se;
  for (std::uint64_t seed : {10u, 11u}) {
    Rng rng(seed);
    const ChainTrace tr = sample_posterior_theta(d.images[0].pixels, t, default_proposal(t), cc, rng);
    // batch means for the standard error of a correlated chain
    const std::size_t nb = 40, len = tr.size() / nb;
    std::vector<double> means(nb, 0.0);
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t j = b * len; j < (b + 1) * len; ++j) means[b] += t.utility(th, tr.sample(j)) / len;
    }
    double m = 0, v = 0;
    for (double x : means) m += x / nb;
    for (double x : means) v += (x - m) * (x - m) / (nb - 1);
    est.push_back(m);
    se.push_back(std::sqrt(v / nb));
  }
  EXPECT_LT(std::abs(est[0] - est[1]), 3.0 * std::hypot(se[0], se[1]));
}

TEST(JointChain, FrozenAlphaReproducesThetaChain) {
  const TaskSpec t = lb_task(Profile::desk, UtilityFn::quadratic(200));
  const Dataset d = generate_dataset(t, 1, 0, Rng(12));
  const std::vector<Vec2> centers = unflatten_centers(d.images[0].background_params);
  const Image b = render_lumpy_background(t.system, {std::get<LumpyModel>(t.background), centers});
  ChainConfig cc;
  cc.n_samples = 3000;
  cc.initial_alpha = centers;
  cc.has_initial_alpha = true;
  cc.freeze_alpha = true;
  Rng r1(13), r2(13);
  const ChainTrace joint = sample_posterior_theta_alpha(d.images[0].pixels, t, default_proposal(t), cc, r1);
  const ChainTrace fixed = sample_posterior_theta(d.images[0].pixels, t, default_proposal(t), cc, r2, &b);
  ASSERT_EQ(joint.samples.size(), fixed.samples.size());
  for (std::size_t i = 0; i < joint.samples.size(); ++i) ASSERT_NEAR(joint.samples[i], fixed.samples[i], 1e-9) << i;
  EXPECT_EQ(joint.n_accepted, fixed.n_accepted);
}

TEST(JointChain, SingleLumpMatchesGridPosterior) {
  const TaskSpec t = single_lump_task();
  const auto& model = std::get<LumpyModel>(t.background);
  Rng gen(14);
  const Vec2 c_true{2.0, 5.0};
  const std::vector<double> a_true{5.0};
  Image g = render_lumpy_background(t.system, {model, {c_true}});
  const Image s_true = t.render_signal(a_true);
  for (std::size_t m = 0; m < g.size(); ++m) g.pixels[m] += s_true.pixels[m] + gen.normal(0, t.noise.sd);

  // exhaustive oracle: A on a fine grid, lump centre on a 0.1 px grid over the support
  const Image sref = t.reference_signal();
  const double var = t.noise.sd * t.noise.sd;
  std::vector<double> a_grid;
  for (double a = -4.0; a <= 12.0; a += 0.02) a_grid.push_back(a);
  std::vector<double> log_post(a_grid.size(), -INFINITY);
  for (double cy = -0.45; cy < 7.5; cy += 0.1) {
    for (double cx = -0.45; cx < 7.5; cx += 0.1) {
      const Image b = render_lumpy_background(t.system, {model, {{cx, cy}}});
      double rr = 0, rs = 0, ss = 0;
      for (std::size_t m = 0; m < g.size(); ++m) {
        const double r = g.pixels[m] - b.pixels[m];
        rr += r * r;
        rs += r * sref.pixels[m];
        ss += sref.pixels[m] * sref.pixels[m];
      }
      for (std::size_t k = 0; k < a_grid.size(); ++k) {
        const double a = a_grid[k];
        const double z = (a - t.signal.mean) / t.signal.sd;
        const double lp = -(rr - 2 * a * rs + a * a * ss) / (2 * var) - 0.5 * z * z;
        const double hi = std::max(log_post[k], lp);
        log_post[k] = hi + std::log(std::exp(log_post[k] - hi) + std::exp(lp - hi));
      }
    }
  }
  const double top = *std::max_element(log_post.begin(), log_post.end());
  double z = 0, m1 = 0, m2 = 0, below = 0;
  for (std::size_t k = 0; k < a_grid.size(); ++k) {
    const double w = std::exp(log_post[k] - top);
    z += w;
    m1 += w * a_grid[k];
    m2 += w * a_grid[k] * a_grid[k];
    if (a_grid[k] < 5.0) below += w;
  }
  m1 /= z;
  const double sd = std::sqrt(m2 / z - m1 * m1);
  below /= z;

  ChainConfig cc;
  cc.n_samples = 400'000;
  cc.burn_in = 5000;
  cc.initial_alpha = {{4.0, 4.0}};
  cc.has_initial_alpha = true;
  Rng rng(15);
  const ChainTrace tr =
      sample_posterior_theta_alpha(g, t, ProposalDensity::diagonal({1.0}, 1.0), cc, rng);
  double c1 = 0, c2 = 0, cb = 0;
  for (std::size_t j = 0; j < tr.size(); ++j) {
    const double a = tr.sample(j)[0];
    c1 += a;
    c2 += a * a;
    cb += a < 5.0;
  }
  c1 /= tr.size();
  const double csd = std::sqrt(c2 / tr.size() - c1 * c1);
  cb /= tr.size();
  EXPECT_NEAR(c1 / m1, 1.0, 0.02);
  EXPECT_NEAR(csd / sd, 1.0, 0.05);
  EXPECT_NEAR(cb, below, 0.02);
}

TEST(LikelihoodRatio, NonNegativeAndFinite) {
  const TaskSpec t = lb_task(Profile::desk, UtilityFn::quadratic(200));
  const Dataset d = generate_dataset(t, 2, 2, Rng(16));
  ChainConfig cc;
  cc.n_samples = 2000;
  for (std::size_t i = 0; i < d.size(); ++i) {
    Rng rng(17 + i);
    const auto e = mcmc_io_likelihood_ratio(d.images[i].pixels, t, default_proposal(t), cc, rng);
    EXPECT_TRUE(std::isfinite(e.log_value));
    EXPECT_GE(e.acceptance_rate, 0.0);
    EXPECT_LE(e.acceptance_rate, 1.0);
  }
}

TEST(IdealEstimate, RejectsUnsupportedUtility) {
  TaskSpec t = lb_task(Profile::desk, UtilityFn::l1(20));
  const Dataset d = generate_dataset(t, 1, 0, Rng(18));
  Rng rng(19);
  EXPECT_THROW(mcmc_io_ideal_estimate(d.images[0].pixels, t, default_proposal(t), ChainConfig{}, rng),
               UnsupportedUtility);
  EXPECT_FALSE(posterior_mean_is_optimal(t));
  EXPECT_TRUE(posterior_mean_is_optimal(bke_task(Profile::desk)));
  EXPECT_TRUE(posterior_mean_is_optimal(lb_task(Profile::desk, UtilityFn::quadratic(100))));
}

TEST(IdealEstimate, SymmetricPosteriorGivesCentre) {
  // zero data on a zero-mean prior: the posterior is symmetric about 0
  TaskSpec t = bke_task(Profile::desk);
  t.signal.mean = 0.0;
  ChainConfig cc;
  cc.n_samples = 100'000;
  Rng rng(20);
  const auto est = mcmc_io_ideal_estimate(t.system.blank(), t, default_proposal(t), cc, rng);
  EXPECT_NEAR(est[0], 0.0, 0.1);
}

TEST(Trace, BinaryRoundTrip) {
  const TaskSpec t = bke_task(Profile::desk);
  ChainConfig cc;
  cc.n_samples = 100;
  cc.thin = 3;
  cc.burn_in = 7;
  Rng rng(21);
  const ChainTrace tr = sample_posterior_theta(t.system.blank(), t, default_proposal(t), cc, rng);
  const auto path = std::filesystem::temp_directory_path() / "taskiq_test_trace.bin";
  write_trace(path, tr);
  const ChainTrace r = read_trace(path);
  EXPECT_EQ(r.samples, tr.samples);
  EXPECT_EQ(r.log_likelihood, tr.log_likelihood);
  EXPECT_EQ(r.accepted, tr.accepted);
  EXPECT_EQ(r.step(0), tr.step(0));
  EXPECT_EQ(r.step(99), 7u + 300u);
  std::filesystem::remove(path);
}

TEST(Trace, LogSumExp) {
  const std::vector<double> v{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
  const std::vector<double> w{-1e308, -INFINITY, 0.0};
  EXPECT_NEAR(log_sum_exp(w), 0.0, 1e-15);
  EXPECT_EQ(log_sum_exp(std::vector<double>{}), -INFINITY);
}
