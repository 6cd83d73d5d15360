// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "taskiq/config.hpp"
#include "taskiq/dataset.hpp"
#include "taskiq/eroc.hpp"
#include "taskiq/experiment.hpp"
#include "taskiq/mcmc.hpp"
#include "taskiq/nn/network.hpp"
#include "taskiq/nn/train.hpp"
#include "taskiq/observers.hpp"
#include "taskiq/task.hpp"

using namespace taskiq;

namespace {

// ---- pinned tolerances ----------------------------------------------------------------
constexpr double kC1Target = 0.570, kC1Tol = 0.02, kC1Seconds = 60.0;
constexpr double kC2RelTol = 0.02, kC2Seconds = 600.0;
constexpr double kC3RelTol = 0.05;
constexpr double kC4RelTol = 0.02;
constexpr double kC5RelTol = 1e-4, kC5Seconds = 60.0;
constexpr double kC6Exact = 1e-12;
constexpr double kC7AbsTol = 0.01;
constexpr double kC8AerocTol = 0.05, kC8Spearman = 0.95, kC8Seconds = 1200.0;
constexpr double kC9Tol = 0.05;
constexpr double kC10Tol = 1e-10;

constexpr std::size_t kOracleSamples = 200'000;  // chain length for the 20-image oracles

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << what << " | " << detail << std::endl;
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

// Closed-form pieces of the conjugate amplitude model, written out independently of the library.
struct Conjugate {
  double ss, mu, var_a, var_n;
  double x(const Image& g, const Image& sref) const {
    double v = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) v += sref.pixels[i] * g.pixels[i];
    return v;
  }
  double post_prec() const { return ss / var_n + 1.0 / var_a; }
  double post_mean(double x) const { return (x / var_n + mu / var_a) / post_prec(); }
  double post_var() const { return 1.0 / post_prec(); }
};

Conjugate conjugate(const TaskSpec& t) {
  const Image s = t.reference_signal();
  double ss = 0.0;
  for (double v : s.pixels) ss += v * v;
  return {ss, t.signal.mean, t.signal.sd * t.signal.sd, t.noise.sd * t.noise.sd};
}

std::vector<Image> present_images(const TaskSpec& task, std::size_t n, std::uint64_t seed) {
  const Dataset d = generate_dataset(task, n, 0, Rng(seed));
  std::vector<Image> out;
  for (const auto& im : d.images) out.push_back(im.pixels);
  return out;
}

// ---- 1 --------------------------------------------------------------------------------
void criterion1() {
  const auto t0 = Clock::now();
  const TaskSpec task = bke_task(Profile::paper);
  const Dataset test = generate_dataset(task, 1000, 1000, Rng(1001).split(stream::kTest));
  const AnalyticIo io(task);
  std::vector<PresentScore> present;
  std::vector<double> absent;
  for (const auto& im : test.images) {
    const ObserverOutput o = io(im.pixels);
    if (im.label == 1) present.push_back({o.statistic, task.utility(o.estimate, im.theta)});
    else absent.push_back(o.statistic);
  }
  const AerocEstimate e = aeroc(present, absent, {2000, 0.90, 11, 1});
  const double secs = since(t0);
  report(1, std::abs(e.value - kC1Target) <= kC1Tol && secs < kC1Seconds, "analytic observer AEROC, 64x64, 1000+1000",
         fmt("AEROC %.4f [%.4f, %.4f], target 0.570 +/- 0.02, %.1f s", e.value, e.ci_lo, e.ci_hi, secs));
}

// ---- 2 --------------------------------------------------------------------------------
void criterion2() {
  const auto t0 = Clock::now();
  const TaskSpec task = bke_task(Profile::paper);
  const Conjugate c = conjugate(task);
  const Image sref = task.reference_signal();
  const ProposalDensity prop = default_proposal(task);

  double worst = 0.0;
  const auto images = present_images(task, 20, 2002);
  ChainConfig cc;
  cc.n_samples = kOracleSamples;
  cc.burn_in = 2000;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng rng = Rng(2003).split(i);
    const double mcmc = mcmc_io_ideal_estimate(images[i], task, prop, cc, rng)[0];
    const double exact = c.post_mean(c.x(images[i], sref));
    worst = std::max(worst, std::abs(mcmc / exact - 1.0));
  }

  const Dataset test = generate_dataset(task, 500, 500, Rng(2004).split(stream::kTest));
  const AnalyticIo io(task);
  McmcIoConfig mc;
  mc.estimate_chain.n_samples = mc.utility_chain.n_samples = mc.ratio_chain.n_samples = 10'000;
  mc.estimate_chain.burn_in = mc.utility_chain.burn_in = 1000;
  const Rng base = Rng(2005).split(stream::kObserver);
  std::vector<PresentScore> pa, pm;
  std::vector<double> aa, am;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& im = test.images[i];
    const ObserverOutput a = io(im.pixels);
    Rng rng = base.split(i);
    const ObserverOutput m = mcmc_io(im.pixels, task, mc, rng);
    if (im.label == 1) {
      pa.push_back({a.statistic, task.utility(a.estimate, im.theta)});
      pm.push_back({m.statistic, task.utility(m.estimate, im.theta)});
    } else {
      aa.push_back(a.statistic);
      am.push_back(m.statistic);
    }
  }
  const AerocEstimate ea = aeroc(pa, aa, {2000, 0.90, 21, 1});
  const AerocEstimate em = aeroc(pm, am, {2000, 0.90, 22, 1});
  const bool overlap = em.ci_lo <= ea.ci_hi && ea.ci_lo <= em.ci_hi;
  const double secs = since(t0);
  std::ostringstream d;
  d << fmt("max |A_mcmc/A_I - 1| = %.4f over 20 images (tol 0.02); ", worst)
    << fmt("AEROC mcmc-io %.4f [%.4f, %.4f] vs analytic ", em.value, em.ci_lo, em.ci_hi)
    << fmt("%.4f [%.4f, %.4f]; %.1f s", ea.value, ea.ci_lo, ea.ci_hi, secs);
  report(2, worst <= kC2RelTol && overlap && secs < kC2Seconds, "MCMC posterior-mean estimate and MCMC-IO AEROC",
         d.str());
}

// ---- 3 --------------------------------------------------------------------------------

// Gauss-Hermite nodes and weights (weight function exp(-t^2)) by Golub-Welsch.
void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) j(i, i - 1) = j(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(j);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = eig.eigenvalues()(i);
    const double v0 = eig.eigenvectors()(0, i);
    weights[i] = std::sqrt(M_PI) * v0 * v0;
  }
}

void criterion3() {
  const TaskSpec task = bke_task(Profile::paper);
  const Conjugate c = conjugate(task);
  const Image sref = task.reference_signal();
  std::vector<double> t, w;
  gauss_hermite(96, t, w);

  const auto images = present_images(task, 10, 3003);
  const Dataset absent = generate_dataset(task, 0, 10, Rng(3004));
  std::vector<Image> all = images;
  for (const auto& im : absent.images) all.push_back(im.pixels);

  ChainConfig cc;
  cc.n_samples = kOracleSamples;
  double worst = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const double x = c.x(all[i], sref);
    // Lambda = E_A[exp((A x - A^2 ss / 2) / var_n)], A ~ N(mu, var_a)
    double quad = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double a = c.mu + std::sqrt(2.0 * c.var_a) * t[k];
      quad += w[k] * std::exp((a * x - 0.5 * a * a * c.ss) / c.var_n);
    }
    quad /= std::sqrt(M_PI);
    Rng rng = Rng(3005).split(i);
    const auto est = mcmc_io_likelihood_ratio(all[i], task, default_proposal(task), cc, rng);
    worst = std::max(worst, std::abs(std::exp(est.log_value - std::log(quad)) - 1.0));
  }
  report(3, worst <= kC3RelTol, "Monte Carlo likelihood ratio vs Gauss-Hermite quadrature, 20 images",
         fmt("max |Lambda_mc/Lambda_gh - 1| = %.4f (tol 0.05), J = %.0f", worst, static_cast<double>(kOracleSamples)));
}

// ---- 4 --------------------------------------------------------------------------------
void criterion4() {
  const TaskSpec task = bke_task(Profile::paper);
  const Conjugate c = conjugate(task);
  const Image sref = task.reference_signal();
  const double su2 = task.utility.parameter() * task.utility.parameter();
  ChainConfig cc;
  cc.n_samples = kOracleSamples;
  cc.burn_in = 2000;
  const auto images = present_images(task, 20, 4004);
  Rng offsets(4005);
  double worst = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double m = c.post_mean(c.x(images[i], sref));
    const double v = c.post_var();
    // an estimate away from the posterior mean exercises the exponential factor
    const double theta_hat = m + offsets.uniform(-2.0, 2.0);
    // integral of N(A; m, v) exp(-(theta_hat - A)^2 / (2 su2)) dA
    const double exact = std::sqrt(su2 / (su2 + v)) * std::exp(-0.5 * (theta_hat - m) * (theta_hat - m) / (su2 + v));
    Rng rng = Rng(4006).split(i);
    const ChainTrace chain = sample_posterior_theta(images[i], task, default_proposal(task), cc, rng);
    const std::vector<double> th{theta_hat};
    const double u = utility_weighted_posterior_mean(th, task.utility, chain);
    worst = std::max(worst, std::abs(u / exact - 1.0));
  }
  report(4, worst <= kC4RelTol, "utility-weighted posterior mean vs Gaussian-convolution closed form, 20 images",
         fmt("max |U_mc/U_exact - 1| = %.4f (tol 0.02)", worst));
}

// ---- 5 --------------------------------------------------------------------------------

struct GradStats {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// Relative error with an absolute floor: finite differences of a loss of order one carry
// about 1e-9 of truncation and rounding error, so gradients below the floor compare absolutely.
constexpr double kGradFloor = 1e-5;

void check_net(std::uint64_t seed, GradStats& st) {
  Rng rng(seed);
  nn::Architecture arch;
  arch.input_width = 11;
  arch.input_height = 10;
  arch.filters = 3;
  arch.kernel = 3;
  arch.shared_layers = 2;
  arch.estimation_layers = 1;
  arch.theta_dim = 2;
  arch.leaky_slope = 0.1;
  nn::MultiTaskNet<double> net(arch);
  net.initialize(rng);
  for (auto& p : net.params()) p += 0.05 * rng.normal();  // non-zero biases
  net.out_offset = {0.3, -0.2};
  net.out_scale = {1.7, 0.6};
  net.in_offset = 0.1;
  net.in_scale = 0.9;

  const int n = 3;
  std::vector<Image> batch;
  for (int b = 0; b < n; ++b) {
    Image im(arch.input_width, arch.input_height);
    for (auto& v : im.pixels) v = rng.normal();
    batch.push_back(im);
  }
  const std::vector<int> y{1, 0, 1};
  const std::vector<double> theta{0.5, -1.0, 0.0, 0.0, -0.3, 0.8};
  const UtilityFn u = UtilityFn::gaussian(1.5);

  nn::Workspace<double> ws;
  auto losses = [&](double& det, double& est, std::uint64_t& pattern) {
    net.load_batch(std::span<const Image>(batch), ws);
    net.forward(ws);
    const auto p = net.detection_output(ws);
    det = nn::detection_loss(p, y);
    const auto th = net.estimation_output(ws);
    est = nn::estimation_loss(th, theta, 2, u);
    pattern = net.activation_pattern(ws);
  };

  double d0, e0;
  std::uint64_t pat0;
  losses(d0, e0, pat0);
  std::vector<double> g_det(net.n_params(), 0.0), g_est(net.n_params(), 0.0);
  {
    const auto p = net.detection_output(ws);
    std::vector<double> dlogit(n);
    nn::detection_logit_grad<double>(p, y, dlogit);
    net.backward_detection(ws, dlogit, g_det);
    const auto th = net.estimation_output(ws);
    std::vector<double> dth(th.size());
    nn::estimation_loss_grad(th, theta, 2, u, dth);
    net.backward_estimation(ws, dth, g_est, true);
  }

  const double h = 1e-4;
  for (std::size_t k = 0; k < net.n_params(); ++k) {
    const double keep = net.params()[k];
    double dp, ep, dm, em;
    std::uint64_t pp, pm;
    net.params()[k] = keep + h;
    losses(dp, ep, pp);
    net.params()[k] = keep - h;
    losses(dm, em, pm);
    net.params()[k] = keep;
    if (pp != pat0 || pm != pat0) {  // a kink or pooling switch lies inside [-h, h]
      ++st.skipped;
      continue;
    }
    const double fd_det = (dp - dm) / (2 * h);
    const double fd_est = (ep - em) / (2 * h);
    const double r1 = std::abs(fd_det - g_det[k]) / std::max({std::abs(fd_det), std::abs(g_det[k]), kGradFloor});
    const double r2 = std::abs(fd_est - g_est[k]) / std::max({std::abs(fd_est), std::abs(g_est[k]), kGradFloor});
    st.worst = std::max({st.worst, r1, r2});
    st.checked += 2;
  }
}

void check_loss_functions(std::uint64_t seed, GradStats& st) {
  Rng rng(seed);
  const double h = 1e-6;
  for (int y = 0; y <= 1; ++y) {
    const double p = rng.uniform(0.05, 0.95);
    std::vector<double> pp{p + h}, pm{p - h};
    std::vector<int> yy{y};
    const double fd = (nn::detection_loss(pp, yy) - nn::detection_loss(pm, yy)) / (2 * h);
    const double an = nn::detection_loss_grad(p, y);
    st.worst = std::max(st.worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), kGradFloor}));
    ++st.checked;
  }
  for (const UtilityFn& u : {UtilityFn::gaussian(2.0), UtilityFn::quadratic(50.0), UtilityFn::l1(10.0)}) {
    std::vector<double> th{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const std::vector<double> truth{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    std::vector<double> an(4);
    nn::estimation_loss_grad(th, truth, 2, u, an);
    for (std::size_t k = 0; k < 4; ++k) {
      const double keep = th[k];
      th[k] = keep + h;
      const double lp = nn::estimation_loss(th, truth, 2, u);
      th[k] = keep - h;
      const double lm = nn::estimation_loss(th, truth, 2, u);
      th[k] = keep;
      const double fd = (lp - lm) / (2 * h);
      st.worst = std::max(st.worst, std::abs(fd - an[k]) / std::max({std::abs(fd), std::abs(an[k]), kGradFloor}));
      ++st.checked;
    }
  }
}

void criterion5() {
  const auto t0 = Clock::now();
  GradStats st;
  for (std::uint64_t s = 0; s < 50; ++s) {
    check_net(5000 + s, st);
    check_loss_functions(6000 + s, st);
  }
  const double secs = since(t0);
  std::ostringstream d;
  d << fmt("max relative error %.2e (tol 1e-4) over ", st.worst) << st.checked << " derivatives, " << st.skipped
    << " parameters skipped at kinks, 50 seeds, " << fmt("%.1f s", secs);
  report(5, st.worst < kC5RelTol && secs < kC5Seconds, "finite-difference gradients, conv/pool/dense and both losses",
         d.str());
}

// ---- 6 --------------------------------------------------------------------------------
double brute_aeroc(const std::vector<PresentScore>& p, const std::vector<double>& a) {
  double s = 0.0;
  for (const auto& x : p) {
    for (double y : a) s += x.utility * (x.statistic > y ? 1.0 : x.statistic == y ? 0.5 : 0.0);
  }
  return s / (static_cast<double>(p.size()) * static_cast<double>(a.size()));
}

void criterion6() {
  Rng rng(6006);
  bool a_ok = true, b_ok = true, c_ok = true, d_ok = true;
  double b_worst = 0.0, d_worst = 0.0;

  // (a) constant utility: Mann-Whitney AUC, ties counted half, on coarse (tie-heavy) scores
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n1 = 1 + rng.uniform_index(30), n0 = 1 + rng.uniform_index(30);
    std::vector<PresentScore> p;
    std::vector<double> a;
    for (std::size_t i = 0; i < n1; ++i) p.push_back({std::round(rng.normal(1.0, 1.0) * 2) / 2, 1.0});
    for (std::size_t j = 0; j < n0; ++j) a.push_back(std::round(rng.normal() * 2) / 2);
    std::size_t wins2 = 0;  // twice the Mann-Whitney U
    for (const auto& x : p) {
      for (double y : a) wins2 += x.statistic > y ? 2 : x.statistic == y ? 1 : 0;
    }
    const double auc = static_cast<double>(wins2) / (2.0 * static_cast<double>(n1 * n0));
    if (aeroc_value(p, a) != auc) a_ok = false;
  }

  // (b) brute force on random instances with n <= 20 and signed utilities
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n1 = 1 + rng.uniform_index(20), n0 = 1 + rng.uniform_index(20);
    std::vector<PresentScore> p;
    std::vector<double> a;
    for (std::size_t i = 0; i < n1; ++i) p.push_back({std::round(rng.normal() * 4) / 4, rng.uniform(-1.0, 1.0)});
    for (std::size_t j = 0; j < n0; ++j) a.push_back(std::round(rng.normal() * 4) / 4);
    const double diff = std::abs(aeroc_value(p, a) - brute_aeroc(p, a));
    b_worst = std::max(b_worst, diff);
    if (diff > kC6Exact) b_ok = false;
  }

  // (c) strictly increasing maps
  std::vector<PresentScore> p;
  std::vector<double> a;
  for (int i = 0; i < 60; ++i) p.push_back({rng.normal(0.5, 1.0), rng.uniform(0.0, 1.0)});
  for (int j = 0; j < 50; ++j) a.push_back(rng.normal());
  const double base = aeroc_value(p, a);
  for (int rep = 0; rep < 50; ++rep) {
    const double s = rng.uniform(0.1, 3.0), o = rng.uniform(-5.0, 5.0);
    const int kind = rep % 5;
    auto f = [&](double x) {
      switch (kind) {
        case 0: return s * x + o;
        case 1: return std::exp(s * x);
        case 2: return x * x * x + s * x;
        case 3: return std::atan(s * x) + o;
        default: return std::tanh(x / 4) * s + 1e-3 * x;
      }
    };
    std::vector<PresentScore> q = p;
    std::vector<double> b = a;
    for (auto& x : q) x.statistic = f(x.statistic);
    for (auto& x : b) x = f(x);
    if (std::abs(aeroc_value(q, b) - base) > kC6Exact) c_ok = false;
  }

  // (d) trapezoid area of the curve equals the double sum when there are no ties
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<PresentScore> q;
    std::vector<double> b;
    const std::size_t n1 = 1 + rng.uniform_index(40), n0 = 1 + rng.uniform_index(40);
    for (std::size_t i = 0; i < n1; ++i) q.push_back({rng.normal(0.7, 1.0), rng.uniform(-0.5, 1.0)});
    for (std::size_t j = 0; j < n0; ++j) b.push_back(rng.normal());
    const double diff = std::abs(aeroc_from_curve(eroc_curve(q, b)) - brute_aeroc(q, b));
    d_worst = std::max(d_worst, diff);
    if (diff > kC6Exact) d_ok = false;
  }
  std::ostringstream d;
  d << "(a) " << (a_ok ? "exact" : "MISMATCH") << ", (b) max diff " << fmt("%.1e", b_worst) << ", (c) "
    << (c_ok ? "invariant" : "CHANGED") << ", (d) max diff " << fmt("%.1e", d_worst) << " (tol 1e-12)";
  report(6, a_ok && b_ok && c_ok && d_ok, "AEROC estimator properties", d.str());
}

// ---- 7 --------------------------------------------------------------------------------
void criterion7() {
  // five states with a non-uniform prior and a likelihood; target is their normalized product
  const std::vector<double> prior{0.1, 0.3, 0.2, 0.25, 0.15};
  const std::vector<double> like{0.8, 0.2, 0.5, 0.9, 0.4};
  std::vector<double> post(5);
  double z = 0.0;
  for (int k = 0; k < 5; ++k) z += post[k] = prior[k] * like[k];
  for (double& v : post) v /= z;

  LogDensityFn target = [&](std::span<const double> s) {
    const int k = static_cast<int>(s[0]);
    return std::log(prior[k]) + std::log(like[k]);
  };
  // symmetric walk on a ring: +-1 or +-2 with equal probability
  ProposalFn propose = [](std::span<const double> cur, std::span<double> out, Rng& rng) {
    static const int steps[4] = {-2, -1, 1, 2};
    const int k = static_cast<int>(cur[0]) + steps[rng.uniform_index(4)];
    out[0] = static_cast<double>(((k % 5) + 5) % 5);
  };
  ChainConfig cc;
  cc.n_samples = 1'000'000;
  cc.burn_in = 1000;
  Rng rng(7007);
  const std::vector<double> init{0.0};
  const ChainTrace tr = run_metropolis(target, propose, init, cc, rng);
  std::vector<double> freq(5, 0.0);
  for (std::size_t j = 0; j < tr.size(); ++j) freq[static_cast<int>(tr.sample(j)[0])] += 1.0;
  double worst = 0.0;
  for (int k = 0; k < 5; ++k) worst = std::max(worst, std::abs(freq[k] / static_cast<double>(tr.size()) - post[k]));
  report(7, worst < kC7AbsTol, "5-state Metropolis chain vs normalized posterior, 1e6 steps",
         fmt("max |freq - p| = %.4f (tol 0.01), acceptance %.3f", worst, tr.acceptance_rate()));
}

// ---- 8 --------------------------------------------------------------------------------
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

void criterion8() {
  const auto t0 = Clock::now();
  ConfigOverrides o;
  o.seed = 8008;
  const ExperimentConfig cfg = load_config(TASKIQ_SOURCE_DIR "/presets/bke-hybrid.yaml", o);
  const Dataset test = make_test_set(cfg);
  const TrainedModel model = train_model(cfg);
  ObserverContext ctx;
  ctx.cfg = &cfg;
  ctx.net = &model.net;
  const ScoredObserver analytic = score_observer("analytic", test, ctx);
  const ScoredObserver hybrid = score_observer("hybrid", test, ctx);
  std::vector<double> ta, th;
  for (std::size_t i = 0; i < test.size(); ++i) {
    ta.push_back(analytic.rows[i].statistic);
    th.push_back(hybrid.rows[i].statistic);
  }
  const double rho = spearman(ta, th);
  const double diff = std::abs(hybrid.result.aeroc.value - analytic.result.aeroc.value);
  const double secs = since(t0);
  std::ostringstream d;
  d << "16x16, " << cfg.network.shared_layers << "+" << cfg.network.estimation_layers << " conv layers, "
    << cfg.network.filters << " filters, " << cfg.train.present << " training pairs, " << cfg.training.n_batches
    << " mini-batches; " << fmt("AEROC hybrid %.4f vs analytic %.4f (|diff| %.4f, tol 0.05), ", hybrid.result.aeroc.value,
                                analytic.result.aeroc.value, diff)
    << fmt("Spearman %.4f (min 0.95), %.0f s", rho, secs);
  report(8, diff < kC8AerocTol && rho > kC8Spearman && secs < kC8Seconds && cfg.training.n_batches <= 10'000 &&
                cfg.train.present == 10'000,
         "desk-scale hybrid observer vs analytic observer", d.str());
}

// ---- 9 --------------------------------------------------------------------------------
void criterion9() {
  struct Expect {
    const char* file;
    std::vector<std::pair<const char*, double>> targets;
  };
  const std::vector<Expect> expected{
      {"lb-quadratic-200.yaml", {{"hybrid", 0.697}, {"sub-ideal", 0.686}, {"mcmc-io", 0.708}}},
      {"lb-quadratic-100.yaml", {{"hybrid", 0.545}, {"sub-ideal", 0.486}, {"mcmc-io", 0.553}}},
      {"lb-l1-20.yaml", {{"hybrid", 0.643}, {"sub-ideal", 0.633}, {"slo", 0.294}}},
      {"clb.yaml", {{"sub-ideal", 0.601}, {"slo", 0.538}}},
  };
  bool ok = true;
  std::ostringstream d;
  for (const auto& e : expected) {
    ConfigOverrides o;
    o.profile = Profile::paper;
    const ExperimentConfig paper = load_config(std::string(TASKIQ_SOURCE_DIR "/presets/") + e.file, o);
    o.profile = Profile::desk;
    const ExperimentConfig desk = load_config(std::string(TASKIQ_SOURCE_DIR "/presets/") + e.file, o);
    ok = ok && desk.verify.empty() && paper.task.system.grid_width == 64 && paper.training.n_batches == 200'000 &&
         paper.train.present >= 150'000;
    for (const auto& [obs, v] : e.targets) {
      const auto it = paper.verify.find(obs);
      ok = ok && it != paper.verify.end() && std::abs(it->second.aeroc - v) < 1e-12 &&
           std::abs(it->second.tolerance - kC9Tol) < 1e-12;
    }
    ok = ok && !execution_plan(paper).empty();
  }
  d << "not reproducible at desk scale; 4 paper-profile presets expose the 11 AEROC targets at +/- 0.05 behind "
       "--profile paper (200k mini-batches, 150k-200k image pairs); not run here";
  report(9, ok, "declared paper-scale reproductions", d.str());
}

// ---- 10 -------------------------------------------------------------------------------
void criterion10() {
  Rng rng(10010);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    TaskSpec task = bke_task(Profile::desk);
    task.system.grid_width = 6 + static_cast<int>(rng.uniform_index(5));
    task.system.grid_height = 6 + static_cast<int>(rng.uniform_index(5));
    task.system.prf_width = rng.uniform(0.5, 3.0);
    task.signal.base.center = {task.system.grid_width / 2.0, task.system.grid_height / 2.0};
    task.signal.mean = rng.uniform(2.0, 10.0);
    task.signal.sd = rng.uniform(0.5, 4.0);
    task.noise.sd = rng.uniform(1.0, 30.0);
    const Dataset clean = generate_dataset(task, 20, 20, rng.split(static_cast<std::uint64_t>(rep)), true);
    const SloModel m = build_slo(task, clean, {33, 4.0, 1e-6});
    const double var = task.noise.sd * task.noise.sd;
    Image g(task.system.grid_width, task.system.grid_height);
    for (auto& v : g.pixels) v = rng.normal(0.0, task.noise.sd);
    // matched filter: (s^T g - s^T s / 2) / sigma^2 + ln p
    double best = -1e300;
    for (std::size_t q = 0; q < m.n_grid(); ++q) {
      const Image s = task.render_signal(m.grid_point(q));
      double sg = 0, ss = 0, scale = 0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        sg += s.pixels[i] * g.pixels[i];
        ss += s.pixels[i] * s.pixels[i];
        scale = std::max(scale, std::abs(s.pixels[i]) / var);
      }
      for (std::size_t i = 0; i < s.size(); ++i)
        worst = std::max(worst, std::abs(m.template_at(q)[i] - s.pixels[i] / var) / scale);
      const double z = (m.grid_point(q)[0] - task.signal.mean) / task.signal.sd;
      const double c = -0.5 * ss / var - 0.5 * z * z;
      worst = std::max(worst, std::abs(m.constants[q] - c) / std::max(1.0, std::abs(c)));
      best = std::max(best, sg / var + c);
    }
    const double t = slo(g, m).statistic;
    worst = std::max(worst, std::abs(t - best) / std::max(1.0, std::abs(best)));
  }

  // grid MAP: the conjugate amplitude posterior has its mode at the posterior mean
  const TaskSpec task = bke_task(Profile::desk);
  const Dataset clean = generate_dataset(task, 10, 10, Rng(10011), true);
  const SloModel m = build_slo(task, clean);
  const Conjugate c = conjugate(task);
  const Image sref = task.reference_signal();
  const double cell = 8.0 * task.signal.sd / 256.0;
  const Dataset test = generate_dataset(task, 50, 50, Rng(10012));
  double worst_cells = 0.0;
  std::size_t inside = 0;
  for (const auto& im : test.images) {
    const double map = c.post_mean(c.x(im.pixels, sref));
    if (std::abs(map - task.signal.mean) > 4.0 * task.signal.sd) continue;
    ++inside;
    worst_cells = std::max(worst_cells, std::abs(slo(im.pixels, m).estimate[0] - map) / cell);
  }
  std::ostringstream d;
  d << fmt("zero-variability reduction max rel. diff %.1e (tol 1e-10); grid MAP off by at most %.2f cells over ", worst,
           worst_cells)
    << inside << " images (tol 1)";
  report(10, worst <= kC10Tol && worst_cells <= 1.0, "scanning linear observer", d.str());
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> checks{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                  criterion6, criterion7, criterion8, criterion9, criterion10};
  for (std::size_t i = 0; i < checks.size(); ++i) {
    try {
      checks[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), false, "threw", e.what());
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
