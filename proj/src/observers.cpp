#include "taskiq/observers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Dense>

#include "taskiq/binary_io.hpp"
#include "taskiq/parallel.hpp"

namespace taskiq {

// ---- analytic ---------------------------------------------------------------------

AnalyticIo::AnalyticIo(const TaskSpec& task) {
  task.validate();
  if (!task.amplitude_only() || !task.background_known())
    throw UnsupportedTask("analytic observer needs the known-background amplitude task, got '" + task.name + "'");
  sref_ = task.reference_signal();
  ss_ = squared_norm(sref_.pixels);
  mu_ = task.signal.mean;
  var_a_ = task.signal.sd * task.signal.sd;
  var_n_ = task.noise.sd * task.noise.sd;
}

double AnalyticIo::estimate(const Image& g) const {
  require_same_grid(g, sref_, "analytic_io");
  const double x = dot(sref_.pixels, g.pixels);
  return (var_a_ * x + var_n_ * mu_) / (var_n_ + var_a_ * ss_);
}

double AnalyticIo::statistic(const Image& g) const {
  require_same_grid(g, sref_, "analytic_io");
  const double x = dot(sref_.pixels, g.pixels);
  return mu_ * x + var_a_ * x * x / (2.0 * var_n_);
}

double AnalyticIo::log_likelihood_ratio(const Image& g) const {
  require_same_grid(g, sref_, "analytic_io");
  const double x = dot(sref_.pixels, g.pixels);
  // integral of N(A; mu, var_a) exp((A x - A^2 ss / 2) / var_n) dA
  const double prec = ss_ / var_n_ + 1.0 / var_a_;
  const double lin = x / var_n_ + mu_ / var_a_;
  return 0.5 * lin * lin / prec - 0.5 * mu_ * mu_ / var_a_ - 0.5 * std::log(var_a_ * prec);
}

double AnalyticIo::posterior_variance() const { return 1.0 / (ss_ / var_n_ + 1.0 / var_a_); }

ObserverOutput AnalyticIo::operator()(const Image& g) const {
  ObserverOutput out;
  out.statistic = statistic(g);
  out.estimate = {estimate(g)};
  out.log_lambda = log_likelihood_ratio(g);
  return out;
}

ObserverOutput analytic_io(const Image& g, const TaskSpec& task) { return AnalyticIo(task)(g); }

// ---- network observers ----------------------------------------------------------------

double log_odds(double p) {
  const double q = std::clamp(p, 1e-300, 1.0);
  if (q >= 1.0) return std::numeric_limits<double>::infinity();
  return std::log(q) - std::log1p(-q);
}

double combine_statistic(double log_lambda, double utility_mean) {
  // exp overflows past ~709.78; clamping keeps the product finite and order-preserving in U
  const double ll = std::clamp(log_lambda, -745.0, 709.0);
  return std::exp(ll) * utility_mean;
}

ObserverOutput sub_ideal_no(double posterior, std::span<const double> estimate) {
  ObserverOutput out;
  out.log_lambda = log_odds(posterior);
  out.statistic = combine_statistic(out.log_lambda, 1.0);
  out.estimate.assign(estimate.begin(), estimate.end());
  return out;
}

ObserverOutput sub_ideal_no(const Image& g, const nn::MultiTaskNet<float>& net) {
  const auto pred = net.predict(g);
  return sub_ideal_no(pred.posterior, pred.estimate);
}

ObserverOutput hybrid_io(const Image& g, double posterior, std::span<const double> estimate, const TaskSpec& task,
                         const HybridConfig& cfg, Rng& rng) {
  if (estimate.size() != task.theta_dim()) throw DimensionMismatch("hybrid_io: estimate dimension differs from task");
  ObserverOutput out;
  out.estimate.assign(estimate.begin(), estimate.end());
  out.log_lambda = cfg.calibration ? cfg.calibration(posterior) : log_odds(posterior);
  if (task.utility.kind() == UtilityFn::Kind::constant) {
    out.utility_mean = 1.0;
  } else {
    const ProposalDensity prop = cfg.proposal ? *cfg.proposal : default_proposal(task);
    const ChainTrace chain = sample_posterior(g, task, prop, cfg.chain, rng);
    out.utility_mean = utility_weighted_posterior_mean(out.estimate, task.utility, chain);
    out.flagged = chain.flagged();
  }
  out.statistic = combine_statistic(out.log_lambda, out.utility_mean);
  return out;
}

ObserverOutput hybrid_io(const Image& g, const nn::MultiTaskNet<float>& net, const TaskSpec& task,
                         const HybridConfig& cfg, Rng& rng) {
  const auto pred = net.predict(g);
  return hybrid_io(g, pred.posterior, pred.estimate, task, cfg, rng);
}

// ---- MCMC reference -----------------------------------------------------------------

ObserverOutput mcmc_io(const Image& g, const TaskSpec& task, const McmcIoConfig& cfg, Rng& rng) {
  if (!posterior_mean_is_optimal(task)) {
    throw UnsupportedUtility("mcmc_io: utility '" + task.utility.to_string() +
                             "' has no posterior-mean optimal estimate on task '" + task.name + "'");
  }
  const ProposalDensity prop = cfg.proposal ? *cfg.proposal : default_proposal(task);
  Rng est_rng = rng.split(1);
  Rng ratio_rng = rng.split(2);
  Rng util_rng = rng.split(3);
  ObserverOutput out;
  out.estimate = mcmc_io_ideal_estimate(g, task, prop, cfg.estimate_chain, est_rng);
  const LikelihoodRatioEstimate lr = mcmc_io_likelihood_ratio(g, task, prop, cfg.ratio_chain, ratio_rng);
  out.log_lambda = lr.log_value;
  out.flagged = lr.flagged;
  if (task.utility.kind() == UtilityFn::Kind::constant) {
    out.utility_mean = 1.0;
  } else {
    const ChainTrace chain = sample_posterior(g, task, prop, cfg.utility_chain, util_rng);
    out.utility_mean = utility_weighted_posterior_mean(out.estimate, task.utility, chain);
    out.flagged = out.flagged || chain.flagged();
  }
  out.statistic = combine_statistic(out.log_lambda, out.utility_mean);
  return out;
}

// ---- SLO ------------------------------------------------------------------------------

std::vector<std::vector<double>> slo_grid(const TaskSpec& task, const SloGridSpec& spec) {
  const SignalPrior& p = task.signal;
  std::vector<std::vector<double>> grid;
  auto linspace = [&](double lo, double hi) {
    const int n = std::max(2, spec.scalar_points);
    for (int i = 0; i < n; ++i) grid.push_back({lo + (hi - lo) * i / (n - 1)});
  };
  switch (p.kind) {
    case SignalPrior::Kind::gaussian_amplitude:
      linspace(p.mean - spec.amplitude_span_sd * p.sd, p.mean + spec.amplitude_span_sd * p.sd);
      break;
    case SignalPrior::Kind::uniform_width:
      linspace(p.lo.x, p.hi.x);
      break;
    case SignalPrior::Kind::uniform_location: {
      const int x0 = static_cast<int>(std::ceil(p.lo.x));
      const int x1 = static_cast<int>(std::floor(p.hi.x));
      const int y0 = static_cast<int>(std::ceil(p.lo.y));
      const int y1 = static_cast<int>(std::floor(p.hi.y));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) grid.push_back({static_cast<double>(x), static_cast<double>(y)});
      }
      break;
    }
  }
  if (grid.empty()) throw std::invalid_argument("slo_grid: prior support contains no grid point");
  return grid;
}

namespace {

double grid_log_prior(const SignalPrior& p, std::span<const double> theta) {
  // uniform priors are flat over the closed grid, endpoints included
  return p.kind == SignalPrior::Kind::gaussian_amplitude ? p.log_density(theta) : 0.0;
}

}  // namespace

SloModel build_slo(const TaskSpec& task, const Dataset& noiseless, const SloGridSpec& spec) {
  task.validate();
  if (!noiseless.noiseless) throw std::invalid_argument("build_slo: needs noiseless images");
  if (noiseless.width != task.system.grid_width || noiseless.height != task.system.grid_height)
    throw GridMismatch("build_slo: dataset grid differs from the task");
  if (noiseless.size() < 2) throw std::invalid_argument("build_slo: need at least two images");
  if (!(spec.eigen_floor > 0.0)) throw std::invalid_argument("build_slo: eigen floor must be > 0");

  SloModel m;
  m.width = noiseless.width;
  m.height = noiseless.height;
  m.theta_dim = task.theta_dim();
  m.n_training = noiseless.size();
  const auto npix = static_cast<Eigen::Index>(m.n_pixels());
  const auto n = static_cast<Eigen::Index>(noiseless.size());

  // background samples: absent images as-is, present images with their signal removed
  Eigen::MatrixXd b(npix, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& im = noiseless.images[static_cast<std::size_t>(j)];
    for (Eigen::Index p = 0; p < npix; ++p) b(p, j) = im.pixels.pixels[static_cast<std::size_t>(p)];
    if (im.label == 1) {
      const Image s = task.render_signal(im.theta);
      for (Eigen::Index p = 0; p < npix; ++p) b(p, j) -= s.pixels[static_cast<std::size_t>(p)];
    }
  }
  const Eigen::VectorXd bbar = b.rowwise().mean();
  b.colwise() -= bbar;
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(npix, npix);
  k.selfadjointView<Eigen::Lower>().rankUpdate(b, 1.0 / static_cast<double>(n - 1));
  k.triangularView<Eigen::StrictlyUpper>() = k.transpose();
  k.diagonal().array() += task.noise.sd * task.noise.sd;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
  if (eig.info() != Eigen::Success) throw std::runtime_error("build_slo: eigendecomposition failed");
  Eigen::VectorXd lambda = eig.eigenvalues();
  const double floor = spec.eigen_floor * lambda.maxCoeff();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < floor) {
      lambda(i) = floor;
      ++m.eigen_clamped;
    }
  }
  const Eigen::MatrixXd& v = eig.eigenvectors();
  const Eigen::MatrixXd k_inv = v * lambda.cwiseInverse().asDiagonal() * v.transpose();

  const auto grid = slo_grid(task, spec);
  const auto ng = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd gbar(npix, ng);
  for (Eigen::Index q = 0; q < ng; ++q) {
    const Image s = task.render_signal(grid[static_cast<std::size_t>(q)]);
    for (Eigen::Index p = 0; p < npix; ++p) gbar(p, q) = bbar(p) + s.pixels[static_cast<std::size_t>(p)];
  }
  const Eigen::MatrixXd t = k_inv * gbar;

  m.background_mean.assign(bbar.data(), bbar.data() + npix);
  m.templates.resize(static_cast<std::size_t>(ng * npix));
  m.constants.resize(static_cast<std::size_t>(ng));
  m.log_prior.resize(static_cast<std::size_t>(ng));
  for (Eigen::Index q = 0; q < ng; ++q) {
    const auto& theta = grid[static_cast<std::size_t>(q)];
    m.grid.insert(m.grid.end(), theta.begin(), theta.end());
    const double lp = grid_log_prior(task.signal, theta);
    m.log_prior[static_cast<std::size_t>(q)] = lp;
    m.constants[static_cast<std::size_t>(q)] = -0.5 * gbar.col(q).dot(t.col(q)) + lp;
    std::copy(t.col(q).data(), t.col(q).data() + npix, m.templates.begin() + q * npix);
  }
  return m;
}

SloModel build_slo(const TaskSpec& task, std::size_t n_present, std::size_t n_absent, const Rng& rng,
                   const SloGridSpec& spec, int threads) {
  const Dataset d = generate_dataset(task, n_present, n_absent, rng.split(stream::kSlo), true, threads);
  return build_slo(task, d, spec);
}

ObserverOutput slo(const Image& g, const SloModel& model) {
  if (g.width != model.width || g.height != model.height) throw GridMismatch("slo: image grid differs from model");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < model.n_grid(); ++q) {
    const double v = dot(model.template_at(q), g.pixels) + model.constants[q];
    if (v > best_value) {
      best_value = v;
      best = q;
    }
  }
  ObserverOutput out;
  out.statistic = best_value;
  const auto th = model.grid_point(best);
  out.estimate.assign(th.begin(), th.end());
  return out;
}

namespace {
constexpr std::uint32_t kSloVersion = 1;
}

void save_slo(const std::filesystem::path& path, const SloModel& m) {
  ByteWriter w;
  w.put_magic("TIQSLOMD");
  w.put<std::uint32_t>(kSloVersion);
  w.put<std::int32_t>(m.width);
  w.put<std::int32_t>(m.height);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.theta_dim));
  w.put<std::uint64_t>(m.n_grid());
  w.put<std::uint64_t>(m.eigen_clamped);
  w.put<std::uint64_t>(m.n_training);
  for (double v : m.grid) w.put<double>(v);
  for (double v : m.log_prior) w.put<double>(v);
  for (double v : m.constants) w.put<double>(v);
  for (double v : m.background_mean) w.put<double>(v);
  for (double v : m.templates) w.put<double>(v);
  w.put<std::uint32_t>(crc32_of(w.bytes().data(), w.size()));
  w.save(path);
}

SloModel load_slo(const std::filesystem::path& path) {
  ByteReader r = ByteReader::load(path);
  const auto& bytes = r.bytes();
  if (bytes.size() < 12) throw FormatError("slo model '" + path.string() + "': file too short");
  {
    ByteReader tail(std::vector<unsigned char>(bytes.end() - 4, bytes.end()));
    if (tail.get<std::uint32_t>() != crc32_of(bytes.data(), bytes.size() - 4))
      throw FormatError("slo model '" + path.string() + "': checksum mismatch");
  }
  r.expect_magic("TIQSLOMD");
  if (r.get<std::uint32_t>() != kSloVersion) throw FormatError("slo model: unsupported version");
  SloModel m;
  m.width = r.get<std::int32_t>();
  m.height = r.get<std::int32_t>();
  m.theta_dim = r.get<std::uint32_t>();
  const auto ng = r.get<std::uint64_t>();
  m.eigen_clamped = r.get<std::uint64_t>();
  m.n_training = r.get<std::uint64_t>();
  auto read_n = [&r](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (auto& x : v) x = r.get<double>();
  };
  read_n(m.grid, ng * m.theta_dim);
  read_n(m.log_prior, ng);
  read_n(m.constants, ng);
  read_n(m.background_mean, m.n_pixels());
  read_n(m.templates, ng * m.n_pixels());
  return m;
}

// ---- batch scoring ---------------------------------------------------------------------

std::vector<ScoreRow> score_dataset(const Dataset& data, const ObserverFn& observer, const UtilityFn& u,
                                    int threads) {
  std::vector<ScoreRow> rows(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto& im = data.images[i];
    ObserverOutput o = observer(i, im.pixels);
    ScoreRow& row = rows[i];
    row.image_id = i;
    row.label = im.label;
    row.statistic = o.statistic;
    row.estimate = std::move(o.estimate);
    row.theta = im.theta;
    if (im.label == 1) row.utility = u(row.estimate, row.theta);
  });
  return rows;
}

void rescore_utility(std::vector<ScoreRow>& rows, const UtilityFn& u) {
  for (auto& r : rows) {
    if (r.label == 1) r.utility = u(r.estimate, r.theta);
  }
}

ErocInputs eroc_inputs(std::span<const ScoreRow> rows) {
  ErocInputs in;
  for (const auto& r : rows) {
    if (r.label == 1) {
      in.present.push_back({r.statistic, r.utility});
    } else {
      in.absent.push_back(r.statistic);
    }
  }
  return in;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows, std::size_t theta_dim) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "image_id,label,T";
  for (std::size_t k = 0; k < theta_dim; ++k) out << ",theta_hat_" << k;
  for (std::size_t k = 0; k < theta_dim; ++k) out << ",theta_" << k;
  out << ",utility\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.image_id << ',' << r.label << ',' << r.statistic;
    for (std::size_t k = 0; k < theta_dim; ++k) out << ',' << (k < r.estimate.size() ? r.estimate[k] : 0.0);
    for (std::size_t k = 0; k < theta_dim; ++k) {
      out << ',';
      if (k < r.theta.size()) out << r.theta[k];
    }
    out << ',';
    if (r.label == 1) out << r.utility;
    out << '\n';
  }
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("scores: empty file");
  std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 4 || (cols - 4) % 2 != 0 || line.rfind("image_id,label,T", 0) != 0)
    throw FormatError("scores: unexpected header '" + line + "'");
  const std::size_t dim = (cols - 4) / 2;
  std::vector<ScoreRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != cols) throw FormatError("scores: line " + std::to_string(lineno) + " has wrong column count");
    try {
      ScoreRow r;
      r.image_id = std::stoull(f[0]);
      r.label = std::stoi(f[1]);
      r.statistic = std::stod(f[2]);
      for (std::size_t k = 0; k < dim; ++k) r.estimate.push_back(std::stod(f[3 + k]));
      for (std::size_t k = 0; k < dim; ++k) {
        if (!f[3 + dim + k].empty()) r.theta.push_back(std::stod(f[3 + dim + k]));
      }
      if (!f.back().empty()) r.utility = std::stod(f.back());
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("scores: cannot parse line " + std::to_string(lineno));
    }
  }
  return rows;
}

}  // namespace taskiq
