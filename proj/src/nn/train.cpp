#include "taskiq/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "taskiq/parallel.hpp"

namespace taskiq::nn {

double detection_loss(std::span<const double> p, std::span<const int> y) {
  if (p.size() != y.size()) throw DimensionMismatch("detection_loss: size mismatch");
  if (p.empty()) throw std::invalid_argument("detection_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbClip, 1.0 - kProbClip);
    acc -= y[i] == 1 ? std::log(q) : std::log1p(-q);
  }
  return acc / static_cast<double>(p.size());
}

double detection_loss_grad(double p, int y) {
  const double q = std::clamp(p, kProbClip, 1.0 - kProbClip);
  return y == 1 ? -1.0 / q : 1.0 / (1.0 - q);
}

template <class T>
void detection_logit_grad(std::span<const T> p, std::span<const int> y, std::span<T> out) {
  const T n = static_cast<T>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = static_cast<double>(p[i]);
    const bool clamped = pi < kProbClip || pi > 1.0 - kProbClip;
    out[i] = clamped ? T(0) : (p[i] - static_cast<T>(y[i])) / n;
  }
}

template void detection_logit_grad<float>(std::span<const float>, std::span<const int>, std::span<float>);
template void detection_logit_grad<double>(std::span<const double>, std::span<const int>, std::span<double>);

double estimation_loss(std::span<const double> theta_hat, std::span<const double> theta, std::size_t dim,
                       const UtilityFn& u) {
  if (theta_hat.size() != theta.size() || dim == 0 || theta.size() % dim != 0)
    throw DimensionMismatch("estimation_loss: size mismatch");
  const std::size_t n = theta.size() / dim;
  if (n == 0) throw std::invalid_argument("estimation_loss: no signal-present samples");
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) acc += u(theta_hat.subspan(j * dim, dim), theta.subspan(j * dim, dim));
  return -acc / static_cast<double>(n);
}

void estimation_loss_grad(std::span<const double> theta_hat, std::span<const double> theta, std::size_t dim,
                          const UtilityFn& u, std::span<double> out) {
  if (theta_hat.size() != theta.size() || out.size() != theta.size() || dim == 0 || theta.size() % dim != 0)
    throw DimensionMismatch("estimation_loss_grad: size mismatch");
  const std::size_t n = theta.size() / dim;
  if (n == 0) throw std::invalid_argument("estimation_loss_grad: no signal-present samples");
  for (std::size_t j = 0; j < n; ++j) {
    u.gradient(theta_hat.subspan(j * dim, dim), theta.subspan(j * dim, dim), out.subspan(j * dim, dim));
    for (std::size_t k = 0; k < dim; ++k) out[j * dim + k] /= -static_cast<double>(n);
  }
}

// ---- Adam ---------------------------------------------------------------------

template <class T>
Adam<T>::Adam(ParamRange range, AdamConfig cfg)
    : range_(range), cfg_(cfg), m_(range.size(), 0.0), v_(range.size(), 0.0) {
  if (!(cfg.lr >= 0.0)) throw std::invalid_argument("adam: learning rate must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw std::invalid_argument("adam: betas must be in [0,1)");
  if (!(cfg.eps > 0.0)) throw std::invalid_argument("adam: eps must be > 0");
}

template <class T>
void Adam<T>::step(std::span<T> params, std::span<const T> grad) {
  if (params.size() < range_.end || grad.size() < range_.end) throw ShapeMismatch("adam: parameter span too short");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < range_.size(); ++i) {
    const double g = static_cast<double>(grad[range_.begin + i]);
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    const double mh = m_[i] / c1;
    const double vh = v_[i] / c2;
    params[range_.begin + i] -= static_cast<T>(cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
  }
}

template class Adam<float>;
template class Adam<double>;

// ---- training -------------------------------------------------------------------

void TrainConfig::validate() const {
  if (n_present == 0 || n_absent == 0) throw std::invalid_argument("train: both batch halves must be non-empty");
  if (n_batches == 0) throw std::invalid_argument("train: need at least one mini-batch");
  if (shards == 0) throw std::invalid_argument("train: shards must be >= 1");
  if (shards > n_present || shards > n_absent) throw std::invalid_argument("train: more shards than batch members");
  if (!(adam.lr >= 0.0)) throw std::invalid_argument("train: learning rate must be >= 0");
}

template <class T>
void fit_normalization(MultiTaskNet<T>& net, const Dataset& train, const TaskSpec& task, bool noiseless) {
  double sum = 0.0;
  double sum2 = 0.0;
  std::size_t count = 0;
  for (const auto& im : train.images) {
    for (double v : im.pixels.pixels) {
      sum += v;
      sum2 += v * v;
    }
    count += im.pixels.size();
  }
  if (count == 0) throw std::invalid_argument("fit_normalization: empty training set");
  const double mean = sum / static_cast<double>(count);
  double var = std::max(0.0, sum2 / static_cast<double>(count) - mean * mean);
  if (noiseless) var += task.noise.sd * task.noise.sd;
  net.in_offset = static_cast<T>(mean);
  net.in_scale = static_cast<T>(var > 0.0 ? 1.0 / std::sqrt(var) : 1.0);
  const auto loc = task.signal.initial_state();
  const auto spread = task.signal.spread();
  for (std::size_t k = 0; k < net.out_offset.size() && k < loc.size(); ++k) {
    net.out_offset[k] = static_cast<T>(loc[k]);
    net.out_scale[k] = static_cast<T>(spread[k]);
  }
}

template <class T>
ValidationLoss evaluate_losses(const MultiTaskNet<T>& net, const Dataset& data, const UtilityFn& u, int batch) {
  std::vector<double> p;
  std::vector<int> y;
  std::vector<double> est;
  std::vector<double> truth;
  Workspace<T> ws;
  const std::size_t step = static_cast<std::size_t>(std::max(1, batch));
  const std::size_t dim = static_cast<std::size_t>(net.architecture().theta_dim);
  for (std::size_t start = 0; start < data.size(); start += step) {
    const std::size_t count = std::min(step, data.size() - start);
    std::vector<const Image*> ptrs;
    for (std::size_t i = 0; i < count; ++i) ptrs.push_back(&data.images[start + i].pixels);
    net.load_batch(std::span<const Image* const>(ptrs), ws);
    net.forward(ws);
    const auto pb = net.detection_output(ws);
    const auto eb = net.estimation_output(ws);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& im = data.images[start + i];
      p.push_back(static_cast<double>(pb[i]));
      y.push_back(im.label);
      if (im.label == 1) {
        for (std::size_t k = 0; k < dim; ++k) {
          est.push_back(static_cast<double>(eb[i * dim + k]));
          truth.push_back(im.theta.at(k));
        }
      }
    }
  }
  ValidationLoss out;
  if (!p.empty()) out.detection = detection_loss(p, y);
  if (!truth.empty()) out.estimation = estimation_loss(est, truth, dim, u);
  return out;
}

namespace {

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(static_cast<double>(x)); });
}

std::pair<std::size_t, std::size_t> shard_bounds(std::size_t n, std::size_t shards, std::size_t s) {
  return {n * s / shards, n * (s + 1) / shards};
}

}  // namespace

template <class T>
TrainHistory train(MultiTaskNet<T>& net, const Dataset& train_set, const Dataset& validation, const TaskSpec& task,
                   const TrainConfig& cfg) {
  cfg.validate();
  const Architecture& arch = net.architecture();
  if (train_set.width != arch.input_width || train_set.height != arch.input_height)
    throw ShapeMismatch("train: dataset grid does not match the network input");
  if (static_cast<std::size_t>(arch.theta_dim) != task.theta_dim())
    throw ShapeMismatch("train: network estimate dimension differs from the task");
  std::vector<std::size_t> present;
  std::vector<std::size_t> absent;
  for (std::size_t i = 0; i < train_set.size(); ++i) (train_set.images[i].label == 1 ? present : absent).push_back(i);
  if (present.empty() || absent.empty()) throw std::invalid_argument("train: training set needs both classes");

  const bool add_noise_now = cfg.semi_online && train_set.noiseless;
  if (cfg.fit_normalization) fit_normalization(net, train_set, task, train_set.noiseless);

  const std::size_t dim = task.theta_dim();
  Adam<T> est_opt(cfg.estimation_into_trunk ? net.estimation_path() : net.estimation_range(), cfg.adam);
  Adam<T> det_opt(net.detection_path(), cfg.adam);
  const Rng root = Rng(cfg.seed).split(stream::kTraining);
  const std::size_t shards = cfg.shards;
  std::vector<Workspace<T>> ws(shards);
  std::vector<std::vector<T>> grads(shards, std::vector<T>(net.n_params()));
  std::vector<T> total(net.n_params());
  std::vector<double> shard_loss(shards);

  TrainHistory history;
  const std::size_t n_all = cfg.n_present + cfg.n_absent;
  std::vector<Image> batch(n_all);
  std::vector<int> labels(n_all);
  std::vector<const std::vector<double>*> thetas(cfg.n_present);

  auto reduce = [&] {
    std::fill(total.begin(), total.end(), T(0));
    for (std::size_t s = 0; s < shards; ++s) {
      for (std::size_t k = 0; k < total.size(); ++k) total[k] += grads[s][k];
    }
  };

  for (std::size_t t = 0; t < cfg.n_batches; ++t) {
    Rng rng = root.split(t);
    for (std::size_t i = 0; i < n_all; ++i) {
      const bool is_present = i < cfg.n_present;
      const auto& pool = is_present ? present : absent;
      const auto& src = train_set.images[pool[rng.uniform_index(pool.size())]];
      batch[i] = src.pixels;
      labels[i] = src.label;
      if (is_present) thetas[i] = &src.theta;
    }
    if (add_noise_now) {
      for (auto& im : batch) add_noise(im, task.noise, rng);
    }

    // estimation step: signal-present members only
    parallel_for(shards, cfg.threads, [&](std::size_t s) {
      const auto [lo, hi] = shard_bounds(cfg.n_present, shards, s);
      std::fill(grads[s].begin(), grads[s].end(), T(0));
      net.load_batch(std::span<const Image>(batch.data() + lo, hi - lo), ws[s]);
      net.forward(ws[s], false, true);
      const auto est = net.estimation_output(ws[s]);
      std::vector<double> e(est.begin(), est.end());
      std::vector<double> truth;
      for (std::size_t i = lo; i < hi; ++i) truth.insert(truth.end(), thetas[i]->begin(), thetas[i]->end());
      std::vector<double> g(e.size());
      estimation_loss_grad(e, truth, dim, task.utility, g);
      const double share = static_cast<double>(hi - lo) / static_cast<double>(cfg.n_present);
      shard_loss[s] = estimation_loss(e, truth, dim, task.utility) * share;
      std::vector<T> gt(g.size());
      for (std::size_t k = 0; k < g.size(); ++k) gt[k] = static_cast<T>(g[k] * share);
      net.backward_estimation(ws[s], gt, grads[s], cfg.estimation_into_trunk);
    });
    reduce();
    const double est_loss = std::accumulate(shard_loss.begin(), shard_loss.end(), 0.0);
    if (!std::isfinite(est_loss) || !all_finite<T>(total))
      throw TrainingDiverged("training diverged at mini-batch " + std::to_string(t) + ": estimation loss " +
                             std::to_string(est_loss));
    est_opt.step(net.params(), total);

    // detection step: whole batch, with the updated trunk
    parallel_for(shards, cfg.threads, [&](std::size_t s) {
      const auto [plo, phi] = shard_bounds(cfg.n_present, shards, s);
      const auto [alo, ahi] = shard_bounds(cfg.n_absent, shards, s);
      std::vector<const Image*> ptrs;
      std::vector<int> y;
      for (std::size_t i = plo; i < phi; ++i) {
        ptrs.push_back(&batch[i]);
        y.push_back(labels[i]);
      }
      for (std::size_t i = alo; i < ahi; ++i) {
        ptrs.push_back(&batch[cfg.n_present + i]);
        y.push_back(labels[cfg.n_present + i]);
      }
      std::fill(grads[s].begin(), grads[s].end(), T(0));
      net.load_batch(std::span<const Image* const>(ptrs), ws[s]);
      net.forward(ws[s], true, false);
      const auto p = net.detection_output(ws[s]);
      std::vector<T> dz(p.size());
      detection_logit_grad<T>(p, y, dz);
      const double share = static_cast<double>(p.size()) / static_cast<double>(n_all);
      for (T& v : dz) v = static_cast<T>(v * share);
      std::vector<double> pd(p.begin(), p.end());
      shard_loss[s] = detection_loss(pd, y) * share;
      net.backward_detection(ws[s], dz, grads[s]);
    });
    reduce();
    const double det_loss = std::accumulate(shard_loss.begin(), shard_loss.end(), 0.0);
    if (!std::isfinite(det_loss) || !all_finite<T>(total))
      throw TrainingDiverged("training diverged at mini-batch " + std::to_string(t) + ": detection loss " +
                             std::to_string(det_loss));
    det_opt.step(net.params(), total);
    if (!all_finite<T>(net.params()))
      throw TrainingDiverged("training diverged at mini-batch " + std::to_string(t) + ": non-finite weights");

    const bool last = t + 1 == cfg.n_batches;
    if (last || (cfg.validate_every > 0 && (t + 1) % cfg.validate_every == 0)) {
      HistoryEntry h;
      h.batch = t + 1;
      h.train_detection = det_loss;
      h.train_estimation = est_loss;
      if (!validation.images.empty()) {
        const auto v = evaluate_losses(net, validation, task.utility);
        h.val_detection = v.detection;
        h.val_estimation = v.estimation;
      }
      history.entries.push_back(h);
    }
  }
  return history;
}

template void fit_normalization<float>(MultiTaskNet<float>&, const Dataset&, const TaskSpec&, bool);
template void fit_normalization<double>(MultiTaskNet<double>&, const Dataset&, const TaskSpec&, bool);
template ValidationLoss evaluate_losses<float>(const MultiTaskNet<float>&, const Dataset&, const UtilityFn&, int);
template ValidationLoss evaluate_losses<double>(const MultiTaskNet<double>&, const Dataset&, const UtilityFn&, int);
template TrainHistory train<float>(MultiTaskNet<float>&, const Dataset&, const Dataset&, const TaskSpec&,
                                   const TrainConfig&);
template TrainHistory train<double>(MultiTaskNet<double>&, const Dataset&, const Dataset&, const TaskSpec&,
                                    const TrainConfig&);

// ---- architecture growth -----------------------------------------------------------

std::size_t accepted_growth_steps(std::span<const double> improvements, double min_gain) {
  std::size_t k = 0;
  while (k < improvements.size() && improvements[k] >= min_gain) ++k;
  return k;
}

namespace {

bool fits(const Architecture& a) {
  try {
    a.validate();
    return true;
  } catch (const ShapeMismatch&) {
    return false;
  }
}

struct Candidate {
  Architecture arch;
  MultiTaskNet<float> net;
  TrainHistory history;
  ValidationLoss loss;
};

Candidate train_candidate(const Architecture& arch, const Dataset& train_set, const Dataset& validation,
                          const TaskSpec& task, const TrainConfig& cfg, std::uint64_t id) {
  Candidate c{arch, MultiTaskNet<float>(arch), {}, {}};
  Rng init = Rng(cfg.seed).split(stream::kGrowth).split(id);
  c.net.initialize(init);
  c.history = train(c.net, train_set, validation, task, cfg);
  c.loss = evaluate_losses(c.net, validation, task.utility);
  return c;
}

// Losses may be negative (estimation loss is a negated utility), so gains are taken
// relative to the magnitude of the previous loss.
double relative_gain(double prev, double next) {
  const double scale = std::abs(prev);
  return scale > 0.0 ? (prev - next) / scale : 0.0;
}

}  // namespace

GrowthResult grow_architecture(const Architecture& base, const Dataset& train_set, const Dataset& validation,
                               const TaskSpec& task, const TrainConfig& cfg, const GrowthConfig& growth) {
  if (validation.images.empty()) throw std::invalid_argument("grow_architecture: validation set is empty");
  GrowthResult result;
  Architecture arch = base;
  arch.shared_layers = 1;
  arch.estimation_layers = 1;
  std::uint64_t id = 0;

  Candidate best = train_candidate(arch, train_set, validation, task, cfg, id++);
  result.audit.push_back({"shared", arch.shared_layers, arch.estimation_layers, best.loss.detection, 0.0, true});
  while (arch.shared_layers < growth.max_shared) {
    Architecture next = arch;
    ++next.shared_layers;
    if (!fits(next)) break;
    Candidate c = train_candidate(next, train_set, validation, task, cfg, id++);
    const double gain = relative_gain(best.loss.detection, c.loss.detection);
    const bool ok = gain >= growth.min_gain;
    result.audit.push_back({"shared", next.shared_layers, next.estimation_layers, c.loss.detection, gain, ok});
    if (!ok) break;
    arch = next;
    best = std::move(c);
  }
  result.audit.push_back({"estimation", arch.shared_layers, arch.estimation_layers, best.loss.estimation, 0.0, true});
  while (arch.estimation_layers < growth.max_estimation) {
    Architecture next = arch;
    ++next.estimation_layers;
    if (!fits(next)) break;
    Candidate c = train_candidate(next, train_set, validation, task, cfg, id++);
    const double gain = relative_gain(best.loss.estimation, c.loss.estimation);
    const bool ok = gain >= growth.min_gain;
    result.audit.push_back({"estimation", next.shared_layers, next.estimation_layers, c.loss.estimation, gain, ok});
    if (!ok) break;
    arch = next;
    best = std::move(c);
  }
  result.selected = arch;
  result.net = std::move(best.net);
  result.history = std::move(best.history);
  return result;
}

}  // namespace taskiq::nn
