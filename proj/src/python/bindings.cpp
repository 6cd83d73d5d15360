#include <cmath>
#include <limits>
#include <optional>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "taskiq/config.hpp"
#include "taskiq/dataset.hpp"
#include "taskiq/eroc.hpp"
#include "taskiq/experiment.hpp"
#include "taskiq/mcmc.hpp"
#include "taskiq/observers.hpp"
#include "taskiq/task.hpp"

namespace py = pybind11;
using namespace taskiq;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("image must be a 2-D array (height, width)");
  Image im(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), im.pixels.begin());
  return im;
}

Array from_image(const Image& im) {
  Array out({im.height, im.width});
  std::copy(im.pixels.begin(), im.pixels.end(), out.mutable_data());
  return out;
}

Profile profile_arg(const std::string& text) {
  try {
    return parse_profile(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("profile", e.what());
  }
}

TaskSpec make_task(const std::string& preset, const std::string& profile, const std::optional<std::string>& utility) {
  TaskSpec t = preset_task(preset, profile_arg(profile));
  if (utility) t.utility = UtilityFn::parse(*utility);
  return t;
}

py::dict dataset_dict(const Dataset& d) {
  const auto n = static_cast<py::ssize_t>(d.size());
  Array images({n, static_cast<py::ssize_t>(d.height), static_cast<py::ssize_t>(d.width)});
  py::array_t<int> labels(std::vector<py::ssize_t>{n});
  int* lp = labels.mutable_data();
  Array theta({n, static_cast<py::ssize_t>(d.theta_dim)});
  double* ip = images.mutable_data();
  double* tp = theta.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& im = d.images[i];
    std::copy(im.pixels.pixels.begin(), im.pixels.pixels.end(), ip + i * im.pixels.size());
    lp[i] = im.label;
    for (std::size_t k = 0; k < d.theta_dim; ++k)
      tp[i * d.theta_dim + k] = im.label == 1 ? im.theta[k] : std::numeric_limits<double>::quiet_NaN();
  }
  py::dict out;
  out["images"] = images;
  out["labels"] = labels;
  out["theta"] = theta;
  return out;
}

std::vector<PresentScore> present_scores(const Array& t, const Array& u) {
  if (t.size() != u.size()) throw std::invalid_argument("present statistics and utilities differ in length");
  std::vector<PresentScore> out(static_cast<std::size_t>(t.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {t.data()[i], u.data()[i]};
  return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

py::dict aeroc_dict(const AerocEstimate& e) {
  py::dict d;
  d["value"] = e.value;
  d["ci_lo"] = e.ci_lo;
  d["ci_hi"] = e.ci_hi;
  d["n_present"] = e.n_present;
  d["n_absent"] = e.n_absent;
  d["n_bootstrap"] = e.n_bootstrap;
  d["seed"] = e.seed;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Detection-estimation observers, EROC analysis and the experiment pipeline";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UnsupportedUtility>(m, "UnsupportedUtility", PyExc_ValueError);

  py::class_<UtilityFn>(m, "Utility")
      .def(py::init([](const std::string& spec) { return UtilityFn::parse(spec); }), py::arg("spec"))
      .def("__call__",
           [](const UtilityFn& u, std::vector<double> estimate, std::vector<double> truth) { return u(estimate, truth); })
      .def("__repr__", [](const UtilityFn& u) { return "Utility('" + u.to_string() + "')"; })
      .def_property_readonly("spec", &UtilityFn::to_string);

  py::class_<TaskSpec>(m, "Task")
      .def(py::init(&make_task), py::arg("preset"), py::arg("profile") = "desk", py::arg("utility") = py::none())
      .def_property_readonly("width", [](const TaskSpec& t) { return t.system.grid_width; })
      .def_property_readonly("height", [](const TaskSpec& t) { return t.system.grid_height; })
      .def_property_readonly("theta_dim", &TaskSpec::theta_dim)
      .def_property_readonly("noise_sd", [](const TaskSpec& t) { return t.noise.sd; })
      .def_property_readonly("utility", [](const TaskSpec& t) { return t.utility; })
      .def("render_signal", [](const TaskSpec& t, std::vector<double> theta) { return from_image(t.render_signal(theta)); })
      .def("reference_signal", [](const TaskSpec& t) { return from_image(t.reference_signal()); })
      .def(
          "generate",
          [](const TaskSpec& t, std::size_t n_present, std::size_t n_absent, std::uint64_t seed, bool noiseless,
             int threads) {
            Dataset d;
            {
              py::gil_scoped_release release;
              d = generate_dataset(t, n_present, n_absent, Rng(seed), noiseless, threads);
            }
            return dataset_dict(d);
          },
          py::arg("n_present"), py::arg("n_absent"), py::arg("seed"), py::arg("noiseless") = false,
          py::arg("threads") = 1);

  m.def(
      "analytic_io",
      [](const Array& g, const TaskSpec& task) {
        const ObserverOutput o = analytic_io(to_image(g), task);
        return py::make_tuple(o.statistic, o.estimate, o.log_lambda);
      },
      py::arg("image"), py::arg("task"), "closed-form observer: (T, estimate, log Lambda)");

  m.def(
      "mcmc_io",
      [](const Array& g, const TaskSpec& task, std::size_t samples, std::size_t burn_in, std::uint64_t seed) {
        McmcIoConfig cfg;
        cfg.estimate_chain.n_samples = cfg.utility_chain.n_samples = cfg.ratio_chain.n_samples = samples;
        cfg.estimate_chain.burn_in = cfg.utility_chain.burn_in = cfg.ratio_chain.burn_in = burn_in;
        const Image im = to_image(g);
        Rng rng(seed);
        ObserverOutput o;
        {
          py::gil_scoped_release release;
          o = mcmc_io(im, task, cfg, rng);
        }
        return py::make_tuple(o.statistic, o.estimate, o.log_lambda, o.utility_mean);
      },
      py::arg("image"), py::arg("task"), py::arg("samples") = 10000, py::arg("burn_in") = 1000, py::arg("seed") = 0,
      "MCMC reference observer: (T, estimate, log Lambda, U)");

  m.def(
      "aeroc",
      [](const Array& present_t, const Array& present_u, const Array& absent_t, std::size_t resamples, double level,
         std::uint64_t seed) {
        const auto p = present_scores(present_t, present_u);
        const auto a = to_vector(absent_t);
        BootstrapConfig bc{resamples, level, seed, 1};
        AerocEstimate e;
        {
          py::gil_scoped_release release;
          e = aeroc(p, a, bc);
        }
        return aeroc_dict(e);
      },
      py::arg("present_t"), py::arg("present_u"), py::arg("absent_t"), py::arg("resamples") = 2000,
      py::arg("level") = 0.90, py::arg("seed") = 0);

  m.def(
      "aeroc_value",
      [](const Array& present_t, const Array& present_u, const Array& absent_t) {
        return aeroc_value(present_scores(present_t, present_u), to_vector(absent_t));
      },
      py::arg("present_t"), py::arg("present_u"), py::arg("absent_t"));

  m.def(
      "eroc_curve",
      [](const Array& present_t, const Array& present_u, const Array& absent_t) {
        const ErocCurve c = eroc_curve(present_scores(present_t, present_u), to_vector(absent_t));
        const auto n = static_cast<py::ssize_t>(c.points.size());
        Array tau(std::vector<py::ssize_t>{n}), fpf(std::vector<py::ssize_t>{n}), utp(std::vector<py::ssize_t>{n});
        double* tp = tau.mutable_data();
        double* fp = fpf.mutable_data();
        double* up = utp.mutable_data();
        for (std::size_t i = 0; i < c.points.size(); ++i) {
          tp[i] = c.points[i].threshold;
          fp[i] = c.points[i].fpf;
          up[i] = c.points[i].u_tp;
        }
        return py::make_tuple(tau, fpf, utp);
      },
      py::arg("present_t"), py::arg("present_u"), py::arg("absent_t"), "(tau, fpf, u_tp) arrays");

  m.def(
      "resolve_config",
      [](const std::filesystem::path& path, std::optional<std::uint64_t> seed, std::optional<std::string> profile) {
        ConfigOverrides o;
        o.seed = seed;
        if (profile) o.profile = profile_arg(*profile);
        return serialize_config(load_config(path, o));
      },
      py::arg("path"), py::arg("seed") = py::none(), py::arg("profile") = py::none(),
      "fully explicit YAML of the resolved experiment");

  m.def(
      "run_experiment",
      [](const std::filesystem::path& path, std::optional<std::filesystem::path> out, std::optional<std::uint64_t> seed,
         std::optional<int> threads) {
        ConfigOverrides o;
        o.seed = seed;
        o.threads = threads;
        o.out = out;
        const ExperimentConfig cfg = load_config(path, o);
        ResultManifest mf;
        {
          py::gil_scoped_release release;
          mf = run_experiment(cfg);
        }
        return mf.to_json();
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(), py::arg("threads") = py::none(),
      "runs the pipeline and returns the manifest as JSON text");

  m.def("git_blob_sha1", [](const py::bytes& b) { return git_blob_sha1(std::string_view(b)); }, py::arg("data"));
}
