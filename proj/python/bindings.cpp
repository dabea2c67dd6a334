#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ptl/color.hpp"
#include "ptl/error.hpp"
#include "ptl/eval.hpp"
#include "ptl/manifest.hpp"
#include "ptl/models.hpp"
#include "ptl/nn/optim.hpp"
#include "ptl/psychometric.hpp"
#include "ptl/quest.hpp"
#include "ptl/synthetic.hpp"

namespace py = pybind11;
using namespace ptl;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

RgbImage to_rgb(const F64Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an (H, W, 3) array");
  RgbImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  img.validate();
  return img;
}

F64Array from_rgb(const RgbImage& img) {
  F64Array out({img.height, img.width, 3});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

BinaryMask to_mask(const U8Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected an (H, W) mask");
  BinaryMask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.data[static_cast<std::size_t>(i)] = a.data()[i] != 0;
  return m;
}

U8Array from_mask(const BinaryMask& m) {
  U8Array out({m.height, m.width});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

F64Array lab_array(const LabImage& lab) {
  F64Array out({lab.height, lab.width, 3});
  double* p = out.mutable_data();
  for (std::size_t i = 0; i < lab.pixels(); ++i) {
    p[3 * i] = lab.L[i];
    p[3 * i + 1] = lab.a[i];
    p[3 * i + 2] = lab.b[i];
  }
  return out;
}

py::dict item_dict(const DatasetItem& item) {
  py::dict d;
  d["id"] = item.id;
  d["image"] = from_rgb(item.image);
  d["mask"] = from_mask(item.mask);
  if (item.thresholds)
    d["thresholds"] = py::make_tuple(item.thresholds->neg.mean, item.thresholds->pos.mean);
  else
    d["thresholds"] = py::none();
  return d;
}

PsychometricParams params(double t, double beta, double gamma, double alpha) {
  PsychometricParams p{gamma, alpha, beta, t};
  p.validate();
  return p;
}

py::dict sweep_dict(const SweepResult& r) {
  py::dict d;
  d["x"] = r.xs;
  d["f1_neg"] = r.f1_neg;
  d["f1_pos"] = r.f1_pos;
  d["boundary_neg"] = r.boundary_neg ? py::cast(*r.boundary_neg) : py::none();
  d["boundary_pos"] = r.boundary_pos ? py::cast(*r.boundary_pos) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Perceptual thresholds of local exposure shifts";

  auto& data_error = py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<UnfittableError>(m, "UnfittableError", data_error.ptr());

  // colour
  m.def("srgb_to_lab", [](const F64Array& img) { return lab_array(srgb_to_lab(to_rgb(img))); }, py::arg("image"),
        "(H, W, 3) sRGB in [0, 1] to CIELAB (D65).");
  m.def(
      "lab_to_srgb",
      [](const F64Array& a) {
        if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an (H, W, 3) array");
        LabImage lab(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
        for (std::size_t i = 0; i < lab.pixels(); ++i) {
          lab.L[i] = a.data()[3 * i];
          lab.a[i] = a.data()[3 * i + 1];
          lab.b[i] = a.data()[3 * i + 2];
        }
        return from_rgb(lab_to_srgb(lab));
      },
      py::arg("lab"));
  m.def(
      "apply_exposure_shift",
      [](const F64Array& img, const U8Array& mask, double stops) {
        return from_rgb(apply_exposure_shift(to_rgb(img), to_mask(mask), stops));
      },
      py::arg("image"), py::arg("mask"), py::arg("stops"), "Scale lightness by 2**stops inside the mask.");

  // psychometrics
  m.def(
      "weibull",
      [](double x, double t, double beta, double gamma, double alpha) {
        return weibull_eval(params(t, beta, gamma, alpha), x);
      },
      py::arg("x"), py::arg("t"), py::arg("beta") = 3.5, py::arg("gamma") = 0.5, py::arg("alpha") = 0.75);
  m.def(
      "inverse_threshold",
      [](double y, double t, double beta, double gamma, double alpha) {
        return inverse_threshold(params(t, beta, gamma, alpha), y);
      },
      py::arg("y"), py::arg("t"), py::arg("beta") = 3.5, py::arg("gamma") = 0.5, py::arg("alpha") = 0.75);
  m.def(
      "fit_weibull",
      [](const std::vector<double>& x, const std::vector<bool>& correct, double gamma, double alpha) {
        if (x.size() != correct.size()) throw std::invalid_argument("x and correct differ in length");
        std::vector<TrialRecord> trials;
        for (std::size_t i = 0; i < x.size(); ++i) trials.push_back({x[i], correct[i], 0.0});
        const auto p = fit_weibull(trials, gamma, alpha);
        return py::make_tuple(p.t, p.beta);
      },
      py::arg("x"), py::arg("correct"), py::arg("gamma") = 0.5, py::arg("alpha") = 0.75,
      "Maximum-likelihood (t, beta); t is a magnitude.");

  py::class_<QuestState>(m, "Quest")
      .def(py::init([](double prior_mean, double prior_sd, double beta, int grid_size) {
             QuestConfig c;
             c.assumed_beta = beta;
             c.grid_size = grid_size;
             return quest_init(prior_mean, prior_sd, c);
           }),
           py::arg("prior_mean") = 0.3, py::arg("prior_sd") = 1.0, py::arg("beta") = 3.5, py::arg("grid_size") = 256)
      .def("next", &quest_next)
      .def("update", [](QuestState& s, double x, bool correct) { s = quest_update(s, x, correct); }, py::arg("x"),
           py::arg("correct"))
      .def("estimate", &quest_estimate)
      .def("mode", &quest_mode)
      .def_property_readonly("grid", [](const QuestState& s) { return s.grid; })
      .def_property_readonly("posterior", [](const QuestState& s) { return quest_posterior(s); })
      .def_readonly("trial_count", &QuestState::trial_count);

  // data
  m.def(
      "make_class_mask",
      [](const U8Array& mask, double x, double neg, double pos) {
        const ClassMask c = make_class_mask(to_mask(mask), x, ThresholdPair::from_means(neg, pos));
        U8Array out({c.height, c.width});
        std::copy(c.labels.begin(), c.labels.end(), out.mutable_data());
        return out;
      },
      py::arg("mask"), py::arg("x"), py::arg("neg"), py::arg("pos"),
      "Per-pixel labels: 0 darkening visible, 1 brightening visible, 2 none.");
  m.def(
      "synthetic_dataset",
      [](int count, int size, std::uint64_t seed, bool with_thresholds, double min_radius, double max_radius) {
        SyntheticConfig c;
        c.count = count;
        c.size = size;
        c.seed = seed;
        c.with_thresholds = with_thresholds;
        c.min_radius = min_radius;
        c.max_radius = max_radius;
        py::list out;
        for (const auto& item : generate_synthetic_dataset(c)) out.append(item_dict(item));
        return out;
      },
      py::arg("count") = 20, py::arg("size") = 64, py::arg("seed") = 1, py::arg("with_thresholds") = true,
      py::arg("min_radius") = 0.15, py::arg("max_radius") = 0.32);
  m.def(
      "load_dataset",
      [](const std::string& manifest) {
        py::list out;
        for (const auto& item : load_dataset(manifest)) out.append(item_dict(item));
        return out;
      },
      py::arg("manifest"));

  // models and evaluation
  py::class_<PtcModel>(m, "PtcModel")
      .def(py::init([](int input_size, int encoder_blocks, int base_channels, int multiscale_channels,
                       std::uint64_t seed) {
             BackboneConfig c;
             c.input_size = input_size;
             c.encoder_blocks = encoder_blocks;
             c.base_channels = base_channels;
             c.multiscale_channels = multiscale_channels;
             c.validate();
             return PtcModel(c, seed);
           }),
           py::arg("input_size") = 64, py::arg("encoder_blocks") = 4, py::arg("base_channels") = 16,
           py::arg("multiscale_channels") = 32, py::arg("seed") = 1, "Randomly initialised classifier.")
      .def("save", [](const PtcModel& model, const std::string& path) { model.save(path); }, py::arg("path"))
      .def_static("load", &PtcModel::load, py::arg("path"))
      .def_property_readonly("input_size", [](const PtcModel& model) { return model.config().input_size; })
      .def(
          "predict",
          [](const PtcModel& model, const F64Array& img) {
            const nn::Tensor p = model.predict(standardize(to_rgb(img), model.config().input_size));
            F64Array out({p.dim(1), p.dim(2), p.dim(3)});
            std::copy(p.data(), p.data() + p.size(), out.mutable_data());
            return out;
          },
          py::arg("image"), "(3, S, S) class probabilities.");

  m.def(
      "boundary_sweep",
      [](const F64Array& img, const U8Array& mask, double neg, double pos, const PtcModel* model, int grid_points,
         double criterion) {
        const RgbImage image = to_rgb(img);
        const BinaryMask bm = to_mask(mask);
        const ThresholdPair t = ThresholdPair::from_means(neg, pos);
        const Predictor predictor = model ? ptc_predictor(*model) : oracle_predictor(bm, t);
        const auto grid = default_sweep_grid(grid_points);
        return sweep_dict(boundary_sweep(predictor, image, bm, t, grid, criterion));
      },
      py::arg("image"), py::arg("mask"), py::arg("neg"), py::arg("pos"), py::arg("model") = nullptr,
      py::arg("grid_points") = 67, py::arg("criterion") = 0.1,
      "Soft-F1 sweep over exposure shifts; without a model the ground-truth oracle is used.");

  m.def(
      "lr_at",
      [](double epoch, double lr_min, double lr_max, double cycle_epochs, double max_decay, double cycle_growth) {
        nn::LrSchedule s{lr_min, lr_max, cycle_epochs, max_decay, cycle_growth};
        s.validate();
        return nn::lr_at(s, epoch);
      },
      py::arg("epoch"), py::arg("lr_min") = 1e-6, py::arg("lr_max") = 1e-4, py::arg("cycle_epochs") = 5.0,
      py::arg("max_decay") = 0.9, py::arg("cycle_growth") = 1.5);
}
