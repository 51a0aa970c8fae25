#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <array>
#include <string>
#include <vector>

#include "gfd/boxes.hpp"
#include "gfd/dataset.hpp"
#include "gfd/detector.hpp"
#include "gfd/error.hpp"
#include "gfd/gaze.hpp"
#include "gfd/gradcheck.hpp"
#include "gfd/metrics.hpp"
#include "gfd/trainer.hpp"

namespace py = pybind11;
using namespace gfd;

namespace {

using BoxTuple = std::array<double, 4>;
using Array2 = py::array_t<double, py::array::c_style | py::array::forcecast>;

Box to_box(const BoxTuple& b) { return {b[0], b[1], b[2], b[3]}; }
BoxTuple from_box(const Box& b) { return {b.x0, b.y0, b.x1, b.y1}; }

std::vector<Box> to_boxes(const std::vector<BoxTuple>& bs) {
  std::vector<Box> out;
  out.reserve(bs.size());
  for (const auto& b : bs) out.push_back(to_box(b));
  return out;
}

py::array_t<double> to_numpy(std::size_t h, std::size_t w, const std::vector<double>& v) {
  py::array_t<double> out({h, w});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> from_numpy(const Array2& a, std::size_t& h, std::size_t& w) {
  if (a.ndim() != 2) throw ValidationError("expected a 2-D array");
  h = static_cast<std::size_t>(a.shape(0));
  w = static_cast<std::size_t>(a.shape(1));
  return {a.data(), a.data() + a.size()};
}

GrayImage image_from_numpy(const Array2& a) {
  GrayImage img;
  img.pixels = from_numpy(a, img.height, img.width);
  return img;
}

FixationMap map_from_numpy(const Array2& a) {
  FixationMap m;
  m.values = from_numpy(a, m.height, m.width);
  return m;
}

py::dict detection_dict(const Detection& d) {
  py::dict out;
  out["box"] = from_box(d.box);
  out["label"] = std::string(class_key(d.label));
  out["score"] = d.score;
  out["mask"] = to_numpy(d.mask_size, d.mask_size, d.mask);
  return out;
}

std::vector<ScoredBox> scored(const std::vector<std::tuple<std::size_t, BoxTuple, double>>& dets) {
  std::vector<ScoredBox> out;
  for (const auto& [img, b, s] : dets) out.push_back({img, to_box(b), s});
  return out;
}

std::vector<GroundTruthBox> truths(const std::vector<std::pair<std::size_t, BoxTuple>>& gts) {
  std::vector<GroundTruthBox> out;
  for (const auto& [img, b] : gts) out.push_back({img, to_box(b)});
  return out;
}

py::dict curve_dict(const LossCurve& c) {
  std::vector<py::dict> steps;
  for (const auto& s : c.steps) {
    py::dict d;
    d["step"] = s.step;
    d["epoch"] = s.epoch;
    d["cls"] = s.loss.classification;
    d["bbox"] = s.loss.bbox;
    d["mask"] = s.loss.mask;
    d["total"] = s.loss.total;
    steps.push_back(d);
  }
  py::dict out;
  out["steps"] = steps;
  out["epoch_mean_total"] = c.epoch_mean_total;
  out["val_mean_total"] = c.val_mean_total;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gaze-fused lesion detection core";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // Boxes
  m.def("iou", [](const BoxTuple& a, const BoxTuple& b) { return iou(to_box(a), to_box(b)); });
  m.def("iobb", [](const BoxTuple& pred, const BoxTuple& gt) { return iobb(to_box(pred), to_box(gt)); });
  m.def(
      "nms",
      [](const std::vector<BoxTuple>& boxes, const std::vector<double>& scores, double thresh) {
        return nms(to_boxes(boxes), scores, thresh);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_thresh"));
  m.def("encode_box", [](const BoxTuple& anchor, const BoxTuple& target) {
    return encode_box(to_box(anchor), to_box(target));
  });
  m.def("decode_box", [](const BoxTuple& anchor, const BoxDelta& d) { return from_box(decode_box(to_box(anchor), d)); });

  // Gaze
  m.def(
      "detect_fixations",
      [](const std::vector<std::array<double, 3>>& samples, double dispersion_px, double min_duration_ms) {
        std::vector<GazeSample> gs;
        for (const auto& [t, x, y] : samples) gs.push_back({t, x, y, std::nullopt, true});
        std::vector<std::tuple<double, double, double, double>> out;
        for (const auto& f : detect_fixations(gs, dispersion_px, min_duration_ms)) {
          out.emplace_back(f.cx_px, f.cy_px, f.start_ms, f.end_ms);
        }
        return out;
      },
      py::arg("samples"), py::arg("dispersion_px") = kDefaultDispersionPx,
      py::arg("min_duration_ms") = kDefaultMinDurationMs,
      "samples: (t_ms, x_px, y_px) rows sorted by time; returns (cx, cy, start_ms, end_ms) rows");
  m.def(
      "render_heatmap",
      [](const std::vector<std::tuple<double, double, double, double>>& fixations, std::size_t width,
         std::size_t height, double sigma_px, bool uniform) {
        std::vector<Fixation> fx;
        for (const auto& [cx, cy, t0, t1] : fixations) fx.push_back({cx, cy, t0, t1, 0});
        const FixationMap map = render_heatmap(
            fx, width, height, sigma_px, uniform ? HeatmapWeighting::kUniform : HeatmapWeighting::kDuration);
        return to_numpy(height, width, map.values);
      },
      py::arg("fixations"), py::arg("width"), py::arg("height"), py::arg("sigma_px"),
      py::arg("uniform") = false);

  // Metrics
  m.def(
      "average_precision",
      [](const std::vector<std::tuple<std::size_t, BoxTuple, double>>& dets,
         const std::vector<std::pair<std::size_t, BoxTuple>>& gts, double thresh, const std::string& kind) {
        return average_precision(scored(dets), truths(gts), thresh, parse_overlap(kind));
      },
      py::arg("dets"), py::arg("gts"), py::arg("thresh") = 0.5, py::arg("kind") = "iobb",
      "dets: (image, box, score); gts: (image, box); None when there is no ground truth");
  m.def(
      "average_recall",
      [](const std::vector<std::tuple<std::size_t, BoxTuple, double>>& dets,
         const std::vector<std::pair<std::size_t, BoxTuple>>& gts, double thresh, const std::string& kind,
         std::size_t max_dets) {
        return average_recall(scored(dets), truths(gts), thresh, parse_overlap(kind), max_dets);
      },
      py::arg("dets"), py::arg("gts"), py::arg("thresh") = 0.5, py::arg("kind") = "iobb",
      py::arg("max_dets") = 100);
  m.def(
      "table_report",
      [](const std::map<std::string, std::pair<double, double>>& values, const std::string& tag,
         const std::string& kind, double thresh) {
        std::vector<ClassMetrics> rows;
        for (const auto& [key, _] : values) parse_class(key);
        for (ClassLabel c : kAllClasses) {
          ClassMetrics row;
          row.label = c;
          const auto it = values.find(std::string(class_key(c)));
          if (it != values.end()) {
            row.ap = it->second.first;
            row.ar = it->second.second;
            row.n_gt = 1;
          }
          rows.push_back(row);
        }
        const MetricsReport r = build_report(rows, {tag, parse_overlap(kind), thresh, 100});
        py::dict out;
        out["average_ap"] = r.average_ap;
        out["average_ar"] = r.average_ar;
        out["markdown"] = report_markdown(r);
        out["warnings"] = r.warnings;
        return out;
      },
      py::arg("values"), py::arg("tag") = std::string(kImageOnlyTag), py::arg("kind") = "iobb",
      py::arg("thresh") = 0.5, "values: class key -> (AP, AR)");

  // Data
  m.def(
      "synth",
      [](const std::string& out, std::size_t n, std::size_t size, std::uint64_t seed) {
        SynthConfig cfg;
        cfg.n_readings = n;
        cfg.img_size = size;
        const auto readings = synth_generate(cfg, seed);
        const auto tags = split_assignment(readings.size(), {}, seed);
        save_dataset(out, readings, tags, size);
      },
      py::arg("out"), py::arg("n") = 200, py::arg("size") = 64, py::arg("seed") = 0);
  m.def("load_image", [](const std::filesystem::path& reading_dir) {
    const Reading r = load_reading(reading_dir);
    return to_numpy(r.image.height, r.image.width, r.image.pixels);
  });
  m.def("fixation_map", [](const std::filesystem::path& reading_dir) {
    const FixationMap map = reading_fixation_map(load_reading(reading_dir));
    return to_numpy(map.height, map.width, map.values);
  });

  // Model
  py::class_<Detector>(m, "Detector")
      .def(py::init([](const std::string& config_json) {
             return Detector(model_config_from_json(config_json, ModelConfig{}));
           }),
           py::arg("config_json") = "{}")
      .def_static("load", &Detector::load)
      .def("save", &Detector::save)
      .def_property_readonly("config_json", [](const Detector& d) { return model_config_to_json(d.config()); })
      .def(
          "infer",
          [](Detector& d, const Array2& image, std::optional<Array2> fixations) {
            const GrayImage img = image_from_numpy(image);
            std::optional<FixationMap> map;
            if (fixations) map = map_from_numpy(*fixations);
            std::vector<py::dict> out;
            for (const auto& det : d.infer(img, map ? &*map : nullptr)) out.push_back(detection_dict(det));
            return out;
          },
          py::arg("image"), py::arg("fixations") = py::none());

  m.def(
      "train",
      [](const std::filesystem::path& data, const std::filesystem::path& out, const std::string& config_json,
         std::size_t epochs, double lr, std::uint64_t seed) {
        ModelConfig mc = model_config_from_json(config_json, ModelConfig{});
        mc.img_size = load_manifest(data).img_size;
        mc.seed = seed;
        mc.validate();
        TrainConfig tc;
        tc.epochs = epochs;
        tc.lr = lr;
        tc.seed = seed;
        const auto train_set = load_split(data, "train");
        const auto val_set = load_split(data, "val");
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train(mc, train_set, val_set, tc, out);
        }();
        return py::make_tuple(std::move(r.final_model), curve_dict(r.curve));
      },
      py::arg("data"), py::arg("out"), py::arg("config_json") = "{}", py::arg("epochs") = 15,
      py::arg("lr") = 0.01, py::arg("seed") = 0, "Returns (model, loss curve dict)");
  m.def(
      "evaluate",
      [](Detector& d, const std::filesystem::path& data, const std::string& split, const std::string& kind,
         double thresh) {
        const auto readings = load_split(data, split);
        const std::string tag(d.config().use_fixations ? kMultimodalTag : kImageOnlyTag);
        const Evaluation e = evaluate(d, readings, {parse_overlap(kind), thresh, 100}, FixationSource::kGaze, tag);
        py::dict out;
        out["average_ap"] = e.report.average_ap;
        out["average_ar"] = e.report.average_ar;
        out["json"] = report_json(e.report);
        out["markdown"] = report_markdown(e.report);
        return out;
      },
      py::arg("model"), py::arg("data"), py::arg("split") = "test", py::arg("kind") = "iobb",
      py::arg("thresh") = 0.5);

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        std::map<std::string, double> out;
        for (const auto& e : op_gradient_suite(seed)) out["op/" + e.layer] = e.max_rel_error;
        for (const auto& e : detector_gradient_suite(seed)) out["model/" + e.layer] = e.max_rel_error;
        return out;
      },
      py::arg("seed") = 0);
}
