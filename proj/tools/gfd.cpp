// gfd: synthetic data, fixation maps, training, evaluation and reports.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gfd/dataset.hpp"
#include "gfd/detector.hpp"
#include "gfd/error.hpp"
#include "gfd/gaze.hpp"
#include "gfd/gradcheck.hpp"
#include "gfd/io.hpp"
#include "gfd/metrics.hpp"
#include "gfd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gfd;

namespace {

constexpr double kGradTolerance = 1e-4;

// --config <file>: JSON object keyed by long flag names. Its entries are
// spliced in front of the command line, so explicit flags win.
std::vector<std::string> config_args(const std::vector<std::string>& args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return {};
  json doc;
  try {
    doc = json::parse(read_file(*path));
  } catch (const json::exception& e) {
    throw ValidationError("config " + *path + ": " + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config " + *path + ": expected a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : doc.items()) {
    if (key == "config") throw ValidationError("config " + *path + ": nested config");
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) {
        if (!joined.empty()) joined += ",";
        joined += v.is_string() ? v.get<std::string>() : v.dump();
      }
      out.push_back(flag);
      out.push_back(joined);
    } else if (value.is_string()) {
      out.push_back(flag);
      out.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      out.push_back(flag);
      out.push_back(value.dump());
    } else {
      throw ValidationError("config " + *path + ": unsupported value for '" + key + "'");
    }
  }
  return out;
}

json resolved_flags(const CLI::App& cmd) {
  json out = json::object();
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->get_expected_min() == 0) {
      out[name] = opt->count() > 0;
      continue;
    }
    if (opt->count() == 0) {
      const std::string d = opt->get_default_str();
      out[name] = d.empty() ? json() : json(d);
      continue;
    }
    const auto& r = opt->results();
    out[name] = opt->get_expected_max() > 1 ? json(r) : json(r.back());
  }
  return out;
}

void print_resolved(const CLI::App& cmd, std::optional<std::uint64_t> seed, json extra = {}) {
  json doc{{"command", cmd.get_name()}, {"flags", resolved_flags(cmd)}};
  if (!extra.is_null()) doc["resolved"] = std::move(extra);
  std::cout << "config: " << doc.dump() << "\n";
  if (seed) std::cout << "seed: " << *seed << "\n";
  std::cout.flush();
}

CLI::Option* add_seed(CLI::App* cmd, std::uint64_t& seed) {
  return cmd->add_option("--seed", seed, "RNG seed (falls back to GFD_SEED)")
      ->envname("GFD_SEED")
      ->capture_default_str();
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t n = 200;
  std::size_t size = 64;
  std::vector<std::string> classes = {"enlarged_cardiac_silhouette", "atelectasis"};
  double val = 0.1, test = 0.1;
  std::uint64_t seed = 0;
};

int run_synth(const CLI::App& cmd, const SynthArgs& a) {
  SynthConfig cfg;
  cfg.n_readings = a.n;
  cfg.img_size = a.size;
  cfg.classes.clear();
  for (const auto& c : a.classes) cfg.classes.push_back(parse_class(c));
  if (a.val < 0 || a.test < 0 || a.val + a.test >= 1.0) {
    throw ValidationError("synth: need val, test >= 0 and val + test < 1");
  }
  print_resolved(cmd, a.seed);
  const auto readings = synth_generate(cfg, a.seed);
  const auto tags = split_assignment(readings.size(), {1.0 - a.val - a.test, a.val, a.test}, a.seed);
  save_dataset(a.out, readings, tags, a.size);
  std::cout << "wrote " << readings.size() << " readings to " << a.out << "\n";
  return 0;
}

// --- fixations / heatmap -----------------------------------------------------

struct FixationArgs {
  std::string gaze, out;
  std::optional<double> dispersion;
  double min_dur = kDefaultMinDurationMs;
  std::size_t width = 512, height = 0;
};

int run_fixations(const CLI::App& cmd, const FixationArgs& a) {
  const double dispersion = a.dispersion.value_or(scaled_dispersion_px(a.width));
  if (!(dispersion > 0) || !(a.min_dur > 0)) {
    throw ValidationError("fixations: dispersion and min-dur must be positive");
  }
  print_resolved(cmd, std::nullopt, {{"dispersion_px", dispersion}, {"min_dur_ms", a.min_dur}});
  auto samples = read_gaze_csv(a.gaze);
  if (a.height > 0) samples = filter_gaze(samples, a.width, a.height, 0.0);
  const auto fx = detect_fixations(samples, dispersion, a.min_dur);
  write_fixations_csv(a.out, fx);
  std::cout << fx.size() << " fixations -> " << a.out << "\n";
  return 0;
}

struct HeatmapArgs {
  std::string fixations, out, raw, weighting = "duration";
  std::size_t width = 0, height = 0;
  std::optional<double> sigma;
};

int run_heatmap(const CLI::App& cmd, const HeatmapArgs& a) {
  if (a.width == 0 || a.height == 0) throw ValidationError("heatmap: width and height must be > 0");
  const double sigma = a.sigma.value_or(scaled_sigma_px(a.width));
  HeatmapWeighting w;
  if (a.weighting == "duration") {
    w = HeatmapWeighting::kDuration;
  } else if (a.weighting == "uniform") {
    w = HeatmapWeighting::kUniform;
  } else {
    throw ValidationError("heatmap: weighting must be duration|uniform");
  }
  print_resolved(cmd, std::nullopt, {{"sigma_px", sigma}});
  const auto fx = read_fixations_csv(a.fixations);
  const FixationMap map = render_heatmap(fx, a.width, a.height, sigma, w);
  write_heatmap_pgm(a.out, map);
  if (!a.raw.empty()) write_heatmap_raw(a.raw, map);
  std::cout << "heatmap " << a.width << "x" << a.height << " -> " << a.out << "\n";
  return 0;
}

// --- train / compare ----------------------------------------------------------

struct ModelArgs {
  std::string model_config;
  std::optional<std::size_t> img_size;
  bool fixations = false;
  std::optional<std::string> fusion, fusion_point;
};

void add_model_flags(CLI::App* cmd, ModelArgs& m, bool with_fixations_flag) {
  cmd->add_option("--model-config", m.model_config, "JSON file with detector settings")
      ->check(CLI::ExistingFile);
  cmd->add_option("--img-size", m.img_size, "Model input size (defaults to the dataset's)");
  if (with_fixations_flag) cmd->add_flag("--fixations", m.fixations, "Fuse fixation maps");
  cmd->add_option("--fusion", m.fusion, "sum|mul (default sum)");
  cmd->add_option("--fusion-point", m.fusion_point, "input|feature (default feature)");
}

ModelConfig resolve_model(const ModelArgs& m, std::size_t dataset_size, std::uint64_t seed) {
  ModelConfig mc;
  if (!m.model_config.empty()) mc = model_config_from_json(read_file(m.model_config), mc);
  mc.img_size = m.img_size.value_or(dataset_size);
  mc.use_fixations = mc.use_fixations || m.fixations;
  if (m.fusion) mc.fusion_mode = parse_fusion_mode(*m.fusion);
  if (m.fusion_point) mc.fusion_point = parse_fusion_point(*m.fusion_point);
  mc.seed = seed;
  mc.validate();
  return mc;
}

struct TrainArgs {
  std::string data, out, fixation_source = "gaze";
  std::size_t epochs = 15, log_every = 0;
  double lr = 0.01, momentum = 0.9;
  std::optional<std::size_t> patience;
  std::uint64_t seed = 0;
  ModelArgs model;
};

void add_train_flags(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--data", t.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--out", t.out, "Output directory")->required();
  cmd->add_option("--epochs", t.epochs)->capture_default_str();
  cmd->add_option("--lr", t.lr)->capture_default_str();
  cmd->add_option("--momentum", t.momentum)->capture_default_str();
  cmd->add_option("--patience", t.patience, "Early stop after N epochs without val improvement");
  cmd->add_option("--log-every", t.log_every)->capture_default_str();
  add_seed(cmd, t.seed);
}

TrainConfig resolve_train(const TrainArgs& t) {
  TrainConfig tc;
  tc.epochs = t.epochs;
  tc.lr = t.lr;
  tc.momentum = t.momentum;
  tc.seed = t.seed;
  tc.log_every = t.log_every;
  tc.patience = t.patience;
  tc.fixation_source = parse_fixation_source(t.fixation_source);
  tc.validate();
  return tc;
}

json train_config_json(const TrainConfig& tc) {
  json j{{"epochs", tc.epochs},
         {"lr", tc.lr},
         {"momentum", tc.momentum},
         {"seed", tc.seed},
         {"fixation_source", fixation_source_name(tc.fixation_source)}};
  j["patience"] = tc.patience ? json(*tc.patience) : json();
  return j;
}

int run_train(const CLI::App& cmd, const TrainArgs& t) {
  const Manifest manifest = load_manifest(t.data);
  const ModelConfig mc = resolve_model(t.model, manifest.img_size, t.seed);
  const TrainConfig tc = resolve_train(t);
  print_resolved(cmd, t.seed,
                 {{"model", json::parse(model_config_to_json(mc))}, {"train", train_config_json(tc)}});
  const auto train_set = load_split(t.data, "train");
  const auto val_set = load_split(t.data, "val");
  const TrainResult r = train(mc, train_set, val_set, tc, fs::path(t.out));
  for (std::size_t e = 0; e < r.curve.epoch_mean_total.size(); ++e) {
    std::printf("epoch %zu train %.6f val %.6f\n", e + 1, r.curve.epoch_mean_total[e],
                r.curve.val_mean_total[e]);
  }
  std::cout << "best epoch " << r.best_epoch << "; artifacts in " << t.out << "\n";
  return 0;
}

struct CompareArgs {
  TrainArgs train;
  std::string metric = "iobb";
  double thresh = 0.5;
  std::size_t max_dets = 100;
};

int run_compare(const CLI::App& cmd, const CompareArgs& c) {
  const Manifest manifest = load_manifest(c.train.data);
  ModelConfig base = resolve_model(c.train.model, manifest.img_size, c.train.seed);
  base.use_fixations = false;
  ModelArgs fused_args = c.train.model;
  fused_args.fixations = true;
  const ModelConfig fused = resolve_model(fused_args, manifest.img_size, c.train.seed);
  const TrainConfig tc = resolve_train(c.train);
  const MetricConfig metric{parse_overlap(c.metric), c.thresh, c.max_dets};
  if (!(metric.thresh > 0 && metric.thresh <= 1)) throw ValidationError("compare: thresh must be in (0, 1]");
  print_resolved(cmd, c.train.seed,
                 {{"image_only", json::parse(model_config_to_json(base))},
                  {"multimodal", json::parse(model_config_to_json(fused))},
                  {"train", train_config_json(tc)}});
  const auto train_set = load_split(c.train.data, "train");
  const auto val_set = load_split(c.train.data, "val");
  const auto test_set = load_split(c.train.data, "test");
  const ComparisonArm a{std::string(kImageOnlyTag), base, tc.fixation_source};
  const ComparisonArm b{std::string(kMultimodalTag), fused, tc.fixation_source};
  const auto r = run_comparison(train_set, val_set, test_set, a, b, tc, metric, fs::path(c.train.out));
  std::cout << comparison_markdown(r.first.report, r.second.report);
  return 0;
}

// --- eval / report ------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, predictions, rows, data, split = "test", out, tag, metric = "iobb",
                                                    fixation_source = "gaze";
  double thresh = 0.5;
  std::size_t max_dets = 100;
};

MetricConfig resolve_metric(const EvalArgs& e) {
  MetricConfig m{parse_overlap(e.metric), e.thresh, e.max_dets};
  if (!(m.thresh > 0 && m.thresh <= 1)) throw ValidationError("thresh must be in (0, 1]");
  if (m.max_dets == 0) throw ValidationError("max-dets must be >= 1");
  return m;
}

void write_report(const fs::path& out, const MetricsReport& report) {
  write_file_atomic(out / "report.json", report_json(report));
  write_file_atomic(out / "report.md", report_markdown(report));
}

int run_eval(const CLI::App& cmd, const EvalArgs& e) {
  const MetricConfig metric = resolve_metric(e);
  Detector model = Detector::load(e.checkpoint);
  const std::string tag = e.tag.empty()
                              ? std::string(model.config().use_fixations ? kMultimodalTag : kImageOnlyTag)
                              : e.tag;
  print_resolved(cmd, model.config().seed, {{"model", json::parse(model_config_to_json(model.config()))}});
  const auto readings = load_split(e.data, e.split);
  const Evaluation ev = evaluate(model, readings, metric, parse_fixation_source(e.fixation_source), tag);
  write_file_atomic(fs::path(e.out) / "predictions.json", predictions_json(ev.predictions));
  write_report(e.out, ev.report);
  std::cout << report_markdown(ev.report);
  return 0;
}

// Per-class values given directly:
// {"model_tag": ..., "classes": {"<key>": {"ap": x, "ar": y, "n_gt": n}},
//  "reference_average": {"ap": x, "ar": y}}
MetricsReport report_from_rows(const std::string& path, const EvalArgs& e, const MetricConfig& metric) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& ex) {
    throw ValidationError("rows " + path + ": " + ex.what());
  }
  try {
    std::vector<ClassMetrics> rows;
    const json& classes = doc.at("classes");
    for (const auto& [key, value] : classes.items()) parse_class(key);
    for (ClassLabel c : kAllClasses) {
      ClassMetrics row;
      row.label = c;
      const std::string key(class_key(c));
      if (classes.contains(key)) {
        const json& v = classes.at(key);
        if (v.contains("ap") && !v.at("ap").is_null()) row.ap = v.at("ap").get<double>();
        if (v.contains("ar") && !v.at("ar").is_null()) row.ar = v.at("ar").get<double>();
        row.n_gt = v.value("n_gt", row.ap ? std::size_t{1} : std::size_t{0});
      }
      rows.push_back(row);
    }
    ReportMeta meta{e.tag.empty() ? doc.value("model_tag", std::string("model")) : e.tag,
                    metric.kind, metric.thresh, metric.max_dets};
    std::optional<ReferenceAverages> ref;
    if (doc.contains("reference_average")) {
      ref = ReferenceAverages{doc["reference_average"].at("ap").get<double>(),
                              doc["reference_average"].at("ar").get<double>()};
    }
    return build_report(rows, meta, ref);
  } catch (const json::exception& ex) {
    throw ValidationError("rows " + path + ": " + ex.what());
  }
}

int run_report(const CLI::App& cmd, const EvalArgs& e) {
  const MetricConfig metric = resolve_metric(e);
  if (e.predictions.empty() == e.rows.empty()) {
    throw ValidationError("report: give exactly one of --predictions or --rows");
  }
  print_resolved(cmd, std::nullopt);
  MetricsReport report;
  if (!e.rows.empty()) {
    report = report_from_rows(e.rows, e, metric);
  } else {
    if (e.data.empty()) throw ValidationError("report: --predictions needs --data");
    const auto preds = read_predictions_json(e.predictions);
    const auto readings = load_split(e.data, e.split);
    report = score_predictions(preds, readings, metric, e.tag.empty() ? "model" : e.tag);
  }
  write_report(e.out, report);
  std::cout << report_markdown(report);
  return 0;
}

// --- gradcheck ------------------------------------------------------------------

struct GradArgs {
  std::uint64_t seed = 0;
  std::size_t seeds = 20;
  double eps = 1e-6;
};

int run_gradcheck(const CLI::App& cmd, const GradArgs& g) {
  if (g.seeds == 0) throw ValidationError("gradcheck: --seeds must be >= 1");
  if (!(g.eps > 0)) throw ValidationError("gradcheck: --eps must be positive");
  print_resolved(cmd, g.seed);
  std::vector<std::pair<std::string, double>> worst;
  auto record = [&](const std::string& prefix, const std::vector<LayerGradError>& errs) {
    for (const auto& e : errs) {
      const std::string name = prefix + e.layer;
      auto it = std::find_if(worst.begin(), worst.end(), [&](const auto& p) { return p.first == name; });
      if (it == worst.end()) {
        worst.emplace_back(name, e.max_rel_error);
      } else {
        it->second = std::max(it->second, e.max_rel_error);
      }
    }
  };
  for (std::size_t k = 0; k < g.seeds; ++k) {
    record("op/", op_gradient_suite(g.seed + k, g.eps));
    record("model/", detector_gradient_suite(g.seed + k, g.eps));
  }
  bool ok = true;
  for (const auto& [name, err] : worst) {
    const bool pass = err < kGradTolerance;
    ok = ok && pass;
    std::printf("%-32s %.3e %s\n", name.c_str(), err, pass ? "ok" : "FAIL");
  }
  std::printf("%s: %zu seeds, tolerance %.0e\n", ok ? "PASS" : "FAIL", g.seeds, kGradTolerance);
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaze-fused lesion detection toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  c_synth->add_option("--out", synth.out, "Dataset root")->required();
  c_synth->add_option("--n", synth.n, "Number of readings")->capture_default_str();
  c_synth->add_option("--size", synth.size, "Image side in pixels")->capture_default_str();
  c_synth->add_option("--classes", synth.classes, "Class keys")->delimiter(',')->capture_default_str();
  c_synth->add_option("--val", synth.val, "Validation fraction")->capture_default_str();
  c_synth->add_option("--test", synth.test, "Test fraction")->capture_default_str();
  add_seed(c_synth, synth.seed);

  FixationArgs fixa;
  auto* c_fix = app.add_subcommand("fixations", "Detect fixations in a gaze CSV");
  c_fix->add_option("--gaze", fixa.gaze)->required()->check(CLI::ExistingFile);
  c_fix->add_option("--out", fixa.out)->required();
  c_fix->add_option("--dispersion", fixa.dispersion, "Pixels (default scales with --width)");
  c_fix->add_option("--min-dur", fixa.min_dur, "Milliseconds")->capture_default_str();
  c_fix->add_option("--width", fixa.width, "Image width")->capture_default_str();
  c_fix->add_option("--height", fixa.height, "Image height; enables off-image filtering");

  HeatmapArgs heat;
  auto* c_heat = app.add_subcommand("heatmap", "Render a fixation heatmap");
  c_heat->add_option("--fixations", heat.fixations)->required()->check(CLI::ExistingFile);
  c_heat->add_option("--width", heat.width)->required();
  c_heat->add_option("--height", heat.height)->required();
  c_heat->add_option("--sigma", heat.sigma, "Pixels (default scales with --width)");
  c_heat->add_option("--weighting", heat.weighting, "duration|uniform")->capture_default_str();
  c_heat->add_option("--out", heat.out, "PGM path")->required();
  c_heat->add_option("--raw", heat.raw, "Optional exact f64 sidecar");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a detector");
  add_train_flags(c_train, tr);
  add_model_flags(c_train, tr.model, true);
  c_train->add_option("--fixation-source", tr.fixation_source, "gaze|ones|zeros")->capture_default_str();

  CompareArgs cmp;
  auto* c_cmp = app.add_subcommand("compare", "Train image-only and multimodal arms and compare");
  add_train_flags(c_cmp, cmp.train);
  add_model_flags(c_cmp, cmp.train.model, false);
  c_cmp->add_option("--fixation-source", cmp.train.fixation_source, "gaze|ones|zeros")
      ->capture_default_str();
  c_cmp->add_option("--metric", cmp.metric, "iobb|iou")->capture_default_str();
  c_cmp->add_option("--thresh", cmp.thresh)->capture_default_str();
  c_cmp->add_option("--max-dets", cmp.max_dets)->capture_default_str();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  c_eval->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", ev.data)->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--split", ev.split, "train|val|test")->capture_default_str();
  c_eval->add_option("--out", ev.out)->required();
  c_eval->add_option("--tag", ev.tag, "Model tag in the report");
  c_eval->add_option("--metric", ev.metric, "iobb|iou")->capture_default_str();
  c_eval->add_option("--thresh", ev.thresh)->capture_default_str();
  c_eval->add_option("--max-dets", ev.max_dets)->capture_default_str();
  c_eval->add_option("--fixation-source", ev.fixation_source, "gaze|ones|zeros")->capture_default_str();

  EvalArgs rep;
  auto* c_rep = app.add_subcommand("report", "Score predictions or tabulate per-class values");
  c_rep->add_option("--predictions", rep.predictions)->check(CLI::ExistingFile);
  c_rep->add_option("--rows", rep.rows, "Per-class values JSON")->check(CLI::ExistingFile);
  c_rep->add_option("--data", rep.data)->check(CLI::ExistingDirectory);
  c_rep->add_option("--split", rep.split)->capture_default_str();
  c_rep->add_option("--out", rep.out)->required();
  c_rep->add_option("--tag", rep.tag);
  c_rep->add_option("--metric", rep.metric, "iobb|iou")->capture_default_str();
  c_rep->add_option("--thresh", rep.thresh)->capture_default_str();
  c_rep->add_option("--max-dets", rep.max_dets)->capture_default_str();

  GradArgs grad;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  add_seed(c_grad, grad.seed);
  c_grad->add_option("--seeds", grad.seeds, "Number of consecutive seeds")->capture_default_str();
  c_grad->add_option("--eps", grad.eps)->capture_default_str();

  for (CLI::App* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_path, "JSON file of flag values (flags win)");
  }

  try {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    std::vector<std::string> merged;
    if (!args.empty()) {
      merged.push_back(args[0]);
      for (auto& a : config_args(args)) merged.push_back(std::move(a));
      merged.insert(merged.end(), args.begin() + 1, args.end());
    }
    std::reverse(merged.begin(), merged.end());
    try {
      app.parse(merged);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return 1;
    }

    if (*c_synth) return run_synth(*c_synth, synth);
    if (*c_fix) return run_fixations(*c_fix, fixa);
    if (*c_heat) return run_heatmap(*c_heat, heat);
    if (*c_train) return run_train(*c_train, tr);
    if (*c_cmp) return run_compare(*c_cmp, cmp);
    if (*c_eval) return run_eval(*c_eval, ev);
    if (*c_rep) return run_report(*c_rep, rep);
    if (*c_grad) return run_gradcheck(*c_grad, grad);
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
}
