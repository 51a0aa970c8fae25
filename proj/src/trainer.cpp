#include "gfd/trainer.hpp"

#include <cstdio>
#include <iostream>
#include <map>

#include "gfd/error.hpp"
#include "gfd/io.hpp"
#include "gfd/optim.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace gfd {

std::string_view fixation_source_name(FixationSource s) {
  switch (s) {
    case FixationSource::kGaze: return "gaze";
    case FixationSource::kOnes: return "ones";
    case FixationSource::kZeros: return "zeros";
  }
  return "gaze";
}

FixationSource parse_fixation_source(std::string_view s) {
  if (s == "gaze") return FixationSource::kGaze;
  if (s == "ones") return FixationSource::kOnes;
  if (s == "zeros") return FixationSource::kZeros;
  throw ValidationError("unknown fixation source '" + std::string(s) +
                        "' (expected gaze|ones|zeros)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("train config: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValidationError("train config: momentum must lie in [0, 1)");
  }
  if (patience && *patience == 0) throw ValidationError("train config: patience must be >= 1");
}

std::string loss_curve_csv(const LossCurve& curve) {
  std::string out = "step,epoch,cls,bbox,mask,total\n";
  for (const auto& s : curve.steps) {
    out += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," +
           format_double(s.loss.classification) + "," + format_double(s.loss.bbox) + "," +
           format_double(s.loss.mask) + "," + format_double(s.loss.total) + "\n";
  }
  return out;
}

std::vector<PreparedReading> prepare_readings(std::span<const Reading> readings,
                                              const ModelConfig& config, FixationSource source) {
  std::vector<PreparedReading> out;
  out.reserve(readings.size());
  for (const Reading& r : readings) {
    if (r.image.width != config.img_size || r.image.height != config.img_size) {
      throw ValidationError("reading " + r.id + " is " + std::to_string(r.image.width) + "x" +
                            std::to_string(r.image.height) + ", model expects " +
                            std::to_string(config.img_size));
    }
    PreparedReading p;
    p.reading = &r;
    p.targets = reading_targets(r);
    if (config.use_fixations) {
      const std::size_t n = r.image.width * r.image.height;
      switch (source) {
        case FixationSource::kGaze: p.fixations = reading_fixation_map(r); break;
        case FixationSource::kOnes:
          p.fixations = FixationMap{r.image.width, r.image.height, std::vector<double>(n, 1.0)};
          break;
        case FixationSource::kZeros:
          p.fixations = FixationMap{r.image.width, r.image.height, std::vector<double>(n, 0.0)};
          break;
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

const FixationMap* map_of(const PreparedReading& p) {
  return p.fixations ? &*p.fixations : nullptr;
}

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kStepStream = 0x5354;
constexpr std::uint64_t kValStream = 0x5641;

}  // namespace

double mean_loss(Detector& model, std::span<const PreparedReading> readings, std::uint64_t seed) {
  if (readings.empty()) throw ValidationError("mean_loss needs at least one reading");
  double sum = 0.0;
  for (std::size_t i = 0; i < readings.size(); ++i) {
    Tape tape;
    TrainStepOptions opts;
    opts.sample_seed = mix_seed(seed, i);
    sum += tape.scalar(
        model.forward_train(tape, readings[i].reading->image, map_of(readings[i]),
                            readings[i].targets, opts)
            .total);
  }
  return sum / static_cast<double>(readings.size());
}

TrainResult train(const ModelConfig& model_config, std::span<const Reading> train_set,
                  std::span<const Reading> val_set, const TrainConfig& config,
                  const std::optional<fs::path>& out_dir) {
  config.validate();
  if (train_set.empty()) throw ValidationError("train needs a non-empty training set");
  const auto train_data = prepare_readings(train_set, model_config, config.fixation_source);
  const auto val_data = prepare_readings(val_set, model_config, config.fixation_source);

  Detector model(model_config);
  Detector best = model;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::size_t since_best = 0;
  LossCurve curve;
  std::size_t step = 0;
  const auto layers = model.trainable_layers();
  // Layers a step does not reach (e.g. the mask head without positives) take a zero gradient.
  for (LayerParams* p : layers) {
    p->weight.grad();
    p->bias.grad();
  }

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(config.seed, kShuffleStream + epoch));
    shuffle_rng.shuffle(order);
    double epoch_sum = 0.0;
    for (std::size_t i : order) {
      ++step;
      const PreparedReading& pr = train_data[i];
      LossBreakdown loss;
      try {
        Tape tape;
        TrainStepOptions opts;
        opts.sample_seed = mix_seed(config.seed, kStepStream + step);
        const LossVars lv =
            model.forward_train(tape, pr.reading->image, map_of(pr), pr.targets, opts);
        loss = lv.values(tape);
        tape.backward(lv.total);
        sgd_step(layers, config.lr, config.momentum);
        for (LayerParams* p : layers) {
          p->weight.check_finite("parameter");
          p->bias.check_finite("parameter");
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + ", reading " + pr.reading->id +
                           "): " + e.what());
      }
      curve.steps.push_back({step, epoch, loss});
      epoch_sum += loss.total;
      if (config.log_every > 0 && step % config.log_every == 0) {
        std::fprintf(stderr, "step %zu epoch %zu total %.6f (cls %.6f bbox %.6f mask %.6f)\n",
                     step, epoch, loss.total, loss.classification, loss.bbox, loss.mask);
      }
    }
    curve.epoch_mean_total.push_back(epoch_sum / static_cast<double>(train_data.size()));
    const double val = val_data.empty() ? curve.epoch_mean_total.back()
                                        : mean_loss(model, val_data, mix_seed(config.seed, kValStream));
    curve.val_mean_total.push_back(val);
    if (epoch == 1 || val < best_val) {
      best_val = val;
      best = model;
      best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (config.log_every > 0) {
      std::fprintf(stderr, "epoch %zu mean total %.6f val %.6f\n", epoch,
                   curve.epoch_mean_total.back(), val);
    }
    if (out_dir) {
      write_file_atomic(*out_dir / "loss_curve.csv", loss_curve_csv(curve));
      model.save(*out_dir / "checkpoint_last.json");
      if (best_epoch == epoch) best.save(*out_dir / "checkpoint_best.json");
    }
    if (config.patience && since_best >= *config.patience) break;
  }
  for (LayerParams* p : layers) {
    p->weight_velocity.clear();
    p->bias_velocity.clear();
    p->weight.drop_grad();
    p->bias.drop_grad();
  }
  for (LayerParams* p : best.trainable_layers()) {
    p->weight_velocity.clear();
    p->bias_velocity.clear();
  }
  return TrainResult{std::move(model), std::move(best), best_epoch, std::move(curve)};
}

std::vector<Prediction> predict(Detector& model, std::span<const Reading> readings,
                                FixationSource source) {
  const auto data = prepare_readings(readings, model.config(), source);
  std::vector<Prediction> out;
  for (const auto& p : data) {
    for (auto& d : model.infer(p.reading->image, map_of(p))) {
      out.push_back({p.reading->id, std::move(d)});
    }
  }
  return out;
}

MetricsReport score_predictions(std::span<const Prediction> predictions,
                                std::span<const Reading> readings, const MetricConfig& metric,
                                const std::string& model_tag) {
  if (readings.empty()) throw ValidationError("evaluation needs at least one reading");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < readings.size(); ++i) index.emplace(readings[i].id, i);
  std::vector<std::vector<ScoredBox>> dets(kNumClasses);
  std::vector<std::vector<GroundTruthBox>> gts(kNumClasses);
  for (const auto& p : predictions) {
    auto it = index.find(p.reading_id);
    if (it == index.end()) {
      throw ValidationError("prediction for unknown reading '" + p.reading_id + "'");
    }
    dets[class_index(p.detection.label)].push_back({it->second, p.detection.box, p.detection.score});
  }
  for (std::size_t i = 0; i < readings.size(); ++i) {
    for (const auto& t : reading_targets(readings[i])) gts[class_index(t.label)].push_back({i, t.box});
  }
  std::vector<ClassMetrics> rows;
  for (ClassLabel c : kAllClasses) {
    rows.push_back(class_metrics(c, dets[class_index(c)], gts[class_index(c)], metric.thresh,
                                 metric.kind, metric.max_dets));
  }
  return build_report(rows, {model_tag, metric.kind, metric.thresh, metric.max_dets});
}

Evaluation evaluate(Detector& model, std::span<const Reading> readings, const MetricConfig& metric,
                    FixationSource source, const std::string& model_tag) {
  if (readings.empty()) throw ValidationError("evaluation needs at least one reading");
  Evaluation e;
  e.predictions = predict(model, readings, source);
  e.report = score_predictions(e.predictions, readings, metric, model_tag);
  return e;
}

std::string predictions_json(std::span<const Prediction> predictions) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& p : predictions) {
    const Box& b = p.detection.box;
    arr.push_back({{"reading_id", p.reading_id},
                   {"box", {b.x0, b.y0, b.x1, b.y1}},
                   {"label", class_key(p.detection.label)},
                   {"score", p.detection.score}});
  }
  return arr.dump(2) + "\n";
}

std::vector<Prediction> read_predictions_json(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw ValidationError(path.string() + ": expected a JSON array");
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = path.string() + "[" + std::to_string(i) + "]";
    try {
      Prediction p;
      p.reading_id = j[i].at("reading_id").get<std::string>();
      const auto box = j[i].at("box").get<std::vector<double>>();
      if (box.size() != 4) throw ValidationError(where + ": box needs 4 numbers");
      p.detection.box = {box[0], box[1], box[2], box[3]};
      if (!p.detection.box.valid()) throw ValidationError(where + ": degenerate box");
      p.detection.label = parse_class(j[i].at("label").get<std::string>());
      p.detection.score = j[i].at("score").get<double>();
      if (!(p.detection.score >= 0.0 && p.detection.score <= 1.0)) {
        throw ValidationError(where + ": score outside [0, 1]");
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return out;
}

ComparisonResult run_comparison(std::span<const Reading> train_set,
                                std::span<const Reading> val_set,
                                std::span<const Reading> test_set, const ComparisonArm& first,
                                const ComparisonArm& second, const TrainConfig& config,
                                const MetricConfig& metric, const std::optional<fs::path>& out_dir) {
  if (first.model.seed != second.model.seed) {
    throw ValidationError("comparison arms must share the model seed");
  }
  ComparisonResult result;
  auto run_arm = [&](const ComparisonArm& arm, const char* subdir, Evaluation& eval,
                     LossCurve& curve) {
    TrainConfig tc = config;
    tc.fixation_source = arm.fixation_source;
    std::optional<fs::path> dir;
    if (out_dir) dir = *out_dir / subdir;
    TrainResult tr = train(arm.model, train_set, val_set, tc, dir);
    eval = evaluate(tr.best_model, test_set, metric, arm.fixation_source, arm.tag);
    curve = std::move(tr.curve);
    if (dir) {
      write_file_atomic(*dir / "predictions.json", predictions_json(eval.predictions));
      write_file_atomic(*dir / "report.json", report_json(eval.report));
      write_file_atomic(*dir / "report.md", report_markdown(eval.report));
    }
  };
  run_arm(first, "arm_a", result.first, result.first_curve);
  run_arm(second, "arm_b", result.second, result.second_curve);
  if (out_dir) {
    write_file_atomic(*out_dir / "comparison.json",
                      comparison_json(result.first.report, result.second.report));
    write_file_atomic(*out_dir / "comparison.md",
                      comparison_markdown(result.first.report, result.second.report));
  }
  return result;
}

}  // namespace gfd
