#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gfd/dataset.hpp"
#include "gfd/detector.hpp"
#include "gfd/metrics.hpp"

namespace gfd {

// Where a multimodal model's fixation map comes from.
enum class FixationSource { kGaze, kOnes, kZeros };

std::string_view fixation_source_name(FixationSource s);
FixationSource parse_fixation_source(std::string_view s);

struct TrainConfig {
  std::size_t epochs = 15;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  // Print a progress line every log_every steps (0 = quiet).
  std::size_t log_every = 0;
  // Stop after this many epochs without validation improvement.
  std::optional<std::size_t> patience;
  FixationSource fixation_source = FixationSource::kGaze;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
};

struct LossCurve {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_total;
  std::vector<double> val_mean_total;
};

std::string loss_curve_csv(const LossCurve& curve);

struct TrainResult {
  Detector final_model;
  Detector best_model;
  std::size_t best_epoch = 0;
  LossCurve curve;
};

// Per-reading inputs with fixation maps resolved for the model.
struct PreparedReading {
  const Reading* reading = nullptr;
  std::vector<TargetBox> targets;
  std::optional<FixationMap> fixations;
};

std::vector<PreparedReading> prepare_readings(std::span<const Reading> readings,
                                              const ModelConfig& config, FixationSource source);

// One SGD step per reading. With out_dir, writes loss_curve.csv plus
// checkpoint_last.json / checkpoint_best.json at every epoch end.
TrainResult train(const ModelConfig& model_config, std::span<const Reading> train_set,
                  std::span<const Reading> val_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Mean total loss over readings with fixed sampling seeds (no update).
double mean_loss(Detector& model, std::span<const PreparedReading> readings, std::uint64_t seed);

struct MetricConfig {
  OverlapKind kind = OverlapKind::kIoBB;
  double thresh = 0.5;
  std::size_t max_dets = 100;
};

struct Prediction {
  std::string reading_id;
  Detection detection;
};

struct Evaluation {
  MetricsReport report;
  std::vector<Prediction> predictions;
};

std::vector<Prediction> predict(Detector& model, std::span<const Reading> readings,
                                FixationSource source);
MetricsReport score_predictions(std::span<const Prediction> predictions,
                                std::span<const Reading> readings, const MetricConfig& metric,
                                const std::string& model_tag);
Evaluation evaluate(Detector& model, std::span<const Reading> readings, const MetricConfig& metric,
                    FixationSource source, const std::string& model_tag);

std::string predictions_json(std::span<const Prediction> predictions);
std::vector<Prediction> read_predictions_json(const std::filesystem::path& path);

struct ComparisonArm {
  std::string tag;
  ModelConfig model;
  FixationSource fixation_source = FixationSource::kGaze;
};

struct ComparisonResult {
  Evaluation first;
  Evaluation second;
  LossCurve first_curve;
  LossCurve second_curve;
};

// Trains and evaluates both arms on the same split and seeds. With out_dir,
// each arm writes into its own subdirectory and the side-by-side report lands
// in comparison.json / comparison.md.
ComparisonResult run_comparison(std::span<const Reading> train_set,
                                std::span<const Reading> val_set,
                                std::span<const Reading> test_set, const ComparisonArm& first,
                                const ComparisonArm& second, const TrainConfig& config,
                                const MetricConfig& metric,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace gfd
