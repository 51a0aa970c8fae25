#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gfd/boxes.hpp"
#include "gfd/dataset.hpp"
#include "gfd/gaze.hpp"
#include "gfd/ops.hpp"
#include "gfd/random.hpp"
#include "gfd/tape.hpp"

namespace gfd {

enum class FusionPoint { kInput, kFeature };

std::string_view fusion_mode_name(CombineMode m);
CombineMode parse_fusion_mode(std::string_view s);
std::string_view fusion_point_name(FusionPoint p);
FusionPoint parse_fusion_point(std::string_view s);

struct ModelConfig {
  std::size_t img_size = 64;
  // false = image-only model: the fixation map is never read.
  bool use_fixations = false;
  CombineMode fusion_mode = CombineMode::kSum;
  FusionPoint fusion_point = FusionPoint::kFeature;
  // Output widths of the four backbone convolutions; three 2x2 pools give stride 8.
  std::vector<std::size_t> backbone_channels = {8, 16, 32, 32};
  std::vector<double> anchor_scales = {12.0, 24.0, 40.0};
  std::vector<double> anchor_ratios = {0.5, 1.0, 2.0};
  std::size_t rpn_pre_nms = 200;
  std::size_t rpn_post_nms = 50;
  double rpn_nms_iou = 0.7;
  double rpn_fg_iou = 0.7;
  double rpn_bg_iou = 0.3;
  std::size_t rpn_batch = 64;
  double rpn_pos_fraction = 0.5;
  double min_proposal_size = 1.0;
  double head_fg_iou = 0.5;
  double head_bg_iou = 0.5;
  std::size_t head_batch = 32;
  double head_pos_fraction = 0.25;
  bool append_gt_proposals = true;
  std::size_t roi_size = 7;
  int sampling_ratio = 2;
  std::size_t hidden = 128;
  std::size_t mask_channels = 8;
  std::size_t n_classes = kNumClasses;
  // Initialization gain for the prediction layers of the RPN and heads.
  double output_gain = 0.1;
  double score_thresh = 0.05;
  double det_nms_iou = 0.5;
  std::size_t max_detections = 100;
  std::uint64_t seed = 0;

  std::size_t num_anchors_per_cell() const { return anchor_scales.size() * anchor_ratios.size(); }
  std::size_t feature_size() const { return img_size / 8; }
  void validate() const;
};

std::string model_config_to_json(const ModelConfig& c);
// Keys absent from `json_text` keep their value from `base`; unknown keys are rejected.
ModelConfig model_config_from_json(std::string_view json_text, const ModelConfig& base = {});

struct Detection {
  Box box;
  ClassLabel label = ClassLabel::kEnlargedCardiacSilhouette;
  double score = 0.0;
  // roi_size x roi_size probabilities over `box`.
  std::size_t mask_size = 0;
  std::vector<double> mask;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct LossBreakdown {
  double classification = 0.0;
  double bbox = 0.0;
  double mask = 0.0;
  double total = 0.0;
};

// Per-box assignment against ground truth. label: -1 ignored, 0 background,
// 1 + class index for foreground.
struct BoxAssignment {
  std::vector<int> label;
  std::vector<int> matched;
  std::vector<BoxDelta> regression;
};

// IoU >= fg -> foreground, IoU < bg -> background, else ignored. With
// force_best, each target's best-IoU box (lowest index on ties) is foreground.
BoxAssignment assign_targets(std::span<const Box> boxes, std::span<const TargetBox> targets,
                             double fg_iou, double bg_iou, bool force_best);

// Up to round(batch * pos_fraction) foreground, then background up to batch.
std::vector<std::size_t> sample_assignment(std::span<const int> labels, std::size_t batch,
                                           double pos_fraction, Rng& rng);

// Ground-truth mask averaged over sampling^2 points per cell of a size x size grid over roi.
std::vector<double> mask_target(const TargetBox& target, const Box& roi, std::size_t size,
                                int sampling);

// Targets consumed by compute_loss; indices refer to the flat layouts of
// TrainOutputs (anchor a = cell * A + k lives at channel k of the objectness map).
struct LossTargets {
  std::vector<std::size_t> rpn_index;
  std::vector<double> rpn_label;
  std::vector<std::size_t> rpn_delta_index;
  std::vector<double> rpn_delta_target;
  std::size_t rpn_num_pos = 0;

  std::vector<std::size_t> roi_label;
  std::vector<std::size_t> roi_delta_index;
  std::vector<double> roi_delta_target;
  std::size_t roi_num_pos = 0;

  std::vector<std::size_t> mask_index;
  std::vector<double> mask_target;
  std::size_t mask_pixels = 0;
};

struct TrainOutputs {
  Var rpn_objectness;          // (1, A, Hf, Wf)
  Var rpn_deltas;              // (1, 4A, Hf, Wf)
  std::optional<Var> class_logits;   // (R, n_classes + 1)
  std::optional<Var> box_deltas;     // (R, 4 (n_classes + 1))
  std::optional<Var> mask_logits;    // (P, n_classes, roi, roi), positives only
};

struct LossVars {
  Var classification;
  Var bbox;
  Var mask;
  Var total;

  LossBreakdown values(const Tape& tape) const;
};

LossVars compute_loss(Tape& tape, const TrainOutputs& out, const LossTargets& targets);

// Everything an inference pass produces, for inspection and identity checks.
struct DetectorOutput {
  Tensor features;
  Tensor rpn_objectness;
  Tensor rpn_deltas;
  std::vector<Box> proposals;
  Tensor class_logits;
  Tensor box_deltas;
  std::vector<Detection> detections;
};

struct TrainStepOptions {
  std::uint64_t sample_seed = 0;
  // Replaces the RPN proposals (gradient never flows through proposals).
  const std::vector<Box>* proposals = nullptr;
};

struct LayerGradError {
  std::string layer;
  double max_rel_error = 0.0;
};

class Detector {
 public:
  explicit Detector(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  // Every stored layer, in a fixed order.
  std::vector<std::pair<std::string, LayerParams*>> named_layers();
  std::vector<LayerParams*> trainable_layers();

  // Records the training loss total = classification + bbox + mask on `tape`.
  LossVars forward_train(Tape& tape, const GrayImage& image, const FixationMap* fixations,
                         std::span<const TargetBox> targets, const TrainStepOptions& opts);
  DetectorOutput forward_infer(const GrayImage& image, const FixationMap* fixations);
  std::vector<Detection> infer(const GrayImage& image, const FixationMap* fixations) {
    return forward_infer(image, fixations).detections;
  }

  const std::vector<Box>& anchors() const { return anchors_; }

  void save(const std::filesystem::path& path) const;
  static Detector load(const std::filesystem::path& path);

 private:
  Var backbone(Tape& tape, Var x, std::vector<LayerParams>& layers, bool with_bias, bool train);
  Var features(Tape& tape, const GrayImage& image, const FixationMap* fixations, bool train);
  Var layer(Tape& tape, Var x, LayerParams& p, bool train, int pad);
  Var dense(Tape& tape, Var x, LayerParams& p, bool train);
  std::vector<Box> propose(const Tensor& objectness, const Tensor& deltas) const;

  ModelConfig config_;
  std::vector<Box> anchors_;
  std::vector<LayerParams> image_backbone_;
  std::vector<LayerParams> fixation_backbone_;
  LayerParams rpn_conv_, rpn_obj_, rpn_delta_;
  LayerParams fc_, cls_, box_;
  LayerParams mask_conv_, mask_out_;
};

Tensor image_tensor(const GrayImage& image);
Tensor map_tensor(const FixationMap& map);
// Element-wise fusion of two same-shaped branches.
Tensor fuse(const Tensor& image_branch, const Tensor& fixation_branch, CombineMode mode);

// Finite-difference check of the total loss against every stored parameter,
// with proposals frozen; reports the worst relative error per layer.
std::vector<LayerGradError> detector_grad_check(Detector& model, const GrayImage& image,
                                                const FixationMap* fixations,
                                                std::span<const TargetBox> targets,
                                                const std::vector<Box>& proposals, double eps,
                                                std::uint64_t sample_seed);

}  // namespace gfd
