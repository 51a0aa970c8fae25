#include "gfd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfd/error.hpp"
#include "gfd/io.hpp"
#include "gfd/optim.hpp"
#include "json.hpp"

namespace gfd {

using nlohmann::json;

std::string_view fusion_mode_name(CombineMode m) { return m == CombineMode::kSum ? "sum" : "mul"; }

CombineMode parse_fusion_mode(std::string_view s) {
  if (s == "sum") return CombineMode::kSum;
  if (s == "mul") return CombineMode::kMul;
  throw ValidationError("unknown fusion mode '" + std::string(s) + "' (expected sum|mul)");
}

std::string_view fusion_point_name(FusionPoint p) {
  return p == FusionPoint::kInput ? "input" : "feature";
}

FusionPoint parse_fusion_point(std::string_view s) {
  if (s == "input") return FusionPoint::kInput;
  if (s == "feature") return FusionPoint::kFeature;
  throw ValidationError("unknown fusion point '" + std::string(s) + "' (expected input|feature)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (img_size < 16 || img_size % 8 != 0) fail("img_size must be a multiple of 8, at least 16");
  if (backbone_channels.size() != 4) fail("backbone_channels needs 4 entries");
  for (std::size_t c : backbone_channels) {
    if (c == 0) fail("backbone_channels must be positive");
  }
  if (anchor_scales.empty() || anchor_ratios.empty()) fail("anchor scales and ratios non-empty");
  for (double s : anchor_scales) {
    if (!(s > 0.0)) fail("anchor scales must be positive");
  }
  for (double r : anchor_ratios) {
    if (!(r > 0.0)) fail("anchor ratios must be positive");
  }
  if (!(0.0 <= rpn_bg_iou && rpn_bg_iou < rpn_fg_iou && rpn_fg_iou <= 1.0)) {
    fail("need 0 <= rpn_bg_iou < rpn_fg_iou <= 1");
  }
  if (!(0.0 <= head_bg_iou && head_bg_iou <= head_fg_iou && head_fg_iou <= 1.0)) {
    fail("need 0 <= head_bg_iou <= head_fg_iou <= 1");
  }
  for (double t : {rpn_nms_iou, det_nms_iou}) {
    if (!(t > 0.0 && t < 1.0)) fail("nms thresholds must lie in (0, 1)");
  }
  for (double f : {rpn_pos_fraction, head_pos_fraction}) {
    if (!(f > 0.0 && f <= 1.0)) fail("positive fractions must lie in (0, 1]");
  }
  if (rpn_pre_nms == 0 || rpn_post_nms == 0) fail("proposal counts must be positive");
  if (rpn_batch == 0 || head_batch == 0) fail("sample batch sizes must be positive");
  if (!(min_proposal_size > 0.0)) fail("min_proposal_size must be positive");
  if (roi_size == 0 || sampling_ratio < 1) fail("roi_size and sampling_ratio must be >= 1");
  if (hidden == 0 || mask_channels == 0) fail("hidden and mask_channels must be positive");
  if (n_classes != kNumClasses) fail("n_classes must be " + std::to_string(kNumClasses));
  if (!(output_gain > 0.0)) fail("output_gain must be positive");
  if (!(score_thresh >= 0.0 && score_thresh <= 1.0)) fail("score_thresh must lie in [0, 1]");
  if (max_detections == 0) fail("max_detections must be positive");
}

namespace {

json config_json(const ModelConfig& c) {
  return json{{"img_size", c.img_size},
              {"use_fixations", c.use_fixations},
              {"fusion_mode", fusion_mode_name(c.fusion_mode)},
              {"fusion_point", fusion_point_name(c.fusion_point)},
              {"backbone_channels", c.backbone_channels},
              {"anchor_scales", c.anchor_scales},
              {"anchor_ratios", c.anchor_ratios},
              {"rpn_pre_nms", c.rpn_pre_nms},
              {"rpn_post_nms", c.rpn_post_nms},
              {"rpn_nms_iou", c.rpn_nms_iou},
              {"rpn_fg_iou", c.rpn_fg_iou},
              {"rpn_bg_iou", c.rpn_bg_iou},
              {"rpn_batch", c.rpn_batch},
              {"rpn_pos_fraction", c.rpn_pos_fraction},
              {"min_proposal_size", c.min_proposal_size},
              {"head_fg_iou", c.head_fg_iou},
              {"head_bg_iou", c.head_bg_iou},
              {"head_batch", c.head_batch},
              {"head_pos_fraction", c.head_pos_fraction},
              {"append_gt_proposals", c.append_gt_proposals},
              {"roi_size", c.roi_size},
              {"sampling_ratio", c.sampling_ratio},
              {"hidden", c.hidden},
              {"mask_channels", c.mask_channels},
              {"n_classes", c.n_classes},
              {"output_gain", c.output_gain},
              {"score_thresh", c.score_thresh},
              {"det_nms_iou", c.det_nms_iou},
              {"max_detections", c.max_detections},
              {"seed", c.seed}};
}

ModelConfig config_from(const json& j, const ModelConfig& base) {
  if (!j.is_object()) throw ValidationError("model config must be a JSON object");
  ModelConfig c = base;
  const json known = config_json(base);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("model config: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("img_size", c.img_size);
    get("use_fixations", c.use_fixations);
    if (j.contains("fusion_mode")) c.fusion_mode = parse_fusion_mode(j["fusion_mode"].get<std::string>());
    if (j.contains("fusion_point")) {
      c.fusion_point = parse_fusion_point(j["fusion_point"].get<std::string>());
    }
    get("backbone_channels", c.backbone_channels);
    get("anchor_scales", c.anchor_scales);
    get("anchor_ratios", c.anchor_ratios);
    get("rpn_pre_nms", c.rpn_pre_nms);
    get("rpn_post_nms", c.rpn_post_nms);
    get("rpn_nms_iou", c.rpn_nms_iou);
    get("rpn_fg_iou", c.rpn_fg_iou);
    get("rpn_bg_iou", c.rpn_bg_iou);
    get("rpn_batch", c.rpn_batch);
    get("rpn_pos_fraction", c.rpn_pos_fraction);
    get("min_proposal_size", c.min_proposal_size);
    get("head_fg_iou", c.head_fg_iou);
    get("head_bg_iou", c.head_bg_iou);
    get("head_batch", c.head_batch);
    get("head_pos_fraction", c.head_pos_fraction);
    get("append_gt_proposals", c.append_gt_proposals);
    get("roi_size", c.roi_size);
    get("sampling_ratio", c.sampling_ratio);
    get("hidden", c.hidden);
    get("mask_channels", c.mask_channels);
    get("n_classes", c.n_classes);
    get("output_gain", c.output_gain);
    get("score_thresh", c.score_thresh);
    get("det_nms_iou", c.det_nms_iou);
    get("max_detections", c.max_detections);
    get("seed", c.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

json tensor_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from(const json& j, const Shape& expected, const std::string& what) {
  Shape shape = j.at("shape").get<Shape>();
  if (shape != expected) {
    throw ValidationError("checkpoint tensor " + what + " has shape " + shape_str(shape) +
                          ", model expects " + shape_str(expected));
  }
  Tensor t(shape, j.at("data").get<std::vector<double>>());
  t.check_finite(what.c_str());
  return t;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) { return config_json(c).dump(2); }

ModelConfig model_config_from_json(std::string_view json_text, const ModelConfig& base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  return config_from(j, base);
}

BoxAssignment assign_targets(std::span<const Box> boxes, std::span<const TargetBox> targets,
                             double fg_iou, double bg_iou, bool force_best) {
  BoxAssignment a;
  const std::size_t n = boxes.size();
  a.label.assign(n, 0);
  a.matched.assign(n, -1);
  a.regression.assign(n, BoxDelta{0, 0, 0, 0});
  if (targets.empty()) return a;
  std::vector<double> best(n, -1.0);
  std::vector<double> iou_mat(n * targets.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < targets.size(); ++g) {
      const double v = boxes[i].area() > 0.0 ? iou(boxes[i], targets[g].box) : 0.0;
      iou_mat[i * targets.size() + g] = v;
      if (v > best[i]) {
        best[i] = v;
        a.matched[i] = static_cast<int>(g);
      }
    }
    if (best[i] >= fg_iou) {
      a.label[i] = 1 + static_cast<int>(class_index(targets[a.matched[i]].label));
    } else if (best[i] < bg_iou) {
      a.label[i] = 0;
      a.matched[i] = -1;
    } else {
      a.label[i] = -1;
      a.matched[i] = -1;
    }
  }
  if (force_best) {
    for (std::size_t g = 0; g < targets.size(); ++g) {
      std::size_t arg = n;
      double top = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (iou_mat[i * targets.size() + g] > top) {
          top = iou_mat[i * targets.size() + g];
          arg = i;
        }
      }
      if (arg == n) continue;
      a.matched[arg] = static_cast<int>(g);
      a.label[arg] = 1 + static_cast<int>(class_index(targets[g].label));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (a.label[i] > 0) a.regression[i] = encode_box(boxes[i], targets[a.matched[i]].box);
  }
  return a;
}

std::vector<std::size_t> sample_assignment(std::span<const int> labels, std::size_t batch,
                                           double pos_fraction, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0) pos.push_back(i);
    else if (labels[i] == 0) neg.push_back(i);
  }
  rng.shuffle(pos);
  rng.shuffle(neg);
  const auto pos_cap = static_cast<std::size_t>(std::llround(batch * pos_fraction));
  const std::size_t n_pos = std::min(pos.size(), pos_cap);
  const std::size_t n_neg = std::min(neg.size(), batch - n_pos);
  std::vector<std::size_t> out(pos.begin(), pos.begin() + n_pos);
  out.insert(out.end(), neg.begin(), neg.begin() + n_neg);
  return out;
}

std::vector<double> mask_target(const TargetBox& target, const Box& roi, std::size_t size,
                                int sampling) {
  std::vector<double> out(size * size, 0.0);
  const double cw = roi.width() / static_cast<double>(size);
  const double ch = roi.height() / static_cast<double>(size);
  const double per = 1.0 / static_cast<double>(sampling * sampling);
  const auto mw = static_cast<long>(target.mask_width), mh = static_cast<long>(target.mask_height);
  for (std::size_t u = 0; u < size; ++u) {
    for (std::size_t v = 0; v < size; ++v) {
      double acc = 0.0;
      for (int sy = 0; sy < sampling; ++sy) {
        const double y = roi.y0 + (static_cast<double>(u) + (sy + 0.5) / sampling) * ch;
        const auto py = static_cast<long>(std::floor(y));
        for (int sx = 0; sx < sampling; ++sx) {
          const double x = roi.x0 + (static_cast<double>(v) + (sx + 0.5) / sampling) * cw;
          const auto px = static_cast<long>(std::floor(x));
          if (px >= 0 && px < mw && py >= 0 && py < mh) acc += target.mask[py * mw + px];
        }
      }
      out[u * size + v] = acc * per;
    }
  }
  return out;
}

LossBreakdown LossVars::values(const Tape& tape) const {
  return {tape.scalar(classification), tape.scalar(bbox), tape.scalar(mask), tape.scalar(total)};
}

LossVars compute_loss(Tape& tape, const TrainOutputs& out, const LossTargets& t) {
  auto zero = [&] { return tape.constant(Tensor({1}, 0.0)); };
  const Var rpn_cls =
      t.rpn_index.empty()
          ? zero()
          : tape.bce_with_logits(out.rpn_objectness, t.rpn_index, t.rpn_label,
                                 static_cast<double>(t.rpn_index.size()));
  const Var rpn_box = t.rpn_num_pos == 0
                          ? zero()
                          : tape.smooth_l1(out.rpn_deltas, t.rpn_delta_index, t.rpn_delta_target,
                                           static_cast<double>(t.rpn_num_pos));
  const Var head_cls = (out.class_logits && !t.roi_label.empty())
                           ? tape.softmax_cross_entropy(*out.class_logits, t.roi_label)
                           : zero();
  const Var head_box = (out.box_deltas && t.roi_num_pos > 0)
                           ? tape.smooth_l1(*out.box_deltas, t.roi_delta_index,
                                            t.roi_delta_target, static_cast<double>(t.roi_num_pos))
                           : zero();
  const Var mask = (out.mask_logits && t.mask_pixels > 0)
                       ? tape.bce_with_logits(*out.mask_logits, t.mask_index, t.mask_target,
                                              static_cast<double>(t.mask_pixels))
                       : zero();
  LossVars lv;
  lv.classification = tape.add(rpn_cls, head_cls);
  lv.bbox = tape.add(rpn_box, head_box);
  lv.mask = mask;
  lv.total = tape.add(tape.add(lv.classification, lv.bbox), lv.mask);
  return lv;
}

Tensor image_tensor(const GrayImage& image) {
  return Tensor({1, 1, image.height, image.width}, image.pixels);
}

Tensor map_tensor(const FixationMap& map) {
  return Tensor({1, 1, map.height, map.width}, map.values);
}

Tensor fuse(const Tensor& image_branch, const Tensor& fixation_branch, CombineMode mode) {
  if (image_branch.shape() != fixation_branch.shape()) {
    throw ValidationError("fuse: branch shapes differ, " + shape_str(image_branch.shape()) +
                          " vs " + shape_str(fixation_branch.shape()));
  }
  return elementwise_combine(image_branch, fixation_branch, mode);
}

Detector::Detector(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const ModelConfig& c = config_;
  const auto s = static_cast<double>(c.img_size);
  anchors_ = generate_anchors(c.feature_size(), c.feature_size(), 8.0, c.anchor_scales,
                              c.anchor_ratios, s, s);

  auto make_backbone = [&](std::uint64_t stream) {
    Rng rng(mix_seed(c.seed, stream));
    std::vector<LayerParams> layers;
    std::size_t c_in = 1;
    for (std::size_t c_out : c.backbone_channels) {
      layers.push_back(make_conv_layer(c_out, c_in, 3, rng));
      c_in = c_out;
    }
    return layers;
  };
  image_backbone_ = make_backbone(1);
  if (c.use_fixations && c.fusion_point == FusionPoint::kFeature) {
    fixation_backbone_ = make_backbone(2);
  }
  const std::size_t feat = c.backbone_channels.back();
  const std::size_t a = c.num_anchors_per_cell();
  {
    Rng rng(mix_seed(c.seed, 3));
    rpn_conv_ = make_conv_layer(feat, feat, 3, rng);
    rpn_obj_ = make_conv_layer(a, feat, 1, rng, c.output_gain);
    rpn_delta_ = make_conv_layer(4 * a, feat, 1, rng, c.output_gain);
  }
  {
    Rng rng(mix_seed(c.seed, 4));
    fc_ = make_linear_layer(c.hidden, feat * c.roi_size * c.roi_size, rng);
    cls_ = make_linear_layer(c.n_classes + 1, c.hidden, rng, c.output_gain);
    box_ = make_linear_layer(4 * (c.n_classes + 1), c.hidden, rng, c.output_gain);
  }
  {
    Rng rng(mix_seed(c.seed, 5));
    mask_conv_ = make_conv_layer(c.mask_channels, feat, 3, rng);
    mask_out_ = make_conv_layer(c.n_classes, c.mask_channels, 1, rng, c.output_gain);
  }
}

std::vector<std::pair<std::string, LayerParams*>> Detector::named_layers() {
  std::vector<std::pair<std::string, LayerParams*>> out;
  for (std::size_t i = 0; i < image_backbone_.size(); ++i) {
    out.emplace_back("image_backbone." + std::to_string(i), &image_backbone_[i]);
  }
  for (std::size_t i = 0; i < fixation_backbone_.size(); ++i) {
    out.emplace_back("fixation_backbone." + std::to_string(i), &fixation_backbone_[i]);
  }
  out.emplace_back("rpn.conv", &rpn_conv_);
  out.emplace_back("rpn.objectness", &rpn_obj_);
  out.emplace_back("rpn.deltas", &rpn_delta_);
  out.emplace_back("head.fc", &fc_);
  out.emplace_back("head.cls", &cls_);
  out.emplace_back("head.box", &box_);
  out.emplace_back("mask.conv", &mask_conv_);
  out.emplace_back("mask.out", &mask_out_);
  return out;
}

std::vector<LayerParams*> Detector::trainable_layers() {
  std::vector<LayerParams*> out;
  for (auto& [name, p] : named_layers()) out.push_back(p);
  return out;
}

Var Detector::layer(Tape& tape, Var x, LayerParams& p, bool train, int pad) {
  if (!train) return tape.conv2d(x, tape.constant(p.weight), tape.constant(p.bias), 1, pad);
  return tape.conv2d(x, p, 1, pad);
}

Var Detector::dense(Tape& tape, Var x, LayerParams& p, bool train) {
  if (!train) return tape.linear(x, tape.constant(p.weight), tape.constant(p.bias));
  return tape.linear(x, p);
}

Var Detector::backbone(Tape& tape, Var x, std::vector<LayerParams>& layers, bool with_bias,
                       bool train) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerParams& p = layers[i];
    if (with_bias) {
      x = layer(tape, x, p, train, 1);
    } else {
      // The fixation branch has no bias, so an all-zero map gives all-zero features.
      const Var w = train ? tape.param(p.weight) : tape.constant(p.weight);
      if (train) p.bias.grad();
      x = tape.conv2d(x, w, tape.constant(p.bias), 1, 1);
    }
    x = tape.relu(x);
    if (i + 1 < layers.size()) x = tape.maxpool2d(x, 2, 2);
  }
  return x;
}

Var Detector::features(Tape& tape, const GrayImage& image, const FixationMap* fixations,
                       bool train) {
  const std::size_t s = config_.img_size;
  if (image.width != s || image.height != s) {
    throw ValidationError("image is " + std::to_string(image.width) + "x" +
                          std::to_string(image.height) + ", model expects " + std::to_string(s) +
                          "x" + std::to_string(s));
  }
  const Var img = tape.constant(image_tensor(image));
  if (!config_.use_fixations) return backbone(tape, img, image_backbone_, true, train);
  if (fixations == nullptr) throw ValidationError("multimodal model needs a fixation map");
  if (fixations->width != s || fixations->height != s) {
    throw ValidationError("fixation map is " + std::to_string(fixations->width) + "x" +
                          std::to_string(fixations->height) + ", model expects " +
                          std::to_string(s) + "x" + std::to_string(s));
  }
  const Var fix = tape.constant(map_tensor(*fixations));
  if (config_.fusion_point == FusionPoint::kInput) {
    return backbone(tape, tape.combine(img, fix, config_.fusion_mode), image_backbone_, true,
                    train);
  }
  const Var fi = backbone(tape, img, image_backbone_, true, train);
  const Var ff = backbone(tape, fix, fixation_backbone_, false, train);
  return tape.combine(fi, ff, config_.fusion_mode);
}

std::vector<Box> Detector::propose(const Tensor& objectness, const Tensor& deltas) const {
  const std::size_t a_per = config_.num_anchors_per_cell();
  const std::size_t hw = config_.feature_size() * config_.feature_size();
  const auto s = static_cast<double>(config_.img_size);
  struct Candidate {
    double score;
    Box box;
  };
  std::vector<Candidate> cand;
  cand.reserve(anchors_.size());
  for (std::size_t a = 0; a < anchors_.size(); ++a) {
    const std::size_t cell = a / a_per, k = a % a_per;
    BoxDelta d;
    for (std::size_t c = 0; c < 4; ++c) d[c] = deltas[(4 * k + c) * hw + cell];
    const Box b = clip_box(decode_box(anchors_[a], d), s, s);
    if (b.width() < config_.min_proposal_size || b.height() < config_.min_proposal_size) continue;
    cand.push_back({objectness[k * hw + cell], b});
  }
  std::stable_sort(cand.begin(), cand.end(),
                   [](const Candidate& x, const Candidate& y) { return x.score > y.score; });
  if (cand.size() > config_.rpn_pre_nms) cand.resize(config_.rpn_pre_nms);
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& c : cand) {
    boxes.push_back(c.box);
    scores.push_back(c.score);
  }
  std::vector<Box> out;
  for (std::size_t i : nms(boxes, scores, config_.rpn_nms_iou)) {
    if (out.size() == config_.rpn_post_nms) break;
    out.push_back(boxes[i]);
  }
  return out;
}

LossVars Detector::forward_train(Tape& tape, const GrayImage& image, const FixationMap* fixations,
                                 std::span<const TargetBox> targets,
                                 const TrainStepOptions& opts) {
  const ModelConfig& c = config_;
  const Var feat = features(tape, image, fixations, true);
  const Var h = tape.relu(layer(tape, feat, rpn_conv_, true, 1));
  TrainOutputs out;
  out.rpn_objectness = layer(tape, h, rpn_obj_, true, 0);
  out.rpn_deltas = layer(tape, h, rpn_delta_, true, 0);

  LossTargets t;
  Rng rng(opts.sample_seed);
  const std::size_t a_per = c.num_anchors_per_cell();
  const std::size_t hw = c.feature_size() * c.feature_size();
  const BoxAssignment anchor_assign =
      assign_targets(anchors_, targets, c.rpn_fg_iou, c.rpn_bg_iou, true);
  for (std::size_t a : sample_assignment(anchor_assign.label, c.rpn_batch, c.rpn_pos_fraction,
                                         rng)) {
    const std::size_t cell = a / a_per, k = a % a_per;
    const bool pos = anchor_assign.label[a] > 0;
    t.rpn_index.push_back(k * hw + cell);
    t.rpn_label.push_back(pos ? 1.0 : 0.0);
    if (pos) {
      ++t.rpn_num_pos;
      for (std::size_t q = 0; q < 4; ++q) {
        t.rpn_delta_index.push_back((4 * k + q) * hw + cell);
        t.rpn_delta_target.push_back(anchor_assign.regression[a][q]);
      }
    }
  }

  std::vector<Box> proposals =
      opts.proposals ? *opts.proposals
                     : propose(tape.value(out.rpn_objectness), tape.value(out.rpn_deltas));
  if (c.append_gt_proposals) {
    for (const auto& tb : targets) proposals.push_back(tb.box);
  }
  const BoxAssignment roi_assign =
      assign_targets(proposals, targets, c.head_fg_iou, c.head_bg_iou, false);
  const std::vector<std::size_t> picked =
      sample_assignment(roi_assign.label, c.head_batch, c.head_pos_fraction, rng);
  std::vector<Box> rois, pos_rois;
  const std::size_t k1 = c.n_classes + 1, rr = c.roi_size * c.roi_size;
  for (std::size_t r = 0; r < picked.size(); ++r) {
    const std::size_t i = picked[r];
    const int label = roi_assign.label[i];
    rois.push_back(proposals[i]);
    t.roi_label.push_back(static_cast<std::size_t>(std::max(label, 0)));
    if (label <= 0) continue;
    ++t.roi_num_pos;
    for (std::size_t q = 0; q < 4; ++q) {
      t.roi_delta_index.push_back(r * 4 * k1 + 4 * static_cast<std::size_t>(label) + q);
      t.roi_delta_target.push_back(roi_assign.regression[i][q]);
    }
    const std::size_t p = pos_rois.size();
    pos_rois.push_back(proposals[i]);
    const auto mt = mask_target(targets[roi_assign.matched[i]], proposals[i], c.roi_size,
                                c.sampling_ratio);
    const std::size_t channel = static_cast<std::size_t>(label) - 1;
    for (std::size_t px = 0; px < rr; ++px) {
      t.mask_index.push_back((p * c.n_classes + channel) * rr + px);
      t.mask_target.push_back(mt[px]);
    }
    t.mask_pixels += rr;
  }

  const std::size_t fdim = c.backbone_channels.back() * rr;
  if (!rois.empty()) {
    const Var pooled = tape.roi_align(feat, rois, c.roi_size, 1.0 / 8.0, c.sampling_ratio);
    const Var flat = tape.reshape(pooled, {rois.size(), fdim});
    const Var hid = tape.relu(dense(tape, flat, fc_, true));
    out.class_logits = dense(tape, hid, cls_, true);
    out.box_deltas = dense(tape, hid, box_, true);
  }
  if (!pos_rois.empty()) {
    const Var pooled = tape.roi_align(feat, pos_rois, c.roi_size, 1.0 / 8.0, c.sampling_ratio);
    const Var m = tape.relu(layer(tape, pooled, mask_conv_, true, 1));
    out.mask_logits = layer(tape, m, mask_out_, true, 0);
  }
  return compute_loss(tape, out, t);
}

DetectorOutput Detector::forward_infer(const GrayImage& image, const FixationMap* fixations) {
  const ModelConfig& c = config_;
  Tape tape;
  DetectorOutput out;
  const Var feat = features(tape, image, fixations, false);
  const Var h = tape.relu(layer(tape, feat, rpn_conv_, false, 1));
  const Var obj = layer(tape, h, rpn_obj_, false, 0);
  const Var del = layer(tape, h, rpn_delta_, false, 0);
  out.features = tape.value(feat);
  out.rpn_objectness = tape.value(obj);
  out.rpn_deltas = tape.value(del);
  out.proposals = propose(out.rpn_objectness, out.rpn_deltas);
  if (out.proposals.empty()) return out;

  const std::size_t rr = c.roi_size * c.roi_size;
  const std::size_t fdim = c.backbone_channels.back() * rr;
  const std::size_t n = out.proposals.size(), k1 = c.n_classes + 1;
  const Var pooled = tape.roi_align(feat, out.proposals, c.roi_size, 1.0 / 8.0, c.sampling_ratio);
  const Var hid = tape.relu(dense(tape, tape.reshape(pooled, {n, fdim}), fc_, false));
  out.class_logits = tape.value(dense(tape, hid, cls_, false));
  out.box_deltas = tape.value(dense(tape, hid, box_, false));

  const auto s = static_cast<double>(c.img_size);
  std::vector<double> probs(n * k1);
  for (std::size_t r = 0; r < n; ++r) {
    const double* z = &out.class_logits.data()[r * k1];
    const double m = *std::max_element(z, z + k1);
    double sum = 0.0;
    for (std::size_t j = 0; j < k1; ++j) sum += std::exp(z[j] - m);
    for (std::size_t j = 0; j < k1; ++j) probs[r * k1 + j] = std::exp(z[j] - m) / sum;
  }
  std::vector<Detection> dets;
  for (std::size_t cls = 1; cls < k1; ++cls) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (std::size_t r = 0; r < n; ++r) {
      const double score = probs[r * k1 + cls];
      if (score < c.score_thresh) continue;
      BoxDelta d;
      for (std::size_t q = 0; q < 4; ++q) d[q] = out.box_deltas[r * 4 * k1 + 4 * cls + q];
      const Box b = clip_box(decode_box(out.proposals[r], d), s, s);
      if (!b.valid()) continue;
      boxes.push_back(b);
      scores.push_back(score);
    }
    for (std::size_t i : nms(boxes, scores, c.det_nms_iou)) {
      Detection det;
      det.box = boxes[i];
      det.label = class_from_index(cls - 1);
      det.score = std::clamp(scores[i], 0.0, 1.0);
      dets.push_back(std::move(det));
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (dets.size() > c.max_detections) dets.resize(c.max_detections);

  if (!dets.empty()) {
    std::vector<Box> boxes;
    for (const auto& d : dets) boxes.push_back(d.box);
    const Var mp = tape.roi_align(feat, boxes, c.roi_size, 1.0 / 8.0, c.sampling_ratio);
    const Var m = tape.relu(layer(tape, mp, mask_conv_, false, 1));
    const Tensor& logits = tape.value(layer(tape, m, mask_out_, false, 0));
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const std::size_t channel = class_index(dets[i].label);
      dets[i].mask_size = c.roi_size;
      dets[i].mask.resize(rr);
      for (std::size_t px = 0; px < rr; ++px) {
        dets[i].mask[px] = sigmoid(logits[(i * c.n_classes + channel) * rr + px]);
      }
    }
  }
  out.detections = std::move(dets);
  return out;
}

void Detector::save(const std::filesystem::path& path) const {
  json layers = json::array();
  for (auto& [name, p] : const_cast<Detector*>(this)->named_layers()) {
    layers.push_back({{"name", name}, {"weight", tensor_json(p->weight)},
                      {"bias", tensor_json(p->bias)}});
  }
  json j{{"format", "gfd-checkpoint-1"},
         {"seed", config_.seed},
         {"config", config_json(config_)},
         {"layers", layers}};
  write_file_atomic(path, j.dump() + "\n");
}

Detector Detector::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  try {
    if (j.value("format", "") != "gfd-checkpoint-1") {
      throw ValidationError(path.string() + ": not a gfd checkpoint");
    }
    Detector d(config_from(j.at("config"), ModelConfig{}));
    const json& layers = j.at("layers");
    auto named = d.named_layers();
    if (layers.size() != named.size()) {
      throw ValidationError(path.string() + ": expected " + std::to_string(named.size()) +
                            " layers, found " + std::to_string(layers.size()));
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto& [name, p] = named[i];
      if (layers[i].at("name").get<std::string>() != name) {
        throw ValidationError(path.string() + ": layer " + std::to_string(i) + " should be " +
                              name);
      }
      p->weight = tensor_from(layers[i].at("weight"), p->weight.shape(), name + ".weight");
      p->bias = tensor_from(layers[i].at("bias"), p->bias.shape(), name + ".bias");
    }
    return d;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<LayerGradError> detector_grad_check(Detector& model, const GrayImage& image,
                                                const FixationMap* fixations,
                                                std::span<const TargetBox> targets,
                                                const std::vector<Box>& proposals, double eps,
                                                std::uint64_t sample_seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ValidationError("grad check eps must lie in [1e-7, 1e-3]");
  TrainStepOptions opts;
  opts.sample_seed = sample_seed;
  opts.proposals = &proposals;
  auto named = model.named_layers();
  for (auto& [name, p] : named) {
    p->weight.zero_grad();
    p->bias.zero_grad();
  }
  {
    Tape tape;
    const LossVars lv = model.forward_train(tape, image, fixations, targets, opts);
    tape.backward(lv.total);
  }
  auto loss_at = [&] {
    Tape tape;
    return tape.scalar(model.forward_train(tape, image, fixations, targets, opts).total);
  };
  std::vector<LayerGradError> out;
  for (auto& [name, p] : named) {
    LayerGradError e{name, 0.0};
    const bool bias_free = name.starts_with("fixation_backbone");
    for (Tensor* t : {&p->weight, &p->bias}) {
      if (bias_free && t == &p->bias) continue;
      const std::vector<double> analytic(t->grad().begin(), t->grad().end());
      for (std::size_t i = 0; i < t->numel(); ++i) {
        const double saved = (*t)[i];
        (*t)[i] = saved + eps;
        const double lp = loss_at();
        (*t)[i] = saved - eps;
        const double lm = loss_at();
        (*t)[i] = saved;
        const double numeric = (lp - lm) / (2.0 * eps);
        e.max_rel_error = std::max(e.max_rel_error, std::abs(analytic[i] - numeric) /
                                                        std::max(1.0, std::abs(analytic[i])));
      }
    }
    out.push_back(e);
  }
  for (auto& [name, p] : named) {
    p->weight.zero_grad();
    p->bias.zero_grad();
  }
  return out;
}

}  // namespace gfd
