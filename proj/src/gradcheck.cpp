#include "gfd/gradcheck.hpp"

#include "gfd/optim.hpp"
#include "gfd/random.hpp"

namespace gfd {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

}  // namespace

std::vector<LayerGradError> op_gradient_suite(std::uint64_t seed, double eps) {
  Rng rng(mix_seed(seed, 0x6743));
  std::vector<LayerGradError> out;
  const std::size_t c = 1 + rng.index(3), h = 4 + rng.index(3), w = 4 + rng.index(3);
  const Tensor x = random_tensor({1, c, h, w}, rng);
  const Tensor y = random_tensor({1, c, h, w}, rng);

  const std::size_t co = 1 + rng.index(3);
  const auto conv_proj = random_weights(co * h * w, rng);
  out.push_back({"conv2d", grad_check(
                               [&](Tape& t, std::span<const Var> in) {
                                 return t.weighted_sum(t.conv2d(in[0], in[1], in[2], 1, 1),
                                                       conv_proj);
                               },
                               {x, random_tensor({co, c, 3, 3}, rng), random_tensor({co}, rng)},
                               eps)});

  const auto flat_proj = random_weights(c * h * w, rng);
  out.push_back({"relu", grad_check(
                             [&](Tape& t, std::span<const Var> in) {
                               return t.weighted_sum(t.relu(in[0]), flat_proj);
                             },
                             {x}, eps)});

  const auto pool_proj = random_weights(c * (h / 2) * (w / 2), rng);
  out.push_back({"maxpool2d", grad_check(
                                  [&](Tape& t, std::span<const Var> in) {
                                    return t.weighted_sum(t.maxpool2d(in[0], 2, 2), pool_proj);
                                  },
                                  {x}, eps)});

  out.push_back({"sigmoid", grad_check(
                                [&](Tape& t, std::span<const Var> in) {
                                  return t.weighted_sum(t.sigmoid(in[0]), flat_proj);
                                },
                                {x}, eps)});

  for (CombineMode mode : {CombineMode::kSum, CombineMode::kMul}) {
    out.push_back({mode == CombineMode::kSum ? "combine_sum" : "combine_mul",
                   grad_check(
                       [&](Tape& t, std::span<const Var> in) {
                         return t.weighted_sum(t.combine(in[0], in[1], mode), flat_proj);
                       },
                       {x, y}, eps)});
  }

  const std::size_t d = 2 + rng.index(4), m = 1 + rng.index(4), n = 1 + rng.index(3);
  const auto lin_proj = random_weights(n * m, rng);
  out.push_back({"linear", grad_check(
                               [&](Tape& t, std::span<const Var> in) {
                                 return t.weighted_sum(t.linear(in[0], in[1], in[2]), lin_proj);
                               },
                               {random_tensor({n, d}, rng), random_tensor({m, d}, rng),
                                random_tensor({m}, rng)},
                               eps)});

  std::vector<Box> boxes;
  for (int b = 0; b < 2; ++b) {
    const double x0 = rng.uniform(0.3, 1.7), y0 = rng.uniform(0.3, 1.7);
    boxes.push_back({x0, y0, x0 + rng.uniform(1.1, 2.2), y0 + rng.uniform(1.1, 2.2)});
  }
  const auto roi_proj = random_weights(2 * c * 3 * 3, rng);
  out.push_back({"roi_align", grad_check(
                                  [&](Tape& t, std::span<const Var> in) {
                                    return t.weighted_sum(t.roi_align(in[0], boxes, 3, 1.0, 2),
                                                          roi_proj);
                                  },
                                  {x}, eps)});

  const Tensor logits = random_tensor({3, 4}, rng, -3.0, 3.0);
  out.push_back({"softmax_cross_entropy",
                 grad_check(
                     [&](Tape& t, std::span<const Var> in) {
                       return t.softmax_cross_entropy(in[0], {0, 3, 1});
                     },
                     {logits}, eps)});
  out.push_back({"bce_with_logits",
                 grad_check(
                     [&](Tape& t, std::span<const Var> in) {
                       return t.bce_with_logits(in[0], {1, 5, 7}, {1.0, 0.0, 0.3}, 3.0);
                     },
                     {logits}, eps)});
  out.push_back({"smooth_l1",
                 grad_check(
                     [&](Tape& t, std::span<const Var> in) {
                       return t.smooth_l1(in[0], {2, 4, 9, 11}, {0.1, 5.0, -4.0, 0.2}, 2.0);
                     },
                     {logits}, eps)});
  out.push_back({"reshape", grad_check(
                                [&](Tape& t, std::span<const Var> in) {
                                  return t.weighted_sum(t.reshape(in[0], {c * h * w}), flat_proj);
                                },
                                {x}, eps)});
  return out;
}

GradCheckCase make_grad_check_case(std::uint64_t seed) {
  ModelConfig mc;
  mc.img_size = 32;
  mc.use_fixations = true;
  mc.fusion_mode = CombineMode::kSum;
  mc.fusion_point = FusionPoint::kFeature;
  mc.backbone_channels = {2, 2, 4, 4};
  mc.anchor_scales = {12.0};
  mc.anchor_ratios = {1.0};
  mc.rpn_batch = 8;
  mc.head_batch = 4;
  mc.append_gt_proposals = false;
  mc.roi_size = 2;
  mc.hidden = 4;
  mc.mask_channels = 2;
  mc.seed = seed;

  Rng rng(mix_seed(seed, 0x6763));
  GradCheckCase gc{Detector(mc), {}, {}, {}, {}};
  for (auto& [name, p] : gc.model.named_layers()) {
    for (double& v : p->weight.data()) v = rng.uniform(-0.8, 0.8);
    if (!name.starts_with("fixation_backbone")) {
      for (double& v : p->bias.data()) v = rng.uniform(-0.3, 0.3);
    }
  }
  gc.image.width = gc.image.height = 32;
  gc.image.pixels.resize(32 * 32);
  for (double& v : gc.image.pixels) v = rng.uniform(0.0, 1.0);
  gc.fixations = FixationMap{32, 32, std::vector<double>(32 * 32)};
  for (double& v : gc.fixations.values) v = rng.uniform(0.0, 1.0);

  const EllipseAnnotation e{rng.uniform(10.0, 22.0), rng.uniform(10.0, 22.0),
                            rng.uniform(4.0, 7.0), rng.uniform(4.0, 7.0),
                            class_from_index(rng.index(kNumClasses))};
  gc.targets.push_back(ellipse_to_target(e, 32, 32));
  const Box& g = gc.targets[0].box;
  const double jx = rng.uniform(-0.5, 0.5), jy = rng.uniform(-0.5, 0.5);
  gc.proposals.push_back(clip_box({g.x0 + jx, g.y0 + jy, g.x1 + jx, g.y1 + jy}, 32.0, 32.0));
  return gc;
}

std::vector<LayerGradError> detector_gradient_suite(std::uint64_t seed, double eps) {
  GradCheckCase gc = make_grad_check_case(seed);
  return detector_grad_check(gc.model, gc.image, &gc.fixations, gc.targets, gc.proposals, eps,
                             mix_seed(seed, 0x7361));
}

}  // namespace gfd
