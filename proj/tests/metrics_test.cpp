#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gfd/error.hpp"
#include "gfd/metrics.hpp"
#include "gfd/random.hpp"

using namespace gfd;

namespace {

// Unit pixels [x, x+1) x [y, y+1) covered by an integer-coordinate box.
bool covers(const Box& b, int x, int y) { return x >= b.x0 && x + 1 <= b.x1 && y >= b.y0 && y + 1 <= b.y1; }

struct Raster {
  double inter = 0, a = 0, b = 0;
};

Raster rasterize(const Box& a, const Box& b) {
  Raster r;
  for (int y = 0; y < 24; ++y) {
    for (int x = 0; x < 24; ++x) {
      const bool ia = covers(a, x, y), ib = covers(b, x, y);
      r.a += ia;
      r.b += ib;
      r.inter += ia && ib;
    }
  }
  return r;
}

Box random_int_box(Rng& rng) {
  const std::size_t x0 = rng.index(20), y0 = rng.index(20);
  const std::size_t x1 = x0 + 1 + rng.index(23 - x0), y1 = y0 + 1 + rng.index(23 - y0);
  return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1),
          static_cast<double>(y1)};
}

std::vector<ScoredBox> dets_of(std::initializer_list<std::pair<Box, double>> list) {
  std::vector<ScoredBox> out;
  for (const auto& [b, s] : list) out.push_back({0, b, s});
  return out;
}

std::vector<GroundTruthBox> gts_of(std::initializer_list<Box> list) {
  std::vector<GroundTruthBox> out;
  for (const auto& b : list) out.push_back({0, b});
  return out;
}

}  // namespace

TEST(Overlap, Examples) {
  const Box a{0, 0, 10, 10};
  EXPECT_EQ(iobb(a, a), 1.0);
  EXPECT_EQ(iobb(a, {0, 0, 20, 20}), 1.0);
  EXPECT_DOUBLE_EQ(iobb(a, {5, 0, 15, 10}), 0.5);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, {20, 20, 30, 30}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, {5, 0, 15, 10}), 1.0 / 3.0);
  EXPECT_THROW(iobb({1, 1, 1, 5}, a), ValidationError);
  EXPECT_THROW(iou({1, 1, 1, 5}, {2, 2, 2, 2}), ValidationError);
  EXPECT_EQ(overlap(OverlapKind::kIoBB, a, {0, 0, 20, 20}), 1.0);
  EXPECT_EQ(parse_overlap("IoU"), OverlapKind::kIoU);
  EXPECT_THROW(parse_overlap("giou"), ValidationError);
}

TEST(Overlap, MatchesRasterization) {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const Box a = random_int_box(rng), b = random_int_box(rng);
    ASSERT_TRUE(a.valid() && b.valid() && a.x1 <= 24 && a.y1 <= 24);
    const Raster r = rasterize(a, b);
    EXPECT_NEAR(iobb(a, b), r.inter / r.a, 1e-9);
    EXPECT_NEAR(iou(a, b), r.inter / (r.a + r.b - r.inter), 1e-9);
  }
}

TEST(Overlap, Properties) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Box a = random_int_box(rng), b = random_int_box(rng);
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_LE(iou(a, b), std::max(iobb(a, b), iobb(b, a)) + 1e-15);
    const bool inside = a.x0 >= b.x0 && a.y0 >= b.y0 && a.x1 <= b.x1 && a.y1 <= b.y1;
    EXPECT_EQ(iobb(a, b) == 1.0, inside);
  }
}

TEST(Match, Examples) {
  const auto gts = gts_of({{0, 0, 10, 10}});
  auto m = match_detections(dets_of({{{0, 0, 10, 10}, 0.7}}), gts, 0.5, OverlapKind::kIoBB);
  EXPECT_EQ(m.true_positives, 1u);
  EXPECT_TRUE(m.is_tp(0));
  m = match_detections(dets_of({{{0, 0, 10, 10}, 0.7}, {{0, 0, 10, 10}, 0.7}}), gts, 0.5,
                       OverlapKind::kIoBB);
  EXPECT_EQ(m.true_positives, 1u);
  EXPECT_NE(m.is_tp(0), m.is_tp(1));
  // Inclusive threshold.
  m = match_detections(dets_of({{{0, 0, 10, 10}, 0.7}}), gts_of({{5, 0, 15, 10}}), 0.5,
                       OverlapKind::kIoBB);
  EXPECT_EQ(m.true_positives, 1u);
}

TEST(Match, NeverCrossesImages) {
  std::vector<ScoredBox> dets{{1, {0, 0, 10, 10}, 0.9}};
  std::vector<GroundTruthBox> gts{{0, {0, 0, 10, 10}}};
  EXPECT_EQ(match_detections(dets, gts, 0.5, OverlapKind::kIoU).true_positives, 0u);
}

TEST(Match, GreedyContractAgainstReimplementation) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    std::vector<ScoredBox> dets;
    std::vector<GroundTruthBox> gts;
    const std::size_t nd = rng.index(11), ng = rng.index(11);
    for (std::size_t i = 0; i < nd; ++i) {
      dets.push_back({rng.index(2), random_int_box(rng), std::round(rng.uniform() * 5) / 5});
    }
    for (std::size_t i = 0; i < ng; ++i) gts.push_back({rng.index(2), random_int_box(rng)});
    const auto kind = seed % 2 ? OverlapKind::kIoU : OverlapKind::kIoBB;
    const double thresh = rng.uniform(0.1, 0.9);
    const MatchResult m = match_detections(dets, gts, thresh, kind);

    // Reference: walk detections by (score desc, box asc, image asc) with a
    // selection loop; each takes the unmatched same-image gt of highest overlap.
    std::vector<bool> used(nd, false), gt_used(ng, false);
    std::vector<int> expect(nd, -1);
    for (std::size_t step = 0; step < nd; ++step) {
      std::size_t pick = nd;
      for (std::size_t i = 0; i < nd; ++i) {
        if (used[i]) continue;
        if (pick == nd) {
          pick = i;
          continue;
        }
        const auto& x = dets[i];
        const auto& y = dets[pick];
        const bool better = x.score != y.score ? x.score > y.score
                            : x.box != y.box   ? x.box < y.box
                                               : x.image < y.image;
        if (better) pick = i;
      }
      used[pick] = true;
      double best = thresh;
      int g_best = -1;
      for (std::size_t g = 0; g < ng; ++g) {
        if (gt_used[g] || gts[g].image != dets[pick].image) continue;
        const double ov = overlap(kind, dets[pick].box, gts[g].box);
        if (ov >= best && (g_best < 0 || ov > best)) {
          best = ov;
          g_best = static_cast<int>(g);
        }
      }
      if (g_best >= 0) {
        gt_used[g_best] = true;
        expect[pick] = g_best;
      }
    }
    EXPECT_EQ(m.det_gt, expect) << "seed " << seed;
    EXPECT_LE(m.true_positives, std::min(nd, ng));
  }
}

TEST(AveragePrecision, HandCases) {
  const auto gt1 = gts_of({{0, 0, 10, 10}});
  const Box hit{0, 0, 10, 10}, miss{30, 30, 40, 40};
  EXPECT_EQ(*average_precision(dets_of({{hit, 0.3}}), gt1, 0.5, OverlapKind::kIoBB), 1.0);
  EXPECT_EQ(*average_precision(dets_of({{hit, 0.9}, {miss, 0.8}}), gt1, 0.5, OverlapKind::kIoBB),
            1.0);
  EXPECT_EQ(*average_precision(dets_of({{miss, 0.9}, {hit, 0.8}}), gt1, 0.5, OverlapKind::kIoBB),
            0.5);
  // Two gts, ranking FP, TP, FP: recall reaches 0.5 at precision 0.5.
  const auto gt2 = gts_of({{0, 0, 10, 10}, {50, 50, 60, 60}});
  EXPECT_EQ(*average_precision(dets_of({{miss, 0.9}, {hit, 0.8}, {{20, 0, 25, 5}, 0.7}}), gt2, 0.5,
                               OverlapKind::kIoBB),
            0.5 * 0.5);
  EXPECT_FALSE(average_precision(dets_of({{hit, 0.9}}), {}, 0.5, OverlapKind::kIoBB).has_value());
  EXPECT_EQ(*average_precision({}, gt1, 0.5, OverlapKind::kIoBB), 0.0);
}

TEST(AverageRecall, Counting) {
  const auto gts = gts_of({{0, 0, 10, 10}, {20, 20, 30, 30}, {40, 40, 50, 50}});
  EXPECT_EQ(*average_recall({}, gts, 0.5, OverlapKind::kIoU), 0.0);
  const auto two = dets_of({{{0, 0, 10, 10}, 0.9}, {{20, 20, 30, 30}, 0.8}});
  EXPECT_DOUBLE_EQ(*average_recall(two, gts, 0.5, OverlapKind::kIoU), 2.0 / 3.0);
  const auto all = dets_of({{{0, 0, 10, 10}, 0.9}, {{20, 20, 30, 30}, 0.8}, {{40, 40, 50, 50}, 0.1}});
  EXPECT_EQ(*average_recall(all, gts, 0.5, OverlapKind::kIoU), 1.0);
  // Only the top max_dets per image count.
  EXPECT_DOUBLE_EQ(*average_recall(all, gts, 0.5, OverlapKind::kIoU, 2), 2.0 / 3.0);
}

TEST(Metrics, MonotoneInThreshold) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<ScoredBox> dets;
    std::vector<GroundTruthBox> gts;
    for (std::size_t i = 0, n = 1 + rng.index(15); i < n; ++i) {
      dets.push_back({rng.index(3), random_int_box(rng), rng.uniform()});
    }
    for (std::size_t i = 0, n = 1 + rng.index(8); i < n; ++i) {
      gts.push_back({rng.index(3), random_int_box(rng)});
    }
    for (auto kind : {OverlapKind::kIoBB, OverlapKind::kIoU}) {
      double prev_ap = 2.0, prev_ar = 2.0;
      for (int k = 1; k <= 9; ++k) {
        const double t = 0.1 * k;
        const double ap = *average_precision(dets, gts, t, kind);
        const double ar = *average_recall(dets, gts, t, kind);
        EXPECT_LE(ap, prev_ap + 1e-12) << "seed " << seed << " t " << t;
        EXPECT_LE(ar, prev_ar + 1e-12) << "seed " << seed << " t " << t;
        EXPECT_GE(ap, 0.0);
        EXPECT_LE(ap, 1.0);
        prev_ap = ap;
        prev_ar = ar;
      }
    }
  }
}

TEST(Metrics, ShuffleInvariant) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<ScoredBox> dets;
    std::vector<GroundTruthBox> gts;
    for (std::size_t i = 0, n = 1 + rng.index(15); i < n; ++i) {
      dets.push_back({rng.index(2), random_int_box(rng), std::round(rng.uniform() * 4) / 4});
    }
    for (std::size_t i = 0, n = 1 + rng.index(8); i < n; ++i) {
      gts.push_back({rng.index(2), random_int_box(rng)});
    }
    const ClassMetrics a = class_metrics(ClassLabel::kAtelectasis, dets, gts, 0.5, OverlapKind::kIoBB);
    rng.shuffle(dets);
    const ClassMetrics b = class_metrics(ClassLabel::kAtelectasis, dets, gts, 0.5, OverlapKind::kIoBB);
    EXPECT_EQ(*a.ap, *b.ap);
    EXPECT_EQ(*a.ar, *b.ar);
    EXPECT_EQ(a.precision, b.precision);
  }
}

TEST(Report, BaselineColumnAverages) {
  const std::vector<double> ap{0.429326, 0.125410, 0.043422, 0.113867, 0.030728};
  const std::vector<double> ar{0.810000, 0.529412, 0.226519, 0.308642, 0.410959};
  std::vector<ClassMetrics> rows;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    ClassMetrics c;
    c.label = class_from_index(i);
    c.ap = ap[i];
    c.ar = ar[i];
    rows.push_back(c);
  }
  const auto r = build_report(rows, {std::string(kImageOnlyTag), OverlapKind::kIoBB, 0.5, 100},
                              ReferenceAverages{0.148551, 0.457106});
  EXPECT_EQ(format_metric(*r.average_ap), "0.148551");
  EXPECT_EQ(format_metric(*r.average_ar), "0.457106");
  EXPECT_TRUE(r.warnings.empty());
  const std::string md = report_markdown(r);
  EXPECT_NE(md.find("AP@[IoBB=0.50]"), std::string::npos);
  EXPECT_NE(md.find("AR@[IoBB=0.50]"), std::string::npos);
  EXPECT_NE(md.find("| Enlarged Cardiac Silhouette | 0.429326"), std::string::npos);
  EXPECT_NE(md.find("0.148551"), std::string::npos);
}

TEST(Report, MismatchedReferenceAverageWarns) {
  const std::vector<double> ap{0.436229, 0.092772, 0.052553, 0.010061, 0.001856};
  const std::vector<double> ar{0.760000, 0.192513, 0.165746, 0.086420, 0.027397};
  std::vector<ClassMetrics> rows;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    ClassMetrics c;
    c.label = class_from_index(i);
    c.ap = ap[i];
    c.ar = ar[i];
    rows.push_back(c);
  }
  const auto r = build_report(rows, {std::string(kMultimodalTag), OverlapKind::kIoBB, 0.5, 100},
                              ReferenceAverages{0.246415, 0.144261});
  EXPECT_NEAR(*r.average_ap, 0.1186942, 1e-9);
  EXPECT_NEAR(*r.average_ar, 0.2464152, 1e-9);
  ASSERT_EQ(r.warnings.size(), 2u);
  EXPECT_NE(r.warnings[0].find("0.246415"), std::string::npos);
}

TEST(Report, ZeroRowsAndExclusions) {
  std::vector<ClassMetrics> rows;
  for (ClassLabel c : kAllClasses) {
    ClassMetrics m;
    m.label = c;
    m.ap = 0.0;
    m.ar = 0.0;
    m.n_gt = 1;
    rows.push_back(m);
  }
  auto r = build_report(rows, {});
  EXPECT_EQ(*r.average_ap, 0.0);
  EXPECT_EQ(*r.average_ar, 0.0);
  rows[1].ap.reset();
  rows[1].ar.reset();
  rows[1].n_gt = 0;
  rows[0].ap = 0.5;
  r = build_report(rows, {});
  EXPECT_DOUBLE_EQ(*r.average_ap, 0.5 / 4.0);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(report_json(r).find("\"excluded_from_average\": true"), std::string::npos);
  r = build_report({}, {});
  EXPECT_FALSE(r.average_ap.has_value());
  EXPECT_NE(report_markdown(r).find("n/a"), std::string::npos);
}

TEST(Report, ComparisonHeaders) {
  auto a = build_report({}, {std::string(kImageOnlyTag), OverlapKind::kIoBB, 0.5, 100});
  auto b = build_report({}, {std::string(kMultimodalTag), OverlapKind::kIoBB, 0.5, 100});
  const std::string md = comparison_markdown(a, b);
  EXPECT_NE(md.find("| Abnormality                 | AP@[IoBB=0.50] | AR@[IoBB=0.50] | "
                    "AP@[IoBB=0.50] | AR@[IoBB=0.50] |"),
            std::string::npos)
      << md;
  EXPECT_NE(md.find(std::string(kMultimodalTag)), std::string::npos);
  EXPECT_EQ(metric_header("AP", OverlapKind::kIoU, 0.75), "AP@[IoU=0.75]");
  b.meta.kind = OverlapKind::kIoU;
  EXPECT_THROW(comparison_markdown(a, b), ValidationError);
}
