#include <gtest/gtest.h>

#include <filesystem>

#include "gfd/error.hpp"
#include "gfd/io.hpp"
#include "gfd/trainer.hpp"

using namespace gfd;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  std::vector<Reading> train, val, test;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    SynthConfig cfg;
    cfg.n_readings = 12;
    auto s = split(synth_generate(cfg, 5), {0.5, 0.25, 0.25}, 5);
    return Fixture{s.train, s.val, s.test};
  }();
  return f;
}

ModelConfig small_model() {
  ModelConfig mc;
  mc.seed = 3;
  mc.hidden = 16;
  return mc;
}

TrainConfig quick_config() {
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 3;
  return tc;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("gfd_trainer_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig tc;
  tc.epochs = 0;
  EXPECT_THROW(tc.validate(), ValidationError);
  tc.epochs = 1;
  tc.lr = 0.0;
  EXPECT_THROW(tc.validate(), ValidationError);
  tc.lr = 0.01;
  EXPECT_NO_THROW(tc.validate());
  EXPECT_THROW(train(small_model(), {}, {}, tc), ValidationError);
}

TEST(Train, DeterministicArtifacts) {
  const auto& f = fixture();
  const fs::path a = temp_dir("det_a"), b = temp_dir("det_b");
  const TrainResult ra = train(small_model(), f.train, f.val, quick_config(), a);
  train(small_model(), f.train, f.val, quick_config(), b);
  for (const char* name : {"loss_curve.csv", "checkpoint_last.json", "checkpoint_best.json"}) {
    EXPECT_EQ(read_file(a / name), read_file(b / name)) << name;
  }
  EXPECT_EQ(ra.curve.steps.size(), 2 * f.train.size());
  EXPECT_EQ(ra.curve.epoch_mean_total.size(), 2u);
  EXPECT_GE(ra.best_epoch, 1u);
}

TEST(Train, CurveTotalsAreComponentSums) {
  const auto& f = fixture();
  const fs::path dir = temp_dir("curve");
  const TrainResult r = train(small_model(), f.train, f.val, quick_config(), dir);
  for (const auto& s : r.curve.steps) {
    EXPECT_EQ(s.loss.total, s.loss.classification + s.loss.bbox + s.loss.mask);
  }
  const std::string csv = read_file(dir / "loss_curve.csv");
  const auto lines = split_lines(csv);
  EXPECT_EQ(lines[0], "step,epoch,cls,bbox,mask,total");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f5 = split_csv_line(lines[i]);
    ASSERT_EQ(f5.size(), 6u);
    const double c = parse_double(f5[2], ""), b = parse_double(f5[3], ""),
                 m = parse_double(f5[4], ""), t = parse_double(f5[5], "");
    EXPECT_EQ(t, c + b + m) << lines[i];
  }
}

TEST(Train, PatienceStopsEarly) {
  const auto& f = fixture();
  TrainConfig tc = quick_config();
  tc.epochs = 6;
  tc.lr = 1e-300;  // updates vanish, validation loss never improves
  tc.patience = 1;
  const TrainResult r = train(small_model(), f.train, f.val, tc);
  EXPECT_LT(r.curve.epoch_mean_total.size(), 6u);
}

TEST(Evaluate, ValidationAndDeterminism) {
  const auto& f = fixture();
  Detector d(small_model());
  EXPECT_THROW(evaluate(d, {}, {}, FixationSource::kGaze, "x"), ValidationError);
  const auto a = evaluate(d, f.test, {}, FixationSource::kGaze, "x");
  const auto b = evaluate(d, f.test, {}, FixationSource::kGaze, "x");
  EXPECT_EQ(report_json(a.report), report_json(b.report));
  EXPECT_EQ(a.report.rows.size(), kNumClasses);
}

TEST(Evaluate, NoAnnotationsMeansUndefinedAverages) {
  std::vector<Reading> rs = fixture().test;
  for (auto& r : rs) r.annotations.clear();
  Detector d(small_model());
  const auto e = evaluate(d, rs, {}, FixationSource::kGaze, "x");
  for (const auto& row : e.report.rows) {
    EXPECT_EQ(row.n_gt, 0u);
    EXPECT_FALSE(row.ap.has_value());
  }
  EXPECT_FALSE(e.report.average_ap.has_value());
  EXPECT_EQ(e.report.warnings.size(), kNumClasses);
}

TEST(Evaluate, CheckpointRoundTripIsExact) {
  const auto& f = fixture();
  const fs::path dir = temp_dir("roundtrip");
  TrainResult r = train(small_model(), f.train, f.val, quick_config(), dir);
  Detector loaded = Detector::load(dir / "checkpoint_last.json");
  const auto before = evaluate(r.final_model, f.test, {}, FixationSource::kGaze, "x");
  const auto after = evaluate(loaded, f.test, {}, FixationSource::kGaze, "x");
  EXPECT_EQ(report_json(before.report), report_json(after.report));
  EXPECT_EQ(predictions_json(before.predictions), predictions_json(after.predictions));
}

TEST(Evaluate, MetricKindsBothWork) {
  const auto& f = fixture();
  Detector d(small_model());
  const auto iobb = evaluate(d, f.test, {OverlapKind::kIoBB, 0.5, 100}, FixationSource::kGaze, "x");
  const auto iou = evaluate(d, f.test, {OverlapKind::kIoU, 0.5, 100}, FixationSource::kGaze, "x");
  EXPECT_NE(report_json(iobb.report), report_json(iou.report));
  EXPECT_NE(report_markdown(iou.report).find("AP@[IoU=0.50]"), std::string::npos);
}

TEST(Predictions, JsonRoundTrip) {
  const auto& f = fixture();
  ModelConfig mc = small_model();
  mc.score_thresh = 0.0;
  Detector d(mc);
  const auto preds = predict(d, f.test, FixationSource::kGaze);
  ASSERT_FALSE(preds.empty());
  const fs::path path = temp_dir("preds") / "p.json";
  write_file_atomic(path, predictions_json(preds));
  const auto back = read_predictions_json(path);
  ASSERT_EQ(back.size(), preds.size());
  EXPECT_EQ(back[0].reading_id, preds[0].reading_id);
  EXPECT_EQ(back[0].detection.box, preds[0].detection.box);
  EXPECT_EQ(back[0].detection.score, preds[0].detection.score);
  const auto rescored = score_predictions(back, f.test, {}, "x");
  const auto direct = score_predictions(preds, f.test, {}, "x");
  EXPECT_EQ(report_json(rescored), report_json(direct));
  write_file_atomic(path, R"([{"reading_id": "r1", "box": [0, 0, 0, 5], "label": "atelectasis", "score": 0.5}])");
  EXPECT_THROW(read_predictions_json(path), ValidationError);
}

TEST(Comparison, IdenticalArmsGiveIdenticalColumns) {
  const auto& f = fixture();
  const ComparisonArm arm{"A", small_model(), FixationSource::kGaze};
  ComparisonArm same = arm;
  same.tag = "B";
  const auto r = run_comparison(f.train, f.val, f.test, arm, same, quick_config(), {});
  ASSERT_EQ(r.first.report.rows.size(), r.second.report.rows.size());
  for (std::size_t i = 0; i < r.first.report.rows.size(); ++i) {
    EXPECT_EQ(r.first.report.rows[i].ap, r.second.report.rows[i].ap);
    EXPECT_EQ(r.first.report.rows[i].ar, r.second.report.rows[i].ar);
  }
}

TEST(Comparison, OnesMapMulFusionMatchesImageOnly) {
  const auto& f = fixture();
  const ComparisonArm base{std::string(kImageOnlyTag), small_model(), FixationSource::kGaze};
  ComparisonArm fused{std::string(kMultimodalTag), small_model(), FixationSource::kOnes};
  fused.model.use_fixations = true;
  fused.model.fusion_mode = CombineMode::kMul;
  fused.model.fusion_point = FusionPoint::kInput;
  const fs::path dir = temp_dir("compare");
  const auto r = run_comparison(f.train, f.val, f.test, base, fused, quick_config(), {}, dir);
  EXPECT_EQ(loss_curve_csv(r.first_curve), loss_curve_csv(r.second_curve));
  EXPECT_EQ(predictions_json(r.first.predictions), predictions_json(r.second.predictions));
  const std::string md = read_file(dir / "comparison.md");
  EXPECT_NE(md.find("| AP@[IoBB=0.50] | AR@[IoBB=0.50] | AP@[IoBB=0.50] | AR@[IoBB=0.50] |"),
            std::string::npos);
  EXPECT_NE(md.find("| Average"), std::string::npos);
  EXPECT_NE(md.find("| Pulmonary edema"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "comparison.json"));
  EXPECT_TRUE(fs::exists(dir / "arm_b" / "loss_curve.csv"));
}

TEST(Comparison, SeedsMustMatch) {
  const auto& f = fixture();
  ComparisonArm a{"A", small_model(), FixationSource::kGaze}, b = a;
  b.model.seed = 99;
  EXPECT_THROW(run_comparison(f.train, f.val, f.test, a, b, quick_config(), {}), ValidationError);
}
