#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "gfd/dataset.hpp"
#include "gfd/error.hpp"
#include "gfd/io.hpp"
#include "gfd/random.hpp"

using namespace gfd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("gfd_dataset_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string tree_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, root).string() + "\n" + read_file(f);
  return all;
}

}  // namespace

TEST(EllipseToTarget, CircleExtent) {
  auto t = ellipse_to_target({50, 50, 10, 10, ClassLabel::kAtelectasis}, 512, 512);
  EXPECT_EQ(t.box, (Box{40, 40, 60, 60}));
  EXPECT_EQ(t.label, ClassLabel::kAtelectasis);
}

TEST(EllipseToTarget, SubPixelEllipseCoversOnePixel) {
  auto t = ellipse_to_target({10.5, 10.5, 0.6, 0.6, ClassLabel::kConsolidation}, 32, 32);
  EXPECT_EQ(t.mask_area(), 1u);
  // Pixel-center rule over the 3x3 neighborhood.
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int x = 10 + dx, y = 10 + dy;
      const double u = (x + 0.5 - 10.5) / 0.6, v = (y + 0.5 - 10.5) / 0.6;
      EXPECT_EQ(t.mask[y * 32 + x], (u * u + v * v <= 1.0) ? 1 : 0);
    }
  }
  EXPECT_EQ(t.mask[10 * 32 + 10], 1);
}

TEST(EllipseToTarget, ClampsToImage) {
  auto t = ellipse_to_target({0, 0, 10, 10, ClassLabel::kAtelectasis}, 512, 512);
  EXPECT_EQ(t.box, (Box{0, 0, 10, 10}));
}

TEST(EllipseToTarget, OutsideImageIsAnError) {
  EXPECT_THROW(ellipse_to_target({-50, 10, 5, 5, ClassLabel::kAtelectasis}, 64, 64),
               ValidationError);
  EXPECT_THROW(ellipse_to_target({10, 10, 0, 5, ClassLabel::kAtelectasis}, 64, 64),
               ValidationError);
}

TEST(EllipseToTarget, MaskMatchesBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    EllipseAnnotation e{rng.uniform(-5, 70), rng.uniform(-5, 70), rng.uniform(0.3, 20),
                        rng.uniform(0.3, 20), ClassLabel::kPulmonaryEdema};
    TargetBox t;
    try {
      t = ellipse_to_target(e, 64, 48);
    } catch (const ValidationError&) {
      continue;
    }
    std::size_t count = 0;
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 64; ++x) {
        const double u = (x + 0.5 - e.cx) / e.rx, v = (y + 0.5 - e.cy) / e.ry;
        const bool inside = u * u + v * v <= 1.0;
        count += inside;
        ASSERT_EQ(t.mask[y * 64 + x], inside ? 1 : 0);
      }
    }
    EXPECT_EQ(t.mask_area(), count);
    EXPECT_LT(t.box.x0, t.box.x1);
    EXPECT_LT(t.box.y0, t.box.y1);
  }
}

TEST(Synth, DeterministicPerSeed) {
  SynthConfig cfg;
  cfg.n_readings = 6;
  auto a = synth_generate(cfg, 7);
  auto b = synth_generate(cfg, 7);
  auto c = synth_generate(cfg, 8);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
    EXPECT_EQ(a[i].gaze, b[i].gaze);
    EXPECT_EQ(a[i].annotations, b[i].annotations);
  }
  EXPECT_NE(a[0].image.pixels, c[0].image.pixels);
  auto d1 = temp_dir("det1"), d2 = temp_dir("det2");
  save_dataset(d1, a, split_assignment(a.size(), {}, 7), cfg.img_size);
  save_dataset(d2, b, split_assignment(b.size(), {}, 7), cfg.img_size);
  EXPECT_EQ(tree_digest(d1), tree_digest(d2));
}

TEST(Synth, NoLesionsConfig) {
  SynthConfig cfg;
  cfg.n_readings = 5;
  cfg.lesions_min = cfg.lesions_max = 0;
  for (const auto& r : synth_generate(cfg, 1)) {
    EXPECT_TRUE(r.annotations.empty());
    EXPECT_FALSE(r.gaze.empty());
  }
}

TEST(Synth, RejectsSmallImages) {
  SynthConfig cfg;
  cfg.img_size = 16;
  EXPECT_THROW(synth_generate(cfg, 1), ValidationError);
  cfg.img_size = 64;
  cfg.n_readings = 0;
  EXPECT_THROW(synth_generate(cfg, 1), ValidationError);
}

TEST(Synth, InvariantsHold) {
  SynthConfig cfg;
  cfg.n_readings = 30;
  cfg.classes = {kAllClasses.begin(), kAllClasses.end()};
  cfg.lesions_max = 3;
  for (const auto& r : synth_generate(cfg, 11)) {
    for (double p : r.image.pixels) {
      ASSERT_GE(p, 0.0);
      ASSERT_LE(p, 1.0);
      ASSERT_EQ(std::round(p * 255.0) / 255.0, p);
    }
    for (std::size_t k = 1; k < r.gaze.size(); ++k) ASSERT_GT(r.gaze[k].t_ms, r.gaze[k - 1].t_ms);
    for (const auto& t : reading_targets(r)) {
      EXPECT_GE(t.box.x0, 0.0);
      EXPECT_LE(t.box.x1, 64.0);
      EXPECT_GT(t.mask_area(), 0u);
    }
  }
}

// Generator self-check: fixations recovered from the gaze stream sit on the lesions.
TEST(Synth, FixationsLandOnLesions) {
  SynthConfig cfg;
  cfg.n_readings = 200;
  cfg.img_size = 64;
  std::size_t total = 0, hit = 0;
  for (const auto& r : synth_generate(cfg, 2024)) {
    const auto fx = reading_fixations(r);
    for (const auto& e : r.annotations) {
      ++total;
      double best = 1e9;
      for (const auto& f : fx) best = std::min(best, std::hypot(f.cx_px - e.cx, f.cy_px - e.cy));
      hit += best <= 3.0;
    }
  }
  ASSERT_GT(total, 0u);
  EXPECT_GE(static_cast<double>(hit) / total, 0.9) << hit << "/" << total;
}

TEST(Split, SizesAndDeterminism) {
  SynthConfig cfg;
  cfg.n_readings = 10;
  auto rs = synth_generate(cfg, 3);
  auto s = split(rs, {0.8, 0.1, 0.1}, 5);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  auto again = split(rs, {0.8, 0.1, 0.1}, 5);
  for (std::size_t i = 0; i < s.train.size(); ++i) EXPECT_EQ(s.train[i].id, again.train[i].id);
  auto all = split(rs, {1.0, 0.0, 0.0}, 5);
  EXPECT_EQ(all.train.size(), 10u);
  EXPECT_TRUE(all.val.empty() && all.test.empty());
}

TEST(Split, PartitionProperty) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.index(60);
    const double a = rng.uniform(), b = rng.uniform() * (1 - a);
    auto tags = split_assignment(n, {a, b, 1.0 - a - b}, seed);
    ASSERT_EQ(tags.size(), n);
    for (int t : tags) EXPECT_TRUE(t >= 0 && t <= 2);
  }
  SynthConfig cfg;
  cfg.n_readings = 23;
  auto rs = synth_generate(cfg, 3);
  auto s = split(rs, {0.5, 0.3, 0.2}, 9);
  std::multiset<std::string> ids;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (const auto& r : *part) ids.insert(r.id);
  }
  EXPECT_EQ(ids.size(), 23u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 23u);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_assignment(0, {}, 1), ValidationError);
  EXPECT_THROW(split_assignment(5, {0.5, 0.5, 0.5}, 1), ValidationError);
}

TEST(LoadReading, RoundTrip) {
  SynthConfig cfg;
  cfg.n_readings = 4;
  cfg.lesions_max = 3;
  auto dir = temp_dir("roundtrip");
  for (const auto& r : synth_generate(cfg, 12)) {
    save_reading(dir / r.id, r);
    Reading back = load_reading(dir / r.id);
    EXPECT_EQ(back.id, r.id);
    EXPECT_EQ(back.annotations, r.annotations);
    EXPECT_EQ(back.gaze, r.gaze);
    ASSERT_EQ(back.image.pixels.size(), r.image.pixels.size());
    for (std::size_t i = 0; i < r.image.pixels.size(); ++i) {
      EXPECT_NEAR(back.image.pixels[i], r.image.pixels[i], 0.5 / 255.0 + 1e-12);
    }
  }
}

TEST(LoadReading, EmptyAnnotationsAreLegal) {
  SynthConfig cfg;
  cfg.n_readings = 1;
  auto r = synth_generate(cfg, 1)[0];
  r.annotations.clear();
  auto dir = temp_dir("empty") / "r";
  save_reading(dir, r);
  EXPECT_EQ(read_file(dir / "annotations.json"), "[]\n");
  EXPECT_TRUE(load_reading(dir).annotations.empty());
}

TEST(LoadReading, FixationsTakePrecedence) {
  SynthConfig cfg;
  cfg.n_readings = 1;
  auto r = synth_generate(cfg, 1)[0];
  r.fixations = std::vector<Fixation>{{20, 20, 0, 300, 10}};
  auto dir = temp_dir("fixprec") / "r";
  save_reading(dir, r);
  Reading back = load_reading(dir);
  ASSERT_TRUE(back.fixations.has_value());
  auto fx = reading_fixations(back);
  ASSERT_EQ(fx.size(), 1u);
  EXPECT_EQ(fx[0].cx_px, 20.0);
}

TEST(LoadReading, Errors) {
  SynthConfig cfg;
  cfg.n_readings = 1;
  auto r = synth_generate(cfg, 1)[0];
  auto dir = temp_dir("errors") / "r";
  save_reading(dir, r);

  write_file_atomic(dir / "annotations.json",
                    R"([{"cx":10,"cy":10,"rx":3,"ry":3,"label":"fracture"}])");
  try {
    load_reading(dir);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("annotations.json[0]"), std::string::npos);
  }
  write_file_atomic(dir / "annotations.json", "[{");
  EXPECT_THROW(load_reading(dir), ValidationError);
  write_file_atomic(dir / "annotations.json", "[]");

  write_file_atomic(dir / "gaze.csv", "t_ms,x_px,y_px,pupil_mm,valid\n0,1,1,,1\nabc,1,1,,1\n");
  try {
    load_reading(dir);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("gaze.csv:3"), std::string::npos) << e.what();
  }
  fs::remove(dir / "gaze.csv");
  EXPECT_THROW(load_reading(dir), ValidationError);
}

TEST(Dataset, ManifestRoundTrip) {
  SynthConfig cfg;
  cfg.n_readings = 10;
  auto rs = synth_generate(cfg, 4);
  auto root = temp_dir("manifest");
  auto tags = split_assignment(rs.size(), {}, 4);
  save_dataset(root, rs, tags, 64);
  auto m = load_manifest(root);
  EXPECT_EQ(m.img_size, 64u);
  ASSERT_EQ(m.readings.size(), 10u);
  EXPECT_EQ(load_split(root, "train").size(), 8u);
  EXPECT_EQ(load_split(root, "").size(), 10u);
}
