#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>

#include "gfd/gaze.hpp"
#include "gfd/io.hpp"

using namespace gfd;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + GFD_CLI_PATH + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "gfd_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

std::size_t data_rows(const std::string& csv) {
  std::size_t n = 0;
  for (auto line : split_lines(csv)) n += !line.empty();
  return n - 1;
}

// Small trained model shared by the eval tests.
const std::string& trained_checkpoint() {
  static const std::string ckpt = [] {
    EXPECT_EQ(run("synth --out " + at("evaldata") + " --n 20 --seed 4").code, 0);
    EXPECT_EQ(run("train --data " + at("evaldata") + " --out " + at("evaltrain") +
                  " --epochs 1 --seed 4")
                  .code,
              0);
    return at("evaltrain") + "/checkpoint_last.json";
  }();
  return ckpt;
}

}  // namespace

TEST(Cli, SynthIsDeterministic) {
  ASSERT_EQ(run("synth --n 10 --size 64 --seed 7 --out " + at("s1")).code, 0);
  ASSERT_EQ(run("synth --n 10 --size 64 --seed 7 --out " + at("s2")).code, 0);
  const auto a = tree(at("s1")), b = tree(at("s2"));
  EXPECT_EQ(a.size(), 31u);  // manifest + 10 x (image, annotations, gaze)
  EXPECT_EQ(a, b);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("synth --n 0 --out " + at("s0")).code, 1);
  EXPECT_EQ(run("synth --out " + at("s0") + " --no-such-flag 3").code, 1);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("synth --out " + at("s0") + " --classes nodule").code, 1);
  EXPECT_EQ(run("eval --checkpoint /nonexistent --data . --out x").code, 1);
  EXPECT_EQ(run("--help").code, 0);
  // Unreadable dataset content is a runtime failure.
  fs::create_directories(at("broken"));
  write_file_atomic(at("broken") + "/manifest.json", "{\"format\": 1");
  const CliRun r = run("train --data " + at("broken") + " --out " + at("broken_out"));
  EXPECT_NE(r.code, 0);
}

TEST(Cli, PrintsResolvedConfigAndSeed) {
  const CliRun r = run("synth --n 1 --out " + at("seeded"), "GFD_SEED=9");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("config: {"), std::string::npos);
  EXPECT_NE(r.out.find("seed: 9"), std::string::npos);
  const CliRun flag = run("synth --n 1 --seed 3 --out " + at("seeded2"), "GFD_SEED=9");
  EXPECT_NE(flag.out.find("seed: 3"), std::string::npos);
}

TEST(Cli, ConfigFileWithFlagPrecedence) {
  write_file_atomic(at("cfg.json"), R"({"n": 3, "seed": 11, "size": 32})");
  const CliRun r = run("synth --config " + at("cfg.json") + " --n 2 --out " + at("cfgdata"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("seed: 11"), std::string::npos);
  EXPECT_NE(r.out.find("wrote 2 readings"), std::string::npos);
  write_file_atomic(at("badcfg.json"), R"({"nonsense": 1})");
  EXPECT_EQ(run("synth --config " + at("badcfg.json") + " --out " + at("x")).code, 1);
}

TEST(Cli, Fixations) {
  write_file_atomic(at("empty_gaze.csv"), "t_ms,x_px,y_px,pupil_mm,valid\n");
  ASSERT_EQ(run("fixations --gaze " + at("empty_gaze.csv") + " --out " + at("fx_empty.csv")).code, 0);
  EXPECT_EQ(read_file(at("fx_empty.csv")), "cx_px,cy_px,start_ms,end_ms\n");

  std::string constant = "t_ms,x_px,y_px,pupil_mm,valid\n";
  for (int t = 0; t <= 300; t += 10) constant += std::to_string(t) + ",100,200,3,1\n";
  write_file_atomic(at("const_gaze.csv"), constant);
  ASSERT_EQ(run("fixations --gaze " + at("const_gaze.csv") + " --out " + at("fx_const.csv")).code, 0);
  const auto one = read_fixations_csv(at("fx_const.csv"));
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].cx_px, 100.0);
  EXPECT_EQ(one[0].cy_px, 200.0);

  // Two dwells separated by a saccade; same fixture as the gaze unit tests.
  std::string two = "t_ms,x_px,y_px,pupil_mm,valid\n";
  for (int t = 0; t < 300; t += 10) two += std::to_string(t) + ",100,100,3,1\n";
  for (int t = 300; t < 600; t += 10) two += std::to_string(t) + ",300,250,3,1\n";
  write_file_atomic(at("two_gaze.csv"), two);
  ASSERT_EQ(run("fixations --gaze " + at("two_gaze.csv") + " --out " + at("fx_two.csv")).code, 0);
  EXPECT_EQ(data_rows(read_file(at("fx_two.csv"))), 2u);
}

TEST(Cli, HeatmapMatchesLibrary) {
  write_file_atomic(at("fx.csv"), "cx_px,cy_px,start_ms,end_ms\n10,10,0,200\n40,20,300,400\n");
  ASSERT_EQ(run("heatmap --fixations " + at("fx.csv") +
                " --width 64 --height 32 --sigma 4 --out " + at("h.pgm") + " --raw " + at("h.raw"))
                .code,
            0);
  const auto fx = read_fixations_csv(at("fx.csv"));
  const FixationMap expect = render_heatmap(fx, 64, 32, 4.0);
  const FixationMap got = read_heatmap_raw(at("h.raw"));
  EXPECT_EQ(got.values, expect.values);
  const GrayImage8 pgm = read_pgm(at("h.pgm"));
  EXPECT_EQ(pgm.width, 64u);
  EXPECT_EQ(pgm.height, 32u);

  write_file_atomic(at("fx_none.csv"), "cx_px,cy_px,start_ms,end_ms\n");
  ASSERT_EQ(run("heatmap --fixations " + at("fx_none.csv") + " --width 8 --height 8 --out " +
                at("h0.pgm") + " --raw " + at("h0.raw"))
                .code,
            0);
  for (double v : read_heatmap_raw(at("h0.raw")).values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(run("heatmap --fixations " + at("fx.csv") + " --width 0 --height 8 --out " + at("h1.pgm")).code,
            1);
}

TEST(Cli, EvalBothMetrics) {
  const std::string ckpt = trained_checkpoint();
  ASSERT_EQ(run("eval --checkpoint " + ckpt + " --data " + at("evaldata") +
                " --metric iou --thresh 0.5 --out " + at("ev_iou"))
                .code,
            0);
  ASSERT_EQ(run("eval --checkpoint " + ckpt + " --data " + at("evaldata") +
                " --metric iobb --thresh 0.5 --out " + at("ev_iobb"))
                .code,
            0);
  const std::string iou = read_file(at("ev_iou") + "/report.md");
  const std::string iobb = read_file(at("ev_iobb") + "/report.md");
  EXPECT_NE(iou.find("AP@[IoU=0.50]"), std::string::npos);
  EXPECT_NE(iobb.find("AP@[IoBB=0.50]"), std::string::npos);
  EXPECT_NE(iou, iobb);
  EXPECT_EQ(run("eval --checkpoint " + ckpt + " --data " + at("evaldata") +
                " --metric dice --out " + at("ev_bad"))
                .code,
            1);

  // Re-scoring the written predictions reproduces the report.
  ASSERT_EQ(run("report --predictions " + at("ev_iou") + "/predictions.json --data " +
                at("evaldata") + " --metric iou --tag \"Mask CNN (image only)\" --out " + at("rep"))
                .code,
            0);
  EXPECT_EQ(read_file(at("rep") + "/report.json"), read_file(at("ev_iou") + "/report.json"));
}

TEST(Cli, EvalIsIdempotent) {
  const std::string ckpt = trained_checkpoint();
  for (const char* out : {"idem1", "idem2"}) {
    ASSERT_EQ(run("eval --checkpoint " + ckpt + " --data " + at("evaldata") + " --out " + at(out)).code, 0);
  }
  EXPECT_EQ(tree(at("idem1")), tree(at("idem2")));
}

TEST(Cli, CompareHeaders) {
  trained_checkpoint();
  const CliRun r = run("compare --data " + at("evaldata") + " --out " + at("cmp") +
                    " --epochs 1 --fusion sum --seed 4");
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string md = read_file(at("cmp") + "/comparison.md");
  EXPECT_NE(md.find("| Abnormality                 | AP@[IoBB=0.50] | AR@[IoBB=0.50] | "
                    "AP@[IoBB=0.50] | AR@[IoBB=0.50] |"),
            std::string::npos)
      << md;
  EXPECT_TRUE(fs::exists(at("cmp") + "/arm_a/report.json"));
  EXPECT_TRUE(fs::exists(at("cmp") + "/arm_b/report.json"));
}

TEST(Cli, ReportFromRows) {
  write_file_atomic(at("rows.json"), R"j({
    "model_tag": "Mask CNN (image only)",
    "classes": {
      "enlarged_cardiac_silhouette": {"ap": 0.429326, "ar": 0.810000},
      "atelectasis": {"ap": 0.125410, "ar": 0.529412},
      "pleural_abnormality": {"ap": 0.043422, "ar": 0.226519},
      "consolidation": {"ap": 0.113867, "ar": 0.308642},
      "pulmonary_edema": {"ap": 0.030728, "ar": 0.410959}}})j");
  const CliRun r = run("report --rows " + at("rows.json") + " --out " + at("rows_out"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("| Average                     | 0.148551       | 0.457106       |"),
            std::string::npos)
      << r.out;
  EXPECT_EQ(run("report --out " + at("rows_out")).code, 1);
}

TEST(Cli, GradcheckReportsLayers) {
  const CliRun r = run("gradcheck --seeds 1");
  EXPECT_EQ(r.code, 0) << r.out;
  for (const char* layer : {"op/conv2d", "op/roi_align", "model/rpn.conv", "model/mask.out"}) {
    EXPECT_NE(r.out.find(layer), std::string::npos) << layer;
  }
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}
