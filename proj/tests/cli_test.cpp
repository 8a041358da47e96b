#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "test_support.hpp"

namespace widecam {
namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("widecam_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "widecam");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    out_.str("");
    err_.str("");
    return cli::run_cli(static_cast<int>(argv.size()), argv.data(), out_, err_);
  }

  // Writes a camera file and synthesizes detections from it.
  std::string synth(ModelKind kind, const std::string& name, std::vector<std::string> extra = {}) {
    const std::string cam = path(name + ".camera.json");
    write_camera(cam, testing::representative(kind));
    std::vector<std::string> args = {"synth", "--model-file", cam, "--out", path(name + ".json")};
    args.insert(args.end(), extra.begin(), extra.end());
    EXPECT_EQ(run(args), 0) << err_.str();
    return path(name + ".json");
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST_F(Cli, SynthIsDeterministicAndWritesGroundTruth) {
  const std::string a = synth(ModelKind::kDs, "a", {"--seed", "4", "--noise", "0.2"});
  const std::string b = synth(ModelKind::kDs, "b", {"--seed", "4", "--noise", "0.2"});
  EXPECT_EQ(read_file(a), read_file(b));
  EXPECT_EQ(read_file(cli::truth_path(a)), read_file(cli::truth_path(b)));
  EXPECT_EQ(cli::truth_path(a), fs::path(path("a.truth.json")));

  const CameraModel truth = read_camera(cli::truth_path(a));
  EXPECT_EQ(truth.params(), testing::representative(ModelKind::kDs).params());
  const Json j = parse_json(read_file(cli::truth_path(a)), "truth");
  const DetectionSet det = load_detections(a);
  EXPECT_EQ(j.at("poses").size(), det.images.size());
  EXPECT_EQ(j.at("seed"), 4);

  const std::string c = synth(ModelKind::kDs, "c", {"--seed", "5", "--noise", "0.2"});
  EXPECT_NE(read_file(a), read_file(c));
}

TEST_F(Cli, SynthNoiseFreeIsSelfConsistent) {
  const std::string d = synth(ModelKind::kFov, "fov", {"--images", "5"});
  const DetectionSet det = load_detections(d);
  const Json truth = parse_json(read_file(cli::truth_path(d)), "truth");
  const CalibState s = state_from_json(truth);
  ASSERT_EQ(det.images.size(), 5u);
  for (std::size_t i = 0; i < det.images.size(); ++i) {
    for (const auto& c : det.images[i].corners) {
      EXPECT_LE((s.camera.project(s.poses[i] * det.board.corner(c.id)) - c.pixel).norm(), 1e-9);
    }
  }
}

TEST_F(Cli, CalibrateNoiseFreeDoubleSphere) {
  const std::string d = synth(ModelKind::kDs, "ds", {"--seed", "3"});
  ASSERT_EQ(run({"calibrate", "--detections", d, "--model", "ds", "--out", path("r.json")}), 0)
      << err_.str();
  const Json r = parse_json(read_file(path("r.json")), "result");
  EXPECT_LE(r.at("mean_reproj_px").get<double>(), 1e-8);
  EXPECT_TRUE(r.at("converged").get<bool>());
  EXPECT_EQ(r.at("model"), "ds");
  EXPECT_NE(out_.str().find("mean"), std::string::npos);
}

TEST_F(Cli, InputErrorsExitWithOne) {
  EXPECT_EQ(run({"calibrate", "--detections", path("missing.json"), "--model", "ds", "--out",
                 path("r.json")}),
            1);
  EXPECT_NE(err_.str().find(path("missing.json")), std::string::npos);

  DetectionSet det = load_detections(synth(ModelKind::kKb8, "three", {"--images", "3"}));
  det.images.pop_back();
  const std::string two = path("two.json");
  save_detections(det, two);
  EXPECT_EQ(run({"calibrate", "--detections", two, "--model", "kb8", "--out", path("r.json")}), 1);
  EXPECT_NE(err_.str().find("at least 3 images"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("r.json")));

  EXPECT_EQ(run({"calibrate", "--detections", two, "--model", "mystery", "--out", path("r.json")}), 1);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"calibrate", "--model", "ds"}), 1);
  EXPECT_EQ(run({"--help"}), 0);
}

TEST_F(Cli, NonConvergenceExitsWithTwo) {
  const std::string d = synth(ModelKind::kEucm, "eucm", {"--noise", "0.1"});
  EXPECT_EQ(run({"calibrate", "--detections", d, "--model", "eucm", "--out", path("r.json"),
                 "--max-iterations", "1"}),
            2);
  const Json r = parse_json(read_file(path("r.json")), "result");
  EXPECT_FALSE(r.at("converged").get<bool>());
  EXPECT_EQ(r.at("reason"), "max_iterations");
}

TEST_F(Cli, FlagsOverrideTheConfigFile) {
  const std::string d = synth(ModelKind::kUcm, "ucm", {"--noise", "0.1"});
  write_file_atomic(path("cfg.json"), R"({"max_iterations": 1, "huber_delta": "inf"})");
  EXPECT_EQ(run({"calibrate", "--detections", d, "--model", "ucm", "--out", path("r.json"),
                 "--config", path("cfg.json")}),
            2);
  EXPECT_EQ(run({"calibrate", "--detections", d, "--model", "ucm", "--out", path("r.json"),
                 "--config", path("cfg.json"), "--max-iterations", "100"}),
            0)
      << err_.str();
  write_file_atomic(path("bad.json"), R"({"max_iteration": 5})");
  EXPECT_EQ(run({"calibrate", "--detections", d, "--model", "ucm", "--out", path("r.json"),
                 "--config", path("bad.json")}),
            1);
  EXPECT_NE(err_.str().find("max_iteration"), std::string::npos);
}

TEST_F(Cli, CompareWritesRankedCsv) {
  const std::string d = synth(ModelKind::kDs, "ds", {"--noise", "0.1", "--seed", "2"});
  ASSERT_EQ(run({"compare", "--detections", d, "--models", "ucm,fov,ds", "--out", path("c.csv")}), 0)
      << err_.str();
  std::istringstream csv(read_file(path("c.csv")));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "model,mean_px,overhead_pct,status");
  EXPECT_EQ(lines[1].substr(0, 4), "ucm,");
  EXPECT_EQ(lines[2].substr(0, 4), "fov,");
  EXPECT_NE(lines[3].find(",0.00,best"), std::string::npos);

  EXPECT_EQ(run({"compare", "--detections", d, "--models", "ds", "--out", path("c.csv")}), 1);
}

TEST_F(Cli, BenchWritesCsv) {
  ASSERT_EQ(run({"bench", "--models", "eucm,kb8", "--samples", "500", "--out", path("b.csv")}), 0);
  const std::string csv = read_file(path("b.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "operation,eucm,kb8");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(out_.str().find("unproject+J"), std::string::npos);
  EXPECT_EQ(run({"bench", "--repeats", "5"}), 1);
}

TEST_F(Cli, VizDrawsOneImage) {
  const std::string d = synth(ModelKind::kUcm, "ucm", {"--images", "4"});
  const int id = load_detections(d).images[1].id;
  ASSERT_EQ(run({"viz", "--detections", d, "--result", cli::truth_path(d).string(), "--image-id",
                 std::to_string(id), "--out", path("v.svg")}),
            0)
      << err_.str();
  const std::string svg = read_file(path("v.svg"));
  EXPECT_TRUE(testing::well_formed_xml(svg));
  for (const auto& c : testing::svg_circles(svg)) EXPECT_TRUE(c.cls == "detected" || c.cls == "reprojected");
  EXPECT_EQ(run({"viz", "--detections", d, "--result", cli::truth_path(d).string(), "--image-id",
                 "999", "--out", path("v2.svg")}),
            1);
  EXPECT_FALSE(fs::exists(path("v2.svg")));
}

}  // namespace
}  // namespace widecam
