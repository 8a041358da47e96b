#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include <widecam/dataset.hpp>

#include "test_support.hpp"

namespace widecam {
namespace {

using testing::representative;

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("widecam_dataset_" + name);
}

DetectionSet two_by_four() {
  DetectionSet d;
  d.width = 640;
  d.height = 480;
  for (int i = 0; i < 2; ++i) {
    ImageDetections im;
    im.id = 10 + i;
    for (int k = 0; k < 4; ++k) im.corners.push_back({k * 3, Vec2(100.25 + k, 200.0 / 3.0 + i)});
    d.images.push_back(im);
  }
  return d;
}

TEST(Detections, CountsObservations) {
  const DetectionSet d = two_by_four();
  EXPECT_NO_THROW(validate(d));
  EXPECT_EQ(d.num_observations(), 8u);
  ASSERT_NE(d.find_image(11), nullptr);
  EXPECT_EQ(d.find_image(11)->corners.size(), 4u);
  EXPECT_EQ(d.find_image(3), nullptr);
}

TEST(Detections, DuplicateCornerIdIsSchemaError) {
  DetectionSet d = two_by_four();
  d.images[1].corners[2].id = d.images[1].corners[0].id;
  EXPECT_THROW(validate(d), SchemaError);
}

TEST(Detections, DuplicateImageIdIsSchemaError) {
  DetectionSet d = two_by_four();
  d.images[1].id = d.images[0].id;
  EXPECT_THROW(validate(d), SchemaError);
}

TEST(Detections, CornerOffTheBoardIsSchemaError) {
  DetectionSet d = two_by_four();
  d.images[0].corners[0].id = d.board.num_corners();
  EXPECT_THROW(validate(d), SchemaError);
}

TEST(Detections, SaveLoadRoundTrip) {
  const DetectionSet d = two_by_four();
  const auto path = temp_path("roundtrip.json");
  save_detections(d, path);
  const DetectionSet back = load_detections(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.board, d.board);
  EXPECT_EQ(back.width, d.width);
  EXPECT_EQ(back.height, d.height);
  ASSERT_EQ(back.images.size(), d.images.size());
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    EXPECT_EQ(back.images[i].id, d.images[i].id);
    ASSERT_EQ(back.images[i].corners.size(), d.images[i].corners.size());
    for (std::size_t c = 0; c < d.images[i].corners.size(); ++c) {
      EXPECT_EQ(back.images[i].corners[c].id, d.images[i].corners[c].id);
      EXPECT_LE((back.images[i].corners[c].pixel - d.images[i].corners[c].pixel).norm(), 1e-12);
    }
  }
}

TEST(Detections, EmptyImageListIsRejected) {
  DetectionSet d;
  EXPECT_THROW(save_detections(d, temp_path("empty.json")), SchemaError);
  EXPECT_FALSE(std::filesystem::exists(temp_path("empty.json")));
}

TEST(Detections, SchemaFieldAlwaysEmitted) {
  DetectionSet d = two_by_four();
  d.width = d.height = 0;
  const Json j = detections_to_json(d);
  EXPECT_EQ(j.at("schema"), kDetectionsSchema);
  EXPECT_FALSE(j.contains("width"));
}

TEST(Detections, WrongSchemaIsSchemaError) {
  Json j = detections_to_json(two_by_four());
  j["schema"] = "calib-detections-v0";
  EXPECT_THROW(detections_from_json(j), SchemaError);
}

TEST(Detections, TypeErrorsNameTheField) {
  Json j = detections_to_json(two_by_four());
  j["images"][1]["corners"][2]["u"] = "12";
  try {
    detections_from_json(j, "in.json");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("in.json.images[1].corners[2].u"), std::string::npos)
        << e.what();
  }
  j.erase("board");
  EXPECT_THROW(detections_from_json(j), ParseError);
}

TEST(Detections, MalformedTextIsParseError) {
  const auto path = temp_path("bad.json");
  write_file_atomic(path, "{\"schema\": ");
  EXPECT_THROW(load_detections(path), ParseError);
  std::filesystem::remove(path);
}

SynthSpec spec_for(ModelKind kind, double sigma, std::uint64_t seed = 3) {
  SynthSpec s;
  s.camera = representative(kind);
  s.noise_sigma = sigma;
  s.seed = seed;
  return s;
}

class SynthEveryModel : public ::testing::TestWithParam<ModelKind> {};

TEST_P(SynthEveryModel, NoiseFreeCornersAreExactProjections) {
  const SynthData data = generate_synthetic(spec_for(GetParam(), 0.0));
  const CameraModel& cam = representative(GetParam());
  ASSERT_EQ(data.detections.images.size(), 20u);
  for (std::size_t i = 0; i < data.poses.size(); ++i) {
    EXPECT_GE(data.detections.images[i].corners.size(), 8u);
    for (const auto& c : data.detections.images[i].corners) {
      const Vec3 pc = data.poses[i] * data.detections.board.corner(c.id);
      EXPECT_LE((cam.project(pc) - c.pixel).norm(), 1e-10);
    }
  }
}

TEST_P(SynthEveryModel, CornersInOmegaAndInsideImage) {
  const SynthData data = generate_synthetic(spec_for(GetParam(), 0.5));
  const CameraModel cam = representative(GetParam());
  for (std::size_t i = 0; i < data.poses.size(); ++i) {
    for (const auto& c : data.detections.images[i].corners) {
      EXPECT_TRUE(cam.in_omega(data.poses[i] * data.detections.board.corner(c.id)));
      EXPECT_GE(c.pixel.x(), 0.0);
      EXPECT_LE(c.pixel.x(), cam.width());
      EXPECT_GE(c.pixel.y(), 0.0);
      EXPECT_LE(c.pixel.y(), cam.height());
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllModels, SynthEveryModel, ::testing::ValuesIn(kAllModelKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Synth, NoiseNormMatchesRayleighMean) {
  // |n| for n ~ N(0, s^2 I_2) is Rayleigh distributed with mean s sqrt(pi / 2).
  const double sigma = 0.1;
  const double expected = sigma * std::sqrt(std::numbers::pi / 2.0);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 1; count < 10000; ++seed) {
    SynthSpec s = spec_for(ModelKind::kDs, sigma, seed);
    const SynthData noisy = generate_synthetic(s);
    s.noise_sigma = 0.0;
    const CameraModel& cam = s.camera;
    for (std::size_t i = 0; i < noisy.poses.size(); ++i) {
      for (const auto& c : noisy.detections.images[i].corners) {
        const Vec2 truth = cam.project(noisy.poses[i] * noisy.detections.board.corner(c.id));
        sum += (c.pixel - truth).norm();
        ++count;
      }
    }
  }
  EXPECT_NEAR(sum / static_cast<double>(count), expected, 0.1 * expected);
}

TEST(Synth, SameSeedSameOutput) {
  SynthSpec s = spec_for(ModelKind::kEucm, 0.2, 42);
  s.outlier_fraction = 0.1;
  const Json a = detections_to_json(generate_synthetic(s).detections);
  const Json b = detections_to_json(generate_synthetic(s).detections);
  EXPECT_EQ(a.dump(), b.dump());
  s.seed = 43;
  EXPECT_NE(a.dump(), detections_to_json(generate_synthetic(s).detections).dump());
}

TEST(Synth, OutlierCountAndDisplacement) {
  SynthSpec s = spec_for(ModelKind::kUcm, 0.0, 5);
  s.outlier_fraction = 0.1;
  const SynthData data = generate_synthetic(s);
  const std::size_t total = data.detections.num_observations();
  EXPECT_EQ(data.num_outliers, static_cast<std::size_t>(std::llround(0.1 * total)));
  std::size_t moved = 0;
  for (std::size_t i = 0; i < data.poses.size(); ++i) {
    for (const auto& c : data.detections.images[i].corners) {
      const Vec2 truth = s.camera.project(data.poses[i] * data.detections.board.corner(c.id));
      const double d = (c.pixel - truth).norm();
      if (d > 1e-9) {
        ++moved;
        EXPECT_GE(d, s.outlier_magnitude);
      }
    }
  }
  EXPECT_EQ(moved, data.num_outliers);
}

TEST(Synth, TinyImageCannotSeeEnoughCorners) {
  SynthSpec s = spec_for(ModelKind::kPinhole, 0.0);
  s.camera = CameraModel::create(ModelKind::kPinhole, testing::vec({4000, 4000, 4, 4}), 8, 8);
  s.max_retries = 20;
  EXPECT_THROW(generate_synthetic(s), PoseSamplingError);
}

TEST(Synth, InvalidSpecIsRejected) {
  SynthSpec s = spec_for(ModelKind::kPinhole, -1.0);
  EXPECT_THROW(generate_synthetic(s), InvalidParameters);
}

}  // namespace
}  // namespace widecam
