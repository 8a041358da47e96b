#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <widecam/report.hpp>

#include "test_support.hpp"

namespace widecam {
namespace {

using testing::representative;

CompareRow row(ModelKind kind, double mean, const char* status) {
  CompareRow r;
  r.kind = kind;
  r.mean_px = mean;
  r.status = status;
  return r;
}

TEST(Compare, OverheadIsRelativeToTheBestConvergedModel) {
  std::vector<CompareRow> rows = {row(ModelKind::kUcm, 0.2, "ok"), row(ModelKind::kDs, 0.1, "ok"),
                                  row(ModelKind::kFov, 0.05, "not_converged"),
                                  row(ModelKind::kKb8, 0.15, "ok")};
  rows.push_back(row(ModelKind::kEucm, std::nan(""), "failed"));
  rank_rows(rows);
  EXPECT_EQ(rows[1].status, "best");
  EXPECT_DOUBLE_EQ(rows[1].overhead_pct, 0.0);
  EXPECT_EQ(rows[3].status, "second");
  EXPECT_NEAR(rows[3].overhead_pct, 50.0, 1e-12);
  EXPECT_NEAR(rows[0].overhead_pct, 100.0, 1e-12);
  EXPECT_EQ(rows[2].status, "not_converged");
  EXPECT_NEAR(rows[2].overhead_pct, -50.0, 1e-12);
  EXPECT_TRUE(std::isnan(rows[4].overhead_pct));

  CompareReport rep{rows};
  std::istringstream csv(compare_csv(rep));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "model,mean_px,overhead_pct,status");
  std::getline(csv, line);
  EXPECT_EQ(line, "ucm,0.2,100.00,ok");
  std::getline(csv, line);
  EXPECT_EQ(line, "ds,0.1,0.00,best");
  for (int i = 0; i < 3; ++i) std::getline(csv, line);
  EXPECT_EQ(line, "eucm,,,failed");
}

TEST(Compare, SingleConvergedModelHasZeroOverhead) {
  std::vector<CompareRow> rows = {row(ModelKind::kKb6, std::nan(""), "failed"),
                                  row(ModelKind::kEucm, 0.3, "ok")};
  rank_rows(rows);
  EXPECT_EQ(rows[1].status, "best");
  EXPECT_NE(compare_csv(CompareReport{rows}).find("eucm,0.3,0.00,best"), std::string::npos);
}

TEST(Compare, DoubleSphereDataFavoursDoubleSphere) {
  SynthSpec s;
  s.camera = representative(ModelKind::kDs);
  s.noise_sigma = 0.1;
  s.seed = 4;
  const SynthData data = generate_synthetic(s);
  const CompareReport rep =
      compare_models(data.detections, {ModelKind::kDs, ModelKind::kUcm, ModelKind::kFov});
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows[0].kind, ModelKind::kDs);
  EXPECT_EQ(rep.rows[0].status, "best");
  EXPECT_GT(rep.rows[1].overhead_pct, 0.0);
  EXPECT_GT(rep.rows[2].overhead_pct, 0.0);
  EXPECT_TRUE(rep.any_converged());
  EXPECT_NE(compare_table(rep).find("best"), std::string::npos);
}

TEST(Compare, DefaultOrderFollowsTheUsualTable) {
  const std::vector<ModelKind> expected = {ModelKind::kUcm, ModelKind::kFov, ModelKind::kDs,
                                           ModelKind::kEucm, ModelKind::kKb6, ModelKind::kKb8};
  EXPECT_EQ(default_compare_models(), expected);
}

TEST(Compare, FailuresBecomeRows) {
  SynthSpec s;
  s.camera = representative(ModelKind::kUcm);
  s.num_images = 3;
  DetectionSet det = generate_synthetic(s).detections;
  det.images.pop_back();
  const CompareReport rep = compare_models(det, {ModelKind::kUcm, ModelKind::kKb8});
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.status, "failed");
    EXPECT_FALSE(r.detail.empty());
  }
  EXPECT_FALSE(rep.any_converged());
}

class Svg : public ::testing::Test {
 protected:
  void SetUp() override {
    SynthSpec s;
    s.camera = representative(ModelKind::kEucm);
    s.num_images = 4;
    s.seed = 8;
    data_ = generate_synthetic(s);
  }

  // Detected and reprojected markers, paired by order.
  std::vector<std::pair<Vec2, Vec2>> markers(const std::string& svg) const {
    std::vector<Vec2> det, rep;
    for (const auto& c : testing::svg_circles(svg)) {
      (c.cls == "detected" ? det : rep).push_back(c.center);
    }
    EXPECT_EQ(det.size(), rep.size());
    std::vector<std::pair<Vec2, Vec2>> out;
    for (std::size_t i = 0; i < std::min(det.size(), rep.size()); ++i) out.emplace_back(det[i], rep[i]);
    return out;
  }

  SynthData data_;
};

TEST_F(Svg, GroundTruthMarkersCoincide) {
  const int id = data_.detections.images[2].id;
  const std::string svg =
      reprojection_svg(data_.detections, representative(ModelKind::kEucm), data_.poses[2], id);
  EXPECT_TRUE(testing::well_formed_xml(svg));
  EXPECT_NE(svg.find("version=\"1.1\""), std::string::npos);
  EXPECT_NE(svg.find("<rect class=\"frame\" x=\"0\" y=\"0\" width=\"1280\" height=\"1024\""),
            std::string::npos);
  const auto m = markers(svg);
  ASSERT_EQ(m.size(), data_.detections.images[2].corners.size());
  for (const auto& [d, r] : m) EXPECT_LE((d - r).norm(), 1e-6);
}

TEST_F(Svg, FocalErrorGrowsWithRadius) {
  CameraModel cam = representative(ModelKind::kEucm);
  Eigen::VectorXd p = cam.params();
  p[0] *= 1.05;
  cam = cam.with_params(p);
  const Vec2 c = p.segment<2>(2);
  std::vector<std::pair<double, double>> radius_gap;
  for (std::size_t i = 0; i < data_.poses.size(); ++i) {
    for (const auto& [d, r] : markers(reprojection_svg(data_.detections, cam, data_.poses[i],
                                                       data_.detections.images[i].id))) {
      EXPECT_GT((d - r).norm(), 1e-3);
      radius_gap.emplace_back((d - c).norm(), (d - r).norm());
    }
  }
  std::sort(radius_gap.begin(), radius_gap.end());
  const std::size_t half = radius_gap.size() / 2;
  double inner = 0.0, outer = 0.0;
  for (std::size_t k = 0; k < radius_gap.size(); ++k) (k < half ? inner : outer) += radius_gap[k].second;
  EXPECT_GT(outer / double(radius_gap.size() - half), 1.5 * inner / double(half));
}

TEST_F(Svg, UnknownImageIdIsRejected) {
  EXPECT_THROW(reprojection_svg(data_.detections, representative(ModelKind::kEucm), data_.poses[0], 999),
               SchemaError);
}

TEST(WellFormed, CheckerRejectsBrokenDocuments) {
  EXPECT_TRUE(testing::well_formed_xml("<?xml version=\"1.0\"?><a><b x=\"1\"/></a>"));
  EXPECT_FALSE(testing::well_formed_xml("<a><b></a></b>"));
  EXPECT_FALSE(testing::well_formed_xml("<a x=\"1></a>"));
  EXPECT_FALSE(testing::well_formed_xml("<a/><b/>"));
}

}  // namespace
}  // namespace widecam
