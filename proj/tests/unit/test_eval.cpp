#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "kdmvs/eval/csv.hpp"
#include "kdmvs/eval/depth_metrics.hpp"
#include "kdmvs/eval/point_cloud.hpp"
#include "kdmvs/synth/scene.hpp"
#include "support/gradcheck.hpp"
#include "support/scenes.hpp"

namespace kdmvs {
namespace {

using eval::PointCloud;
using testing::random_grid;
using testing::simple_camera;

namespace fs = std::filesystem;

TEST(Fuse, ConstantDepthGivesPlanarCloud) {
  const Matrix3d R = testing::small_rotation(0.2, -0.3, 0.1);
  const CameraModel cam = simple_camera(20, 9.5, 7.5, Vector3d(0.3, -0.2, 0.5), R);
  const Grid depth(16, 20, 1, 5.0), mask(16, 20, 1, 1.0);
  const PointCloud cloud = eval::fuse({{&depth, &mask, &cam}});
  ASSERT_EQ(cloud.size(), 320u);
  EXPECT_FALSE(cloud.has_colors());
  // Camera-frame z is R.row(2) . X + t.z.
  const Vector3d n = R.row(2).transpose();
  for (const Vector3d& p : cloud.points) EXPECT_NEAR(n.dot(p) + cam.t.z(), 5.0, 1e-9);
}

TEST(Fuse, EmptyMasksGiveEmptyCloud) {
  const CameraModel cam = simple_camera(8, 3.5, 3.5);
  const Grid depth(8, 8, 1, 5.0), mask(8, 8, 1);
  EXPECT_TRUE(eval::fuse({{&depth, &mask, &cam}}).empty());
  EXPECT_TRUE(eval::fuse({}).empty());
}

TEST(Fuse, ColorsFollowImages) {
  const CameraModel cam = simple_camera(4, 1.5, 1.5);
  const Grid depth(4, 4, 1, 3.0), mask(4, 4, 1, 1.0), image(4, 4, 3, 0.5);
  const PointCloud cloud = eval::fuse({{&depth, &mask, &cam, &image}});
  ASSERT_TRUE(cloud.has_colors());
  EXPECT_EQ(cloud.colors[0][0], 128);
}

TEST(Fuse, VoxelKeepsOnePointPerCell) {
  const CameraModel a = simple_camera(8, 3.5, 3.5), b = a;
  const Grid depth(8, 8, 1, 4.0), mask(8, 8, 1, 1.0);
  EXPECT_EQ(eval::fuse({{&depth, &mask, &a}, {&depth, &mask, &b}}).size(), 128u);
  EXPECT_EQ(eval::fuse({{&depth, &mask, &a}, {&depth, &mask, &b}}, 1e-6).size(), 64u);
  // The points straddle the x = 0 and y = 0 cell boundaries.
  EXPECT_EQ(eval::fuse({{&depth, &mask, &a}}, 10.0).size(), 4u);
}

double surface_distance(const synth::Primitive& p, const Vector3d& x) {
  using T = synth::Primitive::Type;
  if (p.type == T::kSphere) return std::abs((x - p.center).norm() - p.radius);
  return std::abs(p.normal.normalized().dot(x - p.center));
}

// Each fused GT point lies on the analytic surface it was rendered from.
TEST(Fuse, GroundTruthDepthsLieOnAnalyticSurfaces) {
  for (auto kind : {synth::GeometryKind::kTiltedPlanes, synth::GeometryKind::kSphereOnPlane}) {
    const auto spec = testing::small_spec(9, kind);
    const synth::Scene scene = synth::build_scene(spec);
    const auto r = synth::render_scene(spec);
    std::vector<double> dist;
    for (int v = 0; v < spec.views; ++v) {
      const Grid& d = r.depths[v];
      for (int y = 0; y < d.height(); ++y)
        for (int x = 0; x < d.width(); ++x) {
          const int id = static_cast<int>(r.surfaces[v](y, x));
          if (id < 0) continue;
          Grid one(d.height(), d.width(), 1);
          one(y, x) = 1.0;
          const auto c = eval::fuse({{&d, &one, &r.cameras[v]}});
          ASSERT_EQ(c.size(), 1u);
          dist.push_back(surface_distance(scene.primitives[id], c.points[0]));
        }
    }
    std::nth_element(dist.begin(), dist.begin() + dist.size() / 2, dist.end());
    EXPECT_LT(dist[dist.size() / 2], 1e-6) << synth::to_string(kind);
  }
}

PointCloud grid_cloud(int n, double spacing, const Vector3d& offset = Vector3d::Zero()) {
  PointCloud c;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) c.points.push_back(Vector3d(i * spacing, j * spacing, 0.0) + offset);
  return c;
}

TEST(AccComp, IdenticalCloudsGiveZero) {
  const PointCloud c = grid_cloud(10, 0.1);
  const auto m = eval::acc_comp(c, c, 0.5);
  EXPECT_EQ(m.accuracy, 0.0);
  EXPECT_EQ(m.completeness, 0.0);
  EXPECT_EQ(m.overall, 0.0);
}

TEST(AccComp, TranslationOffPlaneGivesOffset) {
  const PointCloud gt = grid_cloud(30, 0.01);
  const PointCloud pred = grid_cloud(30, 0.01, Vector3d(0, 0, 0.03));
  const auto m = eval::acc_comp(pred, gt, 0.2);
  EXPECT_NEAR(m.accuracy, 0.03, 1e-12);
  EXPECT_NEAR(m.completeness, 0.03, 1e-12);
  EXPECT_NEAR(m.overall, 0.03, 1e-12);
}

TEST(AccComp, InPlaneTranslationWithinSamplingSlack) {
  const double spacing = 0.01, delta = 0.004;
  const PointCloud gt = grid_cloud(60, spacing);
  const PointCloud pred = grid_cloud(60, spacing, Vector3d(delta, 0, 0));
  const auto m = eval::acc_comp(pred, gt, 0.2);
  // Dense sampling: nearest distance is min(delta, spacing - delta) away from
  // the borders; the border rows add a small excess.
  EXPECT_NEAR(m.overall, delta, 0.1 * delta);
}

TEST(AccComp, SubsetHasBetterAccuracyThanCompleteness) {
  const PointCloud gt = grid_cloud(20, 0.05);
  PointCloud half;
  for (std::size_t i = 0; i < gt.size() / 2; ++i) half.points.push_back(gt.points[i]);
  const auto m = eval::acc_comp(half, gt, 1.0);
  EXPECT_EQ(m.accuracy, 0.0);
  EXPECT_GT(m.completeness, m.accuracy);
}

TEST(AccComp, DistancesAreCapped) {
  const PointCloud a = grid_cloud(3, 0.1), b = grid_cloud(3, 0.1, Vector3d(0, 0, 5.0));
  const auto m = eval::acc_comp(a, b, 0.2);
  EXPECT_NEAR(m.accuracy, 0.2, 1e-15);
  EXPECT_NEAR(m.completeness, 0.2, 1e-15);
}

TEST(AccComp, SwappingArgumentsSwapsAccuracyAndCompleteness) {
  Rng rng(5);
  PointCloud a, b;
  for (int i = 0; i < 300; ++i) a.points.push_back(Vector3d(rng.uniform(), rng.uniform(), rng.uniform()));
  for (int i = 0; i < 200; ++i) b.points.push_back(Vector3d(rng.uniform(), rng.uniform(), rng.uniform()));
  const auto ab = eval::acc_comp(a, b, 0.15), ba = eval::acc_comp(b, a, 0.15);
  EXPECT_EQ(ab.accuracy, ba.completeness);
  EXPECT_EQ(ab.completeness, ba.accuracy);
  EXPECT_EQ(ab.overall, ba.overall);
}

TEST(AccComp, MatchesBruteForceNearestNeighbor) {
  Rng rng(6);
  PointCloud a, b;
  for (int i = 0; i < 400; ++i) a.points.push_back(Vector3d(rng.uniform(), rng.uniform(), rng.uniform(0, 0.3)));
  for (int i = 0; i < 350; ++i) b.points.push_back(Vector3d(rng.uniform(), rng.uniform(), rng.uniform(0, 0.3)));
  const double cap = 0.08;
  auto brute = [cap](const PointCloud& from, const PointCloud& to) {
    double s = 0.0;
    for (const Vector3d& p : from.points) {
      double best = cap;
      for (const Vector3d& q : to.points) best = std::min(best, (p - q).norm());
      s += best;
    }
    return s / static_cast<double>(from.size());
  };
  const auto m = eval::acc_comp(a, b, cap);
  EXPECT_NEAR(m.accuracy, brute(a, b), 1e-12);
  EXPECT_NEAR(m.completeness, brute(b, a), 1e-12);
}

TEST(AccComp, EmptyCloudNamesTheSide) {
  const PointCloud c = grid_cloud(2, 0.1), empty;
  try {
    eval::acc_comp(empty, c, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("predicted"), std::string::npos);
  }
  try {
    eval::acc_comp(c, empty, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("ground-truth"), std::string::npos);
  }
}

TEST(DepthMetrics, PerfectPredictionGivesZero) {
  Rng rng(7);
  const Grid gt = random_grid(6, 6, 1, rng, 2, 9);
  const auto m = eval::depth_metrics(gt, gt, Grid(6, 6, 1, 1.0), 1.0, 10.0);
  EXPECT_EQ(m.epe, 0.0);
  EXPECT_EQ(m.e1, 0.0);
  EXPECT_EQ(m.e3, 0.0);
  EXPECT_EQ(m.pixels, 36);
}

TEST(DepthMetrics, ConstantOffsetOfTwoUnits) {
  // Range 64 over 128 units: one unit is 0.5 depth.
  const Grid gt(4, 4, 1, 10.0), pred(4, 4, 1, 11.0);
  const auto m = eval::depth_metrics(pred, gt, Grid(4, 4, 1, 1.0), 0.0, 64.0);
  EXPECT_DOUBLE_EQ(m.epe, 2.0);
  EXPECT_EQ(m.e1, 100.0);
  EXPECT_EQ(m.e3, 0.0);
}

TEST(DepthMetrics, MatchesBruteForce) {
  Rng rng(8);
  const Grid gt = random_grid(10, 12, 1, rng, 3, 8);
  Grid pred = gt, mask(10, 12, 1);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] += rng.uniform(-0.2, 0.2);
    mask[i] = rng.uniform() < 0.7;
  }
  const double dmin = 2.5, dmax = 8.5, s = 128.0 / (dmax - dmin);
  double sum = 0.0;
  int n = 0, o1 = 0, o3 = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double e = std::abs(s * (pred[i] - gt[i]));
    sum += e, ++n, o1 += e > 1, o3 += e > 3;
  }
  const auto m = eval::depth_metrics(pred, gt, mask, dmin, dmax);
  EXPECT_NEAR(m.epe, sum / n, 1e-12);
  EXPECT_NEAR(m.e1, 100.0 * o1 / n, 1e-12);
  EXPECT_NEAR(m.e3, 100.0 * o3 / n, 1e-12);
}

TEST(DepthMetrics, InvariantToJointShift) {
  Rng rng(9);
  const Grid gt = random_grid(8, 8, 1, rng, 3, 8), pred = random_grid(8, 8, 1, rng, 3, 8);
  const Grid mask(8, 8, 1, 1.0);
  Grid gt2 = gt, pred2 = pred;
  for (std::size_t i = 0; i < gt.size(); ++i) gt2[i] += 0.5, pred2[i] += 0.5;
  const auto a = eval::depth_metrics(pred, gt, mask, 1, 10), b = eval::depth_metrics(pred2, gt2, mask, 1, 10);
  EXPECT_NEAR(a.epe, b.epe, 1e-12);
  EXPECT_EQ(a.e1, b.e1);
  EXPECT_EQ(a.e3, b.e3);
}

TEST(DepthMetrics, Errors) {
  const Grid g(2, 2, 1, 1.0);
  EXPECT_THROW(eval::depth_metrics(g, g, g, 5.0, 5.0), Error);
  EXPECT_THROW(eval::depth_metrics(g, g, Grid(2, 2, 1), 1.0, 5.0), Error);
}

TEST(Ply, RoundTripIsBitwiseAtFloatPrecision) {
  Rng rng(10);
  for (bool colored : {false, true}) {
    PointCloud c;
    for (int i = 0; i < 50; ++i) {
      c.points.push_back(Vector3d(static_cast<float>(rng.uniform(-5, 5)), static_cast<float>(rng.uniform(-5, 5)),
                                  static_cast<float>(rng.uniform(-5, 5))));
      if (colored)
        c.colors.push_back({static_cast<std::uint8_t>(rng.index(256)), static_cast<std::uint8_t>(rng.index(256)),
                            static_cast<std::uint8_t>(rng.index(256))});
    }
    const fs::path path = fs::temp_directory_path() / "kdmvs_test_cloud.ply";
    eval::write_ply(c, path);
    const PointCloud back = eval::read_ply(path);
    EXPECT_EQ(back.points, c.points);
    EXPECT_EQ(back.colors, c.colors);
    fs::resize_file(path, fs::file_size(path) - 2);
    EXPECT_THROW(eval::read_ply(path), IoError);
    fs::remove(path);
  }
}

TEST(MetricsCsv, RowsRoundTripExactly) {
  const fs::path path = fs::temp_directory_path() / "kdmvs_test_metrics.csv";
  eval::write_metrics_csv({{"r", "teacher", "epe", 0.1}, {"r", "student_1", "e1", 1.0 / 3.0}}, path);
  std::ifstream in(path);
  std::string header, a, b;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  EXPECT_EQ(header, "run,stage,metric,value");
  EXPECT_EQ(a, "r,teacher,epe,0.10000000000000001");
  EXPECT_EQ(std::stod(b.substr(b.rfind(',') + 1)), 1.0 / 3.0);
  fs::remove(path);
}

}  // namespace
}  // namespace kdmvs
