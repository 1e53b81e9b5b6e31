#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace cathtrack;
namespace ct = cathtrack::testing;

namespace {

std::vector<Vec3> random_cloud(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-80.0, 80.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  return pts;
}

FiducialCorrespondence through(const AffineTransform& t, const std::vector<Vec3>& src) {
  FiducialCorrespondence c;
  for (const auto& p : src) c.pairs.emplace_back(p, t(p));
  return c;
}

Track3D sample_track(std::mt19937_64& rng) {
  Track3D tr;
  tr.status = TrackStatus::Ok;
  tr.roll_deg = 37.5;
  tr.timestamp_ms = 1234;
  tr.points = random_cloud(rng, 20);
  return tr;
}

double max_abs(const Mat3& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(FitAffine, IdentityPairsGiveIdentity) {
  std::mt19937_64 rng(1);
  auto fit = fit_affine(through(AffineTransform::identity(), random_cloud(rng, 6)));
  EXPECT_LT(max_abs(fit.transform.linear - Mat3::Identity()), 1e-12);
  EXPECT_LT(fit.transform.translation.norm(), 1e-10);
  EXPECT_LT(fit.rms_residual_mm, 1e-10);
}

TEST(FitAffine, RecoversRandomAffineFromFivePoints) {
  std::mt19937_64 rng(2);
  const auto truth = ct::random_affine(rng);
  auto fit = fit_affine(through(truth, random_cloud(rng, 5)));
  EXPECT_LT(max_abs(fit.transform.linear - truth.linear), 1e-9);
  EXPECT_LT((fit.transform.translation - truth.translation).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE(fit.rms_residual_mm, 1e-9);
}

// Synthesize-and-recover over every set size the tracker is expected to see.
TEST(FitAffine, ExactOnNoiselessSetsOfFourToTwenty) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 400; ++trial) {
    const int n = 4 + trial % 17;
    const auto truth = ct::random_affine(rng);
    const auto src = random_cloud(rng, n);
    const auto fit = fit_affine(through(truth, src));
    ASSERT_LE(fit.rms_residual_mm, 1e-9) << "n=" << n;
    for (const auto& p : random_cloud(rng, 3)) {
      ASSERT_LT((fit.transform(p) - truth(p)).norm(), 1e-9) << "n=" << n;
    }
  }
}

TEST(FitAffine, LeastSquaresResidualMatchesNormalEquations) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.5);
  const auto truth = ct::random_affine(rng);
  auto corr = through(truth, random_cloud(rng, 15));
  for (auto& [s, d] : corr.pairs) d += Vec3(noise(rng), noise(rng), noise(rng));

  // Independent oracle: normal equations on raw homogeneous coordinates.
  Eigen::Matrix4d ata = Eigen::Matrix4d::Zero();
  Eigen::Matrix<double, 4, 3> atb = Eigen::Matrix<double, 4, 3>::Zero();
  for (const auto& [s, d] : corr.pairs) {
    Eigen::Vector4d h(s.x(), s.y(), s.z(), 1.0);
    ata += h * h.transpose();
    atb += h * d.transpose();
  }
  const Eigen::Matrix<double, 4, 3> x = ata.ldlt().solve(atb);
  double sq = 0.0;
  for (const auto& [s, d] : corr.pairs) {
    Eigen::Vector4d h(s.x(), s.y(), s.z(), 1.0);
    sq += (x.transpose() * h - d).squaredNorm();
  }
  const double oracle_rms = std::sqrt(sq / corr.pairs.size());

  const auto fit = fit_affine(corr);
  EXPECT_NEAR(fit.rms_residual_mm, oracle_rms, 1e-9);
  EXPECT_GT(fit.rms_residual_mm, 0.1);
  // Any perturbation of the optimum can only increase the residual.
  for (int i = 0; i < 20; ++i) {
    AffineTransform p = fit.transform;
    p.linear(i % 3, (i / 3) % 3) += 1e-3;
    p.translation(i % 3) -= 1e-2;
    double s2 = 0.0;
    for (const auto& [s, d] : corr.pairs) s2 += (p(s) - d).squaredNorm();
    EXPECT_GT(std::sqrt(s2 / corr.pairs.size()), fit.rms_residual_mm);
  }
}

TEST(FitAffine, CoplanarFourPointsRejectedWithNormal) {
  FiducialCorrespondence c;
  for (Vec3 p : {Vec3(0, 0, 5), Vec3(10, 0, 5), Vec3(0, 10, 5), Vec3(10, 10, 5)}) c.pairs.emplace_back(p, p);
  try {
    fit_affine(c);
    FAIL() << "expected RankError";
  } catch (const RankError& e) {
    EXPECT_NEAR(std::abs(e.direction[2]), 1.0, 1e-9);
    EXPECT_NE(std::string(e.what()).find("coplanar"), std::string::npos);
  }
}

TEST(FitAffine, RandomCoplanarSetsNameThePlaneNormal) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat3 r = ct::random_rotation(rng);
    const Vec3 normal = r.col(2);
    const Vec3 origin(u(rng), u(rng), u(rng));
    FiducialCorrespondence c;
    const int n = 4 + trial % 10;
    for (int i = 0; i < n; ++i) {
      const Vec3 p = origin + u(rng) * r.col(0) + u(rng) * r.col(1);
      c.pairs.emplace_back(p, p);
    }
    try {
      fit_affine(c);
      FAIL() << "coplanar set accepted";
    } catch (const RankError& e) {
      const Vec3 dir(e.direction[0], e.direction[1], e.direction[2]);
      EXPECT_NEAR(std::abs(dir.dot(normal)), 1.0, 1e-6);
    }
  }
}

TEST(FitAffine, CollinearAndTooFewRejected) {
  FiducialCorrespondence line;
  for (int i = 0; i < 6; ++i) line.pairs.emplace_back(Vec3(i, 2 * i, 3 * i), Vec3(i, 0, 0));
  EXPECT_THROW(fit_affine(line), RankError);

  FiducialCorrespondence three;
  three.pairs = {{Vec3(0, 0, 0), Vec3(0, 0, 0)}, {Vec3(1, 0, 0), Vec3(1, 0, 0)}, {Vec3(0, 1, 0), Vec3(0, 1, 0)}};
  EXPECT_THROW(fit_affine(three), RankError);

  FiducialCorrespondence same;
  for (int i = 0; i < 5; ++i) same.pairs.emplace_back(Vec3(1, 1, 1), Vec3(i, 0, 0));
  EXPECT_THROW(fit_affine(same), RankError);
}

TEST(FitAffine, FittedLinearPartIsInvertible) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto truth = ct::random_affine(rng);
    const auto fit = fit_affine(through(truth, random_cloud(rng, 8)));
    EXPECT_GT(std::abs(fit.transform.linear.determinant()), 0.1);
  }
}

TEST(Apply, IdentityLeavesTrackUnchanged) {
  std::mt19937_64 rng(7);
  const auto tr = sample_track(rng);
  const auto out = apply(AffineTransform::identity(), tr);
  ASSERT_EQ(out.points.size(), tr.points.size());
  for (std::size_t i = 0; i < tr.points.size(); ++i) EXPECT_EQ(out.points[i], tr.points[i]);
  EXPECT_EQ(out.roll_deg, tr.roll_deg);
  EXPECT_EQ(out.timestamp_ms, tr.timestamp_ms);
}

TEST(Apply, TranslationShiftsX) {
  std::mt19937_64 rng(8);
  const auto tr = sample_track(rng);
  const auto out = apply(AffineTransform::translate(Vec3(10, 0, 0)), tr);
  for (std::size_t i = 0; i < tr.points.size(); ++i) {
    EXPECT_DOUBLE_EQ(out.points[i].x(), tr.points[i].x() + 10.0);
    EXPECT_EQ(out.points[i].y(), tr.points[i].y());
    EXPECT_EQ(out.points[i].z(), tr.points[i].z());
  }
}

TEST(Apply, CompositionMatchesSequentialApplication) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    const auto a = ct::random_affine(rng), b = ct::random_affine(rng);
    const auto tr = sample_track(rng);
    const auto seq = apply(a, apply(b, tr));
    const auto comp = apply(a * b, tr);
    for (std::size_t k = 0; k < tr.points.size(); ++k) {
      const double scale = std::max(1.0, seq.points[k].norm());
      ASSERT_LT((seq.points[k] - comp.points[k]).norm() / scale, 1e-12);
    }
  }
}

TEST(Apply, PreservesCountOrderRollAndStatus) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 100; ++i) {
    const auto t = ct::random_affine(rng);
    auto tr = sample_track(rng);
    tr.roll_deg = i * 3.1 - 150.0;
    const auto out = apply(t, tr);
    ASSERT_EQ(out.points.size(), tr.points.size());
    EXPECT_EQ(out.roll_deg, tr.roll_deg);
    EXPECT_EQ(out.status, tr.status);
    for (std::size_t k = 0; k < tr.points.size(); ++k) EXPECT_LT((out.points[k] - t(tr.points[k])).norm(), 1e-12);
  }
}

TEST(Apply, PreservesCollinearity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const auto t = ct::random_affine(rng);
    const Vec3 a(u(rng) * 50, u(rng) * 50, u(rng) * 50), d(u(rng), u(rng), u(rng));
    Track3D tr;
    tr.status = TrackStatus::Ok;
    tr.points = {a, a + 3.0 * d, a - 7.5 * d};
    const auto out = apply(t, tr);
    const Vec3 e1 = out.points[1] - out.points[0], e2 = out.points[2] - out.points[0];
    EXPECT_LT(e1.cross(e2).norm(), 1e-9 * std::max(1.0, e1.norm() * e2.norm()));
  }
}

TEST(Correspondences, ParsesCommentsAndBlankLines) {
  std::istringstream in("# fiducials\n\n1 2 3  4 5 6\n  7 8 9 10 11 12 # trailing\n");
  const auto c = parse_correspondences(in);
  ASSERT_EQ(c.pairs.size(), 2u);
  EXPECT_EQ(c.pairs[1].first, Vec3(7, 8, 9));
  EXPECT_EQ(c.pairs[1].second, Vec3(10, 11, 12));
}

TEST(Correspondences, MalformedLineNamesLocation) {
  for (const char* text : {"1 2 3 4 5\n", "1 2 3 4 5 6 7\n", "1 2 x 4 5 6\n"}) {
    std::istringstream in(std::string("0 0 0 0 0 0\n") + text);
    try {
      parse_correspondences(in, "fid.txt");
      FAIL() << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("fid.txt:2"), std::string::npos) << e.what();
    }
  }
}

TEST(Correspondences, MissingFileIsIoError) {
  EXPECT_THROW(load_correspondences("/nonexistent/fiducials.txt"), IoError);
}
