#pragma once

// Tracking space -> heart-model space by a least-squares affine map fitted to
// fiducial correspondences.

#include "cathtrack/errors.hpp"
#include "cathtrack/fusion.hpp"
#include "cathtrack/geometry.hpp"

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace cathtrack {

struct AffineTransform {
  Mat3 linear = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 operator()(const Vec3& p) const { return linear * p + translation; }

  // (a * b)(p) == a(b(p))
  friend AffineTransform operator*(const AffineTransform& a, const AffineTransform& b) {
    return {a.linear * b.linear, a.linear * b.translation + a.translation};
  }

  static AffineTransform identity() { return {}; }
  static AffineTransform translate(const Vec3& t) { return {Mat3::Identity(), t}; }
};

struct FiducialCorrespondence {
  std::vector<std::pair<Vec3, Vec3>> pairs;  // (tracking mm, model mm)
};

struct AffineFit {
  AffineTransform transform;
  double rms_residual_mm = 0.0;
};

// Ordinary least squares on homogeneous source coordinates. Rejects sets whose
// centred source points do not span 3D; the RankError carries the direction
// of least spread.
inline AffineFit fit_affine(const FiducialCorrespondence& corr) {
  const auto n = static_cast<Eigen::Index>(corr.pairs.size());
  if (n < 4) throw RankError(0, 0, 0, "fit_affine: need at least 4 correspondences, got " + std::to_string(n));

  Vec3 centroid = Vec3::Zero();
  for (const auto& [s, d] : corr.pairs) centroid += s;
  centroid /= static_cast<double>(n);
  Eigen::MatrixXd centred(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) centred.row(i) = (corr.pairs[i].first - centroid).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> spread(centred, Eigen::ComputeFullV);
  const auto sv = spread.singularValues();
  if (sv(0) == 0.0 || sv(2) <= 1e-9 * sv(0)) {
    const Vec3 dir = spread.matrixV().col(2);
    std::ostringstream msg;
    msg << "fit_affine: source points are coplanar or degenerate (deficient direction " << dir.x() << ' '
        << dir.y() << ' ' << dir.z() << ')';
    throw RankError(dir.x(), dir.y(), dir.z(), msg.str());
  }

  // Solve in centred coordinates for conditioning, then fold back.
  Eigen::MatrixXd a(n, 4), b(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    a.row(i) << centred.row(i), 1.0;
    b.row(i) = corr.pairs[i].second.transpose();
  }
  const Eigen::MatrixXd x = a.colPivHouseholderQr().solve(b);  // 4x3

  AffineFit fit;
  fit.transform.linear = x.topRows(3).transpose();
  fit.transform.translation = x.row(3).transpose() - fit.transform.linear * centroid;

  double sq = 0.0;
  for (const auto& [s, d] : corr.pairs) sq += (fit.transform(s) - d).squaredNorm();
  fit.rms_residual_mm = std::sqrt(sq / static_cast<double>(n));
  return fit;
}

inline Track3D apply(const AffineTransform& t, const Track3D& track) {
  Track3D out = track;
  for (auto& p : out.points) p = t(p);
  return out;
}

// Text lines "sx sy sz dx dy dz" (mm); '#' starts a comment.
inline FiducialCorrespondence parse_correspondences(std::istream& in, const std::string& name = "<stream>") {
  FiducialCorrespondence corr;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    double v[6];
    int got = 0;
    while (got < 6 && ls >> v[got]) ++got;
    if (got == 0 && ls.eof()) continue;
    std::string extra;
    if (got != 6 || (ls >> extra))
      throw ConfigError(name + ":" + std::to_string(lineno) + ": expected six numbers \"sx sy sz dx dy dz\"");
    corr.pairs.emplace_back(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]));
  }
  return corr;
}

inline FiducialCorrespondence load_correspondences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open correspondence file: " + path);
  return parse_correspondences(in, path);
}

}  // namespace cathtrack
