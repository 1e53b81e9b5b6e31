#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace cathtrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Wrap to [-180, 180).
inline double wrap_deg(double deg) {
  double r = std::fmod(deg + 180.0, 360.0);
  if (r < 0.0) r += 360.0;
  r -= 180.0;
  // fmod can return 360 - tiny for inputs just below a multiple of 360
  if (r >= 180.0) r -= 360.0;
  return r;
}

// Rodrigues rotation of v about the unit axis k.
inline Vec3 rotate_about(const Vec3& v, const Vec3& k, double angle_rad) {
  const double c = std::cos(angle_rad);
  const double s = std::sin(angle_rad);
  return v * c + k.cross(v) * s + k * k.dot(v) * (1.0 - c);
}

template <typename V>
double polyline_length(std::span<const V> pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += (pts[i] - pts[i - 1]).norm();
  return len;
}

template <typename V>
double polyline_length(const std::vector<V>& pts) {
  return polyline_length(std::span<const V>(pts));
}

// Cumulative arclength at each vertex; front() == 0.
template <typename V>
std::vector<double> cumulative_arclength(std::span<const V> pts) {
  std::vector<double> s(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) s[i] = s[i - 1] + (pts[i] - pts[i - 1]).norm();
  return s;
}

// Point at arclength `at` along a polyline whose cumulative arclength is `cum`.
template <typename V>
V point_at_arclength(std::span<const V> pts, std::span<const double> cum, double at) {
  if (pts.size() == 1 || at <= 0.0) return pts.front();
  if (at >= cum.back()) return pts.back();
  auto it = std::upper_bound(cum.begin(), cum.end(), at);
  std::size_t hi = static_cast<std::size_t>(it - cum.begin());
  std::size_t lo = hi - 1;
  const double seg = cum[hi] - cum[lo];
  const double t = seg > 0.0 ? (at - cum[lo]) / seg : 0.0;
  return pts[lo] + t * (pts[hi] - pts[lo]);
}

// K points at uniform normalized arclength; endpoints copied exactly.
template <typename V>
std::vector<V> resample_uniform(std::span<const V> pts, std::size_t k) {
  std::vector<V> out;
  if (pts.empty() || k == 0) return out;
  out.reserve(k);
  if (k == 1) {
    out.push_back(pts.front());
    return out;
  }
  const auto cum = cumulative_arclength(pts);
  const double total = cum.back();
  out.push_back(pts.front());
  for (std::size_t i = 1; i + 1 < k; ++i) {
    const double at = total * static_cast<double>(i) / static_cast<double>(k - 1);
    out.push_back(point_at_arclength(pts, std::span<const double>(cum), at));
  }
  out.push_back(pts.back());
  return out;
}

template <typename V>
std::vector<V> resample_uniform(const std::vector<V>& pts, std::size_t k) {
  return resample_uniform(std::span<const V>(pts), k);
}

// Apply a 3x3 projective map to a 2D point.
inline Vec2 apply_homography(const Mat3& h, const Vec2& p) {
  const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

}  // namespace cathtrack
