#pragma once

// Shared fixtures and independent oracles for the unit and acceptance suites.
// Oracles deliberately avoid the library's own helpers where the library
// result is what is being checked.

#include "cathtrack/cathtrack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <queue>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace cathtrack::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "cathtrack") {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(++counter));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline GrayImage random_image(std::mt19937_64& rng, int w, int h) {
  GrayImage img(w, h);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(d(rng));
  return img;
}

// Per-pixel window mean over the in-image part of the window, in doubles.
inline BinaryImage naive_threshold(const GrayImage& img, int window, int offset) {
  BinaryImage out(img.width, img.height);
  const int r = window / 2;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int yy = y - r; yy <= y + r; ++yy)
        for (int xx = x - r; xx <= x + r; ++xx) {
          if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) continue;
          sum += img.at(xx, yy);
          ++n;
        }
      const double mean = sum / n;
      out.set(x, y, img.at(x, y) < mean - offset);
    }
  return out;
}

// Unit-weight Dijkstra over the 8-connected pixel graph; -1 = unreachable.
inline std::vector<int> dijkstra_unit(const BinaryImage& g, int sx, int sy) {
  const int w = g.width, h = g.height;
  std::vector<int> dist(static_cast<std::size_t>(w) * h, std::numeric_limits<int>::max());
  using Item = std::pair<int, int>;  // (dist, index)
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[sy * w + sx] = 0;
  pq.push({0, sy * w + sx});
  while (!pq.empty()) {
    const auto [d, i] = pq.top();
    pq.pop();
    if (d > dist[i]) continue;
    const int x = i % w, y = i / w;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dx && !dy) continue;
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h || !g.at(nx, ny)) continue;
        const int j = ny * w + nx;
        if (d + 1 < dist[j]) {
          dist[j] = d + 1;
          pq.push({d + 1, j});
        }
      }
  }
  for (auto& d : dist)
    if (d == std::numeric_limits<int>::max()) d = -1;
  return dist;
}

// Random 8-connected walk with side branches, starting at `start`.
inline BinaryImage random_branched_skeleton(std::mt19937_64& rng, int w, int h, Vec2 start, int main_len,
                                            int branches) {
  BinaryImage s(w, h);
  std::uniform_int_distribution<int> step(-1, 1);
  auto walk = [&](int x, int y, int len, int bias_x, int bias_y, std::vector<std::pair<int, int>>* trail) {
    for (int i = 0; i < len; ++i) {
      s.set(x, y, true);
      if (trail) trail->emplace_back(x, y);
      int dx = step(rng), dy = step(rng);
      if (i % 2 == 0) {
        dx = bias_x ? bias_x : dx;
        dy = bias_y ? bias_y : dy;
      }
      if (!dx && !dy) dx = bias_x ? bias_x : 1;
      x = std::clamp(x + dx, 1, w - 2);
      y = std::clamp(y + dy, 1, h - 2);
    }
    s.set(x, y, true);
  };
  std::vector<std::pair<int, int>> trail;
  walk(static_cast<int>(start.x()), static_cast<int>(start.y()), main_len, 1, 0, &trail);
  std::uniform_int_distribution<std::size_t> at(0, trail.size() - 1);
  std::uniform_int_distribution<int> blen(2, std::max(3, main_len / 3));
  std::uniform_int_distribution<int> dir(-1, 1);
  for (int b = 0; b < branches; ++b) {
    const auto [bx, by] = trail[at(rng)];
    int vy = dir(rng);
    if (!vy) vy = 1;
    walk(bx, by, blen(rng), 0, vy, nullptr);
  }
  return s;
}

// Closed-form planar constant-curvature arc from the origin heading +X,
// bending toward +Y: tip after arc length s with total turn angle theta.
inline Vec2 arc_endpoint(double s, double theta_rad) {
  if (std::abs(theta_rad) < 1e-15) return {s, 0.0};
  const double r = s / theta_rad;
  return {r * std::sin(theta_rad), r * (1.0 - std::cos(theta_rad))};
}

// Sampled, normalised 2D Gaussian on the square [-r, r]^2.
inline std::vector<double> gaussian_2d(double sigma, int r) {
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1) * (2 * r + 1));
  double sum = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      k[static_cast<std::size_t>(y + r) * (2 * r + 1) + (x + r)] = v;
      sum += v;
    }
  for (auto& v : k) v /= sum;
  return k;
}

// Point at normalised arclength u in [0, 1] along a 3D polyline, computed
// with a plain linear scan.
inline Vec3 polyline_at(const std::vector<Vec3>& pts, double u) {
  double total = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) total += (pts[i] - pts[i - 1]).norm();
  double target = u * total, run = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double seg = (pts[i] - pts[i - 1]).norm();
    if (run + seg >= target && seg > 0.0) return pts[i - 1] + (target - run) / seg * (pts[i] - pts[i - 1]);
    run += seg;
  }
  return pts.back();
}

struct TrackError {
  double tip_mm = 0.0;
  double rms_mm = 0.0;
};

// Tip error and RMS over the K track points against the truth curve sampled
// at the same normalised arclengths (both tip first).
inline TrackError track_error(const Track3D& track, const std::vector<Vec3>& truth) {
  TrackError e;
  e.tip_mm = (track.points.front() - truth.front()).norm();
  const std::size_t k = track.points.size();
  double sq = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double u = k == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(k - 1);
    sq += (track.points[i] - polyline_at(truth, u)).squaredNorm();
  }
  e.rms_mm = std::sqrt(sq / static_cast<double>(k));
  return e;
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline AffineTransform random_affine(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0), t(-100.0, 100.0);
  AffineTransform a;
  do {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) a.linear(r, c) = u(rng);
  } while (std::abs(a.linear.determinant()) < 0.2);
  a.translation = Vec3(t(rng), t(rng), t(rng));
  return a;
}

inline std::string source_dir() {
#ifdef CATHTRACK_SOURCE_DIR
  return CATHTRACK_SOURCE_DIR;
#else
  return ".";
#endif
}

}  // namespace cathtrack::testing
