#pragma once

// Biplane camera model and calibration.
//
// Each camera looks at one plane of the box: TOP sees (x, y), FRONT sees
// (x, z). Raw camera pixels are mapped to a metric "rectified" image by a
// homography fitted from four fiducials. In rectified space
//
//   u = inlet_u + a / mm_per_px,   v = inlet_v - b / mm_per_px
//
// where (a, b) are the in-plane world coordinates in mm; the inlet (world
// origin) sits at inlet_px and the second in-plane axis points up the image.

#include "cathtrack/errors.hpp"
#include "cathtrack/geometry.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <fstream>
#include <string>
#include <vector>

namespace cathtrack {

enum class Plane { Top, Front };

inline const char* to_string(Plane p) { return p == Plane::Top ? "TOP" : "FRONT"; }

inline Plane plane_from_string(const std::string& s) {
  if (s == "TOP") return Plane::Top;
  if (s == "FRONT") return Plane::Front;
  throw CalibrationError("unknown camera plane: " + s);
}

enum class PathSpace { RawPx, RectPx, Mm };

struct Path2D {
  std::vector<Vec2> points;  // tip first
  PathSpace space = PathSpace::RectPx;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
  friend bool operator==(const Path2D&, const Path2D&) = default;
};

struct Fiducial {
  Vec2 pixel;  // raw camera pixel
  Vec2 world;  // in-plane world mm
};

struct CameraModel {
  Plane plane = Plane::Top;
  int raw_width = 640;
  int raw_height = 480;
  int rect_width = 640;
  int rect_height = 480;
  Mat3 homography = Mat3::Identity();  // raw px -> rect px
  double mm_per_px = 0.25;
  std::array<Fiducial, 4> fiducials{};
  Vec2 inlet_px{40.0, 240.0};  // rectified

  // In-plane coordinates of a 3D world point seen by this camera.
  Vec2 in_plane(const Vec3& p) const {
    return plane == Plane::Top ? Vec2(p.x(), p.y()) : Vec2(p.x(), p.z());
  }
  Vec2 world_to_rect(const Vec2& mm) const {
    return {inlet_px.x() + mm.x() / mm_per_px, inlet_px.y() - mm.y() / mm_per_px};
  }
  Vec2 rect_to_world(const Vec2& px) const {
    return {(px.x() - inlet_px.x()) * mm_per_px, (inlet_px.y() - px.y()) * mm_per_px};
  }
  Vec2 rect_to_raw(const Vec2& px) const { return apply_homography(homography.inverse(), px); }
  Vec2 raw_to_rect(const Vec2& px) const { return apply_homography(homography, px); }

  void validate() const {
    if (!(mm_per_px > 0.0)) throw CalibrationError("mm_per_px must be positive");
    if (rect_width <= 0 || rect_height <= 0 || raw_width <= 0 || raw_height <= 0)
      throw CalibrationError("image sizes must be positive");
    const double det = homography.determinant();
    if (!std::isfinite(det) || std::abs(det) < 1e-12 * std::pow(homography.norm(), 3))
      throw CalibrationError(std::string(to_string(plane)) + ": homography is not invertible");
  }
};

struct Rig {
  CameraModel top;
  CameraModel front;
};

namespace detail {

inline bool any_three_collinear(const std::array<Vec2, 4>& p) {
  double scale = 0.0;
  for (const auto& a : p)
    for (const auto& b : p) scale = std::max(scale, (a - b).squaredNorm());
  if (scale == 0.0) return true;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      for (int k = j + 1; k < 4; ++k) {
        const Vec2 u = p[j] - p[i], v = p[k] - p[i];
        if (std::abs(u.x() * v.y() - u.y() * v.x()) <= 1e-9 * scale) return true;
      }
  return false;
}

// Similarity that moves the centroid to 0 and the mean distance to sqrt(2).
inline Mat3 normalizing_transform(const std::array<Vec2, 4>& p) {
  Vec2 c = Vec2::Zero();
  for (const auto& q : p) c += q;
  c /= 4.0;
  double d = 0.0;
  for (const auto& q : p) d += (q - c).norm();
  d /= 4.0;
  const double s = std::sqrt(2.0) / d;
  Mat3 t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

}  // namespace detail

// Direct linear transform on exactly four correspondences (normalized
// coordinates, null vector by SVD). Result maps `from` onto `to` and is scaled
// so that h(2,2) == 1 when possible.
inline Mat3 fit_homography(const std::array<Vec2, 4>& from, const std::array<Vec2, 4>& to) {
  if (detail::any_three_collinear(from) || detail::any_three_collinear(to))
    throw CalibrationError("degenerate fiducial configuration: three points are collinear");

  const Mat3 tf = detail::normalizing_transform(from);
  const Mat3 tt = detail::normalizing_transform(to);

  Eigen::Matrix<double, 8, 9> a = Eigen::Matrix<double, 8, 9>::Zero();
  for (int i = 0; i < 4; ++i) {
    const Vec2 x = apply_homography(tf, from[i]);
    const Vec2 y = apply_homography(tt, to[i]);
    a.row(2 * i) << -x.x(), -x.y(), -1, 0, 0, 0, y.x() * x.x(), y.x() * x.y(), y.x();
    a.row(2 * i + 1) << 0, 0, 0, -x.x(), -x.y(), -1, y.y() * x.x(), y.y() * x.y(), y.y();
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> hv = svd.matrixV().col(8);
  Mat3 hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  Mat3 h = tt.inverse() * hn * tf;
  if (std::abs(h(2, 2)) > 1e-12) h /= h(2, 2);
  if (!std::isfinite(h.norm()) || std::abs(h.determinant()) < 1e-15 * std::pow(h.norm(), 3))
    throw CalibrationError("fitted homography is singular");
  return h;
}

// Refit the camera's homography from its fiducials.
inline void calibrate_camera(CameraModel& cam) {
  std::array<Vec2, 4> px, rect;
  for (int i = 0; i < 4; ++i) {
    px[i] = cam.fiducials[i].pixel;
    rect[i] = cam.world_to_rect(cam.fiducials[i].world);
  }
  cam.homography = fit_homography(px, rect);
  cam.validate();
}

// Synthetic rig: 640x480 cameras, 0.25 mm/px rectified scale (120 mm across
// 480 rows), inlet 40 px from the left edge, fiducials at the ROI corners
// (0..120 mm along x, +-50 mm across). Raw fiducial positions emulate a
// slightly oblique camera so rectification is a genuine perspective warp.
inline Rig default_rig() {
  const std::array<Vec2, 4> world = {Vec2(0, -50), Vec2(120, -50), Vec2(120, 50), Vec2(0, 50)};
  const std::array<Vec2, 4> top_raw = {Vec2(58, 428), Vec2(506, 452), Vec2(497, 22), Vec2(49, 58)};
  const std::array<Vec2, 4> front_raw = {Vec2(35, 445), Vec2(530, 425), Vec2(540, 48), Vec2(28, 30)};
  Rig rig;
  rig.top.plane = Plane::Top;
  rig.front.plane = Plane::Front;
  for (int i = 0; i < 4; ++i) {
    rig.top.fiducials[i] = {top_raw[i], world[i]};
    rig.front.fiducials[i] = {front_raw[i], world[i]};
  }
  calibrate_camera(rig.top);
  calibrate_camera(rig.front);
  return rig;
}

// --- calibration file -----------------------------------------------------

inline nlohmann::json camera_to_json(const CameraModel& c) {
  nlohmann::json j;
  j["plane"] = to_string(c.plane);
  j["raw_size"] = {c.raw_width, c.raw_height};
  j["rect_size"] = {c.rect_width, c.rect_height};
  j["mm_per_px"] = c.mm_per_px;
  j["inlet_px"] = {c.inlet_px.x(), c.inlet_px.y()};
  auto& fids = j["fiducials"] = nlohmann::json::array();
  for (const auto& f : c.fiducials)
    fids.push_back({{"pixel", {f.pixel.x(), f.pixel.y()}}, {"world", {f.world.x(), f.world.y()}}});
  auto& h = j["homography"] = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) h.push_back({c.homography(r, 0), c.homography(r, 1), c.homography(r, 2)});
  return j;
}

// Reads one camera entry. Without a "homography" member the map is fitted
// from the fiducials (the `calibrate` input format).
inline CameraModel camera_from_json(const nlohmann::json& j) {
  try {
    CameraModel c;
    c.plane = plane_from_string(j.at("plane").get<std::string>());
    if (j.contains("raw_size")) {
      c.raw_width = j["raw_size"].at(0).get<int>();
      c.raw_height = j["raw_size"].at(1).get<int>();
    }
    if (j.contains("rect_size")) {
      c.rect_width = j["rect_size"].at(0).get<int>();
      c.rect_height = j["rect_size"].at(1).get<int>();
    }
    c.mm_per_px = j.at("mm_per_px").get<double>();
    c.inlet_px = {j.at("inlet_px").at(0).get<double>(), j.at("inlet_px").at(1).get<double>()};
    const auto& fids = j.at("fiducials");
    if (fids.size() != 4) throw CalibrationError("each camera needs exactly 4 fiducials");
    for (int i = 0; i < 4; ++i) {
      const auto& f = fids.at(i);
      c.fiducials[i].pixel = {f.at("pixel").at(0).get<double>(), f.at("pixel").at(1).get<double>()};
      c.fiducials[i].world = {f.at("world").at(0).get<double>(), f.at("world").at(1).get<double>()};
    }
    if (j.contains("homography")) {
      for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 3; ++col) c.homography(r, col) = j["homography"].at(r).at(col).get<double>();
      c.validate();
    } else {
      calibrate_camera(c);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CalibrationError(std::string("malformed camera entry: ") + e.what());
  }
}

inline nlohmann::json rig_to_json(const Rig& rig) {
  return {{"cameras", {camera_to_json(rig.top), camera_to_json(rig.front)}}};
}

inline Rig rig_from_json(const nlohmann::json& j) {
  if (!j.contains("cameras") || !j["cameras"].is_array())
    throw CalibrationError("calibration needs a \"cameras\" array");
  Rig rig;
  bool have_top = false, have_front = false;
  for (const auto& cj : j["cameras"]) {
    CameraModel c = camera_from_json(cj);
    if (c.plane == Plane::Top) {
      rig.top = c;
      have_top = true;
    } else {
      rig.front = c;
      have_front = true;
    }
  }
  if (!have_top || !have_front) throw CalibrationError("calibration needs both TOP and FRONT cameras");
  return rig;
}

inline Rig load_rig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open calibration file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CalibrationError(path + ": " + e.what());
  }
  return rig_from_json(j);
}

inline void save_rig(const Rig& rig, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write calibration file: " + path);
  out << rig_to_json(rig).dump(2) << '\n';
}

}  // namespace cathtrack
