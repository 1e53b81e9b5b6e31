#pragma once

// Per-view catheter extraction:
//   rectify -> smooth + contrast stretch -> adaptive threshold -> clean
//   -> skeletonize -> BFS tip-to-entry trace -> K-point downsample -> mm
//
// Every stage is a pure function of its inputs. An image without a catheter
// produces an empty path, never an exception.

#include "cathtrack/camera.hpp"
#include "cathtrack/errors.hpp"
#include "cathtrack/geometry.hpp"
#include "cathtrack/image.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace cathtrack {

enum class Polarity { DarkObject, BrightObject };

// How fusion pairs TOP and FRONT samples. Aligned matches the shared x
// profile along both paths and resamples by 3D arclength; ViewArclength
// pairs the i-th of K samples taken at each view's own normalized arclength.
enum class Correspondence { Aligned, ViewArclength };

struct PipelineConfig {
  double gauss_sigma = 1.5;
  double stretch_low_pct = 1.0;
  double stretch_high_pct = 99.0;
  int threshold_window = 31;
  int threshold_offset = 10;
  Polarity polarity = Polarity::DarkObject;
  int close_radius = 2;
  int min_area = 50;
  int track_points = 20;             // K
  double inlet_search_radius_px = 20.0;
  int rectify_fill = -1;             // out-of-view level; -1 extends the frame border
  double consistency_gate_mm = 5.0;
  Correspondence correspondence = Correspondence::Aligned;
  int fusion_samples = 256;          // per-view resolution of the aligned match
  bool refine_tip = true;
  bool parallel_views = true;

  void validate() const {
    if (gauss_sigma < 0.0) throw ConfigError("gauss_sigma must be >= 0");
    if (!(stretch_low_pct >= 0.0 && stretch_low_pct < stretch_high_pct && stretch_high_pct <= 100.0))
      throw ConfigError("stretch percentiles must satisfy 0 <= low < high <= 100");
    if (threshold_window < 3 || threshold_window % 2 == 0) throw ConfigError("threshold_window must be odd and >= 3");
    if (close_radius < 0) throw ConfigError("close_radius must be >= 0");
    if (min_area < 0) throw ConfigError("min_area must be >= 0");
    if (track_points < 2) throw ConfigError("track_points (K) must be >= 2");
    if (!(inlet_search_radius_px > 0.0)) throw ConfigError("inlet_search_radius_px must be positive");
    if (rectify_fill < -1 || rectify_fill > 255) throw ConfigError("rectify_fill must be -1 (auto) or 0..255");
    if (!(consistency_gate_mm > 0.0)) throw ConfigError("consistency_gate_mm must be positive");
    if (fusion_samples < 8 || fusion_samples > 4096) throw ConfigError("fusion_samples must be in 8..4096");
  }
};

inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  return {{"gauss_sigma", c.gauss_sigma},
          {"stretch_low_pct", c.stretch_low_pct},
          {"stretch_high_pct", c.stretch_high_pct},
          {"threshold_window", c.threshold_window},
          {"threshold_offset", c.threshold_offset},
          {"polarity", c.polarity == Polarity::DarkObject ? "dark" : "bright"},
          {"close_radius", c.close_radius},
          {"min_area", c.min_area},
          {"track_points", c.track_points},
          {"inlet_search_radius_px", c.inlet_search_radius_px},
          {"rectify_fill", c.rectify_fill},
          {"consistency_gate_mm", c.consistency_gate_mm},
          {"correspondence", c.correspondence == Correspondence::Aligned ? "aligned" : "view_arclength"},
          {"fusion_samples", c.fusion_samples},
          {"refine_tip", c.refine_tip},
          {"parallel_views", c.parallel_views}};
}

// Missing keys keep their defaults; unknown keys are rejected so typos surface.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  const nlohmann::json known = pipeline_config_to_json(c);
  try {
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown pipeline config key: " + key);
    }
    c.gauss_sigma = j.value("gauss_sigma", c.gauss_sigma);
    c.stretch_low_pct = j.value("stretch_low_pct", c.stretch_low_pct);
    c.stretch_high_pct = j.value("stretch_high_pct", c.stretch_high_pct);
    c.threshold_window = j.value("threshold_window", c.threshold_window);
    c.threshold_offset = j.value("threshold_offset", c.threshold_offset);
    const std::string pol = j.value("polarity", std::string("dark"));
    if (pol == "dark")
      c.polarity = Polarity::DarkObject;
    else if (pol == "bright")
      c.polarity = Polarity::BrightObject;
    else
      throw ConfigError("polarity must be \"dark\" or \"bright\"");
    c.close_radius = j.value("close_radius", c.close_radius);
    c.min_area = j.value("min_area", c.min_area);
    c.track_points = j.value("track_points", c.track_points);
    c.inlet_search_radius_px = j.value("inlet_search_radius_px", c.inlet_search_radius_px);
    c.rectify_fill = j.value("rectify_fill", c.rectify_fill);
    c.consistency_gate_mm = j.value("consistency_gate_mm", c.consistency_gate_mm);
    const std::string corr = j.value("correspondence", std::string("aligned"));
    if (corr == "aligned")
      c.correspondence = Correspondence::Aligned;
    else if (corr == "view_arclength")
      c.correspondence = Correspondence::ViewArclength;
    else
      throw ConfigError("correspondence must be \"aligned\" or \"view_arclength\"");
    c.fusion_samples = j.value("fusion_samples", c.fusion_samples);
    c.refine_tip = j.value("refine_tip", c.refine_tip);
    c.parallel_views = j.value("parallel_views", c.parallel_views);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pipeline config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

// --- rectification ------------------------------------------------------------

// Precomputed inverse warp for one camera: for every rectified pixel, the top-left
// raw source pixel and bilinear weights. Reused across frames. Rectified pixels
// whose source lies outside the raw frame keep the edge-clamped sample and are
// flagged so a constant fill can replace them.
class RectifyMap {
 public:
  RectifyMap() = default;
  explicit RectifyMap(const CameraModel& cam)
      : width_(cam.rect_width), height_(cam.rect_height), src_w_(cam.raw_width) {
    cam.validate();
    const Mat3 inv = cam.homography.inverse();
    const std::size_t n = static_cast<std::size_t>(width_) * height_;
    index_.assign(n, 0);
    fx_.assign(n, 0.0f);
    fy_.assign(n, 0.0f);
    inside_.assign(n, 1);
    const double max_x = cam.raw_width - 1, max_y = cam.raw_height - 1;
    for (int v = 0; v < height_; ++v)
      for (int u = 0; u < width_; ++u) {
        const Vec2 s = apply_homography(inv, Vec2(u, v));
        // Snap coordinates that are integral up to rounding noise.
        double sx = std::abs(s.x() - std::round(s.x())) < 1e-9 ? std::round(s.x()) : s.x();
        double sy = std::abs(s.y() - std::round(s.y())) < 1e-9 ? std::round(s.y()) : s.y();
        const std::size_t o = static_cast<std::size_t>(v) * width_ + u;
        if (!(sx >= 0.0 && sy >= 0.0 && sx <= max_x && sy <= max_y)) {
          inside_[o] = 0;
          sx = std::isfinite(sx) ? std::clamp(sx, 0.0, max_x) : 0.0;
          sy = std::isfinite(sy) ? std::clamp(sy, 0.0, max_y) : 0.0;
        }
        int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
        if (x0 == cam.raw_width - 1 && x0 > 0) --x0;
        if (y0 == cam.raw_height - 1 && y0 > 0) --y0;
        index_[o] = y0 * src_w_ + x0;
        fx_[o] = static_cast<float>(sx - x0);
        fy_[o] = static_cast<float>(sy - y0);
      }
  }

  // fill < 0 extends the raw frame's border outward; otherwise out-of-view
  // pixels take the constant `fill`.
  GrayImage apply(const GrayImage& raw, int fill) const {
    GrayImage out(width_, height_);
    const std::uint8_t* src = raw.pixels.data();
    for (std::size_t o = 0; o < index_.size(); ++o) {
      if (fill >= 0 && !inside_[o]) {
        out.pixels[o] = static_cast<std::uint8_t>(fill);
        continue;
      }
      const int i = index_[o];
      const float fx = fx_[o], fy = fy_[o];
      const float top = src[i] + fx * (src[i + 1] - src[i]);
      const float bot = src[i + src_w_] + fx * (src[i + src_w_ + 1] - src[i + src_w_]);
      out.pixels[o] = static_cast<std::uint8_t>(top + fy * (bot - top) + 0.5f);
    }
    return out;
  }

 private:
  int width_ = 0, height_ = 0, src_w_ = 0;
  std::vector<int> index_;
  std::vector<float> fx_, fy_;
  std::vector<std::uint8_t> inside_;
};

// Warp a raw camera image into the rectified metric frame (bilinear). Pixels
// that map outside the source take `fill`, or continue the nearest border
// background when fill is negative.
inline GrayImage rectify(const GrayImage& img, const CameraModel& camera, int fill = -1) {
  if (img.width != camera.raw_width || img.height != camera.raw_height)
    throw ParameterError("rectify: image size does not match camera");
  return RectifyMap(camera).apply(img, fill);
}

// --- preprocessing ------------------------------------------------------------

inline std::vector<float> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += std::exp(-0.5 * i * i / (sigma * sigma));
  for (int i = -radius; i <= radius; ++i)
    k[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)) / sum);
  return k;
}

// Separable Gaussian with clamped borders. sigma == 0 is the identity.
inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma < 0.0) throw ParameterError("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0 || img.empty()) return img;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int w = img.width, h = img.height;
  std::vector<float> tmp(img.pixels.size());
  std::vector<float> padded(static_cast<std::size_t>(w) + 2 * r);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = &img.pixels[static_cast<std::size_t>(y) * w];
    for (int x = 0; x < w + 2 * r; ++x) padded[x] = row[std::clamp(x - r, 0, w - 1)];
    float* out = &tmp[static_cast<std::size_t>(y) * w];
    std::fill(out, out + w, 0.0f);
    for (int i = 0; i <= 2 * r; ++i) {
      const float kv = k[i];
      const float* src = &padded[i];
      for (int x = 0; x < w; ++x) out[x] += kv * src[x];
    }
  }
  GrayImage out(w, h);
  std::vector<float> acc(w);
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0f);
    for (int i = -r; i <= r; ++i) {
      const float kv = k[i + r];
      const float* src = &tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w];
      for (int x = 0; x < w; ++x) acc[x] += kv * src[x];
    }
    std::uint8_t* dst = &out.pixels[static_cast<std::size_t>(y) * w];
    for (int x = 0; x < w; ++x) dst[x] = static_cast<std::uint8_t>(std::clamp(acc[x] + 0.5f, 0.0f, 255.0f));
  }
  return out;
}

// Smallest intensity whose cumulative count reaches pct% of the pixels.
inline int intensity_percentile(const std::array<std::size_t, 256>& hist, std::size_t total, double pct) {
  const double target = pct / 100.0 * static_cast<double>(total);
  std::size_t cum = 0;
  for (int v = 0; v < 256; ++v) {
    cum += hist[v];
    if (static_cast<double>(cum) >= target && cum > 0) return v;
  }
  return 255;
}

// Linear map of [p_low, p_high] percentiles onto [0, 255], clamped. A zero
// intensity range leaves the image unchanged.
inline GrayImage contrast_stretch(const GrayImage& img, double low_pct, double high_pct) {
  if (img.empty()) return img;
  std::array<std::size_t, 256> hist{};
  for (auto p : img.pixels) ++hist[p];
  const int lo = intensity_percentile(hist, img.pixels.size(), low_pct);
  const int hi = intensity_percentile(hist, img.pixels.size(), high_pct);
  if (hi <= lo) return img;
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) {
    const double s = (v - lo) * 255.0 / (hi - lo);
    lut[v] = static_cast<std::uint8_t>(std::clamp(std::lround(s), 0L, 255L));
  }
  GrayImage out = img;
  for (auto& p : out.pixels) p = lut[p];
  return out;
}

inline GrayImage preprocess(const GrayImage& img, double gauss_sigma, double low_pct = 1.0, double high_pct = 99.0) {
  return contrast_stretch(gaussian_blur(img, gauss_sigma), low_pct, high_pct);
}

// --- segmentation -------------------------------------------------------------

// Foreground where the pixel is darker (DarkObject) than the mean of its
// window minus `offset`. The window is clipped at the image border and the
// mean taken over the pixels actually covered. The comparison is done in
// integers (I*n vs S - offset*n) so it is exact.
inline BinaryImage adaptive_threshold(const GrayImage& img, int window, int offset,
                                      Polarity polarity = Polarity::DarkObject) {
  if (window < 3 || window % 2 == 0) throw ParameterError("adaptive_threshold: window must be odd and >= 3");
  if (window > img.width || window > img.height)
    throw ParameterError("adaptive_threshold: window " + std::to_string(window) + " larger than image");
  const int w = img.width, h = img.height, r = window / 2;
  const std::size_t stride = static_cast<std::size_t>(w) + 1;
  std::vector<std::int64_t> integral(stride * (h + 1), 0);
  for (int y = 0; y < h; ++y) {
    std::int64_t row = 0;
    for (int x = 0; x < w; ++x) {
      row += img.pixels[static_cast<std::size_t>(y) * w + x];
      integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
    }
  }
  BinaryImage mask(w, h);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
      const std::int64_t n = static_cast<std::int64_t>(x1 - x0 + 1) * (y1 - y0 + 1);
      const std::int64_t sum = integral[(y1 + 1) * stride + x1 + 1] - integral[y0 * stride + x1 + 1] -
                               integral[(y1 + 1) * stride + x0] + integral[y0 * stride + x0];
      const std::int64_t v = static_cast<std::int64_t>(img.pixels[static_cast<std::size_t>(y) * w + x]) * n;
      const bool fg = polarity == Polarity::DarkObject ? v < sum - offset * n : v > sum + offset * n;
      mask.bits[static_cast<std::size_t>(y) * w + x] = fg ? 1 : 0;
    }
  }
  return mask;
}

namespace detail {

// Dilation by a digital disc. `outside` is the value assumed beyond the border.
// Each row is dilated horizontally once per distinct chord half-width, then the
// output row ORs the shifted rows covering the disc.
inline BinaryImage dilate_disc(const BinaryImage& m, int radius, bool outside) {
  if (radius <= 0) return m;
  const int w = m.width, h = m.height;
  std::vector<int> half(2 * radius + 1);
  for (int dy = -radius; dy <= radius; ++dy)
    half[dy + radius] = static_cast<int>(std::floor(std::sqrt(static_cast<double>(radius * radius - dy * dy)) + 1e-9));

  // horiz[a][y*w + x] = any set pixel in row y within [x-a, x+a]
  std::vector<std::vector<std::uint8_t>> horiz(radius + 1);
  std::vector<int> prefix(static_cast<std::size_t>(w) + 2 * radius + 1);
  for (int a = 0; a <= radius; ++a)
    if (std::find(half.begin(), half.end(), a) != half.end()) horiz[a].resize(m.bits.size());
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = &m.bits[static_cast<std::size_t>(y) * w];
    prefix[0] = 0;
    for (int x = 0; x < w + 2 * radius; ++x) {
      const int sx = x - radius;
      const int v = (sx < 0 || sx >= w) ? (outside ? 1 : 0) : (row[sx] != 0);
      prefix[x + 1] = prefix[x] + v;
    }
    for (int a = 0; a <= radius; ++a) {
      if (horiz[a].empty()) continue;
      std::uint8_t* dst = &horiz[a][static_cast<std::size_t>(y) * w];
      for (int x = 0; x < w; ++x) dst[x] = prefix[x + radius + a + 1] - prefix[x + radius - a] > 0;
    }
  }

  BinaryImage out(w, h);
  for (int y = 0; y < h; ++y) {
    std::uint8_t* dst = &out.bits[static_cast<std::size_t>(y) * w];
    for (int dy = -radius; dy <= radius; ++dy) {
      const int yy = y + dy;
      if (yy < 0 || yy >= h) {
        if (outside) std::fill(dst, dst + w, std::uint8_t{1});
        continue;
      }
      const std::uint8_t* src = &horiz[half[dy + radius]][static_cast<std::size_t>(yy) * w];
      for (int x = 0; x < w; ++x) dst[x] |= src[x];
    }
  }
  return out;
}

inline BinaryImage complement(const BinaryImage& m) {
  BinaryImage out = m;
  for (auto& b : out.bits) b = b ? 0 : 1;
  return out;
}

}  // namespace detail

// Morphological closing by a disc of `radius`. Extensive: mask is a subset of the result.
inline BinaryImage close_disc(const BinaryImage& mask, int radius) {
  if (radius <= 0) return mask;
  const BinaryImage dil = detail::dilate_disc(mask, radius, false);
  // erosion(X) = complement(dilation(complement(X))), beyond-border treated as set
  return detail::complement(detail::dilate_disc(detail::complement(dil), radius, false));
}

// 8-connected component labels (0 = background, 1..n); returns per-label areas
// with areas[0] unused.
inline std::vector<std::size_t> label_components(const BinaryImage& m, std::vector<int>& labels) {
  const int w = m.width, h = m.height;
  labels.assign(m.bits.size(), 0);
  std::vector<std::size_t> areas(1, 0);
  std::vector<int> stack;
  for (int start = 0; start < w * h; ++start) {
    if (!m.bits[start] || labels[start]) continue;
    const int label = static_cast<int>(areas.size());
    std::size_t area = 0;
    labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      ++area;
      const int x = i % w, y = i / w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const int j = ny * w + nx;
          if (m.bits[j] && !labels[j]) {
            labels[j] = label;
            stack.push_back(j);
          }
        }
    }
    areas.push_back(area);
  }
  return areas;
}

// Closing, then drop components smaller than `min_area`, then keep the largest
// survivor (first in scan order on ties). May return an empty mask.
inline BinaryImage clean(const BinaryImage& mask, int close_radius = 2, int min_area = 50) {
  const BinaryImage closed = close_disc(mask, close_radius);
  std::vector<int> labels;
  const auto areas = label_components(closed, labels);
  int best = 0;
  for (std::size_t l = 1; l < areas.size(); ++l) {
    if (areas[l] < static_cast<std::size_t>(min_area)) continue;
    if (best == 0 || areas[l] > areas[best]) best = static_cast<int>(l);
  }
  BinaryImage out(mask.width, mask.height);
  if (best == 0) return out;
  for (std::size_t i = 0; i < labels.size(); ++i) out.bits[i] = labels[i] == best ? 1 : 0;
  return out;
}

// --- thinning -----------------------------------------------------------------

// Zhang-Suen thinning. Iterates both sub-passes until neither removes a pixel,
// so the result is a fixed point (applying it again changes nothing).
inline BinaryImage skeletonize(const BinaryImage& mask) {
  BinaryImage img = mask;
  const int w = img.width, h = img.height;
  auto px = [&](int x, int y) -> int {
    return (x < 0 || y < 0 || x >= w || y >= h) ? 0 : img.bits[static_cast<std::size_t>(y) * w + x];
  };

  std::vector<int> active;
  for (int i = 0; i < w * h; ++i)
    if (img.bits[i]) active.push_back(i);

  std::vector<int> remove;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      remove.clear();
      for (int i : active) {
        if (!img.bits[i]) continue;
        const int x = i % w, y = i / w;
        // P2..P9 clockwise from north
        const int p[8] = {px(x, y - 1), px(x + 1, y - 1), px(x + 1, y), px(x + 1, y + 1),
                          px(x, y + 1), px(x - 1, y + 1), px(x - 1, y), px(x - 1, y - 1)};
        const int b = p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
        if (b < 2 || b > 6) continue;
        int a = 0;
        for (int k = 0; k < 8; ++k) a += (p[k] == 0 && p[(k + 1) % 8] == 1);
        if (a != 1) continue;
        if (pass == 0) {
          if (p[0] * p[2] * p[4] != 0 || p[2] * p[4] * p[6] != 0) continue;
        } else {
          if (p[0] * p[2] * p[6] != 0 || p[0] * p[4] * p[6] != 0) continue;
        }
        remove.push_back(i);
      }
      for (int i : remove) img.bits[i] = 0;
      if (!remove.empty()) {
        changed = true;
        std::erase_if(active, [&](int i) { return img.bits[i] == 0; });
      }
    }
  }
  return img;
}

// --- tracing ------------------------------------------------------------------

inline constexpr std::array<std::array<int, 2>, 8> kNeighbours8 = {
    {{1, 0}, {0, 1}, {-1, 0}, {0, -1}, {1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};

// Tip-first shortest 8-connected path through the skeleton.
//
// The entry is the skeleton pixel nearest `inlet_px`; the tip is the pixel at
// maximal BFS depth from the entry (ties: farther in Euclidean distance, then
// earlier in BFS order). Side branches are excluded because the path is the
// BFS parent chain from tip back to entry.
inline Path2D trace_path(const BinaryImage& skeleton, const Vec2& inlet_px, double max_inlet_distance_px = 20.0) {
  Path2D path;
  path.space = PathSpace::RectPx;
  const int w = skeleton.width, h = skeleton.height;

  int entry = -1;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < w * h; ++i) {
    if (!skeleton.bits[i]) continue;
    const double d = (Vec2(i % w, i / w) - inlet_px).squaredNorm();
    if (d < best) {
      best = d;
      entry = i;
    }
  }
  if (entry < 0) return path;
  if (std::sqrt(best) > max_inlet_distance_px)
    throw TrackingLostError("skeleton is " + std::to_string(std::sqrt(best)) + " px from the inlet (limit " +
                            std::to_string(max_inlet_distance_px) + ")");

  std::vector<int> depth(static_cast<std::size_t>(w) * h, -1);
  std::vector<int> parent(static_cast<std::size_t>(w) * h, -1);
  std::deque<int> queue{entry};
  depth[entry] = 0;
  int tip = entry;
  double tip_dist = 0.0;
  const Vec2 entry_pt(entry % w, entry / w);
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    const int x = i % w, y = i / w;
    const double euclid = (Vec2(x, y) - entry_pt).squaredNorm();
    if (depth[i] > depth[tip] || (depth[i] == depth[tip] && euclid > tip_dist)) {
      tip = i;
      tip_dist = euclid;
    }
    for (const auto& [dx, dy] : kNeighbours8) {
      const int nx = x + dx, ny = y + dy;
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const int j = ny * w + nx;
      if (!skeleton.bits[j] || depth[j] >= 0) continue;
      depth[j] = depth[i] + 1;
      parent[j] = i;
      queue.push_back(j);
    }
  }

  for (int i = tip; i >= 0; i = parent[i]) path.points.emplace_back(i % w, i / w);
  return path;
}

// Thinning retracts stroke ends, by tens of pixels on thick diagonal ends,
// so the traced tip falls short of the real one. From the traced tip, march
// along the tube centreline inside `mask` (1 px steps, re-centred across the
// local width each step) until the end cap is within reach, then stop one
// measured half-width short of the mask edge (the round cap). Marched points
// are prepended, tip first. `lookback` is the number of path steps used for
// the starting direction and the half-width probe.
inline Path2D refine_tip(const Path2D& path, const BinaryImage& mask, int lookback = 4) {
  if (path.points.size() < 3 || mask.bits.empty()) return path;
  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(lookback), path.points.size() - 1);
  Vec2 dir = path.points.front() - path.points[m];
  if (dir.norm() < 1e-9) return path;
  dir.normalize();

  auto inside = [&](const Vec2& q) {
    const int x = static_cast<int>(std::lround(q.x())), y = static_cast<int>(std::lround(q.y()));
    return mask.inside(x, y) && mask.at(x, y);
  };
  constexpr double kStep = 0.25;
  auto run_length = [&](const Vec2& from, const Vec2& d) {
    double t = 0.0;
    while (t < 64.0 && inside(from + (t + kStep) * d)) t += kStep;
    return t;
  };
  auto normal_of = [](const Vec2& d) { return Vec2(-d.y(), d.x()); };

  // Half-width: narrowest cross-section among a few probes behind the tip
  // (chords taken across a bend are too long, never too short).
  double half_width = std::numeric_limits<double>::infinity();
  for (std::size_t p = m; p < std::min(path.points.size() - 1, 3 * m + 1); p += 2) {
    const std::size_t q = std::min(path.points.size() - 1, p + 2);
    Vec2 local = path.points[p > 2 ? p - 2 : 0] - path.points[q];
    if (local.norm() < 1e-9) continue;
    local.normalize();
    const Vec2 n = normal_of(local);
    half_width = std::min(half_width, 0.5 * (run_length(path.points[p], n) + run_length(path.points[p], -n)));
  }
  if (!std::isfinite(half_width)) return path;

  std::vector<Vec2> ahead_pts;  // marched centreline, entry side first
  Vec2 pos = path.points.front();
  Vec2 tip = pos;
  for (int it = 0; it < 512; ++it) {
    const double reach = run_length(pos, dir);
    if (reach <= half_width + 1.0) {
      tip = pos + std::max(0.0, reach - half_width) * dir;
      break;
    }
    Vec2 next = pos + dir;
    const Vec2 n = normal_of(dir);
    next += 0.5 * (run_length(next, n) - run_length(next, -n)) * n;
    if (!inside(next)) break;
    const Vec2 moved = next - pos;
    if (moved.norm() < 1e-9) break;
    dir = (dir + moved.normalized()).normalized();
    pos = next;
    tip = pos;
    ahead_pts.push_back(pos);
  }
  if ((tip - path.points.front()).norm() <= 0.5) return path;
  if (!ahead_pts.empty() && (tip - ahead_pts.back()).norm() <= 1e-9) ahead_pts.pop_back();

  Path2D out;
  out.space = path.space;
  out.points.reserve(path.points.size() + ahead_pts.size() + 1);
  out.points.push_back(tip);
  out.points.insert(out.points.end(), ahead_pts.rbegin(), ahead_pts.rend());
  out.points.insert(out.points.end(), path.points.begin(), path.points.end());
  return out;
}

// K points: the exact tip, the exact entry and K-2 points at uniform arclength between.
inline Path2D downsample(const Path2D& path, int k) {
  if (k < 2) throw ParameterError("downsample: K must be >= 2");
  if (path.points.size() < 2) throw ParameterError("downsample: path needs at least 2 points");
  Path2D out;
  out.space = path.space;
  out.points = resample_uniform(path.points, static_cast<std::size_t>(k));
  return out;
}

inline Path2D px_to_mm(const Path2D& path, const CameraModel& camera) {
  Path2D out;
  out.space = PathSpace::Mm;
  out.points.reserve(path.points.size());
  for (const auto& p : path.points) out.points.push_back(camera.rect_to_world(p));
  return out;
}

inline Path2D mm_to_px(const Path2D& path, const CameraModel& camera) {
  Path2D out;
  out.space = PathSpace::RectPx;
  out.points.reserve(path.points.size());
  for (const auto& p : path.points) out.points.push_back(camera.world_to_rect(p));
  return out;
}

// --- per-view pipeline ----------------------------------------------------------

// Intermediate products of one view, kept for diagnostics and benchmarking.
struct ViewStages {
  GrayImage rectified;
  GrayImage enhanced;
  BinaryImage mask;
  BinaryImage cleaned;
  BinaryImage skeleton;
  Path2D traced;   // rect px, 8-connected BFS path
  Path2D refined;  // traced with the marched tip prepended
  Path2D dense_mm; // refined, in mm
  Path2D path_mm;  // K points, empty when no catheter is visible
};

class ViewProcessor {
 public:
  ViewProcessor(CameraModel camera, PipelineConfig cfg)
      : camera_(std::move(camera)), cfg_(cfg), map_(camera_) {
    cfg_.validate();
  }

  const CameraModel& camera() const { return camera_; }
  const PipelineConfig& config() const { return cfg_; }

  GrayImage rectify(const GrayImage& raw) const {
    if (raw.width != camera_.raw_width || raw.height != camera_.raw_height)
      throw ParameterError(std::string(to_string(camera_.plane)) + ": frame size does not match calibration");
    return map_.apply(raw, cfg_.rectify_fill);
  }
  GrayImage enhance(const GrayImage& rect) const {
    return preprocess(rect, cfg_.gauss_sigma, cfg_.stretch_low_pct, cfg_.stretch_high_pct);
  }
  BinaryImage segment(const GrayImage& enhanced) const {
    return adaptive_threshold(enhanced, cfg_.threshold_window, cfg_.threshold_offset, cfg_.polarity);
  }
  BinaryImage cleanup(const BinaryImage& mask) const { return clean(mask, cfg_.close_radius, cfg_.min_area); }
  Path2D trace(const BinaryImage& skel) const {
    return trace_path(skel, camera_.inlet_px, cfg_.inlet_search_radius_px);
  }
  Path2D refine(const Path2D& traced, const BinaryImage& cleaned) const {
    return cfg_.refine_tip ? refine_tip(traced, cleaned) : traced;
  }
  Path2D to_track(const Path2D& traced) const {
    if (traced.points.size() < 2) return Path2D{{}, PathSpace::Mm};
    return px_to_mm(downsample(traced, cfg_.track_points), camera_);
  }

  ViewStages run_stages(const GrayImage& raw) const {
    ViewStages s;
    s.rectified = rectify(raw);
    s.enhanced = enhance(s.rectified);
    s.mask = segment(s.enhanced);
    s.cleaned = cleanup(s.mask);
    s.skeleton = skeletonize(s.cleaned);
    s.traced = trace(s.skeleton);
    s.refined = refine(s.traced, s.cleaned);
    s.dense_mm = px_to_mm(s.refined, camera_);
    s.path_mm = to_track(s.refined);
    return s;
  }

  // K-point mm path, tip first; empty when no catheter is visible.
  Path2D run(const GrayImage& raw) const { return run_stages(raw).path_mm; }

  // Full-resolution mm path (what fusion consumes); empty when no catheter.
  Path2D run_dense(const GrayImage& raw) const {
    const ViewStages s = run_stages(raw);
    return s.path_mm.empty() ? s.path_mm : s.dense_mm;
  }

 private:
  CameraModel camera_;
  PipelineConfig cfg_;
  RectifyMap map_;
};

}  // namespace cathtrack
