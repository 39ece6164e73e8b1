// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Offline BEV visualization: occupancy heatmaps with detection circles and
// ground-truth crosses, written as PPM images. Also the small binary blob
// format cmd_infer uses to hand maps to cmd_plot.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "msmvd/common.hpp"
#include "msmvd/geometry.hpp"
#include "msmvd/image.hpp"
#include "msmvd/inference.hpp"

namespace msmvd {

/// Compact viridis approximation; input clamped to [0,1].
inline std::array<float, 3> heat_color(double v) {
  static const double stops[9][3] = {
      {0.267, 0.005, 0.329}, {0.283, 0.141, 0.458}, {0.254, 0.265, 0.530},
      {0.207, 0.372, 0.553}, {0.164, 0.471, 0.558}, {0.128, 0.567, 0.551},
      {0.135, 0.659, 0.518}, {0.267, 0.749, 0.441}, {0.993, 0.906, 0.144}};
  v = std::clamp(v, 0.0, 1.0) * 8.0;
  const int lo = std::min(7, static_cast<int>(v));
  const double w = v - lo;
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c)
    out[static_cast<std::size_t>(c)] =
        static_cast<float>(stops[lo][c] + w * (stops[lo + 1][c] - stops[lo][c]));
  return out;
}

namespace detail {
inline void put_pixel(Tensor<float>& img, int y, int x, float r, float g, float b) {
  if (y < 0 || x < 0 || y >= img.dim(1) || x >= img.dim(2)) return;
  img.at(0, y, x) = r;
  img.at(1, y, x) = g;
  img.at(2, y, x) = b;
}

inline void draw_circle(Tensor<float>& img, double cy, double cx, double radius) {
  const int steps = std::max(16, static_cast<int>(radius * 8));
  for (int k = 0; k < steps; ++k) {
    const double a = 2.0 * M_PI * k / steps;
    put_pixel(img, static_cast<int>(std::lround(cy + radius * std::sin(a))),
              static_cast<int>(std::lround(cx + radius * std::cos(a))), 1.0f, 1.0f, 1.0f);
  }
}

inline void draw_cross(Tensor<float>& img, double cy, double cx, int arm) {
  for (int d = -arm; d <= arm; ++d) {
    put_pixel(img, static_cast<int>(std::lround(cy)) + d, static_cast<int>(std::lround(cx)), 1.0f,
              0.25f, 0.25f);
    put_pixel(img, static_cast<int>(std::lround(cy)), static_cast<int>(std::lround(cx)) + d, 1.0f,
              0.25f, 0.25f);
  }
}
}  // namespace detail

/// Renders one occupancy map (1, nx, ny) as a heatmap image. Map rows (x
/// cells) become image rows. `upscale` pixels per cell. Detections are drawn
/// as white circles, ground truth as red crosses, both positioned via their
/// world coordinates.
inline Tensor<float> render_bev_map(const Tensor<float>& map, const BevGridSpec& grid,
                                    int shape_level, int upscale,
                                    const std::vector<Detection>& detections = {},
                                    const std::vector<Annotation>& ground_truth = {}) {
  if (map.dim(0) != 1) throw ContractError("render_bev_map expects a (1,nx,ny) map");
  const int nx = map.dim(1), ny = map.dim(2);
  Tensor<float> img = make_image<float>(nx * upscale, ny * upscale);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const auto c = heat_color(static_cast<double>(map.at(0, i, j)));
      for (int dy = 0; dy < upscale; ++dy)
        for (int dx = 0; dx < upscale; ++dx)
          detail::put_pixel(img, i * upscale + dy, j * upscale + dx, c[0], c[1], c[2]);
    }
  const double scale = static_cast<double>(1 << (shape_level - 2));
  auto to_px = [&](double wx, double wy, double* py, double* px) {
    const Vec2 u = grid.world_to_full_grid(wx, wy);
    *py = (u.x() / scale + 0.5) * upscale;
    *px = (u.y() / scale + 0.5) * upscale;
  };
  for (const auto& gt : ground_truth) {
    double py, px;
    to_px(gt.x, gt.y, &py, &px);
    detail::draw_cross(img, py, px, std::max(2, upscale / 2));
  }
  for (const auto& d : detections) {
    double py, px;
    to_px(d.x, d.y, &py, &px);
    detail::draw_circle(img, py, px, std::max(3.0, upscale * 0.75));
  }
  return img;
}

/// Side-by-side panels with a 2-pixel separator.
inline Tensor<float> compose_panels(const std::vector<Tensor<float>>& panels) {
  if (panels.empty()) throw ContractError("compose_panels: nothing to compose");
  int h = 0, w = 0;
  for (const auto& p : panels) {
    h = std::max(h, p.dim(1));
    w += p.dim(2) + 2;
  }
  w -= 2;
  Tensor<float> out = make_image<float>(h, w, 1.0f);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < p.dim(1); ++y)
        for (int x = 0; x < p.dim(2); ++x) out.at(c, y, x0 + x) = p.at(c, y, x);
    x0 += p.dim(2) + 2;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Map blobs: per-frame occupancy maps dumped at inference time.
// ---------------------------------------------------------------------------

struct MapBlob {
  int frame_id = 0;
  Tensor<float> merged;                    // map detections were extracted from
  std::vector<Tensor<float>> per_level;    // sigmoid maps, pyramid order
  std::vector<int> levels;                 // pyramid level of each entry
};

inline void save_map_blob(const std::filesystem::path& path, const MapBlob& blob) {
  std::string out = "MSMP";
  detail::put_raw(out, kMapBlobFormatVersion);
  detail::put_raw(out, blob.frame_id);
  auto put_map = [&](int level, const Tensor<float>& m) {
    detail::put_raw(out, level);
    detail::put_raw(out, m.dim(1));
    detail::put_raw(out, m.dim(2));
    out.append(reinterpret_cast<const char*>(m.data.data()), m.data.size() * sizeof(float));
  };
  detail::put_raw(out, static_cast<int>(blob.per_level.size()) + 1);
  put_map(0, blob.merged);  // level 0 = merged
  for (std::size_t i = 0; i < blob.per_level.size(); ++i)
    put_map(blob.levels[i], blob.per_level[i]);
  write_file(path, out);
}

inline MapBlob load_map_blob(const std::filesystem::path& path) {
  const std::string in = read_file(path);
  std::size_t pos = 0;
  if (in.size() < 4 || in.compare(0, 4, "MSMP") != 0)
    throw IoError("not a map blob: " + path.string());
  pos = 4;
  if (detail::get_raw<unsigned>(in, pos) != kMapBlobFormatVersion)
    throw IoError("unsupported map blob version: " + path.string());
  MapBlob blob;
  blob.frame_id = detail::get_raw<int>(in, pos);
  const int count = detail::get_raw<int>(in, pos);
  for (int k = 0; k < count; ++k) {
    const int level = detail::get_raw<int>(in, pos);
    const int nx = detail::get_raw<int>(in, pos);
    const int ny = detail::get_raw<int>(in, pos);
    Tensor<float> m({1, nx, ny});
    const std::size_t bytes = m.data.size() * sizeof(float);
    if (pos + bytes > in.size()) throw IoError("truncated map blob: " + path.string());
    std::memcpy(m.data.data(), in.data() + pos, bytes);
    pos += bytes;
    if (level == 0) {
      blob.merged = std::move(m);
    } else {
      blob.levels.push_back(level);
      blob.per_level.push_back(std::move(m));
    }
  }
  if (blob.merged.data.empty()) throw IoError("map blob without merged map: " + path.string());
  return blob;
}

}  // namespace msmvd
