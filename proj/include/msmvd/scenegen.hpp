// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic multi-camera scene generator. Pedestrians are
// flat-colored vertical boxes on a textured ground plane, rendered with
// painter's-algorithm depth ordering; identical (spec, seed) produces
// byte-identical datasets.

#pragma once

#include <algorithm>
#include <array>
#include <json.hpp>
#include <string>
#include <vector>

#include "msmvd/datasets.hpp"
#include "msmvd/geometry.hpp"
#include "msmvd/image.hpp"

namespace msmvd {

class GenerationError : public Error {
 public:
  using Error::Error;
};

enum class CameraLayout { kRing, kTwoSided, kRandomPose };

inline std::string to_string(CameraLayout l) {
  switch (l) {
    case CameraLayout::kRing: return "ring";
    case CameraLayout::kTwoSided: return "two_sided";
    default: return "random_pose";
  }
}

inline CameraLayout camera_layout_from_string(const std::string& s) {
  if (s == "ring") return CameraLayout::kRing;
  if (s == "two_sided") return CameraLayout::kTwoSided;
  if (s == "random_pose") return CameraLayout::kRandomPose;
  throw ConfigError("camera_layout: must be ring|two_sided|random_pose, got '" + s + "'");
}

inline constexpr double kPedestrianHeight = 1.7;
inline constexpr double kPedestrianWidth = 0.4;

struct SceneSpec {
  std::string name = "scene";
  double region_width = 6.4;   // meters, world x
  double region_depth = 6.4;   // meters, world y
  int n_cameras = 4;
  CameraLayout camera_layout = CameraLayout::kRing;
  int n_pedestrians_min = 5;
  int n_pedestrians_max = 10;
  int n_frames = 20;
  int image_height = 96;
  int image_width = 128;
  std::uint64_t seed = 7;
  int cells_x = 64;
  int cells_y = 64;
  double camera_height = 1.9;
  double placement_margin = 0.5;   // keep pedestrians inside the region
  double min_separation = 0.8;     // pairwise pedestrian distance
  double walk_step = 0.25;         // random-walk stddev per frame, meters
  double val_fraction = 0.0;       // tail fraction of frames forming the val split

  void validate() const {
    if (region_width <= 0 || region_depth <= 0) throw ConfigError("region: must be positive");
    if (n_cameras < 2) throw ConfigError("n_cameras: need at least 2 cameras");
    if (n_pedestrians_min < 1 || n_pedestrians_max < n_pedestrians_min)
      throw ConfigError("n_pedestrians: invalid range");
    if (n_frames < 1) throw ConfigError("n_frames: must be >= 1");
    if (image_height % 4 != 0 || image_width % 4 != 0)
      throw ConfigError("image_size: H and W must be divisible by 4");
    if (cells_x <= 0 || cells_y <= 0) throw ConfigError("cells: must be positive");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
      throw ConfigError("val_fraction: must be in [0,1)");
  }

  /// Grid covering exactly the region; origin is the center of cell (0,0).
  BevGridSpec grid() const {
    BevGridSpec g;
    g.cells_x = cells_x;
    g.cells_y = cells_y;
    g.cell_size = region_width / cells_x;
    if (std::abs(region_depth / cells_y - g.cell_size) > 1e-9)
      throw ConfigError("cells: region/cells must give square cells "
                        "(region_width/cells_x == region_depth/cells_y)");
    g.origin = Vec2(g.cell_size / 2.0, g.cell_size / 2.0);
    return g;
  }

  json to_json() const {
    return json{{"name", name},
                {"region", {region_width, region_depth}},
                {"n_cameras", n_cameras},
                {"camera_layout", to_string(camera_layout)},
                {"n_pedestrians", {n_pedestrians_min, n_pedestrians_max}},
                {"n_frames", n_frames},
                {"image_size", {image_height, image_width}},
                {"seed", seed},
                {"cells", {cells_x, cells_y}},
                {"camera_height", camera_height},
                {"placement_margin", placement_margin},
                {"min_separation", min_separation},
                {"walk_step", walk_step},
                {"val_fraction", val_fraction}};
  }

  static SceneSpec from_json(const json& j) {
    SceneSpec s;
    try {
      s.name = j.value("name", s.name);
      if (j.contains("region")) {
        s.region_width = j["region"].at(0).get<double>();
        s.region_depth = j["region"].at(1).get<double>();
      }
      s.n_cameras = j.value("n_cameras", s.n_cameras);
      if (j.contains("camera_layout"))
        s.camera_layout = camera_layout_from_string(j["camera_layout"].get<std::string>());
      if (j.contains("n_pedestrians")) {
        s.n_pedestrians_min = j["n_pedestrians"].at(0).get<int>();
        s.n_pedestrians_max = j["n_pedestrians"].at(1).get<int>();
      }
      s.n_frames = j.value("n_frames", s.n_frames);
      if (j.contains("image_size")) {
        s.image_height = j["image_size"].at(0).get<int>();
        s.image_width = j["image_size"].at(1).get<int>();
      }
      s.seed = j.value("seed", s.seed);
      if (j.contains("cells")) {
        s.cells_x = j["cells"].at(0).get<int>();
        s.cells_y = j["cells"].at(1).get<int>();
      }
      s.camera_height = j.value("camera_height", s.camera_height);
      s.placement_margin = j.value("placement_margin", s.placement_margin);
      s.min_separation = j.value("min_separation", s.min_separation);
      s.walk_step = j.value("walk_step", s.walk_step);
      s.val_fraction = j.value("val_fraction", s.val_fraction);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("scene spec: ") + e.what());
    }
    s.validate();
    return s;
  }
};

// ---------------------------------------------------------------------------
// Camera placement.
// ---------------------------------------------------------------------------

/// World->camera rotation for a camera at `eye` looking at `target`; camera
/// z forward, x right, y down (image rows grow downward).
inline Mat3 look_at_rotation(const Vec3& eye, const Vec3& target) {
  const Vec3 fwd = (target - eye).normalized();
  Vec3 up = Vec3(0, 0, 1);
  if (std::abs(fwd.dot(up)) > 0.999) up = Vec3(0, 1, 0);
  const Vec3 right = fwd.cross(up).normalized();
  const Vec3 down = fwd.cross(right).normalized();
  Mat3 r;
  r.row(0) = right;
  r.row(1) = down;
  r.row(2) = fwd;
  return r;
}

/// Largest focal length that keeps the region (ground to head height) inside
/// the image, ignoring points closer to the camera than `min_dist`: the near
/// corner may clip out of frame (another camera covers it), which keeps the
/// focal long and preserves the large near/far apparent-size disparity.
inline double fit_focal(const Vec3& eye, const Mat3& rot, double region_w, double region_d,
                        int image_h, int image_w, double min_dist) {
  const double cx = (image_w - 1) / 2.0, cy = (image_h - 1) / 2.0;
  const double margin = 2.0;  // pixels
  double f = 1e9;
  const int steps = 16;
  for (int i = 0; i <= steps; ++i)
    for (int j = 0; j <= steps; ++j) {
      const double x = region_w * i / steps, y = region_d * j / steps;
      if (std::hypot(x - eye.x(), y - eye.y()) < min_dist) continue;
      for (double z : {0.0, kPedestrianHeight}) {
        const Vec3 cam = rot * (Vec3(x, y, z) - eye);
        if (cam.z() < 0.05)
          throw GenerationError("camera fit: region point behind camera");
        if (std::abs(cam.x()) > 1e-9) f = std::min(f, (cx - margin) * cam.z() / std::abs(cam.x()));
        if (std::abs(cam.y()) > 1e-9) f = std::min(f, (cy - margin) * cam.z() / std::abs(cam.y()));
      }
    }
  if (f > 1e8 || f <= 0.0) throw GenerationError("camera fit: degenerate focal length");
  return f;
}

inline CameraCalibration make_camera(int view_id, const Vec3& eye, const Vec3& target,
                                     const SceneSpec& spec) {
  CameraCalibration c;
  c.view_id = view_id;
  c.rotation = look_at_rotation(eye, target);
  c.translation = -c.rotation * eye;
  const double min_dist = 0.45 * std::hypot(spec.region_width, spec.region_depth);
  const double f = fit_focal(eye, c.rotation, spec.region_width, spec.region_depth,
                             spec.image_height, spec.image_width, min_dist);
  c.intrinsics = Mat3::Identity();
  c.intrinsics(0, 0) = f;
  c.intrinsics(1, 1) = f;
  c.intrinsics(0, 2) = (spec.image_width - 1) / 2.0;
  c.intrinsics(1, 2) = (spec.image_height - 1) / 2.0;
  c.image_height = spec.image_height;
  c.image_width = spec.image_width;
  c.validate();
  return c;
}

/// Cameras per the layout enum. Focal lengths come from fitting the region to
/// the image, which at desk-scale image sizes produces the intended large
/// near/far apparent-size disparity.
inline std::vector<CameraCalibration> place_cameras(const SceneSpec& spec) {
  spec.validate();
  const double w = spec.region_width, d = spec.region_depth;
  const Vec3 center(w / 2.0, d / 2.0, 0.8);
  const double ring_radius = 1.06 * 0.5 * std::hypot(w, d) + 0.1;
  std::vector<CameraCalibration> out;

  switch (spec.camera_layout) {
    case CameraLayout::kRing: {
      // Evenly spaced, starting at the diagonal so 4 cameras sit at corners.
      for (int i = 0; i < spec.n_cameras; ++i) {
        const double a = M_PI * 1.25 + 2.0 * M_PI * i / spec.n_cameras;
        const Vec3 eye(w / 2.0 + ring_radius * std::cos(a), d / 2.0 + ring_radius * std::sin(a),
                       spec.camera_height);
        out.push_back(make_camera(i, eye, center, spec));
      }
      break;
    }
    case CameraLayout::kTwoSided: {
      // Half along y < 0 looking forward, half along y > depth looking back.
      const int half = (spec.n_cameras + 1) / 2;
      const double standoff = 0.35 * d + 0.3;
      for (int i = 0; i < spec.n_cameras; ++i) {
        const bool far_side = i >= half;
        const int k = far_side ? i - half : i;
        const int row_count = far_side ? spec.n_cameras - half : half;
        const double x = w * (k + 1.0) / (row_count + 1.0);
        const Vec3 eye(x, far_side ? d + standoff : -standoff, spec.camera_height);
        out.push_back(make_camera(i, eye, center, spec));
      }
      break;
    }
    case CameraLayout::kRandomPose: {
      Rng rng = Rng::seeded(spec.seed).fork("cameras");
      for (int i = 0; i < spec.n_cameras; ++i) {
        const double a = rng.uniform(0.0, 2.0 * M_PI);
        const double r = ring_radius * rng.uniform(0.95, 1.25);
        const double h = rng.uniform(2.0, 4.0);
        const Vec3 eye(w / 2.0 + r * std::cos(a), d / 2.0 + r * std::sin(a), h);
        const Vec3 target(w * rng.uniform(0.4, 0.6), d * rng.uniform(0.4, 0.6), 0.8);
        out.push_back(make_camera(i, eye, target, spec));
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering.
// ---------------------------------------------------------------------------

struct Rgb {
  float r, g, b;
};

/// Saturated, id-stable pedestrian color (golden-ratio hue walk). The ground
/// texture stays gray, so rendered pedestrians are exactly color-matchable.
inline Rgb pedestrian_color(int id) {
  const double h = std::fmod(0.12 + id * 0.61803398875, 1.0) * 6.0;
  const double s = 0.72, v = 0.86;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

/// Deterministic gray checker + hash noise, anchored in world coordinates.
inline float ground_shade(double x, double y) {
  const auto cxi = static_cast<std::int64_t>(std::floor(x / 0.5));
  const auto cyi = static_cast<std::int64_t>(std::floor(y / 0.5));
  float base = ((cxi + cyi) & 1) ? 0.55f : 0.38f;
  Fnv1a h;
  h.update_value(static_cast<std::int64_t>(std::floor(x / 0.25)));
  h.update_value(static_cast<std::int64_t>(std::floor(y / 0.25)));
  base += 0.12f * (static_cast<float>(h.digest() % 1024) / 1023.0f - 0.5f);
  return std::clamp(base, 0.0f, 1.0f);
}

namespace detail {

struct Quad {
  std::array<Vec2, 4> pts;
  double min_x, max_x, min_y, max_y;
};

inline bool inside_convex(const Quad& q, double px, double py) {
  // Accept either winding: all cross products share a sign (or are zero).
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Vec2& a = q.pts[static_cast<std::size_t>(i)];
    const Vec2& b = q.pts[static_cast<std::size_t>((i + 1) % 4)];
    const double cr = (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
    if (cr > 1e-12) {
      if (sign < 0) return false;
      sign = 1;
    } else if (cr < -1e-12) {
      if (sign > 0) return false;
      sign = -1;
    }
  }
  return true;
}

inline void fill_quad(Tensor<float>& img, const Quad& q, const Rgb& color) {
  const int H = img.dim(1), W = img.dim(2);
  const int x0 = std::max(0, static_cast<int>(std::floor(q.min_x)));
  const int x1 = std::min(W - 1, static_cast<int>(std::ceil(q.max_x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(q.min_y)));
  const int y1 = std::min(H - 1, static_cast<int>(std::ceil(q.max_y)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside_convex(q, x, y)) {
        img.at(0, y, x) = color.r;
        img.at(1, y, x) = color.g;
        img.at(2, y, x) = color.b;
      }
}

}  // namespace detail

struct Pedestrian {
  int id = 0;
  double x = 0.0, y = 0.0;
};

inline std::array<Vec3, 8> pedestrian_corners(const Pedestrian& p) {
  const double h = kPedestrianWidth / 2.0;
  std::array<Vec3, 8> c;
  int k = 0;
  for (double z : {0.0, kPedestrianHeight})
    for (auto [dx, dy] : {std::pair{-h, -h}, {h, -h}, {h, h}, {-h, h}})
      c[static_cast<std::size_t>(k++)] = Vec3(p.x + dx, p.y + dy, z);
  return c;
}

/// Image-space AABB of the pedestrian box, clipped to the image. Returns false
/// when the box is (partly) behind the camera or fully outside the image.
inline bool pedestrian_bbox(const Pedestrian& p, const CameraCalibration& calib, double* min_x,
                            double* min_y, double* max_x, double* max_y) {
  double mnx = 1e18, mny = 1e18, mxx = -1e18, mxy = -1e18;
  for (const Vec3& corner : pedestrian_corners(p)) {
    Vec2 pix;
    double depth;
    if (!try_project(corner, calib, &pix, &depth) || depth < 0.15) return false;
    mnx = std::min(mnx, pix.x());
    mny = std::min(mny, pix.y());
    mxx = std::max(mxx, pix.x());
    mxy = std::max(mxy, pix.y());
  }
  mnx = std::max(mnx, 0.0);
  mny = std::max(mny, 0.0);
  mxx = std::min(mxx, static_cast<double>(calib.image_width - 1));
  mxy = std::min(mxy, static_cast<double>(calib.image_height - 1));
  if (mnx >= mxx || mny >= mxy) return false;
  *min_x = mnx;
  *min_y = mny;
  *max_x = mxx;
  *max_y = mxy;
  return true;
}

/// Head-to-foot projected pixel height of a pedestrian's vertical axis.
inline double apparent_height(const Pedestrian& p, const CameraCalibration& calib) {
  Vec2 foot, head;
  double d0, d1;
  if (!try_project(Vec3(p.x, p.y, 0.0), calib, &foot, &d0) ||
      !try_project(Vec3(p.x, p.y, kPedestrianHeight), calib, &head, &d1) || d0 <= 0 || d1 <= 0)
    return 0.0;
  return (head - foot).norm();
}

inline Tensor<float> render_view(const CameraCalibration& calib,
                                 const std::vector<Pedestrian>& pedestrians) {
  const int H = calib.image_height, W = calib.image_width;
  Tensor<float> img = make_image<float>(H, W, 0.78f);

  // Ground plane via per-pixel ray casting.
  const Mat3 kinv = calib.intrinsics.inverse();
  const Mat3 rt = calib.rotation.transpose();
  const Vec3 eye = calib.camera_center();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const Vec3 dir = rt * (kinv * Vec3(x, y, 1.0));
      if (dir.z() >= -1e-9) continue;  // ray never reaches the ground
      const double t = -eye.z() / dir.z();
      if (t <= 0) continue;
      const Vec3 hit = eye + t * dir;
      const float shade = ground_shade(hit.x(), hit.y());
      img.at(0, y, x) = shade;
      img.at(1, y, x) = shade;
      img.at(2, y, x) = shade;
    }

  // Painter's algorithm across pedestrians (farther first); all faces of one
  // pedestrian share its flat color, so intra-box order is irrelevant.
  std::vector<std::pair<double, const Pedestrian*>> order;
  for (const auto& p : pedestrians) {
    const Vec3 cam = calib.rotation * Vec3(p.x, p.y, kPedestrianHeight / 2.0) + calib.translation;
    order.emplace_back(cam.z(), &p);
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  static const int kFaces[5][4] = {
      {0, 1, 5, 4}, {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}, {4, 5, 6, 7}};
  for (const auto& [depth, p] : order) {
    const auto corners = pedestrian_corners(*p);
    std::array<Vec2, 8> pix;
    bool ok = true;
    for (int i = 0; i < 8 && ok; ++i) {
      double d;
      ok = try_project(corners[static_cast<std::size_t>(i)], calib, &pix[static_cast<std::size_t>(i)], &d) &&
           d > 0.15;
    }
    if (!ok) continue;  // too close to the image plane; skip in this view
    const Rgb color = pedestrian_color(p->id);
    for (const auto& face : kFaces) {
      detail::Quad q;
      q.min_x = q.min_y = 1e18;
      q.max_x = q.max_y = -1e18;
      for (int i = 0; i < 4; ++i) {
        q.pts[static_cast<std::size_t>(i)] = pix[static_cast<std::size_t>(face[i])];
        q.min_x = std::min(q.min_x, q.pts[static_cast<std::size_t>(i)].x());
        q.max_x = std::max(q.max_x, q.pts[static_cast<std::size_t>(i)].x());
        q.min_y = std::min(q.min_y, q.pts[static_cast<std::size_t>(i)].y());
        q.max_y = std::max(q.max_y, q.pts[static_cast<std::size_t>(i)].y());
      }
      detail::fill_quad(img, q, color);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Pedestrian motion.
// ---------------------------------------------------------------------------

inline bool separated(const std::vector<Pedestrian>& peds, std::size_t self, double x, double y,
                      double min_sep) {
  for (std::size_t k = 0; k < peds.size(); ++k) {
    if (k == self) continue;
    if (std::hypot(peds[k].x - x, peds[k].y - y) < min_sep) return false;
  }
  return true;
}

inline std::vector<Pedestrian> initial_pedestrians(const SceneSpec& spec, int count, Rng& rng) {
  std::vector<Pedestrian> peds;
  const double m = spec.placement_margin;
  for (int i = 0; i < count; ++i) {
    Pedestrian p;
    p.id = i;
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      p.x = rng.uniform(m, spec.region_width - m);
      p.y = rng.uniform(m, spec.region_depth - m);
      placed = separated(peds, peds.size(), p.x, p.y, spec.min_separation);
    }
    if (!placed)
      throw GenerationError("cannot place " + std::to_string(count) +
                            " pedestrians with separation " +
                            std::to_string(spec.min_separation));
    peds.push_back(p);
  }
  return peds;
}

inline void walk_pedestrians(const SceneSpec& spec, std::vector<Pedestrian>& peds, Rng& rng) {
  const double m = spec.placement_margin;
  for (std::size_t i = 0; i < peds.size(); ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double nx =
          std::clamp(peds[i].x + rng.normal(0.0, spec.walk_step), m, spec.region_width - m);
      const double ny =
          std::clamp(peds[i].y + rng.normal(0.0, spec.walk_step), m, spec.region_depth - m);
      if (separated(peds, i, nx, ny, spec.min_separation)) {
        peds[i].x = nx;
        peds[i].y = ny;
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Dataset generation.
// ---------------------------------------------------------------------------

struct DatasetManifest {
  std::filesystem::path path;
  std::uint64_t hash = 0;
  int n_frames = 0;
  int n_views = 0;
  int n_pedestrians = 0;
};

/// Coverage invariant: >= 99% of full-resolution cells must project into at
/// least one camera at ground level.
inline void check_coverage(const std::vector<CameraCalibration>& calibs, const BevGridSpec& grid) {
  long covered = 0;
  const long total = static_cast<long>(grid.cells_x) * grid.cells_y;
  double worst_x = 0, worst_y = 0;
  bool have_uncovered = false;
  for (int i = 0; i < grid.cells_x; ++i)
    for (int j = 0; j < grid.cells_y; ++j) {
      const Vec2 w = grid.full_grid_to_world(i, j);
      bool visible = false;
      for (const auto& c : calibs) {
        Vec2 pix;
        double depth;
        if (!try_project(Vec3(w.x(), w.y(), 0.0), c, &pix, &depth)) continue;
        if (depth > 0 && pix.x() >= 0 && pix.y() >= 0 && pix.x() <= c.image_width - 1 &&
            pix.y() <= c.image_height - 1) {
          visible = true;
          break;
        }
      }
      if (visible) {
        ++covered;
      } else if (!have_uncovered) {
        have_uncovered = true;
        worst_x = w.x();
        worst_y = w.y();
      }
    }
  const double frac = static_cast<double>(covered) / static_cast<double>(total);
  if (frac < 0.99)
    throw GenerationError("camera coverage " + fmt_fixed(frac * 100.0, 1) +
                          "% < 99%; first uncovered cell near world (" + fmt_fixed(worst_x, 2) +
                          ", " + fmt_fixed(worst_y, 2) + ")");
}

/// Intersection-over-smaller of two image boxes >= 0.5 counts as the occlusion
/// event the generator must exhibit when frames have >= 10 pedestrians.
inline bool frame_has_occluded_pair(const std::vector<Pedestrian>& peds,
                                    const std::vector<CameraCalibration>& calibs) {
  for (const auto& c : calibs) {
    std::vector<std::array<double, 4>> boxes;
    for (const auto& p : peds) {
      double x0, y0, x1, y1;
      if (pedestrian_bbox(p, c, &x0, &y0, &x1, &y1)) boxes.push_back({x0, y0, x1, y1});
    }
    for (std::size_t a = 0; a < boxes.size(); ++a)
      for (std::size_t b = a + 1; b < boxes.size(); ++b) {
        const double ix = std::min(boxes[a][2], boxes[b][2]) - std::max(boxes[a][0], boxes[b][0]);
        const double iy = std::min(boxes[a][3], boxes[b][3]) - std::max(boxes[a][1], boxes[b][1]);
        if (ix <= 0 || iy <= 0) continue;
        const double inter = ix * iy;
        const double area_a = (boxes[a][2] - boxes[a][0]) * (boxes[a][3] - boxes[a][1]);
        const double area_b = (boxes[b][2] - boxes[b][0]) * (boxes[b][3] - boxes[b][1]);
        if (inter >= 0.5 * std::min(area_a, area_b)) return true;
      }
  }
  return false;
}

inline DatasetManifest generate_dataset(const SceneSpec& spec,
                                        const std::filesystem::path& out_path) {
  spec.validate();
  const BevGridSpec grid = spec.grid();
  const std::vector<CameraCalibration> calibs = place_cameras(spec);
  check_coverage(calibs, grid);

  const Rng root = Rng::seeded(spec.seed);
  const int n_peds = static_cast<int>(
      root.fork("count").uniform_int(spec.n_pedestrians_min, spec.n_pedestrians_max));

  // Simulate trajectories; when the occlusion invariant applies but no frame
  // exhibits an occluded pair, rerun with an incremented sub-seed.
  std::vector<std::vector<Pedestrian>> trajectory;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 16)
      throw GenerationError("no occluded pedestrian pair after 16 walk attempts");
    trajectory.clear();
    Rng rng = root.fork("walk", attempt);
    std::vector<Pedestrian> peds = initial_pedestrians(spec, n_peds, rng);
    bool occluded = false;
    bool all_visible = true;
    for (int f = 0; f < spec.n_frames; ++f) {
      if (f > 0) walk_pedestrians(spec, peds, rng);
      trajectory.push_back(peds);
      occluded = occluded || frame_has_occluded_pair(peds, calibs);
      for (const auto& p : peds) {
        bool seen = false;
        for (const auto& c : calibs) {
          double x0, y0, x1, y1;
          if (pedestrian_bbox(p, c, &x0, &y0, &x1, &y1)) {
            seen = true;
            break;
          }
        }
        all_visible = all_visible && seen;
      }
    }
    if (!all_visible) continue;           // some pedestrian invisible everywhere
    if (n_peds < 10 || occluded) break;   // invariant satisfied (or not applicable)
  }

  // Write the canonical layout.
  namespace fs = std::filesystem;
  fs::create_directories(out_path / "frames");
  save_calibrations(out_path / "calibrations.txt", calibs);
  write_file(out_path / "scene_spec.json", spec.to_json().dump(2) + "\n");

  std::vector<int> frame_ids, train_ids, val_ids;
  for (int f = 0; f < spec.n_frames; ++f) frame_ids.push_back(f);
  const int n_val = static_cast<int>(std::lround(spec.val_fraction * spec.n_frames));
  for (int f = 0; f < spec.n_frames; ++f)
    (f >= spec.n_frames - n_val ? val_ids : train_ids).push_back(f);
  if (val_ids.empty()) val_ids = train_ids;  // overfit-style default: val == train

  for (int f = 0; f < spec.n_frames; ++f) {
    const auto fdir = out_path / "frames" / frame_dir_name(f);
    fs::create_directories(fdir);
    std::vector<Annotation> anns;
    for (const auto& p : trajectory[static_cast<std::size_t>(f)])
      anns.push_back({p.id, p.x, p.y});
    write_file(fdir / "annotations.txt", write_annotations_text(anns));
    for (std::size_t v = 0; v < calibs.size(); ++v)
      save_ppm(fdir / view_file_name(static_cast<int>(v)),
               render_view(calibs[v], trajectory[static_cast<std::size_t>(f)]));
  }

  json manifest = {{"format", "msmvd-dataset"},
                   {"version", 1},
                   {"name", spec.name},
                   {"n_views", spec.n_cameras},
                   {"n_frames", spec.n_frames},
                   {"image_height", spec.image_height},
                   {"image_width", spec.image_width},
                   {"grid", grid_to_json(grid)},
                   {"frames", frame_ids},
                   {"splits", {{"train", train_ids}, {"val", val_ids}}}};
  write_file(out_path / "manifest.json", manifest.dump(2) + "\n");

  DatasetManifest result;
  result.path = out_path;
  result.hash = dataset_hash(out_path);
  result.n_frames = spec.n_frames;
  result.n_views = spec.n_cameras;
  result.n_pedestrians = n_peds;
  return result;
}

}  // namespace msmvd
