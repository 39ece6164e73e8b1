// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Camera model and BEV sampling-grid precomputation.
//
// Conventions used throughout the project:
//   * World frame is z-up, meters, ground plane at z = 0.
//   * A camera maps world points via  p = K [R|T] (x, y, z, 1)^T  and
//     pixel = (p_x / p_z, p_y / p_z), depth = p_z.
//   * The BEV grid is cells_x x cells_y full-resolution cells. `origin` is the
//     world position of the CENTER of cell (0,0). The continuous full-grid
//     coordinate of a world point is u = (x - origin) / cell_size, so u == k
//     exactly at the center of cell k.
//   * Level-l BEV cells group 2^(l-2) full-resolution cells per axis. The
//     continuous level-l coordinate is v = u / 2^(l-2).

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msmvd/common.hpp"
#include "msmvd/tensor.hpp"
#include "msmvd/version.hpp"

namespace msmvd {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

struct CameraCalibration {
  int view_id = 0;
  Mat3 intrinsics = Mat3::Identity();   // K, pixels
  Mat3 rotation = Mat3::Identity();     // R, world -> camera
  Vec3 translation = Vec3::Zero();      // T, meters, world -> camera
  int image_height = 0;
  int image_width = 0;

  /// K must be upper-triangular with positive focals and K(2,2) = 1; R must be
  /// a proper rotation. Checked to 1e-6.
  void validate() const {
    const double tol = 1e-6;
    if (std::abs(intrinsics(2, 2) - 1.0) > tol || intrinsics(0, 0) <= 0.0 ||
        intrinsics(1, 1) <= 0.0 || std::abs(intrinsics(1, 0)) > tol ||
        std::abs(intrinsics(2, 0)) > tol || std::abs(intrinsics(2, 1)) > tol) {
      throw DomainError("view " + std::to_string(view_id) +
                        ": K is not an upper-triangular intrinsic matrix");
    }
    const Mat3 rtr = rotation.transpose() * rotation;
    if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > tol)
      throw DomainError("view " + std::to_string(view_id) + ": R is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > tol)
      throw DomainError("view " + std::to_string(view_id) + ": det(R) != 1");
    if (image_height <= 0 || image_width <= 0)
      throw DomainError("view " + std::to_string(view_id) + ": non-positive image size");
  }

  Vec3 camera_center() const { return -rotation.transpose() * translation; }
};

struct BevGridSpec {
  int cells_x = 0;
  int cells_y = 0;
  double cell_size = 0.0;               // meters per full-resolution cell edge
  Vec2 origin = Vec2::Zero();           // world coords of cell (0,0) center
  std::vector<double> heights = default_heights();

  static std::vector<double> default_heights() { return {0.0, 0.3, 0.6, 0.9, 1.2}; }

  void validate() const {
    if (cells_x <= 0 || cells_y <= 0) throw DomainError("BevGridSpec: non-positive cell count");
    if (cell_size <= 0.0) throw DomainError("BevGridSpec: non-positive cell size");
    if (heights.empty()) throw DomainError("BevGridSpec: empty height list");
  }

  /// Level-l grid shape, ceiling division so boundary cells are never dropped.
  int level_cells_x(int level) const { return ceil_div(cells_x, 1 << (level - 2)); }
  int level_cells_y(int level) const { return ceil_div(cells_y, 1 << (level - 2)); }

  /// World position of a continuous full-grid coordinate (u == integer k is
  /// the center of full-resolution cell k).
  Vec2 full_grid_to_world(double u, double v) const {
    return {origin.x() + u * cell_size, origin.y() + v * cell_size};
  }
  Vec2 world_to_full_grid(double x, double y) const {
    return {(x - origin.x()) / cell_size, (y - origin.y()) / cell_size};
  }

  /// World extent spanned by the grid (outer edges of the boundary cells).
  double extent_x() const { return cells_x * cell_size; }
  double extent_y() const { return cells_y * cell_size; }
};

inline void check_level(int level) {
  if (level < 3 || level > 5)
    throw DomainError("pyramid level must be in {3,4,5}, got " + std::to_string(level));
}

/// World (x, y) of the center of level-l BEV cell (i, j): the mean of the
/// centers of the 2^(l-2) x 2^(l-2) full-resolution cells it groups.
inline Vec2 cell_to_world(int i, int j, int level, const BevGridSpec& grid) {
  check_level(level);
  const int s = 1 << (level - 2);
  if (i < 0 || j < 0 || i >= grid.level_cells_x(level) || j >= grid.level_cells_y(level))
    throw DomainError("cell_to_world: cell (" + std::to_string(i) + "," + std::to_string(j) +
                      ") outside level-" + std::to_string(level) + " grid");
  const double half = (s - 1) * 0.5;
  return grid.full_grid_to_world(i * s + half, j * s + half);
}

struct PixelDepth {
  Vec2 pixel;
  double depth;
};

/// Homogeneous pinhole projection p = K [R|T] (x,y,z,1)^T.
inline PixelDepth project_world_to_pixel(const Vec3& point, const CameraCalibration& calib) {
  const Vec3 cam = calib.rotation * point + calib.translation;
  const Vec3 p = calib.intrinsics * cam;
  if (std::abs(p.z()) < 1e-9)
    throw DomainError("project_world_to_pixel: degenerate projection (|depth| < 1e-9)");
  return {Vec2(p.x() / p.z(), p.y() / p.z()), p.z()};
}

/// Non-throwing variant used by grid building, where degenerate cells are
/// masked instead of errored.
inline bool try_project(const Vec3& point, const CameraCalibration& calib, Vec2* pixel,
                        double* depth) {
  const Vec3 cam = calib.rotation * point + calib.translation;
  const Vec3 p = calib.intrinsics * cam;
  if (std::abs(p.z()) < 1e-9) return false;
  *pixel = Vec2(p.x() / p.z(), p.y() / p.z());
  *depth = p.z();
  return true;
}

/// Precomputed image-feature sampling coordinates for one (view, level,
/// height) triple. `shape_level` may differ from `level` under the
/// shared-BEV-resolution ablation, where every feature level is sampled onto
/// the level-3 grid shape.
struct SamplingGrid {
  int level = 3;         // feature pyramid level (stride 2^level)
  int shape_level = 3;   // BEV level whose shape this grid uses
  int height_index = 0;
  int nx = 0, ny = 0;
  std::vector<double> coord_x;      // feature-map x (column), nx*ny row-major
  std::vector<double> coord_y;      // feature-map y (row)
  std::vector<std::uint8_t> valid;  // 1 where the sample is usable

  std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }
  double masked_fraction() const {
    std::size_t off = 0;
    for (auto m : valid) off += (m == 0);
    return size() ? static_cast<double>(off) / static_cast<double>(size()) : 0.0;
  }
};

/// Projects every level-l BEV cell center at heights[height_index] into view
/// feature coordinates (pixel / 2^level). Cells behind the camera or whose
/// feature coordinate leaves [0, W/2^l - 1] x [0, H/2^l - 1] are masked.
inline SamplingGrid build_sampling_grid(const CameraCalibration& calib, int level,
                                        int height_index, const BevGridSpec& grid,
                                        int shape_level = 0) {
  check_level(level);
  if (shape_level == 0) shape_level = level;
  check_level(shape_level);
  if (height_index < 0 || height_index >= static_cast<int>(grid.heights.size()))
    throw DomainError("build_sampling_grid: height index " + std::to_string(height_index) +
                      " outside height list");
  grid.validate();

  SamplingGrid out;
  out.level = level;
  out.shape_level = shape_level;
  out.height_index = height_index;
  out.nx = grid.level_cells_x(shape_level);
  out.ny = grid.level_cells_y(shape_level);
  out.coord_x.resize(out.size());
  out.coord_y.resize(out.size());
  out.valid.assign(out.size(), 0);

  const double stride = static_cast<double>(1 << level);
  const double z = grid.heights[static_cast<std::size_t>(height_index)];
  const double max_fx = calib.image_width / stride - 1.0;
  const double max_fy = calib.image_height / stride - 1.0;

  for (int i = 0; i < out.nx; ++i) {
    for (int j = 0; j < out.ny; ++j) {
      const Vec2 xy = cell_to_world(i, j, shape_level, grid);
      Vec2 pixel;
      double depth = 0.0;
      const std::size_t idx = static_cast<std::size_t>(i) * out.ny + j;
      if (!try_project(Vec3(xy.x(), xy.y(), z), calib, &pixel, &depth)) continue;
      const double fx = pixel.x() / stride;
      const double fy = pixel.y() / stride;
      out.coord_x[idx] = fx;
      out.coord_y[idx] = fy;
      out.valid[idx] = (depth > 0.0 && fx >= 0.0 && fy >= 0.0 && fx <= max_fx && fy <= max_fy);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration file: one key-value record per view.
//
//   view <id>
//   K <9 reals, row-major>
//   R <9 reals, row-major>
//   T <3 reals>
//   size <height> <width>
//
// Blank lines and '#' comments are ignored.
// ---------------------------------------------------------------------------

inline std::string write_calibrations_text(const std::vector<CameraCalibration>& calibs) {
  std::string out = "# msmvd camera calibrations: K row-major (pixels), R row-major\n";
  out += "# (world->camera), T (meters, world->camera), size = height width\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), " %.17g", v);
    out += buf;
  };
  for (const auto& c : calibs) {
    out += "view " + std::to_string(c.view_id) + "\n";
    out += "K";
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) put(c.intrinsics(r, col));
    out += "\nR";
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) put(c.rotation(r, col));
    out += "\nT";
    for (int r = 0; r < 3; ++r) put(c.translation(r));
    out += "\nsize " + std::to_string(c.image_height) + " " + std::to_string(c.image_width) +
           "\n";
  }
  return out;
}

inline std::vector<CameraCalibration> parse_calibrations_text(const std::string& text,
                                                              const std::string& context) {
  std::vector<CameraCalibration> calibs;
  CameraCalibration cur;
  bool open = false;
  std::array<bool, 4> have{};  // K, R, T, size

  auto flush = [&]() {
    if (!open) return;
    if (!(have[0] && have[1] && have[2] && have[3]))
      throw IoError("incomplete calibration record for view " + std::to_string(cur.view_id) +
                    " in " + context);
    cur.validate();
    calibs.push_back(cur);
    open = false;
    have = {};
  };

  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "view") {
      flush();
      if (tok.size() != 2) throw IoError("bad 'view' line in " + context);
      cur = CameraCalibration{};
      cur.view_id = static_cast<int>(parse_long(tok[1], context));
      open = true;
    } else if (tok[0] == "K" || tok[0] == "R") {
      if (!open || tok.size() != 10)
        throw IoError("bad '" + tok[0] + "' line in " + context);
      Mat3& m = (tok[0] == "K") ? cur.intrinsics : cur.rotation;
      for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = parse_double(tok[1 + i], context);
      have[tok[0] == "K" ? 0 : 1] = true;
    } else if (tok[0] == "T") {
      if (!open || tok.size() != 4) throw IoError("bad 'T' line in " + context);
      for (int i = 0; i < 3; ++i) cur.translation(i) = parse_double(tok[1 + i], context);
      have[2] = true;
    } else if (tok[0] == "size") {
      if (!open || tok.size() != 3) throw IoError("bad 'size' line in " + context);
      cur.image_height = static_cast<int>(parse_long(tok[1], context));
      cur.image_width = static_cast<int>(parse_long(tok[2], context));
      have[3] = true;
    } else {
      throw IoError("unknown calibration key '" + tok[0] + "' in " + context);
    }
  }
  flush();
  if (calibs.empty()) throw IoError("no calibration records in " + context);
  return calibs;
}

inline void save_calibrations(const std::filesystem::path& path,
                              const std::vector<CameraCalibration>& calibs) {
  write_file(path, write_calibrations_text(calibs));
}

inline std::vector<CameraCalibration> load_calibrations(const std::filesystem::path& path) {
  return parse_calibrations_text(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Grid set: all sampling grids for a calibration set, plus an on-disk cache.
// ---------------------------------------------------------------------------

inline const std::array<int, 3> kLevels = {3, 4, 5};

/// Per-level BEV shape level actually used: identity normally, all level 3
/// under the shared-resolution ablation.
inline int bev_shape_level(int level, bool shared_bev_resolution) {
  return shared_bev_resolution ? 3 : level;
}

class GridSet {
 public:
  GridSet() = default;

  /// Grids for all (view, level, height) triples. `feature_levels` lists the
  /// image-feature levels to project (all three normally; {5} for the
  /// single-scale baseline, which still lands on the level-3 grid shape).
  GridSet(const std::vector<CameraCalibration>& calibs, const BevGridSpec& grid,
          std::vector<int> feature_levels, std::vector<int> shape_levels) {
    if (feature_levels.size() != shape_levels.size())
      throw ContractError("GridSet: feature/shape level lists differ in length");
    n_views_ = static_cast<int>(calibs.size());
    n_heights_ = static_cast<int>(grid.heights.size());
    feature_levels_ = std::move(feature_levels);
    shape_levels_ = std::move(shape_levels);
    grids_.resize(static_cast<std::size_t>(n_views_) * feature_levels_.size() *
                  static_cast<std::size_t>(n_heights_));
    for (int n = 0; n < n_views_; ++n)
      for (std::size_t li = 0; li < feature_levels_.size(); ++li)
        for (int h = 0; h < n_heights_; ++h)
          grids_[index(n, li, h)] =
              build_sampling_grid(calibs[static_cast<std::size_t>(n)], feature_levels_[li], h,
                                  grid, shape_levels_[li]);
  }

  static GridSet standard(const std::vector<CameraCalibration>& calibs, const BevGridSpec& grid,
                          bool shared_bev_resolution = false) {
    std::vector<int> fl(kLevels.begin(), kLevels.end());
    std::vector<int> sl;
    for (int l : fl) sl.push_back(bev_shape_level(l, shared_bev_resolution));
    return GridSet(calibs, grid, fl, sl);
  }

  /// Baseline mode: only level-5 features, projected at level-3 resolution.
  static GridSet baseline(const std::vector<CameraCalibration>& calibs,
                          const BevGridSpec& grid) {
    return GridSet(calibs, grid, {5}, {3});
  }

  int n_views() const { return n_views_; }
  int n_heights() const { return n_heights_; }
  int n_levels() const { return static_cast<int>(feature_levels_.size()); }
  const std::vector<int>& feature_levels() const { return feature_levels_; }

  const SamplingGrid& at(int view, int level_index, int height_index) const {
    return grids_[index(view, static_cast<std::size_t>(level_index), height_index)];
  }

 private:
  std::size_t index(int view, std::size_t level_index, int height_index) const {
    return (static_cast<std::size_t>(view) * feature_levels_.size() + level_index) *
               static_cast<std::size_t>(n_heights_) +
           static_cast<std::size_t>(height_index);
  }

  int n_views_ = 0;
  int n_heights_ = 0;
  std::vector<int> feature_levels_;
  std::vector<int> shape_levels_;
  std::vector<SamplingGrid> grids_;

  friend std::uint64_t grid_cache_key(const std::vector<CameraCalibration>&, const BevGridSpec&,
                                      const std::vector<int>&, const std::vector<int>&);
  friend void save_grid_cache(const std::filesystem::path&, const GridSet&, std::uint64_t);
  friend std::optional<GridSet> load_grid_cache(const std::filesystem::path&, std::uint64_t);
};

/// Content hash of everything the grids depend on.
inline std::uint64_t grid_cache_key(const std::vector<CameraCalibration>& calibs,
                                    const BevGridSpec& grid,
                                    const std::vector<int>& feature_levels,
                                    const std::vector<int>& shape_levels) {
  Fnv1a h;
  h.update_value(kGridCacheFormatVersion);
  for (const auto& c : calibs) {
    h.update_value(c.view_id);
    for (int i = 0; i < 9; ++i) h.update_value(c.intrinsics(i / 3, i % 3));
    for (int i = 0; i < 9; ++i) h.update_value(c.rotation(i / 3, i % 3));
    for (int i = 0; i < 3; ++i) h.update_value(c.translation(i));
    h.update_value(c.image_height);
    h.update_value(c.image_width);
  }
  h.update_value(grid.cells_x);
  h.update_value(grid.cells_y);
  h.update_value(grid.cell_size);
  h.update_value(grid.origin.x());
  h.update_value(grid.origin.y());
  for (double z : grid.heights) h.update_value(z);
  for (int l : feature_levels) h.update_value(l);
  for (int l : shape_levels) h.update_value(l);
  return h.digest();
}

namespace detail {
template <typename T>
void put_raw(std::string& out, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(v));
}
template <typename T>
T get_raw(const std::string& in, std::size_t& pos) {
  T v;
  if (pos + sizeof(T) > in.size()) throw IoError("truncated binary file");
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}
}  // namespace detail

inline void save_grid_cache(const std::filesystem::path& path, const GridSet& grids,
                            std::uint64_t key) {
  std::string out = "MSGC";
  detail::put_raw(out, kGridCacheFormatVersion);
  detail::put_raw(out, key);
  detail::put_raw(out, grids.n_views_);
  detail::put_raw(out, static_cast<int>(grids.feature_levels_.size()));
  detail::put_raw(out, grids.n_heights_);
  for (int l : grids.feature_levels_) detail::put_raw(out, l);
  for (int l : grids.shape_levels_) detail::put_raw(out, l);
  for (const auto& g : grids.grids_) {
    detail::put_raw(out, g.level);
    detail::put_raw(out, g.shape_level);
    detail::put_raw(out, g.height_index);
    detail::put_raw(out, g.nx);
    detail::put_raw(out, g.ny);
    for (double v : g.coord_x) detail::put_raw(out, v);
    for (double v : g.coord_y) detail::put_raw(out, v);
    out.append(reinterpret_cast<const char*>(g.valid.data()), g.valid.size());
  }
  write_file(path, out);
}

/// Loads a cache if it exists, matches the format version, and was built from
/// the same key. Returns nullopt (never an error) otherwise.
inline std::optional<GridSet> load_grid_cache(const std::filesystem::path& path,
                                              std::uint64_t key) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  const std::string in = read_file(path);
  std::size_t pos = 0;
  if (in.size() < 4 || in.compare(0, 4, "MSGC") != 0) return std::nullopt;
  pos = 4;
  if (detail::get_raw<unsigned>(in, pos) != kGridCacheFormatVersion) return std::nullopt;
  if (detail::get_raw<std::uint64_t>(in, pos) != key) return std::nullopt;
  GridSet gs;
  gs.n_views_ = detail::get_raw<int>(in, pos);
  const int n_levels = detail::get_raw<int>(in, pos);
  gs.n_heights_ = detail::get_raw<int>(in, pos);
  gs.feature_levels_.resize(static_cast<std::size_t>(n_levels));
  gs.shape_levels_.resize(static_cast<std::size_t>(n_levels));
  for (auto& l : gs.feature_levels_) l = detail::get_raw<int>(in, pos);
  for (auto& l : gs.shape_levels_) l = detail::get_raw<int>(in, pos);
  const std::size_t count = static_cast<std::size_t>(gs.n_views_) *
                            static_cast<std::size_t>(n_levels) *
                            static_cast<std::size_t>(gs.n_heights_);
  gs.grids_.resize(count);
  for (auto& g : gs.grids_) {
    g.level = detail::get_raw<int>(in, pos);
    g.shape_level = detail::get_raw<int>(in, pos);
    g.height_index = detail::get_raw<int>(in, pos);
    g.nx = detail::get_raw<int>(in, pos);
    g.ny = detail::get_raw<int>(in, pos);
    g.coord_x.resize(g.size());
    g.coord_y.resize(g.size());
    g.valid.resize(g.size());
    for (auto& v : g.coord_x) v = detail::get_raw<double>(in, pos);
    for (auto& v : g.coord_y) v = detail::get_raw<double>(in, pos);
    if (pos + g.size() > in.size()) throw IoError("truncated grid cache: " + path.string());
    std::memcpy(g.valid.data(), in.data() + pos, g.size());
    pos += g.size();
  }
  return gs;
}

}  // namespace msmvd
