// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Canonical dataset layout, lazy loaders, training targets, augmentation, and
// adapters from the public multi-view dataset layouts. The on-disk format is
// documented in docs/DATA_FORMAT.md.

#pragma once

#include <algorithm>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msmvd/geometry.hpp"
#include "msmvd/image.hpp"
#include "msmvd/tensor.hpp"

namespace msmvd {

using nlohmann::json;

struct Annotation {
  int pedestrian_id = 0;
  double x = 0.0, y = 0.0;  // world meters
};

struct Frame {
  int frame_id = 0;
  std::vector<Tensor<float>> images;  // N views, (3,H,W), values in [0,1]
  std::vector<Annotation> annotations;
};

// ---------------------------------------------------------------------------
// Training targets: Gaussian occupancy + discretization-offset maps.
// ---------------------------------------------------------------------------

template <typename T>
struct TargetMaps {
  int level = 3;
  int shape_level = 3;
  Tensor<T> occupancy;              // (1, nx, ny), peaks exactly 1
  Tensor<T> offset;                 // (2, nx, ny), defined at pos cells
  std::vector<std::uint8_t> pos_mask;
  int n_pos = 0;
  int skipped = 0;                  // annotations outside the grid

  int nx() const { return occupancy.dim(1); }
  int ny() const { return occupancy.dim(2); }
};

/// Gaussian kernel diameter per level, in that level's own cell units, so the
/// metric footprint stays comparable across map resolutions.
inline int gaussian_diameter(int level) {
  switch (level) {
    case 3: return 20;
    case 4: return 10;
    case 5: return 5;
    default: check_level(level); return 0;
  }
}

/// Builds the level-l ground truth. Each annotation lands at continuous
/// level-l cell coordinate v = (world - origin) / (cell_size * 2^(l-2)); the
/// floor cell becomes a positive with occupancy 1 and offset frac(v), and an
/// integer-centered Gaussian (sigma = diameter/6, truncated at the diameter)
/// is splatted around it, combining overlaps by max.
template <typename T>
TargetMaps<T> make_target_maps(const std::vector<Annotation>& annotations, int level,
                               const BevGridSpec& grid, int shape_level = 0) {
  check_level(level);
  if (shape_level == 0) shape_level = level;
  check_level(shape_level);
  grid.validate();

  TargetMaps<T> t;
  t.level = level;
  t.shape_level = shape_level;
  const int nx = grid.level_cells_x(shape_level), ny = grid.level_cells_y(shape_level);
  t.occupancy = Tensor<T>({1, nx, ny}, T(0));
  t.offset = Tensor<T>({2, nx, ny}, T(0));
  t.pos_mask.assign(static_cast<std::size_t>(nx) * ny, 0);

  const double scale = static_cast<double>(1 << (shape_level - 2));
  const int diameter = gaussian_diameter(level);
  const int radius = diameter / 2;
  const double sigma = diameter / 6.0;
  const double denom = 2.0 * sigma * sigma;

  for (const auto& a : annotations) {
    const Vec2 u = grid.world_to_full_grid(a.x, a.y);
    const double vi = u.x() / scale, vj = u.y() / scale;
    const int ci = static_cast<int>(std::floor(vi)), cj = static_cast<int>(std::floor(vj));
    if (ci < 0 || cj < 0 || ci >= nx || cj >= ny) {
      ++t.skipped;
      continue;
    }
    const std::size_t idx = static_cast<std::size_t>(ci) * ny + cj;
    if (!t.pos_mask[idx]) {
      t.pos_mask[idx] = 1;
      ++t.n_pos;
    }
    t.occupancy.at(0, ci, cj) = T(1);
    t.offset.at(0, ci, cj) = static_cast<T>(vi - ci);
    t.offset.at(1, ci, cj) = static_cast<T>(vj - cj);
    for (int di = -radius; di <= radius; ++di) {
      const int i = ci + di;
      if (i < 0 || i >= nx) continue;
      for (int dj = -radius; dj <= radius; ++dj) {
        const int j = cj + dj;
        if (j < 0 || j >= ny) continue;
        const T g = static_cast<T>(std::exp(-(di * di + dj * dj) / denom));
        t.occupancy.at(0, i, j) = std::max(t.occupancy.at(0, i, j), g);
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Training-time augmentation: per-view random resize by s in [lo, hi], then
// crop or pad back to (H, W), with the view intrinsics adjusted to keep the
// world->pixel mapping exact. World-space annotations are untouched.
// ---------------------------------------------------------------------------

struct AugmentedView {
  Tensor<float> image;
  Mat3 intrinsics;
};

inline AugmentedView augment_view(const Tensor<float>& image, const Mat3& intrinsics,
                                  double scale, int offset_x, int offset_y) {
  const int H = image.dim(1), W = image.dim(2);
  Tensor<float> resized = resize_by_scale(image, scale);
  const int rh = resized.dim(1), rw = resized.dim(2);

  Tensor<float> out({3, H, W}, 0.0f);
  // crop when the resized image is larger, pad (shift) when smaller
  const int sx = rw >= W ? -offset_x : offset_x;
  const int sy = rh >= H ? -offset_y : offset_y;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y) {
      const int ry = y - sy;
      if (ry < 0 || ry >= rh) continue;
      for (int x = 0; x < W; ++x) {
        const int rx = x - sx;
        if (rx < 0 || rx >= rw) continue;
        out.at(c, y, x) = resized.at(c, ry, rx);
      }
    }

  // pixel' = s * pixel + shift  =>  K' = A K
  Mat3 a = Mat3::Identity();
  a(0, 0) = scale;
  a(1, 1) = scale;
  a(0, 2) = sx;
  a(1, 2) = sy;
  return {std::move(out), a * intrinsics};
}

/// Per-view independent scale and crop/pad offsets drawn from `rng`.
inline std::pair<Frame, std::vector<CameraCalibration>> augment(
    const Frame& frame, const std::vector<CameraCalibration>& calibs, Rng& rng,
    double scale_lo = 0.8, double scale_hi = 1.2) {
  if (frame.images.size() != calibs.size())
    throw ContractError("augment: image/calibration count mismatch");
  Frame out;
  out.frame_id = frame.frame_id;
  out.annotations = frame.annotations;
  std::vector<CameraCalibration> new_calibs = calibs;
  for (std::size_t v = 0; v < frame.images.size(); ++v) {
    const double s = rng.uniform(scale_lo, scale_hi);
    const int H = frame.images[v].dim(1), W = frame.images[v].dim(2);
    const int rh = std::max(1, static_cast<int>(std::lround(H * s)));
    const int rw = std::max(1, static_cast<int>(std::lround(W * s)));
    const int oy = static_cast<int>(rng.uniform_int(0, std::abs(rh - H)));
    const int ox = static_cast<int>(rng.uniform_int(0, std::abs(rw - W)));
    auto aug = augment_view(frame.images[v], calibs[v].intrinsics, s, ox, oy);
    out.images.push_back(std::move(aug.image));
    new_calibs[v].intrinsics = aug.intrinsics;
  }
  return {std::move(out), std::move(new_calibs)};
}

// ---------------------------------------------------------------------------
// Canonical dataset.
// ---------------------------------------------------------------------------

inline std::string frame_dir_name(int frame_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d", frame_id);
  return buf;
}

inline std::string view_file_name(int view) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%02d.ppm", view);
  return buf;
}

inline std::string write_annotations_text(const std::vector<Annotation>& annotations) {
  std::string out = "# pedestrian_id world_x world_y (meters)\n";
  char buf[96];
  for (const auto& a : annotations) {
    std::snprintf(buf, sizeof(buf), "%d %.17g %.17g\n", a.pedestrian_id, a.x, a.y);
    out += buf;
  }
  return out;
}

inline std::vector<Annotation> parse_annotations_text(const std::string& text,
                                                      const std::string& context) {
  std::vector<Annotation> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 3) throw IoError("bad annotation line '" + line + "' in " + context);
    Annotation a;
    a.pedestrian_id = static_cast<int>(parse_long(tok[0], context));
    a.x = parse_double(tok[1], context);
    a.y = parse_double(tok[2], context);
    out.push_back(a);
  }
  return out;
}

inline json grid_to_json(const BevGridSpec& g) {
  return json{{"cells_x", g.cells_x},
              {"cells_y", g.cells_y},
              {"cell_size", g.cell_size},
              {"origin", {g.origin.x(), g.origin.y()}},
              {"heights", g.heights}};
}

inline BevGridSpec grid_from_json(const json& j) {
  BevGridSpec g;
  g.cells_x = j.at("cells_x").get<int>();
  g.cells_y = j.at("cells_y").get<int>();
  g.cell_size = j.at("cell_size").get<double>();
  g.origin = Vec2(j.at("origin").at(0).get<double>(), j.at("origin").at(1).get<double>());
  g.heights = j.value("heights", BevGridSpec::default_heights());
  g.validate();
  return g;
}

class Dataset {
 public:
  explicit Dataset(const std::filesystem::path& root) : root_(root) {
    const auto manifest_path = root / "manifest.json";
    json m;
    try {
      m = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
      throw IoError("corrupt manifest " + manifest_path.string() + ": " + e.what());
    }
    try {
      if (m.value("format", "") != "msmvd-dataset")
        throw IoError("not an msmvd dataset manifest");
      n_views_ = m.at("n_views").get<int>();
      image_height_ = m.at("image_height").get<int>();
      image_width_ = m.at("image_width").get<int>();
      grid_ = grid_from_json(m.at("grid"));
      frame_ids_ = m.at("frames").get<std::vector<int>>();
      if (m.contains("splits")) {
        train_ids_ = m["splits"].value("train", frame_ids_);
        val_ids_ = m["splits"].value("val", frame_ids_);
      } else {
        train_ids_ = frame_ids_;
        val_ids_ = frame_ids_;
      }
    } catch (const json::exception& e) {
      throw IoError("corrupt manifest " + manifest_path.string() + ": " + e.what());
    }
    calibrations_ = load_calibrations(root / "calibrations.txt");
    if (static_cast<int>(calibrations_.size()) != n_views_)
      throw IoError("calibration/view-count mismatch in " + root.string() + ": manifest says " +
                    std::to_string(n_views_) + " views, calibration file has " +
                    std::to_string(calibrations_.size()));
    for (const auto& c : calibrations_)
      if (c.image_height != image_height_ || c.image_width != image_width_)
        throw IoError("calibration image size mismatch for view " + std::to_string(c.view_id) +
                      " in " + root.string());
  }

  const std::filesystem::path& root() const { return root_; }
  int n_views() const { return n_views_; }
  int image_height() const { return image_height_; }
  int image_width() const { return image_width_; }
  const BevGridSpec& grid() const { return grid_; }
  const std::vector<CameraCalibration>& calibrations() const { return calibrations_; }
  const std::vector<int>& frame_ids() const { return frame_ids_; }
  const std::vector<int>& train_ids() const { return train_ids_; }
  const std::vector<int>& val_ids() const { return val_ids_; }
  std::size_t size() const { return frame_ids_.size(); }

  std::filesystem::path frame_dir(int frame_id) const {
    return root_ / "frames" / frame_dir_name(frame_id);
  }

  /// Annotations only (cheap; cached).
  const std::vector<Annotation>& annotations(int frame_id) const {
    auto it = annotation_cache_.find(frame_id);
    if (it != annotation_cache_.end()) return it->second;
    const auto path = frame_dir(frame_id) / "annotations.txt";
    auto anns = parse_annotations_text(read_file(path), path.string());
    // u spans [-0.5, cells-0.5] across the grid region; outside is a world
    // position the BEV map cannot represent.
    for (const auto& a : anns) {
      const Vec2 u = grid_.world_to_full_grid(a.x, a.y);
      if (u.x() < -0.5 || u.y() < -0.5 || u.x() > grid_.cells_x - 0.5 ||
          u.y() > grid_.cells_y - 0.5)
        throw IoError("annotation for pedestrian " + std::to_string(a.pedestrian_id) +
                      " outside the grid region in " + path.string());
    }
    return annotation_cache_.emplace(frame_id, std::move(anns)).first->second;
  }

  /// Full frame with view images loaded from disk.
  Frame frame(int frame_id) const {
    Frame f;
    f.frame_id = frame_id;
    f.annotations = annotations(frame_id);
    for (int v = 0; v < n_views_; ++v) {
      const auto path = frame_dir(frame_id) / view_file_name(v);
      if (!std::filesystem::exists(path))
        throw IoError("missing view image " + path.string());
      auto img = load_ppm<float>(path);
      if (img.dim(1) != image_height_ || img.dim(2) != image_width_)
        throw IoError("view image size mismatch: " + path.string());
      f.images.push_back(std::move(img));
    }
    return f;
  }

 private:
  std::filesystem::path root_;
  int n_views_ = 0;
  int image_height_ = 0, image_width_ = 0;
  BevGridSpec grid_;
  std::vector<CameraCalibration> calibrations_;
  std::vector<int> frame_ids_, train_ids_, val_ids_;
  mutable std::map<int, std::vector<Annotation>> annotation_cache_;
};

inline Dataset load_dataset(const std::filesystem::path& path) { return Dataset(path); }

/// FNV-1a over every dataset payload file (sorted relative paths + bytes).
/// Run manifests are excluded: they carry wall-clock metadata.
inline std::uint64_t dataset_hash(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    if (e.path().filename() == "run_manifest.json") continue;
    files.push_back(std::filesystem::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  Fnv1a h;
  for (const auto& rel : files) {
    h.update(rel.generic_string());
    h.update(read_file(root / rel));
  }
  return h.digest();
}

// ---------------------------------------------------------------------------
// Adapters for the community layout shared by Wildtrack / MultiviewX / GMVD
// scenes: OpenCV-XML camera files plus positionID-indexed JSON annotations.
// ---------------------------------------------------------------------------

struct PublicDatasetPreset {
  std::string name;
  int cells_x, cells_y;
  double cell_size;
  Vec2 origin;  // world coords of grid cell (0,0) center
};

inline PublicDatasetPreset wildtrack_preset() {
  return {"wildtrack", 480, 1440, 0.025, Vec2(-3.0, -9.0)};
}
inline PublicDatasetPreset multiviewx_preset() {
  return {"multiviewx", 640, 1000, 0.025, Vec2(0.0, 0.0)};
}

inline PublicDatasetPreset public_preset(const std::string& name) {
  if (name == "wildtrack") return wildtrack_preset();
  if (name == "multiviewx" || name == "gmvd") return multiviewx_preset();
  throw ConfigError("unknown public dataset preset: " + name);
}

/// positionID -> world meters: the public sets enumerate grid cells row-major
/// with x varying fastest (pos % cells_x).
inline Vec2 position_id_to_world(long pos, const PublicDatasetPreset& p) {
  const long gx = pos % p.cells_x;
  const long gy = pos / p.cells_x;
  if (gy >= p.cells_y || pos < 0)
    throw DomainError("positionID " + std::to_string(pos) + " outside the " + p.name + " grid");
  return {p.origin.x() + p.cell_size * static_cast<double>(gx),
          p.origin.y() + p.cell_size * static_cast<double>(gy)};
}

namespace detail {
/// Extracts the float list inside <key>...<data> ... </data>...</key> of an
/// OpenCV XML storage file. Covers exactly the structure the public
/// calibration files use; not a general XML parser.
inline std::vector<double> xml_matrix_data(const std::string& xml, const std::string& key,
                                           const std::string& context) {
  // The opening tag may carry attributes (<camera_matrix type_id="...">).
  auto kpos = xml.find("<" + key + ">");
  if (kpos == std::string::npos) kpos = xml.find("<" + key + " ");
  if (kpos == std::string::npos)
    throw IoError("calibration key <" + key + "> not found in " + context);
  const auto dpos = xml.find("<data>", kpos);
  const auto dend = xml.find("</data>", kpos);
  if (dpos == std::string::npos || dend == std::string::npos || dend < dpos)
    throw IoError("malformed <data> for <" + key + "> in " + context);
  std::vector<double> out;
  for (const auto& tok : split_ws(xml.substr(dpos + 6, dend - dpos - 6)))
    out.push_back(parse_double(tok, context));
  return out;
}
}  // namespace detail

/// Rodrigues rotation-vector to matrix (the extrinsic files store rvec/tvec).
inline Mat3 rodrigues(const Vec3& rvec) {
  const double theta = rvec.norm();
  if (theta < 1e-12) return Mat3::Identity();
  const Vec3 a = rvec / theta;
  Mat3 k;
  k << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
}

inline CameraCalibration parse_public_calibration(const std::string& intrinsic_xml,
                                                  const std::string& extrinsic_xml,
                                                  int view_id, int image_height,
                                                  int image_width,
                                                  const std::string& context) {
  const auto km = detail::xml_matrix_data(intrinsic_xml, "camera_matrix", context);
  if (km.size() != 9) throw IoError("camera_matrix is not 3x3 in " + context);
  const auto rv = detail::xml_matrix_data(extrinsic_xml, "rvec", context);
  const auto tv = detail::xml_matrix_data(extrinsic_xml, "tvec", context);
  if (rv.size() != 3 || tv.size() != 3) throw IoError("rvec/tvec are not 3-vectors in " + context);
  CameraCalibration c;
  c.view_id = view_id;
  for (int i = 0; i < 9; ++i) c.intrinsics(i / 3, i % 3) = km[static_cast<std::size_t>(i)];
  c.rotation = rodrigues(Vec3(rv[0], rv[1], rv[2]));
  c.translation = Vec3(tv[0], tv[1], tv[2]);
  c.image_height = image_height;
  c.image_width = image_width;
  c.validate();
  return c;
}

/// Converts an MVDet-style directory tree (Image_subsets/C*/, calibrations/
/// {intrinsic,extrinsic}/*.xml, annotations_positions/*.json) into the
/// canonical layout. View images must already be PPM; the public sets ship
/// PNG, which needs a one-off external conversion (see docs/DATA_FORMAT.md).
/// Lens distortion coefficients in the source files are ignored.
inline void convert_public_dataset(const std::filesystem::path& src,
                                   const std::filesystem::path& dst,
                                   const PublicDatasetPreset& preset, int image_height,
                                   int image_width) {
  namespace fs = std::filesystem;
  auto sorted_files = [](const fs::path& dir, const std::string& ext) {
    std::vector<fs::path> out;
    if (!fs::exists(dir)) throw IoError("missing directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
  };

  const auto intr = sorted_files(src / "calibrations" / "intrinsic", ".xml");
  const auto extr = sorted_files(src / "calibrations" / "extrinsic", ".xml");
  if (intr.empty() || intr.size() != extr.size())
    throw IoError("calibration xml count mismatch under " + src.string());
  std::vector<CameraCalibration> calibs;
  for (std::size_t v = 0; v < intr.size(); ++v)
    calibs.push_back(parse_public_calibration(read_file(intr[v]), read_file(extr[v]),
                                              static_cast<int>(v), image_height, image_width,
                                              intr[v].string()));

  const auto ann_files = sorted_files(src / "annotations_positions", ".json");
  if (ann_files.empty()) throw IoError("no annotation json files under " + src.string());

  // View image directories C1..Cn.
  std::vector<fs::path> view_dirs;
  for (std::size_t v = 1; v <= calibs.size(); ++v) {
    fs::path d = src / "Image_subsets" / ("C" + std::to_string(v));
    if (!fs::exists(d)) throw IoError("missing view image directory: " + d.string());
    view_dirs.push_back(d);
  }

  fs::create_directories(dst / "frames");
  save_calibrations(dst / "calibrations.txt", calibs);

  BevGridSpec grid;
  grid.cells_x = preset.cells_x;
  grid.cells_y = preset.cells_y;
  grid.cell_size = preset.cell_size;
  grid.origin = preset.origin;

  std::vector<int> frame_ids;
  for (std::size_t fi = 0; fi < ann_files.size(); ++fi) {
    const int frame_id = static_cast<int>(parse_long(ann_files[fi].stem().string(),
                                                     ann_files[fi].string()));
    frame_ids.push_back(frame_id);
    json anns;
    try {
      anns = json::parse(read_file(ann_files[fi]));
    } catch (const json::exception& e) {
      throw IoError("corrupt annotation json " + ann_files[fi].string() + ": " + e.what());
    }
    std::vector<Annotation> out;
    for (const auto& a : anns) {
      Annotation an;
      an.pedestrian_id = a.at("personID").get<int>();
      const Vec2 w = position_id_to_world(a.at("positionID").get<long>(), preset);
      an.x = w.x();
      an.y = w.y();
      out.push_back(an);
    }
    const auto fdir = dst / "frames" / frame_dir_name(frame_id);
    fs::create_directories(fdir);
    write_file(fdir / "annotations.txt", write_annotations_text(out));
    for (std::size_t v = 0; v < view_dirs.size(); ++v) {
      const fs::path img = view_dirs[v] / (ann_files[fi].stem().string() + ".ppm");
      if (!fs::exists(img))
        throw IoError("missing view image " + img.string() +
                      " (public images must be converted to PPM first)");
      fs::copy_file(img, fdir / view_file_name(static_cast<int>(v)),
                    fs::copy_options::overwrite_existing);
    }
  }

  json manifest = {{"format", "msmvd-dataset"},
                   {"version", 1},
                   {"name", preset.name},
                   {"n_views", static_cast<int>(calibs.size())},
                   {"n_frames", static_cast<int>(frame_ids.size())},
                   {"image_height", image_height},
                   {"image_width", image_width},
                   {"grid", grid_to_json(grid)},
                   {"frames", frame_ids}};
  write_file(dst / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace msmvd
