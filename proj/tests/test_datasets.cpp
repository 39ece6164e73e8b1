// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "msmvd/datasets.hpp"

using namespace msmvd;
namespace fs = std::filesystem;

namespace {

BevGridSpec small_grid() {
  // binary-exact cell size and origin so boundary arithmetic is exact
  BevGridSpec g;
  g.cells_x = 64;
  g.cells_y = 64;
  g.cell_size = 0.125;
  g.origin = Vec2(0.0625, 0.0625);
  return g;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

CameraCalibration simple_calib(int id, int h, int w) {
  CameraCalibration c;
  c.view_id = id;
  c.translation = Vec3(0, 0, 5);
  c.intrinsics(0, 0) = 50;
  c.intrinsics(1, 1) = 50;
  c.intrinsics(0, 2) = (w - 1) / 2.0;
  c.intrinsics(1, 2) = (h - 1) / 2.0;
  c.image_height = h;
  c.image_width = w;
  return c;
}

/// Writes a minimal canonical dataset by hand.
void write_tiny_dataset(const fs::path& root, int n_frames = 2, int n_views = 2) {
  const int H = 8, W = 12;
  std::vector<CameraCalibration> calibs;
  for (int v = 0; v < n_views; ++v) calibs.push_back(simple_calib(v, H, W));
  save_calibrations(root / "calibrations.txt", calibs);
  std::vector<int> ids;
  for (int f = 0; f < n_frames; ++f) {
    ids.push_back(f);
    const auto dir = root / "frames" / frame_dir_name(f);
    fs::create_directories(dir);
    write_file(dir / "annotations.txt",
               write_annotations_text({{0, 1.0 + f * 0.1, 2.0}, {1, 3.0, 4.0 - f * 0.1}}));
    for (int v = 0; v < n_views; ++v)
      save_ppm(dir / view_file_name(v), make_image<float>(H, W, 0.25f * (v + 1)));
  }
  json manifest = {{"format", "msmvd-dataset"}, {"version", 1},
                   {"name", "tiny"},           {"n_views", n_views},
                   {"n_frames", n_frames},     {"image_height", H},
                   {"image_width", W},         {"grid", grid_to_json(small_grid())},
                   {"frames", ids},
                   {"splits", {{"train", {0}}, {"val", {1}}}}};
  write_file(root / "manifest.json", manifest.dump(2));
}

}  // namespace

TEST_CASE("target maps: peak, offset, and gaussian shape") {
  const BevGridSpec g = small_grid();

  SECTION("pedestrian exactly at a level-3 cell coordinate: offset (0,0)") {
    // v = 5 exactly: world = origin + 10 * cell.
    const double x = 0.0625 + 10 * 0.125, y = 0.0625 + 6 * 0.125;
    const auto t = make_target_maps<double>({{0, x, y}}, 3, g);
    CHECK(t.n_pos == 1);
    CHECK(t.occupancy.at(0, 5, 3) == 1.0);
    CHECK(t.offset.at(0, 5, 3) == Catch::Approx(0.0).margin(1e-12));
    CHECK(t.offset.at(1, 5, 3) == Catch::Approx(0.0).margin(1e-12));
    CHECK(t.pos_mask[5 * t.ny() + 3] == 1);
  }

  SECTION("fractional coordinate (10.25, 3.75) -> cell (10,3), offset (0.25, 0.75)") {
    // level 3: u = 2v -> world = origin + 2 * v * cell
    const double x = 0.0625 + 2 * 10.25 * 0.125, y = 0.0625 + 2 * 3.75 * 0.125;
    const auto t = make_target_maps<double>({{0, x, y}}, 3, g);
    CHECK(t.occupancy.at(0, 10, 3) == 1.0);
    CHECK(t.offset.at(0, 10, 3) == Catch::Approx(0.25).margin(1e-9));
    CHECK(t.offset.at(1, 10, 3) == Catch::Approx(0.75).margin(1e-9));
  }

  SECTION("gaussian decays monotonically and uses sigma = diameter/6") {
    const double x = 0.0625 + 20 * 0.125, y = 0.0625 + 20 * 0.125;  // peak at (10,10)
    const auto t = make_target_maps<double>({{0, x, y}}, 3, g);
    const double sigma = 20.0 / 6.0;
    for (int d = 1; d <= 10; ++d) {
      const double expect = std::exp(-d * d / (2 * sigma * sigma));
      CHECK(t.occupancy.at(0, 10 + d, 10) == Catch::Approx(expect).margin(1e-12));
      CHECK(t.occupancy.at(0, 10 + d, 10) < t.occupancy.at(0, 10 + d - 1, 10));
    }
    // Truncated at the stated diameter (window radius 10 at level 3).
    CHECK(t.occupancy.at(0, 10 + 11 <= 63 ? 21 : 21, 10) == 0.0);
  }

  SECTION("two pedestrians one cell apart combine by max, not sum") {
    const double x1 = 0.0625 + 2 * 10.0 * 0.125;
    const double x2 = 0.0625 + 2 * 11.0 * 0.125;  // one level-3 cell apart in x
    const double y = 0.0625 + 2 * 8.0 * 0.125;
    const auto t = make_target_maps<double>({{0, x1, y}, {1, x2, y}}, 3, g);
    const double sigma = 20.0 / 6.0;
    // Probe cells around the pair: value must be the max of the two
    // analytically evaluated Gaussians (integer-centered at 10 and 11).
    for (int i = 6; i <= 15; ++i) {
      if (i == 10 || i == 11) {
        CHECK(t.occupancy.at(0, i, 8) == 1.0);
        continue;
      }
      const double g1 = std::exp(-(i - 10.0) * (i - 10.0) / (2 * sigma * sigma));
      const double g2 = std::exp(-(i - 11.0) * (i - 11.0) / (2 * sigma * sigma));
      CHECK(t.occupancy.at(0, i, 8) == Catch::Approx(std::max(g1, g2)).margin(1e-12));
    }
  }

  SECTION("level 4/5 diameters 10/5 in their own cell units") {
    const double x = 0.0625 + 32 * 0.125, y = 0.0625 + 32 * 0.125;
    const auto t4 = make_target_maps<double>({{0, x, y}}, 4, g);
    const auto t5 = make_target_maps<double>({{0, x, y}}, 5, g);
    const double s4 = 10.0 / 6.0, s5 = 5.0 / 6.0;
    CHECK(t4.occupancy.at(0, 8, 8) == 1.0);  // v = 32/4 = 8
    CHECK(t4.occupancy.at(0, 9, 8) == Catch::Approx(std::exp(-1 / (2 * s4 * s4))).margin(1e-12));
    CHECK(t5.occupancy.at(0, 4, 4) == 1.0);  // v = 32/8 = 4
    CHECK(t5.occupancy.at(0, 5, 4) == Catch::Approx(std::exp(-1 / (2 * s5 * s5))).margin(1e-12));
    // Level-5 window radius is 2: nothing splatted 3 cells away.
    CHECK(t5.occupancy.at(0, 7, 4) == 0.0);
  }

  SECTION("annotations outside the grid are skipped with a counter") {
    const auto t = make_target_maps<double>({{0, -5.0, 2.0}, {1, 2.0, 2.0}}, 3, g);
    CHECK(t.skipped == 1);
    CHECK(t.n_pos == 1);
  }

  SECTION("shared-resolution shape override") {
    const auto t5 = make_target_maps<double>({{0, 2.0, 2.0}}, 5, g, /*shape_level=*/3);
    CHECK(t5.nx() == g.level_cells_x(3));
    CHECK(t5.level == 5);
  }
}

TEST_CASE("augmentation adjusts intrinsics exactly") {
  Rng rng = Rng::seeded(55);
  const int H = 16, W = 20;
  auto img = make_image<float>(H, W);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  const CameraCalibration calib = simple_calib(0, H, W);

  SECTION("identity: s = 1, zero offset") {
    const auto aug = augment_view(img, calib.intrinsics, 1.0, 0, 0);
    CHECK(aug.image.data == img.data);
    CHECK((aug.intrinsics - calib.intrinsics).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("s = 1.2 scales focal entries and principal point before the shift") {
    const auto aug = augment_view(img, calib.intrinsics, 1.2, 0, 0);
    CHECK(aug.intrinsics(0, 0) == Catch::Approx(1.2 * calib.intrinsics(0, 0)));
    CHECK(aug.intrinsics(1, 1) == Catch::Approx(1.2 * calib.intrinsics(1, 1)));
    CHECK(aug.intrinsics(0, 2) == Catch::Approx(1.2 * calib.intrinsics(0, 2)));
    CHECK(aug.intrinsics(1, 2) == Catch::Approx(1.2 * calib.intrinsics(1, 2)));
  }

  SECTION("projection consistency: project(K') == s * project(K) + shift") {
    for (int trial = 0; trial < 40; ++trial) {
      const double s = rng.uniform(0.8, 1.2);
      const int rh = std::max(1, static_cast<int>(std::lround(H * s)));
      const int rw = std::max(1, static_cast<int>(std::lround(W * s)));
      const int oy = static_cast<int>(rng.uniform_int(0, std::abs(rh - H)));
      const int ox = static_cast<int>(rng.uniform_int(0, std::abs(rw - W)));
      const auto aug = augment_view(img, calib.intrinsics, s, ox, oy);
      CameraCalibration aug_calib = calib;
      aug_calib.intrinsics = aug.intrinsics;

      const Vec3 world(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 1));
      const auto base = project_world_to_pixel(world, calib);
      const auto moved = project_world_to_pixel(world, aug_calib);
      const double sx = rw >= W ? -ox : ox;
      const double sy = rh >= H ? -oy : oy;
      CHECK(std::abs(moved.pixel.x() - (s * base.pixel.x() + sx)) < 1e-6);
      CHECK(std::abs(moved.pixel.y() - (s * base.pixel.y() + sy)) < 1e-6);
      CHECK(moved.depth == Catch::Approx(base.depth));
    }
  }

  SECTION("augment() keeps annotations and image shape") {
    Frame f;
    f.frame_id = 3;
    f.images = {img, img};
    f.annotations = {{0, 1.0, 2.0}};
    std::vector<CameraCalibration> calibs = {calib, simple_calib(1, H, W)};
    Rng arng = Rng::seeded(9);
    const auto [af, acal] = augment(f, calibs, arng);
    CHECK(af.annotations.size() == 1);
    CHECK(af.images[0].shape == img.shape);
    CHECK(acal.size() == 2);
  }
}

TEST_CASE("canonical dataset loading") {
  TempDir tmp("msmvd_ds_test");
  write_tiny_dataset(tmp.path);

  Dataset ds(tmp.path);
  CHECK(ds.n_views() == 2);
  CHECK(ds.size() == 2);
  CHECK(ds.train_ids() == std::vector<int>{0});
  CHECK(ds.val_ids() == std::vector<int>{1});
  CHECK(ds.grid().cells_x == 64);

  const Frame f = ds.frame(0);
  CHECK(f.images.size() == 2);
  CHECK(f.images[0].dim(1) == 8);
  CHECK(f.annotations.size() == 2);
  CHECK(f.annotations[0].x == Catch::Approx(1.0));

  SECTION("missing view image") {
    fs::remove(tmp.path / "frames" / frame_dir_name(1) / view_file_name(1));
    CHECK_THROWS_AS(ds.frame(1), IoError);
  }

  SECTION("corrupt manifest is a load error, not a crash") {
    write_file(tmp.path / "manifest.json", "{not json");
    CHECK_THROWS_AS(Dataset(tmp.path), IoError);
  }

  SECTION("calibration/view-count mismatch") {
    save_calibrations(tmp.path / "calibrations.txt", {simple_calib(0, 8, 12)});
    CHECK_THROWS_AS(Dataset(tmp.path), IoError);
  }

  SECTION("annotation outside the region") {
    write_file(tmp.path / "frames" / frame_dir_name(0) / "annotations.txt",
               write_annotations_text({{0, 55.0, 1.0}}));
    Dataset ds2(tmp.path);
    CHECK_THROWS_AS(ds2.annotations(0), IoError);
  }
}

TEST_CASE("dataset hash ignores run manifests and tracks content") {
  TempDir tmp("msmvd_hash_test");
  write_tiny_dataset(tmp.path);
  const auto h1 = dataset_hash(tmp.path);
  write_file(tmp.path / "run_manifest.json", "{\"started_at\": \"now\"}");
  CHECK(dataset_hash(tmp.path) == h1);
  write_file(tmp.path / "frames" / frame_dir_name(0) / "annotations.txt",
             write_annotations_text({{0, 1.5, 2.0}}));
  CHECK(dataset_hash(tmp.path) != h1);
}

TEST_CASE("public dataset position mapping and adapter") {
  SECTION("wildtrack positionID to meters") {
    const auto p = wildtrack_preset();
    const Vec2 w0 = position_id_to_world(0, p);
    CHECK(w0.x() == Catch::Approx(-3.0));
    CHECK(w0.y() == Catch::Approx(-9.0));
    const Vec2 w = position_id_to_world(481, p);
    CHECK(w.x() == Catch::Approx(-3.0 + 0.025));
    CHECK(w.y() == Catch::Approx(-9.0 + 0.025));
    CHECK_THROWS_AS(position_id_to_world(480L * 1440L, p), DomainError);
  }

  SECTION("rodrigues basics") {
    CHECK((rodrigues(Vec3(0, 0, 0)) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    const Mat3 r = rodrigues(Vec3(0, 0, M_PI / 2));
    CHECK(r(0, 1) == Catch::Approx(-1.0));  // 90 deg about z
    CHECK(r(1, 0) == Catch::Approx(1.0));
    CHECK(std::abs(r.determinant() - 1.0) < 1e-12);
  }

  SECTION("MVDet-style layout converts to the canonical format") {
    TempDir tmp("msmvd_adapter_test");
    const fs::path src = tmp.path / "src", dst = tmp.path / "dst";
    const int H = 8, W = 12;
    // Two views with identity-ish calibrations in OpenCV XML form.
    for (int v = 1; v <= 2; ++v) {
      write_file(src / "calibrations" / "intrinsic" / ("intr_C" + std::to_string(v) + ".xml"),
                 "<?xml version=\"1.0\"?><opencv_storage><camera_matrix type_id=\"opencv-matrix\">"
                 "<rows>3</rows><cols>3</cols><dt>d</dt>"
                 "<data>60. 0. 5.5 0. 60. 3.5 0. 0. 1.</data></camera_matrix>"
                 "<distortion_coefficients><data>0 0 0 0 0</data></distortion_coefficients>"
                 "</opencv_storage>");
      write_file(src / "calibrations" / "extrinsic" / ("extr_C" + std::to_string(v) + ".xml"),
                 "<?xml version=\"1.0\"?><opencv_storage><rvec type_id=\"opencv-matrix\">"
                 "<rows>3</rows><cols>1</cols><dt>d</dt><data>0. 0. 0.</data></rvec>"
                 "<tvec type_id=\"opencv-matrix\"><rows>3</rows><cols>1</cols><dt>d</dt>"
                 "<data>0. 0. 30.</data></tvec></opencv_storage>");
    }
    // One frame: annotation json + ppm images named by the frame stem.
    write_file(src / "annotations_positions" / "00000005.json",
               json::array({{{"personID", 3}, {"positionID", 481}},
                            {{"personID", 7}, {"positionID", 1000}}})
                   .dump());
    for (int v = 1; v <= 2; ++v)
      save_ppm(src / "Image_subsets" / ("C" + std::to_string(v)) / "00000005.ppm",
               make_image<float>(H, W, 0.5f));

    convert_public_dataset(src, dst, wildtrack_preset(), H, W);
    Dataset ds(dst);
    CHECK(ds.n_views() == 2);
    CHECK(ds.grid().cells_x == 480);
    CHECK(ds.grid().cell_size == Catch::Approx(0.025));
    const auto& anns = ds.annotations(5);
    REQUIRE(anns.size() == 2);
    CHECK(anns[0].x == Catch::Approx(-3.0 + 0.025));
    CHECK(anns[0].y == Catch::Approx(-9.0 + 0.025));
    CHECK(ds.frame(5).images.size() == 2);
  }
}
