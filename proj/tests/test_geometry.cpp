// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "msmvd/geometry.hpp"

using namespace msmvd;

namespace {

BevGridSpec wildtrack_grid() {
  BevGridSpec g;
  g.cells_x = 480;
  g.cells_y = 1440;
  g.cell_size = 0.025;
  g.origin = Vec2(0.0, 0.0);
  return g;
}

/// Random proper rotation from a normalized quaternion.
Mat3 random_rotation(Rng& rng) {
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double a = std::sqrt(1 - u1), b = std::sqrt(u1);
  const double qw = a * std::sin(2 * M_PI * u2), qx = a * std::cos(2 * M_PI * u2);
  const double qy = b * std::sin(2 * M_PI * u3), qz = b * std::cos(2 * M_PI * u3);
  Mat3 r;
  r << 1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw),
      2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw),
      2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy);
  return r;
}

CameraCalibration random_calibration(Rng& rng, int view_id = 0) {
  CameraCalibration c;
  c.view_id = view_id;
  c.rotation = random_rotation(rng);
  c.translation = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
  c.intrinsics = Mat3::Identity();
  c.intrinsics(0, 0) = rng.uniform(50, 400);
  c.intrinsics(1, 1) = rng.uniform(50, 400);
  c.intrinsics(0, 2) = rng.uniform(40, 200);
  c.intrinsics(1, 2) = rng.uniform(30, 150);
  c.image_width = 320;
  c.image_height = 240;
  return c;
}

/// Independent projection oracle: build the explicit 3x4 matrix, multiply,
/// divide. Deliberately avoids the R*x + T path the implementation uses.
bool oracle_project(const Vec3& p, const CameraCalibration& c, Vec2* pixel, double* depth) {
  Eigen::Matrix<double, 3, 4> rt;
  rt.block<3, 3>(0, 0) = c.rotation;
  rt.col(3) = c.translation;
  const Eigen::Matrix<double, 3, 4> m = c.intrinsics * rt;
  Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
  const Vec3 q = m * h;
  if (std::abs(q.z()) < 1e-9) return false;
  *pixel = Vec2(q.x() / q.z(), q.y() / q.z());
  *depth = q.z();
  return true;
}

}  // namespace

TEST_CASE("calibration invariants are enforced") {
  CameraCalibration c;
  c.image_height = 10;
  c.image_width = 10;
  CHECK_NOTHROW(c.validate());
  c.intrinsics(1, 0) = 0.5;  // not upper-triangular
  CHECK_THROWS_AS(c.validate(), DomainError);
  c.intrinsics(1, 0) = 0.0;
  c.rotation(0, 0) = 2.0;  // not orthonormal
  CHECK_THROWS_AS(c.validate(), DomainError);
  c.rotation = Mat3::Identity();
  c.rotation(0, 0) = -1.0;  // det = -1 reflection
  CHECK_THROWS_AS(c.validate(), DomainError);
}

TEST_CASE("cell_to_world quantization") {
  const BevGridSpec g = wildtrack_grid();
  // Wildtrack-style: a 12 m x 36 m region at 480x1440 cells is 2.5 cm cells.
  CHECK(12.0 / 480 == Catch::Approx(0.025));
  CHECK(36.0 / 1440 == Catch::Approx(0.025));

  // Full-resolution mapping: origin is the center of cell (0,0).
  CHECK(g.full_grid_to_world(0, 0).x() == Catch::Approx(0.0));
  CHECK(g.full_grid_to_world(1, 0).x() == Catch::Approx(0.025));

  // A level-5 cell groups 8x8 full-res cells; its center is the mean of the
  // member cell centers: (3.5 * 0.025 = 0.0875).
  const Vec2 l5 = cell_to_world(0, 0, 5, g);
  CHECK(l5.x() == Catch::Approx(0.0875));
  CHECK(l5.y() == Catch::Approx(0.0875));
  const Vec2 l3 = cell_to_world(0, 0, 3, g);
  CHECK(l3.x() == Catch::Approx(0.0125));
  // Level shapes use ceiling division.
  CHECK(g.level_cells_x(3) == 240);
  CHECK(g.level_cells_y(5) == 180);

  CHECK_THROWS_AS(cell_to_world(240, 0, 3, g), DomainError);
  CHECK_THROWS_AS(cell_to_world(0, -1, 4, g), DomainError);
  CHECK_THROWS_AS(cell_to_world(0, 0, 6, g), DomainError);
}

TEST_CASE("project_world_to_pixel identity and translation cameras") {
  CameraCalibration c;
  c.image_height = 100;
  c.image_width = 100;
  const auto r1 = project_world_to_pixel(Vec3(2, 4, 2), c);
  CHECK(r1.pixel.x() == Catch::Approx(1.0));
  CHECK(r1.pixel.y() == Catch::Approx(2.0));
  CHECK(r1.depth == Catch::Approx(2.0));

  c.translation = Vec3(0, 0, 3);
  const auto r2 = project_world_to_pixel(Vec3(0, 0, 0), c);
  CHECK(r2.pixel.x() == Catch::Approx(0.0));
  CHECK(r2.pixel.y() == Catch::Approx(0.0));
  CHECK(r2.depth == Catch::Approx(3.0));

  c.translation = Vec3(0, 0, 0);
  CHECK_THROWS_AS(project_world_to_pixel(Vec3(1, 1, 0), c), DomainError);
}

TEST_CASE("projection matches the explicit matrix-product oracle") {
  Rng rng = Rng::seeded(101);
  for (int k = 0; k < 500; ++k) {
    const CameraCalibration c = random_calibration(rng);
    const Vec3 p(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
    Vec2 expect;
    double expect_depth;
    if (!oracle_project(p, c, &expect, &expect_depth)) continue;
    const auto got = project_world_to_pixel(p, c);
    CHECK(std::abs(got.pixel.x() - expect.x()) < 1e-9);
    CHECK(std::abs(got.pixel.y() - expect.y()) < 1e-9);
    CHECK(std::abs(got.depth - expect_depth) < 1e-9);
  }
}

TEST_CASE("sampling grid equals per-cell projection with stride division") {
  Rng rng = Rng::seeded(77);
  BevGridSpec g;
  g.cells_x = 37;  // deliberately not divisible by 8
  g.cells_y = 29;
  g.cell_size = 0.11;
  g.origin = Vec2(-1.0, 0.5);

  for (int trial = 0; trial < 20; ++trial) {
    const CameraCalibration c = random_calibration(rng);
    for (int level : {3, 4, 5}) {
      for (int h = 0; h < static_cast<int>(g.heights.size()); ++h) {
        const SamplingGrid grid = build_sampling_grid(c, level, h, g);
        CHECK(grid.nx == ceil_div(g.cells_x, 1 << (level - 2)));
        CHECK(grid.ny == ceil_div(g.cells_y, 1 << (level - 2)));
        const double stride = 1 << level;
        for (int i = 0; i < grid.nx; ++i)
          for (int j = 0; j < grid.ny; ++j) {
            const Vec2 xy = cell_to_world(i, j, level, g);
            Vec2 pix;
            double depth;
            const bool ok =
                oracle_project(Vec3(xy.x(), xy.y(), g.heights[static_cast<std::size_t>(h)]), c,
                               &pix, &depth);
            const std::size_t idx = static_cast<std::size_t>(i) * grid.ny + j;
            if (grid.valid[idx]) {
              REQUIRE(ok);
              CHECK(std::abs(grid.coord_x[idx] - pix.x() / stride) < 1e-5);
              CHECK(std::abs(grid.coord_y[idx] - pix.y() / stride) < 1e-5);
              CHECK(depth > 0);
              // Type invariant: valid coords live in [0, W/2^l - 1].
              CHECK(grid.coord_x[idx] >= 0.0);
              CHECK(grid.coord_x[idx] <= c.image_width / stride - 1.0);
              CHECK(grid.coord_y[idx] <= c.image_height / stride - 1.0);
            } else if (ok && depth > 0) {
              const double fx = pix.x() / stride, fy = pix.y() / stride;
              const bool inside = fx >= 0 && fy >= 0 && fx <= c.image_width / stride - 1.0 &&
                                  fy <= c.image_height / stride - 1.0;
              CHECK_FALSE(inside);
            }
          }
      }
    }
  }
}

TEST_CASE("ratio preservation across levels") {
  BevGridSpec g;
  g.cells_x = 100;
  g.cells_y = 52;
  g.cell_size = 0.1;
  Rng rng = Rng::seeded(5);
  const CameraCalibration c = random_calibration(rng);
  const SamplingGrid g3 = build_sampling_grid(c, 3, 0, g);
  const SamplingGrid g4 = build_sampling_grid(c, 4, 0, g);
  const SamplingGrid g5 = build_sampling_grid(c, 5, 0, g);
  CHECK(ceil_div(g3.nx, 2) == g4.nx);
  CHECK(ceil_div(g4.nx, 2) == g5.nx);
  CHECK(ceil_div(g3.ny, 2) == g4.ny);
  CHECK(ceil_div(g4.ny, 2) == g5.ny);
}

TEST_CASE("overhead camera maps the center cell to the principal point") {
  BevGridSpec g;
  g.cells_x = 64;
  g.cells_y = 64;
  g.cell_size = 0.1;
  const int level = 3;
  const int ci = 16, cj = 16;
  const Vec2 target = cell_to_world(ci, cj, level, g);

  CameraCalibration c;
  c.view_id = 0;
  // Straight-down camera 10 m above the queried cell.
  c.rotation << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  const Vec3 eye(target.x(), target.y(), 10.0);
  c.translation = -c.rotation * eye;
  c.intrinsics = Mat3::Identity();
  c.intrinsics(0, 0) = 120;
  c.intrinsics(1, 1) = 120;
  c.intrinsics(0, 2) = 64;
  c.intrinsics(1, 2) = 48;
  c.image_width = 128;
  c.image_height = 96;
  c.validate();

  const SamplingGrid grid = build_sampling_grid(c, level, 0, g);
  const std::size_t idx = static_cast<std::size_t>(ci) * grid.ny + cj;
  REQUIRE(grid.valid[idx] == 1);
  CHECK(grid.coord_x[idx] == Catch::Approx(64.0 / 8.0));
  CHECK(grid.coord_y[idx] == Catch::Approx(48.0 / 8.0));
}

TEST_CASE("raising the projection height moves pixels toward the principal point") {
  // R = I, T = (0,0,t): pixel = f*x/(z+t) + cx shrinks toward cx as z rises.
  CameraCalibration c;
  c.translation = Vec3(0, 0, 8);
  c.intrinsics(0, 0) = 100;
  c.intrinsics(1, 1) = 100;
  c.intrinsics(0, 2) = 50;
  c.intrinsics(1, 2) = 40;
  c.image_width = 100;
  c.image_height = 80;
  double prev = 1e18;
  for (double z : {0.0, 0.3, 0.6, 0.9, 1.2}) {
    const auto r = project_world_to_pixel(Vec3(2.0, 1.5, z), c);
    const double d = std::hypot(r.pixel.x() - 50.0, r.pixel.y() - 40.0);
    CHECK(d < prev);
    prev = d;
  }
}

TEST_CASE("camera facing away from the grid masks every cell") {
  BevGridSpec g;
  g.cells_x = 32;
  g.cells_y = 32;
  g.cell_size = 0.2;
  CameraCalibration c;
  // Camera sits beyond the grid along +x and looks further along +x, so the
  // whole grid is behind it.
  c.rotation << 0, -1, 0, 0, 0, -1, 1, 0, 0;  // forward = +x, right = -y, down = -z
  REQUIRE(std::abs(c.rotation.determinant() - 1.0) < 1e-12);
  const Vec3 eye(20.0, 3.2, 2.0);
  c.translation = -c.rotation * eye;
  c.intrinsics(0, 0) = 100;
  c.intrinsics(1, 1) = 100;
  c.intrinsics(0, 2) = 50;
  c.intrinsics(1, 2) = 50;
  c.image_width = 100;
  c.image_height = 100;
  c.validate();
  const SamplingGrid grid = build_sampling_grid(c, 3, 0, g);
  CHECK(grid.masked_fraction() == 1.0);
}

TEST_CASE("shared-resolution grids use the level-3 shape for all levels") {
  BevGridSpec g;
  g.cells_x = 64;
  g.cells_y = 48;
  g.cell_size = 0.1;
  Rng rng = Rng::seeded(9);
  const CameraCalibration c = random_calibration(rng);
  const SamplingGrid s5 = build_sampling_grid(c, 5, 0, g, /*shape_level=*/3);
  CHECK(s5.nx == g.level_cells_x(3));
  CHECK(s5.ny == g.level_cells_y(3));
  CHECK(s5.level == 5);
  CHECK(s5.shape_level == 3);
}

TEST_CASE("calibration text round trip") {
  Rng rng = Rng::seeded(13);
  std::vector<CameraCalibration> calibs;
  for (int i = 0; i < 3; ++i) calibs.push_back(random_calibration(rng, i));
  const std::string text = write_calibrations_text(calibs);
  const auto back = parse_calibrations_text(text, "roundtrip");
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[static_cast<std::size_t>(i)].view_id == i);
    CHECK((back[static_cast<std::size_t>(i)].intrinsics - calibs[static_cast<std::size_t>(i)].intrinsics)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK((back[static_cast<std::size_t>(i)].rotation - calibs[static_cast<std::size_t>(i)].rotation)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  CHECK_THROWS_AS(parse_calibrations_text("view 0\nK 1 2 3\n", "bad"), IoError);
  CHECK_THROWS_AS(parse_calibrations_text("", "empty"), IoError);
}

TEST_CASE("grid cache round trip and stale-key rejection") {
  Rng rng = Rng::seeded(21);
  std::vector<CameraCalibration> calibs = {random_calibration(rng, 0), random_calibration(rng, 1)};
  BevGridSpec g;
  g.cells_x = 24;
  g.cells_y = 24;
  g.cell_size = 0.25;
  const GridSet grids = GridSet::standard(calibs, g);
  const std::uint64_t key = grid_cache_key(calibs, g, {3, 4, 5}, {3, 4, 5});

  const auto path = std::filesystem::temp_directory_path() / "msmvd_grid_cache_test.bin";
  save_grid_cache(path, grids, key);
  const auto loaded = load_grid_cache(path, key);
  REQUIRE(loaded.has_value());
  CHECK(loaded->n_views() == 2);
  for (int v = 0; v < 2; ++v)
    for (int li = 0; li < 3; ++li)
      for (int h = 0; h < 5; ++h) {
        const auto& a = grids.at(v, li, h);
        const auto& b = loaded->at(v, li, h);
        REQUIRE(a.size() == b.size());
        CHECK(a.coord_x == b.coord_x);
        CHECK(a.coord_y == b.coord_y);
        CHECK(a.valid == b.valid);
      }
  CHECK_FALSE(load_grid_cache(path, key + 1).has_value());
  std::filesystem::remove(path);
}
