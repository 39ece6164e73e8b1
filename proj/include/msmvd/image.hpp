// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal image support: float RGB tensors in [0,1] backed by binary PPM (P6)
// files. PPM keeps dataset generation byte-reproducible with zero decoding
// dependencies.

#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "msmvd/common.hpp"
#include "msmvd/tensor.hpp"

namespace msmvd {

template <typename T = float>
Tensor<T> make_image(int height, int width, T fill = T(0)) {
  return Tensor<T>({3, height, width}, fill);
}

inline std::uint8_t quantize_u8(double v) {
  const double s = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(s);
}

template <typename T>
std::string ppm_encode(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ContractError("ppm_encode expects a (3,H,W) image, got " + img.shape_str());
  const int h = img.dim(1), w = img.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.push_back(static_cast<char>(quantize_u8(static_cast<double>(img.at(c, y, x)))));
  return out;
}

template <typename T = float>
Tensor<T> ppm_decode(const std::string& data, const std::string& context) {
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    // Skip whitespace and '#' comment lines between header fields.
    while (pos < data.size()) {
      if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) throw IoError("truncated PPM header in " + context);
    return data.substr(start, pos - start);
  };
  if (token() != "P6") throw IoError("not a binary PPM (P6) file: " + context);
  const int w = static_cast<int>(parse_long(token(), context));
  const int h = static_cast<int>(parse_long(token(), context));
  const long maxval = parse_long(token(), context);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw IoError("unsupported PPM geometry/maxval in " + context);
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (data.size() - pos < need) throw IoError("truncated PPM pixel data in " + context);
  Tensor<T> img({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            static_cast<T>(static_cast<std::uint8_t>(data[pos++])) / T(255);
  return img;
}

template <typename T>
void save_ppm(const std::filesystem::path& path, const Tensor<T>& img) {
  write_file(path, ppm_encode(img));
}

template <typename T = float>
Tensor<T> load_ppm(const std::filesystem::path& path) {
  return ppm_decode<T>(read_file(path), path.string());
}

/// Resize by factor `s` with the mapping dst = s * src (source sampled at
/// dst/s, clamped bilinear). Under this convention, scaling the intrinsics'
/// first two rows by s reproduces the same pixel mapping exactly.
template <typename T>
Tensor<T> resize_by_scale(const Tensor<T>& img, double s) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int oh = std::max(1, static_cast<int>(std::lround(H * s)));
  const int ow = std::max(1, static_cast<int>(std::lround(W * s)));
  Tensor<T> out({C, oh, ow});
  for (int y = 0; y < oh; ++y) {
    double sy = y / s;
    sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, H - 1);
    const double wy = sy - y0;
    for (int x = 0; x < ow; ++x) {
      double sx = x / s;
      sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, W - 1);
      const double wx = sx - x0;
      for (int c = 0; c < C; ++c) {
        const double v00 = img.at(c, y0, x0), v01 = img.at(c, y0, x1);
        const double v10 = img.at(c, y1, x0), v11 = img.at(c, y1, x1);
        const double top = v00 + wx * (v01 - v00);
        const double bot = v10 + wx * (v11 - v10);
        out.at(c, y, x) = static_cast<T>(top + wy * (bot - top));
      }
    }
  }
  return out;
}

}  // namespace msmvd
