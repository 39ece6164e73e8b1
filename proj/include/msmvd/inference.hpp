// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Inference: merge the per-level occupancy maps into one level-3-resolution
// map, pick local maxima over the threshold, decode offsets to world meters.

#pragma once

#include <string>
#include <vector>

#include "msmvd/autodiff.hpp"
#include "msmvd/datasets.hpp"
#include "msmvd/geometry.hpp"
#include "msmvd/network.hpp"

namespace msmvd {

struct Detection {
  double x = 0.0, y = 0.0;  // world meters
  double score = 0.0;
};

struct DetectionSet {
  int frame_id = 0;
  std::vector<Detection> detections;
};

/// M = (M3 + up(M4) + up(M5)) / 3, all sigmoid-activated (1, nx, ny) maps.
/// The coarser maps must satisfy the level shape contract relative to M3.
template <typename T>
Tensor<T> merge_maps(const Tensor<T>& m3, const Tensor<T>& m4, const Tensor<T>& m5) {
  const int nx = m3.dim(1), ny = m3.dim(2);
  auto expect = [&](const Tensor<T>& m, int factor, const char* name) {
    if (m.dim(0) != 1 || m.dim(1) != ceil_div(nx, factor) || m.dim(2) != ceil_div(ny, factor))
      throw ContractError(std::string("merge_maps: ") + name + " shape " + m.shape_str() +
                          " violates the level contract against M3 " + m3.shape_str());
  };
  if (m3.dim(0) != 1) throw ContractError("merge_maps: M3 must be single-channel");
  expect(m4, 2, "M4");
  expect(m5, 4, "M5");
  const Tensor<T> u4 = nn::resize_bilinear(m4, nx, ny);
  const Tensor<T> u5 = nn::resize_bilinear(m5, nx, ny);
  Tensor<T> out({1, nx, ny});
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (m3.data[i] + u4.data[i] + u5.data[i]) / T(3);
  return out;
}

/// Local-maximum suppression + thresholding + offset decoding.
///
/// A cell survives NMS iff it equals the maximum of its window; among tied
/// maxima only the lowest row-major index survives. Surviving cells with
/// score >= threshold decode to world position
///   full_grid_to_world((cell + offset) * 2^(shape_level-2)).
template <typename T>
DetectionSet extract_detections(const Tensor<T>& merged, const Tensor<T>& offsets,
                                const BevGridSpec& grid, double threshold,
                                int shape_level = 3, int nms_window = 3, int frame_id = 0) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw DomainError("detection threshold must be in (0,1), got " + std::to_string(threshold));
  if (merged.dim(0) != 1) throw ContractError("extract_detections: map must be (1,nx,ny)");
  if (offsets.dim(0) != 2 || offsets.dim(1) != merged.dim(1) || offsets.dim(2) != merged.dim(2))
    throw ContractError("extract_detections: offset map shape " + offsets.shape_str() +
                        " does not match occupancy " + merged.shape_str());
  if (nms_window < 1 || nms_window % 2 == 0)
    throw ConfigError("nms window must be odd and >= 1");
  check_level(shape_level);

  const int nx = merged.dim(1), ny = merged.dim(2);
  const int r = nms_window / 2;
  const double scale = static_cast<double>(1 << (shape_level - 2));
  DetectionSet out;
  out.frame_id = frame_id;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const T v = merged.at(0, i, j);
      if (static_cast<double>(v) < threshold) continue;
      bool peak = true;
      for (int di = -r; di <= r && peak; ++di) {
        const int ni = i + di;
        if (ni < 0 || ni >= nx) continue;
        for (int dj = -r; dj <= r; ++dj) {
          const int nj = j + dj;
          if (nj < 0 || nj >= ny || (di == 0 && dj == 0)) continue;
          const T nv = merged.at(0, ni, nj);
          // Strictly-greater neighbor kills the peak; an equal neighbor with a
          // lower row-major index wins the tie.
          if (nv > v || (nv == v && (ni * ny + nj) < (i * ny + j))) {
            peak = false;
            break;
          }
        }
      }
      if (!peak) continue;
      const double u = (i + static_cast<double>(offsets.at(0, i, j))) * scale;
      const double w = (j + static_cast<double>(offsets.at(1, i, j))) * scale;
      const Vec2 world = grid.full_grid_to_world(u, w);
      out.detections.push_back({world.x(), world.y(), static_cast<double>(v)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-frame inference on a trained model.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sigmoid_map(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = T(1) / (T(1) + std::exp(-logits.data[i]));
  return out;
}

template <typename T>
struct FrameInference {
  DetectionSet detections;
  Tensor<T> merged;                  // map the detections were extracted from
  std::vector<Tensor<T>> per_level;  // sigmoid occupancy maps as predicted
};

/// Runs the model without gradients and decodes detections. single_scale_level
/// 0 means Eq.-merge of all levels; 3/4/5 selects one map and its own offsets.
template <typename T>
FrameInference<T> infer_frame(Model<T>& model, const std::vector<Tensor<T>>& images,
                              const GridSet& grids, const BevGridSpec& grid_spec,
                              double threshold, int single_scale_level = 0,
                              int nms_window = 3, int frame_id = 0) {
  nn::Tape<T> tape(/*grad_enabled=*/false);
  const ModelOutputs out = model.forward(tape, images, grids);
  FrameInference<T> result;
  const int n_levels = out.n_levels();
  for (int li = 0; li < n_levels; ++li)
    result.per_level.push_back(
        sigmoid_map(tape.value(out.occupancy_logits[static_cast<std::size_t>(li)])));

  const bool shared = model.config.shared_bev_resolution;
  if (n_levels == 1) {
    // Baseline head lives at level-3 resolution.
    result.merged = result.per_level[0];
    result.detections =
        extract_detections(result.merged, tape.value(out.offsets[0]), grid_spec, threshold, 3,
                           nms_window, frame_id);
  } else if (single_scale_level == 0) {
    result.merged = merge_maps(result.per_level[0], result.per_level[1], result.per_level[2]);
    result.detections = extract_detections(result.merged, tape.value(out.offsets[0]), grid_spec,
                                           threshold, 3, nms_window, frame_id);
  } else {
    check_level(single_scale_level);
    const int li = single_scale_level - 3;
    result.merged = result.per_level[static_cast<std::size_t>(li)];
    const int shape_level = shared ? 3 : single_scale_level;
    result.detections =
        extract_detections(result.merged, tape.value(out.offsets[static_cast<std::size_t>(li)]),
                           grid_spec, threshold, shape_level, nms_window, frame_id);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Detection records: text, one "frame_id x y score" line per detection,
// shared by cmd_infer, cmd_eval and the metrics module.
// ---------------------------------------------------------------------------

inline std::string write_detections_text(const std::vector<DetectionSet>& sets) {
  std::string out = "# frame_id world_x world_y score\n";
  char buf[128];
  for (const auto& s : sets)
    for (const auto& d : s.detections) {
      std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g\n", s.frame_id, d.x, d.y, d.score);
      out += buf;
    }
  return out;
}

inline std::vector<DetectionSet> parse_detections_text(const std::string& text,
                                                       const std::string& context) {
  std::map<int, DetectionSet> by_frame;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 4) throw IoError("bad detection line '" + line + "' in " + context);
    const int frame_id = static_cast<int>(parse_long(tok[0], context));
    auto& set = by_frame[frame_id];
    set.frame_id = frame_id;
    set.detections.push_back(
        {parse_double(tok[1], context), parse_double(tok[2], context),
         parse_double(tok[3], context)});
  }
  std::vector<DetectionSet> out;
  out.reserve(by_frame.size());
  for (auto& [id, s] : by_frame) out.push_back(std::move(s));
  return out;
}

}  // namespace msmvd
