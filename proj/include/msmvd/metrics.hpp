// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Detection evaluation: distance-thresholded optimal bipartite matching per
// frame, aggregated into MODA / MODP / precision / recall.

#pragma once

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <map>
#include <vector>

#include "msmvd/common.hpp"
#include "msmvd/inference.hpp"

namespace msmvd {

struct MatchedPair {
  int detection_index = -1;
  int gt_index = -1;
  double distance = 0.0;
};

namespace detail {

/// Hungarian algorithm (shortest augmenting path with potentials) on a square
/// cost matrix; O(n^3). Returns the column assigned to each row.
inline std::vector<int> hungarian_square(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);  // 1-based: column -> row
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = match[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1)][static_cast<std::size_t>(j - 1)] -
                           u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (match[static_cast<std::size_t>(j)] > 0)
      row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Optimal matching between detections and ground truths: pairs farther than
/// `radius` are inadmissible; among matchings the match count is maximized
/// first, then the total distance minimized. Both follow from one Hungarian
/// solve where inadmissible pairs cost more than any all-admissible matching.
inline std::vector<MatchedPair> match_frame(const std::vector<Detection>& detections,
                                            const std::vector<Annotation>& ground_truth,
                                            double radius = 0.5) {
  if (radius <= 0.0) throw DomainError("match radius must be positive");
  const int nd = static_cast<int>(detections.size());
  const int ng = static_cast<int>(ground_truth.size());
  if (nd == 0 || ng == 0) return {};
  const int n = std::max(nd, ng);
  const double big = (n + 1) * (radius + 1.0);
  std::vector<std::vector<double>> cost(
      static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), big));
  for (int i = 0; i < nd; ++i)
    for (int j = 0; j < ng; ++j) {
      const double dx = detections[static_cast<std::size_t>(i)].x -
                        ground_truth[static_cast<std::size_t>(j)].x;
      const double dy = detections[static_cast<std::size_t>(i)].y -
                        ground_truth[static_cast<std::size_t>(j)].y;
      const double d = std::hypot(dx, dy);
      if (d <= radius) cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = d;
    }
  const auto assignment = detail::hungarian_square(cost);
  std::vector<MatchedPair> out;
  for (int i = 0; i < nd; ++i) {
    const int j = assignment[static_cast<std::size_t>(i)];
    if (j < 0 || j >= ng) continue;
    const double d = cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    if (d >= big) continue;  // padded or inadmissible
    out.push_back({i, j, d});
  }
  return out;
}

struct FrameEval {
  int frame_id = 0;
  int tp = 0, fp = 0, fn = 0, gt = 0;
  double sum_closeness = 0.0;  // sum of (1 - d/radius) over TPs
};

struct EvalResult {
  double moda = 0.0, modp = 0.0, precision = 0.0, recall = 0.0;
  long tp = 0, fp = 0, fn = 0, gt_count = 0;
  std::vector<FrameEval> per_frame;

  json to_json() const {
    json frames = json::array();
    for (const auto& f : per_frame)
      frames.push_back({{"frame_id", f.frame_id},
                        {"tp", f.tp},
                        {"fp", f.fp},
                        {"fn", f.fn},
                        {"gt", f.gt}});
    return json{{"moda", moda},         {"modp", modp}, {"precision", precision},
                {"recall", recall},     {"tp", tp},     {"fp", fp},
                {"fn", fn},             {"gt", gt_count}, {"frames", frames}};
  }

  /// Paper-table convention: metrics x100 with one decimal.
  std::string table() const {
    std::string out;
    out += "MODA      " + fmt_fixed(moda * 100.0, 1) + "\n";
    out += "MODP      " + fmt_fixed(modp * 100.0, 1) + "\n";
    out += "Precision " + fmt_fixed(precision * 100.0, 1) + "\n";
    out += "Recall    " + fmt_fixed(recall * 100.0, 1) + "\n";
    return out;
  }
};

/// Aggregates matching over frames. Frames are aligned by id; a frame present
/// on only one side contributes pure FPs or FNs.
inline EvalResult evaluate(const std::vector<DetectionSet>& detections,
                           const std::map<int, std::vector<Annotation>>& ground_truth,
                           double radius = 0.5) {
  std::map<int, const DetectionSet*> det_by_frame;
  for (const auto& d : detections) det_by_frame[d.frame_id] = &d;
  std::vector<int> frame_ids;
  for (const auto& [id, _] : ground_truth) frame_ids.push_back(id);
  for (const auto& [id, _] : det_by_frame)
    if (!ground_truth.count(id)) frame_ids.push_back(id);
  std::sort(frame_ids.begin(), frame_ids.end());

  EvalResult r;
  static const std::vector<Annotation> kNoGt;
  static const std::vector<Detection> kNoDet;
  for (int id : frame_ids) {
    const auto git = ground_truth.find(id);
    const std::vector<Annotation>& gt = git == ground_truth.end() ? kNoGt : git->second;
    const auto dit = det_by_frame.find(id);
    const std::vector<Detection>& det = dit == det_by_frame.end() ? kNoDet : dit->second->detections;
    const auto matches = match_frame(det, gt, radius);
    FrameEval f;
    f.frame_id = id;
    f.tp = static_cast<int>(matches.size());
    f.fp = static_cast<int>(det.size()) - f.tp;
    f.fn = static_cast<int>(gt.size()) - f.tp;
    f.gt = static_cast<int>(gt.size());
    for (const auto& m : matches) f.sum_closeness += 1.0 - m.distance / radius;
    r.per_frame.push_back(f);
    r.tp += f.tp;
    r.fp += f.fp;
    r.fn += f.fn;
    r.gt_count += f.gt;
  }
  if (r.gt_count == 0)
    throw DomainError("evaluate: no ground truth over the whole set");
  r.moda = 1.0 - static_cast<double>(r.fp + r.fn) / static_cast<double>(r.gt_count);
  r.precision = (r.tp + r.fp) == 0
                    ? 1.0
                    : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  r.recall = static_cast<double>(r.tp) / static_cast<double>(r.gt_count);
  double closeness = 0.0;
  for (const auto& f : r.per_frame) closeness += f.sum_closeness;
  r.modp = r.tp == 0 ? 0.0 : closeness / static_cast<double>(r.tp);
  return r;
}

inline std::map<int, std::vector<Annotation>> dataset_ground_truth(const Dataset& ds,
                                                                   const std::vector<int>& ids) {
  std::map<int, std::vector<Annotation>> out;
  for (int id : ids) out[id] = ds.annotations(id);
  return out;
}

}  // namespace msmvd
