// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objective: penalty-reduced pixel-wise focal loss on the occupancy
// maps plus an L1 loss on the discretization offsets, summed over levels with
// unit weights.

#pragma once

#include <array>
#include <memory>

#include "msmvd/autodiff.hpp"
#include "msmvd/datasets.hpp"
#include "msmvd/network.hpp"

namespace msmvd {

/// Focal loss over a (1, nx, ny) probability map against Gaussian-smoothed
/// targets:
///   L = -(1/max(Npos,1)) * sum[ pos: (1-p)^a log p ;
///                               neg: (1-t)^b p^a log(1-p) ]
/// `pos` cells are the target peaks (pos_mask), where t == 1 exactly.
template <typename T>
int focal_loss(nn::Tape<T>& tape, int probabilities, const TargetMaps<T>& target,
               double pos_exponent = 2.0, double neg_exponent = 4.0) {
  const Tensor<T>& p = tape.value(probabilities);
  check_same_shape(p, target.occupancy, "focal_loss");
  const std::size_t n = p.numel();
  const T inv_npos = T(1) / static_cast<T>(std::max(target.n_pos, 1));
  const T a = static_cast<T>(pos_exponent), b = static_cast<T>(neg_exponent);

  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T pi = p.data[i];
    if (target.pos_mask[i]) {
      acc += std::pow(T(1) - pi, a) * std::log(pi);
    } else {
      const T t = target.occupancy.data[i];
      acc += std::pow(T(1) - t, b) * std::pow(pi, a) * std::log(T(1) - pi);
    }
  }
  Tensor<T> out({1});
  out.data[0] = -acc * inv_npos;

  auto occ = std::make_shared<Tensor<T>>(target.occupancy);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(target.pos_mask);
  return tape.emit(std::move(out), tape.needs_grad(probabilities),
                   [=](nn::Tape<T>& t_, int self) {
                     const T g = t_.grad(self).data[0];
                     const Tensor<T>& pv = t_.value(probabilities);
                     Tensor<T>& gp = t_.grad(probabilities);
                     for (std::size_t i = 0; i < pv.data.size(); ++i) {
                       const T pi = pv.data[i];
                       T d;
                       if ((*mask)[i]) {
                         // d/dp [(1-p)^a log p] = -a(1-p)^(a-1) log p + (1-p)^a / p
                         d = -a * std::pow(T(1) - pi, a - T(1)) * std::log(pi) +
                             std::pow(T(1) - pi, a) / pi;
                       } else {
                         // d/dp [(1-t)^b p^a log(1-p)]
                         const T w = std::pow(T(1) - occ->data[i], b);
                         d = w * (a * std::pow(pi, a - T(1)) * std::log(T(1) - pi) -
                                  std::pow(pi, a) / (T(1) - pi));
                       }
                       gp.data[i] += g * (-inv_npos) * d;
                     }
                   });
}

/// L1 offset loss, averaged over positive cells (0 when there are none).
template <typename T>
int offset_loss(nn::Tape<T>& tape, int offsets, const TargetMaps<T>& target) {
  const Tensor<T>& o = tape.value(offsets);
  check_same_shape(o, target.offset, "offset_loss");
  const int nx = o.dim(1), ny = o.dim(2);
  const std::size_t plane = static_cast<std::size_t>(nx) * ny;
  const T inv_npos = T(1) / static_cast<T>(std::max(target.n_pos, 1));

  T acc = T(0);
  for (std::size_t i = 0; i < plane; ++i) {
    if (!target.pos_mask[i]) continue;
    acc += std::abs(o.data[i] - target.offset.data[i]);
    acc += std::abs(o.data[plane + i] - target.offset.data[plane + i]);
  }
  Tensor<T> out({1});
  out.data[0] = acc * inv_npos;

  auto tgt = std::make_shared<Tensor<T>>(target.offset);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(target.pos_mask);
  return tape.emit(std::move(out), tape.needs_grad(offsets), [=](nn::Tape<T>& t_, int self) {
    const T g = t_.grad(self).data[0];
    const Tensor<T>& ov = t_.value(offsets);
    Tensor<T>& go = t_.grad(offsets);
    for (std::size_t i = 0; i < plane; ++i) {
      if (!(*mask)[i]) continue;
      for (std::size_t c = 0; c < 2; ++c) {
        const T d = ov.data[c * plane + i] - tgt->data[c * plane + i];
        const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        go.data[c * plane + i] += g * inv_npos * sgn;
      }
    }
  });
}

struct LossBreakdown {
  std::array<double, 3> det{0.0, 0.0, 0.0};
  std::array<double, 3> off{0.0, 0.0, 0.0};
  double total = 0.0;

  json to_json() const {
    return json{{"det_3", det[0]}, {"det_4", det[1]}, {"det_5", det[2]},
                {"off_3", off[0]}, {"off_4", off[1]}, {"off_5", off[2]},
                {"total", total}};
  }
};

struct TotalLoss {
  int node = -1;  // scalar tape node
  LossBreakdown breakdown;
};

/// Eq.-style sum over levels. `aux_offsets = false` drops the offset terms at
/// levels 4 and 5 (they are never used at inference); occupancy terms always
/// stay. With a single-level (baseline) output only level 3 contributes.
template <typename T>
TotalLoss total_loss(nn::Tape<T>& tape, const ModelOutputs& outputs,
                     const std::array<const TargetMaps<T>*, 3>& targets, bool aux_offsets,
                     double pos_exponent = 2.0, double neg_exponent = 4.0,
                     T sigmoid_eps = T(1e-6)) {
  TotalLoss result;
  std::vector<int> terms;
  for (int li = 0; li < 3; ++li) {
    if (outputs.occupancy_logits[static_cast<std::size_t>(li)] < 0) continue;
    const TargetMaps<T>* tgt = targets[static_cast<std::size_t>(li)];
    if (!tgt) throw ContractError("total_loss: missing targets for level " + std::to_string(li + 3));
    const int prob =
        nn::sigmoid_clamped(tape, outputs.occupancy_logits[static_cast<std::size_t>(li)], sigmoid_eps);
    const int det = focal_loss(tape, prob, *tgt, pos_exponent, neg_exponent);
    terms.push_back(det);
    result.breakdown.det[static_cast<std::size_t>(li)] =
        static_cast<double>(tape.value(det).data[0]);
    if (li == 0 || aux_offsets) {
      const int off = offset_loss(tape, outputs.offsets[static_cast<std::size_t>(li)], *tgt);
      terms.push_back(off);
      result.breakdown.off[static_cast<std::size_t>(li)] =
          static_cast<double>(tape.value(off).data[0]);
    }
  }
  result.node = nn::sum_scalars(tape, terms);
  result.breakdown.total = static_cast<double>(tape.value(result.node).data[0]);
  return result;
}

}  // namespace msmvd
