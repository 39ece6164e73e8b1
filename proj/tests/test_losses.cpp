// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "msmvd/losses.hpp"

using namespace msmvd;
using nn::Tape;

namespace {

TargetMaps<double> single_cell_target(int nx, int ny, int ci, int cj, bool positive) {
  TargetMaps<double> t;
  t.level = 3;
  t.occupancy = Tensor<double>({1, nx, ny}, 0.0);
  t.offset = Tensor<double>({2, nx, ny}, 0.0);
  t.pos_mask.assign(static_cast<std::size_t>(nx) * ny, 0);
  if (positive) {
    t.occupancy.at(0, ci, cj) = 1.0;
    t.pos_mask[static_cast<std::size_t>(ci) * ny + cj] = 1;
    t.n_pos = 1;
  }
  return t;
}

TargetMaps<double> random_target(int nx, int ny, Rng& rng, int n_pos) {
  TargetMaps<double> t;
  t.level = 3;
  t.occupancy = Tensor<double>({1, nx, ny});
  t.offset = Tensor<double>({2, nx, ny});
  t.pos_mask.assign(static_cast<std::size_t>(nx) * ny, 0);
  for (auto& v : t.occupancy.data) v = rng.uniform(0.0, 0.95);
  for (auto& v : t.offset.data) v = rng.uniform(0.0, 1.0);
  for (int k = 0; k < n_pos; ++k) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, nx * ny - 1));
    if (t.pos_mask[i]) continue;
    t.pos_mask[i] = 1;
    t.occupancy.data[i] = 1.0;
    ++t.n_pos;
  }
  return t;
}

double eval_focal(const Tensor<double>& p, const TargetMaps<double>& t) {
  Tape<double> tape(false);
  return tape.value(focal_loss(tape, tape.leaf(p), t)).data[0];
}

}  // namespace

TEST_CASE("focal loss closed-form single-cell values") {
  // target 1, p = 0.5: (1-p)^2 log p / Npos -> 0.25 ln 2
  auto pos = single_cell_target(1, 1, 0, 0, true);
  Tensor<double> p({1, 1, 1}, 0.5);
  CHECK(eval_focal(p, pos) == Catch::Approx(0.25 * std::log(2.0)).epsilon(1e-12));

  // target 0, p = 0.5, Npos clamped to 1: same value
  auto neg = single_cell_target(1, 1, 0, 0, false);
  CHECK(eval_focal(p, neg) == Catch::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("focal loss is ~0 for perfect hard predictions and positive otherwise") {
  Rng rng = Rng::seeded(31);
  auto t = single_cell_target(4, 4, 1, 2, true);
  Tensor<double> p({1, 4, 4}, 1e-6);  // clamp floor everywhere
  p.at(0, 1, 2) = 1.0 - 1e-6;         // clamp ceiling at the positive
  CHECK(eval_focal(p, t) <= 1e-5);
  CHECK(eval_focal(p, t) >= 0.0);

  for (int k = 0; k < 20; ++k) {
    Tensor<double> q({1, 4, 4});
    for (auto& v : q.data) v = rng.uniform(1e-6, 1.0 - 1e-6);
    CHECK(eval_focal(q, t) > 0.0);
  }
}

TEST_CASE("focal and offset losses are invariant under joint cell permutation") {
  Rng rng = Rng::seeded(32);
  auto t = random_target(4, 5, rng, 3);
  Tensor<double> p({1, 4, 5});
  for (auto& v : p.data) v = rng.uniform(0.05, 0.95);
  Tensor<double> o({2, 4, 5});
  for (auto& v : o.data) v = rng.uniform(-1.0, 1.0);

  // permutation of the 20 cells
  std::vector<int> perm(20);
  for (int i = 0; i < 20; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  auto t2 = t;
  Tensor<double> p2 = p, o2 = o;
  for (int i = 0; i < 20; ++i) {
    const auto j = static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]);
    t2.occupancy.data[static_cast<std::size_t>(i)] = t.occupancy.data[j];
    t2.pos_mask[static_cast<std::size_t>(i)] = t.pos_mask[j];
    p2.data[static_cast<std::size_t>(i)] = p.data[j];
    for (int c = 0; c < 2; ++c) {
      t2.offset.data[static_cast<std::size_t>(c) * 20 + static_cast<std::size_t>(i)] =
          t.offset.data[static_cast<std::size_t>(c) * 20 + j];
      o2.data[static_cast<std::size_t>(c) * 20 + static_cast<std::size_t>(i)] =
          o.data[static_cast<std::size_t>(c) * 20 + j];
    }
  }
  CHECK(eval_focal(p, t) == Catch::Approx(eval_focal(p2, t2)).epsilon(1e-12));

  Tape<double> ta(false), tb(false);
  const double la = ta.value(offset_loss(ta, ta.leaf(o), t)).data[0];
  const double lb = tb.value(offset_loss(tb, tb.leaf(o2), t2)).data[0];
  CHECK(la == Catch::Approx(lb).epsilon(1e-12));
}

TEST_CASE("offset loss hand values and empty-frame clamp") {
  auto t = single_cell_target(2, 2, 0, 1, true);
  t.offset.at(0, 0, 1) = 0.25;
  t.offset.at(1, 0, 1) = 0.75;
  Tensor<double> o({2, 2, 2}, 0.0);
  o.at(0, 0, 1) = 0.5;
  o.at(1, 0, 1) = 0.5;
  Tape<double> tape(false);
  CHECK(tape.value(offset_loss(tape, tape.leaf(o), t)).data[0] == Catch::Approx(0.5));

  // exact offsets -> 0
  o.at(0, 0, 1) = 0.25;
  o.at(1, 0, 1) = 0.75;
  Tape<double> t2(false);
  CHECK(t2.value(offset_loss(t2, t2.leaf(o), t)).data[0] == 0.0);

  // zero pos cells -> 0 (denominator clamped)
  auto empty = single_cell_target(2, 2, 0, 0, false);
  Tape<double> t3(false);
  CHECK(t3.value(offset_loss(t3, t3.leaf(o), empty)).data[0] == 0.0);
}

TEST_CASE("loss gradients match finite differences on random 8x8 maps") {
  Rng rng = Rng::seeded(33);
  auto target = random_target(8, 8, rng, 5);

  // focal: differentiate w.r.t. probabilities
  Tensor<double> p({1, 8, 8});
  for (auto& v : p.data) v = rng.uniform(0.02, 0.98);
  Tape<double> tape;
  const int pn = tape.leaf(p, true);
  const int ln = focal_loss(tape, pn, target);
  tape.backward(ln);
  const Tensor<double> analytic = tape.grad(pn);
  const double eps = 1e-6;
  for (int k = 0; k < 24; ++k) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, 63));
    Tensor<double> pp = p, pm = p;
    pp.data[i] += eps;
    pm.data[i] -= eps;
    const double num = (eval_focal(pp, target) - eval_focal(pm, target)) / (2 * eps);
    // The 1e-3 floor keeps FD roundoff on near-zero gradients from dominating
    // the relative error; such coordinates still must agree to 1e-8 absolute.
    const double rel = std::abs(num - analytic.data[i]) /
                       std::max({std::abs(num), std::abs(analytic.data[i]), 1e-3});
    CHECK(rel < 1e-5);
  }
  // Directional derivative along a random direction: O(1) magnitudes, so the
  // 1e-5 relative tolerance is measured without cancellation noise.
  {
    Tensor<double> dir({1, 8, 8});
    for (auto& v : dir.data) v = rng.uniform(-1.0, 1.0);
    Tensor<double> pp = p, pm = p;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      pp.data[i] += eps * dir.data[i];
      pm.data[i] -= eps * dir.data[i];
    }
    const double num = (eval_focal(pp, target) - eval_focal(pm, target)) / (2 * eps);
    double ana = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) ana += analytic.data[i] * dir.data[i];
    CHECK(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}) < 1e-5);
  }

  // offset: differentiate w.r.t. predicted offsets
  Tensor<double> o({2, 8, 8});
  for (auto& v : o.data) v = rng.uniform(-1.0, 1.0);
  Tape<double> to;
  const int on = to.leaf(o, true);
  to.backward(offset_loss(to, on, target));
  const Tensor<double> oan = to.grad(on);
  for (int k = 0; k < 24; ++k) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, 127));
    auto eval = [&](double d) {
      Tensor<double> oo = o;
      oo.data[i] += d;
      Tape<double> t2(false);
      return t2.value(offset_loss(t2, t2.leaf(oo), target)).data[0];
    };
    const double num = (eval(eps) - eval(-eps)) / (2 * eps);
    const double rel =
        std::abs(num - oan.data[i]) / std::max({std::abs(num), std::abs(oan.data[i]), 1e-8});
    CHECK(rel < 1e-5);
  }
}

TEST_CASE("total loss bookkeeping identity and aux-offset flag") {
  Rng rng = Rng::seeded(34);
  // Fake three-level outputs: logits and offsets as leaves.
  BevGridSpec grid;
  grid.cells_x = 16;
  grid.cells_y = 16;
  grid.cell_size = 0.1;
  std::vector<Annotation> anns = {{0, 0.33, 0.41}, {1, 1.21, 0.97}};

  auto run = [&](bool aux) {
    Tape<double> tape;
    ModelOutputs out;
    std::vector<TargetMaps<double>> targets;
    for (int l : {3, 4, 5}) targets.push_back(make_target_maps<double>(anns, l, grid));
    for (int li = 0; li < 3; ++li) {
      Tensor<double> logits({1, targets[static_cast<std::size_t>(li)].nx(),
                             targets[static_cast<std::size_t>(li)].ny()});
      for (auto& v : logits.data) v = rng.uniform(-3, 3);
      Tensor<double> offs({2, targets[static_cast<std::size_t>(li)].nx(),
                           targets[static_cast<std::size_t>(li)].ny()});
      for (auto& v : offs.data) v = rng.uniform(-1, 1);
      out.occupancy_logits[static_cast<std::size_t>(li)] = tape.leaf(logits, true);
      out.offsets[static_cast<std::size_t>(li)] = tape.leaf(offs, true);
    }
    std::array<const TargetMaps<double>*, 3> tp{&targets[0], &targets[1], &targets[2]};
    return total_loss(tape, out, tp, aux);
  };

  Rng saved = rng;
  const TotalLoss with_aux = run(true);
  rng = saved;
  const TotalLoss without_aux = run(false);

  double sum = 0;
  for (int i = 0; i < 3; ++i) sum += with_aux.breakdown.det[static_cast<std::size_t>(i)] +
                                     with_aux.breakdown.off[static_cast<std::size_t>(i)];
  CHECK(with_aux.breakdown.total == Catch::Approx(sum).margin(1e-9));
  CHECK(with_aux.breakdown.total >= 0.0);

  // Disabling aux offsets removes exactly off_4 + off_5.
  const double diff = with_aux.breakdown.total - without_aux.breakdown.total;
  CHECK(diff == Catch::Approx(with_aux.breakdown.off[1] + with_aux.breakdown.off[2]).margin(1e-9));
  CHECK(without_aux.breakdown.off[1] == 0.0);
  CHECK(without_aux.breakdown.off[2] == 0.0);

  // All-zero case: perfect predictions at every level.
  Tape<double> tz;
  ModelOutputs oz;
  std::vector<TargetMaps<double>> tgts;
  for (int l : {3, 4, 5}) tgts.push_back(make_target_maps<double>({}, l, grid));
  for (int li = 0; li < 3; ++li) {
    Tensor<double> logits({1, tgts[static_cast<std::size_t>(li)].nx(),
                           tgts[static_cast<std::size_t>(li)].ny()}, -1e9);
    Tensor<double> offs({2, tgts[static_cast<std::size_t>(li)].nx(),
                         tgts[static_cast<std::size_t>(li)].ny()}, 0.0);
    oz.occupancy_logits[static_cast<std::size_t>(li)] = tz.leaf(logits, true);
    oz.offsets[static_cast<std::size_t>(li)] = tz.leaf(offs, true);
  }
  std::array<const TargetMaps<double>*, 3> tzp{&tgts[0], &tgts[1], &tgts[2]};
  const TotalLoss zero = total_loss(tz, oz, tzp, true);
  CHECK(zero.breakdown.total <= 1e-5);
}

TEST_CASE("loss ops reject mismatched shapes") {
  auto t = single_cell_target(4, 4, 0, 0, true);
  Tensor<double> wrong({1, 4, 5}, 0.5);
  Tape<double> tape(false);
  CHECK_THROWS_AS(focal_loss(tape, tape.leaf(wrong), t), ContractError);
  Tensor<double> wrong_off({2, 5, 4}, 0.0);
  CHECK_THROWS_AS(offset_loss(tape, tape.leaf(wrong_off), t), ContractError);
}
