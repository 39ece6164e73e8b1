// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff tape over Tensor<T>, with exactly the operator set the
// detector needs. Templated on the scalar type: training runs in float, the
// finite-difference gradient checks run the same graph in double.
//
// Determinism: every parallel loop writes disjoint outputs (no atomics, no
// reductions across threads), so results are bitwise reproducible for any
// fixed thread count.

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "msmvd/geometry.hpp"
#include "msmvd/tensor.hpp"

namespace msmvd::nn {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const EMat<T>>;

/// Trainable array. Gradients accumulate across tape runs until the optimizer
/// consumes them, which is what makes gradient accumulation trivial.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape), T(0)) {}

  void zero_grad() { grad.zero(); }
};

template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first use during backward
    bool needs_grad = false;
    std::function<void(Tape&, int)> backward;
    Parameter<T>* param = nullptr;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  int leaf(Tensor<T> v, bool needs_grad = false) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  /// Parameters are deduplicated: reusing a parameter (shared heads, the
  /// per-view encoder) accumulates all its gradient contributions in one node.
  int param(Parameter<T>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return it->second;
    Node n;
    n.value = p.value;
    n.needs_grad = grad_enabled_;
    n.param = &p;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(&p, id);
    return id;
  }

  int emit(Tensor<T> value, bool needs_grad, std::function<void(Tape&, int)> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad && grad_enabled_;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<T>& value(int id) { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape, T(0));
    return n.grad;
  }
  bool grad_touched(int id) const {
    return !nodes_[static_cast<std::size_t>(id)].grad.data.empty();
  }

  /// Reverse sweep from a scalar root; afterwards flushes accumulated node
  /// gradients into their Parameters.
  void backward(int root) {
    if (!grad_enabled_) throw ContractError("backward on a no-grad tape");
    Node& r = nodes_[static_cast<std::size_t>(root)];
    if (r.value.numel() != 1) throw ContractError("backward root must be scalar");
    grad(root).data[0] = T(1);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.needs_grad && n.backward && grad_touched(id)) n.backward(*this, id);
    }
    for (auto& [p, id] : param_ids_) {
      if (!grad_touched(id)) continue;
      const Tensor<T>& g = nodes_[static_cast<std::size_t>(id)].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) p->grad.data[i] += g.data[i];
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter<T>*, int> param_ids_;
};

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

inline int conv_out_dim(int in, int k, int stride, int pad) {
  const int out = (in + 2 * pad - k) / stride + 1;
  if (out <= 0) throw ConfigError("convolution output dimension is non-positive");
  return out;
}

template <typename T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, Tensor<T>& col) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int ho = conv_out_dim(H, k, stride, pad), wo = conv_out_dim(W, k, stride, pad);
  col = Tensor<T>({C * k * k, ho * wo});
#pragma omp parallel for schedule(static)
  for (int r = 0; r < C * k * k; ++r) {
    const int c = r / (k * k);
    const int ky = (r / k) % k;
    const int kx = r % k;
    T* dst = col.ptr() + static_cast<std::size_t>(r) * ho * wo;
    const T* src = x.ptr() + static_cast<std::size_t>(c) * H * W;
    for (int oy = 0; oy < ho; ++oy) {
      const int iy = oy * stride - pad + ky;
      if (iy < 0 || iy >= H) {
        std::fill(dst + static_cast<std::size_t>(oy) * wo, dst + (static_cast<std::size_t>(oy) + 1) * wo, T(0));
        continue;
      }
      for (int ox = 0; ox < wo; ++ox) {
        const int ix = ox * stride - pad + kx;
        dst[static_cast<std::size_t>(oy) * wo + ox] =
            (ix >= 0 && ix < W) ? src[static_cast<std::size_t>(iy) * W + ix] : T(0);
      }
    }
  }
}

template <typename T>
void col2im_add(const Tensor<T>& col, int C, int H, int W, int k, int stride, int pad,
                Tensor<T>& dx) {
  const int ho = conv_out_dim(H, k, stride, pad), wo = conv_out_dim(W, k, stride, pad);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    T* dst = dx.ptr() + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int r = (c * k + ky) * k + kx;
        const T* src = col.ptr() + static_cast<std::size_t>(r) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W)
              dst[static_cast<std::size_t>(iy) * W + ix] += src[static_cast<std::size_t>(oy) * wo + ox];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// 2-D convolution, weight (Co, Ci, k, k), optional bias (Co). The im2col
/// buffer is cached for the backward pass.
template <typename T>
int conv2d(Tape<T>& tape, int x, Parameter<T>& weight, Parameter<T>* bias, int stride, int pad) {
  const Tensor<T>& in = tape.value(x);
  if (in.rank() != 3) throw ContractError("conv2d expects (C,H,W) input");
  const int Ci = in.dim(0), H = in.dim(1), W = in.dim(2);
  const int Co = weight.value.dim(0), k = weight.value.dim(2);
  if (weight.value.dim(1) != Ci)
    throw ContractError("conv2d: input channels " + std::to_string(Ci) +
                        " != weight channels " + std::to_string(weight.value.dim(1)));
  const int ho = conv_out_dim(H, k, stride, pad), wo = conv_out_dim(W, k, stride, pad);

  auto col = std::make_shared<Tensor<T>>();
  im2col(in, k, stride, pad, *col);

  Tensor<T> out({Co, ho, wo});
  {
    CMatMap<T> wm(weight.value.ptr(), Co, Ci * k * k);
    CMatMap<T> cm(col->ptr(), Ci * k * k, ho * wo);
    MatMap<T> om(out.ptr(), Co, ho * wo);
    om.noalias() = wm * cm;
  }
  if (bias) {
    for (int c = 0; c < Co; ++c) {
      T* p = out.ptr() + static_cast<std::size_t>(c) * ho * wo;
      const T b = bias->value.at(c);
      for (int i = 0; i < ho * wo; ++i) p[i] += b;
    }
  }

  const int wnode = tape.grad_enabled() ? tape.param(weight) : -1;
  const int bnode = (bias && tape.grad_enabled()) ? tape.param(*bias) : -1;
  const bool needs = tape.grad_enabled();
  return tape.emit(std::move(out), needs,
                   [=](Tape<T>& t, int self) {
                     const Tensor<T>& g = t.grad(self);
                     const int hw = ho * wo;
                     {  // dW += g * col^T
                       Tensor<T>& wg = t.grad(wnode);
                       CMatMap<T> gm(g.ptr(), Co, hw);
                       CMatMap<T> cm(col->ptr(), Ci * k * k, hw);
                       MatMap<T> wgm(wg.ptr(), Co, Ci * k * k);
                       wgm.noalias() += gm * cm.transpose();
                     }
                     if (bnode >= 0) {
                       Tensor<T>& bg = t.grad(bnode);
                       for (int c = 0; c < Co; ++c) {
                         const T* p = g.ptr() + static_cast<std::size_t>(c) * hw;
                         T acc = T(0);
                         for (int i = 0; i < hw; ++i) acc += p[i];
                         bg.at(c) += acc;
                       }
                     }
                     if (t.needs_grad(x)) {
                       Tensor<T> dcol({Ci * k * k, hw});
                       CMatMap<T> wm(/*weight*/ t.value(wnode).ptr(), Co, Ci * k * k);
                       CMatMap<T> gm(g.ptr(), Co, hw);
                       MatMap<T> dm(dcol.ptr(), Ci * k * k, hw);
                       dm.noalias() = wm.transpose() * gm;
                       col2im_add(dcol, Ci, H, W, k, stride, pad, t.grad(x));
                     }
                   });
}

template <typename T>
int relu(Tape<T>& tape, int x) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape);
  const std::size_t n = in.numel();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
    out.data[static_cast<std::size_t>(i)] = in.data[static_cast<std::size_t>(i)] > T(0)
                                                ? in.data[static_cast<std::size_t>(i)]
                                                : T(0);
  return tape.emit(std::move(out), tape.needs_grad(x), [=](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& v = t.value(self);
    Tensor<T>& gx = t.grad(x);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (v.data[i] > T(0)) gx.data[i] += g.data[i];
  });
}

template <typename T>
int add(Tape<T>& tape, int a, int b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  check_same_shape(va, vb, "add");
  Tensor<T> out(va.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] + vb.data[i];
  return tape.emit(std::move(out), tape.needs_grad(a) || tape.needs_grad(b),
                   [=](Tape<T>& t, int self) {
                     const Tensor<T>& g = t.grad(self);
                     if (t.needs_grad(a)) {
                       Tensor<T>& ga = t.grad(a);
                       for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
                     }
                     if (t.needs_grad(b)) {
                       Tensor<T>& gb = t.grad(b);
                       for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
                     }
                   });
}

/// Group normalization with affine parameters; group statistics over
/// (channels-in-group x H x W).
template <typename T>
int group_norm(Tape<T>& tape, int x, Parameter<T>& gamma, Parameter<T>& beta, int groups,
               T eps = T(1e-5)) {
  const Tensor<T>& in = tape.value(x);
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  if (C % groups != 0) throw ConfigError("group_norm: channels not divisible by groups");
  const int cg = C / groups;
  const std::size_t m = static_cast<std::size_t>(cg) * H * W;

  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));
  Tensor<T> out(in.shape);
#pragma omp parallel for schedule(static)
  for (int g = 0; g < groups; ++g) {
    const T* src = in.ptr() + static_cast<std::size_t>(g) * m;
    T mu = T(0);
    for (std::size_t i = 0; i < m; ++i) mu += src[i];
    mu /= static_cast<T>(m);
    T var = T(0);
    for (std::size_t i = 0; i < m; ++i) {
      const T d = src[i] - mu;
      var += d * d;
    }
    var /= static_cast<T>(m);
    const T inv = T(1) / std::sqrt(var + eps);
    (*mean)[static_cast<std::size_t>(g)] = mu;
    (*inv_std)[static_cast<std::size_t>(g)] = inv;
    T* dst = out.ptr() + static_cast<std::size_t>(g) * m;
    for (int c = 0; c < cg; ++c) {
      const T ga = gamma.value.at(g * cg + c);
      const T be = beta.value.at(g * cg + c);
      const std::size_t base = static_cast<std::size_t>(c) * H * W;
      for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i)
        dst[base + i] = (src[base + i] - mu) * inv * ga + be;
    }
  }

  const int gnode = tape.grad_enabled() ? tape.param(gamma) : -1;
  const int bnode = tape.grad_enabled() ? tape.param(beta) : -1;
  return tape.emit(std::move(out), tape.grad_enabled(), [=](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xin = t.value(x);
    Tensor<T>& ggamma = t.grad(gnode);
    Tensor<T>& gbeta = t.grad(bnode);
    const Tensor<T>& vgamma = t.value(gnode);
    const bool want_dx = t.needs_grad(x);
    Tensor<T>* gx = want_dx ? &t.grad(x) : nullptr;
    const std::size_t hw = static_cast<std::size_t>(H) * W;
#pragma omp parallel for schedule(static)
    for (int grp = 0; grp < groups; ++grp) {
      const T mu = (*mean)[static_cast<std::size_t>(grp)];
      const T inv = (*inv_std)[static_cast<std::size_t>(grp)];
      const T* xs = xin.ptr() + static_cast<std::size_t>(grp) * m;
      const T* gs = g.ptr() + static_cast<std::size_t>(grp) * m;
      // Per-channel affine grads, then the group-statistics correction.
      T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
      for (int c = 0; c < cg; ++c) {
        const int ch = grp * cg + c;
        const T ga = vgamma.at(ch);
        T dg = T(0), db = T(0);
        const std::size_t base = static_cast<std::size_t>(c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const T xhat = (xs[base + i] - mu) * inv;
          dg += gs[base + i] * xhat;
          db += gs[base + i];
          const T dxhat = gs[base + i] * ga;
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        ggamma.at(ch) += dg;
        gbeta.at(ch) += db;
      }
      if (want_dx) {
        const T inv_m = T(1) / static_cast<T>(m);
        T* gd = gx->ptr() + static_cast<std::size_t>(grp) * m;
        for (int c = 0; c < cg; ++c) {
          const T ga = vgamma.at(grp * cg + c);
          const std::size_t base = static_cast<std::size_t>(c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const T xhat = (xs[base + i] - mu) * inv;
            const T dxhat = gs[base + i] * ga;
            gd[base + i] += inv * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
          }
        }
      }
    }
  });
}

/// Max pooling; ties resolved to the first element in scan order.
template <typename T>
int maxpool2d(Tape<T>& tape, int x, int k, int stride, int pad) {
  const Tensor<T>& in = tape.value(x);
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const int ho = conv_out_dim(H, k, stride, pad), wo = conv_out_dim(W, k, stride, pad);
  Tensor<T> out({C, ho, wo});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const T* src = in.ptr() + static_cast<std::size_t>(c) * H * W;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T best{};
        std::int32_t best_idx = -1;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const T v = src[static_cast<std::size_t>(iy) * W + ix];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = static_cast<std::int32_t>(iy * W + ix);
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * ho + oy) * wo + ox;
        out.data[o] = best;
        (*argmax)[o] = best_idx;
      }
  }
  return tape.emit(std::move(out), tape.needs_grad(x), [=](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      T* dst = gx.ptr() + static_cast<std::size_t>(c) * H * W;
      const std::size_t base = static_cast<std::size_t>(c) * ho * wo;
      for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i)
        dst[(*argmax)[base + i]] += g.data[base + i];
    }
  });
}

namespace detail {
struct LerpCoeff {
  int lo, hi;
  double w_hi;  // weight of the hi sample
};
inline LerpCoeff resize_coeff(int out_idx, int in_dim, int out_dim) {
  // align_corners = false; matches the BEV level geometry where output cell
  // centers sit at (i + 0.5) * scale - 0.5 in input coordinates.
  const double scale = static_cast<double>(in_dim) / out_dim;
  double s = (out_idx + 0.5) * scale - 0.5;
  if (s < 0.0) s = 0.0;
  const double max_s = in_dim - 1;
  if (s > max_s) s = max_s;
  LerpCoeff c;
  c.lo = static_cast<int>(s);
  if (c.lo > in_dim - 1) c.lo = in_dim - 1;
  c.hi = std::min(c.lo + 1, in_dim - 1);
  c.w_hi = s - c.lo;
  return c;
}
}  // namespace detail

/// Plain-tensor bilinear resize (align_corners = false); the tape op below
/// and the inference-time map merging share this kernel.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& in, int out_h, int out_w) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  Tensor<T> out({C, out_h, out_w});
  for (int c = 0; c < C; ++c) {
    const T* src = in.ptr() + static_cast<std::size_t>(c) * H * W;
    T* dst = out.ptr() + static_cast<std::size_t>(c) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const auto cy = detail::resize_coeff(oy, H, out_h);
      for (int ox = 0; ox < out_w; ++ox) {
        const auto cx = detail::resize_coeff(ox, W, out_w);
        const T v00 = src[static_cast<std::size_t>(cy.lo) * W + cx.lo];
        const T v01 = src[static_cast<std::size_t>(cy.lo) * W + cx.hi];
        const T v10 = src[static_cast<std::size_t>(cy.hi) * W + cx.lo];
        const T v11 = src[static_cast<std::size_t>(cy.hi) * W + cx.hi];
        const T top = v00 + static_cast<T>(cx.w_hi) * (v01 - v00);
        const T bot = v10 + static_cast<T>(cx.w_hi) * (v11 - v10);
        dst[static_cast<std::size_t>(oy) * out_w + ox] =
            top + static_cast<T>(cy.w_hi) * (bot - top);
      }
    }
  }
  return out;
}

/// Bilinear resize to an explicit output shape (align_corners = false).
template <typename T>
int upsample_bilinear(Tape<T>& tape, int x, int out_h, int out_w) {
  const Tensor<T>& in = tape.value(x);
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  Tensor<T> out({C, out_h, out_w});
  std::vector<detail::LerpCoeff> ys(static_cast<std::size_t>(out_h)),
      xs(static_cast<std::size_t>(out_w));
  for (int i = 0; i < out_h; ++i) ys[static_cast<std::size_t>(i)] = detail::resize_coeff(i, H, out_h);
  for (int i = 0; i < out_w; ++i) xs[static_cast<std::size_t>(i)] = detail::resize_coeff(i, W, out_w);
  auto ys_sh = std::make_shared<std::vector<detail::LerpCoeff>>(std::move(ys));
  auto xs_sh = std::make_shared<std::vector<detail::LerpCoeff>>(std::move(xs));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const T* src = in.ptr() + static_cast<std::size_t>(c) * H * W;
    T* dst = out.ptr() + static_cast<std::size_t>(c) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& cy = (*ys_sh)[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& cx = (*xs_sh)[static_cast<std::size_t>(ox)];
        const T v00 = src[static_cast<std::size_t>(cy.lo) * W + cx.lo];
        const T v01 = src[static_cast<std::size_t>(cy.lo) * W + cx.hi];
        const T v10 = src[static_cast<std::size_t>(cy.hi) * W + cx.lo];
        const T v11 = src[static_cast<std::size_t>(cy.hi) * W + cx.hi];
        const T top = v00 + static_cast<T>(cx.w_hi) * (v01 - v00);
        const T bot = v10 + static_cast<T>(cx.w_hi) * (v11 - v10);
        dst[static_cast<std::size_t>(oy) * out_w + ox] =
            top + static_cast<T>(cy.w_hi) * (bot - top);
      }
    }
  }
  return tape.emit(std::move(out), tape.needs_grad(x), [=](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      const T* gs = g.ptr() + static_cast<std::size_t>(c) * out_h * out_w;
      T* gd = gx.ptr() + static_cast<std::size_t>(c) * H * W;
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& cy = (*ys_sh)[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& cx = (*xs_sh)[static_cast<std::size_t>(ox)];
          const T gv = gs[static_cast<std::size_t>(oy) * out_w + ox];
          const T wy1 = static_cast<T>(cy.w_hi), wy0 = T(1) - wy1;
          const T wx1 = static_cast<T>(cx.w_hi), wx0 = T(1) - wx1;
          gd[static_cast<std::size_t>(cy.lo) * W + cx.lo] += gv * wy0 * wx0;
          gd[static_cast<std::size_t>(cy.lo) * W + cx.hi] += gv * wy0 * wx1;
          gd[static_cast<std::size_t>(cy.hi) * W + cx.lo] += gv * wy1 * wx0;
          gd[static_cast<std::size_t>(cy.hi) * W + cx.hi] += gv * wy1 * wx1;
        }
      }
    }
  });
}

template <typename T>
int concat_channels(Tape<T>& tape, const std::vector<int>& xs) {
  if (xs.empty()) throw ContractError("concat_channels: empty input list");
  const Tensor<T>& first = tape.value(xs[0]);
  const int H = first.dim(1), W = first.dim(2);
  int C = 0;
  bool needs = false;
  for (int id : xs) {
    const Tensor<T>& v = tape.value(id);
    if (v.dim(1) != H || v.dim(2) != W)
      throw ContractError("concat_channels: spatial shape mismatch");
    C += v.dim(0);
    needs = needs || tape.needs_grad(id);
  }
  Tensor<T> out({C, H, W});
  std::size_t off = 0;
  for (int id : xs) {
    const Tensor<T>& v = tape.value(id);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += v.numel();
  }
  auto parents = std::make_shared<std::vector<int>>(xs);
  return tape.emit(std::move(out), needs, [=](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    std::size_t o = 0;
    for (int id : *parents) {
      const std::size_t n = t.value(id).numel();
      if (t.needs_grad(id)) {
        Tensor<T>& gx = t.grad(id);
        for (std::size_t i = 0; i < n; ++i) gx.data[i] += g.data[o + i];
      }
      o += n;
    }
  });
}

/// Bilinear sampling of a (C, Hf, Wf) feature map at precomputed grid
/// locations. Masked-out cells produce zeros; gradients flow only to the
/// feature map (the grid is a geometric constant).
template <typename T>
int grid_sample(Tape<T>& tape, int x, const SamplingGrid& grid) {
  const Tensor<T>& in = tape.value(x);
  const int C = in.dim(0), Hf = in.dim(1), Wf = in.dim(2);
  const int nx = grid.nx, ny = grid.ny;
  const std::size_t cells = grid.size();
  // Precompute gather indices/weights once per op (shared with backward).
  struct Sample {
    std::int32_t i00, i01, i10, i11;
    T w00, w01, w10, w11;
  };
  auto samples = std::make_shared<std::vector<Sample>>(cells);
  for (std::size_t idx = 0; idx < cells; ++idx) {
    Sample s{};
    if (grid.valid[idx]) {
      const double fx = grid.coord_x[idx], fy = grid.coord_y[idx];
      int x0 = static_cast<int>(std::floor(fx));
      int y0 = static_cast<int>(std::floor(fy));
      const double wx = fx - x0, wy = fy - y0;
      x0 = std::clamp(x0, 0, Wf - 1);
      y0 = std::clamp(y0, 0, Hf - 1);
      const int x1 = std::min(x0 + 1, Wf - 1), y1 = std::min(y0 + 1, Hf - 1);
      s.i00 = static_cast<std::int32_t>(y0 * Wf + x0);
      s.i01 = static_cast<std::int32_t>(y0 * Wf + x1);
      s.i10 = static_cast<std::int32_t>(y1 * Wf + x0);
      s.i11 = static_cast<std::int32_t>(y1 * Wf + x1);
      s.w00 = static_cast<T>((1.0 - wy) * (1.0 - wx));
      s.w01 = static_cast<T>((1.0 - wy) * wx);
      s.w10 = static_cast<T>(wy * (1.0 - wx));
      s.w11 = static_cast<T>(wy * wx);
    } else {
      s.i00 = -1;
    }
    (*samples)[idx] = s;
  }

  Tensor<T> out({C, nx, ny});
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const T* src = in.ptr() + static_cast<std::size_t>(c) * Hf * Wf;
    T* dst = out.ptr() + static_cast<std::size_t>(c) * cells;
    for (std::size_t idx = 0; idx < cells; ++idx) {
      const Sample& s = (*samples)[idx];
      dst[idx] = (s.i00 < 0) ? T(0)
                             : s.w00 * src[s.i00] + s.w01 * src[s.i01] + s.w10 * src[s.i10] +
                                   s.w11 * src[s.i11];
    }
  }
  return tape.emit(std::move(out), tape.needs_grad(x), [=](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      const T* gs = g.ptr() + static_cast<std::size_t>(c) * cells;
      T* gd = gx.ptr() + static_cast<std::size_t>(c) * Hf * Wf;
      for (std::size_t idx = 0; idx < cells; ++idx) {
        const Sample& s = (*samples)[idx];
        if (s.i00 < 0) continue;
        const T gv = gs[idx];
        gd[s.i00] += gv * s.w00;
        gd[s.i01] += gv * s.w01;
        gd[s.i10] += gv * s.w10;
        gd[s.i11] += gv * s.w11;
      }
    }
  });
}

/// Elementwise max across views; gradient routed to the first view attaining
/// the max, so the op stays deterministic under ties.
template <typename T>
int view_max(Tape<T>& tape, const std::vector<int>& xs) {
  if (xs.empty()) throw ContractError("view_max: empty view list");
  const Tensor<T>& first = tape.value(xs[0]);
  Tensor<T> out = first;
  auto winner = std::make_shared<std::vector<std::uint8_t>>(out.numel(), 0);
  bool needs = tape.needs_grad(xs[0]);
  for (std::size_t v = 1; v < xs.size(); ++v) {
    const Tensor<T>& cur = tape.value(xs[v]);
    check_same_shape(out, cur, "view_max");
    needs = needs || tape.needs_grad(xs[v]);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      if (cur.data[i] > out.data[i]) {
        out.data[i] = cur.data[i];
        (*winner)[i] = static_cast<std::uint8_t>(v);
      }
    }
  }
  auto parents = std::make_shared<std::vector<int>>(xs);
  return tape.emit(std::move(out), needs, [=](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    for (std::size_t v = 0; v < parents->size(); ++v) {
      if (!t.needs_grad((*parents)[v])) continue;
      Tensor<T>& gx = t.grad((*parents)[v]);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        if ((*winner)[i] == v) gx.data[i] += g.data[i];
    }
  });
}

template <typename T>
int view_mean(Tape<T>& tape, const std::vector<int>& xs) {
  if (xs.empty()) throw ContractError("view_mean: empty view list");
  Tensor<T> out = tape.value(xs[0]);
  bool needs = tape.needs_grad(xs[0]);
  for (std::size_t v = 1; v < xs.size(); ++v) {
    const Tensor<T>& cur = tape.value(xs[v]);
    check_same_shape(out, cur, "view_mean");
    needs = needs || tape.needs_grad(xs[v]);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += cur.data[i];
  }
  const T scale = T(1) / static_cast<T>(xs.size());
  for (auto& v : out.data) v *= scale;
  auto parents = std::make_shared<std::vector<int>>(xs);
  return tape.emit(std::move(out), needs, [=](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    for (int id : *parents) {
      if (!t.needs_grad(id)) continue;
      Tensor<T>& gx = t.grad(id);
      for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * scale;
    }
  });
}

/// sigmoid followed by a clamp to [eps, 1-eps]; the clamp gates the gradient.
template <typename T>
int sigmoid_clamped(Tape<T>& tape, int x, T eps) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape);
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-in.data[i]));
    out.data[i] = std::clamp(s, eps, T(1) - eps);
  }
  return tape.emit(std::move(out), tape.needs_grad(x), [=](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& gx = t.grad(x);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-xv.data[i]));
      if (s > eps && s < T(1) - eps) gx.data[i] += g.data[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
int sum_scalars(Tape<T>& tape, const std::vector<int>& xs) {
  T total = T(0);
  bool needs = false;
  for (int id : xs) {
    if (tape.value(id).numel() != 1) throw ContractError("sum_scalars: non-scalar input");
    total += tape.value(id).data[0];
    needs = needs || tape.needs_grad(id);
  }
  Tensor<T> out({1});
  out.data[0] = total;
  auto parents = std::make_shared<std::vector<int>>(xs);
  return tape.emit(std::move(out), needs, [=](Tape<T>& t, int self) {
    const T g = t.grad(self).data[0];
    for (int id : *parents)
      if (t.needs_grad(id)) t.grad(id).data[0] += g;
  });
}

}  // namespace msmvd::nn
