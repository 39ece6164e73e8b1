// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Layer wrappers over the tape ops: parameter ownership, naming, init.

#pragma once

#include <string>
#include <vector>

#include "msmvd/autodiff.hpp"
#include "msmvd/common.hpp"

namespace msmvd::nn {

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

/// He-normal fill, fan-in mode. Each parameter draws from its own named
/// stream, so initialization does not depend on construction order.
template <typename T>
void init_he_normal(Parameter<T>& p, const Rng& root, int fan_in) {
  Rng r = root.fork(p.name);
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : p.value.data) v = static_cast<T>(r.normal() * std);
}

template <typename T>
struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
  bool has_bias = true;
  Parameter<T> weight, bias;

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int k, int stride_, int pad_,
         bool bias_ = true)
      : in_ch(in),
        out_ch(out),
        ksize(k),
        stride(stride_),
        pad(pad_),
        has_bias(bias_),
        weight(name + ".weight", {out, in, k, k}) {
    if (has_bias) bias = Parameter<T>(name + ".bias", {out});
  }

  void init(const Rng& rng) {
    init_he_normal(weight, rng, in_ch * ksize * ksize);
    if (has_bias) bias.value.zero();
  }

  int forward(Tape<T>& tape, int x) {
    return conv2d(tape, x, weight, has_bias ? &bias : nullptr, stride, pad);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
  }

  void zero_grad() {
    weight.zero_grad();
    if (has_bias) bias.zero_grad();
  }
};

template <typename T>
struct GroupNorm {
  int channels = 0, groups = 32;
  Parameter<T> gamma, beta;

  GroupNorm() = default;
  GroupNorm(const std::string& name, int channels_, int groups_ = 32)
      : channels(channels_),
        groups(effective_groups(channels_, groups_)),
        gamma(name + ".gamma", {channels_}),
        beta(name + ".beta", {channels_}) {}

  /// Largest divisor of `channels` not exceeding the requested group count,
  /// so narrow desk-scale variants stay valid.
  static int effective_groups(int channels, int requested) {
    int g = std::min(requested, channels);
    while (g > 1 && channels % g != 0) --g;
    return g;
  }

  void init(const Rng&) {
    gamma.value.fill(T(1));
    beta.value.zero();
  }

  int forward(Tape<T>& tape, int x) { return group_norm(tape, x, gamma, beta, groups); }

  void collect(ParamList<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

/// conv -> group norm -> ReLU, the backbone building brick.
template <typename T>
struct ConvNormRelu {
  Conv2d<T> conv;
  GroupNorm<T> norm;
  bool relu_on = true;

  ConvNormRelu() = default;
  ConvNormRelu(const std::string& name, int in, int out, int k, int stride, int pad,
               bool relu_ = true)
      : conv(name + ".conv", in, out, k, stride, pad, /*bias=*/false),
        norm(name + ".norm", out),
        relu_on(relu_) {}

  void init(const Rng& rng) {
    conv.init(rng);
    norm.init(rng);
  }

  int forward(Tape<T>& tape, int x) {
    int y = conv.forward(tape, x);
    y = norm.forward(tape, y);
    if (relu_on) y = relu(tape, y);
    return y;
  }

  void collect(ParamList<T>& out) {
    conv.collect(out);
    norm.collect(out);
  }
};

/// Two 3x3 convs with identity (or 1x1-projected) skip connection.
template <typename T>
struct BasicBlock {
  ConvNormRelu<T> conv1;
  Conv2d<T> conv2;
  GroupNorm<T> norm2;
  bool has_proj = false;
  Conv2d<T> proj;
  GroupNorm<T> proj_norm;

  BasicBlock() = default;
  BasicBlock(const std::string& name, int in, int out, int stride)
      : conv1(name + ".conv1", in, out, 3, stride, 1),
        conv2(name + ".conv2", out, out, 3, 1, 1, /*bias=*/false),
        norm2(name + ".norm2", out),
        has_proj(stride != 1 || in != out) {
    if (has_proj) {
      proj = Conv2d<T>(name + ".proj", in, out, 1, stride, 0, /*bias=*/false);
      proj_norm = GroupNorm<T>(name + ".proj_norm", out);
    }
  }

  void init(const Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    norm2.init(rng);
    if (has_proj) {
      proj.init(rng);
      proj_norm.init(rng);
    }
  }

  int forward(Tape<T>& tape, int x) {
    int y = conv1.forward(tape, x);
    y = conv2.forward(tape, y);
    y = norm2.forward(tape, y);
    int skip = x;
    if (has_proj) {
      skip = proj.forward(tape, x);
      skip = proj_norm.forward(tape, skip);
    }
    return relu(tape, add(tape, y, skip));
  }

  void collect(ParamList<T>& out) {
    conv1.collect(out);
    conv2.collect(out);
    norm2.collect(out);
    if (has_proj) {
      proj.collect(out);
      proj_norm.collect(out);
    }
  }
};

}  // namespace msmvd::nn
