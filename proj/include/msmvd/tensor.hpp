// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "msmvd/common.hpp"

namespace msmvd {

/// Dense row-major tensor. Rank is dynamic (1..4 in practice); the last axis
/// is contiguous. This is the value type flowing through the whole pipeline,
/// templated so the same graph can run in float (training) and double
/// (finite-difference gradient checks).
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape)) {}
  Tensor(std::vector<int> s, T fill_value)
      : shape(std::move(s)), data(numel_of(shape), fill_value) {}

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ContractError("non-positive tensor dimension " + std::to_string(d));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // Unchecked accessors for the common layouts.
  T& at(int a) { return data[static_cast<std::size_t>(a)]; }
  const T& at(int a) const { return data[static_cast<std::size_t>(a)]; }
  T& at(int a, int b) { return data[static_cast<std::size_t>(a) * shape[1] + b]; }
  const T& at(int a, int b) const { return data[static_cast<std::size_t>(a) * shape[1] + b]; }
  T& at(int a, int b, int c) {
    return data[(static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  const T& at(int a, int b, int c) const {
    return data[(static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  T& at(int a, int b, int c, int d) {
    return data[((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  const T& at(int a, int b, int c, int d) const {
    return data[((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }
};

template <typename Dst, typename Src>
Tensor<Dst> tensor_cast(const Tensor<Src>& t) {
  Tensor<Dst> out(t.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<Dst>(t.data[i]);
  return out;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b))
    throw ContractError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
}

/// Ceiling division for stride arithmetic; every pyramid shape uses it.
inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace msmvd
