// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace seglora {

/// Dense row-major tensor of doubles, rank 0..4. Double precision keeps
/// finite-difference checks meaningful; file formats downcast to f32.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values);

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool defined() const { return !data_.empty() || !shape_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data_[idx(i, j)]; }
  double at(int i, int j) const { return data_[idx(i, j)]; }
  double& at(int i, int j, int k) { return data_[idx(i, j, k)]; }
  double at(int i, int j, int k) const { return data_[idx(i, j, k)]; }
  double& at(int i, int j, int k, int l) { return data_[idx(i, j, k, l)]; }
  double at(int i, int j, int k, int l) const { return data_[idx(i, j, k, l)]; }

  void fill(double v);
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double frobenius_norm() const;
  double sum() const;
  double max_abs() const;

  /// Snap every entry to its nearest float, so values round-trip exactly
  /// through f32 storage.
  void quantize_f32();

  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(double s);

 private:
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(j);
  }
  std::size_t idx(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(shape_[2]) +
           static_cast<std::size_t>(k);
  }
  std::size_t idx(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(j)) *
                static_cast<std::size_t>(shape_[2]) +
            static_cast<std::size_t>(k)) *
               static_cast<std::size_t>(shape_[3]) +
           static_cast<std::size_t>(l);
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<int>& shape);

/// Throws UsageError when `t` does not have the expected shape.
void check_shape(const Tensor& t, const std::vector<int>& expect, const std::string& what);

/// Max |a-b| over all entries; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

bool bit_identical(const Tensor& a, const Tensor& b);

}  // namespace seglora
