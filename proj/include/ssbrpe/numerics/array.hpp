// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ssbrpe::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 array. Rank 0 is not used; scalars have shape {1}.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, float fill = 0.0f);
  Array(Shape shape, std::vector<float> data);
  Array(std::size_t rows, std::size_t cols, std::initializer_list<float> values);

  static Array scalar(float v) { return Array({1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  // Extent of the leading axis for rank 2, 1 for rank 1 vectors.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<float> span() { return data_; }
  std::span<const float> span() const { return data_; }
  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<float> row(std::size_t r) { return span().subspan(r * cols(), cols()); }
  std::span<const float> row(std::size_t r) const {
    return span().subspan(r * cols(), cols());
  }

  void fill(float v);
  bool all_finite() const;
  Array reshaped(Shape shape) const;

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// True iff shapes and every float bit pattern match (distinguishes -0.0 / NaN).
bool bitwise_equal(const Array& a, const Array& b);

}  // namespace ssbrpe::nn
