// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/numerics/array.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ssbrpe/errors.hpp"

namespace ssbrpe::nn {

std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Array::Array(Shape shape, float fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("array extents must be positive: " + shape_str(shape_));
  }
  data_.assign(shape_size(shape_), fill);
}

Array::Array(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("array extents must be positive: " + shape_str(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Array::Array(std::size_t rows, std::size_t cols, std::initializer_list<float> values)
    : Array(Shape{rows, cols}, std::vector<float>(values)) {}

std::size_t Array::rows() const {
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() == 1) return 1;
  throw DimensionError("rows() requires rank 1 or 2, got " + shape_str(shape_));
}

std::size_t Array::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  throw DimensionError("cols() requires rank 1 or 2, got " + shape_str(shape_));
}

void Array::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Array(std::move(shape), data_);
}

bool bitwise_equal(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace ssbrpe::nn
