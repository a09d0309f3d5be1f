// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace atkd {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_string(shape_));
  }
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_string(shape_));
  }
  if (data_.size() != shape_volume(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor::Tensor(std::initializer_list<std::size_t> shape, std::initializer_list<double> data)
    : Tensor(Shape(shape), std::vector<double>(data)) {}

std::size_t Tensor::slice_count() const {
  const std::size_t len = slice_len();
  return len == 0 ? 0 : data_.size() / len;
}

std::span<double> Tensor::slice(std::size_t s) {
  const std::size_t len = slice_len();
  return std::span<double>(data_).subspan(s * len, len);
}

std::span<const double> Tensor::slice(std::size_t s) const {
  const std::size_t len = slice_len();
  return std::span<const double>(data_).subspan(s * len, len);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace atkd
