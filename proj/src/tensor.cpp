#include "nmt8/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "nmt8/errors.hpp"

namespace nmt8 {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s.empty() ? "scalar" : s;
}

FTensor::FTensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0f) {}

FTensor::FTensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
  if (!all_finite()) throw RangeError("tensor contains non-finite values");
}

std::size_t FTensor::rows() const {
  if (shape_.empty()) return 1;
  return shape_.back() == 0 ? 0 : data_.size() / shape_.back();
}

std::size_t FTensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

void FTensor::reshape(Shape shape) {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

bool FTensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

QTensor::QTensor(Shape shape, std::vector<std::uint8_t> codes, QuantParams params)
    : shape_(std::move(shape)), codes_(std::move(codes)), params_(params) {
  validate();
}

QTensor::QTensor(Shape shape, std::vector<std::uint8_t> codes, std::vector<QuantParams> row_params)
    : shape_(std::move(shape)), codes_(std::move(codes)), params_(std::move(row_params)) {
  validate();
}

std::size_t QTensor::rows() const {
  if (shape_.empty()) return 1;
  return shape_.back() == 0 ? 0 : codes_.size() / shape_.back();
}

std::size_t QTensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

int QTensor::bits() const { return row_params(0).bits; }

const QuantParams& QTensor::params() const {
  if (rowwise()) throw ContractError("per-tensor params requested from a row-wise tensor");
  return std::get<QuantParams>(params_);
}

const QuantParams& QTensor::row_params(std::size_t r) const {
  if (const auto* p = std::get_if<QuantParams>(&params_)) return *p;
  return std::get<std::vector<QuantParams>>(params_).at(r);
}

std::vector<QuantParams> QTensor::params_list() const {
  if (const auto* p = std::get_if<QuantParams>(&params_)) return {*p};
  return std::get<std::vector<QuantParams>>(params_);
}

void QTensor::validate() const {
  if (numel(shape_) != codes_.size()) {
    throw ShapeError("code count " + std::to_string(codes_.size()) + " does not match shape " + shape_str(shape_));
  }
  const auto check_bits = [](const QuantParams& p) {
    if (p.bits < 1 || p.bits > 8) throw RangeError("quantized tensors hold at most 8-bit codes");
    if (!(p.scale > 0.0f) || !std::isfinite(p.scale) || !std::isfinite(p.min_val)) {
      throw RangeError("quantization params need a finite positive scale");
    }
  };
  if (const auto* rows_p = std::get_if<std::vector<QuantParams>>(&params_)) {
    if (rows_p->size() != rows()) throw ShapeError("row-wise params need one entry per row");
    if (rows_p->empty()) return;
    for (const auto& p : *rows_p) {
      check_bits(p);
      if (p.bits != rows_p->front().bits) throw RangeError("row-wise params must share one bit-width");
    }
  } else {
    check_bits(std::get<QuantParams>(params_));
  }
  const std::size_t c = cols();
  for (std::size_t i = 0; i < codes_.size(); ++i) {
    if (codes_[i] > row_params(c ? i / c : 0).max_code()) {
      throw RangeError("code exceeds the range of its bit-width");
    }
  }
}

}  // namespace nmt8
