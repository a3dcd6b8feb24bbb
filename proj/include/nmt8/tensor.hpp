// tensor.hpp - dense tensors used across the engine
//
//   FTensor  full-precision activations and weights (row-major f32)
//   QTensor  unsigned integer codes with per-tensor or per-row QuantParams
//   ATensor  wide int32 accumulators produced by the integer GEMM
//
// All three are plain values. Rank-N tensors are viewed as a matrix of
// rows() x cols() where cols() is the last dimension.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace nmt8 {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class FTensor {
 public:
  FTensor() = default;
  explicit FTensor(Shape shape);
  // Rejects a data length that does not match the shape and non-finite values.
  FTensor(Shape shape, std::vector<float> data);

  static FTensor matrix(std::size_t rows, std::size_t cols) { return FTensor(Shape{rows, cols}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void reshape(Shape shape);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Asymmetric uniform quantizer: r ~ u * scale + min_val with u in [0, 2^bits - 1].
struct QuantParams {
  int bits = 8;
  float scale = 1.0f;
  float min_val = 0.0f;

  std::uint32_t max_code() const { return (1u << bits) - 1u; }
  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

class QTensor {
 public:
  QTensor() = default;
  // Per-tensor params.
  QTensor(Shape shape, std::vector<std::uint8_t> codes, QuantParams params);
  // Row-wise params, one entry per row.
  QTensor(Shape shape, std::vector<std::uint8_t> codes, std::vector<QuantParams> row_params);

  const Shape& shape() const { return shape_; }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return codes_.size(); }

  bool rowwise() const { return std::holds_alternative<std::vector<QuantParams>>(params_); }
  int bits() const;
  // Per-tensor params; throws ContractError on a row-wise tensor.
  const QuantParams& params() const;
  // Valid in both modes.
  const QuantParams& row_params(std::size_t r) const;
  std::vector<QuantParams> params_list() const;

  std::span<const std::uint8_t> codes() const { return codes_; }
  std::span<const std::uint8_t> row(std::size_t r) const { return {codes_.data() + r * cols(), cols()}; }

  friend bool operator==(const QTensor&, const QTensor&) = default;

 private:
  void validate() const;

  Shape shape_;
  std::vector<std::uint8_t> codes_;
  std::variant<QuantParams, std::vector<QuantParams>> params_;
};

struct ATensor {
  Shape shape;
  std::vector<std::int32_t> data;

  ATensor() = default;
  explicit ATensor(Shape s) : shape(std::move(s)), data(numel(shape), 0) {}

  std::size_t rows() const { return shape.empty() ? 1 : numel(shape) / shape.back(); }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::int32_t at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  friend bool operator==(const ATensor&, const ATensor&) = default;
};

}  // namespace nmt8
