#include "nmt8/quant.hpp"

#include <limits>
#include <string>

#include "nmt8/errors.hpp"

namespace nmt8 {

bool is_supported_bits(int bits) { return bits == 2 || bits == 3 || bits == 4 || bits == 8; }

QuantParams quant_params_from_range(double min, double max, int bits) {
  if (!std::isfinite(min) || !std::isfinite(max)) throw RangeError("quantization range must be finite");
  if (!is_supported_bits(bits)) throw RangeError("unsupported bit-width " + std::to_string(bits));
  if (max < min) throw RangeError("quantization range has max < min");
  if (max == min) max = min + kDegenerateRangeEps;
  const double levels = static_cast<double>((1u << bits) - 1u);
  QuantParams p;
  p.bits = bits;
  p.scale = static_cast<float>((max - min) / levels);
  p.min_val = static_cast<float>(min);
  if (!(p.scale > 0.0f)) throw RangeError("quantization range too narrow for f32 scale");
  return p;
}

QuantParams quant_params_for(std::span<const float> values, int bits) {
  if (values.empty()) throw RangeError("cannot derive quantization params from an empty range");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return quant_params_from_range(*lo, *hi, bits);
}

void quantize_row(std::span<const float> in, const QuantParams& p, std::span<std::uint8_t> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = quantize_value(in[i], p);
}

void dequantize_row(std::span<const std::uint8_t> in, const QuantParams& p, std::span<float> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = dequantize_value(in[i], p);
}

QTensor quantize(const FTensor& t, const QuantParams& p) {
  std::vector<std::uint8_t> codes(t.size());
  quantize_row(t.data(), p, codes);
  return QTensor(t.shape(), std::move(codes), p);
}

FTensor dequantize(const QTensor& q) {
  FTensor out(q.shape());
  for (std::size_t r = 0; r < q.rows(); ++r) {
    dequantize_row(q.row(r), q.row_params(r), out.row(r));
  }
  return out;
}

QTensor rowwise_quantize(const FTensor& m, int bits) {
  if (m.rank() != 2) throw ShapeError("row-wise quantization needs a matrix");
  if (m.empty()) throw RangeError("cannot row-wise quantize an empty matrix");
  if (bits != 2 && bits != 3 && bits != 4) throw RangeError("row-wise quantization is for 2, 3 or 4 bits");
  std::vector<std::uint8_t> codes(m.size());
  std::vector<QuantParams> params(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    params[r] = quant_params_for(m.row(r), bits);
    quantize_row(m.row(r), params[r], std::span(codes).subspan(r * m.cols(), m.cols()));
  }
  return QTensor(m.shape(), std::move(codes), std::move(params));
}

QTensor quantize_weight(const FTensor& w, int bits) {
  if (bits == 8) return quantize(w, quant_params_for(w.data(), 8));
  return rowwise_quantize(w, bits);
}

}  // namespace nmt8
