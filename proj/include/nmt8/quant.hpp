// quant.hpp - uniform asymmetric quantization
//
//   scale  = (max - min) / (2^n - 1)
//   code   = clamp(round((r - min) / scale), 0, 2^n - 1)   (half away from zero)
//   r_hat  = code * scale + min
//
// Values outside the calibrated range saturate.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

#include "nmt8/tensor.hpp"

namespace nmt8 {

// Width used to open up a degenerate (max == min) range.
inline constexpr double kDegenerateRangeEps = 1e-8;

bool is_supported_bits(int bits);

QuantParams quant_params_from_range(double min, double max, int bits);
// Params from the min/max of `values`; an empty span is a RangeError.
QuantParams quant_params_for(std::span<const float> values, int bits);

inline std::uint8_t quantize_value(float r, const QuantParams& p) {
  const double x = (static_cast<double>(r) - static_cast<double>(p.min_val)) / static_cast<double>(p.scale);
  if (std::isnan(x)) return 0;
  const double u = std::round(x);
  return static_cast<std::uint8_t>(std::clamp(u, 0.0, static_cast<double>(p.max_code())));
}

inline float dequantize_value(std::uint32_t code, const QuantParams& p) {
  return static_cast<float>(static_cast<double>(code) * static_cast<double>(p.scale) +
                            static_cast<double>(p.min_val));
}

void quantize_row(std::span<const float> in, const QuantParams& p, std::span<std::uint8_t> out);
void dequantize_row(std::span<const std::uint8_t> in, const QuantParams& p, std::span<float> out);

QTensor quantize(const FTensor& t, const QuantParams& p);
FTensor dequantize(const QTensor& q);
// One QuantParams per row, from that row's own min/max. bits in {2,3,4}.
QTensor rowwise_quantize(const FTensor& m, int bits);
// Per-tensor at 8 bits, row-wise below: the weight scheme used by the converter.
QTensor quantize_weight(const FTensor& w, int bits);

}  // namespace nmt8
