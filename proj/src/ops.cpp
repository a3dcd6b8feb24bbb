#include "nmt8/ops.hpp"

#include <algorithm>
#include <cmath>

#include "nmt8/errors.hpp"

namespace nmt8 {

void layer_norm_row(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
                    std::span<float> out) {
  const std::size_t n = x.size();
  double mean = 0;
  for (float v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (float v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>((x[i] - mean) * inv * gain[i] + bias[i]);
  }
}

void softmax_row(std::span<float> row, float scale, std::size_t valid) {
  const std::size_t n = std::min(valid, row.size());
  if (n == 0) {
    std::fill(row.begin(), row.end(), 0.0f);
    return;
  }
  float mx = row[0] * scale;
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i] * scale);
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = std::exp(static_cast<double>(row[i] * scale - mx));
    row[i] = static_cast<float>(e);
    sum += e;
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<float>(row[i] * inv);
  std::fill(row.begin() + static_cast<std::ptrdiff_t>(n), row.end(), 0.0f);
}

std::size_t argmax_row(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

FTensor layer_norm(const FTensor& x, const FTensor& gain, const FTensor& bias) {
  if (x.cols() == 0) throw ShapeError("layer_norm over a zero-length row");
  if (gain.size() != x.cols() || bias.size() != x.cols()) throw ShapeError("layer_norm gain/bias length mismatch");
  FTensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) layer_norm_row(x.row(r), gain.data(), bias.data(), out.row(r));
  return out;
}

FTensor softmax_rows(const FTensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax needs rank >= 1");
  FTensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_row(out.row(r));
  return out;
}

FTensor residual_combine(const FTensor& x, const FTensor& y, float gamma) {
  if (x.shape() != y.shape()) {
    throw ShapeError("residual_combine shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  FTensor out(x.shape());
  residual_row(x.data(), y.data(), gamma, out.data());
  return out;
}

FTensor relu(FTensor x) {
  relu_row(x.data());
  return x;
}

FTensor bias_add(FTensor x, const FTensor& bias) {
  if (bias.size() != x.cols()) throw ShapeError("bias length does not match the last dimension");
  for (std::size_t r = 0; r < x.rows(); ++r) bias_add_row(x.row(r), bias.data());
  return x;
}

}  // namespace nmt8
