// calibrate.hpp - min/max calibration and post-training quantization
//
// Activation ranges come from f32 forwards (encode + greedy decode) over
// sample sentences; weight params come from the weights themselves.

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nmt8/model.hpp"

namespace nmt8 {

class RangeObserver {
 public:
  // CalibrationError on non-finite values.
  void observe(std::span<const float> values);
  void merge(const RangeObserver& other);

  std::size_t count() const { return count_; }
  float min() const { return min_; }
  float max() const { return max_; }
  // CalibrationError when nothing was observed.
  QuantParams finalize(int bits) const;

 private:
  float min_ = std::numeric_limits<float>::infinity();
  float max_ = -std::numeric_limits<float>::infinity();
  std::size_t count_ = 0;
};

using ObserverMap = std::map<std::string, RangeObserver>;

// Records every quantization point of an f32 encode + greedy decode.
void observe_sample(const Model& m, std::span<const std::int32_t> src, std::size_t max_len, ObserverMap& obs);

// Weight params only (per-tensor at 8 bits, per-row below).
std::map<std::string, std::vector<QuantParams>> weight_scales(const Model& fp32, const BitWidths& bits);

ScaleTable calibrate_model(const Model& fp32, const std::vector<std::vector<std::int32_t>>& samples,
                           const BitWidths& bits, std::size_t max_len = 30);

// Quantizes weights with the table's weight params and installs the
// activation params. The result runs in every mode.
Model quantize_model(const Model& fp32, const ScaleTable& table, const BitWidths& bits);

void write_scale_table(const std::filesystem::path& path, const ScaleTable& t);
ScaleTable read_scale_table(const std::filesystem::path& path);

}  // namespace nmt8
