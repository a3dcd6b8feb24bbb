// textio.hpp - small helpers for the line-oriented text formats

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "nmt8/tensor.hpp"

namespace nmt8 {

// Exact float <-> text using hexadecimal notation.
std::string hex_float(float v);
float parse_float(std::string_view s);
std::size_t parse_size(std::string_view s);

std::vector<std::string_view> split_ws(std::string_view line);
// "key=value" -> value; FormatError when the key does not match.
std::string_view field(std::string_view token, std::string_view key);

std::string params_str(const QuantParams& p);
// Reads "bits scale min" starting at tokens[at].
QuantParams parse_params(const std::vector<std::string_view>& tokens, std::size_t at);

}  // namespace nmt8
