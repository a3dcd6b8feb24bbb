#include "nmt8/textio.hpp"

#include <charconv>
#include <cmath>

#include "nmt8/errors.hpp"

namespace nmt8 {

std::string hex_float(float v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, p);
}

float parse_float(std::string_view s) {
  float v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad float '" + std::string(s) + "'");
  return v;
}

std::size_t parse_size(std::string_view s) {
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad integer '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view field(std::string_view token, std::string_view key) {
  if (token.size() <= key.size() || token.substr(0, key.size()) != key || token[key.size()] != '=') {
    throw FormatError("expected '" + std::string(key) + "=...', got '" + std::string(token) + "'");
  }
  return token.substr(key.size() + 1);
}

std::string params_str(const QuantParams& p) {
  return std::to_string(p.bits) + " " + hex_float(p.scale) + " " + hex_float(p.min_val);
}

QuantParams parse_params(const std::vector<std::string_view>& tokens, std::size_t at) {
  if (at + 3 > tokens.size()) throw FormatError("truncated quantization params");
  QuantParams p;
  p.bits = static_cast<int>(parse_size(tokens[at]));
  p.scale = parse_float(tokens[at + 1]);
  p.min_val = parse_float(tokens[at + 2]);
  if (p.bits < 1 || p.bits > 8 || !(p.scale > 0.0f) || !std::isfinite(p.scale) || !std::isfinite(p.min_val)) {
    throw FormatError("invalid quantization params");
  }
  return p;
}

}  // namespace nmt8
