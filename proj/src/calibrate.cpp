#include "nmt8/calibrate.hpp"

#include <cmath>
#include <fstream>

#include "nmt8/errors.hpp"
#include "nmt8/ops.hpp"
#include "nmt8/quant.hpp"
#include "nmt8/textio.hpp"

namespace nmt8 {

void RangeObserver::observe(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) throw CalibrationError("non-finite activation during calibration");
    min_ = std::min(min_, v);
    max_ = std::max(max_, v);
  }
  ++count_;
}

void RangeObserver::merge(const RangeObserver& other) {
  min_ = std::min(min_, other.min_);
  max_ = std::max(max_, other.max_);
  count_ += other.count_;
}

QuantParams RangeObserver::finalize(int bits) const {
  if (count_ == 0 || min_ > max_) throw CalibrationError("no observations to finalize");
  return quant_params_from_range(min_, max_, bits);
}

void observe_sample(const Model& m, std::span<const std::int32_t> src, std::size_t max_len, ObserverMap& obs) {
  const ObserveFn fn = [&obs](const std::string& point, std::span<const float> values) { obs[point].observe(values); };
  RunOptions opt;
  opt.mode = Mode::kFp32;
  opt.observe = &fn;
  greedy_decode(m, src, std::max<std::size_t>(max_len, 1), opt);
}

std::map<std::string, std::vector<QuantParams>> weight_scales(const Model& fp32, const BitWidths& bits) {
  std::map<std::string, std::vector<QuantParams>> out;
  for_each_linear(const_cast<Model&>(fp32), [&](const std::string& name, Linear& l, bool is_embed) {
    const int b = is_embed ? bits.e : bits.w;
    if (b == 8) {
      out[name] = {quant_params_for(l.w.data(), 8)};
    } else {
      auto& rows = out[name];
      for (std::size_t r = 0; r < l.w.rows(); ++r) rows.push_back(quant_params_for(l.w.row(r), b));
    }
  });
  return out;
}

ScaleTable calibrate_model(const Model& fp32, const std::vector<std::vector<std::int32_t>>& samples,
                           const BitWidths& bits, std::size_t max_len) {
  if (fp32.quantized()) throw ContractError("calibration needs the f32 model");
  if (bits.is_float()) throw UsageError("nothing to calibrate for a 32-32-32 model");
  if (samples.empty()) throw CalibrationError("calibration needs at least one sample");
  ObserverMap obs;
  for (const auto& s : samples) {
    if (s.empty()) continue;
    observe_sample(fp32, s, max_len, obs);
  }
  ScaleTable t;
  for (const std::string& point : quant_points(fp32.cfg)) {
    const auto it = obs.find(point);
    if (it == obs.end()) throw CalibrationError("quantization point '" + point + "' was never observed");
    t.activations[point] = it->second.finalize(bits.a);
  }
  t.weights = weight_scales(fp32, bits);
  return t;
}

namespace {

QTensor quantize_with(const FTensor& w, const std::vector<QuantParams>& params) {
  if (params.size() == 1) return quantize(w, params[0]);
  if (params.size() != w.rows()) throw CalibrationError("row params do not match the weight rows");
  std::vector<std::uint8_t> codes(w.size());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    quantize_row(w.row(r), params[r], std::span(codes).subspan(r * w.cols(), w.cols()));
  }
  return QTensor(w.shape(), std::move(codes), params);
}

}  // namespace

Model quantize_model(const Model& fp32, const ScaleTable& table, const BitWidths& bits) {
  if (fp32.quantized()) throw ContractError("model is already quantized");
  if (bits.is_float()) throw UsageError("cannot quantize to 32-32-32");
  Model m = fp32;
  m.bits = bits;
  for_each_linear(m, [&](const std::string& name, Linear& l, bool is_embed) {
    const auto it = table.weights.find(name);
    if (it == table.weights.end()) throw CalibrationError("no weight params for '" + name + "'");
    const int b = is_embed ? bits.e : bits.w;
    for (const auto& p : it->second) {
      if (p.bits != b) throw CalibrationError("weight params for '" + name + "' have the wrong bit-width");
    }
    l.set_codes(quantize_with(l.w, it->second));
  });
  for (const std::string& point : quant_points(m.cfg)) {
    const auto it = table.activations.find(point);
    if (it == table.activations.end()) throw CalibrationError("no activation params for '" + point + "'");
    m.act[point] = it->second;
  }
  m.prepare();
  return m;
}

void write_scale_table(const std::filesystem::path& path, const ScaleTable& t) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "nmt8-scales 1\n";
  for (const auto& [name, p] : t.activations) out << "act " << name << " " << params_str(p) << "\n";
  for (const auto& [name, ps] : t.weights) {
    out << "weight " << name << " " << ps.size();
    for (const auto& p : ps) out << " " << params_str(p);
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

ScaleTable read_scale_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_ws(line) != std::vector<std::string_view>{"nmt8-scales", "1"}) {
    throw VersionError("not a version 1 scale table: " + path.string());
  }
  ScaleTable t;
  while (std::getline(in, line)) {
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "act" && tok.size() == 5) {
      t.activations[std::string(tok[1])] = parse_params(tok, 2);
    } else if (tok[0] == "weight" && tok.size() >= 3) {
      const std::size_t n = parse_size(tok[2]);
      if (tok.size() != 3 + 3 * n) throw FormatError("weight line has the wrong number of fields");
      auto& ps = t.weights[std::string(tok[1])];
      for (std::size_t i = 0; i < n; ++i) ps.push_back(parse_params(tok, 3 + 3 * i));
    } else {
      throw FormatError("unexpected scale table line: " + line);
    }
  }
  return t;
}

}  // namespace nmt8
