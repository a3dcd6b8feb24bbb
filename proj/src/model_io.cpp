#include "nmt8/model_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "nmt8/calibrate.hpp"
#include "nmt8/errors.hpp"
#include "nmt8/quant.hpp"
#include "nmt8/textio.hpp"

namespace nmt8 {

static_assert(std::endian::native == std::endian::little, "blob layout assumes a little-endian host");

namespace fs = std::filesystem;

std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits) {
  if (bits < 1 || bits > 8) throw ContractError("bit-width must be in [1, 8]");
  if (bits == 8) return {codes.begin(), codes.end()};
  std::vector<std::uint8_t> out((codes.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  std::size_t pos = 0;
  for (std::uint8_t c : codes) {
    if (c >> bits) throw ContractError("code does not fit in " + std::to_string(bits) + " bits");
    for (int b = bits - 1; b >= 0; --b, ++pos) {
      out[pos / 8] |= static_cast<std::uint8_t>(((c >> b) & 1u) << (7 - pos % 8));
    }
  }
  return out;
}

std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t n, int bits) {
  if (bits < 1 || bits > 8) throw ContractError("bit-width must be in [1, 8]");
  const std::size_t need = (n * static_cast<std::size_t>(bits) + 7) / 8;
  if (bytes.size() < need) throw TruncatedError("packed codes are truncated");
  if (bits == 8) return {bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n)};
  std::vector<std::uint8_t> out(n, 0);
  std::size_t pos = 0;
  for (auto& c : out) {
    for (int b = 0; b < bits; ++b, ++pos) c = static_cast<std::uint8_t>((c << 1) | ((bytes[pos / 8] >> (7 - pos % 8)) & 1u));
  }
  return out;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t at = 0;
  while (at < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - at, 1u << 30));
    crc = crc32(crc, bytes.data() + at, n);
    at += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

const char* const kModelMagic = "nmt8-model";
const char* const kCheckpointMagic = "nmt8-checkpoint";

std::string config_str(const ModelConfig& c) {
  std::ostringstream s;
  s << "config vocab=" << c.vocab << " hidden=" << c.hidden << " embed=" << c.embed << " ffn=" << c.ffn
    << " heads=" << c.heads << " enc_layers=" << c.enc_layers << " dec_layers=" << c.dec_layers
    << " share_group=" << c.share_group << " max_len=" << c.max_len;
  return s.str();
}

ModelConfig parse_config(const std::vector<std::string_view>& t) {
  if (t.size() != 10) throw FormatError("config line needs 9 fields");
  ModelConfig c;
  c.vocab = parse_size(field(t[1], "vocab"));
  c.hidden = parse_size(field(t[2], "hidden"));
  c.embed = parse_size(field(t[3], "embed"));
  c.ffn = parse_size(field(t[4], "ffn"));
  c.heads = parse_size(field(t[5], "heads"));
  c.enc_layers = parse_size(field(t[6], "enc_layers"));
  c.dec_layers = parse_size(field(t[7], "dec_layers"));
  c.share_group = parse_size(field(t[8], "share_group"));
  c.max_len = parse_size(field(t[9], "max_len"));
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("invalid config: ") + e.what());
  }
  return c;
}

std::string special_str(const SpecialIds& s) {
  return "special pad=" + std::to_string(s.pad) + " bos=" + std::to_string(s.bos) + " eos=" + std::to_string(s.eos) +
         " unk=" + std::to_string(s.unk);
}

SpecialIds parse_special(const std::vector<std::string_view>& t, std::size_t vocab) {
  if (t.size() != 5) throw FormatError("special line needs 4 fields");
  SpecialIds s;
  std::int32_t* ids[4] = {&s.pad, &s.bos, &s.eos, &s.unk};
  const char* keys[4] = {"pad", "bos", "eos", "unk"};
  for (int i = 0; i < 4; ++i) {
    const std::size_t v = parse_size(field(t[static_cast<std::size_t>(i) + 1], keys[i]));
    if (v >= vocab) throw FormatError("special id outside the vocabulary");
    *ids[i] = static_cast<std::int32_t>(v);
  }
  return s;
}

Shape parse_shape(std::string_view s) {
  Shape shape;
  std::size_t at = 0;
  while (true) {
    const std::size_t x = s.find('x', at);
    shape.push_back(parse_size(s.substr(at, x == std::string_view::npos ? std::string_view::npos : x - at)));
    if (x == std::string_view::npos) break;
    at = x + 1;
  }
  return shape;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

void append_f32(std::vector<std::uint8_t>& blob, std::span<const float> v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  blob.insert(blob.end(), p, p + v.size_bytes());
}

std::vector<float> read_f32(std::span<const std::uint8_t> bytes, std::size_t n) {
  if (bytes.size() != n * sizeof(float)) throw FormatError("f32 tensor has the wrong byte length");
  std::vector<float> v(n);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

enum class Role { kEmbed, kWeight, kVector };

const char* role_name(Role r) {
  switch (r) {
    case Role::kEmbed: return "embed";
    case Role::kWeight: return "weight";
    case Role::kVector: return "vector";
  }
  return "?";
}

struct TensorEntry {
  Role role = Role::kVector;
  Shape shape;
  int bits = 32;
  std::size_t offset = 0;
  std::size_t length = 0;
  std::vector<QuantParams> params;
};

std::size_t stored_bytes(const Shape& shape, int bits) { return (numel(shape) * static_cast<std::size_t>(bits) + 7) / 8; }

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path.string());
  return data;
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void write_text(const fs::path& path, const std::string& s) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

// Checks the header line; returns the remaining lines.
std::vector<std::string> manifest_lines(const std::string& text, const char* magic) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.empty()) throw FormatError("empty manifest");
  const auto head = split_ws(lines[0]);
  if (head.size() != 2 || head[0] != magic) throw FormatError(std::string("not a ") + magic + " manifest");
  if (head[1] != "1") throw VersionError("unsupported " + std::string(magic) + " version " + std::string(head[1]));
  lines.erase(lines.begin());
  return lines;
}

}  // namespace

ModelFiles serialize_model(const Model& m) {
  Model& mm = const_cast<Model&>(m);  // visitors are non-const; nothing is modified
  ModelFiles f;
  std::ostringstream tensors;
  const auto entry = [&](const std::string& name, Role role, const Shape& shape, int bits,
                         const std::vector<QuantParams>& params, std::size_t offset) {
    tensors << "tensor " << name << " role=" << role_name(role) << " shape=" << shape_str(shape) << " bits=" << bits
            << " offset=" << offset << " length=" << f.blob.size() - offset << " params=" << params.size();
    for (const auto& p : params) tensors << " " << params_str(p);
    tensors << "\n";
  };
  for_each_linear(mm, [&](const std::string& name, Linear& l, bool is_embed) {
    const std::size_t offset = f.blob.size();
    const Role role = is_embed ? Role::kEmbed : Role::kWeight;
    if (m.quantized()) {
      if (!l.q) throw ContractError("quantized model is missing codes for '" + name + "'");
      const auto packed = pack_codes(l.q->codes(), l.q->bits());
      f.blob.insert(f.blob.end(), packed.begin(), packed.end());
      entry(name, role, l.w.shape(), l.q->bits(), l.q->params_list(), offset);
    } else {
      append_f32(f.blob, l.w.data());
      entry(name, role, l.w.shape(), 32, {}, offset);
    }
  });
  for_each_vector(mm, [&](const std::string& name, FTensor& v) {
    const std::size_t offset = f.blob.size();
    append_f32(f.blob, v.data());
    entry(name, Role::kVector, v.shape(), 32, {}, offset);
  });

  std::ostringstream s;
  s << kModelMagic << " 1\n" << config_str(m.cfg) << "\n";
  s << "bits " << m.bits.str() << "\n" << special_str(m.special) << "\n";
  s << "blob weights.bin bytes=" << f.blob.size() << " crc32=" << hex32(crc32_of(f.blob)) << "\n";
  s << tensors.str();
  for (const auto& [name, p] : m.act) s << "act " << name << " " << params_str(p) << "\n";
  for_each_gamma(mm, [&](const std::string& name, float& g) { s << "gamma " << name << " " << hex_float(g) << "\n"; });
  f.manifest = s.str();
  return f;
}

Model deserialize_model(const std::string& manifest, std::span<const std::uint8_t> blob) {
  const auto lines = manifest_lines(manifest, kModelMagic);
  std::optional<ModelConfig> cfg;
  std::optional<BitWidths> bits;
  std::optional<SpecialIds> special;
  std::optional<std::size_t> blob_bytes;
  std::uint32_t crc = 0;
  std::map<std::string, TensorEntry> entries;
  std::map<std::string, QuantParams> act;
  std::map<std::string, float> gammas;

  for (const auto& line : lines) {
    const auto t = split_ws(line);
    if (t.empty()) continue;
    if (t[0] == "config") {
      cfg = parse_config(t);
    } else if (t[0] == "bits" && t.size() == 2) {
      try {
        bits = BitWidths::parse(t[1]);
      } catch (const UsageError& e) {
        throw FormatError(std::string("bad bits line: ") + e.what());
      }
    } else if (t[0] == "special") {
      if (!cfg) throw FormatError("special line before config");
      special = parse_special(t, cfg->vocab);
    } else if (t[0] == "blob" && t.size() == 4) {
      blob_bytes = parse_size(field(t[2], "bytes"));
      const auto hex = field(t[3], "crc32");
      unsigned long v = 0;
      const auto [p, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), v, 16);
      if (ec != std::errc() || p != hex.data() + hex.size() || hex.size() != 8) throw FormatError("bad crc32 field");
      crc = static_cast<std::uint32_t>(v);
    } else if (t[0] == "tensor" && t.size() >= 8) {
      TensorEntry e;
      const auto role = field(t[2], "role");
      if (role == "embed") e.role = Role::kEmbed;
      else if (role == "weight") e.role = Role::kWeight;
      else if (role == "vector") e.role = Role::kVector;
      else throw FormatError("unknown tensor role '" + std::string(role) + "'");
      e.shape = parse_shape(field(t[3], "shape"));
      e.bits = static_cast<int>(parse_size(field(t[4], "bits")));
      e.offset = parse_size(field(t[5], "offset"));
      e.length = parse_size(field(t[6], "length"));
      const std::size_t n = parse_size(field(t[7], "params"));
      if (t.size() != 8 + 3 * n) throw FormatError("tensor line has the wrong number of params");
      for (std::size_t i = 0; i < n; ++i) e.params.push_back(parse_params(t, 8 + 3 * i));
      if (!entries.emplace(std::string(t[1]), std::move(e)).second) {
        throw FormatError("duplicate tensor '" + std::string(t[1]) + "'");
      }
    } else if (t[0] == "act" && t.size() == 5) {
      act[std::string(t[1])] = parse_params(t, 2);
    } else if (t[0] == "gamma" && t.size() == 3) {
      gammas[std::string(t[1])] = parse_float(t[2]);
    } else {
      throw FormatError("unexpected manifest line: " + line);
    }
  }
  if (!cfg || !bits || !special || !blob_bytes) throw FormatError("manifest is missing config, bits, special or blob");

  if (blob.size() < *blob_bytes) {
    throw TruncatedError("blob has " + std::to_string(blob.size()) + " bytes, manifest says " +
                         std::to_string(*blob_bytes));
  }
  if (blob.size() > *blob_bytes) throw FormatError("blob is longer than the manifest says");
  if (crc32_of(blob) != crc) throw ChecksumError("blob checksum mismatch");

  // Tensor directory: in bounds, no overlap.
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (const auto& [name, e] : entries) {
    if (e.bits != 32 && (e.bits < 1 || e.bits > 8)) throw FormatError("tensor '" + name + "' has a bad bit-width");
    if (e.length != stored_bytes(e.shape, e.bits)) throw FormatError("tensor '" + name + "' has the wrong length");
    if (e.offset > blob.size() || e.length > blob.size() - e.offset) {
      throw FormatError("tensor '" + name + "' lies outside the blob");
    }
    spans.emplace_back(e.offset, e.length);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i - 1].first + spans[i - 1].second > spans[i].first) throw FormatError("tensors overlap in the blob");
  }

  Model m;
  try {
    m = make_empty_model(*cfg);
  } catch (const ContractError& e) {
    throw FormatError(std::string("unsupported config: ") + e.what());
  }
  m.bits = *bits;
  m.special = *special;
  std::size_t used = 0;
  const auto take = [&](const std::string& name, const Shape& shape) -> const TensorEntry& {
    const auto it = entries.find(name);
    if (it == entries.end()) throw FormatError("missing tensor '" + name + "'");
    if (it->second.shape != shape) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(it->second.shape) + ", config needs " +
                        shape_str(shape));
    }
    ++used;
    return it->second;
  };
  for_each_linear(m, [&](const std::string& name, Linear& l, bool is_embed) {
    const TensorEntry& e = take(name, l.w.shape());
    if ((e.role == Role::kEmbed) != is_embed || e.role == Role::kVector) {
      throw FormatError("tensor '" + name + "' has the wrong role");
    }
    const auto bytes = blob.subspan(e.offset, e.length);
    if (!m.quantized()) {
      if (e.bits != 32 || !e.params.empty()) throw FormatError("f32 model tensor '" + name + "' is not f32");
      l.w = FTensor(e.shape, read_f32(bytes, numel(e.shape)));
      return;
    }
    const int want = is_embed ? m.bits.e : m.bits.w;
    if (e.bits != want) throw FormatError("tensor '" + name + "' is not at " + std::to_string(want) + " bits");
    auto codes = unpack_codes(bytes, numel(e.shape), e.bits);
    for (const auto& p : e.params) {
      if (p.bits != e.bits) throw FormatError("tensor '" + name + "' params disagree with its bit-width");
    }
    if (e.params.size() == 1) {
      l.set_codes(QTensor(e.shape, std::move(codes), e.params[0]));
    } else if (e.params.size() == e.shape[0]) {
      l.set_codes(QTensor(e.shape, std::move(codes), e.params));
    } else {
      throw FormatError("tensor '" + name + "' needs one param set or one per row");
    }
  });
  for_each_vector(m, [&](const std::string& name, FTensor& v) {
    const TensorEntry& e = take(name, v.shape());
    if (e.role != Role::kVector || e.bits != 32) throw FormatError("tensor '" + name + "' must be an f32 vector");
    v = FTensor(e.shape, read_f32(blob.subspan(e.offset, e.length), numel(e.shape)));
  });
  if (used != entries.size()) throw FormatError("manifest has tensors the config does not use");

  for_each_gamma(m, [&](const std::string& name, float& g) {
    const auto it = gammas.find(name);
    if (it == gammas.end()) throw FormatError("missing gamma '" + name + "'");
    g = it->second;
  });
  if (gammas.size() != m.enc.size() * 2 + m.dec.size() * 3) throw FormatError("unexpected gamma entries");
  if (m.quantized()) {
    for (const auto& point : quant_points(m.cfg)) {
      const auto it = act.find(point);
      if (it == act.end()) throw FormatError("missing activation params for '" + point + "'");
      if (it->second.bits != m.bits.a) throw FormatError("activation params for '" + point + "' are not at A bits");
    }
    if (act.size() != quant_points(m.cfg).size()) throw FormatError("unexpected activation entries");
  } else if (!act.empty()) {
    throw FormatError("f32 model with activation params");
  }
  m.act = std::move(act);
  m.prepare();
  return m;
}

void save_model(const fs::path& dir, const Model& m, const BpeVocab* vocab) {
  ensure_dir(dir);
  const ModelFiles f = serialize_model(m);
  write_file(dir / "weights.bin", f.blob);
  write_text(dir / "manifest.txt", f.manifest);
  if (vocab) vocab->save(dir);
}

Model load_model(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("model directory not found: " + dir.string());
  const std::string manifest = read_text(dir / "manifest.txt");
  const auto blob = read_file(dir / "weights.bin");
  return deserialize_model(manifest, blob);
}

std::optional<BpeVocab> load_vocab(const fs::path& dir) {
  if (!fs::exists(dir / "vocab.txt")) return std::nullopt;
  return BpeVocab::load(dir);
}

namespace {

// Checkpoint tensor names and views: the linears, then vectors, then gammas.
void for_each_checkpoint_tensor(Model& m, const std::function<void(const std::string&, std::span<float>, Shape)>& fn) {
  for_each_linear(m, [&](const std::string& name, Linear& l, bool) { fn(name + ".w", l.w.data(), l.w.shape()); });
  for_each_vector(m, [&](const std::string& name, FTensor& v) { fn(name, v.data(), v.shape()); });
  for_each_gamma(m, [&](const std::string& name, float& g) { fn(name + ".gamma", std::span(&g, 1), Shape{1}); });
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Model& fp32, const BpeVocab* vocab) {
  if (fp32.quantized()) throw ContractError("checkpoints hold f32 models only");
  ensure_dir(dir);
  std::ostringstream s;
  s << kCheckpointMagic << " 1\n" << config_str(fp32.cfg) << "\n" << special_str(fp32.special) << "\n";
  for_each_checkpoint_tensor(const_cast<Model&>(fp32), [&](const std::string& name, std::span<float> v, Shape shape) {
    const std::string file = name + ".f32";
    write_file(dir / file, std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size_bytes()));
    s << "tensor " << name << " f32 shape=" << shape_str(shape) << " file=" << file << "\n";
  });
  write_text(dir / "manifest.txt", s.str());
  if (vocab) vocab->save(dir);
}

Model load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  const auto lines = manifest_lines(read_text(dir / "manifest.txt"), kCheckpointMagic);
  std::optional<ModelConfig> cfg;
  std::optional<SpecialIds> special;
  std::map<std::string, std::pair<Shape, std::string>> files;
  for (const auto& line : lines) {
    const auto t = split_ws(line);
    if (t.empty()) continue;
    if (t[0] == "config") {
      cfg = parse_config(t);
    } else if (t[0] == "special") {
      if (!cfg) throw FormatError("special line before config");
      special = parse_special(t, cfg->vocab);
    } else if (t[0] == "tensor" && t.size() == 5) {
      if (t[2] != "f32") throw FormatError("checkpoint tensors must be f32");
      const std::string file(field(t[4], "file"));
      if (file.find("..") != std::string::npos || fs::path(file).is_absolute()) {
        throw FormatError("checkpoint file must be a relative path inside the directory");
      }
      files[std::string(t[1])] = {parse_shape(field(t[3], "shape")), file};
    } else {
      throw FormatError("unexpected checkpoint line: " + line);
    }
  }
  if (!cfg) throw FormatError("checkpoint manifest has no config line");
  Model m;
  try {
    m = make_empty_model(*cfg);
  } catch (const ContractError& e) {
    throw FormatError(std::string("unsupported config: ") + e.what());
  }
  if (special) m.special = *special;
  std::size_t used = 0;
  for_each_checkpoint_tensor(m, [&](const std::string& name, std::span<float> v, Shape shape) {
    const auto it = files.find(name);
    if (it == files.end()) throw FormatError("checkpoint is missing tensor '" + name + "'");
    if (it->second.first != shape) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.first) +
                        ", config needs " + shape_str(shape));
    }
    const auto bytes = read_file(dir / it->second.second);
    if (bytes.size() < v.size_bytes()) throw TruncatedError("checkpoint tensor '" + name + "' is truncated");
    const auto data = read_f32(bytes, v.size());
    for (float x : data) {
      if (!std::isfinite(x)) throw FormatError("checkpoint tensor '" + name + "' has non-finite values");
    }
    std::copy(data.begin(), data.end(), v.begin());
    ++used;
  });
  if (used != files.size()) throw FormatError("checkpoint has tensors the config does not use");
  return m;
}

Model convert(const Model& fp32, const BitWidths& bits, const std::vector<std::vector<std::int32_t>>& samples,
              const ScaleTable* table, std::size_t calib_max_len) {
  if (fp32.quantized()) throw ContractError("convert needs an f32 model");
  if (bits.is_float()) return fp32;
  if (table) {
    for (const auto& [name, p] : table->activations) {
      if (p.bits != bits.a) throw CalibrationError("scale table activations are not at " + std::to_string(bits.a) + " bits");
    }
    return quantize_model(fp32, *table, bits);
  }
  if (samples.empty()) throw CalibrationError("activation quantization needs calibration samples");
  return quantize_model(fp32, calibrate_model(fp32, samples, bits, calib_max_len), bits);
}

}  // namespace nmt8
