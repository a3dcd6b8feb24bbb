#include "nmt8/model.hpp"

#include <charconv>
#include <cmath>

#include "nmt8/errors.hpp"
#include "nmt8/kernels.hpp"
#include "nmt8/ops.hpp"
#include "nmt8/quant.hpp"

namespace nmt8 {

void ModelConfig::validate() const {
  if (vocab == 0 || hidden == 0 || ffn == 0 || heads == 0 || enc_layers == 0 || dec_layers == 0 || max_len == 0) {
    throw ContractError("model dimensions must be >= 1");
  }
  if (hidden % heads != 0) throw ContractError("hidden size must be a multiple of the head count");
  if (share_group == 0) throw ContractError("share_group must be >= 1");
}

BitWidths BitWidths::parse(std::string_view s) {
  BitWidths b;
  int* fields[3] = {&b.w, &b.e, &b.a};
  std::size_t at = 0;
  for (int i = 0; i < 3; ++i) {
    const std::size_t end = i < 2 ? s.find('-', at) : s.size();
    if (end == std::string_view::npos) throw UsageError("bit triple must look like W-E-A, got '" + std::string(s) + "'");
    const auto part = s.substr(at, end - at);
    const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), *fields[i]);
    if (ec != std::errc() || p != part.data() + part.size()) {
      throw UsageError("bad bit-width '" + std::string(part) + "'");
    }
    at = end + 1;
  }
  const bool all_float = b.w == 32 && b.e == 32 && b.a == 32;
  const bool all_int = is_supported_bits(b.w) && is_supported_bits(b.e) && is_supported_bits(b.a);
  if (!all_float && !all_int) throw UsageError("bit triple must be 32-32-32 or use only 2, 3, 4 and 8");
  return b;
}

std::string BitWidths::str() const { return std::to_string(w) + "-" + std::to_string(e) + "-" + std::to_string(a); }

Mode parse_mode(std::string_view s) {
  if (s == "int8") return Mode::kInt8;
  if (s == "fp32") return Mode::kFp32;
  if (s == "int8-fp32attn") return Mode::kInt8Fp32Attn;
  throw UsageError("unknown mode '" + std::string(s) + "' (int8, fp32, int8-fp32attn)");
}

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kInt8: return "int8";
    case Mode::kFp32: return "fp32";
    case Mode::kInt8Fp32Attn: return "int8-fp32attn";
  }
  return "?";
}

void Linear::set_codes(QTensor codes) {
  if (codes.shape() != w.shape()) throw ShapeError("codes shape does not match the weight");
  w = dequantize(codes);
  packed = pack(codes);
  q = std::move(codes);
}

namespace {

PackedMatrix pack_rows(const QTensor& q, std::size_t r0, std::size_t r1) {
  const std::size_t cols = q.cols();
  std::vector<QuantParams> params;
  if (q.rowwise()) {
    for (std::size_t r = r0; r < r1; ++r) params.push_back(q.row_params(r));
  } else {
    params.push_back(q.params());
  }
  return pack_strided(q.codes().data() + r0 * cols, r1 - r0, cols, cols, 1, std::move(params));
}

LayerNormW make_ln(std::size_t h) {
  LayerNormW ln{FTensor(Shape{h}), FTensor(Shape{h})};
  for (float& g : ln.gain.data()) g = 1.0f;
  return ln;
}

Linear make_linear(std::size_t out, std::size_t in, bool bias = true) {
  Linear l;
  l.w = FTensor::matrix(out, in);
  if (bias) l.b = FTensor(Shape{out});
  return l;
}

AttentionW make_attention(std::size_t h) {
  AttentionW a;
  a.ln = make_ln(h);
  a.qkv = make_linear(3 * h, h);
  a.o = make_linear(h, h);
  return a;
}

FfnW make_ffn(std::size_t h, std::size_t f) {
  FfnW w;
  w.ln = make_ln(h);
  w.w1 = make_linear(f, h);
  w.w2 = make_linear(h, f);
  return w;
}

}  // namespace

void Model::prepare() {
  for_each_linear(*this, [](const std::string&, Linear& l, bool) {
    if (l.q) l.packed = pack(*l.q);
  });
  const std::size_t h = cfg.hidden;
  for (auto& layer : dec) {
    if (!layer.cross.qkv.q) continue;
    layer.cross.q_part = pack_rows(*layer.cross.qkv.q, 0, h);
    layer.cross.kv_part = pack_rows(*layer.cross.qkv.q, h, 3 * h);
  }
}

const QuantParams& Model::act_params(const std::string& point) const {
  const auto it = act.find(point);
  if (it == act.end()) throw CalibrationError("no activation params for '" + point + "'");
  return it->second;
}

Model make_empty_model(const ModelConfig& cfg) {
  cfg.validate();
  if (cfg.embed_dim() != cfg.hidden) throw ContractError("the engine needs embed == hidden");
  Model m;
  m.cfg = cfg;
  m.embed = make_linear(cfg.vocab, cfg.hidden, false);
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    m.enc.push_back({make_attention(cfg.hidden), make_ffn(cfg.hidden, cfg.ffn)});
  }
  for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
    m.dec.push_back({make_attention(cfg.hidden), make_attention(cfg.hidden), make_ffn(cfg.hidden, cfg.ffn)});
  }
  m.enc_ln = make_ln(cfg.hidden);
  m.dec_ln = make_ln(cfg.hidden);
  return m;
}

std::vector<std::string> quant_points(const ModelConfig& cfg) {
  std::vector<std::string> pts;
  const auto add = [&](const std::string& pre, std::initializer_list<const char*> names) {
    for (const char* n : names) pts.push_back(pre + "." + n);
  };
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    add(p + ".attn", {"in", "qkv_mm", "q", "k", "v", "ctx", "o_mm"});
    add(p + ".ffn", {"in", "mm1", "relu", "mm2"});
  }
  for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    add(p + ".cross", {"mem", "kv_mm", "k", "v"});
  }
  for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    add(p + ".self", {"in", "qkv_mm", "q", "k", "v", "ctx", "o_mm"});
    add(p + ".cross", {"in", "q_mm", "q", "ctx", "o_mm"});
    add(p + ".ffn", {"in", "mm1", "relu", "mm2"});
  }
  pts.push_back("out.in");
  return pts;
}

void for_each_linear(Model& m, const std::function<void(const std::string&, Linear&, bool)>& fn) {
  fn("embed", m.embed, true);
  for (std::size_t i = 0; i < m.enc.size(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    fn(p + ".attn.qkv", m.enc[i].attn.qkv, false);
    fn(p + ".attn.o", m.enc[i].attn.o, false);
    fn(p + ".ffn.w1", m.enc[i].ffn.w1, false);
    fn(p + ".ffn.w2", m.enc[i].ffn.w2, false);
  }
  for (std::size_t i = 0; i < m.dec.size(); ++i) {
    const std::string p = "dec." + std::to_string(i);
    fn(p + ".self.qkv", m.dec[i].self.qkv, false);
    fn(p + ".self.o", m.dec[i].self.o, false);
    fn(p + ".cross.qkv", m.dec[i].cross.qkv, false);
    fn(p + ".cross.o", m.dec[i].cross.o, false);
    fn(p + ".ffn.w1", m.dec[i].ffn.w1, false);
    fn(p + ".ffn.w2", m.dec[i].ffn.w2, false);
  }
}

void for_each_vector(Model& m, const std::function<void(const std::string&, FTensor&)>& fn) {
  const auto ln = [&](const std::string& p, LayerNormW& w) {
    fn(p + ".ln.gain", w.gain);
    fn(p + ".ln.bias", w.bias);
  };
  const auto attn = [&](const std::string& p, AttentionW& w) {
    ln(p, w.ln);
    fn(p + ".qkv.b", w.qkv.b);
    fn(p + ".o.b", w.o.b);
  };
  const auto ffn = [&](const std::string& p, FfnW& w) {
    ln(p, w.ln);
    fn(p + ".w1.b", w.w1.b);
    fn(p + ".w2.b", w.w2.b);
  };
  for (std::size_t i = 0; i < m.enc.size(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    attn(p + ".attn", m.enc[i].attn);
    ffn(p + ".ffn", m.enc[i].ffn);
  }
  for (std::size_t i = 0; i < m.dec.size(); ++i) {
    const std::string p = "dec." + std::to_string(i);
    attn(p + ".self", m.dec[i].self);
    attn(p + ".cross", m.dec[i].cross);
    ffn(p + ".ffn", m.dec[i].ffn);
  }
  ln("enc", m.enc_ln);
  ln("dec", m.dec_ln);
}

void for_each_gamma(Model& m, const std::function<void(const std::string&, float&)>& fn) {
  for (std::size_t i = 0; i < m.enc.size(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    fn(p + ".attn", m.enc[i].attn.gamma);
    fn(p + ".ffn", m.enc[i].ffn.gamma);
  }
  for (std::size_t i = 0; i < m.dec.size(); ++i) {
    const std::string p = "dec." + std::to_string(i);
    fn(p + ".self", m.dec[i].self.gamma);
    fn(p + ".cross", m.dec[i].cross.gamma);
    fn(p + ".ffn", m.dec[i].ffn.gamma);
  }
}

// ---------------------------------------------------------------------------
// forward

namespace {

bool int8_mode(const RunOptions& o) { return o.mode != Mode::kFp32; }

void check_model(const Model& m, const RunOptions& o) {
  if (int8_mode(o) && !m.quantized()) {
    throw ContractError(std::string("mode ") + mode_name(o.mode) + " needs a quantized model");
  }
}

void observe(const RunOptions& o, const std::string& name, const FTensor& t, std::size_t c0 = 0,
             std::size_t c1 = kAllColumns) {
  if (!o.observe) return;
  c1 = std::min(c1, t.cols());
  if (c0 == 0 && c1 == t.cols()) {
    (*o.observe)(name, t.data());
    return;
  }
  std::vector<float> slice;
  slice.reserve(t.rows() * (c1 - c0));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.row(r);
    slice.insert(slice.end(), row.begin() + static_cast<std::ptrdiff_t>(c0), row.begin() + static_cast<std::ptrdiff_t>(c1));
  }
  (*o.observe)(name, slice);
}

struct QAct {
  std::vector<std::uint8_t> codes;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<QuantSection> sections;
};

QAct quantize_act(const FTensor& x, std::vector<QuantSection> sections) {
  QAct q{std::vector<std::uint8_t>(x.size()), x.rows(), x.cols(), std::move(sections)};
  for (std::size_t r = 0; r < q.rows; ++r) {
    const auto row = x.row(r);
    std::uint8_t* out = q.codes.data() + r * q.cols;
    for (const auto& s : q.sections) {
      for (std::size_t c = s.begin; c < s.end; ++c) out[c] = quantize_value(row[c], s.params);
    }
  }
  return q;
}

QAct quantize_act(const FTensor& x, const QuantParams& p) { return quantize_act(x, {{0, x.cols(), p}}); }

FTensor to_real(const std::vector<std::int32_t>& acc, std::size_t rows, std::size_t cols, const AccMeta& meta) {
  FTensor out = FTensor::matrix(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = meta.value(i, j, acc[i * cols + j]);
  }
  return out;
}

FTensor linear_int8(const QAct& a, const PackedMatrix& w, int workers) {
  if (w.cols != a.cols) throw ContractError("weights are not packed for this layer");
  std::vector<std::int32_t> acc(a.rows * w.rows);
  const AccMeta meta = linear_u8(a.codes.data(), a.rows, a.cols, a.sections.at(0).params, w, acc.data(), workers);
  return to_real(acc, a.rows, w.rows, meta);
}

FTensor linear_f32(const FTensor& x, const FTensor& w, std::size_t r0, std::size_t r1, int workers) {
  FTensor out = FTensor::matrix(x.rows(), r1 - r0);
  gemm_f32(x.data().data(), x.rows(), x.cols(), x.cols(), w.data().data() + r0 * w.cols(), r1 - r0, w.cols(),
           out.data().data(), workers);
  return out;
}

void fake_quant(FTensor& x, const QuantParams& p) {
  for (float& v : x.data()) v = dequantize_value(quantize_value(v, p), p);
}

void add_bias(FTensor& x, const FTensor& b, std::size_t offset) {
  const auto bias = b.data().subspan(offset, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) bias_add_row(x.row(r), bias);
}

void append_f32(KvBlock& kv, const FTensor& src, std::size_t kc, std::size_t vc) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    const auto row = src.row(r);
    kv.k.insert(kv.k.end(), row.begin() + static_cast<std::ptrdiff_t>(kc),
                row.begin() + static_cast<std::ptrdiff_t>(kc + kv.width));
    kv.v.insert(kv.v.end(), row.begin() + static_cast<std::ptrdiff_t>(vc),
                row.begin() + static_cast<std::ptrdiff_t>(vc + kv.width));
  }
  kv.rows += src.rows();
}

void append_codes(KvBlock& kv, const QAct& src, std::size_t kc, std::size_t vc) {
  for (const auto& s : src.sections) {
    if (s.begin == kc) kv.k_params = s.params;
    if (s.begin == vc) kv.v_params = s.params;
  }
  for (std::size_t r = 0; r < src.rows; ++r) {
    const std::uint8_t* row = src.codes.data() + r * src.cols;
    kv.kq.insert(kv.kq.end(), row + kc, row + kc + kv.width);
    kv.vq.insert(kv.vq.end(), row + vc, row + vc + kv.width);
  }
  kv.rows += src.rows;
}

// Multi-head attention of lq query rows against kv. Queries are f32 (fp32
// mode) or codes. Returns the lq x H context before the output projection.
FTensor attend(const Model& m, const RunOptions& o, const float* qf, const std::uint8_t* qq, const QuantParams& qp,
               std::size_t lq, std::size_t ldq, const KvBlock& kv, bool causal, std::size_t offset) {
  const std::size_t heads = m.cfg.heads, d = m.cfg.head_dim(), h = m.cfg.hidden, lk = kv.rows;
  if (lk == 0) throw ContractError("attention over an empty key/value set");
  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d)));

  FTensor probs = FTensor::matrix(heads * lq, lk);
  if (!int8_mode(o)) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      gemm_f32(qf + hd * d, lq, d, ldq, kv.k.data() + hd * d, lk, kv.width, probs.row(hd * lq).data(), o.workers);
    }
  } else {
    std::vector<std::int32_t> acc(heads * lq * lk);
    const AccMeta meta =
        scores_u8(qq, lq, ldq, qp, kv.kq.data(), lk, kv.width, kv.k_params, heads, d, acc.data(), o.workers);
    probs = to_real(acc, heads * lq, lk, meta);
  }
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    softmax_row(probs.row(r), scale, causal ? offset + r % lq + 1 : kAllColumns);
  }

  if (o.mode == Mode::kInt8) {
    const QAct pq = quantize_act(probs, kProbParams);
    std::vector<std::int32_t> acc(lq * h);
    const AccMeta meta = context_u8(pq.codes.data(), lq, lk, kProbParams, kv.vq.data(), kv.width, kv.v_params, heads,
                                    d, acc.data(), o.workers);
    return to_real(acc, lq, h, meta);
  }

  std::vector<float> deq;
  const float* v = kv.v.data();
  if (o.mode == Mode::kInt8Fp32Attn) {
    deq.resize(kv.vq.size());
    for (std::size_t i = 0; i < deq.size(); ++i) deq[i] = dequantize_value(kv.vq[i], kv.v_params);
    v = deq.data();
  }
  FTensor ctx = FTensor::matrix(lq, h);
  std::vector<float> vt(d * lk), tile(lq * d);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t j = 0; j < lk; ++j) vt[c * lk + j] = v[j * kv.width + hd * d + c];
    }
    gemm_f32(probs.row(hd * lq).data(), lq, lk, lk, vt.data(), d, lk, tile.data(), o.workers);
    for (std::size_t i = 0; i < lq; ++i) std::copy_n(tile.data() + i * d, d, ctx.row(i).data() + hd * d);
  }
  return ctx;
}

// Output projection, bias and residual shared by self and cross attention.
FTensor finish_attention(const Model& m, const AttentionW& w, const std::string& pre, const FTensor& ctx,
                         const FTensor& x, const RunOptions& o) {
  FTensor y;
  if (!int8_mode(o)) {
    observe(o, pre + ".ctx", ctx);
    y = linear_f32(ctx, w.o.w, 0, m.cfg.hidden, o.workers);
    observe(o, pre + ".o_mm", y);
  } else {
    const QAct c = quantize_act(ctx, m.act_params(pre + ".ctx"));
    y = linear_int8(c, w.o.packed, o.workers);
    fake_quant(y, m.act_params(pre + ".o_mm"));
  }
  add_bias(y, w.o.b, 0);
  return residual_combine(x, y, w.gamma);
}

void check_width(const Model& m, const FTensor& x) {
  if (x.rank() != 2 || x.cols() != m.cfg.hidden) {
    throw ShapeError("sublayer input must be rows x " + std::to_string(m.cfg.hidden) + ", got " + shape_str(x.shape()));
  }
}

}  // namespace

void add_positions(FTensor& x, std::size_t offset) {
  const std::size_t h = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double pos = static_cast<double>(offset + r);
    for (std::size_t c = 0; c < h; ++c) {
      const double freq = std::pow(10000.0, static_cast<double>(c / 2 * 2) / static_cast<double>(h));
      x.at(r, c) += static_cast<float>(c % 2 == 0 ? std::sin(pos / freq) : std::cos(pos / freq));
    }
  }
}

FTensor embed_tokens(const Model& m, std::span<const std::int32_t> ids, std::size_t offset) {
  const std::size_t h = m.cfg.hidden;
  const float scale = static_cast<float>(std::sqrt(static_cast<double>(h)));
  FTensor x = FTensor::matrix(ids.size(), h);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= m.cfg.vocab) {
      throw VocabError("token id " + std::to_string(ids[r]) + " outside the vocabulary of " +
                       std::to_string(m.cfg.vocab));
    }
    const auto e = m.embed.w.row(static_cast<std::size_t>(ids[r]));
    for (std::size_t c = 0; c < h; ++c) x.at(r, c) = e[c] * scale;
  }
  add_positions(x, offset);
  return x;
}

FTensor ffn_forward(const Model& m, const FfnW& w, const std::string& pre, const FTensor& x, const RunOptions& o) {
  check_width(m, x);
  const FTensor h = layer_norm(x, w.ln.gain, w.ln.bias);
  FTensor u, y;
  if (!int8_mode(o)) {
    observe(o, pre + ".in", h);
    u = linear_f32(h, w.w1.w, 0, w.w1.w.rows(), o.workers);
    observe(o, pre + ".mm1", u);
    add_bias(u, w.w1.b, 0);
    u = relu(std::move(u));
    observe(o, pre + ".relu", u);
    y = linear_f32(u, w.w2.w, 0, w.w2.w.rows(), o.workers);
    observe(o, pre + ".mm2", y);
  } else {
    u = linear_int8(quantize_act(h, m.act_params(pre + ".in")), w.w1.packed, o.workers);
    fake_quant(u, m.act_params(pre + ".mm1"));
    add_bias(u, w.w1.b, 0);
    u = relu(std::move(u));
    y = linear_int8(quantize_act(u, m.act_params(pre + ".relu")), w.w2.packed, o.workers);
    fake_quant(y, m.act_params(pre + ".mm2"));
  }
  add_bias(y, w.w2.b, 0);
  return residual_combine(x, y, w.gamma);
}

FTensor attention_forward(const Model& m, const AttentionW& w, const std::string& pre, const FTensor& x, bool causal,
                          KvBlock* cache, const RunOptions& o) {
  check_width(m, x);
  const std::size_t hd = m.cfg.hidden;
  KvBlock local;
  local.width = hd;
  KvBlock& kv = cache ? *cache : local;
  if (kv.width != hd) throw ContractError("key/value cache width does not match the model");
  if (cache && kv.rows > 0 && int8_mode(o) != kv.k.empty()) {
    throw ContractError("key/value cache was filled in a different mode");
  }
  const std::size_t offset = kv.rows;
  if (cache) causal = true;

  const FTensor h = layer_norm(x, w.ln.gain, w.ln.bias);
  if (!int8_mode(o)) {
    observe(o, pre + ".in", h);
    FTensor qkv = linear_f32(h, w.qkv.w, 0, 3 * hd, o.workers);
    observe(o, pre + ".qkv_mm", qkv);
    add_bias(qkv, w.qkv.b, 0);
    observe(o, pre + ".q", qkv, 0, hd);
    observe(o, pre + ".k", qkv, hd, 2 * hd);
    observe(o, pre + ".v", qkv, 2 * hd, 3 * hd);
    append_f32(kv, qkv, hd, 2 * hd);
    const FTensor ctx = attend(m, o, qkv.data().data(), nullptr, {}, x.rows(), 3 * hd, kv, causal, offset);
    return finish_attention(m, w, pre, ctx, x, o);
  }
  FTensor qkv = linear_int8(quantize_act(h, m.act_params(pre + ".in")), w.qkv.packed, o.workers);
  fake_quant(qkv, m.act_params(pre + ".qkv_mm"));
  add_bias(qkv, w.qkv.b, 0);
  const QAct c = quantize_act(qkv, {{0, hd, m.act_params(pre + ".q")},
                                    {hd, 2 * hd, m.act_params(pre + ".k")},
                                    {2 * hd, 3 * hd, m.act_params(pre + ".v")}});
  append_codes(kv, c, hd, 2 * hd);
  const FTensor ctx = attend(m, o, nullptr, c.codes.data(), c.sections[0].params, x.rows(), 3 * hd, kv, causal, offset);
  return finish_attention(m, w, pre, ctx, x, o);
}

KvBlock cross_kv(const Model& m, const AttentionW& w, const std::string& pre, const FTensor& memory,
                 const RunOptions& o) {
  check_width(m, memory);
  const std::size_t hd = m.cfg.hidden;
  KvBlock kv;
  kv.width = hd;
  if (!int8_mode(o)) {
    observe(o, pre + ".mem", memory);
    FTensor t = linear_f32(memory, w.qkv.w, hd, 3 * hd, o.workers);
    observe(o, pre + ".kv_mm", t);
    add_bias(t, w.qkv.b, hd);
    observe(o, pre + ".k", t, 0, hd);
    observe(o, pre + ".v", t, hd, 2 * hd);
    append_f32(kv, t, 0, hd);
    return kv;
  }
  FTensor t = linear_int8(quantize_act(memory, m.act_params(pre + ".mem")), w.kv_part, o.workers);
  fake_quant(t, m.act_params(pre + ".kv_mm"));
  add_bias(t, w.qkv.b, hd);
  const QAct c = quantize_act(t, {{0, hd, m.act_params(pre + ".k")}, {hd, 2 * hd, m.act_params(pre + ".v")}});
  append_codes(kv, c, 0, hd);
  return kv;
}

FTensor cross_attention_forward(const Model& m, const AttentionW& w, const std::string& pre, const FTensor& x,
                                const KvBlock& memory, const RunOptions& o) {
  check_width(m, x);
  const std::size_t hd = m.cfg.hidden;
  const FTensor h = layer_norm(x, w.ln.gain, w.ln.bias);
  if (!int8_mode(o)) {
    observe(o, pre + ".in", h);
    FTensor q = linear_f32(h, w.qkv.w, 0, hd, o.workers);
    observe(o, pre + ".q_mm", q);
    add_bias(q, w.qkv.b, 0);
    observe(o, pre + ".q", q);
    const FTensor ctx = attend(m, o, q.data().data(), nullptr, {}, x.rows(), hd, memory, false, 0);
    return finish_attention(m, w, pre, ctx, x, o);
  }
  FTensor q = linear_int8(quantize_act(h, m.act_params(pre + ".in")), w.q_part, o.workers);
  fake_quant(q, m.act_params(pre + ".q_mm"));
  add_bias(q, w.qkv.b, 0);
  const QAct c = quantize_act(q, m.act_params(pre + ".q"));
  const FTensor ctx = attend(m, o, nullptr, c.codes.data(), c.sections[0].params, x.rows(), hd, memory, false, 0);
  return finish_attention(m, w, pre, ctx, x, o);
}

namespace {

FTensor run_encoder_layer_graph(const Model& m, std::size_t layer, FTensor x, Arena& arena, int workers) {
  const LayerGraph lg = build_encoder_layer_graph(m, layer, x.rows());
  const OpGraph g = fuse(lg.graph);
  const MemoryPlan plan = plan_memory(g);
  std::vector<FTensor> stream;
  stream.reserve(lg.stream.size());
  FTensor out = FTensor::matrix(x.rows(), x.cols());
  Bindings b;
  b.bind(lg.input, x.data());
  b.bind(lg.output, out.data());
  for (TensorId t : lg.stream) {
    stream.push_back(FTensor::matrix(g.tensor(t).rows, g.tensor(t).cols));
    b.bind(t, stream.back().data());
  }
  execute(g, plan, arena, b, {workers});
  return out;
}

FTensor output_logits(const Model& m, const FTensor& x, const RunOptions& o) {
  const FTensor h = layer_norm(x, m.dec_ln.gain, m.dec_ln.bias);
  if (!int8_mode(o)) {
    observe(o, "out.in", h);
    return linear_f32(h, m.embed.w, 0, m.cfg.vocab, o.workers);
  }
  return linear_int8(quantize_act(h, m.act_params("out.in")), m.embed.packed, o.workers);
}

std::string layer_name(const char* stack, std::size_t i, const char* sub) {
  return std::string(stack) + "." + std::to_string(i) + "." + sub;
}

}  // namespace

EncoderMemory encode(const Model& m, std::span<const std::int32_t> src, const RunOptions& o) {
  check_model(m, o);
  if (src.empty()) throw ContractError("cannot encode an empty source");
  FTensor x = embed_tokens(m, src, 0);
  if (o.mode == Mode::kInt8 && o.use_graph) {
    Arena arena;
    for (std::size_t i = 0; i < m.enc.size(); ++i) x = run_encoder_layer_graph(m, i, std::move(x), arena, o.workers);
  } else {
    for (std::size_t i = 0; i < m.enc.size(); ++i) {
      x = attention_forward(m, m.enc[i].attn, layer_name("enc", i, "attn"), x, false, nullptr, o);
      x = ffn_forward(m, m.enc[i].ffn, layer_name("enc", i, "ffn"), x, o);
    }
  }
  EncoderMemory mem;
  mem.output = layer_norm(x, m.enc_ln.gain, m.enc_ln.bias);
  for (std::size_t i = 0; i < m.dec.size(); ++i) {
    mem.cross.push_back(cross_kv(m, m.dec[i].cross, layer_name("dec", i, "cross"), mem.output, o));
  }
  return mem;
}

DecodeState start_decode(const Model& m, EncoderMemory memory) {
  if (memory.cross.size() != m.dec.size()) throw ContractError("encoder memory does not match the decoder depth");
  DecodeState s;
  s.memory = std::move(memory);
  s.self.resize(m.dec.size());
  for (auto& kv : s.self) kv.width = m.cfg.hidden;
  return s;
}

FTensor decode_step(const Model& m, DecodeState& state, std::int32_t token, const RunOptions& o) {
  check_model(m, o);
  if (state.step >= m.cfg.max_len) {
    throw ContractError("decoder step " + std::to_string(state.step) + " exceeds max_len " +
                        std::to_string(m.cfg.max_len));
  }
  if (state.self.size() != m.dec.size()) throw ContractError("decode state does not match the model");
  const std::int32_t ids[1] = {token};
  FTensor x = embed_tokens(m, ids, state.step);
  for (std::size_t i = 0; i < m.dec.size(); ++i) {
    x = attention_forward(m, m.dec[i].self, layer_name("dec", i, "self"), x, true, &state.self[i], o);
    x = cross_attention_forward(m, m.dec[i].cross, layer_name("dec", i, "cross"), x, state.memory.cross[i], o);
    x = ffn_forward(m, m.dec[i].ffn, layer_name("dec", i, "ffn"), x, o);
  }
  ++state.step;
  return output_logits(m, x, o);
}

FTensor decode_full(const Model& m, const EncoderMemory& memory, std::span<const std::int32_t> tokens,
                    const RunOptions& o) {
  check_model(m, o);
  if (tokens.empty()) throw ContractError("cannot decode an empty prefix");
  if (tokens.size() > m.cfg.max_len) throw ContractError("target prefix exceeds max_len");
  FTensor x = embed_tokens(m, tokens, 0);
  for (std::size_t i = 0; i < m.dec.size(); ++i) {
    x = attention_forward(m, m.dec[i].self, layer_name("dec", i, "self"), x, true, nullptr, o);
    x = cross_attention_forward(m, m.dec[i].cross, layer_name("dec", i, "cross"), x, memory.cross.at(i), o);
    x = ffn_forward(m, m.dec[i].ffn, layer_name("dec", i, "ffn"), x, o);
  }
  return output_logits(m, x, o);
}

std::vector<std::int32_t> greedy_decode(const Model& m, std::span<const std::int32_t> src, std::size_t max_len,
                                        const RunOptions& o) {
  std::vector<std::int32_t> out;
  if (max_len == 0) return out;
  max_len = std::min(max_len, m.cfg.max_len);
  DecodeState st = start_decode(m, encode(m, src, o));
  std::int32_t tok = m.special.bos;
  while (out.size() < max_len) {
    const FTensor logits = decode_step(m, st, tok, o);
    tok = static_cast<std::int32_t>(argmax_row(logits.row(0)));
    out.push_back(tok);
    if (tok == m.special.eos) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// graphs

namespace {

class GraphBuilder {
 public:
  GraphBuilder(const Model& m, OpGraph& g) : m_(m), g_(g) {}

  TensorId tensor(const std::string& name, DType t, std::size_t rows, std::size_t cols, bool ext = false) {
    return g_.add_tensor(name, t, rows, cols, ext);
  }

  TensorId row_op(OpKind kind, std::vector<TensorId> in, const std::string& name, DType out_type, Node n = {}) {
    const TensorInfo& ref = g_.tensor(in.back());
    const TensorId out = tensor(name, out_type, ref.rows, kind == OpKind::kArgmax ? 1 : ref.cols);
    n.kind = kind;
    n.inputs = std::move(in);
    n.outputs = {out};
    n.label = name;
    g_.add_node(std::move(n));
    return out;
  }

  TensorId layer_norm(TensorId x, const LayerNormW& w, const std::string& name) {
    Node n;
    n.gain = &w.gain;
    n.bias = &w.bias;
    return row_op(OpKind::kLayerNorm, {x}, name, DType::kF32, n);
  }

  TensorId quantize(TensorId x, std::vector<QuantSection> sections, const std::string& name) {
    Node n;
    n.sections = std::move(sections);
    return row_op(OpKind::kQuantize, {x}, name, DType::kI8, n);
  }

  TensorId quantize(TensorId x, const std::string& point) {
    return quantize(x, {{0, g_.tensor(x).cols, m_.act_params(point)}}, point);
  }

  TensorId dequantize(TensorId x, const std::string& name) { return row_op(OpKind::kDequantize, {x}, name, DType::kF32); }

  // Accumulator -> real -> quantized at `point` -> real.
  TensorId requantize(TensorId acc, const std::string& point) {
    return dequantize(quantize(dequantize(acc, point + ".acc"), point), point + ".deq");
  }

  TensorId bias(TensorId x, const FTensor& b, std::size_t offset, const std::string& name) {
    Node n;
    n.bias = &b;
    n.bias_offset = offset;
    return row_op(OpKind::kBiasAdd, {x}, name, DType::kF32, n);
  }

  TensorId gemm(GemmAttrs attrs, std::vector<TensorId> in, std::size_t rows, std::size_t cols, const std::string& name,
                std::optional<TensorId> out = {}) {
    const TensorId o = out ? *out : tensor(name, DType::kI32, rows, cols);
    Node n;
    n.kind = OpKind::kGemm;
    n.gemm = attrs;
    n.inputs = std::move(in);
    n.outputs = {o};
    n.label = name;
    g_.add_node(std::move(n));
    return o;
  }

  TensorId linear(TensorId x, const PackedMatrix& w, const std::string& name) {
    if (w.rows == 0) throw ContractError("graph needs packed weights for '" + name + "'");
    GemmAttrs a;
    a.weight = &w;
    return gemm(a, {x}, g_.tensor(x).rows, w.rows, name);
  }

  // Scores, softmax, probabilities and context for q (columns from q_col of
  // qt) against keys kt[:, k_col..] and values vt[:, v_col..].
  TensorId attention_core(TensorId qt, std::size_t q_col, TensorId kt, std::size_t k_col, TensorId vt,
                          std::size_t v_col, bool causal, std::size_t offset, const std::string& pre) {
    const std::size_t heads = m_.cfg.heads, d = m_.cfg.head_dim();
    const std::size_t lq = g_.tensor(qt).rows, lk = g_.tensor(kt).rows;
    GemmAttrs sa;
    sa.kind = GemmKind::kScores;
    sa.a_col = q_col;
    sa.b_col = k_col;
    sa.heads = heads;
    sa.head_dim = d;
    const TensorId scores = gemm(sa, {qt, kt}, heads * lq, lk, pre + ".scores");
    Node sm;
    sm.scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d)));
    sm.causal = causal;
    sm.query_rows = lq;
    sm.position_offset = offset;
    const TensorId p = row_op(OpKind::kSoftmax, {dequantize(scores, pre + ".scores.deq")}, pre + ".probs",
                              DType::kF32, sm);
    const TensorId pq = quantize(p, {{0, lk, kProbParams}}, pre + ".probs.q");
    GemmAttrs ca = sa;
    ca.kind = GemmKind::kContext;
    ca.a_col = 0;
    ca.b_col = v_col;
    return gemm(ca, {pq, vt}, lq, heads * d, pre + ".context");
  }

  TensorId finish(TensorId ctx_acc, TensorId x, const AttentionW& w, const std::string& pre, TensorId out) {
    const TensorId cq = quantize(dequantize(ctx_acc, pre + ".ctx.deq"), pre + ".ctx");
    const TensorId y = bias(requantize(linear(cq, w.o.packed, pre + ".o"), pre + ".o_mm"), w.o.b, 0, pre + ".o.b");
    return residual(x, y, w.gamma, out);
  }

  TensorId residual(TensorId x, TensorId y, float gamma, TensorId out) {
    Node n;
    n.kind = OpKind::kResidualCombine;
    n.gamma = gamma;
    n.inputs = {x, y};
    n.outputs = {out};
    n.label = g_.tensor(out).name;
    g_.add_node(std::move(n));
    return out;
  }

  TensorId ffn(TensorId x, const FfnW& w, const std::string& pre, TensorId out) {
    const TensorId a = quantize(layer_norm(x, w.ln, pre + ".ln"), pre + ".in");
    TensorId u = bias(requantize(linear(a, w.w1.packed, pre + ".w1"), pre + ".mm1"), w.w1.b, 0, pre + ".w1.b");
    u = row_op(OpKind::kRelu, {u}, pre + ".relu.f", DType::kF32);
    const TensorId r = quantize(u, pre + ".relu");
    const TensorId y = bias(requantize(linear(r, w.w2.packed, pre + ".w2"), pre + ".mm2"), w.w2.b, 0, pre + ".w2.b");
    return residual(x, y, w.gamma, out);
  }

 private:
  const Model& m_;
  OpGraph& g_;
};

void require_packed(const Model& m) {
  if (!m.quantized()) throw ContractError("op graphs need a quantized model");
}

}  // namespace

LayerGraph build_encoder_layer_graph(const Model& m, std::size_t layer, std::size_t len) {
  require_packed(m);
  const EncoderLayer& L = m.enc.at(layer);
  const std::size_t hd = m.cfg.hidden;
  const std::string pa = layer_name("enc", layer, "attn"), pf = layer_name("enc", layer, "ffn");
  LayerGraph lg;
  GraphBuilder b(m, lg.graph);
  lg.input = b.tensor("x", DType::kF32, len, hd, true);
  const TensorId mid = b.tensor("x.attn", DType::kF32, len, hd, true);
  lg.output = b.tensor("x.ffn", DType::kF32, len, hd, true);
  lg.stream = {mid};

  const TensorId a = b.quantize(b.layer_norm(lg.input, L.attn.ln, pa + ".ln"), pa + ".in");
  const TensorId qkv = b.bias(b.requantize(b.linear(a, L.attn.qkv.packed, pa + ".qkv"), pa + ".qkv_mm"),
                              L.attn.qkv.b, 0, pa + ".qkv.b");
  const TensorId qkv_q = b.quantize(qkv,
                                    {{0, hd, m.act_params(pa + ".q")},
                                     {hd, 2 * hd, m.act_params(pa + ".k")},
                                     {2 * hd, 3 * hd, m.act_params(pa + ".v")}},
                                    pa + ".qkv.q");
  const TensorId ctx = b.attention_core(qkv_q, 0, qkv_q, hd, qkv_q, 2 * hd, false, 0, pa);
  b.finish(ctx, lg.input, L.attn, pa, mid);
  b.ffn(mid, L.ffn, pf, lg.output);
  return lg;
}

LayerGraph build_decoder_step_graph(const Model& m, std::size_t layer, std::size_t cache_len, std::size_t src_len) {
  require_packed(m);
  const DecoderLayer& L = m.dec.at(layer);
  const std::size_t hd = m.cfg.hidden;
  const std::string ps = layer_name("dec", layer, "self"), pc = layer_name("dec", layer, "cross"),
                    pf = layer_name("dec", layer, "ffn");
  LayerGraph lg;
  GraphBuilder b(m, lg.graph);
  lg.input = b.tensor("x", DType::kF32, 1, hd, true);
  const TensorId k_cache = b.tensor("self.k_cache", DType::kI8, cache_len, hd, true);
  const TensorId v_cache = b.tensor("self.v_cache", DType::kI8, cache_len, hd, true);
  const TensorId mem_k = b.tensor("cross.k", DType::kI8, src_len, hd, true);
  const TensorId mem_v = b.tensor("cross.v", DType::kI8, src_len, hd, true);
  const TensorId x1 = b.tensor("x.self", DType::kF32, 1, hd, true);
  const TensorId x2 = b.tensor("x.cross", DType::kF32, 1, hd, true);
  const TensorId x3 = b.tensor("x.ffn", DType::kF32, 1, hd, true);
  lg.stream = {k_cache, v_cache, mem_k, mem_v, x1, x2};

  TensorId a = b.quantize(b.layer_norm(lg.input, L.self.ln, ps + ".ln"), ps + ".in");
  const TensorId qkv = b.bias(b.requantize(b.linear(a, L.self.qkv.packed, ps + ".qkv"), ps + ".qkv_mm"),
                              L.self.qkv.b, 0, ps + ".qkv.b");
  const TensorId qkv_q = b.quantize(qkv,
                                    {{0, hd, m.act_params(ps + ".q")},
                                     {hd, 2 * hd, m.act_params(ps + ".k")},
                                     {2 * hd, 3 * hd, m.act_params(ps + ".v")}},
                                    ps + ".qkv.q");
  b.finish(b.attention_core(qkv_q, 0, k_cache, 0, v_cache, 0, false, 0, ps), lg.input, L.self, ps, x1);

  a = b.quantize(b.layer_norm(x1, L.cross.ln, pc + ".ln"), pc + ".in");
  const TensorId q = b.bias(b.requantize(b.linear(a, L.cross.q_part, pc + ".q"), pc + ".q_mm"), L.cross.qkv.b, 0,
                            pc + ".q.b");
  const TensorId qq = b.quantize(q, pc + ".q");
  b.finish(b.attention_core(qq, 0, mem_k, 0, mem_v, 0, false, 0, pc), x1, L.cross, pc, x2);
  b.ffn(x2, L.ffn, pf, x3);

  lg.output = x3;
  if (layer + 1 == m.dec.size()) {
    const TensorId h = b.quantize(b.layer_norm(x3, m.dec_ln, "out.ln"), "out.in");
    const TensorId logits = b.dequantize(b.linear(h, m.embed.packed, "out.proj"), "out.logits");
    const TensorId token = b.tensor("token", DType::kI32, 1, 1, true);
    Node n;
    n.kind = OpKind::kArgmax;
    n.inputs = {logits};
    n.outputs = {token};
    n.label = "argmax";
    lg.graph.add_node(std::move(n));
    lg.stream.push_back(x3);
    lg.output = token;
  }
  return lg;
}

}  // namespace nmt8
