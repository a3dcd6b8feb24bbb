#include "nmt8/designspace.hpp"

#include "nmt8/errors.hpp"

namespace nmt8 {

namespace {

using u64 = std::uint64_t;

struct Dims {
  u64 v, e, h, f, heads, enc, dec, share;
};

Dims dims(const ModelConfig& cfg) {
  cfg.validate();
  return {cfg.vocab, cfg.embed_dim(), cfg.hidden, cfg.ffn, cfg.heads, cfg.enc_layers, cfg.dec_layers,
          cfg.share_group};
}

// Weight matrix entries and f32 vector entries of one layer.
struct LayerParams {
  u64 matrix = 0;
  u64 vector = 0;
  u64 total() const { return matrix + vector; }
};

LayerParams attention_params(const Dims& d) { return {4 * d.h * d.h, 4 * d.h + 2 * d.h + 1}; }
LayerParams ffn_params(const Dims& d) { return {2 * d.h * d.f, d.f + d.h + 2 * d.h + 1}; }

LayerParams encoder_layer(const Dims& d) {
  const auto a = attention_params(d), f = ffn_params(d);
  return {a.matrix + f.matrix, a.vector + f.vector};
}

LayerParams decoder_layer(const Dims& d) {
  const auto a = attention_params(d), f = ffn_params(d);
  return {2 * a.matrix + f.matrix, 2 * a.vector + f.vector};
}

u64 unique_layers(u64 layers, u64 share) { return (layers + share - 1) / share; }

}  // namespace

ParamCount count_params(const ModelConfig& cfg) {
  const Dims d = dims(cfg);
  u64 embed = d.v * d.e;
  if (d.e < d.h) embed += d.e * d.h;
  u64 body = unique_layers(d.enc, d.share) * encoder_layer(d).total() +
             unique_layers(d.dec, d.share) * decoder_layer(d).total();
  body += 4 * d.h;  // final encoder and decoder LN
  return {embed + body, body};
}

std::uint64_t estimate_flops(const ModelConfig& cfg, std::size_t src_len, std::size_t tgt_len) {
  const Dims d = dims(cfg);
  const u64 s = src_len, t = tgt_len;
  const u64 ffn = 2 * d.h * d.f;
  u64 f = 0;
  // encoder: projections per token, scores and context over s x s
  f += d.enc * (s * (4 * d.h * d.h + ffn) + 2 * s * s * d.h);
  if (d.e < d.h) f += (s + t) * d.e * d.h;
  // decoder step i sees i+1 cached positions
  const u64 self_span = t * (t + 1) / 2;
  f += d.dec * (t * (6 * d.h * d.h + ffn) + 2 * self_span * d.h + 2 * t * s * d.h + 2 * s * d.h * d.h);
  f += t * d.h * d.v;  // output projection
  return f;
}

std::uint64_t estimate_mmio(const ModelConfig& cfg, std::size_t src_len, std::size_t tgt_len, const BitWidths& bits) {
  const Dims d = dims(cfg);
  const u64 s = src_len, t = tgt_len;
  const u64 wb = static_cast<u64>(bits.w), eb = static_cast<u64>(bits.e);
  const u64 a = static_cast<u64>(bits.a) / 8 == 0 ? 1 : static_cast<u64>(bits.a) / 8;
  const u64 p = bits.is_float() ? 4 : 1;  // probabilities
  const u64 acc = 4;
  const auto weight_bytes = [&](const LayerParams& l) { return (l.matrix * wb + 7) / 8 + 4 * l.vector; };

  u64 bytes = (d.v * d.e * eb + 7) / 8;
  if (d.e < d.h) bytes += (d.e * d.h * wb + 7) / 8;
  bytes += d.enc * weight_bytes(encoder_layer(d)) + d.dec * weight_bytes(decoder_layer(d)) + 4 * 4 * d.h;

  // Tensors between fused nodes, per row.
  const auto attention_rows = [&](u64 keys) {
    return d.h * a + 3 * d.h * acc + 3 * d.h * a + d.heads * keys * (acc + p) + d.h * (acc + a) + d.h * acc;
  };
  const u64 ffn_rows = d.h * a + d.f * (acc + a) + d.h * acc;
  const u64 stream = 2 * d.h * 4;  // sublayer outputs on the f32 residual stream

  u64 act = s * d.h * 4;  // embedded source
  act += d.enc * s * (attention_rows(s) + ffn_rows + stream);
  act += s * d.h * 4;  // final LN output
  // cross K/V: memory quantized, projected, requantized
  act += d.dec * s * (d.h * a + 2 * d.h * acc + 2 * d.h * a);
  for (u64 i = 0; i < t; ++i) {
    act += d.h * 4;
    // cross attention has no K/V projection per step
    const u64 cross = attention_rows(s) - 2 * d.h * (acc + a);
    act += d.dec * (attention_rows(i + 1) + cross + ffn_rows + 3 * d.h * 4);
    act += d.h * a + d.v * acc;  // output projection
  }
  return bytes + act;
}

std::uint64_t size_bytes(std::uint64_t params, int w_bits, int e_bits, std::uint64_t embed_params) {
  if (embed_params > params) throw ContractError("embedding params exceed the total");
  const u64 bits = embed_params * static_cast<u64>(e_bits) + (params - embed_params) * static_cast<u64>(w_bits);
  return (bits + 7) / 8;
}

CostReport cost_report(const ModelConfig& cfg, std::size_t src_len, std::size_t tgt_len, const BitWidths& bits) {
  const ParamCount pc = count_params(cfg);
  CostReport r;
  r.params_total = pc.total;
  r.params_no_embed = pc.no_embed;
  r.flops = estimate_flops(cfg, src_len, tgt_len);
  r.mmio_bytes = estimate_mmio(cfg, src_len, tgt_len, bits);
  r.size_bytes = size_bytes(pc.total, bits.w, bits.e, pc.embed());
  return r;
}

ModelConfig preset(std::string_view name) {
  ModelConfig c;
  c.max_len = 256;
  if (name == "base" || name == "transformer-base") {
    c.vocab = 40000, c.hidden = 512, c.ffn = 2048, c.heads = 8, c.enc_layers = 6, c.dec_layers = 6;
  } else if (name == "small") {
    c.vocab = 40000, c.hidden = 256, c.ffn = 1024, c.heads = 4, c.enc_layers = 6, c.dec_layers = 6;
  } else if (name == "tiny") {
    c.vocab = 40000, c.hidden = 128, c.ffn = 512, c.heads = 2, c.enc_layers = 6, c.dec_layers = 6;
  } else if (name == "mobilenmt-10mb") {
    c.vocab = 8000, c.hidden = 256, c.ffn = 512, c.heads = 4, c.enc_layers = 12, c.dec_layers = 2;
  } else if (name == "mobilenmt-20mb") {
    c.vocab = 8000, c.hidden = 384, c.ffn = 768, c.heads = 6, c.enc_layers = 12, c.dec_layers = 2;
  } else {
    throw UsageError("unknown preset '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::string> preset_names() {
  return {"base", "small", "tiny", "transformer-base", "mobilenmt-10mb", "mobilenmt-20mb"};
}

}  // namespace nmt8
