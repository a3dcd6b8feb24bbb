// model.hpp - pre-norm encoder-decoder Transformer with integer inference
//
// Every sublayer computes  out = F(LN(x)) + gamma * x.  In the int8 modes the
// activations entering a GEMM and the GEMM outputs (before the bias add) are
// quantized at A bits; weights are at W bits, the tied embedding / output
// projection at E bits. Biases, LN and the residual stream stay f32.
//
// Quantization points (ScaleTable keys), per sublayer prefix:
//   enc.{i}.attn / dec.{i}.self : in qkv_mm q k v ctx o_mm
//   dec.{i}.cross               : in q_mm q mem kv_mm k v ctx o_mm
//   enc.{i}.ffn / dec.{i}.ffn   : in mm1 relu mm2
//   out.in                      : final decoder LN output
// Attention probabilities use fixed 8-bit [0, 1] params.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nmt8/gemm.hpp"
#include "nmt8/graph.hpp"
#include "nmt8/tensor.hpp"

namespace nmt8 {

struct ModelConfig {
  std::size_t vocab = 0;
  std::size_t hidden = 0;
  std::size_t embed = 0;  // 0 means == hidden
  std::size_t ffn = 0;
  std::size_t heads = 1;
  std::size_t enc_layers = 1;
  std::size_t dec_layers = 1;
  std::size_t share_group = 1;  // estimator only
  std::size_t max_len = 256;    // decoder positions

  std::size_t embed_dim() const { return embed == 0 ? hidden : embed; }
  std::size_t head_dim() const { return hidden / heads; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// W-E-A bit triple; 32-32-32 is the float model.
struct BitWidths {
  int w = 32;
  int e = 32;
  int a = 32;

  static BitWidths parse(std::string_view s);
  std::string str() const;
  bool is_float() const { return w == 32; }
  friend bool operator==(const BitWidths&, const BitWidths&) = default;
};

struct SpecialIds {
  std::int32_t pad = 0;
  std::int32_t bos = 1;
  std::int32_t eos = 2;
  std::int32_t unk = 3;
  friend bool operator==(const SpecialIds&, const SpecialIds&) = default;
};

enum class Mode { kInt8, kFp32, kInt8Fp32Attn };
Mode parse_mode(std::string_view s);
const char* mode_name(Mode m);

struct Linear {
  FTensor w;  // out x in; the dequantized weight once quantized
  FTensor b;  // out, may be empty
  std::optional<QTensor> q;
  PackedMatrix packed;

  // Takes the codes, repacks and replaces w with the dequantized weight.
  void set_codes(QTensor codes);
};

struct LayerNormW {
  FTensor gain;
  FTensor bias;
};

struct AttentionW {
  LayerNormW ln;
  Linear qkv;  // rows [0,H) query, [H,2H) key, [2H,3H) value
  Linear o;
  float gamma = 1.0f;
  // Cross attention only: the query and key/value row slices of qkv.
  PackedMatrix q_part;
  PackedMatrix kv_part;
};

struct FfnW {
  LayerNormW ln;
  Linear w1;
  Linear w2;
  float gamma = 1.0f;
};

struct EncoderLayer {
  AttentionW attn;
  FfnW ffn;
};

struct DecoderLayer {
  AttentionW self;
  AttentionW cross;
  FfnW ffn;
};

struct ScaleTable {
  std::map<std::string, QuantParams> activations;
  // Weight name -> one entry (per-tensor) or one per row.
  std::map<std::string, std::vector<QuantParams>> weights;
  friend bool operator==(const ScaleTable&, const ScaleTable&) = default;
};

struct Model {
  ModelConfig cfg;
  SpecialIds special;
  BitWidths bits;  // 32-32-32 until quantized
  Linear embed;    // V x H, tied with the output projection
  std::vector<EncoderLayer> enc;
  std::vector<DecoderLayer> dec;
  LayerNormW enc_ln;
  LayerNormW dec_ln;
  std::map<std::string, QuantParams> act;

  bool quantized() const { return !bits.is_float(); }
  // Rebuilds packed weights (and cross-attention slices) from the codes.
  void prepare();
  const QuantParams& act_params(const std::string& point) const;
};

// A zero-initialised model of the given shape, LN gains 1.
Model make_empty_model(const ModelConfig& cfg);

// Names of all quantization points, in forward order.
std::vector<std::string> quant_points(const ModelConfig& cfg);

// Visits the weight matrices (embedding first) and the f32 vectors.
void for_each_linear(Model& m, const std::function<void(const std::string&, Linear&, bool is_embed)>& fn);
void for_each_vector(Model& m, const std::function<void(const std::string&, FTensor&)>& fn);
void for_each_gamma(Model& m, const std::function<void(const std::string&, float&)>& fn);

inline const QuantParams kProbParams{8, 1.0f / 255.0f, 0.0f};

using ObserveFn = std::function<void(const std::string& point, std::span<const float> values)>;

struct RunOptions {
  Mode mode = Mode::kFp32;
  int workers = 1;
  // fp32 mode: called with every activation that is quantized in int8 mode.
  const ObserveFn* observe = nullptr;
  // int8 mode: run encoder layers through the fused, planned graph.
  bool use_graph = true;
};

// Keys and values of one attention sublayer, H columns each.
struct KvBlock {
  std::size_t width = 0;
  std::size_t rows = 0;
  std::vector<float> k, v;              // fp32 mode
  std::vector<std::uint8_t> kq, vq;     // int8 modes
  QuantParams k_params, v_params;
};

struct EncoderMemory {
  FTensor output;              // src_len x H after the final LN
  std::vector<KvBlock> cross;  // per decoder layer
};

struct DecodeState {
  EncoderMemory memory;
  std::vector<KvBlock> self;  // per decoder layer, one row per emitted step
  std::size_t step = 0;
};

// Embedding lookup * sqrt(H) + sinusoidal position, positions from `offset`.
FTensor embed_tokens(const Model& m, std::span<const std::int32_t> ids, std::size_t offset = 0);
void add_positions(FTensor& x, std::size_t offset);

FTensor ffn_forward(const Model& m, const FfnW& w, const std::string& prefix, const FTensor& x,
                    const RunOptions& opt);
// Self attention over x. With a cache, x holds the newest rows only: their
// keys/values are appended and queries see every cached row (causal by
// construction). Without a cache, `causal` masks future positions.
FTensor attention_forward(const Model& m, const AttentionW& w, const std::string& prefix, const FTensor& x,
                          bool causal, KvBlock* cache, const RunOptions& opt);
FTensor cross_attention_forward(const Model& m, const AttentionW& w, const std::string& prefix, const FTensor& x,
                                const KvBlock& memory, const RunOptions& opt);
KvBlock cross_kv(const Model& m, const AttentionW& w, const std::string& prefix, const FTensor& memory,
                 const RunOptions& opt);

EncoderMemory encode(const Model& m, std::span<const std::int32_t> src, const RunOptions& opt);
DecodeState start_decode(const Model& m, EncoderMemory memory);
// One incremental decoder step; returns 1 x V logits.
FTensor decode_step(const Model& m, DecodeState& state, std::int32_t token, const RunOptions& opt);
// Whole target prefix at once with a causal mask; returns len x V logits.
FTensor decode_full(const Model& m, const EncoderMemory& memory, std::span<const std::int32_t> tokens,
                    const RunOptions& opt);
// Starts from BOS; the result includes EOS when it is produced. max_len is
// capped at cfg.max_len.
std::vector<std::int32_t> greedy_decode(const Model& m, std::span<const std::int32_t> src, std::size_t max_len,
                                        const RunOptions& opt);

struct LayerGraph {
  OpGraph graph;
  TensorId input = 0;
  TensorId output = 0;
  // Other caller-owned f32 tensors (the residual stream between sublayers).
  std::vector<TensorId> stream;
};

// Unfused op graph of encoder layer `layer` for a source of `len` tokens.
LayerGraph build_encoder_layer_graph(const Model& m, std::size_t layer, std::size_t len);
// One decoder step of layer `layer` plus the output projection, with
// `cache_len` cached positions and a `src_len` memory. Planning only.
LayerGraph build_decoder_step_graph(const Model& m, std::size_t layer, std::size_t cache_len, std::size_t src_len);

}  // namespace nmt8
