#include <gtest/gtest.h>

#include <cmath>

#include "nmt8/designspace.hpp"
#include "nmt8/errors.hpp"
#include "nmt8/model.hpp"

using namespace nmt8;

namespace {

double rel(double got, double want) { return std::abs(got - want) / want; }

// Written out per weight for a standard pre-norm Transformer with tied
// embeddings; gammas count as one parameter each.
std::uint64_t hand_count(std::uint64_t v, std::uint64_t h, std::uint64_t f, std::uint64_t enc, std::uint64_t dec) {
  const std::uint64_t attn = (h * 3 * h + 3 * h) + (h * h + h) + 2 * h + 1;
  const std::uint64_t ffn = (h * f + f) + (f * h + h) + 2 * h + 1;
  return v * h + enc * (attn + ffn) + dec * (2 * attn + ffn) + 4 * h;
}

}  // namespace

TEST(Params, MatchHandCount) {
  for (const char* name : {"base", "small", "tiny", "mobilenmt-10mb", "mobilenmt-20mb"}) {
    const ModelConfig c = preset(name);
    EXPECT_EQ(count_params(c).total, hand_count(c.vocab, c.hidden, c.ffn, c.enc_layers, c.dec_layers)) << name;
    EXPECT_EQ(count_params(c).embed(), c.vocab * c.hidden) << name;
  }
}

TEST(Params, BaseSmallTinyTable) {
  EXPECT_LE(rel(count_params(preset("base")).total, 64.5e6), 0.02);
  EXPECT_LE(rel(count_params(preset("small")).total, 21.5e6), 0.02);
  EXPECT_LE(rel(count_params(preset("tiny")).total, 8.0e6), 0.02);
  // with and without the embedding
  const ParamCount b = count_params(preset("transformer-base"));
  EXPECT_LE(rel(b.total, 65e6), 0.02);
  EXPECT_LE(rel(b.no_embed, 44e6), 0.02);
}

TEST(Params, MobilePresets) {
  EXPECT_LE(rel(count_params(preset("mobilenmt-10mb")).total, 10e6), 0.02);
  EXPECT_LE(rel(count_params(preset("mobilenmt-10mb")).no_embed, 7.9e6), 0.02);
  // the published non-embedding count matches; 20.8M in total (see README)
  EXPECT_LE(rel(count_params(preset("mobilenmt-20mb")).no_embed, 17.7e6), 0.02);
}

TEST(Params, SharingAndFactorization) {
  ModelConfig c = preset("small");
  const auto plain = count_params(c);
  c.share_group = 2;
  const auto shared = count_params(c);
  EXPECT_EQ(shared.embed(), plain.embed());
  EXPECT_NEAR(static_cast<double>(shared.no_embed - 4 * c.hidden),
              static_cast<double>(plain.no_embed - 4 * c.hidden) / 2.0, 1.0);
  c.share_group = 1;
  c.embed = 64;
  EXPECT_EQ(count_params(c).embed(), c.vocab * 64 + 64 * c.hidden);
}

TEST(Size, QuantizationTable) {
  struct Row {
    double params;
    int w;
    double mb;
  };
  for (const Row r : {Row{10e6, 32, 40}, Row{10e6, 8, 10}, Row{10e6, 4, 5}, Row{10e6, 3, 3.75}, Row{10e6, 2, 2.5},
                      Row{20e6, 32, 80}, Row{20e6, 8, 20}, Row{20e6, 4, 10}, Row{20e6, 3, 7.5}, Row{20e6, 2, 5}}) {
    EXPECT_EQ(size_bytes(static_cast<std::uint64_t>(r.params), r.w, 8, 0), static_cast<std::uint64_t>(r.mb * 1e6))
        << r.params << " " << r.w;
  }
  EXPECT_EQ(size_bytes(65'000'000, 32, 32, 0), 260'000'000u);
}

TEST(Size, MixedWidthsAndRounding) {
  EXPECT_EQ(size_bytes(100, 4, 8, 40), 30u + 40u);
  EXPECT_EQ(size_bytes(3, 3, 8, 0), 2u);  // 9 bits round up
  EXPECT_EQ(size_bytes(0, 8, 8, 0), 0u);
  EXPECT_THROW(size_bytes(10, 8, 8, 11), ContractError);
}

TEST(Flops, BaseMagnitude) {
  EXPECT_LE(rel(estimate_flops(preset("base"), 30, 30), 1.9e9), 0.35);
  EXPECT_LE(rel(estimate_flops(preset("mobilenmt-10mb"), 30, 30), 0.3e9), 0.35);
  EXPECT_LE(rel(estimate_flops(preset("mobilenmt-20mb"), 30, 30), 0.6e9), 0.35);
}

TEST(Flops, HandCountForOneLayer) {
  // V=10 H=4 F=8, one encoder and one decoder layer, src 3, tgt 2
  const ModelConfig c{10, 4, 0, 8, 2, 1, 1, 1, 16};
  const std::uint64_t enc = 3 * (4 * 16 + 2 * 4 * 8) + 2 * 9 * 4;
  // self: qkv+o per step, scores and context over 1 then 2 keys;
  // cross: q+o per step, k/v projected once, attention over 3 keys; ffn
  const std::uint64_t dec = 2 * (4 * 16) + 2 * 4 * 3 + 2 * (2 * 16) + 2 * 3 * 16 + 2 * 2 * 3 * 4 + 2 * (2 * 4 * 8);
  const std::uint64_t out = 2 * 4 * 10;
  EXPECT_EQ(estimate_flops(c, 3, 2), enc + dec + out);
}

TEST(Estimators, SharingKeepsFlops) {
  for (const char* name : {"base", "small", "tiny"}) {
    ModelConfig c = preset(name);
    const auto f = estimate_flops(c, 30, 30);
    c.share_group = 3;
    EXPECT_EQ(estimate_flops(c, 30, 30), f);
  }
}

TEST(Estimators, NarrowerIsCheaper) {
  const BitWidths b32{32, 32, 32}, b8{8, 8, 8};
  ModelConfig c = preset("base");
  for (std::size_t h : {384u, 256u, 128u, 64u}) {
    ModelConfig n = c;
    n.hidden = h;
    n.ffn = 4 * h;
    EXPECT_LT(estimate_flops(n, 30, 30), estimate_flops(c, 30, 30)) << h;
    EXPECT_LT(estimate_mmio(n, 30, 30, b32), estimate_mmio(c, 30, 30, b32)) << h;
    EXPECT_LT(estimate_mmio(n, 30, 30, b8), estimate_mmio(c, 30, 30, b8)) << h;
    c = n;
  }
}

TEST(Estimators, FactorizationPaysBelowTheBound) {
  const ModelConfig c = preset("base");
  const double bound = static_cast<double>(c.vocab * c.hidden) / static_cast<double>(c.vocab + c.hidden);
  for (std::size_t e : {16u, 128u, 256u, 505u}) {
    ASSERT_LT(static_cast<double>(e), bound);
    ModelConfig f = c;
    f.embed = e;
    EXPECT_LT(count_params(f).embed(), count_params(c).embed()) << e;
  }
  ModelConfig f = c;
  f.embed = 506;  // just above V*H/(V+H) = 505.5
  EXPECT_GT(count_params(f).embed(), count_params(c).embed());
}

TEST(Mmio, Examples) {
  const BitWidths b8{8, 8, 8}, b32{32, 32, 32};
  // zero length leaves the weights only
  const ModelConfig t = preset("tiny");
  // biases, LN and gammas stay f32
  const std::uint64_t h = t.hidden, vec_enc = (6 * h + 1) + (t.ffn + 3 * h + 1);
  const std::uint64_t vectors = 6 * vec_enc + 6 * (vec_enc + 6 * h + 1) + 4 * h;
  EXPECT_EQ(estimate_mmio(t, 0, 0, b8), count_params(t).total - vectors + 4 * vectors);
  EXPECT_EQ(estimate_mmio(t, 0, 0, b32), 4 * count_params(t).total);
  // sharing re-reads the shared weights, width cuts them
  ModelConfig sh = preset("base"), w = preset("base");
  sh.share_group = 2;
  w.hidden = 256;
  w.ffn = 1024;
  w.heads = 4;
  EXPECT_GT(estimate_mmio(sh, 30, 30, b32), estimate_mmio(w, 30, 30, b32));
  // on-device memory of the 10MB model is 14.9MB
  EXPECT_LE(rel(estimate_mmio(preset("mobilenmt-10mb"), 30, 30, b8), 14.9e6), 0.5);
}

TEST(Presets, NamesAndErrors) {
  for (const auto& n : preset_names()) EXPECT_NO_THROW(preset(n).validate()) << n;
  EXPECT_EQ(preset("base"), preset("transformer-base"));
  EXPECT_THROW(preset("huge"), UsageError);
  const CostReport r = cost_report(preset("mobilenmt-10mb"), 30, 30, {8, 8, 8});
  EXPECT_EQ(r.size_bytes, size_bytes(r.params_total, 8, 8, r.params_total - r.params_no_embed));
  EXPECT_EQ(r.flops, estimate_flops(preset("mobilenmt-10mb"), 30, 30));
}
