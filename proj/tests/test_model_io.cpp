#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "nmt8/bpe.hpp"
#include "nmt8/designspace.hpp"
#include "nmt8/errors.hpp"
#include "nmt8/model_io.hpp"
#include "nmt8/quant.hpp"

using namespace nmt8;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Packing, FiveFourBitCodesTakeThreeBytes) {
  const std::vector<std::uint8_t> codes{0x1, 0x2, 0x3, 0x4, 0xf};
  const auto bytes = pack_codes(codes, 4);
  EXPECT_EQ(bytes, (std::vector<std::uint8_t>{0x12, 0x34, 0xf0}));
  EXPECT_EQ(unpack_codes(bytes, 5, 4), codes);
}

TEST(Packing, MostSignificantFirst) {
  EXPECT_EQ(pack_codes(std::vector<std::uint8_t>{1, 0, 3, 2}, 2), std::vector<std::uint8_t>{0b01001110});
  // 3-bit codes straddle bytes: 101 110 011 -> 10111001 1.......
  EXPECT_EQ(pack_codes(std::vector<std::uint8_t>{5, 6, 3}, 3), (std::vector<std::uint8_t>{0b10111001, 0b10000000}));
}

TEST(Packing, RandomRoundTrip) {
  std::mt19937_64 rng(5);
  for (int bits = 1; bits <= 8; ++bits) {
    for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 100u}) {
      const auto codes = tu::random_codes(n, bits, rng);
      const auto bytes = pack_codes(codes, bits);
      EXPECT_EQ(bytes.size(), (n * bits + 7) / 8);
      EXPECT_EQ(unpack_codes(bytes, n, bits), codes);
    }
  }
  EXPECT_THROW(pack_codes(std::vector<std::uint8_t>{4}, 2), ContractError);
  EXPECT_THROW(unpack_codes(std::vector<std::uint8_t>{0}, 3, 4), TruncatedError);
}

TEST(Checksum, KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_of({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}), 0xCBF43926u);
}

TEST(Serialize, HundredRandomModelsRoundTripBitExactly) {
  std::size_t low_bit = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const Model m = tu::random_quantized(seed);
    low_bit += m.bits.w < 8 || m.bits.e < 8;
    const ModelFiles a = serialize_model(m);
    const Model back = deserialize_model(a.manifest, a.blob);
    EXPECT_EQ(tu::first_difference(m, back), "") << seed;
    const ModelFiles b = serialize_model(back);
    EXPECT_EQ(a.manifest, b.manifest) << seed;
    EXPECT_EQ(a.blob, b.blob) << seed;
    if (::testing::Test::HasFailure()) break;
  }
  EXPECT_GT(low_bit, 50u);
}

TEST(Serialize, BlobSizeFollowsBitWidths) {
  const ModelConfig cfg{30, 8, 0, 12, 2, 1, 1, 1, 8};
  const Model f = make_toy_model(cfg, 2);
  std::uint64_t vectors = 0, mats = 0, embed = cfg.vocab * cfg.hidden;
  Model probe = f;
  for_each_vector(probe, [&](const std::string&, FTensor& v) { vectors += v.data().size(); });
  for_each_linear(probe, [&](const std::string&, Linear& l, bool e) { mats += e ? 0 : l.w.data().size(); });
  const Model q = tu::calibrated(f, {3, 4, 8}, 2, 2);
  std::uint64_t expect = (embed * 4 + 7) / 8 + 4 * vectors;
  Model qp = q;
  for_each_linear(qp, [&](const std::string&, Linear& l, bool e) {
    if (!e) expect += (l.w.data().size() * 3 + 7) / 8;
  });
  EXPECT_EQ(serialize_model(q).blob.size(), expect);
  EXPECT_EQ(serialize_model(f).blob.size(), 4 * (embed + mats + vectors));
}

TEST(Serialize, Errors) {
  const Model m = tu::random_quantized(7);
  ModelFiles f = serialize_model(m);

  auto cut = f.blob;
  cut.pop_back();
  EXPECT_THROW(deserialize_model(f.manifest, cut), TruncatedError);
  auto longer = f.blob;
  longer.push_back(0);
  EXPECT_THROW(deserialize_model(f.manifest, longer), FormatError);
  auto flipped = f.blob;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_model(f.manifest, flipped), ChecksumError);

  std::string v2 = f.manifest;
  v2.replace(0, v2.find('\n'), "nmt8-model 2");
  EXPECT_THROW(deserialize_model(v2, f.blob), VersionError);
  EXPECT_THROW(deserialize_model("something else 1\n", f.blob), FormatError);
  EXPECT_THROW(deserialize_model("", f.blob), FormatError);

  // drop a tensor line
  std::string missing = f.manifest;
  const auto at = missing.find("\ntensor enc.0.ffn.w2 ");
  ASSERT_NE(at, std::string::npos);
  missing.erase(at, missing.find('\n', at + 1) - at);
  EXPECT_THROW(deserialize_model(missing, f.blob), FormatError);

  // distinct error types, one base
  try {
    deserialize_model(f.manifest, flipped);
  } catch (const TruncatedError&) {
    FAIL();
  } catch (const FormatError&) {
  }
}

TEST(ModelDir, SaveLoadWithVocab) {
  TempDir d("nmt8_io_dir");
  const Model m = tu::random_quantized(11);
  const BpeVocab v = build_vocab(make_toy_corpus(20, 1), m.cfg.vocab < 40 ? 60 : m.cfg.vocab);
  save_model(d.path, m, &v);
  EXPECT_EQ(tu::first_difference(m, load_model(d.path)), "");
  ASSERT_TRUE(load_vocab(d.path).has_value());
  EXPECT_EQ(load_vocab(d.path)->tokens(), v.tokens());

  // truncating the file on disk
  const auto blob = d.path / "weights.bin";
  fs::resize_file(blob, fs::file_size(blob) - 1);
  EXPECT_THROW(load_model(d.path), TruncatedError);
  EXPECT_THROW(load_model(d.path / "nope"), IoError);
  fs::remove(d.path / "vocab.txt");
  EXPECT_FALSE(load_vocab(d.path).has_value());
}

TEST(Checkpoint, RoundTrip) {
  TempDir d("nmt8_io_ckpt");
  const ModelConfig cfg{30, 8, 0, 12, 2, 2, 1, 1, 8};
  Model f = make_toy_model(cfg, 3);
  for_each_gamma(f, [](const std::string&, float& g) { g = 0.75f; });
  save_checkpoint(d.path, f);
  EXPECT_EQ(tu::first_difference(f, load_checkpoint(d.path)), "");
  EXPECT_THROW(save_checkpoint(d.path, tu::calibrated(f, {8, 8, 8}, 3, 2)), ContractError);

  // shape mismatch against the config
  std::ofstream(d.path / "embed.w.f32", std::ios::binary | std::ios::trunc) << "abcd";
  EXPECT_THROW(load_checkpoint(d.path), FormatError);
}

TEST(Convert, RowWiseBelowEightBits) {
  const ModelConfig cfg{30, 8, 0, 12, 2, 1, 1, 1, 8};
  const Model f = make_toy_model(cfg, 4);
  const auto samples = tu::with_eos(random_sources(4, 30, 3, 6, 4));
  Model q = convert(f, {4, 8, 8}, samples);
  for_each_linear(q, [](const std::string& name, Linear& l, bool e) {
    ASSERT_TRUE(l.q.has_value());
    EXPECT_EQ(l.q->rowwise(), !e) << name;
    EXPECT_EQ(l.q->bits(), e ? 8 : 4) << name;
  });
  Model q8 = convert(f, {8, 8, 8}, samples);
  for_each_linear(q8, [](const std::string& name, Linear& l, bool) { EXPECT_FALSE(l.q->rowwise()) << name; });
  EXPECT_FALSE(convert(f, {32, 32, 32}, {}).quantized());
  EXPECT_THROW(convert(f, {8, 8, 8}, {}), CalibrationError);
  const ScaleTable t = calibrate_model(f, samples, {8, 8, 8});
  EXPECT_THROW(convert(f, {8, 8, 4}, {}, &t), CalibrationError);
}

TEST(Convert, LoadedModelForwardMatches) {
  TempDir d("nmt8_io_conv");
  const ModelConfig cfg{60, 32, 0, 64, 4, 2, 2, 1, 24};
  const Model f = make_toy_model(cfg, 6);
  const auto samples = tu::with_eos(random_sources(16, 60, 3, 10, 6));
  const Model q = convert(f, {8, 8, 8}, samples);
  save_model(d.path, q);
  const Model l = load_model(d.path);
  const std::vector<std::int32_t> src{5, 9, 13, 2};
  RunOptions o8, o32;
  o8.mode = Mode::kInt8;
  EXPECT_EQ(tu::max_abs_diff(encode(q, src, o8).output, encode(l, src, o8).output), 0.0);
  EXPECT_EQ(greedy_decode(q, src, 10, o8), greedy_decode(l, src, 10, o8));
  // f32 forward over the dequantized weights stays close to the original
  EXPECT_GE(tu::cosine(encode(l, src, o32).output.data(), encode(f, src, o32).output.data()), 0.999);
}

TEST(Convert, TenMillionParameterModelIsTenMegabytes) {
  TempDir d("nmt8_io_10m");
  const ModelConfig cfg = preset("mobilenmt-10mb");
  const Model f = make_toy_model(cfg, 1);
  const Model q = convert(f, {8, 8, 8}, {{4, 5, 6, 2}}, nullptr, 4);
  save_model(d.path, q);
  const double blob = static_cast<double>(fs::file_size(d.path / "weights.bin"));
  const double manifest = static_cast<double>(fs::file_size(d.path / "manifest.txt"));
  // one byte per matrix weight, f32 biases / LN vectors
  Model probe = make_empty_model(cfg);
  std::uint64_t vectors = 0;
  for_each_vector(probe, [&](const std::string&, FTensor& v) { vectors += v.data().size(); });
  const std::uint64_t gammas = cfg.enc_layers * 2 + cfg.dec_layers * 3;
  EXPECT_EQ(static_cast<std::uint64_t>(blob), count_params(cfg).total - vectors - gammas + 4 * vectors);
  EXPECT_LT(std::abs(blob - 10e6) / 10e6, 0.01) << blob;
  EXPECT_LT(manifest / blob, 0.01) << manifest;
}
