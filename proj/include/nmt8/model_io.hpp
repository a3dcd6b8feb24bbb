// model_io.hpp - on-disk model directories and f32 checkpoints
//
// Model directory:
//   manifest.txt  "nmt8-model 1", config, bits, special ids, blob checksum,
//                 one line per tensor (role, shape, bits, offset, length,
//                 quant params), activation params and residual gammas
//   weights.bin   little-endian blob. Codes below 8 bits are packed
//                 most-significant-first; every tensor starts on a byte.
//   vocab.txt / merges.txt  optional BPE vocabulary
//
// Checkpoint directory: manifest.txt ("nmt8-checkpoint 1", config, special,
// "tensor name f32 shape file" lines) plus one raw f32 file per tensor.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmt8/bpe.hpp"
#include "nmt8/model.hpp"

namespace nmt8 {

// Bit packing, MSB first. pack_codes output has ceil(n * bits / 8) bytes.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits);
std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t n, int bits);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

// Serialised forms; save_model is write_manifest + the blob.
struct ModelFiles {
  std::string manifest;
  std::vector<std::uint8_t> blob;
};

ModelFiles serialize_model(const Model& m);
Model deserialize_model(const std::string& manifest, std::span<const std::uint8_t> blob);

void save_model(const std::filesystem::path& dir, const Model& m, const BpeVocab* vocab = nullptr);
Model load_model(const std::filesystem::path& dir);
// Loads vocab.txt / merges.txt when present.
std::optional<BpeVocab> load_vocab(const std::filesystem::path& dir);

void save_checkpoint(const std::filesystem::path& dir, const Model& fp32, const BpeVocab* vocab = nullptr);
Model load_checkpoint(const std::filesystem::path& dir);

// Quantizes a checkpoint model. Scales come from `table` when given,
// otherwise from calibrating on `samples`. A 32-32-32 triple returns the
// f32 model unchanged.
Model convert(const Model& fp32, const BitWidths& bits, const std::vector<std::vector<std::int32_t>>& samples,
              const ScaleTable* table = nullptr, std::size_t calib_max_len = 30);

}  // namespace nmt8
