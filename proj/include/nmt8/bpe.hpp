// bpe.hpp - byte-pair encoding (apply only)
//
// Words are split into UTF-8 code points with an end-of-word marker on the
// last one, merges are applied by priority, and the resulting symbols map
// to tokens: word-final pieces as-is, other pieces with a trailing "@@".

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nmt8/model.hpp"

namespace nmt8 {

using Merge = std::pair<std::string, std::string>;

inline constexpr std::string_view kEndOfWord = "</w>";
inline constexpr std::string_view kContinuation = "@@";

class BpeVocab {
 public:
  BpeVocab() = default;
  // VocabError on duplicate tokens, missing specials or merges over
  // unknown symbols.
  BpeVocab(std::vector<std::string> tokens, std::vector<Merge> merges, SpecialIds special = {});

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<Merge>& merges() const { return merges_; }
  const SpecialIds& special() const { return special_; }
  // UNK for unknown tokens.
  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const;

  std::vector<std::string> segment(std::string_view word) const;
  std::vector<std::int32_t> encode(std::string_view text) const;
  std::string decode(std::span<const std::int32_t> ids) const;

  void save(const std::filesystem::path& dir) const;
  static BpeVocab load(const std::filesystem::path& dir);

 private:
  std::vector<std::string> tokens_;
  std::vector<Merge> merges_;
  SpecialIds special_;
  std::map<std::string, std::int32_t> ids_;
  std::map<Merge, std::size_t> ranks_;
};

std::vector<std::string> split_codepoints(std::string_view word);

// Learns up to `max_merges` merges from whitespace-separated text, most
// frequent pair first (ties broken lexicographically).
std::vector<Merge> learn_merges(const std::vector<std::string>& corpus, std::size_t max_merges);

// Specials, then both forms of every character, then merge results until the
// vocabulary holds exactly `size` tokens.
BpeVocab build_vocab(const std::vector<std::string>& corpus, std::size_t size);

}  // namespace nmt8
