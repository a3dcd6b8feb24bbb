#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "nmt8/bpe.hpp"
#include "nmt8/errors.hpp"
#include "nmt8/toy.hpp"

using namespace nmt8;
namespace fs = std::filesystem;

namespace {

BpeVocab tiny_vocab() {
  // "low" fully merges into one word-final token
  std::vector<std::string> toks{"<pad>", "<s>", "</s>", "<unk>", "l@@", "o@@", "w", "lo@@", "low"};
  std::vector<Merge> merges{{"l", "o"}, {"lo", "w</w>"}};
  return BpeVocab(toks, merges);
}

}  // namespace

TEST(Bpe, EmptyInput) {
  const BpeVocab v = tiny_vocab();
  EXPECT_TRUE(v.encode("").empty());
  EXPECT_TRUE(v.encode("   \t ").empty());
  EXPECT_EQ(v.decode({}), "");
}

TEST(Bpe, MergeChainGivesOneToken) {
  const BpeVocab v = tiny_vocab();
  EXPECT_EQ(v.segment("low"), std::vector<std::string>{"low"});
  EXPECT_EQ(v.encode("low"), std::vector<std::int32_t>{8});
  // word-final "o" is "o</w>", so the first merge does not apply
  EXPECT_EQ(v.segment("lo"), (std::vector<std::string>{"l@@", "o"}));
  EXPECT_EQ(v.segment("lowl"), (std::vector<std::string>{"lo@@", "w@@", "l"}));
  EXPECT_EQ(v.segment("wl"), (std::vector<std::string>{"w@@", "l"}));
}

TEST(Bpe, UnknownSymbolsMapToUnk) {
  const BpeVocab v = tiny_vocab();
  // neither "x" nor word-final "o" is in the vocabulary
  EXPECT_EQ(v.encode("x"), std::vector<std::int32_t>{3});
  EXPECT_EQ(v.encode("lo"), (std::vector<std::int32_t>{4, 3}));
  EXPECT_EQ(v.id("nope"), 3);
  EXPECT_THROW(v.token(99), VocabError);
}

TEST(Bpe, DecodeJoinsContinuationsAndDropsSpecials) {
  const BpeVocab v = tiny_vocab();
  EXPECT_EQ(v.decode(std::vector<std::int32_t>{1, 4, 5, 6, 8, 2}), "low low");
  EXPECT_EQ(v.decode(std::vector<std::int32_t>{7, 6, 0, 8}), "low low");
}

TEST(Bpe, Utf8CodePoints) {
  EXPECT_EQ(split_codepoints("añb"), (std::vector<std::string>{"a", "ñ", "b"}));
  EXPECT_EQ(split_codepoints("€"), std::vector<std::string>{"€"});
  const BpeVocab v = build_vocab({"añb añb ñ"}, 30);
  EXPECT_EQ(v.decode(v.encode("añb ñ")), "añb ñ");
}

TEST(Bpe, LearnMergesMostFrequentFirst) {
  const auto m = learn_merges({"ab ab ab cd cd"}, 10);
  ASSERT_GE(m.size(), 2u);
  EXPECT_EQ(m[0], (Merge{"a", "b</w>"}));
  EXPECT_EQ(m[1], (Merge{"c", "d</w>"}));
  // pairs seen once are never merged
  EXPECT_TRUE(learn_merges({"ab cd"}, 10).empty());
}

TEST(Bpe, RoundTripOnToyCorpus) {
  const auto corpus = make_toy_corpus(200, 3);
  const BpeVocab v = build_vocab(corpus, 300);
  EXPECT_EQ(v.size(), 300u);
  std::size_t tokens = 0, words = 0;
  for (const auto& line : corpus) {
    const auto ids = v.encode(line);
    for (auto id : ids) EXPECT_NE(id, v.special().unk);
    EXPECT_EQ(v.decode(ids), line);
    tokens += ids.size();
    words += std::count(line.begin(), line.end(), ' ') + 1;
  }
  // merges actually compress
  EXPECT_LT(tokens, 2 * words);
}

TEST(Bpe, SaveLoad) {
  const BpeVocab v = build_vocab(make_toy_corpus(50, 4), 120);
  const fs::path dir = fs::temp_directory_path() / "nmt8_bpe_test";
  fs::create_directories(dir);
  v.save(dir);
  const BpeVocab w = BpeVocab::load(dir);
  EXPECT_EQ(w.tokens(), v.tokens());
  EXPECT_EQ(w.merges(), v.merges());
  EXPECT_EQ(w.encode("bafo kimu"), v.encode("bafo kimu"));
  std::ofstream(dir / "merges.txt") << "a b c\n";
  EXPECT_THROW(BpeVocab::load(dir), VocabError);
  fs::remove_all(dir);
  EXPECT_THROW(BpeVocab::load(dir), IoError);
}

TEST(Bpe, InvalidVocabularies) {
  EXPECT_THROW(BpeVocab({"<pad>", "<s>", "</s>", "<unk>", "a", "a"}, {}), VocabError);
  EXPECT_THROW(BpeVocab({"<pad>", "<s>"}, {}), VocabError);
  EXPECT_THROW(BpeVocab({"<pad>", "<s>", "</s>", "<unk>", "a"}, {{"q", "z"}}), VocabError);
  EXPECT_THROW(build_vocab({"abcdef"}, 8), VocabError);
}
