#include "nmt8/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "nmt8/errors.hpp"
#include "nmt8/textio.hpp"

namespace nmt8 {

namespace {

const char* const kSpecialText[4] = {"<pad>", "<s>", "</s>", "<unk>"};

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Token text of a segmentation symbol.
std::string symbol_token(const std::string& sym) {
  if (ends_with(sym, kEndOfWord)) return sym.substr(0, sym.size() - kEndOfWord.size());
  return sym + std::string(kContinuation);
}

std::vector<std::string> word_symbols(std::string_view word) {
  auto syms = split_codepoints(word);
  if (!syms.empty()) syms.back() += kEndOfWord;
  return syms;
}

void apply_merge(std::vector<std::string>& syms, const Merge& m) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (std::size_t i = 0; i < syms.size(); ++i) {
    if (i + 1 < syms.size() && syms[i] == m.first && syms[i + 1] == m.second) {
      out.push_back(syms[i] + syms[i + 1]);
      ++i;
    } else {
      out.push_back(syms[i]);
    }
  }
  syms = std::move(out);
}

}  // namespace

std::vector<std::string> split_codepoints(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto c = static_cast<unsigned char>(word[i]);
    std::size_t n = 1;
    if (c >= 0xF0) n = 4;
    else if (c >= 0xE0) n = 3;
    else if (c >= 0xC0) n = 2;
    n = std::min(n, word.size() - i);
    out.emplace_back(word.substr(i, n));
    i += n;
  }
  return out;
}

BpeVocab::BpeVocab(std::vector<std::string> tokens, std::vector<Merge> merges, SpecialIds special)
    : tokens_(std::move(tokens)), merges_(std::move(merges)), special_(special) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw VocabError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
  for (std::int32_t id : {special_.pad, special_.bos, special_.eos, special_.unk}) {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw VocabError("special id outside the vocabulary");
  }
  // Base symbols are the characters of the vocabulary, in both positions.
  std::set<std::string> symbols;
  for (const auto& t : tokens_) {
    for (const auto& c : split_codepoints(t)) {
      symbols.insert(c);
      symbols.insert(c + std::string(kEndOfWord));
    }
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& m = merges_[r];
    if (!symbols.count(m.first) || !symbols.count(m.second)) {
      throw VocabError("merge '" + m.first + " " + m.second + "' uses an unknown symbol");
    }
    symbols.insert(m.first + m.second);
    ranks_.emplace(m, r);
  }
}

std::int32_t BpeVocab::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? special_.unk : it->second;
}

const std::string& BpeVocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw VocabError("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> BpeVocab::segment(std::string_view word) const {
  auto syms = word_symbols(word);
  while (syms.size() > 1) {
    std::size_t best = merges_.size();
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto it = ranks_.find({syms[i], syms[i + 1]});
      if (it != ranks_.end()) best = std::min(best, it->second);
    }
    if (best == merges_.size()) break;
    apply_merge(syms, merges_[best]);
  }
  std::vector<std::string> out;
  for (const auto& s : syms) out.push_back(symbol_token(s));
  return out;
}

std::vector<std::int32_t> BpeVocab::encode(std::string_view text) const {
  std::vector<std::int32_t> ids;
  for (const auto word : split_ws(text)) {
    for (const auto& t : segment(word)) ids.push_back(id(t));
  }
  return ids;
}

std::string BpeVocab::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  bool join = false;  // previous piece continues into this one
  for (std::int32_t id : ids) {
    if (id == special_.pad || id == special_.bos || id == special_.eos) continue;
    std::string t = token(id);
    const bool cont = ends_with(t, kContinuation);
    if (cont) t.resize(t.size() - kContinuation.size());
    if (!out.empty() && !join) out += ' ';
    out += t;
    join = cont;
  }
  return out;
}

void BpeVocab::save(const std::filesystem::path& dir) const {
  std::ofstream v(dir / "vocab.txt"), m(dir / "merges.txt");
  if (!v || !m) throw IoError("cannot write vocabulary files in " + dir.string());
  for (const auto& t : tokens_) v << t << "\n";
  for (const auto& [a, b] : merges_) m << a << " " << b << "\n";
  if (!v || !m) throw IoError("failed writing vocabulary files in " + dir.string());
}

BpeVocab BpeVocab::load(const std::filesystem::path& dir) {
  std::ifstream v(dir / "vocab.txt"), m(dir / "merges.txt");
  if (!v) throw IoError("cannot read " + (dir / "vocab.txt").string());
  if (!m) throw IoError("cannot read " + (dir / "merges.txt").string());
  std::vector<std::string> tokens;
  std::vector<Merge> merges;
  std::string line;
  while (std::getline(v, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw VocabError("empty token in vocab.txt");
    tokens.push_back(line);
  }
  while (std::getline(m, line)) {
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 2) throw VocabError("merge line must hold two symbols: " + line);
    merges.emplace_back(std::string(tok[0]), std::string(tok[1]));
  }
  return BpeVocab(std::move(tokens), std::move(merges));
}

std::vector<Merge> learn_merges(const std::vector<std::string>& corpus, std::size_t max_merges) {
  std::map<std::string, std::size_t> freq;
  for (const auto& line : corpus) {
    for (const auto w : split_ws(line)) ++freq[std::string(w)];
  }
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [w, f] : freq) words.emplace_back(word_symbols(w), f);

  std::vector<Merge> merges;
  while (merges.size() < max_merges) {
    std::map<Merge, std::size_t> pairs;
    for (const auto& [syms, f] : words) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += f;
    }
    const Merge* best = nullptr;
    std::size_t best_count = 1;
    for (const auto& [p, c] : pairs) {
      if (c > best_count) {
        best = &p;
        best_count = c;
      }
    }
    if (!best) break;
    const Merge m = *best;
    merges.push_back(m);
    for (auto& [syms, f] : words) apply_merge(syms, m);
  }
  return merges;
}

BpeVocab build_vocab(const std::vector<std::string>& corpus, std::size_t size) {
  std::vector<std::string> tokens(std::begin(kSpecialText), std::end(kSpecialText));
  std::set<std::string> seen(tokens.begin(), tokens.end());
  const auto add = [&](const std::string& t) {
    if (tokens.size() < size && seen.insert(t).second) tokens.push_back(t);
  };
  std::set<std::string> chars;
  for (const auto& line : corpus) {
    for (const auto w : split_ws(line)) {
      for (const auto& c : split_codepoints(w)) chars.insert(c);
    }
  }
  for (const auto& c : chars) {
    add(c);
    add(c + std::string(kContinuation));
  }
  if (tokens.size() < chars.size() * 2 + 4) throw VocabError("vocabulary too small for the corpus alphabet");

  std::vector<Merge> kept;
  for (const auto& m : learn_merges(corpus, size)) {
    if (tokens.size() >= size) break;
    kept.push_back(m);
    add(symbol_token(m.first + m.second));
  }
  for (std::size_t i = 0; tokens.size() < size; ++i) add("<extra" + std::to_string(i) + ">");
  return BpeVocab(std::move(tokens), std::move(kept));
}

}  // namespace nmt8
