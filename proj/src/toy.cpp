#include "nmt8/toy.hpp"

#include <cmath>
#include <random>

#include "nmt8/errors.hpp"

namespace nmt8 {

namespace {

void fill_normal(FTensor& t, std::mt19937_64& rng, float mean, float std) {
  std::normal_distribution<float> dist(mean, std);
  for (float& v : t.data()) v = std == 0.0f ? mean : dist(rng);
}

}  // namespace

Model make_toy_model(const ModelConfig& cfg, std::uint64_t seed, const ToyOptions& opt) {
  Model m = make_empty_model(cfg);
  std::mt19937_64 rng(seed);
  fill_normal(m.embed.w, rng, 0.0f, opt.embed_std / std::sqrt(static_cast<float>(cfg.hidden)));
  for_each_linear(m, [&](const std::string&, Linear& l, bool is_embed) {
    if (is_embed) return;
    fill_normal(l.w, rng, 0.0f, opt.weight_gain / std::sqrt(static_cast<float>(l.w.cols())));
  });
  for_each_vector(m, [&](const std::string& name, FTensor& v) {
    const bool gain = name.size() >= 4 && name.compare(name.size() - 4, 4, "gain") == 0;
    const bool ln = name.find(".ln.") != std::string::npos;
    fill_normal(v, rng, gain ? 1.0f : 0.0f, ln ? opt.ln_std : opt.bias_std);
  });
  return m;
}

Model make_copy_model(const ModelConfig& cfg, std::uint64_t seed, const CopyOptions& opt) {
  cfg.validate();
  const std::size_t h = cfg.hidden, half = h / 2, d = cfg.head_dim();
  if (h < 8 || half % d != 0 || cfg.dec_layers == 0 || cfg.embed_dim() != h) {
    throw ContractError("copy model needs H >= 8, H/2 a multiple of the head size and a decoder");
  }
  ToyOptions t;
  t.weight_gain = opt.noise;
  t.bias_std = 0.0f;
  t.ln_std = 0.0f;
  Model m = make_toy_model(cfg, seed, t);

  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t v = 0; v < cfg.vocab; ++v) {
    std::vector<double> e(h, 0.0);
    for (std::size_t c = half; c < h - 2; ++c) e[c] = nd(rng);
    // zero mean, and orthogonal to the alternating sin/cos offset of the positions
    for (int pass = 0; pass < 2; ++pass) {
      double uu = 0.0, ue = 0.0;
      for (std::size_t c = half; c < h - 2; ++c) {
        const double u = pass == 0 || c % 2 == 1 ? 1.0 : -1.0;
        uu += u * u;
        ue += u * e[c];
      }
      for (std::size_t c = half; c < h - 2; ++c) e[c] -= ue / uu * (pass == 0 || c % 2 == 1 ? 1.0 : -1.0);
    }
    double norm = 0.0;
    for (double x : e) norm += x * x;
    norm = std::sqrt(norm);
    auto row = m.embed.w.row(v);
    for (std::size_t c = 0; c < h; ++c) row[c] = static_cast<float>(e[c] / norm);
  }

  AttentionW& cross = m.dec[0].cross;
  FTensor& w = cross.qkv.w;
  for (std::size_t hd = 0; hd < half / d; ++hd) {
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t q = hd * d + i;
      for (std::size_t j = 0; j < h; ++j) {
        const float pos = j == i ? opt.beta : j == h - 2 ? -opt.beta : 0.0f;
        w.at(q, j) = pos;
        w.at(h + q, j) = pos;
        w.at(2 * h + q, j) = j == half + q ? 1.0f : 0.0f;
      }
    }
  }
  for (float& v : cross.o.w.data()) v = 0.0f;
  for (std::size_t i = 0; i < half; ++i) cross.o.w.at(half + i, i) = opt.alpha;
  // the output projection sees content only
  for (std::size_t c = 0; c < half; ++c) m.dec_ln.gain.data()[c] = 0.0f;
  return m;
}

std::vector<std::string> make_toy_corpus(std::size_t sentences, std::uint64_t seed) {
  static const char* const kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"};
  static const char* const kVowels[] = {"a", "e", "i", "o", "u"};
  std::mt19937_64 rng(seed);
  std::vector<std::string> lexicon;
  for (int w = 0; w < 80; ++w) {
    std::string word;
    const int syllables = 1 + static_cast<int>(rng() % 3);
    for (int s = 0; s < syllables; ++s) {
      word += kOnsets[rng() % std::size(kOnsets)];
      word += kVowels[rng() % std::size(kVowels)];
    }
    if (rng() % 3 == 0) word += kOnsets[rng() % std::size(kOnsets)];
    lexicon.push_back(word);
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < sentences; ++i) {
    const std::size_t words = 3 + rng() % 8;
    std::string line;
    for (std::size_t w = 0; w < words; ++w) {
      // Zipf-like: low indices are more frequent.
      const std::size_t pick = static_cast<std::size_t>(std::pow(static_cast<double>(rng() % 10000) / 10000.0, 2.0) *
                                                        static_cast<double>(lexicon.size()));
      if (w) line += ' ';
      line += lexicon[pick];
    }
    out.push_back(line);
  }
  return out;
}

std::vector<std::vector<std::int32_t>> random_sources(std::size_t count, std::size_t vocab, std::size_t min_len,
                                                      std::size_t max_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::int32_t>> out(count);
  for (auto& s : out) {
    const std::size_t len = min_len + rng() % (max_len - min_len + 1);
    for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<std::int32_t>(4 + rng() % (vocab - 4)));
  }
  return out;
}

}  // namespace nmt8
