// nmt8 - command line front end
//
//   nmt8 make-toy   --output CKPT [--kind copy|random] [--corpus FILE] ...
//   nmt8 calibrate  --checkpoint CKPT --calib FILE --bits W-E-A --output SCALES
//   nmt8 convert    --checkpoint CKPT --bits W-E-A (--calib FILE | --scales SCALES) --output MODEL
//   nmt8 translate  --model MODEL --input FILE --output FILE [--mode M] [--max-len N]
//   nmt8 profile    (--preset NAME | --config FILE | --model MODEL) [--bits W-E-A]
//   nmt8 bench      --model MODEL [--runs R] [--mode M]
//
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 model format, 4 internal contract.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nmt8/calibrate.hpp"
#include "nmt8/designspace.hpp"
#include "nmt8/errors.hpp"
#include "nmt8/model_io.hpp"
#include "nmt8/pipeline.hpp"
#include "nmt8/textio.hpp"
#include "nmt8/toy.hpp"

namespace {

using namespace nmt8;

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (in.bad()) throw IoError("failed reading " + path);
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& l : lines) out << l << "\n";
  if (!out) throw IoError("failed writing " + path);
}

int thread_count(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("NMT8_THREADS"); env && *env) {
    const int n = std::atoi(env);
    if (n < 1) throw UsageError("NMT8_THREADS must be a positive integer");
    return n;
  }
  return 1;
}

BpeVocab require_vocab(const std::string& dir) {
  auto v = load_vocab(dir);
  if (!v) throw IoError("no vocab.txt in " + dir);
  return std::move(*v);
}

ModelConfig read_config_file(const std::string& path) {
  ModelConfig c;
  std::map<std::string, std::size_t*> keys = {
      {"vocab", &c.vocab},           {"hidden", &c.hidden},         {"embed", &c.embed},
      {"ffn", &c.ffn},               {"heads", &c.heads},           {"enc_layers", &c.enc_layers},
      {"dec_layers", &c.dec_layers}, {"share_group", &c.share_group}, {"max_len", &c.max_len}};
  for (const auto& line : read_lines(path)) {
    const auto t = split_ws(line);
    if (t.empty() || t[0][0] == '#') continue;
    const auto eq = t[0].find('=');
    if (t.size() != 1 || eq == std::string_view::npos) throw FormatError("config lines look like key=value: " + line);
    const auto it = keys.find(std::string(t[0].substr(0, eq)));
    if (it == keys.end()) throw FormatError("unknown config key in: " + line);
    *it->second = parse_size(t[0].substr(eq + 1));
  }
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("invalid config: ") + e.what());
  }
  return c;
}

Mode default_mode(const Model& m, const std::string& flag) {
  if (flag.empty()) return m.quantized() ? Mode::kInt8 : Mode::kFp32;
  const Mode mode = parse_mode(flag);
  if (mode != Mode::kFp32 && !m.quantized()) throw UsageError("mode " + flag + " needs a quantized model");
  return mode;
}

struct Args {
  // shared
  std::string output, model, checkpoint, bits = "8-8-8", calib, scales, input, mode;
  int threads = 0;
  std::size_t max_len = 30;
  // make-toy
  std::string kind = "copy", corpus;
  std::uint64_t seed = 1;
  std::size_t hidden = 64, heads = 4, ffn = 128, enc_layers = 4, dec_layers = 2, vocab = 200, sentences = 64;
  // profile
  std::string preset, config;
  std::size_t src_len = 30, tgt_len = 30;
  // bench
  std::size_t runs = 200;
};

int cmd_make_toy(const Args& a) {
  const auto corpus = make_toy_corpus(a.sentences, a.seed);
  const BpeVocab vocab = build_vocab(corpus, a.vocab);
  ModelConfig cfg;
  cfg.vocab = a.vocab, cfg.hidden = a.hidden, cfg.heads = a.heads, cfg.ffn = a.ffn;
  cfg.enc_layers = a.enc_layers, cfg.dec_layers = a.dec_layers;
  Model m;
  if (a.kind == "copy") m = make_copy_model(cfg, a.seed);
  else if (a.kind == "random") m = make_toy_model(cfg, a.seed);
  else throw UsageError("--kind must be copy or random");
  save_checkpoint(a.output, m, &vocab);
  if (!a.corpus.empty()) write_lines(a.corpus, corpus);
  return 0;
}

ScaleTable calibrate_checkpoint(const Model& fp32, const Args& a, const BitWidths& bits) {
  if (a.calib.empty()) throw UsageError("activation quantization needs --calib FILE (or --scales)");
  const BpeVocab vocab = require_vocab(a.checkpoint);
  const auto samples = source_corpus(vocab, read_lines(a.calib));
  return calibrate_model(fp32, samples, bits, a.max_len);
}

int cmd_calibrate(const Args& a) {
  const BitWidths bits = BitWidths::parse(a.bits);
  if (bits.is_float()) throw UsageError("nothing to calibrate for 32-32-32");
  const Model fp32 = load_checkpoint(a.checkpoint);
  write_scale_table(a.output, calibrate_checkpoint(fp32, a, bits));
  return 0;
}

int cmd_convert(const Args& a) {
  const BitWidths bits = BitWidths::parse(a.bits);
  const Model fp32 = load_checkpoint(a.checkpoint);
  const auto vocab = load_vocab(a.checkpoint);
  Model m;
  if (bits.is_float()) {
    m = fp32;
  } else if (!a.scales.empty()) {
    const ScaleTable t = read_scale_table(a.scales);
    m = convert(fp32, bits, {}, &t);
  } else {
    const ScaleTable t = calibrate_checkpoint(fp32, a, bits);
    m = convert(fp32, bits, {}, &t);
  }
  save_model(a.output, m, vocab ? &*vocab : nullptr);
  return 0;
}

int cmd_translate(const Args& a) {
  const Model m = load_model(a.model);
  const BpeVocab vocab = require_vocab(a.model);
  RunOptions opt;
  opt.mode = default_mode(m, a.mode);
  opt.workers = thread_count(a.threads);
  std::vector<std::string> out;
  for (const auto& line : read_lines(a.input)) out.push_back(translate_line(m, vocab, line, a.max_len, opt));
  write_lines(a.output, out);
  return 0;
}

int cmd_profile(const Args& a) {
  const int given = !a.preset.empty() + !a.config.empty() + !a.model.empty();
  if (given != 1) throw UsageError("profile needs exactly one of --preset, --config, --model");
  ModelConfig cfg;
  BitWidths bits = BitWidths::parse(a.bits);
  std::string name = a.preset;
  if (!a.preset.empty()) {
    cfg = preset(a.preset);
  } else if (!a.config.empty()) {
    cfg = read_config_file(a.config);
    name = a.config;
  } else {
    const Model m = load_model(a.model);
    cfg = m.cfg;
    name = a.model;
  }
  const CostReport r = cost_report(cfg, a.src_len, a.tgt_len, bits);
  std::printf("%-16s %s\n", "model", name.c_str());
  std::printf("%-16s %s\n", "bits", bits.str().c_str());
  std::printf("%-16s %.2fM\n", "params", static_cast<double>(r.params_total) / 1e6);
  std::printf("%-16s %.2fM\n", "params w/o emb", static_cast<double>(r.params_no_embed) / 1e6);
  std::printf("%-16s %.3fG (src %zu, tgt %zu)\n", "flops", static_cast<double>(r.flops) / 1e9, a.src_len, a.tgt_len);
  std::printf("%-16s %.2fMB\n", "mmio", static_cast<double>(r.mmio_bytes) / 1e6);
  std::printf("%-16s %.2fMB\n", "size", static_cast<double>(r.size_bytes) / 1e6);
  std::printf("\n");
  std::printf("params_total=%llu\n", static_cast<unsigned long long>(r.params_total));
  std::printf("params_no_embed=%llu\n", static_cast<unsigned long long>(r.params_no_embed));
  std::printf("flops=%llu\n", static_cast<unsigned long long>(r.flops));
  std::printf("mmio_bytes=%llu\n", static_cast<unsigned long long>(r.mmio_bytes));
  std::printf("size_bytes=%llu\n", static_cast<unsigned long long>(r.size_bytes));
  return 0;
}

int cmd_bench(const Args& a) {
  const Model m = load_model(a.model);
  RunOptions opt;
  opt.mode = default_mode(m, a.mode);
  opt.workers = thread_count(a.threads);
  const BenchResult r = bench_model(m, a.runs, a.src_len, a.tgt_len, opt, a.seed);
  std::printf("mode=%s\n", mode_name(opt.mode));
  std::printf("threads=%d\n", opt.workers);
  std::printf("runs=%zu\nsrc_len=%zu\ntgt_len=%zu\n", a.runs, a.src_len, a.tgt_len);
  if (a.runs == 1) {
    std::printf("latency_ms=%.4f\n", r.mean_ms);
  } else {
    std::printf("mean_ms=%.4f\nmedian_ms=%.4f\nmin_ms=%.4f\nmax_ms=%.4f\nstddev_ms=%.4f\n", r.mean_ms, r.median_ms,
                r.min_ms, r.max_ms, r.stddev_ms);
  }
  std::printf("tokens_per_sec=%.2f\n", r.tokens_per_sec);
  if (m.quantized()) {
    const PlanStats p = plan_stats(m, a.src_len, a.tgt_len);
    std::printf("encoder_i8_buffers=%zu\nencoder_i32_buffers=%zu\nencoder_buffer_bytes=%zu\n", p.encoder_i8,
                p.encoder_i32, p.encoder_bytes);
    std::printf("decoder_i8_buffers=%zu\ndecoder_i32_buffers=%zu\ndecoder_buffer_bytes=%zu\n", p.decoder_i8,
                p.decoder_i32, p.decoder_bytes);
    std::printf("planned_buffer_bytes=%zu\n", p.peak_bytes());
  } else {
    std::printf("planned_buffer_bytes=0\n");
  }
  return 0;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const IoError*>(&e)) return 2;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const VocabError*>(&e)) return 3;
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"INT8 Transformer translation engine"};
  app.require_subcommand(1);
  Args a;

  auto* toy = app.add_subcommand("make-toy", "write a seeded toy checkpoint with its BPE vocabulary");
  toy->add_option("--output", a.output, "checkpoint directory")->required();
  toy->add_option("--kind", a.kind, "copy or random")->capture_default_str();
  toy->add_option("--corpus", a.corpus, "also write the toy text corpus here");
  toy->add_option("--seed", a.seed)->capture_default_str();
  toy->add_option("--vocab", a.vocab)->capture_default_str();
  toy->add_option("--hidden", a.hidden)->capture_default_str();
  toy->add_option("--heads", a.heads)->capture_default_str();
  toy->add_option("--ffn", a.ffn)->capture_default_str();
  toy->add_option("--enc-layers", a.enc_layers)->capture_default_str();
  toy->add_option("--dec-layers", a.dec_layers)->capture_default_str();
  toy->add_option("--sentences", a.sentences, "corpus lines")->capture_default_str();

  auto* cal = app.add_subcommand("calibrate", "compute activation and weight scales");
  cal->add_option("--checkpoint", a.checkpoint)->required();
  cal->add_option("--calib", a.calib, "one sentence per line")->required();
  cal->add_option("--bits", a.bits, "W-E-A")->capture_default_str();
  cal->add_option("--output", a.output, "scale table file")->required();
  cal->add_option("--max-len", a.max_len)->capture_default_str();

  auto* conv = app.add_subcommand("convert", "quantize a checkpoint into a model directory");
  conv->add_option("--checkpoint", a.checkpoint)->required();
  conv->add_option("--bits", a.bits, "W-E-A")->capture_default_str();
  auto* calib_opt = conv->add_option("--calib", a.calib, "calibration sentences");
  conv->add_option("--scales", a.scales, "precomputed scale table")->excludes(calib_opt);
  conv->add_option("--output", a.output, "model directory")->required();
  conv->add_option("--max-len", a.max_len, "calibration decode length")->capture_default_str();

  auto* tr = app.add_subcommand("translate", "greedy-decode each input line");
  tr->add_option("--model", a.model)->required();
  tr->add_option("--input", a.input)->required();
  tr->add_option("--output", a.output)->required();
  tr->add_option("--mode", a.mode, "int8, fp32 or int8-fp32attn");
  tr->add_option("--max-len", a.max_len)->capture_default_str();
  tr->add_option("--threads", a.threads, "overrides NMT8_THREADS");

  auto* prof = app.add_subcommand("profile", "parameter, FLOPs, memory traffic and size estimates");
  prof->add_option("--preset", a.preset, "base, small, tiny, transformer-base, mobilenmt-10mb, mobilenmt-20mb");
  prof->add_option("--config", a.config, "key=value config file");
  prof->add_option("--model", a.model);
  prof->add_option("--bits", a.bits, "W-E-A")->capture_default_str();
  prof->add_option("--src-len", a.src_len)->capture_default_str();
  prof->add_option("--tgt-len", a.tgt_len)->capture_default_str();

  auto* bench = app.add_subcommand("bench", "time encode + fixed-length greedy decoding");
  bench->add_option("--model", a.model)->required();
  bench->add_option("--runs", a.runs)->capture_default_str();
  bench->add_option("--mode", a.mode, "int8, fp32 or int8-fp32attn");
  bench->add_option("--src-len", a.src_len)->capture_default_str();
  bench->add_option("--tgt-len", a.tgt_len)->capture_default_str();
  bench->add_option("--threads", a.threads, "overrides NMT8_THREADS");
  bench->add_option("--seed", a.seed, "source sample seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*toy) return cmd_make_toy(a);
    if (*cal) return cmd_calibrate(a);
    if (*conv) return cmd_convert(a);
    if (*tr) return cmd_translate(a);
    if (*prof) return cmd_profile(a);
    if (*bench) return cmd_bench(a);
  } catch (const Error& e) {
    std::cerr << "nmt8: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "nmt8: internal error: " << e.what() << "\n";
    return 4;
  }
  return 1;
}
