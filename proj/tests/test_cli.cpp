#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "nmt8/calibrate.hpp"
#include "nmt8/designspace.hpp"
#include "nmt8/model_io.hpp"
#include "nmt8/pipeline.hpp"
#include "nmt8/textio.hpp"

using namespace nmt8;
namespace fs = std::filesystem;

namespace {

const fs::path kData = NMT8_TEST_DATA;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    const auto eq = l.find('=');
    if (eq != std::string::npos) kv[l.substr(0, eq)] = l.substr(eq + 1);
  }
  return kv;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / "nmt8_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    ASSERT_EQ(run("make-toy --output " + p("ckpt") + " --kind copy --seed 7"), 0);
    ASSERT_EQ(run("convert --checkpoint " + p("ckpt") + " --bits 32-32-32 --output " + p("m32")), 0);
    ASSERT_EQ(run("convert --checkpoint " + p("ckpt") + " --calib " + (kData / "calib.txt").string() + " --output " +
                  p("m8")),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }

  static std::string p(const std::string& name) { return (dir / name).string(); }

  // Exit status of `nmt8 args`, stdout to out.txt, stderr to err.txt.
  static int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + NMT8_CLI + std::string(" ") + args + " > " + p("out.txt") +
                            " 2> " + p("err.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  static std::string out() { return slurp(p("out.txt")); }
  static std::string err() { return slurp(p("err.txt")); }

  static int translate(const std::string& model, const std::string& input, const std::string& output,
                       const std::string& extra = "", const std::string& env = "") {
    return run("translate --model " + p(model) + " --input " + input + " --output " + p(output) + " " + extra, env);
  }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, Fp32TranslationMatchesGolden) {
  ASSERT_EQ(translate("m32", (kData / "input.txt").string(), "g.txt", "--mode fp32"), 0) << err();
  EXPECT_EQ(slurp(p("g.txt")), slurp(kData / "golden_fp32.txt"));
}

TEST_F(Cli, EmptyInputGivesEmptyOutput) {
  std::ofstream(p("empty.txt")).close();
  ASSERT_EQ(translate("m8", p("empty.txt"), "e.txt"), 0) << err();
  EXPECT_TRUE(fs::exists(p("e.txt")));
  EXPECT_EQ(fs::file_size(p("e.txt")), 0u);
}

TEST_F(Cli, TranslationIsDeterministic) {
  const std::string in = (kData / "input.txt").string();
  ASSERT_EQ(translate("m8", in, "a.txt"), 0);
  ASSERT_EQ(translate("m8", in, "b.txt"), 0);
  EXPECT_EQ(slurp(p("a.txt")), slurp(p("b.txt")));
  // worker count does not change the result
  ASSERT_EQ(translate("m8", in, "c.txt", "", "NMT8_THREADS=3"), 0);
  EXPECT_EQ(slurp(p("a.txt")), slurp(p("c.txt")));
  EXPECT_EQ(lines_of(p("a.txt")).size(), lines_of(in).size());
}

TEST_F(Cli, ConvertThenTranslateEqualsInMemoryPipeline) {
  const Model fp32 = load_checkpoint(p("ckpt"));
  const BpeVocab vocab = *load_vocab(p("ckpt"));
  const auto samples = source_corpus(vocab, lines_of(kData / "calib.txt"));
  const Model q = convert(fp32, {8, 8, 8}, samples);
  ASSERT_EQ(translate("m8", (kData / "input.txt").string(), "cli.txt"), 0);
  const auto cli = lines_of(p("cli.txt"));
  const auto input = lines_of(kData / "input.txt");
  ASSERT_EQ(cli.size(), input.size());
  RunOptions o;
  o.mode = Mode::kInt8;
  for (std::size_t i = 0; i < input.size(); ++i) EXPECT_EQ(cli[i], translate_line(q, vocab, input[i], 30, o)) << i;
}

TEST_F(Cli, CalibrateThenConvertWithScales) {
  ASSERT_EQ(run("calibrate --checkpoint " + p("ckpt") + " --calib " + (kData / "calib.txt").string() + " --output " +
                p("scales.txt")),
            0)
      << err();
  ASSERT_EQ(run("convert --checkpoint " + p("ckpt") + " --scales " + p("scales.txt") + " --output " + p("m8s")), 0)
      << err();
  EXPECT_EQ(slurp(p("m8s") + "/weights.bin"), slurp(p("m8") + "/weights.bin"));
  EXPECT_EQ(slurp(p("m8s") + "/manifest.txt"), slurp(p("m8") + "/manifest.txt"));
  // 4-8-8 is loadable too
  ASSERT_EQ(run("convert --checkpoint " + p("ckpt") + " --bits 4-8-8 --calib " + (kData / "calib.txt").string() +
                " --output " + p("m4")),
            0);
  EXPECT_EQ(load_model(p("m4")).bits, (BitWidths{4, 8, 8}));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("translate --model " + p("m8")), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(translate("m8", (kData / "input.txt").string(), "x.txt", "--mode int4"), 1);
  EXPECT_EQ(run("convert --checkpoint " + p("ckpt") + " --bits 8-8 --calib x --output " + p("bad")), 1);
  // missing calibration file for an integer model
  EXPECT_EQ(run("convert --checkpoint " + p("ckpt") + " --output " + p("nocal")), 1);
  EXPECT_NE(err().find("--calib"), std::string::npos) << err();
  // I/O
  EXPECT_EQ(translate("nope", (kData / "input.txt").string(), "x.txt"), 2);
  EXPECT_EQ(translate("m8", p("missing.txt"), "x.txt"), 2);
  EXPECT_EQ(run("convert --checkpoint " + p("ckpt") + " --calib " + p("missing.txt") + " --output " + p("m9")), 2);
  // format: corrupted blob
  fs::copy(p("m8"), p("m8bad"), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  {
    std::fstream f(p("m8bad") + "/weights.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x5a');
  }
  EXPECT_EQ(translate("m8bad", (kData / "input.txt").string(), "x.txt"), 3);
  EXPECT_NE(err().find("checksum"), std::string::npos) << err();
  // vocabulary that does not fit the model
  fs::copy(p("m8"), p("m8voc"), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  {
    std::ofstream v(p("m8voc") + "/vocab.txt");
    v << "<pad>\n<s>\n</s>\n<unk>\na\n";
    std::ofstream(p("m8voc") + "/merges.txt").close();
  }
  EXPECT_EQ(translate("m8voc", (kData / "input.txt").string(), "x.txt"), 3);
  // int8 mode on a float model
  EXPECT_EQ(translate("m32", (kData / "input.txt").string(), "x.txt", "--mode int8"), 1);
}

TEST_F(Cli, ThreadFlagWinsOverEnvironment) {
  const std::string in = (kData / "input.txt").string();
  EXPECT_EQ(translate("m8", in, "x.txt", "", "NMT8_THREADS=zero"), 1);
  EXPECT_EQ(translate("m8", in, "x.txt", "--threads 2", "NMT8_THREADS=zero"), 0);
  ASSERT_EQ(run("bench --model " + p("m8") + " --runs 1 --threads 2", "NMT8_THREADS=5"), 0);
  EXPECT_EQ(key_values(out())["threads"], "2");
  ASSERT_EQ(run("bench --model " + p("m8") + " --runs 1", "NMT8_THREADS=5"), 0);
  EXPECT_EQ(key_values(out())["threads"], "5");
}

TEST_F(Cli, BenchReport) {
  ASSERT_EQ(run("bench --model " + p("m8") + " --runs 1 --src-len 12 --tgt-len 9"), 0) << err();
  auto kv = key_values(out());
  EXPECT_TRUE(kv.count("latency_ms"));
  EXPECT_FALSE(kv.count("stddev_ms"));
  EXPECT_FALSE(kv.count("median_ms"));
  EXPECT_EQ(kv["mode"], "int8");
  EXPECT_EQ(kv["encoder_i8_buffers"], "2");
  EXPECT_EQ(kv["encoder_i32_buffers"], "1");
  const PlanStats ps = plan_stats(load_model(p("m8")), 12, 9);
  EXPECT_EQ(kv["planned_buffer_bytes"], std::to_string(ps.peak_bytes()));
  EXPECT_EQ(kv["encoder_buffer_bytes"], std::to_string(ps.encoder_bytes));

  ASSERT_EQ(run("bench --model " + p("m8") + " --runs 4 --src-len 5 --tgt-len 5"), 0);
  kv = key_values(out());
  for (const char* k : {"mean_ms", "median_ms", "min_ms", "max_ms", "stddev_ms", "tokens_per_sec"}) {
    EXPECT_TRUE(kv.count(k)) << k;
  }
  EXPECT_LE(parse_float(kv["min_ms"]), parse_float(kv["median_ms"]));
  EXPECT_LE(parse_float(kv["median_ms"]), parse_float(kv["max_ms"]));
  EXPECT_EQ(run("bench --model " + p("m8") + " --runs 0"), 1);
}

TEST_F(Cli, Int8OutrunsFp32AtWidth256) {
  ASSERT_EQ(run("make-toy --output " + p("wide") + " --kind random --hidden 256 --heads 4 --ffn 1024 --vocab 300 "
                "--sentences 100 --corpus " + p("wide.txt")),
            0);
  ASSERT_EQ(run("convert --checkpoint " + p("wide") + " --calib " + p("wide.txt") + " --max-len 8 --output " +
                p("wide8")),
            0);
  ASSERT_EQ(run("bench --model " + p("wide8") + " --runs 3 --src-len 20 --tgt-len 20 --mode int8"), 0);
  const double int8 = parse_float(key_values(out())["tokens_per_sec"]);
  ASSERT_EQ(run("bench --model " + p("wide8") + " --runs 3 --src-len 20 --tgt-len 20 --mode fp32"), 0);
  const double fp32 = parse_float(key_values(out())["tokens_per_sec"]);
  EXPECT_GE(int8, fp32);
}

TEST_F(Cli, Profile) {
  ASSERT_EQ(run("profile --preset mobilenmt-10mb --bits 8-8-8"), 0) << err();
  const auto kv = key_values(out());
  const CostReport r = cost_report(preset("mobilenmt-10mb"), 30, 30, {8, 8, 8});
  EXPECT_EQ(kv.at("params_total"), std::to_string(r.params_total));
  EXPECT_EQ(kv.at("flops"), std::to_string(r.flops));
  EXPECT_EQ(kv.at("mmio_bytes"), std::to_string(r.mmio_bytes));
  EXPECT_EQ(kv.at("size_bytes"), std::to_string(r.size_bytes));

  std::ofstream(p("cfg.txt")) << "vocab=8000\nhidden=256\nffn=512\nheads=4\nenc_layers=12\ndec_layers=2\n";
  ASSERT_EQ(run("profile --config " + p("cfg.txt") + " --bits 8-8-8"), 0) << err();
  EXPECT_EQ(key_values(out()).at("params_total"), std::to_string(r.params_total));

  ASSERT_EQ(run("profile --model " + p("m8")), 0) << err();
  EXPECT_EQ(run("profile --preset base --model " + p("m8")), 1);
  EXPECT_EQ(run("profile --preset huge"), 1);
}
