// gemm_bench - OpenMP kernels vs the serial references

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "nmt8/gemm.hpp"
#include "nmt8/quant.hpp"

using namespace nmt8;

namespace {

struct U8Case {
  std::vector<std::uint8_t> a;
  PackedMatrix w;
  std::vector<std::int32_t> out;
};

U8Case u8_case(std::size_t m, std::size_t k, std::size_t n) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> code(0, 255);
  std::vector<std::uint8_t> a(m * k), w(n * k);
  for (auto& v : a) v = static_cast<std::uint8_t>(code(rng));
  for (auto& v : w) v = static_cast<std::uint8_t>(code(rng));
  QTensor wq(Shape{n, k}, std::move(w), QuantParams{8, 0.01f, -1.0f});
  return {std::move(a), pack(wq), std::vector<std::int32_t>(m * n)};
}

FTensor f32_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(r * c);
  for (auto& x : v) x = d(rng);
  return FTensor(Shape{r, c}, std::move(v));
}

// rows x hidden x out
void shapes(benchmark::internal::Benchmark* b) {
  for (long m : {1, 32, 128}) b->Args({m, 512, 2048});
  b->Args({128, 2048, 512});
}

void BM_GemmU8Reference(benchmark::State& s) {
  U8Case c = u8_case(s.range(0), s.range(1), s.range(2));
  for (auto _ : s) {
    gemm_u8_reference(c.a.data(), s.range(0), s.range(1), s.range(1), c.w, c.out.data());
    benchmark::DoNotOptimize(c.out.data());
  }
  s.SetItemsProcessed(s.iterations() * s.range(0) * s.range(1) * s.range(2));
}

void BM_GemmU8(benchmark::State& s) {
  U8Case c = u8_case(s.range(0), s.range(1), s.range(2));
  for (auto _ : s) {
    gemm_u8(c.a.data(), s.range(0), s.range(1), s.range(1), c.w, c.out.data(), static_cast<int>(s.range(3)));
    benchmark::DoNotOptimize(c.out.data());
  }
  s.SetItemsProcessed(s.iterations() * s.range(0) * s.range(1) * s.range(2));
}

void BM_GemmF32Reference(benchmark::State& s) {
  const FTensor a = f32_tensor(s.range(0), s.range(1), 2), w = f32_tensor(s.range(2), s.range(1), 3);
  for (auto _ : s) benchmark::DoNotOptimize(gemm_f32_reference(a, w));
  s.SetItemsProcessed(s.iterations() * s.range(0) * s.range(1) * s.range(2));
}

void BM_GemmF32(benchmark::State& s) {
  const FTensor a = f32_tensor(s.range(0), s.range(1), 2), w = f32_tensor(s.range(2), s.range(1), 3);
  for (auto _ : s) benchmark::DoNotOptimize(gemm_f32(a, w, static_cast<int>(s.range(3))));
  s.SetItemsProcessed(s.iterations() * s.range(0) * s.range(1) * s.range(2));
}

void with_workers(benchmark::internal::Benchmark* b) {
  for (long m : {1, 32, 128})
    for (long t : {1, 4}) b->Args({m, 512, 2048, t});
  for (long t : {1, 4}) b->Args({128, 2048, 512, t});
}

}  // namespace

BENCHMARK(BM_GemmU8Reference)->Apply(shapes)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_GemmU8)->Apply(with_workers)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_GemmF32Reference)->Apply(shapes)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_GemmF32)->Apply(with_workers)->Unit(benchmark::kMicrosecond)->UseRealTime();

BENCHMARK_MAIN();
