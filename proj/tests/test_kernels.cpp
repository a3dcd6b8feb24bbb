#include <gtest/gtest.h>

#include <random>

#include "nmt8/kernels.hpp"
#include "nmt8/quant.hpp"
#include "test_util.hpp"

using namespace nmt8;

namespace {

double deq(std::uint8_t c, const QuantParams& p) { return double(c) * p.scale + p.min_val; }

}  // namespace

TEST(Kernels, LinearAccMetaMatchesDequantizedProduct) {
  std::mt19937_64 rng(21);
  const std::size_t m = 5, k = 7, n = 6;
  auto a = tu::random_codes(m * k, 8, rng);
  const QuantParams ap{8, 0.02f, -1.0f};
  std::vector<QuantParams> wp;
  for (std::size_t j = 0; j < n; ++j) wp.push_back({4, 0.1f + 0.01f * j, -0.5f});
  const QTensor w(Shape{n, k}, tu::random_codes(n * k, 4, rng), wp);
  std::vector<std::int32_t> out(m * n);
  const AccMeta meta = linear_u8(a.data(), m, k, ap, pack(w), out.data(), 2);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double want = 0;
      for (std::size_t t = 0; t < k; ++t) want += deq(a[i * k + t], ap) * deq(w.row(j)[t], wp[j]);
      EXPECT_NEAR(meta.value(i, j, out[i * n + j]), want, 1e-4);
    }
}

TEST(Kernels, ScoresAndContextPerHead) {
  std::mt19937_64 rng(22);
  const std::size_t lq = 3, lk = 5, heads = 2, d = 3, ld = 10;  // operands are column slices
  const auto q = tu::random_codes(lq * ld, 8, rng), kk = tu::random_codes(lk * ld, 8, rng);
  const QuantParams qp{8, 0.01f, -0.7f}, kp{8, 0.015f, -1.2f};
  std::vector<std::int32_t> s(heads * lq * lk);
  const AccMeta sm = scores_u8(q.data() + 1, lq, ld, qp, kk.data() + 2, lk, ld, kp, heads, d, s.data(), 1);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t j = 0; j < lk; ++j) {
        std::int32_t acc = 0;
        double real = 0;
        for (std::size_t t = 0; t < d; ++t) {
          const auto x = q[i * ld + 1 + h * d + t], y = kk[j * ld + 2 + h * d + t];
          acc += x * y;
          real += deq(x, qp) * deq(y, kp);
        }
        const std::size_t row = h * lq + i;
        ASSERT_EQ(s[row * lk + j], acc);
        EXPECT_NEAR(sm.value(row, j, acc), real, 1e-4);
      }

  const auto p = tu::random_codes(heads * lq * lk, 8, rng);
  const QuantParams pp{8, 1.0f / 255.0f, 0.0f}, vp{8, 0.02f, -0.3f};
  std::vector<std::int32_t> c(lq * heads * d);
  const AccMeta cm = context_u8(p.data(), lq, lk, pp, kk.data() + 2, ld, vp, heads, d, c.data(), 2);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t t = 0; t < d; ++t) {
        std::int32_t acc = 0;
        double real = 0;
        for (std::size_t j = 0; j < lk; ++j) {
          const auto x = p[(h * lq + i) * lk + j], y = kk[j * ld + 2 + h * d + t];
          acc += x * y;
          real += deq(x, pp) * deq(y, vp);
        }
        const std::size_t col = h * d + t;
        ASSERT_EQ(c[i * heads * d + col], acc);
        EXPECT_NEAR(cm.value(i, col, acc), real, 1e-4);
      }
}
