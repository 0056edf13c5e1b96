#include "doctest.h"

#include <random>
#include <vector>

#include "sde/kernels.hpp"

using namespace sde;

namespace {

// Straight from the definition with explicit index arithmetic; no shared helpers.
std::vector<int32_t> conv_oracle(const std::vector<int8_t>& in, const std::vector<int8_t>& w, const TileLoop& t) {
  const int ih = int(t.in_h()), iw = int(t.in_w()), k = t.kernel;
  std::vector<int32_t> out(size_t(t.out_channels) * t.out_h * t.out_w, 0);
  for (int o = 0; o < t.out_channels; ++o)
    for (int y = 0; y < t.out_h; ++y)
      for (int x = 0; x < t.out_w; ++x) {
        long s = 0;
        for (int c = 0; c < t.in_channels; ++c)
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
              s += long(in[(c * ih + y * t.stride + a) * iw + x * t.stride + b]) * w[((o * t.in_channels + c) * k + a) * k + b];
        out[(o * t.out_h + y) * t.out_w + x] = int32_t(s);
      }
  return out;
}

}  // namespace

TEST_CASE("conv tile kernels match the definition") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    TileLoop t{uint16_t(1 + rng() % 9), uint16_t(1 + rng() % 7), uint16_t(1 + rng() % 6), uint16_t(1 + rng() % 6),
               uint8_t(1 + rng() % 4), uint8_t(1 + rng() % 3)};
    std::vector<int8_t> in(t.input_bytes()), w(t.weight_bytes());
    fill_synthetic(in, rng());
    fill_synthetic(w, rng());
    const auto expect = conv_oracle(in, w, t);

    std::vector<int32_t> a(expect.size(), 99), b(expect.size(), 99);
    conv_tile_ref(in.data(), w.data(), a.data(), t, true);
    conv_tile(in.data(), w.data(), b.data(), t, true);
    CHECK(a == expect);
    CHECK(b == expect);

    // accumulate mode adds onto what is there
    conv_tile(in.data(), w.data(), b.data(), t, false);
    for (size_t i = 0; i < b.size(); ++i) CHECK(b[i] == 2 * expect[i]);
  }
}

TEST_CASE("parallel kernel agrees on a tile large enough to fork") {
  TileLoop t{64, 32, 16, 16, 3, 1};
  REQUIRE(t.macs() >= (1u << 16));
  std::vector<int8_t> in(t.input_bytes()), w(t.weight_bytes());
  fill_synthetic(in, 1);
  fill_synthetic(w, 2);
  std::vector<int32_t> a(t.acc_bytes() / 4), b(t.acc_bytes() / 4);
  conv_tile_ref(in.data(), w.data(), a.data(), t, true);
  conv_tile(in.data(), w.data(), b.data(), t, true);
  CHECK(a == b);
}

TEST_CASE("alu folds blocks then applies the immediate") {
  std::vector<int32_t> in = {1, -5, 3, 7, 2, -9}, out(3);
  alu_apply(AluOp::Add, in, out, std::nullopt);
  CHECK(out == std::vector<int32_t>{8, -3, -6});
  alu_apply(AluOp::Max, in, out, int16_t(0));
  CHECK(out == std::vector<int32_t>{7, 2, 3});
  std::vector<int32_t> one(6);
  alu_apply(AluOp::Shr, in, one, int16_t(1));
  CHECK(one == std::vector<int32_t>{0, -3, 1, 3, 1, -5});
  alu_apply(AluOp::MulImm, in, one, int16_t(-2));
  CHECK(one[1] == 10);
  std::vector<int32_t> bad(4);
  CHECK_THROWS_AS(alu_apply(AluOp::Add, in, bad, std::nullopt), Error);
}

TEST_CASE("pool2x2 takes window maxima") {
  // two rows of width 4 -> one row of width 2
  std::vector<int32_t> in = {1, 2, 3, 4, 5, -1, 0, 9}, out(2);
  alu_apply(AluOp::Pool2x2, in, out, int16_t(4));
  CHECK(out == std::vector<int32_t>{5, 9});
  CHECK_THROWS_AS(alu_apply(AluOp::Pool2x2, in, out, int16_t(3)), Error);
}

TEST_CASE("saturation and synthetic data") {
  CHECK(saturate8(300) == 127);
  CHECK(saturate8(-300) == -128);
  CHECK(saturate8(-7) == -7);
  std::vector<int8_t> a(100), b(100);
  fill_synthetic(a, synthetic_seed("vgg16", 1, 3));
  fill_synthetic(b, synthetic_seed("vgg16", 1, 3));
  CHECK(a == b);
  fill_synthetic(b, synthetic_seed("vgg16", 2, 3));
  CHECK(a != b);
  CHECK(count_nonzero(std::vector<int8_t>{0, 1, 0, -1}) == 2);
}
