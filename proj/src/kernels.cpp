#include "sde/kernels.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <string>

namespace sde {

static inline void conv_channel(const int8_t* in, const int8_t* w, int32_t* acc, const TileLoop& t, uint32_t oc,
                                bool reset) {
  const uint32_t ih = t.in_h(), iw = t.in_w(), k = t.kernel, s = t.stride;
  int32_t* out = acc + size_t(oc) * t.out_h * t.out_w;
  const int8_t* wo = w + size_t(oc) * t.in_channels * k * k;
  for (uint32_t y = 0; y < t.out_h; ++y) {
    for (uint32_t x = 0; x < t.out_w; ++x) {
      int32_t sum = reset ? 0 : out[y * t.out_w + x];
      for (uint32_t ic = 0; ic < t.in_channels; ++ic) {
        const int8_t* ip = in + (size_t(ic) * ih + y * s) * iw + x * s;
        const int8_t* wp = wo + size_t(ic) * k * k;
        for (uint32_t ky = 0; ky < k; ++ky)
          for (uint32_t kx = 0; kx < k; ++kx) sum += int32_t(ip[ky * iw + kx]) * wp[ky * k + kx];
      }
      out[y * t.out_w + x] = sum;
    }
  }
}

void conv_tile_ref(const int8_t* in, const int8_t* w, int32_t* acc, const TileLoop& t, bool reset) {
  for (uint32_t oc = 0; oc < t.out_channels; ++oc) conv_channel(in, w, acc, t, oc, reset);
}

void conv_tile(const int8_t* in, const int8_t* w, int32_t* acc, const TileLoop& t, bool reset) {
  const int n = t.out_channels;
  // small tiles are not worth waking the thread pool
#pragma omp parallel for schedule(static) if (t.macs() >= (1u << 16))
  for (int oc = 0; oc < n; ++oc) conv_channel(in, w, acc, t, uint32_t(oc), reset);
}

size_t count_nonzero(std::span<const int8_t> v) {
  return size_t(std::count_if(v.begin(), v.end(), [](int8_t x) { return x != 0; }));
}

int8_t saturate8(int32_t v) { return int8_t(std::clamp<int32_t>(v, -128, 127)); }

static int32_t sat32(int64_t v) {
  return int32_t(std::clamp<int64_t>(v, std::numeric_limits<int32_t>::min(), std::numeric_limits<int32_t>::max()));
}

void alu_apply(AluOp op, std::span<const int32_t> in, std::span<int32_t> out, std::optional<int16_t> imm) {
  if (out.empty() || in.size() % out.size() != 0)
    throw Error(Error::Code::MalformedField, "alu operand sizes do not fold");
  if (op == AluOp::Pool2x2) {
    const size_t w = imm ? size_t(uint16_t(*imm)) : 0;
    if (w < 2 || w % 2 || in.size() % (2 * w) || in.size() != out.size() * 4)
      throw Error(Error::Code::MalformedField, "pool2x2 needs even rows of the immediate width");
    const size_t rows = in.size() / w, ow = w / 2;
    for (size_t r = 0; r < rows / 2; ++r)
      for (size_t x = 0; x < ow; ++x) {
        const int32_t* a = &in[2 * r * w + 2 * x];
        out[r * ow + x] = std::max({a[0], a[1], a[w], a[w + 1]});
      }
    return;
  }
  const size_t n = out.size(), r = in.size() / n;
  for (size_t i = 0; i < n; ++i) {
    int64_t v = in[i];
    for (size_t j = 1; j < r; ++j) {
      const int32_t e = in[i + j * n];
      if (op == AluOp::Max) v = std::max<int64_t>(v, e);
      else if (op == AluOp::Min) v = std::min<int64_t>(v, e);
      else v += e;
    }
    if (imm) {
      switch (op) {
        case AluOp::Add: v += *imm; break;
        case AluOp::Max: v = std::max<int64_t>(v, *imm); break;
        case AluOp::Min: v = std::min<int64_t>(v, *imm); break;
        case AluOp::Shr: v >>= std::clamp<int>(*imm, 0, 31); break;
        case AluOp::MulImm: v *= *imm; break;
        case AluOp::Pool2x2: break;
      }
    }
    out[i] = sat32(v);
  }
}

void fill_synthetic(std::span<int8_t> out, uint64_t seed) {
  std::mt19937_64 rng(seed);
  size_t i = 0;
  while (i < out.size()) {
    uint64_t bits = rng();
    for (int b = 0; b < 8 && i < out.size(); ++b, bits >>= 8) out[i++] = int8_t(bits & 0xff);
  }
}

uint64_t synthetic_seed(const std::string& model, uint8_t tenant, uint32_t tensor) {
  // FNV-1a; std::hash is not stable across library versions
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](uint8_t b) { h = (h ^ b) * 1099511628211ull; };
  for (char c : model) mix(uint8_t(c));
  mix(tenant);
  for (int b = 0; b < 4; ++b) mix(uint8_t(tensor >> (8 * b)));
  return h;
}

}  // namespace sde
