#include "doctest.h"

#include <random>

#include "sde/config.hpp"
#include "sde/isa.hpp"

using namespace sde;

namespace {

struct Gen {
  std::mt19937_64 rng{12345};
  uint32_t bits(int n) { return uint32_t(rng() & ((uint64_t(1) << n) - 1)); }
  uint32_t nonzero(int n) {
    uint32_t v = bits(n);
    return v ? v : 1;
  }
  SpadRange spad(SpadKind k) { return {k, bits(21), nonzero(22)}; }
  PadParams pad(uint32_t len) {
    PadParams p{uint8_t(bits(6)), uint8_t(bits(6)), uint8_t(bits(6)), uint8_t(bits(6))};
    if (p.total() > len) p = {};
    return p;
  }
  MemVariant variant() { return MemVariant(bits(2)); }

  Instruction any() {
    switch (rng() % 7) {
      case 0: {
        Load l{variant(), spad(SpadKind(bits(2))), {}, bool(bits(1))};
        l.src = {uint32_t(rng()), l.dst.len, pad(l.dst.len)};
        return l;
      }
      case 1: {
        Store s{variant(), {}, spad(SpadKind(bits(2))), bool(bits(1))};
        s.dst = {uint32_t(rng()), s.src.len, pad(s.src.len)};
        return s;
      }
      case 2: {
        Gemm g;
        g.constant_time = bits(1);
        g.reset = bits(1);
        g.fence = bits(1);
        g.out_base = bits(21);
        g.in1_base = bits(21);
        g.in2_base = bits(21);
        g.uop = {uint16_t(nonzero(11)), uint16_t(nonzero(11)), uint16_t(nonzero(9)), uint16_t(nonzero(9)),
                 uint8_t(nonzero(4)), uint8_t(nonzero(3))};
        return g;
      }
      case 3: {
        Alu a;
        a.constant_time = bits(1);
        a.fence = bits(1);
        a.op = AluOp(rng() % 6);
        a.out = spad(SpadKind(bits(2)));
        a.in = spad(SpadKind(bits(2)));
        if (bits(1)) a.imm = int16_t(bits(16));
        return a;
      }
      case 4: return Zeroize{spad(SpadKind(bits(2))), bool(bits(1))};
      case 5: return SetConfig{ConfigReg(rng() % 6), uint32_t(rng())};
      default: return Finish{};
    }
  }
};

}  // namespace

TEST_CASE("zeroize encodes opcode 5 with documented field positions") {
  const auto e = encode(Zeroize{{SpadKind::Input, 0, 16384}});
  CHECK(e[0] == 0x05);
  CHECK(e[1] == 0x00);  // Input kind in flags[6:5], no fence
  // payload: base (21 bits) = 0, then len (22 bits) = 16384 = bit 14 -> payload bit 35
  CHECK(e[2 + 35 / 8] == uint8_t(1u << (35 % 8)));
  int set = 0;
  for (size_t i = 2; i < kInstrBytes; ++i) set += __builtin_popcount(e[i]);
  CHECK(set == 1);

  const auto w = encode(Zeroize{{SpadKind::Weight, 0, 16384}});
  CHECK(w[1] == 0x20);
}

TEST_CASE("finish is an opcode byte and fifteen zero bytes") {
  const auto e = encode(Finish{});
  CHECK(e[0] == 0x07);
  for (size_t i = 1; i < kInstrBytes; ++i) CHECK(e[i] == 0);
}

TEST_CASE("all-zero bytes are an unknown opcode") {
  EncodedInstr z{};
  try {
    decode(z);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Error::Code::UnknownOpcode);
  }
  z[0] = 0x42;
  CHECK_THROWS_AS(decode(z), Error);
}

TEST_CASE("reserved bits and out-of-range fields are rejected") {
  auto e = encode(Finish{});
  e[9] = 1;
  try {
    decode(e);
    FAIL("expected throw");
  } catch (const Error& err) {
    CHECK(err.code() == Error::Code::MalformedField);
  }
  Zeroize big{{SpadKind::Input, 1u << 21, 64}};
  try {
    encode(big);
    FAIL("expected throw");
  } catch (const Error& err) {
    CHECK(err.code() == Error::Code::RangeOverflow);
  }
  Gemm g;
  g.uop.out_channels = 2048;
  CHECK_THROWS_AS(encode(g), Error);
}

TEST_CASE("decode inverts encode on random valid instructions") {
  Gen gen;
  for (int i = 0; i < 10000; ++i) {
    const Instruction in = gen.any();
    const auto bytes = encode(in);
    const Instruction out = decode(bytes);
    REQUIRE(out == in);
    CHECK(encode(out) == bytes);
  }
}

TEST_CASE("load SE roundtrips with its variant") {
  Load l{MemVariant::SE, {SpadKind::Weight, 128, 4096}, {0x10000, 4096, {0, 0, 0, 32}}, true};
  const auto out = decode(encode(l));
  REQUIRE(std::holds_alternative<Load>(out));
  CHECK(std::get<Load>(out) == l);
  CHECK(mnemonic(out) == "LOAD_SE");
}

TEST_CASE("binary file holds a header and 16 bytes per instruction") {
  Gen gen;
  std::vector<Instruction> prog;
  for (int i = 0; i < 100; ++i) prog.push_back(gen.any());
  const auto bin = write_binary(prog, 2);
  CHECK(bin.size() == 10 + 16 * prog.size());
  CHECK(std::string(bin.begin(), bin.begin() + 4) == "SESM");
  const auto back = read_binary(bin);
  CHECK(back.tenant_id == 2);
  CHECK(back.instructions == prog);

  auto bad = bin;
  bad.pop_back();
  CHECK_THROWS_AS(read_binary(bad), Error);
}

TEST_CASE("validate catches the first out-of-quota range") {
  const auto cfg = AcceleratorConfig::defaults();
  const TenantGrant g = default_grant(cfg, Sharing::Spatial, 1);
  const uint32_t quota = g.spad_quota[size_t(SpadKind::Input)];
  REQUIRE(quota == 64 * kKiB);

  std::vector<Instruction> ok = {Load{MemVariant::Plain, {SpadKind::Input, 0, quota}, {g.dram_base, quota, {}}}};
  CHECK_FALSE(validate(ok, g).has_value());

  std::vector<Instruction> bad = ok;
  bad.push_back(Load{MemVariant::Plain, {SpadKind::Input, quota, 1}, {g.dram_base, 1, {}}});
  const auto v = validate(bad, g);
  REQUIRE(v.has_value());
  CHECK(v->index == 1);
  CHECK(v->access.base == quota);

  std::vector<Instruction> other = {Load{MemVariant::Plain, {SpadKind::Input, 0, 64}, {0, 64, {}}}};
  CHECK(validate(other, g).has_value());  // tenant 0's DRAM window

  std::vector<Instruction> acc = {Zeroize{{SpadKind::Accumulator, 2, 4}}};
  CHECK(validate(acc, g).has_value());  // not 32-bit aligned
}
