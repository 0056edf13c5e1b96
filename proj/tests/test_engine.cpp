#include "doctest.h"

#include <random>
#include <set>

#include "sde/compiler.hpp"
#include "sde/engine.hpp"
#include "sde/kernels.hpp"

using namespace sde;

namespace {

const AcceleratorConfig kCfg = AcceleratorConfig::defaults();

CompiledProgram hand_program(std::vector<Instruction> code, Sharing mode = Sharing::Temporal, uint8_t tenant = 0) {
  CompiledProgram p;
  p.model = "hand";
  p.grant = default_grant(kCfg, mode, tenant);
  p.instructions = std::move(code);
  p.instructions.push_back(Finish{});
  return p;
}

DataSegment segment(uint32_t addr, std::vector<uint8_t> bytes) { return {addr, std::move(bytes)}; }

// Load weights and input, one GEMM, store nothing: cycles depend only on the GEMM.
uint64_t gemm_run(const std::vector<uint8_t>& weights, bool constant_time) {
  const TileLoop u{16, 8, 4, 4, 3, 1};
  const uint32_t ib = 64 * ((u.input_bytes() + 63) / 64), wb = 64 * ((u.weight_bytes() + 63) / 64);
  Gemm g;
  g.constant_time = constant_time;
  g.reset = true;
  g.uop = u;
  auto p = hand_program({Load{MemVariant::Plain, {SpadKind::Input, 0, ib}, {0, ib, {}}, false},
                         Load{MemVariant::Plain, {SpadKind::Weight, 0, wb}, {4096, wb, {}}, false}, g});
  std::vector<uint8_t> in(ib);
  fill_synthetic({reinterpret_cast<int8_t*>(in.data()), in.size()}, 7);
  std::vector<uint8_t> w = weights;
  w.resize(wb, 0);
  p.data = {segment(0, in), segment(4096, w)};
  Engine e(kCfg, Sharing::Temporal, EngineOptions{false, LogLevel::Off, true});
  e.admit(p);
  return e.run().tenants.at(0).cycles;
}

uint64_t alu_run(const std::vector<uint8_t>& input, bool constant_time) {
  const uint32_t n = uint32_t(input.size());
  auto p = hand_program({Load{MemVariant::Plain, {SpadKind::Input, 0, n}, {0, n, {}}, false},
                         Alu{constant_time, false, AluOp::Max, {SpadKind::Output, 0, n}, {SpadKind::Input, 0, n}, int16_t(0)}});
  p.data = {segment(0, input)};
  Engine e(kCfg, Sharing::Temporal, EngineOptions{false, LogLevel::Off, true});
  e.admit(p);
  return e.run().tenants.at(0).cycles;
}

}  // namespace

TEST_CASE("execution cycle formulas") {
  const TileLoop u{16, 8, 4, 4, 3, 1};  // 18432 MACs
  CHECK(gemm_cycles(u, 4, true, 0) == 72);
  CHECK(gemm_cycles(u, 1, true, 0) == 288);
  CHECK(gemm_cycles(u, 4, false, u.weight_bytes()) == 72);
  CHECK(gemm_cycles(u, 4, false, u.weight_bytes() / 2) == 36);
  CHECK(gemm_cycles(u, 4, false, 0) == 1);
  CHECK(alu_cycles(1024, 4, true, 0) == 16);
  CHECK(alu_cycles(1024, 4, false, 10) == 1);
}

TEST_CASE("constant-time gemm and alu ignore operand values") {
  const uint32_t wb = 16 * 8 * 9;
  std::set<uint64_t> ct_gemm, ct_alu;
  std::mt19937_64 rng(1);
  for (int d = 0; d < 100; ++d) {
    std::vector<uint8_t> w(wb), a(1024);
    const double density = d == 0 ? 0.0 : (d % 10) / 10.0 + 0.05;
    std::bernoulli_distribution keep(density);
    for (auto& x : w) x = keep(rng) ? uint8_t(rng() | 1) : 0;
    for (auto& x : a) x = keep(rng) ? uint8_t(rng() | 1) : 0;
    ct_gemm.insert(gemm_run(w, true));
    ct_alu.insert(alu_run(a, true));
  }
  CHECK(ct_gemm.size() == 1);
  CHECK(ct_alu.size() == 1);
  std::vector<uint8_t> dense(wb, 3), zero(wb, 0);
  CHECK(gemm_run(zero, false) < gemm_run(dense, false));
  CHECK(alu_run(std::vector<uint8_t>(1024, 0), false) < alu_run(std::vector<uint8_t>(1024, 5), false));
}

TEST_CASE("fuzzed accesses trap exactly where validation fails") {
  std::mt19937_64 rng(42);
  const TenantGrant grant = default_grant(kCfg, Sharing::Spatial, 1);
  auto spad = [&](SpadKind k) {
    const uint32_t q = grant.spad_quota[size_t(k)];
    const uint32_t len = 4 * uint32_t(1 + rng() % 256) + (rng() % 8 == 0 ? uint32_t(rng() % 3) : 0);
    uint32_t base = uint32_t(rng() % (q + q / 4));
    if (rng() % 2) base &= ~63u;
    return SpadRange{k, base, len};
  };
  auto dram = [&](uint32_t len) {
    uint32_t base = rng() % 3 == 0 ? uint32_t(rng() % kCfg.dram_bytes)
                                   : grant.dram_base + uint32_t(rng() % (grant.dram_len + 8192)) - 4096;
    return DramRange{base & ~63u, len, {}};
  };
  size_t expected = 0;
  std::vector<Instruction> code;
  for (int i = 0; i < 2000; ++i) {
    const SpadKind k = SpadKind(rng() % 4);
    switch (rng() % 4) {
      case 0: {
        const SpadRange s = spad(k);
        code.push_back(Load{MemVariant::Plain, s, dram(s.len), false});
        break;
      }
      case 1: {
        const SpadRange s = spad(k);
        code.push_back(Store{MemVariant::Plain, dram(s.len), s, false});
        break;
      }
      case 2: code.push_back(Zeroize{spad(k), false}); break;
      default: {
        SpadRange s = spad(SpadKind::Input), o = spad(SpadKind::Output);
        o.len = s.len;
        code.push_back(Alu{true, false, AluOp::Add, o, s, std::nullopt});
      }
    }
  }
  std::set<int64_t> want;
  for (size_t i = 0; i < code.size(); ++i)
    if (validate(std::span(&code[i], 1), grant)) want.insert(int64_t(i));
  expected = want.size();
  REQUIRE(expected > 100);
  REQUIRE(expected < code.size() - 100);

  auto p = hand_program(code, Sharing::Spatial, 1);
  Engine e(kCfg, Sharing::Spatial, EngineOptions{false, LogLevel::Off, true});
  e.admit(p);
  const RunReport r = e.run();
  std::set<int64_t> got;
  for (const auto& t : r.traps) got.insert(t.index);
  CHECK(got == want);
}

TEST_CASE("released scratchpad reads back as zeros") {
  CompileOptions o;
  o.threat = parse_threat("ss", Sharing::Spatial);
  const CompiledProgram secret = compile(catalog_model("alexnet", 8), o);
  Engine e(kCfg, Sharing::Spatial, EngineOptions{true, LogLevel::Off, false});
  e.admit(secret);
  e.run();
  e.teardown(0);

  // a raw tenant that leaves secrets behind must be aborted, not released
  const uint32_t n = 4096;
  auto leaky = hand_program({Load{MemVariant::E, {SpadKind::Weight, 0, n}, {0, n, {}}, false}}, Sharing::Spatial, 1);
  leaky.data = {segment(leaky.grant.dram_base, std::vector<uint8_t>(n, 0x5a))};
  leaky.instructions[0] = Load{MemVariant::E, {SpadKind::Weight, 0, n}, {leaky.grant.dram_base, n, {}}, false};
  e.admit(leaky);
  e.run();
  CHECK(e.tainted_bytes(SpadKind::Weight) == n);
  CHECK_THROWS_AS(e.teardown(1), Error);
  const ReleaseReport rr = e.abort(1);
  CHECK(rr.residual_tainted_bytes == n);
  CHECK(e.tainted_bytes(SpadKind::Weight) == 0);

  // take over every region the earlier tenants used
  auto take = hand_program({}, Sharing::Spatial, 2);
  take.instructions.clear();
  take.grant.spad_quota = {kCfg.spad_bytes[0] / 2, kCfg.spad_bytes[1] / 2, kCfg.spad_bytes[2] / 2, kCfg.spad_bytes[3] / 2};
  e.admit(take);
  for (int k = 0; k < kNumSpadKinds; ++k) {
    const AccessResult a = e.access_scratchpad(2, SpadKind(k), 0, take.grant.spad_quota[k], false);
    CHECK(!a.trapped);
    CHECK(std::all_of(a.data.begin(), a.data.end(), [](uint8_t x) { return x == 0; }));
  }
  CHECK(e.access_scratchpad(2, SpadKind::Input, take.grant.spad_quota[0], 64, false).trapped);
}

TEST_CASE("spatial tenants see the same timing alone and together") {
  const ModelSpec m = catalog_model("alexnet", 8);
  const char* codes[] = {"pp", "sp", "ps", "ss"};
  std::vector<CompiledProgram> progs;
  for (uint8_t t = 0; t < 4; ++t) {
    CompileOptions o;
    o.threat = parse_threat(codes[t], Sharing::Spatial);
    o.tenant_id = t;
    progs.push_back(compile(m, o));
  }
  std::vector<TenantReport> solo;
  std::vector<std::vector<TraceWindow>> solo_trace;
  for (const auto& p : progs) {
    Engine e(kCfg, Sharing::Spatial, EngineOptions{true, LogLevel::Off, true});
    e.admit(p);
    solo.push_back(e.run().tenants.at(0));
    solo_trace.push_back(e.trace().windows(p.grant.tenant_id));
  }
  Engine all(kCfg, Sharing::Spatial, EngineOptions{true, LogLevel::Off, true});
  for (const auto& p : progs) all.admit(p);
  const RunReport r = all.run();
  CHECK(r.violations.empty());
  REQUIRE(r.tenants.size() == 4);
  for (uint8_t t = 0; t < 4; ++t) {
    CAPTURE(int(t));
    CHECK(r.tenants[t].cycles == solo[t].cycles);
    CHECK(r.tenants[t].start_cycle == solo[t].start_cycle);
    CHECK(r.tenants[t].layer_start_cycles == solo[t].layer_start_cycles);
    CHECK(r.tenants[t].output == solo[t].output);
    CHECK(!r.tenants[t].output.empty());
    const auto w = all.trace().windows(t);
    const size_t n = std::min(w.size(), solo_trace[t].size());
    bool same = true;
    for (size_t i = 0; i < n; ++i)
      same = same && w[i].read_bytes == solo_trace[t][i].read_bytes && w[i].write_bytes == solo_trace[t][i].write_bytes;
    CHECK(same);
  }
}

TEST_CASE("admission enforces the platform") {
  Engine e(kCfg, Sharing::Temporal, EngineOptions{true, LogLevel::Off, true});
  auto a = hand_program({Zeroize{{SpadKind::Input, 0, 64}, false}});
  a.instructions.insert(a.instructions.begin(), SetConfig{ConfigReg::ShaperEn, 0});
  e.admit(a);
  auto b = hand_program({}, Sharing::Temporal, 1);
  CHECK_THROWS_AS(e.admit(b), Error);  // the temporal grant holds every exec tile
  auto c = hand_program({}, Sharing::Temporal, 0);
  CHECK_THROWS_AS(e.admit(c), Error);  // slot in use
}

TEST_CASE("event log is one json object per line") {
  CompileOptions o;
  o.threat = parse_threat("ps");
  const CompiledProgram p = compile(catalog_model("alexnet", 8), o);
  Engine e(kCfg, Sharing::Temporal, EngineOptions{true, LogLevel::Info, true});
  e.admit(p);
  e.run();
  const std::string log = e.event_log();
  CHECK(log.find("\"event\":\"admit\"") != std::string::npos);
  CHECK(log.find("\"event\":\"config\"") != std::string::npos);
  CHECK(log.find("\"event\":\"finish\"") != std::string::npos);
  CHECK(std::count(log.begin(), log.end(), '\n') == long(e.events().size()));
}
