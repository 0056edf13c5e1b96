#include "doctest.h"

#include <set>

#include "sde/compiler.hpp"
#include "sde/engine.hpp"

using namespace sde;

namespace {

const AcceleratorConfig kCfg = AcceleratorConfig::defaults();

struct Run {
  CompiledProgram prog;
  BandwidthTrace trace;
  uint32_t slot = 0;
};

Run run(const std::string& model, const std::string& threat, Sharing mode) {
  CompileOptions o;
  o.threat = parse_threat(threat, mode);
  Run r;
  r.prog = compile(catalog_model(model, 8), o);
  Engine e(kCfg, mode, EngineOptions{true, LogLevel::Off, true});
  e.admit(r.prog);
  e.run();
  r.trace = e.trace();
  r.slot = bus_slot_cycles(kCfg, mode);
  return r;
}

}  // namespace

TEST_CASE("timer and cipher arithmetic") {
  CHECK(shaper_period(100'000'000, 64) == 64);
  CHECK(shaper_period(400'000'000, 64) == 16);
  CHECK(shaper_period(100'000'000'000ull, 64) == 1);
  CHECK(encryption_delay(64, Cipher::Qarma128) == 4);
  CHECK(encryption_delay(64, Cipher::Aes128) == 8);
  CHECK(encryption_delay(64, Cipher::None) == 0);
  CHECK(encryption_delay(17, Cipher::Qarma128) == 2);
  CHECK(bus_slot_cycles(kCfg, Sharing::Spatial) * kMaxTenants == shaper_period(kCfg.bandwidth / 4, 64));
}

TEST_CASE("bursts split at burst boundaries") {
  CHECK(split_bursts(0, 256, 64).size() == 4);
  const auto b = split_bursts(32, 100, 64);
  REQUIRE(b.size() == 3);
  CHECK(b[0] == std::pair<uint32_t, uint32_t>{32, 32});
  CHECK(b[1] == std::pair<uint32_t, uint32_t>{64, 64});
  CHECK(b[2] == std::pair<uint32_t, uint32_t>{128, 4});
}

TEST_CASE("real queue applies back-pressure") {
  AcceleratorConfig cfg = kCfg;
  cfg.real_queue_bursts = 8;
  MemorySystem m(cfg, Sharing::Temporal);
  m.attach(0, cfg.bandwidth, 0, kMiB);
  int accepted = 0;
  for (int i = 0; i < 10; ++i) accepted += m.submit(0, Channel::Read, uint32_t(i) * 64, 64, 1, false);
  CHECK(accepted == 8);
}

TEST_CASE("an idle shaped tenant emits a constant all-fake trace") {
  for (auto mode : {Sharing::Temporal, Sharing::Spatial}) {
    MemorySystem m(kCfg, mode);
    const uint64_t bw = default_grant(kCfg, mode, 1).bandwidth;
    m.attach(1, bw, 16 * kMiB, 16 * kMiB);
    m.set_shaper(1, true, 0);
    const uint64_t end = 100 * kCfg.window_cycles;
    for (uint64_t c = 0; c < end; ++c) m.tick(c);
    m.finish(end);
    const auto& t = m.trace();
    const auto [first, last] = t.complete_shaped_windows(1);
    CHECK(last - first >= 98);
    const uint64_t expect = bw * kCfg.window_cycles / 100'000'000;
    const auto w = t.windows(1);
    for (uint64_t i = first; i < last; ++i) {
      CHECK(w[i].read_bytes == expect);
      CHECK(w[i].write_bytes == expect);
      CHECK(w[i].real_bytes == 0);
    }
  }
}

TEST_CASE("shaped traces are flat, conserve bytes and keep fakes off busy banks") {
  for (auto mode : {Sharing::Temporal, Sharing::Spatial}) {
    for (const char* model : {"alexnet", "resnet18"}) {
      CAPTURE(model);
      const Run r = run(model, "ss", mode);
      const uint64_t expect = r.prog.grant.bandwidth * kCfg.window_cycles / 100'000'000;
      const auto [first, last] = r.trace.complete_shaped_windows(0);
      REQUIRE(last > first + 10);
      const auto w = r.trace.windows(0);
      size_t bad = 0;
      for (uint64_t i = first; i < last; ++i) bad += w[i].read_bytes != expect || w[i].write_bytes != expect;
      CHECK(bad == 0);

      uint64_t real = 0;
      for (const auto& b : r.trace.bursts) real += b.kind == BurstKind::Real ? b.len : 0;
      CHECK(real == r.prog.stats.transfer_bytes);

      size_t clashes = 0;
      auto bank = [](uint32_t a) { return (a / 64) % 8; };
      for (const auto& f : r.trace.bursts) {
        if (f.kind != BurstKind::Fake) continue;
        for (const auto& b : r.trace.bursts) {
          if (b.kind != BurstKind::Real || bank(b.addr) != bank(f.addr)) continue;
          const uint64_t done = b.issue_cycle + kCfg.dram.burst_service + r.slot;
          clashes += b.issue_cycle <= f.issue_cycle && f.issue_cycle < done;
        }
      }
      CHECK(clashes == 0);
    }
  }
}

TEST_CASE("unshaped runs carry no fakes and show the program") {
  const Run r = run("vgg16", "sp", Sharing::Temporal);
  size_t fakes = 0;
  for (const auto& b : r.trace.bursts) fakes += b.kind == BurstKind::Fake;
  CHECK(fakes == 0);
  std::set<uint64_t> levels;
  for (const auto& w : r.trace.windows(0)) levels.insert(w.read_bytes);
  CHECK(levels.size() >= 2);
  CHECK(r.trace.boundary_windows(0).size() == r.prog.layer_starts.size() - 1);
}

TEST_CASE("attacker csv carries only window byte counts") {
  const Run r = run("alexnet", "ps", Sharing::Temporal);
  const std::string a = r.trace.attacker_csv(0), p = r.trace.privileged_csv(0);
  CHECK(a.rfind("# bandwidth=400000000 burst=64 window=128\nwindow,read_bytes,write_bytes\n", 0) == 0);
  CHECK(a.find("fake") == std::string::npos);
  CHECK(p.find("boundary,layer_id,real_bytes,fake_bytes,tenant") != std::string::npos);
  CHECK(std::count(a.begin(), a.end(), '\n') == long(r.trace.window_count() + 2));
}
