#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sde/config.hpp"
#include "sde/memsys.hpp"
#include "sde/program.hpp"

namespace sde {

enum class Unit : uint8_t { Load, Compute, Store, Dma, Zeroizer, Scheduler };
const char* to_string(Unit u);

enum class LogLevel : uint8_t { Off = 0, Error = 1, Info = 2, Debug = 3 };
LogLevel parse_log_level(const std::string& s);
/// Level from SESAME_LOG, defaulting to Info.
LogLevel log_level_from_env();

struct Event {
  uint64_t cycle;
  Unit unit;
  uint8_t tenant;
  std::string event;
  std::string detail;
};

struct Trap {
  uint64_t cycle;
  uint8_t tenant;
  int64_t index;  // instruction index, -1 for host probes
  Access access;
};

struct TaintViolation {
  uint64_t cycle;
  uint8_t tenant;
  int64_t index;
  std::string reason;
};

struct EngineOptions {
  bool checked = true;  // per-byte taint oracle
  LogLevel log_level = LogLevel::Info;
  bool auto_teardown = true;
};

struct TenantReport {
  uint8_t tenant = 0;
  bool finished = false;
  bool aborted = false;
  uint64_t start_cycle = 0;        // first instruction started
  uint64_t end_cycle = 0;          // Finish retired
  uint64_t cycles = 0;             // end - start
  uint64_t retired = 0;
  std::array<uint64_t, 3> stalls{};  // load, compute, store: cycles with a blocked head
  uint64_t zeroize_cycles = 0;
  uint64_t zeroized_bytes = 0;
  uint64_t zeroize_count = 0;
  std::vector<uint64_t> layer_start_cycles;
  std::vector<uint8_t> output;  // final tensor read back from DRAM
};

struct ReleaseReport {
  uint8_t tenant = 0;
  uint32_t regions_released = 0;
  uint64_t residual_tainted_bytes = 0;
  uint64_t forced_zeroize_bytes = 0;
};

struct RunReport {
  uint64_t cycles = 0;
  std::vector<TenantReport> tenants;
  std::vector<Trap> traps;
  std::vector<TaintViolation> violations;
  std::vector<ReleaseReport> releases;
};

struct AccessResult {
  bool trapped = false;
  std::vector<uint8_t> data;
};

/// Cycle-stepped DAE accelerator. One global clock; every unit of every
/// tenant advances once per cycle in a fixed order.
class Engine {
 public:
  Engine(const AcceleratorConfig& cfg, Sharing mode, EngineOptions opts = {});
  ~Engine();
  Engine(Engine&&) noexcept;

  /// Leases the program's grant and preloads its DRAM data.
  uint8_t admit(const CompiledProgram& program);

  RunReport run(uint64_t cycle_limit = 0);

  AccessResult access_scratchpad(uint8_t tenant, SpadKind kind, uint32_t offset, uint32_t len, bool write,
                                 const std::vector<uint8_t>& data = {});
  uint64_t zeroize(uint8_t tenant, const SpadRange& range);
  ReleaseReport teardown(uint8_t tenant);
  ReleaseReport abort(uint8_t tenant);

  std::vector<uint8_t> read_dram(uint32_t addr, uint32_t len) const;
  uint8_t region_owner(SpadKind kind, uint32_t region) const;  // 0xff when free
  uint64_t tainted_bytes(SpadKind kind) const;

  const BandwidthTrace& trace() const;
  const std::vector<Event>& events() const;
  std::string event_log() const;  // one JSON object per line
  uint64_t cycle() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Cycles a Gemm or Alu takes on `tiles` execution tiles.
uint64_t gemm_cycles(const TileLoop& t, uint32_t tiles, bool constant_time, size_t nonzero_weights);
uint64_t alu_cycles(uint64_t in_elems, uint32_t tiles, bool constant_time, size_t nonzero_inputs);

}  // namespace sde
