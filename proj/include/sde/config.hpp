#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "sde/isa.hpp"

namespace sde {

inline constexpr uint32_t kKiB = 1024;
inline constexpr uint32_t kMiB = 1024 * 1024;
inline constexpr uint32_t kRegionBytes = 16 * kKiB;
inline constexpr int kMaxTenants = 4;
inline constexpr uint32_t kMacsPerTile = 64;  // one 8x8 GEMM tile
inline constexpr double kCycleNs = 10.0;      // 100 MHz fabric clock

enum class Sharing : uint8_t { Temporal, Spatial };
const char* to_string(Sharing s);

enum class Cipher : uint8_t { None, Qarma128, Aes128 };
const char* to_string(Cipher c);
Cipher parse_cipher(const std::string& s);

struct DramConfig {
  uint32_t banks = 8;
  uint32_t row_buffer = 2048;
  uint32_t burst_service = 4;     // cycles a bank is busy per burst
  uint32_t slot_cycles = 12;       // bus cycles per burst, each channel: 64 B / 12 cycles = 533 MB/s
};

/// Whole-accelerator capacities; defaults are the temporal column of the
/// platform table, with a spatial tenant getting a quarter of each.
struct AcceleratorConfig {
  std::array<uint32_t, kNumSpadKinds> spad_bytes = {256 * kKiB, 2 * kMiB, 512 * kKiB, 256 * kKiB};
  uint32_t exec_tiles = 4;
  uint64_t bandwidth = 400'000'000;  // bytes/sec per channel available to shapers
  uint32_t queue_entries = 64;       // per unit, split across tenants
  uint32_t instr_queue_entries = 512;
  uint32_t burst_bytes = 64;
  uint32_t real_queue_bursts = 16;
  uint32_t zeroizer_bytes_per_cycle = 64;
  uint32_t window_cycles = 128;
  uint32_t dram_bytes = 64 * kMiB;
  uint32_t deadlock_cycles = 10'000;
  DramConfig dram;
  Cipher cipher = Cipher::Qarma128;

  static AcceleratorConfig defaults() { return {}; }
  void check() const;
};

/// Per-tenant share of the accelerator for a sharing mode.
TenantGrant default_grant(const AcceleratorConfig& cfg, Sharing mode, uint8_t tenant_id);

/// Length of one bus slot. Temporal tenants may use every slot; in spatial
/// mode slot k belongs to tenant k % 4 and four slots span one shaper period
/// of a spatial grant, so shaped and unshaped tenants never share a slot.
uint32_t bus_slot_cycles(const AcceleratorConfig& cfg, Sharing mode);

/// Shaper timer period in cycles for a given bandwidth.
uint32_t shaper_period(uint64_t bandwidth, uint32_t burst_bytes);

/// Extra cycles to decrypt or encrypt `bytes` of private data.
uint32_t encryption_delay(uint64_t bytes, Cipher cipher);

}  // namespace sde
