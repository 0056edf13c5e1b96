#include "sde/config.hpp"

#include <algorithm>

#include <cmath>

namespace sde {

const char* to_string(Sharing s) { return s == Sharing::Temporal ? "temporal" : "spatial"; }

const char* to_string(Cipher c) {
  switch (c) {
    case Cipher::None: return "none";
    case Cipher::Qarma128: return "qarma128";
    case Cipher::Aes128: return "aes128";
  }
  return "?";
}

Cipher parse_cipher(const std::string& s) {
  if (s == "none") return Cipher::None;
  if (s == "qarma128" || s == "qarma") return Cipher::Qarma128;
  if (s == "aes128" || s == "aes") return Cipher::Aes128;
  throw Error(Error::Code::ParseError, "unknown cipher '" + s + "'");
}

void AcceleratorConfig::check() const {
  for (int k = 0; k < kNumSpadKinds; ++k) {
    if (spad_bytes[k] == 0 || spad_bytes[k] % kRegionBytes != 0)
      throw Error(Error::Code::InvalidConfig, std::string(to_string(SpadKind(k))) +
                                                  " scratchpad must be a positive multiple of 16 KiB");
  }
  if (exec_tiles == 0 || bandwidth == 0 || queue_entries == 0 || burst_bytes == 0 || window_cycles == 0 ||
      zeroizer_bytes_per_cycle == 0 || real_queue_bursts == 0 || dram.banks == 0 ||
      dram.slot_cycles == 0)
    throw Error(Error::Code::InvalidConfig, "accelerator resources must be positive");
  if (dram.row_buffer % burst_bytes != 0)
    throw Error(Error::Code::InvalidConfig, "burst size must divide the row buffer");
  if (shaper_period(bandwidth / kMaxTenants, burst_bytes) % kMaxTenants != 0)
    throw Error(Error::Code::InvalidConfig, "spatial shaper period must split into four bus slots");
}

uint32_t bus_slot_cycles(const AcceleratorConfig& cfg, Sharing mode) {
  if (mode == Sharing::Temporal) return cfg.dram.slot_cycles;
  return std::max(cfg.dram.slot_cycles, shaper_period(cfg.bandwidth / kMaxTenants, cfg.burst_bytes) / kMaxTenants);
}

TenantGrant default_grant(const AcceleratorConfig& cfg, Sharing mode, uint8_t tenant_id) {
  const uint32_t div = mode == Sharing::Temporal ? 1 : kMaxTenants;
  TenantGrant g;
  g.tenant_id = tenant_id;
  for (int k = 0; k < kNumSpadKinds; ++k) g.spad_quota[k] = cfg.spad_bytes[k] / div;
  g.queue_depth = cfg.queue_entries / div;
  g.exec_tiles = cfg.exec_tiles / div;
  g.bandwidth = cfg.bandwidth / div;
  g.dram_len = cfg.dram_bytes / kMaxTenants;
  g.dram_base = g.dram_len * tenant_id;
  return g;
}

uint32_t shaper_period(uint64_t bandwidth, uint32_t burst_bytes) {
  if (bandwidth == 0) return 0;
  const double bytes_per_cycle = double(bandwidth) * kCycleNs * 1e-9;
  const auto p = uint32_t(std::lround(burst_bytes / bytes_per_cycle));
  return p < 1 ? 1 : p;
}

uint32_t encryption_delay(uint64_t bytes, Cipher cipher) {
  // 10 ns (QARMA128) or 20 ns (AES128) per 128-bit block at 10 ns/cycle.
  const uint32_t per_block = cipher == Cipher::Qarma128 ? 1 : cipher == Cipher::Aes128 ? 2 : 0;
  return uint32_t((bytes + 15) / 16) * per_block;
}

}  // namespace sde
