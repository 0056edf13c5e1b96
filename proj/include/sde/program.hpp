#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sde/config.hpp"
#include "sde/isa.hpp"
#include "sde/workload.hpp"

namespace sde {

struct ResourceBOM {
  uint64_t bandwidth = 0;
  std::array<uint32_t, kNumSpadKinds> spad{};
  uint32_t queue_depth = 0;
  uint32_t exec_tiles = 0;
  Sharing exec_mode = Sharing::Temporal;
};

struct DataSegment {
  uint32_t addr = 0;  // absolute DRAM address
  std::vector<uint8_t> bytes;
};

/// Label of a scratchpad range from instruction `index` on.
struct LabelPoint {
  uint32_t index = 0;
  SpadRange range;
  Label label = Label::Public;
};

struct ProgramStats {
  std::map<std::string, uint64_t> mix;  // mnemonic -> count
  uint64_t zeroize_count = 0;
  uint64_t zeroize_bytes = 0;
  uint64_t transfer_bytes = 0;  // DRAM bytes moved by loads and stores, padding included
  uint64_t pad_bytes = 0;
};

struct CompiledProgram {
  std::string model;
  ThreatModel threat;
  TenantGrant grant;
  ResourceBOM bom;
  std::vector<Instruction> instructions;
  std::vector<SetConfig> config_writes;
  std::vector<uint32_t> layer_starts;  // index of each layer's first instruction
  std::vector<DataSegment> data;
  DramRange output;  // final tensor
  std::vector<LabelPoint> label_map;
  ProgramStats stats;
  std::vector<std::string> warnings;

  size_t binary_bytes() const { return instructions.size() * kInstrBytes; }
};

ProgramStats instruction_mix(const std::vector<Instruction>& program);

}  // namespace sde
