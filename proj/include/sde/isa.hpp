#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace sde {

class Error : public std::runtime_error {
 public:
  enum class Code {
    RangeOverflow,
    UnknownOpcode,
    MalformedField,
    ParseError,
    DimensionMismatch,
    UnknownVariable,
    NoLegalTiling,
    Oversubscription,
    TooManyTenants,
    InvalidConfig,
    Deadlock,
    ResidualTaint,
    Io,
  };

  Error(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

const char* to_string(Error::Code code);

enum class SpadKind : uint8_t { Input = 0, Weight = 1, Accumulator = 2, Output = 3 };
inline constexpr int kNumSpadKinds = 4;
const char* to_string(SpadKind kind);

/// Element width in bytes: 8-bit data everywhere except the 32-bit accumulators.
constexpr uint32_t element_size(SpadKind kind) { return kind == SpadKind::Accumulator ? 4 : 1; }

struct SpadRange {
  SpadKind kind = SpadKind::Input;
  uint32_t base = 0;  // tenant-relative byte offset
  uint32_t len = 0;
  uint32_t end() const { return base + len; }
  bool operator==(const SpadRange&) const = default;
};

struct PadParams {
  uint8_t top = 0, bottom = 0, left = 0, right = 0;
  uint32_t total() const { return uint32_t(top) + bottom + left + right; }
  bool operator==(const PadParams&) const = default;
};

/// DRAM side of a transfer. Its length always equals the scratchpad side.
struct DramRange {
  uint32_t base = 0;
  uint32_t len = 0;
  PadParams pad;
  bool operator==(const DramRange&) const = default;
};

// Bit 0 = encrypted, bit 1 = shaped.
enum class MemVariant : uint8_t { Plain = 0, E = 1, S = 2, SE = 3 };
const char* to_string(MemVariant v);
constexpr bool is_encrypted(MemVariant v) { return (uint8_t(v) & 1) != 0; }
constexpr bool is_shaped(MemVariant v) { return (uint8_t(v) & 2) != 0; }
constexpr MemVariant make_variant(bool shaped, bool encrypted) {
  return MemVariant((shaped ? 2 : 0) | (encrypted ? 1 : 0));
}

struct Load {
  MemVariant variant = MemVariant::Plain;
  SpadRange dst;
  DramRange src;
  bool fence = false;
  bool operator==(const Load&) const = default;
};

struct Store {
  MemVariant variant = MemVariant::Plain;
  DramRange dst;
  SpadRange src;
  bool fence = false;
  bool operator==(const Store&) const = default;
};

/// Convolution tile: acc[oc][y][x] (+)= sum in[ic][y*s+ky][x*s+kx] * w[oc][ic][ky][kx].
struct TileLoop {
  uint16_t out_channels = 1;
  uint16_t in_channels = 1;
  uint16_t out_h = 1;
  uint16_t out_w = 1;
  uint8_t kernel = 1;
  uint8_t stride = 1;

  uint32_t in_h() const { return (uint32_t(out_h) - 1) * stride + kernel; }
  uint32_t in_w() const { return (uint32_t(out_w) - 1) * stride + kernel; }
  uint32_t input_bytes() const { return uint32_t(in_channels) * in_h() * in_w(); }
  uint32_t weight_bytes() const { return uint32_t(out_channels) * in_channels * kernel * kernel; }
  uint32_t acc_bytes() const { return uint32_t(out_channels) * out_h * out_w * 4; }
  uint64_t macs() const {
    return uint64_t(out_channels) * out_h * out_w * in_channels * kernel * kernel;
  }
  bool operator==(const TileLoop&) const = default;
};

struct Gemm {
  bool constant_time = false;
  bool reset = false;  // overwrite the accumulator instead of adding to it
  bool fence = false;
  uint32_t out_base = 0;  // Accumulator
  uint32_t in1_base = 0;  // Input
  uint32_t in2_base = 0;  // Weight
  TileLoop uop;

  SpadRange out() const { return {SpadKind::Accumulator, out_base, uop.acc_bytes()}; }
  SpadRange in1() const { return {SpadKind::Input, in1_base, uop.input_bytes()}; }
  SpadRange in2() const { return {SpadKind::Weight, in2_base, uop.weight_bytes()}; }
  bool operator==(const Gemm&) const = default;
};

enum class AluOp : uint8_t { Add = 0, Max = 1, Min = 2, Shr = 3, MulImm = 4, Pool2x2 = 5 };
const char* to_string(AluOp op);

/// With r = in.elems / out.elems, out[i] folds in[i + j*out.elems] for j < r
/// (Add/Max/Min fold with themselves, Shr/MulImm with Add), then applies `op`
/// against the immediate when present. Pool2x2 takes 2x2 windows of rows whose
/// width is the immediate. Results written to an 8-bit scratchpad saturate.
struct Alu {
  bool constant_time = false;
  bool fence = false;
  AluOp op = AluOp::Max;
  SpadRange out;
  SpadRange in;
  std::optional<int16_t> imm;
  bool operator==(const Alu&) const = default;
};

struct Zeroize {
  SpadRange range;
  bool fence = false;
  bool operator==(const Zeroize&) const = default;
};

// The register map is local to this simulator; values are 32-bit.
//   ShaperEn  : 0/1
//   Bandwidth : bytes per second
//   AddrRange : (base >> 16) << 16 | (len >> 16), 64 KiB granularity
//   QueueDepth: entries per unit partition
//   SpadQuota : kind << 24 | quota in 16 KiB regions
//   ExecTiles : 8x8 tile count
enum class ConfigReg : uint8_t { ShaperEn = 0, Bandwidth = 1, AddrRange = 2, QueueDepth = 3, SpadQuota = 4, ExecTiles = 5 };
const char* to_string(ConfigReg r);

struct SetConfig {
  ConfigReg reg = ConfigReg::ShaperEn;
  uint32_t value = 0;
  bool operator==(const SetConfig&) const = default;
};

struct Finish {
  bool operator==(const Finish&) const = default;
};

using Instruction = std::variant<Load, Store, Gemm, Alu, Zeroize, SetConfig, Finish>;

enum class Opcode : uint8_t { Load = 1, Store = 2, Gemm = 3, Alu = 4, Zeroize = 5, SetConfig = 6, Finish = 7 };

inline constexpr size_t kInstrBytes = 16;
using EncodedInstr = std::array<uint8_t, kInstrBytes>;

EncodedInstr encode(const Instruction& instr);
Instruction decode(std::span<const uint8_t> bytes);

Opcode opcode_of(const Instruction& instr);
bool has_fence(const Instruction& instr);
std::string mnemonic(const Instruction& instr);

/// Scratchpad and DRAM ranges an instruction touches, for hazards and bounds.
struct Access {
  bool is_dram = false;
  bool write = false;
  SpadKind kind = SpadKind::Input;
  uint32_t base = 0;
  uint32_t len = 0;
};
std::vector<Access> accesses(const Instruction& instr);

struct TenantGrant {
  uint8_t tenant_id = 0;
  std::array<uint32_t, kNumSpadKinds> spad_quota{};  // bytes, multiples of 16 KiB
  uint32_t queue_depth = 0;
  uint32_t exec_tiles = 0;
  uint64_t bandwidth = 0;  // bytes/sec per channel
  uint32_t dram_base = 0;
  uint32_t dram_len = 0;
};

struct Violation {
  size_t index = 0;
  Access access;
  std::string reason;
};

/// Static base/bound check of every range against the grant.
std::optional<Violation> validate(std::span<const Instruction> program, const TenantGrant& grant);

// Binary program file: "SESM", version, tenant id, u32 count, then 16-byte records.
inline constexpr uint8_t kBinaryVersion = 1;
std::vector<uint8_t> write_binary(std::span<const Instruction> program, uint8_t tenant_id);
struct BinaryProgram {
  uint8_t tenant_id = 0;
  std::vector<Instruction> instructions;
};
BinaryProgram read_binary(std::span<const uint8_t> bytes);

}  // namespace sde
