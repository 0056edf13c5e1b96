#include "sde/isa.hpp"

#include <cstring>

namespace sde {

const char* to_string(Error::Code code) {
  switch (code) {
    case Error::Code::RangeOverflow: return "RangeOverflow";
    case Error::Code::UnknownOpcode: return "UnknownOpcode";
    case Error::Code::MalformedField: return "MalformedField";
    case Error::Code::ParseError: return "ParseError";
    case Error::Code::DimensionMismatch: return "DimensionMismatch";
    case Error::Code::UnknownVariable: return "UnknownVariable";
    case Error::Code::NoLegalTiling: return "NoLegalTiling";
    case Error::Code::Oversubscription: return "Oversubscription";
    case Error::Code::TooManyTenants: return "TooManyTenants";
    case Error::Code::InvalidConfig: return "InvalidConfig";
    case Error::Code::Deadlock: return "Deadlock";
    case Error::Code::ResidualTaint: return "ResidualTaint";
    case Error::Code::Io: return "Io";
  }
  return "?";
}

const char* to_string(SpadKind kind) {
  switch (kind) {
    case SpadKind::Input: return "input";
    case SpadKind::Weight: return "weight";
    case SpadKind::Accumulator: return "acc";
    case SpadKind::Output: return "output";
  }
  return "?";
}

const char* to_string(MemVariant v) {
  switch (v) {
    case MemVariant::Plain: return "";
    case MemVariant::E: return "_E";
    case MemVariant::S: return "_S";
    case MemVariant::SE: return "_SE";
  }
  return "?";
}

const char* to_string(AluOp op) {
  switch (op) {
    case AluOp::Add: return "add";
    case AluOp::Max: return "max";
    case AluOp::Min: return "min";
    case AluOp::Shr: return "shr";
    case AluOp::MulImm: return "mulimm";
    case AluOp::Pool2x2: return "pool2x2";
  }
  return "?";
}

const char* to_string(ConfigReg r) {
  switch (r) {
    case ConfigReg::ShaperEn: return "ShaperEn";
    case ConfigReg::Bandwidth: return "Bandwidth";
    case ConfigReg::AddrRange: return "AddrRange";
    case ConfigReg::QueueDepth: return "QueueDepth";
    case ConfigReg::SpadQuota: return "SpadQuota";
    case ConfigReg::ExecTiles: return "ExecTiles";
  }
  return "?";
}

namespace {

// Layout: byte 0 opcode, byte 1 flags, bytes 2..15 a 112-bit little-endian
// payload packed LSB first.
//   flags: [1:0] variant  [2] constant_time  [3] fence  [4] reset/has_imm  [6:5] spad kind
constexpr int kSpadBaseBits = 21;
constexpr int kSpadLenBits = 22;
constexpr int kPayloadBits = 112;

class BitWriter {
 public:
  void put(uint64_t value, int bits, const char* field) {
    if (bits < 64 && (value >> bits) != 0) {
      throw Error(Error::Code::RangeOverflow, std::string("field '") + field + "' exceeds " +
                                                  std::to_string(bits) + " bits");
    }
    for (int i = 0; i < bits; ++i, ++pos_) {
      if ((value >> i) & 1) bytes_[pos_ / 8] |= uint8_t(1u << (pos_ % 8));
    }
  }
  const std::array<uint8_t, 14>& bytes() const { return bytes_; }

 private:
  std::array<uint8_t, 14> bytes_{};
  int pos_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const uint8_t> payload) : bytes_(payload) {}
  uint64_t get(int bits) {
    uint64_t v = 0;
    for (int i = 0; i < bits; ++i, ++pos_) {
      if ((bytes_[pos_ / 8] >> (pos_ % 8)) & 1) v |= uint64_t(1) << i;
    }
    return v;
  }
  // Unused trailing bits must be zero.
  void finish() {
    while (pos_ < kPayloadBits) {
      if (get(1) != 0) throw Error(Error::Code::MalformedField, "reserved payload bits set");
    }
  }

 private:
  std::span<const uint8_t> bytes_;
  int pos_ = 0;
};

uint8_t flag_bits(bool constant_time, bool fence, bool bit4) {
  return uint8_t((constant_time ? 1 << 2 : 0) | (fence ? 1 << 3 : 0) | (bit4 ? 1 << 4 : 0));
}

void check_len(uint32_t len, const char* field) {
  if (len == 0) throw Error(Error::Code::RangeOverflow, std::string(field) + " length is zero");
}

void put_spad(BitWriter& w, const SpadRange& r, bool with_kind) {
  check_len(r.len, "spad range");
  if (with_kind) w.put(uint8_t(r.kind), 2, "spad kind");
  w.put(r.base, kSpadBaseBits, "spad base");
  w.put(r.len, kSpadLenBits, "spad len");
}

SpadRange get_spad(BitReader& rd, bool with_kind, SpadKind kind) {
  SpadRange r;
  r.kind = with_kind ? SpadKind(rd.get(2)) : kind;
  r.base = uint32_t(rd.get(kSpadBaseBits));
  r.len = uint32_t(rd.get(kSpadLenBits));
  if (r.len == 0) throw Error(Error::Code::MalformedField, "zero-length spad range");
  return r;
}

void put_transfer(BitWriter& w, const SpadRange& spad, const DramRange& dram) {
  if (dram.len != spad.len) throw Error(Error::Code::RangeOverflow, "dram and spad lengths differ");
  if (dram.pad.total() > dram.len) throw Error(Error::Code::RangeOverflow, "padding exceeds transfer");
  put_spad(w, spad, false);
  w.put(dram.base, 32, "dram base");
  w.put(dram.pad.top, 6, "pad top");
  w.put(dram.pad.bottom, 6, "pad bottom");
  w.put(dram.pad.left, 6, "pad left");
  w.put(dram.pad.right, 6, "pad right");
}

void get_transfer(BitReader& rd, SpadKind kind, SpadRange& spad, DramRange& dram) {
  spad = get_spad(rd, false, kind);
  dram.base = uint32_t(rd.get(32));
  dram.len = spad.len;
  dram.pad.top = uint8_t(rd.get(6));
  dram.pad.bottom = uint8_t(rd.get(6));
  dram.pad.left = uint8_t(rd.get(6));
  dram.pad.right = uint8_t(rd.get(6));
  if (dram.pad.total() > dram.len) throw Error(Error::Code::MalformedField, "padding exceeds transfer");
}

}  // namespace

Opcode opcode_of(const Instruction& instr) {
  return std::visit(
      [](const auto& i) -> Opcode {
        using T = std::decay_t<decltype(i)>;
        if constexpr (std::is_same_v<T, Load>) return Opcode::Load;
        else if constexpr (std::is_same_v<T, Store>) return Opcode::Store;
        else if constexpr (std::is_same_v<T, Gemm>) return Opcode::Gemm;
        else if constexpr (std::is_same_v<T, Alu>) return Opcode::Alu;
        else if constexpr (std::is_same_v<T, Zeroize>) return Opcode::Zeroize;
        else if constexpr (std::is_same_v<T, SetConfig>) return Opcode::SetConfig;
        else return Opcode::Finish;
      },
      instr);
}

bool has_fence(const Instruction& instr) {
  return std::visit(
      [](const auto& i) -> bool {
        if constexpr (requires { i.fence; }) return i.fence;
        else return false;
      },
      instr);
}

EncodedInstr encode(const Instruction& instr) {
  EncodedInstr out{};
  out[0] = uint8_t(opcode_of(instr));
  BitWriter w;
  uint8_t flags = 0;
  std::visit(
      [&](const auto& i) {
        using T = std::decay_t<decltype(i)>;
        if constexpr (std::is_same_v<T, Load>) {
          flags = uint8_t(uint8_t(i.variant) | flag_bits(false, i.fence, false) | (uint8_t(i.dst.kind) << 5));
          put_transfer(w, i.dst, i.src);
        } else if constexpr (std::is_same_v<T, Store>) {
          flags = uint8_t(uint8_t(i.variant) | flag_bits(false, i.fence, false) | (uint8_t(i.src.kind) << 5));
          put_transfer(w, i.src, i.dst);
        } else if constexpr (std::is_same_v<T, Gemm>) {
          flags = flag_bits(i.constant_time, i.fence, i.reset);
          const auto& u = i.uop;
          if (u.out_channels == 0 || u.in_channels == 0 || u.out_h == 0 || u.out_w == 0 || u.kernel == 0 ||
              u.stride == 0)
            throw Error(Error::Code::RangeOverflow, "gemm uop extent is zero");
          w.put(i.out_base, kSpadBaseBits, "gemm out base");
          w.put(i.in1_base, kSpadBaseBits, "gemm in1 base");
          w.put(i.in2_base, kSpadBaseBits, "gemm in2 base");
          w.put(u.out_channels, 11, "uop out_channels");
          w.put(u.in_channels, 11, "uop in_channels");
          w.put(u.out_h, 9, "uop out_h");
          w.put(u.out_w, 9, "uop out_w");
          w.put(u.kernel, 4, "uop kernel");
          w.put(u.stride, 3, "uop stride");
        } else if constexpr (std::is_same_v<T, Alu>) {
          flags = flag_bits(i.constant_time, i.fence, i.imm.has_value());
          w.put(uint8_t(i.op), 3, "alu op");
          put_spad(w, i.out, true);
          put_spad(w, i.in, true);
          w.put(uint16_t(i.imm.value_or(0)), 16, "alu imm");
        } else if constexpr (std::is_same_v<T, Zeroize>) {
          flags = uint8_t(flag_bits(false, i.fence, false) | (uint8_t(i.range.kind) << 5));
          put_spad(w, i.range, false);
        } else if constexpr (std::is_same_v<T, SetConfig>) {
          w.put(uint8_t(i.reg), 3, "config register");
          w.put(i.value, 32, "config value");
        }
      },
      instr);
  out[1] = flags;
  std::memcpy(out.data() + 2, w.bytes().data(), 14);
  return out;
}

Instruction decode(std::span<const uint8_t> bytes) {
  if (bytes.size() != kInstrBytes) throw Error(Error::Code::MalformedField, "instruction must be 16 bytes");
  const uint8_t op = bytes[0];
  const uint8_t flags = bytes[1];
  const auto variant = MemVariant(flags & 3);
  const bool ct = flags & (1 << 2);
  const bool fence = flags & (1 << 3);
  const bool bit4 = flags & (1 << 4);
  const auto kind = SpadKind((flags >> 5) & 3);
  if (flags & 0x80) throw Error(Error::Code::MalformedField, "reserved flag bit set");
  BitReader rd(bytes.subspan(2));

  auto no_flags = [&](uint8_t allowed) {
    if (flags & ~allowed) throw Error(Error::Code::MalformedField, "unexpected flag bits");
  };

  switch (op) {
    case uint8_t(Opcode::Load): {
      no_flags(0x6b);
      Load l{variant, {}, {}, fence};
      get_transfer(rd, kind, l.dst, l.src);
      rd.finish();
      return l;
    }
    case uint8_t(Opcode::Store): {
      no_flags(0x6b);
      Store s{variant, {}, {}, fence};
      get_transfer(rd, kind, s.src, s.dst);
      rd.finish();
      return s;
    }
    case uint8_t(Opcode::Gemm): {
      no_flags(0x1c);
      Gemm g;
      g.constant_time = ct;
      g.fence = fence;
      g.reset = bit4;
      g.out_base = uint32_t(rd.get(kSpadBaseBits));
      g.in1_base = uint32_t(rd.get(kSpadBaseBits));
      g.in2_base = uint32_t(rd.get(kSpadBaseBits));
      g.uop.out_channels = uint16_t(rd.get(11));
      g.uop.in_channels = uint16_t(rd.get(11));
      g.uop.out_h = uint16_t(rd.get(9));
      g.uop.out_w = uint16_t(rd.get(9));
      g.uop.kernel = uint8_t(rd.get(4));
      g.uop.stride = uint8_t(rd.get(3));
      rd.finish();
      const auto& u = g.uop;
      if (u.out_channels == 0 || u.in_channels == 0 || u.out_h == 0 || u.out_w == 0 || u.kernel == 0 ||
          u.stride == 0)
        throw Error(Error::Code::MalformedField, "gemm uop extent is zero");
      return g;
    }
    case uint8_t(Opcode::Alu): {
      no_flags(0x1c);
      Alu a;
      a.constant_time = ct;
      a.fence = fence;
      const auto alu_op = rd.get(3);
      if (alu_op > uint8_t(AluOp::Pool2x2)) throw Error(Error::Code::MalformedField, "unknown alu op");
      a.op = AluOp(alu_op);
      a.out = get_spad(rd, true, SpadKind::Input);
      a.in = get_spad(rd, true, SpadKind::Input);
      const auto imm = uint16_t(rd.get(16));
      if (bit4) a.imm = int16_t(imm);
      else if (imm != 0) throw Error(Error::Code::MalformedField, "immediate without flag");
      rd.finish();
      return a;
    }
    case uint8_t(Opcode::Zeroize): {
      no_flags(0x68);
      Zeroize z{get_spad(rd, false, kind), fence};
      rd.finish();
      return z;
    }
    case uint8_t(Opcode::SetConfig): {
      no_flags(0);
      const auto reg = rd.get(3);
      if (reg > uint8_t(ConfigReg::ExecTiles)) throw Error(Error::Code::MalformedField, "unknown config register");
      SetConfig s{ConfigReg(reg), uint32_t(rd.get(32))};
      rd.finish();
      return s;
    }
    case uint8_t(Opcode::Finish):
      no_flags(0);
      rd.finish();
      return Finish{};
    default:
      throw Error(Error::Code::UnknownOpcode, "unknown opcode " + std::to_string(op));
  }
}

std::string mnemonic(const Instruction& instr) {
  return std::visit(
      [](const auto& i) -> std::string {
        using T = std::decay_t<decltype(i)>;
        if constexpr (std::is_same_v<T, Load>) return std::string("LOAD") + to_string(i.variant);
        else if constexpr (std::is_same_v<T, Store>) return std::string("STORE") + to_string(i.variant);
        else if constexpr (std::is_same_v<T, Gemm>) return i.constant_time ? "GEMM_C" : "GEMM";
        else if constexpr (std::is_same_v<T, Alu>) return i.constant_time ? "ALU_C" : "ALU";
        else if constexpr (std::is_same_v<T, Zeroize>) return "ZEROIZE";
        else if constexpr (std::is_same_v<T, SetConfig>) return "SET";
        else return "FINISH";
      },
      instr);
}

std::vector<Access> accesses(const Instruction& instr) {
  std::vector<Access> out;
  auto spad = [&](const SpadRange& r, bool write) {
    out.push_back({false, write, r.kind, r.base, r.len});
  };
  auto dram = [&](const DramRange& r, bool write) {
    out.push_back({true, write, SpadKind::Input, r.base, r.len});
  };
  std::visit(
      [&](const auto& i) {
        using T = std::decay_t<decltype(i)>;
        if constexpr (std::is_same_v<T, Load>) {
          dram(i.src, false);
          spad(i.dst, true);
        } else if constexpr (std::is_same_v<T, Store>) {
          spad(i.src, false);
          dram(i.dst, true);
        } else if constexpr (std::is_same_v<T, Gemm>) {
          spad(i.in1(), false);
          spad(i.in2(), false);
          spad(i.out(), true);
        } else if constexpr (std::is_same_v<T, Alu>) {
          spad(i.in, false);
          spad(i.out, true);
        } else if constexpr (std::is_same_v<T, Zeroize>) {
          spad(i.range, true);
        }
      },
      instr);
  return out;
}

std::optional<Violation> validate(std::span<const Instruction> program, const TenantGrant& grant) {
  for (size_t idx = 0; idx < program.size(); ++idx) {
    for (const auto& a : accesses(program[idx])) {
      if (a.is_dram) {
        const uint64_t lo = grant.dram_base, hi = uint64_t(grant.dram_base) + grant.dram_len;
        if (a.base < lo || uint64_t(a.base) + a.len > hi)
          return Violation{idx, a, "dram range outside tenant window"};
      } else {
        const uint32_t quota = grant.spad_quota[size_t(a.kind)];
        if (uint64_t(a.base) + a.len > quota)
          return Violation{idx, a, std::string(to_string(a.kind)) + " range exceeds quota"};
        const uint32_t es = element_size(a.kind);
        if (a.base % es != 0 || a.len % es != 0)
          return Violation{idx, a, "range not element aligned"};
      }
    }
    if (const auto* cfg = std::get_if<SetConfig>(&program[idx])) {
      bool over = false;
      switch (cfg->reg) {
        case ConfigReg::Bandwidth: over = cfg->value > grant.bandwidth; break;
        case ConfigReg::QueueDepth: over = cfg->value > grant.queue_depth; break;
        case ConfigReg::ExecTiles: over = cfg->value > grant.exec_tiles; break;
        case ConfigReg::SpadQuota: {
          const uint32_t k = cfg->value >> 24;
          over = k >= kNumSpadKinds || uint64_t(cfg->value & 0xffffff) * 16384 > grant.spad_quota[k];
          break;
        }
        default: break;
      }
      if (over) return Violation{idx, {}, std::string("config ") + to_string(cfg->reg) + " exceeds grant"};
    }
  }
  return std::nullopt;
}

std::vector<uint8_t> write_binary(std::span<const Instruction> program, uint8_t tenant_id) {
  std::vector<uint8_t> out = {'S', 'E', 'S', 'M', kBinaryVersion, tenant_id};
  const auto n = uint32_t(program.size());
  for (int b = 0; b < 4; ++b) out.push_back(uint8_t(n >> (8 * b)));
  out.reserve(out.size() + program.size() * kInstrBytes);
  for (const auto& instr : program) {
    const auto e = encode(instr);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

BinaryProgram read_binary(std::span<const uint8_t> bytes) {
  constexpr size_t kHeader = 10;
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), "SESM", 4) != 0)
    throw Error(Error::Code::MalformedField, "missing SESM header");
  if (bytes[4] != kBinaryVersion) throw Error(Error::Code::MalformedField, "unsupported binary version");
  BinaryProgram p;
  p.tenant_id = bytes[5];
  uint32_t n = 0;
  for (int b = 0; b < 4; ++b) n |= uint32_t(bytes[6 + b]) << (8 * b);
  if (bytes.size() != kHeader + size_t(n) * kInstrBytes)
    throw Error(Error::Code::MalformedField, "instruction count does not match file size");
  p.instructions.reserve(n);
  for (uint32_t i = 0; i < n; ++i) p.instructions.push_back(decode(bytes.subspan(kHeader + i * kInstrBytes, kInstrBytes)));
  return p;
}

}  // namespace sde
