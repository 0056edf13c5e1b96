#include "sde/engine.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <map>
#include <sstream>

#include "json.hpp"
#include "sde/kernels.hpp"

namespace sde {

const char* to_string(Unit u) {
  switch (u) {
    case Unit::Load: return "load";
    case Unit::Compute: return "compute";
    case Unit::Store: return "store";
    case Unit::Dma: return "dma";
    case Unit::Zeroizer: return "zeroizer";
    case Unit::Scheduler: return "scheduler";
  }
  return "?";
}

LogLevel parse_log_level(const std::string& s) {
  if (s == "off") return LogLevel::Off;
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  throw Error(Error::Code::ParseError, "unknown log level '" + s + "'");
}

LogLevel log_level_from_env() {
  const char* v = std::getenv("SESAME_LOG");
  if (!v || !*v) return LogLevel::Info;
  try {
    return parse_log_level(v);
  } catch (const Error&) {
    return LogLevel::Info;
  }
}

static uint64_t ceil_div(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

uint64_t gemm_cycles(const TileLoop& t, uint32_t tiles, bool constant_time, size_t nonzero_weights) {
  uint64_t macs = t.macs();
  // zero-skip: MACs against zero weights are not issued
  if (!constant_time) macs = ceil_div(macs * nonzero_weights, std::max<uint64_t>(1, t.weight_bytes()));
  return std::max<uint64_t>(1, ceil_div(macs, uint64_t(std::max(1u, tiles)) * kMacsPerTile));
}

uint64_t alu_cycles(uint64_t in_elems, uint32_t tiles, bool constant_time, size_t nonzero_inputs) {
  const uint64_t n = constant_time ? in_elems : nonzero_inputs;
  return std::max<uint64_t>(1, ceil_div(n, uint64_t(std::max(1u, tiles)) * 16));
}

namespace {

constexpr uint8_t kFree = 0xff;

struct Op {
  uint64_t seq = 0;
  uint32_t index = 0;
  Instruction instr;
  Unit unit = Unit::Load;
  std::vector<Access> acc;
  std::vector<bool> trapped;  // parallel to acc, decided at start
  bool fence = false;
  bool running = false;
  bool done = false;
  uint64_t done_at = 0;
  std::vector<std::pair<uint32_t, uint32_t>> bursts;
  size_t next_burst = 0;
  size_t bursts_left = 0;
  std::vector<uint8_t> store_data;
};

Unit unit_of(const Instruction& i) {
  if (std::holds_alternative<Gemm>(i) || std::holds_alternative<Alu>(i)) return Unit::Compute;
  if (std::holds_alternative<Store>(i) || std::holds_alternative<Finish>(i)) return Unit::Store;
  return Unit::Load;
}

bool overlaps(const Access& a, const Access& b) {
  if (a.is_dram != b.is_dram) return false;
  if (!a.is_dram && a.kind != b.kind) return false;
  return a.base < b.base + b.len && b.base < a.base + a.len;
}

struct TenantState {
  bool active = false;
  bool finished = false;
  uint8_t id = 0;
  std::string model;
  TenantGrant grant;
  std::vector<Instruction> program;
  std::vector<uint32_t> layer_starts;
  DramRange output;
  std::array<uint32_t, kNumSpadKinds> base{};
  uint64_t launch_at = 0;  // spatial tenants start on their own bus slot
  uint32_t queue_depth = 1;
  uint32_t exec_tiles = 1;
  size_t cursor = 0;
  uint64_t next_seq = 0;
  size_t next_layer = 0;
  bool started = false;
  std::deque<std::unique_ptr<Op>> window;  // fetched, not retired, program order
  std::deque<Op*> iq;
  std::array<std::deque<Op*>, 3> uq;
  Op* load_active = nullptr;
  Op* store_active = nullptr;
  Op* compute_active = nullptr;
  Op* zeroizer_active = nullptr;
  std::map<uint64_t, Op*> by_seq;
  TenantReport rep;
};

}  // namespace

struct Engine::Impl {
  AcceleratorConfig cfg;
  Sharing mode;
  EngineOptions opts;
  MemorySystem mem;
  std::array<std::vector<uint8_t>, kNumSpadKinds> spad, taint, owner;
  std::unique_ptr<uint8_t, decltype(&std::free)> dram{nullptr, &std::free};
  uint64_t now = 0;
  uint64_t last_progress = 0;
  std::array<TenantState, kMaxTenants> tenants;
  std::vector<Event> events;
  std::vector<Trap> traps;
  std::vector<TaintViolation> violations;
  std::vector<ReleaseReport> releases;

  Impl(const AcceleratorConfig& c, Sharing m, EngineOptions o) : cfg(c), mode(m), opts(o), mem(c, m) {
    cfg.check();
    for (int k = 0; k < kNumSpadKinds; ++k) {
      spad[k].assign(cfg.spad_bytes[k], 0);
      taint[k].assign(cfg.spad_bytes[k], 0);
      owner[k].assign(cfg.spad_bytes[k] / kRegionBytes, kFree);
    }
    // calloc keeps untouched DRAM pages unmapped
    dram.reset(static_cast<uint8_t*>(std::calloc(cfg.dram_bytes, 1)));
    if (!dram) throw Error(Error::Code::InvalidConfig, "cannot allocate DRAM model");
  }

  void log(LogLevel lvl, Unit u, uint8_t t, std::string ev, std::string detail = {}) {
    if (lvl > opts.log_level || opts.log_level == LogLevel::Off) return;
    events.push_back({now, u, t, std::move(ev), std::move(detail)});
  }

  void violation(uint8_t t, int64_t index, std::string reason) {
    if (!opts.checked) return;
    log(LogLevel::Error, Unit::Scheduler, t, "taint_violation", reason);
    violations.push_back({now, t, index, std::move(reason)});
  }

  // Physical offset if every touched region belongs to the tenant.
  std::optional<uint32_t> phys(uint8_t t, SpadKind k, uint32_t off, uint32_t len) const {
    const auto ki = size_t(k);
    const uint64_t p = uint64_t(tenants[t].base[ki]) + off;
    if (len == 0 || p + len > spad[ki].size() || off % element_size(k) || len % element_size(k)) return std::nullopt;
    for (uint64_t r = p / kRegionBytes; r <= (p + len - 1) / kRegionBytes; ++r)
      if (owner[ki][r] != t) return std::nullopt;
    return uint32_t(p);
  }

  bool dram_ok(uint8_t t, uint32_t base, uint32_t len) const {
    const TenantGrant& g = tenants[t].grant;
    return base >= g.dram_base && uint64_t(base) + len <= uint64_t(g.dram_base) + g.dram_len &&
           uint64_t(base) + len <= cfg.dram_bytes;
  }

  void trap(uint8_t t, int64_t index, const Access& a) {
    traps.push_back({now, t, index, a});
    std::ostringstream d;
    d << (a.is_dram ? "dram" : to_string(a.kind)) << " base=" << a.base << " len=" << a.len
      << (a.write ? " write" : " read") << " index=" << index;
    log(LogLevel::Info, Unit::Scheduler, t, "trap", d.str());
  }

  bool any_taint(SpadKind k, std::optional<uint32_t> p, uint32_t len) const {
    if (!p) return false;
    const auto& tv = taint[size_t(k)];
    return std::any_of(tv.begin() + *p, tv.begin() + *p + len, [](uint8_t x) { return x != 0; });
  }

  // --- functional helpers -------------------------------------------------

  std::vector<uint8_t> read_spad(uint8_t t, SpadKind k, uint32_t off, uint32_t len) const {
    auto p = phys(t, k, off, len);
    if (!p) return std::vector<uint8_t>(len, 0);
    return {spad[size_t(k)].begin() + *p, spad[size_t(k)].begin() + *p + len};
  }

  void write_spad(uint8_t t, SpadKind k, uint32_t off, const std::vector<uint8_t>& bytes, uint8_t tag) {
    auto p = phys(t, k, off, uint32_t(bytes.size()));
    if (!p) return;
    std::memcpy(spad[size_t(k)].data() + *p, bytes.data(), bytes.size());
    std::memset(taint[size_t(k)].data() + *p, tag, bytes.size());
  }

  std::vector<int32_t> widen(SpadKind k, const std::vector<uint8_t>& raw) const {
    std::vector<int32_t> out(raw.size() / element_size(k));
    if (k == SpadKind::Accumulator) std::memcpy(out.data(), raw.data(), out.size() * 4);
    else for (size_t i = 0; i < out.size(); ++i) out[i] = int8_t(raw[i]);
    return out;
  }

  std::vector<uint8_t> narrow(SpadKind k, const std::vector<int32_t>& v) const {
    std::vector<uint8_t> out(v.size() * element_size(k));
    if (k == SpadKind::Accumulator) std::memcpy(out.data(), v.data(), out.size());
    else for (size_t i = 0; i < v.size(); ++i) out[i] = uint8_t(saturate8(v[i]));
    return out;
  }

  // --- lifecycle ----------------------------------------------------------

  uint8_t admit(const CompiledProgram& prog) {
    const uint8_t id = prog.grant.tenant_id;
    int active = 0;
    for (const auto& t : tenants) active += t.active;
    if (active >= kMaxTenants || id >= kMaxTenants)
      throw Error(Error::Code::TooManyTenants, "accelerator supports at most four tenants");
    if (tenants[id].active) throw Error(Error::Code::TooManyTenants, "tenant slot " + std::to_string(id) + " in use");

    uint32_t tiles = 0, depth = 0;
    uint64_t bw = 0;
    for (const auto& t : tenants)
      if (t.active) tiles += t.grant.exec_tiles, depth += t.grant.queue_depth, bw += t.grant.bandwidth;
    auto over = [&](const char* what, uint64_t want, uint64_t avail) {
      throw Error(Error::Code::Oversubscription, std::string(what) + ": requested " + std::to_string(want) +
                                                     ", available " + std::to_string(avail));
    };
    if (tiles + prog.grant.exec_tiles > cfg.exec_tiles) over("exec tiles", prog.grant.exec_tiles, cfg.exec_tiles - tiles);
    if (depth + prog.grant.queue_depth > cfg.queue_entries)
      over("queue entries", prog.grant.queue_depth, cfg.queue_entries - depth);
    if (bw + prog.grant.bandwidth > cfg.bandwidth) over("bandwidth", prog.grant.bandwidth, cfg.bandwidth - bw);

    // first fit, contiguous regions per kind
    std::array<uint32_t, kNumSpadKinds> base{};
    for (int k = 0; k < kNumSpadKinds; ++k) {
      const uint32_t need = (prog.grant.spad_quota[k] + kRegionBytes - 1) / kRegionBytes;
      const auto& own = owner[k];
      bool found = need == 0;
      for (uint32_t r = 0; !found && r + need <= own.size(); ++r) {
        if (std::all_of(own.begin() + r, own.begin() + r + need, [](uint8_t o) { return o == kFree; })) {
          base[k] = r * kRegionBytes;
          found = true;
        }
      }
      if (!found) over(to_string(SpadKind(k)), prog.grant.spad_quota[k], 0);
    }
    for (int k = 0; k < kNumSpadKinds; ++k) {
      const uint32_t need = (prog.grant.spad_quota[k] + kRegionBytes - 1) / kRegionBytes;
      std::fill_n(owner[k].begin() + base[k] / kRegionBytes, need, id);
    }

    TenantState& t = tenants[id];
    t = TenantState{};
    t.active = true;
    t.id = id;
    t.model = prog.model;
    t.grant = prog.grant;
    t.program = prog.instructions;
    t.layer_starts = prog.layer_starts;
    t.output = prog.output;
    t.base = base;
    t.queue_depth = std::max(1u, prog.grant.queue_depth);
    t.exec_tiles = std::max(1u, prog.grant.exec_tiles);
    t.rep.tenant = id;
    if (mode == Sharing::Spatial) {
      const uint64_t slot = bus_slot_cycles(cfg, mode);
      uint64_t c = (now + slot - 1) / slot * slot;
      while ((c / slot) % kMaxTenants != id) c += slot;
      t.launch_at = c;
    }
    for (const auto& seg : prog.data) {
      if (!dram_ok(id, seg.addr, uint32_t(seg.bytes.size())))
        throw Error(Error::Code::InvalidConfig, "data segment outside tenant DRAM window");
      std::memcpy(dram.get() + seg.addr, seg.bytes.data(), seg.bytes.size());
    }
    mem.attach(id, prog.grant.bandwidth, prog.grant.dram_base, prog.grant.dram_len);
    log(LogLevel::Info, Unit::Scheduler, id, "admit",
        prog.model + " instructions=" + std::to_string(prog.instructions.size()));
    if (t.program.empty()) finish_tenant(t);
    return id;
  }

  ReleaseReport release(uint8_t id, bool force) {
    ReleaseReport r;
    r.tenant = id;
    for (int k = 0; k < kNumSpadKinds; ++k) {
      for (uint32_t reg = 0; reg < owner[k].size(); ++reg) {
        if (owner[k][reg] != id) continue;
        const size_t lo = size_t(reg) * kRegionBytes;
        const auto tainted = size_t(std::count_if(taint[k].begin() + lo, taint[k].begin() + lo + kRegionBytes,
                                                  [](uint8_t x) { return x != 0; }));
        r.residual_tainted_bytes += tainted;
        if (tainted || force) {
          std::fill_n(spad[k].begin() + lo, kRegionBytes, 0);
          std::fill_n(taint[k].begin() + lo, kRegionBytes, 0);
          r.forced_zeroize_bytes += kRegionBytes;
        }
        owner[k][reg] = kFree;
        ++r.regions_released;
      }
    }
    mem.detach(id, now);
    tenants[id].active = false;
    log(LogLevel::Info, Unit::Scheduler, id, "teardown",
        "regions=" + std::to_string(r.regions_released) + " residual=" + std::to_string(r.residual_tainted_bytes));
    releases.push_back(r);
    return r;
  }

  void finish_tenant(TenantState& t) {
    t.finished = true;
    t.rep.finished = true;
    t.rep.end_cycle = now;
    if (!t.started) t.rep.start_cycle = now;
    t.rep.cycles = t.rep.end_cycle - t.rep.start_cycle;
    if (t.output.len && dram_ok(t.id, t.output.base, t.output.len))
      t.rep.output.assign(dram.get() + t.output.base, dram.get() + t.output.base + t.output.len);
    log(LogLevel::Info, Unit::Scheduler, t.id, "finish", "cycles=" + std::to_string(t.rep.cycles));
    if (opts.auto_teardown) {
      const auto r = release(t.id, false);
      if (r.residual_tainted_bytes)
        violation(t.id, -1, "residual taint at teardown: " + std::to_string(r.residual_tainted_bytes) + " bytes");
    }
  }

  // --- per-op -------------------------------------------------------------

  bool hazard_free(const TenantState& t, const Op& op) const {
    for (const auto& y : t.window) {
      if (y->seq >= op.seq) break;
      if (y->done) continue;
      if (op.fence) return false;
      for (const auto& a : op.acc)
        for (const auto& b : y->acc)
          if ((a.write || b.write) && overlaps(a, b)) return false;
    }
    return true;
  }

  void check_accesses(TenantState& t, Op& op) {
    op.trapped.assign(op.acc.size(), false);
    for (size_t i = 0; i < op.acc.size(); ++i) {
      const Access& a = op.acc[i];
      const bool ok = a.is_dram ? dram_ok(t.id, a.base, a.len) : phys(t.id, a.kind, a.base, a.len).has_value();
      if (!ok) {
        op.trapped[i] = true;
        trap(t.id, op.index, a);
      }
    }
  }

  void start(TenantState& t, Op& op) {
    op.running = true;
    last_progress = now;
    if (!t.started) {
      t.started = true;
      t.rep.start_cycle = now;
    }
    while (t.next_layer < t.layer_starts.size() && t.layer_starts[t.next_layer] <= op.index) {
      mem.mark_layer(t.id, uint32_t(t.next_layer), now);
      t.rep.layer_start_cycles.push_back(now);
      log(LogLevel::Info, Unit::Scheduler, t.id, "layer", std::to_string(t.next_layer));
      ++t.next_layer;
    }
    check_accesses(t, op);
    log(LogLevel::Debug, op.unit, t.id, "start", mnemonic(op.instr) + " index=" + std::to_string(op.index));

    std::visit(
        [&](const auto& i) {
          using T = std::decay_t<decltype(i)>;
          if constexpr (std::is_same_v<T, Load>) {
            if (opts.checked && !is_encrypted(i.variant) &&
                any_taint(i.dst.kind, phys(t.id, i.dst.kind, i.dst.base, i.dst.len), i.dst.len))
              violation(t.id, op.index, "public load overwrites secret bytes without zeroize");
            // a blocked transfer never reaches the bus
            if (!op.trapped[0]) op.bursts = split_bursts(i.src.base, i.src.len, cfg.burst_bytes);
            op.bursts_left = op.bursts.size();
          } else if constexpr (std::is_same_v<T, Store>) {
            op.store_data = read_spad(t.id, i.src.kind, i.src.base, i.src.len);
            if (opts.checked && !is_encrypted(i.variant) &&
                any_taint(i.src.kind, phys(t.id, i.src.kind, i.src.base, i.src.len), i.src.len))
              violation(t.id, op.index, "secret bytes stored without encryption");
            if (!op.trapped[1]) op.bursts = split_bursts(i.dst.base, i.dst.len, cfg.burst_bytes);
            op.bursts_left = op.bursts.size();
          } else if constexpr (std::is_same_v<T, Gemm>) {
            const auto in1 = i.in1(), in2 = i.in2(), out = i.out();
            const bool secret = any_taint(in1.kind, phys(t.id, in1.kind, in1.base, in1.len), in1.len) ||
                                any_taint(in2.kind, phys(t.id, in2.kind, in2.base, in2.len), in2.len) ||
                                (!i.reset && any_taint(out.kind, phys(t.id, out.kind, out.base, out.len), out.len));
            if (secret && !i.constant_time) violation(t.id, op.index, "variable-time gemm on secret operands");
            size_t nz = in2.len;
            if (!i.constant_time) {
              const auto w = read_spad(t.id, in2.kind, in2.base, in2.len);
              nz = count_nonzero({reinterpret_cast<const int8_t*>(w.data()), w.size()});
            }
            op.done_at = now + gemm_cycles(i.uop, t.exec_tiles, i.constant_time, nz);
          } else if constexpr (std::is_same_v<T, Alu>) {
            const bool secret = any_taint(i.in.kind, phys(t.id, i.in.kind, i.in.base, i.in.len), i.in.len);
            if (secret && !i.constant_time) violation(t.id, op.index, "variable-time alu on secret operands");
            const uint64_t n = i.in.len / element_size(i.in.kind);
            size_t nz = n;
            if (!i.constant_time) {
              const auto v = widen(i.in.kind, read_spad(t.id, i.in.kind, i.in.base, i.in.len));
              nz = size_t(std::count_if(v.begin(), v.end(), [](int32_t x) { return x != 0; }));
            }
            op.done_at = now + alu_cycles(n, t.exec_tiles, i.constant_time, nz);
          } else if constexpr (std::is_same_v<T, Zeroize>) {
            op.done_at = now + ceil_div(i.range.len, cfg.zeroizer_bytes_per_cycle);
            t.rep.zeroize_cycles += op.done_at - now;
          } else if constexpr (std::is_same_v<T, SetConfig>) {
            apply_config(t, op, i);
          }
        },
        op.instr);
  }

  void apply_config(TenantState& t, const Op& op, const SetConfig& c) {
    const TenantGrant& g = t.grant;
    auto clamp = [&](uint64_t v, uint64_t cap) {
      if (v > cap) trap(t.id, op.index, {});
      return std::min(v, cap);
    };
    switch (c.reg) {
      case ConfigReg::ShaperEn: mem.set_shaper(t.id, c.value != 0, now); break;
      case ConfigReg::Bandwidth: mem.set_bandwidth(t.id, clamp(c.value, g.bandwidth)); break;
      case ConfigReg::AddrRange: {
        const uint32_t base = c.value & 0xffff0000u, len = (c.value & 0xffffu) << 16;
        if (!dram_ok(t.id, base, len)) trap(t.id, op.index, {true, false, SpadKind::Input, base, len});
        else mem.set_addr_range(t.id, base, len);
        break;
      }
      case ConfigReg::QueueDepth: t.queue_depth = uint32_t(std::max<uint64_t>(1, clamp(c.value, g.queue_depth))); break;
      case ConfigReg::ExecTiles: t.exec_tiles = uint32_t(std::max<uint64_t>(1, clamp(c.value, g.exec_tiles))); break;
      case ConfigReg::SpadQuota: {
        const uint32_t k = c.value >> 24;
        if (k >= kNumSpadKinds || uint64_t(c.value & 0xffffff) * kRegionBytes > g.spad_quota[k]) trap(t.id, op.index, {});
        break;
      }
    }
    log(LogLevel::Info, Unit::Load, t.id, "config", std::string(to_string(c.reg)) + "=" + std::to_string(c.value));
  }

  void complete(TenantState& t, Op& op) {
    op.done = true;
    op.running = false;
    last_progress = now;
    ++t.rep.retired;
    std::visit(
        [&](const auto& i) {
          using T = std::decay_t<decltype(i)>;
          if constexpr (std::is_same_v<T, Load>) {
            std::vector<uint8_t> bytes(i.dst.len, 0);
            if (!op.trapped[0]) std::memcpy(bytes.data(), dram.get() + i.src.base, i.src.len);
            write_spad(t.id, i.dst.kind, i.dst.base, bytes, is_encrypted(i.variant) ? 1 : 0);
          } else if constexpr (std::is_same_v<T, Store>) {
            if (!op.trapped[1]) std::memcpy(dram.get() + i.dst.base, op.store_data.data(), i.dst.len);
          } else if constexpr (std::is_same_v<T, Gemm>) {
            exec_gemm(t, i);
          } else if constexpr (std::is_same_v<T, Alu>) {
            exec_alu(t, i);
          } else if constexpr (std::is_same_v<T, Zeroize>) {
            if (auto p = phys(t.id, i.range.kind, i.range.base, i.range.len)) {
              std::memset(spad[size_t(i.range.kind)].data() + *p, 0, i.range.len);
              std::memset(taint[size_t(i.range.kind)].data() + *p, 0, i.range.len);
            }
            t.rep.zeroized_bytes += i.range.len;
            ++t.rep.zeroize_count;
          }
        },
        op.instr);
    log(LogLevel::Debug, op.unit, t.id, "complete", mnemonic(op.instr) + " index=" + std::to_string(op.index));
    t.by_seq.erase(op.seq);
    while (!t.window.empty() && t.window.front()->done) t.window.pop_front();
    if (std::holds_alternative<Finish>(op.instr)) finish_tenant(t);
  }

  uint8_t union_taint(const TenantState& t, std::initializer_list<SpadRange> ranges) const {
    for (const auto& r : ranges)
      if (any_taint(r.kind, phys(t.id, r.kind, r.base, r.len), r.len)) return 1;
    return 0;
  }

  void exec_gemm(TenantState& t, const Gemm& g) {
    const auto in1 = g.in1(), in2 = g.in2(), out = g.out();
    uint8_t tag = union_taint(t, {in1, in2});
    if (!g.reset) tag |= union_taint(t, {out});
    const auto a = read_spad(t.id, in1.kind, in1.base, in1.len);
    const auto w = read_spad(t.id, in2.kind, in2.base, in2.len);
    std::vector<int32_t> acc(out.len / 4, 0);
    if (!g.reset) acc = widen(out.kind, read_spad(t.id, out.kind, out.base, out.len));
    conv_tile(reinterpret_cast<const int8_t*>(a.data()), reinterpret_cast<const int8_t*>(w.data()), acc.data(), g.uop,
              g.reset);
    write_spad(t.id, out.kind, out.base, narrow(out.kind, acc), tag);
  }

  void exec_alu(TenantState& t, const Alu& a) {
    const uint8_t tag = union_taint(t, {a.in});
    const auto in = widen(a.in.kind, read_spad(t.id, a.in.kind, a.in.base, a.in.len));
    std::vector<int32_t> out(a.out.len / element_size(a.out.kind));
    try {
      alu_apply(a.op, in, out, a.imm);
    } catch (const Error& e) {
      log(LogLevel::Error, Unit::Compute, t.id, "alu_fault", e.what());
      return;
    }
    write_spad(t.id, a.out.kind, a.out.base, narrow(a.out.kind, out), tag);
  }

  // --- units --------------------------------------------------------------

  bool submit_bursts(TenantState& t, Op& op, Channel ch, bool encrypted) {
    while (op.next_burst < op.bursts.size()) {
      const auto [addr, len] = op.bursts[op.next_burst];
      if (!mem.submit(t.id, ch, addr, len, op.seq, encrypted)) return false;
      ++op.next_burst;
      last_progress = now;
    }
    return true;
  }

  void step_load(TenantState& t) {
    if (t.load_active) {
      const auto& l = std::get<Load>(t.load_active->instr);
      if (submit_bursts(t, *t.load_active, Channel::Read, is_encrypted(l.variant))) t.load_active = nullptr;
      else ++t.rep.stalls[0];
      return;
    }
    auto& q = t.uq[0];
    if (q.empty()) return;
    Op* op = q.front();
    const bool needs_zeroizer = std::holds_alternative<Zeroize>(op->instr);
    if (!hazard_free(t, *op) || (needs_zeroizer && t.zeroizer_active)) {
      ++t.rep.stalls[0];
      return;
    }
    q.pop_front();
    log(LogLevel::Debug, Unit::Load, t.id, "dequeue", "partition=" + std::to_string(t.id));
    start(t, *op);
    if (const auto* l = std::get_if<Load>(&op->instr)) {
      if (op->bursts.empty()) complete(t, *op);
      else if (!submit_bursts(t, *op, Channel::Read, is_encrypted(l->variant))) t.load_active = op;
    } else if (needs_zeroizer) {
      t.zeroizer_active = op;
    } else {
      complete(t, *op);  // SetConfig
    }
  }

  void step_compute(TenantState& t) {
    if (t.compute_active) return;
    auto& q = t.uq[1];
    if (q.empty()) return;
    Op* op = q.front();
    if (!hazard_free(t, *op)) {
      ++t.rep.stalls[1];
      return;
    }
    q.pop_front();
    log(LogLevel::Debug, Unit::Compute, t.id, "dequeue", "partition=" + std::to_string(t.id));
    start(t, *op);
    t.compute_active = op;
  }

  void step_store(TenantState& t) {
    if (t.store_active) {
      const auto& s = std::get<Store>(t.store_active->instr);
      if (submit_bursts(t, *t.store_active, Channel::Write, is_encrypted(s.variant))) t.store_active = nullptr;
      else ++t.rep.stalls[2];
      return;
    }
    auto& q = t.uq[2];
    if (q.empty()) return;
    Op* op = q.front();
    if (!hazard_free(t, *op)) {
      ++t.rep.stalls[2];
      return;
    }
    q.pop_front();
    log(LogLevel::Debug, Unit::Store, t.id, "dequeue", "partition=" + std::to_string(t.id));
    start(t, *op);
    if (const auto* s = std::get_if<Store>(&op->instr)) {
      if (op->bursts.empty()) complete(t, *op);
      else if (!submit_bursts(t, *op, Channel::Write, is_encrypted(s->variant))) t.store_active = op;
    } else {
      complete(t, *op);  // Finish
    }
  }

  void fetch_dispatch(TenantState& t) {
    if (now < t.launch_at) return;
    if (!t.iq.empty()) {
      Op* op = t.iq.front();
      auto& q = t.uq[size_t(op->unit)];
      if (q.size() < t.queue_depth) {
        q.push_back(op);
        t.iq.pop_front();
        last_progress = now;
      }
    }
    if (t.cursor < t.program.size() && t.iq.size() < cfg.instr_queue_entries) {
      auto op = std::make_unique<Op>();
      op->seq = t.next_seq++;
      op->index = uint32_t(t.cursor);
      op->instr = t.program[t.cursor++];
      op->unit = unit_of(op->instr);
      op->acc = accesses(op->instr);
      op->fence = has_fence(op->instr) || std::holds_alternative<Finish>(op->instr);
      t.iq.push_back(op.get());
      t.by_seq[op->seq] = op.get();
      t.window.push_back(std::move(op));
      last_progress = now;
    }
  }

  void complete_due(TenantState& t) {
    if (t.compute_active && t.compute_active->done_at <= now) {
      Op* op = t.compute_active;
      t.compute_active = nullptr;
      complete(t, *op);
    }
    if (t.active && t.zeroizer_active && t.zeroizer_active->done_at <= now) {
      Op* op = t.zeroizer_active;
      t.zeroizer_active = nullptr;
      complete(t, *op);
    }
  }

  std::string snapshot() const {
    std::ostringstream s;
    for (const auto& t : tenants) {
      if (!t.active || t.finished) continue;
      s << "tenant " << int(t.id) << ": cursor=" << t.cursor << " iq=" << t.iq.size() << " load=" << t.uq[0].size()
        << " compute=" << t.uq[1].size() << " store=" << t.uq[2].size();
      for (int u = 0; u < 3; ++u)
        if (!t.uq[u].empty()) s << " head" << u << "=" << mnemonic(t.uq[u].front()->instr) << "#" << t.uq[u].front()->index;
      s << "; ";
    }
    return s.str();
  }

  void step() {
    for (const auto& d : mem.drain(now)) {
      TenantState& t = tenants[d.tenant];
      auto it = t.by_seq.find(d.tag);
      if (it == t.by_seq.end()) continue;
      Op* op = it->second;
      last_progress = now;
      if (--op->bursts_left == 0 && op->next_burst == op->bursts.size()) complete(t, *op);
    }
    for (auto& t : tenants)
      if (t.active && !t.finished) complete_due(t);
    for (auto& t : tenants)
      if (t.active && !t.finished) step_load(t);
    for (auto& t : tenants)
      if (t.active && !t.finished) step_compute(t);
    for (auto& t : tenants)
      if (t.active && !t.finished) step_store(t);
    for (auto& t : tenants)
      if (t.active && !t.finished) fetch_dispatch(t);
    mem.tick(now);
    ++now;
  }

  bool pending() const {
    return std::any_of(tenants.begin(), tenants.end(), [](const auto& t) { return t.active && !t.finished; });
  }
};

Engine::Engine(const AcceleratorConfig& cfg, Sharing mode, EngineOptions opts)
    : impl_(std::make_unique<Impl>(cfg, mode, opts)) {}
Engine::~Engine() = default;
Engine::Engine(Engine&&) noexcept = default;

uint8_t Engine::admit(const CompiledProgram& program) { return impl_->admit(program); }

RunReport Engine::run(uint64_t cycle_limit) {
  Impl& m = *impl_;
  std::array<bool, kMaxTenants> involved{};
  for (int i = 0; i < kMaxTenants; ++i) involved[i] = m.tenants[i].active || m.tenants[i].finished;
  m.last_progress = m.now;
  while (m.pending()) {
    if (cycle_limit && m.now >= cycle_limit) break;
    m.step();
    if (m.now - m.last_progress > m.cfg.deadlock_cycles)
      throw Error(Error::Code::Deadlock, "no progress for " + std::to_string(m.cfg.deadlock_cycles) +
                                             " cycles at cycle " + std::to_string(m.now) + ": " + m.snapshot());
  }
  m.mem.finish(m.now);
  RunReport r;
  r.cycles = m.now;
  for (int i = 0; i < kMaxTenants; ++i)
    if (involved[i] || m.tenants[i].finished) r.tenants.push_back(m.tenants[i].rep);
  r.traps = m.traps;
  r.violations = m.violations;
  r.releases = m.releases;
  return r;
}

AccessResult Engine::access_scratchpad(uint8_t tenant, SpadKind kind, uint32_t offset, uint32_t len, bool write,
                                       const std::vector<uint8_t>& data) {
  Impl& m = *impl_;
  AccessResult r;
  const auto p = tenant < kMaxTenants ? m.phys(tenant, kind, offset, len) : std::nullopt;
  if (!p) {
    r.trapped = true;
    m.trap(tenant, -1, {false, write, kind, offset, len});
    if (!write) r.data.assign(len, 0);
    return r;
  }
  if (write) {
    std::vector<uint8_t> bytes = data;
    bytes.resize(len, 0);
    m.write_spad(tenant, kind, offset, bytes, 0);
  } else {
    r.data = m.read_spad(tenant, kind, offset, len);
  }
  return r;
}

uint64_t Engine::zeroize(uint8_t tenant, const SpadRange& range) {
  Impl& m = *impl_;
  const auto p = tenant < kMaxTenants ? m.phys(tenant, range.kind, range.base, range.len) : std::nullopt;
  if (!p) {
    m.trap(tenant, -1, {false, true, range.kind, range.base, range.len});
    return 0;
  }
  std::memset(m.spad[size_t(range.kind)].data() + *p, 0, range.len);
  std::memset(m.taint[size_t(range.kind)].data() + *p, 0, range.len);
  const uint64_t cycles = ceil_div(range.len, m.cfg.zeroizer_bytes_per_cycle);
  m.log(LogLevel::Info, Unit::Zeroizer, tenant, "zeroize", std::to_string(range.len) + " bytes");
  return cycles;
}

ReleaseReport Engine::teardown(uint8_t tenant) {
  Impl& m = *impl_;
  if (tenant >= kMaxTenants || !m.tenants[tenant].active) return {tenant, 0, 0, 0};
  if (m.opts.checked) {
    uint64_t tainted = 0;
    for (int k = 0; k < kNumSpadKinds; ++k)
      for (uint32_t reg = 0; reg < m.owner[k].size(); ++reg)
        if (m.owner[k][reg] == tenant)
          tainted += size_t(std::count_if(m.taint[k].begin() + size_t(reg) * kRegionBytes,
                                          m.taint[k].begin() + size_t(reg + 1) * kRegionBytes,
                                          [](uint8_t x) { return x != 0; }));
    if (tainted)
      throw Error(Error::Code::ResidualTaint,
                  "tenant " + std::to_string(tenant) + " holds " + std::to_string(tainted) + " secret bytes");
  }
  return m.release(tenant, false);
}

ReleaseReport Engine::abort(uint8_t tenant) {
  Impl& m = *impl_;
  if (tenant >= kMaxTenants || !m.tenants[tenant].active) return {tenant, 0, 0, 0};
  m.tenants[tenant].rep.aborted = true;
  m.log(LogLevel::Info, Unit::Scheduler, tenant, "abort", "force zeroize before release");
  return m.release(tenant, true);
}

std::vector<uint8_t> Engine::read_dram(uint32_t addr, uint32_t len) const {
  const uint64_t end = std::min<uint64_t>(uint64_t(addr) + len, impl_->cfg.dram_bytes);
  if (addr >= end) return {};
  return {impl_->dram.get() + addr, impl_->dram.get() + end};
}

uint8_t Engine::region_owner(SpadKind kind, uint32_t region) const { return impl_->owner[size_t(kind)].at(region); }

uint64_t Engine::tainted_bytes(SpadKind kind) const {
  const auto& t = impl_->taint[size_t(kind)];
  return uint64_t(std::count_if(t.begin(), t.end(), [](uint8_t x) { return x != 0; }));
}

const BandwidthTrace& Engine::trace() const { return impl_->mem.trace(); }
const std::vector<Event>& Engine::events() const { return impl_->events; }
uint64_t Engine::cycle() const { return impl_->now; }

std::string Engine::event_log() const {
  std::string out;
  for (const auto& e : impl_->events) {
    nlohmann::ordered_json j;
    j["cycle"] = e.cycle;
    j["unit"] = to_string(e.unit);
    j["tenant"] = e.tenant;
    j["event"] = e.event;
    j["detail"] = e.detail;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace sde
