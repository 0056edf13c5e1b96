#include "sde/compiler.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

#include "sde/engine.hpp"
#include "sde/kernels.hpp"

namespace sde {

namespace {

constexpr uint32_t kAlign = 64;
constexpr uint32_t kMaxChannels = 2047;  // uop channel fields
constexpr uint32_t kMaxRows = 511;       // uop row/col fields

uint32_t r64(uint64_t x) { return uint32_t((x + kAlign - 1) / kAlign * kAlign); }
uint32_t round_region(uint64_t x) { return uint32_t((x + kRegionBytes - 1) / kRegionBytes * kRegionBytes); }
uint64_t ceil_div(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

std::vector<uint32_t> divisors(uint32_t n, uint32_t cap) {
  std::vector<uint32_t> d;
  for (uint32_t i = 1; i <= n && i <= cap; ++i)
    if (n % i == 0) d.push_back(i);
  return d;
}

bool conv_like(const LayerSpec& l) { return l.has_weights(); }

// Buffer sizes and tile counts implied by a tiling.
struct Plan {
  TileConfig t;
  uint32_t n_oc = 1, n_ic = 1, n_oh = 1, n_ow = 1;
  uint32_t in_bytes = 0;   // one input tile (both operands for add)
  uint32_t in_half = 0;    // Input double-buffer half
  uint32_t w_bytes = 0, w_half = 0;
  uint32_t acc_bytes = 0;
  uint32_t out_bytes = 0, out_stride = 0;
  bool batched = false;    // whole ofm held in Output until the layer ends
  uint32_t tiles() const { return n_oc * n_oh * n_ow; }
  uint32_t ofm_bytes() const { return tiles() * out_stride; }
};

Plan make_plan(const LayerSpec& l, const TileConfig& t, uint32_t out_quota) {
  Plan p;
  p.t = t;
  const uint32_t oh = l.out_height(), ow = l.out_width();
  p.n_oc = l.out_channels / t.oc;
  p.n_oh = oh / t.oh;
  p.n_ow = ow / t.ow;
  switch (l.kind) {
    case LayerKind::Conv2D:
    case LayerKind::Dense: {
      p.n_ic = l.in_channels / t.ic;
      const TileLoop u{uint16_t(t.oc), uint16_t(t.ic), uint16_t(t.oh), uint16_t(t.ow), uint8_t(l.kernel),
                       uint8_t(l.stride)};
      p.in_bytes = u.input_bytes();
      p.in_half = r64(p.in_bytes);
      p.w_bytes = u.weight_bytes();
      p.w_half = r64(p.w_bytes);
      p.acc_bytes = u.acc_bytes();
      p.out_bytes = t.oc * t.oh * t.ow;
      break;
    }
    case LayerKind::MaxPool:
      p.out_bytes = t.oc * t.oh * t.ow;
      p.in_bytes = p.out_bytes * 4;
      p.in_half = r64(p.in_bytes);
      break;
    case LayerKind::ReLU:
      p.out_bytes = t.oc * t.oh * t.ow;
      p.in_bytes = p.out_bytes;
      p.in_half = r64(p.in_bytes);
      break;
    case LayerKind::Add:
      p.out_bytes = t.oc * t.oh * t.ow;
      p.in_bytes = 2 * p.out_bytes;
      // the skip operand lands right after the first one; its padded tail
      // extends past 2n
      p.in_half = r64(p.out_bytes + r64(p.out_bytes));
      break;
  }
  p.out_stride = r64(p.out_bytes);
  p.batched = uint64_t(p.tiles()) * p.out_stride <= out_quota;
  p.t.footprint = {2 * p.in_half, 2 * p.w_half, r64(p.acc_bytes),
                   p.batched ? p.ofm_bytes() : 2 * p.out_stride};
  return p;
}

bool fits(const Plan& p, const ResourceBOM& limits) {
  for (int k = 0; k < kNumSpadKinds; ++k)
    if (p.t.footprint[k] > limits.spad[k]) return false;
  return true;
}

// Cycles between bursts a lone unshaped tenant can issue on one channel.
uint32_t burst_interval(const AcceleratorConfig& cfg, Sharing mode) {
  const uint32_t slot = bus_slot_cycles(cfg, mode);
  return mode == Sharing::Spatial ? slot * kMaxTenants : slot;
}

}  // namespace

std::string to_string(const TileConfig& t) {
  std::ostringstream s;
  s << "oc=" << t.oc << " ic=" << t.ic << " oh=" << t.oh << " ow=" << t.ow;
  return s.str();
}

ResourceBOM platform_limits(const AcceleratorConfig& cfg, Sharing mode) {
  const TenantGrant g = default_grant(cfg, mode, 0);
  ResourceBOM b;
  b.bandwidth = g.bandwidth;
  b.spad = g.spad_quota;
  b.queue_depth = g.queue_depth;
  b.exec_tiles = g.exec_tiles;
  b.exec_mode = mode;
  return b;
}

std::vector<TileConfig> legal_tilings(const LayerSpec& l, const ResourceBOM& limits, size_t cap) {
  const bool conv = conv_like(l);
  const auto ocs = divisors(l.out_channels, conv ? kMaxChannels : UINT32_MAX);
  const auto ics = conv ? divisors(l.in_channels, kMaxChannels) : std::vector<uint32_t>{1};
  const auto ohs = divisors(l.out_height(), kMaxRows);
  // elementwise and pool tiles always span whole rows
  const auto ows = conv ? divisors(l.out_width(), kMaxRows) : std::vector<uint32_t>{l.out_width()};

  const size_t total = ocs.size() * ics.size() * ohs.size() * ows.size();
  const size_t step = total > cap ? ceil_div(total, cap) : 1;
  std::vector<TileConfig> out;
  for (size_t idx = 0; idx < total; idx += step) {
    size_t r = idx;
    TileConfig t;
    t.ow = ows[r % ows.size()], r /= ows.size();
    t.oh = ohs[r % ohs.size()], r /= ohs.size();
    t.ic = ics[r % ics.size()], r /= ics.size();
    t.oc = ocs[r];
    if (!conv) t.ic = 1;
    Plan p = make_plan(l, t, limits.spad[size_t(SpadKind::Output)]);
    if (fits(p, limits)) out.push_back(p.t);
  }
  return out;
}

uint64_t analytic_cost(const LayerSpec& l, const TileConfig& t, const ResourceBOM& limits,
                       const AcceleratorConfig& cfg) {
  const Plan p = make_plan(l, t, limits.spad[size_t(SpadKind::Output)]);
  const uint32_t tiles = std::max(1u, limits.exec_tiles);
  uint64_t compute = 0, bytes = 0;
  if (conv_like(l)) {
    const TileLoop u{uint16_t(t.oc), uint16_t(t.ic), uint16_t(t.oh), uint16_t(t.ow), uint8_t(l.kernel),
                     uint8_t(l.stride)};
    compute = uint64_t(p.tiles()) * p.n_ic * gemm_cycles(u, tiles, true, u.weight_bytes());
    compute += uint64_t(p.tiles()) * 2 * alu_cycles(p.acc_bytes / 4, tiles, true, 0);
    const bool reuse = p.n_ic == 1;
    bytes = uint64_t(p.tiles()) * p.n_ic * p.in_half;
    bytes += reuse ? uint64_t(p.n_oc) * p.w_half : uint64_t(p.tiles()) * p.n_ic * p.w_half;
  } else {
    compute = uint64_t(p.tiles()) * alu_cycles(p.in_bytes, tiles, true, 0);
    bytes = uint64_t(p.tiles()) * p.in_half;
  }
  bytes += p.batched ? p.ofm_bytes() : uint64_t(p.tiles()) * p.out_stride;
  const uint64_t gap = burst_interval(cfg, limits.exec_mode);
  auto dma = [&](uint64_t b) { return ceil_div(b, cfg.burst_bytes) * gap; };
  const uint64_t fill = dma(p.in_half + p.w_half);
  // instruction overhead: a few cycles per issued op
  const uint64_t ops = uint64_t(p.tiles()) * (p.n_ic * 3 + 3);
  return std::max(compute, dma(bytes)) + fill + ops;
}

namespace {

uint64_t simulate_layer(const LayerSpec& l, const TileConfig& t, const ResourceBOM& limits,
                        const AcceleratorConfig& cfg) {
  ModelSpec m;
  m.name = "autotune";
  m.layers = {l};
  finalize_model(m);
  CompileOptions o;
  o.threat = ThreatModel{false, false, limits.exec_mode};
  o.cfg = cfg;
  o.tiles = std::vector<TileConfig>{t};
  const CompiledProgram prog = compile(m, o);
  Engine e(cfg, limits.exec_mode, EngineOptions{false, LogLevel::Off, true});
  e.admit(prog);
  const RunReport r = e.run();
  return r.tenants.at(0).cycles;
}

}  // namespace

TileConfig autotune(const LayerSpec& l, const ResourceBOM& limits, const ThreatModel& threat,
                    const AcceleratorConfig& cfg, const AutotuneOptions& opts, TileCost cost) {
  (void)threat;  // tiling is chosen under the public threat so every threat shares it
  auto cands = legal_tilings(l, limits, opts.cap);
  if (cands.empty())
    throw Error(Error::Code::NoLegalTiling,
                std::string("no tiling of ") + to_string(l.kind) + " layer fits the scratchpad quotas");
  for (auto& c : cands) c.est_cycles = analytic_cost(l, c, limits, cfg);

  std::vector<size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return cands[a].est_cycles < cands[b].est_cycles; });
  // layers without weights have few meaningful choices; the estimate decides
  const size_t budget = (cost || conv_like(l)) ? std::min(order.size(), std::max<size_t>(1, opts.sim_budget)) : 1;

  std::vector<uint64_t> measured(budget, 0);
  std::vector<std::string> errors(budget);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < long(budget); ++i) {
    const TileConfig& c = cands[order[size_t(i)]];
    try {
      measured[size_t(i)] = cost ? cost(c) : (budget == 1 ? c.est_cycles : simulate_layer(l, c, limits, cfg));
    } catch (const std::exception& e) {
      errors[size_t(i)] = e.what();
      measured[size_t(i)] = UINT64_MAX;
    }
  }
  size_t best = 0;
  for (size_t i = 1; i < budget; ++i)
    if (measured[i] < measured[best]) best = i;
  if (measured[best] == UINT64_MAX) throw Error(Error::Code::NoLegalTiling, "autotune failed: " + errors[best]);
  TileConfig t = cands[order[best]];
  return t;
}

std::vector<TileConfig> choose_tiles(const ModelSpec& model, const ResourceBOM& limits, const AcceleratorConfig& cfg,
                                     const AutotuneOptions& opts) {
  static std::mutex mu;
  static std::map<std::string, TileConfig> cache;
  std::vector<TileConfig> out;
  for (const auto& l : model.layers) {
    std::ostringstream key;
    key << int(l.kind) << ' ' << l.in_channels << ' ' << l.out_channels << ' ' << l.height << ' ' << l.width << ' '
        << l.kernel << ' ' << l.stride << ' ' << l.padding << '|' << int(limits.exec_mode) << ' ' << limits.exec_tiles;
    for (auto s : limits.spad) key << ' ' << s;
    key << '|' << cfg.dram.slot_cycles << ' ' << cfg.burst_bytes << ' ' << cfg.real_queue_bursts << ' '
        << cfg.queue_entries << '|' << opts.sim_budget << ' ' << opts.cap;
    {
      std::lock_guard<std::mutex> g(mu);
      auto it = cache.find(key.str());
      if (it != cache.end()) {
        out.push_back(it->second);
        continue;
      }
    }
    const TileConfig t = autotune(l, limits, ThreatModel{false, false, limits.exec_mode}, cfg, opts);
    std::lock_guard<std::mutex> g(mu);
    cache.emplace(key.str(), t);
    out.push_back(t);
  }
  return out;
}

ResourceBOM compute_bom(const PragmaSet& pragmas, const std::vector<TileConfig>& tiles, const AcceleratorConfig& cfg) {
  const ResourceBOM cap = platform_limits(cfg, pragmas.exec_mode);
  ResourceBOM b;
  b.exec_mode = pragmas.exec_mode;
  b.exec_tiles = cap.exec_tiles;
  b.queue_depth = pragmas.queue_depth ? pragmas.queue_depth : cap.queue_depth;
  b.bandwidth = pragmas.bandwidth;
  std::array<uint32_t, kNumSpadKinds> need{};
  for (const auto& t : tiles)
    for (int k = 0; k < kNumSpadKinds; ++k) need[k] = std::max(need[k], t.footprint[k]);
  for (int k = 0; k < kNumSpadKinds; ++k) {
    b.spad[k] = round_region(pragmas.spad_size[k] ? pragmas.spad_size[k] : need[k]);
    if (need[k] > b.spad[k])
      throw Error(Error::Code::Oversubscription, std::string(to_string(SpadKind(k))) + " scratchpad: tiles need " +
                                                     std::to_string(need[k]) + " bytes, pragma grants " +
                                                     std::to_string(b.spad[k]));
    if (b.spad[k] > cap.spad[k])
      throw Error(Error::Code::Oversubscription, std::string(to_string(SpadKind(k))) + " scratchpad: requested " +
                                                     std::to_string(b.spad[k]) + ", available " +
                                                     std::to_string(cap.spad[k]));
  }
  if (b.queue_depth > cap.queue_depth)
    throw Error(Error::Code::Oversubscription, "queue depth: requested " + std::to_string(b.queue_depth) +
                                                   ", available " + std::to_string(cap.queue_depth));
  if (b.bandwidth > cap.bandwidth)
    throw Error(Error::Code::Oversubscription, "bandwidth: requested " + std::to_string(b.bandwidth) +
                                                   ", available " + std::to_string(cap.bandwidth));
  return b;
}

std::vector<Label> propagate(const FlowGraph& g) {
  std::vector<Label> out = g.labels;
  std::vector<std::vector<uint32_t>> succ(out.size());
  for (auto [a, b] : g.edges) succ.at(a).push_back(b);
  std::vector<uint32_t> work;
  for (uint32_t i = 0; i < out.size(); ++i)
    if (out[i] == Label::Private) work.push_back(i);
  while (!work.empty()) {
    const uint32_t n = work.back();
    work.pop_back();
    for (uint32_t s : succ[n])
      if (out[s] != Label::Private) {
        out[s] = Label::Private;
        work.push_back(s);
      }
  }
  return out;
}

FlowMap track_flows(const ModelSpec& model, const PragmaSet& pragmas) {
  for (const auto& v : pragmas.secret_vars)
    if (!declared_variables().count(v)) throw Error(Error::Code::UnknownVariable, "undeclared variable '" + v + "'");
  auto declared = [&](const char* v) { return pragmas.secret_vars.count(v) ? Label::Private : Label::Public; };

  // node 0 is the model input; each layer has ifm, weights, skip, acc, ofm
  const size_t n = model.layers.size();
  auto node = [](size_t layer, int field) { return uint32_t(1 + layer * 5 + size_t(field)); };
  enum { Ifm, Weights, Skip, Acc, Ofm };
  FlowGraph g;
  g.labels.assign(1 + 5 * n, Label::Public);
  g.labels[0] = declared("data");
  for (size_t i = 0; i < n; ++i) {
    const LayerSpec& l = model.layers[i];
    g.labels[node(i, Ifm)] = declared("ifm");
    if (l.has_weights()) g.labels[node(i, Weights)] = declared("weights");
    g.labels[node(i, Acc)] = declared("acc");
    g.labels[node(i, Ofm)] = declared("ofm");
    g.edges.emplace_back(i == 0 ? 0 : node(i - 1, Ofm), node(i, Ifm));
    if (l.kind == LayerKind::Add) g.edges.emplace_back(node(size_t(l.skip_from), Ofm), node(i, Skip));
    for (int f : {Ifm, Weights, Skip}) g.edges.emplace_back(node(i, f), node(i, Acc));
    g.edges.emplace_back(node(i, Acc), node(i, Ofm));
  }
  const auto lab = propagate(g);
  FlowMap m;
  m.layers.resize(n);
  for (size_t i = 0; i < n; ++i) {
    m.layers[i] = {lab[node(i, Ifm)], lab[node(i, Weights)], lab[node(i, Skip)], lab[node(i, Acc)],
                   lab[node(i, Ofm)]};
    if (m.layers[i].ofm == Label::Private && declared("ofm") == Label::Public)
      m.warnings.push_back("ofm[" + std::to_string(i) + "] derived private from its operands but declared public");
  }
  return m;
}

DramRange equalize_transfer(uint32_t base, uint32_t len, uint32_t burst) {
  if (base % burst) throw Error(Error::Code::RangeOverflow, "transfer base not burst aligned");
  DramRange r;
  r.base = base;
  r.len = uint32_t(ceil_div(len, burst) * burst);
  r.pad.right = uint8_t(r.len - len);
  return r;
}

ProgramStats instruction_mix(const std::vector<Instruction>& program) {
  ProgramStats s;
  for (const auto& i : program) {
    ++s.mix[mnemonic(i)];
    if (const auto* z = std::get_if<Zeroize>(&i)) {
      ++s.zeroize_count;
      s.zeroize_bytes += z->range.len;
    } else if (const auto* l = std::get_if<Load>(&i)) {
      s.transfer_bytes += l->src.len;
      s.pad_bytes += l->src.pad.total();
    } else if (const auto* st = std::get_if<Store>(&i)) {
      s.transfer_bytes += st->dst.len;
      s.pad_bytes += st->dst.pad.total();
    }
  }
  return s;
}

namespace {

// Instruction stream plus, per instruction, the label of its scratchpad write.
struct Emitter {
  std::vector<Instruction> code;
  std::vector<std::optional<Label>> wlabel;
  std::vector<LabelPoint> labels;
  bool fence_next = false;

  void emit(Instruction i, std::optional<Label> wl = std::nullopt) {
    if (fence_next) {
      std::visit(
          [](auto& x) {
            if constexpr (requires { x.fence; }) x.fence = true;
          },
          i);
      fence_next = false;
    }
    if (wl)
      for (const auto& a : accesses(i))
        if (!a.is_dram && a.write) labels.push_back({uint32_t(code.size()), {a.kind, a.base, a.len}, *wl});
    code.push_back(std::move(i));
    wlabel.push_back(wl);
  }
  void zeroize(const SpadRange& r) { emit(Zeroize{r, false}, Label::Public); }
  uint32_t size() const { return uint32_t(code.size()); }
};

struct Tensor {
  uint32_t addr = 0;   // absolute
  uint32_t alloc = 0;  // bytes reserved, padded
};

// Offset of the contiguous span a tile reads, kept inside the buffer.
uint32_t span_start(uint64_t offset, uint32_t len, const Tensor& t) {
  uint64_t s = offset / kAlign * kAlign;
  if (s + len > t.alloc) s = t.alloc >= len ? (t.alloc - len) / kAlign * kAlign : 0;
  return uint32_t(s);
}

// Drops a Zeroize when private writes overwrite its whole range before any
// instruction reads a byte that still holds the old secret: the buffer is
// refilled by the same security domain before anything can observe it.
std::vector<bool> redundant_zeroizes(const Emitter& e) {
  const size_t n = e.code.size();
  std::vector<std::vector<Access>> acc(n);
  for (size_t i = 0; i < n; ++i) acc[i] = accesses(e.code[i]);
  std::vector<bool> drop(n, false);
  for (size_t i = 0; i < n; ++i) {
    const auto* z = std::get_if<Zeroize>(&e.code[i]);
    if (!z) continue;
    const SpadRange r = z->range;
    std::vector<std::pair<uint32_t, uint32_t>> stale = {{r.base, r.end()}};  // [lo, hi) not yet overwritten
    auto hits = [&](const Access& a) {
      for (auto [lo, hi] : stale)
        if (a.base < hi && lo < a.base + a.len) return true;
      return false;
    };
    for (size_t j = i + 1; j < n && !stale.empty(); ++j) {
      bool touched = false, leak = false;
      for (const auto& a : acc[j]) {
        if (a.is_dram || a.kind != r.kind || a.base >= r.end() || r.base >= a.base + a.len) continue;
        touched = true;
        leak = leak || (!a.write && hits(a));
      }
      if (!touched) continue;
      if (leak || std::holds_alternative<Zeroize>(e.code[j]) || e.wlabel[j] != Label::Private) break;
      for (const auto& a : acc[j]) {
        if (a.is_dram || a.kind != r.kind || !a.write) continue;
        std::vector<std::pair<uint32_t, uint32_t>> left;
        for (auto [lo, hi] : stale) {
          if (a.base > lo) left.emplace_back(lo, std::min(hi, a.base));
          if (a.base + a.len < hi) left.emplace_back(std::max(lo, a.base + a.len), hi);
        }
        stale = std::move(left);
      }
    }
    drop[i] = stale.empty();
  }
  return drop;
}

}  // namespace

CompiledProgram compile(const ModelSpec& model, const CompileOptions& opts) {
  const AcceleratorConfig& cfg = opts.cfg;
  cfg.check();
  if (opts.tenant_id >= kMaxTenants) throw Error(Error::Code::TooManyTenants, "tenant id out of range");
  const Sharing mode = opts.threat.sharing;
  TenantGrant grant = default_grant(cfg, mode, opts.tenant_id);
  const PragmaSet pragmas = opts.pragmas ? *opts.pragmas : pragmas_for(opts.threat, grant);
  const ResourceBOM limits = platform_limits(cfg, pragmas.exec_mode);

  std::vector<TileConfig> tiles = opts.tiles ? *opts.tiles : choose_tiles(model, limits, cfg, opts.autotune);
  if (tiles.size() != model.layers.size())
    throw Error(Error::Code::DimensionMismatch, "tile list does not match layer count");
  std::vector<Plan> plans;
  for (size_t i = 0; i < tiles.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    const TileConfig& t = tiles[i];
    const bool ok = t.oc && t.ic && t.oh && t.ow && l.out_channels % t.oc == 0 && l.in_channels % t.ic == 0 &&
                    l.out_height() % t.oh == 0 && l.out_width() % t.ow == 0;
    if (!ok) throw Error(Error::Code::NoLegalTiling, "layer " + std::to_string(i) + ": tile does not divide layer");
    plans.push_back(make_plan(l, t, limits.spad[size_t(SpadKind::Output)]));
    tiles[i].footprint = plans.back().t.footprint;
  }

  const FlowMap flows = track_flows(model, pragmas);
  const ResourceBOM bom = compute_bom(pragmas, tiles, cfg);
  grant.spad_quota = bom.spad;
  grant.queue_depth = bom.queue_depth;
  const bool shaped = bom.bandwidth > 0;

  CompiledProgram prog;
  prog.model = model.name;
  prog.threat = opts.threat;
  prog.bom = bom;
  prog.warnings = flows.warnings;

  // DRAM allocation: input, then per layer its weights and ofm
  const size_t n = model.layers.size();
  std::vector<Tensor> ofm(n), weights(n);
  Tensor input;
  std::vector<uint32_t> need(n + 1, 0);  // bytes each tensor must span; index 0 = model input
  need[0] = r64(model.layers[0].input_bytes());
  for (size_t i = 0; i < n; ++i) need[i + 1] = std::max(r64(model.layers[i].output_bytes()), plans[i].ofm_bytes());
  for (size_t i = 0; i < n; ++i) {
    const LayerSpec& l = model.layers[i];
    const uint32_t span = l.kind == LayerKind::Add ? r64(plans[i].out_bytes) : plans[i].in_half;
    need[i] = std::max(need[i], span);
    if (l.kind == LayerKind::Add) need[size_t(l.skip_from) + 1] = std::max(need[size_t(l.skip_from) + 1], span);
  }
  uint64_t cursor = grant.dram_base;
  auto alloc = [&](uint32_t bytes) {
    Tensor t{uint32_t(cursor), r64(bytes)};
    cursor += t.alloc;
    if (cursor > uint64_t(grant.dram_base) + grant.dram_len)
      throw Error(Error::Code::RangeOverflow, "model does not fit the tenant DRAM window");
    return t;
  };
  input = alloc(need[0]);
  for (size_t i = 0; i < n; ++i) {
    if (model.layers[i].has_weights()) weights[i] = alloc(plans[i].n_oc * plans[i].n_ic * plans[i].w_half);
    ofm[i] = alloc(need[i + 1]);
  }
  auto segment = [&](const Tensor& t, uint32_t idx) {
    DataSegment s;
    s.addr = t.addr;
    s.bytes.resize(t.alloc);
    fill_synthetic({reinterpret_cast<int8_t*>(s.bytes.data()), s.bytes.size()},
                   synthetic_seed(model.name, opts.tenant_id, idx));
    prog.data.push_back(std::move(s));
  };
  segment(input, 0);
  for (size_t i = 0; i < n; ++i)
    if (model.layers[i].has_weights()) segment(weights[i], uint32_t(i + 1));

  Emitter e;
  const uint32_t bw_value = uint32_t(opts.bandwidth ? opts.bandwidth : (bom.bandwidth ? bom.bandwidth : grant.bandwidth));
  e.emit(SetConfig{ConfigReg::QueueDepth, bom.queue_depth});
  for (int k = 0; k < kNumSpadKinds; ++k)
    e.emit(SetConfig{ConfigReg::SpadQuota, uint32_t(k) << 24 | bom.spad[k] / kRegionBytes});
  e.emit(SetConfig{ConfigReg::ExecTiles, bom.exec_tiles});
  e.emit(SetConfig{ConfigReg::Bandwidth, bw_value});
  e.emit(SetConfig{ConfigReg::AddrRange, (grant.dram_base >> 16) << 16 | (grant.dram_len >> 16)});
  e.emit(SetConfig{ConfigReg::ShaperEn, shaped ? 1u : 0u});
  for (const auto& i : e.code) prog.config_writes.push_back(std::get<SetConfig>(i));

  auto priv = [](Label l) { return l == Label::Private; };
  auto load = [&](SpadKind k, uint32_t spad_off, const Tensor& t, uint32_t off, uint32_t bytes, Label lab) {
    const DramRange d = equalize_transfer(t.addr + off, bytes, cfg.burst_bytes);
    e.emit(Load{make_variant(shaped, priv(lab)), {k, spad_off, d.len}, d, false}, lab);
    return SpadRange{k, spad_off, d.len};
  };
  auto store = [&](uint32_t spad_off, const Tensor& t, uint32_t off, uint32_t bytes, Label lab) {
    const DramRange d = equalize_transfer(t.addr + off, bytes, cfg.burst_bytes);
    e.emit(Store{make_variant(shaped, priv(lab)), d, {SpadKind::Output, spad_off, d.len}, false});
    return SpadRange{SpadKind::Output, spad_off, d.len};
  };

  for (size_t li = 0; li < n; ++li) {
    const LayerSpec& l = model.layers[li];
    const Plan& p = plans[li];
    const LayerLabels& lab = flows.layers[li];
    const Tensor& src = li == 0 ? input : ofm[li - 1];
    e.fence_next = true;
    prog.layer_starts.push_back(e.size());

    uint32_t in_slot = 0, w_slot = 0, out_slot = 0;
    auto out_offset = [&](uint32_t tile) { return p.batched ? tile * p.out_stride : (out_slot ^= 1) * p.out_stride; };
    auto finish_tile = [&](uint32_t tile, const SpadRange& out) {
      if (p.batched) return;
      store(out.base, ofm[li], tile * p.out_stride, p.out_bytes, lab.ofm);
      if (priv(lab.ofm)) e.zeroize({SpadKind::Output, out.base, p.out_stride});
    };
    const bool ct_out = priv(lab.ofm);

    uint32_t tile = 0;
    for (uint32_t a = 0; a < p.n_oc; ++a)
      for (uint32_t b = 0; b < p.n_oh; ++b)
        for (uint32_t c = 0; c < p.n_ow; ++c, ++tile) {
          const uint32_t c0 = a * p.t.oc, r0 = b * p.t.oh, x0 = c * p.t.ow;
          const SpadRange out{SpadKind::Output, out_offset(tile), p.out_bytes};
          if (conv_like(l)) {
            const SpadRange acc{SpadKind::Accumulator, 0, p.acc_bytes};
            // naive zeroizing wipes private weights after every use, so they
            // are reloaded for each tile
            const bool can_reuse = p.n_ic == 1 && (opts.zeroize == ZeroizeMode::Optimized || !priv(lab.weights));
            const bool reuse = can_reuse && tile > 0 && c0 == (tile - 1) / (p.n_oh * p.n_ow) * p.t.oc;
            const bool reused_next = can_reuse && tile + 1 < p.tiles() && (tile + 1) / (p.n_oh * p.n_ow) == a;
            for (uint32_t k = 0; k < p.n_ic; ++k) {
              const uint32_t ic0 = k * p.t.ic;
              const uint64_t row = uint64_t(r0) * l.stride, col = uint64_t(x0) * l.stride;
              const uint64_t off = (uint64_t(ic0) * l.height + std::min<uint64_t>(row, l.height - 1)) * l.width +
                                   std::min<uint64_t>(col, l.width - 1);
              const uint32_t ibase = (in_slot ^= 1) * p.in_half;
              const SpadRange in =
                  load(SpadKind::Input, ibase, src, span_start(off, p.in_half, src), p.in_bytes, lab.ifm);
              if (!reuse) w_slot ^= 1;
              const uint32_t wbase = w_slot * p.w_half;
              SpadRange w{SpadKind::Weight, wbase, p.w_half};
              if (!reuse) w = load(SpadKind::Weight, wbase, weights[li], (a * p.n_ic + k) * p.w_half, p.w_bytes, lab.weights);
              Gemm g;
              g.reset = k == 0;
              g.constant_time = priv(lab.ifm) || priv(lab.weights) || (!g.reset && priv(lab.acc));
              g.out_base = 0;
              g.in1_base = ibase;
              g.in2_base = wbase;
              g.uop = {uint16_t(p.t.oc), uint16_t(p.t.ic), uint16_t(p.t.oh), uint16_t(p.t.ow), uint8_t(l.kernel),
                       uint8_t(l.stride)};
              e.emit(g, lab.acc);
              if (priv(lab.ifm)) e.zeroize(in);
              if (priv(lab.weights) && !reused_next) e.zeroize(w);
            }
            e.emit(Alu{priv(lab.acc), false, AluOp::Shr, out, acc, int16_t(8)}, lab.ofm);
            if (priv(lab.acc)) e.zeroize(acc);
            e.emit(Alu{ct_out, false, AluOp::Max, out, out, int16_t(0)}, lab.ofm);
          } else {
            const uint64_t off = (uint64_t(c0) * l.height + uint64_t(r0) * (l.kind == LayerKind::MaxPool ? 2 : 1)) * l.width;
            const uint32_t ibase = (in_slot ^= 1) * p.in_half;
            SpadRange in;
            if (l.kind == LayerKind::Add) {
              const Tensor& skip = ofm[size_t(l.skip_from)];
              const uint32_t len = r64(p.out_bytes);
              const SpadRange a0 = load(SpadKind::Input, ibase, src, span_start(off, len, src), p.out_bytes, lab.ifm);
              const SpadRange a1 =
                  load(SpadKind::Input, ibase + p.out_bytes, skip, span_start(off, len, skip), p.out_bytes, lab.skip);
              in = {SpadKind::Input, ibase, a1.end() - a0.base};
              e.emit(Alu{priv(lab.acc), false, AluOp::Add, out, {SpadKind::Input, ibase, 2 * p.out_bytes}, std::nullopt},
                     lab.ofm);
              e.emit(Alu{ct_out, false, AluOp::Max, out, out, int16_t(0)}, lab.ofm);
            } else {
              in = load(SpadKind::Input, ibase, src, span_start(off, p.in_half, src), p.in_bytes, lab.ifm);
              const SpadRange opnd{SpadKind::Input, ibase, p.in_bytes};
              if (l.kind == LayerKind::MaxPool)
                e.emit(Alu{priv(lab.acc), false, AluOp::Pool2x2, out, opnd, int16_t(2 * p.t.ow)}, lab.ofm);
              else
                e.emit(Alu{priv(lab.acc), false, AluOp::Max, out, opnd, int16_t(0)}, lab.ofm);
            }
            if ((priv(lab.ifm) || priv(lab.skip))) e.zeroize(in);
          }
          finish_tile(tile, out);
        }
    if (p.batched) {
      const SpadRange s = store(0, ofm[li], 0, p.ofm_bytes(), lab.ofm);
      if (priv(lab.ofm)) e.zeroize(s);
    }
  }
  e.emit(Finish{});

  if (opts.zeroize == ZeroizeMode::Optimized) {
    const auto drop = redundant_zeroizes(e);
    Emitter kept;
    std::vector<uint32_t> remap(e.code.size() + 1, 0);
    for (size_t i = 0; i < e.code.size(); ++i) {
      remap[i] = kept.size();
      if (drop[i]) continue;
      kept.code.push_back(e.code[i]);
      kept.wlabel.push_back(e.wlabel[i]);
    }
    remap[e.code.size()] = kept.size();
    for (auto& s : prog.layer_starts) s = remap[s];
    for (auto lp : e.labels)
      if (!drop[lp.index]) {
        lp.index = remap[lp.index];
        kept.labels.push_back(lp);
      }
    e = std::move(kept);
  }

  prog.instructions = std::move(e.code);
  prog.label_map = std::move(e.labels);
  prog.grant = grant;
  prog.output = {ofm[n - 1].addr, uint32_t(model.layers[n - 1].output_bytes()), {}};
  prog.stats = instruction_mix(prog.instructions);
  if (auto v = validate(prog.instructions, grant))
    throw Error(Error::Code::RangeOverflow, "internal: instruction " + std::to_string(v->index) + " " + v->reason);
  return prog;
}

}  // namespace sde
