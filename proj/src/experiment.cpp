#include "sde/experiment.hpp"

#include <algorithm>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

namespace sde {

RunOutput run_model(const ModelSpec& model, const CompileOptions& opts, bool checked) {
  RunOutput out;
  out.program = compile(model, opts);
  Engine e(opts.cfg, opts.threat.sharing, EngineOptions{checked, LogLevel::Off, true});
  e.admit(out.program);
  out.report = e.run();
  out.trace = e.trace();
  return out;
}

std::vector<uint64_t> layer_durations(const TenantReport& r) {
  std::vector<uint64_t> d;
  const auto& s = r.layer_start_cycles;
  for (size_t i = 0; i < s.size(); ++i) d.push_back((i + 1 < s.size() ? s[i + 1] : r.end_cycle) - s[i]);
  return d;
}

TimingProfiles profile_library(uint32_t scale, const ThreatModel& threat, const AcceleratorConfig& cfg) {
  static std::mutex mu;
  static std::map<std::string, TimingProfiles> cache;
  std::ostringstream key;
  key << scale << threat.code() << int(threat.sharing) << cfg.dram.slot_cycles << int(cfg.cipher) << cfg.bandwidth
      << "," << cfg.window_cycles << "," << cfg.burst_bytes;
  {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(key.str()); it != cache.end()) return it->second;
  }
  const auto& names = catalog_names();
  std::vector<std::vector<uint64_t>> per(names.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < names.size(); ++i) {
    CompileOptions o;
    o.threat = threat;
    o.cfg = cfg;
    per[i] = layer_durations(run_model(catalog_model(names[i], scale), o).report.tenants.at(0));
  }
  TimingProfiles p;
  p.max_depth = 0;
  for (const auto& d : per) {
    p.durations.insert(p.durations.end(), d.begin(), d.end());
    p.max_depth = std::max<uint32_t>(p.max_depth, uint32_t(d.size()));
  }
  std::lock_guard<std::mutex> lock(mu);
  cache.emplace(key.str(), p);
  return p;
}

const char* to_string(AttackMode m) { return m == AttackMode::Shaped ? "shaped" : "unshaped"; }

BoundaryStudy boundary_study(const ObservedTrace& trace, const std::vector<BoundaryLabel>& labels, AttackMode mode,
                             const TimingProfiles* profiles, uint64_t tolerance) {
  if (!labels.empty() && labels.size() != trace.truth.size())
    throw Error(Error::Code::DimensionMismatch, "boundary labels do not match the trace's boundaries");
  if (mode == AttackMode::Shaped && !profiles)
    throw Error(Error::Code::InvalidConfig, "shaped detection needs timing profiles");
  BoundaryStudy s;
  s.attack = mode;
  std::vector<BoundaryCandidate> c =
      mode == AttackMode::Unshaped ? raw_candidates(trace) : timing_candidates(trace, *profiles, &s.enumeration);
  score_candidates(trace, c);
  s.candidates = c.size();

  std::vector<uint64_t> easy, hard;
  for (size_t i = 0; i < trace.truth.size(); ++i)
    (labels.empty() || labels[i] == BoundaryLabel::Easy ? easy : hard).push_back(trace.truth[i]);
  auto accepted_at = [&](double th) {
    std::vector<uint64_t> w;
    for (const auto& x : c)
      if (accepted(x, th)) w.push_back(x.window);
    return w;
  };
  const auto every = accepted_at(-1);
  s.all = evaluate(every, trace.truth, tolerance);
  s.easy = evaluate(every, easy, tolerance, hard);
  for (double th : {0.0, 0.25, 0.5, kDefaultThreshold, 2.0, 4.0}) {
    const DetectionReport r = evaluate(accepted_at(th), trace.truth, tolerance);
    s.sweep.push_back({th, r.predicted.size(), r.precision, r.recall});
  }
  return s;
}

namespace {

nlohmann::json precision_json(const std::optional<double>& p, bool capped) {
  if (!p || capped) return "NA";
  return *p;
}

}  // namespace

nlohmann::json to_json(const BoundaryStudy& s) {
  nlohmann::json j;
  j["model"] = s.model;
  j["threat"] = s.threat;
  j["mode"] = to_string(s.mode);
  j["attack"] = to_string(s.attack);
  j["tolerance"] = s.all.tolerance;
  j["boundaries"] = {{"easy", s.easy.truth.size()}, {"all", s.all.truth.size()}};
  const bool capped = s.enumeration.capped;
  j["easy"] = {{"precision", precision_json(s.easy.precision, capped)}, {"recall", s.easy.recall}};
  j["all"] = {{"precision", precision_json(s.all.precision, capped)}, {"recall", s.all.recall}};
  j["candidates"] = s.candidates;
  j["false_positives"] = s.all.false_positives;
  j["inflation"] = s.inflation();
  j["enumeration"] = {{"sums", s.enumeration.sums}, {"capped", capped}, {"cap", kEnumerationCap}};
  j["sweep"] = nlohmann::json::array();
  for (const auto& p : s.sweep)
    j["sweep"].push_back({{"threshold", p.threshold},
                          {"predicted", p.predicted},
                          {"precision", precision_json(p.precision, false)},
                          {"recall", p.recall}});
  return j;
}

namespace {

Instruction strip_security(Instruction i) {
  std::visit(
      [](auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Load> || std::is_same_v<T, Store>) x.variant = MemVariant::Plain;
        if constexpr (std::is_same_v<T, Gemm> || std::is_same_v<T, Alu>) x.constant_time = false;
        if constexpr (std::is_same_v<T, SetConfig>) x.value = 0;
      },
      i);
  return i;
}

std::vector<std::string> threat_list(const SweepSpec& spec, bool secure_only) {
  std::vector<std::string> out;
  for (const auto& t : spec.threats)
    if (!secure_only || t != "pp") out.push_back(t);
  return out;
}

}  // namespace

bool differs_only_in_security(const std::vector<Instruction>& secure, const std::vector<Instruction>& plain) {
  std::vector<Instruction> s;
  for (const auto& i : secure)
    if (!std::holds_alternative<Zeroize>(i)) s.push_back(strip_security(i));
  if (s.size() != plain.size()) return false;
  for (size_t k = 0; k < s.size(); ++k)
    if (s[k] != strip_security(plain[k])) return false;
  return true;
}

std::vector<PerfRow> overhead_sweep(const SweepSpec& spec) {
  std::vector<PerfRow> rows;
  for (const auto& m : spec.models)
    for (auto mode : spec.modes)
      for (auto cipher : spec.ciphers)
        for (const auto& t : spec.threats) rows.push_back({m, mode, t, cipher, 0, 0});
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < rows.size(); ++i) {
    CompileOptions o;
    o.threat = parse_threat(rows[i].threat, rows[i].mode);
    o.cfg = spec.cfg;
    o.cfg.cipher = rows[i].cipher;
    rows[i].cycles = run_model(catalog_model(rows[i].model, spec.scale), o).report.tenants.at(0).cycles;
  }
  for (auto& r : rows)
    for (const auto& b : rows)
      if (b.threat == "pp" && b.model == r.model && b.mode == r.mode && b.cipher == r.cipher) r.baseline = b.cycles;
  return rows;
}

std::vector<ZeroizeRow> zeroize_study(const SweepSpec& spec) {
  std::vector<ZeroizeRow> rows;
  for (const auto& m : spec.models)
    for (const auto& t : threat_list(spec, true)) rows.push_back({m, t});
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < rows.size(); ++i) {
    const ModelSpec model = catalog_model(rows[i].model, spec.scale);
    CompileOptions o;
    o.threat = parse_threat(rows[i].threat, spec.modes.front());
    o.cfg = spec.cfg;
    o.zeroize = ZeroizeMode::Naive;
    const auto naive = compile(model, o).stats;
    o.zeroize = ZeroizeMode::Optimized;
    const auto opt = compile(model, o).stats;
    rows[i].naive_count = naive.zeroize_count;
    rows[i].naive_bytes = naive.zeroize_bytes;
    rows[i].opt_count = opt.zeroize_count;
    rows[i].opt_bytes = opt.zeroize_bytes;
  }
  return rows;
}

std::vector<CodeSizeRow> code_size_study(const SweepSpec& spec) {
  struct Job {
    std::string model;
    Sharing mode;
  };
  std::vector<Job> jobs;
  for (const auto& m : spec.models)
    for (auto mode : spec.modes) jobs.push_back({m, mode});
  const auto threats = spec.threats;
  std::vector<std::vector<CodeSizeRow>> per(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < jobs.size(); ++i) {
    const ModelSpec model = catalog_model(jobs[i].model, spec.scale);
    CompileOptions o;
    o.cfg = spec.cfg;
    o.threat = parse_threat("pp", jobs[i].mode);
    const CompiledProgram pp = compile(model, o);
    const uint64_t pp_bytes = write_binary(pp.instructions, pp.grant.tenant_id).size();
    for (const auto& t : threats) {
      o.threat = parse_threat(t, jobs[i].mode);
      const CompiledProgram p = compile(model, o);
      CodeSizeRow r;
      r.model = jobs[i].model;
      r.mode = jobs[i].mode;
      r.threat = t;
      r.bytes = write_binary(p.instructions, p.grant.tenant_id).size();
      r.pp_bytes = pp_bytes;
      r.mix = p.stats.mix;
      r.only_zeroize_and_variants = differs_only_in_security(p.instructions, pp.instructions);
      per[i].push_back(std::move(r));
    }
  }
  std::vector<CodeSizeRow> rows;
  for (auto& v : per) rows.insert(rows.end(), v.begin(), v.end());
  return rows;
}

namespace {

CompiledProgram hand_program(std::vector<Instruction> code, const AcceleratorConfig& cfg, Sharing mode,
                             uint8_t tenant) {
  CompiledProgram p;
  p.model = "probe";
  p.grant = default_grant(cfg, mode, tenant);
  p.instructions = std::move(code);
  p.instructions.push_back(Finish{});
  return p;
}

uint64_t run_probe(const CompiledProgram& p, const AcceleratorConfig& cfg) {
  Engine e(cfg, Sharing::Temporal, EngineOptions{false, LogLevel::Off, true});
  e.admit(p);
  return e.run().tenants.at(0).cycles;
}

uint32_t r64(uint32_t n) { return (n + 63) / 64 * 64; }

}  // namespace

uint64_t probe_gemm(const std::vector<uint8_t>& weights, bool constant_time, const AcceleratorConfig& cfg) {
  const TileLoop u{16, 8, 4, 4, 3, 1};
  const uint32_t ib = r64(u.input_bytes()), wb = r64(u.weight_bytes());
  Gemm g;
  g.constant_time = constant_time;
  g.reset = true;
  g.uop = u;
  auto p = hand_program({Load{MemVariant::Plain, {SpadKind::Input, 0, ib}, {0, ib, {}}, false},
                         Load{MemVariant::Plain, {SpadKind::Weight, 0, wb}, {4096, wb, {}}, false}, g},
                        cfg, Sharing::Temporal, 0);
  std::vector<uint8_t> in(ib);
  for (size_t i = 0; i < in.size(); ++i) in[i] = uint8_t(i * 37 + 11);
  std::vector<uint8_t> w = weights;
  w.resize(wb, 0);
  p.data = {{0, in}, {4096, w}};
  return run_probe(p, cfg);
}

uint64_t probe_alu(const std::vector<uint8_t>& input, bool constant_time, const AcceleratorConfig& cfg) {
  const uint32_t n = r64(uint32_t(input.size()));
  std::vector<uint8_t> in = input;
  in.resize(n, 0);
  auto p = hand_program({Load{MemVariant::Plain, {SpadKind::Input, 0, n}, {0, n, {}}, false},
                         Alu{constant_time, false, AluOp::Max, {SpadKind::Output, 0, n}, {SpadKind::Input, 0, n},
                             int16_t(0)}},
                        cfg, Sharing::Temporal, 0);
  p.data = {{0, in}};
  return run_probe(p, cfg);
}

FuzzOutcome fuzz_isolation(uint64_t seed, size_t n, Sharing mode, uint8_t tenant, const AcceleratorConfig& cfg) {
  std::mt19937_64 rng(seed);
  const TenantGrant grant = default_grant(cfg, mode, tenant);
  auto spad = [&](SpadKind k) {
    const uint32_t q = grant.spad_quota[size_t(k)];
    const uint32_t len = 4 * uint32_t(1 + rng() % 256) + (rng() % 8 == 0 ? uint32_t(rng() % 3) : 0);
    uint32_t base = uint32_t(rng() % (q + q / 4));
    if (rng() % 2) base &= ~63u;
    return SpadRange{k, base, len};
  };
  auto dram = [&](uint32_t len) {
    const uint32_t base = rng() % 3 == 0 ? uint32_t(rng() % cfg.dram_bytes)
                                         : grant.dram_base + uint32_t(rng() % (uint64_t(grant.dram_len) + 8192)) - 4096;
    return DramRange{base & ~63u, len, {}};
  };
  std::vector<Instruction> code;
  for (size_t i = 0; i < n; ++i) {
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
        const SpadRange s = spad(SpadKind::Input);
        SpadRange o = spad(SpadKind::Output);
        o.len = s.len;
        code.push_back(Alu{true, false, AluOp::Add, o, s, std::nullopt});
      }
    }
  }
  std::set<int64_t> want, got;
  for (size_t i = 0; i < code.size(); ++i)
    if (validate(std::span(&code[i], 1), grant)) want.insert(int64_t(i));
  Engine e(cfg, mode, EngineOptions{false, LogLevel::Off, true});
  e.admit(hand_program(code, cfg, mode, tenant));
  for (const auto& t : e.run().traps) got.insert(t.index);
  FuzzOutcome f;
  f.instructions = code.size();
  f.expected = want.size();
  f.trapped = got.size();
  for (auto i : want) f.missed += !got.count(i);
  for (auto i : got) f.false_traps += !want.count(i);
  return f;
}

nlohmann::json to_json(const PerfRow& r) {
  return {{"model", r.model},       {"mode", to_string(r.mode)}, {"threat", r.threat},
          {"cipher", to_string(r.cipher)}, {"cycles", r.cycles},       {"baseline_cycles", r.baseline},
          {"overhead", r.overhead()}};
}

nlohmann::json to_json(const ZeroizeRow& r) {
  return {{"model", r.model},
          {"threat", r.threat},
          {"naive", {{"count", r.naive_count}, {"bytes", r.naive_bytes}}},
          {"optimized", {{"count", r.opt_count}, {"bytes", r.opt_bytes}}},
          {"count_reduction", r.count_reduction()},
          {"bytes_reduction", r.bytes_reduction()}};
}

nlohmann::json to_json(const CodeSizeRow& r) {
  return {{"model", r.model},       {"mode", to_string(r.mode)}, {"threat", r.threat},
          {"bytes", r.bytes},       {"pp_bytes", r.pp_bytes},    {"ratio", r.ratio()},
          {"mix", r.mix},           {"only_zeroize_and_variants", r.only_zeroize_and_variants}};
}

}  // namespace sde
