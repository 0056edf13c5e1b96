// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are pinned
// below and never taken from the command line.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "sde/experiment.hpp"

using namespace sde;

namespace {

constexpr double kVggPrecisionMax = 0.05;
constexpr double kResnetInflationMin = 100.0;
constexpr double kZeroizeCountCut = 0.10;
constexpr double kZeroizeBytesCut = 0.06;
constexpr double kCodeRatioMin = 1.00, kCodeRatioMax = 1.10;
constexpr double kTemporalSsMin = 0.02, kTemporalSsMax = 0.45;
constexpr int kDistributions = 100;

const std::vector<std::string> kVgg = {"vgg11", "vgg16"};
const std::vector<std::string> kResnet = {"resnet18", "resnet34", "resnet50"};
const std::vector<std::string> kPlain = {"alexnet", "vgg11", "vgg16"};

struct Line {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail = what;
    pass = false;
  }
};

std::string fmt(double x) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", x);
  return b;
}

std::vector<Sharing> kModes = {Sharing::Temporal, Sharing::Spatial};

uint64_t shaper_bytes_per_window(const CompiledProgram& p, const AcceleratorConfig& cfg) {
  uint64_t bw = 0;
  for (const auto& s : p.config_writes)
    if (s.reg == ConfigReg::Bandwidth) bw = s.value;
  // bytes/s times the window length at the 100 MHz clock
  return bw * cfg.window_cycles / 100'000'000;
}

Line shaped_constancy(uint32_t scale, const AcceleratorConfig& cfg) {
  Line l;
  size_t windows = 0, runs = 0;
  for (const auto& m : catalog_names())
    for (auto mode : kModes)
      for (const char* t : {"ps", "ss"}) {
        CompileOptions o;
        o.threat = parse_threat(t, mode);
        o.cfg = cfg;
        const RunOutput r = run_model(catalog_model(m, scale), o);
        const uint64_t expect = shaper_bytes_per_window(r.program, cfg);
        const auto [first, last] = r.trace.complete_shaped_windows(0);
        const auto w = r.trace.windows(0);
        l.require(last > first, m + " " + t + " has no complete shaped window");
        for (uint64_t i = first; i < last; ++i)
          l.require(w[i].read_bytes == expect && w[i].write_bytes == expect,
                    m + " " + t + " " + to_string(mode) + " window " + std::to_string(i) + " read " +
                        std::to_string(w[i].read_bytes) + " write " + std::to_string(w[i].write_bytes) +
                        " expected " + std::to_string(expect));
        windows += last - first;
        ++runs;
      }
  if (l.pass) l.detail = std::to_string(runs) + " runs, " + std::to_string(windows) + " windows exact";
  return l;
}

Line boundary_detection(uint32_t scale, const AcceleratorConfig& cfg) {
  Line l;
  for (const auto& m : kPlain) {
    CompileOptions o;
    o.threat = parse_threat("pp");
    o.cfg = cfg;
    const ModelSpec spec = catalog_model(m, scale);
    const RunOutput r = run_model(spec, o);
    const BoundaryStudy s = boundary_study(observe(r.trace, 0), spec.boundary_labels, AttackMode::Unshaped);
    l.require(s.all.precision.value_or(0) == 1.0 && s.all.recall == 1.0,
              m + " unshaped precision " + fmt(s.all.precision.value_or(-1)) + " recall " + fmt(s.all.recall));
  }
  double worst_precision = 0, least_inflation = 1e30;
  for (auto mode : kModes)
    for (const char* t : {"ps", "ss"}) {
      const ThreatModel threat = parse_threat(t, mode);
      const TimingProfiles prof = profile_library(scale, threat, cfg);
      for (const auto& m : catalog_names()) {
        const bool vgg = std::count(kVgg.begin(), kVgg.end(), m) > 0;
        const bool res = std::count(kResnet.begin(), kResnet.end(), m) > 0;
        if (!vgg && !res) continue;
        CompileOptions o;
        o.threat = threat;
        o.cfg = cfg;
        const ModelSpec spec = catalog_model(m, scale);
        const RunOutput r = run_model(spec, o);
        const BoundaryStudy s = boundary_study(observe(r.trace, 0), spec.boundary_labels, AttackMode::Shaped, &prof);
        const std::string tag = m + " " + t + " " + to_string(mode);
        l.require(s.all.recall == 1.0, tag + " shaped recall " + fmt(s.all.recall));
        if (vgg) {
          const double p = s.all.precision.value_or(0);
          worst_precision = std::max(worst_precision, p);
          l.require(p <= kVggPrecisionMax, tag + " shaped precision " + fmt(p));
        }
        if (res) {
          least_inflation = std::min(least_inflation, s.inflation());
          l.require(s.inflation() >= kResnetInflationMin, tag + " inflation " + fmt(s.inflation()));
        }
      }
    }
  if (l.pass)
    l.detail = "unshaped P=R=1; shaped recall 1, VGG precision <= " + fmt(worst_precision) +
               ", ResNet inflation >= " + fmt(least_inflation) + "x";
  return l;
}

Line zeroize(uint32_t scale, const AcceleratorConfig& cfg) {
  Line l;
  SweepSpec spec;
  spec.models = {"alexnet", "vgg11", "vgg16"};
  spec.scale = scale;
  spec.cfg = cfg;
  spec.modes = {Sharing::Temporal};
  const auto rows = zeroize_study(spec);
  auto row = [&](const std::string& m, const std::string& t) {
    return *std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.model == m && r.threat == t; });
  };
  double min_count = 1, min_bytes = 1;
  for (const auto& m : kVgg)
    for (const char* t : {"ps", "ss"}) {
      const ZeroizeRow r = row(m, t);
      min_count = std::min(min_count, r.count_reduction());
      min_bytes = std::min(min_bytes, r.bytes_reduction());
      l.require(r.count_reduction() >= kZeroizeCountCut, m + " " + t + " count cut " + fmt(r.count_reduction()));
      l.require(r.bytes_reduction() >= kZeroizeBytesCut, m + " " + t + " bytes cut " + fmt(r.bytes_reduction()));
    }
  for (const auto& m : spec.models) {
    const ZeroizeRow model = row(m, "ps"), input = row(m, "sp");
    l.require(model.count_reduction() > input.count_reduction(),
              m + " private-model count cut " + fmt(model.count_reduction()) + " <= private-input " +
                  fmt(input.count_reduction()));
  }
  if (l.pass) l.detail = "VGG private-model cut count >= " + fmt(min_count) + ", bytes >= " + fmt(min_bytes);
  return l;
}

Line code_size(uint32_t scale, const AcceleratorConfig& cfg) {
  Line l;
  SweepSpec spec;
  spec.models = catalog_names();
  spec.scale = scale;
  spec.cfg = cfg;
  double hi = 0, lo = 1e9;
  for (const auto& r : code_size_study(spec)) {
    const std::string tag = r.model + " " + r.threat + " " + to_string(r.mode);
    lo = std::min(lo, r.ratio());
    hi = std::max(hi, r.ratio());
    l.require(r.ratio() >= kCodeRatioMin && r.ratio() <= kCodeRatioMax, tag + " ratio " + fmt(r.ratio()));
    l.require(r.only_zeroize_and_variants, tag + " differs from pp beyond zeroize and variants");
  }
  if (l.pass) l.detail = "ratio in [" + fmt(lo) + ", " + fmt(hi) + "], mix audit clean";
  return l;
}

Line overhead(uint32_t scale, const AcceleratorConfig& cfg, std::vector<PerfRow>* out) {
  Line l;
  SweepSpec spec;
  spec.models = catalog_names();
  spec.scale = scale;
  spec.cfg = cfg;
  const auto rows = overhead_sweep(spec);
  if (out) *out = rows;
  auto get = [&](const std::string& m, Sharing mode, const std::string& t, Cipher c) {
    return *std::find_if(rows.begin(), rows.end(), [&](const PerfRow& r) {
      return r.model == m && r.mode == mode && r.threat == t && r.cipher == c;
    });
  };
  double ss_lo = 1e9, ss_hi = -1;
  for (const auto& m : spec.models)
    for (auto mode : kModes)
      for (auto c : spec.ciphers) {
        const std::string tag = m + " " + to_string(mode) + " " + to_string(c);
        const double pp = get(m, mode, "pp", c).overhead(), sp = get(m, mode, "sp", c).overhead();
        const double ps = get(m, mode, "ps", c).overhead(), ss = get(m, mode, "ss", c).overhead();
        l.require(pp == 0.0, tag + " pp overhead " + fmt(pp));
        l.require(pp <= sp && sp <= ps && sp <= ss,
                  tag + " ordering pp " + fmt(pp) + " sp " + fmt(sp) + " ps " + fmt(ps) + " ss " + fmt(ss));
        if (mode == Sharing::Temporal) {
          ss_lo = std::min(ss_lo, ss);
          ss_hi = std::max(ss_hi, ss);
          l.require(ss >= kTemporalSsMin && ss <= kTemporalSsMax, tag + " temporal ss overhead " + fmt(ss));
        }
      }
  for (const auto& r : rows)
    if (r.cipher == Cipher::Aes128) {
      const PerfRow q = get(r.model, r.mode, r.threat, Cipher::Qarma128);
      l.require(r.cycles >= q.cycles, r.model + " " + r.threat + " aes " + std::to_string(r.cycles) + " < qarma " +
                                          std::to_string(q.cycles));
    }
  for (const auto& m : kPlain)
    for (const char* t : {"sp", "ps", "ss"})
      for (auto c : spec.ciphers) {
        const double sp = get(m, Sharing::Spatial, t, c).overhead(), tp = get(m, Sharing::Temporal, t, c).overhead();
        l.require(sp <= tp, m + " " + t + " spatial " + fmt(sp) + " > temporal " + fmt(tp));
      }
  if (l.pass)
    l.detail = "orderings hold, temporal ss in [" + fmt(100 * ss_lo) + "%, " + fmt(100 * ss_hi) + "%]";
  return l;
}

Line isolation(uint32_t scale, const AcceleratorConfig& cfg) {
  Line l;
  // (a) fuzzed programs trap exactly where validation fails
  size_t flagged = 0;
  for (auto mode : kModes)
    for (uint64_t seed = 1; seed <= 4; ++seed) {
      const FuzzOutcome f = fuzz_isolation(seed, 2500, mode, uint8_t(seed % 4), cfg);
      flagged += f.expected;
      l.require(f.expected > 0 && f.missed == 0 && f.false_traps == 0,
                "fuzz seed " + std::to_string(seed) + " missed " + std::to_string(f.missed) + " false " +
                    std::to_string(f.false_traps));
    }
  // (b) a released scratchpad reads back as zeros to the next tenant
  for (auto mode : kModes) {
    Engine e(cfg, mode, EngineOptions{true, LogLevel::Off, false});
    CompileOptions o;
    o.threat = parse_threat("ss", mode);
    o.cfg = cfg;
    const CompiledProgram p = compile(catalog_model("vgg11", scale), o);
    e.admit(p);
    e.run();
    e.teardown(0);
    CompiledProgram probe;
    probe.grant = default_grant(cfg, mode, 0);
    e.admit(probe);
    for (int k = 0; k < kNumSpadKinds; ++k) {
      const AccessResult a = e.access_scratchpad(0, SpadKind(k), 0, probe.grant.spad_quota[k], false);
      l.require(!a.trapped && std::all_of(a.data.begin(), a.data.end(), [](uint8_t x) { return x == 0; }),
                std::string("post-teardown read of ") + to_string(SpadKind(k)) + " not zero");
    }
  }
  // (c) four spatial tenants see exactly what they see alone
  for (const char* m : {"alexnet", "resnet18"}) {
    const char* codes[] = {"pp", "sp", "ps", "ss"};
    std::vector<CompiledProgram> progs;
    std::vector<RunOutput> solo;
    for (uint8_t t = 0; t < 4; ++t) {
      CompileOptions o;
      o.threat = parse_threat(codes[t], Sharing::Spatial);
      o.tenant_id = t;
      o.cfg = cfg;
      solo.push_back(run_model(catalog_model(m, scale), o, true));
      progs.push_back(solo.back().program);
    }
    Engine all(cfg, Sharing::Spatial, EngineOptions{true, LogLevel::Off, true});
    for (const auto& p : progs) all.admit(p);
    const RunReport r = all.run();
    for (uint8_t t = 0; t < 4; ++t) {
      const TenantReport &a = r.tenants.at(t), &b = solo[t].report.tenants.at(0);
      const auto wa = all.trace().windows(t), wb = solo[t].trace.windows(t);
      bool same = a.cycles == b.cycles && a.start_cycle == b.start_cycle &&
                  a.layer_start_cycles == b.layer_start_cycles && a.output == b.output;
      for (size_t i = 0; i < std::min(wa.size(), wb.size()); ++i)
        same = same && wa[i].read_bytes == wb[i].read_bytes && wa[i].write_bytes == wb[i].write_bytes;
      l.require(same, std::string(m) + " tenant " + std::to_string(t) + " differs with neighbours");
    }
  }
  // (d) taint oracle over every catalog model and threat configuration
  size_t runs = 0;
  const auto threats = all_threats();
  for (const auto& m : catalog_names())
    for (const auto& th : threats) {
      CompileOptions o;
      o.threat = th;
      o.cfg = cfg;
      const RunOutput r = run_model(catalog_model(m, scale), o, true);
      ++runs;
      l.require(r.report.violations.empty() && r.report.traps.empty(),
                m + " " + th.code() + " " + to_string(th.sharing) + " violations " +
                    std::to_string(r.report.violations.size()));
    }
  if (l.pass)
    l.detail = std::to_string(flagged) + " fuzz faults all trapped, teardown clean, 4-tenant identical, " +
               std::to_string(runs) + " oracle runs clean";
  return l;
}

Line constant_time(const AcceleratorConfig& cfg) {
  Line l;
  std::set<uint64_t> gemm, alu;
  std::mt19937_64 rng(7);
  const size_t wb = 16 * 8 * 9;
  for (int d = 0; d < kDistributions; ++d) {
    std::vector<uint8_t> w(wb), a(1024);
    const double density = d == 0 ? 0.0 : double(d) / kDistributions;
    std::bernoulli_distribution keep(density);
    for (auto& x : w) x = keep(rng) ? uint8_t(rng() | 1) : 0;
    for (auto& x : a) x = keep(rng) ? uint8_t(rng() | 1) : 0;
    gemm.insert(probe_gemm(w, true, cfg));
    alu.insert(probe_alu(a, true, cfg));
  }
  l.require(gemm.size() == 1, "GEMM_C took " + std::to_string(gemm.size()) + " distinct cycle counts");
  l.require(alu.size() == 1, "ALU_C took " + std::to_string(alu.size()) + " distinct cycle counts");
  const uint64_t gz = probe_gemm(std::vector<uint8_t>(wb, 0), false, cfg);
  const uint64_t gd = probe_gemm(std::vector<uint8_t>(wb, 3), false, cfg);
  const uint64_t az = probe_alu(std::vector<uint8_t>(1024, 0), false, cfg);
  const uint64_t ad = probe_alu(std::vector<uint8_t>(1024, 5), false, cfg);
  l.require(gz != gd, "plain GEMM ignores all-zero weights");
  l.require(az != ad, "plain ALU ignores all-zero input");
  if (l.pass)
    l.detail = std::to_string(kDistributions) + " distributions, GEMM_C " + std::to_string(*gemm.begin()) +
               " cycles, ALU_C " + std::to_string(*alu.begin()) + "; plain all-zero " + std::to_string(gz) + "/" +
               std::to_string(az) + " vs dense " + std::to_string(gd) + "/" + std::to_string(ad);
  return l;
}

Line determinism(uint32_t scale, const AcceleratorConfig& cfg) {
  Line l;
  for (const char* m : {"vgg11", "resnet18"})
    for (auto mode : kModes) {
      CompileOptions o;
      o.threat = parse_threat("ss", mode);
      o.cfg = cfg;
      o.tenant_id = mode == Sharing::Spatial ? 2 : 0;
      const RunOutput a = run_model(catalog_model(m, scale), o, true);
      const RunOutput b = run_model(catalog_model(m, scale), o, true);
      const uint8_t t = o.tenant_id;
      const std::string tag = std::string(m) + " " + to_string(mode);
      l.require(write_binary(a.program.instructions, t) == write_binary(b.program.instructions, t), tag + " binary");
      l.require(a.trace.attacker_csv(t) == b.trace.attacker_csv(t), tag + " attacker trace");
      l.require(a.trace.privileged_csv(t) == b.trace.privileged_csv(t), tag + " privileged trace");
      const auto ja = to_json(boundary_study(observe(a.trace, t), {}, AttackMode::Unshaped)).dump();
      const auto jb = to_json(boundary_study(observe(b.trace, t), {}, AttackMode::Unshaped)).dump();
      l.require(ja == jb && a.report.tenants[0].cycles == b.report.tenants[0].cycles, tag + " report");
    }
  SweepSpec spec;
  spec.models = {"alexnet"};
  spec.scale = scale;
  spec.cfg = cfg;
  l.require(rows_json(overhead_sweep(spec)).dump() == rows_json(overhead_sweep(spec)).dump(), "sweep report");
  if (l.pass) l.detail = "binaries, traces and reports byte-identical across reruns";
  return l;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance"};
  uint32_t scale = 8;
  app.add_option("--scale", scale, "channel divisor")->check(CLI::Range(4, 8));
  CLI11_PARSE(app, argc, argv);
  const AcceleratorConfig cfg = AcceleratorConfig::defaults();

  struct Item {
    int id;
    const char* name;
    std::function<Line()> run;
  };
  const std::vector<Item> items = {
      {1, "shaped-trace constancy", [&] { return shaped_constancy(scale, cfg); }},
      {2, "boundary detection", [&] { return boundary_detection(scale, cfg); }},
      {3, "zeroize optimization", [&] { return zeroize(scale, cfg); }},
      {4, "code size", [&] { return code_size(scale, cfg); }},
      {5, "overhead structure", [&] { return overhead(scale, cfg, nullptr); }},
      {6, "isolation", [&] { return isolation(scale, cfg); }},
      {7, "constant-time execution", [&] { return constant_time(cfg); }},
      {8, "determinism", [&] { return determinism(scale, cfg); }},
  };
  int failed = 0;
  for (const auto& it : items) {
    Line l;
    try {
      l = it.run();
    } catch (const std::exception& e) {
      l.pass = false;
      l.detail = std::string("exception: ") + e.what();
    }
    failed += !l.pass;
    std::printf("criterion %d %-24s %s  %s\n", it.id, it.name, l.pass ? "PASS" : "FAIL", l.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
