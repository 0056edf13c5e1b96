// sdesim: compile, run, attack and sweep driver.
//
// Exit codes: 0 ok, 2 validation or compile error, 3 runtime security
// assertion, 4 IO.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "sde/bundle.hpp"
#include "sde/experiment.hpp"

using namespace sde;
using nlohmann::json;

namespace {

constexpr int kExitCompile = 2, kExitSecurity = 3, kExitIo = 4;

struct SecurityFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(Error::Code c) {
  switch (c) {
    case Error::Code::Io: return kExitIo;
    case Error::Code::Deadlock:
    case Error::Code::ResidualTaint: return kExitSecurity;
    default: return kExitCompile;
  }
}

Sharing parse_mode(const std::string& s) {
  if (s == "temporal") return Sharing::Temporal;
  if (s == "spatial") return Sharing::Spatial;
  throw Error(Error::Code::ParseError, "unknown mode '" + s + "'");
}

SpadKind parse_kind(const std::string& s) {
  for (int k = 0; k < kNumSpadKinds; ++k)
    if (s == to_string(SpadKind(k))) return SpadKind(k);
  throw Error(Error::Code::ParseError, "unknown scratchpad '" + s + "'");
}

std::string join(const std::string& dir, const std::string& name) { return (std::filesystem::path(dir) / name).string(); }

void write_json(const std::string& path, const json& j) { write_file(path, j.dump(1) + "\n"); }

template <typename Row>
std::string csv_of(const std::vector<Row>& rows) {
  // flat columns from the JSON form, nested objects joined with '.'
  std::vector<std::string> cols;
  std::vector<std::map<std::string, std::string>> table;
  for (const auto& r : rows) {
    std::map<std::string, std::string> cells;
    std::function<void(const std::string&, const json&)> walk = [&](const std::string& k, const json& v) {
      if (v.is_object()) {
        for (auto it = v.begin(); it != v.end(); ++it) walk(k.empty() ? it.key() : k + "." + it.key(), it.value());
        return;
      }
      if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
      cells[k] = v.is_string() ? v.get<std::string>() : v.dump();
    };
    walk("", to_json(r));
    table.push_back(std::move(cells));
  }
  std::ostringstream out;
  for (size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  for (auto& cells : table) {
    for (size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cells[cols[i]];
    out << "\n";
  }
  return out.str();
}

// ---- compile ----

struct CompileArgs {
  std::string model, threat = "pp", mode = "temporal", zeroize = "optimized", out, report;
  uint32_t scale = 8;
  int tenant = 0;
  uint64_t bandwidth = 0;
  std::vector<std::string> spad_size;
  uint32_t queue_depth = 0;
};

int cmd_compile(const CompileArgs& a) {
  const ModelSpec m = load_model(a.model, a.scale);
  CompileOptions o;
  o.threat = parse_threat(a.threat, parse_mode(a.mode));
  o.tenant_id = uint8_t(a.tenant);
  o.bandwidth = a.bandwidth;
  if (!a.spad_size.empty() || a.queue_depth) {
    PragmaSet p = pragmas_for(o.threat, default_grant(o.cfg, o.threat.sharing, o.tenant_id));
    for (const auto& kv : a.spad_size) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(Error::Code::ParseError, "--spad-size wants kind=bytes");
      p.spad_size[size_t(parse_kind(kv.substr(0, eq)))] = uint32_t(std::stoul(kv.substr(eq + 1)));
    }
    if (a.queue_depth) p.queue_depth = a.queue_depth;
    o.pragmas = p;
  }
  o.zeroize = ZeroizeMode::Optimized;
  const CompiledProgram opt = compile(m, o);
  o.zeroize = ZeroizeMode::Naive;
  const CompiledProgram naive = compile(m, o);
  const CompiledProgram& p = a.zeroize == "naive" ? naive : opt;
  // --out is the bundle directory or, ending in .bin, the binary inside it
  std::string dir = a.out, binary = "prog.bin";
  if (std::filesystem::path(a.out).extension() == ".bin") {
    dir = std::filesystem::path(a.out).parent_path().string();
    if (dir.empty()) dir = ".";
    binary = std::filesystem::path(a.out).filename().string();
  }
  save_bundle(p, dir, a.scale, binary);
  write_json(a.report.empty() ? join(dir, "mix.json") : a.report, mix_json(p));
  write_json(join(dir, "zeroize.json"), zeroize_json(opt, naive));
  for (const auto& w : p.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << p.model << " " << p.threat.code() << " " << to_string(p.threat.sharing) << ": "
            << p.instructions.size() << " instructions, " << p.stats.zeroize_count << " zeroize\n";
  return 0;
}

// ---- run ----

struct RunArgs {
  std::vector<std::string> progs;
  std::string model, threat = "pp", mode, cipher = "qarma128", baseline, out, log_level;
  uint32_t scale = 8;
  int tenant = 0;
  bool checked = false, strict = false;
};

int cmd_run(const RunArgs& a) {
  std::vector<CompiledProgram> progs;
  for (const auto& d : a.progs) progs.push_back(load_bundle(d));
  AcceleratorConfig cfg = AcceleratorConfig::defaults();
  cfg.cipher = parse_cipher(a.cipher);
  if (progs.empty()) {
    if (a.model.empty()) throw Error(Error::Code::ParseError, "run needs --prog or --model");
    CompileOptions o;
    o.threat = parse_threat(a.threat, parse_mode(a.mode.empty() ? "temporal" : a.mode));
    o.tenant_id = uint8_t(a.tenant);
    o.cfg = cfg;
    progs.push_back(compile(load_model(a.model, a.scale), o));
  }
  const Sharing mode = a.mode.empty() ? progs[0].threat.sharing : parse_mode(a.mode);
  const LogLevel level = a.log_level.empty() ? log_level_from_env() : parse_log_level(a.log_level);
  Engine e(cfg, mode, EngineOptions{a.checked, level, true});
  for (const auto& p : progs) e.admit(p);
  const RunReport r = e.run();

  std::map<int, uint64_t> base;
  if (!a.baseline.empty()) {
    try {
      const json doc = json::parse(read_file(a.baseline));
      for (const auto& t : doc.at("tenants"))
        base[t.at("tenant").get<int>()] = t.at("cycles").get<uint64_t>();
    } catch (const json::exception& ex) {
      throw Error(Error::Code::ParseError, a.baseline + ": " + ex.what());
    }
  }
  json j;
  j["mode"] = to_string(mode);
  j["cipher"] = to_string(cfg.cipher);
  j["total_cycles"] = r.cycles;
  j["tenants"] = json::array();
  for (size_t i = 0; i < r.tenants.size(); ++i) {
    const TenantReport& t = r.tenants[i];
    json tj = {{"tenant", t.tenant},
               {"model", progs[i].model},
               {"threat", progs[i].threat.code()},
               {"finished", t.finished},
               {"cycles", t.cycles},
               {"start_cycle", t.start_cycle},
               {"end_cycle", t.end_cycle},
               {"retired", t.retired},
               {"zeroize_count", t.zeroize_count},
               {"zeroize_cycles", t.zeroize_cycles},
               {"layer_start_cycles", t.layer_start_cycles}};
    if (base.count(int(t.tenant)) && base[int(t.tenant)])
      tj["overhead"] = double(t.cycles) / double(base[int(t.tenant)]) - 1.0;
    j["tenants"].push_back(tj);
    const std::string id = std::to_string(t.tenant);
    write_file(join(a.out, "attacker_t" + id + ".csv"), e.trace().attacker_csv(t.tenant));
    write_file(join(a.out, "privileged_t" + id + ".csv"), e.trace().privileged_csv(t.tenant));
  }
  j["traps"] = r.traps.size();
  j["violations"] = r.violations.size();
  write_json(join(a.out, "cycles.json"), j);
  if (level != LogLevel::Off) write_file(join(a.out, "events.jsonl"), e.event_log());
  for (const auto& t : j["tenants"])
    std::cout << "tenant " << t["tenant"] << " " << t["model"].get<std::string>() << " " << t["threat"].get<std::string>()
              << ": " << t["cycles"] << " cycles\n";
  if (a.strict) {
    for (const auto& t : r.traps)
      std::cerr << "trap: tenant " << int(t.tenant) << " instruction " << t.index << " cycle " << t.cycle << "\n";
    for (const auto& v : r.violations)
      std::cerr << "violation: tenant " << int(v.tenant) << " instruction " << v.index << " " << v.reason << "\n";
    if (!r.traps.empty() || !r.violations.empty()) throw SecurityFailure("security assertions failed");
    for (const auto& t : r.tenants)
      if (!t.finished) throw SecurityFailure("tenant " + std::to_string(t.tenant) + " did not finish");
  }
  return 0;
}

// ---- profile / attack / features ----

struct ProfileArgs {
  std::string threat = "ss", mode = "temporal", cipher = "qarma128", out;
  uint32_t scale = 8;
};

json profiles_json(const TimingProfiles& p) { return {{"durations", p.durations}, {"max_depth", p.max_depth}}; }

int cmd_profile(const ProfileArgs& a) {
  AcceleratorConfig cfg = AcceleratorConfig::defaults();
  cfg.cipher = parse_cipher(a.cipher);
  const TimingProfiles p = profile_library(a.scale, parse_threat(a.threat, parse_mode(a.mode)), cfg);
  json j = profiles_json(p);
  j["threat"] = a.threat;
  j["mode"] = a.mode;
  j["cipher"] = a.cipher;
  j["scale"] = a.scale;
  write_json(a.out, j);
  std::cout << p.durations.size() << " layer durations\n";
  return 0;
}

TimingProfiles load_profiles(const std::string& path) {
  const std::string file = std::filesystem::is_directory(path) ? join(path, "profiles.json") : path;
  try {
    const json j = json::parse(read_file(file));
    TimingProfiles p;
    p.durations = j.at("durations").get<std::vector<uint64_t>>();
    p.max_depth = j.value("max_depth", p.max_depth);
    return p;
  } catch (const json::exception& e) {
    throw Error(Error::Code::ParseError, file + ": " + e.what());
  }
}

struct AttackArgs {
  std::string trace, truth, mode = "unshaped", profiles, model, report, features;
  uint32_t scale = 8;
  uint64_t tolerance = 2;
  bool sweep = false;
};

int cmd_attack(const AttackArgs& a) {
  ObservedTrace t = parse_trace_csv(read_file(a.trace));
  if (!a.truth.empty()) t.truth = parse_trace_csv(read_file(a.truth)).truth;
  std::vector<BoundaryLabel> labels;
  std::optional<ModelSpec> m;
  if (!a.model.empty()) {
    m = load_model(a.model, a.scale);
    if (m->boundary_labels.size() == t.truth.size()) labels = m->boundary_labels;
  }
  const AttackMode mode = a.mode == "shaped" ? AttackMode::Shaped : AttackMode::Unshaped;
  if (a.mode != "shaped" && a.mode != "unshaped") throw Error(Error::Code::ParseError, "unknown attack mode " + a.mode);
  std::optional<TimingProfiles> prof;
  if (mode == AttackMode::Shaped) {
    if (a.profiles.empty()) throw Error(Error::Code::ParseError, "shaped attack needs --profiles");
    prof = load_profiles(a.profiles);
  }
  BoundaryStudy s = boundary_study(t, labels, mode, prof ? &*prof : nullptr, a.tolerance);
  s.model = m ? m->name : "";
  json j = to_json(s);
  j.erase("threat");
  j.erase("mode");
  if (!a.sweep) j.erase("sweep");
  if (!a.report.empty()) write_json(a.report, j);
  if (!a.features.empty())
    write_file(a.features, features_csv(segment_features(t, t.truth, m ? &*m : nullptr, mode == AttackMode::Shaped)));
  std::cout << "candidates " << s.candidates << ", all precision " << j["all"]["precision"].dump() << " recall "
            << s.all.recall << ", easy precision " << j["easy"]["precision"].dump() << " recall " << s.easy.recall
            << "\n";
  return 0;
}

struct FeatureArgs {
  std::string trace, model, out, json_out;
  uint32_t scale = 8;
  bool shaped = false;
};

int cmd_features(const FeatureArgs& a) {
  const ObservedTrace t = parse_trace_csv(read_file(a.trace));
  if (t.truth.empty()) throw Error(Error::Code::ParseError, "features need a privileged trace with layer ids");
  std::optional<ModelSpec> m;
  if (!a.model.empty()) m = load_model(a.model, a.scale);
  const auto rows = segment_features(t, t.truth, m ? &*m : nullptr, a.shaped);
  write_file(a.out, features_csv(rows));
  if (!a.json_out.empty()) write_file(a.json_out, features_json(rows));
  std::cout << rows.size() << " segments\n";
  return 0;
}

// ---- bench ----

struct BenchArgs {
  std::vector<std::string> models, threats = {"pp", "sp", "ps", "ss"}, modes = {"temporal", "spatial"},
                                   ciphers = {"qarma128", "aes128"};
  uint32_t scale = 8;
  uint64_t seed = 1;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  SweepSpec spec;
  spec.models = a.models.empty() ? catalog_names() : a.models;
  spec.scale = a.scale;
  spec.threats = a.threats;
  spec.modes.clear();
  for (const auto& m : a.modes) spec.modes.push_back(parse_mode(m));
  spec.ciphers.clear();
  for (const auto& c : a.ciphers) spec.ciphers.push_back(parse_cipher(c));
  if (spec.models.empty() || spec.threats.empty() || spec.modes.empty() || spec.ciphers.empty())
    throw Error(Error::Code::ParseError, "bench needs non-empty models, threats, modes and ciphers");

  json manifest = {{"scale", a.scale}, {"seed", a.seed}, {"models", spec.models}, {"threats", spec.threats},
                   {"modes", a.modes}, {"ciphers", a.ciphers}, {"reports", json::array()}, {"failures", json::array()}};
  auto stage = [&](const std::string& name, const std::function<void()>& f) {
    try {
      f();
      manifest["reports"].push_back(name);
    } catch (const Error& e) {
      manifest["failures"].push_back({{"report", name}, {"error", std::string(to_string(e.code())) + ": " + e.what()}});
    }
  };
  stage("overhead", [&] {
    const auto rows = overhead_sweep(spec);
    write_json(join(a.out, "overhead.json"), rows_json(rows));
    write_file(join(a.out, "overhead.csv"), csv_of(rows));
  });
  stage("zeroize", [&] {
    const auto rows = zeroize_study(spec);
    write_json(join(a.out, "zeroize.json"), rows_json(rows));
    write_file(join(a.out, "zeroize.csv"), csv_of(rows));
  });
  stage("codesize", [&] {
    const auto rows = code_size_study(spec);
    write_json(join(a.out, "codesize.json"), rows_json(rows));
    write_file(join(a.out, "codesize.csv"), csv_of(rows));
  });
  stage("boundaries", [&] {
    json all = json::array();
    for (auto mode : spec.modes)
      for (const auto& t : spec.threats) {
        const ThreatModel threat = parse_threat(t, mode);
        const bool shaped = threat.model_private;
        std::optional<TimingProfiles> prof;
        if (shaped) prof = profile_library(spec.scale, threat, spec.cfg);
        for (const auto& name : spec.models) {
          const ModelSpec m = catalog_model(name, spec.scale);
          CompileOptions o;
          o.threat = threat;
          o.cfg = spec.cfg;
          const RunOutput r = run_model(m, o);
          const ObservedTrace obs = observe(r.trace, 0);
          BoundaryStudy s = boundary_study(obs, m.boundary_labels, shaped ? AttackMode::Shaped : AttackMode::Unshaped,
                                           prof ? &*prof : nullptr);
          s.model = name;
          s.threat = t;
          s.mode = mode;
          all.push_back(to_json(s));
          write_file(join(a.out, "features/" + name + "_" + t + "_" + to_string(mode) + ".csv"),
                     features_csv(segment_features(obs, obs.truth, &m, shaped)));
        }
      }
    write_json(join(a.out, "boundaries.json"), all);
  });
  write_json(join(a.out, "manifest.json"), manifest);
  std::cout << manifest["reports"].size() << " reports, " << manifest["failures"].size() << " failures\n";
  return manifest["failures"].empty() ? 0 : kExitCompile;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sdesim: secure DL accelerator simulator"};
  app.require_subcommand(1);

  CompileArgs ca;
  auto* c = app.add_subcommand("compile", "lower a model to a program bundle");
  c->add_option("--model", ca.model, "catalog name or model file")->required();
  c->add_option("--scale", ca.scale, "channel divisor")->check(CLI::PositiveNumber);
  c->add_option("--threat", ca.threat, "pp, sp, ps or ss");
  c->add_option("--mode", ca.mode, "temporal or spatial");
  c->add_option("--tenant", ca.tenant)->check(CLI::Range(0, kMaxTenants - 1));
  c->add_option("--bandwidth", ca.bandwidth, "shaper bytes/s, default the grant's");
  c->add_option("--zeroize", ca.zeroize)->check(CLI::IsMember({"optimized", "naive"}));
  c->add_option("--spad-size", ca.spad_size, "kind=bytes pragma, repeatable");
  c->add_option("--queue-depth", ca.queue_depth, "queue depth pragma");
  c->add_option("--out", ca.out, "bundle directory or path of the .bin inside it")->required();
  c->add_option("--report", ca.report, "mix.json path, default beside the binary");

  RunArgs ra;
  auto* r = app.add_subcommand("run", "run program bundles on the engine");
  r->add_option("--prog", ra.progs, "bundle directory or its .bin, repeatable");
  r->add_option("--model", ra.model, "compile this model instead of loading a bundle");
  r->add_option("--scale", ra.scale)->check(CLI::PositiveNumber);
  r->add_option("--threat", ra.threat);
  r->add_option("--tenant", ra.tenant)->check(CLI::Range(0, kMaxTenants - 1));
  r->add_option("--mode", ra.mode, "temporal or spatial");
  r->add_option("--cipher", ra.cipher, "qarma128, aes128 or none");
  r->add_option("--baseline", ra.baseline, "cycles.json of a baseline run");
  r->add_option("--log-level", ra.log_level, "off, error, info, debug (default SESAME_LOG)");
  r->add_flag("--checked", ra.checked, "enable the taint oracle");
  r->add_flag("--strict", ra.strict, "nonzero exit on traps, violations or unfinished tenants");
  r->add_option("--out", ra.out)->required();

  ProfileArgs pa;
  auto* p = app.add_subcommand("profile", "measure layer durations of every catalog network");
  p->add_option("--threat", pa.threat);
  p->add_option("--mode", pa.mode);
  p->add_option("--cipher", pa.cipher);
  p->add_option("--scale", pa.scale)->check(CLI::PositiveNumber);
  p->add_option("--out", pa.out, "profiles.json path")->required();

  AttackArgs aa;
  auto* at = app.add_subcommand("attack", "detect layer boundaries in a bandwidth trace");
  at->add_option("--trace", aa.trace, "attacker or privileged CSV")->required();
  at->add_option("--truth", aa.truth, "privileged CSV with the ground truth");
  at->add_option("--mode", aa.mode)->check(CLI::IsMember({"unshaped", "shaped"}));
  at->add_option("--profiles", aa.profiles, "profiles.json or a directory holding one");
  at->add_option("--model", aa.model, "labels boundaries easy or hard");
  at->add_option("--scale", aa.scale)->check(CLI::PositiveNumber);
  at->add_option("--tolerance", aa.tolerance, "match tolerance in windows");
  at->add_flag("--threshold-sweep", aa.sweep);
  at->add_option("--report", aa.report, "report JSON path");
  at->add_option("--features", aa.features, "per-layer feature CSV path");

  FeatureArgs fa;
  auto* f = app.add_subcommand("features", "per-layer features from a privileged trace");
  f->add_option("--trace", fa.trace)->required();
  f->add_option("--model", fa.model);
  f->add_option("--scale", fa.scale)->check(CLI::PositiveNumber);
  f->add_flag("--shaped", fa.shaped);
  f->add_option("--out", fa.out, "CSV path")->required();
  f->add_option("--json", fa.json_out, "JSON path");

  BenchArgs ba;
  auto* b = app.add_subcommand("bench", "experiment sweeps");
  b->add_option("--models", ba.models)->delimiter(',');
  b->add_option("--threats", ba.threats)->delimiter(',');
  b->add_option("--modes", ba.modes)->delimiter(',');
  b->add_option("--ciphers", ba.ciphers)->delimiter(',');
  b->add_option("--scale", ba.scale)->check(CLI::PositiveNumber);
  b->add_option("--seed", ba.seed);
  b->add_option("--out", ba.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitCompile;
  }
  try {
    if (*c) return cmd_compile(ca);
    if (*r) return cmd_run(ra);
    if (*p) return cmd_profile(pa);
    if (*at) return cmd_attack(aa);
    if (*f) return cmd_features(fa);
    if (*b) return cmd_bench(ba);
  } catch (const SecurityFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSecurity;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCompile;
  }
  return 0;
}
