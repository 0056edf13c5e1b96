#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sde/attack.hpp"
#include "sde/compiler.hpp"
#include "sde/engine.hpp"

namespace sde {

struct RunOutput {
  CompiledProgram program;
  RunReport report;
  BandwidthTrace trace;
};

/// Compiles and runs one tenant alone.
RunOutput run_model(const ModelSpec& model, const CompileOptions& opts, bool checked = false);

/// Cycles from each layer's first instruction to the next layer's, the last
/// layer ending at Finish.
std::vector<uint64_t> layer_durations(const TenantReport& r);

/// Durations of every layer of every catalog network, measured by running
/// them under `threat` on the attacker's own device.
TimingProfiles profile_library(uint32_t scale, const ThreatModel& threat, const AcceleratorConfig& cfg);

enum class AttackMode : uint8_t { Unshaped, Shaped };
const char* to_string(AttackMode m);

struct ThresholdPoint {
  double threshold = 0;
  size_t predicted = 0;
  std::optional<double> precision;
  double recall = 0;
};

/// Boundary detection scored against both the easy and the full boundary set.
struct BoundaryStudy {
  std::string model;
  std::string threat;
  Sharing mode = Sharing::Temporal;
  AttackMode attack = AttackMode::Unshaped;
  size_t candidates = 0;
  EnumerationStats enumeration;
  DetectionReport all, easy;  // every candidate accepted
  std::vector<ThresholdPoint> sweep;
  double inflation() const { return all.truth.empty() ? 0 : double(candidates) / double(all.truth.size()); }
};

/// `labels` gives Easy/Hard per truth boundary; profiles are needed for Shaped.
BoundaryStudy boundary_study(const ObservedTrace& trace, const std::vector<BoundaryLabel>& labels, AttackMode mode,
                             const TimingProfiles* profiles = nullptr, uint64_t tolerance = 2);
nlohmann::json to_json(const BoundaryStudy& s);

struct PerfRow {
  std::string model;
  Sharing mode = Sharing::Temporal;
  std::string threat;
  Cipher cipher = Cipher::Qarma128;
  uint64_t cycles = 0;
  uint64_t baseline = 0;  // pp cycles, same model, mode and cipher
  double overhead() const { return baseline ? double(cycles) / double(baseline) - 1.0 : 0.0; }
};

struct ZeroizeRow {
  std::string model;
  std::string threat;
  uint64_t naive_count = 0, naive_bytes = 0;
  uint64_t opt_count = 0, opt_bytes = 0;
  double count_reduction() const { return naive_count ? 1.0 - double(opt_count) / double(naive_count) : 0.0; }
  double bytes_reduction() const { return naive_bytes ? 1.0 - double(opt_bytes) / double(naive_bytes) : 0.0; }
};

struct CodeSizeRow {
  std::string model;
  Sharing mode = Sharing::Temporal;
  std::string threat;
  uint64_t bytes = 0;
  uint64_t pp_bytes = 0;
  std::map<std::string, uint64_t> mix;
  bool only_zeroize_and_variants = false;
  double ratio() const { return pp_bytes ? double(bytes) / double(pp_bytes) : 0.0; }
};

/// True when `secure` minus its Zeroizes matches `plain` instruction by
/// instruction, ignoring memory variants, constant-time bits and config values.
bool differs_only_in_security(const std::vector<Instruction>& secure, const std::vector<Instruction>& plain);

struct SweepSpec {
  std::vector<std::string> models;
  uint32_t scale = 8;
  std::vector<std::string> threats = {"pp", "sp", "ps", "ss"};
  std::vector<Sharing> modes = {Sharing::Temporal, Sharing::Spatial};
  std::vector<Cipher> ciphers = {Cipher::Qarma128, Cipher::Aes128};
  AcceleratorConfig cfg = AcceleratorConfig::defaults();
};

std::vector<PerfRow> overhead_sweep(const SweepSpec& spec);
std::vector<ZeroizeRow> zeroize_study(const SweepSpec& spec);
std::vector<CodeSizeRow> code_size_study(const SweepSpec& spec);

/// Cycles of a hand-built program doing one Gemm over `weights` (a 16x8x3x3
/// tile) or one Alu Max over `input`.
uint64_t probe_gemm(const std::vector<uint8_t>& weights, bool constant_time, const AcceleratorConfig& cfg);
uint64_t probe_alu(const std::vector<uint8_t>& input, bool constant_time, const AcceleratorConfig& cfg);

struct FuzzOutcome {
  size_t instructions = 0;
  size_t expected = 0;     // flagged by validate
  size_t trapped = 0;
  size_t missed = 0;       // flagged but not trapped
  size_t false_traps = 0;  // trapped but not flagged
};

/// Random loads, stores, zeroizes and ALU ops with ranges around the grant.
FuzzOutcome fuzz_isolation(uint64_t seed, size_t n, Sharing mode, uint8_t tenant, const AcceleratorConfig& cfg);

nlohmann::json to_json(const PerfRow& r);
nlohmann::json to_json(const ZeroizeRow& r);
nlohmann::json to_json(const CodeSizeRow& r);

template <typename Row>
nlohmann::json rows_json(const std::vector<Row>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back(to_json(r));
  return j;
}

}  // namespace sde
