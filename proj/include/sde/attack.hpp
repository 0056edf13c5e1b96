#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sde/memsys.hpp"
#include "sde/workload.hpp"

namespace sde {

/// One row of an attacker-visible trace.
struct ObservedWindow {
  uint64_t read_bytes = 0;
  uint64_t write_bytes = 0;
};

/// What the attacker sees plus, when parsed from a privileged file, the truth.
struct ObservedTrace {
  uint32_t window_cycles = 128;
  uint64_t bandwidth = 0;
  std::vector<ObservedWindow> windows;
  std::vector<uint64_t> truth;  // boundary windows, empty for attacker files
};

ObservedTrace observe(const BandwidthTrace& trace, uint8_t tenant);
/// Parses either CSV layout. Throws Io / Parse errors.
ObservedTrace parse_trace_csv(const std::string& text);

constexpr size_t kStatFeatures = 5;  // total, mean, median, peak, stddev
constexpr size_t kDwtBands = 16;     // 4-level Haar over 16 resampled points
constexpr size_t kChannelFeatures = kStatFeatures + kDwtBands;
constexpr size_t kFeatureCount = 2 * kChannelFeatures;

/// Statistical and Haar features of windows [begin, end), read channel first.
std::vector<double> window_features(const ObservedTrace& t, size_t begin, size_t end);
std::vector<std::string> feature_names();

enum class CandidateSource : uint8_t { RawPattern, TimingEnumeration };

struct BoundaryCandidate {
  uint64_t window = 0;
  CandidateSource source = CandidateSource::RawPattern;
  uint32_t depth = 0;  // enumeration: number of layers before the boundary
  double score = 0;
};

/// Layer durations the attacker measured offline, in cycles.
struct TimingProfiles {
  std::vector<uint64_t> durations;
  uint32_t max_depth = 64;
};

struct EnumerationStats {
  uint64_t sums = 0;  // (depth, window) hypotheses
  bool capped = false;
};

constexpr uint64_t kEnumerationCap = 1'000'000;

/// Windows where write activity stops and reads follow within `lookahead`.
std::vector<BoundaryCandidate> raw_candidates(const ObservedTrace& t, size_t lookahead = 3);

/// Every (depth, window) reachable as a sum of profiled durations from the
/// first active window.
std::vector<BoundaryCandidate> timing_candidates(const ObservedTrace& t, const TimingProfiles& p,
                                                 EnumerationStats* stats = nullptr, uint64_t cap = kEnumerationCap);

/// Fills candidate scores: z-score normalized RMS distance between the
/// features of `span` windows before and after each candidate. Features are
/// normalized over every span compared in this call.
void score_candidates(const ObservedTrace& t, std::vector<BoundaryCandidate>& c, size_t span = 16);
/// A negative threshold accepts everything.
inline bool accepted(const BoundaryCandidate& c, double threshold) { return threshold < 0 || c.score > threshold; }
constexpr double kDefaultThreshold = 1.0;

struct DetectionReport {
  std::vector<uint64_t> predicted;
  std::vector<uint64_t> truth;
  std::optional<double> precision;  // empty when nothing was predicted
  double recall = 0;
  size_t matched = 0;
  size_t false_positives = 0;
  uint64_t tolerance = 2;
};

/// Greedy one-to-one matching in window order within `tolerance`.
/// Predictions that land on an `ignored` boundary count neither way.
DetectionReport evaluate(const std::vector<uint64_t>& predicted, const std::vector<uint64_t>& truth,
                         uint64_t tolerance = 2, const std::vector<uint64_t>& ignored = {});

struct SegmentFeatures {
  std::string model;
  uint32_t layer = 0;
  std::string label;
  bool shaped = false;
  uint64_t windows = 0;
  std::vector<double> features;
};

/// Layer-type label used by the classifiers.
std::string layer_class(const LayerSpec& l);

/// One row per segment between consecutive boundaries; labels from `model`
/// when given. `boundaries` are the windows where each layer after the first
/// starts.
std::vector<SegmentFeatures> segment_features(const ObservedTrace& t, const std::vector<uint64_t>& boundaries,
                                              const ModelSpec* model, bool shaped);
std::string features_csv(const std::vector<SegmentFeatures>& rows);
std::string features_json(const std::vector<SegmentFeatures>& rows);

}  // namespace sde
