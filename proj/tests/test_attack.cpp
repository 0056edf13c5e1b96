#include "doctest.h"

#include <algorithm>

#include "sde/attack.hpp"
#include "sde/compiler.hpp"
#include "sde/engine.hpp"

using namespace sde;

namespace {

const AcceleratorConfig kCfg = AcceleratorConfig::defaults();

ObservedTrace run_trace(const ModelSpec& m, const std::string& threat, std::vector<uint64_t>* durations = nullptr) {
  CompileOptions o;
  o.threat = parse_threat(threat);
  const CompiledProgram p = compile(m, o);
  Engine e(kCfg, Sharing::Temporal, EngineOptions{true, LogLevel::Off, true});
  e.admit(p);
  const RunReport r = e.run();
  if (durations) {
    const auto& s = r.tenants[0].layer_start_cycles;
    for (size_t i = 0; i + 1 < s.size(); ++i) durations->push_back(s[i + 1] - s[i]);
  }
  return observe(e.trace(), 0);
}

ObservedTrace plateaus(std::vector<std::pair<uint64_t, size_t>> levels) {
  ObservedTrace t;
  for (auto [bytes, n] : levels)
    for (size_t i = 0; i < n; ++i) t.windows.push_back({bytes, bytes});
  return t;
}

std::vector<uint64_t> windows_of(const std::vector<BoundaryCandidate>& c) {
  std::vector<uint64_t> w;
  for (const auto& x : c) w.push_back(x.window);
  return w;
}

ModelSpec two_layers() {
  ModelSpec m;
  m.name = "toy";
  LayerSpec a;
  a.in_channels = 8;
  a.out_channels = 16;
  a.height = a.width = 16;
  a.kernel = 3;
  a.padding = 1;
  LayerSpec b = a;
  b.in_channels = 16;
  b.out_channels = 32;
  m.layers = {a, b};
  finalize_model(m);
  return m;
}

}  // namespace

TEST_CASE("one raw candidate at the boundary of a two-layer model") {
  const ObservedTrace t = run_trace(two_layers(), "pp");
  REQUIRE(t.truth.size() == 1);
  const auto c = raw_candidates(t);
  REQUIRE(c.size() == 1);
  CHECK(c[0].window + 2 >= t.truth[0]);
  CHECK(c[0].window <= t.truth[0] + 2);
}

TEST_CASE("raw pattern is invisible on shaped traces") {
  for (const char* th : {"ps", "ss"}) CHECK(raw_candidates(run_trace(catalog_model("vgg11", 8), th)).empty());
}

TEST_CASE("raw detection finds every boundary of the plain networks") {
  for (const char* m : {"alexnet", "vgg11", "vgg16"}) {
    CAPTURE(m);
    const ModelSpec spec = catalog_model(m, 8);
    const ObservedTrace t = run_trace(spec, "pp");
    REQUIRE(t.truth.size() == spec.all_boundaries());
    const DetectionReport r = evaluate(windows_of(raw_candidates(t)), t.truth);
    CHECK(r.recall == 1.0);
    CHECK(r.precision.value_or(0) == 1.0);
    // easy view: hard boundaries neither help nor hurt
    std::vector<uint64_t> easy, hard;
    for (size_t i = 0; i < t.truth.size(); ++i)
      (spec.boundary_labels[i] == BoundaryLabel::Easy ? easy : hard).push_back(t.truth[i]);
    const DetectionReport e = evaluate(windows_of(raw_candidates(t)), easy, 2, hard);
    CHECK(e.precision.value_or(0) == 1.0);
    CHECK(e.recall == 1.0);
  }
}

TEST_CASE("timing enumeration on a shaped residual network inflates candidates") {
  std::vector<uint64_t> d;
  const ObservedTrace t = run_trace(catalog_model("resnet18", 8), "ss", &d);
  // the attacker's profile library covers every layer of every catalog network
  for (const auto& name : catalog_names())
    if (name != "resnet18") run_trace(catalog_model(name, 8), "ss", &d);
  TimingProfiles prof;
  prof.durations = d;
  EnumerationStats st;
  const auto c = timing_candidates(t, prof, &st);
  CHECK(!st.capped);
  CHECK(st.sums == c.size());
  CHECK(st.sums >= 100 * t.truth.size());
  const DetectionReport r = evaluate(windows_of(c), t.truth);
  CHECK(r.recall == 1.0);
  CHECK(*r.precision <= double(t.truth.size()) / double(c.size()));
}

TEST_CASE("enumeration respects the cap") {
  const ObservedTrace t = plateaus({{0, 2}, {64, 500}});
  TimingProfiles prof;
  prof.durations = {128, 256, 384};
  EnumerationStats st;
  const auto c = timing_candidates(t, prof, &st, 50);
  CHECK(st.capped);
  CHECK(c.size() == 50);
  // depth 1 hits windows 3, 4, 5 after the first active window
  const auto all = timing_candidates(t, prof, &st);
  CHECK(all[0].window == 3);
  CHECK(all[0].depth == 1);
  CHECK(all[2].window == 5);
}

TEST_CASE("boundary scores") {
  auto flat = plateaus({{256, 40}});
  std::vector<BoundaryCandidate> c = {{20, CandidateSource::RawPattern, 0, 0}};
  score_candidates(flat, c);
  CHECK(c[0].score == 0);
  CHECK(!accepted(c[0], 0.0));
  CHECK(accepted(c[0], -1));

  auto step = plateaus({{256, 20}, {512, 20}});
  c = {{19, CandidateSource::RawPattern, 0, 0}};
  score_candidates(step, c);
  CHECK(accepted(c[0], kDefaultThreshold));

  const ObservedTrace shaped = run_trace(catalog_model("vgg11", 8), "ps");
  std::vector<BoundaryCandidate> all;
  for (uint64_t w : shaped.truth) all.push_back({w, CandidateSource::TimingEnumeration, 0, 0});
  score_candidates(shaped, all);
  for (const auto& x : all) CHECK(x.score == 0);
}

TEST_CASE("evaluation") {
  const std::vector<uint64_t> truth = {10, 20, 30};
  DetectionReport r = evaluate(truth, truth);
  CHECK(*r.precision == 1.0);
  CHECK(r.recall == 1.0);
  r = evaluate({}, truth);
  CHECK(!r.precision);
  CHECK(r.recall == 0);
  r = evaluate({9, 11, 21, 50}, truth);  // 11 cannot take a second match
  CHECK(r.matched == 2);
  CHECK(r.false_positives == 2);
  CHECK(*r.precision == 0.5);
  const DetectionReport moved = evaluate({109, 111, 121, 150}, {110, 120, 130});
  CHECK(moved.matched == r.matched);
  CHECK(*moved.precision == *r.precision);
  CHECK(moved.recall == r.recall);
}

TEST_CASE("segment features") {
  CHECK(feature_names().size() == kFeatureCount);
  CHECK(kFeatureCount == 2 * (5 + 16));
  const ModelSpec m = catalog_model("vgg11", 8);
  const ObservedTrace t = run_trace(m, "pp");
  const auto rows = segment_features(t, t.truth, &m, false);
  REQUIRE(rows.size() == m.layers.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].features.size() == kFeatureCount);
    CHECK(rows[i].label == layer_class(m.layers[i]));
  }
  const std::string csv = features_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == long(rows.size() + 1));
  CHECK(csv.rfind("model,layer,label,shaped,windows,rd_total,", 0) == 0);

  const ObservedTrace s = run_trace(m, "ss");
  const auto srows = segment_features(s, s.truth, &m, true);
  const auto names = feature_names();
  // interior segments differ only in length-dependent totals
  for (size_t i = 2; i + 1 < srows.size(); ++i)
    for (size_t k = 0; k < kFeatureCount; ++k) {
      if (names[k].ends_with("_total") || names[k].ends_with("_dwt0")) continue;
      CHECK(srows[i].features[k] == doctest::Approx(srows[1].features[k]));
    }
}

TEST_CASE("trace files parse back") {
  CompileOptions o;
  o.threat = parse_threat("pp");
  const CompiledProgram p = compile(catalog_model("alexnet", 8), o);
  Engine e(kCfg, Sharing::Temporal, EngineOptions{true, LogLevel::Off, true});
  e.admit(p);
  e.run();
  const ObservedTrace want = observe(e.trace(), 0);
  const ObservedTrace a = parse_trace_csv(e.trace().attacker_csv(0));
  const ObservedTrace v = parse_trace_csv(e.trace().privileged_csv(0));
  REQUIRE(a.windows.size() == want.windows.size());
  CHECK(a.truth.empty());
  CHECK(v.truth == want.truth);
  CHECK(a.bandwidth == e.trace().bandwidth);
  for (size_t i = 0; i < a.windows.size(); ++i) {
    CHECK(a.windows[i].read_bytes == want.windows[i].read_bytes);
    CHECK(a.windows[i].write_bytes == want.windows[i].write_bytes);
  }
  CHECK_THROWS_AS(parse_trace_csv("window,bytes\n0,1\n"), Error);
  CHECK_THROWS_AS(parse_trace_csv("window,read_bytes,write_bytes\n0,x,1\n"), Error);
}
