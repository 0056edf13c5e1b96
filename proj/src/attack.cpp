#include "sde/attack.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace sde {

ObservedTrace observe(const BandwidthTrace& trace, uint8_t tenant) {
  ObservedTrace t;
  t.window_cycles = trace.window_cycles;
  t.bandwidth = trace.bandwidth;
  for (const auto& w : trace.windows(tenant)) t.windows.push_back({w.read_bytes, w.write_bytes});
  t.truth = trace.boundary_windows(tenant);
  std::sort(t.truth.begin(), t.truth.end());
  return t;
}

ObservedTrace parse_trace_csv(const std::string& text) {
  ObservedTrace t;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> cols;
  int prev_layer = 0;
  size_t lineno = 0;
  auto bad = [&](const std::string& why) {
    return Error(Error::Code::ParseError, "trace line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream h(line.substr(1));
      std::string kv;
      while (h >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = kv.substr(0, eq);
        const uint64_t v = std::stoull(kv.substr(eq + 1));
        if (k == "bandwidth") t.bandwidth = v;
        if (k == "window") t.window_cycles = uint32_t(v);
      }
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) f.push_back(c);
    if (cols.empty()) {
      cols = f;
      if (cols.size() < 3 || cols[0] != "window" || cols[1] != "read_bytes" || cols[2] != "write_bytes")
        throw bad("expected window,read_bytes,write_bytes header");
      continue;
    }
    if (f.size() != cols.size()) throw bad("column count");
    try {
      if (std::stoull(f[0]) != t.windows.size()) throw bad("windows out of order");
      t.windows.push_back({std::stoull(f[1]), std::stoull(f[2])});
      if (cols.size() > 4 && cols[4] == "layer_id") {
        const int layer = std::stoi(f[4]);
        for (int l = std::max(prev_layer, 0); l < layer; ++l) t.truth.push_back(t.windows.size() - 1);
        prev_layer = std::max(prev_layer, layer);
      }
    } catch (const std::logic_error&) {
      throw bad("not a number");
    }
  }
  if (cols.empty()) throw Error(Error::Code::ParseError, "empty trace");
  return t;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Mean-pools v onto `n` equal parts.
std::vector<double> resample(const std::vector<double>& v, size_t n) {
  std::vector<double> out(n, 0.0);
  if (v.empty()) return out;
  for (size_t i = 0; i < n; ++i) {
    const double lo = double(i) * double(v.size()) / double(n), hi = double(i + 1) * double(v.size()) / double(n);
    double sum = 0;
    for (size_t j = size_t(lo); j < v.size() && double(j) < hi; ++j) {
      const double a = std::max(lo, double(j)), b = std::min(hi, double(j + 1));
      sum += v[j] * (b - a);
    }
    out[i] = sum / (hi - lo);
  }
  return out;
}

// In-place orthonormal Haar transform of a power-of-two length signal.
void haar(std::vector<double>& x) {
  std::vector<double> tmp(x.size());
  for (size_t n = x.size(); n > 1; n /= 2) {
    for (size_t i = 0; i < n / 2; ++i) {
      tmp[i] = (x[2 * i] + x[2 * i + 1]) / std::sqrt(2.0);
      tmp[n / 2 + i] = (x[2 * i] - x[2 * i + 1]) / std::sqrt(2.0);
    }
    std::copy(tmp.begin(), tmp.begin() + long(n), x.begin());
  }
}

void channel_features(const std::vector<double>& v, std::vector<double>& out) {
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  const double mean = v.empty() ? 0 : total / double(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  out.push_back(total);
  out.push_back(mean);
  out.push_back(median(v));
  out.push_back(v.empty() ? 0 : *std::max_element(v.begin(), v.end()));
  out.push_back(v.empty() ? 0 : std::sqrt(var / double(v.size())));
  auto c = resample(v, kDwtBands);
  haar(c);
  out.insert(out.end(), c.begin(), c.end());
}

}  // namespace

std::vector<double> window_features(const ObservedTrace& t, size_t begin, size_t end) {
  end = std::min(end, t.windows.size());
  begin = std::min(begin, end);
  std::vector<double> rd, wr;
  for (size_t i = begin; i < end; ++i) {
    rd.push_back(double(t.windows[i].read_bytes));
    wr.push_back(double(t.windows[i].write_bytes));
  }
  std::vector<double> f;
  f.reserve(kFeatureCount);
  channel_features(rd, f);
  channel_features(wr, f);
  return f;
}

std::vector<std::string> feature_names() {
  std::vector<std::string> n;
  for (const char* ch : {"rd", "wr"}) {
    for (const char* s : {"total", "mean", "median", "peak", "std"}) n.push_back(std::string(ch) + "_" + s);
    for (size_t b = 0; b < kDwtBands; ++b) n.push_back(std::string(ch) + "_dwt" + std::to_string(b));
  }
  return n;
}

std::vector<BoundaryCandidate> raw_candidates(const ObservedTrace& t, size_t lookahead) {
  std::vector<BoundaryCandidate> out;
  const auto& w = t.windows;
  for (size_t i = 0; i + 1 < w.size(); ++i) {
    if (w[i].write_bytes == 0 || w[i + 1].write_bytes != 0) continue;
    bool reads = false;
    for (size_t j = i + 1; j < std::min(w.size(), i + 1 + lookahead); ++j) reads = reads || w[j].read_bytes > 0;
    if (reads) out.push_back({i, CandidateSource::RawPattern, 0, 0.0});
  }
  return out;
}

std::vector<BoundaryCandidate> timing_candidates(const ObservedTrace& t, const TimingProfiles& p,
                                                 EnumerationStats* stats, uint64_t cap) {
  std::vector<BoundaryCandidate> out;
  EnumerationStats st;
  size_t first = 0, last = 0;
  bool any = false;
  for (size_t i = 0; i < t.windows.size(); ++i) {
    if (t.windows[i].read_bytes + t.windows[i].write_bytes == 0) continue;
    if (!any) first = i;
    last = i;
    any = true;
  }
  std::vector<uint64_t> durs;
  for (uint64_t d : p.durations)
    if (d > 0) durs.push_back(d);
  std::sort(durs.begin(), durs.end());
  durs.erase(std::unique(durs.begin(), durs.end()), durs.end());
  if (!any || durs.empty()) {
    if (stats) *stats = st;
    return out;
  }
  // bit c of `reach` is set when some sequence of `depth` layers ends c
  // cycles after the first active window starts
  const uint64_t w = t.window_cycles, anchor = first * w, span = (last + 1) * w - anchor;
  const size_t words = size_t((span + 63) / 64);
  std::vector<uint64_t> reach(words, 0), next(words);
  reach[0] = 1;
  for (uint32_t depth = 1; depth <= p.max_depth && !st.capped; ++depth) {
    std::fill(next.begin(), next.end(), 0);
    for (uint64_t d : durs) {
      if (d >= span) break;
      const size_t ws = size_t(d / 64), bs = size_t(d % 64);
      for (size_t i = words; i-- > ws;) {
        uint64_t v = reach[i - ws] << bs;
        if (bs && i > ws) v |= reach[i - ws - 1] >> (64 - bs);
        next[i] |= v;
      }
    }
    if (span % 64) next.back() &= (uint64_t(1) << (span % 64)) - 1;
    reach.swap(next);
    uint64_t prev = UINT64_MAX;
    bool live = false;
    for (size_t i = 0; i < words; ++i) {
      for (uint64_t bits = reach[i]; bits; bits &= bits - 1) {
        live = true;
        const uint64_t c = uint64_t(i) * 64 + uint64_t(std::countr_zero(bits));
        const uint64_t win = (anchor + c) / w;
        if (win == prev || win >= last) continue;
        prev = win;
        if (st.sums >= cap) {
          st.capped = true;
          break;
        }
        ++st.sums;
        out.push_back({win, CandidateSource::TimingEnumeration, depth, 0.0});
      }
      if (st.capped) break;
    }
    if (!live) break;
  }
  if (stats) *stats = st;
  return out;
}

void score_candidates(const ObservedTrace& t, std::vector<BoundaryCandidate>& cands, size_t span) {
  if (cands.empty()) return;
  std::vector<std::vector<double>> before, after;
  for (const auto& c : cands) {
    const size_t at = size_t(c.window) + 1;
    before.push_back(window_features(t, at >= span ? at - span : 0, at));
    after.push_back(window_features(t, at, at + span));
  }
  // per-feature spread over every window compared
  std::vector<double> mean(kFeatureCount, 0), sd(kFeatureCount, 0);
  const double n = double(2 * cands.size());
  for (size_t k = 0; k < kFeatureCount; ++k) {
    for (size_t i = 0; i < cands.size(); ++i) mean[k] += before[i][k] + after[i][k];
    mean[k] /= n;
    for (size_t i = 0; i < cands.size(); ++i)
      sd[k] += (before[i][k] - mean[k]) * (before[i][k] - mean[k]) + (after[i][k] - mean[k]) * (after[i][k] - mean[k]);
    sd[k] = std::sqrt(sd[k] / n);
  }
  // RMS over the features that vary at all; constant ones carry no signal
  std::vector<size_t> live;
  for (size_t k = 0; k < kFeatureCount; ++k)
    if (sd[k] > 1e-12 * std::max(1.0, std::abs(mean[k]))) live.push_back(k);
  for (size_t i = 0; i < cands.size(); ++i) {
    double d2 = 0;
    for (size_t k : live) {
      const double z = (after[i][k] - before[i][k]) / sd[k];
      d2 += z * z;
    }
    cands[i].score = live.empty() ? 0.0 : std::sqrt(d2 / double(live.size()));
  }
}

DetectionReport evaluate(const std::vector<uint64_t>& predicted, const std::vector<uint64_t>& truth,
                         uint64_t tolerance, const std::vector<uint64_t>& ignored) {
  DetectionReport r;
  r.predicted = predicted;
  r.truth = truth;
  r.tolerance = tolerance;
  std::vector<uint64_t> p = predicted;
  std::vector<std::pair<uint64_t, bool>> g;  // window, counts
  for (uint64_t x : truth) g.emplace_back(x, true);
  for (uint64_t x : ignored) g.emplace_back(x, false);
  std::sort(p.begin(), p.end());
  std::sort(g.begin(), g.end());
  // two-pointer greedy: each prediction takes the earliest open boundary in reach
  size_t j = 0, dropped = 0;
  for (uint64_t x : p) {
    while (j < g.size() && g[j].first + tolerance < x) ++j;
    if (j < g.size() && g[j].first <= x + tolerance) {
      (g[j].second ? r.matched : dropped) += 1;
      ++j;
    }
  }
  const size_t scored = p.size() - dropped;
  r.false_positives = scored - r.matched;
  if (scored) r.precision = double(r.matched) / double(scored);
  r.recall = truth.empty() ? 1.0 : double(r.matched) / double(truth.size());
  return r;
}

std::string layer_class(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv2D: return "conv" + std::to_string(l.kernel) + "x" + std::to_string(l.kernel);
    case LayerKind::Dense: return "dense";
    case LayerKind::MaxPool: return "pool";
    case LayerKind::ReLU: return "activation";
    case LayerKind::Add: return "residual";
  }
  return "unknown";
}

std::vector<SegmentFeatures> segment_features(const ObservedTrace& t, const std::vector<uint64_t>& boundaries,
                                              const ModelSpec* model, bool shaped) {
  size_t first = t.windows.size(), end = 0;
  for (size_t i = 0; i < t.windows.size(); ++i) {
    if (t.windows[i].read_bytes + t.windows[i].write_bytes == 0) continue;
    first = std::min(first, i);
    end = i + 1;
  }
  std::vector<uint64_t> cuts = {first};
  for (uint64_t b : boundaries) cuts.push_back(std::max<uint64_t>(b, cuts.back()));
  cuts.push_back(std::max<uint64_t>(end, cuts.back()));
  std::vector<SegmentFeatures> rows;
  for (size_t s = 0; s + 1 < cuts.size(); ++s) {
    SegmentFeatures r;
    r.model = model ? model->name : "";
    r.layer = uint32_t(s);
    r.label = model && s < model->layers.size() ? layer_class(model->layers[s]) : "";
    r.shaped = shaped;
    r.windows = cuts[s + 1] - cuts[s];
    r.features = window_features(t, cuts[s], cuts[s + 1]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string features_csv(const std::vector<SegmentFeatures>& rows) {
  std::ostringstream out;
  out << "model,layer,label,shaped,windows";
  for (const auto& n : feature_names()) out << "," << n;
  out << "\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.model << "," << r.layer << "," << r.label << "," << int(r.shaped) << "," << r.windows;
    for (double f : r.features) out << "," << f;
    out << "\n";
  }
  return out.str();
}

std::string features_json(const std::vector<SegmentFeatures>& rows) {
  nlohmann::json j;
  j["feature_names"] = feature_names();
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"model", r.model},
                         {"layer", r.layer},
                         {"label", r.label},
                         {"shaped", r.shaped},
                         {"windows", r.windows},
                         {"features", r.features}});
  return j.dump(1) + "\n";
}

}  // namespace sde
