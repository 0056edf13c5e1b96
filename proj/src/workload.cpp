#include "sde/workload.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace sde {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Add: return "add";
  }
  return "?";
}

static std::optional<LayerKind> parse_kind(const std::string& s) {
  for (auto k : {LayerKind::Conv2D, LayerKind::Dense, LayerKind::MaxPool, LayerKind::ReLU, LayerKind::Add})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

uint32_t LayerSpec::out_height() const {
  if (kind == LayerKind::Dense) return 1;
  return (height + 2 * padding - kernel) / stride + 1;
}

uint32_t LayerSpec::out_width() const {
  if (kind == LayerKind::Dense) return 1;
  return (width + 2 * padding - kernel) / stride + 1;
}

uint64_t LayerSpec::weight_bytes() const {
  if (kind == LayerKind::Conv2D) return uint64_t(out_channels) * in_channels * kernel * kernel;
  if (kind == LayerKind::Dense) return uint64_t(out_channels) * in_channels;
  return 0;
}

uint64_t LayerSpec::macs() const {
  if (kind == LayerKind::Conv2D)
    return uint64_t(out_channels) * out_height() * out_width() * in_channels * kernel * kernel;
  if (kind == LayerKind::Dense) return uint64_t(out_channels) * in_channels;
  return 0;
}

size_t ModelSpec::easy_boundaries() const {
  return size_t(std::count(boundary_labels.begin(), boundary_labels.end(), BoundaryLabel::Easy));
}

static void check_layer(const LayerSpec& l, size_t i) {
  auto fail = [&](const std::string& why) {
    throw Error(Error::Code::DimensionMismatch, "layer " + std::to_string(i) + ": " + why);
  };
  if (!l.in_channels || !l.out_channels || !l.height || !l.width || !l.kernel || !l.stride)
    fail("dimensions must be >= 1");
  if (l.kind == LayerKind::Dense) {
    if (l.height != 1 || l.width != 1 || l.kernel != 1) fail("dense layers take a flat vector");
    return;
  }
  if (l.height + 2 * l.padding < l.kernel || l.width + 2 * l.padding < l.kernel)
    fail("kernel larger than padded input");
  if (l.kind != LayerKind::Conv2D && l.in_channels != l.out_channels)
    fail(std::string(to_string(l.kind)) + " must preserve channels");
  if ((l.kind == LayerKind::ReLU || l.kind == LayerKind::Add) && (l.kernel != 1 || l.stride != 1 || l.padding))
    fail("elementwise layers have unit kernel and stride");
}

void finalize_model(ModelSpec& model) {
  if (model.layers.empty()) throw Error(Error::Code::DimensionMismatch, "model has no layers");
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    check_layer(l, i);
    if (i == 0) {
      if (l.kind == LayerKind::Add) throw Error(Error::Code::DimensionMismatch, "first layer cannot be add");
      continue;
    }
    const LayerSpec& p = model.layers[i - 1];
    bool chained = l.kind == LayerKind::Dense
                       ? l.in_channels == p.output_bytes()
                       : l.in_channels == p.out_channels && l.height == p.out_height() && l.width == p.out_width();
    if (!chained)
      throw Error(Error::Code::DimensionMismatch,
                  "layer " + std::to_string(i) + " input does not match layer " + std::to_string(i - 1) + " output");
    if (l.kind == LayerKind::Add && (l.skip_from < 0 || size_t(l.skip_from) + 1 >= i))
      throw Error(Error::Code::DimensionMismatch, "layer " + std::to_string(i) + ": add needs an earlier skip source");
  }
  model.boundary_labels.clear();
  for (size_t i = 1; i < model.layers.size(); ++i) {
    LayerSpec a = model.layers[i - 1], b = model.layers[i];
    a.skip_from = b.skip_from = -1;
    model.boundary_labels.push_back(a == b ? BoundaryLabel::Hard : BoundaryLabel::Easy);
  }
}

// Format: '#' comments, a `model <name>` line, then one layer per line:
//   conv2d in=3 out=64 h=64 w=64 k=3 s=1 p=1
//   add in=64 out=64 h=16 w=16 skip=4
ModelSpec parse_model(const std::string& text) {
  ModelSpec m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    auto fail = [&](const std::string& why) {
      throw Error(Error::Code::ParseError, "line " + std::to_string(lineno) + ": " + why);
    };
    if (word == "model") {
      if (!(ls >> m.name)) fail("model needs a name");
      continue;
    }
    auto kind = parse_kind(word);
    if (!kind) fail("unknown layer kind '" + word + "'");
    LayerSpec l;
    l.kind = *kind;
    while (ls >> word) {
      auto eq = word.find('=');
      if (eq == std::string::npos) fail("expected key=value, got '" + word + "'");
      std::string key = word.substr(0, eq);
      long long v = 0;
      try {
        size_t used = 0;
        v = std::stoll(word.substr(eq + 1), &used);
        if (used != word.size() - eq - 1) throw std::invalid_argument("");
      } catch (const std::exception&) {
        fail("bad number in '" + word + "'");
      }
      if (key == "skip") {
        l.skip_from = int(v);
        continue;
      }
      if (v < 0 || v > 1'000'000) fail("value out of range in '" + word + "'");
      uint32_t u = uint32_t(v);
      if (key == "in") l.in_channels = u;
      else if (key == "out") l.out_channels = u;
      else if (key == "h") l.height = u;
      else if (key == "w") l.width = u;
      else if (key == "k") l.kernel = u;
      else if (key == "s") l.stride = u;
      else if (key == "p") l.padding = u;
      else fail("unknown key '" + key + "'");
    }
    m.layers.push_back(l);
  }
  if (m.name.empty()) m.name = "model";
  finalize_model(m);
  return m;
}

std::string format_model(const ModelSpec& m) {
  std::ostringstream out;
  out << "model " << m.name << "\n";
  for (const auto& l : m.layers) {
    out << to_string(l.kind) << " in=" << l.in_channels << " out=" << l.out_channels << " h=" << l.height
        << " w=" << l.width << " k=" << l.kernel << " s=" << l.stride << " p=" << l.padding;
    if (l.kind == LayerKind::Add) out << " skip=" << l.skip_from;
    out << "\n";
  }
  return out.str();
}

namespace {

class Builder {
 public:
  Builder(std::string name, uint32_t scale) : scale_(std::max(1u, scale)) { m_.name = std::move(name); }

  uint32_t ch(uint32_t c) const { return std::max(1u, c / scale_); }

  Builder& conv(uint32_t out, uint32_t k, uint32_t s = 1) {
    push({LayerKind::Conv2D, c_, ch(out), h_, w_, k, s, k / 2});
    return *this;
  }
  Builder& pool() {
    push({LayerKind::MaxPool, c_, c_, h_, w_, 2, 2, 0});
    return *this;
  }
  // Residual add against the input of the block that started `back` layers ago.
  Builder& add(int back) {
    LayerSpec l{LayerKind::Add, c_, c_, h_, w_, 1, 1, 0};
    l.skip_from = int(m_.layers.size()) - back - 1;
    push(l);
    return *this;
  }
  Builder& dense(uint32_t out) {
    push({LayerKind::Dense, c_ * h_ * w_, ch(out), 1, 1, 1, 1, 0});
    return *this;
  }
  ModelSpec done() {
    finalize_model(m_);
    return m_;
  }

 private:
  void push(const LayerSpec& l) {
    m_.layers.push_back(l);
    c_ = l.out_channels;
    h_ = l.out_height();
    w_ = l.out_width();
  }

  ModelSpec m_;
  uint32_t scale_;
  uint32_t c_ = 3, h_ = 64, w_ = 64;
};

ModelSpec alexnet(uint32_t scale) {
  return Builder("alexnet", scale).conv(64, 11, 4).conv(192, 5).conv(256, 3).conv(256, 3).conv(256, 3).done();
}

ModelSpec vgg11(uint32_t scale) {
  return Builder("vgg11", scale)
      .conv(64, 3).conv(128, 3, 2).conv(256, 3, 2).conv(256, 3).conv(256, 3).conv(512, 3, 2)
      .dense(1000).done();
}

ModelSpec vgg16(uint32_t scale) {
  return Builder("vgg16", scale)
      .conv(64, 3).conv(64, 3).conv(64, 3)
      .conv(128, 3, 2).conv(128, 3).conv(128, 3)
      .conv(256, 3, 2).conv(256, 3).conv(256, 3)
      .conv(512, 3, 2).pool().dense(1000).done();
}

// Basic blocks alternate a plain 3x3 pair (one hard boundary) with a 3x3/1x1
// pair whose boundary stays easy.
ModelSpec resnet18(uint32_t scale) {
  Builder b("resnet18", scale);
  b.conv(64, 7, 2).pool();
  b.conv(64, 3).conv(64, 3).add(2);
  b.conv(64, 3).conv(64, 1).add(2);
  for (uint32_t c : {128u, 256u}) {
    b.conv(c, 3, 2).conv(c, 3).add(2);
    b.conv(c, 3).conv(c, 1).add(2);
  }
  b.conv(512, 3, 2).conv(512, 3).add(2);
  return b.dense(1000).done();
}

ModelSpec resnet34(uint32_t scale) {
  Builder b("resnet34", scale);
  b.conv(64, 7, 2).pool();
  for (int i = 0; i < 3; ++i) b.conv(64, 3).conv(64, 3).add(2);
  b.conv(128, 3, 2).conv(128, 3).add(2);
  for (int i = 0; i < 3; ++i) b.conv(128, 3).conv(128, 3).add(2);
  b.conv(256, 3, 2);
  for (int i = 0; i < 5; ++i) b.conv(256, 3);
  b.add(6);
  b.conv(512, 3, 2).conv(512, 3).conv(512, 3).conv(512, 3).add(4);
  return b.pool().dense(1000).done();
}

ModelSpec resnet50(uint32_t scale) {
  Builder b("resnet50", scale);
  b.conv(64, 7, 2).conv(64, 3).pool();
  const uint32_t widths[] = {256, 512, 1024, 2048};
  const int blocks[] = {3, 3, 4, 2};
  for (int st = 0; st < 4; ++st) {
    for (int i = 0; i < blocks[st]; ++i) {
      uint32_t mid = widths[st] / 4;
      uint32_t s = (st > 0 && i == 0) ? 2 : 1;
      b.conv(mid, 1).conv(mid, 3, s);
      // two blocks stack a second 3x3 instead of the 1x1 expansion
      if ((st == 1 || st == 2) && i == 1) b.conv(mid, 3);
      else b.conv(widths[st], 1);
      b.add(3);
    }
  }
  return b.pool().dense(1000).done();
}

}  // namespace

const std::vector<std::string>& catalog_names() {
  static const std::vector<std::string> names = {"alexnet", "vgg11", "vgg16", "resnet18", "resnet34", "resnet50"};
  return names;
}

ModelSpec catalog_model(const std::string& name, uint32_t scale) {
  if (name == "alexnet") return alexnet(scale);
  if (name == "vgg11") return vgg11(scale);
  if (name == "vgg16") return vgg16(scale);
  if (name == "resnet18") return resnet18(scale);
  if (name == "resnet34") return resnet34(scale);
  if (name == "resnet50") return resnet50(scale);
  throw Error(Error::Code::ParseError, "unknown catalog model '" + name + "'");
}

ModelSpec load_model(const std::string& name_or_path, uint32_t scale) {
  auto& names = catalog_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) return catalog_model(name_or_path, scale);
  std::ifstream f(name_or_path);
  if (!f) throw Error(Error::Code::Io, "cannot open model file " + name_or_path);
  std::stringstream ss;
  ss << f.rdbuf();
  ModelSpec m = parse_model(ss.str());
  if (scale > 1) {
    // scale channel counts of a file model the same way the catalog does
    for (auto& l : m.layers) {
      if (&l != &m.layers.front()) l.in_channels = std::max(1u, l.in_channels / scale);
      l.out_channels = std::max(1u, l.out_channels / scale);
    }
    for (size_t i = 1; i < m.layers.size(); ++i)
      if (m.layers[i].kind == LayerKind::Dense) m.layers[i].in_channels = uint32_t(m.layers[i - 1].output_bytes());
    finalize_model(m);
  }
  return m;
}

std::string ThreatModel::code() const {
  std::string s;
  s += input_private ? 's' : 'p';
  s += model_private ? 's' : 'p';
  return s;
}

ThreatModel parse_threat(const std::string& code, Sharing sharing) {
  auto bit = [&](char c) {
    if (c == 's') return true;
    if (c == 'p') return false;
    throw Error(Error::Code::ParseError, "threat code must be pp, sp, ps or ss: '" + code + "'");
  };
  if (code.size() != 2) bit('?');
  return {bit(code[0]), bit(code[1]), sharing};
}

std::vector<ThreatModel> all_threats() {
  std::vector<ThreatModel> out;
  for (Sharing s : {Sharing::Temporal, Sharing::Spatial})
    for (const char* c : {"pp", "sp", "ps", "ss"}) out.push_back(parse_threat(c, s));
  return out;
}

const std::set<std::string>& declared_variables() {
  static const std::set<std::string> vars = {"data", "weights", "ifm", "acc", "ofm"};
  return vars;
}

PragmaSet pragmas_for(const ThreatModel& t, const TenantGrant& grant) {
  PragmaSet p;
  if (t.input_private) p.secret_vars.insert("data");
  if (t.model_private) p.secret_vars.insert({"weights", "ofm"});
  p.exec_mode = t.sharing;
  p.queue_depth = grant.queue_depth;
  p.spad_size = grant.spad_quota;
  p.bandwidth = t.model_private ? grant.bandwidth : 0;
  return p;
}

const char* to_string(Label l) { return l == Label::Private ? "private" : "public"; }

LabelTable derive_labels(const ModelSpec& model, const PragmaSet& pragmas) {
  for (const auto& v : pragmas.secret_vars)
    if (!declared_variables().count(v)) throw Error(Error::Code::UnknownVariable, "undeclared variable '" + v + "'");
  auto declared = [&](const char* v) { return pragmas.secret_vars.count(v) ? Label::Private : Label::Public; };

  LabelTable t;
  t.layers.resize(model.layers.size());
  Label prev = declared("data");
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    LayerLabels& ll = t.layers[i];
    ll.ifm = join(prev, declared("ifm"));
    ll.weights = l.has_weights() ? declared("weights") : Label::Public;
    ll.skip = l.kind == LayerKind::Add ? t.layers[size_t(l.skip_from)].ofm : Label::Public;
    ll.acc = join(join(ll.ifm, ll.weights), join(ll.skip, declared("acc")));
    ll.ofm = join(ll.acc, declared("ofm"));
    if (ll.ofm == Label::Private && declared("ofm") == Label::Public)
      t.warnings.push_back("ofm[" + std::to_string(i) + "] derived private from its operands but declared public");
    prev = ll.ofm;
  }
  return t;
}

}  // namespace sde
