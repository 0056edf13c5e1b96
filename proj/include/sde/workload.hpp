#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sde/config.hpp"

namespace sde {

enum class LayerKind : uint8_t { Conv2D, Dense, MaxPool, ReLU, Add };
const char* to_string(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::Conv2D;
  uint32_t in_channels = 1;
  uint32_t out_channels = 1;
  uint32_t height = 1;  // input spatial dims
  uint32_t width = 1;
  uint32_t kernel = 1;
  uint32_t stride = 1;
  uint32_t padding = 0;
  int skip_from = -1;  // Add: index of the layer whose output is the residual operand

  uint32_t out_height() const;
  uint32_t out_width() const;
  uint64_t input_bytes() const { return uint64_t(in_channels) * height * width; }
  uint64_t output_bytes() const { return uint64_t(out_channels) * out_height() * out_width(); }
  uint64_t weight_bytes() const;
  uint64_t macs() const;
  bool has_weights() const { return kind == LayerKind::Conv2D || kind == LayerKind::Dense; }
  bool operator==(const LayerSpec&) const = default;
};

enum class BoundaryLabel : uint8_t { Easy, Hard };

struct ModelSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  std::vector<BoundaryLabel> boundary_labels;  // layers.size() - 1 entries

  size_t easy_boundaries() const;
  size_t all_boundaries() const { return boundary_labels.size(); }
};

/// Checks dimensions chain between layers and derives boundary labels.
/// Adjacent layers with an identical shape signature are hard to tell apart.
void finalize_model(ModelSpec& model);

ModelSpec parse_model(const std::string& text);
std::string format_model(const ModelSpec& model);
ModelSpec load_model(const std::string& name_or_path, uint32_t scale = 1);

/// Built-in networks at 64x64 input resolution, channel counts divided by `scale`.
ModelSpec catalog_model(const std::string& name, uint32_t scale = 1);
const std::vector<std::string>& catalog_names();

struct ThreatModel {
  bool input_private = false;
  bool model_private = false;
  Sharing sharing = Sharing::Temporal;

  std::string code() const;  // pp, sp, ps, ss: first letter input, second model
  bool operator==(const ThreatModel&) const = default;
};
ThreatModel parse_threat(const std::string& code, Sharing sharing = Sharing::Temporal);
std::vector<ThreatModel> all_threats();  // 4 secrecy combos x 2 sharing modes

struct PragmaSet {
  std::set<std::string> secret_vars;
  Sharing exec_mode = Sharing::Temporal;
  uint32_t queue_depth = 0;
  std::array<uint32_t, kNumSpadKinds> spad_size{};
  uint64_t bandwidth = 0;
};

/// Variables a pragma may name.
const std::set<std::string>& declared_variables();

/// The pragmas a user writes for a threat model under a platform grant.
PragmaSet pragmas_for(const ThreatModel& threat, const TenantGrant& grant);

enum class Label : uint8_t { Public = 0, Private = 1 };
constexpr Label join(Label a, Label b) { return a == Label::Private || b == Label::Private ? Label::Private : Label::Public; }
const char* to_string(Label l);

struct LayerLabels {
  Label ifm = Label::Public;
  Label weights = Label::Public;
  Label skip = Label::Public;
  Label acc = Label::Public;
  Label ofm = Label::Public;
};

struct LabelTable {
  std::vector<LayerLabels> layers;
  std::vector<std::string> warnings;
};

LabelTable derive_labels(const ModelSpec& model, const PragmaSet& pragmas);

}  // namespace sde
