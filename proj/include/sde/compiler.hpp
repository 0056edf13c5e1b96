#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sde/config.hpp"
#include "sde/program.hpp"
#include "sde/workload.hpp"

namespace sde {

/// Tile extents over (out channels, in channels, out rows, out cols). Extents
/// divide the layer dims. Pool and elementwise layers tile channels and rows.
struct TileConfig {
  uint32_t oc = 1, ic = 1, oh = 1, ow = 1;
  std::array<uint32_t, kNumSpadKinds> footprint{};  // bytes per kind
  uint64_t est_cycles = 0;                          // analytic estimate
  bool operator==(const TileConfig& o) const { return oc == o.oc && ic == o.ic && oh == o.oh && ow == o.ow; }
};
std::string to_string(const TileConfig& t);

/// Every tiling of the layer that fits the BOM limits and the encoding.
/// Exhaustive up to `cap` candidates, else an evenly strided subsample.
std::vector<TileConfig> legal_tilings(const LayerSpec& layer, const ResourceBOM& limits, size_t cap = 4096);

/// Fast analytic cost: max of compute and DMA cycles plus pipeline fill.
uint64_t analytic_cost(const LayerSpec& layer, const TileConfig& t, const ResourceBOM& limits,
                       const AcceleratorConfig& cfg);

using TileCost = std::function<uint64_t(const TileConfig&)>;

struct AutotuneOptions {
  size_t sim_budget = 16;  // candidates simulated after the analytic prefilter
  size_t cap = 4096;
};

/// Minimizes simulated single-layer cycles over the analytic top candidates.
/// Pass a custom cost to replace the simulator.
TileConfig autotune(const LayerSpec& layer, const ResourceBOM& limits, const ThreatModel& threat,
                    const AcceleratorConfig& cfg, const AutotuneOptions& opts = {}, TileCost cost = {});

/// Per-tenant capacity of the platform for a sharing mode.
ResourceBOM platform_limits(const AcceleratorConfig& cfg, Sharing mode);

ResourceBOM compute_bom(const PragmaSet& pragmas, const std::vector<TileConfig>& tiles, const AcceleratorConfig& cfg);

/// Generic information-flow graph: a node is Private iff it is declared
/// Private or reachable from one.
struct FlowGraph {
  std::vector<Label> labels;
  std::vector<std::pair<uint32_t, uint32_t>> edges;  // operand -> result
};
std::vector<Label> propagate(const FlowGraph& g);

struct FlowMap {
  std::vector<LayerLabels> layers;
  std::vector<std::string> warnings;
};
FlowMap track_flows(const ModelSpec& model, const PragmaSet& pragmas);

/// Pads a transfer to whole bursts so every burst on the bus has the same
/// size. Padding is recorded in pad.right.
DramRange equalize_transfer(uint32_t base, uint32_t len, uint32_t burst);

enum class ZeroizeMode : uint8_t { Optimized, Naive };

struct CompileOptions {
  ThreatModel threat;
  uint8_t tenant_id = 0;
  AcceleratorConfig cfg = AcceleratorConfig::defaults();
  ZeroizeMode zeroize = ZeroizeMode::Optimized;
  uint64_t bandwidth = 0;  // shaper bandwidth, 0 = the grant's
  AutotuneOptions autotune;
  std::optional<std::vector<TileConfig>> tiles;  // skip autotuning
  std::optional<PragmaSet> pragmas;              // default: pragmas_for(threat, grant)
};

CompiledProgram compile(const ModelSpec& model, const CompileOptions& opts);

/// Tiles chosen for each layer (threat-independent; cached per process).
std::vector<TileConfig> choose_tiles(const ModelSpec& model, const ResourceBOM& limits, const AcceleratorConfig& cfg,
                                     const AutotuneOptions& opts);

}  // namespace sde
