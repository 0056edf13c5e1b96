#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "sde/config.hpp"

namespace sde {

enum class Channel : uint8_t { Read = 0, Write = 1 };
enum class BurstKind : uint8_t { Real = 0, Fake = 1 };

struct MemBurst {
  uint8_t tenant = 0;
  Channel channel = Channel::Read;
  BurstKind kind = BurstKind::Real;
  bool encrypted = false;
  uint32_t addr = 0;
  uint32_t len = 0;
  uint64_t issue_cycle = 0;
  uint64_t complete_cycle = 0;  // data usable, including cipher latency
  uint64_t tag = 0;             // owner transfer, meaningless for fakes
};

struct BurstDone {
  uint8_t tenant;
  Channel channel;
  uint64_t tag;
  uint32_t len;
  uint64_t cycle;
};

struct LayerMark {
  uint8_t tenant;
  uint32_t layer;
  uint64_t cycle;
};

struct ShaperSpan {
  uint8_t tenant;
  uint64_t start;  // first timer expiry
  uint64_t stop;   // exclusive
  uint32_t period;
};

struct TraceWindow {
  uint64_t window = 0;
  uint64_t read_bytes = 0;
  uint64_t write_bytes = 0;
  // privileged columns
  uint64_t real_bytes = 0;
  uint64_t fake_bytes = 0;
  bool boundary = false;
  int layer_id = -1;
};

/// Everything the memory side observed during a run. The attacker view folds
/// bursts into per-window byte counts; the privileged view keeps ground truth.
struct BandwidthTrace {
  uint32_t window_cycles = 128;
  uint32_t burst_bytes = 64;
  uint64_t bandwidth = 0;  // echoed in CSV headers
  uint64_t end_cycle = 0;
  std::vector<MemBurst> bursts;
  std::vector<LayerMark> layer_starts;
  std::vector<ShaperSpan> shaper_spans;

  size_t window_count() const { return (end_cycle + window_cycles - 1) / window_cycles; }
  /// Per-window totals; restricted to one tenant when given.
  std::vector<TraceWindow> windows(std::optional<uint8_t> tenant = std::nullopt) const;
  /// Windows lying entirely inside the tenant's shaper span.
  std::pair<uint64_t, uint64_t> complete_shaped_windows(uint8_t tenant) const;
  /// Window index of every layer start after the first, per tenant.
  std::vector<uint64_t> boundary_windows(uint8_t tenant) const;

  std::string attacker_csv(std::optional<uint8_t> tenant = std::nullopt) const;
  std::string privileged_csv(std::optional<uint8_t> tenant = std::nullopt) const;
};

/// Splits [addr, addr+len) at burst-aligned boundaries.
std::vector<std::pair<uint32_t, uint32_t>> split_bursts(uint32_t addr, uint32_t len, uint32_t burst);

/// DMA bursts, DRAM bank timing, per-tenant shapers and cipher pipelines.
///
/// The data bus of each channel is cut into slots of one burst each. In
/// spatial mode slot k belongs to tenant k % 4, so tenants never contend for
/// the bus. A shaped tenant emits exactly one burst per timer expiry,
/// real if its queue head can go, fake otherwise.
class MemorySystem {
 public:
  MemorySystem(const AcceleratorConfig& cfg, Sharing mode);

  void attach(uint8_t tenant, uint64_t bandwidth, uint32_t dram_base, uint32_t dram_len);
  void detach(uint8_t tenant, uint64_t cycle);

  void set_bandwidth(uint8_t tenant, uint64_t bandwidth);
  void set_addr_range(uint8_t tenant, uint32_t base, uint32_t len);
  void set_shaper(uint8_t tenant, bool on, uint64_t cycle);
  bool shaper_on(uint8_t tenant) const { return lanes_[tenant].shaping; }

  size_t queue_space(uint8_t tenant, Channel ch) const;
  /// Queues one burst (len <= burst size). False means back-pressure.
  bool submit(uint8_t tenant, Channel ch, uint32_t addr, uint32_t len, uint64_t tag, bool encrypted);

  void tick(uint64_t cycle);
  /// Bursts whose data became usable at or before `cycle`.
  std::vector<BurstDone> drain(uint64_t cycle);

  bool quiet(uint8_t tenant) const;  // nothing queued or in flight
  uint32_t slot_cycles() const { return slot_; }

  void mark_layer(uint8_t tenant, uint32_t layer, uint64_t cycle) { trace_.layer_starts.push_back({tenant, layer, cycle}); }
  void finish(uint64_t end_cycle);
  const BandwidthTrace& trace() const { return trace_; }

 private:
  struct Pending {
    uint32_t addr, len;
    uint64_t tag;
    bool encrypted;
  };
  struct Lane {
    bool attached = false;
    bool shaping = false;
    uint64_t bandwidth = 0;
    uint32_t period = 0;
    uint64_t next_expiry = 0;
    uint32_t range_base = 0, range_len = 0;
    uint32_t fake_cursor = 0;
    std::array<std::deque<Pending>, 2> queue;
    std::array<uint64_t, 2> cipher_free{};
    std::array<uint32_t, 2> in_flight{};
  };
  struct Flight {
    uint64_t ready;
    uint64_t seq;
    BurstDone done;
    bool operator>(const Flight& o) const { return ready != o.ready ? ready > o.ready : seq > o.seq; }
  };

  bool slot_owned(uint8_t tenant, uint64_t cycle) const;
  uint32_t bank_of(uint32_t addr) const { return (addr / cfg_.burst_bytes) % cfg_.dram.banks; }
  bool bank_serving(uint32_t bank, uint64_t cycle) const { return bank_service_until_[bank] > cycle; }
  bool bank_in_flight(uint32_t bank, uint64_t cycle) const { return bank_flight_until_[bank] > cycle; }
  std::optional<uint32_t> fake_address(Lane& lane, uint64_t cycle);
  void issue(uint8_t tenant, Channel ch, BurstKind kind, const Pending& p, uint64_t cycle);

  AcceleratorConfig cfg_;
  Sharing mode_;
  uint32_t slot_;
  std::array<Lane, kMaxTenants> lanes_;
  std::vector<uint64_t> bank_service_until_, bank_flight_until_;
  std::priority_queue<Flight, std::vector<Flight>, std::greater<Flight>> flights_;
  uint64_t seq_ = 0;
  BandwidthTrace trace_;
};

}  // namespace sde
