#include "sde/memsys.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace sde {

std::vector<std::pair<uint32_t, uint32_t>> split_bursts(uint32_t addr, uint32_t len, uint32_t burst) {
  std::vector<std::pair<uint32_t, uint32_t>> out;
  const uint64_t end = uint64_t(addr) + len;
  uint64_t a = addr;
  while (a < end) {
    const uint64_t next = std::min<uint64_t>(end, (a / burst + 1) * burst);
    out.emplace_back(uint32_t(a), uint32_t(next - a));
    a = next;
  }
  return out;
}

std::vector<TraceWindow> BandwidthTrace::windows(std::optional<uint8_t> tenant) const {
  std::vector<TraceWindow> w(window_count());
  for (size_t i = 0; i < w.size(); ++i) w[i].window = i;
  for (const auto& b : bursts) {
    if (tenant && b.tenant != *tenant) continue;
    auto& win = w[b.issue_cycle / window_cycles];
    (b.channel == Channel::Read ? win.read_bytes : win.write_bytes) += b.len;
    (b.kind == BurstKind::Real ? win.real_bytes : win.fake_bytes) += b.len;
  }
  std::vector<LayerMark> marks;
  for (const auto& m : layer_starts)
    if (!tenant || m.tenant == *tenant) marks.push_back(m);
  std::stable_sort(marks.begin(), marks.end(), [](const auto& a, const auto& b) { return a.cycle < b.cycle; });
  size_t mi = 0;
  int layer = -1;
  for (auto& win : w) {
    const uint64_t lo = win.window * window_cycles, hi = lo + window_cycles;
    while (mi < marks.size() && marks[mi].cycle < hi) {
      if (marks[mi].layer > 0) win.boundary = true;
      layer = int(marks[mi].layer);
      ++mi;
    }
    win.layer_id = layer;
  }
  return w;
}

std::pair<uint64_t, uint64_t> BandwidthTrace::complete_shaped_windows(uint8_t tenant) const {
  for (const auto& s : shaper_spans) {
    if (s.tenant != tenant) continue;
    const uint64_t stop = std::min(s.stop, end_cycle);
    const uint64_t first = (s.start + window_cycles - 1) / window_cycles;
    const uint64_t last = stop / window_cycles;
    return {first, std::max(first, last)};
  }
  return {0, 0};
}

std::vector<uint64_t> BandwidthTrace::boundary_windows(uint8_t tenant) const {
  std::vector<uint64_t> out;
  for (const auto& m : layer_starts)
    if (m.tenant == tenant && m.layer > 0) out.push_back(m.cycle / window_cycles);
  return out;
}

static std::string header(const BandwidthTrace& t) {
  std::ostringstream h;
  h << "# bandwidth=" << t.bandwidth << " burst=" << t.burst_bytes << " window=" << t.window_cycles << "\n";
  return h.str();
}

std::string BandwidthTrace::attacker_csv(std::optional<uint8_t> tenant) const {
  std::ostringstream out;
  out << header(*this) << "window,read_bytes,write_bytes\n";
  for (const auto& w : windows(tenant)) out << w.window << "," << w.read_bytes << "," << w.write_bytes << "\n";
  return out.str();
}

std::string BandwidthTrace::privileged_csv(std::optional<uint8_t> tenant) const {
  std::ostringstream out;
  out << header(*this) << "window,read_bytes,write_bytes,boundary,layer_id,real_bytes,fake_bytes,tenant\n";
  const int t = tenant ? int(*tenant) : -1;
  for (const auto& w : windows(tenant))
    out << w.window << "," << w.read_bytes << "," << w.write_bytes << "," << int(w.boundary) << "," << w.layer_id
        << "," << w.real_bytes << "," << w.fake_bytes << "," << t << "\n";
  return out.str();
}

MemorySystem::MemorySystem(const AcceleratorConfig& cfg, Sharing mode)
    : cfg_(cfg),
      mode_(mode),
      slot_(bus_slot_cycles(cfg, mode)),
      bank_service_until_(cfg.dram.banks, 0),
      bank_flight_until_(cfg.dram.banks, 0) {
  trace_.window_cycles = cfg.window_cycles;
  trace_.burst_bytes = cfg.burst_bytes;
}

void MemorySystem::attach(uint8_t tenant, uint64_t bandwidth, uint32_t dram_base, uint32_t dram_len) {
  Lane& l = lanes_[tenant];
  l = Lane{};
  l.attached = true;
  l.bandwidth = bandwidth;
  l.range_base = dram_base;
  l.range_len = dram_len;
  if (!trace_.bandwidth) trace_.bandwidth = bandwidth;
}

void MemorySystem::detach(uint8_t tenant, uint64_t cycle) {
  set_shaper(tenant, false, cycle);
  lanes_[tenant].attached = false;
  lanes_[tenant].queue = {};
}

void MemorySystem::set_bandwidth(uint8_t tenant, uint64_t bandwidth) {
  lanes_[tenant].bandwidth = bandwidth;
  trace_.bandwidth = bandwidth;
}

void MemorySystem::set_addr_range(uint8_t tenant, uint32_t base, uint32_t len) {
  lanes_[tenant].range_base = base;
  lanes_[tenant].range_len = len;
  lanes_[tenant].fake_cursor = 0;
}

bool MemorySystem::slot_owned(uint8_t tenant, uint64_t cycle) const {
  if (mode_ == Sharing::Temporal) return true;
  return (cycle / slot_) % kMaxTenants == tenant;
}

void MemorySystem::set_shaper(uint8_t tenant, bool on, uint64_t cycle) {
  Lane& l = lanes_[tenant];
  if (on == l.shaping) return;
  if (on) {
    l.shaping = true;
    l.period = shaper_period(l.bandwidth, cfg_.burst_bytes);
    uint64_t c = (cycle + slot_ - 1) / slot_ * slot_;
    while (!slot_owned(tenant, c)) c += slot_;
    l.next_expiry = c;
    trace_.shaper_spans.push_back({tenant, c, std::numeric_limits<uint64_t>::max(), l.period});
  } else {
    l.shaping = false;
    for (auto& s : trace_.shaper_spans)
      if (s.tenant == tenant && s.stop == std::numeric_limits<uint64_t>::max()) s.stop = cycle;
  }
}

size_t MemorySystem::queue_space(uint8_t tenant, Channel ch) const {
  const auto& q = lanes_[tenant].queue[size_t(ch)];
  return cfg_.real_queue_bursts > q.size() ? cfg_.real_queue_bursts - q.size() : 0;
}

bool MemorySystem::submit(uint8_t tenant, Channel ch, uint32_t addr, uint32_t len, uint64_t tag, bool encrypted) {
  if (!queue_space(tenant, ch)) return false;
  lanes_[tenant].queue[size_t(ch)].push_back({addr, len, tag, encrypted});
  return true;
}

std::optional<uint32_t> MemorySystem::fake_address(Lane& l, uint64_t cycle) {
  const uint32_t span = std::max(cfg_.burst_bytes, l.range_len / cfg_.burst_bytes * cfg_.burst_bytes);
  for (uint32_t tries = 0; tries < 2 * cfg_.dram.banks; ++tries) {
    const uint32_t addr = l.range_base + l.fake_cursor;
    l.fake_cursor = (l.fake_cursor + cfg_.burst_bytes) % span;
    const uint32_t bank = bank_of(addr);
    if (!bank_serving(bank, cycle) && !bank_in_flight(bank, cycle)) return addr;
  }
  return std::nullopt;
}

void MemorySystem::issue(uint8_t tenant, Channel ch, BurstKind kind, const Pending& p, uint64_t cycle) {
  const uint32_t bank = bank_of(p.addr);
  const uint64_t complete = cycle + cfg_.dram.burst_service + slot_;
  bank_service_until_[bank] = std::max(bank_service_until_[bank], cycle + cfg_.dram.burst_service);
  bank_flight_until_[bank] = std::max(bank_flight_until_[bank], complete);
  MemBurst b{tenant, ch, kind, p.encrypted, p.addr, p.len, cycle, complete, p.tag};
  if (kind == BurstKind::Real) {
    Lane& l = lanes_[tenant];
    if (p.encrypted) {
      // one cipher pipeline per tenant and channel; only its latency shows
      // unless bursts arrive faster than it drains
      b.complete_cycle = std::max(complete, l.cipher_free[size_t(ch)]) + encryption_delay(p.len, cfg_.cipher);
      l.cipher_free[size_t(ch)] = b.complete_cycle;
    }
    ++l.in_flight[size_t(ch)];
    flights_.push({b.complete_cycle, seq_++, {tenant, ch, p.tag, p.len, b.complete_cycle}});
  }
  trace_.bursts.push_back(b);
}

void MemorySystem::tick(uint64_t cycle) {
  // Shaped lanes: real bursts of both channels go first so a fake burst on
  // one channel never takes the bank the other channel's head is waiting for.
  for (uint8_t t = 0; t < kMaxTenants; ++t) {
    Lane& l = lanes_[t];
    if (!l.attached || !l.shaping || cycle != l.next_expiry) continue;
    l.next_expiry += l.period;
    std::array<bool, 2> sent{};
    for (Channel ch : {Channel::Read, Channel::Write}) {
      auto& q = l.queue[size_t(ch)];
      if (!q.empty() && !bank_serving(bank_of(q.front().addr), cycle)) {
        issue(t, ch, BurstKind::Real, q.front(), cycle);
        q.pop_front();
        sent[size_t(ch)] = true;
      }
    }
    // Empty queue or the head's bank is busy: a fake burst keeps the rate
    // constant.
    for (Channel ch : {Channel::Read, Channel::Write}) {
      if (sent[size_t(ch)]) continue;
      auto addr = fake_address(l, cycle);
      issue(t, ch, BurstKind::Fake, {addr.value_or(l.range_base), cfg_.burst_bytes, 0, false}, cycle);
    }
  }
  if (cycle % slot_ != 0) return;
  for (Channel ch : {Channel::Read, Channel::Write}) {
    for (uint8_t t = 0; t < kMaxTenants; ++t) {
      Lane& l = lanes_[t];
      if (!l.attached || l.shaping || !slot_owned(t, cycle)) continue;
      auto& q = l.queue[size_t(ch)];
      if (q.empty() || bank_serving(bank_of(q.front().addr), cycle)) continue;
      issue(t, ch, BurstKind::Real, q.front(), cycle);
      q.pop_front();
      break;
    }
  }
}

std::vector<BurstDone> MemorySystem::drain(uint64_t cycle) {
  std::vector<BurstDone> out;
  while (!flights_.empty() && flights_.top().ready <= cycle) {
    const BurstDone d = flights_.top().done;
    flights_.pop();
    --lanes_[d.tenant].in_flight[size_t(d.channel)];
    out.push_back(d);
  }
  return out;
}

bool MemorySystem::quiet(uint8_t tenant) const {
  const Lane& l = lanes_[tenant];
  return l.queue[0].empty() && l.queue[1].empty() && !l.in_flight[0] && !l.in_flight[1];
}

void MemorySystem::finish(uint64_t end_cycle) {
  for (uint8_t t = 0; t < kMaxTenants; ++t)
    if (lanes_[t].shaping) set_shaper(t, false, end_cycle);
  trace_.end_cycle = end_cycle;
}

}  // namespace sde
