#include "sde/bundle.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace sde {

namespace fs = std::filesystem;

void write_file(const std::string& path, const std::string& bytes) {
  const fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream f(path, std::ios::binary);
  if (!f || !f.write(bytes.data(), std::streamsize(bytes.size())))
    throw Error(Error::Code::Io, "cannot write " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Error::Code::Io, "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

nlohmann::json grant_json(const TenantGrant& g) {
  return {{"tenant", g.tenant_id},        {"spad_quota", g.spad_quota}, {"queue_depth", g.queue_depth},
          {"exec_tiles", g.exec_tiles},   {"bandwidth", g.bandwidth},   {"dram_base", g.dram_base},
          {"dram_len", g.dram_len}};
}

nlohmann::json mix_json(const CompiledProgram& p) {
  return {{"model", p.model},
          {"threat", p.threat.code()},
          {"mode", to_string(p.threat.sharing)},
          {"instructions", p.instructions.size()},
          {"binary_bytes", p.binary_bytes()},
          {"mix", p.stats.mix},
          {"transfer_bytes", p.stats.transfer_bytes},
          {"pad_bytes", p.stats.pad_bytes}};
}

nlohmann::json zeroize_json(const CompiledProgram& optimized, const CompiledProgram& naive) {
  auto side = [](const CompiledProgram& p) {
    return nlohmann::json{{"count", p.stats.zeroize_count}, {"bytes", p.stats.zeroize_bytes}};
  };
  return {{"model", optimized.model},
          {"threat", optimized.threat.code()},
          {"optimized", side(optimized)},
          {"naive", side(naive)}};
}

namespace {

void put32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

uint32_t get32(const std::string& s, size_t at) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(s[at + i])) << (8 * i);
  return v;
}

}  // namespace

void save_bundle(const CompiledProgram& p, const std::string& dir, uint32_t scale, const std::string& binary) {
  const auto bin = write_binary(p.instructions, p.grant.tenant_id);
  write_file(dir + "/" + binary, std::string(bin.begin(), bin.end()));
  std::string data;
  for (const auto& seg : p.data) {
    put32(data, seg.addr);
    put32(data, uint32_t(seg.bytes.size()));
    data.append(seg.bytes.begin(), seg.bytes.end());
  }
  write_file(dir + "/data.bin", data);
  nlohmann::json j;
  j["model"] = p.model;
  j["scale"] = scale;
  j["binary"] = binary;
  j["threat"] = p.threat.code();
  j["mode"] = to_string(p.threat.sharing);
  j["grant"] = grant_json(p.grant);
  j["config_writes"] = nlohmann::json::array();
  for (const auto& c : p.config_writes) j["config_writes"].push_back({{"reg", to_string(c.reg)}, {"value", c.value}});
  j["layer_starts"] = p.layer_starts;
  j["output"] = {{"base", p.output.base}, {"len", p.output.len}};
  j["warnings"] = p.warnings;
  write_file(dir + "/config.json", j.dump(1) + "\n");
}

CompiledProgram load_bundle(const std::string& path) {
  const std::string dir = fs::is_directory(path) ? path : fs::path(path).parent_path().string();
  CompiledProgram p;
  nlohmann::json j;
  std::string binary = "prog.bin";
  try {
    j = nlohmann::json::parse(read_file(dir + "/config.json"));
    p.model = j.at("model");
    binary = j.value("binary", binary);
    p.threat = parse_threat(j.at("threat"), j.at("mode") == "spatial" ? Sharing::Spatial : Sharing::Temporal);
    const auto& g = j.at("grant");
    p.grant.tenant_id = g.at("tenant");
    p.grant.spad_quota = g.at("spad_quota");
    p.grant.queue_depth = g.at("queue_depth");
    p.grant.exec_tiles = g.at("exec_tiles");
    p.grant.bandwidth = g.at("bandwidth");
    p.grant.dram_base = g.at("dram_base");
    p.grant.dram_len = g.at("dram_len");
    p.layer_starts = j.at("layer_starts").get<std::vector<uint32_t>>();
    p.output.base = j.at("output").at("base");
    p.output.len = j.at("output").at("len");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Error::Code::ParseError, dir + "/config.json: " + e.what());
  }
  const std::string bin = read_file(dir + "/" + binary);
  BinaryProgram b = read_binary(std::span(reinterpret_cast<const uint8_t*>(bin.data()), bin.size()));
  if (b.tenant_id != p.grant.tenant_id) throw Error(Error::Code::MalformedField, "binary tenant id differs from config");
  p.instructions = std::move(b.instructions);
  for (const auto& i : p.instructions)
    if (const auto* c = std::get_if<SetConfig>(&i)) p.config_writes.push_back(*c);
  const std::string data = read_file(dir + "/data.bin");
  for (size_t at = 0; at < data.size();) {
    if (at + 8 > data.size()) throw Error(Error::Code::MalformedField, "truncated data.bin");
    DataSegment s;
    s.addr = get32(data, at);
    const uint32_t len = get32(data, at + 4);
    at += 8;
    if (at + len > data.size()) throw Error(Error::Code::MalformedField, "truncated data.bin");
    s.bytes.assign(data.begin() + long(at), data.begin() + long(at + len));
    at += len;
    p.data.push_back(std::move(s));
  }
  p.stats = instruction_mix(p.instructions);
  return p;
}

}  // namespace sde
