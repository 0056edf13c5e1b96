#pragma once

#include <string>

#include "json.hpp"
#include "sde/program.hpp"

namespace sde {

/// On-disk form of a compiled program: the binary (prog.bin unless renamed),
/// data.bin and config.json in one directory. data.bin is a sequence of
/// (u32 addr, u32 len, bytes).
void save_bundle(const CompiledProgram& p, const std::string& dir, uint32_t scale,
                 const std::string& binary = "prog.bin");
/// `path` is the bundle directory or its binary.
CompiledProgram load_bundle(const std::string& path);

nlohmann::json grant_json(const TenantGrant& g);
nlohmann::json mix_json(const CompiledProgram& p);
nlohmann::json zeroize_json(const CompiledProgram& optimized, const CompiledProgram& naive);

void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace sde
