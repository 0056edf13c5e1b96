#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "sde/isa.hpp"

namespace sde {

// Layouts: in [ic][in_h][in_w] int8, w [oc][ic][k][k] int8, acc [oc][out_h][out_w] int32.
void conv_tile_ref(const int8_t* in, const int8_t* w, int32_t* acc, const TileLoop& t, bool reset);

/// Same result as conv_tile_ref, output channels split across OpenMP threads.
void conv_tile(const int8_t* in, const int8_t* w, int32_t* acc, const TileLoop& t, bool reset);

size_t count_nonzero(std::span<const int8_t> v);

int8_t saturate8(int32_t v);

/// Elementwise semantics of the Alu instruction on already-widened operands.
/// Throws MalformedField when the element counts do not fold evenly.
void alu_apply(AluOp op, std::span<const int32_t> in, std::span<int32_t> out, std::optional<int16_t> imm);

/// Deterministic pseudo-random int8 tensor contents.
void fill_synthetic(std::span<int8_t> out, uint64_t seed);
uint64_t synthetic_seed(const std::string& model, uint8_t tenant, uint32_t tensor);

}  // namespace sde
