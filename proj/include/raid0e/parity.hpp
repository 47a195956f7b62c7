// parity.hpp - XOR parity generation, incremental update and reconstruction.
//
// All operations are pure byte-wise XOR folds over equal-length blocks:
//   P = D_0 ^ D_1 ^ ... ^ D_{N-1}
// and a missing block is the fold of the survivors with the parity. Length
// mismatches are contract violations and throw.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace raid0e {

using Block = std::vector<std::uint8_t>;

// acc ^= src, byte by byte. Lengths must match.
void xor_accumulate(std::span<std::uint8_t> acc, std::span<const std::uint8_t> src);

// Fold of all input blocks. Order-independent; the list must be non-empty.
Block compute_parity(std::span<const Block> blocks);

// New parity after replacing old_data with new_data under parity old_parity:
//   P' = D ^ D' ^ P
// Agrees with a full recompute whenever old_parity was consistent.
Block incremental_parity(const Block& old_data, const Block& new_data, const Block& old_parity);

// The unique block completing `surviving` to a stripe with parity `parity`.
// surviving must hold exactly n_data - 1 blocks.
Block reconstruct(std::span<const Block> surviving, const Block& parity, std::uint32_t n_data);

} // namespace raid0e
