#include "raid0e/parity.hpp"

#include <cstddef>
#include <stdexcept>
#include <string>

namespace raid0e {

void xor_accumulate(std::span<std::uint8_t> acc, std::span<const std::uint8_t> src) {
  if (acc.size() != src.size())
    throw std::invalid_argument("xor_accumulate: length mismatch (" + std::to_string(acc.size()) +
                                " vs " + std::to_string(src.size()) + ")");
  // Word-at-a-time over the aligned middle, bytes at the edges.
  std::size_t i = 0;
  const std::size_t n = acc.size();
  std::uint8_t* a = acc.data();
  const std::uint8_t* s = src.data();
  for (; i + sizeof(std::uint64_t) <= n; i += sizeof(std::uint64_t)) {
    std::uint64_t va, vs;
    __builtin_memcpy(&va, a + i, sizeof va);
    __builtin_memcpy(&vs, s + i, sizeof vs);
    va ^= vs;
    __builtin_memcpy(a + i, &va, sizeof va);
  }
  for (; i < n; ++i)
    a[i] ^= s[i];
}

Block compute_parity(std::span<const Block> blocks) {
  if (blocks.empty())
    throw std::invalid_argument("compute_parity: empty block list");
  Block parity = blocks[0];
  for (std::size_t i = 1; i < blocks.size(); ++i) {
    if (blocks[i].size() != parity.size())
      throw std::invalid_argument("compute_parity: length mismatch at block " + std::to_string(i));
    xor_accumulate(parity, blocks[i]);
  }
  return parity;
}

Block incremental_parity(const Block& old_data, const Block& new_data, const Block& old_parity) {
  if (old_data.size() != new_data.size() || old_data.size() != old_parity.size())
    throw std::invalid_argument("incremental_parity: length mismatch");
  Block parity = old_parity;
  xor_accumulate(parity, old_data);
  xor_accumulate(parity, new_data);
  return parity;
}

Block reconstruct(std::span<const Block> surviving, const Block& parity, std::uint32_t n_data) {
  if (surviving.size() + 1 != n_data)
    throw std::invalid_argument("reconstruct: expected " + std::to_string(n_data - 1) +
                                " survivors, got " + std::to_string(surviving.size()));
  Block missing = parity;
  for (std::size_t i = 0; i < surviving.size(); ++i) {
    if (surviving[i].size() != missing.size())
      throw std::invalid_argument("reconstruct: length mismatch at survivor " + std::to_string(i));
    xor_accumulate(missing, surviving[i]);
  }
  return missing;
}

} // namespace raid0e
