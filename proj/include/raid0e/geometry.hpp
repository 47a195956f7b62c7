// geometry.hpp - pure address arithmetic for the striped array.
//
// The volume is a RAID-0 data domain of N disks plus a separate parity
// domain of M disks holding one XOR parity block per stripe. All mapping
// here is over the payload areas of the member disks; physical placement of
// superblocks and the journal region is the engine's concern.
#pragma once

#include <cstdint>
#include <vector>

namespace raid0e {

enum class Domain : std::uint8_t { data = 0, parity = 1 };

struct ArrayGeometry {
  std::uint32_t n_data = 0;        // N, data-domain width (>= 2)
  std::uint32_t m_parity = 0;      // M, parity-domain width (>= 1)
  std::uint32_t stripe_unit = 0;   // bytes per block per disk
  std::uint32_t sector_size = 512; // atomic I/O unit, bytes
  std::uint64_t disk_capacity = 0; // payload sectors per member disk

  // Throws std::invalid_argument when any invariant fails.
  void validate() const;

  std::uint64_t sectors_per_unit() const { return stripe_unit / sector_size; }
  // Volume is truncated to whole stripes; a trailing partial stripe on the
  // members is unusable.
  std::uint64_t total_stripes() const { return disk_capacity / sectors_per_unit(); }
  std::uint64_t stripe_data_sectors() const { return n_data * sectors_per_unit(); }
  std::uint64_t volume_sectors() const { return total_stripes() * stripe_data_sectors(); }
  std::uint64_t volume_bytes() const { return volume_sectors() * sector_size; }

  bool operator==(const ArrayGeometry&) const = default;
};

// Resolution of one logical address: which stripe, which domain, which disk
// inside that domain, and the byte offset on that disk's payload area.
struct BlockLocation {
  std::uint64_t stripe = 0;
  Domain domain = Domain::data;
  std::uint32_t disk_index = 0;
  std::uint64_t offset = 0; // bytes from start of the payload area

  bool operator==(const BlockLocation&) const = default;
};

// Maps a volume sector to its data-domain location. Striping is round-robin
// in stripe_unit chunks across disks 0..N-1. Throws std::out_of_range for
// lba >= volume_sectors().
BlockLocation map_lba(std::uint64_t lba, const ArrayGeometry& geom);

// Home of stripe S's parity block: disk S mod M, block S div M. For M=1 this
// degenerates to a single parity disk filled sequentially by stripe index.
BlockLocation parity_location(std::uint64_t stripe, const ArrayGeometry& geom);

// The N data locations of a stripe (disks 0..N-1, same per-disk offset)
// followed by its parity location.
std::vector<BlockLocation> stripe_members(std::uint64_t stripe, const ArrayGeometry& geom);

struct Fraction {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
  bool operator==(const Fraction&) const = default;
};

// Usable fraction of raw capacity, N/(N+M), reduced.
Fraction capacity_efficiency_ratio(const ArrayGeometry& geom);
double capacity_efficiency(const ArrayGeometry& geom);

} // namespace raid0e
