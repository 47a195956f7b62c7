// superblock.hpp - array metadata block written identically to every member.
//
// Fixed 4096-byte little-endian layout, CRC32-protected.  The superblock
// carries the array geometry, the member role map, the journal extent and a
// generation counter; it deliberately contains nothing member-specific so a
// single encoded image can be stamped onto all disks.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "raid0e/geometry.hpp"
#include "raid0e/result.hpp"

namespace raid0e {

inline constexpr std::uint32_t kSuperblockMagic = 0x31453052; // "R0E1"
inline constexpr std::uint16_t kSuperblockVersion = 1;
inline constexpr std::size_t kSuperblockBytes = 4096;

enum class MemberStatus : std::uint8_t { healthy = 0, failed = 1 };

// One row of the role map.  `index` is the position within the member's own
// domain (data disk 2, parity disk 0, ...); rows are stored data-first.
struct MemberRole {
  Domain domain = Domain::data;
  MemberStatus status = MemberStatus::healthy;
  std::uint32_t index = 0;
  std::string name; // <= 15 chars, informational

  bool operator==(const MemberRole&) const = default;
};

struct Superblock {
  ArrayGeometry geom;
  std::uint64_t data_area_start = 0;   // sectors, data members
  std::uint64_t parity_area_start = 0; // sectors, parity members
  std::uint64_t journal_start = 0;     // sectors, parity members
  std::uint64_t journal_sectors = 0;   // per parity member
  std::uint64_t generation = 0;
  std::vector<MemberRole> members; // n_data data rows then m_parity parity rows

  bool operator==(const Superblock&) const = default;

  // Serializes to exactly kSuperblockBytes; throws std::invalid_argument if
  // the contents are not representable (too many members, long names, ...).
  std::vector<std::uint8_t> encode() const;

  // Strict parse: magic, version, size and CRC all have to line up.
  static Result<Superblock> decode(const std::uint8_t* buf, std::size_t len);
};

} // namespace raid0e
