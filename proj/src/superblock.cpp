#include "raid0e/superblock.hpp"

#include <cstring>
#include <stdexcept>

#include <zlib.h>

#include "raid0e/bytes.hpp"

namespace raid0e {

namespace {

// Byte offsets inside the 4096-byte image.
constexpr std::size_t kOffMagic = 0;
constexpr std::size_t kOffVersion = 4;
constexpr std::size_t kOffSize = 6;
constexpr std::size_t kOffNData = 8;
constexpr std::size_t kOffMParity = 12;
constexpr std::size_t kOffSectorSize = 16;
constexpr std::size_t kOffStripeUnit = 20;
constexpr std::size_t kOffDiskCapacity = 24;
constexpr std::size_t kOffTotalStripes = 32;
constexpr std::size_t kOffDataStart = 40;
constexpr std::size_t kOffParityStart = 48;
constexpr std::size_t kOffJournalStart = 56;
constexpr std::size_t kOffJournalSectors = 64;
constexpr std::size_t kOffGeneration = 72;
constexpr std::size_t kOffMemberCount = 80;
constexpr std::size_t kOffMembers = 88;
constexpr std::size_t kMemberEntryBytes = 24;
constexpr std::size_t kOffCrc = kSuperblockBytes - 4;
constexpr std::size_t kMaxMembers = (kOffCrc - kOffMembers) / kMemberEntryBytes;
constexpr std::size_t kNameBytes = 16;

std::uint32_t image_crc(const std::uint8_t* buf) {
  return std::uint32_t(::crc32(0L, buf, kOffCrc));
}

} // namespace

std::vector<std::uint8_t> Superblock::encode() const {
  geom.validate();
  if (members.size() != std::size_t(geom.n_data) + geom.m_parity)
    throw std::invalid_argument("superblock: role map size does not match geometry");
  if (members.size() > kMaxMembers)
    throw std::invalid_argument("superblock: too many members for role map");

  std::vector<std::uint8_t> buf(kSuperblockBytes, 0);
  std::uint8_t* p = buf.data();
  le::put_u32(p + kOffMagic, kSuperblockMagic);
  le::put_u16(p + kOffVersion, kSuperblockVersion);
  le::put_u16(p + kOffSize, std::uint16_t(kSuperblockBytes));
  le::put_u32(p + kOffNData, geom.n_data);
  le::put_u32(p + kOffMParity, geom.m_parity);
  le::put_u32(p + kOffSectorSize, geom.sector_size);
  le::put_u32(p + kOffStripeUnit, geom.stripe_unit);
  le::put_u64(p + kOffDiskCapacity, geom.disk_capacity);
  le::put_u64(p + kOffTotalStripes, geom.total_stripes());
  le::put_u64(p + kOffDataStart, data_area_start);
  le::put_u64(p + kOffParityStart, parity_area_start);
  le::put_u64(p + kOffJournalStart, journal_start);
  le::put_u64(p + kOffJournalSectors, journal_sectors);
  le::put_u64(p + kOffGeneration, generation);
  le::put_u32(p + kOffMemberCount, std::uint32_t(members.size()));

  std::size_t off = kOffMembers;
  for (const MemberRole& m : members) {
    if (m.name.size() >= kNameBytes)
      throw std::invalid_argument("superblock: member name too long: " + m.name);
    p[off + 0] = std::uint8_t(m.domain);
    p[off + 1] = std::uint8_t(m.status);
    le::put_u32(p + off + 4, m.index);
    std::memcpy(p + off + 8, m.name.data(), m.name.size());
    off += kMemberEntryBytes;
  }

  le::put_u32(p + kOffCrc, image_crc(p));
  return buf;
}

Result<Superblock> Superblock::decode(const std::uint8_t* buf, std::size_t len) {
  using R = Result<Superblock>;
  if (len < kSuperblockBytes)
    return R::error(ErrKind::config, "superblock: short buffer");
  if (le::get_u32(buf + kOffMagic) != kSuperblockMagic)
    return R::error(ErrKind::config, "superblock: bad magic");
  if (le::get_u16(buf + kOffVersion) != kSuperblockVersion)
    return R::error(ErrKind::config, "superblock: unsupported version");
  if (le::get_u16(buf + kOffSize) != kSuperblockBytes)
    return R::error(ErrKind::config, "superblock: unexpected size field");
  if (le::get_u32(buf + kOffCrc) != image_crc(buf))
    return R::error(ErrKind::config, "superblock: checksum mismatch");

  Superblock sb;
  sb.geom.n_data = le::get_u32(buf + kOffNData);
  sb.geom.m_parity = le::get_u32(buf + kOffMParity);
  sb.geom.sector_size = le::get_u32(buf + kOffSectorSize);
  sb.geom.stripe_unit = le::get_u32(buf + kOffStripeUnit);
  sb.geom.disk_capacity = le::get_u64(buf + kOffDiskCapacity);
  sb.data_area_start = le::get_u64(buf + kOffDataStart);
  sb.parity_area_start = le::get_u64(buf + kOffParityStart);
  sb.journal_start = le::get_u64(buf + kOffJournalStart);
  sb.journal_sectors = le::get_u64(buf + kOffJournalSectors);
  sb.generation = le::get_u64(buf + kOffGeneration);

  try {
    sb.geom.validate();
  } catch (const std::invalid_argument& e) {
    return R::error(ErrKind::config, std::string("superblock: ") + e.what());
  }
  if (le::get_u64(buf + kOffTotalStripes) != sb.geom.total_stripes())
    return R::error(ErrKind::config, "superblock: stripe count disagrees with geometry");

  std::uint32_t count = le::get_u32(buf + kOffMemberCount);
  if (count != sb.geom.n_data + sb.geom.m_parity || count > kMaxMembers)
    return R::error(ErrKind::config, "superblock: bad member count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* e = buf + kOffMembers + std::size_t(i) * kMemberEntryBytes;
    MemberRole m;
    if (e[0] > 1 || e[1] > 1)
      return R::error(ErrKind::config, "superblock: bad role entry");
    m.domain = Domain(e[0]);
    m.status = MemberStatus(e[1]);
    m.index = le::get_u32(e + 4);
    const char* name = reinterpret_cast<const char*>(e + 8);
    m.name.assign(name, strnlen(name, kNameBytes));
    sb.members.push_back(std::move(m));
  }
  // Role map has to be data rows 0..n-1 then parity rows 0..m-1.
  for (std::uint32_t i = 0; i < count; ++i) {
    bool is_data = i < sb.geom.n_data;
    const MemberRole& m = sb.members[i];
    if (m.domain != (is_data ? Domain::data : Domain::parity) ||
        m.index != (is_data ? i : i - sb.geom.n_data))
      return R::error(ErrKind::config, "superblock: role map out of order");
  }
  return R::value(std::move(sb));
}

} // namespace raid0e
