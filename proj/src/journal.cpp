#include "raid0e/journal.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include <zlib.h>

#include "raid0e/bytes.hpp"

namespace raid0e {

namespace {

// Record header fields, packed into the first sector of a record.
constexpr std::size_t kROffMagic = 0;
constexpr std::size_t kROffType = 4;
constexpr std::size_t kROffKind = 5;
constexpr std::size_t kROffEpoch = 8;
constexpr std::size_t kROffSeq = 16;
constexpr std::size_t kROffStripe = 24;
constexpr std::size_t kROffBitmap = 32;
constexpr std::size_t kROffPayloadBytes = 40;
constexpr std::size_t kROffPayloadCrc = 48;
constexpr std::size_t kROffHeaderCrc = 52;

// Region header fields, sector 0 of each journal region.
constexpr std::size_t kHOffMagic = 0;
constexpr std::size_t kHOffEpoch = 8;
constexpr std::size_t kHOffCrc = 16;

std::uint32_t crc_of(const std::uint8_t* p, std::size_t n) {
  return std::uint32_t(::crc32(0L, p, uInt(n)));
}

struct ParsedHeader {
  RecordType type;
  RecordKind kind;
  std::uint64_t epoch, seq, stripe, bitmap, payload_bytes;
  std::uint32_t payload_crc;
};

// Returns false when the sector is not a checksum-valid record header.
bool parse_record_header(const std::uint8_t* s, ParsedHeader& out) {
  if (le::get_u32(s + kROffMagic) != kJournalRecordMagic)
    return false;
  if (le::get_u32(s + kROffHeaderCrc) != crc_of(s, kROffHeaderCrc))
    return false;
  std::uint8_t type = s[kROffType];
  std::uint8_t kind = s[kROffKind];
  if ((type != 1 && type != 2) || kind > 1)
    return false;
  out.type = RecordType(type);
  out.kind = RecordKind(kind);
  out.epoch = le::get_u64(s + kROffEpoch);
  out.seq = le::get_u64(s + kROffSeq);
  out.stripe = le::get_u64(s + kROffStripe);
  out.bitmap = le::get_u64(s + kROffBitmap);
  out.payload_bytes = le::get_u64(s + kROffPayloadBytes);
  out.payload_crc = le::get_u32(s + kROffPayloadCrc);
  return true;
}

} // namespace

Journal::Journal(std::vector<std::shared_ptr<VirtualDisk>> disks, std::uint64_t start,
                 std::uint64_t sectors, std::uint32_t sector_size, std::uint32_t stripe_unit)
    : disks_(std::move(disks)), start_(start), sectors_(sectors), sector_size_(sector_size),
      stripe_unit_(stripe_unit), regions_(disks_.size()) {
  if (disks_.empty())
    throw std::invalid_argument("journal: no parity members");
  if (sectors_ < 4)
    throw std::invalid_argument("journal: region too small");
  if (stripe_unit_ % sector_size_ != 0)
    throw std::invalid_argument("journal: stripe unit not sector aligned");
}

std::uint64_t Journal::payload_sectors(std::size_t blocks) const {
  return std::uint64_t(blocks) * (stripe_unit_ / sector_size_);
}

std::vector<std::uint8_t> Journal::encode_head(const Region& r) const {
  std::vector<std::uint8_t> buf(sector_size_, 0);
  le::put_u32(buf.data() + kHOffMagic, kJournalHeadMagic);
  le::put_u64(buf.data() + kHOffEpoch, r.epoch);
  le::put_u32(buf.data() + kHOffCrc, crc_of(buf.data(), kHOffCrc));
  return buf;
}

IoOutcome Journal::format(double not_before) {
  IoOutcome worst{std::nullopt, not_before};
  for (std::size_t j = 0; j < disks_.size(); ++j) {
    regions_[j] = Region{};
    auto buf = encode_head(regions_[j]);
    IoOutcome o = disks_[j]->write_sectors(start_, buf, not_before);
    worst.end = std::max(worst.end, o.end);
    if (!o.ok() && !worst.err)
      worst.err = o.err;
  }
  return worst;
}

double Journal::load(double not_before) {
  double end = not_before;
  next_seq_ = 1;
  for (std::size_t j = 0; j < disks_.size(); ++j) {
    Region& r = regions_[j];
    r = Region{};
    std::vector<std::uint8_t> head(sector_size_);
    IoOutcome o = disks_[j]->read_sectors(start_, head, not_before);
    end = std::max(end, o.end);
    if (!o.ok() || le::get_u32(head.data() + kHOffMagic) != kJournalHeadMagic ||
        le::get_u32(head.data() + kHOffCrc) != crc_of(head.data(), kHOffCrc)) {
      r.usable = false;
      continue;
    }
    r.epoch = le::get_u64(head.data() + kHOffEpoch);

    // Walk records to find the append tail.  Payloads are read so a torn
    // payload at the very end is detected and overwritten by later appends.
    std::uint64_t sector = 1;
    while (sector < sectors_) {
      std::vector<std::uint8_t> hs(sector_size_);
      o = disks_[j]->read_sectors(start_ + sector, hs, not_before);
      end = std::max(end, o.end);
      ParsedHeader h;
      if (!o.ok() || !parse_record_header(hs.data(), h) || h.epoch != r.epoch)
        break;
      next_seq_ = std::max(next_seq_, h.seq + 1);
      if (h.type == RecordType::intent) {
        if (h.payload_bytes == 0 || h.payload_bytes % stripe_unit_ != 0)
          break;
        std::uint64_t ps = h.payload_bytes / sector_size_;
        if (sector + 1 + ps > sectors_)
          break;
        std::vector<std::uint8_t> payload(h.payload_bytes);
        o = disks_[j]->read_sectors(start_ + sector + 1, payload, not_before);
        end = std::max(end, o.end);
        if (!o.ok() || crc_of(payload.data(), payload.size()) != h.payload_crc)
          break;
        sector += 1 + ps;
      } else {
        sector += 1;
      }
      r.records = true;
      r.tail = sector;
    }
  }
  return end;
}

bool Journal::has_records() const {
  for (const Region& r : regions_)
    if (r.records)
      return true;
  return false;
}

bool Journal::can_fit(std::uint32_t region_disk, std::size_t payload_blocks) const {
  const Region& r = regions_.at(region_disk);
  if (!r.usable)
    return false;
  // record header + payload + commit marker must all fit
  return r.tail + 1 + payload_sectors(payload_blocks) + 1 <= sectors_;
}

IoOutcome Journal::append_record(std::uint32_t region_disk, const JournalRecordMeta& meta,
                                 std::span<const Block> payload, double not_before) {
  Region& r = regions_.at(region_disk);
  if (!can_fit(region_disk, payload.size()))
    throw std::logic_error("journal: append without space check");

  std::uint64_t ps = payload_sectors(payload.size());
  std::vector<std::uint8_t> buf(std::size_t(1 + ps) * sector_size_, 0);
  std::uint8_t* p = buf.data();

  std::size_t off = sector_size_;
  for (const Block& b : payload) {
    if (b.size() != stripe_unit_)
      throw std::invalid_argument("journal: payload block size mismatch");
    std::memcpy(p + off, b.data(), b.size());
    off += b.size();
  }

  le::put_u32(p + kROffMagic, kJournalRecordMagic);
  p[kROffType] = std::uint8_t(RecordType::intent);
  p[kROffKind] = std::uint8_t(meta.kind);
  le::put_u64(p + kROffEpoch, r.epoch);
  le::put_u64(p + kROffSeq, meta.seq);
  le::put_u64(p + kROffStripe, meta.stripe);
  le::put_u64(p + kROffBitmap, meta.bitmap);
  le::put_u64(p + kROffPayloadBytes, ps * sector_size_);
  le::put_u32(p + kROffPayloadCrc, crc_of(p + sector_size_, std::size_t(ps) * sector_size_));
  le::put_u32(p + kROffHeaderCrc, crc_of(p, kROffHeaderCrc));

  IoOutcome o = disks_[region_disk]->write_sectors(start_ + r.tail, buf, not_before);
  if (o.ok()) {
    r.tail += 1 + ps;
    r.records = true;
    ++appends_;
  }
  return o;
}

IoOutcome Journal::append_commit(std::uint32_t region_disk, std::uint64_t seq,
                                 std::uint64_t stripe, double not_before) {
  Region& r = regions_.at(region_disk);
  if (r.tail + 1 > sectors_)
    throw std::logic_error("journal: commit without space check");

  std::vector<std::uint8_t> buf(sector_size_, 0);
  std::uint8_t* p = buf.data();
  le::put_u32(p + kROffMagic, kJournalRecordMagic);
  p[kROffType] = std::uint8_t(RecordType::commit);
  le::put_u64(p + kROffEpoch, r.epoch);
  le::put_u64(p + kROffSeq, seq);
  le::put_u64(p + kROffStripe, stripe);
  le::put_u32(p + kROffHeaderCrc, crc_of(p, kROffHeaderCrc));

  IoOutcome o = disks_[region_disk]->write_sectors(start_ + r.tail, buf, not_before);
  if (o.ok()) {
    r.tail += 1;
    ++appends_;
  }
  return o;
}

JournalScan Journal::scan(double not_before, double* end_time) {
  JournalScan out;
  double end = not_before;
  for (std::size_t j = 0; j < disks_.size(); ++j) {
    const Region& r = regions_[j];
    if (!r.usable)
      continue;
    std::vector<std::size_t> open_records; // indices awaiting commit markers
    std::uint64_t sector = 1;
    while (sector < sectors_) {
      std::vector<std::uint8_t> hs(sector_size_);
      IoOutcome o = disks_[j]->read_sectors(start_ + sector, hs, not_before);
      end = std::max(end, o.end);
      ParsedHeader h;
      bool valid = o.ok() && parse_record_header(hs.data(), h) && h.epoch == r.epoch;
      if (!valid) {
        // Zeroed tail is just the end of the log; anything else is a torn
        // append that terminates the region scan.
        if (o.ok() && le::get_u32(hs.data() + kROffMagic) != 0)
          ++out.torn_records;
        break;
      }
      if (h.type == RecordType::commit) {
        for (std::size_t idx : open_records)
          if (out.records[idx].meta.seq == h.seq)
            out.records[idx].committed = true;
        sector += 1;
        continue;
      }
      if (h.payload_bytes == 0 || h.payload_bytes % stripe_unit_ != 0 ||
          sector + 1 + h.payload_bytes / sector_size_ > sectors_) {
        ++out.torn_records;
        break;
      }
      std::vector<std::uint8_t> payload(h.payload_bytes);
      o = disks_[j]->read_sectors(start_ + sector + 1, payload, not_before);
      end = std::max(end, o.end);
      if (!o.ok() || crc_of(payload.data(), payload.size()) != h.payload_crc) {
        ++out.torn_records;
        break;
      }
      LoadedRecord rec;
      rec.meta = JournalRecordMeta{h.kind, h.seq, h.stripe, h.bitmap};
      rec.region = std::uint32_t(j);
      std::size_t nblocks = payload.size() / stripe_unit_;
      rec.payload.reserve(nblocks);
      for (std::size_t b = 0; b < nblocks; ++b)
        rec.payload.emplace_back(payload.begin() + b * stripe_unit_,
                                 payload.begin() + (b + 1) * stripe_unit_);
      open_records.push_back(out.records.size());
      out.records.push_back(std::move(rec));
      sector += 1 + h.payload_bytes / sector_size_;
    }
  }
  std::stable_sort(out.records.begin(), out.records.end(),
                   [](const LoadedRecord& a, const LoadedRecord& b) { return a.meta.seq < b.meta.seq; });
  if (end_time)
    *end_time = end;
  return out;
}

void Journal::replace_disk(std::uint32_t region_disk, std::shared_ptr<VirtualDisk> disk) {
  disks_.at(region_disk) = std::move(disk);
}

IoOutcome Journal::format_region(std::uint32_t region_disk, double not_before) {
  Region& r = regions_.at(region_disk);
  r.epoch += 1;
  r.tail = 1;
  r.records = false;
  r.usable = true;
  auto buf = encode_head(r);
  return disks_.at(region_disk)->write_sectors(start_, buf, not_before);
}

IoOutcome Journal::reset_all(double not_before) {
  IoOutcome worst{std::nullopt, not_before};
  for (std::size_t j = 0; j < disks_.size(); ++j) {
    Region& r = regions_[j];
    r.epoch += 1;
    r.tail = 1;
    r.records = false;
    if (disks_[j]->state() == DiskState::failed)
      continue; // resynced by rebuild
    r.usable = true;
    auto buf = encode_head(r);
    IoOutcome o = disks_[j]->write_sectors(start_, buf, not_before);
    worst.end = std::max(worst.end, o.end);
    if (!o.ok() && !worst.err)
      worst.err = o.err;
  }
  return worst;
}

} // namespace raid0e
