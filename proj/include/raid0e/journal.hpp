// journal.hpp - per-parity-disk write-ahead log for stripe updates.
//
// Each parity member reserves a journal region ahead of its parity area.
// Records for stripe S live on parity disk S mod M, so journal traffic
// spreads the same way parity blocks do.  A record is one header sector
// followed by the new payload blocks; a separate one-sector commit marker
// makes it durable.  Replay rules:
//   - a record whose header or payload checksum fails ends the log scan
//     (appends are strictly sequential, nothing after it can exist),
//   - a checksum-valid record without a commit marker is discarded,
//   - committed records are applied in global sequence order.
// Resetting the log bumps the region epoch in the region header, which
// invalidates every existing record in O(1) without rewriting them.
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "raid0e/parity.hpp"
#include "raid0e/result.hpp"
#include "raid0e/vdisk.hpp"

namespace raid0e {

inline constexpr std::uint32_t kJournalRecordMagic = 0x4a453052; // "R0EJ"
inline constexpr std::uint32_t kJournalHeadMagic = 0x48453052;   // "R0EH"

enum class RecordType : std::uint8_t { intent = 1, commit = 2 };
enum class RecordKind : std::uint8_t { full_stripe = 0, partial = 1 };

struct JournalRecordMeta {
  RecordKind kind = RecordKind::full_stripe;
  std::uint64_t seq = 0;
  std::uint64_t stripe = 0;
  std::uint64_t bitmap = 0; // bit i set = data block i carried in the payload
};

// A record pulled back out of the log during a scan.  For partial records the
// payload is the updated data blocks in ascending block order followed by the
// new parity block; full-stripe records carry all n_data blocks and no parity.
struct LoadedRecord {
  JournalRecordMeta meta;
  std::uint32_t region = 0; // parity disk the record was read from
  bool committed = false;
  std::vector<Block> payload;
};

struct JournalScan {
  std::vector<LoadedRecord> records; // sorted by meta.seq
  std::uint64_t torn_records = 0;    // checksum-invalid tails that ended a region
};

class Journal {
public:
  // `disks` are the parity members in domain order.  `start`/`sectors`
  // describe the identical region carved out on each of them.
  Journal(std::vector<std::shared_ptr<VirtualDisk>> disks, std::uint64_t start,
          std::uint64_t sectors, std::uint32_t sector_size, std::uint32_t stripe_unit);

  // Stamps fresh region headers (epoch 1) on every parity member.
  IoOutcome format(double not_before);

  // Reads region headers and walks existing records to find the append tails.
  // Unreadable or malformed regions are treated as empty with epoch resync on
  // the next reset.  Returns the max end time of the header reads.
  double load(double not_before);

  bool has_records() const;
  std::uint64_t next_seq() const { return next_seq_; }

  // True when a record with `payload_blocks` blocks plus its commit marker
  // still fits in the region for `region_disk`.
  bool can_fit(std::uint32_t region_disk, std::size_t payload_blocks) const;

  // Appends header+payload as a single contiguous write.  The caller owns
  // sequence allocation via `meta.seq`.
  IoOutcome append_record(std::uint32_t region_disk, const JournalRecordMeta& meta,
                          std::span<const Block> payload, double not_before);
  IoOutcome append_commit(std::uint32_t region_disk, std::uint64_t seq, std::uint64_t stripe,
                          double not_before);

  // Full scan with payloads, for replay.
  JournalScan scan(double not_before, double* end_time);

  // Invalidates all records by bumping every region epoch.  O(1) per region.
  IoOutcome reset_all(double not_before);

  // Rebuild support: point region `region_disk` at a replacement member and
  // stamp a fresh header (advanced epoch, empty log) on it.
  void replace_disk(std::uint32_t region_disk, std::shared_ptr<VirtualDisk> disk);
  IoOutcome format_region(std::uint32_t region_disk, double not_before);

  std::uint64_t append_count() const { return appends_; }
  std::uint64_t region_sectors() const { return sectors_; }

private:
  struct Region {
    std::uint64_t epoch = 1;
    std::uint64_t tail = 1;  // next free sector offset within the region
    bool records = false;    // valid records present since load/format
    bool usable = true;      // header read ok at load time
  };

  std::uint64_t payload_sectors(std::size_t blocks) const;
  std::vector<std::uint8_t> encode_head(const Region& r) const;

  std::vector<std::shared_ptr<VirtualDisk>> disks_;
  std::uint64_t start_;
  std::uint64_t sectors_;
  std::uint32_t sector_size_;
  std::uint32_t stripe_unit_;
  std::vector<Region> regions_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t appends_ = 0;
};

} // namespace raid0e
