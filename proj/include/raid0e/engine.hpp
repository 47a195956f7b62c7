// engine.hpp - the array engine: striping, parity maintenance, recovery.
//
// A RaidArray binds N data members and M parity members into one volume.
// Reads touch only the data domain while every member is healthy.  Writes are
// journaled on the parity members before any in-place update, so a power cut
// can never leave a stripe half old / half new: replay either rolls a
// committed update forward or discards an uncommitted one.
//
// Parity placement policy differs by write shape:
//   - partial-stripe writes (read-modify-write) update the parity block in
//     place, eagerly;
//   - full-stripe writes leave the journaled copy as the durable parity
//     source and keep the folded parity block in memory; checkpoints
//     (flush/close, or a journal-full condition) materialize it into the
//     parity area.  This keeps the fast path at one journal stream per
//     parity member instead of a parity-area write per stripe.
// All lookups that need parity (recovery, scrub, RMW) consult the pending
// map first, so the deferral is invisible to correctness.
//
// Simulated time: every public I/O entry point has an *_at variant taking an
// issue time; the plain variants use and advance the array clock.  Phases
// issued at the same time on different members overlap; the per-member
// ready_at horizon serialises same-member work.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <vector>

#include "raid0e/geometry.hpp"
#include "raid0e/journal.hpp"
#include "raid0e/parity.hpp"
#include "raid0e/result.hpp"
#include "raid0e/superblock.hpp"
#include "raid0e/vdisk.hpp"

namespace raid0e {

enum class ArrayMode : std::uint8_t { healthy, degraded, redundancy_lost, offline };
const char* array_mode_name(ArrayMode m);

struct ArrayOptions {
  std::uint64_t journal_bytes = 16ull << 20; // rounded up to whole stripe units
  bool writeback_reconstructed = true;       // heal recovered blocks in place
  bool strict_redundancy_lost = false;       // refuse writes once parity is gone
};

struct ArrayStatus {
  ArrayMode mode = ArrayMode::healthy;
  std::vector<DiskState> members; // data rows then parity rows
  std::vector<std::uint32_t> failed_data;
  std::vector<std::uint32_t> failed_parity;
};

struct EngineCounters {
  std::uint64_t recoveries = 0;        // on-the-fly block reconstructions
  std::uint64_t survivor_reads = 0;    // data-block reads issued for recovery
  std::uint64_t parity_reads = 0;      // parity-block reads issued for recovery
  std::uint64_t writebacks = 0;
  std::uint64_t writeback_failures = 0;
  std::uint64_t unrecoverable_reads = 0;
  std::uint64_t full_stripe_writes = 0;
  std::uint64_t rmw_writes = 0;        // partial-stripe read-modify-write rounds
  std::uint64_t rmw_member_reads = 0;  // RMW pre-reads against member areas
  std::uint64_t rmw_member_writes = 0; // RMW in-place writes against member areas
  std::uint64_t journal_appends = 0;   // record + commit appends
  std::uint64_t parity_materialized = 0;
};

struct ReadOutcome {
  Status status;
  double end = 0.0;
  std::uint64_t recovered_blocks = 0; // blocks served via reconstruction
  std::vector<std::uint64_t> recovered_stripes;
};

struct WriteOutcome {
  Status status;
  double end = 0.0;
};

struct ReplayReport {
  std::uint64_t records_applied = 0;
  std::uint64_t records_discarded = 0; // checksum-valid but uncommitted
  std::uint64_t records_torn = 0;      // checksum-invalid tails
  std::uint64_t stripes_repaired = 0;  // distinct stripes rolled forward
  std::uint64_t write_errors = 0;
};

struct ScrubReport {
  std::uint64_t stripes_checked = 0;
  std::uint64_t inconsistent = 0;      // parity mismatch, reported not repaired
  std::uint64_t healed = 0;            // unreadable blocks reconstructed in place
  std::uint64_t heal_failures = 0;
  std::uint64_t unrecoverable = 0;     // more than one block lost in a stripe
  std::vector<std::uint64_t> inconsistent_stripes;
};

struct RebuildReport {
  std::uint64_t stripes_rebuilt = 0;
  std::vector<std::uint64_t> stripes_lost; // source errors; contents unrecoverable
};

class RaidArray {
public:
  // Formats `disks` (data members first, then parity members) as a new array.
  // geom.disk_capacity is derived from the smallest member and the layout
  // overhead; the caller's value is ignored.
  static std::shared_ptr<RaidArray> create(std::vector<std::shared_ptr<VirtualDisk>> disks,
                                           ArrayGeometry geom, const ArrayOptions& opts = {});

  // Assembles an existing array.  Members whose superblock is missing, corrupt
  // or stale (older generation) are marked failed; the journal is scanned but
  // never replayed implicitly.
  static std::shared_ptr<RaidArray> open(std::vector<std::shared_ptr<VirtualDisk>> disks,
                                         const ArrayOptions& opts = {});

  // Volume I/O in volume sectors.  Buffers must be sector-multiples.
  ReadOutcome read(std::uint64_t lba, std::span<std::uint8_t> out);
  ReadOutcome read_at(double issue, std::uint64_t lba, std::span<std::uint8_t> out);
  WriteOutcome write(std::uint64_t lba, std::span<const std::uint8_t> data);
  WriteOutcome write_at(double issue, std::uint64_t lba, std::span<const std::uint8_t> data);

  // Reconstructs one data block from the survivors and parity.  Applies the
  // write-back policy on success when the owning disk is merely unreadable.
  Result<Block> recover_block(std::uint64_t stripe, std::uint32_t data_index);
  // Remaps the block's sectors and rewrites the reconstructed contents.
  Status writeback_reconstructed(std::uint64_t stripe, std::uint32_t data_index,
                                 const Block& block);

  // Materializes pending parity and resets the journal.
  Status flush();
  // flush() + superblock housekeeping; the array object stays usable.
  Status close();

  ReplayReport journal_replay();
  ScrubReport scrub();

  // Replaces member `member_index` (global slot, data rows first) with a fresh
  // disk and reconstructs its contents.  The array stays readable while the
  // rebuild runs; `progress` (optional) is invoked after each rebuilt stripe.
  using RebuildProgress = std::function<void(std::uint64_t stripe)>;
  Result<RebuildReport> rebuild(std::uint32_t member_index,
                                std::shared_ptr<VirtualDisk> replacement,
                                RebuildProgress progress = nullptr);

  ArrayStatus status() const;
  const ArrayGeometry& geometry() const { return sb_.geom; }
  const Superblock& superblock() const { return sb_; }
  EngineCounters counters() const;
  std::uint32_t member_count() const { return std::uint32_t(disks_.size()); }
  std::shared_ptr<VirtualDisk> member(std::uint32_t idx) const { return disks_.at(idx); }
  bool journal_dirty() const { return journal_dirty_; }
  std::uint64_t pending_parity_blocks() const;

  double now() const;
  void advance_clock(double t); // monotonic; earlier times are ignored

  void set_writeback(bool on);
  bool writeback_enabled() const;
  void set_strict_redundancy_lost(bool on);

  // Writes the current member-status map and a bumped generation to every
  // healthy member's superblock (used to persist fail-disk events).
  Status persist_status();

private:
  RaidArray() = default;

  VirtualDisk& data_disk(std::uint32_t i) const { return *disks_[i]; }
  VirtualDisk& parity_disk(std::uint32_t j) const { return *disks_[sb_.geom.n_data + j]; }
  bool data_failed(std::uint32_t i) const;
  bool parity_failed(std::uint32_t j) const;
  ArrayMode mode_locked() const;

  std::uint64_t data_block_sector(std::uint64_t stripe) const;
  std::uint64_t parity_block_sector(std::uint64_t stripe) const;
  std::uint32_t parity_disk_of(std::uint64_t stripe) const;

  IoOutcome read_data_block(std::uint32_t disk, std::uint64_t stripe, Block& out,
                            double not_before);
  IoOutcome write_data_block(std::uint32_t disk, std::uint64_t stripe,
                             std::span<const std::uint8_t> block, double not_before);
  IoOutcome read_parity_block(std::uint64_t stripe, Block& out, double not_before);
  IoOutcome write_parity_block(std::uint64_t stripe, std::span<const std::uint8_t> block,
                               double not_before);

  // Algorithm: read the n-1 surviving data blocks and the parity block (all
  // issued at `floor`), fold them.  Fails with `unrecoverable` on any second
  // fault.  Parity comes from the pending map when the stripe has one.
  Result<Block> recover_block_locked(std::uint64_t stripe, std::uint32_t data_index,
                                     double floor, double& end);
  void maybe_writeback_locked(std::uint64_t stripe, std::uint32_t data_index,
                              const Block& block, double floor);
  Status writeback_locked(std::uint64_t stripe, std::uint32_t data_index, const Block& block,
                          double floor, double& end);

  WriteOutcome write_full_stripe_locked(std::uint64_t stripe,
                                        std::span<const std::uint8_t> payload, double issue);
  WriteOutcome write_partial_locked(std::uint64_t stripe,
                                    const std::map<std::uint32_t, std::pair<std::uint64_t,
                                        std::span<const std::uint8_t>>>& pieces,
                                    double issue);

  Status flush_locked(double issue, double& end);
  Status ensure_journal_room_locked(std::uint32_t region, std::size_t payload_blocks,
                                    double& floor);
  void write_superblocks_locked(double floor, double& end);

  Superblock sb_;
  ArrayOptions opts_;
  std::vector<std::shared_ptr<VirtualDisk>> disks_;
  std::unique_ptr<Journal> journal_;
  std::map<std::uint64_t, Block> pending_parity_; // stripe -> folded parity
  std::set<std::uint64_t> suspect_stripes_;       // in-place write errors seen
  EngineCounters counters_;
  bool journal_dirty_ = false; // records found at open, replay advised
  double now_ = 0.0;
  mutable std::mutex mu_;
};

} // namespace raid0e
