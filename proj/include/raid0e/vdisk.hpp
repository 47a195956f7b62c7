// vdisk.hpp - file-backed virtual disk with deterministic fault injection
// and a parametric latency model over a simulated clock.
//
// Time is simulated seconds carried as doubles through the call chain: every
// I/O takes a `not_before` issue floor and reports its completion time. Each
// disk keeps its own ready_at horizon, so I/Os issued with the same floor on
// distinct disks overlap (completion is the max, not the sum), while I/Os on
// one disk serialize. Identical call sequences always produce identical
// results and identical time totals.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "raid0e/result.hpp"

namespace raid0e {

// Bandwidths in bytes per simulated second, seek in simulated seconds. A
// seek is charged whenever an access does not start where the previous one
// on that disk ended.
struct LatencyModel {
  double seq_read_bw = 150e6;
  double seq_write_bw = 140e6;
  double seek_time = 4e-3;

  void validate() const; // throws std::invalid_argument on non-positive rates
};

enum class FaultKind : std::uint8_t {
  unreadable = 0,     // every read fails
  transient = 1,      // next k reads fail, then the sector reads fine
  silent_corrupt = 2, // reads succeed but return the pattern byte
  write_fail = 3,     // writes fail without persisting
};

struct FaultSpec {
  FaultKind kind = FaultKind::unreadable;
  std::uint64_t start_sector = 0;
  std::uint64_t count = 1;
  std::uint32_t k = 1;          // transient: remaining failures
  std::uint8_t pattern = 0x00;  // silent_corrupt: byte returned instead of data
};

// Parses the line-oriented fault file format:
//   <disk-index> <kind> <start-sector> <count> [k|pattern]
// kind is one of unreadable | transient | silent-corrupt | write-fail; '#'
// starts a comment. Throws std::runtime_error naming the offending line.
std::vector<std::pair<std::uint32_t, FaultSpec>> parse_fault_file(const std::string& path);
std::vector<std::pair<std::uint32_t, FaultSpec>> parse_fault_lines(const std::string& text,
                                                                   const std::string& origin);

// Simulated power supply shared by all members of an array. Once armed, it
// allows the next `budget` sectors to persist across all disks, then every
// later write throws power_failure_error. A write call crossing the boundary
// persists only the sectors that fit, so torn multi-sector writes occur
// exactly as they would at a real power cut.
class PowerRail {
public:
  void arm_after_sectors(std::uint64_t budget);
  void disarm();
  bool dead() const { return dead_; }
  // Returns how many of `want` sectors may persist; marks the rail dead when
  // the budget runs out. Throws once dead.
  std::uint64_t admit(std::uint64_t want);

private:
  bool armed_ = false;
  bool dead_ = false;
  std::uint64_t remaining_ = 0;
};

struct DiskCounters {
  std::uint64_t read_ops = 0;
  std::uint64_t read_bytes = 0; // successfully returned bytes
  std::uint64_t write_ops = 0;
  std::uint64_t write_bytes = 0; // persisted bytes
  std::uint64_t media_errors = 0;
  std::uint64_t write_errors = 0;
};

struct IoOutcome {
  std::optional<IoError> err;
  double end = 0.0; // completion time; error outcomes charge time too
  bool ok() const { return !err.has_value(); }
};

enum class DiskState : std::uint8_t { healthy = 0, failed = 1 };

struct VDiskConfig {
  std::string path;
  std::uint64_t capacity_sectors = 0;
  std::uint32_t sector_size = 512;
  LatencyModel latency;
  bool create = false; // truncate/extend the backing file to size, zero-filled
};

// A single virtual disk over a flat backing file. The file holds raw
// sectors, no header. One disk serializes its own I/O (internal lock);
// distinct disks are independent.
class VirtualDisk {
public:
  explicit VirtualDisk(VDiskConfig cfg, std::shared_ptr<PowerRail> rail = nullptr);
  ~VirtualDisk();

  VirtualDisk(const VirtualDisk&) = delete;
  VirtualDisk& operator=(const VirtualDisk&) = delete;

  // Buffer length fixes the sector count; it must be a sector multiple.
  IoOutcome read_sectors(std::uint64_t start, std::span<std::uint8_t> out,
                         double not_before = 0.0);
  IoOutcome write_sectors(std::uint64_t start, std::span<const std::uint8_t> data,
                          double not_before = 0.0);

  // Fault table management. inject_fault throws std::out_of_range when the
  // scope exceeds the capacity; remap clears any fault on the sector.
  void inject_fault(const FaultSpec& spec);
  void remap_sector(std::uint64_t sector);
  void clear_faults(std::uint64_t start, std::uint64_t count);
  // Remap path for healing: read-side faults go away, write-fail defects stay.
  void clear_read_faults(std::uint64_t start, std::uint64_t count);

  void fail_disk();
  void restore_disk(); // contents are whatever the backing file holds

  DiskState state() const { return state_; }
  std::uint64_t capacity_sectors() const { return cfg_.capacity_sectors; }
  std::uint32_t sector_size() const { return cfg_.sector_size; }
  const std::string& path() const { return cfg_.path; }
  const LatencyModel& latency() const { return cfg_.latency; }
  DiskCounters counters() const;
  double ready_at() const;
  void set_power_rail(std::shared_ptr<PowerRail> rail);

private:
  struct ActiveFault {
    FaultKind kind;
    std::uint32_t k = 0;
    std::uint8_t pattern = 0;
  };

  double charge_locked(std::uint64_t start, std::uint64_t count, double bw, double not_before);
  void check_range(std::uint64_t start, std::uint64_t count) const;

  VDiskConfig cfg_;
  int fd_ = -1;
  DiskState state_ = DiskState::healthy;
  std::map<std::uint64_t, ActiveFault> faults_; // sector -> fault
  std::shared_ptr<PowerRail> rail_;
  DiskCounters counters_;
  double ready_at_ = 0.0;
  std::uint64_t next_pos_ = 0; // sector following the previous access
  bool accessed_ = false;      // first access always seeks
  mutable std::mutex mu_;
};

} // namespace raid0e
