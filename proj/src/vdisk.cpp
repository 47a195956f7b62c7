#include "raid0e/vdisk.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fcntl.h>
#include <unistd.h>

namespace raid0e {

const char* err_kind_name(ErrKind k) {
  switch (k) {
    case ErrKind::none: return "ok";
    case ErrKind::bad_range: return "bad-range";
    case ErrKind::media_error: return "media-error";
    case ErrKind::write_error: return "write-error";
    case ErrKind::disk_failed: return "disk-failed";
    case ErrKind::unrecoverable: return "unrecoverable";
    case ErrKind::config: return "config";
    case ErrKind::offline: return "offline";
    case ErrKind::state: return "state";
  }
  return "unknown";
}

std::string IoError::to_string() const {
  std::ostringstream os;
  os << err_kind_name(kind);
  if (disk >= 0)
    os << " disk=" << disk;
  if (kind == ErrKind::media_error || kind == ErrKind::write_error)
    os << " sector=" << sector;
  if (stripe >= 0)
    os << " stripe=" << stripe;
  if (!detail.empty())
    os << " (" << detail << ")";
  return os.str();
}

void LatencyModel::validate() const {
  if (seq_read_bw <= 0 || seq_write_bw <= 0)
    throw std::invalid_argument("latency model: bandwidths must be positive");
  if (seek_time < 0)
    throw std::invalid_argument("latency model: seek time must be non-negative");
}

// ---------------------------------------------------------------------------
// PowerRail

void PowerRail::arm_after_sectors(std::uint64_t budget) {
  armed_ = true;
  dead_ = false;
  remaining_ = budget;
}

void PowerRail::disarm() {
  armed_ = false;
  dead_ = false;
  remaining_ = 0;
}

std::uint64_t PowerRail::admit(std::uint64_t want) {
  if (dead_)
    throw power_failure_error();
  if (!armed_)
    return want;
  const std::uint64_t granted = std::min(want, remaining_);
  remaining_ -= granted;
  if (granted < want)
    dead_ = true;
  return granted;
}

// ---------------------------------------------------------------------------
// VirtualDisk

namespace {
IoError disk_err(ErrKind kind, std::uint64_t sector) {
  IoError e;
  e.kind = kind;
  e.sector = sector;
  return e;
}
} // namespace

VirtualDisk::VirtualDisk(VDiskConfig cfg, std::shared_ptr<PowerRail> rail)
    : cfg_(std::move(cfg)), rail_(std::move(rail)) {
  cfg_.latency.validate();
  if (cfg_.sector_size == 0)
    throw std::invalid_argument("vdisk: sector size must be positive");
  if (cfg_.capacity_sectors == 0)
    throw std::invalid_argument("vdisk: capacity must be positive");

  const std::uint64_t bytes = cfg_.capacity_sectors * std::uint64_t(cfg_.sector_size);
  int flags = O_RDWR | (cfg_.create ? O_CREAT : 0);
  fd_ = ::open(cfg_.path.c_str(), flags, 0644);
  if (fd_ < 0)
    throw std::runtime_error("vdisk: cannot open " + cfg_.path + ": " + std::strerror(errno));
  if (cfg_.create) {
    if (::ftruncate(fd_, 0) != 0 || ::ftruncate(fd_, static_cast<off_t>(bytes)) != 0) {
      ::close(fd_);
      throw std::runtime_error("vdisk: cannot size " + cfg_.path);
    }
  } else {
    off_t sz = ::lseek(fd_, 0, SEEK_END);
    if (sz < 0 || static_cast<std::uint64_t>(sz) != bytes) {
      ::close(fd_);
      throw std::runtime_error("vdisk: backing file " + cfg_.path + " has wrong size");
    }
  }
}

VirtualDisk::~VirtualDisk() {
  if (fd_ >= 0)
    ::close(fd_);
}

void VirtualDisk::check_range(std::uint64_t start, std::uint64_t count) const {
  if (count == 0 || start >= cfg_.capacity_sectors || count > cfg_.capacity_sectors - start)
    throw std::out_of_range("vdisk: sector range out of bounds");
}

double VirtualDisk::charge_locked(std::uint64_t start, std::uint64_t count, double bw,
                                  double not_before) {
  double begin = std::max(ready_at_, not_before);
  if (!accessed_ || start != next_pos_)
    begin += cfg_.latency.seek_time;
  const double xfer = double(count * std::uint64_t(cfg_.sector_size)) / bw;
  ready_at_ = begin + xfer;
  next_pos_ = start + count;
  accessed_ = true;
  return ready_at_;
}

IoOutcome VirtualDisk::read_sectors(std::uint64_t start, std::span<std::uint8_t> out,
                                    double not_before) {
  std::lock_guard<std::mutex> g(mu_);
  IoOutcome res;
  if (state_ == DiskState::failed) {
    res.err = disk_err(ErrKind::disk_failed, start);
    res.end = std::max(ready_at_, not_before);
    return res;
  }
  if (out.empty() || out.size() % cfg_.sector_size != 0)
    throw std::invalid_argument("vdisk read: buffer not a whole number of sectors");
  const std::uint64_t count = out.size() / cfg_.sector_size;
  check_range(start, count);
  const std::uint64_t bytes = count * std::uint64_t(cfg_.sector_size);

  counters_.read_ops++;
  res.end = charge_locked(start, count, cfg_.latency.seq_read_bw, not_before);

  // The drive stops at the first bad sector; only that fault decays.
  for (auto it = faults_.lower_bound(start); it != faults_.end() && it->first < start + count;
       ++it) {
    if (it->second.kind == FaultKind::unreadable) {
      counters_.media_errors++;
      res.err = disk_err(ErrKind::media_error, it->first);
      return res;
    }
    if (it->second.kind == FaultKind::transient) {
      counters_.media_errors++;
      res.err = disk_err(ErrKind::media_error, it->first);
      if (--it->second.k == 0)
        faults_.erase(it);
      return res;
    }
  }

  ssize_t n = ::pread(fd_, out.data(), bytes, static_cast<off_t>(start * cfg_.sector_size));
  if (n < 0 || static_cast<std::uint64_t>(n) != bytes)
    throw std::runtime_error("vdisk: backing read failed on " + cfg_.path);

  // Silent corruption overlays the pattern on the returned data only; the
  // backing bytes stay intact underneath.
  for (auto it = faults_.lower_bound(start); it != faults_.end() && it->first < start + count;
       ++it) {
    if (it->second.kind == FaultKind::silent_corrupt) {
      std::uint8_t* sec = out.data() + (it->first - start) * cfg_.sector_size;
      std::memset(sec, it->second.pattern, cfg_.sector_size);
    }
  }
  counters_.read_bytes += bytes;
  return res;
}

IoOutcome VirtualDisk::write_sectors(std::uint64_t start, std::span<const std::uint8_t> data,
                                     double not_before) {
  std::lock_guard<std::mutex> g(mu_);
  IoOutcome res;
  if (state_ == DiskState::failed) {
    res.err = disk_err(ErrKind::disk_failed, start);
    res.end = std::max(ready_at_, not_before);
    return res;
  }
  if (data.size() % cfg_.sector_size != 0)
    throw std::invalid_argument("vdisk write: buffer not a whole number of sectors");
  const std::uint64_t count = data.size() / cfg_.sector_size;
  check_range(start, count);

  counters_.write_ops++;
  res.end = charge_locked(start, count, cfg_.latency.seq_write_bw, not_before);

  // write-fail anywhere in the range fails the whole call, nothing persists
  for (auto it = faults_.lower_bound(start); it != faults_.end() && it->first < start + count;
       ++it) {
    if (it->second.kind == FaultKind::write_fail) {
      counters_.write_errors++;
      res.err = disk_err(ErrKind::write_error, it->first);
      return res;
    }
  }

  std::uint64_t persist = count;
  if (rail_)
    persist = rail_->admit(count); // may be cut short by a power failure
  if (persist > 0) {
    const std::uint64_t bytes = persist * std::uint64_t(cfg_.sector_size);
    ssize_t n = ::pwrite(fd_, data.data(), bytes, static_cast<off_t>(start * cfg_.sector_size));
    if (n < 0 || static_cast<std::uint64_t>(n) != bytes)
      throw std::runtime_error("vdisk: backing write failed on " + cfg_.path);
    counters_.write_bytes += bytes;
    // Fresh data clears unreadable/corrupt faults on the written sectors
    // (the drive reallocates on write).
    for (auto it = faults_.lower_bound(start); it != faults_.end() && it->first < start + persist;) {
      if (it->second.kind == FaultKind::unreadable || it->second.kind == FaultKind::silent_corrupt)
        it = faults_.erase(it);
      else
        ++it;
    }
  }
  if (persist < count)
    throw power_failure_error();
  return res;
}

void VirtualDisk::inject_fault(const FaultSpec& spec) {
  std::lock_guard<std::mutex> g(mu_);
  check_range(spec.start_sector, spec.count);
  if (spec.kind == FaultKind::transient && spec.k < 1)
    throw std::invalid_argument("vdisk: transient fault needs k >= 1");
  for (std::uint64_t s = spec.start_sector; s < spec.start_sector + spec.count; ++s) {
    ActiveFault f;
    f.kind = spec.kind;
    f.k = spec.k;
    f.pattern = spec.pattern;
    faults_[s] = f;
  }
}

void VirtualDisk::remap_sector(std::uint64_t sector) {
  std::lock_guard<std::mutex> g(mu_);
  check_range(sector, 1);
  faults_.erase(sector);
}

void VirtualDisk::clear_faults(std::uint64_t start, std::uint64_t count) {
  std::lock_guard<std::mutex> g(mu_);
  check_range(start, count);
  auto it = faults_.lower_bound(start);
  while (it != faults_.end() && it->first < start + count)
    it = faults_.erase(it);
}

void VirtualDisk::clear_read_faults(std::uint64_t start, std::uint64_t count) {
  std::lock_guard<std::mutex> g(mu_);
  check_range(start, count);
  auto it = faults_.lower_bound(start);
  while (it != faults_.end() && it->first < start + count) {
    if (it->second.kind != FaultKind::write_fail)
      it = faults_.erase(it);
    else
      ++it;
  }
}

void VirtualDisk::fail_disk() {
  std::lock_guard<std::mutex> g(mu_);
  state_ = DiskState::failed;
}

void VirtualDisk::restore_disk() {
  std::lock_guard<std::mutex> g(mu_);
  state_ = DiskState::healthy;
}

DiskCounters VirtualDisk::counters() const {
  std::lock_guard<std::mutex> g(mu_);
  return counters_;
}

double VirtualDisk::ready_at() const {
  std::lock_guard<std::mutex> g(mu_);
  return ready_at_;
}

void VirtualDisk::set_power_rail(std::shared_ptr<PowerRail> rail) {
  std::lock_guard<std::mutex> g(mu_);
  rail_ = std::move(rail);
}

// ---------------------------------------------------------------------------
// Fault file parsing

static FaultKind parse_kind(const std::string& tok, const std::string& where) {
  if (tok == "unreadable") return FaultKind::unreadable;
  if (tok == "transient") return FaultKind::transient;
  if (tok == "silent-corrupt") return FaultKind::silent_corrupt;
  if (tok == "write-fail") return FaultKind::write_fail;
  throw std::runtime_error(where + ": unknown fault kind '" + tok + "'");
}

std::vector<std::pair<std::uint32_t, FaultSpec>> parse_fault_lines(const std::string& text,
                                                                   const std::string& origin) {
  std::vector<std::pair<std::uint32_t, FaultSpec>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string disk_tok, kind_tok;
    if (!(ls >> disk_tok))
      continue; // blank
    const std::string where = origin + ":" + std::to_string(lineno);
    FaultSpec spec;
    std::uint64_t disk = 0, start = 0, count = 0;
    try {
      disk = std::stoull(disk_tok);
      if (!(ls >> kind_tok))
        throw std::runtime_error(where + ": missing fault kind");
      spec.kind = parse_kind(kind_tok, where);
      std::string a, b;
      if (!(ls >> a >> b))
        throw std::runtime_error(where + ": expected <start-sector> <count>");
      start = std::stoull(a);
      count = std::stoull(b);
      std::string extra;
      if (ls >> extra) {
        const std::uint64_t v = std::stoull(extra, nullptr, 0);
        if (spec.kind == FaultKind::transient)
          spec.k = static_cast<std::uint32_t>(v);
        else if (spec.kind == FaultKind::silent_corrupt)
          spec.pattern = static_cast<std::uint8_t>(v);
        else
          throw std::runtime_error(where + ": unexpected extra argument '" + extra + "'");
      }
      std::string junk;
      if (ls >> junk)
        throw std::runtime_error(where + ": trailing garbage '" + junk + "'");
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(where + ": malformed number");
    } catch (const std::out_of_range&) {
      throw std::runtime_error(where + ": number out of range");
    }
    spec.start_sector = start;
    spec.count = count;
    if (spec.count == 0)
      throw std::runtime_error(where + ": count must be positive");
    out.emplace_back(static_cast<std::uint32_t>(disk), spec);
  }
  return out;
}

std::vector<std::pair<std::uint32_t, FaultSpec>> parse_fault_file(const std::string& path) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot open fault file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_fault_lines(ss.str(), path);
}

} // namespace raid0e
