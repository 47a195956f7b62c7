#include "raid0e/engine.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace raid0e {

namespace {

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) {
  return (v + a - 1) / a * a;
}

std::string disk_label(const Superblock& sb, std::uint32_t member) {
  if (member < sb.members.size() && !sb.members[member].name.empty())
    return sb.members[member].name;
  std::ostringstream os;
  os << "member" << member;
  return os.str();
}

} // namespace

const char* array_mode_name(ArrayMode m) {
  switch (m) {
  case ArrayMode::healthy: return "healthy";
  case ArrayMode::degraded: return "degraded";
  case ArrayMode::redundancy_lost: return "redundancy-lost";
  case ArrayMode::offline: return "offline";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// construction

std::shared_ptr<RaidArray> RaidArray::create(std::vector<std::shared_ptr<VirtualDisk>> disks,
                                             ArrayGeometry geom, const ArrayOptions& opts) {
  if (geom.n_data < 2 || geom.n_data > 64)
    throw std::invalid_argument("create: n_data must be in [2, 64]");
  if (geom.m_parity < 1)
    throw std::invalid_argument("create: m_parity must be >= 1");
  if (disks.size() != std::size_t(geom.n_data) + geom.m_parity)
    throw std::invalid_argument("create: member count does not match geometry");
  if (geom.sector_size == 0 || geom.stripe_unit == 0 || geom.stripe_unit % geom.sector_size != 0)
    throw std::invalid_argument("create: stripe unit must be a sector multiple");

  std::uint64_t raw = disks[0]->capacity_sectors();
  for (const auto& d : disks) {
    if (d->sector_size() != geom.sector_size)
      throw std::invalid_argument("create: member sector size mismatch");
    raw = std::min(raw, d->capacity_sectors());
  }

  const std::uint64_t spu = geom.stripe_unit / geom.sector_size;
  const std::uint64_t sb_sectors = align_up(kSuperblockBytes, geom.sector_size) / geom.sector_size;
  const std::uint64_t reserve = align_up(sb_sectors, spu);

  if (opts.journal_bytes % geom.sector_size != 0)
    throw std::invalid_argument("create: journal size must be a sector multiple");
  std::uint64_t journal_sectors = align_up(opts.journal_bytes / geom.sector_size, spu);
  // Room for at least one full-stripe record, its commit and slack.
  std::uint64_t min_journal = 2 + (std::uint64_t(geom.n_data) + 1) * spu + spu;
  if (journal_sectors < min_journal)
    throw std::invalid_argument("create: journal too small for one full-stripe record");

  const std::uint64_t data_area_start = reserve;
  const std::uint64_t parity_area_start = reserve + journal_sectors;
  if (raw <= parity_area_start + spu)
    throw std::invalid_argument("create: members too small for layout");

  std::uint64_t stripes_data = (raw - data_area_start) / spu;
  std::uint64_t parity_blocks = (raw - parity_area_start) / spu;
  std::uint64_t total = std::min(stripes_data, parity_blocks * geom.m_parity);
  if (total == 0)
    throw std::invalid_argument("create: members too small for one stripe");

  auto arr = std::shared_ptr<RaidArray>(new RaidArray);
  arr->opts_ = opts;
  arr->disks_ = std::move(disks);

  Superblock sb;
  sb.geom = geom;
  sb.geom.disk_capacity = total * spu;
  sb.data_area_start = data_area_start;
  sb.parity_area_start = parity_area_start;
  sb.journal_start = reserve;
  sb.journal_sectors = journal_sectors;
  sb.generation = 1;
  for (std::uint32_t i = 0; i < geom.n_data; ++i) {
    std::ostringstream os;
    os << "d" << i;
    sb.members.push_back(MemberRole{Domain::data, MemberStatus::healthy, i, os.str()});
  }
  for (std::uint32_t j = 0; j < geom.m_parity; ++j) {
    std::ostringstream os;
    os << "p" << j;
    sb.members.push_back(MemberRole{Domain::parity, MemberStatus::healthy, j, os.str()});
  }
  sb.geom.validate();
  arr->sb_ = sb;

  double end = 0.0;
  arr->write_superblocks_locked(0.0, end);

  std::vector<std::shared_ptr<VirtualDisk>> pmembers(arr->disks_.begin() + geom.n_data,
                                                     arr->disks_.end());
  arr->journal_ = std::make_unique<Journal>(pmembers, sb.journal_start, sb.journal_sectors,
                                            geom.sector_size, geom.stripe_unit);
  IoOutcome jo = arr->journal_->format(end);
  arr->now_ = std::max(end, jo.end);
  return arr;
}

std::shared_ptr<RaidArray> RaidArray::open(std::vector<std::shared_ptr<VirtualDisk>> disks,
                                           const ArrayOptions& opts) {
  if (disks.size() < 3)
    throw std::invalid_argument("open: an array needs at least three members");

  // Pull a superblock from every member; the newest generation wins.
  std::vector<Result<Superblock>> sbs;
  double end = 0.0;
  for (const auto& d : disks) {
    std::uint64_t sbsec = align_up(kSuperblockBytes, d->sector_size()) / d->sector_size();
    std::vector<std::uint8_t> buf(sbsec * d->sector_size());
    IoOutcome o = d->read_sectors(0, buf, 0.0);
    end = std::max(end, o.end);
    if (!o.ok())
      sbs.push_back(Result<Superblock>::error(ErrKind::media_error, "superblock unreadable"));
    else
      sbs.push_back(Superblock::decode(buf.data(), buf.size()));
  }

  const Superblock* best = nullptr;
  for (const auto& r : sbs)
    if (r && (!best || r.value().generation > best->generation))
      best = &r.value();
  if (!best)
    throw std::runtime_error("open: no member carries a valid superblock");

  Superblock sb = *best;
  if (disks.size() != std::size_t(sb.geom.n_data) + sb.geom.m_parity)
    throw std::invalid_argument("open: member count does not match superblock");

  auto arr = std::shared_ptr<RaidArray>(new RaidArray);
  arr->opts_ = opts;
  arr->sb_ = sb;
  arr->disks_ = std::move(disks);

  const std::uint64_t spu = sb.geom.sectors_per_unit();
  for (std::size_t i = 0; i < arr->disks_.size(); ++i) {
    auto& d = arr->disks_[i];
    bool ok = sbs[i] && sbs[i].value() == sb;
    if (ok && d->sector_size() != sb.geom.sector_size)
      ok = false;
    if (ok) {
      // Enough room for this member's share of the payload?
      std::uint64_t need = i < sb.geom.n_data
                               ? sb.data_area_start + sb.geom.total_stripes() * spu
                               : sb.parity_area_start +
                                     (sb.geom.total_stripes() / sb.geom.m_parity + 1) * spu;
      if (d->capacity_sectors() + spu < need)
        ok = false;
    }
    if (ok && sb.members[i].status == MemberStatus::failed)
      ok = false;
    if (!ok && d->state() == DiskState::healthy)
      d->fail_disk();
  }

  std::vector<std::shared_ptr<VirtualDisk>> pmembers(arr->disks_.begin() + sb.geom.n_data,
                                                     arr->disks_.end());
  arr->journal_ = std::make_unique<Journal>(pmembers, sb.journal_start, sb.journal_sectors,
                                            sb.geom.sector_size, sb.geom.stripe_unit);
  double jend = arr->journal_->load(end);
  arr->journal_dirty_ = arr->journal_->has_records();
  arr->now_ = std::max(end, jend);
  return arr;
}

// ---------------------------------------------------------------------------
// small helpers

bool RaidArray::data_failed(std::uint32_t i) const {
  return disks_[i]->state() == DiskState::failed;
}

bool RaidArray::parity_failed(std::uint32_t j) const {
  return disks_[sb_.geom.n_data + j]->state() == DiskState::failed;
}

ArrayMode RaidArray::mode_locked() const {
  std::uint32_t fd = 0, fp = 0;
  for (std::uint32_t i = 0; i < sb_.geom.n_data; ++i)
    fd += data_failed(i);
  for (std::uint32_t j = 0; j < sb_.geom.m_parity; ++j)
    fp += parity_failed(j);
  if (fd >= 2)
    return ArrayMode::offline;
  if (fp >= 1)
    return ArrayMode::redundancy_lost;
  if (fd >= 1)
    return ArrayMode::degraded;
  return ArrayMode::healthy;
}

std::uint64_t RaidArray::data_block_sector(std::uint64_t stripe) const {
  return sb_.data_area_start + stripe * sb_.geom.sectors_per_unit();
}

std::uint64_t RaidArray::parity_block_sector(std::uint64_t stripe) const {
  return sb_.parity_area_start + (stripe / sb_.geom.m_parity) * sb_.geom.sectors_per_unit();
}

std::uint32_t RaidArray::parity_disk_of(std::uint64_t stripe) const {
  return std::uint32_t(stripe % sb_.geom.m_parity);
}

IoOutcome RaidArray::read_data_block(std::uint32_t disk, std::uint64_t stripe, Block& out,
                                     double not_before) {
  out.resize(sb_.geom.stripe_unit);
  return data_disk(disk).read_sectors(data_block_sector(stripe), out, not_before);
}

IoOutcome RaidArray::write_data_block(std::uint32_t disk, std::uint64_t stripe,
                                      std::span<const std::uint8_t> block, double not_before) {
  return data_disk(disk).write_sectors(data_block_sector(stripe), block, not_before);
}

IoOutcome RaidArray::read_parity_block(std::uint64_t stripe, Block& out, double not_before) {
  out.resize(sb_.geom.stripe_unit);
  return parity_disk(parity_disk_of(stripe)).read_sectors(parity_block_sector(stripe), out,
                                                          not_before);
}

IoOutcome RaidArray::write_parity_block(std::uint64_t stripe,
                                        std::span<const std::uint8_t> block, double not_before) {
  return parity_disk(parity_disk_of(stripe)).write_sectors(parity_block_sector(stripe), block,
                                                           not_before);
}

// ---------------------------------------------------------------------------
// recovery

Result<Block> RaidArray::recover_block_locked(std::uint64_t stripe, std::uint32_t data_index,
                                              double floor, double& end) {
  const std::uint32_t n = sb_.geom.n_data;
  if (data_index >= n)
    throw std::out_of_range("recover: data index out of range");
  end = floor;

  auto lose = [&](const std::string& why) {
    ++counters_.unrecoverable_reads;
    IoError e;
    e.kind = ErrKind::unrecoverable;
    e.disk = int(data_index);
    e.stripe = std::int64_t(stripe);
    e.detail = "stripe " + std::to_string(stripe) + " block on " + disk_label(sb_, data_index) +
               " unrecoverable: " + why;
    return Result<Block>::error(std::move(e));
  };

  // Parity source: the pending map shadows the parity area.
  Block parity;
  bool parity_from_memory = false;
  if (auto it = pending_parity_.find(stripe); it != pending_parity_.end()) {
    parity = it->second;
    parity_from_memory = true;
  } else if (parity_failed(parity_disk_of(stripe))) {
    return lose("parity member " + disk_label(sb_, n + parity_disk_of(stripe)) + " is failed");
  }

  // Issue all secondary reads at the same floor so they overlap.
  std::vector<Block> survivors(n > 0 ? n - 1 : 0);
  std::size_t si = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (i == data_index)
      continue;
    if (data_failed(i))
      return lose("second data member " + disk_label(sb_, i) + " is failed");
    IoOutcome o = read_data_block(i, stripe, survivors[si], floor);
    ++counters_.survivor_reads;
    end = std::max(end, o.end);
    if (!o.ok())
      return lose("survivor read on " + disk_label(sb_, i) + " failed: " + o.err->to_string());
    ++si;
  }
  if (!parity_from_memory) {
    IoOutcome o = read_parity_block(stripe, parity, floor);
    ++counters_.parity_reads;
    end = std::max(end, o.end);
    if (!o.ok())
      return lose("parity read failed: " + o.err->to_string());
  }

  Block out = reconstruct(survivors, parity, n);
  ++counters_.recoveries;
  return Result<Block>::value(std::move(out));
}

Status RaidArray::writeback_locked(std::uint64_t stripe, std::uint32_t data_index,
                                   const Block& block, double floor, double& end) {
  if (block.size() != sb_.geom.stripe_unit)
    throw std::invalid_argument("writeback: block size mismatch");
  VirtualDisk& d = data_disk(data_index);
  // Remap the damaged sectors, then lay the reconstructed contents back down.
  d.clear_read_faults(data_block_sector(stripe), sb_.geom.sectors_per_unit());
  IoOutcome o = write_data_block(data_index, stripe, block, floor);
  end = o.end;
  if (!o.ok()) {
    ++counters_.writeback_failures;
    return Status::error(o.err->kind, "writeback failed: " + o.err->to_string());
  }
  ++counters_.writebacks;
  return Status::ok();
}

void RaidArray::maybe_writeback_locked(std::uint64_t stripe, std::uint32_t data_index,
                                       const Block& block, double floor) {
  if (!opts_.writeback_reconstructed)
    return;
  if (data_failed(data_index))
    return; // nothing to heal until the member is replaced
  double end = floor;
  (void)writeback_locked(stripe, data_index, block, floor, end);
}

Result<Block> RaidArray::recover_block(std::uint64_t stripe, std::uint32_t data_index) {
  std::lock_guard<std::mutex> g(mu_);
  if (stripe >= sb_.geom.total_stripes())
    throw std::out_of_range("recover: stripe out of range");
  double end = now_;
  auto r = recover_block_locked(stripe, data_index, now_, end);
  if (r)
    maybe_writeback_locked(stripe, data_index, r.value(), end);
  now_ = std::max(now_, end);
  return r;
}

Status RaidArray::writeback_reconstructed(std::uint64_t stripe, std::uint32_t data_index,
                                          const Block& block) {
  std::lock_guard<std::mutex> g(mu_);
  if (stripe >= sb_.geom.total_stripes())
    throw std::out_of_range("writeback: stripe out of range");
  if (data_index >= sb_.geom.n_data)
    throw std::out_of_range("writeback: data index out of range");
  double end = now_;
  Status s = writeback_locked(stripe, data_index, block, now_, end);
  now_ = std::max(now_, end);
  return s;
}

// ---------------------------------------------------------------------------
// reads

ReadOutcome RaidArray::read(std::uint64_t lba, std::span<std::uint8_t> out) {
  return read_at(now(), lba, out);
}

ReadOutcome RaidArray::read_at(double issue, std::uint64_t lba, std::span<std::uint8_t> out) {
  std::lock_guard<std::mutex> g(mu_);
  const ArrayGeometry& geom = sb_.geom;
  ReadOutcome res;
  // The caller's issue time is honored as-is; overlap with other in-flight
  // requests is resolved per member through ready_at.
  res.end = issue;
  const double t0 = issue;

  if (out.empty() || out.size() % geom.sector_size != 0) {
    res.status = Status::error(ErrKind::bad_range, "read: buffer must be a sector multiple");
    return res;
  }
  const std::uint64_t nsec = out.size() / geom.sector_size;
  if (lba + nsec > geom.volume_sectors()) {
    res.status = Status::error(ErrKind::bad_range, "read: beyond end of volume");
    return res;
  }
  if (mode_locked() == ArrayMode::offline) {
    res.status = Status::error(ErrKind::offline, "read: array is offline");
    return res;
  }

  const std::uint64_t spu = geom.sectors_per_unit();
  std::uint64_t cur = lba;
  std::size_t buf_off = 0;
  while (cur < lba + nsec) {
    std::uint64_t in_unit = cur % spu;
    std::uint64_t take = std::min(spu - in_unit, lba + nsec - cur);
    BlockLocation loc = map_lba(cur, geom);
    std::span<std::uint8_t> dst = out.subspan(buf_off, std::size_t(take) * geom.sector_size);

    double seg_end = t0;
    bool need_recovery = false;
    double recovery_floor = t0;
    if (!data_failed(loc.disk_index)) {
      IoOutcome o = data_disk(loc.disk_index)
                        .read_sectors(sb_.data_area_start + loc.offset / geom.sector_size, dst, t0);
      seg_end = o.end;
      if (!o.ok()) {
        // The member charged a full attempt before reporting the error;
        // recovery starts once that attempt is over.
        need_recovery = true;
        recovery_floor = o.end;
      }
    } else {
      need_recovery = true;
    }

    if (need_recovery) {
      double rec_end = recovery_floor;
      auto rec = recover_block_locked(loc.stripe, loc.disk_index, recovery_floor, rec_end);
      if (!rec) {
        res.status = Status(rec.status());
        res.end = std::max(res.end, rec_end);
        now_ = std::max(now_, res.end);
        return res;
      }
      std::memcpy(dst.data(), rec.value().data() + in_unit * geom.sector_size, dst.size());
      ++res.recovered_blocks;
      res.recovered_stripes.push_back(loc.stripe);
      seg_end = rec_end;
      // Heal in the background; completion does not wait for it.
      maybe_writeback_locked(loc.stripe, loc.disk_index, rec.value(), rec_end);
    }

    res.end = std::max(res.end, seg_end);
    buf_off += dst.size();
    cur += take;
  }
  now_ = std::max(now_, res.end);
  return res;
}

// ---------------------------------------------------------------------------
// writes

WriteOutcome RaidArray::write(std::uint64_t lba, std::span<const std::uint8_t> data) {
  return write_at(now(), lba, data);
}

WriteOutcome RaidArray::write_at(double issue, std::uint64_t lba,
                                 std::span<const std::uint8_t> data) {
  std::lock_guard<std::mutex> g(mu_);
  const ArrayGeometry& geom = sb_.geom;
  WriteOutcome res;
  res.end = issue;
  const double t0 = issue;

  if (data.empty() || data.size() % geom.sector_size != 0) {
    res.status = Status::error(ErrKind::bad_range, "write: buffer must be a sector multiple");
    return res;
  }
  const std::uint64_t nsec = data.size() / geom.sector_size;
  if (lba + nsec > geom.volume_sectors()) {
    res.status = Status::error(ErrKind::bad_range, "write: beyond end of volume");
    return res;
  }
  ArrayMode mode = mode_locked();
  if (mode == ArrayMode::offline) {
    res.status = Status::error(ErrKind::offline, "write: array is offline");
    return res;
  }
  if (mode == ArrayMode::redundancy_lost && opts_.strict_redundancy_lost) {
    res.status = Status::error(ErrKind::state,
                               "write: parity domain lost and strict mode is on");
    return res;
  }

  // Chop the request into per-stripe pieces.  Within one stripe, consecutive
  // volume blocks land on consecutive data members, so a full cover of all n
  // blocks is a single contiguous slice of `data`.
  const std::uint64_t spu = geom.sectors_per_unit();
  std::map<std::uint64_t, std::map<std::uint32_t, std::pair<std::uint64_t,
      std::span<const std::uint8_t>>>> stripes;
  std::uint64_t cur = lba;
  std::size_t buf_off = 0;
  while (cur < lba + nsec) {
    std::uint64_t in_unit = cur % spu;
    std::uint64_t take = std::min(spu - in_unit, lba + nsec - cur);
    std::uint64_t unit = cur / spu;
    std::uint64_t stripe = unit / geom.n_data;
    std::uint32_t block = std::uint32_t(unit % geom.n_data);
    stripes[stripe][block] = {in_unit * geom.sector_size,
                              data.subspan(buf_off, std::size_t(take) * geom.sector_size)};
    buf_off += std::size_t(take) * geom.sector_size;
    cur += take;
  }

  for (const auto& [stripe, pieces] : stripes) {
    bool full = pieces.size() == geom.n_data;
    if (full)
      for (const auto& [b, p] : pieces)
        if (p.first != 0 || p.second.size() != geom.stripe_unit)
          full = false;
    WriteOutcome wo;
    if (full) {
      std::size_t first_off = std::size_t(pieces.at(0).second.data() - data.data());
      wo = write_full_stripe_locked(stripe,
                                    data.subspan(first_off, std::size_t(geom.n_data) *
                                                                geom.stripe_unit),
                                    t0);
    } else {
      wo = write_partial_locked(stripe, pieces, t0);
    }
    res.end = std::max(res.end, wo.end);
    if (!wo.status.is_ok() && res.status.is_ok())
      res.status = wo.status;
  }
  now_ = std::max(now_, res.end);
  return res;
}

Status RaidArray::ensure_journal_room_locked(std::uint32_t region, std::size_t payload_blocks,
                                             double& floor) {
  if (journal_->can_fit(region, payload_blocks))
    return Status::ok();
  double end = floor;
  Status s = flush_locked(floor, end);
  floor = std::max(floor, end);
  if (!s.is_ok())
    return s;
  if (!journal_->can_fit(region, payload_blocks))
    return Status::error(ErrKind::config, "journal region cannot hold one record");
  return Status::ok();
}

WriteOutcome RaidArray::write_full_stripe_locked(std::uint64_t stripe,
                                                 std::span<const std::uint8_t> payload,
                                                 double issue) {
  const ArrayGeometry& geom = sb_.geom;
  WriteOutcome res;
  res.end = issue;
  ++counters_.full_stripe_writes;

  auto direct_writes = [&](double floor) {
    for (std::uint32_t b = 0; b < geom.n_data; ++b) {
      if (data_failed(b))
        continue;
      IoOutcome o = write_data_block(b, stripe,
                                     payload.subspan(std::size_t(b) * geom.stripe_unit,
                                                     geom.stripe_unit),
                                     floor);
      res.end = std::max(res.end, o.end);
      if (!o.ok())
        suspect_stripes_.insert(stripe);
    }
  };

  if (mode_locked() == ArrayMode::redundancy_lost) {
    // Plain striped writes; there is no parity domain left to protect them.
    for (std::uint32_t b = 0; b < geom.n_data; ++b)
      if (data_failed(b))
        res.status = Status::error(ErrKind::disk_failed,
                                   "write: block lands on a failed member and parity is gone");
    direct_writes(issue);
    return res;
  }

  const std::uint32_t region = parity_disk_of(stripe);
  double floor = issue;
  Status room = ensure_journal_room_locked(region, geom.n_data, floor);
  if (!room.is_ok()) {
    suspect_stripes_.insert(stripe);
    direct_writes(floor);
    res.status = room;
    return res;
  }

  std::vector<Block> blocks(geom.n_data);
  for (std::uint32_t b = 0; b < geom.n_data; ++b) {
    auto s = payload.subspan(std::size_t(b) * geom.stripe_unit, geom.stripe_unit);
    blocks[b].assign(s.begin(), s.end());
  }

  JournalRecordMeta meta;
  meta.kind = RecordKind::full_stripe;
  meta.seq = journal_->next_seq();
  meta.stripe = stripe;
  meta.bitmap = geom.n_data == 64 ? ~std::uint64_t(0) : (std::uint64_t(1) << geom.n_data) - 1;
  IoOutcome jo = journal_->append_record(region, meta, blocks, floor);
  if (jo.ok()) {
    IoOutcome co = journal_->append_commit(region, meta.seq, stripe, jo.end);
    counters_.journal_appends += 2;
    if (!co.ok()) {
      // Commit never made it out; the bare record will be discarded at
      // replay, so fall back to unprotected in-place writes.
      suspect_stripes_.insert(stripe);
      direct_writes(jo.end);
      res.end = std::max(res.end, co.end);
      return res;
    }
    floor = co.end;
    res.end = std::max(res.end, co.end);
  } else {
    ++counters_.journal_appends;
    suspect_stripes_.insert(stripe);
    direct_writes(jo.end);
    res.end = std::max(res.end, jo.end);
    return res;
  }

  direct_writes(floor);
  // Parity materialization is deferred; the journaled payload plus this
  // folded copy stand in for the parity area until the next checkpoint.
  pending_parity_[stripe] = compute_parity(blocks);
  return res;
}

WriteOutcome RaidArray::write_partial_locked(
    std::uint64_t stripe,
    const std::map<std::uint32_t, std::pair<std::uint64_t, std::span<const std::uint8_t>>>& pieces,
    double issue) {
  const ArrayGeometry& geom = sb_.geom;
  const std::uint32_t n = geom.n_data;
  WriteOutcome res;
  res.end = issue;

  if (mode_locked() == ArrayMode::redundancy_lost) {
    for (const auto& [b, p] : pieces) {
      if (data_failed(b)) {
        res.status = Status::error(ErrKind::disk_failed,
                                   "write: block lands on a failed member and parity is gone");
        continue;
      }
      IoOutcome o = data_disk(b).write_sectors(data_block_sector(stripe) +
                                                   p.first / geom.sector_size,
                                               p.second, issue);
      res.end = std::max(res.end, o.end);
    }
    return res;
  }

  ++counters_.rmw_writes;
  const std::uint32_t region = parity_disk_of(stripe);
  double floor = issue;
  Status room = ensure_journal_room_locked(region, pieces.size() + 1, floor);
  if (!room.is_ok()) {
    res.status = room;
    suspect_stripes_.insert(stripe);
    return res;
  }

  auto fail_write = [&](const std::string& why) {
    suspect_stripes_.insert(stripe);
    res.status = Status::error(ErrKind::unrecoverable, "write: " + why);
    return res;
  };

  // Phase 1: collect the old contents needed for the parity update.  All
  // reads are issued at the same floor and overlap across members.
  double pre_end = floor;
  Block old_parity;
  bool parity_ok = true;
  bool parity_from_memory = false;
  if (auto it = pending_parity_.find(stripe); it != pending_parity_.end()) {
    old_parity = it->second;
    parity_from_memory = true;
  } else {
    IoOutcome o = read_parity_block(stripe, old_parity, floor);
    ++counters_.rmw_member_reads;
    pre_end = std::max(pre_end, o.end);
    parity_ok = o.ok();
  }

  std::map<std::uint32_t, Block> old_blocks; // touched blocks
  bool need_all = false;
  for (const auto& [b, p] : pieces) {
    if (data_failed(b)) {
      need_all = true;
      continue;
    }
    Block blk;
    IoOutcome o = read_data_block(b, stripe, blk, floor);
    ++counters_.rmw_member_reads;
    pre_end = std::max(pre_end, o.end);
    if (o.ok())
      old_blocks[b] = std::move(blk);
    else
      need_all = true; // reconstruct this one from the rest of the stripe
  }
  if (!parity_ok)
    need_all = true; // recompute parity from the full stripe instead

  std::map<std::uint32_t, Block> rest_blocks; // untouched blocks when needed
  if (need_all) {
    for (std::uint32_t b = 0; b < n; ++b) {
      if (pieces.count(b) || old_blocks.count(b))
        continue;
      if (pieces.count(b) == 0 && data_failed(b)) {
        // An untouched block sits on a failed member: its contents only
        // matter for the full-stripe fold, and they are reachable through
        // parity alone.  With parity also gone this write cannot keep the
        // stripe consistent.
        if (!parity_ok)
          return fail_write("stripe " + std::to_string(stripe) +
                            " has a failed member and unreadable parity");
        continue;
      }
      if (data_failed(b))
        continue;
      Block blk;
      IoOutcome o = read_data_block(b, stripe, blk, floor);
      ++counters_.rmw_member_reads;
      pre_end = std::max(pre_end, o.end);
      if (!o.ok())
        return fail_write("stripe " + std::to_string(stripe) +
                          " needs a second unreadable block: " + o.err->to_string());
      rest_blocks[b] = std::move(blk);
    }
    // Reconstruct any old block we could not read directly.
    std::uint32_t missing = n; // at most one recoverable gap
    for (std::uint32_t b = 0; b < n; ++b) {
      if (old_blocks.count(b) || rest_blocks.count(b))
        continue;
      if (missing != n)
        return fail_write("stripe " + std::to_string(stripe) + " is missing two blocks");
      missing = b;
    }
    if (missing != n) {
      if (!parity_ok)
        return fail_write("stripe " + std::to_string(stripe) +
                          " is missing a block and parity is unreadable");
      Block acc = old_parity;
      for (const auto& [b, blk] : old_blocks)
        if (b != missing)
          xor_accumulate(acc, blk);
      for (const auto& [b, blk] : rest_blocks)
        xor_accumulate(acc, blk);
      if (pieces.count(missing))
        old_blocks[missing] = acc;
      else
        rest_blocks[missing] = std::move(acc);
      ++counters_.recoveries;
    }
  }

  // Phase 2: patch the touched blocks and fold the new parity.
  std::map<std::uint32_t, Block> new_blocks;
  for (const auto& [b, p] : pieces) {
    auto it = old_blocks.find(b);
    if (it == old_blocks.end())
      return fail_write("stripe " + std::to_string(stripe) + " old contents unavailable");
    Block nb = it->second;
    std::memcpy(nb.data() + p.first, p.second.data(), p.second.size());
    new_blocks[b] = std::move(nb);
  }

  Block new_parity;
  if (need_all) {
    // Every block is on hand (read, patched or reconstructed): full fold.
    new_parity.assign(geom.stripe_unit, 0);
    for (std::uint32_t b = 0; b < n; ++b) {
      if (auto it = new_blocks.find(b); it != new_blocks.end())
        xor_accumulate(new_parity, it->second);
      else
        xor_accumulate(new_parity, rest_blocks.at(b));
    }
  } else {
    new_parity = old_parity;
    for (const auto& [b, nb] : new_blocks)
      new_parity = incremental_parity(old_blocks[b], nb, new_parity);
  }

  // Phase 3: journal the update, then apply it in place.
  std::vector<Block> payload;
  std::uint64_t bitmap = 0;
  for (const auto& [b, nb] : new_blocks) {
    bitmap |= std::uint64_t(1) << b;
    payload.push_back(nb);
  }
  payload.push_back(new_parity);

  JournalRecordMeta meta;
  meta.kind = RecordKind::partial;
  meta.seq = journal_->next_seq();
  meta.stripe = stripe;
  meta.bitmap = bitmap;
  IoOutcome jo = journal_->append_record(region, meta, payload, pre_end);
  double wfloor;
  if (jo.ok()) {
    IoOutcome co = journal_->append_commit(region, meta.seq, stripe, jo.end);
    counters_.journal_appends += 2;
    if (!co.ok()) {
      suspect_stripes_.insert(stripe);
      wfloor = co.end;
    } else {
      wfloor = co.end;
    }
  } else {
    ++counters_.journal_appends;
    suspect_stripes_.insert(stripe);
    wfloor = jo.end;
  }
  res.end = std::max(res.end, wfloor);

  bool all_ok = true;
  for (const auto& [b, nb] : new_blocks) {
    if (data_failed(b))
      continue; // contents live on implicitly through parity
    IoOutcome o = write_data_block(b, stripe, nb, wfloor);
    ++counters_.rmw_member_writes;
    res.end = std::max(res.end, o.end);
    if (!o.ok()) {
      suspect_stripes_.insert(stripe);
      all_ok = false;
    }
  }
  IoOutcome po = write_parity_block(stripe, new_parity, wfloor);
  ++counters_.rmw_member_writes;
  res.end = std::max(res.end, po.end);
  if (po.ok()) {
    pending_parity_.erase(stripe);
  } else {
    // Parity area is stale; keep the folded copy as the live parity source.
    pending_parity_[stripe] = new_parity;
    suspect_stripes_.insert(stripe);
    all_ok = false;
  }
  (void)all_ok;
  (void)parity_from_memory;
  return res;
}

// ---------------------------------------------------------------------------
// checkpoint / shutdown

Status RaidArray::flush_locked(double issue, double& end) {
  end = issue;
  bool clean = true;
  for (auto it = pending_parity_.begin(); it != pending_parity_.end();) {
    IoOutcome o = write_parity_block(it->first, it->second, issue);
    end = std::max(end, o.end);
    if (o.ok()) {
      ++counters_.parity_materialized;
      it = pending_parity_.erase(it);
    } else {
      suspect_stripes_.insert(it->first);
      clean = false;
      ++it;
    }
  }
  if (!clean)
    return Status::error(ErrKind::write_error,
                         "flush: parity materialization failed for some stripes");
  IoOutcome ro = journal_->reset_all(end);
  end = std::max(end, ro.end);
  journal_dirty_ = false;
  if (!ro.ok())
    return Status::error(ro.err->kind, "flush: journal reset failed: " + ro.err->to_string());
  return Status::ok();
}

Status RaidArray::flush() {
  std::lock_guard<std::mutex> g(mu_);
  double end = now_;
  Status s = flush_locked(now_, end);
  now_ = std::max(now_, end);
  return s;
}

Status RaidArray::close() {
  std::lock_guard<std::mutex> g(mu_);
  double end = now_;
  Status s = flush_locked(now_, end);
  now_ = std::max(now_, end);
  // Persist member status so a failed disk stays failed across assembles.
  for (std::uint32_t i = 0; i < member_count(); ++i)
    sb_.members[i].status =
        disks_[i]->state() == DiskState::failed ? MemberStatus::failed : MemberStatus::healthy;
  sb_.generation += 1;
  double send = now_;
  write_superblocks_locked(now_, send);
  now_ = std::max(now_, send);
  return s;
}

void RaidArray::write_superblocks_locked(double floor, double& end) {
  auto image = sb_.encode();
  end = floor;
  for (const auto& d : disks_) {
    if (d->state() == DiskState::failed)
      continue;
    IoOutcome o = d->write_sectors(0, image, floor);
    end = std::max(end, o.end);
  }
}

Status RaidArray::persist_status() {
  std::lock_guard<std::mutex> g(mu_);
  for (std::uint32_t i = 0; i < member_count(); ++i)
    sb_.members[i].status =
        disks_[i]->state() == DiskState::failed ? MemberStatus::failed : MemberStatus::healthy;
  sb_.generation += 1;
  double end = now_;
  write_superblocks_locked(now_, end);
  now_ = std::max(now_, end);
  return Status::ok();
}

// ---------------------------------------------------------------------------
// replay

ReplayReport RaidArray::journal_replay() {
  std::lock_guard<std::mutex> g(mu_);
  ReplayReport rep;
  const ArrayGeometry& geom = sb_.geom;
  double end = now_;
  JournalScan scan = journal_->scan(now_, &end);
  rep.records_torn = scan.torn_records;

  std::set<std::uint64_t> repaired;
  for (const LoadedRecord& rec : scan.records) {
    if (!rec.committed) {
      ++rep.records_discarded;
      continue;
    }
    std::uint32_t bits = std::uint32_t(__builtin_popcountll(rec.meta.bitmap));
    bool shape_ok =
        rec.meta.stripe < geom.total_stripes() &&
        (geom.n_data == 64 || rec.meta.bitmap >> geom.n_data == 0) &&
        (rec.meta.kind == RecordKind::full_stripe
             ? bits == geom.n_data && rec.payload.size() == geom.n_data
             : bits >= 1 && rec.payload.size() == std::size_t(bits) + 1);
    if (!shape_ok) {
      ++rep.records_discarded;
      continue;
    }

    // Roll the update forward: data blocks in place, then parity.
    bool wrote_all = true;
    std::size_t pidx = 0;
    Block parity;
    for (std::uint32_t b = 0; b < geom.n_data; ++b) {
      if (!(rec.meta.bitmap >> b & 1))
        continue;
      const Block& blk = rec.payload[pidx++];
      if (rec.meta.kind == RecordKind::full_stripe) {
        if (parity.empty())
          parity.assign(geom.stripe_unit, 0);
        xor_accumulate(parity, blk);
      }
      if (data_failed(b))
        continue; // implicit through parity
      IoOutcome o = write_data_block(b, rec.meta.stripe, blk, now_);
      end = std::max(end, o.end);
      if (!o.ok()) {
        ++rep.write_errors;
        suspect_stripes_.insert(rec.meta.stripe);
        wrote_all = false;
      }
    }
    if (rec.meta.kind == RecordKind::partial)
      parity = rec.payload.back();
    if (!parity_failed(parity_disk_of(rec.meta.stripe))) {
      IoOutcome o = write_parity_block(rec.meta.stripe, parity, now_);
      end = std::max(end, o.end);
      if (!o.ok()) {
        ++rep.write_errors;
        suspect_stripes_.insert(rec.meta.stripe);
        wrote_all = false;
      }
    }
    pending_parity_.erase(rec.meta.stripe);
    ++rep.records_applied;
    repaired.insert(rec.meta.stripe);
    if (wrote_all)
      suspect_stripes_.erase(rec.meta.stripe);
  }
  rep.stripes_repaired = repaired.size();

  IoOutcome ro = journal_->reset_all(end);
  end = std::max(end, ro.end);
  journal_dirty_ = false;
  now_ = std::max(now_, end);
  return rep;
}

// ---------------------------------------------------------------------------
// scrub

ScrubReport RaidArray::scrub() {
  std::lock_guard<std::mutex> g(mu_);
  ScrubReport rep;
  const ArrayGeometry& geom = sb_.geom;
  const std::uint32_t n = geom.n_data;

  // Materialize pending parity first so the parity area is authoritative.
  double end = now_;
  (void)flush_locked(now_, end);
  const double start = end;

  for (std::uint64_t s = 0; s < geom.total_stripes(); ++s) {
    ++rep.stripes_checked;
    std::vector<Block> data(n);
    std::vector<bool> ok(n, false);
    std::vector<bool> present(n, false);
    Block parity;
    bool parity_ok = false;
    bool parity_present = !parity_failed(parity_disk_of(s));
    double stripe_end = start;

    for (std::uint32_t b = 0; b < n; ++b) {
      if (data_failed(b))
        continue;
      present[b] = true;
      IoOutcome o = read_data_block(b, s, data[b], start);
      stripe_end = std::max(stripe_end, o.end);
      ok[b] = o.ok();
    }
    if (parity_present) {
      IoOutcome o = read_parity_block(s, parity, start);
      stripe_end = std::max(stripe_end, o.end);
      parity_ok = o.ok();
    }
    end = std::max(end, stripe_end);

    // Blocks whose contents are unavailable: failed members or read errors.
    std::vector<std::uint32_t> lost_data;
    for (std::uint32_t b = 0; b < n; ++b)
      if (!present[b] || !ok[b])
        lost_data.push_back(b);
    bool parity_lost = !parity_present || !parity_ok;

    std::size_t lost = lost_data.size() + (parity_lost ? 1 : 0);
    if (lost == 0) {
      Block fold = compute_parity(data);
      if (fold != parity) {
        ++rep.inconsistent;
        rep.inconsistent_stripes.push_back(s);
      } else {
        suspect_stripes_.erase(s);
      }
      continue;
    }
    if (lost >= 2) {
      ++rep.unrecoverable;
      continue;
    }

    if (!parity_lost && lost_data.size() == 1 && present[lost_data[0]]) {
      // Single unreadable data block on a live member: rebuild it in place.
      std::uint32_t b = lost_data[0];
      Block acc = parity;
      for (std::uint32_t i = 0; i < n; ++i)
        if (i != b)
          xor_accumulate(acc, data[i]);
      double wb_end = stripe_end;
      Status st = writeback_locked(s, b, acc, stripe_end, wb_end);
      end = std::max(end, wb_end);
      if (st.is_ok())
        ++rep.healed;
      else
        ++rep.heal_failures;
      continue;
    }
    if (parity_lost && parity_present && lost_data.empty()) {
      // Parity sector unreadable but all data fine: recompute it.
      Block fold = compute_parity(data);
      VirtualDisk& pd = parity_disk(parity_disk_of(s));
      pd.clear_read_faults(parity_block_sector(s), geom.sectors_per_unit());
      IoOutcome o = pd.write_sectors(parity_block_sector(s), fold, stripe_end);
      end = std::max(end, o.end);
      if (o.ok())
        ++rep.healed;
      else
        ++rep.heal_failures;
      continue;
    }
    // The gap sits on a failed member: degraded-normal, nothing to verify.
  }
  now_ = std::max(now_, end);
  return rep;
}

// ---------------------------------------------------------------------------
// rebuild

Result<RebuildReport> RaidArray::rebuild(std::uint32_t member_index,
                                         std::shared_ptr<VirtualDisk> replacement,
                                         RebuildProgress progress) {
  using R = Result<RebuildReport>;
  const ArrayGeometry geom = sb_.geom; // copy; geometry is immutable anyway
  const std::uint32_t n = geom.n_data;
  const std::uint64_t spu = geom.sectors_per_unit();

  {
    std::lock_guard<std::mutex> g(mu_);
    if (member_index >= member_count())
      throw std::out_of_range("rebuild: member index out of range");
    if (!replacement)
      throw std::invalid_argument("rebuild: null replacement disk");
    if (disks_[member_index]->state() != DiskState::failed)
      return R::error(ErrKind::state, "rebuild: member is not failed");
    if (replacement->state() != DiskState::healthy)
      return R::error(ErrKind::config, "rebuild: replacement disk is not healthy");
    if (replacement->sector_size() != geom.sector_size ||
        replacement->capacity_sectors() < disks_[member_index]->capacity_sectors())
      return R::error(ErrKind::config, "rebuild: replacement too small or mismatched");
    // Reconstruction sources must all be present.
    for (std::uint32_t i = 0; i < n; ++i)
      if (i != member_index && data_failed(i))
        return R::error(ErrKind::state, "rebuild: second data member failed");
    if (member_index < n) {
      for (std::uint32_t j = 0; j < geom.m_parity; ++j)
        if (parity_failed(j))
          return R::error(ErrKind::state, "rebuild: parity member failed");
    }
    double fend = now_;
    (void)flush_locked(now_, fend); // failed-parity flush errors are resolved below
    now_ = std::max(now_, fend);
  }

  RebuildReport rep;
  const bool is_data = member_index < n;
  const std::uint32_t pj = member_index - n; // parity index when !is_data

  for (std::uint64_t s = 0; s < geom.total_stripes(); ++s) {
    if (!is_data && s % geom.m_parity != pj)
      continue;
    {
      std::lock_guard<std::mutex> g(mu_);
      double floor = now_;
      double stripe_end = floor;
      bool lost = false;
      Block target;
      if (is_data) {
        // Fold the survivors with parity to get the missing block back.
        std::vector<Block> rest(n - 1);
        std::size_t ri = 0;
        for (std::uint32_t i = 0; i < n && !lost; ++i) {
          if (i == member_index)
            continue;
          IoOutcome o = read_data_block(i, s, rest[ri], floor);
          stripe_end = std::max(stripe_end, o.end);
          if (!o.ok())
            lost = true;
          ++ri;
        }
        Block parity;
        if (!lost) {
          if (auto it = pending_parity_.find(s); it != pending_parity_.end()) {
            parity = it->second;
          } else {
            IoOutcome o = read_parity_block(s, parity, floor);
            stripe_end = std::max(stripe_end, o.end);
            if (!o.ok())
              lost = true;
          }
        }
        if (!lost)
          target = reconstruct(rest, parity, n);
      } else {
        std::vector<Block> data(n);
        for (std::uint32_t i = 0; i < n && !lost; ++i) {
          IoOutcome o = read_data_block(i, s, data[i], floor);
          stripe_end = std::max(stripe_end, o.end);
          if (!o.ok())
            lost = true;
        }
        if (!lost)
          target = compute_parity(data);
      }

      if (lost) {
        rep.stripes_lost.push_back(s);
        suspect_stripes_.insert(s);
      } else {
        std::uint64_t sector = is_data ? sb_.data_area_start + s * spu
                                       : sb_.parity_area_start + (s / geom.m_parity) * spu;
        IoOutcome o = replacement->write_sectors(sector, target, stripe_end);
        stripe_end = std::max(stripe_end, o.end);
        if (!o.ok()) {
          rep.stripes_lost.push_back(s);
          suspect_stripes_.insert(s);
        } else {
          ++rep.stripes_rebuilt;
          if (!is_data)
            pending_parity_.erase(s);
        }
      }
      now_ = std::max(now_, stripe_end);
    }
    if (progress)
      progress(s); // array lock released: callbacks may read the (degraded) array
  }

  std::lock_guard<std::mutex> g(mu_);
  // Swap the replacement into the slot and stamp metadata on it.
  disks_[member_index] = replacement;
  if (!is_data) {
    journal_->replace_disk(pj, replacement);
    IoOutcome o = journal_->format_region(pj, now_);
    now_ = std::max(now_, o.end);
  }
  for (std::uint32_t i = 0; i < member_count(); ++i)
    sb_.members[i].status =
        disks_[i]->state() == DiskState::failed ? MemberStatus::failed : MemberStatus::healthy;
  sb_.generation += 1;
  double send = now_;
  write_superblocks_locked(now_, send);
  now_ = std::max(now_, send);
  return R::value(std::move(rep));
}

// ---------------------------------------------------------------------------
// introspection

ArrayStatus RaidArray::status() const {
  std::lock_guard<std::mutex> g(mu_);
  ArrayStatus st;
  st.mode = mode_locked();
  for (std::uint32_t i = 0; i < member_count(); ++i) {
    DiskState ds = disks_[i]->state();
    st.members.push_back(ds);
    if (ds == DiskState::failed) {
      if (i < sb_.geom.n_data)
        st.failed_data.push_back(i);
      else
        st.failed_parity.push_back(i - sb_.geom.n_data);
    }
  }
  return st;
}

EngineCounters RaidArray::counters() const {
  std::lock_guard<std::mutex> g(mu_);
  return counters_;
}

std::uint64_t RaidArray::pending_parity_blocks() const {
  std::lock_guard<std::mutex> g(mu_);
  return pending_parity_.size();
}

double RaidArray::now() const {
  std::lock_guard<std::mutex> g(mu_);
  return now_;
}

void RaidArray::advance_clock(double t) {
  std::lock_guard<std::mutex> g(mu_);
  now_ = std::max(now_, t);
}

void RaidArray::set_writeback(bool on) {
  std::lock_guard<std::mutex> g(mu_);
  opts_.writeback_reconstructed = on;
}

bool RaidArray::writeback_enabled() const {
  std::lock_guard<std::mutex> g(mu_);
  return opts_.writeback_reconstructed;
}

void RaidArray::set_strict_redundancy_lost(bool on) {
  std::lock_guard<std::mutex> g(mu_);
  opts_.strict_redundancy_lost = on;
}

} // namespace raid0e
