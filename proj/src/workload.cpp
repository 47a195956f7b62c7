#include "raid0e/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <random>
#include <sstream>
#include <stdexcept>

namespace raid0e {

WorkloadPattern parse_workload_pattern(const std::string& name) {
  if (name == "sequential-read") return WorkloadPattern::sequential_read;
  if (name == "sequential-write-fullstripe") return WorkloadPattern::sequential_write_fullstripe;
  if (name == "sequential-write-unaligned") return WorkloadPattern::sequential_write_unaligned;
  if (name == "random-read") return WorkloadPattern::random_read;
  if (name == "random-write") return WorkloadPattern::random_write;
  throw std::invalid_argument("unknown workload '" + name + "'");
}

const char* workload_pattern_name(WorkloadPattern p) {
  switch (p) {
  case WorkloadPattern::sequential_read: return "sequential-read";
  case WorkloadPattern::sequential_write_fullstripe: return "sequential-write-fullstripe";
  case WorkloadPattern::sequential_write_unaligned: return "sequential-write-unaligned";
  case WorkloadPattern::random_read: return "random-read";
  case WorkloadPattern::random_write: return "random-write";
  }
  return "?";
}

void fill_pattern(std::uint64_t seed, std::uint64_t byte_off, std::span<std::uint8_t> out) {
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = pattern_byte(seed, byte_off + i);
}

IoMetrics run_workload(RaidArray& arr, const WorkloadSpec& spec) {
  const ArrayGeometry& geom = arr.geometry();
  const std::uint64_t stripe_bytes = std::uint64_t(geom.n_data) * geom.stripe_unit;

  std::uint64_t io = spec.io_size;
  if (io == 0) {
    // Pattern defaults: stripe-sized sequential requests, block-sized
    // unaligned and random requests.
    io = (spec.pattern == WorkloadPattern::sequential_read ||
          spec.pattern == WorkloadPattern::sequential_write_fullstripe)
             ? stripe_bytes
             : geom.stripe_unit;
  }
  if (io == 0 || io % geom.sector_size != 0)
    throw std::invalid_argument("workload: io_size must be a positive sector multiple");
  if (spec.pattern == WorkloadPattern::sequential_write_fullstripe && io % stripe_bytes != 0)
    throw std::invalid_argument("workload: full-stripe writes need io_size in whole stripes");
  if (spec.pattern == WorkloadPattern::sequential_write_unaligned && io >= stripe_bytes)
    throw std::invalid_argument("workload: unaligned writes must stay under one stripe");
  if (spec.queue_depth == 0)
    throw std::invalid_argument("workload: queue depth must be >= 1");
  if (spec.total_bytes == 0)
    throw std::invalid_argument("workload: total_bytes must be positive");
  if (io > geom.volume_bytes())
    throw std::invalid_argument("workload: io_size exceeds the volume");
  if (spec.shadow && spec.shadow->size() != geom.volume_bytes())
    throw std::invalid_argument("workload: shadow image size mismatch");

  const std::uint64_t io_sectors = io / geom.sector_size;
  const std::uint64_t ops = (spec.total_bytes + io - 1) / io;
  const std::uint64_t slots = geom.volume_bytes() / io; // aligned positions
  const bool is_read = spec.pattern == WorkloadPattern::sequential_read ||
                       spec.pattern == WorkloadPattern::random_read;

  std::mt19937_64 rng(spec.seed);
  IoMetrics m;
  m.n_data = geom.n_data;
  m.m_parity = geom.m_parity;

  std::vector<DiskCounters> before(arr.member_count());
  for (std::uint32_t d = 0; d < arr.member_count(); ++d)
    before[d] = arr.member(d)->counters();
  EngineCounters ebefore = arr.counters();

  const double t0 = arr.now();
  double last_end = t0;
  std::deque<double> completions;
  std::vector<double> lats;
  lats.reserve(ops);
  std::vector<std::uint8_t> buf(io);

  for (std::uint64_t k = 0; k < ops; ++k) {
    std::uint64_t slot;
    switch (spec.pattern) {
    case WorkloadPattern::sequential_read:
    case WorkloadPattern::sequential_write_fullstripe:
    case WorkloadPattern::sequential_write_unaligned:
      slot = k % slots;
      break;
    default:
      slot = rng() % slots;
    }
    const std::uint64_t lba = slot * io_sectors;
    const std::uint64_t byte_off = lba * geom.sector_size;

    double issue = t0;
    if (completions.size() >= spec.queue_depth) {
      issue = completions.front();
      completions.pop_front();
    }

    double end;
    if (is_read) {
      ReadOutcome o = arr.read_at(issue, lba, buf);
      end = o.end;
      m.recovered_blocks += o.recovered_blocks;
      if (!o.status.is_ok())
        ++m.errors;
      else if (spec.shadow &&
               std::memcmp(buf.data(), spec.shadow->data() + byte_off, buf.size()) != 0)
        ++m.verify_mismatches;
    } else {
      fill_pattern(spec.seed, byte_off, buf);
      WriteOutcome o = arr.write_at(issue, lba, buf);
      end = o.end;
      if (!o.status.is_ok())
        ++m.errors;
    }
    completions.push_back(end);
    last_end = std::max(last_end, end);
    lats.push_back(end - issue);
    ++m.ops;
    m.bytes += io;
  }

  m.elapsed = last_end - t0;
  m.throughput = m.elapsed > 0 ? double(m.bytes) / m.elapsed : 0.0;

  if (!lats.empty()) {
    std::vector<double> sorted = lats;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0;
    for (double v : lats) {
      sum += v;
      std::size_t b = 0;
      while (b < kLatencyBucketMs.size() && v * 1e3 >= kLatencyBucketMs[b])
        ++b;
      ++m.latency_histogram[b];
    }
    m.latency.mean = sum / double(lats.size());
    m.latency.p50 = sorted[(sorted.size() - 1) / 2];
    m.latency.p95 = sorted[std::min(sorted.size() - 1, (sorted.size() * 95 + 99) / 100 - 1)];
    m.latency.max = sorted.back();
  }

  m.per_disk.resize(arr.member_count());
  for (std::uint32_t d = 0; d < arr.member_count(); ++d) {
    DiskCounters now = arr.member(d)->counters();
    DiskCounters& delta = m.per_disk[d];
    delta.read_ops = now.read_ops - before[d].read_ops;
    delta.read_bytes = now.read_bytes - before[d].read_bytes;
    delta.write_ops = now.write_ops - before[d].write_ops;
    delta.write_bytes = now.write_bytes - before[d].write_bytes;
    delta.media_errors = now.media_errors - before[d].media_errors;
    delta.write_errors = now.write_errors - before[d].write_errors;
    if (d < geom.n_data) {
      m.data_read_ops += delta.read_ops;
      m.data_read_bytes += delta.read_bytes;
      m.data_write_ops += delta.write_ops;
      m.data_write_bytes += delta.write_bytes;
    } else {
      m.parity_read_ops += delta.read_ops;
      m.parity_read_bytes += delta.read_bytes;
      m.parity_write_ops += delta.write_ops;
      m.parity_write_bytes += delta.write_bytes;
    }
  }

  EngineCounters eafter = arr.counters();
  m.engine.recoveries = eafter.recoveries - ebefore.recoveries;
  m.engine.survivor_reads = eafter.survivor_reads - ebefore.survivor_reads;
  m.engine.parity_reads = eafter.parity_reads - ebefore.parity_reads;
  m.engine.writebacks = eafter.writebacks - ebefore.writebacks;
  m.engine.writeback_failures = eafter.writeback_failures - ebefore.writeback_failures;
  m.engine.unrecoverable_reads = eafter.unrecoverable_reads - ebefore.unrecoverable_reads;
  m.engine.full_stripe_writes = eafter.full_stripe_writes - ebefore.full_stripe_writes;
  m.engine.rmw_writes = eafter.rmw_writes - ebefore.rmw_writes;
  m.engine.rmw_member_reads = eafter.rmw_member_reads - ebefore.rmw_member_reads;
  m.engine.rmw_member_writes = eafter.rmw_member_writes - ebefore.rmw_member_writes;
  m.engine.journal_appends = eafter.journal_appends - ebefore.journal_appends;
  m.engine.parity_materialized = eafter.parity_materialized - ebefore.parity_materialized;
  return m;
}

double degraded_latency_probe(RaidArray& arr, std::uint64_t stripe, std::uint32_t data_index) {
  const ArrayGeometry& geom = arr.geometry();
  if (stripe >= geom.total_stripes())
    throw std::out_of_range("probe: stripe out of range");
  if (data_index >= geom.n_data)
    throw std::out_of_range("probe: data index out of range");
  if (geom.total_stripes() < 2)
    throw std::invalid_argument("probe: need at least two stripes for a baseline");

  const std::uint64_t spu = geom.sectors_per_unit();
  const std::uint64_t baseline = (stripe + 1) % geom.total_stripes();
  auto block_lba = [&](std::uint64_t s) {
    return (s * geom.n_data + data_index) * spu;
  };

  const bool saved_writeback = arr.writeback_enabled();
  arr.set_writeback(false);
  std::vector<std::uint8_t> buf(geom.stripe_unit);

  // Each measured read is preceded by an unmeasured read of the same block,
  // parking every involved head just past its target.  The measurement then
  // always pays exactly one seek, whatever I/O ran before the probe.
  (void)arr.read_at(arr.now(), block_lba(baseline), buf);
  double issue = arr.now();
  ReadOutcome healthy = arr.read_at(issue, block_lba(baseline), buf);
  double healthy_lat = healthy.end - issue;

  (void)arr.read_at(arr.now(), block_lba(stripe), buf);
  issue = arr.now();
  ReadOutcome probe = arr.read_at(issue, block_lba(stripe), buf);
  double probe_lat = probe.end - issue;

  arr.set_writeback(saved_writeback);
  if (healthy_lat <= 0)
    throw std::runtime_error("probe: degenerate baseline latency");
  return probe_lat / healthy_lat;
}

namespace {

std::string fmt_rate(double bps) {
  char tmp[64];
  std::snprintf(tmp, sizeof tmp, "%.2f MB/s", bps / 1e6);
  return tmp;
}

std::string fmt_ms(double s) {
  char tmp[64];
  std::snprintf(tmp, sizeof tmp, "%.3f ms", s * 1e3);
  return tmp;
}

} // namespace

std::string metrics_report(const IoMetrics& m) {
  std::ostringstream os;
  os << "ops          " << m.ops << "\n";
  os << "bytes        " << m.bytes << "\n";
  os << "elapsed      " << m.elapsed << " s (simulated)\n";
  os << "throughput   " << fmt_rate(m.throughput) << "\n";
  os << "latency      mean " << fmt_ms(m.latency.mean) << "  p50 " << fmt_ms(m.latency.p50)
     << "  p95 " << fmt_ms(m.latency.p95) << "  max " << fmt_ms(m.latency.max) << "\n";
  os << "errors       " << m.errors << "   recovered-blocks " << m.recovered_blocks
     << "   verify-mismatches " << m.verify_mismatches << "\n";
  os << "recoveries   " << m.engine.recoveries << " (survivor reads " << m.engine.survivor_reads
     << ", parity reads " << m.engine.parity_reads << ")\n";
  os << "domain split read  data " << m.data_read_bytes << " B / parity " << m.parity_read_bytes
     << " B\n";
  os << "domain split write data " << m.data_write_bytes << " B / parity " << m.parity_write_bytes
     << " B\n";
  os << "latency histogram (ms buckets):\n";
  for (std::size_t b = 0; b < m.latency_histogram.size(); ++b) {
    if (b < kLatencyBucketMs.size())
      os << "  < " << kLatencyBucketMs[b];
    else
      os << "  >= " << kLatencyBucketMs.back();
    os << "  " << m.latency_histogram[b] << "\n";
  }
  os << "per-member (reads ops/bytes, writes ops/bytes, media-err, write-err):\n";
  for (std::size_t d = 0; d < m.per_disk.size(); ++d) {
    const DiskCounters& c = m.per_disk[d];
    os << "  " << (d < m.n_data ? "d" : "p") << (d < m.n_data ? d : d - m.n_data) << "  r "
       << c.read_ops << "/" << c.read_bytes << "  w " << c.write_ops << "/" << c.write_bytes
       << "  me " << c.media_errors << "  we " << c.write_errors << "\n";
  }
  return os.str();
}

std::string metrics_kv(const IoMetrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << "ops=" << m.ops << "\n";
  os << "bytes=" << m.bytes << "\n";
  os << "errors=" << m.errors << "\n";
  os << "recovered_blocks=" << m.recovered_blocks << "\n";
  os << "verify_mismatches=" << m.verify_mismatches << "\n";
  os << "elapsed=" << m.elapsed << "\n";
  os << "throughput=" << m.throughput << "\n";
  os << "latency_mean=" << m.latency.mean << "\n";
  os << "latency_p50=" << m.latency.p50 << "\n";
  os << "latency_p95=" << m.latency.p95 << "\n";
  os << "latency_max=" << m.latency.max << "\n";
  for (std::size_t b = 0; b < m.latency_histogram.size(); ++b)
    os << "latency_bucket_" << b << "=" << m.latency_histogram[b] << "\n";
  os << "data_read_ops=" << m.data_read_ops << "\n";
  os << "data_read_bytes=" << m.data_read_bytes << "\n";
  os << "data_write_ops=" << m.data_write_ops << "\n";
  os << "data_write_bytes=" << m.data_write_bytes << "\n";
  os << "parity_read_ops=" << m.parity_read_ops << "\n";
  os << "parity_read_bytes=" << m.parity_read_bytes << "\n";
  os << "parity_write_ops=" << m.parity_write_ops << "\n";
  os << "parity_write_bytes=" << m.parity_write_bytes << "\n";
  os << "recoveries=" << m.engine.recoveries << "\n";
  os << "survivor_reads=" << m.engine.survivor_reads << "\n";
  os << "parity_reads=" << m.engine.parity_reads << "\n";
  os << "journal_appends=" << m.engine.journal_appends << "\n";
  for (std::size_t d = 0; d < m.per_disk.size(); ++d) {
    const DiskCounters& c = m.per_disk[d];
    std::string tag = (d < m.n_data ? "d" : "p") + std::to_string(d < m.n_data ? d : d - m.n_data);
    os << "member_" << tag << "_read_ops=" << c.read_ops << "\n";
    os << "member_" << tag << "_read_bytes=" << c.read_bytes << "\n";
    os << "member_" << tag << "_write_ops=" << c.write_ops << "\n";
    os << "member_" << tag << "_write_bytes=" << c.write_bytes << "\n";
  }
  return os.str();
}

} // namespace raid0e
