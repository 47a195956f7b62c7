// workload.hpp - deterministic benchmark workloads over the simulated clock.
//
// The runner drives the engine at a configurable queue depth: request k is
// issued when request k-queue_depth completes, so concurrency is modeled
// purely through issue-time floors.  Everything is single-threaded and
// deterministic: the same spec, seed and fault table produce bit-identical
// metrics.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "raid0e/engine.hpp"

namespace raid0e {

enum class WorkloadPattern {
  sequential_read,
  sequential_write_fullstripe,
  sequential_write_unaligned, // partial-stripe writes, one block at a time
  random_read,
  random_write,
};

// Throws std::invalid_argument for unknown names.
WorkloadPattern parse_workload_pattern(const std::string& name);
const char* workload_pattern_name(WorkloadPattern p);

struct WorkloadSpec {
  WorkloadPattern pattern = WorkloadPattern::sequential_read;
  std::uint64_t io_size = 0;     // bytes per request; 0 picks the pattern default
  std::uint64_t total_bytes = 64ull << 20;
  std::uint32_t queue_depth = 1;
  std::uint64_t seed = 1;
  // Optional shadow image of the volume; read patterns verify against it.
  const std::vector<std::uint8_t>* shadow = nullptr;
};

struct LatencyStats {
  double mean = 0, p50 = 0, p95 = 0, max = 0;
};

// Histogram bucket upper bounds in milliseconds; the last bucket is open.
inline constexpr std::array<double, 7> kLatencyBucketMs = {1, 2, 4, 8, 16, 32, 64};

struct IoMetrics {
  std::uint32_t n_data = 0, m_parity = 0;
  std::uint64_t ops = 0;
  std::uint64_t bytes = 0; // user payload moved
  std::uint64_t errors = 0;
  std::uint64_t recovered_blocks = 0;
  std::uint64_t verify_mismatches = 0;
  double elapsed = 0;    // simulated seconds, first issue to last completion
  double throughput = 0; // bytes / elapsed (exact: throughput * elapsed == bytes)
  LatencyStats latency;
  std::array<std::uint64_t, 8> latency_histogram{};
  std::vector<DiskCounters> per_disk; // deltas over the run, member order
  // Domain split, summed from per_disk.
  std::uint64_t data_read_ops = 0, data_read_bytes = 0;
  std::uint64_t data_write_ops = 0, data_write_bytes = 0;
  std::uint64_t parity_read_ops = 0, parity_read_bytes = 0;
  std::uint64_t parity_write_ops = 0, parity_write_bytes = 0;
  EngineCounters engine; // delta over the run
};

// Runs the workload against an open array.  Recoverable faults are absorbed
// into the error/recovery counters; the run itself only throws on contract
// violations (bad spec) or simulated power loss.
IoMetrics run_workload(RaidArray& arr, const WorkloadSpec& spec);

// Reads one block and reports its latency against a same-disk healthy
// baseline (the next stripe's block on the same member).  Both measured reads
// are position-normalized so each pays exactly one seek; write-back is
// disabled for the duration so repeated probes see the same fault.
// Ratio 1.0 means the block needed no recovery.
double degraded_latency_probe(RaidArray& arr, std::uint64_t stripe, std::uint32_t data_index);

// Human-readable table and machine-readable key=value forms.
std::string metrics_report(const IoMetrics& m);
std::string metrics_kv(const IoMetrics& m);

// Deterministic payload bytes: position-addressed so any extent can be
// verified independently.  Byte at volume offset `off` for a given seed.
inline std::uint8_t pattern_byte(std::uint64_t seed, std::uint64_t off) {
  std::uint64_t x = (seed + 0x9e3779b97f4a7c15ull) * (off + 0x100000001b3ull);
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  return std::uint8_t(x >> 56);
}
void fill_pattern(std::uint64_t seed, std::uint64_t byte_off, std::span<std::uint8_t> out);

} // namespace raid0e
