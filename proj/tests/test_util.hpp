// test_util.hpp - shared scaffolding: temp directories and array fixtures.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "raid0e/engine.hpp"

namespace testutil {

// mkdtemp-backed directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "raid0e.XXXXXX").string();
    if (!mkdtemp(tmpl.data()))
      throw std::runtime_error("mkdtemp failed");
    path = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

struct ArrayFixture {
  TempDir dir;
  std::vector<std::string> paths; // member order: data rows then parity rows
  std::uint64_t disk_sectors = 0;
  std::uint32_t sector_size = 512;
  raid0e::LatencyModel latency;
  raid0e::ArrayOptions opts;
  std::shared_ptr<raid0e::RaidArray> arr;

  ArrayFixture(std::uint32_t n, std::uint32_t m, std::uint32_t stripe_unit,
               std::uint64_t sectors_per_disk, raid0e::ArrayOptions o = {},
               raid0e::LatencyModel lat = {})
      : disk_sectors(sectors_per_disk), latency(lat), opts(o) {
    raid0e::ArrayGeometry geom;
    geom.n_data = n;
    geom.m_parity = m;
    geom.stripe_unit = stripe_unit;
    geom.sector_size = sector_size;
    geom.disk_capacity = sectors_per_disk;
    for (std::uint32_t i = 0; i < n + m; ++i) {
      std::string name = i < n ? "d" + std::to_string(i) : "p" + std::to_string(i - n);
      paths.push_back((dir.path / name).string());
    }
    arr = raid0e::RaidArray::create(make_disks(true, nullptr), geom, opts);
  }

  std::vector<std::shared_ptr<raid0e::VirtualDisk>> make_disks(
      bool create, std::shared_ptr<raid0e::PowerRail> rail) {
    std::vector<std::shared_ptr<raid0e::VirtualDisk>> disks;
    for (const std::string& p : paths) {
      raid0e::VDiskConfig c;
      c.path = p;
      c.capacity_sectors = disk_sectors;
      c.sector_size = sector_size;
      c.latency = latency;
      c.create = create;
      disks.push_back(std::make_shared<raid0e::VirtualDisk>(c, rail));
    }
    return disks;
  }

  // Clean shutdown and reassemble.
  void reopen() {
    arr->close();
    arr.reset();
    arr = raid0e::RaidArray::open(make_disks(false, nullptr), opts);
  }

  // Reassemble without closing first, as after a crash. The old object is
  // dropped; whatever reached the backing files is what the new open sees.
  void reopen_dirty(std::shared_ptr<raid0e::PowerRail> rail = nullptr) {
    arr.reset();
    arr = raid0e::RaidArray::open(make_disks(false, rail), opts);
  }
};

// Deterministic byte for (seed, volume byte offset); matches the workload
// generator so engine-level and harness-level checks agree.
inline std::uint8_t pat(std::uint64_t seed, std::uint64_t off) {
  std::uint64_t x = (seed + 0x9e3779b97f4a7c15ull) * (off + 0x100000001b3ull);
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  return std::uint8_t(x >> 56);
}

inline std::vector<std::uint8_t> pat_buf(std::uint64_t seed, std::uint64_t byte_off,
                                         std::size_t len) {
  std::vector<std::uint8_t> b(len);
  for (std::size_t i = 0; i < len; ++i)
    b[i] = pat(seed, byte_off + i);
  return b;
}

} // namespace testutil
