// raid0e_main.cpp - operator CLI for the array engine.
//
// An array is a directory of backing files named after the member roles
// (d0..dN-1, p0..pM-1) plus a .lock file for the advisory lock. Every
// invocation takes the lock exclusively and fails fast if another process
// holds it. Exit codes: 0 success, 1 usage/config error, 2 data-loss-class
// error (unrecoverable read, failed scrub, lost stripes).
//
// Fault injection is per-process: --faults loads a fault table into the
// opened disks for this invocation only; nothing is persisted.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <sys/file.h>
#include <unistd.h>

#include "CLI11.hpp"
#include "raid0e/engine.hpp"
#include "raid0e/scenario.hpp"
#include "raid0e/workload.hpp"

namespace fs = std::filesystem;
using namespace raid0e;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDataLoss = 2;

int exit_code_for(const IoError& e) {
  switch (e.kind) {
    case ErrKind::bad_range:
    case ErrKind::config:
    case ErrKind::state:
      return kExitUsage;
    default:
      return kExitDataLoss;
  }
}

// Exclusive advisory lock on <dir>/.lock, held for the process lifetime.
class DirLock {
public:
  explicit DirLock(const fs::path& dir) {
    fs::path p = dir / ".lock";
    fd_ = ::open(p.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0)
      throw std::runtime_error("cannot open lock file " + p.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw std::runtime_error("array directory " + dir.string() +
                               " is locked by another process");
    }
  }
  ~DirLock() {
    if (fd_ >= 0)
      ::close(fd_); // releases the flock
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

private:
  int fd_ = -1;
};

Result<Superblock> read_superblock_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f)
    return Result<Superblock>::error(ErrKind::config, "cannot open " + p.string());
  std::vector<std::uint8_t> buf(kSuperblockBytes);
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (std::size_t(f.gcount()) != buf.size())
    return Result<Superblock>::error(ErrKind::config, p.string() + " is too small");
  return Superblock::decode(buf.data(), buf.size());
}

struct OpenedArray {
  std::shared_ptr<RaidArray> arr;
  Superblock sb; // reference copy used for member discovery
};

// Assembles the array from the directory: any decodable superblock names the
// members; each member file is opened at its recorded size. A dirty journal
// is replayed before handing the array out unless the caller opts out.
OpenedArray open_array(const fs::path& dir, bool auto_replay, const std::string& faults_file) {
  if (!fs::is_directory(dir))
    throw std::runtime_error(dir.string() + " is not a directory");

  std::optional<Superblock> best;
  for (const auto& ent : fs::directory_iterator(dir)) {
    if (!ent.is_regular_file())
      continue;
    const std::string name = ent.path().filename().string();
    if (name == ".lock" || name.ends_with(".new"))
      continue;
    auto sb = read_superblock_file(ent.path());
    if (sb && (!best || sb.value().generation > best->generation))
      best = sb.value();
  }
  if (!best)
    throw std::runtime_error("no valid superblock found in " + dir.string());

  std::vector<std::shared_ptr<VirtualDisk>> disks;
  for (const MemberRole& m : best->members) {
    fs::path p = dir / m.name;
    if (!fs::exists(p))
      throw std::runtime_error("member file " + p.string() + " is missing");
    std::uintmax_t bytes = fs::file_size(p);
    if (bytes % best->geom.sector_size != 0)
      throw std::runtime_error("member file " + p.string() + " is not sector aligned");
    VDiskConfig c;
    c.path = p.string();
    c.capacity_sectors = bytes / best->geom.sector_size;
    c.sector_size = best->geom.sector_size;
    c.create = false;
    disks.push_back(std::make_shared<VirtualDisk>(c));
  }

  OpenedArray oa;
  oa.arr = RaidArray::open(disks);
  oa.sb = oa.arr->superblock();

  if (oa.arr->journal_dirty() && auto_replay) {
    ReplayReport r = oa.arr->journal_replay();
    std::cerr << "note: journal was dirty; replayed " << r.records_applied << " record(s), "
              << r.stripes_repaired << " stripe(s) repaired\n";
  }

  if (!faults_file.empty()) {
    auto specs = parse_fault_file(faults_file);
    for (auto& [disk, spec] : specs) {
      if (disk >= oa.arr->member_count())
        throw std::runtime_error("fault file names disk " + std::to_string(disk) +
                                 " but the array has " +
                                 std::to_string(oa.arr->member_count()) + " members");
      oa.arr->member(disk)->inject_fault(spec);
    }
  }
  return oa;
}

std::string human_bytes(std::uint64_t b) {
  char buf[64];
  if (b >= (1ull << 30))
    std::snprintf(buf, sizeof buf, "%.1f GiB", double(b) / double(1ull << 30));
  else if (b >= (1ull << 20))
    std::snprintf(buf, sizeof buf, "%.1f MiB", double(b) / double(1ull << 20));
  else if (b >= (1ull << 10))
    std::snprintf(buf, sizeof buf, "%.1f KiB", double(b) / double(1ull << 10));
  else
    std::snprintf(buf, sizeof buf, "%llu B", static_cast<unsigned long long>(b));
  return buf;
}

void print_geometry(const Superblock& sb, bool porcelain) {
  const ArrayGeometry& g = sb.geom;
  char eff[32];
  std::snprintf(eff, sizeof eff, "%.1f%%", capacity_efficiency(g) * 100.0);
  if (porcelain) {
    std::cout << "n_data=" << g.n_data << "\n"
              << "m_parity=" << g.m_parity << "\n"
              << "stripe_unit=" << g.stripe_unit << "\n"
              << "sector_size=" << g.sector_size << "\n"
              << "disk_capacity_sectors=" << g.disk_capacity << "\n"
              << "total_stripes=" << g.total_stripes() << "\n"
              << "volume_sectors=" << g.volume_sectors() << "\n"
              << "efficiency=" << eff << "\n"
              << "generation=" << sb.generation << "\n";
    return;
  }
  std::cout << "geometry: " << g.n_data << " data + " << g.m_parity << " parity, stripe unit "
            << g.stripe_unit << " B, sector " << g.sector_size << " B\n";
  std::cout << "volume: " << g.volume_sectors() << " sectors (" << human_bytes(g.volume_bytes())
            << "), " << g.total_stripes() << " stripes\n";
  std::cout << "capacity efficiency " << eff << "\n";
}

int report_error(const Status& st) {
  std::cerr << "error: " << st.to_string() << "\n";
  return st.is_ok() ? kExitOk : exit_code_for(st.error());
}

// ---------------------------------------------------------------------------
// subcommands

struct CommonFlags {
  std::string dir;
  std::string faults;
  bool porcelain = false;
};

int cmd_create(const CommonFlags& cf, std::uint32_t n, std::uint32_t m, std::uint32_t stripe_unit,
               std::uint64_t disk_sectors, std::uint32_t sector_size,
               std::uint64_t journal_bytes) {
  fs::create_directories(cf.dir);
  DirLock lock(fs::path{cf.dir});

  ArrayGeometry geom;
  geom.n_data = n;
  geom.m_parity = m;
  geom.stripe_unit = stripe_unit;
  geom.sector_size = sector_size;
  geom.disk_capacity = disk_sectors; // engine derives the usable payload size

  std::vector<std::shared_ptr<VirtualDisk>> disks;
  for (std::uint32_t i = 0; i < n + m; ++i) {
    std::string name = (i < n ? "d" + std::to_string(i) : "p" + std::to_string(i - n));
    VDiskConfig c;
    c.path = (fs::path(cf.dir) / name).string();
    c.capacity_sectors = disk_sectors;
    c.sector_size = sector_size;
    c.create = true;
    disks.push_back(std::make_shared<VirtualDisk>(c));
  }

  ArrayOptions opts;
  opts.journal_bytes = journal_bytes;
  auto arr = RaidArray::create(std::move(disks), geom, opts);
  Superblock sb = arr->superblock();
  arr->close();

  if (!cf.porcelain)
    std::cout << "created array in " << cf.dir << "\n";
  print_geometry(sb, cf.porcelain);
  return kExitOk;
}

int cmd_info(const CommonFlags& cf) {
  DirLock lock(fs::path{cf.dir});
  OpenedArray oa = open_array(cf.dir, /*auto_replay=*/false, cf.faults);
  print_geometry(oa.sb, cf.porcelain);
  ArrayStatus st = oa.arr->status();
  if (cf.porcelain) {
    std::cout << "state=" << array_mode_name(st.mode) << "\n";
    std::cout << "journal_dirty=" << (oa.arr->journal_dirty() ? 1 : 0) << "\n";
    for (std::size_t i = 0; i < oa.sb.members.size(); ++i)
      std::cout << "member_" << oa.sb.members[i].name << "="
                << (st.members[i] == DiskState::healthy ? "healthy" : "failed") << "\n";
  } else {
    std::cout << "state: " << array_mode_name(st.mode) << "\n";
    std::cout << "journal: " << (oa.arr->journal_dirty() ? "dirty (run replay)" : "clean")
              << "\n";
    std::cout << "members:";
    for (std::size_t i = 0; i < oa.sb.members.size(); ++i)
      std::cout << " " << oa.sb.members[i].name
                << (st.members[i] == DiskState::healthy ? "" : "[failed]");
    std::cout << "\n";
  }
  return kExitOk;
}

int cmd_io(const CommonFlags& cf, const std::string& op, std::uint64_t lba, std::uint64_t count,
           const std::string& input, const std::string& output, std::uint64_t fill_seed,
           bool have_seed) {
  DirLock lock(fs::path{cf.dir});
  OpenedArray oa = open_array(cf.dir, /*auto_replay=*/true, cf.faults);
  const std::uint32_t ssz = oa.sb.geom.sector_size;
  if (count == 0) {
    std::cerr << "error: --count must be positive\n";
    return kExitUsage;
  }
  std::vector<std::uint8_t> buf(count * ssz);

  if (op == "read") {
    ReadOutcome r = oa.arr->read(lba, buf);
    if (!r.status.is_ok())
      return report_error(r.status);
    // One warning per distinct stripe that needed reconstruction.
    std::vector<std::uint64_t> st = r.recovered_stripes;
    std::sort(st.begin(), st.end());
    st.erase(std::unique(st.begin(), st.end()), st.end());
    for (std::uint64_t s : st)
      std::cerr << "warning: recovered stripe " << s << "\n";
    if (!output.empty()) {
      std::ofstream f(output, std::ios::binary);
      if (!f) {
        std::cerr << "error: cannot write " << output << "\n";
        return kExitUsage;
      }
      f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    } else {
      // Hex dump, 16 bytes per row.
      for (std::size_t i = 0; i < buf.size(); i += 16) {
        std::printf("%08llx ", static_cast<unsigned long long>(lba * ssz + i));
        for (std::size_t j = i; j < std::min(i + 16, buf.size()); ++j)
          std::printf(" %02x", buf[j]);
        std::printf("\n");
      }
    }
    oa.arr->close();
    return kExitOk;
  }

  // write
  if (!input.empty()) {
    std::ifstream f(input, std::ios::binary);
    if (!f) {
      std::cerr << "error: cannot read " << input << "\n";
      return kExitUsage;
    }
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (std::size_t(f.gcount()) != buf.size()) {
      std::cerr << "error: " << input << " holds fewer than " << buf.size() << " bytes\n";
      return kExitUsage;
    }
  } else if (have_seed) {
    fill_pattern(fill_seed, lba * ssz, buf);
  } else {
    std::cerr << "error: write needs --input FILE or --fill-seed N\n";
    return kExitUsage;
  }
  WriteOutcome w = oa.arr->write(lba, buf);
  if (!w.status.is_ok())
    return report_error(w.status);
  oa.arr->close();
  if (!cf.porcelain)
    std::cout << "wrote " << buf.size() << " bytes at lba " << lba << "\n";
  return kExitOk;
}

int cmd_bench(const CommonFlags& cf, const std::string& workload, std::uint64_t io_size,
              std::uint64_t total, std::uint32_t qd, std::uint64_t seed) {
  DirLock lock(fs::path{cf.dir});
  OpenedArray oa = open_array(cf.dir, /*auto_replay=*/true, cf.faults);
  WorkloadSpec spec;
  spec.pattern = parse_workload_pattern(workload);
  spec.io_size = io_size;
  spec.total_bytes = total;
  spec.queue_depth = qd;
  spec.seed = seed;
  IoMetrics m = run_workload(*oa.arr, spec);
  std::cout << (cf.porcelain ? metrics_kv(m) : metrics_report(m));
  oa.arr->close();
  return kExitOk;
}

int cmd_fault(const CommonFlags& cf, const std::string& file) {
  DirLock lock(fs::path{cf.dir});
  OpenedArray oa = open_array(cf.dir, /*auto_replay=*/false, "");
  auto specs = parse_fault_file(file);
  for (auto& [disk, spec] : specs) {
    if (disk >= oa.arr->member_count()) {
      std::cerr << "error: disk index " << disk << " out of range (array has "
                << oa.arr->member_count() << " members)\n";
      return kExitUsage;
    }
    // Validates the scope against the member capacity.
    oa.arr->member(disk)->inject_fault(spec);
    static const char* kind_names[] = {"unreadable", "transient", "silent-corrupt", "write-fail"};
    std::cout << "disk " << disk << " (" << oa.sb.members[disk].name << ") "
              << kind_names[int(spec.kind)] << " start=" << spec.start_sector
              << " count=" << spec.count << "\n";
  }
  std::cout << specs.size() << " fault(s) validated; pass --faults " << file
            << " to io/bench/scrub/scenario to apply them for a run\n";
  return kExitOk;
}

int cmd_scrub(const CommonFlags& cf) {
  DirLock lock(fs::path{cf.dir});
  OpenedArray oa = open_array(cf.dir, /*auto_replay=*/true, cf.faults);
  ScrubReport r = oa.arr->scrub();
  if (cf.porcelain) {
    std::cout << "stripes_checked=" << r.stripes_checked << "\n"
              << "inconsistent=" << r.inconsistent << "\n"
              << "healed=" << r.healed << "\n"
              << "heal_failures=" << r.heal_failures << "\n"
              << "unrecoverable=" << r.unrecoverable << "\n";
  } else {
    std::cout << "scrubbed " << r.stripes_checked << " stripes: " << r.inconsistent
              << " inconsistent stripes, " << r.healed << " healed, " << r.unrecoverable
              << " unrecoverable\n";
    for (std::uint64_t s : r.inconsistent_stripes)
      std::cout << "  inconsistent stripe " << s << "\n";
  }
  oa.arr->close();
  return r.unrecoverable > 0 ? kExitDataLoss : kExitOk;
}

int cmd_rebuild(const CommonFlags& cf, std::uint32_t member) {
  DirLock lock(fs::path{cf.dir});
  OpenedArray oa = open_array(cf.dir, /*auto_replay=*/true, cf.faults);
  if (member >= oa.arr->member_count()) {
    std::cerr << "error: member index out of range\n";
    return kExitUsage;
  }
  fs::path orig = fs::path(cf.dir) / oa.sb.members[member].name;
  fs::path fresh_path = orig;
  fresh_path += ".new";

  VDiskConfig c;
  c.path = fresh_path.string();
  c.capacity_sectors = oa.arr->member(member)->capacity_sectors();
  c.sector_size = oa.sb.geom.sector_size;
  c.create = true;
  auto fresh = std::make_shared<VirtualDisk>(c);

  const std::uint64_t total = oa.sb.geom.total_stripes();
  std::uint64_t next_mark = total / 10 ? total / 10 : 1;
  auto progress = [&](std::uint64_t stripe) {
    if (!cf.porcelain && stripe + 1 >= next_mark) {
      std::cout << "rebuild: " << (stripe + 1) * 100 / total << "%\n";
      next_mark += total / 10 ? total / 10 : 1;
    }
  };
  auto res = oa.arr->rebuild(member, fresh, progress);
  if (!res)
    return report_error(res.status());

  oa.arr->close(); // stamps superblocks, including the replacement
  fs::rename(fresh_path, orig);

  const RebuildReport& r = res.value();
  ArrayStatus st = oa.arr->status();
  if (cf.porcelain) {
    std::cout << "stripes_rebuilt=" << r.stripes_rebuilt << "\n"
              << "stripes_lost=" << r.stripes_lost.size() << "\n"
              << "state=" << array_mode_name(st.mode) << "\n";
  } else {
    std::cout << "rebuilt " << r.stripes_rebuilt << " stripes onto "
              << oa.sb.members[member].name << ", " << r.stripes_lost.size() << " lost\n";
    std::cout << "final state " << array_mode_name(st.mode) << "\n";
  }
  return r.stripes_lost.empty() ? kExitOk : kExitDataLoss;
}

int cmd_replay(const CommonFlags& cf) {
  DirLock lock(fs::path{cf.dir});
  OpenedArray oa = open_array(cf.dir, /*auto_replay=*/false, cf.faults);
  ReplayReport r = oa.arr->journal_replay();
  if (cf.porcelain) {
    std::cout << "records_applied=" << r.records_applied << "\n"
              << "records_discarded=" << r.records_discarded << "\n"
              << "records_torn=" << r.records_torn << "\n"
              << "stripes_repaired=" << r.stripes_repaired << "\n"
              << "write_errors=" << r.write_errors << "\n";
  } else {
    std::cout << "replayed " << r.records_applied << " record(s), discarded "
              << r.records_discarded << ", " << r.stripes_repaired << " repaired\n";
  }
  oa.arr->close();
  return r.write_errors > 0 ? kExitDataLoss : kExitOk;
}

int cmd_scenario(const CommonFlags& cf, const std::string& file) {
  DirLock lock(fs::path{cf.dir});
  OpenedArray oa = open_array(cf.dir, /*auto_replay=*/false, cf.faults);
  ScenarioReport rep = run_fault_scenario(oa.arr, file);
  std::cout << rep.to_string();
  try {
    oa.arr->close();
  } catch (const power_failure_error&) {
    // Script ended with the rail dead; the reopened-on-demand state is on disk.
  }
  return rep.passed() ? kExitOk : kExitUsage;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"raid0e - striped array with a decoupled XOR parity domain"};
  app.require_subcommand(1);

  CommonFlags cf;
  auto add_common = [&](CLI::App* c, bool with_faults = true) {
    c->add_option("--dir", cf.dir, "array directory")->required();
    c->add_flag("--porcelain", cf.porcelain, "machine-readable key=value output");
    if (with_faults)
      c->add_option("--faults", cf.faults, "fault table to inject for this run");
  };

  // create
  std::uint32_t n = 0, m = 0, stripe_unit = 65536, sector_size = 512;
  std::uint64_t disk_sectors = 131072, journal_bytes = 16ull << 20;
  CLI::App* create = app.add_subcommand("create", "format a new array");
  add_common(create, false);
  create->add_option("--data", n, "number of data disks (N >= 2)")->required();
  create->add_option("--parity", m, "number of parity disks (M >= 1)")->required();
  create->add_option("--stripe-unit", stripe_unit, "stripe unit in bytes")
      ->envname("RAID0E_STRIPE_UNIT")
      ->capture_default_str();
  create->add_option("--disk-size", disk_sectors, "backing file size in sectors")
      ->capture_default_str();
  create->add_option("--sector-size", sector_size, "sector size in bytes")
      ->capture_default_str();
  create->add_option("--journal-bytes", journal_bytes, "journal size per parity disk")
      ->capture_default_str();

  // info
  CLI::App* info = app.add_subcommand("info", "print geometry and state");
  add_common(info, false);

  // io
  std::string op, input, output;
  std::uint64_t lba = 0, count = 1, fill_seed = 0;
  CLI::App* io = app.add_subcommand("io", "read or write volume sectors");
  add_common(io);
  io->add_option("op", op, "read | write")->required()->check(CLI::IsMember({"read", "write"}));
  io->add_option("--lba", lba, "first volume sector")->required();
  io->add_option("--count", count, "sector count")->capture_default_str();
  io->add_option("--input", input, "write: file holding the payload");
  io->add_option("--output", output, "read: file to save the data to");
  CLI::Option* seed_opt = io->add_option("--fill-seed", fill_seed,
                                         "write: fill with a deterministic pattern");

  // bench
  std::string workload;
  std::uint64_t io_size = 0, total = 64ull << 20, bseed = 1;
  std::uint32_t qd = 1;
  CLI::App* bench = app.add_subcommand("bench", "run a benchmark workload");
  add_common(bench);
  bench
      ->add_option("--workload", workload,
                   "sequential-read | sequential-write-fullstripe | "
                   "sequential-write-unaligned | random-read | random-write")
      ->required();
  bench->add_option("--io-size", io_size, "bytes per request (0 = pattern default)")
      ->capture_default_str();
  bench->add_option("--total", total, "total bytes to move")->capture_default_str();
  bench->add_option("--qd", qd, "queue depth")->capture_default_str();
  bench->add_option("--seed", bseed, "RNG seed")->capture_default_str();

  // fault
  std::string fault_file;
  CLI::App* fault = app.add_subcommand("fault", "validate a fault table against the array");
  add_common(fault, false);
  fault->add_option("--file", fault_file, "fault table file")->required();

  // scrub / replay
  CLI::App* scrub = app.add_subcommand("scrub", "verify parity of every stripe");
  add_common(scrub);
  CLI::App* replay = app.add_subcommand("replay", "replay the write journal");
  add_common(replay);

  // rebuild
  std::uint32_t member = 0;
  CLI::App* rebuild = app.add_subcommand("rebuild", "rebuild a failed member onto a fresh file");
  add_common(rebuild);
  rebuild->add_option("--member", member, "member index (data rows first)")->required();

  // scenario
  std::string scenario_file;
  CLI::App* scenario = app.add_subcommand("scenario", "run a fault-scenario script");
  add_common(scenario);
  scenario->add_option("--file", scenario_file, "scenario script")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? kExitUsage : kExitOk;
  }

  try {
    if (create->parsed())
      return cmd_create(cf, n, m, stripe_unit, disk_sectors, sector_size, journal_bytes);
    if (info->parsed())
      return cmd_info(cf);
    if (io->parsed())
      return cmd_io(cf, op, lba, count, input, output, fill_seed, seed_opt->count() > 0);
    if (bench->parsed())
      return cmd_bench(cf, workload, io_size, total, qd, bseed);
    if (fault->parsed())
      return cmd_fault(cf, fault_file);
    if (scrub->parsed())
      return cmd_scrub(cf);
    if (replay->parsed())
      return cmd_replay(cf);
    if (rebuild->parsed())
      return cmd_rebuild(cf, member);
    if (scenario->parsed())
      return cmd_scenario(cf, scenario_file);
  } catch (const power_failure_error&) {
    std::cerr << "error: simulated power failure\n";
    return kExitDataLoss;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
