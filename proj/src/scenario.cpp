#include "raid0e/scenario.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "raid0e/workload.hpp"

namespace raid0e {

namespace {

ErrKind parse_err_kind(const std::string& tok, const std::string& where) {
  for (int k = 0; k <= int(ErrKind::state); ++k)
    if (tok == err_kind_name(ErrKind(k)))
      return ErrKind(k);
  throw std::runtime_error(where + ": unknown error kind '" + tok + "'");
}

ArrayMode parse_mode(const std::string& tok, const std::string& where) {
  for (ArrayMode m : {ArrayMode::healthy, ArrayMode::degraded, ArrayMode::redundancy_lost,
                      ArrayMode::offline})
    if (tok == array_mode_name(m))
      return m;
  throw std::runtime_error(where + ": unknown array state '" + tok + "'");
}

struct Runner {
  std::shared_ptr<RaidArray>& arr;
  ScenarioReport rep;
  // Enough to reassemble the array from its backing files after a crash.
  std::vector<VDiskConfig> member_cfgs;
  std::shared_ptr<PowerRail> rail;
  bool crashed = false;

  // Last-outcome state for expect verbs.
  bool have_read = false, have_write = false;
  ReadOutcome last_read;
  std::vector<std::uint8_t> last_read_buf;
  std::uint64_t last_read_lba = 0;
  WriteOutcome last_write;
  bool have_scrub = false, have_replay = false, have_rebuild = false;
  ScrubReport last_scrub;
  ReplayReport last_replay;
  std::uint64_t last_rebuild_lost = 0;

  explicit Runner(std::shared_ptr<RaidArray>& a) : arr(a) {
    for (std::uint32_t i = 0; i < arr->member_count(); ++i) {
      auto d = arr->member(i);
      VDiskConfig c;
      c.path = d->path();
      c.capacity_sectors = d->capacity_sectors();
      c.sector_size = d->sector_size();
      c.latency = d->latency();
      c.create = false;
      member_cfgs.push_back(c);
    }
  }

  void reassemble() {
    std::vector<std::shared_ptr<VirtualDisk>> disks;
    for (const VDiskConfig& c : member_cfgs)
      disks.push_back(std::make_shared<VirtualDisk>(c));
    arr = RaidArray::open(disks);
    rail.reset();
  }

  // A crash means restart: in-memory fault state and the rail are gone.
  void ensure_alive() {
    if (!crashed)
      return;
    crashed = false;
    reassemble();
  }
};

std::uint64_t want_u64(std::istringstream& ls, const std::string& where, const char* what) {
  std::string tok;
  if (!(ls >> tok))
    throw std::runtime_error(where + ": missing " + what);
  try {
    return std::stoull(tok, nullptr, 0);
  } catch (...) {
    throw std::runtime_error(where + ": bad " + std::string(what) + " '" + tok + "'");
  }
}

std::string want_tok(std::istringstream& ls, const std::string& where, const char* what) {
  std::string tok;
  if (!(ls >> tok))
    throw std::runtime_error(where + ": missing " + what);
  return tok;
}

} // namespace

std::string ScenarioReport::to_string() const {
  std::ostringstream os;
  for (const ScenarioStep& s : steps) {
    os << (s.is_assertion ? (s.passed ? "PASS " : "FAIL ") : "run  ") << s.text;
    if (!s.note.empty())
      os << "  [" << s.note << "]";
    os << "\n";
  }
  os << assertions << " assertions, " << failures << " failed\n";
  return os.str();
}

ScenarioReport run_scenario_text(std::shared_ptr<RaidArray>& arr, const std::string& text,
                                 const std::string& origin) {
  Runner r(arr);
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;

  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string verb;
    if (!(ls >> verb))
      continue;
    const std::string where = origin + ":" + std::to_string(lineno);

    ScenarioStep step;
    step.line = lineno;
    step.text = line.substr(line.find_first_not_of(" \t"));
    while (!step.text.empty() && (step.text.back() == ' ' || step.text.back() == '\t'))
      step.text.pop_back();

    auto fail = [&](const std::string& note) {
      step.passed = false;
      step.note = note;
      ++r.rep.failures;
    };

    try {
      if (verb == "inject") {
        r.ensure_alive();
        std::uint64_t disk = want_u64(ls, where, "disk index");
        std::string kind = want_tok(ls, where, "fault kind");
        std::uint64_t start = want_u64(ls, where, "start sector");
        std::uint64_t count = want_u64(ls, where, "count");
        std::ostringstream fl;
        fl << disk << " " << kind << " " << start << " " << count;
        std::string extra;
        if (ls >> extra)
          fl << " " << extra;
        auto specs = parse_fault_lines(fl.str(), where);
        for (auto& [d, spec] : specs) {
          if (d >= arr->member_count())
            throw std::runtime_error(where + ": disk index out of range");
          arr->member(d)->inject_fault(spec);
        }
      } else if (verb == "fail-disk" || verb == "restore-disk") {
        r.ensure_alive();
        std::uint64_t m = want_u64(ls, where, "member index");
        if (m >= arr->member_count())
          throw std::runtime_error(where + ": member index out of range");
        if (verb == "fail-disk")
          arr->member(std::uint32_t(m))->fail_disk();
        else
          arr->member(std::uint32_t(m))->restore_disk();
      } else if (verb == "write") {
        r.ensure_alive();
        std::uint64_t lba = want_u64(ls, where, "lba");
        std::uint64_t sectors = want_u64(ls, where, "sector count");
        std::uint64_t seed = want_u64(ls, where, "seed");
        std::vector<std::uint8_t> buf(sectors * arr->geometry().sector_size);
        fill_pattern(seed, lba * arr->geometry().sector_size, buf);
        try {
          r.last_write = arr->write(lba, buf);
          r.have_write = true;
        } catch (const power_failure_error&) {
          r.crashed = true;
          step.note = "power failed mid-write";
        }
      } else if (verb == "read") {
        r.ensure_alive();
        std::uint64_t lba = want_u64(ls, where, "lba");
        std::uint64_t sectors = want_u64(ls, where, "sector count");
        r.last_read_buf.assign(sectors * arr->geometry().sector_size, 0);
        r.last_read = arr->read(lba, r.last_read_buf);
        r.last_read_lba = lba;
        r.have_read = true;
      } else if (verb == "crash-at") {
        r.ensure_alive();
        std::uint64_t budget = want_u64(ls, where, "sector budget");
        r.rail = std::make_shared<PowerRail>();
        r.rail->arm_after_sectors(budget);
        for (std::uint32_t i = 0; i < arr->member_count(); ++i)
          arr->member(i)->set_power_rail(r.rail);
      } else if (verb == "reopen") {
        r.ensure_alive();
        arr->close();
        r.reassemble();
      } else if (verb == "replay") {
        r.ensure_alive();
        r.last_replay = arr->journal_replay();
        r.have_replay = true;
      } else if (verb == "scrub") {
        r.ensure_alive();
        r.last_scrub = arr->scrub();
        r.have_scrub = true;
      } else if (verb == "flush") {
        r.ensure_alive();
        try {
          arr->flush();
        } catch (const power_failure_error&) {
          r.crashed = true;
          step.note = "power failed mid-flush";
        }
      } else if (verb == "rebuild") {
        r.ensure_alive();
        std::uint64_t m = want_u64(ls, where, "member index");
        if (m >= arr->member_count())
          throw std::runtime_error(where + ": member index out of range");
        VDiskConfig c = r.member_cfgs[m];
        c.path += ".new";
        c.create = true;
        auto fresh = std::make_shared<VirtualDisk>(c);
        auto res = arr->rebuild(std::uint32_t(m), fresh);
        if (res) {
          r.member_cfgs[m].path = c.path; // future reassembles use the new file
          r.last_rebuild_lost = res.value().stripes_lost.size();
          r.have_rebuild = true;
        } else {
          step.note = res.error().to_string();
        }
      } else if (verb == "expect") {
        r.ensure_alive();
        step.is_assertion = true;
        ++r.rep.assertions;
        std::string what = want_tok(ls, where, "assertion kind");
        if (what == "read-ok") {
          if (!r.have_read)
            fail("no prior read");
          else if (!r.last_read.status.is_ok())
            fail(r.last_read.status.to_string());
        } else if (what == "read-error") {
          ErrKind k = parse_err_kind(want_tok(ls, where, "error kind"), where);
          if (!r.have_read)
            fail("no prior read");
          else if (r.last_read.status.is_ok())
            fail("read succeeded");
          else if (r.last_read.status.error().kind != k)
            fail("got " + r.last_read.status.to_string());
        } else if (what == "read-data") {
          std::uint64_t seed = want_u64(ls, where, "seed");
          if (!r.have_read || !r.last_read.status.is_ok()) {
            fail("no successful read to check");
          } else {
            std::uint64_t base = r.last_read_lba * arr->geometry().sector_size;
            std::size_t bad = 0;
            for (std::size_t i = 0; i < r.last_read_buf.size(); ++i)
              if (r.last_read_buf[i] != pattern_byte(seed, base + i))
                ++bad;
            if (bad)
              fail(std::to_string(bad) + " bytes differ");
          }
        } else if (what == "recovered") {
          std::uint64_t n = want_u64(ls, where, "count");
          if (!r.have_read)
            fail("no prior read");
          else if (r.last_read.recovered_blocks != n)
            fail("recovered " + std::to_string(r.last_read.recovered_blocks));
        } else if (what == "write-ok") {
          if (!r.have_write)
            fail("no prior write");
          else if (!r.last_write.status.is_ok())
            fail(r.last_write.status.to_string());
        } else if (what == "write-error") {
          ErrKind k = parse_err_kind(want_tok(ls, where, "error kind"), where);
          if (!r.have_write)
            fail("no prior write");
          else if (r.last_write.status.is_ok())
            fail("write succeeded");
          else if (r.last_write.status.error().kind != k)
            fail("got " + r.last_write.status.to_string());
        } else if (what == "state") {
          ArrayMode want = parse_mode(want_tok(ls, where, "state"), where);
          ArrayMode got = arr->status().mode;
          if (got != want)
            fail(std::string("state is ") + array_mode_name(got));
        } else if (what == "scrub-inconsistent" || what == "scrub-healed" ||
                   what == "scrub-unrecoverable") {
          std::uint64_t n = want_u64(ls, where, "count");
          if (!r.have_scrub) {
            fail("no prior scrub");
          } else {
            std::uint64_t got = what == "scrub-inconsistent" ? r.last_scrub.inconsistent
                                : what == "scrub-healed"     ? r.last_scrub.healed
                                                             : r.last_scrub.unrecoverable;
            if (got != n)
              fail(what + " is " + std::to_string(got));
          }
        } else if (what == "replay-repaired") {
          std::uint64_t n = want_u64(ls, where, "count");
          if (!r.have_replay)
            fail("no prior replay");
          else if (r.last_replay.stripes_repaired != n)
            fail("repaired " + std::to_string(r.last_replay.stripes_repaired));
        } else if (what == "rebuild-lost") {
          std::uint64_t n = want_u64(ls, where, "count");
          if (!r.have_rebuild)
            fail("no prior rebuild");
          else if (r.last_rebuild_lost != n)
            fail("lost " + std::to_string(r.last_rebuild_lost));
        } else {
          throw std::runtime_error(where + ": unknown assertion '" + what + "'");
        }
      } else {
        throw std::runtime_error(where + ": unknown verb '" + verb + "'");
      }
    } catch (const power_failure_error&) {
      r.crashed = true;
      step.note = "power failed";
    }

    std::string junk;
    if (ls >> junk)
      throw std::runtime_error(where + ": trailing garbage '" + junk + "'");
    r.rep.steps.push_back(std::move(step));
  }
  return r.rep;
}

ScenarioReport run_fault_scenario(std::shared_ptr<RaidArray>& arr, const std::string& path) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot open scenario file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return run_scenario_text(arr, ss.str(), path);
}

} // namespace raid0e
