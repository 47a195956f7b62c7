// Power-failure sweeps: arm a shared rail with a sector budget, run a fixed
// write sequence until the lights go out, reassemble, replay, and check that
// every stripe is wholly old or wholly new and parity is consistent again.
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "raid0e/engine.hpp"
#include "test_util.hpp"

using namespace raid0e;
using testutil::ArrayFixture;

namespace {

ArrayOptions crash_opts() {
  ArrayOptions o;
  o.journal_bytes = 64 * 1024;
  return o;
}

struct WriteOp {
  std::uint64_t lba;
  std::uint64_t sectors;
  std::uint64_t seed;
};

// The scripted sequence: two full-stripe writes and two partials, the second
// partial revisiting a stripe the first full write touched.
std::vector<WriteOp> script(const ArrayGeometry& g) {
  const std::uint64_t spu = g.sectors_per_unit();
  const std::uint64_t stripe_sectors = g.n_data * spu;
  return {
      {2 * stripe_sectors, stripe_sectors, 201},          // full stripe 2
      {5 * stripe_sectors + 1 * spu, spu, 202},           // stripe 5, block 1
      {7 * stripe_sectors, stripe_sectors, 203},          // full stripe 7
      {2 * stripe_sectors + 3 * spu, spu, 204},           // stripe 2, block 3
  };
}

void apply_op(std::vector<std::uint8_t>& img, const WriteOp& op, std::uint32_t sector_size) {
  for (std::uint64_t i = 0; i < op.sectors * sector_size; ++i)
    img[op.lba * sector_size + i] = testutil::pat(op.seed, op.lba * sector_size + i);
}

} // namespace

TEST_CASE("every crash point leaves replay with an old-or-new volume") {
  // Baseline array snapshotted once; each budget restores the files from it.
  ArrayFixture fx(4, 1, 4096, 512, crash_opts());
  const ArrayGeometry g = fx.arr->geometry();
  const std::uint64_t stripe_bytes = std::uint64_t(g.n_data) * g.stripe_unit;
  auto base_img = testutil::pat_buf(100, 0, g.volume_bytes());
  REQUIRE(fx.arr->write(0, base_img).status.is_ok());
  fx.arr->close();
  fx.arr.reset();

  std::vector<std::string> snapshots;
  for (const std::string& p : fx.paths) {
    std::string s = p + ".base";
    std::filesystem::copy_file(p, s, std::filesystem::copy_options::overwrite_existing);
    snapshots.push_back(s);
  }
  auto restore = [&] {
    for (std::size_t i = 0; i < fx.paths.size(); ++i)
      std::filesystem::copy_file(snapshots[i], fx.paths[i],
                                 std::filesystem::copy_options::overwrite_existing);
  };

  const std::vector<WriteOp> ops = script(g);
  std::uint64_t budget_span = 0; // learned from the unconstrained run below

  // Dry run without a rail to learn the total sector count of the sequence.
  {
    restore();
    auto arr = RaidArray::open(fx.make_disks(false, nullptr), fx.opts);
    DiskCounters sum0;
    for (std::uint32_t i = 0; i < arr->member_count(); ++i) {
      DiskCounters c = arr->member(i)->counters();
      sum0.write_bytes += c.write_bytes;
    }
    for (const WriteOp& op : ops) {
      auto buf = testutil::pat_buf(op.seed, op.lba * 512, op.sectors * 512);
      REQUIRE(arr->write(op.lba, buf).status.is_ok());
    }
    REQUIRE(arr->flush().is_ok());
    std::uint64_t sum1 = 0;
    for (std::uint32_t i = 0; i < arr->member_count(); ++i)
      sum1 += arr->member(i)->counters().write_bytes;
    budget_span = (sum1 - sum0.write_bytes) / 512;
  }
  REQUIRE(budget_span > 100);

  std::uint64_t crashes = 0, survivals = 0;
  for (std::uint64_t budget = 0; budget <= budget_span + 2; ++budget) {
    CAPTURE(budget);
    restore();
    auto rail = std::make_shared<PowerRail>();
    rail->arm_after_sectors(budget);
    auto arr = RaidArray::open(fx.make_disks(false, rail), fx.opts);

    std::vector<std::uint8_t> completed = base_img;
    std::optional<WriteOp> in_flight;
    bool crashed = false;
    try {
      for (const WriteOp& op : ops) {
        in_flight = op;
        auto buf = testutil::pat_buf(op.seed, op.lba * 512, op.sectors * 512);
        WriteOutcome w = arr->write(op.lba, buf);
        REQUIRE(w.status.is_ok());
        apply_op(completed, op, 512);
        in_flight.reset();
      }
      arr->flush(); // may also be the crash point
    } catch (const power_failure_error&) {
      crashed = true;
    }
    (crashed ? crashes : survivals)++;
    arr.reset();

    // Restart: assemble, replay, scrub.
    auto fresh = RaidArray::open(fx.make_disks(false, nullptr), fx.opts);
    ReplayReport rep = fresh->journal_replay();
    (void)rep;
    ScrubReport scrub = fresh->scrub();
    REQUIRE(scrub.inconsistent == 0);
    REQUIRE(scrub.unrecoverable == 0);
    REQUIRE(scrub.heal_failures == 0);

    std::vector<std::uint8_t> vol(g.volume_bytes());
    REQUIRE(fresh->read(0, vol).status.is_ok());

    // A completed write is durable; the interrupted one lands whole or not
    // at all, per stripe.
    std::vector<std::uint8_t> with_op = completed;
    if (in_flight)
      apply_op(with_op, *in_flight, 512);
    for (std::uint64_t s = 0; s < g.total_stripes(); ++s) {
      const std::size_t off = std::size_t(s * stripe_bytes);
      const int is_old =
          std::memcmp(vol.data() + off, completed.data() + off, stripe_bytes) == 0;
      const int is_new =
          std::memcmp(vol.data() + off, with_op.data() + off, stripe_bytes) == 0;
      REQUIRE((is_old || is_new));
    }
    fresh->close();
  }
  // The sweep has to contain both genuine crashes and clean completions.
  CHECK(crashes >= budget_span / 2);
  CHECK(survivals >= 1);
}

TEST_CASE("a torn journal record is detected and discarded") {
  ArrayFixture fx(4, 1, 4096, 512, crash_opts());
  const ArrayGeometry g = fx.arr->geometry();
  auto base = testutil::pat_buf(1, 0, g.volume_bytes());
  REQUIRE(fx.arr->write(0, base).status.is_ok());
  fx.arr->close();
  fx.arr.reset();

  // Budget lands inside the first record append (header + 32 payload
  // sectors): the header persists, the payload tears.
  auto rail = std::make_shared<PowerRail>();
  rail->arm_after_sectors(10);
  fx.arr = RaidArray::open(fx.make_disks(false, rail), fx.opts);
  auto buf = testutil::pat_buf(2, 0, std::uint64_t(g.n_data) * g.stripe_unit);
  CHECK_THROWS_AS(fx.arr->write(0, buf), power_failure_error);
  fx.arr.reset();

  fx.arr = RaidArray::open(fx.make_disks(false, nullptr), fx.opts);
  ReplayReport rep = fx.arr->journal_replay();
  CHECK(rep.records_applied == 0);
  CHECK(rep.records_torn == 1);
  CHECK(rep.stripes_repaired == 0);

  // Old contents intact.
  std::vector<std::uint8_t> vol(g.volume_bytes());
  REQUIRE(fx.arr->read(0, vol).status.is_ok());
  CHECK(vol == base);
}

TEST_CASE("an uncommitted record is discarded, a committed one rolls forward") {
  ArrayFixture fx(4, 1, 4096, 512, crash_opts());
  const ArrayGeometry g = fx.arr->geometry();
  const std::uint64_t stripe_sectors = std::uint64_t(g.n_data) * g.sectors_per_unit();
  auto base = testutil::pat_buf(1, 0, g.volume_bytes());
  REQUIRE(fx.arr->write(0, base).status.is_ok());
  fx.arr->close();
  fx.arr.reset();

  // 33 sectors: the record (1 header + 32 payload) persists whole, the
  // commit marker is cut off. The write must vanish on replay.
  {
    auto rail = std::make_shared<PowerRail>();
    rail->arm_after_sectors(33);
    auto arr = RaidArray::open(fx.make_disks(false, rail), fx.opts);
    auto buf = testutil::pat_buf(3, 0, stripe_sectors * 512);
    CHECK_THROWS_AS(arr->write(0, buf), power_failure_error);
    arr.reset();

    auto fresh = RaidArray::open(fx.make_disks(false, nullptr), fx.opts);
    ReplayReport rep = fresh->journal_replay();
    CHECK(rep.records_applied == 0);
    CHECK(rep.records_discarded == 1);
    std::vector<std::uint8_t> vol(g.volume_bytes());
    REQUIRE(fresh->read(0, vol).status.is_ok());
    CHECK(vol == base);
    fresh->close();
    fresh.reset();
  }

  // 34 sectors: record plus commit are durable, the media writes never
  // started. Replay must roll the stripe forward.
  {
    auto rail = std::make_shared<PowerRail>();
    rail->arm_after_sectors(34);
    auto arr = RaidArray::open(fx.make_disks(false, rail), fx.opts);
    auto buf = testutil::pat_buf(4, 0, stripe_sectors * 512);
    CHECK_THROWS_AS(arr->write(0, buf), power_failure_error);
    arr.reset();

    auto fresh = RaidArray::open(fx.make_disks(false, nullptr), fx.opts);
    CHECK(fresh->journal_dirty());
    ReplayReport rep = fresh->journal_replay();
    CHECK(rep.records_applied == 1);
    CHECK(rep.stripes_repaired == 1);
    std::vector<std::uint8_t> want = base;
    for (std::uint64_t i = 0; i < stripe_sectors * 512; ++i)
      want[i] = testutil::pat(4, i);
    std::vector<std::uint8_t> vol(g.volume_bytes());
    REQUIRE(fresh->read(0, vol).status.is_ok());
    CHECK(vol == want);
    ScrubReport scrub = fresh->scrub();
    CHECK(scrub.inconsistent == 0);
  }
}

TEST_CASE("replay is idempotent after a crash") {
  ArrayFixture fx(4, 1, 4096, 512, crash_opts());
  const ArrayGeometry g = fx.arr->geometry();
  REQUIRE(fx.arr->write(0, testutil::pat_buf(1, 0, g.volume_bytes())).status.is_ok());
  fx.arr->close();
  fx.arr.reset();

  auto rail = std::make_shared<PowerRail>();
  rail->arm_after_sectors(40); // dies during the in-place data writes
  fx.arr = RaidArray::open(fx.make_disks(false, rail), fx.opts);
  auto buf = testutil::pat_buf(9, 0, std::uint64_t(g.n_data) * g.stripe_unit);
  CHECK_THROWS_AS(fx.arr->write(0, buf), power_failure_error);
  fx.arr.reset();

  fx.arr = RaidArray::open(fx.make_disks(false, nullptr), fx.opts);
  ReplayReport first = fx.arr->journal_replay();
  CHECK(first.records_applied == 1);
  ReplayReport second = fx.arr->journal_replay();
  CHECK(second.records_applied == 0); // the log was truncated by the first

  std::vector<std::uint8_t> head(std::uint64_t(g.n_data) * g.stripe_unit);
  REQUIRE(fx.arr->read(0, head).status.is_ok());
  CHECK(head == buf);
}

TEST_CASE("crash during flush leaves the journal authoritative") {
  ArrayFixture fx(4, 1, 4096, 512, crash_opts());
  const ArrayGeometry g = fx.arr->geometry();
  REQUIRE(fx.arr->write(0, testutil::pat_buf(1, 0, g.volume_bytes())).status.is_ok());
  fx.arr->close();
  fx.arr.reset();

  // One full-stripe write is 66 sectors (34 journal + 32 data). Give the
  // rail enough for the write but let it die inside flush's parity
  // materialization.
  auto rail = std::make_shared<PowerRail>();
  rail->arm_after_sectors(66 + 3);
  fx.arr = RaidArray::open(fx.make_disks(false, rail), fx.opts);
  auto buf = testutil::pat_buf(5, 0, std::uint64_t(g.n_data) * g.stripe_unit);
  REQUIRE(fx.arr->write(0, buf).status.is_ok());
  CHECK_THROWS_AS(fx.arr->flush(), power_failure_error);
  fx.arr.reset();

  fx.arr = RaidArray::open(fx.make_disks(false, nullptr), fx.opts);
  ReplayReport rep = fx.arr->journal_replay();
  CHECK(rep.records_applied == 1);
  ScrubReport scrub = fx.arr->scrub();
  CHECK(scrub.inconsistent == 0);
  std::vector<std::uint8_t> head(std::uint64_t(g.n_data) * g.stripe_unit);
  REQUIRE(fx.arr->read(0, head).status.is_ok());
  CHECK(head == buf);
}
