// scenario.hpp - line-oriented fault-scenario scripts.
//
// A scenario drives one open array through faults, I/O, crashes and
// assertions.  Grammar (one verb per line, `#` comments):
//
//   inject <disk> <kind> <start-sector> <count> [k|pattern]
//   fail-disk <member> | restore-disk <member>
//   write <lba> <sectors> <seed>        deterministic payload from <seed>
//   read <lba> <sectors>                outcome visible to expect verbs
//   crash-at <sectors>                  power dies after N more persisted sectors
//   reopen                              clean close + assemble again
//   replay | scrub | flush | rebuild <member>
//   expect read-ok | read-error <kind> | read-data <seed> | recovered <n>
//   expect write-ok | write-error <kind>
//   expect state <healthy|degraded|redundancy-lost|offline>
//   expect scrub-inconsistent <n> | scrub-healed <n> | scrub-unrecoverable <n>
//   expect replay-repaired <n> | rebuild-lost <n>
//
// After a crash fires, the next verb reopens the array from its backing
// files automatically (in-memory fault state does not survive, like a real
// restart).  Malformed lines raise a parse error naming file and line.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "raid0e/engine.hpp"

namespace raid0e {

struct ScenarioStep {
  int line = 0;
  std::string text;
  bool is_assertion = false;
  bool passed = true;
  std::string note;
};

struct ScenarioReport {
  std::vector<ScenarioStep> steps;
  std::uint64_t assertions = 0;
  std::uint64_t failures = 0;
  bool passed() const { return failures == 0; }
  std::string to_string() const;
};

// `arr` may be replaced by the runner when a crash or reopen occurs.
ScenarioReport run_fault_scenario(std::shared_ptr<RaidArray>& arr, const std::string& path);
ScenarioReport run_scenario_text(std::shared_ptr<RaidArray>& arr, const std::string& text,
                                 const std::string& origin);

} // namespace raid0e
