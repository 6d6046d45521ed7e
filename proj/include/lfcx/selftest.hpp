#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lfcx {

struct CheckResult {
  std::string name;
  double measured = 0;
  double tolerance = 0;
  bool pass = false;
};

// Invariant suite behind `lfcx selftest`: kernel agreement, gradient checks,
// rep fusion, parameter accounting, metric hand cases, weights round trip and
// the freeze contract. `report` is called as each check finishes.
std::vector<CheckResult> run_selftest(std::uint64_t seed,
                                      const std::function<void(const CheckResult&)>& report = {});

}  // namespace lfcx
