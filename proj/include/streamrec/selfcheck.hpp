#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace streamrec {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;  // the quantity compared against `limit`
  double limit = 0.0;
  std::string detail;
};

struct CheckOptions {
  std::uint64_t seed = 0;
  bool inject_mask_fault = false;
};

/// Runs the built-in verification suite: mask oracle, causality, gradient
/// fidelity, gauge invariance, streaming equivalence, overlap merge,
/// alignment recovery, metric oracles, closed-loop oracle run and pool
/// footprint. Fault injection is reset before returning.
std::vector<CheckResult> run_selfchecks(const CheckOptions& options = {});

bool all_passed(const std::vector<CheckResult>& results);
std::string checks_json(const std::vector<CheckResult>& results, int indent = 2);

}  // namespace streamrec
