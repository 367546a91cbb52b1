#pragma once

#include <string>
#include <vector>

#include "sdcore/analysis.hpp"
#include "sdcore/engine.hpp"

namespace sd {

/// CSV with header `t,<var>...`, one row per recorded step, shortest
/// round-trip number rendering. Byte-deterministic for identical inputs.
std::string run_to_csv(const RunResult& run, const std::vector<Identifier>& variables);

/// Comparison as `# key: value` preamble lines followed by a
/// `t,a,b,gap_pct` table.
std::string comparison_to_csv(const ComparisonReport& report);

/// Sweep as `# monotonicity <var>: <verdict>` preamble lines followed by a
/// `t,<var>[x<factor>]...` table.
std::string sweep_to_csv(const SweepReport& report,
                         const std::vector<Identifier>& tracked);

}  // namespace sd
