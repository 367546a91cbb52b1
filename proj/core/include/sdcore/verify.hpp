#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sd {

struct CheckResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Runs the reproduction suite against the reference bundle. When
/// artifacts_dir is non-empty the deterministic CSV/override artifacts are
/// written there (the directory is created if missing).
std::vector<CheckResult> run_acceptance_checks(
    const std::filesystem::path& bundle_dir,
    const std::filesystem::path& artifacts_dir = {});

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace sd
