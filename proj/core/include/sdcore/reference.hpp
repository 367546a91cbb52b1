#pragma once

#include <filesystem>

#include "sdcore/model.hpp"

namespace sd {

/// Monthly acceptance fixture (60 rows, months 1..60).
struct FixtureTable {
    std::vector<double> months;
    std::vector<double> selfservice;
    std::vector<double> traditional;
};

/// The shipped BI-acceptance bundle: model, strategy and scenario override
/// files, the fixture table, and the calibrated parameter set.
struct ReferenceBundle {
    Model model;
    OverrideSet traditional;
    OverrideSet selfservice;
    OverrideSet scenario1;
    OverrideSet scenario2;
    OverrideSet scenario3;
    OverrideSet calibrated;
    FixtureTable fixture;
};

/// Loads, parses, validates, and cross-checks every file of the bundle
/// (model validates cleanly; every override target resolves to a Constant).
/// Throws std::runtime_error with the offending path on failure.
ReferenceBundle load_reference(const std::filesystem::path& dir);

inline constexpr const char* kModelFile = "bi_acceptance.sdm";
inline constexpr const char* kTraditionalFile = "traditional.ovr";
inline constexpr const char* kSelfServiceFile = "selfservice.ovr";
inline constexpr const char* kScenario1File = "scenario1.ovr";
inline constexpr const char* kScenario2File = "scenario2.ovr";
inline constexpr const char* kScenario3File = "scenario3.ovr";
inline constexpr const char* kCalibratedFile = "calibrated.ovr";
inline constexpr const char* kFixtureFile = "table8.csv";
inline constexpr const char* kCalibrationConfig = "calibration.cfg";

}  // namespace sd
