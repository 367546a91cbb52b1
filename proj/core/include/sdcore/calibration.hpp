#pragma once

#include <filesystem>
#include <span>

#include "sdcore/engine.hpp"

namespace sd {

enum class LossScale { Log, Linear };

struct FreeParam {
    Identifier id;  // must be a Constant of the model
    double lower = 0.0;
    double upper = 1.0;
    double guess = 0.0;
};

struct CalSample {
    double t = 0.0;      // must lie on the output grid
    double value = 0.0;  // observed value
    double weight = 1.0;
};

struct CalTarget {
    OverrideSet condition;  // applied after the candidate parameter values
    Identifier variable;
    std::vector<CalSample> samples;
};

struct CalibrationProblem {
    Model model;
    SimSpec spec;
    std::vector<FreeParam> free;
    std::vector<CalTarget> targets;
    LossScale loss_scale = LossScale::Log;
};

struct FittedParams {
    std::map<Identifier, double> values;
    double loss = 0.0;
    long evaluations = 0;
    bool converged = false;
};

/// Checks bounds, free-parameter kinds, and sample-grid alignment; throws
/// std::invalid_argument on the first defect.
void validate_problem(const CalibrationProblem& problem);

/// Weighted squared error over all targets. Log scale maps values through
/// ln(max(v, 1e-6)). An aborted simulation yields +infinity (candidate
/// rejected, not an error).
double evaluate_loss(const CalibrationProblem& problem,
                     std::span<const double> candidate);

/// Deterministic Nelder-Mead with box projection: initial simplex at the
/// guess plus 5%-of-range per axis, at most 2000 iterations, convergence when
/// the simplex loss spread drops below 1e-10, then one restart from the best
/// point with a 1%-of-range simplex. Returns the best candidate seen.
FittedParams calibrate(const CalibrationProblem& problem);

/// Exhaustive uniform grid including both bounds; at most 3 free parameters.
/// Ties resolve to the lexicographically first grid index.
FittedParams grid_search_oracle(const CalibrationProblem& problem, int resolution);

/// Calibration config: `key = value` lines with `#` comments. Keys:
///   model       path to the .sdm file (relative to the config directory)
///   t_start, t_stop, dt, method, stride, loss_scale
///   free   = name, lower, upper, guess            (repeatable)
///   target = cond1.ovr+cond2.ovr, variable, samples.csv   (repeatable;
///            condition files compose left to right; `-` means no condition)
/// Sample CSVs carry a `t,value,weight` header; weight defaults to 1.
CalibrationProblem load_calibration_config(const std::filesystem::path& path);

}  // namespace sd
