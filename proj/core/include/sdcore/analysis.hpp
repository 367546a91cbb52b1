#pragma once

#include <optional>
#include <vector>

#include "sdcore/engine.hpp"

namespace sd {

/// Pairwise run comparison for one variable.
///
/// gap_pct holds (a-b)/max(|b|, eps_abs) at every recorded time (the floor
/// keeps the series total even where b ~ 0). divergence_month is stricter: a
/// month is eligible only once |b| >= eps_abs, and divergence is the first
/// eligible month with (a-b)/|b| >= theta_rel. Threshold comparisons carry a
/// 1e-12 slack so data sitting exactly on the boundary after decimal rounding
/// counts as crossing.
struct ComparisonReport {
    Identifier variable;
    std::vector<double> times;
    std::vector<double> values_a;
    std::vector<double> values_b;
    std::vector<double> gap_pct;
    double gap_pct_final = 0.0;  // (a_end - b_end)/b_end
    std::optional<double> divergence_month;
};

inline constexpr double kDefaultThetaRel = 0.10;
inline constexpr double kDefaultEpsAbs = 0.01;
inline constexpr double kThresholdSlack = 1e-12;

ComparisonReport compare_runs(const RunResult& a, const RunResult& b,
                              const Identifier& variable,
                              double theta_rel = kDefaultThetaRel,
                              double eps_abs = kDefaultEpsAbs);

/// (scenario_end - base_end)/base_end at t_stop. Throws on zero baseline.
double improvement_pct(const RunResult& base, const RunResult& scenario,
                       const Identifier& variable);

enum class Monotonicity { Increasing, Decreasing, NonMonotone };

std::string_view monotonicity_name(Monotonicity m);

/// One run per scale factor applied on top of the base overrides; verdicts
/// classify the terminal values of each tracked variable across factors.
struct SweepReport {
    Identifier parameter;
    std::vector<double> factors;
    std::vector<RunResult> runs;
    std::map<Identifier, Monotonicity> verdicts;
};

SweepReport sensitivity_sweep(const Model& model, const SimSpec& spec,
                              const OverrideSet& base_overrides,
                              const Identifier& parameter,
                              std::vector<double> factors,
                              const std::vector<Identifier>& tracked);

}  // namespace sd
