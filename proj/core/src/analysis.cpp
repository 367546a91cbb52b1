#include "sdcore/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sd {

namespace {

void require_comparable(const RunResult& a, const RunResult& b, const Identifier& variable) {
    if (!a.status.completed() || !b.status.completed())
        throw std::invalid_argument("compare_runs: both runs must have completed");
    if (a.times.size() != b.times.size() ||
        !std::equal(a.times.begin(), a.times.end(), b.times.begin()))
        throw std::invalid_argument("compare_runs: mismatched time grids");
    if (!a.series.count(variable) || !b.series.count(variable))
        throw std::invalid_argument("compare_runs: variable '" + variable +
                                    "' missing from a run");
}

}  // namespace

std::string_view monotonicity_name(Monotonicity m) {
    switch (m) {
        case Monotonicity::Increasing: return "Increasing";
        case Monotonicity::Decreasing: return "Decreasing";
        case Monotonicity::NonMonotone: return "NonMonotone";
    }
    return "?";
}

ComparisonReport compare_runs(const RunResult& a, const RunResult& b,
                              const Identifier& variable, double theta_rel,
                              double eps_abs) {
    require_comparable(a, b, variable);
    ComparisonReport rep;
    rep.variable = variable;
    rep.times = a.times;
    rep.values_a = a.at(variable);
    rep.values_b = b.at(variable);

    const size_t n = rep.times.size();
    rep.gap_pct.resize(n);
    for (size_t i = 0; i < n; ++i) {
        double va = rep.values_a[i], vb = rep.values_b[i];
        rep.gap_pct[i] = (va - vb) / std::max(std::abs(vb), eps_abs);
        // divergence only counts once the baseline is large enough to trust
        if (!rep.divergence_month && std::abs(vb) >= eps_abs &&
            (va - vb) / std::abs(vb) >= theta_rel - kThresholdSlack) {
            rep.divergence_month = rep.times[i];
        }
    }
    double b_end = rep.values_b.back();
    if (b_end == 0.0)
        throw std::invalid_argument("compare_runs: baseline final value is zero");
    rep.gap_pct_final = (rep.values_a.back() - b_end) / b_end;
    return rep;
}

double improvement_pct(const RunResult& base, const RunResult& scenario,
                       const Identifier& variable) {
    require_comparable(scenario, base, variable);
    double base_end = base.final_value(variable);
    if (base_end == 0.0)
        throw std::invalid_argument("improvement_pct: baseline final value is zero");
    return (scenario.final_value(variable) - base_end) / base_end;
}

SweepReport sensitivity_sweep(const Model& model, const SimSpec& spec,
                              const OverrideSet& base_overrides,
                              const Identifier& parameter,
                              std::vector<double> factors,
                              const std::vector<Identifier>& tracked) {
    if (factors.empty())
        throw std::invalid_argument("sensitivity_sweep: factors must be non-empty");
    if (!std::is_sorted(factors.begin(), factors.end()) ||
        std::adjacent_find(factors.begin(), factors.end()) != factors.end())
        throw std::invalid_argument("sensitivity_sweep: factors must be distinct and ascending");
    const Variable* p = model.find(parameter);
    if (!p || p->kind != VarKind::Constant)
        throw std::invalid_argument("sensitivity_sweep: parameter '" + parameter +
                                    "' is not a constant");

    SweepReport rep;
    rep.parameter = parameter;
    rep.factors = std::move(factors);

    Model base = apply_overrides(model, base_overrides);
    for (double f : rep.factors) {
        OverrideSet scale;
        scale.scale(parameter, f);
        RunResult run = simulate(base, spec, scale);
        if (!run.status.completed()) {
            std::ostringstream os;
            os << "sensitivity_sweep: factor " << f << " aborted: " << run.status.reason;
            throw std::runtime_error(os.str());
        }
        rep.runs.push_back(std::move(run));
    }

    for (const auto& v : tracked) {
        std::vector<double> terminal;
        terminal.reserve(rep.runs.size());
        for (const auto& run : rep.runs) terminal.push_back(run.final_value(v));
        bool inc = true, dec = true;
        for (size_t i = 1; i < terminal.size(); ++i) {
            if (!(terminal[i] > terminal[i - 1])) inc = false;
            if (!(terminal[i] < terminal[i - 1])) dec = false;
        }
        rep.verdicts[v] = terminal.size() < 2 ? Monotonicity::NonMonotone
                          : inc               ? Monotonicity::Increasing
                          : dec               ? Monotonicity::Decreasing
                                              : Monotonicity::NonMonotone;
    }
    return rep;
}

}  // namespace sd
