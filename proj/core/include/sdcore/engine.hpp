#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdcore/model.hpp"

namespace sd {

enum class Method { Euler, RK4 };

/// Fixed-step simulation frame in months. The reference configuration is
/// t_start=1, t_stop=60, dt=1, Euler (59 steps; month 1 holds the initial
/// state).
struct SimSpec {
    double t_start = 1.0;
    double t_stop = 60.0;
    double dt = 1.0;
    Method method = Method::Euler;
    int output_stride = 1;  // record every k-th step (start and stop always)

    long step_count() const;  // throws std::invalid_argument if malformed
};

struct RunStatus {
    enum class Kind { Completed, Aborted };
    Kind kind = Kind::Completed;
    std::string reason;  // Aborted only
    double time = 0.0;   // Aborted only

    bool completed() const { return kind == Kind::Completed; }
};

/// Time series for every model variable at the recorded grid points.
struct RunResult {
    std::vector<double> times;
    std::map<Identifier, std::vector<double>> series;
    RunStatus status;

    const std::vector<double>& at(const Identifier& id) const;
    double final_value(const Identifier& id) const;
};

/// Runtime evaluation failure (division by zero, non-finite result, or a
/// stateful builtin outside a simulation).
struct EvalError : std::runtime_error {
    EvalError(std::string msg, double t, Identifier variable = {})
        : std::runtime_error(std::move(msg)), time(t), variable(std::move(variable)) {}
    double time;
    Identifier variable;
};

/// Piecewise-linear interpolation, clamped to the first/last y outside the
/// breakpoint domain.
double lookup_interpolate(const LookupTable& table, double x);

/// Evaluates an expression against a value environment at time t. LOOKUP
/// resolves through `model` when given. SMOOTH/DELAY_FIXED carry simulation
/// state and are rejected here; they are only meaningful inside simulate().
double eval_expression(const Expr& expr, const std::map<Identifier, double>& env,
                       double t, const Model* model = nullptr);

/// Deterministic fixed-step run. Per step: auxiliaries and flows evaluate in
/// evaluation_order against current stock values, then each stock integrates
/// d(stock)/dt = sum(inflows) - sum(outflows). SMOOTH states integrate with
/// the same method; DELAY_FIXED uses a ring buffer of length delay/dt.
/// Evaluation errors abort the run, retaining the series recorded so far.
/// Precondition violations (invalid model/spec/overrides) throw
/// std::invalid_argument.
RunResult simulate(const Model& model, const SimSpec& spec,
                   const OverrideSet& overrides = {});

}  // namespace sd
