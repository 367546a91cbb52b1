#include "sdcore/engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sd {

long SimSpec::step_count() const {
    if (!(dt > 0.0)) throw std::invalid_argument("SimSpec: dt must be positive");
    if (!(t_stop > t_start)) throw std::invalid_argument("SimSpec: t_stop must exceed t_start");
    if (output_stride < 1) throw std::invalid_argument("SimSpec: output_stride must be >= 1");
    double raw = (t_stop - t_start) / dt;
    double rounded = std::round(raw);
    if (std::abs(raw - rounded) > 1e-9)
        throw std::invalid_argument("SimSpec: (t_stop - t_start)/dt must be a whole number of steps");
    return static_cast<long>(rounded);
}

const std::vector<double>& RunResult::at(const Identifier& id) const {
    auto it = series.find(id);
    if (it == series.end())
        throw std::invalid_argument("RunResult: no series for '" + id + "'");
    return it->second;
}

double RunResult::final_value(const Identifier& id) const {
    const auto& s = at(id);
    if (s.empty()) throw std::invalid_argument("RunResult: empty series for '" + id + "'");
    return s.back();
}

double lookup_interpolate(const LookupTable& table, double x) {
    const auto& pts = table.points;
    if (x <= pts.front().first) return pts.front().second;
    if (x >= pts.back().first) return pts.back().second;
    auto it = std::upper_bound(pts.begin(), pts.end(), x,
                               [](double v, const auto& p) { return v < p.first; });
    const auto& [x1, y1] = *(it - 1);
    const auto& [x2, y2] = *it;
    double f = (x - x1) / (x2 - x1);
    return y1 + f * (y2 - y1);
}

namespace {

struct CompiledExpr;
using CompiledPtr = std::unique_ptr<CompiledExpr>;

struct CompiledExpr {
    enum class Op {
        Number, Slot, Negate,
        Add, Sub, Mul, Div, Pow,
        Min, Max, Clamp, IfPositive, Step, Ramp, Lookup,
        Smooth, DelayFixed,
    };
    Op op;
    double number = 0.0;
    int slot = -1;              // Slot
    int state = -1;             // Smooth / DelayFixed instance index
    const LookupTable* table = nullptr;
    std::vector<CompiledPtr> kids;
};

struct SmoothState {
    CompiledExpr* node = nullptr;
    double tau = 0.0;
    double value = 0.0;
    double input = 0.0;  // input evaluated during the current pass
    bool initialized = false;
};

struct DelayState {
    CompiledExpr* node = nullptr;
    long lag_steps = 0;
    std::vector<double> ring;
    long pushed = 0;
    double initial_input = 0.0;
    bool initialized = false;
};

struct EvalContext {
    std::vector<double>* values = nullptr;
    double t = 0.0;
    std::vector<SmoothState>* smooths = nullptr;
    std::vector<DelayState>* delays = nullptr;
};

double eval_compiled(const CompiledExpr& e, EvalContext& ctx);

double eval_checked_div(double a, double b, double t) {
    if (b == 0.0) throw EvalError("division by zero", t);
    return a / b;
}

double eval_compiled(const CompiledExpr& e, EvalContext& ctx) {
    using Op = CompiledExpr::Op;
    switch (e.op) {
        case Op::Number: return e.number;
        case Op::Slot: return (*ctx.values)[e.slot];
        case Op::Negate: return -eval_compiled(*e.kids[0], ctx);
        case Op::Add: return eval_compiled(*e.kids[0], ctx) + eval_compiled(*e.kids[1], ctx);
        case Op::Sub: return eval_compiled(*e.kids[0], ctx) - eval_compiled(*e.kids[1], ctx);
        case Op::Mul: return eval_compiled(*e.kids[0], ctx) * eval_compiled(*e.kids[1], ctx);
        case Op::Div:
            return eval_checked_div(eval_compiled(*e.kids[0], ctx),
                                    eval_compiled(*e.kids[1], ctx), ctx.t);
        case Op::Pow:
            return std::pow(eval_compiled(*e.kids[0], ctx), eval_compiled(*e.kids[1], ctx));
        case Op::Min:
            return std::min(eval_compiled(*e.kids[0], ctx), eval_compiled(*e.kids[1], ctx));
        case Op::Max:
            return std::max(eval_compiled(*e.kids[0], ctx), eval_compiled(*e.kids[1], ctx));
        case Op::Clamp: {
            double x = eval_compiled(*e.kids[0], ctx);
            double lo = eval_compiled(*e.kids[1], ctx);
            double hi = eval_compiled(*e.kids[2], ctx);
            return std::min(std::max(x, lo), hi);
        }
        case Op::IfPositive: {
            double c = eval_compiled(*e.kids[0], ctx);
            return c > 0.0 ? eval_compiled(*e.kids[1], ctx) : eval_compiled(*e.kids[2], ctx);
        }
        case Op::Step: {
            double h = eval_compiled(*e.kids[0], ctx);
            double s = eval_compiled(*e.kids[1], ctx);
            return ctx.t < s ? 0.0 : h;
        }
        case Op::Ramp: {
            double slope = eval_compiled(*e.kids[0], ctx);
            double s = eval_compiled(*e.kids[1], ctx);
            return ctx.t < s ? 0.0 : slope * (ctx.t - s);
        }
        case Op::Lookup:
            return lookup_interpolate(*e.table, eval_compiled(*e.kids[0], ctx));
        case Op::Smooth: {
            if (!ctx.smooths)
                throw EvalError("SMOOTH requires a simulation context", ctx.t);
            SmoothState& st = (*ctx.smooths)[e.state];
            st.input = eval_compiled(*e.kids[0], ctx);
            if (!st.initialized) {
                st.value = st.input;
                st.initialized = true;
            }
            return st.value;
        }
        case Op::DelayFixed: {
            if (!ctx.delays)
                throw EvalError("DELAY_FIXED requires a simulation context", ctx.t);
            DelayState& st = (*ctx.delays)[e.state];
            double input = eval_compiled(*e.kids[0], ctx);
            if (!st.initialized) {
                st.initial_input = input;
                st.initialized = true;
            }
            if (st.pushed < st.lag_steps) return st.initial_input;
            return st.ring[st.pushed % st.lag_steps];
        }
    }
    throw EvalError("corrupt compiled expression", ctx.t);
}

// Pushes the per-step input samples of delay lines after a completed step.
void push_delay_samples(std::vector<DelayState>& delays, EvalContext& ctx) {
    for (auto& st : delays) {
        double input = eval_compiled(*st.node->kids[0].get(), ctx);
        st.ring[st.pushed % st.lag_steps] = input;
        ++st.pushed;
    }
}

class Compiler {
  public:
    Compiler(const Model& model, const std::map<Identifier, int>& slots,
             const std::map<Identifier, double>& constants, double dt)
        : model_(model), slots_(slots), constants_(constants), dt_(dt) {}

    CompiledPtr compile(const Expr& e) {
        using Op = CompiledExpr::Op;
        return std::visit(
            [&](const auto& n) -> CompiledPtr {
                using T = std::decay_t<decltype(n)>;
                auto node = std::make_unique<CompiledExpr>();
                if constexpr (std::is_same_v<T, Expr::Number>) {
                    node->op = Op::Number;
                    node->number = n.value;
                } else if constexpr (std::is_same_v<T, Expr::VarRef>) {
                    node->op = Op::Slot;
                    node->slot = slots_.at(n.name);
                } else if constexpr (std::is_same_v<T, Expr::Negate>) {
                    node->op = Op::Negate;
                    node->kids.push_back(compile(*n.operand));
                } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                    switch (n.op) {
                        case BinaryOp::Add: node->op = Op::Add; break;
                        case BinaryOp::Sub: node->op = Op::Sub; break;
                        case BinaryOp::Mul: node->op = Op::Mul; break;
                        case BinaryOp::Div: node->op = Op::Div; break;
                        case BinaryOp::Pow: node->op = Op::Pow; break;
                    }
                    node->kids.push_back(compile(*n.lhs));
                    node->kids.push_back(compile(*n.rhs));
                } else {
                    const Expr::Call& c = n;
                    switch (c.fn) {
                        case Builtin::Min: node->op = Op::Min; break;
                        case Builtin::Max: node->op = Op::Max; break;
                        case Builtin::Clamp: node->op = Op::Clamp; break;
                        case Builtin::IfPositive: node->op = Op::IfPositive; break;
                        case Builtin::Step: node->op = Op::Step; break;
                        case Builtin::Ramp: node->op = Op::Ramp; break;
                        case Builtin::Smooth: node->op = Op::Smooth; break;
                        case Builtin::DelayFixed: node->op = Op::DelayFixed; break;
                        case Builtin::Lookup: {
                            node->op = Op::Lookup;
                            node->table = &model_.tables.at(c.table);
                            break;
                        }
                    }
                    for (const auto& a : c.args) node->kids.push_back(compile(*a));
                    if (c.fn == Builtin::Smooth) {
                        node->state = static_cast<int>(smooths.size());
                        SmoothState st;
                        st.node = node.get();
                        st.tau = *fold_constant(*c.args[1], constants_);
                        smooths.push_back(st);
                    } else if (c.fn == Builtin::DelayFixed) {
                        double tau = *fold_constant(*c.args[1], constants_);
                        double steps_raw = tau / dt_;
                        double steps = std::round(steps_raw);
                        if (steps < 1.0 || std::abs(steps_raw - steps) > 1e-9)
                            throw std::invalid_argument(
                                "DELAY_FIXED delay_time must be a whole positive multiple of dt");
                        node->state = static_cast<int>(delays.size());
                        DelayState st;
                        st.node = node.get();
                        st.lag_steps = static_cast<long>(steps);
                        st.ring.assign(st.lag_steps, 0.0);
                        delays.push_back(st);
                    }
                }
                return node;
            },
            e.node);
    }

    std::vector<SmoothState> smooths;
    std::vector<DelayState> delays;

  private:
    const Model& model_;
    const std::map<Identifier, int>& slots_;
    const std::map<Identifier, double>& constants_;
    double dt_;
};

}  // namespace

double eval_expression(const Expr& expr, const std::map<Identifier, double>& env,
                       double t, const Model* model) {
    // Evaluate the tree directly against the map; the compiled path is only
    // worth it inside simulate().
    using R = double;
    auto rec = [&](auto&& self, const Expr& e) -> R {
        return std::visit(
            [&](const auto& n) -> R {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Expr::Number>) {
                    return n.value;
                } else if constexpr (std::is_same_v<T, Expr::VarRef>) {
                    auto it = env.find(n.name);
                    if (it == env.end())
                        throw EvalError("unbound variable '" + n.name + "'", t);
                    return it->second;
                } else if constexpr (std::is_same_v<T, Expr::Negate>) {
                    return -self(self, *n.operand);
                } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                    double a = self(self, *n.lhs);
                    double b = self(self, *n.rhs);
                    switch (n.op) {
                        case BinaryOp::Add: return a + b;
                        case BinaryOp::Sub: return a - b;
                        case BinaryOp::Mul: return a * b;
                        case BinaryOp::Div: return eval_checked_div(a, b, t);
                        case BinaryOp::Pow: return std::pow(a, b);
                    }
                    return 0.0;
                } else {
                    const Expr::Call& c = n;
                    switch (c.fn) {
                        case Builtin::Min:
                            return std::min(self(self, *c.args[0]), self(self, *c.args[1]));
                        case Builtin::Max:
                            return std::max(self(self, *c.args[0]), self(self, *c.args[1]));
                        case Builtin::Clamp: {
                            double x = self(self, *c.args[0]);
                            double lo = self(self, *c.args[1]);
                            double hi = self(self, *c.args[2]);
                            return std::min(std::max(x, lo), hi);
                        }
                        case Builtin::IfPositive:
                            return self(self, *c.args[0]) > 0.0 ? self(self, *c.args[1])
                                                                : self(self, *c.args[2]);
                        case Builtin::Step: {
                            double h = self(self, *c.args[0]);
                            double s = self(self, *c.args[1]);
                            return t < s ? 0.0 : h;
                        }
                        case Builtin::Ramp: {
                            double slope = self(self, *c.args[0]);
                            double s = self(self, *c.args[1]);
                            return t < s ? 0.0 : slope * (t - s);
                        }
                        case Builtin::Lookup: {
                            if (!model || !model->tables.count(c.table))
                                throw EvalError("LOOKUP table '" + c.table + "' unavailable", t);
                            return lookup_interpolate(model->tables.at(c.table),
                                                      self(self, *c.args[0]));
                        }
                        case Builtin::Smooth:
                        case Builtin::DelayFixed:
                            throw EvalError(std::string(builtin_name(c.fn)) +
                                                " requires a simulation context",
                                            t);
                    }
                    return 0.0;
                }
            },
            e.node);
    };
    return rec(rec, expr);
}

RunResult simulate(const Model& base_model, const SimSpec& spec,
                   const OverrideSet& overrides) {
    const long steps = spec.step_count();
    Model model = overrides.empty() ? base_model : apply_overrides(base_model, overrides);
    if (auto diags = validate_model(model); !diags.empty())
        throw std::invalid_argument("simulate: invalid model: " + diags.front().message);

    const std::vector<Identifier> order = evaluation_order(model);

    // slot layout: every variable, lexicographic
    std::map<Identifier, int> slots;
    std::map<Identifier, double> constants;
    std::vector<Identifier> slot_names;
    int next = 0;
    for (const auto& [id, v] : model.variables) {
        slots[id] = next++;
        slot_names.push_back(id);
        if (v.kind == VarKind::Constant) constants[id] = v.value;
    }
    const int nvars = next;

    Compiler compiler(model, slots, constants, spec.dt);
    struct Equation {
        int slot;
        CompiledPtr expr;
    };
    std::vector<Equation> equations;  // in evaluation order
    struct StockInfo {
        int slot;
        double initial;
        std::vector<int> inflows;   // flow slots
        std::vector<int> outflows;  // flow slots
    };
    std::vector<StockInfo> stocks;

    for (const auto& id : order) {
        const Variable& v = *model.find(id);
        equations.push_back({slots[id], compiler.compile(*v.equation)});
    }
    for (const auto& [id, v] : model.variables) {
        if (v.kind != VarKind::Stock) continue;
        StockInfo si;
        si.slot = slots[id];
        si.initial = *fold_constant(*v.initial, constants);
        for (const auto& [fid, fv] : model.variables) {
            if (fv.kind != VarKind::Flow) continue;
            if (fv.into && *fv.into == id) si.inflows.push_back(slots[fid]);
            if (fv.outof && *fv.outof == id) si.outflows.push_back(slots[fid]);
        }
        stocks.push_back(si);
    }
    auto& smooths = compiler.smooths;
    auto& delays = compiler.delays;

    RunResult result;
    result.status.kind = RunStatus::Kind::Completed;

    std::vector<double> values(nvars, 0.0);
    for (const auto& [id, v] : model.variables)
        if (v.kind == VarKind::Constant) values[slots[id]] = v.value;
    for (const auto& si : stocks) values[si.slot] = si.initial;

    std::vector<std::vector<double>> recorded(nvars);
    std::vector<double> times;

    EvalContext ctx;
    ctx.values = &values;
    ctx.smooths = &smooths;
    ctx.delays = &delays;

    // current variable under evaluation, for error reporting
    const Identifier* current_var = nullptr;

    auto eval_network = [&](double t) {
        ctx.t = t;
        for (size_t i = 0; i < equations.size(); ++i) {
            current_var = &order[i];
            double v = eval_compiled(*equations[i].expr, ctx);
            if (!std::isfinite(v))
                throw EvalError("non-finite value", t, *current_var);
            values[equations[i].slot] = v;
        }
        current_var = nullptr;
    };

    auto record = [&](double t) {
        times.push_back(t);
        for (int s = 0; s < nvars; ++s) recorded[s].push_back(values[s]);
    };

    auto net_flow = [&](const StockInfo& si) {
        double net = 0.0;
        for (int f : si.inflows) net += values[f];
        for (int f : si.outflows) net -= values[f];
        return net;
    };

    const size_t nstates = stocks.size() + smooths.size();
    auto gather_state = [&](std::vector<double>& out) {
        out.resize(nstates);
        size_t k = 0;
        for (const auto& si : stocks) out[k++] = values[si.slot];
        for (const auto& sm : smooths) out[k++] = sm.value;
    };
    auto scatter_state = [&](const std::vector<double>& in) {
        size_t k = 0;
        for (const auto& si : stocks) values[si.slot] = in[k++];
        for (auto& sm : smooths) sm.value = in[k++];
    };
    auto derivatives = [&](double t, std::vector<double>& out) {
        eval_network(t);
        out.resize(nstates);
        size_t k = 0;
        for (const auto& si : stocks) out[k++] = net_flow(si);
        for (const auto& sm : smooths) out[k++] = (sm.input - sm.value) / sm.tau;
    };

    long step = 0;
    try {
        std::vector<double> y0, k1, k2, k3, k4, tmp;
        for (step = 0; step <= steps; ++step) {
            const double t = spec.t_start + static_cast<double>(step) * spec.dt;
            eval_network(t);
            if (step % spec.output_stride == 0 || step == steps) record(t);
            if (step == steps) break;

            if (spec.method == Method::Euler) {
                gather_state(y0);
                derivatives(t, k1);  // re-evaluates the network; same values at t
                for (size_t i = 0; i < nstates; ++i) y0[i] += spec.dt * k1[i];
                push_delay_samples(delays, ctx);
                scatter_state(y0);
            } else {
                const double h = spec.dt;
                gather_state(y0);
                derivatives(t, k1);
                tmp = y0;
                for (size_t i = 0; i < nstates; ++i) tmp[i] = y0[i] + 0.5 * h * k1[i];
                scatter_state(tmp);
                derivatives(t + 0.5 * h, k2);
                for (size_t i = 0; i < nstates; ++i) tmp[i] = y0[i] + 0.5 * h * k2[i];
                scatter_state(tmp);
                derivatives(t + 0.5 * h, k3);
                for (size_t i = 0; i < nstates; ++i) tmp[i] = y0[i] + h * k3[i];
                scatter_state(tmp);
                derivatives(t + h, k4);
                // restore stage-1 values so the delay lines sample at time t
                scatter_state(y0);
                eval_network(t);
                push_delay_samples(delays, ctx);
                for (size_t i = 0; i < nstates; ++i)
                    y0[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                scatter_state(y0);
            }
            for (const auto& si : stocks) {
                if (!std::isfinite(values[si.slot]))
                    throw EvalError("non-finite stock value", t + spec.dt,
                                    slot_names[si.slot]);
            }
            for (const auto& sm : smooths) {
                if (!std::isfinite(sm.value))
                    throw EvalError("non-finite SMOOTH state", t + spec.dt);
            }
        }
    } catch (const EvalError& e) {
        std::ostringstream os;
        os << e.what();
        Identifier where = e.variable;
        if (where.empty() && current_var) where = *current_var;
        if (!where.empty()) os << " while evaluating '" << where << "'";
        os << " at t = " << e.time;
        result.status.kind = RunStatus::Kind::Aborted;
        result.status.reason = os.str();
        result.status.time = e.time;
    }

    result.times = std::move(times);
    for (const auto& [id, slot] : slots)
        result.series.emplace(id, std::move(recorded[slot]));
    return result;
}

}  // namespace sd
