#include "sdcore/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sd {

bool is_valid_identifier(std::string_view s) {
    if (s.empty()) return false;
    auto head = [](char c) { return c == '_' || (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); };
    auto tail = [&](char c) { return head(c) || (c >= '0' && c <= '9'); };
    if (!head(s[0])) return false;
    return std::all_of(s.begin() + 1, s.end(), tail);
}

namespace {

struct BuiltinInfo {
    Builtin fn;
    std::string_view name;
    int arity;
};

constexpr BuiltinInfo kBuiltins[] = {
    {Builtin::Min, "MIN", 2},          {Builtin::Max, "MAX", 2},
    {Builtin::Clamp, "CLAMP", 3},      {Builtin::IfPositive, "IF_POSITIVE", 3},
    {Builtin::Step, "STEP", 2},        {Builtin::Ramp, "RAMP", 2},
    {Builtin::Smooth, "SMOOTH", 2},    {Builtin::DelayFixed, "DELAY_FIXED", 2},
    {Builtin::Lookup, "LOOKUP", 1},
};

const BuiltinInfo& info(Builtin b) {
    for (const auto& bi : kBuiltins)
        if (bi.fn == b) return bi;
    throw std::logic_error("unknown builtin");
}

}  // namespace

std::string_view builtin_name(Builtin b) { return info(b).name; }
int builtin_arity(Builtin b) { return info(b).arity; }

std::optional<Builtin> builtin_from_name(std::string_view name) {
    for (const auto& bi : kBuiltins)
        if (bi.name == name) return bi.fn;
    return std::nullopt;
}

ExprPtr make_number(double value) {
    return std::make_shared<const Expr>(Expr{Expr::Number{value}});
}
ExprPtr make_var(Identifier name) {
    return std::make_shared<const Expr>(Expr{Expr::VarRef{std::move(name)}});
}
ExprPtr make_negate(ExprPtr operand) {
    return std::make_shared<const Expr>(Expr{Expr::Negate{std::move(operand)}});
}
ExprPtr make_binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs) {
    return std::make_shared<const Expr>(Expr{Expr::Binary{op, std::move(lhs), std::move(rhs)}});
}
ExprPtr make_call(Builtin fn, std::vector<ExprPtr> args) {
    return std::make_shared<const Expr>(Expr{Expr::Call{fn, {}, std::move(args)}});
}
ExprPtr make_lookup(Identifier table, ExprPtr arg) {
    return std::make_shared<const Expr>(
        Expr{Expr::Call{Builtin::Lookup, std::move(table), {std::move(arg)}}});
}

bool structurally_equal(const Expr& a, const Expr& b) {
    if (a.node.index() != b.node.index()) return false;
    return std::visit(
        [&](const auto& na) -> bool {
            using T = std::decay_t<decltype(na)>;
            const auto& nb = std::get<T>(b.node);
            if constexpr (std::is_same_v<T, Expr::Number>) {
                return na.value == nb.value ||
                       (std::isnan(na.value) && std::isnan(nb.value));
            } else if constexpr (std::is_same_v<T, Expr::VarRef>) {
                return na.name == nb.name;
            } else if constexpr (std::is_same_v<T, Expr::Negate>) {
                return structurally_equal(*na.operand, *nb.operand);
            } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                return na.op == nb.op && structurally_equal(*na.lhs, *nb.lhs) &&
                       structurally_equal(*na.rhs, *nb.rhs);
            } else {
                if (na.fn != nb.fn || na.table != nb.table ||
                    na.args.size() != nb.args.size())
                    return false;
                for (size_t i = 0; i < na.args.size(); ++i)
                    if (!structurally_equal(*na.args[i], *nb.args[i])) return false;
                return true;
            }
        },
        a.node);
}

void collect_refs(const Expr& e, std::vector<Identifier>& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Expr::VarRef>) {
                out.push_back(n.name);
            } else if constexpr (std::is_same_v<T, Expr::Negate>) {
                collect_refs(*n.operand, out);
            } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                collect_refs(*n.lhs, out);
                collect_refs(*n.rhs, out);
            } else if constexpr (std::is_same_v<T, Expr::Call>) {
                for (const auto& a : n.args) collect_refs(*a, out);
            }
        },
        e.node);
}

std::optional<double> fold_constant(const Expr& e,
                                    const std::map<Identifier, double>& constants) {
    using R = std::optional<double>;
    return std::visit(
        [&](const auto& n) -> R {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Expr::Number>) {
                return n.value;
            } else if constexpr (std::is_same_v<T, Expr::VarRef>) {
                auto it = constants.find(n.name);
                if (it == constants.end()) return std::nullopt;
                return it->second;
            } else if constexpr (std::is_same_v<T, Expr::Negate>) {
                auto v = fold_constant(*n.operand, constants);
                if (!v) return std::nullopt;
                return -*v;
            } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                auto a = fold_constant(*n.lhs, constants);
                auto b = fold_constant(*n.rhs, constants);
                if (!a || !b) return std::nullopt;
                double r = 0.0;
                switch (n.op) {
                    case BinaryOp::Add: r = *a + *b; break;
                    case BinaryOp::Sub: r = *a - *b; break;
                    case BinaryOp::Mul: r = *a * *b; break;
                    case BinaryOp::Div:
                        if (*b == 0.0) return std::nullopt;
                        r = *a / *b;
                        break;
                    case BinaryOp::Pow: r = std::pow(*a, *b); break;
                }
                if (!std::isfinite(r)) return std::nullopt;
                return r;
            } else {
                const Expr::Call& c = n;
                switch (c.fn) {
                    case Builtin::Min:
                    case Builtin::Max:
                    case Builtin::Clamp:
                    case Builtin::IfPositive: {
                        std::vector<double> vals;
                        vals.reserve(c.args.size());
                        for (const auto& a : c.args) {
                            auto v = fold_constant(*a, constants);
                            if (!v) return std::nullopt;
                            vals.push_back(*v);
                        }
                        if (c.fn == Builtin::Min) return std::min(vals[0], vals[1]);
                        if (c.fn == Builtin::Max) return std::max(vals[0], vals[1]);
                        if (c.fn == Builtin::Clamp)
                            return std::min(std::max(vals[0], vals[1]), vals[2]);
                        return vals[0] > 0.0 ? vals[1] : vals[2];
                    }
                    default:
                        return std::nullopt;  // time- or state-dependent
                }
            }
        },
        e.node);
}

std::string_view var_kind_name(VarKind k) {
    switch (k) {
        case VarKind::Stock: return "stock";
        case VarKind::Flow: return "flow";
        case VarKind::Auxiliary: return "auxiliary";
        case VarKind::Constant: return "constant";
    }
    return "?";
}

const Variable* Model::find(const Identifier& id) const {
    auto it = variables.find(id);
    return it == variables.end() ? nullptr : &it->second;
}

std::string_view polarity_name(Polarity p) {
    switch (p) {
        case Polarity::Reinforcing: return "Reinforcing";
        case Polarity::Balancing: return "Balancing";
        case Polarity::Undetermined: return "Undetermined";
    }
    return "?";
}

void OverrideSet::set(Identifier id, double value) {
    entries[std::move(id)] = Override{Override::Kind::Set, value};
}
void OverrideSet::scale(Identifier id, double factor) {
    entries[std::move(id)] = Override{Override::Kind::Scale, factor};
}

namespace {

std::map<Identifier, double> constant_values(const Model& m) {
    std::map<Identifier, double> out;
    for (const auto& [id, v] : m.variables)
        if (v.kind == VarKind::Constant) out[id] = v.value;
    return out;
}

// Instantaneous dependencies of an aux/flow: references to other auxes and
// flows. Stocks and constants are exogenous within a step.
std::vector<Identifier> instantaneous_deps(const Model& m, const Variable& v) {
    std::vector<Identifier> refs;
    if (v.equation) collect_refs(*v.equation, refs);
    std::vector<Identifier> deps;
    for (const auto& r : refs) {
        const Variable* t = m.find(r);
        if (t && (t->kind == VarKind::Auxiliary || t->kind == VarKind::Flow))
            deps.push_back(r);
    }
    std::sort(deps.begin(), deps.end());
    deps.erase(std::unique(deps.begin(), deps.end()), deps.end());
    return deps;
}

// Finds one cycle among aux/flow instantaneous dependencies, formatted
// "x -> y -> x", or empty if acyclic.
std::string find_instantaneous_cycle(const Model& m) {
    enum class Mark { White, Grey, Black };
    std::map<Identifier, Mark> marks;
    std::vector<Identifier> stack;
    std::string found;

    auto dfs = [&](auto&& self, const Identifier& id) -> bool {
        marks[id] = Mark::Grey;
        stack.push_back(id);
        const Variable* v = m.find(id);
        for (const auto& dep : instantaneous_deps(m, *v)) {
            auto mk = marks.count(dep) ? marks[dep] : Mark::White;
            if (mk == Mark::Grey) {
                auto it = std::find(stack.begin(), stack.end(), dep);
                std::ostringstream os;
                for (; it != stack.end(); ++it) os << *it << " -> ";
                os << dep;
                found = os.str();
                return true;
            }
            if (mk == Mark::White && self(self, dep)) return true;
        }
        stack.pop_back();
        marks[id] = Mark::Black;
        return false;
    };

    for (const auto& [id, v] : m.variables) {
        if (v.kind != VarKind::Auxiliary && v.kind != VarKind::Flow) continue;
        auto mk = marks.count(id) ? marks[id] : Mark::White;
        if (mk == Mark::White && dfs(dfs, id)) return found;
    }
    return {};
}

void check_delay_times(const Model& m, const Expr& e, const Identifier& owner,
                       const std::map<Identifier, double>& consts,
                       std::vector<Diagnostic>& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Expr::Negate>) {
                check_delay_times(m, *n.operand, owner, consts, out);
            } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                check_delay_times(m, *n.lhs, owner, consts, out);
                check_delay_times(m, *n.rhs, owner, consts, out);
            } else if constexpr (std::is_same_v<T, Expr::Call>) {
                if (n.fn == Builtin::Smooth || n.fn == Builtin::DelayFixed) {
                    auto tau = fold_constant(*n.args[1], consts);
                    if (!tau || *tau <= 0.0) {
                        out.push_back({Diagnostic::Code::BadDelayTime, owner,
                                       std::string(builtin_name(n.fn)) + " delay_time in '" +
                                           owner +
                                           "' must be a strictly positive constant expression"});
                    }
                }
                for (const auto& a : n.args)
                    check_delay_times(m, *a, owner, consts, out);
            }
        },
        e.node);
}

void check_lookup_refs(const Model& m, const Expr& e, const Identifier& owner,
                       std::vector<Diagnostic>& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Expr::Negate>) {
                check_lookup_refs(m, *n.operand, owner, out);
            } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                check_lookup_refs(m, *n.lhs, owner, out);
                check_lookup_refs(m, *n.rhs, owner, out);
            } else if constexpr (std::is_same_v<T, Expr::Call>) {
                if (n.fn == Builtin::Lookup && !m.tables.count(n.table)) {
                    out.push_back({Diagnostic::Code::UnresolvedReference, owner,
                                   "unknown lookup table '" + n.table + "' in '" + owner + "'"});
                }
                for (const auto& a : n.args) check_lookup_refs(m, *a, owner, out);
            }
        },
        e.node);
}

}  // namespace

std::vector<Diagnostic> validate_model(const Model& m) {
    std::vector<Diagnostic> out;
    const auto consts = constant_values(m);

    for (const auto& [id, v] : m.variables) {
        if (!is_valid_identifier(id))
            out.push_back({Diagnostic::Code::BadIdentifier, id, "invalid identifier '" + id + "'"});
        if (m.tables.count(id))
            out.push_back({Diagnostic::Code::DuplicateIdentifier, id,
                           "'" + id + "' names both a variable and a lookup table"});

        // reference resolution
        std::vector<Identifier> refs;
        if (v.equation) collect_refs(*v.equation, refs);
        if (v.initial) collect_refs(*v.initial, refs);
        std::sort(refs.begin(), refs.end());
        refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
        for (const auto& r : refs) {
            if (!m.find(r))
                out.push_back({Diagnostic::Code::UnresolvedReference, id,
                               "unresolved reference '" + r + "' in '" + id + "'"});
        }
        if (v.equation) check_lookup_refs(m, *v.equation, id, out);

        switch (v.kind) {
            case VarKind::Stock: {
                if (!v.initial) {
                    out.push_back({Diagnostic::Code::NonConstantInitial, id,
                                   "stock '" + id + "' has no initial expression"});
                } else if (!fold_constant(*v.initial, consts)) {
                    out.push_back({Diagnostic::Code::NonConstantInitial, id,
                                   "initial of stock '" + id + "' is not constant-foldable"});
                }
                break;
            }
            case VarKind::Flow: {
                if (!v.into && !v.outof)
                    out.push_back({Diagnostic::Code::DetachedFlow, id,
                                   "flow '" + id + "' is attached to no stock"});
                for (const auto& attach : {v.into, v.outof}) {
                    if (!attach) continue;
                    const Variable* s = m.find(*attach);
                    if (!s)
                        out.push_back({Diagnostic::Code::BadFlowAttachment, id,
                                       "flow '" + id + "' attached to unknown '" + *attach + "'"});
                    else if (s->kind != VarKind::Stock)
                        out.push_back({Diagnostic::Code::BadFlowAttachment, id,
                                       "flow '" + id + "' attached to non-stock '" + *attach + "'"});
                }
                break;
            }
            case VarKind::Constant:
                if (!std::isfinite(v.value))
                    out.push_back({Diagnostic::Code::NonFiniteConstant, id,
                                   "constant '" + id + "' is not finite"});
                break;
            case VarKind::Auxiliary:
                break;
        }
        if (v.equation) check_delay_times(m, *v.equation, id, consts, out);
    }

    for (const auto& [id, table] : m.tables) {
        if (table.points.size() < 2) {
            out.push_back({Diagnostic::Code::MalformedLookup, id,
                           "lookup table '" + id + "' needs at least 2 breakpoints"});
            continue;
        }
        for (size_t i = 1; i < table.points.size(); ++i) {
            if (!(table.points[i - 1].first < table.points[i].first)) {
                out.push_back({Diagnostic::Code::MalformedLookup, id,
                               "lookup table '" + id + "' x values must be strictly increasing"});
                break;
            }
        }
    }

    // Algebraic cycles only make sense once references resolve.
    bool unresolved = std::any_of(out.begin(), out.end(), [](const Diagnostic& d) {
        return d.code == Diagnostic::Code::UnresolvedReference;
    });
    if (!unresolved) {
        if (auto cycle = find_instantaneous_cycle(m); !cycle.empty())
            out.push_back({Diagnostic::Code::InstantaneousCycle, {},
                           "instantaneous cycle: " + cycle});
    }
    return out;
}

std::vector<Identifier> evaluation_order(const Model& m) {
    if (auto diags = validate_model(m); !diags.empty())
        throw std::invalid_argument("evaluation_order: invalid model: " + diags.front().message);

    // Kahn's algorithm with a lexicographic frontier.
    std::map<Identifier, int> in_degree;
    std::map<Identifier, std::vector<Identifier>> dependents;
    for (const auto& [id, v] : m.variables) {
        if (v.kind != VarKind::Auxiliary && v.kind != VarKind::Flow) continue;
        auto deps = instantaneous_deps(m, v);
        in_degree[id] = static_cast<int>(deps.size());
        for (const auto& d : deps) dependents[d].push_back(id);
    }

    std::set<Identifier> ready;
    for (const auto& [id, deg] : in_degree)
        if (deg == 0) ready.insert(id);

    std::vector<Identifier> order;
    order.reserve(in_degree.size());
    while (!ready.empty()) {
        Identifier id = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(id);
        for (const auto& dep : dependents[id])
            if (--in_degree[dep] == 0) ready.insert(dep);
    }
    return order;
}

Model apply_overrides(const Model& m, const OverrideSet& overrides) {
    Model out = m;
    for (const auto& [id, ov] : overrides.entries) {
        auto it = out.variables.find(id);
        if (it == out.variables.end())
            throw std::invalid_argument("override target '" + id + "' does not exist");
        if (it->second.kind != VarKind::Constant)
            throw std::invalid_argument("override target '" + id + "' is not a constant");
        if (!std::isfinite(ov.value))
            throw std::invalid_argument("override value for '" + id + "' is not finite");
        if (ov.kind == Override::Kind::Set)
            it->second.value = ov.value;
        else
            it->second.value *= ov.value;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feedback loops
// ---------------------------------------------------------------------------

namespace {

// Possible-sign set of an expression's value: any subset of {negative, zero,
// positive}. Constants contribute the sign of their value; auxiliaries and
// flows resolve through their equations (the instantaneous graph is acyclic
// for valid models); stocks are unbounded.
struct SignSet {
    bool neg = false, zero = false, pos = false;

    static SignSet all() { return {true, true, true}; }
    static SignSet of(double v) {
        if (v < 0) return {true, false, false};
        if (v > 0) return {false, false, true};
        return {false, true, false};
    }
    bool operator==(const SignSet&) const = default;
    SignSet unite(SignSet o) const {
        return {neg || o.neg, zero || o.zero, pos || o.pos};
    }
    SignSet negate() const { return {pos, zero, neg}; }
    bool only_nonneg() const { return !neg; }
    bool only_nonpos() const { return !pos; }
    bool only_pos() const { return pos && !neg && !zero; }
    bool only_neg() const { return neg && !pos && !zero; }
};

SignSet sign_add(SignSet a, SignSet b) {
    SignSet r;
    auto each = [&](bool an, bool az, bool ap) {
        if (an) { if (b.neg) r.neg = true; if (b.zero) r.neg = true; if (b.pos) r = r.unite(SignSet::all()); }
        if (az) { r = r.unite(b); }
        if (ap) { if (b.pos) r.pos = true; if (b.zero) r.pos = true; if (b.neg) r = r.unite(SignSet::all()); }
    };
    each(a.neg, a.zero, a.pos);
    return r;
}

SignSet sign_mul(SignSet a, SignSet b) {
    SignSet r;
    if (a.zero || b.zero) r.zero = true;
    if ((a.neg && b.neg) || (a.pos && b.pos)) r.pos = true;
    if ((a.neg && b.pos) || (a.pos && b.neg)) r.neg = true;
    return r;
}

SignSet sign_min(SignSet a, SignSet b) {
    // lower bound of {a,b}: can be negative if either can; positive only if both can.
    SignSet r;
    r.neg = a.neg || b.neg;
    r.pos = a.pos && b.pos;
    r.zero = (a.zero && (b.zero || b.pos)) || (b.zero && (a.zero || a.pos));
    return r;
}

SignSet sign_max(SignSet a, SignSet b) {
    return sign_min(a.negate(), b.negate()).negate();
}

class SignAnalyzer {
  public:
    explicit SignAnalyzer(const Model& m) : model_(m) {}

    SignSet of_expr(const Expr& e) {
        return std::visit(
            [&](const auto& n) -> SignSet {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Expr::Number>) {
                    if (std::isnan(n.value)) return SignSet::all();
                    return SignSet::of(n.value);
                } else if constexpr (std::is_same_v<T, Expr::VarRef>) {
                    return of_var(n.name);
                } else if constexpr (std::is_same_v<T, Expr::Negate>) {
                    return of_expr(*n.operand).negate();
                } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                    SignSet a = of_expr(*n.lhs), b = of_expr(*n.rhs);
                    switch (n.op) {
                        case BinaryOp::Add: return sign_add(a, b);
                        case BinaryOp::Sub: return sign_add(a, b.negate());
                        case BinaryOp::Mul: return sign_mul(a, b);
                        case BinaryOp::Div:
                            if (b.only_pos()) return a;
                            if (b.only_neg()) return a.negate();
                            return SignSet::all();
                        case BinaryOp::Pow:
                            if (a.only_pos()) return {false, false, true};
                            return SignSet::all();
                    }
                    return SignSet::all();
                } else {
                    return of_call(n);
                }
            },
            e.node);
    }

  private:
    SignSet of_call(const Expr::Call& c) {
        switch (c.fn) {
            case Builtin::Min: return sign_min(of_expr(*c.args[0]), of_expr(*c.args[1]));
            case Builtin::Max: return sign_max(of_expr(*c.args[0]), of_expr(*c.args[1]));
            case Builtin::Clamp: {
                // result lies between lo and hi
                SignSet lo = of_expr(*c.args[1]), hi = of_expr(*c.args[2]);
                SignSet r = lo.unite(hi);
                if (lo.neg && hi.pos) r.zero = true;  // interval hull spans 0
                return r;
            }
            case Builtin::IfPositive:
                return of_expr(*c.args[1]).unite(of_expr(*c.args[2]));
            case Builtin::Step: {
                SignSet h = of_expr(*c.args[0]);
                h.zero = true;  // 0 before start_time
                return h;
            }
            case Builtin::Ramp: {
                SignSet m = of_expr(*c.args[0]);
                m.zero = true;  // 0 before start_time, slope*(t-s) after
                return m;
            }
            case Builtin::Smooth:
            case Builtin::DelayFixed:
                // values stay within the input's historical range
                return of_expr(*c.args[0]);
            case Builtin::Lookup: {
                auto it = model_.tables.find(c.table);
                if (it == model_.tables.end()) return SignSet::all();
                SignSet r;
                for (const auto& [x, y] : it->second.points) r = r.unite(SignSet::of(y));
                if (r.neg && r.pos) r.zero = true;  // interpolation crosses 0
                return r;
            }
        }
        return SignSet::all();
    }

    SignSet of_var(const Identifier& id) {
        if (auto it = memo_.find(id); it != memo_.end()) return it->second;
        const Variable* v = model_.find(id);
        SignSet r = SignSet::all();
        if (v) {
            switch (v->kind) {
                case VarKind::Constant: r = SignSet::of(v->value); break;
                case VarKind::Auxiliary:
                case VarKind::Flow:
                    if (v->equation) {
                        if (visiting_.count(id)) {
                            r = SignSet::all();  // defensive; valid models are acyclic
                        } else {
                            visiting_.insert(id);
                            r = of_expr(*v->equation);
                            visiting_.erase(id);
                        }
                    }
                    break;
                case VarKind::Stock: r = SignSet::all(); break;
            }
        }
        memo_[id] = r;
        return r;
    }

    const Model& model_;
    std::map<Identifier, SignSet> memo_;
    std::set<Identifier> visiting_;
};

enum class LinkSign { Positive, Negative, Indeterminate };

LinkSign combine_occurrence(LinkSign acc, LinkSign occ) {
    if (acc == occ) return acc;
    return LinkSign::Indeterminate;
}

// Sign of the occurrence context: +1 entering, flipped by subtrahends,
// negation and divisors; multiplicands take the structural sign of their
// cofactor; LOOKUP arguments, STEP arguments, IF_POSITIVE conditions and
// pow operands are indeterminate.
class LinkSignAnalyzer {
  public:
    explicit LinkSignAnalyzer(const Model& m) : signs_(m) {}

    // Sign of the edge u -> owner where owner's defining expression is e.
    // Returns nullopt when u does not occur in e.
    std::optional<LinkSign> edge_sign(const Expr& e, const Identifier& u) {
        found_ = false;
        acc_ = LinkSign::Positive;
        walk(e, u, 1);
        if (!found_) return std::nullopt;
        return acc_;
    }

  private:
    void record(int polarity) {
        LinkSign occ = polarity > 0    ? LinkSign::Positive
                       : polarity < 0  ? LinkSign::Negative
                                       : LinkSign::Indeterminate;
        if (!found_) {
            acc_ = occ;
            found_ = true;
        } else {
            acc_ = combine_occurrence(acc_, occ);
        }
    }

    // polarity: +1 preserving, -1 reversing, 0 indeterminate
    void walk(const Expr& e, const Identifier& u, int polarity) {
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Expr::VarRef>) {
                    if (n.name == u) record(polarity);
                } else if constexpr (std::is_same_v<T, Expr::Negate>) {
                    walk(*n.operand, u, -polarity);
                } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                    switch (n.op) {
                        case BinaryOp::Add:
                            walk(*n.lhs, u, polarity);
                            walk(*n.rhs, u, polarity);
                            break;
                        case BinaryOp::Sub:
                            walk(*n.lhs, u, polarity);
                            walk(*n.rhs, u, -polarity);
                            break;
                        case BinaryOp::Mul: {
                            walk(*n.lhs, u, cofactor(polarity, *n.rhs));
                            walk(*n.rhs, u, cofactor(polarity, *n.lhs));
                            break;
                        }
                        case BinaryOp::Div: {
                            walk(*n.lhs, u, cofactor(polarity, *n.rhs));
                            walk(*n.rhs, u, -polarity);  // divisor reverses
                            break;
                        }
                        case BinaryOp::Pow:
                            walk(*n.lhs, u, 0);
                            walk(*n.rhs, u, 0);
                            break;
                    }
                } else if constexpr (std::is_same_v<T, Expr::Call>) {
                    switch (n.fn) {
                        case Builtin::Min:
                        case Builtin::Max:
                            walk(*n.args[0], u, polarity);
                            walk(*n.args[1], u, polarity);
                            break;
                        case Builtin::Clamp:
                            // monotone non-decreasing in all three arguments
                            for (const auto& a : n.args) walk(*a, u, polarity);
                            break;
                        case Builtin::IfPositive:
                            walk(*n.args[0], u, 0);  // switching condition
                            walk(*n.args[1], u, polarity);
                            walk(*n.args[2], u, polarity);
                            break;
                        case Builtin::Step:
                            walk(*n.args[0], u, 0);
                            walk(*n.args[1], u, 0);
                            break;
                        case Builtin::Ramp:
                            walk(*n.args[0], u, polarity);  // slope, (t-s) >= 0
                            walk(*n.args[1], u, 0);
                            break;
                        case Builtin::Smooth:
                        case Builtin::DelayFixed:
                            walk(*n.args[0], u, polarity);
                            walk(*n.args[1], u, 0);
                            break;
                        case Builtin::Lookup:
                            walk(*n.args[0], u, 0);  // tables may be non-monotone
                            break;
                    }
                }
            },
            e.node);
    }

    int cofactor(int polarity, const Expr& other) {
        if (polarity == 0) return 0;
        SignSet s = signs_.of_expr(other);
        if (s.only_nonneg()) return polarity;
        if (s.only_nonpos()) return -polarity;
        return 0;
    }

    SignAnalyzer signs_;
    bool found_ = false;
    LinkSign acc_ = LinkSign::Positive;
};

struct Edge {
    int to;
    LinkSign sign;
};

}  // namespace

std::vector<FeedbackLoop> find_feedback_loops(const Model& m) {
    if (auto diags = validate_model(m); !diags.empty())
        throw std::invalid_argument("find_feedback_loops: invalid model: " +
                                    diags.front().message);

    // Node order is lexicographic; all cycle enumeration follows it.
    std::vector<Identifier> nodes;
    for (const auto& [id, v] : m.variables) nodes.push_back(id);
    std::map<Identifier, int> index;
    for (size_t i = 0; i < nodes.size(); ++i) index[nodes[i]] = static_cast<int>(i);

    LinkSignAnalyzer link_signs(m);
    std::vector<std::vector<Edge>> adj(nodes.size());
    auto add_edge = [&](const Identifier& from, const Identifier& to, LinkSign s) {
        adj[index[from]].push_back({index[to], s});
    };

    for (const auto& [id, v] : m.variables) {
        if (v.equation) {
            std::vector<Identifier> refs;
            collect_refs(*v.equation, refs);
            std::sort(refs.begin(), refs.end());
            refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
            for (const auto& r : refs) {
                if (!m.find(r)) continue;
                auto s = link_signs.edge_sign(*v.equation, r);
                if (s) add_edge(r, id, *s);
            }
        }
        if (v.kind == VarKind::Flow) {
            if (v.into) add_edge(id, *v.into, LinkSign::Positive);
            if (v.outof) add_edge(id, *v.outof, LinkSign::Negative);
        }
    }
    for (auto& edges : adj) {
        std::sort(edges.begin(), edges.end(),
                  [](const Edge& a, const Edge& b) { return a.to < b.to; });
        // merge parallel edges (e.g. a flow attached INTO and OUTOF the same
        // stock); conflicting signs become indeterminate
        std::vector<Edge> merged;
        for (const auto& e : edges) {
            if (!merged.empty() && merged.back().to == e.to) {
                if (merged.back().sign != e.sign)
                    merged.back().sign = LinkSign::Indeterminate;
            } else {
                merged.push_back(e);
            }
        }
        edges = std::move(merged);
    }

    // Johnson's elementary-cycle enumeration. Starting vertices ascend, so
    // every cycle is reported rooted at its smallest member.
    std::vector<FeedbackLoop> loops;
    const int n = static_cast<int>(nodes.size());
    std::vector<bool> blocked(n, false);
    std::vector<std::set<int>> block_map(n);
    std::vector<int> stack;

    auto classify = [&](const std::vector<int>& cycle) {
        bool negative = false, indeterminate = false, has_stock = false;
        for (size_t i = 0; i < cycle.size(); ++i) {
            int from = cycle[i];
            int to = cycle[(i + 1) % cycle.size()];
            if (m.find(nodes[from])->kind == VarKind::Stock) has_stock = true;
            for (const auto& e : adj[from]) {
                if (e.to == to) {
                    if (e.sign == LinkSign::Negative) negative = !negative;
                    if (e.sign == LinkSign::Indeterminate) indeterminate = true;
                    break;
                }
            }
        }
        if (!has_stock) return;  // validated models cannot reach this
        FeedbackLoop loop;
        for (int ix : cycle) loop.cycle.push_back(nodes[ix]);
        loop.polarity = indeterminate ? Polarity::Undetermined
                        : negative    ? Polarity::Balancing
                                      : Polarity::Reinforcing;
        loops.push_back(std::move(loop));
    };

    int root = 0;
    auto unblock = [&](auto&& self, int v) -> void {
        blocked[v] = false;
        for (int w : std::vector<int>(block_map[v].begin(), block_map[v].end())) {
            block_map[v].erase(w);
            if (blocked[w]) self(self, w);
        }
    };

    auto circuit = [&](auto&& self, int v) -> bool {
        bool found = false;
        stack.push_back(v);
        blocked[v] = true;
        for (const auto& e : adj[v]) {
            if (e.to < root) continue;
            if (e.to == root) {
                classify(stack);
                found = true;
            } else if (!blocked[e.to]) {
                if (self(self, e.to)) found = true;
            }
        }
        if (found) {
            unblock(unblock, v);
        } else {
            for (const auto& e : adj[v]) {
                if (e.to < root) continue;
                block_map[e.to].insert(v);
            }
        }
        stack.pop_back();
        return found;
    };

    for (root = 0; root < n; ++root) {
        std::fill(blocked.begin(), blocked.end(), false);
        for (auto& s : block_map) s.clear();
        stack.clear();
        circuit(circuit, root);
    }
    return loops;
}

}  // namespace sd
