#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sd {

/// Variable names: [A-Za-z_][A-Za-z0-9_]*, case-sensitive, unique per model.
using Identifier = std::string;

bool is_valid_identifier(std::string_view s);

enum class BinaryOp { Add, Sub, Mul, Div, Pow };

enum class Builtin {
    Min,         // MIN(a, b)
    Max,         // MAX(a, b)
    Clamp,       // CLAMP(x, lo, hi)
    IfPositive,  // IF_POSITIVE(c, a, b) -> a if c > 0 else b
    Step,        // STEP(height, start_time)
    Ramp,        // RAMP(slope, start_time)
    Smooth,      // SMOOTH(input, delay_time), first-order exponential
    DelayFixed,  // DELAY_FIXED(input, delay_time), pipeline delay
    Lookup,      // LOOKUP(table_name, x)
};

std::string_view builtin_name(Builtin b);
int builtin_arity(Builtin b);  // expression arguments (Lookup: table name + 1 arg)
std::optional<Builtin> builtin_from_name(std::string_view name);

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

/// Immutable expression tree. Nodes are shared freely across threads.
struct Expr {
    struct Number {
        double value;
    };
    struct VarRef {
        Identifier name;
    };
    struct Negate {
        ExprPtr operand;
    };
    struct Binary {
        BinaryOp op;
        ExprPtr lhs;
        ExprPtr rhs;
    };
    struct Call {
        Builtin fn;
        Identifier table;  // Lookup only
        std::vector<ExprPtr> args;
    };

    using Node = std::variant<Number, VarRef, Negate, Binary, Call>;
    Node node;
};

ExprPtr make_number(double value);
ExprPtr make_var(Identifier name);
ExprPtr make_negate(ExprPtr operand);
ExprPtr make_binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs);
ExprPtr make_call(Builtin fn, std::vector<ExprPtr> args);
ExprPtr make_lookup(Identifier table, ExprPtr arg);

bool structurally_equal(const Expr& a, const Expr& b);

/// Collects every variable referenced by the expression (not table names).
void collect_refs(const Expr& e, std::vector<Identifier>& out);

/// Folds an expression built from literals, constants and pure arithmetic
/// (including MIN/MAX/CLAMP/IF_POSITIVE). Returns nullopt when the expression
/// depends on simulation state or time.
std::optional<double> fold_constant(const Expr& e,
                                    const std::map<Identifier, double>& constants);

enum class VarKind { Stock, Flow, Auxiliary, Constant };

std::string_view var_kind_name(VarKind k);

struct Variable {
    Identifier id;
    VarKind kind = VarKind::Auxiliary;
    ExprPtr equation;                  // Flow, Auxiliary
    ExprPtr initial;                   // Stock (constant-foldable)
    double value = 0.0;                // Constant
    std::optional<Identifier> into;    // Flow: stock receiving the inflow
    std::optional<Identifier> outof;   // Flow: stock drained by the outflow
};

/// Piecewise-linear table: >= 2 breakpoints, strictly increasing x.
struct LookupTable {
    std::vector<std::pair<double, double>> points;
};

struct Model {
    Identifier name;
    std::map<Identifier, Variable> variables;
    std::map<Identifier, LookupTable> tables;

    const Variable* find(const Identifier& id) const;
};

struct Diagnostic {
    enum class Code {
        UnresolvedReference,
        DuplicateIdentifier,
        InstantaneousCycle,
        DetachedFlow,
        BadFlowAttachment,
        MalformedLookup,
        NonConstantInitial,
        BadDelayTime,
        NonFiniteConstant,
        BadIdentifier,
    };
    Code code;
    Identifier subject;
    std::string message;
};

/// Structural validation; an empty result means the model is simulatable.
/// Defects are data, not exceptions.
std::vector<Diagnostic> validate_model(const Model& model);

/// Topological order of auxiliaries and flows by instantaneous dependency
/// (stock and constant references are exogenous within a step). Ties broken
/// lexicographically. Throws std::invalid_argument on invalid models.
std::vector<Identifier> evaluation_order(const Model& model);

enum class Polarity { Reinforcing, Balancing, Undetermined };

std::string_view polarity_name(Polarity p);

/// A closed walk through the full dependency graph (instantaneous edges plus
/// flow->stock integration edges). Every loop passes through a stock; the
/// cycle is rotated so its lexicographically smallest member comes first.
struct FeedbackLoop {
    std::vector<Identifier> cycle;
    Polarity polarity;
};

/// Enumerates all elementary cycles and classifies each by the product of
/// structural link signs. Requires a valid model.
std::vector<FeedbackLoop> find_feedback_loops(const Model& model);

struct Override {
    enum class Kind { Set, Scale };
    Kind kind = Kind::Set;
    double value = 0.0;
};

/// Constant replacements (Set) or multiplications (Scale), keyed by target.
struct OverrideSet {
    std::map<Identifier, Override> entries;

    bool empty() const { return entries.empty(); }
    void set(Identifier id, double value);
    void scale(Identifier id, double factor);
};

/// Returns a copy of the model with constants overridden. Targets must exist
/// and be Constants; throws std::invalid_argument otherwise.
Model apply_overrides(const Model& model, const OverrideSet& overrides);

}  // namespace sd
