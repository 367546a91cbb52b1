#include "sdcore/parser.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

namespace sd {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string ParseError::to_string() const {
    std::ostringstream os;
    os << "line " << line << ", column " << column << ": " << message;
    if (!token.empty()) os << " (at '" << token << "')";
    return os.str();
}

namespace {

enum class Tok {
    Ident, Number, Newline, End,
    Plus, Minus, Star, Slash, Caret,
    LParen, RParen, Comma, Equals,
};

struct Token {
    Tok kind;
    std::string text;
    int line;
    int column;
};

struct ParseFail {
    ParseError err;
};

[[noreturn]] void fail(const Token& at, std::string message) {
    ParseError e;
    e.line = at.line;
    e.column = at.column;
    e.message = std::move(message);
    if (at.kind != Tok::End && at.kind != Tok::Newline) e.token = at.text;
    throw ParseFail{std::move(e)};
}

class Lexer {
  public:
    explicit Lexer(std::string_view text) : text_(text) {}

    std::vector<Token> run() {
        std::vector<Token> out;
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (c == '#') {
                while (pos_ < text_.size() && text_[pos_] != '\n') advance();
                continue;
            }
            if (c == '\n') {
                out.push_back(make(Tok::Newline, "\n"));
                advance();
                continue;
            }
            if (c == ' ' || c == '\t' || c == '\r') {
                advance();
                continue;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) ||
                (c == '.' && pos_ + 1 < text_.size() &&
                 std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))) {
                out.push_back(lex_number());
                continue;
            }
            if (c == '_' || std::isalpha(static_cast<unsigned char>(c))) {
                out.push_back(lex_ident());
                continue;
            }
            Tok kind;
            switch (c) {
                case '+': kind = Tok::Plus; break;
                case '-': kind = Tok::Minus; break;
                case '*': kind = Tok::Star; break;
                case '/': kind = Tok::Slash; break;
                case '^': kind = Tok::Caret; break;
                case '(': kind = Tok::LParen; break;
                case ')': kind = Tok::RParen; break;
                case ',': kind = Tok::Comma; break;
                case '=': kind = Tok::Equals; break;
                default:
                    fail(Token{Tok::Ident, std::string(1, c), line_, col_},
                         "unexpected character");
            }
            out.push_back(make(kind, std::string(1, c)));
            advance();
        }
        out.push_back(Token{Tok::End, "", line_, col_});
        return out;
    }

  private:
    Token make(Tok kind, std::string text) const {
        return Token{kind, std::move(text), line_, col_};
    }

    void advance() {
        if (text_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }

    Token lex_number() {
        Token t = make(Tok::Number, "");
        size_t start = pos_;
        auto digits = [&] {
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
                advance();
        };
        digits();
        if (pos_ < text_.size() && text_[pos_] == '.') {
            advance();
            digits();
        }
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            size_t mark = pos_;
            int mark_line = line_, mark_col = col_;
            advance();
            if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) advance();
            if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
                digits();
            } else {
                // not an exponent after all (e.g. `2e` followed by an ident)
                pos_ = mark;
                line_ = mark_line;
                col_ = mark_col;
            }
        }
        t.text = std::string(text_.substr(start, pos_ - start));
        return t;
    }

    Token lex_ident() {
        Token t = make(Tok::Ident, "");
        size_t start = pos_;
        while (pos_ < text_.size() &&
               (text_[pos_] == '_' || std::isalnum(static_cast<unsigned char>(text_[pos_]))))
            advance();
        t.text = std::string(text_.substr(start, pos_ - start));
        return t;
    }

    std::string_view text_;
    size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

const char* const kKeywords[] = {"MODEL", "STOCK", "FLOW", "AUX", "CONST",
                                 "TABLE", "INIT", "INTO", "OUTOF"};

bool is_keyword(const std::string& s) {
    return std::find_if(std::begin(kKeywords), std::end(kKeywords),
                        [&](const char* k) { return s == k; }) != std::end(kKeywords);
}

double parse_number_token(const Token& t) {
    std::string s = t.text;
    if (!s.empty() && s[0] == '.') s.insert(s.begin(), '0');
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        fail(t, "malformed number");
    return v;
}

class Parser {
  public:
    explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    Model parse_model_text() {
        Model m;
        skip_newlines();
        expect_keyword("MODEL");
        m.name = expect_ident("model name");
        expect_newline_or_end();
        while (!at_end()) {
            skip_newlines();
            if (at_end()) break;
            parse_statement(m);
        }
        return m;
    }

    ExprPtr parse_single_expression() {
        skip_newlines();
        ExprPtr e = parse_expr();
        skip_newlines();
        if (!at_end()) fail(peek(), "trailing input after expression");
        return e;
    }

  private:
    const Token& peek() const { return toks_[pos_]; }
    const Token& advance() { return toks_[pos_++]; }
    bool at_end() const { return peek().kind == Tok::End; }

    void skip_newlines() {
        while (peek().kind == Tok::Newline) advance();
    }

    bool match(Tok kind) {
        if (peek().kind == kind) {
            advance();
            return true;
        }
        return false;
    }

    void expect(Tok kind, const char* what) {
        if (!match(kind)) fail(peek(), std::string("expected ") + what);
    }

    void expect_keyword(const char* kw) {
        if (peek().kind != Tok::Ident || peek().text != kw)
            fail(peek(), std::string("expected '") + kw + "'");
        advance();
    }

    bool match_keyword(const char* kw) {
        if (peek().kind == Tok::Ident && peek().text == kw) {
            advance();
            return true;
        }
        return false;
    }

    Identifier expect_ident(const char* what) {
        if (peek().kind != Tok::Ident)
            fail(peek(), std::string("expected ") + what);
        if (is_keyword(peek().text))
            fail(peek(), "keyword '" + peek().text + "' cannot be used as " + what);
        return advance().text;
    }

    void expect_newline_or_end() {
        if (peek().kind == Tok::Newline) {
            advance();
            return;
        }
        if (peek().kind == Tok::End) return;
        fail(peek(), "expected end of line");
    }

    double expect_number() {
        bool neg = false;
        if (peek().kind == Tok::Minus || peek().kind == Tok::Plus)
            neg = advance().kind == Tok::Minus;
        if (peek().kind != Tok::Number) fail(peek(), "expected number");
        double v = parse_number_token(advance());
        return neg ? -v : v;
    }

    void define(Model& m, Variable v, const Token& at) {
        if (m.variables.count(v.id) || m.tables.count(v.id))
            fail(at, "duplicate definition of '" + v.id + "'");
        m.variables.emplace(v.id, std::move(v));
    }

    void parse_statement(Model& m) {
        const Token at = peek();
        if (match_keyword("STOCK")) {
            Variable v;
            v.kind = VarKind::Stock;
            v.id = expect_ident("stock name");
            expect_keyword("INIT");
            v.initial = parse_expr();
            expect_newline_or_end();
            define(m, std::move(v), at);
        } else if (match_keyword("FLOW")) {
            Variable v;
            v.kind = VarKind::Flow;
            v.id = expect_ident("flow name");
            if (match_keyword("INTO")) v.into = expect_ident("stock name");
            if (match_keyword("OUTOF")) v.outof = expect_ident("stock name");
            if (!v.into && !v.outof)
                fail(peek(), "flow '" + v.id + "' needs INTO and/or OUTOF");
            expect(Tok::Equals, "'='");
            v.equation = parse_expr();
            expect_newline_or_end();
            define(m, std::move(v), at);
        } else if (match_keyword("AUX")) {
            Variable v;
            v.kind = VarKind::Auxiliary;
            v.id = expect_ident("auxiliary name");
            expect(Tok::Equals, "'='");
            v.equation = parse_expr();
            expect_newline_or_end();
            define(m, std::move(v), at);
        } else if (match_keyword("CONST")) {
            Variable v;
            v.kind = VarKind::Constant;
            v.id = expect_ident("constant name");
            expect(Tok::Equals, "'='");
            v.value = expect_number();
            expect_newline_or_end();
            define(m, std::move(v), at);
        } else if (match_keyword("TABLE")) {
            Identifier id = expect_ident("table name");
            if (m.variables.count(id) || m.tables.count(id))
                fail(at, "duplicate definition of '" + id + "'");
            expect(Tok::Equals, "'='");
            LookupTable table;
            while (peek().kind == Tok::LParen) {
                advance();
                double x = expect_number();
                expect(Tok::Comma, "','");
                double y = expect_number();
                expect(Tok::RParen, "')'");
                table.points.emplace_back(x, y);
            }
            if (table.points.size() < 2)
                fail(peek(), "table '" + id + "' needs at least 2 breakpoints");
            expect_newline_or_end();
            m.tables.emplace(std::move(id), std::move(table));
        } else {
            fail(at, "expected STOCK, FLOW, AUX, CONST or TABLE");
        }
    }

    // expr := addsub;  addsub := muldiv (('+'|'-') muldiv)*
    // muldiv := unary (('*'|'/') unary)*;  unary := '-' unary | power
    // power := atom ('^' unary)?
    ExprPtr parse_expr() { return parse_addsub(); }

    ExprPtr parse_addsub() {
        ExprPtr lhs = parse_muldiv();
        for (;;) {
            if (match(Tok::Plus))
                lhs = make_binary(BinaryOp::Add, lhs, parse_muldiv());
            else if (match(Tok::Minus))
                lhs = make_binary(BinaryOp::Sub, lhs, parse_muldiv());
            else
                return lhs;
        }
    }

    ExprPtr parse_muldiv() {
        ExprPtr lhs = parse_unary();
        for (;;) {
            if (match(Tok::Star))
                lhs = make_binary(BinaryOp::Mul, lhs, parse_unary());
            else if (match(Tok::Slash))
                lhs = make_binary(BinaryOp::Div, lhs, parse_unary());
            else
                return lhs;
        }
    }

    ExprPtr parse_unary() {
        if (match(Tok::Minus)) return make_negate(parse_unary());
        return parse_power();
    }

    ExprPtr parse_power() {
        ExprPtr base = parse_atom();
        if (match(Tok::Caret)) return make_binary(BinaryOp::Pow, base, parse_unary());
        return base;
    }

    ExprPtr parse_atom() {
        const Token& t = peek();
        if (t.kind == Tok::Number) {
            advance();
            return make_number(parse_number_token(t));
        }
        if (t.kind == Tok::LParen) {
            advance();
            ExprPtr e = parse_expr();
            expect(Tok::RParen, "')'");
            return e;
        }
        if (t.kind == Tok::Ident) {
            if (is_keyword(t.text)) fail(t, "keyword '" + t.text + "' in expression");
            advance();
            if (peek().kind != Tok::LParen) return make_var(t.text);
            // call syntax is reserved for builtins
            auto fn = builtin_from_name(t.text);
            if (!fn) fail(t, "unknown builtin '" + t.text + "'");
            advance();  // '('
            if (*fn == Builtin::Lookup) {
                Identifier table = expect_ident("table name");
                expect(Tok::Comma, "','");
                ExprPtr arg = parse_expr();
                expect(Tok::RParen, "')'");
                return make_lookup(std::move(table), std::move(arg));
            }
            std::vector<ExprPtr> args;
            if (peek().kind != Tok::RParen) {
                args.push_back(parse_expr());
                while (match(Tok::Comma)) args.push_back(parse_expr());
            }
            expect(Tok::RParen, "')'");
            if (static_cast<int>(args.size()) != builtin_arity(*fn))
                fail(t, std::string(builtin_name(*fn)) + " takes " +
                            std::to_string(builtin_arity(*fn)) + " arguments");
            return make_call(*fn, std::move(args));
        }
        fail(t, "expected expression");
    }

    std::vector<Token> toks_;
    size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

// Precedence levels used for minimal parenthesization. Structure must be
// preserved exactly, so right operands of left-associative operators at equal
// precedence are parenthesized.
int precedence(const Expr& e) {
    return std::visit(
        [](const auto& n) -> int {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Expr::Binary>) {
                switch (n.op) {
                    case BinaryOp::Add:
                    case BinaryOp::Sub: return 1;
                    case BinaryOp::Mul:
                    case BinaryOp::Div: return 2;
                    case BinaryOp::Pow: return 4;
                }
                return 1;
            } else if constexpr (std::is_same_v<T, Expr::Negate>) {
                return 3;
            } else {
                return 5;
            }
        },
        e.node);
}

void write_expr(std::ostream& os, const Expr& e);

void write_child(std::ostream& os, const Expr& child, int min_prec) {
    if (precedence(child) < min_prec) {
        os << '(';
        write_expr(os, child);
        os << ')';
    } else {
        write_expr(os, child);
    }
}

void write_expr(std::ostream& os, const Expr& e) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Expr::Number>) {
                os << format_double(n.value);
            } else if constexpr (std::is_same_v<T, Expr::VarRef>) {
                os << n.name;
            } else if constexpr (std::is_same_v<T, Expr::Negate>) {
                os << '-';
                write_child(os, *n.operand, 3);
            } else if constexpr (std::is_same_v<T, Expr::Binary>) {
                const char* sym = "";
                int prec = precedence(e);
                switch (n.op) {
                    case BinaryOp::Add: sym = " + "; break;
                    case BinaryOp::Sub: sym = " - "; break;
                    case BinaryOp::Mul: sym = "*"; break;
                    case BinaryOp::Div: sym = "/"; break;
                    case BinaryOp::Pow: sym = "^"; break;
                }
                if (n.op == BinaryOp::Pow) {
                    // right-associative; exponent may start with unary minus
                    write_child(os, *n.lhs, prec + 1);
                    os << sym;
                    write_child(os, *n.rhs, 3);
                } else {
                    write_child(os, *n.lhs, prec);
                    os << sym;
                    write_child(os, *n.rhs, prec + 1);
                }
            } else {
                os << builtin_name(n.fn) << '(';
                if (n.fn == Builtin::Lookup) {
                    os << n.table << ", ";
                    write_expr(os, *n.args[0]);
                } else {
                    for (size_t i = 0; i < n.args.size(); ++i) {
                        if (i) os << ", ";
                        write_expr(os, *n.args[i]);
                    }
                }
                os << ')';
            }
        },
        e.node);
}

std::string expr_to_string(const Expr& e) {
    std::ostringstream os;
    write_expr(os, e);
    return os.str();
}

}  // namespace

ModelParse parse_model(std::string_view text) {
    try {
        Parser p(Lexer(text).run());
        return p.parse_model_text();
    } catch (const ParseFail& f) {
        return f.err;
    }
}

std::variant<ExprPtr, ParseError> parse_expression(std::string_view text) {
    try {
        Parser p(Lexer(text).run());
        return p.parse_single_expression();
    } catch (const ParseFail& f) {
        return f.err;
    }
}

std::string serialize_model(const Model& m) {
    std::ostringstream os;
    os << "MODEL " << m.name << '\n';
    auto emit_kind = [&](VarKind kind) {
        for (const auto& [id, v] : m.variables) {
            if (v.kind != kind) continue;
            switch (kind) {
                case VarKind::Stock:
                    os << "STOCK " << id << " INIT " << expr_to_string(*v.initial) << '\n';
                    break;
                case VarKind::Flow:
                    os << "FLOW " << id;
                    if (v.into) os << " INTO " << *v.into;
                    if (v.outof) os << " OUTOF " << *v.outof;
                    os << " = " << expr_to_string(*v.equation) << '\n';
                    break;
                case VarKind::Auxiliary:
                    os << "AUX " << id << " = " << expr_to_string(*v.equation) << '\n';
                    break;
                case VarKind::Constant:
                    os << "CONST " << id << " = " << format_double(v.value) << '\n';
                    break;
            }
        }
    };
    emit_kind(VarKind::Stock);
    emit_kind(VarKind::Flow);
    emit_kind(VarKind::Auxiliary);
    emit_kind(VarKind::Constant);
    for (const auto& [id, table] : m.tables) {
        os << "TABLE " << id << " =";
        for (const auto& [x, y] : table.points)
            os << " (" << format_double(x) << ", " << format_double(y) << ")";
        os << '\n';
    }
    return os.str();
}

OverrideParse parse_override_set(std::string_view text) {
    OverrideSet out;
    int line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos
                                                     ? std::string_view::npos
                                                     : eol - pos);
        ++line_no;
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;

        if (size_t hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);

        size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string_view::npos) continue;
        size_t end = line.find_last_not_of(" \t\r");
        std::string_view body = line.substr(begin, end - begin + 1);

        auto error = [&](std::string msg, std::string_view tok,
                         size_t col) -> OverrideParse {
            ParseError e;
            e.line = line_no;
            e.column = static_cast<int>(begin + col + 1);
            e.message = std::move(msg);
            e.token = std::string(tok);
            return e;
        };

        size_t star_eq = body.find("*=");
        size_t eq = body.find('=');
        bool is_scale = star_eq != std::string_view::npos && star_eq <= eq;
        size_t sep = is_scale ? star_eq : eq;
        if (sep == std::string_view::npos)
            return error("expected 'name = value' or 'name *= factor'", body, 0);

        std::string_view name_part = body.substr(0, sep);
        size_t name_end = name_part.find_last_not_of(" \t");
        if (name_end == std::string_view::npos)
            return error("missing override target", body, 0);
        std::string name(name_part.substr(0, name_end + 1));
        if (!is_valid_identifier(name))
            return error("invalid identifier", name, 0);

        std::string_view value_part = body.substr(sep + (is_scale ? 2 : 1));
        size_t vbegin = value_part.find_first_not_of(" \t");
        if (vbegin == std::string_view::npos)
            return error("missing value", body, sep);
        std::string vtext(value_part.substr(vbegin));
        bool negated = false;
        size_t voff = 0;
        if (voff < vtext.size() && (vtext[voff] == '-' || vtext[voff] == '+')) {
            negated = vtext[voff] == '-';
            ++voff;
        }
        std::string digits = vtext.substr(voff);
        if (!digits.empty() && digits[0] == '.') digits.insert(digits.begin(), '0');
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
        if (ec != std::errc{} || ptr != digits.data() + digits.size())
            return error("malformed number", vtext, sep + (is_scale ? 2 : 1) + vbegin);
        if (negated) value = -value;

        if (out.entries.count(name))
            return error("duplicate override target", name, 0);
        out.entries[name] =
            Override{is_scale ? Override::Kind::Scale : Override::Kind::Set, value};
    }
    return out;
}

std::string serialize_override_set(const OverrideSet& overrides) {
    std::ostringstream os;
    for (const auto& [id, ov] : overrides.entries) {
        os << id << (ov.kind == Override::Kind::Scale ? " *= " : " = ")
           << format_double(ov.value) << '\n';
    }
    return os.str();
}

}  // namespace sd
