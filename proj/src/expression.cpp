#include "scl/expression.hpp"

#include "scl/errors.hpp"

#include <cctype>
#include <cmath>
#include <sstream>
#include <vector>

namespace scl::expr {

enum class Op { Constant, Variable, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Exp, Log, Sqrt };

struct Node {
    Op op = Op::Constant;
    double value = 0.0;
    int slot = -1;
    std::shared_ptr<const Node> a;
    std::shared_ptr<const Node> b;
};

namespace {

using NodePtr = std::shared_ptr<const Node>;

NodePtr make_const(double v) {
    auto n = std::make_shared<Node>();
    n->op = Op::Constant;
    n->value = v;
    return n;
}

NodePtr make_var(int slot) {
    auto n = std::make_shared<Node>();
    n->op = Op::Variable;
    n->slot = slot;
    return n;
}

bool is_const(const NodePtr& n, double v) { return n->op == Op::Constant && n->value == v; }

// Builders fold constants and the obvious identities so derivatives stay small.
NodePtr make(Op op, NodePtr a, NodePtr b = nullptr) {
    if (a->op == Op::Constant && (!b || b->op == Op::Constant)) {
        const double x = a->value;
        const double y = b ? b->value : 0.0;
        switch (op) {
            case Op::Add: return make_const(x + y);
            case Op::Sub: return make_const(x - y);
            case Op::Mul: return make_const(x * y);
            case Op::Div: return make_const(x / y);
            case Op::Pow: return make_const(std::pow(x, y));
            case Op::Neg: return make_const(-x);
            case Op::Sin: return make_const(std::sin(x));
            case Op::Cos: return make_const(std::cos(x));
            case Op::Exp: return make_const(std::exp(x));
            case Op::Log: return make_const(std::log(x));
            case Op::Sqrt: return make_const(std::sqrt(x));
            default: break;
        }
    }
    switch (op) {
        case Op::Add:
            if (is_const(a, 0.0)) return b;
            if (is_const(b, 0.0)) return a;
            break;
        case Op::Sub:
            if (is_const(b, 0.0)) return a;
            if (is_const(a, 0.0)) return make(Op::Neg, b);
            break;
        case Op::Mul:
            if (is_const(a, 0.0) || is_const(b, 0.0)) return make_const(0.0);
            if (is_const(a, 1.0)) return b;
            if (is_const(b, 1.0)) return a;
            break;
        case Op::Div:
            if (is_const(a, 0.0)) return make_const(0.0);
            if (is_const(b, 1.0)) return a;
            break;
        case Op::Pow:
            if (is_const(b, 0.0)) return make_const(1.0);
            if (is_const(b, 1.0)) return a;
            break;
        case Op::Neg:
            if (a->op == Op::Neg) return a->a;
            break;
        default: break;
    }
    auto n = std::make_shared<Node>();
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
}

double eval(const Node& n, std::span<const double> slots) {
    switch (n.op) {
        case Op::Constant: return n.value;
        case Op::Variable: return slots[static_cast<std::size_t>(n.slot)];
        case Op::Add: return eval(*n.a, slots) + eval(*n.b, slots);
        case Op::Sub: return eval(*n.a, slots) - eval(*n.b, slots);
        case Op::Mul: return eval(*n.a, slots) * eval(*n.b, slots);
        case Op::Div: return eval(*n.a, slots) / eval(*n.b, slots);
        case Op::Pow: {
            const double base = eval(*n.a, slots);
            if (n.b->op == Op::Constant && n.b->value == 2.0) return base * base;
            return std::pow(base, eval(*n.b, slots));
        }
        case Op::Neg: return -eval(*n.a, slots);
        case Op::Sin: return std::sin(eval(*n.a, slots));
        case Op::Cos: return std::cos(eval(*n.a, slots));
        case Op::Exp: return std::exp(eval(*n.a, slots));
        case Op::Log: return std::log(eval(*n.a, slots));
        case Op::Sqrt: return std::sqrt(eval(*n.a, slots));
    }
    return 0.0;
}

bool depends(const Node& n, int slot) {
    if (n.op == Op::Variable) return n.slot == slot;
    if (n.op == Op::Constant) return false;
    return (n.a && depends(*n.a, slot)) || (n.b && depends(*n.b, slot));
}

NodePtr diff(const NodePtr& n, int slot) {
    if (!depends(*n, slot)) return make_const(0.0);
    const auto& a = n->a;
    const auto& b = n->b;
    switch (n->op) {
        case Op::Constant: return make_const(0.0);
        case Op::Variable: return make_const(1.0);
        case Op::Add: return make(Op::Add, diff(a, slot), diff(b, slot));
        case Op::Sub: return make(Op::Sub, diff(a, slot), diff(b, slot));
        case Op::Mul:
            return make(Op::Add, make(Op::Mul, diff(a, slot), b), make(Op::Mul, a, diff(b, slot)));
        case Op::Div:
            return make(Op::Div,
                        make(Op::Sub, make(Op::Mul, diff(a, slot), b), make(Op::Mul, a, diff(b, slot))),
                        make(Op::Mul, b, b));
        case Op::Pow:
            if (!depends(*b, slot)) {
                // d(a^c) = c a^(c-1) a'
                return make(Op::Mul,
                            make(Op::Mul, b, make(Op::Pow, a, make(Op::Sub, b, make_const(1.0)))),
                            diff(a, slot));
            }
            // d(a^b) = a^b (b' log a + b a'/a)
            return make(Op::Mul, n,
                        make(Op::Add, make(Op::Mul, diff(b, slot), make(Op::Log, a)),
                             make(Op::Div, make(Op::Mul, b, diff(a, slot)), a)));
        case Op::Neg: return make(Op::Neg, diff(a, slot));
        case Op::Sin: return make(Op::Mul, make(Op::Cos, a), diff(a, slot));
        case Op::Cos: return make(Op::Neg, make(Op::Mul, make(Op::Sin, a), diff(a, slot)));
        case Op::Exp: return make(Op::Mul, n, diff(a, slot));
        case Op::Log: return make(Op::Div, diff(a, slot), a);
        case Op::Sqrt:
            return make(Op::Div, diff(a, slot), make(Op::Mul, make_const(2.0), n));
    }
    return make_const(0.0);
}

void print(const Node& n, std::ostringstream& os) {
    auto bin = [&](const char* sym) {
        os << '(';
        print(*n.a, os);
        os << ' ' << sym << ' ';
        print(*n.b, os);
        os << ')';
    };
    auto fn = [&](const char* name) {
        os << name << '(';
        print(*n.a, os);
        os << ')';
    };
    switch (n.op) {
        case Op::Constant: os << n.value; break;
        case Op::Variable: os << "$" << n.slot; break;
        case Op::Add: bin("+"); break;
        case Op::Sub: bin("-"); break;
        case Op::Mul: bin("*"); break;
        case Op::Div: bin("/"); break;
        case Op::Pow: bin("^"); break;
        case Op::Neg: fn("-"); break;
        case Op::Sin: fn("sin"); break;
        case Op::Cos: fn("cos"); break;
        case Op::Exp: fn("exp"); break;
        case Op::Log: fn("log"); break;
        case Op::Sqrt: fn("sqrt"); break;
    }
}

class Parser {
public:
    Parser(std::string_view text, const VariableLayout& layout) : text_(text), layout_(layout) {}

    NodePtr parse() {
        auto root = expression();
        skip_space();
        if (pos_ != text_.size()) fail("unexpected trailing input");
        return root;
    }

private:
    [[noreturn]] void fail(const std::string& why) const {
        throw ConfigError("expression '" + std::string(text_) + "': " + why + " at offset " +
                          std::to_string(pos_));
    }

    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_space();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    NodePtr expression() {
        auto lhs = term();
        for (;;) {
            if (accept('+'))
                lhs = make(Op::Add, lhs, term());
            else if (accept('-'))
                lhs = make(Op::Sub, lhs, term());
            else
                return lhs;
        }
    }

    NodePtr term() {
        auto lhs = unary();
        for (;;) {
            if (accept('*'))
                lhs = make(Op::Mul, lhs, unary());
            else if (accept('/'))
                lhs = make(Op::Div, lhs, unary());
            else
                return lhs;
        }
    }

    NodePtr unary() {
        if (accept('-')) return make(Op::Neg, unary());
        if (accept('+')) return unary();
        return power();
    }

    NodePtr power() {
        auto base = primary();
        if (accept('^')) return make(Op::Pow, base, unary());
        return base;
    }

    int index_in_brackets(int bound, const char* what) {
        expect('[');
        skip_space();
        const std::size_t start = pos_;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        if (start == pos_) fail(std::string("expected index for ") + what);
        const int idx = std::stoi(std::string(text_.substr(start, pos_ - start)));
        expect(']');
        if (idx < 0 || idx >= bound)
            fail(std::string(what) + " index " + std::to_string(idx) + " out of range");
        return idx;
    }

    NodePtr primary() {
        skip_space();
        if (pos_ >= text_.size()) fail("unexpected end of input");
        const char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            auto inner = expression();
            expect(')');
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            const std::string rest(text_.substr(pos_));
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(rest, &used);
            } catch (...) {
                fail("bad number");
            }
            pos_ += used;
            return make_const(v);
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            const std::size_t start = pos_;
            while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
                                           text_[pos_] == '_'))
                ++pos_;
            const std::string name(text_.substr(start, pos_ - start));
            if (name == "t") return make_var(layout_.time_slot());
            if (name == "w") return make_var(layout_.brownian_slot());
            if (name == "x") return make_var(layout_.state_slot(index_in_brackets(layout_.state_dim, "x")));
            if (name == "u")
                return make_var(layout_.control_slot(index_in_brackets(layout_.control_dim, "u")));
            if (name == "pi") return make_const(3.141592653589793238462643383279502884);
            if (name == "pow") {
                expect('(');
                auto a = expression();
                expect(',');
                auto b = expression();
                expect(')');
                return make(Op::Pow, a, b);
            }
            Op op;
            if (name == "sin")
                op = Op::Sin;
            else if (name == "cos")
                op = Op::Cos;
            else if (name == "exp")
                op = Op::Exp;
            else if (name == "log")
                op = Op::Log;
            else if (name == "sqrt")
                op = Op::Sqrt;
            else
                fail("unknown identifier '" + name + "'");
            expect('(');
            auto arg = expression();
            expect(')');
            return make(op, arg);
        }
        fail(std::string("unexpected character '") + c + "'");
    }

    std::string_view text_;
    const VariableLayout& layout_;
    std::size_t pos_ = 0;
};

}  // namespace

Expression::Expression() : root_(make_const(0.0)) {}

Expression Expression::parse(std::string_view text, const VariableLayout& layout) {
    return Expression(Parser(text, layout).parse());
}

Expression Expression::constant(double value) { return Expression(make_const(value)); }

double Expression::evaluate(std::span<const double> slots) const { return eval(*root_, slots); }

Expression Expression::derivative(int slot) const { return Expression(diff(root_, slot)); }

bool Expression::depends_on(int slot) const { return depends(*root_, slot); }

bool Expression::is_zero() const { return is_const(root_, 0.0); }

std::string Expression::to_string() const {
    std::ostringstream os;
    print(*root_, os);
    return os.str();
}

}  // namespace scl::expr
