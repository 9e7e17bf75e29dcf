#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace scl::expr {

struct Node;

// Variable slots for a problem with state dimension n and control dimension m:
// t -> 0, x[i] -> 1 + i, u[j] -> 1 + n + j, w (current Brownian value) -> 1 + n + m.
struct VariableLayout {
    int state_dim = 0;
    int control_dim = 0;

    int time_slot() const { return 0; }
    int state_slot(int i) const { return 1 + i; }
    int control_slot(int j) const { return 1 + state_dim + j; }
    int brownian_slot() const { return 1 + state_dim + control_dim; }
    int slot_count() const { return 2 + state_dim + control_dim; }
};

// Immutable arithmetic expression over t, x[i], u[j], w with
// + - * / ^, pow(a,b), sin, cos, exp, log, sqrt and numeric constants.
// Indices inside x[...] and u[...] are zero based.
class Expression {
public:
    Expression();  // the constant 0

    static Expression parse(std::string_view text, const VariableLayout& layout);
    static Expression constant(double value);

    double evaluate(std::span<const double> slots) const;
    Expression derivative(int slot) const;
    bool depends_on(int slot) const;
    bool is_zero() const;
    std::string to_string() const;

private:
    explicit Expression(std::shared_ptr<const Node> root) : root_(std::move(root)) {}
    std::shared_ptr<const Node> root_;
};

}  // namespace scl::expr
