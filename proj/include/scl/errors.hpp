#pragma once

#include <stdexcept>
#include <string>

namespace scl {

// Base of every error raised by the toolkit. `module()` names the stage that
// failed so the CLI can print a tagged diagnostic.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(what), module_(std::move(module)) {}
    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

// Oracle outputs or inputs with the wrong shape.
class StructuralError : public Error {
public:
    explicit StructuralError(const std::string& what) : Error("problem_model", what) {}
};

// An oracle returned a non-finite value.
class OracleError : public Error {
public:
    explicit OracleError(const std::string& what) : Error("problem_model", what) {}
};

// NaN or overflow while stepping an SDE.
class IntegrationError : public Error {
public:
    IntegrationError(const std::string& what, std::size_t path, std::size_t node)
        : Error("forward_sim", what + " (path " + std::to_string(path) + ", node " +
                                   std::to_string(node) + ")"),
          path_(path), node_(node) {}
    std::size_t path() const noexcept { return path_; }
    std::size_t node() const noexcept { return node_; }

private:
    std::size_t path_;
    std::size_t node_;
};

// Fundamental matrix and its companion drifted apart.
class ConditioningError : public Error {
public:
    explicit ConditioningError(const std::string& what) : Error("forward_sim", what) {}
};

// Regression design is rank deficient.
class BasisError : public Error {
public:
    explicit BasisError(const std::string& what) : Error("adjoint_solver", what) {}
};

// Invalid user configuration (ladders, grids, missing plug-ins, ...).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

// Argument outside the admissible domain (control outside U, window past T).
class DomainError : public Error {
public:
    DomainError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

}  // namespace scl
