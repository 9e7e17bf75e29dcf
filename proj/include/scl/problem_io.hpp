#pragma once

#include "scl/adjoint.hpp"
#include "scl/problem.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace scl {

using Json = nlohmann::json;

Vec vec_from_json(const Json& j, const std::string& what);
Mat mat_from_json(const Json& j, const std::string& what);
Json to_json(const Vec& v);
Json to_json(const Mat& m);

// {"kind": "example33" | "example33_no_terminal" | "example34" | "sine" | "lq" | "custom-expr", ...}
ControlProblem problem_from_json(const Json& j);

// {"constant": [...]} or {"expressions": ["...", ...]} over t and w.
AdmissibleControl control_from_json(const Json& j, int dim, const std::string& what);

struct RunConfig {
    Json echo;  // the effective configuration, echoed into reports
    ControlProblem problem;
    AdmissibleControl ubar;
    AdmissibleControl direction;  // convex target for integral, expansion and quadratic-form checks
    std::size_t paths = 4000;
    std::size_t steps = 512;
    std::uint64_t seed = 1;
    std::vector<double> eps_ladder{0.2, 0.1, 0.05, 0.025};
    std::vector<double> theta_ladder;
    std::vector<double> taus;
    std::size_t tau_count = 8;
    std::vector<Vec> v_grid;
    AdjointMethod method = AdjointMethod::Auto;
    int degree = 2;
    double k_sigma = 3.0;
    int order = 2;
    std::string form = "martingale";
    std::string grad_S;     // plug-in names: "zero", "" when absent
    std::string grad_ubar;
    std::string out = "scl_out";
};

// Parses and gates a configuration; relative problem_file paths resolve against base_dir.
RunConfig parse_run_config(Json j, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& file);
// Re-checks the gates after command-line overrides and refreshes the echo.
void finalize_run_config(RunConfig& cfg);

}  // namespace scl
