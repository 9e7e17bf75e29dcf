#pragma once

#include "scl/adjoint.hpp"
#include "scl/conditions.hpp"
#include "scl/hamiltonian.hpp"
#include "scl/problem.hpp"
#include "scl/problem_io.hpp"

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace scl {

Json to_json(const ValidationReport& r);
Json to_json(const SingularityReport& r);
Json to_json(const ConditionReport& r);
// Standalone form with the run configuration attached.
Json to_json(const ConditionReport& r, const Json& config_echo);
Json to_json(const ExpansionReport& r);
Json to_json(const DplusReport& r);
Json to_json(const std::array<DualityResidual, 3>& r);
Json to_json(const std::vector<LadderPoint>& points);

// Wall-clock stage timings. Kept out of reports unless requested so that reruns
// with the same configuration produce byte-identical files.
class Timings {
public:
    void start(std::string stage);
    void stop();
    Json to_json() const;

private:
    std::vector<std::pair<std::string, double>> done_;
    std::string current_;
    std::chrono::steady_clock::time_point begin_;
};

// {"artifact": {...}, "kind": ..., "config_echo": ..., "result": ..., ["timings": ...]}
Json make_report(const std::string& kind, Json result, const Json& config_echo, const Timings* timings = nullptr);

void write_json(const std::string& file, const Json& j);
void write_condition_csv(const std::string& file, const ConditionReport& r);
void write_expansion_csv(const std::string& file, const ExpansionReport& r);

}  // namespace scl
