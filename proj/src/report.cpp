#include "scl/report.hpp"

#include "scl/errors.hpp"

#include <fstream>
#include <iomanip>

namespace scl {

Json to_json(const ValidationReport& r) {
    Json res = Json::array();
    for (const auto& o : r.residuals)
        res.push_back({{"oracle", o.oracle}, {"block", o.block}, {"max_error", o.max_error}, {"pass", o.pass}});
    return {{"residuals", res},
            {"issues", r.issues},
            {"tolerance", r.tolerance},
            {"max_symmetry_defect", r.max_symmetry_defect},
            {"max_first_derivative", r.max_first_derivative},
            {"control_set_ok", r.control_set_ok},
            {"pass", r.pass}};
}

Json to_json(const SingularityReport& r) {
    return {{"sup_Hu", r.sup_Hu},
            {"sup_Huu_plus", r.sup_Huu_plus},
            {"verdict", r.singular ? "singular" : "not_singular"},
            {"tolerance", r.tolerance},
            {"quantile", r.quantile},
            {"method", to_string(r.method)}};
}

Json to_json(const ConditionReport& r) {
    Json taus = r.tau_grid;
    Json vs = Json::array();
    for (const auto& v : r.v_grid) vs.push_back(to_json(v));
    Json cells = Json::array();
    for (const auto& c : r.cells) {
        Json cell = {{"tau", c.tau},
                     {"v", to_json(c.v)},
                     {"value", c.value},
                     {"stderr", c.std_error},
                     {"verdict", to_string(c.verdict)}};
        if (!std::isnan(c.max)) cell["max"] = c.max;
        cells.push_back(std::move(cell));
    }
    Json out = {{"condition", r.condition},
                {"grid", {{"tau", taus}, {"v", vs}}},
                {"cells", cells},
                {"global_verdict", to_string(r.global_verdict)}};
    if (!r.note.empty()) out["note"] = r.note;
    return out;
}

Json to_json(const ConditionReport& r, const Json& config_echo) {
    Json out = to_json(r);
    out["config_echo"] = config_echo;
    return out;
}

Json to_json(const ExpansionReport& r) {
    Json rows = Json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"eps", x.eps},
                        {"delta_J", x.delta_J},
                        {"delta_J_stderr", x.delta_J_se},
                        {"prediction", x.prediction},
                        {"residual", x.residual},
                        {"residual_stderr", x.residual_se},
                        {"residual_over_eps2", x.residual / (x.eps * x.eps)}});
    return {{"rows", rows}, {"converging", r.converging}};
}

Json to_json(const std::vector<LadderPoint>& points) {
    Json out = Json::array();
    for (const auto& p : points) out.push_back({{"theta", p.theta}, {"estimate", p.estimate}, {"stderr", p.std_error}});
    return out;
}

Json to_json(const DplusReport& r) {
    return {{"value", r.value}, {"stderr", r.std_error}, {"trace", to_json(r.trace)}};
}

Json to_json(const std::array<DualityResidual, 3>& r) {
    Json out = Json::array();
    for (const auto& d : r)
        out.push_back({{"identity", d.identity},
                       {"lhs", d.lhs},
                       {"integral", d.integral},
                       {"residual", d.residual},
                       {"stderr", d.std_error},
                       {"bias_allowance", d.bias_allowance},
                       {"pass", d.pass}});
    return out;
}

void Timings::start(std::string stage) {
    if (!current_.empty()) stop();
    current_ = std::move(stage);
    begin_ = std::chrono::steady_clock::now();
}

void Timings::stop() {
    if (current_.empty()) return;
    const std::chrono::duration<double> d = std::chrono::steady_clock::now() - begin_;
    done_.emplace_back(std::move(current_), d.count());
    current_.clear();
}

Json Timings::to_json() const {
    Json out = Json::object();
    for (const auto& [stage, s] : done_) out[stage] = s;
    return out;
}

Json make_report(const std::string& kind, Json result, const Json& config_echo, const Timings* timings) {
    Json out = {{"artifact", {{"name", "scl_toolkit"}, {"version", SCL_VERSION}}},
                {"kind", kind},
                {"config_echo", config_echo},
                {"result", std::move(result)}};
    if (timings) out["timings"] = timings->to_json();
    return out;
}

void write_json(const std::string& file, const Json& j) {
    std::ofstream os(file);
    if (!os) throw ConfigError("cannot open " + file + " for writing");
    os << j.dump(2) << "\n";
}

void write_condition_csv(const std::string& file, const ConditionReport& r) {
    std::ofstream os(file);
    if (!os) throw ConfigError("cannot open " + file + " for writing");
    os << "tau,v,value,stderr,verdict\n" << std::setprecision(17);
    for (const auto& c : r.cells) {
        os << c.tau << ",";
        for (Eigen::Index i = 0; i < c.v.size(); ++i) os << (i ? " " : "") << c.v(i);
        os << "," << c.value << "," << c.std_error << "," << to_string(c.verdict) << "\n";
    }
}

void write_expansion_csv(const std::string& file, const ExpansionReport& r) {
    std::ofstream os(file);
    if (!os) throw ConfigError("cannot open " + file + " for writing");
    os << "eps,delta_J,delta_J_stderr,prediction,residual,residual_stderr\n" << std::setprecision(17);
    for (const auto& x : r.rows)
        os << x.eps << "," << x.delta_J << "," << x.delta_J_se << "," << x.prediction << "," << x.residual << ","
           << x.residual_se << "\n";
}

}  // namespace scl
