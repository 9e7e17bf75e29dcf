#include "scl/problem_io.hpp"

#include "scl/errors.hpp"
#include "scl/expression.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <set>

namespace scl {

namespace {

void require_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

double number(const Json& j, const std::string& what) {
    if (!j.is_number()) throw ConfigError(what + " must be a number");
    return j.get<double>();
}

}  // namespace

Vec vec_from_json(const Json& j, const std::string& what) {
    if (j.is_number()) return Vec::Constant(1, j.get<double>());
    if (!j.is_array()) throw ConfigError(what + " must be a number or an array of numbers");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], what);
    return v;
}

Mat mat_from_json(const Json& j, const std::string& what) {
    if (j.is_number()) return Mat::Constant(1, 1, j.get<double>());
    if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a nested array of numbers");
    const std::size_t rows = j.size();
    if (!j[0].is_array()) throw ConfigError(what + " must be a nested array (rows of numbers)");
    const std::size_t cols = j[0].size();
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(what + " has ragged rows");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number(j[r][c], what);
    }
    return m;
}

Json to_json(const Vec& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Json to_json(const Mat& m) {
    Json out = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(row);
    }
    return out;
}

namespace {

ControlSet control_set_from_json(const Json& j) {
    require_keys(j, {"box", "vertices", "grid"}, "control_set");
    ControlSet set;
    if (j.contains("box")) {
        require_keys(j["box"], {"lower", "upper"}, "control_set.box");
        set = ControlSet::box(vec_from_json(j["box"].at("lower"), "box lower"),
                              vec_from_json(j["box"].at("upper"), "box upper"));
    } else if (j.contains("vertices")) {
        std::vector<Vec> verts;
        for (const auto& v : j["vertices"]) verts.push_back(vec_from_json(v, "vertex"));
        set = ControlSet::polytope(std::move(verts));
    } else {
        throw ConfigError("control_set needs 'box' or 'vertices'");
    }
    if (j.contains("grid")) {
        std::vector<Vec> grid;
        for (const auto& v : j["grid"]) grid.push_back(vec_from_json(v, "control_set grid entry"));
        set.set_sample_grid(std::move(grid));
    }
    return set;
}

std::vector<std::string> strings(const Json& j, const std::string& what) {
    if (!j.is_array()) throw ConfigError(what + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& s : j) {
        if (!s.is_string()) throw ConfigError(what + " must be an array of strings");
        out.push_back(s.get<std::string>());
    }
    return out;
}

}  // namespace

ControlProblem problem_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
        throw ConfigError("problem needs a string 'kind'");
    const std::string kind = j["kind"].get<std::string>();
    if (kind == "example33" || kind == "example33_no_terminal" || kind == "example34" || kind == "sine") {
        require_keys(j, {"kind"}, "problem");
        if (kind == "example33") return presets::example33();
        if (kind == "example33_no_terminal") return presets::example33_no_terminal();
        if (kind == "example34") return presets::example34();
        return presets::sine();
    }
    if (kind == "lq") {
        require_keys(j, {"kind", "T", "x0", "A", "B", "C", "D", "R", "M", "N", "G", "control_set"}, "problem");
        LqMatrices d;
        auto get = [&](const char* key, Mat& out) {
            if (j.contains(key)) out = mat_from_json(j[key], key);
        };
        get("A", d.A), get("B", d.B), get("C", d.C), get("D", d.D);
        get("R", d.R), get("M", d.M), get("N", d.N), get("G", d.G);
        const double T = j.contains("T") ? number(j["T"], "T") : 1.0;
        return make_lq_problem(d, T, vec_from_json(j.at("x0"), "x0"), control_set_from_json(j.at("control_set")));
    }
    if (kind == "custom-expr") {
        require_keys(j,
                     {"kind", "name", "n", "m", "T", "x0", "drift", "diffusion", "running_cost", "terminal_cost",
                      "control_set", "lipschitz_bound"},
                     "problem");
        ExpressionProblemSpec s;
        if (j.contains("name")) s.name = j["name"].get<std::string>();
        s.n = j.at("n").get<int>();
        s.m = j.at("m").get<int>();
        s.horizon = j.contains("T") ? number(j["T"], "T") : 1.0;
        s.x0 = vec_from_json(j.at("x0"), "x0");
        s.drift = strings(j.at("drift"), "drift");
        s.diffusion = strings(j.at("diffusion"), "diffusion");
        if (j.contains("running_cost")) s.running_cost = j["running_cost"].get<std::string>();
        if (j.contains("terminal_cost")) s.terminal_cost = j["terminal_cost"].get<std::string>();
        if (j.contains("lipschitz_bound")) s.lipschitz_bound = number(j["lipschitz_bound"], "lipschitz_bound");
        s.control_set = control_set_from_json(j.at("control_set"));
        return make_expression_problem(s);
    }
    throw ConfigError("unknown problem kind '" + kind + "'");
}

AdmissibleControl control_from_json(const Json& j, int dim, const std::string& what) {
    require_keys(j, {"constant", "expressions"}, what);
    if (j.contains("constant")) {
        Vec v = vec_from_json(j["constant"], what);
        if (v.size() != dim) throw ConfigError(what + " has dimension " + std::to_string(v.size()) + ", expected " +
                                               std::to_string(dim));
        return AdmissibleControl::constant(std::move(v));
    }
    if (!j.contains("expressions")) throw ConfigError(what + " needs 'constant' or 'expressions'");
    const auto texts = strings(j["expressions"], what);
    if (static_cast<int>(texts.size()) != dim) throw ConfigError(what + " needs one expression per control");
    const expr::VariableLayout layout{0, 0};
    std::vector<expr::Expression> ex;
    bool random = false;
    for (const auto& t : texts) {
        ex.push_back(expr::Expression::parse(t, layout));
        random = random || ex.back().depends_on(layout.brownian_slot());
    }
    if (random) {
        return AdmissibleControl::path_functional(
            [ex](double t, const Noise& nz, Vec& out) {
                const std::array<double, 2> slots{t, nz.w};
                out.resize(static_cast<Eigen::Index>(ex.size()));
                for (std::size_t i = 0; i < ex.size(); ++i) out(static_cast<Eigen::Index>(i)) = ex[i].evaluate(slots);
            },
            dim);
    }
    return AdmissibleControl::time_function(
        [ex](double t) {
            const std::array<double, 2> slots{t, 0.0};
            Vec out(static_cast<Eigen::Index>(ex.size()));
            for (std::size_t i = 0; i < ex.size(); ++i) out(static_cast<Eigen::Index>(i)) = ex[i].evaluate(slots);
            return out;
        },
        dim);
}

namespace {

std::vector<double> ladder_from_json(const Json& j, const std::string& what) {
    const Vec v = vec_from_json(j, what);
    return {v.data(), v.data() + v.size()};
}

void check_ladder(const std::vector<double>& l, const std::string& what) {
    for (std::size_t i = 0; i < l.size(); ++i) {
        if (!(l[i] > 0.0)) throw ConfigError(what + " entries must be positive");
        if (i > 0 && !(l[i] < l[i - 1])) throw ConfigError(what + " must be strictly decreasing");
    }
}

}  // namespace

RunConfig parse_run_config(Json j, const std::string& base_dir) {
    try {
        require_keys(j,
                     {"problem", "problem_file", "ubar", "direction", "paths", "steps", "seed", "eps_ladder",
                      "theta_ladder", "taus", "tau_count", "v_grid", "method", "degree", "k_sigma", "order", "form",
                      "malliavin", "out"},
                     "configuration");
        RunConfig c;
        if (j.contains("problem_file")) {
            if (j.contains("problem")) throw ConfigError("give either 'problem' or 'problem_file', not both");
            std::filesystem::path f = j["problem_file"].get<std::string>();
            if (f.is_relative()) f = std::filesystem::path(base_dir) / f;
            std::ifstream is(f);
            if (!is) throw ConfigError("cannot read problem file " + f.string());
            j["problem"] = Json::parse(is);
            j.erase("problem_file");
        }
        if (!j.contains("problem")) throw ConfigError("configuration needs a 'problem'");
        c.problem = problem_from_json(j["problem"]);
        const int m = c.problem.control_dim;

        if (j.contains("ubar")) {
            c.ubar = control_from_json(j["ubar"], m, "ubar");
        } else {
            c.ubar = AdmissibleControl::constant(Vec::Zero(m));
            j["ubar"] = Json{{"constant", to_json(Vec(Vec::Zero(m)))}};
        }
        if (j.contains("direction")) {
            c.direction = control_from_json(j["direction"], m, "direction");
        } else {
            const auto& set = c.problem.control_set;
            const Vec target = set.kind() == ControlSet::Kind::Box ? set.upper() : set.vertices().front();
            c.direction = AdmissibleControl::constant(target);
            j["direction"] = Json{{"constant", to_json(target)}};
        }
        if (j.contains("paths")) c.paths = j["paths"].get<std::size_t>();
        if (j.contains("steps")) c.steps = j["steps"].get<std::size_t>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("eps_ladder")) c.eps_ladder = ladder_from_json(j["eps_ladder"], "eps_ladder");
        if (j.contains("theta_ladder")) c.theta_ladder = ladder_from_json(j["theta_ladder"], "theta_ladder");
        if (j.contains("taus")) c.taus = ladder_from_json(j["taus"], "taus");
        if (j.contains("tau_count")) c.tau_count = j["tau_count"].get<std::size_t>();
        if (j.contains("v_grid"))
            for (const auto& v : j["v_grid"]) c.v_grid.push_back(vec_from_json(v, "v_grid entry"));
        if (j.contains("method")) c.method = adjoint_method_from_string(j["method"].get<std::string>());
        if (j.contains("degree")) c.degree = j["degree"].get<int>();
        if (j.contains("k_sigma")) c.k_sigma = number(j["k_sigma"], "k_sigma");
        if (j.contains("order")) c.order = j["order"].get<int>();
        if (j.contains("form")) c.form = j["form"].get<std::string>();
        if (j.contains("malliavin")) {
            require_keys(j["malliavin"], {"grad_S", "grad_ubar"}, "malliavin");
            if (j["malliavin"].contains("grad_S")) c.grad_S = j["malliavin"]["grad_S"].get<std::string>();
            if (j["malliavin"].contains("grad_ubar")) c.grad_ubar = j["malliavin"]["grad_ubar"].get<std::string>();
        }
        if (j.contains("out")) c.out = j["out"].get<std::string>();
        c.echo = std::move(j);
        finalize_run_config(c);
        return c;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed configuration: ") + e.what());
    }
}

RunConfig load_run_config(const std::string& file) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot read configuration " + file);
    Json j;
    try {
        j = Json::parse(is);
    } catch (const Json::exception& e) {
        throw ConfigError("configuration " + file + " is not valid JSON: " + e.what());
    }
    return parse_run_config(std::move(j), std::filesystem::path(file).parent_path().string());
}

void finalize_run_config(RunConfig& c) {
    if (c.paths < 100) throw ConfigError("paths must be at least 100 (got " + std::to_string(c.paths) + ")");
    if (c.steps < 16) throw ConfigError("steps must be at least 16 (got " + std::to_string(c.steps) + ")");
    check_ladder(c.eps_ladder, "eps_ladder");
    check_ladder(c.theta_ladder, "theta_ladder");
    if (c.degree < 0 || c.degree > 6) throw ConfigError("degree must lie in 0..6");
    if (!(c.k_sigma > 0.0)) throw ConfigError("k_sigma must be positive");
    if (c.order != 1 && c.order != 2) throw ConfigError("order must be 1 or 2");
    if (c.form != "integral" && c.form != "martingale" && c.form != "malliavin")
        throw ConfigError("form must be integral, martingale or malliavin");
    for (const auto* name : {&c.grad_S, &c.grad_ubar})
        if (!name->empty() && *name != "zero") throw ConfigError("unknown plug-in '" + *name + "' (only 'zero')");
    c.echo["paths"] = c.paths;
    c.echo["steps"] = c.steps;
    c.echo["seed"] = c.seed;
    c.echo["eps_ladder"] = c.eps_ladder;
    c.echo["theta_ladder"] = c.theta_ladder;
    c.echo["taus"] = c.taus;
    c.echo["tau_count"] = c.tau_count;
    c.echo["method"] = to_string(c.method);
    c.echo["degree"] = c.degree;
    c.echo["k_sigma"] = c.k_sigma;
    c.echo["order"] = c.order;
    c.echo["form"] = c.form;
    c.echo["out"] = c.out;
}

}  // namespace scl
