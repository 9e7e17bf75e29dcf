#include "scl/adjoint.hpp"
#include "scl/errors.hpp"
#include "scl/hamiltonian.hpp"
#include "scl/malliavin.hpp"
#include "scl/problem_io.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace scl;

namespace {

// paths x nodes x rows x cols, column-major inside each block.
py::array_t<double> to_numpy(const PathTensor& t) {
    const auto d = static_cast<py::ssize_t>(sizeof(double));
    const auto r = static_cast<py::ssize_t>(t.rows()), c = static_cast<py::ssize_t>(t.cols());
    const auto k = static_cast<py::ssize_t>(t.nodes());
    std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(t.paths()), k, r, c};
    std::vector<py::ssize_t> strides{k * r * c * d, r * c * d, d, r * d};
    py::array_t<double> view(shape, strides, t.raw().data());
    return py::array_t<double>(view.request());  // copy owned by numpy
}

AdmissibleControl control_from(const ControlProblem& p, const py::object& u) {
    Vec v(p.control_dim);
    if (py::isinstance<py::float_>(u) || py::isinstance<py::int_>(u)) {
        v.setConstant(u.cast<double>());
    } else {
        const auto xs = u.cast<std::vector<double>>();
        if (static_cast<int>(xs.size()) != p.control_dim) throw ConfigError("control has the wrong dimension");
        for (int i = 0; i < p.control_dim; ++i) v(i) = xs[static_cast<std::size_t>(i)];
    }
    return AdmissibleControl::constant(v);
}

PathBundle run(const ControlProblem& p, const py::object& u, std::size_t steps, std::size_t paths,
               std::uint64_t seed) {
    py::gil_scoped_release release;
    return simulate_state(p, control_from(p, u), TimeGrid(steps, p.horizon), paths, seed);
}

ControlProblem preset(const std::string& name) {
    if (name == "example33") return presets::example33();
    if (name == "example34") return presets::example34();
    if (name == "sine") return presets::sine();
    if (name == "example33_no_terminal") return presets::example33_no_terminal();
    throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Second-order necessary-condition checks for stochastic optimal control";
    m.attr("__version__") = SCL_VERSION;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

    py::class_<ControlProblem>(m, "Problem")
        .def_readonly("name", &ControlProblem::name)
        .def_readonly("state_dim", &ControlProblem::state_dim)
        .def_readonly("control_dim", &ControlProblem::control_dim)
        .def_readonly("horizon", &ControlProblem::horizon)
        .def_property_readonly("is_lq", [](const ControlProblem& p) { return p.lq.has_value(); })
        .def("__repr__", [](const ControlProblem& p) {
            return "<Problem " + p.name + " n=" + std::to_string(p.state_dim) + " m=" + std::to_string(p.control_dim) +
                   ">";
        });

    m.def("preset", &preset, py::arg("name"), "example33 | example34 | sine | example33_no_terminal");
    m.def(
        "problem_from_json", [](const std::string& text) { return problem_from_json(Json::parse(text)); },
        py::arg("text"));

    m.def(
        "simulate",
        [](const ControlProblem& p, const py::object& u, std::size_t steps, std::size_t paths, std::uint64_t seed) {
            const auto b = run(p, u, steps, paths, seed);
            py::dict out;
            std::vector<double> t(b.grid().nodes());
            for (std::size_t k = 0; k < t.size(); ++k) t[k] = b.grid().t(k);
            out["t"] = t;
            out["x"] = to_numpy(b.x());
            out["W"] = to_numpy(b.brownian->W);
            return out;
        },
        py::arg("problem"), py::arg("ubar"), py::arg("steps") = 128, py::arg("paths") = 1000, py::arg("seed") = 1);

    m.def(
        "solve_adjoints",
        [](const ControlProblem& p, const py::object& u, std::size_t steps, std::size_t paths, std::uint64_t seed,
           const std::string& method) {
            const auto b = run(p, u, steps, paths, seed);
            AdjointOptions o;
            o.method = adjoint_method_from_string(method);
            AdjointSolution adj;
            {
                py::gil_scoped_release release;
                adj = solve_adjoints(p, b, o);
            }
            py::dict out;
            out["method"] = to_string(adj.method);
            out["p1"] = to_numpy(adj.p1);
            out["q1"] = to_numpy(adj.q1);
            out["p2"] = to_numpy(adj.p2);
            out["q2"] = to_numpy(adj.q2);
            return out;
        },
        py::arg("problem"), py::arg("ubar"), py::arg("steps") = 128, py::arg("paths") = 1000, py::arg("seed") = 1,
        py::arg("method") = "auto");

    m.def(
        "singularity",
        [](const ControlProblem& p, const py::object& u, std::size_t steps, std::size_t paths, std::uint64_t seed) {
            const auto b = run(p, u, steps, paths, seed);
            const auto fr = build_kernel_frames(p, b, solve_adjoints(p, b));
            const auto r = classical_singularity_check(fr);
            py::dict out;
            out["sup_Hu"] = r.sup_Hu;
            out["sup_Huu_plus"] = r.sup_Huu_plus;
            out["singular"] = r.singular;
            out["tolerance"] = r.tolerance;
            out["method"] = to_string(r.method);
            out["s_integrability"] = s_integrability_diagnostic(fr).mean;
            return out;
        },
        py::arg("problem"), py::arg("ubar"), py::arg("steps") = 128, py::arg("paths") = 1000, py::arg("seed") = 1);

    m.def(
        "riccati",
        [](const ControlProblem& p, std::size_t steps) {
            std::vector<py::array_t<double>> out;
            for (const auto& P : solve_lq_riccati(p, TimeGrid(steps, p.horizon))) {
                py::array_t<double> a({P.rows(), P.cols()});
                auto v = a.mutable_unchecked<2>();
                for (Eigen::Index i = 0; i < P.rows(); ++i)
                    for (Eigen::Index j = 0; j < P.cols(); ++j) v(i, j) = P(i, j);
                out.push_back(std::move(a));
            }
            return out;
        },
        py::arg("problem"), py::arg("steps") = 128, "P2 at every grid node for an LQ problem");

    m.def(
        "counterexample_ratio",
        [](const std::string& which, double tau, const std::vector<double>& thetas) {
            return counterexample_ratio(counterexample_from_string(which), tau, thetas);
        },
        py::arg("which"), py::arg("tau"), py::arg("thetas"));
    m.def("oscillating_thetas", &oscillating_thetas, py::arg("half_previous"), py::arg("count"));
}
