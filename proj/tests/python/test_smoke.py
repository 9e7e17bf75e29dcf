import math

import numpy as np
import pytest

import scl_toolkit as scl


def test_presets_and_version():
    p = scl.preset("example33")
    assert (p.state_dim, p.control_dim, p.horizon) == (1, 1, 1.0)
    assert p.is_lq
    assert scl.__version__
    with pytest.raises(ValueError):
        scl.preset("nope")


def test_simulate_shapes_and_reproducibility():
    p = scl.preset("sine")
    a = scl.simulate(p, 0.5, steps=32, paths=50, seed=3)
    b = scl.simulate(p, 0.5, steps=32, paths=50, seed=3)
    assert a["x"].shape == (50, 33, 1, 1)
    assert a["W"].shape == (50, 33, 1, 1)
    assert np.array_equal(a["x"], b["x"])
    assert np.allclose(a["x"][:, 0, 0, 0], 0.5)
    assert a["t"][-1] == 1.0


def test_example33_adjoints_and_singularity():
    p = scl.preset("example33")
    adj = scl.solve_adjoints(p, 0.0, steps=16, paths=100)
    assert adj["method"] == "analytic"
    assert np.all(adj["p1"] == 0.0)
    assert np.all(adj["p2"] == 1.0)
    s = scl.singularity(p, 0.0, steps=16, paths=100)
    assert s["singular"]
    assert s["sup_Hu"] < 1e-12
    assert s["s_integrability"] == pytest.approx(1.0)


def test_example34_riccati():
    p = scl.preset("example34")
    P = scl.riccati(p, steps=8)
    assert len(P) == 9
    assert np.array_equal(P[0], -np.diag([1.0, 0.0]))


def test_counterexamples():
    hi = scl.counterexample_ratio("osc", 0.0, scl.oscillating_thetas(True, 8))
    lo = scl.counterexample_ratio("osc", 0.0, scl.oscillating_thetas(False, 8))
    assert abs(hi[-1] - 1 / 8) < 1e-6
    assert abs(lo[-1] - 5 / 32) < 1e-6
    r = scl.counterexample_ratio("singular", 0.0, [1e-2])[0]
    assert r == pytest.approx(-4 / (3 * math.sqrt(1e-2)), rel=1e-6)


def test_problem_from_json():
    p = scl.problem_from_json('{"kind": "example34"}')
    assert p.state_dim == 2
