import numpy as np
import pytest

from landaulab.calculus import KineticField, SpatialLattice
from landaulab.cli import h1_gram
from landaulab.dynamics import random_field
from landaulab.micromacro import remove_Pi
from landaulab.norms import (LyapunovWeights, h1v_sq, hypo_inner_X, hypo_norm_X, lyapunov_E, lyapunov_U,
                             norm_report, norm_X, norm_Y1)


def test_norm_X_single_mode_closed_form(ops0):
    g = ops0.grid
    lat = SpatialLattice(1, 2)
    vals = np.zeros((lat.size, g.n), complex)
    i = lat.index[(1, 0, 0)]
    vals[i] = g.sqrtM
    f = KineticField(lat, g, vals)
    s = g.gamma / 2 + 1
    k2 = (2 * np.pi) ** 2
    expected = sum(g.w * np.sum(k2**j * g.bracket ** (2 * (3 - j) * s) * g.M) for j in range(4))
    assert norm_X(f) ** 2 == pytest.approx(expected, rel=1e-12)


def test_h1_norm_matches_dense_gram(ops0):
    g, B = ops0.grid, ops0.coll.tables.B
    f = (1 + g.v[:, 2] ** 2) * g.sqrtM
    G = h1_gram(g, B)
    assert float(h1v_sq(f, B, g)) == pytest.approx(f @ G @ f, rel=1e-10)


def _sample(ops, seed=0):
    lat = SpatialLattice(1, 2)
    return remove_Pi(random_field(lat, ops.grid, np.random.default_rng(seed), decay=0.3))


def test_lyapunov_functional_at_zero_is_hypocoercive_norm(ops0):
    f = _sample(ops0)
    B = ops0.coll.tables.B
    w = LyapunovWeights.from_eta(0.1)
    assert lyapunov_U(0.0, f, 0.25, B, w) == pytest.approx(hypo_inner_X(f, f, 0.25, 0.1), rel=1e-12)
    with pytest.raises(ValueError):
        lyapunov_U(-1.0, f, 0.25, B, w)
    assert lyapunov_E(0.0, f, 0.25, B, w) > 0


@pytest.mark.parametrize("eps", [1.0, 0.1])
def test_hypocoercive_norm_equivalent_to_X(ops0, eps):
    # for small eta the twisted norm is a perturbation of the X norm
    for seed in range(5):
        f = _sample(ops0, seed)
        r = hypo_norm_X(f, eps, 0.01) ** 2 / norm_X(f) ** 2
        assert 0.5 < r < 1.5


def test_hypocoercive_norm_rejects_mean(ops0):
    lat = SpatialLattice(1, 1)
    f = KineticField(lat, ops0.grid, np.tile(ops0.grid.sqrtM, (lat.size, 1)))
    with pytest.raises(ValueError):
        hypo_inner_X(f, f, 0.5, 0.1)


def test_norm_report_fields(ops0):
    f = _sample(ops0)
    rep = norm_report(f, ops0.coll.tables.B, 0.5)
    d = rep.as_dict()
    assert all(d[k] > 0 for k in ("H1vstar", "H2vstar", "X", "Y1", "Y2", "Z1eps", "hypo_L2", "hypo_X"))
    assert d["Y1"] == pytest.approx(norm_Y1(f, ops0.coll.tables.B))


def test_weights_from_eta_ordering():
    w = LyapunovWeights.from_eta(0.1)
    assert w.alpha1 > w.alpha2 > w.alpha3 > 0
