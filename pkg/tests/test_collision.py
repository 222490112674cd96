import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landaulab.calculus import VelocityGrid
from landaulab.collision import Collision
from landaulab.micromacro import kernel_basis


def test_L_symmetric_nonpositive_with_exact_kernel(small_coll):
    L = small_coll.L
    scale = np.max(np.abs(L))
    assert np.max(np.abs(L - L.T)) < 1e-12 * scale
    ev = np.linalg.eigvalsh(L)
    assert ev.max() < 1e-10 * scale
    E = kernel_basis(small_coll.grid)
    assert np.max(np.abs(E @ L)) < 1e-10 * scale * np.max(np.abs(E))
    # five-dimensional kernel, the rest bounded away from zero
    top = np.sort(ev)[::-1]
    assert top[5] < -1e-3 * scale


def test_printed_L2_sign_is_not_dissipative():
    coll = Collision(VelocityGrid(5.0, 10, 0.0), l2_sign="printed")
    assert np.linalg.eigvalsh(coll.L_raw).max() > 1.0


def test_splitting_identities(small_coll):
    L = small_coll.L
    A, B = small_coll.A_split(), small_coll.B_split()
    assert np.max(np.abs(A + B - L)) < 1e-12 * np.max(np.abs(L))
    # the cutoff-shifted L1 part stays dissipative
    assert np.linalg.eigvalsh(0.5 * (B + B.T)).max() < 1e-10 * np.max(np.abs(B))


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gamma_bilinear(seed):
    coll = _coll()
    g = coll.grid
    rng = np.random.default_rng(seed)
    f1, f2, f3 = (rng.standard_normal(g.n) * g.sqrtM for _ in range(3))
    a, b = rng.standard_normal(2)
    lhs = coll.Gamma(a * f1 + b * f2, f3)
    rhs = a * coll.Gamma(f1, f3) + b * coll.Gamma(f2, f3)
    assert np.allclose(lhs, rhs, atol=1e-10 * np.max(np.abs(rhs)))


_CACHE = {}


def _coll():
    if "c" not in _CACHE:
        _CACHE["c"] = Collision(VelocityGrid(5.0, 10, 0.0))
    return _CACHE["c"]


def test_linearisation_matches_gamma(ops0):
    # L f = Gamma(sqrt M, f) + Gamma(f, sqrt M): two independent assembly routes
    coll = ops0.coll
    g = coll.grid
    f = (1 + g.v[:, 0] - 0.3 * g.v[:, 1] * g.v[:, 2]) * g.sqrtM
    lhs = coll.L_raw @ f
    rhs = coll.Gamma(g.sqrtM, f) + coll.Gamma(f, g.sqrtM)
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs) < 1e-2


def test_entropy_dissipation_zero_at_maxwellian_and_positive_off_it():
    coll = Collision(VelocityGrid(6.0, 12, 0.0))
    g = coll.grid
    assert abs(coll.entropy_dissipation(g.M)) < 1e-12
    F = g.M * (1 + 0.2 * g.v[:, 0] * np.exp(-g.v2 / 4))
    assert coll.entropy_dissipation(F) > 1e-4


def test_Q_of_maxwellian_improves_with_resolution():
    errs = []
    for N in (8, 12):
        coll = Collision(VelocityGrid(6.0, N, 0.0))
        g = coll.grid
        errs.append(np.max(np.abs(coll.Q(g.M, g.M))) / np.max(g.M))
    assert errs[1] < errs[0]


def test_gamma_rejects_unknown_path(small_coll):
    g = small_coll.grid
    with pytest.raises(ValueError):
        small_coll.Gamma(g.sqrtM, g.sqrtM, path="C")
