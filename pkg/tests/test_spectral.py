import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from landaulab.calculus import KineticField, SpatialLattice, VelocityGrid
from landaulab.collision import Collision
from landaulab.micromacro import lift_macro, micro_part, MacroState
from landaulab.spectral import (LinearOperators, ParityBlocks, SemigroupCache, assemble_Lambda_hat,
                                build_limit_semigroup, canonical_wavevector, duhamel_iterates, fit_rate,
                                limit_projectors, mode_spectrum, node_map, semigroup_apply)


@pytest.fixture(scope="module")
def tiny_ops():
    return LinearOperators(Collision(VelocityGrid(4.0, 8, 0.0)))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-0.8, 0.2), st.floats(0.5, 20.0))
def test_fit_rate_recovers_synthetic_parameters(sigma, p, C):
    t = np.geomspace(1e-3, 1.0, 20)
    v = C * t**p * np.exp(-sigma * t)
    fit = fit_rate(t, v, "power_times_exp")
    assert fit.p == pytest.approx(p, abs=1e-8)
    assert fit.sigma == pytest.approx(sigma, rel=1e-8)
    assert fit.C == pytest.approx(C, rel=1e-8)
    assert fit.residual < 1e-10


def test_fit_rate_input_checks():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        fit_rate(t, np.exp(-t))
    t = np.linspace(0, 1, 10)
    with pytest.raises(ValueError):
        fit_rate(t, -np.exp(-t))
    with pytest.raises(ValueError):
        fit_rate(t, np.exp(-t), model="cubic")


def test_parity_blocks_roundtrip(tiny_ops):
    grid = tiny_ops.grid
    pb = ParityBlocks(grid, (1, 2))
    f = np.random.default_rng(0).standard_normal(grid.n)
    assert np.allclose(pb.from_blocks(pb.to_blocks(f)), f)
    # block reduction of an operator commuting with the reflections is exact
    L = tiny_ops.matrix("L")
    blocks = pb.reduce(L)
    ev = np.sort(np.concatenate([np.linalg.eigvalsh(b) for b in blocks]))
    assert np.allclose(ev, np.sort(np.linalg.eigvalsh(L)), atol=1e-10 * np.max(np.abs(ev)))


def test_equivariance_under_signed_permutations(tiny_ops):
    q = np.array([0.3, -1.1, 0.7])
    qc, order, signs = canonical_wavevector(q)
    perm = node_map(tiny_ops.grid, order, signs)
    A = assemble_Lambda_hat(tiny_ops, q / (2 * np.pi), 1.0)
    Ac = assemble_Lambda_hat(tiny_ops, qc / (2 * np.pi), 1.0)
    assert np.max(np.abs(A - Ac[np.ix_(perm, perm)])) < 1e-10 * np.max(np.abs(A))


def test_semigroup_matches_dense_expm(tiny_ops):
    eps, t = 0.5, 0.07
    lat = SpatialLattice(1, 1)
    k = lat.wavevectors[lat.index[(1, 0, 0)]]
    f = (1 + tiny_ops.grid.v[:, 0]) * tiny_ops.grid.sqrtM
    cache = SemigroupCache(tiny_ops, eps, "L")
    a = cache.apply_k(lambda lam: np.exp(t * lam), k, f.astype(complex))
    b = sla.expm(t * assemble_Lambda_hat(tiny_ops, (1.0, 0.0, 0.0), eps)) @ f
    assert np.linalg.norm(a - b) < 1e-9 * np.linalg.norm(b)


def test_semigroup_rejects_negative_time(tiny_ops):
    lat = SpatialLattice(1, 1)
    g = KineticField(lat, tiny_ops.grid)
    with pytest.raises(ValueError):
        semigroup_apply(-0.1, 0.5, "U_eps", g, tiny_ops)


def test_mode_spectrum_is_stable(tiny_ops):
    spec = mode_spectrum(tiny_ops, np.array([2 * np.pi * 0.5, 0.0, 0.0]))
    lam = spec.eigenvalues
    assert np.max(lam.real) < 1e-10 * np.max(np.abs(lam))


@pytest.mark.parametrize("n", [0, 1, 2])
def test_duhamel_iterates_close_the_splitting(tiny_ops, n):
    rep = duhamel_iterates(tiny_ops, (1.0, 0.0, 0.0), n, 0.05, 0.5)
    assert rep.residual < 1e-10


def test_duhamel_iterates_bound_on_order(tiny_ops):
    with pytest.raises(ValueError):
        duhamel_iterates(tiny_ops, (1.0, 0.0, 0.0), 4, 0.05, 0.5)


def test_limit_projector_ranks(ops0):
    P = limit_projectors(ops0, (1.0, 0.0, 0.0))
    ranks = {k: int(round(np.real(np.trace(v)))) for k, v in P.items()}
    assert ranks.get("shear") == 2
    assert ranks.get("thermal") == 1


def test_limit_semigroup_keeps_kernel(ops0):
    lat = SpatialLattice(1, 1)
    limit = build_limit_semigroup(ops0, lat)
    rng = np.random.default_rng(0)
    m = rng.standard_normal((5, lat.size))
    g0 = lift_macro(MacroState(lat, m[0], m[1:4], m[4]), ops0.grid)
    g = limit.apply(0.3, g0)
    assert np.max(np.abs(micro_part(g).values)) < 1e-6 * np.max(np.abs(g.values))
