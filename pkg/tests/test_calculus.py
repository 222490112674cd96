import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landaulab.calculus import (KineticField, SpatialLattice, VelocityGrid, apply_along, dv, dv_spectral,
                                from_physical, grad_tilde_v, grad_tilde_v_adjoint, quad_inner, to_physical)


def test_grid_nodes_and_weights():
    g = VelocityGrid(4.0, 8)
    assert g.h == pytest.approx(1.0)
    assert g.w == pytest.approx(1.0)
    assert g.n == 512
    # cell-centred nodes, symmetric about zero
    assert np.allclose(np.sort(g.axis), -np.sort(g.axis)[::-1])
    # at V=8 truncation is negligible; the h=1 aliasing error is about 3 exp(-2 pi^2)
    wide = VelocityGrid(8.0, 16)
    assert wide.integrate(wide.M) == pytest.approx(1.0, abs=1e-7)


def test_spectral_derivative_exact_on_resolved_modes():
    g = VelocityGrid(4.0, 16)
    L = 2 * g.V
    f = np.sin(2 * np.pi * 3 * g.v[:, 1] / L)
    exact = 2 * np.pi * 3 / L * np.cos(2 * np.pi * 3 * g.v[:, 1] / L)
    assert np.max(np.abs(dv_spectral(f, 1, g) - exact)) < 1e-12


@pytest.mark.parametrize("order", [2, 4, 6])
def test_finite_difference_order(order):
    errs = []
    for N in (24, 48):
        g = VelocityGrid(6.0, N)
        f = np.exp(-g.v2 / 2)
        exact = -g.v[:, 2] * f
        errs.append(np.max(np.abs(dv(f, 2, g, order) - exact)))
    rate = np.log2(errs[0] / errs[1])
    assert rate > order - 0.75


def test_fd2_exact_on_quadratics_inside_box():
    g = VelocityGrid(4.0, 8)
    f = g.v[:, 0] ** 2
    inner = np.all(np.abs(g.v) < g.V - g.h, axis=1)
    assert np.allclose(dv(f, 0, g)[inner], 2 * g.v[inner, 0])


def test_apply_along_matches_kron():
    g = VelocityGrid(2.0, 4)
    D = np.random.default_rng(0).standard_normal((4, 4))
    f = np.random.default_rng(1).standard_normal(64)
    I = np.eye(4)
    kron = [np.kron(np.kron(D, I), I), np.kron(np.kron(I, D), I), np.kron(np.kron(I, I), D)]
    for axis in range(3):
        assert np.allclose(apply_along(D, f, axis, 4), kron[axis] @ f)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_grad_tilde_adjoint_identity(seed):
    g = VelocityGrid(3.0, 6)
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((g.n, 3, 3))
    f = rng.standard_normal(g.n)
    G = rng.standard_normal((3, g.n))
    lhs = g.w * np.sum(grad_tilde_v(f, B, g) * G)
    rhs = g.w * np.sum(f * grad_tilde_v_adjoint(G, B, g))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("dim,K", [(0, 2), (1, 2), (2, 1), (3, 1)])
def test_lattice_structure(dim, K):
    lat = SpatialLattice(dim, K)
    assert lat.size == (2 * K + 1) ** dim
    assert np.all(lat.modes[lat.zero] == 0)
    assert np.all(lat.conj_index[lat.conj_index] == np.arange(lat.size))
    assert np.allclose(lat.k2, np.sum((2 * np.pi * lat.modes) ** 2, axis=1))


def test_lattice_rejects_bad_input():
    with pytest.raises(ValueError):
        SpatialLattice(4, 1)
    with pytest.raises(ValueError):
        SpatialLattice(1, -1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(1, 2), (2, 2), (2, 1)]))
def test_physical_roundtrip(seed, dk):
    lat = SpatialLattice(*dk)
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((lat.size, 3)) + 1j * rng.standard_normal((lat.size, 3))
    assert np.allclose(from_physical(to_physical(c, lat), lat), c)


def test_kinetic_field_shape_and_arithmetic():
    lat, g = SpatialLattice(1, 1), VelocityGrid(2.0, 4)
    with pytest.raises(ValueError):
        KineticField(lat, g, np.zeros((2, g.n)))
    f = KineticField(lat, g, np.ones((3, g.n)))
    h = 2 * f - f
    assert np.allclose(h.values, 1.0)
    assert quad_inner(f, f) == pytest.approx(3 * g.n * g.w)
    assert f.is_real()
