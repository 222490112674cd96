import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landaulab.calculus import VelocityGrid
from landaulab.kernels import (Convolver, build_B, build_kernel_tables, epstein_zeta, landau_a, landau_b,
                               landau_c, smooth_cutoff, sym_to_full)


def _direct_lattice_sum(s, R=40):
    m = np.arange(-R, R + 1)
    X, Y, Z = np.meshgrid(m, m, m, indexing="ij")
    r = np.sqrt(X**2 + Y**2 + Z**2)
    r = r[(r > 0) & (r <= R)]
    # continuum tail beyond radius R
    return np.sum(r ** (-s)) + 4 * np.pi * R ** (3 - s) / (s - 3)


@pytest.mark.parametrize("s", [4.0, 6.0])
def test_epstein_zeta_against_direct_sum(s):
    assert epstein_zeta(s) == pytest.approx(_direct_lattice_sum(s), rel=2e-5)


def test_epstein_zeta_at_zero_is_minus_one():
    assert epstein_zeta(0.0) == pytest.approx(-1.0, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.sampled_from([-2.0, 0.0, 1.0]))
def test_landau_kernel_projection_properties(z, gamma):
    z = np.array(z)
    if np.linalg.norm(z) < 1e-3:
        return
    a = landau_a(z, gamma)
    r = np.linalg.norm(z)
    assert np.allclose(a @ z, 0, atol=1e-10 * max(1, r ** (gamma + 3)))
    assert np.allclose(a, a.T)
    assert np.trace(a) == pytest.approx(2 * r ** (gamma + 2), rel=1e-12)
    assert np.all(np.linalg.eigvalsh(a) > -1e-12 * r ** (gamma + 2))


@pytest.mark.parametrize("gamma", [-2.0, 0.0, 1.0])
def test_b_is_divergence_of_a_and_c_of_b(gamma):
    z0 = np.array([0.7, -0.4, 1.1])
    h = 1e-5
    div_a = np.zeros(3)
    div_b = 0.0
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        div_a += (landau_a(z0 + e, gamma)[:, j] - landau_a(z0 - e, gamma)[:, j]) / (2 * h)
        div_b += (landau_b(z0 + e, gamma)[j] - landau_b(z0 - e, gamma)[j]) / (2 * h)
    assert np.allclose(div_a, landau_b(z0, gamma), rtol=1e-6)
    if gamma > -2:
        assert div_b == pytest.approx(landau_c(z0, gamma), rel=1e-6)


def test_smooth_cutoff_profile():
    r = np.linspace(0, 2, 201)
    chi = smooth_cutoff(r)
    assert np.all(chi[r <= 0.5] == 1.0)
    assert np.all(chi[r >= 1.0] == 0.0)
    assert np.all(np.diff(chi) <= 1e-15)


@pytest.mark.parametrize("which", ["a", "b", "c"])
def test_fft_and_direct_convolutions_agree(which):
    g = VelocityGrid(4.0, 8, -1.0)
    conv = Convolver(g)
    f = np.exp(-g.v2 / 2) * (1 + g.v[:, 0])
    assert np.allclose(conv(f, which), conv(f, which, path="direct"), rtol=1e-10, atol=1e-12)


def test_trace_of_maxwellian_average_at_gamma_zero():
    # tr(a * M)(v) = 2 int |v - w|^2 M(w) dw = 2 (|v|^2 + 3)
    g = VelocityGrid(6.0, 12, 0.0)
    tab = build_kernel_tables(g)
    tr = np.trace(tab.A_raw, axis1=1, axis2=2)
    inner = g.v2 <= 4
    # residual is the Maxwellian mass outside the box (~1e-6 at V=6)
    assert np.max(np.abs(tr - 2 * (g.v2 + 3))[inner]) < 5e-6


def test_build_B_factorises_A():
    g = VelocityGrid(5.0, 10, -2.0)
    tab = build_kernel_tables(g)
    BtB = np.einsum("nki,nkj->nij", tab.B, tab.B)
    assert np.max(np.abs(BtB - tab.A)) < 1e-12 * np.max(np.abs(tab.A))


def test_sym_to_full_symmetric():
    s = np.arange(6.0)[:, None] * np.ones((6, 2))
    full = sym_to_full(s)
    assert np.allclose(full, np.swapaxes(full, -1, -2))
