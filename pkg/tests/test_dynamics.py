import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landaulab.calculus import SpatialLattice, VelocityGrid
from landaulab.collision import Collision
from landaulab.dynamics import (KineticStepper, _phi1, _phi2, bilinear_ratios, duhamel_residual, gamma_field,
                                random_field, run_trajectory)
from landaulab.micromacro import moments, remove_Pi
from landaulab.norms import norm_X
from landaulab.spectral import LinearOperators, SemigroupCache


@pytest.fixture(scope="module")
def tiny():
    ops = LinearOperators(Collision(VelocityGrid(4.0, 8, 0.0)))
    lat = SpatialLattice(1, 1)
    g = remove_Pi(random_field(lat, ops.grid, np.random.default_rng(0), amplitude=1e-3))
    return ops, lat, g


@settings(max_examples=40, deadline=None)
@given(st.floats(-30, 5), st.floats(-30, 30))
def test_phi_functions_against_high_precision(re, im):
    z = complex(re, im)
    if abs(z) < 1e-12:
        return
    with mpmath.workdps(50):
        mz = mpmath.mpc(re, im)
        p1 = complex((mpmath.exp(mz) - 1) / mz)
        p2 = complex((mpmath.exp(mz) - 1 - mz) / mz**2)
    assert complex(_phi1(np.array(z))) == pytest.approx(p1, rel=1e-10, abs=1e-14)
    assert complex(_phi2(np.array(z))) == pytest.approx(p2, rel=1e-10, abs=1e-14)


def test_phi_series_branch():
    for z in (1e-3, 9e-3j, -5e-3 + 5e-3j):
        with mpmath.workdps(50):
            mz = mpmath.mpmathify(z)
            p1 = complex((mpmath.exp(mz) - 1) / mz)
            p2 = complex((mpmath.exp(mz) - 1 - mz) / mz**2)
        assert complex(_phi1(np.array(z))) == pytest.approx(p1, rel=1e-13)
        assert complex(_phi2(np.array(z))) == pytest.approx(p2, rel=1e-13)


def test_step_size_policy(tiny):
    ops, lat, _ = tiny
    with pytest.raises(ValueError):
        KineticStepper(ops, lat, 0.1, 0.02)
    with pytest.raises(ValueError):
        KineticStepper(ops, lat, 0.5, 0.01, scheme="rk4")


def test_linear_etd2_is_exact(tiny):
    ops, lat, g = tiny
    eps, dt = 0.5, 0.02
    st_ = KineticStepper(ops, lat, eps, dt, "etd2", nonlinear=False)
    exact = SemigroupCache(ops, eps, "L").apply(lambda lam: np.exp(dt * lam), lat, g.values)
    out = st_.step(g)
    assert np.linalg.norm(out.values - exact) < 1e-10 * np.linalg.norm(exact)


@pytest.mark.parametrize("scheme,order", [("bdf1", 1), ("cn", 2)])
def test_linear_convergence_order(tiny, scheme, order):
    ops, lat, g = tiny
    eps, T = 0.5, 0.04
    exact = SemigroupCache(ops, eps, "L").apply(lambda lam: np.exp(T * lam), lat, g.values)
    errs = []
    for dt in (0.01, 0.005):
        st_ = KineticStepper(ops, lat, eps, dt, scheme, nonlinear=False)
        h = g
        for _ in range(int(round(T / dt))):
            h = st_.step(h)
        errs.append(np.linalg.norm(h.values - exact))
    rate = np.log2(errs[0] / errs[1])
    assert rate == pytest.approx(order, abs=0.35)


def test_gamma_field_is_micro_and_real(tiny):
    ops, lat, g = tiny
    G = gamma_field(ops, g, g)
    assert G.is_real(1e-10)
    m = moments(G).as_array()
    assert np.max(np.abs(m)) < 1e-12 * max(1e-300, np.max(np.abs(G.values)))


def test_random_field_is_real(tiny):
    ops, lat, _ = tiny
    f = random_field(SpatialLattice(2, 1), ops.grid, np.random.default_rng(5))
    assert f.is_real()


def test_nonlinear_run_conserves_moments_and_satisfies_duhamel(tiny):
    ops, lat, g = tiny
    traj = run_trajectory(g, 0.5, 0.1, ops, scheme="etd2", stride=1, record=("X", "moments"), dt_max=0.01)
    assert traj.report["moment_drift"] < 1e-14
    assert duhamel_residual(traj, ops) < 1e-3
    with pytest.raises(ValueError):
        run_trajectory(g, 0.5, -1.0, ops)


def test_bilinear_ratios_finite(tiny):
    ops, lat, _ = tiny
    rng = np.random.default_rng(2)
    fs = [remove_Pi(random_field(lat, ops.grid, rng)) for _ in range(3)]
    ratios = bilinear_ratios(ops, *fs)
    assert all(np.isfinite(v) and v > 0 for v in ratios.values())


def test_small_data_decay(tiny):
    ops, lat, g = tiny
    traj = run_trajectory(g, 0.5, 0.2, ops, scheme="etd2", stride=5, record=("X", "micro_Y1", "moments"), dt_max=0.01)
    assert norm_X(traj.snapshots[-1]) < norm_X(g)
    assert np.isfinite(traj.report["constant"])


@pytest.mark.parametrize("scheme,order", [("bdf1", 1), ("cn", 2), ("etd2", 2), ("etdrk2", 2)])
def test_nonlinear_self_convergence(tiny, scheme, order):
    ops, lat, _ = tiny
    g = remove_Pi(random_field(lat, ops.grid, np.random.default_rng(7), amplitude=0.3))
    eps, T = 0.5, 0.04
    ends = []
    for dt in (0.01, 0.005, 0.0025):
        st_ = KineticStepper(ops, lat, eps, dt, scheme)
        h = g
        for _ in range(int(round(T / dt))):
            h = st_.step(h)
        ends.append(h.values)
    rate = np.log2(np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2]))
    assert rate >= order - 0.2
