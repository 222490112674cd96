import numpy as np
import pytest

from landaulab.calculus import SpatialLattice, to_physical
from landaulab.fluid import (compute_correctors, constraint_residuals, leray, nsf_step, run_nsf, taylor_green,
                             well_prepared_lift)
from landaulab.micromacro import kernel_basis, moments


LAT = SpatialLattice(2, 2)


def test_leray_projects_onto_divergence_free():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((3, LAT.size)) + 1j * rng.standard_normal((3, LAT.size))
    p = leray(u, LAT)
    k = LAT.wavevectors.T
    assert np.max(np.abs(np.sum(k * p, axis=0))) < 1e-10
    assert np.allclose(leray(p, LAT), p)


def test_taylor_green_constraints():
    s = taylor_green(LAT, 0.3, 0.1)
    res = constraint_residuals(s)
    assert res["divergence"] < 1e-12 and res["boussinesq"] < 1e-12
    assert abs(s.u[0, LAT.index[(1, 1, 0)]]) > 0


def test_taylor_green_velocity_decays_exactly():
    # u.grad u is a gradient for the Taylor-Green cell, so only viscosity acts on u
    s = taylor_green(LAT, 0.2, 0.0)
    nu = 0.05
    traj = run_nsf(s, 0.2, 0.01, nu, nu)
    decay = np.exp(-nu * 2 * (2 * np.pi) ** 2 * 0.2)
    assert np.allclose(traj.states[-1].u, decay * s.u, atol=1e-12)
    assert np.all(np.diff(traj.energy()) < 0)


def test_cfl_guard():
    s = taylor_green(LAT, 50.0, 0.0)
    with pytest.raises(ValueError):
        nsf_step(s, 0.1, 0.1, 0.1)


def test_correctors(ops0):
    corr = compute_correctors(ops0.coll)
    g = ops0.grid
    E = kernel_basis(g)
    assert corr.nu1 > 0 and corr.nu2 > 0
    assert np.max(np.abs(g.w * corr.Phi.reshape(9, -1) @ E.T)) < 1e-10
    assert np.max(np.abs(g.w * corr.Psi @ E.T)) < 1e-10
    # isotropy: Phi_ij symmetric and trace-free
    assert np.allclose(corr.Phi, np.swapaxes(corr.Phi, 0, 1), atol=1e-8 * np.max(np.abs(corr.Phi)))
    assert np.max(np.abs(np.einsum("iin->n", corr.Phi))) < 1e-8 * np.max(np.abs(corr.Phi))


def test_well_prepared_lift_checks_constraints(ops0):
    s = taylor_green(LAT, 0.1, 0.05)
    g = well_prepared_lift(s.rho, s.u, s.theta, LAT, ops0.grid)
    assert np.allclose(moments(g).u, s.u, atol=1e-6 * np.max(np.abs(s.u)))
    bad_u = s.u.copy()
    bad_u[0, LAT.index[(1, 0, 0)]] += 0.1
    with pytest.raises(ValueError):
        well_prepared_lift(s.rho, bad_u, s.theta, LAT, ops0.grid)


def test_physical_fields_real():
    s = taylor_green(LAT, 0.1, 0.05)
    assert np.max(np.abs(np.imag(to_physical(s.u.T, LAT)))) < 1e-14
