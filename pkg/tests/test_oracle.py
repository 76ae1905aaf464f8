import numpy as np
import pytest

from bscreg import lagrangian as lg
from bscreg.errors import BscError
from bscreg.oracle import audit_isotropy, oracle_error, radial_oracle
from bscreg.solver import ScalarField, triangulate
from bscreg.geometry import regular_polygon


def test_zero_load_gives_zero():
    ora = radial_oracle(lg.torsion_rod(), 0.0)
    assert np.all(ora.values == 0.0)
    assert ora.energy == 0.0


def test_quadratic_matches_poisson_solution():
    # F = |z|^2 / 2, -Laplace u = 1 on the unit disc: u = (1 - r^2) / 4
    ora = radial_oracle(lg.quadratic(1.0), 1.0)
    assert np.max(np.abs(ora.values - (1 - ora.grid**2) / 4)) <= 1e-6
    assert ora.residual <= 1e-10


def test_torsion_flat_core_closed_form():
    # flux balance gives |sigma| = 2r for lambda = 4: zero slope for r <= 1/2 and
    # slope -2r beyond, so u = 1 - r^2 outside and 3/4 on the core
    ora = radial_oracle(lg.torsion_rod(), 4.0)
    r = ora.grid
    exact = np.where(r <= 0.5, 0.75, 1 - r**2)
    assert np.max(np.abs(ora.values - exact)) <= 1e-3
    assert ora.gradient_jump() == pytest.approx(1.0, abs=1e-2)
    assert np.all(ora.slopes[ora.grid[1:] <= 0.49] == 0.0)


def test_torsion_small_load_is_zero():
    # |sigma| = lambda r / 2 <= 1 everywhere: the minimizer is u = 0
    ora = radial_oracle(lg.torsion_rod(), 1.5)
    assert np.all(ora.values == 0.0)


def test_energy_is_minimal_against_perturbations():
    F = lg.torsion_rod()
    ora = radial_oracle(F, 4.0, n=512)
    r = ora.grid
    A = np.pi * (r[1:] ** 2 - r[:-1] ** 2)
    m = np.zeros(len(r))
    m[:-1] += 0.5 * A
    m[1:] += 0.5 * A

    def E(u):
        du = np.diff(u) / np.diff(r)
        return A @ F(np.column_stack([du, np.zeros_like(du)])) - 4.0 * (m @ u)

    assert E(ora.values) == pytest.approx(ora.energy)
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = ora.values + 1e-3 * rng.normal(size=len(r)) * (r < 1)
        assert E(v) >= ora.energy - 1e-12


def test_not_isotropic():
    F = lg.builtin("power_outside_ball", {"p": 2.0, "p_axial": [1.5, 3.0]})
    with pytest.raises(BscError, match="NOT_ISOTROPIC"):
        radial_oracle(F, 1.0)
    assert audit_isotropy(lg.torsion_rod()) <= 1e-12


def test_grid_too_coarse():
    with pytest.raises(BscError, match="BAD_PARAMS"):
        radial_oracle(lg.torsion_rod(), 1.0, n=100)


def test_oracle_error_on_interpolated_field():
    ora = radial_oracle(lg.quadratic(1.0), 1.0)
    mesh = triangulate(regular_polygon(64), 1 / 8)
    rr = np.linalg.norm(mesh.nodes, axis=1)
    fld = ScalarField(mesh, (1 - rr**2) / 4)
    assert oracle_error(fld, ora) <= 1e-6
    fld = ScalarField(mesh, (1 - rr**2) / 4 + 0.01)
    assert oracle_error(fld, ora) == pytest.approx(0.01, abs=1e-6)
