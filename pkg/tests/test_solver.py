import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bscreg import lagrangian as lg
from bscreg import solver as sv
from bscreg.barrier import constants
from bscreg.errors import BscError
from bscreg.geometry import gauge, regular_polygon, square


@pytest.fixture(scope="module")
def disc_mesh():
    return sv.triangulate(regular_polygon(64), 1 / 8)


@pytest.fixture(scope="module")
def square_mesh():
    return sv.triangulate(square(1.0), 0.25)


def stiffness_oracle(mesh):
    """Element-by-element P1 stiffness matrix, assembled from scratch."""
    n = mesh.n_nodes
    A = np.zeros((n, n))
    for tri in mesh.triangles:
        p = mesh.nodes[tri]
        M = np.column_stack([np.ones(3), p])
        coef = np.linalg.inv(M)  # columns: barycentric coordinate coefficients
        grads = coef[1:, :].T  # (3, 2)
        area = 0.5 * abs(np.linalg.det(M))
        A[np.ix_(tri, tri)] += area * grads @ grads.T
    return A


@pytest.mark.parametrize("mesh_name", ["disc_mesh", "square_mesh"])
def test_mesh_quality(mesh_name, request):
    mesh = request.getfixturevalue(mesh_name)
    assert mesh.angles().min() >= sv.MIN_ANGLE
    assert np.all(mesh.areas > 0)
    assert mesh.areas.sum() == pytest.approx(mesh.body.area, rel=1e-12)
    assert np.allclose(gauge(mesh.body, mesh.nodes[mesh.boundary]), 1.0, atol=1e-12)
    assert np.all(gauge(mesh.body, mesh.nodes[mesh.interior]) < 1.0)
    assert mesh.lumped_masses().sum() == pytest.approx(mesh.body.area)


def test_mesh_is_conforming(disc_mesh):
    # every interior edge is shared by exactly two triangles, boundary edges by one
    edges = {}
    for t in disc_mesh.triangles:
        for i in range(3):
            e = tuple(sorted((t[i], t[(i + 1) % 3])))
            edges[e] = edges.get(e, 0) + 1
    assert set(edges.values()) <= {1, 2}
    single = [e for e, c in edges.items() if c == 1]
    assert all(disc_mesh.boundary[a] and disc_mesh.boundary[b] for a, b in single)


def test_coarse_square_mesh():
    body = square(1.0)
    mesh = sv.triangulate(body, body.diameter / 4)
    assert mesh.angles().min() >= sv.MIN_ANGLE
    assert mesh.areas.sum() == pytest.approx(4.0)


@pytest.mark.parametrize("h", [0.0, -0.1, 5.0])
def test_mesh_fail(h):
    with pytest.raises(BscError, match="MESH_FAIL"):
        sv.triangulate(square(1.0), h)


def test_gradient_operator_on_affine(disc_mesh):
    g = np.array([3.0, 4.0])
    u = sv.ScalarField(disc_mesh, disc_mesh.nodes @ g + 1.0)
    assert np.allclose(u.gradients(), g, atol=1e-12)
    assert sv.grad_sup(u) == pytest.approx(5.0)
    assert sv.grad_sup(sv.ScalarField(disc_mesh, np.zeros(disc_mesh.n_nodes))) == 0.0


def test_energy_of_affine_field(disc_mesh):
    F = lg.torsion_rod()
    g = np.array([1.2, -0.5])
    u = sv.ScalarField(disc_mesh, disc_mesh.nodes @ g)
    expected = disc_mesh.body.area * F(g)
    assert sv.energy(F, 0.0, u) == pytest.approx(expected, rel=1e-12)
    assert sv.energy(F, 0.0, u, k=4) == pytest.approx(expected + disc_mesh.body.area * (g @ g) / 4)


def test_stiffness_matches_oracle(square_mesh):
    Gx, Gy = square_mesh.gradient_operators()
    a = square_mesh.areas
    A = (Gx.T @ (a[:, None] * Gx.toarray())) + (Gy.T @ (a[:, None] * Gy.toarray()))
    assert np.allclose(A, stiffness_oracle(square_mesh), atol=1e-12)


def test_quadratic_minimizer_matches_linear_solve(disc_mesh):
    # W = |z|^2, f = 1: stationarity 2 A u + m = 0 on interior nodes, u = datum on the boundary
    mesh = disc_mesh
    W = lg.quadratic(2.0).smoothed(0.01)
    datum = lambda p: 0.3 * p[:, 0] - p[:, 1] ** 2  # noqa: E731
    u0 = np.zeros(mesh.n_nodes)
    u0[mesh.boundary] = datum(mesh.nodes[mesh.boundary])
    res = sv.minimize(W, 1.0, mesh, u0)
    assert res.converged
    A = stiffness_oracle(mesh)
    inner, bnd = mesh.interior, mesh.boundary
    rhs = -mesh.lumped_masses()[inner] - 2 * A[np.ix_(inner, bnd)] @ u0[bnd]
    ref = np.linalg.solve(2 * A[np.ix_(inner, inner)], rhs)
    assert np.allclose(res.values[inner], ref, atol=1e-9)
    assert np.allclose(res.values[bnd], u0[bnd])


def test_energy_trace_monotone(disc_mesh):
    W = lg.torsion_rod().smoothed(1 / 16, quad_weight=1 / 16)
    res = sv.minimize(W, -4.0, disc_mesh, np.zeros(disc_mesh.n_nodes))
    assert res.converged
    assert np.all(np.diff(res.trace) <= 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_discrete_energy_convex(seed, t):
    mesh = sv.triangulate(square(1.0), 0.5)
    F = lg.torsion_rod()
    rng = np.random.default_rng(seed)
    u = rng.normal(size=mesh.n_nodes) * 2
    v = rng.normal(size=mesh.n_nodes) * 2
    E = lambda w: sv.energy(F, 1.5, sv.ScalarField(mesh, w))  # noqa: E731
    assert E(t * u + (1 - t) * v) <= t * E(u) + (1 - t) * E(v) + 1e-9


def test_default_k_schedule():
    assert sv.default_k_schedule(1 / 16) == [8, 16, 32, 64]
    assert sv.default_k_schedule(0.5) == [8]


def test_choose_q_constant_modulus():
    F = lg.torsion_rod()
    Q, mu, L0, steps = sv.choose_q(F, 0.5, 4.0, 2.0)
    assert mu == 1.0
    assert L0 == constants(0.5, 1.0, 1.0, 4.0, 2.0)["L0"]
    assert Q == pytest.approx(L0 + 1)
    assert steps == 1


def test_choose_q_linear_modulus():
    F = dataclasses.replace(lg.torsion_rod(), modulus=lambda t: np.asarray(t, float))
    Q, mu, L0, steps = sv.choose_q(F, 0.5, 4.0, 2.0)
    assert mu == 1.0 and steps <= 3
    assert L0 / mu <= Q - 1


def test_choose_q_decaying_modulus():
    # modulus ~ t^(-1/2): mu_Q shrinks like Q^(-1/2) but L0 / mu_Q <= Q - 1 is still reachable
    F = lg.builtin("power_outside_ball", {"p": 1.5})
    Q, mu, L0, steps = sv.choose_q(F, 0.5, 1.0, 2.0)
    assert 0 < mu < 1
    assert L0 / mu <= Q - 1
    assert mu == lg.mu_q(F.modulus, F.R, Q)


@pytest.mark.parametrize(
    "F",
    [
        dataclasses.replace(lg.torsion_rod(), modulus=lambda t: np.exp(-np.asarray(t, float))),
        # modulus ~ log(t)/t decays too fast: L0 / mu_Q grows faster than Q
        lg.builtin("log_family", {"p": 2.0}),
    ],
    ids=["exponential", "log"],
)
def test_choose_q_fails_when_modulus_decays_fast(F):
    with pytest.raises(BscError, match="NO_Q"):
        sv.choose_q(F, 0.5, 1.0, 2.0)


@pytest.mark.parametrize("body", [square(1.0), regular_polygon(64)], ids=["square", "disc"])
def test_pipeline_affine_exact(body):
    g = np.array([0.3, -0.4])
    datum = lambda p: p @ g + 0.2  # noqa: E731
    prob = sv.Problem(body, lg.torsion_rod(), 0.0, datum, h=body.diameter / 8)
    out = sv.solve_pipeline(prob)
    assert out.converged
    assert np.max(np.abs(out.field.values - datum(out.field.mesh.nodes))) <= 1e-8
    assert out.grad_sup == pytest.approx(0.5, abs=1e-8)
    assert sv.check_sandwich(out)["passed"]


def test_pipeline_rejects_unknown_init():
    prob = sv.Problem(square(1.0), lg.torsion_rod(), 0.0, lambda p: 0 * p[:, 0], h=0.5, init="bogus")
    with pytest.raises(BscError, match="BAD_CONFIG"):
        sv.solve_pipeline(prob)


@pytest.fixture(scope="module")
def torsion_outcome():
    prob = sv.Problem(regular_polygon(64), lg.torsion_rod(), -4.0, lambda p: 0 * p[:, 0], h=1 / 8)
    return sv.solve_pipeline(prob)


def test_pipeline_torsion(torsion_outcome):
    out = torsion_outcome
    assert out.converged
    assert out.k_schedule == [8, 16, 32]
    assert out.Q == pytest.approx(out.constants["L0"] / out.mu + 1)
    assert np.all(out.field.values[out.field.mesh.interior] >= -1e-12)
    assert sv.check_sandwich(out)["passed"]
    assert sv.boundary_gradient_sup(out.field) <= out.grad_sup
    energies = [lvl["energy"] for lvl in out.level_energies]
    assert all(lvl["converged"] for lvl in out.level_energies)
    assert len(energies) == 3


def test_exports_roundtrip(tmp_path, torsion_outcome):
    out = torsion_outcome
    sv.export_field(out.field, tmp_path / "field.csv")
    sv.export_gradients(out.field, tmp_path / "gradients.csv")
    sv.export_trace(out, tmp_path / "trace.csv")
    sv.save_outcome(out, tmp_path / "outcome.json")
    fld = np.loadtxt(tmp_path / "field.csv", delimiter=",", skiprows=1)
    assert np.array_equal(fld[:, 3], out.field.values)
    grads = np.loadtxt(tmp_path / "gradients.csv", delimiter=",", skiprows=1)
    assert np.max(np.hypot(grads[:, 4], grads[:, 5])) == pytest.approx(out.grad_sup, rel=1e-15)
    trace = np.loadtxt(tmp_path / "trace.csv", delimiter=",", skiprows=1)
    assert len(trace) == len(out.energy_trace)
