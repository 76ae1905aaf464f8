"""Piecewise-linear finite elements for ``min  int F(grad u) + f u`` with Dirichlet data.

The regularized energy solved at continuation level ``k`` is

    E_k(u) = sum_T |T| [ F_eps(grad u_T) + (1/k) |grad u_T|^2 ] + sum_i m_i f_i u_i

with ``F_eps`` the Moreau envelope of ``F`` at scale ``eps = 1/k`` (smooth
profiles are kept exact) and ``m_i`` lumped nodal masses.  Each level is a
strongly convex problem minimized by a damped Newton method; levels are
warm-started along ``k``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from scipy.spatial import Delaunay

from .barrier import build_barriers, constants, sandwich_check
from .boundary import certify_bsc, extend_datum, minimal_rank
from .errors import BscError
from .lagrangian import mu_q, truncate

MIN_ANGLE = 20.0

# --- meshes -----------------------------------------------------------------------------


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of a convex polygon."""

    body: object
    nodes: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)  # bool mask
    h: float

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def interior(self):
        return ~self.boundary

    @property
    def areas(self):
        p = self.nodes[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def angles(self):
        """Interior angles of every triangle, in degrees (m, 3)."""
        p = self.nodes[self.triangles]
        out = np.empty((len(p), 3))
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, i] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
        return out

    def lumped_masses(self):
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return m

    def gradient_operators(self):
        """Sparse ``(Gx, Gy)`` mapping nodal values to per-triangle gradients."""
        p = self.nodes[self.triangles]
        area2 = 2.0 * self.areas
        # gradient of the barycentric coordinate of vertex i is rot(opposite edge) / (2|T|)
        rows = np.repeat(np.arange(len(p)), 3)
        gx = np.empty((len(p), 3))
        gy = np.empty((len(p), 3))
        for i in range(3):
            a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
            gx[:, i] = (a[:, 1] - b[:, 1]) / area2
            gy[:, i] = (b[:, 0] - a[:, 0]) / area2
        shape = (len(p), self.n_nodes)
        Gx = sp.csr_matrix((gx.ravel(), (rows, self.triangles.ravel())), shape=shape)
        Gy = sp.csr_matrix((gy.ravel(), (rows, self.triangles.ravel())), shape=shape)
        return Gx, Gy


def _boundary_points(body, h):
    pts = []
    for v, e in zip(body.vertices, body.edges):
        n = max(1, int(math.ceil(np.linalg.norm(e) / h - 1e-9)))
        t = np.arange(n) / n
        pts.append(v + t[:, None] * e)
    return np.vstack(pts)


def _interior_lattice(body, h):
    lo, hi = body.vertices.min(axis=0), body.vertices.max(axis=0)
    dy = h * math.sqrt(3) / 2
    ys = np.arange(lo[1] - dy, hi[1] + dy, dy)
    rows = []
    for j, y in enumerate(ys):
        xs = np.arange(lo[0] - h, hi[0] + h, h) + (0.5 * h if j % 2 else 0.0)
        rows.append(np.column_stack([xs, np.full(len(xs), y)]))
    pts = np.vstack(rows)
    # signed distance to the boundary of a convex polygon: min over supporting lines
    depth = (body.offsets[None, :] - (pts - body.center) @ body.normals.T).min(axis=1)
    return pts[depth >= 0.6 * h]


def triangulate(body, h, smoothing=10):
    """Triangulate ``body`` with target edge length ``h``.

    Boundary edges are split uniformly (spacing at most ``h``), the interior
    is filled with a hexagonal lattice kept ``0.6 h`` away from the boundary,
    and a few rounds of Laplacian smoothing of interior nodes are applied.
    If boundary nodes are much denser than ``h`` the interior spacing is
    reduced until every angle is at least 20 degrees.

    Raises
    ------
    BscError
        ``MESH_FAIL`` if ``h`` is not in ``(0, diam/4]`` or the mesh is degenerate.
    """
    diam = body.diameter
    if not (0 < h <= diam / 4 * (1 + 1e-12)):
        raise BscError("MESH_FAIL", f"h must lie in (0, diam/4] = (0, {diam / 4:.6g}], got {h}")
    bpts = _boundary_points(body, h)
    spacing = np.linalg.norm(np.roll(bpts, -1, axis=0) - bpts, axis=1).min()
    h_int = h
    while True:
        mesh = _lattice_mesh(body, bpts, h_int, h, smoothing)
        if mesh.angles().min() >= MIN_ANGLE or h_int <= spacing:
            break
        # boundary nodes much denser than h: refine the interior until the angles recover
        h_int = max(0.8 * h_int, spacing)
    if np.any(mesh.areas <= 1e-14 * h * h) or mesh.angles().min() < MIN_ANGLE:
        raise BscError("MESH_FAIL", "could not reach the minimum angle")
    return mesh


def _lattice_mesh(body, bpts, h_int, h, smoothing):
    ipts = _interior_lattice(body, h_int)
    nodes = np.vstack([bpts, ipts])
    nb = len(bpts)
    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[:nb] = True
    tri = _delaunay(nodes, h)
    for _ in range(smoothing):
        if len(ipts) == 0:
            break
        nbr_sum = np.zeros_like(nodes)
        count = np.zeros(len(nodes))
        for i in range(3):
            for j in range(3):
                if i != j:
                    np.add.at(nbr_sum, tri[:, i], nodes[tri[:, j]])
                    np.add.at(count, tri[:, i], 1.0)
        new = nbr_sum / np.maximum(count, 1.0)[:, None]
        nodes[nb:] = new[nb:]
        tri = _delaunay(nodes, h)
    return _oriented(body, nodes, tri, boundary, h)


def _area2(p, q, r):
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _clip_polygon(nodes, poly, tol):
    """Triangulate a convex polygon that may contain collinear vertices, avoiding flat triangles."""
    poly = list(poly)
    out = []
    while len(poly) > 3:
        for i in range(len(poly)):
            p, c, n = poly[i - 1], poly[i], poly[(i + 1) % len(poly)]
            if abs(_area2(nodes[p], nodes[c], nodes[n])) <= tol:
                continue
            rest = poly[:i] + poly[i + 1 :]
            pts = nodes[rest]
            if max(abs(_area2(pts[0], pts[j], pts[j + 1])) for j in range(1, len(rest) - 1)) <= tol:
                continue
            out.append([p, c, n])
            poly = rest
            break
        else:
            raise BscError("MESH_FAIL", "cannot triangulate a degenerate boundary cell")
    out.append(poly)
    return out


def _delaunay(nodes, h):
    """Delaunay triangles with flat boundary slivers removed.

    Collinear points on a boundary edge can produce zero-area triangles on
    the hull.  They are dropped, and any triangle left with such a point in
    the interior of one of its edges is re-triangulated, keeping the mesh
    conforming.
    """
    tri = Delaunay(nodes).simplices
    p = nodes[tri]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    tol = 1e-10 * h * h
    flat = area <= tol
    if not flat.any():
        return tri
    hanging = np.unique(tri[flat])
    tri = tri[~flat]
    split = {}
    for m in hanging:
        x = nodes[m]
        for j in range(3):
            a, b = nodes[tri[:, j]], nodes[tri[:, (j + 1) % 3]]
            d = b - a
            L2 = np.einsum("ij,ij->i", d, d)
            t = np.einsum("ij,ij->i", x - a, d) / L2
            cross = np.abs(d[:, 0] * (x[1] - a[:, 1]) - d[:, 1] * (x[0] - a[:, 0]))
            hit = (t > 1e-9) & (t < 1 - 1e-9) & (cross <= 1e-9 * L2)
            for i in np.flatnonzero(hit):
                split.setdefault(int(i), {}).setdefault(j, []).append((float(t[i]), int(m)))
    if not split:
        return tri
    keep = np.ones(len(tri), dtype=bool)
    extra = []
    for i, edges in split.items():
        poly = []
        for j in range(3):
            poly.append(int(tri[i, j]))
            poly.extend(m for _, m in sorted(edges.get(j, [])))
        keep[i] = False
        extra.extend(_clip_polygon(nodes, poly, tol))
    return np.vstack([tri[keep], np.asarray(extra, dtype=tri.dtype)])


def _oriented(body, nodes, tri, boundary, h):
    p = nodes[tri]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    tri = tri.copy()
    tri[neg] = tri[neg][:, [0, 2, 1]]
    return Mesh(body, nodes, tri, boundary, float(h))


# --- fields ------------------------------------------------------------------------------


@dataclass
class ScalarField:
    """Nodal values on a mesh; ``admissible`` when boundary nodes carry the datum exactly."""

    mesh: Mesh
    values: np.ndarray
    admissible: bool = False

    def gradients(self):
        Gx, Gy = self.mesh.gradient_operators()
        return np.column_stack([Gx @ self.values, Gy @ self.values])


def grad_sup(field_):
    """Largest Euclidean norm of the per-triangle gradients."""
    g = field_.gradients()
    return float(np.linalg.norm(g, axis=1).max()) if len(g) else 0.0


def energy(F, f, u, k=None):
    """Discrete energy ``sum |T| F(grad u_T) (+ (1/k)|grad u_T|^2) + sum m_i f_i u_i``.

    ``F`` is anything with an ``evaluate`` method on ``(m, 2)`` arrays;
    ``f`` is a nodal array or a scalar.
    """
    mesh = u.mesh
    g = u.gradients()
    a = mesh.areas
    total = float(a @ F.evaluate(g))
    if k is not None:
        total += float(a @ np.sum(g**2, axis=1)) / k
    fv = np.broadcast_to(np.asarray(f, dtype=float), (mesh.n_nodes,))
    return total + float(mesh.lumped_masses() @ (fv * u.values))


# --- minimization ------------------------------------------------------------------------


@dataclass
class MinimizeResult:
    values: np.ndarray
    energy: float
    iterations: int
    converged: bool
    stationarity: float
    trace: list


def minimize(W, f, mesh, u0, tol_grad=1e-8, max_iter=200):
    """Minimize ``sum |T| W(grad u_T) + sum m_i f_i u_i`` over interior nodal values.

    ``W`` provides ``value``, ``gradient`` and ``hessian`` on ``(m, 2)``
    arrays and must be strongly convex.  Boundary values are taken from
    ``u0``.  Damped Newton steps with Armijo backtracking; stops when the
    largest interior nodal gradient is at most ``tol_grad (1 + |E|)``.  The
    returned ``trace`` holds the energy after every iteration.
    """
    Gx, Gy = mesh.gradient_operators()
    a = mesh.areas
    load = mesh.lumped_masses() * np.broadcast_to(np.asarray(f, dtype=float), (mesh.n_nodes,))
    inner = np.flatnonzero(mesh.interior)
    Gxi, Gyi = Gx[:, inner], Gy[:, inner]
    u = np.array(u0, dtype=float)

    def grads(v):
        return np.column_stack([Gx @ v, Gy @ v])

    def E(v):
        return float(a @ W.value(grads(v)) + load @ v)

    e = E(u)
    trace = [e]
    stat = np.inf
    for it in range(max_iter + 1):
        g = grads(u)
        flux = W.gradient(g) * a[:, None]
        res = (Gxi.T @ flux[:, 0] + Gyi.T @ flux[:, 1]) + load[inner]
        stat = float(np.abs(res).max()) if len(res) else 0.0
        if stat <= tol_grad * (1.0 + abs(e)):
            return MinimizeResult(u, e, it, True, stat, trace)
        if it == max_iter:
            break
        H = W.hessian(g) * a[:, None, None]
        K = (
            Gxi.T @ sp.diags(H[:, 0, 0]) @ Gxi
            + Gxi.T @ sp.diags(H[:, 0, 1]) @ Gyi
            + Gyi.T @ sp.diags(H[:, 1, 0]) @ Gxi
            + Gyi.T @ sp.diags(H[:, 1, 1]) @ Gyi
        )
        d = spsolve(K.tocsc(), -res)
        slope = float(res @ d)
        if not slope < 0:
            d = -res
            slope = -float(res @ res)
        step = 1.0
        trial = u.copy()
        while True:
            trial[inner] = u[inner] + step * d
            e_new = E(trial)
            if e_new <= e + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        if e_new > e:
            # no decrease possible at machine precision: accept the current point
            return MinimizeResult(u, e, it, stat <= tol_grad * (1.0 + abs(e)) * 1e3, stat, trace)
        u, e = trial, e_new
        trace.append(e)
    return MinimizeResult(u, e, max_iter, False, stat, trace)


# --- problems and the pipeline ----------------------------------------------------------------


def default_k_schedule(h, k_min=8):
    """Powers of two from ``k_min`` up to ``4/h`` (so the regularization error is ``O(h)``)."""
    top = max(k_min, 2 ** int(math.ceil(math.log2(4.0 / h) - 1e-9)))
    ks = [k_min]
    while ks[-1] < top:
        ks.append(ks[-1] * 2)
    return ks


def choose_q(F, K, f_sup, diam, q_max=1e12):
    """Truncation level ``Q`` with ``L0 / mu_Q <= Q - 1``.

    Starts at ``Q = max(2R, 1)`` and iterates ``Q <- max(2Q, L0/mu_Q + 1)``.

    Returns
    -------
    (Q, mu_Q, L0, steps)

    Raises
    ------
    BscError
        ``NO_Q`` if ``Q`` exceeds ``q_max``.
    """
    Q = max(2.0 * F.R, 1.0)
    steps = 0
    while True:
        m = mu_q(F.modulus, F.R, Q)
        if not m > 0:
            raise BscError("NO_Q", "modulus vanishes on the truncation range")
        L0 = constants(K, F.R, m, f_sup, diam)["L0"]
        if L0 / m <= Q - 1:
            return Q, m, L0, steps
        Q = max(2 * Q, L0 / m + 1)
        steps += 1
        if Q > q_max:
            raise BscError("NO_Q", f"truncation level exceeds {q_max:g}")


@dataclass
class Problem:
    """A Dirichlet problem ``min int F(grad u) + f u`` on a convex polygon."""

    body: object
    lagrangian: object
    f: object  # callable on (n, 2) points, or a constant
    datum: object  # callable on (n, 2) points
    h: float
    k_schedule: list | None = None
    K: float | None = None
    tol_grad: float = 1e-8
    max_iter: int = 200
    init: str = "extension"  # or "zero"
    truncate: bool = True
    min_samples: int = 256

    def f_values(self, pts):
        if callable(self.f):
            return np.asarray(self.f(pts), dtype=float)
        return np.full(len(pts), float(self.f))

    def f_sup(self, pts):
        return float(np.abs(self.f_values(pts)).max()) if len(pts) else 0.0


@dataclass
class SolveOutcome:
    field: ScalarField
    energy: float
    grad_sup: float
    iterations: int
    k_schedule: list
    Q: float | None
    converged: bool
    energy_trace: list
    level_energies: list
    datum: object
    barriers: object
    constants: dict
    mu: float
    integrand: object


def boundary_samples(mesh, min_samples=256):
    """Boundary nodes of the mesh plus extra boundary points when there are fewer than ``min_samples``."""
    pts = mesh.nodes[mesh.boundary]
    if len(pts) < min_samples:
        extra = mesh.body.sample_boundary(min_samples)
        pts = np.vstack([pts, extra])
        _, first = np.unique(np.round(pts, 12), axis=0, return_index=True)
        pts = pts[np.sort(first)]
    return pts


def solve_pipeline(problem, mesh=None):
    """Certify the datum, build barriers, then solve along the ``k``-schedule.

    Steps: certify the bounded slope condition on the boundary samples;
    choose ``Q`` and truncate ``F`` (``F_Q = F`` on ``B_Q``); build the
    barrier pair; initialize from the lower datum extension (or with zero
    interior values); minimize the regularized energy for each ``k``
    with warm starts.
    """
    body = problem.body
    mesh = triangulate(body, problem.h) if mesh is None else mesh
    F = problem.lagrangian
    samples = boundary_samples(mesh, problem.min_samples)
    svals = np.asarray(problem.datum(samples), dtype=float)
    K = problem.K if problem.K is not None else minimal_rank(samples, svals) * (1 + 1e-9) + 1e-12
    datum = certify_bsc(body, samples, svals, K)
    f_nodes = problem.f_values(mesh.nodes)
    f_sup = max(problem.f_sup(mesh.nodes), problem.f_sup(samples))
    diam = body.diameter
    Q = None
    if problem.truncate:
        Q, mu, _, _ = choose_q(F, K, f_sup, diam)
        G = truncate(F, Q)
    else:
        G = F
        mu = min(1.0, F.mu if F.mu is not None else float(F.modulus(np.array([2 * F.R + 1.0]))[0]))
    consts = constants(K, F.R, mu, f_sup, diam)
    pair = build_barriers(body, datum, consts, exterior=problem.datum)

    u = np.zeros(mesh.n_nodes)
    if problem.init == "extension":
        u = extend_datum(datum).phi_minus(mesh.nodes)
    elif problem.init != "zero":
        raise BscError("BAD_CONFIG", f"unknown initialization {problem.init!r}")
    u[mesh.boundary] = problem.datum(mesh.nodes[mesh.boundary])

    ks = list(problem.k_schedule or default_k_schedule(problem.h))
    trace, levels = [], []
    iterations, converged = 0, True
    for k in ks:
        W = G.smoothed(1.0 / k, quad_weight=1.0 / k)
        res = minimize(W, f_nodes, mesh, u, problem.tol_grad, problem.max_iter)
        u = res.values
        iterations += res.iterations
        converged &= res.converged
        trace.extend((k, i, e) for i, e in enumerate(res.trace))
        levels.append({"k": k, "energy": res.energy, "iterations": res.iterations, "stationarity": res.stationarity, "converged": res.converged})
    fld = ScalarField(mesh, u, admissible=True)
    return SolveOutcome(
        field=fld,
        energy=energy(F, f_nodes, fld),
        grad_sup=grad_sup(fld),
        iterations=iterations,
        k_schedule=ks,
        Q=Q,
        converged=bool(converged),
        energy_trace=trace,
        level_energies=levels,
        datum=datum,
        barriers=pair,
        constants=consts,
        mu=mu,
        integrand=G,
    )


def check_sandwich(outcome, tol=1e-6):
    return sandwich_check(outcome.barriers, outcome.field.mesh.nodes, outcome.field.values, tol)


def boundary_gradient_sup(field_):
    """Largest gradient norm over triangles touching the boundary."""
    mesh = field_.mesh
    touch = mesh.boundary[mesh.triangles].any(axis=1)
    g = np.linalg.norm(field_.gradients(), axis=1)
    return float(g[touch].max()) if touch.any() else 0.0


# --- export ------------------------------------------------------------------------------------


def export_field(field_, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "x", "y", "u"])
        for i, (p, v) in enumerate(zip(field_.mesh.nodes, field_.values)):
            w.writerow([i, repr(float(p[0])), repr(float(p[1])), repr(float(v))])


def export_gradients(field_, path):
    g = field_.gradients()
    tri = field_.mesh.triangles
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["triangle_id", "n0", "n1", "n2", "gx", "gy"])
        for i, (t, gi) in enumerate(zip(tri, g)):
            w.writerow([i, int(t[0]), int(t[1]), int(t[2]), repr(float(gi[0])), repr(float(gi[1]))])


def export_trace(outcome, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "iteration", "energy"])
        for k, i, e in outcome.energy_trace:
            w.writerow([k, i, repr(float(e))])


def outcome_summary(outcome):
    return {
        "energy": outcome.energy,
        "grad_sup": outcome.grad_sup,
        "iterations": outcome.iterations,
        "k_schedule": outcome.k_schedule,
        "Q": outcome.Q,
        "converged": outcome.converged,
        "levels": outcome.level_energies,
    }


def save_outcome(outcome, path):
    with open(path, "w") as fh:
        json.dump(outcome_summary(outcome), fh, indent=2)
