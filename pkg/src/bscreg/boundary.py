"""Bounded slope condition: certification of boundary data and their extensions.

A boundary datum ``phi`` sampled at points ``y`` of the boundary satisfies the
bounded slope condition of rank ``K`` when every sample admits slopes
``zeta_minus``, ``zeta_plus`` of norm at most ``K`` with

    phi(y) + <zeta_minus, x - y>  <=  phi(x)  <=  phi(y) + <zeta_plus, x - y>

for all other samples ``x``.  Each slope is found as the minimal-norm point
of a planar polyhedron, which is a least-distance program solved as a
non-negative least-squares problem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .errors import BscError
from .geometry import ConvexBody, distance_to_body, gauge

SLACK = 1e-12
SOUNDNESS_TOL = 1e-10


def min_norm_point(A, b):
    """Minimal Euclidean norm solution of ``A z <= b`` or ``None`` if infeasible.

    Uses the least-distance programming reduction to NNLS: with
    ``E = [-A^T; -b^T]`` and ``f = e_last``, the NNLS residual ``r`` gives
    ``z = -r[:-1] / r[-1]`` unless ``r`` vanishes, which certifies
    infeasibility.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(A) == 0:
        return np.zeros(A.shape[1])
    E = np.vstack([-A.T, -b[None, :]])
    f = np.zeros(E.shape[0])
    f[-1] = 1.0
    sol = lsq_linear(E, f, bounds=(0.0, np.inf), method="bvls", tol=1e-14)
    r = E @ sol.x - f
    if abs(r[-1]) < 1e-13:
        return None
    return -r[:-1] / r[-1]


def _slope(points, values, i, upper):
    y = points[i]
    d = np.delete(points, i, axis=0) - y
    dv = np.delete(values, i) - values[i]
    scale = np.linalg.norm(d, axis=1)
    keep = scale > 0
    d, dv, scale = d[keep], dv[keep], scale[keep]
    # lower slope: <z, x - y> <= phi(x) - phi(y); upper slope: the mirror image
    A = -d if upper else d
    b = -dv if upper else dv
    tol = SLACK * (1.0 + np.abs(values).max())
    return min_norm_point(A / scale[:, None], b / scale + tol)


@dataclass(frozen=True)
class BoundaryDatum:
    """Certified boundary samples with their lower and upper support slopes."""

    body: ConvexBody
    points: np.ndarray
    values: np.ndarray
    zeta_minus: np.ndarray
    zeta_plus: np.ndarray
    K: float

    def to_json(self):
        samples = np.column_stack([self.points, self.values]).tolist()
        return {"samples": samples, "zeta_minus": self.zeta_minus.tolist(), "zeta_plus": self.zeta_plus.tolist()}

    def soundness_violation(self):
        """Largest violation of the two-sided support inequality over all sample pairs."""
        y, v = self.points, self.values
        diff = y[None, :, :] - y[:, None, :]  # diff[i, j] = x_j - y_i
        dv = v[None, :] - v[:, None]
        low = np.einsum("ik,ijk->ij", self.zeta_minus, diff) - dv
        up = dv - np.einsum("ik,ijk->ij", self.zeta_plus, diff)
        return float(max(low.max(), up.max()))


def slopes(points, values):
    """Minimal-norm lower and upper slopes at every sample (``None`` where infeasible)."""
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    lower = [_slope(points, values, i, upper=False) for i in range(len(points))]
    upper = [_slope(points, values, i, upper=True) for i in range(len(points))]
    return lower, upper


def certify_bsc(body, points, values, K):
    """Certify the bounded slope condition of rank ``K`` on boundary samples.

    Parameters
    ----------
    body : ConvexBody
    points : (m, 2) array
        Boundary samples, at least three.
    values : (m,) array
        Datum values at the samples.
    K : float
        Rank to certify.

    Returns
    -------
    BoundaryDatum

    Raises
    ------
    BscError
        ``INFEASIBLE`` with the first failing sample as witness.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(points) < 3 or points.shape != (len(values), 2):
        raise BscError("BAD_DATUM", "need at least 3 samples with matching values")
    if K < 0:
        raise BscError("BAD_DATUM", "rank must be nonnegative")
    z_minus = np.zeros_like(points)
    z_plus = np.zeros_like(points)
    bound = K * (1 + 1e-12) + 1e-12
    for i in range(len(points)):
        for upper, store in ((False, z_minus), (True, z_plus)):
            z = _slope(points, values, i, upper)
            if z is None or np.linalg.norm(z) > bound:
                need = None if z is None else float(np.linalg.norm(z))
                side = "upper" if upper else "lower"
                witness = {"index": i, "point": points[i].tolist(), "side": side, "required_norm": need}
                raise BscError("INFEASIBLE", f"no {side} slope of norm <= {K} at y={points[i].tolist()}", witness)
            store[i] = z
    datum = BoundaryDatum(body, points, values, z_minus, z_plus, float(K))
    viol = datum.soundness_violation()
    if viol > SOUNDNESS_TOL * (1.0 + np.abs(values).max()):
        raise BscError("INFEASIBLE", f"certificate fails re-validation by {viol:.3e}", {"violation": viol})
    return datum


def minimal_rank(points, values):
    """Smallest rank certified by the minimal-norm slopes (``inf`` if none exists)."""
    lower, upper = slopes(points, values)
    norms = [np.inf if z is None else np.linalg.norm(z) for z in lower + upper]
    return float(max(norms))


def sample_datum(body, fn, n=256):
    """Evaluate a callable datum on ``body.sample_boundary(n)``."""
    pts = body.sample_boundary(n)
    return pts, np.asarray(fn(pts), dtype=float)


def load_datum(path):
    """Read ``{"samples": [[x, y, value], ...], "K": number}``."""
    with open(path) as fh:
        obj = json.load(fh)
    s = np.asarray(obj["samples"], dtype=float)
    return s[:, :2], s[:, 2], obj.get("K")


def save_certificate(datum, path):
    with open(path, "w") as fh:
        json.dump(datum.to_json(), fh, indent=2)


# --- extensions ------------------------------------------------------------------


class AffineEnvelope:
    """Pointwise max (or min) of finitely many affine maps ``c_j + <a_j, x>``."""

    def __init__(self, slopes_, intercepts, kind="max"):
        if kind not in ("max", "min"):
            raise ValueError("kind must be 'max' or 'min'")
        key = np.round(np.column_stack([slopes_, intercepts]), 12)
        _, first = np.unique(key, axis=0, return_index=True)
        self.slopes = np.asarray(slopes_, dtype=float)[np.sort(first)]
        self.intercepts = np.asarray(intercepts, dtype=float)[np.sort(first)]
        self.kind = kind

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        out = np.empty(len(flat))
        chunk = max(1, 4_000_000 // len(self.slopes))
        reduce = np.max if self.kind == "max" else np.min
        for s in range(0, len(flat), chunk):
            vals = flat[s : s + chunk] @ self.slopes.T + self.intercepts
            out[s : s + chunk] = reduce(vals, axis=1)
        return out.reshape(x.shape[:-1])


@dataclass(frozen=True)
class DatumExtension:
    """Convex lower and concave upper extensions of a certified datum.

    ``phi_minus = sup_y [phi(y) + <zeta_minus_y, x - y>] + d (j(x) - 1)`` and
    ``phi_plus = inf_y [phi(y) + <zeta_plus_y, x - y>] + d (1 - j(x))`` with
    ``j`` the gauge of the body and ``d`` the distance from its center to the
    boundary.  Both are ``(K + 1)``-Lipschitz.
    """

    body: ConvexBody
    lower_affine: AffineEnvelope
    upper_affine: AffineEnvelope
    center_distance: float
    lipschitz_rank: float

    def phi_minus(self, x):
        return self.lower_affine(x) + self.center_distance * (gauge(self.body, x) - 1.0)

    def phi_plus(self, x):
        return self.upper_affine(x) + self.center_distance * (1.0 - gauge(self.body, x))


def extend_datum(datum):
    """Build the convex/concave extensions of a certified boundary datum."""
    y, v = datum.points, datum.values
    lower = AffineEnvelope(datum.zeta_minus, v - np.einsum("ij,ij->i", datum.zeta_minus, y), "max")
    upper = AffineEnvelope(datum.zeta_plus, v - np.einsum("ij,ij->i", datum.zeta_plus, y), "min")
    d = float(datum.body.offsets.min())
    return DatumExtension(datum.body, lower, upper, d, datum.K + 1.0)


def containment_margin(ext, s, n_rays=720, n_radial=400):
    """Largest distance to the body among sampled exterior points with ``phi_minus <= phi_plus + s``.

    Points are sampled on rays from the center at gauge values in
    ``(1, 1 + 2 s / d]``; beyond gauge ``1 + s / (2 d)`` the cone terms alone
    already separate the extensions by more than ``s``.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    body = ext.body
    x0 = body.center
    theta = 2 * np.pi * np.arange(n_rays) / n_rays
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    r_bd = 1.0 / gauge(body, x0 + dirs)
    t = 1.0 + 2.0 * s / ext.center_distance * np.arange(1, n_radial + 1) / n_radial
    pts = x0 + (t[None, :, None] * r_bd[:, None, None]) * dirs[:, None, :]
    pts = pts.reshape(-1, 2)
    inside_band = ext.phi_minus(pts) <= ext.phi_plus(pts) + s
    if not np.any(inside_band):
        return 0.0
    return float(distance_to_body(body, pts[inside_band]).max())
