"""Explicit boundary barriers for minimizers with bounded-slope boundary data.

For each boundary sample ``y`` with lower and upper support slopes
``zeta_minus_y``, ``zeta_plus_y`` the functions

    psi_minus_y(x) = phi(y) + <zeta_minus_y, x - y> + T a_y(x)
    psi_plus_y(x)  = phi(y) + <zeta_plus_y,  x - y> - T a_y(x)

use the paraboloid ``a_y(x) = (2 D + <nu_y, x - y>)^2 - 4 D^2`` (``D`` the
diameter, ``nu_y`` an outward normal).  ``a_y`` vanishes at ``y``, is
nonpositive on the body and has Laplacian 2, so with the constant ``T``
below ``psi_minus_y`` is a subsolution lying under the datum.  The barriers
are the envelope ``lower = max_y psi_minus_y`` and ``upper = min_y psi_plus_y``
inside the body, and the datum outside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BscError
from .geometry import gauge


def constants(K, R, mu, f_sup, diam):
    """Barrier constants ``Lambda``, ``T`` and ``L0``.

    ``Lambda = ||f||_inf + 1``, ``T = (18/mu) ((R + K + 3)/diam + Lambda + 1)``
    and ``L0 = 18 [4 ((R + K + 3)/diam + Lambda + 1)(diam + 1) + K + 2]``; the
    barriers are ``L0/mu``-Lipschitz.

    Raises
    ------
    BscError
        ``MU_OUT_OF_RANGE`` unless ``0 < mu <= 1``.
    """
    if not (0 < mu <= 1):
        raise BscError("MU_OUT_OF_RANGE", f"mu must lie in (0, 1], got {mu}")
    if not diam > 0:
        raise BscError("BAD_PARAMS", "diameter must be positive")
    lam = float(f_sup) + 1.0
    core = (R + K + 3.0) / diam + lam + 1.0
    T = 18.0 / mu * core
    L0 = 18.0 * (4.0 * core * (diam + 1.0) + K + 2.0)
    return {"Lambda": lam, "T": T, "L0": L0, "K": float(K), "R": float(R), "mu": float(mu), "diam": float(diam)}


def paraboloid(y, nu, diam, x):
    """``(2 diam + <nu, x - y>)^2 - 4 diam^2``."""
    s = np.einsum("...i,...i->...", np.asarray(x, dtype=float) - y, nu)
    return (2.0 * diam + s) ** 2 - 4.0 * diam**2


def paraboloid_gradient(y, nu, diam, x):
    s = np.einsum("...i,...i->...", np.asarray(x, dtype=float) - y, nu)
    return 2.0 * (2.0 * diam + s)[..., None] * np.asarray(nu)


def outward_normals(body, points, tol=1e-9):
    """Outward unit normals at boundary points; at vertices the bisector of the adjacent edge normals."""
    points = np.asarray(points, dtype=float)
    rel = (points - body.center) @ body.normals.T - body.offsets  # (m, n_edges), 0 on active edges
    active = np.abs(rel) <= tol * (1.0 + body.offsets.max())
    nu = active.astype(float) @ body.normals
    norm = np.linalg.norm(nu, axis=1)
    if np.any(norm == 0):
        raise BscError("BAD_BODY", "boundary sample not on the body boundary")
    return nu / norm[:, None]


@dataclass(frozen=True)
class BarrierPair:
    """Lower and upper barriers built from a certified boundary datum."""

    body: object
    points: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    zeta_minus: np.ndarray = field(repr=False)
    zeta_plus: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    exterior: object = field(repr=False)
    constants: dict
    diam: float

    @property
    def lipschitz_bound(self):
        return self.constants["L0"] / self.constants["mu"]

    def _envelope(self, x, slopes, sign, reduce):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        T = self.constants["T"]
        out = np.empty(len(flat))
        chunk = max(1, 2_000_000 // len(self.points))
        for s in range(0, len(flat), chunk):
            d = flat[s : s + chunk, None, :] - self.points[None, :, :]
            proj = np.einsum("nmj,mj->nm", d, self.normals)
            a = (2 * self.diam + proj) ** 2 - 4 * self.diam**2
            psi = self.values[None, :] + np.einsum("nmj,mj->nm", d, slopes) + sign * T * a
            out[s : s + chunk] = reduce(psi, axis=1)
        inside = gauge(self.body, flat) <= 1.0
        if not np.all(inside):
            out[~inside] = self.exterior(flat[~inside])
        return out.reshape(x.shape[:-1])

    def lower(self, x):
        return self._envelope(x, self.zeta_minus, 1.0, np.max)

    def upper(self, x):
        return self._envelope(x, self.zeta_plus, -1.0, np.min)

    def psi_gradient_min(self, x):
        """Smallest ``|grad psi_minus_y(x)|`` over samples ``y`` (pointwise)."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        T = self.constants["T"]
        d = x[:, None, :] - self.points[None, :, :]
        proj = np.einsum("nmj,mj->nm", d, self.normals)
        g = self.zeta_minus[None] + T * 2 * (2 * self.diam + proj)[..., None] * self.normals[None]
        return np.linalg.norm(g, axis=-1).min(axis=1)


def build_barriers(body, datum, consts, exterior=None):
    """Barrier pair on ``body`` from a certified datum and :func:`constants`.

    ``exterior`` evaluates the datum outside the body (default: the lower
    extension of the datum).  The diameter used in the paraboloids is the
    body's own, checked against the constant's diameter (``diam <= D <= diam + 1``).
    """
    from .boundary import extend_datum

    D = body.diameter
    if not (consts["diam"] - 1e-9 <= D <= consts["diam"] + 1.0 + 1e-9):
        raise BscError("BAD_BODY", f"body diameter {D} outside [{consts['diam']}, {consts['diam'] + 1}]")
    if datum.K > consts["K"] + 2.0 + 1e-9:
        raise BscError("BAD_DATUM", "datum rank exceeds K + 2")
    if exterior is None:
        exterior = extend_datum(datum).phi_minus
    nu = outward_normals(body, datum.points)
    return BarrierPair(
        body=body,
        points=datum.points,
        values=datum.values,
        zeta_minus=datum.zeta_minus,
        zeta_plus=datum.zeta_plus,
        normals=nu,
        exterior=exterior,
        constants=dict(consts),
        diam=D,
    )


def sandwich_check(pair, nodes, values, tol=1e-6):
    """Nodal check ``lower <= u <= upper``.

    Returns
    -------
    dict
        ``lower_margin`` (min of ``u - lower``), ``upper_margin`` (min of
        ``upper - u``), ``passed`` and the worst node as witness.
    """
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    lo = values - pair.lower(nodes)
    up = pair.upper(nodes) - values
    i_lo, i_up = int(np.argmin(lo)), int(np.argmin(up))
    worst = i_lo if lo[i_lo] <= up[i_up] else i_up
    return {
        "lower_margin": float(lo[i_lo]),
        "upper_margin": float(up[i_up]),
        "passed": bool(lo[i_lo] >= -tol and up[i_up] >= -tol),
        "tolerance": tol,
        "witness": {"node": worst, "point": nodes[worst].tolist(), "value": float(values[worst])},
    }


def lipschitz_audit(fn, body, pairs=10_000, seed=0):
    """Largest difference quotient of ``fn`` over random pairs inside ``body``."""
    rng = np.random.default_rng(seed)
    lo, hi = body.vertices.min(axis=0), body.vertices.max(axis=0)
    pts = rng.uniform(lo, hi, size=(8 * pairs, 2))
    pts = pts[gauge(body, pts) <= 1.0]
    if len(pts) < 2 * pairs:
        pts = np.vstack([pts, body.center + 0.5 * (pts - body.center)])
    a, b = pts[:pairs], pts[pairs : 2 * pairs]
    dist = np.linalg.norm(a - b, axis=1)
    ok = dist > 1e-12
    return float((np.abs(fn(a) - fn(b))[ok] / dist[ok]).max())


def export_csv(pair, points, path):
    """Write ``x, y, lower, upper`` rows for the requested points."""
    points = np.asarray(points, dtype=float)
    lo, up = pair.lower(points), pair.upper(points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "lower", "upper"])
        for p, a, b in zip(points, lo, up):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(a)), repr(float(b))])
