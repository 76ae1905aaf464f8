"""One-dimensional reference solutions for radial problems on a disc.

For an isotropic integrand ``F(z) = g(|z|)`` on the disc of radius ``a``
with ``f = -lambda`` and zero boundary values, the minimizer is radial.
The discretization used here has nodes ``r_i = a i / n``, a constant slope
on each annulus and lumped nodal masses:

    E(u) = sum_i A_{i+1/2} g(|u'_{i+1/2}|) - lambda sum_i m_i u_i .

Its optimality conditions can be integrated exactly from the centre: the
flux through the circle ``r_{i+1}`` balances the load inside it, which
fixes a subgradient ``sigma_{i+1/2}`` on every annulus, and ``u'`` is the
smallest slope with ``g'(|u'|) = |sigma|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BscError


@dataclass(frozen=True)
class RadialOracle:
    lam: float
    radius: float
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    slopes: np.ndarray = field(repr=False)
    energy: float
    residual: float

    def __call__(self, r):
        return np.interp(np.asarray(r, dtype=float), self.grid, self.values)

    def gradient_jump(self):
        """Largest jump of the slope between neighbouring annuli (informational)."""
        return float(np.abs(np.diff(self.slopes)).max()) if len(self.slopes) > 1 else 0.0


def audit_isotropy(F, n_dirs=16, radii=None, tol=1e-9):
    radii = np.linspace(0.0, 4.0, 41) if radii is None else np.asarray(radii)
    a = 2 * np.pi * np.arange(n_dirs) / n_dirs
    dirs = np.column_stack([np.cos(a), np.sin(a)])
    vals = F(radii[:, None, None] * dirs[None])
    spread = float(np.abs(vals - vals[:, :1]).max())
    if spread > tol:
        raise BscError("NOT_ISOTROPIC", f"directional values differ by {spread:.3e}")
    return spread


def _profile(F):
    """Value and one-sided slopes of ``t -> F(t e_1)`` for an isotropic ``F``."""

    def value(t):
        t = np.asarray(t, dtype=float)
        return F(np.stack([t, np.zeros_like(t)], axis=-1))

    def slope(t, left=False):
        t = np.asarray(t, dtype=float)
        radial = sum(((g.slope_left(t) if left else g.slope(t)) for g in F.radial), np.zeros(t.shape))
        axial = sum((h.slope(t) for i, h in F.axial if i == 0), np.zeros(t.shape))
        return radial + axial

    return value, slope


def _inverse_slope(slope, s, t_max=1e6):
    """Smallest ``t >= 0`` with right slope ``g'(t+) >= s`` (vectorised bisection)."""
    s = np.asarray(s, dtype=float)
    hi = np.ones_like(s)
    while True:
        short = slope(hi) < s
        if not short.any():
            break
        hi = np.where(short, 2 * hi, hi)
        if hi.max() > t_max:
            raise BscError("NOT_FOUND", "slope level not reached")
    lo = np.zeros_like(s)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        up = slope(mid) >= s
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return np.where(slope(np.zeros_like(s)) >= s, 0.0, hi)


def radial_oracle(F, lam, radius=1.0, n=4096):
    """Exact minimizer of the discrete radial problem with zero boundary value.

    Parameters
    ----------
    F : Lagrangian
        Must be isotropic (checked on 16 directions).
    lam : float
        Load; the functional is ``int F(grad u) - lam u``.
    radius : float
    n : int
        Number of annuli, at least 256.

    Returns
    -------
    RadialOracle
        ``residual`` is the largest violation of the discrete optimality
        conditions (distance of ``sigma`` to the subdifferential).
    """
    if n < 256:
        raise BscError("BAD_PARAMS", "the radial grid needs at least 256 cells")
    audit_isotropy(F)
    value, slope = _profile(F)
    r = radius * np.arange(n + 1) / n
    dr = radius / n
    A = np.pi * (r[1:] ** 2 - r[:-1] ** 2)
    m = np.zeros(n + 1)
    m[:-1] += 0.5 * A
    m[1:] += 0.5 * A
    # flux balance: A_{i+1/2} sigma_{i+1/2} / dr = -lam * sum_{j <= i} m_j
    load = np.cumsum(m[:-1])
    sigma = -lam * load * dr / A
    s = np.abs(sigma)
    t = _inverse_slope(slope, s)
    du = -np.sign(lam) * t
    u = np.zeros(n + 1)
    u[:-1] = -np.cumsum((du * dr)[::-1])[::-1]
    # certify: |sigma| must lie in [g'(t-), g'(t+)] on each annulus
    lo = np.where(t > 0, slope(t, left=True), 0.0)
    hi = slope(t)
    residual = float(np.max(np.maximum(lo - s, 0.0) + np.maximum(s - hi, 0.0)))
    if residual > 1e-10 * (1.0 + s.max()):
        raise BscError("NOT_CONVERGED", f"radial optimality residual {residual:.3e}")
    E = float(A @ value(t) - lam * (m @ u))
    return RadialOracle(float(lam), float(radius), r, u, du, E, residual)


def oracle_error(field_, oracle, center=(0.0, 0.0), h=None):
    """L-infinity difference on nodes with ``|x - center| <= radius (1 - 2h)``."""
    mesh = field_.mesh
    h = mesh.h if h is None else h
    rr = np.linalg.norm(mesh.nodes - np.asarray(center), axis=1)
    keep = rr <= oracle.radius * (1 - 2 * h)
    return float(np.abs(field_.values[keep] - oracle(rr[keep])).max())
