"""Convex planar bodies: metrics, gauge, Hausdorff distance and outer approximations.

A body is stored as a counter-clockwise vertex polygon together with an
interior reference point (the *center*).  Everything here is vectorised over
points: functions taking ``x`` accept arrays of shape ``(2,)`` or ``(..., 2)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from .errors import BscError

MERGE_TOL = 1e-12


def cross2(a, b):
    """z-component of the cross product of planar vectors (broadcasting)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _clean_vertices(vertices):
    """Merge near-duplicate vertices and drop collinear ones."""
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise BscError("BAD_BODY", "vertices must be an (n, 2) array")
    if not np.all(np.isfinite(v)):
        raise BscError("BAD_BODY", "vertices must be finite")
    scale = max(1.0, float(np.abs(v).max()))
    keep = []
    for p in v:
        if not keep or np.linalg.norm(p - keep[-1]) > MERGE_TOL * scale:
            keep.append(p)
    if len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= MERGE_TOL * scale:
        keep.pop()
    v = np.array(keep)
    changed = True
    while changed and len(v) >= 3:
        changed = False
        prev = np.roll(v, 1, axis=0)
        nxt = np.roll(v, -1, axis=0)
        turn = cross2(v - prev, nxt - v)
        lengths = np.linalg.norm(v - prev, axis=1) * np.linalg.norm(nxt - v, axis=1)
        flat = np.abs(turn) <= 1e-14 * np.maximum(lengths, MERGE_TOL)
        if np.any(flat):
            idx = int(np.argmax(flat))
            v = np.delete(v, idx, axis=0)
            changed = True
    if len(v) < 3:
        raise BscError("BAD_BODY", "fewer than 3 vertices survive merging")
    return v


@dataclass(frozen=True)
class ConvexBody:
    """Convex polygon with counter-clockwise vertices and an interior center.

    Use :meth:`from_vertices` to build one; it validates convexity and
    interiority of the center.
    """

    vertices: np.ndarray
    center: np.ndarray
    normals: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @classmethod
    def from_vertices(cls, vertices, center=None):
        v = _clean_vertices(vertices)
        edges = np.roll(v, -1, axis=0) - v
        turn = cross2(edges, np.roll(edges, -1, axis=0))
        if np.all(turn < 0):
            raise BscError("BAD_BODY", "vertices are ordered clockwise")
        if not np.all(turn > 0):
            raise BscError("BAD_BODY", "polygon is not strictly convex")
        c = v.mean(axis=0) if center is None else np.asarray(center, dtype=float)
        if c.shape != (2,) or not np.all(np.isfinite(c)):
            raise BscError("BAD_BODY", "center must be a finite 2-vector")
        lengths = np.linalg.norm(edges, axis=1)
        normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / lengths[:, None]
        offsets = np.einsum("ij,ij->i", normals, v - c)
        if not np.all(offsets > 0):
            raise BscError("BAD_BODY", "center is not strictly interior")
        for arr in (v, c, normals, offsets):
            arr.setflags(write=False)
        return cls(vertices=v, center=c, normals=normals, offsets=offsets)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def edges(self):
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    @property
    def area(self):
        v = self.vertices
        return 0.5 * float(np.sum(cross2(v, np.roll(v, -1, axis=0))))

    @property
    def perimeter(self):
        return float(np.linalg.norm(self.edges, axis=1).sum())

    @property
    def diameter(self):
        v = self.vertices
        d = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
        return float(d.max())

    def gauge(self, x):
        return gauge(self, x)

    def contains(self, x, tol=1e-12):
        """True where ``x`` lies in the closed body (up to ``tol`` in gauge)."""
        return self.gauge(x) <= 1.0 + tol

    def distance(self, x):
        """Euclidean distance from ``x`` to the body (zero inside)."""
        return distance_to_body(self, x)

    def boundary_distance(self, x):
        """Distance from ``x`` to the boundary polygon."""
        return _distance_to_edges(self, np.asarray(x, dtype=float))

    def sample_boundary(self, n=256):
        """Boundary points at roughly uniform arc length, always including vertices.

        Returns an array of at least ``max(n, n_vertices)`` points ordered
        counter-clockwise starting at the first vertex.
        """
        v = self.vertices
        lengths = np.linalg.norm(self.edges, axis=1)
        extra = max(n - len(v), 0)
        # distribute the extra points over edges proportionally to length
        share = lengths / lengths.sum() * extra
        counts = np.floor(share).astype(int)
        rest = extra - counts.sum()
        if rest > 0:
            order = np.argsort(-(share - counts), kind="stable")
            counts[order[:rest]] += 1
        pts = []
        for i, c in enumerate(counts):
            t = np.arange(c + 1) / (c + 1)
            pts.append(v[i] + t[:, None] * self.edges[i])
        return np.vstack(pts)

    def to_json(self):
        return {"vertices": self.vertices.tolist(), "center": self.center.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls.from_vertices(obj["vertices"], obj.get("center"))


def load_body(path):
    with open(path) as fh:
        return ConvexBody.from_json(json.load(fh))


def save_body(body, path):
    with open(path, "w") as fh:
        json.dump(body.to_json(), fh, indent=2)


def regular_polygon(n, radius=1.0, center=(0.0, 0.0), phase=0.0):
    """Regular ``n``-gon inscribed in the circle of given radius."""
    theta = phase + 2 * np.pi * np.arange(n) / n
    c = np.asarray(center, dtype=float)
    verts = c + radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return ConvexBody.from_vertices(verts, c)


def rectangle(xmin, ymin, xmax, ymax, center=None):
    verts = [[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]]
    return ConvexBody.from_vertices(verts, center)


def square(half_side=1.0, center=(0.0, 0.0)):
    cx, cy = center
    return rectangle(cx - half_side, cy - half_side, cx + half_side, cy + half_side, center)


def gauge(body, x):
    """Minkowski gauge of ``body`` about its center.

    For a polygon with outward unit normals ``n_e`` and support offsets
    ``h_e = <n_e, v_e - center>`` the gauge is ``max_e <n_e, x - center> / h_e``.
    """
    x = np.asarray(x, dtype=float)
    d = x - body.center
    vals = (d @ body.normals.T) / body.offsets
    return np.maximum(vals.max(axis=-1), 0.0)


def _segment_distance(p, a, b):
    """Distance from points ``p`` (m, 2) to segments ``a -> b`` (n, 2): (m, n)."""
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("mnj,nj->mn", ap, ab) / denom, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(p[:, None, :] - closest, axis=-1)


def _distance_to_edges(body, x):
    flat = x.reshape(-1, 2)
    v = body.vertices
    d = _segment_distance(flat, v, np.roll(v, -1, axis=0)).min(axis=1)
    return d.reshape(x.shape[:-1])


def distance_to_body(body, x):
    x = np.asarray(x, dtype=float)
    inside = gauge(body, x) <= 1.0
    d = _distance_to_edges(body, x)
    return np.where(inside, 0.0, d)


@dataclass(frozen=True)
class BodyMetrics:
    diameter: float
    inradius: float
    beta: float


def body_metrics(body):
    """Diameter, distance from the center to the boundary, and eccentricity.

    The eccentricity is ``beta = max_y |x0 - y| / (2 min_y |x0 - y|)`` with
    ``y`` ranging over the boundary and ``x0`` the stored center.
    """
    far = float(np.linalg.norm(body.vertices - body.center, axis=1).max())
    near = float(body.offsets.min())
    return BodyMetrics(diameter=body.diameter, inradius=near, beta=0.5 * far / near)


def hausdorff(a, b):
    """Hausdorff distance between two convex polygons.

    The distance to a convex set is convex, so each one-sided supremum is
    attained at a vertex.
    """
    return float(max(distance_to_body(b, a.vertices).max(), distance_to_body(a, b.vertices).max()))


# --- mollification -----------------------------------------------------------


def bump_quadrature(n=32):
    """Midpoint rule for the normalised bump ``c exp(-1/(1-r^2))`` on the unit disc.

    Returns ``(offsets, weights)`` with offsets inside the unit disc and
    weights summing to one.
    """
    s = -1.0 + (2.0 * np.arange(n) + 1.0) / n
    X, Y = np.meshgrid(s, s, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    r2 = np.einsum("ij,ij->i", pts, pts)
    inside = r2 < 1.0
    pts = pts[inside]
    w = np.exp(-1.0 / (1.0 - r2[inside]))
    return pts, w / w.sum()


def mollify(fn, x, eps, quadrature=None):
    """Evaluate ``fn * rho_eps`` at points ``x`` (..., 2) by quadrature."""
    offsets, weights = bump_quadrature() if quadrature is None else quadrature
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 2)
    pts = flat[:, None, :] - eps * offsets[None, :, :]
    vals = np.asarray(fn(pts.reshape(-1, 2))).reshape(len(flat), len(weights))
    return (vals @ weights).reshape(x.shape[:-1])


# --- outer approximation -------------------------------------------------------


@dataclass(frozen=True)
class DomainApproximation:
    body: ConvexBody
    index: int
    hausdorff_to_inner: float
    area_excess: float


def _ray_roots(level, origin, directions, r_lo, r_hi, tol):
    """Vectorised Illinois (modified regula falsi) root finder along rays.

    Each ray must carry a bracket with ``level < 0`` at ``r_lo`` and
    ``level > 0`` at ``r_hi``.  Iteration stops per ray once the bracket or
    the last step is shorter than ``tol``.
    """
    r_lo = r_lo.copy()
    r_hi = r_hi.copy()
    f_lo = level(origin + r_lo[:, None] * directions)
    f_hi = level(origin + r_hi[:, None] * directions)
    side = np.zeros(len(r_lo), dtype=int)
    root = 0.5 * (r_lo + r_hi)
    active = np.ones(len(r_lo), dtype=bool)
    for _ in range(200):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        a, b, fa, fb = r_lo[idx], r_hi[idx], f_lo[idx], f_hi[idx]
        c = (a * fb - b * fa) / (fb - fa)
        c = np.where((c > a) & (c < b), c, 0.5 * (a + b))
        fc = level(origin + c[:, None] * directions[idx])
        step = np.abs(c - root[idx])
        root[idx] = c
        neg = fc < 0
        pos = fc > 0
        # Illinois: halve the value at the endpoint that was not replaced twice in a row
        f_hi[idx] = np.where(neg & (side[idx] == -1), 0.5 * fb, fb)
        f_lo[idx] = np.where(pos & (side[idx] == 1), 0.5 * fa, fa)
        r_lo[idx] = np.where(neg, c, a)
        f_lo[idx] = np.where(neg, fc, f_lo[idx])
        r_hi[idx] = np.where(pos, c, b)
        f_hi[idx] = np.where(pos, fc, f_hi[idx])
        side[idx] = np.where(neg, -1, np.where(pos, 1, 0))
        done = (fc == 0) | (step < tol) | (r_hi[idx] - r_lo[idx] < tol)
        active[idx[done]] = False
    return root


def polygonize_sublevel(level, center, n_rays=720, r_start=None, tol=1e-10):
    """Polygon through the zero crossings of a convex ``level`` along rays.

    ``level`` must be negative at ``center`` and convex, so each ray crosses
    zero exactly once.  Returns a :class:`ConvexBody` (convex hull of the
    crossings) centred at ``center``.
    """
    center = np.asarray(center, dtype=float)
    if level(center[None, :])[0] >= 0:
        raise BscError("FAILS_CONTAINMENT", "level function is not negative at the center")
    theta = 2 * np.pi * np.arange(n_rays) / n_rays
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    r_lo = np.zeros(n_rays) if r_start is None else np.asarray(r_start, dtype=float).copy()
    f_lo = level(center + r_lo[:, None] * dirs)
    if np.any(f_lo >= 0):
        raise BscError("FAILS_CONTAINMENT", "level function is not negative on the start radii")
    step = np.maximum(r_lo, 1.0) * 0.05
    r_hi = r_lo + step
    for _ in range(80):
        f_hi = level(center + r_hi[:, None] * dirs)
        low = f_hi < 0
        if not np.any(low):
            break
        r_lo = np.where(low, r_hi, r_lo)
        step = np.where(low, 2 * step, step)
        r_hi = np.where(low, r_hi + step, r_hi)
    else:
        raise BscError("FAILS_CONTAINMENT", "sublevel set appears unbounded")
    r = _ray_roots(level, center, dirs, r_lo, r_hi, tol)
    pts = center + r[:, None] * dirs
    hull = ConvexHull(pts)
    return ConvexBody.from_vertices(pts[hull.vertices], center)


def approximate_domain(inner, phi_minus, phi_plus, k, mollification_radius, n_rays=720, tol=1e-10, quadrature=None):
    """Smooth-convex outer approximation of ``inner`` at index ``k``.

    The approximating set is
    ``{psi_plus + alpha > psi_minus + |x - x0|^2 / (2 k diam^2)}`` where
    ``psi_minus = phi_minus * rho - 1/k``, ``psi_plus = phi_plus * rho + 1/k``
    and ``alpha = 1/(2k)``.  It is returned as a polygon through 720 ray
    crossings.

    Parameters
    ----------
    inner : ConvexBody
    phi_minus, phi_plus : callable
        Convex / concave extensions of the boundary datum, vectorised over
        points of shape ``(m, 2)``.
    k : int
        Approximation index.
    mollification_radius : float
        Radius of the bump used to smooth the extensions.

    Raises
    ------
    BscError
        ``FAILS_CONTAINMENT`` if the result does not contain ``inner``.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    quad = bump_quadrature() if quadrature is None else quadrature
    x0 = inner.center
    diam = inner.diameter
    alpha = 1.0 / (2 * k)

    def level(x):
        lower = mollify(phi_minus, x, mollification_radius, quad) - 1.0 / k
        upper = mollify(phi_plus, x, mollification_radius, quad) + 1.0 / k
        quad_term = np.sum((x - x0) ** 2, axis=-1) / (2 * k * diam**2)
        return lower + quad_term - upper - alpha

    theta = 2 * np.pi * np.arange(n_rays) / n_rays
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    # start the search on the inner boundary, where the level is negative
    r_inner = 1.0 / gauge(inner, x0 + dirs)
    if np.any(level(x0 + r_inner[:, None] * dirs) >= 0):
        raise BscError("FAILS_CONTAINMENT", "inner boundary is not inside the approximation")
    body = polygonize_sublevel(level, x0, n_rays=n_rays, r_start=r_inner, tol=tol)
    worst = float(gauge(body, inner.vertices).max())
    if worst > 1.0 + 1e-9:
        raise BscError("FAILS_CONTAINMENT", f"inner vertex has gauge {worst:.3e} > 1", witness=worst)
    return DomainApproximation(
        body=body,
        index=int(k),
        hausdorff_to_inner=hausdorff(body, inner),
        area_excess=max(body.area - inner.area, 0.0),
    )
