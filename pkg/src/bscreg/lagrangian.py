"""Convex integrands that are uniformly convex outside a ball, and their approximations.

An integrand is assembled from one-dimensional convex *profiles*: radial
terms ``g(|z|)`` and axial terms ``h(|z_i|)``.  Each :class:`Lagrangian`
carries the radius ``R`` of its degeneracy ball and a modulus ``Phi`` such
that on every segment ``[z, z']`` avoiding ``B_R``

    F(t z + (1-t) z') <= t F(z) + (1-t) F(z') - t (1-t) Phi(|z| + |z'|) |z - z'|^2 / 2.

The module also provides the property audits (uniform convexity and its
consequences), the truncation ``F_Q = F + mu_Q J_Q``, the monotone smooth
approximations ``F_k`` and the Moreau-envelope smoothing used by the solver.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import BscError
from .geometry import bump_quadrature

# --- one-dimensional profiles ------------------------------------------------------


def _as_array(t):
    return np.asarray(t, dtype=float)


class Profile:
    """Convex nondecreasing function ``g`` on ``[0, inf)`` used as ``g(|z|)``.

    Subclasses implement ``value``, ``slope`` (right derivative),
    ``slope_left`` (left derivative, ``0`` at the origin) and ``curvature``
    (second derivative where it exists).  ``kinks`` lists the points where
    the derivative jumps; ``smooth`` is True when the even extension has a
    bounded second derivative, so no smoothing is needed in the solver.
    """

    kinks: tuple = ()
    smooth: bool = False

    def value(self, t):
        raise NotImplementedError

    def slope(self, t):
        raise NotImplementedError

    def slope_left(self, t):
        return self.slope(t)

    def curvature(self, t):
        raise NotImplementedError

    def prox(self, t, eps):
        """Proximal point of the even extension at ``t >= 0`` (bisection)."""
        t = _as_array(t)
        lo = np.zeros_like(t)
        hi = t.copy()
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            up = mid + eps * self.slope(mid) >= t
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        at_zero = eps * self.slope(np.zeros_like(t)) >= t
        return np.where(at_zero, 0.0, hi)

    def envelope(self, t, eps):
        """Moreau envelope of the even extension: value, first and second derivative."""
        t = _as_array(t)
        p = self.prox(t, eps)
        val = self.value(p) + (t - p) ** 2 / (2 * eps)
        d1 = (t - p) / eps
        stuck = np.zeros(t.shape, dtype=bool)
        for c in self.kinks:
            stuck |= np.abs(p - c) <= 1e-12 * (1.0 + c)
        with np.errstate(invalid="ignore", over="ignore"):
            curv = self.curvature(np.where(stuck, 1.0, p))
            dp = np.where(stuck, 0.0, 1.0 / (1.0 + eps * curv))
        dp = np.where(np.isnan(dp), 0.0, dp)
        d2 = (1.0 - dp) / eps
        return val, d1, d2


class TorsionProfile(Profile):
    """``t`` for ``t <= 1`` and ``t^2/2 + 1/2`` beyond."""

    kinks = (0.0,)

    def value(self, t):
        t = _as_array(t)
        return np.where(t <= 1.0, t, 0.5 * t**2 + 0.5)

    def slope(self, t):
        t = _as_array(t)
        return np.where(t <= 1.0, 1.0, t)

    def slope_left(self, t):
        t = _as_array(t)
        return np.where(t <= 0.0, 0.0, self.slope(t))

    def curvature(self, t):
        t = _as_array(t)
        return np.where(t > 1.0, 1.0, 0.0)

    def prox(self, t, eps):
        t = _as_array(t)
        return np.where(t <= eps, 0.0, np.where(t <= 1.0 + eps, t - eps, t / (1.0 + eps)))


class QuadraticProfile(Profile):
    """``c t^2 / 2``."""

    smooth = True

    def __init__(self, c):
        self.c = float(c)

    def value(self, t):
        return 0.5 * self.c * _as_array(t) ** 2

    def slope(self, t):
        return self.c * _as_array(t)

    def curvature(self, t):
        return np.full(np.shape(t), self.c)


class PenaltyProfile(Profile):
    """``c (t - Q)_+^2``: the truncation term ``c J_Q``."""

    smooth = True

    def __init__(self, c, Q):
        self.c = float(c)
        self.Q = float(Q)

    def value(self, t):
        return self.c * np.maximum(_as_array(t) - self.Q, 0.0) ** 2

    def slope(self, t):
        return 2 * self.c * np.maximum(_as_array(t) - self.Q, 0.0)

    def curvature(self, t):
        return np.where(_as_array(t) > self.Q, 2 * self.c, 0.0)


class PowerProfile(Profile):
    """``c (t^p - delta)_+``."""

    def __init__(self, c, p, delta=0.0):
        self.c, self.p, self.delta = float(c), float(p), float(delta)
        self.t0 = self.delta ** (1.0 / self.p) if self.delta > 0 else 0.0
        self.kinks = (self.t0,) if self.delta > 0 else ()
        self.smooth = self.delta == 0 and self.p >= 2

    def value(self, t):
        return self.c * np.maximum(_as_array(t) ** self.p - self.delta, 0.0)

    def slope(self, t):
        t = _as_array(t)
        return np.where(t >= self.t0, self.c * self.p * t ** (self.p - 1), 0.0)

    def slope_left(self, t):
        t = _as_array(t)
        return np.where(t > self.t0, self.c * self.p * t ** (self.p - 1), 0.0)

    def curvature(self, t):
        t = _as_array(t)
        with np.errstate(divide="ignore"):
            curv = self.c * self.p * (self.p - 1) * t ** (self.p - 2)
        return np.where(t > self.t0, curv, np.where(t == 0, curv, 0.0))


class ShiftedPowerProfile(Profile):
    """``c (t - delta)_+^p``."""

    def __init__(self, c, p, delta=0.0):
        self.c, self.p, self.delta = float(c), float(p), float(delta)
        self.smooth = self.p >= 2

    def value(self, t):
        return self.c * np.maximum(_as_array(t) - self.delta, 0.0) ** self.p

    def slope(self, t):
        return self.c * self.p * np.maximum(_as_array(t) - self.delta, 0.0) ** (self.p - 1)

    def curvature(self, t):
        s = np.maximum(_as_array(t) - self.delta, 0.0)
        with np.errstate(divide="ignore"):
            curv = self.c * self.p * (self.p - 1) * s ** (self.p - 2)
        return np.where(_as_array(t) >= self.delta, curv, 0.0)


class LogProfile(Profile):
    """``(t - delta)_+ log(1 + t)^p``."""

    def __init__(self, p, delta=0.0):
        self.p, self.delta = float(p), float(delta)
        self.kinks = (self.delta,) if self.delta > 0 else ()
        self.smooth = self.delta == 0

    def value(self, t):
        t = _as_array(t)
        return np.maximum(t - self.delta, 0.0) * np.log1p(t) ** self.p

    def _slope(self, t):
        L = np.log1p(t)
        with np.errstate(invalid="ignore", divide="ignore"):
            extra = self.p * (t - self.delta) * L ** (self.p - 1) / (1 + t)
        return L**self.p + np.nan_to_num(extra)

    def slope(self, t):
        t = _as_array(t)
        return np.where(t >= self.delta, self._slope(t), 0.0)

    def slope_left(self, t):
        t = _as_array(t)
        return np.where(t > self.delta, self._slope(t), 0.0)

    def curvature(self, t):
        t = _as_array(t)
        L = np.log1p(t)
        p = self.p
        with np.errstate(invalid="ignore", divide="ignore"):
            a = 2 * p * L ** (p - 1) / (1 + t)
            b = p * (t - self.delta) * L ** (p - 2) * ((p - 1) - L) / (1 + t) ** 2
        curv = np.nan_to_num(a) + np.nan_to_num(b, posinf=0.0, neginf=0.0)
        return np.where(t > self.delta, curv, 0.0)


# --- moduli --------------------------------------------------------------------------


def _constant_modulus(value, t):
    return np.full(np.shape(t), float(value))


def _power_rate(mu, p, t):
    """Smallest Hessian eigenvalue of ``mu t^p`` used radially (``t > 0``)."""
    with np.errstate(divide="ignore"):
        return mu * p * min(p - 1.0, 1.0) * _as_array(t) ** (p - 2)


def _shifted_power_rate(mu, p, delta, t):
    s = np.maximum(_as_array(t) - delta, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = (p - 1) * s ** (p - 2)
        tangential = s ** (p - 1) / _as_array(t)
    return mu * p * np.minimum(radial, tangential)


def _log_rate(p, t):
    t = _as_array(t)
    return np.log1p(t) ** (p - 1) / (1 + t)


def _endpoint_modulus(rate, R, t):
    """``min(rate(R), rate(t))``: the infimum of a unimodal or monotone rate on ``[R, t]``."""
    t = _as_array(t)
    at_t = rate(t)
    if R <= 0:
        return at_t
    return np.minimum(rate(np.float64(R)), at_t)


# --- the integrand ---------------------------------------------------------------------


@dataclass(frozen=True)
class Lagrangian:
    """Convex integrand ``F(z) = sum_r g_r(|z|) + sum_i h_i(|z_i|)``.

    Attributes
    ----------
    name : str
        Family name.
    params : dict
        Parameters used to build it.
    radial : tuple of Profile
    axial : tuple of (int, Profile)
    R : float
        Radius of the ball outside which ``F`` is uniformly convex.
    modulus : callable
        ``Phi``, vectorised over nonnegative reals.
    mu : float or None
        Set when ``Phi`` is constant.
    superlinear : bool
        Declared ``t Phi(t) -> infinity``.
    """

    name: str
    params: dict
    radial: tuple
    axial: tuple
    R: float
    modulus: object = field(repr=False)
    mu: float | None = None
    superlinear: bool = True

    def evaluate(self, z):
        z = _as_array(z)
        t = np.linalg.norm(z, axis=-1)
        out = np.zeros(t.shape)
        for g in self.radial:
            out = out + g.value(t)
        for i, h in self.axial:
            out = out + h.value(np.abs(z[..., i]))
        return out

    __call__ = evaluate

    def _axial_gradient(self, z):
        w = np.zeros(z.shape)
        for i, h in self.axial:
            w[..., i] += h.slope(np.abs(z[..., i])) * np.sign(z[..., i])
        return w

    def subgradient(self, z):
        """Minimal-norm element of the subdifferential."""
        z = _as_array(z)
        t = np.linalg.norm(z, axis=-1)
        w = self._axial_gradient(z)
        lo = sum((g.slope_left(t) for g in self.radial), np.zeros(t.shape))
        hi = sum((g.slope(t) for g in self.radial), np.zeros(t.shape))
        safe = np.where(t > 0, t, 1.0)
        unit = z / safe[..., None]
        lam = np.clip(-np.einsum("...i,...i->...", unit, w), lo, hi)
        out = lam[..., None] * unit + w
        # at the origin the radial part contributes a ball of radius hi
        wn = np.linalg.norm(w, axis=-1)
        shrink = np.where(wn > 0, np.maximum(0.0, 1.0 - hi / np.where(wn > 0, wn, 1.0)), 0.0)
        at_origin = shrink[..., None] * w
        return np.where((t > 0)[..., None], out, at_origin)

    def smoothed(self, eps, quad_weight=0.0):
        """Moreau-envelope smoothing at scale ``eps`` plus ``quad_weight |z|^2``."""
        return SmoothIntegrand(self, eps, quad_weight)

    def with_penalty(self, c, Q, mu=None, modulus=None, name=None):
        prof = PenaltyProfile(c, Q)
        return Lagrangian(
            name=name or self.name,
            params=dict(self.params),
            radial=self.radial + (prof,),
            axial=self.axial,
            R=self.R,
            modulus=self.modulus if modulus is None else modulus,
            mu=self.mu if mu is None and modulus is None else mu,
            superlinear=True,
        )


class SmoothIntegrand:
    """Smooth convex under-approximation of a :class:`Lagrangian` for Newton solves.

    Non-smooth profiles are replaced by the Moreau envelope (scale ``eps``) of
    their even extension; smooth ones are kept.  ``quad_weight |z|^2`` is added.
    The result is ``C^{1,1}``, below ``F + quad_weight |z|^2`` and increases to
    it as ``eps`` decreases.
    """

    def __init__(self, lagrangian, eps, quad_weight=0.0):
        self.lagrangian = lagrangian
        self.eps = float(eps)
        self.quad_weight = float(quad_weight)

    def _radial(self, t):
        val = np.zeros(t.shape)
        d1 = np.zeros(t.shape)
        d2 = np.zeros(t.shape)
        for g in self.lagrangian.radial:
            if g.smooth:
                v, a, b = g.value(t), g.slope(t), g.curvature(t)
            else:
                v, a, b = g.envelope(t, self.eps)
            val += v
            d1 += a
            d2 += b
        return val, d1, d2

    def _axial(self, s, h):
        if h.smooth:
            return h.value(s), h.slope(s), h.curvature(s)
        return h.envelope(s, self.eps)

    def value(self, z):
        z = _as_array(z)
        t = np.linalg.norm(z, axis=-1)
        out = self._radial(t)[0] + self.quad_weight * t**2
        for i, h in self.lagrangian.axial:
            out = out + self._axial(np.abs(z[..., i]), h)[0]
        return out

    evaluate = value
    __call__ = value

    def gradient(self, z):
        z = _as_array(z)
        t = np.linalg.norm(z, axis=-1)
        _, d1, d2 = self._radial(t)
        safe = np.where(t > 0, t, 1.0)
        g = (d1 / safe)[..., None] * z + 2 * self.quad_weight * z
        for i, h in self.lagrangian.axial:
            s = z[..., i]
            g[..., i] += self._axial(np.abs(s), h)[1] * np.sign(s)
        return g

    def hessian(self, z):
        z = _as_array(z)
        t = np.linalg.norm(z, axis=-1)
        _, d1, d2 = self._radial(t)
        safe = np.where(t > 0, t, 1.0)
        tang = np.where(t > 0, d1 / safe, d2)
        unit = z / safe[..., None]
        outer = unit[..., :, None] * unit[..., None, :]
        eye = np.eye(z.shape[-1])
        H = d2[..., None, None] * outer + tang[..., None, None] * (eye - outer)
        H = np.where((t > 0)[..., None, None], H, d2[..., None, None] * eye)
        H = H + 2 * self.quad_weight * eye
        for i, h in self.lagrangian.axial:
            H[..., i, i] += self._axial(np.abs(z[..., i]), h)[2]
        return H


# --- builtin families ---------------------------------------------------------------


def _check(cond, msg):
    if not cond:
        raise BscError("BAD_PARAMS", msg)


def torsion_rod():
    """``|z|`` inside the unit ball, ``|z|^2/2 + 1/2`` outside; ``Phi = 1``, ``R = 1``."""
    return Lagrangian(
        name="torsion_rod",
        params={},
        radial=(TorsionProfile(),),
        axial=(),
        R=1.0,
        modulus=functools.partial(_constant_modulus, 1.0),
        mu=1.0,
    )


def quadratic(mu=2.0):
    """``mu |z|^2 / 2``; ``Phi = mu``, ``R = 0``."""
    _check(mu > 0, "mu must be positive")
    return Lagrangian(
        name="quadratic",
        params={"mu": mu},
        radial=(QuadraticProfile(mu),),
        axial=(),
        R=0.0,
        modulus=functools.partial(_constant_modulus, mu),
        mu=float(mu),
    )


def power_outside_ball(mu=1.0, delta=0.0, p=2.0, p_axial=(2.0, 2.0), shifted=False, R=None):
    """``mu (|z|^p - delta)_+ + sum |z_i|^{p_i}`` or, with ``shifted``, ``mu (|z| - delta)_+^p + ...``.

    The declared modulus only uses the radial term (axial terms are convex and
    can only help).  The degeneracy radius defaults to ``delta^(1/p)`` (first
    form; ``1`` when ``delta = 0`` and ``p > 2``) and to ``delta + 1``
    (shifted form).
    """
    _check(mu > 0, "mu must be positive")
    _check(delta >= 0, "delta must be nonnegative")
    _check(p > 1, "p must exceed 1")
    p_axial = tuple(float(q) for q in np.atleast_1d(p_axial))
    _check(all(q > 1 for q in p_axial), "axial exponents must exceed 1")
    _check(len(p_axial) == 2, "two axial exponents are needed in the plane")
    axial = tuple((i, PowerProfile(1.0, q)) for i, q in enumerate(p_axial))
    if shifted:
        radial = ShiftedPowerProfile(mu, p, delta)
        R = delta + 1.0 if R is None else float(R)
        _check(R > delta, "R must exceed delta for the shifted form")
        rate = functools.partial(_shifted_power_rate, mu, p, delta)
    else:
        radial = PowerProfile(mu, p, delta)
        if R is None:
            R = delta ** (1.0 / p) if delta > 0 else (0.0 if p <= 2 else 1.0)
        R = float(R)
        _check(R >= radial.t0, "R must enclose the kink of the radial term")
        _check(R > 0 or p <= 2, "R must be positive when p > 2")
        rate = functools.partial(_power_rate, mu, p)
    modulus = functools.partial(_endpoint_modulus, rate, R)
    const = None
    if not shifted and p == 2:
        const = 2.0 * mu
    elif not shifted and p > 2:
        const = float(rate(np.float64(R)))
    elif shifted and p >= 2:
        const = float(rate(np.float64(R)))
    if const is not None:
        modulus = functools.partial(_constant_modulus, const)
    params = {"mu": mu, "delta": delta, "p": p, "p_axial": list(p_axial), "shifted": shifted, "R": R}
    return Lagrangian("power_outside_ball", params, (radial,), axial, R, modulus, const)


def log_family(p=2.0, delta=0.0, R=None):
    """``(|z| - delta)_+ log(1 + |z|)^p``; requires ``p > 1``."""
    _check(delta >= 0, "delta must be nonnegative")
    _check(p > 1, "p must exceed 1: for p <= 1 the modulus Phi has t Phi(t) bounded")
    if R is None:
        R = delta if delta > 0 else 1.0
    R = float(R)
    _check(R > 0 and R >= delta, "R must be positive and at least delta")
    rate = functools.partial(_log_rate, p)
    modulus = functools.partial(_endpoint_modulus, rate, R)
    params = {"p": p, "delta": delta, "R": R}
    return Lagrangian("log_family", params, (LogProfile(p, delta),), (), R, modulus, None)


FAMILIES = {
    "torsion_rod": torsion_rod,
    "quadratic": quadratic,
    "power_outside_ball": power_outside_ball,
    "log_family": log_family,
}


def builtin(name, params=None):
    """Build a named family; raises ``BAD_PARAMS`` on invalid parameters."""
    if name not in FAMILIES:
        raise BscError("BAD_PARAMS", f"unknown family {name!r}")
    try:
        return FAMILIES[name](**(params or {}))
    except TypeError as exc:
        raise BscError("BAD_PARAMS", str(exc)) from exc


def from_config(obj):
    """``{"family": ..., "params": {...}}`` -> :class:`Lagrangian`."""
    return builtin(obj["family"], obj.get("params", {}))


def redeclare(F, R=None, mu=None):
    """Copy of ``F`` with a different declared radius and/or constant modulus (used for audits)."""
    params = dict(F.params)
    modulus, const = F.modulus, F.mu
    if mu is not None:
        params["declared_mu"] = mu
        modulus, const = functools.partial(_constant_modulus, mu), float(mu)
    if R is not None:
        params["declared_R"] = R
    return Lagrangian(
        name=F.name,
        params=params,
        radial=F.radial,
        axial=F.axial,
        R=F.R if R is None else float(R),
        modulus=modulus,
        mu=const,
        superlinear=F.superlinear,
    )


def superlinear_spot_check(F, points=(1e3, 1e6)):
    """``t Phi(t)`` at the given points; increasing values support the declaration."""
    t = np.asarray(points, dtype=float)
    return t * F.modulus(t)


# --- geometry of segments ---------------------------------------------------------------


def segment_distance_to_origin(z, w):
    z = _as_array(z)
    w = _as_array(w)
    d = w - z
    dd = np.einsum("...i,...i->...", d, d)
    t = np.clip(-np.einsum("...i,...i->...", z, d) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
    return np.linalg.norm(z + t[..., None] * d, axis=-1)


def segment_length_outside(z, w, R):
    """Length of ``[z, w]`` outside the open ball ``B_R`` (exact line-circle intersection)."""
    z = _as_array(z)
    w = _as_array(w)
    d = w - z
    length = np.linalg.norm(d, axis=-1)
    a = np.einsum("...i,...i->...", d, d)
    b = 2 * np.einsum("...i,...i->...", z, d)
    c = np.einsum("...i,...i->...", z, z) - R**2
    disc = b**2 - 4 * a * c
    ok = (a > 0) & (disc > 0)
    root = np.sqrt(np.where(ok, disc, 0.0))
    safe_a = np.where(a > 0, a, 1.0)
    t1 = np.clip((-b - root) / (2 * safe_a), 0.0, 1.0)
    t2 = np.clip((-b + root) / (2 * safe_a), 0.0, 1.0)
    inside = np.where(ok, (t2 - t1) * length, 0.0)
    return np.maximum(length - inside, 0.0)


# --- property audits -------------------------------------------------------------------------


def _random_points(rng, n, radius):
    r = radius * np.sqrt(rng.uniform(size=n))
    a = rng.uniform(0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def _annulus_points(rng, n, r_in, r_out):
    r = rng.uniform(r_in, r_out, size=n)
    a = rng.uniform(0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def _segments_avoiding_ball(rng, n, R, radius, max_attempts=10_000):
    """``n`` segments in ``B_radius`` whose distance to the origin exceeds ``R``.

    Half are uniform in the ball, half are short segments starting in the
    annulus ``R < |z| < R + 1`` where violations concentrate.
    """
    zs, ws = [], []
    have = 0
    attempts = 0
    while have < n:
        m = max(2 * (n - have), 64)
        half = m // 2
        z1 = _random_points(rng, half, radius)
        w1 = _random_points(rng, half, radius)
        z2 = _annulus_points(rng, m - half, R, R + 1.0)
        w2 = z2 + _random_points(rng, m - half, 1.0)
        z = np.vstack([z1, z2])
        w = np.vstack([w1, w2])
        ok = segment_distance_to_origin(z, w) > R
        zs.append(z[ok])
        ws.append(w[ok])
        have += int(ok.sum())
        attempts += m
        if attempts > max_attempts * n:
            break
    z = np.vstack(zs)[:n]
    w = np.vstack(ws)[:n]
    return z, w


def _worst(viol, tol, **arrays):
    idx = int(np.argmax(viol))
    return {
        "max_violation": float(viol[idx]),
        "count": int(np.sum(viol > tol)),
        "checked": int(viol.size),
        "witness": {k: np.asarray(v)[idx].tolist() for k, v in arrays.items()},
    }


def check_phi_uniform_convexity(F, trials=10_000, seed=0, tol=1e-9, radius=None):
    """Sample the defining inequality and its subgradient form on segments avoiding ``B_R``.

    Returns a dict with entries ``"convex_combination"`` and ``"subgradient"``,
    each holding the largest violation, the number of violations above
    ``tol`` and a witness.
    """
    rng = np.random.default_rng(seed)
    R = F.R
    radius = 3.0 * (R + 1.0) if radius is None else radius
    z, w = _segments_avoiding_ball(rng, trials, R, radius)
    phi = F.modulus(np.linalg.norm(z, axis=1) + np.linalg.norm(w, axis=1))
    d2 = np.sum((z - w) ** 2, axis=1)
    Fz, Fw = F(z), F(w)
    worst = np.full(len(z), -np.inf)
    worst_theta = np.zeros(len(z))
    for th in np.arange(1, 10) / 10.0:
        mid = th * z + (1 - th) * w
        v = F(mid) - (th * Fz + (1 - th) * Fw - 0.5 * th * (1 - th) * phi * d2)
        better = v > worst
        worst = np.where(better, v, worst)
        worst_theta = np.where(better, th, worst_theta)
    zeta = F.subgradient(z)
    sub = Fz + np.einsum("ij,ij->i", zeta, w - z) + 0.5 * phi * d2 - Fw
    return {
        "convex_combination": _worst(worst, tol, z=z, z_prime=w, theta=worst_theta),
        "subgradient": _worst(sub, tol, z=z, z_prime=w),
        "segments": int(len(z)),
    }


def uc_inequality_suite(F, trials=100_000, seed=0, tol=1e-9):
    """Audit the consequences of ``mu``-uniform convexity outside ``B_R``.

    Checks, on random samples (mixing uniform, near-``R`` and near-``2R``
    radii and the extremal radial configuration ``xi = t xi'``):

    ``hausdorff_length``
        ``F(xi') >= F(xi) + <zeta, xi' - xi> + (mu/4) H^1([xi, xi'] \\ B_R)^2``.
    ``one_third``
        ``H^1([xi, xi'] \\ B_R) >= |xi - xi'| / 3`` when ``|xi'| >= 2R``.
    ``subgradient``
        ``F(xi') >= F(xi) + <zeta, xi' - xi> + (mu/36) |xi' - xi|^2`` when
        ``|xi| >= 2R`` or ``|xi'| >= 2R``.
    ``monotonicity``
        ``<zeta - zeta', xi - xi'> >= (mu/18) |xi - xi'|^2`` (same condition).
    ``convex_combination``
        the defining inequality with ``mu/36`` for ``xi, xi'`` outside ``B_2R``.
    ``quadratic_growth``
        ``F(xi) >= (mu/72)|xi|^2 - (|F(0)| + (18/mu)|zeta_0|^2)``.
    ``hypothesis``
        the declared modulus itself: ``(mu/2) theta (1-theta) |xi - xi'|^2``
        deficit on segments avoiding ``B_R``.

    Returns
    -------
    dict
        name -> {max_violation, count, checked, witness, passed}.
    """
    if F.mu is None:
        raise BscError("BAD_PARAMS", "the suite needs a constant modulus mu")
    mu, R = F.mu, F.R
    rng = np.random.default_rng(seed)
    n = int(trials)
    big = 2 * R + 4.0

    def pairs_outer(count):
        # xi' with |xi'| >= 2R, xi anywhere; a fifth of them on the extremal ray
        xp = _annulus_points(rng, count, 2 * R, big)
        xi = _random_points(rng, count, big + 2 * R)
        k = count // 5
        t = rng.uniform(-1.5, 1.0, size=k)
        xi[:k] = t[:, None] * xp[:k]
        k2 = count // 5
        xi[k : k + k2] = _annulus_points(rng, k2, 0.0, R + 0.5)
        return xi, xp

    report = {}

    # hausdorff-length inequality: all pairs
    xi = np.vstack([_random_points(rng, n // 2, big), _annulus_points(rng, n - n // 2, 0.0, 2 * R + 1)])
    xp = np.vstack([_random_points(rng, n // 2, big), xi[n // 2 :] + _random_points(rng, n - n // 2, 2.0)])
    zeta = F.subgradient(xi)
    h1 = segment_length_outside(xi, xp, R)
    v = F(xi) + np.einsum("ij,ij->i", zeta, xp - xi) + 0.25 * mu * h1**2 - F(xp)
    report["hausdorff_length"] = _worst(v, tol, xi=xi, xi_prime=xp)

    xi, xp = pairs_outer(n)
    h1 = segment_length_outside(xi, xp, R)
    v = np.linalg.norm(xi - xp, axis=1) / 3.0 - h1
    report["one_third"] = _worst(v, tol, xi=xi, xi_prime=xp)

    xi, xp = pairs_outer(n)
    swap = rng.uniform(size=n) < 0.5
    xi[swap], xp[swap] = xp[swap].copy(), xi[swap].copy()
    zeta = F.subgradient(xi)
    d2 = np.sum((xp - xi) ** 2, axis=1)
    v = F(xi) + np.einsum("ij,ij->i", zeta, xp - xi) + mu / 36.0 * d2 - F(xp)
    report["subgradient"] = _worst(v, tol, xi=xi, xi_prime=xp)

    xi, xp = pairs_outer(n)
    zeta, zeta_p = F.subgradient(xi), F.subgradient(xp)
    d2 = np.sum((xi - xp) ** 2, axis=1)
    v = mu / 18.0 * d2 - np.einsum("ij,ij->i", zeta - zeta_p, xi - xp)
    report["monotonicity"] = _worst(v, tol, xi=xi, xi_prime=xp)

    xi = _annulus_points(rng, n, 2 * R, big)
    xp = _annulus_points(rng, n, 2 * R, big)
    theta = rng.uniform(size=n)
    d2 = np.sum((xi - xp) ** 2, axis=1)
    mid = theta[:, None] * xi + (1 - theta[:, None]) * xp
    v = F(mid) - (theta * F(xi) + (1 - theta) * F(xp) - mu / 36.0 * theta * (1 - theta) * d2)
    report["convex_combination"] = _worst(v, tol, xi=xi, xi_prime=xp, theta=theta)

    xi = np.vstack([_random_points(rng, n // 2, big), _annulus_points(rng, n - n // 2, 0.0, 2 * R + 1)])
    zero = np.zeros((1, 2))
    F0 = float(F(zero)[0])
    z0 = float(np.linalg.norm(F.subgradient(zero)[0]))
    v = mu / 72.0 * np.sum(xi**2, axis=1) - (abs(F0) + 18.0 / mu * z0**2) - F(xi)
    report["quadratic_growth"] = _worst(v, tol, xi=xi)

    hyp = check_phi_uniform_convexity(F, trials=n, seed=seed + 1, tol=tol)
    worse = max(hyp["convex_combination"], hyp["subgradient"], key=lambda r: r["max_violation"])
    report["hypothesis"] = worse
    for entry in report.values():
        entry["passed"] = entry["count"] == 0
    return report


def superlinearity_radius(F, M, n_dirs=64, r_max=1e6):
    """Smallest radius beyond which ``F(xi) >= M |xi|`` on 64 rays.

    Along each ray ``h(t) = F(t w) - M t`` is convex, so its negative set is
    an interval; the returned radius is the largest right end point.

    Raises
    ------
    BscError
        ``NOT_FOUND`` if some ray stays below ``M t`` up to ``r_max``.
    """
    theta = 2 * np.pi * np.arange(n_dirs) / n_dirs
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])

    def h(t):
        return F(t[:, None] * dirs) - M * t

    # walk out until h is nonnegative and increasing on every ray
    hi = np.ones(n_dirs)
    while True:
        ok = (h(hi) >= 0) & (h(hi) > h(0.5 * hi))
        if np.all(ok):
            break
        hi = np.where(ok, hi, 2 * hi)
        if np.any(hi > r_max):
            raise BscError("NOT_FOUND", f"F(xi) >= {M}|xi| not reached below radius {r_max:g}")
    # golden-section search for the minimiser of h on [0, hi]
    a = np.zeros(n_dirs)
    b = hi.copy()
    g = (np.sqrt(5) - 1) / 2
    for _ in range(120):
        c = b - g * (b - a)
        d = a + g * (b - a)
        left = h(c) < h(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    tmin = 0.5 * (a + b)
    floor = -1e-12 * (1.0 + M * tmin)
    negative = h(tmin) < floor
    lo = np.where(negative, tmin, 0.0)
    up = hi.copy()
    for _ in range(200):
        mid = 0.5 * (lo + up)
        neg = h(mid) < -1e-12 * (1.0 + M * mid)
        lo = np.where(neg, mid, lo)
        up = np.where(neg, up, mid)
    radius = np.where(negative, up, 0.0)
    return float(radius.max())


# --- truncation ------------------------------------------------------------------------------


def j_q(x, Q):
    """``(|x| - Q)_+^2``."""
    return np.maximum(np.linalg.norm(_as_array(x), axis=-1) - Q, 0.0) ** 2


def mu_q(modulus, R, Q, n_grid=4096):
    """``min{1, min_{t in [2R, 4Q]} Phi(t)}`` (endpoints plus a geometric grid)."""
    lo = max(2.0 * R, 0.0)
    hi = 4.0 * Q
    if lo > 0:
        grid = np.geomspace(lo, hi, n_grid)
    else:
        grid = np.concatenate([[0.0], np.geomspace(hi * 1e-9, hi, n_grid)])
    vals = np.asarray(modulus(grid), dtype=float)
    vals = vals[np.isfinite(vals)]
    ends = np.asarray(modulus(np.array([lo, hi])), dtype=float)
    ends = ends[np.isfinite(ends)]
    return float(min(1.0, vals.min(initial=np.inf), ends.min(initial=np.inf)))


def truncate(F, Q):
    """``F_Q = F + mu_Q J_Q``: equal to ``F`` on ``B_Q``, ``mu_Q``-uniformly convex outside ``B_R``."""
    if not Q > F.R:
        raise BscError("BAD_PARAMS", "truncation level must exceed R")
    m = mu_q(F.modulus, F.R, Q)
    G = F.with_penalty(m, Q, mu=m, modulus=functools.partial(_constant_modulus, m), name=F.name + "_Q")
    return G


def fd_hessian(fn, x, h=1e-4):
    """Central finite-difference Hessian of a scalar field on the plane at points ``x`` (n, 2)."""
    x = _as_array(x).reshape(-1, 2)
    e = np.eye(2) * h
    H = np.empty((len(x), 2, 2))
    f0 = fn(x)
    for i in range(2):
        H[:, i, i] = (fn(x + e[i]) - 2 * f0 + fn(x - e[i])) / h**2
    off = (fn(x + e[0] + e[1]) - fn(x + e[0] - e[1]) - fn(x - e[0] + e[1]) + fn(x - e[0] - e[1])) / (4 * h**2)
    H[:, 0, 1] = H[:, 1, 0] = off
    return H


def min_eigenvalue(H):
    return np.linalg.eigvalsh(H)[..., 0]


def directional_curvature_min(fn, x, h=1e-4, n_dirs=16):
    """Smallest second difference ``(f(x + h e) - 2 f(x) + f(x - h e)) / h^2`` over ``n_dirs`` unit directions.

    Unlike the eigenvalues of a finite-difference Hessian matrix, every
    directional second difference of a convex function is nonnegative.
    """
    x = _as_array(x).reshape(-1, 2)
    a = np.pi * np.arange(n_dirs) / n_dirs
    f0 = fn(x)
    out = np.full(len(x), np.inf)
    for e in np.column_stack([np.cos(a), np.sin(a)]) * h:
        out = np.minimum(out, (fn(x + e) - 2 * f0 + fn(x - e)) / h**2)
    return out


def mollified_hessian_check(F, eps, n=200, seed=0, outer=None, quadrature=None):
    """Sampled curvature of ``F * rho_eps`` against ``min_{[2R, 2(R' + eps)]} Phi``.

    Points are drawn in the annulus ``R + eps < |x| < R'`` (``R' = R + 2`` by
    default).  Returns ``(margin, points)`` where ``margin`` is the curvature
    minus the bound (nonnegative when the characterization holds).
    """
    from .geometry import mollify

    quad = bump_quadrature() if quadrature is None else quadrature
    outer = F.R + 2.0 if outer is None else outer
    rng = np.random.default_rng(seed)
    x = _annulus_points(rng, n, F.R + eps * 1.05, outer)
    grid = np.linspace(2 * F.R, 2 * (outer + eps), 2001)
    bound = float(np.min(F.modulus(grid)))
    curv = directional_curvature_min(lambda p: mollify(F, p, eps, quad), x, h=eps / 10)
    return curv - bound, x


# --- monotone smooth approximations ------------------------------------------------------------


def lipschitz_on_ball(F, k, n_angles=64, n_radii=64):
    """Sampled Lipschitz constant of ``F`` on ``B_k`` (max subgradient norm times 1.1)."""
    r = k * np.arange(1, n_radii + 1) / n_radii
    a = 2 * np.pi * np.arange(n_angles) / n_angles
    pts = (r[:, None, None] * np.stack([np.cos(a), np.sin(a)], axis=-1)[None]).reshape(-1, 2)
    pts = np.vstack([pts, np.zeros((1, 2))])
    return 1.1 * float(np.linalg.norm(F.subgradient(pts), axis=1).max())


def epsilon_schedule(F, k_max, mu_prime):
    """Mollification radii ``eps_1..eps_kmax`` with ``eps_k <= Gamma^-_k, Gamma^+_k`` and decreasing.

    ``Gamma^-_k = (1/k - 1/(k+1)) / (L_k + (6k + 5) mu'/2)``,
    ``Gamma^+_k = (1/k - 1/(k+1)) / (L_k + mu' (k + 1))``.
    """
    eps = []
    prev = 0.5
    for k in range(1, k_max + 1):
        L = lipschitz_on_ball(F, k)
        gap = 1.0 / k - 1.0 / (k + 1)
        g_minus = gap / (L + (6 * k + 5) * mu_prime / 2)
        g_plus = gap / (L + mu_prime * (k + 1))
        prev = min(g_minus, g_plus, prev)
        eps.append(prev)
    return np.array(eps)


@dataclass(frozen=True)
class RegularizedLagrangian:
    """``F_k = Ftilde_k * rho_eps_k - 1/k`` with ``Ftilde_k`` a finite max over generators.

    Generators sit at the origin and on a polar grid of ``B_k`` (64 angles,
    radial spacing 1/8 so that grids are nested in ``k``).  A generator at
    ``y`` contributes ``F(y) + <zeta_y, x - y> + (mu'/2)|x - y|^2 [|y| >= 2R]``.
    """

    base: Lagrangian
    index: int
    epsilon: float
    mu_prime: float
    points: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    slopes: np.ndarray = field(repr=False)
    curved: np.ndarray = field(repr=False)

    def _generator_values(self, x):
        d = x[:, None, :] - self.points[None, :, :]
        lin = self.values[None, :] + np.einsum("gj,ngj->ng", self.slopes, d)
        quad = 0.5 * self.mu_prime * np.einsum("ngj,ngj->ng", d, d) * self.curved[None, :]
        return lin + quad

    def envelope(self, x):
        """``Ftilde_k`` (before mollification)."""
        x = _as_array(x)
        flat = x.reshape(-1, 2)
        out = np.empty(len(flat))
        step = max(1, 2_000_000 // len(self.points))
        for s in range(0, len(flat), step):
            out[s : s + step] = self._generator_values(flat[s : s + step]).max(axis=1)
        return out.reshape(x.shape[:-1])

    def evaluate(self, x, quadrature=None):
        offsets, weights = bump_quadrature() if quadrature is None else quadrature
        x = _as_array(x)
        flat = x.reshape(-1, 2)
        eps = self.epsilon
        out = np.empty(len(flat))
        step = max(1, 200_000 // len(self.points))
        for s in range(0, len(flat), step):
            xc = flat[s : s + step]
            V = self._generator_values(xc)
            # gradient bound of each generator on B_eps(x): prune those that cannot be maximal
            d = xc[:, None, :] - self.points[None, :, :]
            grad = self.slopes[None] + self.mu_prime * self.curved[None, :, None] * d
            C = np.linalg.norm(grad, axis=-1) + self.mu_prime * eps * self.curved[None, :]
            top = V.argmax(axis=1)
            floor = V[np.arange(len(xc)), top] - C[np.arange(len(xc)), top] * eps
            score = V + C * eps
            m = int((score >= floor[:, None]).sum(axis=1).max())
            keep = np.argpartition(-score, m - 1, axis=1)[:, :m] if m < score.shape[1] else np.tile(np.arange(score.shape[1]), (len(xc), 1))
            pts = xc[:, None, :] - eps * offsets[None, :, :]  # (n, q, 2)
            block = max(1, 3_000_000 // (len(weights) * m))
            for b in range(0, len(xc), block):
                sel = keep[b : b + block]
                y = self.points[sel]
                dd = pts[b : b + block, :, None, :] - y[:, None, :, :]  # (n, q, m, 2)
                lin = self.values[sel][:, None, :] + np.einsum("nmj,nqmj->nqm", self.slopes[sel], dd)
                quad = 0.5 * self.mu_prime * np.einsum("nqmj,nqmj->nqm", dd, dd) * self.curved[sel][:, None, :]
                out[s + b : s + b + len(sel)] = (lin + quad).max(axis=2) @ weights
        return out.reshape(x.shape[:-1]) - 1.0 / self.index

    __call__ = evaluate

    def hessian_lower_bound(self, x, h=1e-4):
        """Smallest directional second difference (step ``h``) at ``x``."""
        return directional_curvature_min(self.evaluate, x, h)


def _generators(F, k, mu_prime, n_angles=64, radial_spacing=0.125):
    radii = radial_spacing * np.arange(1, int(np.floor(k / radial_spacing + 1e-9)) + 1)
    a = 2 * np.pi * np.arange(n_angles) / n_angles
    dirs = np.column_stack([np.cos(a), np.sin(a)])
    pts = (radii[:, None, None] * dirs[None]).reshape(-1, 2)
    pts = np.vstack([np.zeros((1, 2)), pts])
    vals = F(pts)
    slopes = F.subgradient(pts)
    curved = (np.linalg.norm(pts, axis=1) >= 2 * F.R).astype(float)
    # generators with the same affine part and no quadratic term are redundant
    intercept = vals - np.einsum("ij,ij->i", slopes, pts)
    key = np.round(np.column_stack([slopes, intercept, curved, np.where(curved[:, None] > 0, pts, 0.0)]), 13)
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    return pts[first], vals[first], slopes[first], curved[first]


def approximate_sequence(F, k, n_angles=64, radial_spacing=0.125):
    """The ``k``-th monotone smooth approximation ``F_k`` of ``F``.

    Requires a constant modulus ``mu`` and ``k >= 2R``.  Uses
    ``mu' = mu / 36`` and the decreasing radius schedule of
    :func:`epsilon_schedule`.
    """
    if F.mu is None:
        raise BscError("BAD_PARAMS", "approximation needs a constant modulus mu")
    if k < 2 * F.R or k < 1:
        raise BscError("BAD_PARAMS", "k must be at least 2R and positive")
    mu_prime = F.mu / 36.0
    eps = epsilon_schedule(F, int(k), mu_prime)[-1]
    pts, vals, slopes, curved = _generators(F, k, mu_prime, n_angles, radial_spacing)
    return RegularizedLagrangian(F, int(k), float(eps), mu_prime, pts, vals, slopes, curved)
