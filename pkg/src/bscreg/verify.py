"""Experiment runner, regularity certificates and the property-suite aggregator."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import lagrangian as lg
from .boundary import certify_bsc, containment_margin, extend_datum
from .errors import BscError
from .geometry import ConvexBody, approximate_domain, body_metrics, regular_polygon, square
from .oracle import oracle_error, radial_oracle
from .solver import (
    Problem,
    boundary_gradient_sup,
    check_sandwich,
    export_field,
    export_gradients,
    export_trace,
    solve_pipeline,
)

DEFAULT_TOLERANCES = {
    "tol_grad": 1e-8,
    "sandwich": 1e-6,
    "oracle_linf": 5e-2,
    "halving_low": 1.4,
    "halving_high": 2.6,
    "affine": 1e-8,
    "boundary_gradient_slack": 0.1,
    "blowup": 0.1,
    "propagation_slack": 0.5,
    "bsc_soundness": 1e-10,
}

# --- configuration ---------------------------------------------------------------------


F_EXPRESSIONS = {
    "zero": lambda p: np.zeros(len(p)),
    "x1": lambda p: p[:, 0],
    "radial": lambda p: -np.sum(p**2, axis=1),
}


def _config_error(msg):
    return BscError("BAD_CONFIG", msg)


def body_from_config(obj, h):
    kind = obj.get("type")
    if kind == "disc":
        r = float(obj.get("radius", 1.0))
        n = max(64, int(math.ceil(2 * math.pi * r / h - 1e-9)))
        return regular_polygon(n, r, tuple(obj.get("center", (0.0, 0.0))))
    if kind == "square":
        return square(float(obj.get("half_side", 1.0)), tuple(obj.get("center", (0.0, 0.0))))
    if kind == "polygon":
        return ConvexBody.from_vertices(obj["vertices"], obj.get("center"))
    raise _config_error(f"domain.type must be disc, square or polygon, got {kind!r}")


def datum_from_config(obj):
    kind = obj.get("type", "zero")
    if kind == "zero":
        return lambda p: np.zeros(len(p))
    if kind == "affine":
        a = np.asarray(obj["slope"], dtype=float)
        b = float(obj.get("offset", 0.0))
        return lambda p: np.asarray(p) @ a + b
    if kind == "x1_squared":
        return lambda p: np.asarray(p)[:, 0] ** 2
    raise _config_error(f"datum.type must be zero, affine or x1_squared, got {kind!r}")


def f_from_config(value):
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict) and "expression" in value:
        name = value["expression"]
        if name not in F_EXPRESSIONS:
            raise _config_error(f"unknown f expression {name!r}")
        scale = float(value.get("scale", 1.0))
        fn = F_EXPRESSIONS[name]
        return lambda p: scale * fn(p)
    raise _config_error("f must be a number or {'expression': name}")


def load_config(path):
    """Read a JSON experiment config; syntax errors carry line and column."""
    with open(path) as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _config_error(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    for key in ("domain", "lagrangian", "h"):
        if key not in cfg:
            raise _config_error(f"{path}: missing required key {key!r}")
    return cfg


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def h_values(cfg):
    h = cfg["h"]
    return [float(x) for x in (h if isinstance(h, list) else [h])]


def problem_from_config(cfg, h, init=None):
    F = lg.from_config(cfg["lagrangian"])
    tol = dict(DEFAULT_TOLERANCES, **cfg.get("tolerances", {}))
    return Problem(
        body=body_from_config(cfg["domain"], h),
        lagrangian=F,
        f=f_from_config(cfg.get("f", 0.0)),
        datum=datum_from_config(cfg.get("datum", {"type": "zero"})),
        h=h,
        k_schedule=cfg.get("k_schedule"),
        K=cfg.get("K"),
        tol_grad=tol["tol_grad"],
        max_iter=int(cfg.get("max_iter", 200)),
        init=init or cfg.get("init", "extension"),
    )


# --- certificate -----------------------------------------------------------------------------


@dataclass
class RegularityCertificate:
    constants: dict
    observed: dict
    checks: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, name, passed, value, tolerance, detail=None):
        entry = {"name": name, "passed": bool(passed), "value": value, "tolerance": tolerance}
        if detail is not None:
            entry["detail"] = detail
        self.checks.append(entry)

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks)

    def to_json(self):
        return {
            "constants": self.constants,
            "observed": self.observed,
            "checks": self.checks,
            "provenance": self.provenance,
            "passed": self.passed,
        }


def _json_clean(obj):
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _is_zero_f(cfg):
    f = cfg.get("f", 0.0)
    return isinstance(f, (int, float)) and f == 0


def run_experiment(cfg, out_dir=None, seed=None):
    """Run the pipeline for every ``h`` in the config and certify the results.

    Returns
    -------
    (RegularityCertificate, list of SolveOutcome)
    """
    tol = dict(DEFAULT_TOLERANCES, **cfg.get("tolerances", {}))
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    hs = sorted(h_values(cfg), reverse=True)
    outcomes = [solve_pipeline(problem_from_config(cfg, h)) for h in hs]
    final = outcomes[-1]
    F = final.integrand
    c = final.constants
    N = 2
    cert = RegularityCertificate(
        constants={
            "N": N,
            "K": c["K"],
            "R": c["R"],
            "mu": c["mu"],
            "Lambda": c["Lambda"],
            "T": c["T"],
            "L0": c["L0"],
            "gamma": (N + 1) / N,
            "diam": c["diam"],
            "Q": final.Q,
        },
        observed={"grad_sup": {}, "sup_abs_u": {}, "barrier_margins": {}},
        provenance={"config_hash": config_hash(cfg), "seed": seed, "name": cfg.get("name", "")},
    )
    for h, out in zip(hs, outcomes):
        key = f"{h:.6g}"
        L = out.constants["L0"] / out.constants["mu"]
        cert.observed["grad_sup"][key] = out.grad_sup
        sup_u = float(np.abs(out.field.values).max())
        cert.observed["sup_abs_u"][key] = sup_u
        sw = check_sandwich(out, tol["sandwich"])
        cert.observed["barrier_margins"][key] = {"lower": sw["lower_margin"], "upper": sw["upper_margin"]}
        viol = out.datum.soundness_violation()
        cert.add(f"bsc_certificate[h={key}]", viol <= tol["bsc_soundness"] * (1 + np.abs(out.datum.values).max()), viol, tol["bsc_soundness"])
        cert.add(f"converged[h={key}]", out.converged, out.iterations, tol["tol_grad"])
        cert.add(f"sandwich[h={key}]", sw["passed"], min(sw["lower_margin"], sw["upper_margin"]), -tol["sandwich"], sw["witness"])
        bg = boundary_gradient_sup(out.field)
        bound = L * (1 + tol["boundary_gradient_slack"])
        cert.add(f"boundary_gradient[h={key}]", bg <= bound, bg, bound)
        phi_max = float(np.abs(out.datum.values).max())
        linf = phi_max + L * out.constants["diam"]
        cert.add(f"linf_transfer[h={key}]", sup_u <= linf, sup_u, linf)
    gs = [out.grad_sup for out in outcomes]
    if len(gs) >= 2:
        growth = gs[-1] / gs[-2] - 1 if gs[-2] > 0 else 0.0
        cert.add("grad_sup_stability", growth <= tol["blowup"], growth, tol["blowup"], {"grad_sup": gs})
    datum_cfg = cfg.get("datum", {"type": "zero"})
    if datum_cfg.get("type") == "affine" and _is_zero_f(cfg):
        phi = datum_from_config(datum_cfg)
        err = max(float(np.abs(o.field.values - phi(o.field.mesh.nodes)).max()) for o in outcomes)
        cert.observed["affine_error"] = err
        cert.add("affine_exactness", err <= tol["affine"], err, tol["affine"])
    if "oracle" in cfg:
        errs = _oracle_checks(cfg, hs, outcomes, cert, tol)
        cert.observed["oracle_error"] = errs
    if cfg.get("propagation"):
        prop = propagation_gap(cfg, hs[-1], outcomes[-1])
        cert.observed["propagation_gap"] = prop
        bound = 2 * F.R + tol["propagation_slack"]
        cert.add("propagation_of_regularity", prop <= bound, prop, bound)
    cert.observed = _json_clean(cert.observed)
    cert.checks = _json_clean(cert.checks)
    cert.constants = _json_clean(cert.constants)
    if out_dir is not None:
        write_artifacts(cert, final, out_dir)
    return cert, outcomes


def _oracle_checks(cfg, hs, outcomes, cert, tol):
    oc = cfg["oracle"]
    F = lg.from_config(cfg["lagrangian"])
    lam = float(oc.get("lambda", -float(cfg.get("f", 0.0))))
    radius = float(cfg["domain"].get("radius", 1.0))
    ora = radial_oracle(F, lam, radius, int(oc.get("n", 4096)))
    center = tuple(cfg["domain"].get("center", (0.0, 0.0)))
    errs = {}
    for h, out in zip(hs, outcomes):
        errs[f"{h:.6g}"] = oracle_error(out.field, ora, center)
    last = errs[f"{hs[-1]:.6g}"]
    cert.add("oracle_linf", last <= tol["oracle_linf"], last, tol["oracle_linf"])
    if len(hs) >= 2 and abs(hs[-2] / hs[-1] - 2) < 1e-9:
        prev = errs[f"{hs[-2]:.6g}"]
        ratio = prev / last if last > 0 else math.inf
        ok = tol["halving_low"] <= ratio <= tol["halving_high"]
        cert.add("oracle_halving", ok, ratio, [tol["halving_low"], tol["halving_high"]])
    cert.observed["oracle_gradient_jump"] = ora.gradient_jump()
    return errs


def propagation_gap(cfg, h, outcome):
    """Largest per-triangle gradient difference between two initializations."""
    other = solve_pipeline(problem_from_config(cfg, h, init="zero" if cfg.get("init", "extension") == "extension" else "extension"), mesh=outcome.field.mesh)
    return float(np.linalg.norm(outcome.field.gradients() - other.field.gradients(), axis=1).max())


def write_artifacts(cert, outcome, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    _atomic_json(os.path.join(out_dir, "certificate.json"), cert.to_json())
    export_field(outcome.field, os.path.join(out_dir, "field.csv"))
    export_gradients(outcome.field, os.path.join(out_dir, "gradients.csv"))
    export_trace(outcome, os.path.join(out_dir, "energy_trace.csv"))
    from .barrier import export_csv

    export_csv(outcome.barriers, outcome.field.mesh.nodes, os.path.join(out_dir, "barriers.csv"))


def _atomic_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# --- property suites ------------------------------------------------------------------------------


def _row(name, passed, value, witness=None):
    row = {"name": name, "passed": bool(passed), "value": value}
    if witness is not None:
        row["witness"] = witness
    return row


def lemma_suite(seed=0, trials=100_000, include_domain=True, approx_samples=1000):
    """Run the property suites with a fixed seed.

    Covers the uniform-convexity consequences for the torsion-rod and
    quadratic integrands, detection of a mis-declared modulus, the monotone
    approximations ``F_k``, the truncation constant ``mu_Q``, the Hessian of
    ``J_Q``, the bounded slope certification and the domain approximation.

    Returns
    -------
    dict
        ``{"rows": [...], "passed": bool}``; each row has a name, a pass
        flag, a value and, where relevant, a witness.
    """
    rows = []
    for label, F in (("torsion_rod", lg.torsion_rod()), ("quadratic", lg.quadratic(2.0))):
        rep = lg.uc_inequality_suite(F, trials=trials, seed=seed)
        for key, r in rep.items():
            rows.append(_row(f"uc[{label}].{key}", r["passed"], r["max_violation"]))
    adv = lg.uc_inequality_suite(lg.redeclare(lg.quadratic(2.0), mu=3.0), trials=trials, seed=seed)
    failing = {k: r for k, r in adv.items() if not r["passed"]}
    witness = {k: r["witness"] for k, r in failing.items()}
    rows.append(_row("uc[quadratic declared mu=3] detected", bool(failing), sorted(failing), witness))

    rows.extend(approximation_rows(seed, approx_samples))
    rows.extend(truncation_rows(seed))
    rows.extend(bsc_rows(include_domain))
    return {"rows": _json_clean(rows), "passed": all(r["passed"] for r in rows), "seed": seed, "trials": trials}


def approximation_rows(seed=0, n=1000, ks=(8, 16, 32)):
    F = lg.torsion_rod()
    rng = np.random.default_rng(seed)
    r = 2.0 * np.sqrt(rng.uniform(size=n))
    a = rng.uniform(0, 2 * np.pi, size=n)
    x = np.column_stack([r * np.cos(a), r * np.sin(a)])
    Fx = F(x)
    vals, gaps = [], []
    for k in ks:
        v = lg.approximate_sequence(F, k)(x)
        vals.append(v)
        gaps.append(float(np.abs(Fx - v).max()))
    rows = [_row(f"F_k <= F (k={k})", float((v - Fx).max()) <= 1e-12, float((v - Fx).max())) for k, v in zip(ks, vals)]
    for (k1, v1), (k2, v2) in zip(zip(ks, vals), zip(ks[1:], vals[1:])):
        d = float((v1 - v2).max())
        rows.append(_row(f"F_{k1} <= F_{k2}", d <= 1e-12, d))
    rows.append(_row("sup_B2 |F_k - F| decreasing", all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:])), gaps))
    return rows


def truncation_rows(seed=0, n=1000, Q=2.0, R=1.0):
    rows = []
    cases = {
        "Phi=1": (lambda t: np.ones(np.shape(t)), 1.0),
        "Phi=t": (lambda t: np.asarray(t, dtype=float), min(1.0, 2 * R)),
        "Phi=t^-1/2": (lambda t: np.asarray(t, dtype=float) ** -0.5, min(1.0, (4 * Q) ** -0.5)),
    }
    for name, (phi, expected) in cases.items():
        got = lg.mu_q(phi, R, Q)
        rows.append(_row(f"mu_Q closed form ({name})", got == expected, got))
    rng = np.random.default_rng(seed)
    r = rng.uniform(2 * Q, 6 * Q, size=n)
    r[0] = 2 * Q
    a = rng.uniform(0, 2 * np.pi, size=n)
    x = np.column_stack([r * np.cos(a), r * np.sin(a)])
    eig = lg.min_eigenvalue(lg.fd_hessian(lambda p: lg.j_q(p, Q), x, 1e-4))
    rows.append(_row("J_Q Hessian >= 1 outside B_2Q", float(eig.min()) >= 1 - 1e-6, float(eig.min())))
    return rows


def bsc_rows(include_domain=True):
    from .geometry import square as sq

    rows = []
    body = sq(1.0)
    pts = body.sample_boundary(256)
    a = np.array([0.3, -0.4])
    vals = pts @ a + 0.2
    datum = certify_bsc(body, pts, vals, float(np.linalg.norm(a)))
    rows.append(_row("affine datum certified at K=|a|", True, datum.soundness_violation()))
    try:
        certify_bsc(body, pts, np.abs(pts[:, 0]), 1e6)
        rows.append(_row("kinked datum rejected", False, None))
    except BscError as exc:
        rows.append(_row("kinked datum rejected", exc.code == "INFEASIBLE", exc.code, exc.witness))
    ext = extend_datum(datum)
    beta = body_metrics(body).beta
    for s in (0.01, 0.1, 1.0):
        m = containment_margin(ext, s)
        rows.append(_row(f"containment margin <= beta s (s={s})", m <= beta * s, m))
    if include_domain:
        K = datum.K
        diam = body.diameter
        haus = []
        for k in (10, 20, 40, 80):
            ap = approximate_domain(body, ext.phi_minus, ext.phi_plus, k, 1.0 / (2 * (K + 1) * k))
            rows.append(_row(f"diam(Omega_k) <= diam + 8 beta/k (k={k})", ap.body.diameter <= diam + 8 * beta / k, ap.body.diameter - diam))
            haus.append(ap.hausdorff_to_inner)
        rows.append(_row("hausdorff(Omega_k, Omega) decreasing", all(b < a_ for a_, b in zip(haus, haus[1:])), haus))
    return rows

