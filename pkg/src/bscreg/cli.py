"""Command-line interface: ``bscreg <subcommand> ...``.

Set ``BSCREG_THREADS`` to cap the number of BLAS/OpenMP threads.
"""

from __future__ import annotations

import os

_threads = os.environ.get("BSCREG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from importlib import resources  # noqa: E402

import numpy as np  # noqa: E402

from .errors import BscError  # noqa: E402


def _resolve_config(path):
    """Accept a file path or the name of a bundled config (``torsion_disc.json``)."""
    if os.path.exists(path):
        return path
    bundled = resources.files("bscreg") / "configs" / os.path.basename(path)
    if bundled.is_file():
        return str(bundled)
    raise BscError("BAD_CONFIG", f"no such config: {path}")


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_check_bsc(args):
    from scipy.spatial import ConvexHull

    from .boundary import certify_bsc, load_datum, minimal_rank
    from .geometry import ConvexBody, load_body

    pts, vals, K = load_datum(args.datum)
    if args.body:
        body = load_body(args.body)
    else:
        hull = ConvexHull(pts)
        body = ConvexBody.from_vertices(pts[hull.vertices])
    if args.K is not None:
        K = args.K
    if K is None:
        K = minimal_rank(pts, vals)
        print(f"minimal rank: {K:.12g}", file=sys.stderr)
    datum = certify_bsc(body, pts, vals, K)
    out = datum.to_json()
    out["K"] = datum.K
    out["soundness_violation"] = datum.soundness_violation()
    _dump(out, args.out)
    return 0


def cmd_approximate_domain(args):
    from .boundary import certify_bsc, extend_datum, load_datum
    from .geometry import load_body

    body = load_body(args.body)
    pts, vals, K = load_datum(args.datum)
    K = args.K if args.K is not None else K
    datum = certify_bsc(body, pts, vals, K)
    ext = extend_datum(datum)
    eps = args.eps if args.eps else 1.0 / (2 * (datum.K + 1) * args.k)
    from .geometry import approximate_domain

    ap = approximate_domain(body, ext.phi_minus, ext.phi_plus, args.k, eps, n_rays=args.rays)
    _dump(
        {
            "k": ap.index,
            "mollification_radius": eps,
            "hausdorff_to_inner": ap.hausdorff_to_inner,
            "area_excess": ap.area_excess,
            "diameter": ap.body.diameter,
            "body": ap.body.to_json(),
        },
        args.out,
    )
    return 0


def cmd_solve(args):
    from .solver import export_field, export_gradients, export_trace, outcome_summary, solve_pipeline
    from .verify import h_values, load_config, problem_from_config

    cfg = load_config(_resolve_config(args.config))
    h = args.h or min(h_values(cfg))
    out = solve_pipeline(problem_from_config(cfg, h))
    os.makedirs(args.out, exist_ok=True)
    export_field(out.field, os.path.join(args.out, "field.csv"))
    export_gradients(out.field, os.path.join(args.out, "gradients.csv"))
    export_trace(out, os.path.join(args.out, "energy_trace.csv"))
    _dump(outcome_summary(out), os.path.join(args.out, "outcome.json"))
    print(f"energy={out.energy:.10g} grad_sup={out.grad_sup:.6g} converged={out.converged}")
    return 0 if out.converged else 1


def cmd_verify(args):
    from .verify import load_config, run_experiment

    cfg = load_config(_resolve_config(args.config))
    cert, _ = run_experiment(cfg, out_dir=args.out, seed=args.seed)
    for c in cert.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}  value={c['value']}  tol={c['tolerance']}")
    return 0 if cert.passed else 1


def cmd_lemmas(args):
    from .verify import lemma_suite

    rep = lemma_suite(seed=args.seed, trials=args.trials, include_domain=not args.skip_domain)
    for r in rep["rows"]:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['name']}  value={r['value']}")
    if args.out:
        _dump(rep, args.out)
    return 0 if rep["passed"] else 1


def cmd_oracle(args):
    from .lagrangian import from_config
    from .oracle import radial_oracle
    from .verify import load_config

    cfg = load_config(_resolve_config(args.config))
    F = from_config(cfg["lagrangian"])
    oc = cfg.get("oracle", {})
    lam = args.lam if args.lam is not None else float(oc.get("lambda", -float(cfg.get("f", 0.0))))
    radius = float(cfg["domain"].get("radius", 1.0))
    ora = radial_oracle(F, lam, radius, args.n or int(oc.get("n", 4096)))
    stream = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(stream)
        w.writerow(["r", "u"])
        for r, u in zip(ora.grid, ora.values):
            w.writerow([repr(float(r)), repr(float(u))])
    finally:
        if args.out:
            stream.close()
    print(f"energy={ora.energy:.12g} residual={ora.residual:.3e} slope_jump={ora.gradient_jump():.6g}", file=sys.stderr)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bscreg", description="Lipschitz regularity toolkit for degenerate convex problems.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check-bsc", help="certify the bounded slope condition of a sampled datum")
    s.add_argument("datum", help='JSON {"samples": [[x, y, value], ...], "K": number}')
    s.add_argument("--body", help="body JSON (default: convex hull of the samples)")
    s.add_argument("--K", type=float, help="rank to certify (default: from the datum file, else minimal)")
    s.add_argument("--out", help="write the certificate here instead of stdout")
    s.set_defaults(func=cmd_check_bsc)

    s = sub.add_parser("approximate-domain", help="outer approximation of a body at index k")
    s.add_argument("--body", required=True)
    s.add_argument("--datum", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--K", type=float)
    s.add_argument("--eps", type=float, help="mollification radius (default 1/(2(K+1)k))")
    s.add_argument("--rays", type=int, default=720)
    s.add_argument("--out")
    s.set_defaults(func=cmd_approximate_domain)

    s = sub.add_parser("solve", help="solve a configured problem at its finest h")
    s.add_argument("config")
    s.add_argument("--h", type=float)
    s.add_argument("--out", default="run")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("verify", help="solve and certify a configured problem")
    s.add_argument("config")
    s.add_argument("--out", default="run")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("lemmas", help="run the property suites")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--skip-domain", action="store_true", help="skip the (slow) domain approximation rows")
    s.add_argument("--out")
    s.set_defaults(func=cmd_lemmas)

    s = sub.add_parser("oracle", help="radial reference solution as CSV")
    s.add_argument("config")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except BscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.witness is not None:
            print(json.dumps({"witness": exc.witness}, default=str), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
