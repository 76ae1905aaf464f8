import json
import subprocess
import sys

import numpy as np
import pytest

from bscreg import cli
from bscreg.errors import BscError
from bscreg.geometry import save_body, square
from bscreg.verify import load_config, run_experiment


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


SMALL_TORSION = {
    "name": "small_torsion",
    "domain": {"type": "disc", "radius": 1.0},
    "lagrangian": {"family": "torsion_rod", "params": {}},
    "f": -4.0,
    "datum": {"type": "zero"},
    "h": [0.25, 0.125],
    "oracle": {"lambda": 4.0, "n": 1024},
    "tolerances": {"oracle_linf": 0.2, "halving_low": 0.5, "halving_high": 4.0},
}


@pytest.fixture(scope="module")
def verify_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("affine")
    code = cli.main(["verify", "affine_square.json", "--out", str(out)])
    return code, out


def test_verify_bundled_affine(verify_run):
    code, out = verify_run
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    names = {c["name"].split("[")[0] for c in cert["checks"]}
    assert {"bsc_certificate", "converged", "sandwich", "boundary_gradient", "affine_exactness"} <= names
    assert all(c["passed"] for c in cert["checks"])
    assert cert["observed"]["affine_error"] <= 1e-8
    for key in ("N", "K", "R", "mu", "Lambda", "T", "L0", "gamma"):
        assert key in cert["constants"]


def test_rederive_from_csv(verify_run):
    _, out = verify_run
    cert = json.loads((out / "certificate.json").read_text())
    field = np.loadtxt(out / "field.csv", delimiter=",", skiprows=1)
    grads = np.loadtxt(out / "gradients.csv", delimiter=",", skiprows=1)
    nodes, u = field[:, 1:3], field[:, 3]
    tri = grads[:, 1:4].astype(int)
    # per-triangle gradient from the nodal values alone
    p, v = nodes[tri], u[tri]
    M = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=1)
    g = np.linalg.solve(M, np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=1)[..., None])[..., 0]
    assert np.allclose(g, grads[:, 4:6], atol=1e-10)
    key = next(iter(cert["observed"]["grad_sup"]))
    assert np.linalg.norm(g, axis=1).max() == pytest.approx(cert["observed"]["grad_sup"][key], rel=1e-9)
    bar = np.loadtxt(out / "barriers.csv", delimiter=",", skiprows=1)
    assert np.allclose(bar[:, :2], nodes)
    margins = cert["observed"]["barrier_margins"][key]
    assert (u - bar[:, 2]).min() == pytest.approx(margins["lower"], rel=1e-9, abs=1e-12)
    assert (bar[:, 3] - u).min() == pytest.approx(margins["upper"], rel=1e-9, abs=1e-12)


def test_verify_is_deterministic(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", SMALL_TORSION)
    assert cli.main(["verify", cfg, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["verify", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("certificate.json", "field.csv", "gradients.csv", "energy_trace.csv", "barriers.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_experiment_oracle_and_propagation():
    cfg = dict(SMALL_TORSION, propagation=True, h=[0.125])
    cert, outcomes = run_experiment(cfg)
    assert cert.passed
    names = [c["name"] for c in cert.checks]
    assert "oracle_linf" in names and "propagation_of_regularity" in names
    assert cert.constants["gamma"] == 1.5
    assert len(outcomes) == 1


def test_log_p1_config_rejected(tmp_path, capsys):
    cfg = dict(SMALL_TORSION, lagrangian={"family": "log_family", "params": {"p": 1.0}})
    code = cli.main(["verify", write_json(tmp_path / "cfg.json", cfg), "--out", str(tmp_path / "o")])
    assert code != 0
    assert "BAD_PARAMS" in capsys.readouterr().err


def test_bad_json_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"domain": {"type": "disc"},\n  "h": [0.1,]}')
    with pytest.raises(BscError, match=r"bad.json:2:"):
        load_config(str(path))


def test_missing_key_and_unknown_config(tmp_path, capsys):
    assert cli.main(["solve", write_json(tmp_path / "c.json", {"domain": {"type": "disc"}})]) == 2
    assert "BAD_CONFIG" in capsys.readouterr().err
    assert cli.main(["verify", "no_such_config.json"]) == 2


def test_check_bsc_cli(tmp_path, capsys):
    body = square(1.0)
    pts = body.sample_boundary(64)
    samples = np.column_stack([pts, pts @ [0.3, -0.4] + 0.2]).tolist()
    datum = write_json(tmp_path / "d.json", {"samples": samples})
    save_body(body, tmp_path / "body.json")
    assert cli.main(["check-bsc", datum, "--body", str(tmp_path / "body.json"), "--out", str(tmp_path / "cert.json")]) == 0
    cert = json.loads((tmp_path / "cert.json").read_text())
    assert cert["K"] == pytest.approx(0.5, rel=1e-6)
    assert cert["soundness_violation"] <= 1e-10

    kinked = write_json(tmp_path / "k.json", {"samples": np.column_stack([pts, np.abs(pts[:, 0])]).tolist(), "K": 10.0})
    assert cli.main(["check-bsc", kinked, "--body", str(tmp_path / "body.json")]) == 2
    err = capsys.readouterr().err
    assert "INFEASIBLE" in err and "witness" in err


def test_approximate_domain_cli(tmp_path):
    body = square(1.0)
    save_body(body, tmp_path / "body.json")
    pts = body.sample_boundary(128)
    datum = write_json(tmp_path / "d.json", {"samples": np.column_stack([pts, pts @ [0.3, -0.4]]).tolist(), "K": 0.5})
    out = tmp_path / "dom.json"
    assert cli.main(["approximate-domain", "--body", str(tmp_path / "body.json"), "--datum", datum, "--k", "10", "--rays", "360", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["k"] == 10
    assert 0 < rep["hausdorff_to_inner"] <= 4 * np.sqrt(0.5) / 10


def test_solve_and_oracle_cli(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", SMALL_TORSION)
    assert cli.main(["solve", cfg, "--h", "0.25", "--out", str(tmp_path / "run")]) == 0
    summary = json.loads((tmp_path / "run" / "outcome.json").read_text())
    assert summary["converged"] and summary["k_schedule"] == [8, 16]
    assert cli.main(["oracle", cfg, "--out", str(tmp_path / "ora.csv")]) == 0
    ora = np.loadtxt(tmp_path / "ora.csv", delimiter=",", skiprows=1)
    assert len(ora) == 1025
    assert ora[0, 1] == pytest.approx(0.75, abs=2e-3)


def test_lemmas_cli(tmp_path, capsys):
    out = tmp_path / "lemmas.json"
    assert cli.main(["lemmas", "--trials", "20000", "--skip-domain", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["passed"]
    adv = next(r for r in rep["rows"] if r["name"].startswith("uc[quadratic declared mu=3]"))
    assert adv["passed"] and "hypothesis" in adv["value"]
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == len(rep["rows"])
    assert all(line.startswith(("PASS", "FAIL")) for line in printed)


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "bscreg.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("check-bsc", "approximate-domain", "solve", "verify", "lemmas", "oracle"):
        assert cmd in res.stdout
