import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from gradconstraint.cli_report import FAIL, INPUT_ERROR, PASS, main

ENTRY_KEYS = {"name", "value", "tolerance", "pass", "paper_anchor"}


def write_cfg(tmp_path, name, **cfg):
    cfg.setdefault("output", f"out_{name}")
    p = tmp_path / f"{name}.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def report(tmp_path, name, fname):
    return json.loads((tmp_path / f"out_{name}" / fname).read_text())


def checks(doc):
    return {c["name"]: c for c in doc["checks"]}


def test_body_check_ball_and_polytope(tmp_path):
    cfg = write_cfg(tmp_path, "ball", body={"kind": "euclidean_ball", "dim": 2})
    assert main(["body-check", str(cfg)]) == PASS
    doc = report(tmp_path, "ball", "body_check.json")
    assert doc["pass"] and all(set(c) == ENTRY_KEYS for c in doc["checks"])
    cfg = write_cfg(tmp_path, "tri", body={"kind": "polytope", "vertices": [[1, 0], [-1, 1], [-1, -1]]})
    assert main(["body-check", str(cfg)]) == PASS
    c = checks(report(tmp_path, "tri", "body_check.json"))
    assert c["euler"]["value"] == "not applicable" and c["euler"]["pass"] is None
    assert c["polar_vs_maximization"]["pass"]


def test_field_disk_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, "disk", body={"kind": "euclidean_ball", "dim": 2},
                    domain={"kind": "disk", "R": 1.0}, grid={"h": 0.125})
    assert main(["field", str(cfg)]) == PASS
    path = tmp_path / "out_disk" / "field.csv"
    first = path.read_bytes()
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["x1", "x2", "rho", "rho_bar", "mu1", "mu2", "detQ", "h11", "h12", "h22",
                             "ridge_flag"]
    x = np.array([[float(r["x1"]), float(r["x2"])] for r in rows])
    rho = np.array([float(r["rho"]) for r in rows])
    assert np.max(np.abs(rho - (1 - np.linalg.norm(x, axis=1)))) < 1e-8
    assert main(["field", str(cfg)]) == PASS
    assert path.read_bytes() == first


def test_ridge_and_trace(tmp_path):
    cfg = write_cfg(tmp_path, "ell", body={"kind": "euclidean_ball", "dim": 2},
                    domain={"kind": "ellipse", "a": 2.0, "b": 1.0}, grid={"h": 1 / 16},
                    checks={"n_traces": 4})
    assert main(["ridge", str(cfg)]) == PASS
    with (tmp_path / "out_ell" / "ridge.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    ridge = [r for r in rows if not r["kind"].startswith("trace")]
    assert ridge and all(abs(float(r["x2"])) <= 1.5 / 16 for r in ridge)
    assert sum(r["kind"].startswith("trace") for r in rows) == 4
    assert main(["trace", str(cfg), "--y", "0.0"]) == PASS
    c = checks(report(tmp_path, "ell", "trace_0.000000.json"))
    # from the vertex (2, 0) the characteristic ends at the centre of curvature (1.5, 0)
    assert c["kind"]["value"] == "focal"
    assert np.allclose(c["x_star"]["value"], [1.5, 0], atol=1e-5)
    assert c["detQ_at_t_star"]["pass"]
    assert main(["trace", str(cfg), "--y", "0.25"]) == PASS
    c = checks(report(tmp_path, "ell", "trace_0.250000.json"))
    # from the co-vertex (0, 1) it collides with the branch from (0, -1) at the centre
    assert c["kind"]["value"] == "collision"
    assert np.allclose(c["x_star"]["value"], [0, 0], atol=1e-5)


def test_solve_elastic_disk(tmp_path):
    cfg = write_cfg(tmp_path, "el", domain={"kind": "disk", "R": 1.5}, grid={"h": 0.125},
                    schedule={"levels": 3})
    assert main(["solve", str(cfg)]) == PASS
    doc = report(tmp_path, "el", "solve.json")
    c = checks(doc)
    assert c["plastic_empty"]["value"] is True
    assert c["cross_solver_difference"]["pass"]
    with (tmp_path / "out_el" / "solution_double_obstacle.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["x1", "x2", "u", "du1", "du2", "gauge_of_grad", "region"]


def test_solve_rounded_square_constraint(tmp_path):
    cfg = write_cfg(tmp_path, "sq", body={"kind": "smoothed", "k": 4, "base": {"kind": "p_ball", "p": 1}},
                    domain={"kind": "disk", "R": 3.0}, grid={"h": 0.25}, schedule={"levels": 3})
    assert main(["solve", str(cfg)]) in (PASS, FAIL)
    c = checks(report(tmp_path, "sq", "solve.json"))
    assert "direct_gradient_margin" in c and isinstance(c["direct_gradient_margin"]["value"], float)


def test_verify_reports_bounds(tmp_path):
    cfg = write_cfg(tmp_path, "ver", domain={"kind": "disk", "R": 3.0}, grid={"h": 0.1875},
                    schedule={"levels": 2})
    assert main(["verify", str(cfg)]) == PASS
    doc = report(tmp_path, "ver", "verify.json")
    assert any(c["name"].startswith("operator_bound_ratio") for c in doc["checks"])
    assert set(doc["info"]) == {"C0", "C1", "C2", "C3", "C4"}


@pytest.mark.parametrize("cfg", [
    {"body": {"kind": "blob"}},
    {"domain": {"kind": "disk", "R": 1.0}, "grid": {"h": -1}},
    {"domain": {"kind": "disk", "R": 1.0}, "data": {"kind": "linear", "p": [1.5, 0]}, "grid": {"h": 0.1}},
    {"grid": {"h": 0.1}},
])
def test_input_errors(tmp_path, cfg):
    path = write_cfg(tmp_path, "bad", **cfg)
    assert main(["solve", str(path)]) == INPUT_ERROR


def test_missing_file_and_bad_arguments(tmp_path):
    assert main(["field", str(tmp_path / "nope.yaml")]) == INPUT_ERROR
    assert main(["frobnicate"]) == INPUT_ERROR
    cfg = write_cfg(tmp_path, "t", domain={"kind": "disk", "R": 1.0})
    assert main(["trace", str(cfg), "--y", "1.5"]) == INPUT_ERROR


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, "mod", body={"kind": "p_ball", "p": 4, "dim": 2})
    r = subprocess.run([sys.executable, "-m", "gradconstraint", "body-check", str(cfg)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
