import csv
import json
from pathlib import Path

import numpy as np
import pytest

from qgradflow import formats
from qgradflow.cli import run
from qgradflow.generate import commuting_problem, random_problem

REPO = Path(__file__).resolve().parents[1]
SAMPLE = REPO / "configs" / "solve_n2.json"


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def inline(problem):
    return {"inline": formats.problem_to_dict(problem)}


def zero_h1_problem():
    p = random_problem(2, 3, T=5.0)
    d = formats.problem_to_dict(p)
    d["H1"] = formats.encode_matrix(np.zeros((2, 2)))
    return {"inline": d}


def error_record(capsys):
    return json.loads(capsys.readouterr().err)


def test_sample_config_reaches_global_max(tmp_path):
    out = tmp_path / "s"
    assert run(["solve", "--config", str(SAMPLE), "--out", str(out), "--quiet"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "GlobalMax" and rep["gap"] < 1e-4
    for f in ("trace.csv", "report.json", "control.csv", "provenance.json",
              "trace_J.png", "trace_grad.png"):
        assert (out / f).is_file()
    header, rows = formats.read_csv(out / "trace.csv")
    assert header[:5] == ["iter", "s", "J", "grad_norm", "eta"]
    acc = rows[:, 5] == 1
    assert np.all(np.diff(rows[acc, 2]) >= 0)
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["seed"] == 0 and len(prov["config_sha256"]) == 64
    assert set(prov["versions"]) >= {"numpy", "scipy", "python"}


def test_solve_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    argv = ["solve", "--config", str(SAMPLE), "--quiet", "--no-plots", "--grid", "16"]
    run(argv + ["--out", str(a)])
    run(argv + ["--out", str(b)])
    for f in ("trace.csv", "report.json", "control.csv", "provenance.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_solve_zero_coupling_fails(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"problem": zero_h1_problem()})
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    rec = error_record(capsys)
    assert rec["status"] == "error" and rec["kind"] == "controllability"
    assert (tmp_path / "o" / "error.json").is_file()


@pytest.mark.parametrize("cfg,kind", [
    ({"problem": {"random": {"n": 2, "seed": 0}}, "bogus": 1}, "config"),
    ({"problem": {"file": "missing.json"}}, "config"),
    ({"problem": {"random": {"n": 2, "rho_spectrum": [0.5, 0.5]}}}, "validation"),
    ({"flow": {"beta": 3.0}}, "config"),
])
def test_solve_config_errors(tmp_path, capsys, cfg, kind):
    path = write_cfg(tmp_path, cfg)
    assert run(["solve", "--config", path, "--out", str(tmp_path / "o"), "--quiet"]) == 1
    assert error_record(capsys)["kind"] == kind


def test_missing_config_file(tmp_path, capsys):
    assert run(["solve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert error_record(capsys)["kind"] == "config"


def test_solve_exit_code_saddle(tmp_path):
    # a control that is already kinematic at the minimum stays there: Saddle(0) -> 2
    from qgradflow.dynamics import ControlSignal, propagate
    from qgradflow.lie import sorted_eigh
    p = random_problem(2, 9, T=4.0)
    u = ControlSignal.zeros(p.T, 8)
    _, V = sorted_eigh(propagate(p, u).rho_T)
    p = p.with_theta(V @ np.diag([-1.0, 1.0]) @ V.conj().T)
    cfg = write_cfg(tmp_path, {"problem": inline(p), "grid": {"M": 8},
                               "init": {"kind": "zero"}})
    with pytest.warns(UserWarning):
        code = run(["solve", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet", "--no-plots"])
    assert code == 2
    assert json.loads((tmp_path / "o" / "report.json").read_text())["label"] == "Saddle(0)"


def test_solve_exit_code_max_iters(tmp_path):
    cfg = write_cfg(tmp_path, {"problem": {"random": {"n": 3, "seed": 2}},
                               "flow": {"max_iters": 3}})
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet", "--no-plots"]) == 4


def test_solve_runs_fan_out(tmp_path):
    out = tmp_path / "many"
    code = run(["solve", "--config", str(SAMPLE), "--runs", "2", "--out", str(out),
                "--quiet", "--no-plots", "--grid", "32"])
    assert code in (0, 2, 3, 4)
    for i in range(2):
        assert (out / f"run_{i:03d}" / "report.json").is_file()
    with open(out / "runs.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["seed"]) for r in rows] == [0, 1]
    assert code == max(int(r["exit_code"]) for r in rows)


def test_landscape_n3(tmp_path):
    cfg = write_cfg(tmp_path, {"problem": {"random": {"n": 3, "seed": 5}}})
    out = tmp_path / "l"
    assert run(["landscape", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    with open(out / "landscape.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    idx = [int(r["morse_index"]) for r in rows]
    assert idx.count(0) == 1 and idx.count(6) == 1
    summary = json.loads((out / "landscape.json").read_text())
    assert float(rows[-1]["J"]) == pytest.approx(summary["sorted_pairing_J"], abs=1e-12)
    assert (out / "landscape.png").is_file()


def test_landscape_degenerate_fails(tmp_path, capsys):
    p = random_problem(2, 0, T=5.0)
    d = formats.problem_to_dict(p)
    d["rho0"] = formats.encode_matrix(0.5 * np.eye(2))
    cfg = write_cfg(tmp_path, {"problem": {"inline": d}})
    assert run(["landscape", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 1
    assert error_record(capsys)["kind"] == "validation"


def test_checkgrad_default_and_negative_control(tmp_path):
    out = tmp_path / "c"
    assert run(["checkgrad", "--out", str(out), "--quiet"]) == 0
    assert json.loads((out / "checkgrad.json").read_text())["max_rel_error"] < 1e-4
    cfg = write_cfg(tmp_path, {"checkgrad": {"corrupt_sign": True}})
    assert run(["checkgrad", "--config", cfg, "--out", str(tmp_path / "bad"), "--quiet"]) == 1


def test_checkgrad_zero_coupling_passes(tmp_path):
    cfg = write_cfg(tmp_path, {"problem": zero_h1_problem()})
    out = tmp_path / "c"
    assert run(["checkgrad", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    _, rows = formats.read_csv(out / "checkgrad.csv")
    assert np.all(rows[:, 1] == 0) and np.all(np.abs(rows[:, 2]) < 1e-10)


def test_gramian_cases(tmp_path):
    out = tmp_path / "g"
    assert run(["gramian", "--out", str(out), "--quiet"]) == 0
    assert json.loads((out / "gramian.json").read_text())["classification"] == "Regular"

    cfg = write_cfg(tmp_path, {"problem": inline(commuting_problem(3, seed=1))}, "c.json")
    assert run(["gramian", "--config", cfg, "--out", str(out), "--quiet", "--no-plots"]) == 0
    res = json.loads((out / "gramian.json").read_text())
    assert res["classification"].startswith("Singular")
    assert res["witness"]["present"] and res["witness"]["residual"] < 1e-8
    assert res["witness"]["max_trace_sample"] < 1e-8

    cfg = write_cfg(tmp_path, {"problem": zero_h1_problem()}, "z.json")
    assert run(["gramian", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    assert json.loads((out / "gramian.json").read_text())["classification"] == "Singular(2)"


def test_generate_roundtrip_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["generate", "--n", "3", "--seed", "8", "--out", str(a), "--quiet"]) == 0
    assert run(["generate", "--n", "3", "--seed", "8", "--out", str(b), "--quiet"]) == 0
    assert (a / "problem.json").read_bytes() == (b / "problem.json").read_bytes()
    back = formats.read_problem(a / "problem.json")
    ref = random_problem(3, 8)
    assert back.controllable and back.h1_ok
    for name in formats.MATRIX_FIELDS:
        assert np.max(np.abs(getattr(back, name) - getattr(ref, name))) <= 1e-15
    # a generated file is usable as a problem source
    cfg = write_cfg(a, {"problem": {"file": "problem.json"}})
    assert run(["landscape", "--config", cfg, "--out", str(tmp_path / "l"), "--quiet",
                "--no-plots"]) == 0


def test_generate_rejects_degenerate_spectrum(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"problem": {"random": {"n": 2, "seed": 0,
                                                       "theta_spectrum": [1.0, 1.0]}}})
    assert run(["generate", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 1
    assert error_record(capsys)["status"] == "error"


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("QGRADFLOW_OUT", str(tmp_path / "root"))
    assert run(["landscape", "--quiet", "--no-plots"]) == 0
    assert (tmp_path / "root" / "landscape" / "landscape.csv").is_file()


def test_csv_full_precision_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(50) * 10.0 ** rng.integers(-300, 300, 50)
    formats.write_csv(tmp_path / "x.csv", ("v",), ([v] for v in vals))
    _, back = formats.read_csv(tmp_path / "x.csv")
    assert np.array_equal(back[:, 0], vals)
