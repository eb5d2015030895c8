import json

import numpy as np
import pytest

from grflab import cli, io
from grflab.errors import SolverError


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def fixture(name):
    return io.fixture_path(name)


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_lambda_fixtures(capsys):
    code, out, _ = run(capsys, "lambda", fixture("s3_round.json"))
    assert code == 0 and abs(json.loads(out)["lambda"] - 4.0) < 1e-10
    code, out, _ = run(capsys, "lambda", fixture("torus_flat.json"))
    assert code == 0 and abs(json.loads(out)["lambda"]) < 1e-12
    code, out, _ = run(capsys, "lambda", fixture("torus_perturbed_seed7.json"))
    rep = json.loads(out)
    assert code == 0 and rep["golden"]["abs_diff"] < 1e-9
    assert set(rep) >= {"lambda", "f_stats", "residuals", "solver"}


def test_lambda_deterministic(capsys, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert run(capsys, "lambda", fixture("torus_perturbed_seed7.json"), "--out", d)[0] == 0
        outs.append((d / "lambda.json").read_bytes())
    assert outs[0] == outs[1]


def test_input_errors(capsys, tmp_path):
    code, _, err = run(capsys, "lambda", write(tmp_path, "g.json", {"backend": "klein"}))
    assert code == 2 and "error" in err
    assert run(capsys, "lambda", tmp_path / "nope.json")[0] == 2
    bad_cfg = write(tmp_path, "c.json", {"t_end": -1})
    assert run(capsys, "flow", fixture("s3_round.json"), "--config", bad_cfg, "--out", tmp_path)[0] == 2


def test_non_soliton_stability_is_input_error(capsys):
    assert run(capsys, "stability", fixture("berger_1.2_0.8.json"))[0] == 2


def test_solver_failure_exit(capsys, monkeypatch):
    def boom(state, *a, **k):
        raise SolverError("forced", residual=1.0)

    monkeypatch.setattr(cli, "compute_lambda", boom)
    code, _, err = run(capsys, "lambda", fixture("torus_flat.json"))
    assert code == 3 and "solver failure" in err


def test_flow_stationary(capsys, tmp_path):
    code, out, _ = run(capsys, "flow", fixture("s3_round.json"), "--out", tmp_path)
    assert code == 0 and json.loads(out)["stationary"]
    header, rows = io.read_csv(tmp_path / "trajectory.csv")
    assert header == ["t", "lambda", "grad_norm_sq", "min_eig_g", "dt"] and len(rows) == 1
    man = io.read_json(tmp_path / "manifest.json")
    assert man["command"] == "flow" and str(fixture("s3_round.json")) in man["inputs"]


def test_flow_berger_converges(capsys, tmp_path):
    code, out, _ = run(capsys, "flow", fixture("berger_1.2_0.8.json"), "--config",
                       fixture("flow_berger.json"), "--out", tmp_path)
    s = json.loads(out)
    assert code == 0 and s["final_residual"] < 1e-6 and abs(s["final_lambda"] - 4.0) < 1e-6
    _, rows = io.read_csv(tmp_path / "trajectory.csv")
    lam = np.array(rows)[:, 1]
    assert np.all(np.diff(lam) >= -1e-9 * (1 + np.abs(lam[:-1])))


def test_flow_breakdown(capsys, tmp_path):
    geo = write(tmp_path, "shrink.json", {"backend": "lie", "algebra": "su2", "g": np.eye(3).tolist(),
                                          "H0": np.zeros((3, 3, 3)).tolist()})
    cfg = write(tmp_path, "cfg.json", {"t_end": 1.0, "dt_max": 0.05, "tol": 1e-8})
    code, _, err = run(capsys, "flow", geo, "--config", cfg, "--out", tmp_path / "o")
    assert code == 4 and "breakdown" in err
    last = io.load_geometry(tmp_path / "o" / "last_good.json")
    assert last.min_metric_eigenvalue() > 0


def test_stability_s3(capsys, tmp_path):
    code, out, _ = run(capsys, "stability", fixture("s3_round.json"), "--out", tmp_path)
    rep = json.loads(out)
    assert code == 0 and rep["classification"] == "stable"
    rels = {(k["mu"], k["relation"]) for k in rep["kernel"] if "mu" in k}
    assert (3, "a = -1 b") in rels and (8, "a = -2 b") in rels
    header, rows = io.read_csv(tmp_path / "modes.csv")
    assert header[:3] == ["k", "mu", "multiplicity"] and len(rows) == 5


def test_stability_small_flat_torus(capsys, tmp_path):
    geo = write(tmp_path, "flat8.json", {"backend": "torus", "n": 8})
    code, out, _ = run(capsys, "stability", geo)
    assert code == 0 and json.loads(out)["classification"] == "kernel-marginal"


def test_stability_su2xsu2(capsys):
    code, out, _ = run(capsys, "stability", fixture("lie_su2xsu2.json"))
    assert code == 0 and "delta_G_frame_max" in json.loads(out)["details"]


def test_verify_suites(capsys):
    code, out, _ = run(capsys, "verify", "algebra")
    assert code == 0 and json.loads(out)["passed"]
    code, out, _ = run(capsys, "verify", "variation", "--seed", 3)
    assert code == 0, out


def test_thread_env(capsys, monkeypatch):
    monkeypatch.setenv("GRFLAB_THREADS", "two")
    assert run(capsys, "lambda", fixture("s3_round.json"))[0] == 2
    monkeypatch.setenv("GRFLAB_THREADS", "1")
    assert run(capsys, "lambda", fixture("s3_round.json"))[0] == 0


def test_help_documents_exit_codes(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    out = capsys.readouterr().out
    for code in ("0", "2", "3", "4", "5"):
        assert f"  {code}  " in out
