import json

import numpy as np
import pytest

from grflab import io
from grflab.errors import InputError
from grflab.geometry import berger_state, torus_perturbation


def test_fixtures_load():
    for name in ("s3_round.json", "torus_flat.json", "torus_perturbed_seed7.json",
                 "berger_1.2_0.8.json", "lie_su2xsu2.json"):
        st = io.load_geometry(io.fixture_path(name))
        assert st.min_metric_eigenvalue() > 0


@pytest.mark.parametrize("doc", [
    {"backend": "mobius"},
    {"backend": "lie", "algebra": "e8"},
    {"backend": "lie", "algebra": "su2", "g": [[1, 0], [0, 1]]},
    {"backend": "torus", "n": 8, "perturbation": {"seed": 1, "kcut": 2}},
    {"backend": "torus", "n": 16, "perturbation": {"sed": 1}},
    {"backend": "lie", "algebra": "su2", "g": [[1, 0, 0], [0, -1, 0], [0, 0, 1]]},
    [1, 2, 3],
])
def test_invalid_documents(doc):
    with pytest.raises(InputError):
        io.geometry_from_dict(doc)


def test_bad_files(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(InputError):
        io.load_geometry(p)
    with pytest.raises(InputError):
        io.load_geometry(tmp_path / "missing.json")


def test_round_trip_frame_and_torus(grid8):
    for st in (berger_state(1.2, 0.8), torus_perturbation(grid8, eps=0.05, seed=3)):
        doc = json.loads(io.dumps(io.geometry_to_dict(st)))
        back = io.geometry_from_dict(doc)
        assert np.array_equal(back.g, st.g) and np.array_equal(back.b, st.b)
        assert np.array_equal(back.H0, st.H0)


def test_csv_lossless(tmp_path):
    rows = [[0.1, 1 / 3, np.pi], [1e-300, -2.5e17, np.nextafter(1.0, 2.0)]]
    io.write_csv(tmp_path / "x.csv", ["a", "b", "c"], rows)
    header, back = io.read_csv(tmp_path / "x.csv")
    assert header == ["a", "b", "c"] and back == rows


def test_manifest(tmp_path):
    p = tmp_path / "in.json"
    p.write_text("{}")
    m = io.manifest("flow", {"t_end": 1.0}, [str(p), None], 7, 0.5)
    assert m["inputs"][str(p)] == io.sha256_file(p)
    assert m["seed"] == 7 and m["tool_version"]
