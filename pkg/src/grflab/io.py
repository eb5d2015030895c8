"""Geometry files, flow configs, CSV output and run manifests.

Geometry documents are JSON objects keyed by ``backend``:

    {"backend": "lie", "algebra": "su2xsu2", "scale": 1.0}
    {"backend": "lie", "algebra": "su2", "g": [[1.2, 0, 0], [0, 1.2, 0], [0, 0, 0.8]]}
    {"backend": "lie", "alpha": [...n x n x n...], "g": ..., "b": ..., "H0": ...}
    {"backend": "sphere", "kmax": 2}
    {"backend": "torus", "n": 16}
    {"backend": "torus", "n": 16, "perturbation": {"seed": 7, "eps": 0.01, "kcut": 2}}
    {"backend": "torus", "n": 8, "g_field": [...], "b_field": [...]}

Arrays are nested row-major lists; torus fields carry the three grid axes
first. A Lie-frame document without ``g`` is the bi-invariant metric
``scale * Id`` with H = scale * alpha; with ``g`` the 3-form defaults to alpha.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError
from .geometry import (ALGEBRAS, StructureConstants, Torus, biinvariant_geometry,
                       left_invariant_state, round_sphere, torus_perturbation, torus_state)

DATA_DIR = Path(__file__).parent / "data"


def fixture_path(name):
    return DATA_DIR / name


def _array(doc, key, shape=None):
    try:
        arr = np.asarray(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{key}: not a numeric array ({exc})") from exc
    if shape is not None and arr.shape != shape:
        raise InputError(f"{key} has shape {arr.shape}, expected {shape}")
    return arr


def _algebra(doc):
    if "alpha" in doc:
        alpha = _array(doc, "alpha")
        if alpha.ndim != 3 or len(set(alpha.shape)) != 1:
            raise InputError(f"alpha must be an n x n x n array, got shape {alpha.shape}")
        return StructureConstants(alpha, doc.get("algebra", "custom"),
                                  float(doc.get("ref_volume", 1.0)))
    name = doc.get("algebra")
    if name not in ALGEBRAS:
        raise InputError(f"unknown algebra {name!r}; choose from {sorted(ALGEBRAS)} or give alpha")
    return ALGEBRAS[name]()


def geometry_from_dict(doc):
    if not isinstance(doc, dict) or "backend" not in doc:
        raise InputError("geometry document must be an object with a 'backend' key")
    kind = doc["backend"]
    if kind == "lie":
        sc = _algebra(doc)
        n = sc.dim
        if "dim" in doc and int(doc["dim"]) != n:
            raise InputError(f"dim {doc['dim']} does not match the algebra dimension {n}")
        if "g" not in doc:
            scale = float(doc.get("scale", 1.0))
            st = biinvariant_geometry(sc, scale)
        else:
            g = _array(doc, "g", (n, n))
            b = _array(doc, "b", (n, n)) if "b" in doc else None
            H0 = _array(doc, "H0", (n, n, n)) if "H0" in doc else None
            st = left_invariant_state(sc, g, b, H0)
        return st
    if kind == "sphere":
        kmax = int(doc.get("kmax", 2))
        return round_sphere(kmax)
    if kind == "torus":
        n = int(doc.get("n", 16))
        grid = Torus(n)
        if "perturbation" in doc:
            p = doc["perturbation"]
            unknown = set(p) - {"seed", "eps", "kcut", "metric_only"}
            if unknown:
                raise InputError(f"unknown perturbation keys {sorted(unknown)}")
            kcut = int(p.get("kcut", 2))
            if 2 * kcut >= n // 2:
                raise InputError(f"perturbation cutoff {kcut} is not below Nyquist/2 for n = {n}")
            return torus_perturbation(grid, float(p.get("eps", 1e-2)), kcut,
                                      int(p.get("seed", 0)), bool(p.get("metric_only", False)))
        gs = grid.grid_shape
        g = _array(doc, "g_field", gs + (3, 3)) if "g_field" in doc else None
        b = _array(doc, "b_field", gs + (3, 3)) if "b_field" in doc else None
        H0 = _array(doc, "H0_field", gs + (3, 3, 3)) if "H0_field" in doc else None
        return torus_state(grid, g, b, H0)
    raise InputError(f"unknown backend {kind!r}")


def geometry_to_dict(state):
    """Serialize a state; the inverse of ``geometry_from_dict`` up to float round-trip."""
    be = state.backend
    if be.grid_shape == ():
        sc = be.sc
        return {"backend": "lie", "algebra": sc.name, "alpha": sc.alpha.tolist(),
                "ref_volume": sc.ref_volume, "g": state.g.tolist(), "b": state.b.tolist(),
                "H0": state.H0.tolist()}
    return {"backend": "torus", "n": be.n, "g_field": state.g.tolist(),
            "b_field": state.b.tolist(), "H0_field": state.H0.tolist()}


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def load_geometry(path):
    return geometry_from_dict(read_json(path))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt(x):
    """17 significant digits: lossless for doubles."""
    return format(float(x), ".17g")


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True)


def write_json(path, obj):
    Path(path).write_text(dumps(obj) + "\n")


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in r))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    return header, [[float(v) for v in ln.split(",")] for ln in lines[1:]]


def manifest(command, config, inputs, seed=None, wall_time=None):
    return {"command": command, "config": config,
            "inputs": {str(p): sha256_file(p) for p in inputs if p and os.path.exists(p)},
            "tool_version": __version__, "seed": seed, "wall_time": wall_time}
