"""Configuration, system files and dataset import/export."""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io

from .model import BUILDERS, MechSystem, PolynomialForce

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "system": {"builder": "coupled_oscillators", "params": {}},
    "master_modes": [0, 1],
    "order": 3,
    "Omega_ref": None,
    "omega_range": [0.7, 1.1],
    "eps": 0.01,
    "stages": ["equilibrium"],
    "outputs": [0],
    "seed": 0,
    "continuation": {"h0": 0.01, "h_max": 0.05, "max_steps": 2000, "tol": 1e-9,
                     "Omega0": None},
    "po": {"mesh": [20, 4], "h0": 0.01, "h_max": 0.05, "max_steps": 3000, "hb_event": 0,
           "delta": 1e-3},
    "torus": {"n_h": 10, "mesh": None, "h0": 0.01, "h_max": 0.1, "max_steps": 200,
              "tr_event": 0, "delta": 1e-3, "mode": "free"},
    "lift": {"n_pt": 64, "n_T": 10, "indices": []},
    "verify": {"n_cycles": 300, "steps_per_cycle": 1000, "alpha": 0.005, "Delta": 1e-3,
               "M_bar": 200, "rel_tol": 0.02, "indices": []},
}

COLUMNS = ["Omega", "eps", "Ts", "om_s", "om1s", "om2s", "rho_rot"]
TAIL = ["stability", "event"]


class ConfigError(ValueError):
    """Invalid configuration document."""


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides=None):
    """Read a JSON config, fill defaults and validate it."""
    cfg = {}
    if path is not None:
        with open(path) as fh:
            cfg = json.load(fh)
        cfg.setdefault("_base_dir", str(Path(path).resolve().parent))
    system = cfg.get("system")
    cfg = _merge(DEFAULT_CONFIG, cfg)
    if system is not None:
        cfg["system"] = copy.deepcopy(system)   # a file-based system must not inherit a builder
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg.get('version')!r}")
    sysd = cfg["system"]
    if not isinstance(sysd, dict) or ("builder" not in sysd and "files" not in sysd):
        raise ConfigError("system needs 'builder' or 'files'")
    if "builder" in sysd and sysd["builder"] not in BUILDERS:
        raise ConfigError(f"unknown builder {sysd['builder']!r}; choose from {sorted(BUILDERS)}")
    lo, hi = cfg["omega_range"]
    if not 0 < lo < hi:
        raise ConfigError("omega_range must satisfy 0 < A < B")
    if int(cfg["order"]) < 1:
        raise ConfigError("order must be positive")
    if float(cfg["eps"]) < 0:
        raise ConfigError("eps must be non-negative")
    stages = cfg["stages"]
    known = {"equilibrium", "po", "torus2", "torus3", "verify"}
    bad = set(stages) - known
    if bad:
        raise ConfigError(f"unknown stages {sorted(bad)}")
    if not cfg["master_modes"]:
        raise ConfigError("master_modes must not be empty")
    return cfg


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------

def read_matrix(path):
    """Dense array from a Matrix Market file."""
    a = scipy.io.mmread(str(path))
    return np.asarray(a.todense() if hasattr(a, "todense") else a, dtype=float)


def write_matrix(path, a):
    scipy.io.mmwrite(str(path), np.atleast_2d(np.asarray(a, dtype=float)))


def system_from_config(cfg) -> MechSystem:
    """Build the mechanical system described by ``cfg['system']``."""
    sysd = cfg["system"]
    eps = float(cfg["eps"])
    if "builder" in sysd:
        params = dict(sysd.get("params", {}))
        params.setdefault("eps", eps)
        return BUILDERS[sysd["builder"]](**params)
    base = Path(cfg.get("_base_dir", "."))
    files = sysd["files"]
    M = read_matrix(base / files["M"])
    C = read_matrix(base / files["C"])
    K = read_matrix(base / files["K"])
    f_ext = read_matrix(base / files["f_ext"]).ravel()
    n = M.shape[0]
    if files.get("f_nl"):
        with open(base / files["f_nl"]) as fh:
            fnl = PolynomialForce.from_dict(json.load(fh))
    else:
        fnl = PolynomialForce(2 * n, n)
    return MechSystem(M=M, C=C, K=K, f_nl=fnl, f_ext=f_ext, eps=eps,
                      name=sysd.get("name", "file-system"))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class FRCDataset:
    """Rows of a forced-response stage with provenance metadata."""

    stage: str
    outputs: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def columns(self):
        return COLUMNS + [f"amp_{k}" for k in self.outputs] + TAIL

    def add(self, **vals):
        row = {c: vals.get(c, math.nan) for c in self.columns}
        row["stability"] = vals.get("stability", "")
        row["event"] = vals.get("event", "")
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def events(self, kind=None):
        return [(i, r) for i, r in enumerate(self.rows)
                if r["event"] and (kind is None or r["event"] == kind)]

    def __len__(self):
        return len(self.rows)


def _fmt(v):
    if isinstance(v, str):
        return v
    return repr(float(v))


def export(dataset: FRCDataset, path, fmt="csv"):
    """Write ``dataset`` as CSV or JSON; returns the written path."""
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise ValueError("format must be 'csv' or 'json'")
    if path.suffix != f".{fmt}":
        path = path.with_suffix(f".{fmt}")
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = dataset.columns
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in dataset.rows:
                w.writerow([_fmt(r[c]) for c in cols])
    else:
        doc = {"stage": dataset.stage, "columns": cols,
               "rows": [[_json_val(r[c]) for c in cols] for r in dataset.rows],
               "metadata": _jsonify(dataset.metadata)}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=False)
    return path


def _json_val(v):
    if isinstance(v, str):
        return v
    v = float(v)
    return None if math.isnan(v) else v


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if math.isnan(float(obj)) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def read_dataset(path, stage=None):
    """Load a dataset written by :func:`export`."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path) as fh:
            doc = json.load(fh)
        cols = doc["columns"]
        outputs = [int(c[4:]) for c in cols if c.startswith("amp_")]
        ds = FRCDataset(doc["stage"], outputs, metadata=doc.get("metadata", {}))
        for row in doc["rows"]:
            ds.rows.append({c: (math.nan if v is None else v) for c, v in zip(cols, row)})
        return ds
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        cols = next(rd)
        outputs = [int(c[4:]) for c in cols if c.startswith("amp_")]
        ds = FRCDataset(stage or path.stem, outputs)
        for row in rd:
            ds.rows.append({c: (v if c in TAIL else float(v)) for c, v in zip(cols, row)})
    return ds


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonify(obj), fh, indent=1)
    return path


def write_trajectories(path, t, trajectories, header, fmt="csv"):
    """Export a bundle of sampled trajectories with a frequency header."""
    path = Path(path).with_suffix(f".{fmt}")
    path.parent.mkdir(parents=True, exist_ok=True)
    tr = np.asarray(trajectories)
    if fmt == "json":
        return write_json(path, {"header": header, "t": t, "trajectories": tr})
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k} = {v!r}\n")
        w = csv.writer(fh)
        w.writerow(["traj", "t"] + [f"z{j}" for j in range(tr.shape[-1])])
        for i in range(tr.shape[0]):
            for k in range(tr.shape[1]):
                w.writerow([i, repr(float(t[k]))] + [repr(float(x)) for x in tr[i, k]])
    return path
