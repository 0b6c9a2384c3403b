import csv
import json
import math

import numpy as np
import pytest

from ssmtori import io as sio
from ssmtori.model import build_coupled_oscillators


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_defaults_and_overrides(tmp_path):
    cfg = sio.load_config(_write(tmp_path, {"version": 1, "order": 5}), {"eps": 0.02})
    assert cfg["order"] == 5 and cfg["eps"] == 0.02
    assert cfg["po"]["mesh"] == [20, 4]
    assert cfg["_base_dir"] == str(tmp_path.resolve())


def test_nested_override_keeps_siblings(tmp_path):
    cfg = sio.load_config(_write(tmp_path, {"version": 1, "po": {"h_max": 0.2}}))
    assert cfg["po"]["h_max"] == 0.2 and cfg["po"]["max_steps"] == 3000


@pytest.mark.parametrize("patch, msg", [
    ({"version": 2}, "version"),
    ({"system": {"builder": "nope"}}, "builder"),
    ({"omega_range": [1.2, 1.0]}, "omega_range"),
    ({"order": 0}, "order"),
    ({"eps": -1.0}, "eps"),
    ({"stages": ["equilibrium", "magic"]}, "stages"),
    ({"master_modes": []}, "master_modes"),
])
def test_config_errors(tmp_path, patch, msg):
    with pytest.raises(sio.ConfigError, match=msg):
        sio.load_config(_write(tmp_path, {"version": 1, **patch}))


def test_missing_config_file(tmp_path):
    with pytest.raises(OSError):
        sio.load_config(tmp_path / "absent.json")


def test_builder_system_gets_eps():
    mech = sio.system_from_config(sio.load_config(None, {"eps": 0.03}))
    assert mech.eps == 0.03 and mech.n == 2


def test_matrix_market_system(tmp_path):
    ref = build_coupled_oscillators()
    for name in ("M", "C", "K"):
        sio.write_matrix(tmp_path / f"{name}.mtx", getattr(ref, name))
    sio.write_matrix(tmp_path / "f.mtx", ref.f_ext[:, None])
    (tmp_path / "fnl.json").write_text(json.dumps(ref.f_nl.to_dict()))
    doc = {"version": 1, "system": {"files": {"M": "M.mtx", "C": "C.mtx", "K": "K.mtx",
                                              "f_ext": "f.mtx", "f_nl": "fnl.json"}}}
    mech = sio.system_from_config(sio.load_config(_write(tmp_path, doc)))
    assert np.allclose(mech.K, ref.K) and np.allclose(mech.f_ext, ref.f_ext)
    z = np.linspace(-0.3, 0.4, 2 * ref.n)
    assert np.allclose(mech.f_nl.eval(z), ref.f_nl.eval(z))
    del doc["system"]["files"]["f_nl"]
    lin = sio.system_from_config(sio.load_config(_write(tmp_path, doc)))
    assert lin.f_nl.n_terms == 0
    assert lin.name == "file-system"


def _dataset():
    ds = sio.FRCDataset("po", [0, 2], metadata={"order": 5, "arr": np.arange(3)})
    ds.add(Omega=0.98, eps=0.01, Ts=250.0, om_s=0.025, amp_0=0.1, amp_2=0.2,
           stability="stable")
    ds.add(Omega=0.99, eps=0.01, amp_0=0.12, amp_2=0.21, stability="unstable", event="PD")
    return ds


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_dataset_round_trip(tmp_path, fmt):
    ds = _dataset()
    path = sio.export(ds, tmp_path / "frc", fmt)
    assert path.suffix == f".{fmt}"
    back = sio.read_dataset(path, stage="po")
    assert back.columns == ds.columns
    assert back.stage == "po" and back.outputs == [0, 2]
    for a, b in zip(ds.rows, back.rows):
        for c in ds.columns:
            if isinstance(a[c], str):
                assert a[c] == b[c]
            elif math.isnan(a[c]):
                assert math.isnan(b[c])
            else:
                assert a[c] == b[c]
    assert [r["event"] for _, r in back.events()] == ["PD"]
    assert back.events("SN") == []


def test_csv_header_layout(tmp_path):
    path = sio.export(_dataset(), tmp_path / "x.csv")
    with open(path) as fh:
        head = next(csv.reader(fh))
    assert head[:7] == ["Omega", "eps", "Ts", "om_s", "om1s", "om2s", "rho_rot"]
    assert head[-2:] == ["stability", "event"]


def test_bad_export_format(tmp_path):
    with pytest.raises(ValueError):
        sio.export(_dataset(), tmp_path / "x", "xml")


def test_write_json_handles_numpy(tmp_path):
    p = sio.write_json(tmp_path / "a.json",
                       {"a": np.float64(1.5), "b": np.int64(2), "c": np.array([1.0, np.nan]),
                        "d": 1 + 2j, "e": np.bool_(True)})
    assert json.loads(p.read_text()) == {"a": 1.5, "b": 2, "c": [1.0, None], "d": [1.0, 2.0],
                                         "e": True}


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_write_trajectories(tmp_path, fmt):
    t = np.linspace(0, 1, 4)
    tr = np.arange(2 * 4 * 3, dtype=float).reshape(2, 4, 3)
    p = sio.write_trajectories(tmp_path / "tor", t, tr, {"Omega": 1.0, "omega_s": 0.1}, fmt)
    if fmt == "json":
        doc = json.loads(p.read_text())
        assert np.allclose(doc["trajectories"], tr) and doc["header"]["Omega"] == 1.0
    else:
        lines = p.read_text().splitlines()
        assert lines[0] == "# Omega = 1.0"
        data = np.loadtxt(p, delimiter=",", skiprows=3)
        assert data.shape == (8, 5)
        assert np.allclose(data[:, 2:], tr.reshape(8, 3))
