import json
import time
from pathlib import Path

import numpy as np
import pytest

from ssmtori import io as sio
from ssmtori import pipeline

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _cfg(**over):
    base = {"order": 3, "stages": ["equilibrium"]}
    base.update(over)
    return sio.load_config(CONFIGS / "coupled_oscillators.json", base)


def test_same_config_gives_same_bytes(tmp_path):
    for fmt in ("csv", "json"):
        docs = []
        for k in range(2):
            out = tmp_path / f"{fmt}{k}"
            pipeline.run_frc(_cfg(), out=out, fmt=fmt)
            text = (out / f"frc_equilibrium.{fmt}").read_text()
            if fmt == "json":
                doc = json.loads(text)
                doc["metadata"].pop("timings")
                text = json.dumps(doc)
            docs.append(text)
        assert docs[0] == docs[1]


def test_threads_do_not_change_results(tmp_path):
    a = pipeline.run_frc(_cfg(), out=tmp_path / "a", threads=1)
    b = pipeline.run_frc(_cfg(), out=tmp_path / "b", threads=3)
    assert a.datasets["equilibrium"].rows == b.datasets["equilibrium"].rows


def test_timing_block_matches_wall_time():
    t0 = time.perf_counter()
    ctx = pipeline.run_frc(_cfg())
    wall = time.perf_counter() - t0
    block = ctx.datasets["equilibrium"].metadata["timings"]
    parts = sum(v for k, v in block.items() if k != "total")
    assert parts == pytest.approx(block["total"], rel=1e-9)
    assert block["total"] == pytest.approx(wall, rel=0.05)
    assert block["ssm"] > 0 and block["continuation"] > 0


def test_metadata_records_defaults():
    md = pipeline.run_frc(_cfg(order=7)).datasets["equilibrium"].metadata
    assert md["order"] == 7
    assert md["settings"]["continuation"]["h_max"] == 0.05
    assert md["r"] == ["1", "2"] and md["r_d"] == "1"
    assert "forcing" in md["conventions"]


def test_zero_forcing_trivial_branch():
    ds = pipeline.run_frc(_cfg(eps=0.0, continuation={"Omega0": None})).datasets["equilibrium"]
    assert not [r for _, r in ds.events() if r["event"] in ("SN", "HB")]
    assert np.allclose(ds.column("amp_0"), 0.0)


def test_reduced_model_cache_is_reused(tmp_path, caplog):
    cfg = _cfg()
    first = pipeline.Context(cfg, tmp_path).reduced()
    with caplog.at_level("INFO", logger="ssmtori.pipeline"):
        again = pipeline.Context(cfg, tmp_path).reduced()
    assert "reusing cached" in caplog.text
    assert again.gamma.keys() == first.gamma.keys()
    assert all(abs(again.gamma[k] - first.gamma[k]) < 1e-14 for k in first.gamma)
    # a different order invalidates the cache
    other = pipeline.Context(_cfg(order=5), tmp_path).reduced()
    assert other.order == 5


def test_cycle_stage_cites_hopf_row(tmp_path):
    cfg = _cfg(stages=["equilibrium", "po"], po={"max_steps": 40})
    ctx = pipeline.run_frc(cfg, out=tmp_path)
    eq, po = ctx.datasets["equilibrium"], ctx.datasets["po"]
    seed = po.metadata["seed_event"]
    assert eq.rows[seed["row"]]["event"] == "HB"
    assert po.rows[0]["Omega"] == pytest.approx(seed["Omega"], abs=1e-6)
    assert all(np.isfinite(po.column("Ts")))
    assert (tmp_path / "frc_po.csv").exists()


def test_missing_hopf_is_a_stage_error():
    cfg = _cfg(stages=["po"], omega_range=[0.7, 0.8], continuation={"Omega0": None})
    with pytest.raises(pipeline.StageError):
        pipeline.run_frc(cfg)
