"""Staged forced-response pipeline: SSM, equilibria, cycles, tori, lifting.

Lower-dimensional invariant sets are computed first and seed the next
stage: Hopf points of the equilibrium curve start the cycle branch, torus
bifurcations of cycles start the torus branch.  The autonomous SSM is
computed once per run and cached on disk.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io as sio
from .colloc import Mesh
from .cont import ContSettings, continue_equilibria
from .lift import eq_to_po, po_to_torus2, torus2_to_torus3
from .model import assemble_first_order
from .po import branch_orbit, continue_po, hb_switch
from .rom import CartesianROM
from .spectral import detect_inner_resonances, eig_pair, select_master
from .ssm import ReducedModel, compute_ssm
from .tor2 import branch_torus, continue_torus, tr_switch
from .verify import verify_torus

log = logging.getLogger(__name__)

STAGE_ORDER = ["equilibrium", "po", "torus2", "torus3", "verify"]
CONVENTIONS = {
    "forcing": "eps * f_ext * cos(Omega t) on the right-hand side",
    "first_order": "B dz/dt = A z + F_nl(z) + eps (F_a exp(i Omega t) + c.c.), z = (x, dx/dt)",
    "slow_frame": "q_i = q_s,i exp(i r_i Omega t); Cartesian (Re, Im) pairs",
    "amplitude": "max over samples of |z_k| for each output index k",
    "normalization": "u^* B v = 1 for each master eigenpair",
    "rotation": "rho_rot = omega_s / (r_d Omega) for cycles; torus rho for 2-tori",
}


class StageError(RuntimeError):
    """A stage cannot run because its seed events are missing."""


class Context:
    """Shared state of one pipeline run."""

    def __init__(self, cfg, out=None, fmt="csv", threads=1):
        self.cfg = cfg
        self.out = Path(out) if out is not None else None
        self.fmt = fmt
        self.threads = max(1, int(threads or 1))
        self.timings = {"ssm": 0.0, "continuation": 0.0, "lift": 0.0, "verify": 0.0}
        self.t_start = time.perf_counter()
        self.sys = None
        self.rm = None
        self.branches = {}
        self.datasets = {}
        self.reports = []

    @contextmanager
    def timer(self, part):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[part] += time.perf_counter() - t0

    def timing_block(self):
        total = time.perf_counter() - self.t_start
        block = dict(self.timings)
        block["other"] = max(0.0, total - sum(self.timings.values()))
        block["total"] = total
        return block

    # -- shared objects ------------------------------------------------------
    def system(self):
        if self.sys is None:
            self.sys = sio.system_from_config(self.cfg)
            self.fo = assemble_first_order(self.sys)
        return self.sys

    def eig(self):
        self.system()
        if not hasattr(self, "_eig"):
            with self.timer("ssm"):
                self._eig = eig_pair(self.fo.A, self.fo.B, self.sys.n)
        return self._eig

    def omega_ref(self):
        ref = self.cfg.get("Omega_ref")
        if ref is None:
            lo, hi = self.cfg["omega_range"]
            ref = 0.5 * (lo + hi)
        return float(ref)

    def _cache_key(self):
        keep = {k: self.cfg[k] for k in ("system", "master_modes", "order", "Omega_ref",
                                          "omega_range", "eps")}
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]

    def reduced(self):
        if self.rm is not None:
            return self.rm
        cache = self.out / "reduced_model.json" if self.out is not None else None
        key = self._cache_key()
        self.system()
        if cache is not None and cache.exists():
            with open(cache) as fh:
                doc = json.load(fh)
            if doc.get("info", {}).get("cache_key") == key:
                self.rm = ReducedModel.from_dict(doc)
                log.info("reusing cached reduced model %s", cache)
                return self.rm
        ev = self.eig()
        with self.timer("ssm"):
            ms = select_master(ev, list(self.cfg["master_modes"]))
            self.rm = compute_ssm(self.fo, ms, int(self.cfg["order"]), self.omega_ref(),
                                  eps=float(self.cfg["eps"]))
        self.rm.info["cache_key"] = key
        if cache is not None:
            sio.write_json(cache, self.rm.to_dict())
        return self.rm

    def field(self):
        return CartesianROM(self.reduced())

    def metadata(self, stage, **extra):
        rm = self.reduced()
        md = {
            "stage": stage,
            "order": rm.order,
            "master_modes": list(rm.modes),
            "r": [str(x) for x in rm.r],
            "r_d": str(rm.r_d),
            "eps": float(self.cfg["eps"]),
            "omega_range": list(self.cfg["omega_range"]),
            "settings": {k: self.cfg[k] for k in ("continuation", "po", "torus", "lift")},
            "conventions": CONVENTIONS,
            "seed": self.cfg.get("seed", 0),
        }
        md.update(extra)
        return md


def _settings(d, **defaults):
    keys = ContSettings.__dataclass_fields__
    vals = dict(defaults)
    vals.update({k: v for k, v in d.items() if k in keys})
    return ContSettings(**vals)


def _pmap(ctx, fn, items):
    if ctx.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(ctx.threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_eig(ctx: Context):
    """Table of eigenvalues and inner resonances of the linear part."""
    ev = ctx.eig()
    lam = ev.lam
    rows = []
    for k, l in enumerate(lam):
        w = abs(l)
        rows.append({"index": k, "re": float(l.real), "im": float(l.imag),
                     "omega_n": float(w), "zeta": float(-l.real / w) if w else math.nan})
    pairs = lam[ev.pairs]
    res = detect_inner_resonances(pairs, 3)
    found = [{"mode": i, "l": list(l), "j": list(j)}
             for i, rs in enumerate(res) for l, j in rs]
    return {"eigenvalues": rows, "inner_resonances": found}


def stage_equilibrium(ctx: Context):
    cfg = ctx.cfg
    R = ctx.field()
    rm = ctx.reduced()
    s = _settings(cfg["continuation"])
    Om0 = cfg["continuation"].get("Omega0")
    with ctx.timer("continuation"):
        br = continue_equilibria(R, None, tuple(cfg["omega_range"]), float(cfg["eps"]), s,
                                 r_d=float(rm.r_d), Omega0=Om0, two_sided=Om0 is not None)
    ctx.branches["equilibrium"] = br
    outs = list(cfg["outputs"])
    n_pt = int(cfg["lift"]["n_pt"])
    ds = sio.FRCDataset("equilibrium", outs)

    def row(k):
        y = br.points[k]
        po = eq_to_po(y[:-1], rm, y[-1], float(cfg["eps"]), n_pt, rows=outs)
        return po.amplitude()

    with ctx.timer("lift"):
        amps = _pmap(ctx, row, list(range(len(br.points))))
    for k, y in enumerate(br.points):
        vals = {"Omega": y[-1], "eps": float(cfg["eps"]),
                "stability": "stable" if br.extra[k]["stable"] else "unstable",
                "event": br.labels[k] if br.labels[k] != "start" else ""}
        vals.update({f"amp_{o}": a for o, a in zip(outs, amps[k])})
        ds.add(**vals)
    ds.metadata = ctx.metadata("equilibrium", status=br.status,
                               events={e.kind: br.count(e.kind) for e in br.events})
    ctx.datasets["equilibrium"] = ds
    return ds


def _need(ctx, stage):
    if stage not in ctx.datasets:
        STAGES[stage](ctx)


def stage_po(ctx: Context):
    cfg = ctx.cfg
    _need(ctx, "equilibrium")
    eq = ctx.branches["equilibrium"]
    hbs = eq.by_kind("HB")
    k = int(cfg["po"]["hb_event"])
    if len(hbs) <= k:
        raise StageError("cycle stage needs a Hopf point on the equilibrium curve")
    hb = hbs[k]
    R = ctx.field()
    rm = ctx.reduced()
    n = R.dim
    p = np.array([hb.y[-1], float(cfg["eps"])])
    pc = cfg["po"]
    mesh = Mesh(*pc["mesh"])
    s = _settings(pc, h_min=1e-8)
    with ctx.timer("continuation"):
        X, T, d = hb_switch(R, hb.y[:n], p, hb.data["eigvec"], hb.data["omega"],
                            delta=float(pc["delta"]), mesh=mesh)
        br = continue_po(R, X, T, p, direction=d, bounds=tuple(cfg["omega_range"]), mesh=mesh,
                         settings=s)
    ctx.branches["po"] = br
    outs = list(cfg["outputs"])
    n_pt = int(cfg["lift"]["n_pt"])
    r_d = float(rm.r_d)

    def amp(i):
        orb = branch_orbit(br, i)
        tor = po_to_torus2(orb, rm, n_pt=n_pt, rows=outs)
        return [tor.amplitude(j) for j in range(len(outs))]

    with ctx.timer("lift"):
        amps = _pmap(ctx, amp, list(range(len(br.points))))
    ds = sio.FRCDataset("po", outs)
    for i, y in enumerate(br.points):
        e = br.extra[i]
        Om = e["p"][0]
        om_s = 2.0 * np.pi / e["T"]
        vals = {"Omega": Om, "eps": e["p"][1], "Ts": e["T"], "om_s": om_s,
                "rho_rot": om_s / (r_d * Om),
                "stability": "stable" if e["stable"] else "unstable",
                "event": br.labels[i] if br.labels[i] != "start" else ""}
        vals.update({f"amp_{o}": a for o, a in zip(outs, amps[i])})
        ds.add(**vals)
    eq_rows = [i for i, r in ctx.datasets["equilibrium"].events("HB")]
    ds.metadata = ctx.metadata("po", status=br.status,
                               seed_event={"stage": "equilibrium", "kind": "HB",
                                           "row": eq_rows[k], "Omega": float(hb.y[-1])},
                               mesh=list(pc["mesh"]))
    ctx.datasets["po"] = ds
    return ds


def stage_torus2(ctx: Context):
    cfg = ctx.cfg
    _need(ctx, "po")
    pb = ctx.branches["po"]
    trs = pb.by_kind("TR")
    k = int(cfg["torus"]["tr_event"])
    if len(trs) <= k:
        raise StageError("torus stage needs a torus bifurcation on the cycle branch")
    ev = trs[k]
    R = ctx.field()
    rm = ctx.reduced()
    tc = cfg["torus"]
    orb = branch_orbit(pb, ev.index)
    from .po import collocate_po
    orb = collocate_po(R, orb.X, orb.T, orb.p, mesh=orb.mesh)
    s = _settings(tc, h_min=1e-6)
    with ctx.timer("continuation"):
        seed, pert = tr_switch(orb, R, n_h=int(tc["n_h"]), delta=float(tc["delta"]))
        if tc["mesh"] and tuple(tc["mesh"]) != (orb.mesh.N, orb.mesh.d):
            m2 = Mesh(*tc["mesh"])
            seed.U = np.stack([orb.mesh.interp(U, m2.tau) for U in seed.U])
            pert = np.stack([orb.mesh.interp(P, m2.tau) for P in pert])
            seed.mesh = m2
        br = continue_torus(R, seed, free=0, bounds=tuple(cfg["omega_range"]),
                            mode=tc["mode"], settings=s, direction=pert)
    ctx.branches["torus2"] = br
    outs = list(cfg["outputs"])
    n_T = int(cfg["lift"]["n_T"])

    def amp(i):
        tor = branch_torus(br, i)
        t3 = torus2_to_torus3(tor, rm, n_T=n_T, rows=outs)
        return [t3.amplitude(j) for j in range(len(outs))]

    with ctx.timer("lift"):
        amps = _pmap(ctx, amp, list(range(len(br.points))))
    ds = sio.FRCDataset("torus2", outs)
    for i in range(len(br.points)):
        e = br.extra[i]
        vals = {"Omega": e["p"][0], "eps": e["p"][1], "Ts": e["T2"], "om1s": e["omega1"],
                "om2s": e["omega2"], "rho_rot": e["rho"],
                "event": br.labels[i] if br.labels[i] != "start" else ""}
        vals.update({f"amp_{o}": a for o, a in zip(outs, amps[i])})
        ds.add(**vals)
    po_rows = [i for i, r in ctx.datasets["po"].events("TR")]
    ds.metadata = ctx.metadata("torus2", status=br.status,
                               seed_event={"stage": "po", "kind": "TR", "row": po_rows[k],
                                           "Omega": float(ev.y[-1])},
                               n_h=int(tc["n_h"]), mode=tc["mode"],
                               phase_conditions=list(br.info["phase_conditions"]))
    ctx.datasets["torus2"] = ds
    return ds


def _pick(n, indices):
    if indices:
        return [i for i in indices if 0 <= i < n]
    return sorted({0, n // 2, n - 1})


def stage_torus3(ctx: Context):
    """Lift selected reduced 2-tori to physical 3-tori and export them."""
    _need(ctx, "torus2")
    br = ctx.branches["torus2"]
    rm = ctx.reduced()
    n_T = int(ctx.cfg["lift"]["n_T"])
    outs = list(ctx.cfg["outputs"])
    ds = sio.FRCDataset("torus3", outs)
    for i in _pick(len(br.points), ctx.cfg["lift"]["indices"]):
        tor = branch_torus(br, i)
        with ctx.timer("lift"):
            t3 = torus2_to_torus3(tor, rm, n_T=n_T)
        vals = {"Omega": t3.Omega, "eps": t3.eps, "Ts": tor.T2, "om1s": tor.omega1,
                "om2s": tor.omega2, "rho_rot": tor.rho}
        vals.update({f"amp_{o}": t3.amplitude(o) for o in outs})
        ds.add(**vals)
        if ctx.out is not None:
            sio.write_trajectories(ctx.out / f"torus3_{i:04d}", t3.t, t3.trajectories,
                                   {"Omega": t3.Omega, "eps": t3.eps, "omega1s": tor.omega1,
                                    "omega2s": tor.omega2, "rho": tor.rho, "row": i},
                                   ctx.fmt)
    ds.metadata = ctx.metadata("torus3", source_rows=_pick(len(br.points),
                                                           ctx.cfg["lift"]["indices"]))
    ctx.datasets["torus3"] = ds
    return ds


def lift_po_points(ctx: Context, indices=None):
    """Export lifted 2-tori for selected rows of the cycle stage."""
    _need(ctx, "po")
    br = ctx.branches["po"]
    rm = ctx.reduced()
    n_pt = int(ctx.cfg["lift"]["n_pt"])
    written = []
    for i in _pick(len(br.points), indices or ctx.cfg["lift"]["indices"]):
        orb = branch_orbit(br, i)
        with ctx.timer("lift"):
            tor = po_to_torus2(orb, rm, n_pt=n_pt)
        if ctx.out is not None:
            written.append(sio.write_trajectories(
                ctx.out / f"torus2_{i:04d}", tor.t, tor.trajectories,
                {"Omega": tor.Omega, "eps": tor.eps, "omega_s": tor.frequencies[1],
                 "stable": tor.stable, "row": i}, ctx.fmt))
    return written


def stage_verify(ctx: Context):
    """Integrate the full system from one stable and one unstable lifted torus."""
    _need(ctx, "po")
    br = ctx.branches["po"]
    rm = ctx.reduced()
    vc = ctx.cfg["verify"]
    idx = list(vc["indices"])
    if not idx:
        sizes = np.array([e["size"] for e in br.extra])
        big = sizes > 0.1 * sizes.max()
        for want in (True, False):
            cand = [i for i in range(len(br.points))
                    if big[i] and br.extra[i]["stable"] == want and not br.labels[i]]
            if cand:
                idx.append(cand[len(cand) // 2])
    reports = []
    for i in idx:
        orb = branch_orbit(br, i)
        tor = po_to_torus2(orb, rm, n_pt=8, shifts=np.linspace(0, orb.T, 400, endpoint=False))
        with ctx.timer("verify"):
            rep = verify_torus(tor, ctx.system(), n_cycles=int(vc["n_cycles"]),
                               multipliers=orb.multipliers,
                               steps_per_cycle=int(vc["steps_per_cycle"]),
                               alpha=float(vc["alpha"]), Delta=float(vc["Delta"]),
                               M_bar=int(vc["M_bar"]), rel_tol=float(vc["rel_tol"]))
        d = rep.to_dict()
        d.update(row=i, Omega=float(orb.p[0]), predicted_stable=bool(orb.stable))
        reports.append(d)
    ctx.reports = reports
    if ctx.out is not None:
        sio.write_json(ctx.out / "verify_report.json", {"reports": reports})
    return reports


STAGES = {
    "equilibrium": stage_equilibrium,
    "po": stage_po,
    "torus2": stage_torus2,
    "torus3": stage_torus3,
    "verify": stage_verify,
}


def run_frc(cfg, stages=None, out=None, fmt="csv", threads=1):
    """Run the requested stages and export their datasets.

    Returns the :class:`Context`, whose ``datasets`` map stage names to
    :class:`ssmtori.io.FRCDataset` objects.
    """
    ctx = Context(cfg, out, fmt, threads)
    todo = stages or cfg["stages"]
    for name in STAGE_ORDER:
        if name in todo:
            STAGES[name](ctx)
    block = ctx.timing_block()
    for ds in ctx.datasets.values():
        ds.metadata["timings"] = block
        if out is not None:
            sio.export(ds, Path(out) / f"frc_{ds.stage}", fmt)
    return ctx
