"""Command-line front end: ``ssmtori <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io as sio
from . import pipeline

SUBCOMMANDS = {
    "eig": "eigenvalues, damping ratios and inner resonances",
    "reduce": "compute and cache the reduced model",
    "frc-eq": "forced response of periodic orbits (reduced equilibria)",
    "frc-po": "quasi-periodic response from reduced limit cycles",
    "frc-tor": "reduced 2-tori and their lifted 3-tori",
    "lift": "export lifted tori for selected branch points",
    "verify": "time-integrate the full system from lifted tori",
    "all": "run the stages listed in the config (or --stage)",
}


def _range(text):
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected A:B") from exc
    if not 0 < a < b:
        raise argparse.ArgumentTypeError("need 0 < A < B")
    return [a, b]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("--stage", action="append", choices=pipeline.STAGE_ORDER,
                        help="stage to run (repeatable; 'all' only)")
    common.add_argument("--order", type=int, help="SSM expansion order")
    common.add_argument("--omega-range", type=_range, metavar="A:B",
                        help="excitation frequency window")
    common.add_argument("--eps", type=float, help="forcing amplitude")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=int, default=1, help="worker threads for lifting")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="ssmtori", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in SUBCOMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_, description=help_)
    return ap


def _overrides(args):
    ov = {}
    if args.order is not None:
        ov["order"] = args.order
    if args.omega_range is not None:
        ov["omega_range"] = args.omega_range
    if args.eps is not None:
        ov["eps"] = args.eps
    return ov


def _summary(ctx):
    lines = []
    for name, ds in ctx.datasets.items():
        ev = {}
        for _, r in ds.events():
            ev[r["event"]] = ev.get(r["event"], 0) + 1
        lines.append(f"{name}: {len(ds)} rows, events {ev}")
    return "\n".join(lines)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = sio.load_config(args.config, _overrides(args))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    try:
        if cmd == "eig":
            ctx = pipeline.Context(cfg, out, args.format, args.threads)
            res = pipeline.stage_eig(ctx)
            path = sio.write_json(out / "eig.json", res)
            for r in res["eigenvalues"]:
                print(f"{r['index']:3d}  {r['re']: .6e} {r['im']: .6e}  "
                      f"omega_n={r['omega_n']:.6g} zeta={r['zeta']:.4g}")
            print(f"inner resonances: {len(res['inner_resonances'])}; written {path}")
            return 0
        if cmd == "reduce":
            ctx = pipeline.Context(cfg, out, args.format, args.threads)
            rm = ctx.reduced()
            print(f"order {rm.order}, r = {[str(x) for x in rm.r]}, "
                  f"{len(rm.gamma)} resonant terms; cached in {out / 'reduced_model.json'}")
            return 0
        stages = {"frc-eq": ["equilibrium"], "frc-po": ["po"], "frc-tor": ["torus2", "torus3"],
                  "verify": ["verify"], "lift": ["po"]}.get(cmd)
        if cmd == "all":
            stages = args.stage or cfg["stages"]
        ctx = pipeline.run_frc(cfg, stages, out, args.format, args.threads)
        if cmd == "lift":
            written = pipeline.lift_po_points(ctx)
            if "torus2" in cfg["stages"]:
                pipeline.stage_torus3(ctx)
            print(f"wrote {len(written)} lifted tori to {out}")
        print(_summary(ctx))
        if ctx.reports:
            for r in ctx.reports:
                print(f"verify row {r['row']} (Omega={r['Omega']:.6g}, predicted "
                      f"{'stable' if r['predicted_stable'] else 'unstable'}): {r['verdict']}")
        print(json.dumps({k: round(v, 3) for k, v in ctx.timing_block().items()}))
        return 0
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
