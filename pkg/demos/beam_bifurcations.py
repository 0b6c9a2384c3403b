"""Cantilever beam with a cubic tip spring: 1:3 resonance and its response curve.

Builds the finite-element beam, confirms the near 1:3 ratio of its first
two frequencies, reduces to a four-dimensional SSM at order 7 and locates
the folds and Hopf points of the forced response near the first mode.

    python3 demos/beam_bifurcations.py
"""

import time

import numpy as np

from ssmtori.cont import ContSettings, continue_equilibria
from ssmtori.model import assemble_first_order, build_bernoulli_beam
from ssmtori.rom import CartesianROM
from ssmtori.spectral import eig_pair, select_master
from ssmtori.ssm import compute_ssm

t0 = time.perf_counter()
beam = build_bernoulli_beam()
fo = assemble_first_order(beam)
ev = eig_pair(fo.A, fo.B, beam.n)
w = np.abs(ev.lam[ev.pairs][:2])
print(f"{beam.n} DOF, omega_1 = {w[0]:.3f}, omega_2 = {w[1]:.3f} rad/s, "
      f"ratio {w[1] / w[0]:.4f}")

rm = compute_ssm(fo, select_master(ev, [0, 1]), 7, Omega_ref=15.6)
print(f"order-7 SSM: {len(rm.gamma)} resonant terms, r = {[str(x) for x in rm.r]}")

br = continue_equilibria(CartesianROM(rm), np.zeros(4), (15.30, 15.95), 0.002,
                         ContSettings(h0=0.01, h_max=0.05, max_steps=3000))
for e in br.events:
    if e.kind in ("SN", "HB"):
        print(f"  {e.kind} at Omega = {e.y[-1]:.5f}")
print(f"done in {time.perf_counter() - t0:.1f} s")
