"""Forced response of two coupled oscillators in 1:2 internal resonance.

Walks through the reduction step by step: linear analysis, the SSM and its
reduced dynamics, the response curve of periodic orbits with its folds and
Hopf points, and a spot check of one reduced prediction against
collocation of the full system.

    python3 demos/coupled_oscillators_frc.py
"""

import numpy as np

from ssmtori.colloc import Mesh
from ssmtori.cont import continue_equilibria, find_equilibrium
from ssmtori.lift import eq_to_po
from ssmtori.model import MechanicalField, assemble_first_order, build_coupled_oscillators
from ssmtori.po import collocate_po
from ssmtori.rom import CartesianROM
from ssmtori.spectral import detect_inner_resonances, eig_pair, select_master
from ssmtori.ssm import compute_ssm

EPS = 0.01

mech = build_coupled_oscillators(f1=2.0)
fo = assemble_first_order(mech)
ev = eig_pair(fo.A, fo.B, mech.n)
print("eigenvalues:", np.round(ev.lam, 5))

master = select_master(ev, [0, 1])
res = detect_inner_resonances(master.lam, 3)
print("resonant monomials per mode:", res)

# Order-3 SSM around the master pair; the slow frame rotates at (1, 2) x Omega.
rm = compute_ssm(fo, master, 3, Omega_ref=1.0)
print("frame ratios r =", [str(x) for x in rm.r], " resonant terms:", len(rm.gamma))

rom = CartesianROM(rm)
br = continue_equilibria(rom, None, (0.7, 1.1), EPS, Omega0=1.0, two_sided=True)
print(f"\nresponse curve: {len(br.points)} points")
for e in br.events:
    if e.kind in ("SN", "HB"):
        print(f"  {e.kind} at Omega = {e.y[-1]:.5f}")

# Lift one small-amplitude equilibrium and compare with the full system.
Om = 0.9
k = next(k for k in range(1, len(br.points))
         if (br.points[k - 1, -1] - Om) * (br.points[k, -1] - Om) <= 0)
x = find_equilibrium(rom, br.points[k, :-1], np.array([Om, EPS]))
po = eq_to_po(x, rm, Om, EPS, n_pt=400)
mesh = Mesh(40, 5)
T = 2 * np.pi / po.Omega
guess = np.array([np.interp(mesh.tau * T, po.t, po.z[:, j]) for j in range(4)]).T
full = collocate_po(MechanicalField(mech), guess, None, np.array([po.Omega, EPS]), mesh=mesh)
a_full = np.max(np.abs(full.sample(2000)[1][:, 0]))
print(f"\n|x1| at Omega = {po.Omega:.4f}: reduced {po.amplitude(0):.5f}, full {a_full:.5f}")
