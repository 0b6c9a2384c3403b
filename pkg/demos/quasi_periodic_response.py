"""From a limit cycle of the reduced dynamics to a torus of the full system.

Between the two Hopf points the slow-frame equilibrium is unstable and
trajectories settle on a limit cycle.  Lifting that cycle gives an
invariant 2-torus of the forced full system.  The demo corrects the lifted
torus with the full-system torus solver, compares the slow frequencies, and
finally integrates the full system to check that it stays on the torus.

    python3 demos/quasi_periodic_response.py
"""

import numpy as np
from scipy.integrate import solve_ivp

from ssmtori.colloc import Mesh
from ssmtori.lift import classify_rotation, po_to_torus2
from ssmtori.model import MechanicalField, assemble_first_order, build_coupled_oscillators
from ssmtori.po import collocate_po
from ssmtori.rom import CartesianROM
from ssmtori.spectral import eig_pair, select_master
from ssmtori.ssm import compute_ssm
from ssmtori.tor2 import correct_torus, torus_from_curves
from ssmtori.verify import verify_torus

OMEGA, EPS = 1.0, 0.01

mech = build_coupled_oscillators(f1=2.0)
fo = assemble_first_order(mech)
rm = compute_ssm(fo, select_master(eig_pair(fo.A, fo.B, 2), [0, 1]), 5, Omega_ref=1.0)
rom = CartesianROM(rm)
p = np.array([OMEGA, EPS])

# Let the reduced dynamics settle, then read off the period from crossings.
sol = solve_ivp(lambda t, x: rom.rhs(x, p), (0, 3000), np.full(4, 0.01), rtol=1e-10,
                atol=1e-12, dense_output=True)
ts = np.linspace(2000, 3000, 200001)
c = sol.sol(ts)[0]
c -= c.mean()
up = ts[1:][(c[:-1] < 0) & (c[1:] >= 0)]
T_s = float(np.diff(up).mean())

mesh = Mesh(20, 4)
cycle = collocate_po(rom, sol.sol(up[-2] + mesh.tau * T_s).T, T_s, p, mesh=mesh)
rho, kind, _ = classify_rotation(cycle.T, OMEGA)
print(f"reduced cycle: T_s = {cycle.T:.3f}, stable = {cycle.stable}, rho = {rho:.5f} ({kind})")

# Seed the full-system torus solver with the lifted cycle (n_h = 20 harmonics).
K = 41
T = 2 * np.pi / OMEGA
lifted = po_to_torus2(cycle, rm, shifts=np.arange(K) / K * cycle.T, times=mesh.tau * T)
seed = torus_from_curves(lifted.trajectories, mesh, T, T / cycle.T, p, False)
tor = correct_torus(MechanicalField(mech), seed)
om_red, om_full = 2 * np.pi / cycle.T, tor.rho * OMEGA
print(f"slow frequency: reduced {om_red:.6f}, full torus {om_full:.6f} "
      f"({abs(om_full - om_red) / om_red:.2e} relative)")

# Newmark integration of the full system from one point of the lifted torus.
dense = po_to_torus2(cycle, rm, n_pt=8, shifts=np.linspace(0, cycle.T, 400, endpoint=False))
rep = verify_torus(dense, mech, n_cycles=100, multipliers=cycle.multipliers)
print(f"100 forcing periods: {rep.verdict}, largest section distance "
      f"{np.max(rep.distances):.2e} of the circle diameter")
