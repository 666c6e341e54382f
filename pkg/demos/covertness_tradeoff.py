"""
Covertness against throughput
=============================

A looser covertness budget lets the UAV spend less artificial noise and fly
further out, so the max-min rate grows with epsilon. A weaker self-interference
residual (smaller rho) makes noise cheap for the UAV, so it transmits more of it.
"""

import numpy as np

from covert_uav.psca import psca_solve
from covert_uav.scenario import geometric_center, reference_scenario
from covert_uav.shaf import build_initial_iterate, shaf_trajectory


def design(**kw):
    sc = reference_scenario(**kw)
    init = build_initial_iterate(sc, shaf_trajectory(sc)[0])
    rep = psca_solve(sc, init)
    dist = np.linalg.norm(rep.trajectory - geometric_center(sc.positions), axis=1).mean()
    return rep.minimum_atr, dist, rep.power.mean()


print(" eps    min ATR  centre dist  mean P_umax")
for eps in (0.01, 0.03, 0.05, 0.1):
    atr, dist, p = design(covert_eps=eps)
    print(f"{eps:5.2f}  {atr:8.4f}  {dist:9.2f} m  {p:8.4f} W")

print("\n rho     min ATR  mean P_umax")
for rho in (-70.0, -60.0):
    atr, _, p = design(rho_db=rho)
    print(f"{rho:5.0f} dB {atr:8.4f}  {p:8.4f} W")
