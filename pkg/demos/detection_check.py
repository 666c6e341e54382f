"""
Warden error rates
==================

Closed-form false alarm, miss detection and the optimal threshold for one
warden, compared with sampled received powers.
"""

import numpy as np

from covert_uav.detection import DetectorGeometry, false_alarm, mc_detection, miss_detection, optimal_threshold

# AN peak 20 pW at the warden, mean user signal 5 pW, noise 0.01 pW
g = DetectorGeometry(rho_um=2e-11, pk_lambda=5e-12, sigma_m_sq=1e-14)
tau_star, xi_star = optimal_threshold(g)
print(f"optimal threshold {tau_star:.3e} W, minimum total error {xi_star:.4f}")

n = 1_000_000
for frac in (0.25, 0.5, 1.0, 1.5):
    tau = g.sigma_m_sq + frac * g.rho_um
    a, b = float(false_alarm(g, tau)), float(miss_detection(g, tau))
    a_hat, b_hat = mc_detection(g, tau, n, seed=7)
    print(f"tau = sigma^2 + {frac:4.2f} rho: alpha {a:.4f} ({a_hat:.4f} sampled)  beta {b:.4f} ({b_hat:.4f} sampled)  sum {a + b:.4f}")

# a coarse sweep confirms nothing beats the closed-form threshold
taus = g.sigma_m_sq + np.linspace(0, 5, 5001) * g.rho_um
xi = false_alarm(g, taus) + miss_detection(g, taus)
print(f"grid minimum {xi.min():.6f} at {taus[np.argmin(xi)]:.3e} W")
