"""Line-of-sight link gain, outage-constrained rate and its Monte Carlo check."""

from __future__ import annotations

import numpy as np

from .streams import blocked_count

__all__ = ["los_gain", "covert_rate", "outage_bound", "mc_outage", "interference_floor"]


def los_gain(q, w, altitude, ref_gain):
    """Channel power gain ``beta_0 / (||q - w||^2 + H^2)``.

    ``q`` and ``w`` broadcast over leading axes; the last axis holds (x, y).
    """
    d2 = np.sum((np.asarray(q, float) - np.asarray(w, float)) ** 2, axis=-1)
    return ref_gain / (d2 + altitude**2)


def interference_floor(rho, lambda_uu, p_umax, outage_eps, noise):
    """Worst-case interference-plus-noise ``-rho P lambda_uu ln(eps) + sigma^2``."""
    return -rho * np.asarray(p_umax, float) * lambda_uu * np.log(outage_eps) + noise


def covert_rate(p_k, gain, rho, lambda_uu, p_umax, outage_eps, noise):
    """Largest rate (bps/Hz) whose outage bound equals ``outage_eps``."""
    den = interference_floor(rho, lambda_uu, p_umax, outage_eps, noise)
    return np.log2(1.0 + np.asarray(p_k, float) * gain / den)


def outage_bound(p_k, gain, rho, lambda_uu, p_umax, rate, noise):
    """Outage probability upper bound evaluated at the maximum AN power.

    Clamped to [0, 1]; the exponent turns positive when the signal cannot
    support ``rate`` even without self-interference.
    """
    rate = np.asarray(rate, float)
    with np.errstate(divide="ignore", over="ignore"):
        arg = -(np.asarray(p_k, float) * gain / np.expm1(rate * np.log(2.0)) - noise) / (rho * p_umax * lambda_uu)
        out = np.exp(np.minimum(arg, 0.0))
    return np.clip(out, 0.0, 1.0)


def mc_outage(p_k, gain, rho, lambda_uu, p_umax, rate, noise, n_samples, seed, workers=1):
    """Empirical ``Pr{C < rate}`` with the AN power pinned at ``p_umax``.

    Self-interference power ``|g_uu|^2`` is exponential with mean ``lambda_uu``.
    """
    snr_num = p_k * gain

    def count(rng, size):
        g = rng.exponential(lambda_uu, size)
        cap = np.log2(1.0 + snr_num / (rho * p_umax * g + noise))
        return np.array([np.count_nonzero(cap < rate)])

    hits = blocked_count(seed, "mc_outage", int(n_samples), count, workers)
    return float(hits[0]) / n_samples
