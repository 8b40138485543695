"""Achievable rates, secrecy rate, harvested power and the rate bounds.

All rates are in bits/s/Hz and carry the 1/2 factor of the two-phase
protocol.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .channel import (SystemConfig, Topology, node_offsets, pathloss,
                      steering_upa, MIN_IRS_DISTANCE)

LN2 = np.log(2.0)


def half_log2_1p(x):
    """(1/2) log2(1 + x), accurate for small x."""
    return 0.5 * np.log1p(x) / LN2


def rate_helper(z, t_k, g_k, Q, sigma2_k):
    gain = np.abs(np.vdot(g_k, Q @ z)) ** 2
    return float(half_log2_1p(t_k * gain / sigma2_k))


def harvested_power(z, t_k, g_k, Q):
    return float((1.0 - t_k) * np.abs(np.vdot(g_k, Q @ z)) ** 2)


def helper_rates(z, t, g_helpers, Q, sigma2):
    """Rates of all helpers; ``sigma2`` scalar or per-helper array."""
    gains = np.abs(np.conj(g_helpers) @ (Q @ z)) ** 2
    return half_log2_1p(np.asarray(t) * gains / np.asarray(sigma2))


def rate_reflect(w, e, H, sigma2):
    """Rate of a cascaded link; serves both the attacked user and the ED."""
    return float(half_log2_1p(np.abs(np.vdot(e, H @ w)) ** 2 / sigma2))


def secrecy_rate(rates_lu, rate_e):
    return max(0.0, float(np.min(rates_lu)) - float(rate_e))


def bound_re_upper(w, e, H_E, sigma2_E, a_E):
    if not a_E > 0:
        raise ValueError(f"a_E must be positive, got {a_E}")
    snr = np.abs(np.vdot(e, H_E @ w)) ** 2 / sigma2_E
    return float((a_E * snr + a_E - np.log(a_E) - 1.0) / (2 * LN2))


def bound_rk_lower(w, e, H_K, sigma2_K, a_K, v):
    if not a_K > 0:
        raise ValueError(f"a_K must be positive, got {a_K}")
    q = np.vdot(e, H_K @ w)
    # -a|v|^2(|q|^2+s) + 2a Re{vq} - a, with the square in v completed so the
    # large terms cancel exactly at the maximizing v
    d = abs(q) ** 2 + sigma2_K
    val = (-a_K * d * abs(v - np.conj(q) / d) ** 2 - a_K * sigma2_K / d
           + np.log(a_K) + 1.0)
    return float(val / (2 * LN2))


def tight_aux(q: complex, sigma2: float):
    """Maximizers (a, v) making the lower bound on a cascaded rate tight."""
    p = abs(q) ** 2
    return (sigma2 + p) / sigma2, np.conj(q) / (p + sigma2)


@dataclass
class ErgodicEveStats:
    h_bar_E: np.ndarray
    R_E_mat: np.ndarray


def _eve_second_moment(config: SystemConfig, irs, D, theta):
    """E[h h^H] at distance D along azimuth theta, plus the LoS mean."""
    off = node_offsets(irs, np.array([[D, theta]]))
    d = max(off.d[0], MIN_IRS_DISTANCE)
    a_los = steering_upa(off.sin_phi[0], off.cos_phi[0], config.phi_elev, theta,
                         config.Mx, config.My)
    beta = pathloss(config, d, config.alpha_irs)
    k = config.K_irs
    mat = beta * (np.eye(config.M) / (1 + k) + k / (1 + k) * np.outer(a_los, a_los.conj()))
    return mat, np.sqrt(beta * k / (1 + k)) * a_los


def ergodic_eve_correlation(config: SystemConfig, topology: Topology,
                            n_grid: int = 257) -> ErgodicEveStats:
    """Position- and fading-averaged eavesdropper correlation matrix.

    The eavesdropper is uniform on the BS-to-user-K segment; the integral over
    its distance uses the composite trapezoid rule.
    """
    D_K, theta_K = topology.users[-1]
    grid = np.linspace(0.0, D_K, n_grid)
    mats = np.array([_eve_second_moment(config, topology.irs, D, theta_K)[0] for D in grid])
    R = trapezoid(mats, grid, axis=0) / D_K
    R = 0.5 * (R + R.conj().T)
    _, h_bar = _eve_second_moment(config, topology.irs, topology.ed[0], theta_K)
    return ErgodicEveStats(h_bar_E=h_bar, R_E_mat=R)


def jensen_snr(w, e, H_irs, R_E_mat, sigma2_E):
    a = np.conj(e) * (H_irs @ w)          # diag(e*) H_irs w
    return float(np.real(np.vdot(a, R_E_mat @ a))) / sigma2_E


def rate_e_jensen(w, e, H_irs, R_E_mat, sigma2_E):
    return float(half_log2_1p(max(jensen_snr(w, e, H_irs, R_E_mat, sigma2_E), 0.0)))
