"""Average-secrecy-rate design against a passive eavesdropper.

The eavesdropper's rate is replaced by its Jensen upper bound through the
position- and fading-averaged correlation matrix R_E.  The design alternates

* one cone program in (z, w, t) built from first-order surrogates of the
  cascaded rates (concave for user K, convex upper bound for the ED), and
* a closed-form update of the reflection vector: two majorized subproblems
  (P1: minimize leakage with user K above the helper bottleneck, P2: maximize
  the secrecy ratio with user K below it), each solved by phase alignment with
  a bisection-tuned price on its single linearized constraint.

The non-robust baseline runs the same machinery with the eavesdropper's
estimated cascaded channel taken as exact.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .channel import ChannelSet, SystemConfig, ED
from .conic import Affine, ConeProgram
from .rates import LN2, half_log2_1p, helper_rates
from .robust_active import (PccpParams, UnitModulusPenalty, initial_point, run_pccp,
                            _cscalar_re, _cvar, _solve_with_retry)

log = logging.getLogger(__name__)

PRICE_CAP = 1e6
LOG_DOMAIN_FLOOR = 1e-12


class SurrogateDomainError(ValueError):
    """The concave rate surrogate left the domain of the logarithm."""


# ---------------------------------------------------------------------------
# eavesdropper models

class JensenEve:
    """Averaged ED: SNR = w^H B(e) w / sigma^2 = e^H A(w) e / sigma^2."""

    def __init__(self, H_irs: np.ndarray, R_E_mat: np.ndarray):
        self.H_irs, self.R = H_irs, R_E_mat

    def B(self, e):
        D = np.conj(e)[:, None] * self.H_irs          # diag(e*) H_irs
        return D.conj().T @ self.R @ D

    def A(self, w):
        a = self.H_irs @ w
        return np.outer(a, a.conj()) * self.R.T

    def gain(self, w, e):
        a = np.conj(e) * (self.H_irs @ w)
        return float(np.real(np.vdot(a, self.R @ a)))


class DeterministicEve:
    """ED with a known cascaded channel (the non-robust baseline's view)."""

    def __init__(self, H_E: np.ndarray):
        self.H_E = H_E

    def B(self, e):
        b = self.H_E.conj().T @ e
        return np.outer(b, b.conj())

    def A(self, w):
        a = self.H_E @ w
        return np.outer(a, a.conj())

    def gain(self, w, e):
        return float(abs(np.vdot(e, self.H_E @ w)) ** 2)


# ---------------------------------------------------------------------------
# surrogates

def surrogate_rK_hat(w, e, H_K, sigma2_K, w_prev, e_prev):
    """Concave lower bound of R_K, tight with matching gradient at (w_prev, e_prev)."""
    s_prev = np.vdot(e_prev, H_K @ w_prev)
    q_prev = abs(s_prev) ** 2
    q = s_prev * np.conj(np.vdot(e, H_K @ w))
    arg = 1.0 - q_prev / sigma2_K + 2 * np.real(q) / sigma2_K
    if q_prev == 0:
        return 0.0
    if arg <= LOG_DOMAIN_FLOOR:
        raise SurrogateDomainError(f"log argument {arg:.3g} outside the domain")
    return float(0.5 * np.log2(arg))


def surrogate_rE_up_hat(w, e, H_irs, R_E_mat, sigma2_E, w_prev, e_prev):
    """First-order upper bound of the Jensen rate in q_E = w^H H^H diag(e) R diag(e*) H w."""
    eve = JensenEve(H_irs, R_E_mat)
    q_prev = eve.gain(w_prev, e_prev)
    q = eve.gain(w, e)
    return float(half_log2_1p(q_prev / sigma2_E)
                 + (q - q_prev) / (2 * (sigma2_E + q_prev) * LN2))


# ---------------------------------------------------------------------------
# solutions and objective

@dataclass
class PassiveSolution:
    z: np.ndarray
    w: np.ndarray
    e: np.ndarray
    t: np.ndarray
    achieved_rate: float = 0.0
    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    solve_time: float = 0.0
    status: str = "ok"


@dataclass
class PassiveStop:
    rel_tol: float = 1e-4
    max_outer: int = 50


def _noise_vectors(config: SystemConfig, K: int):
    return (np.array([config.noise(k) for k in range(K - 1)]),
            config.noise(K - 1), config.noise(ED))


def passive_objective(z, w, e, t, channels: ChannelSet, eve, config: SystemConfig) -> float:
    """min over all users of the rates minus the eavesdropper (upper-bound) rate."""
    sig_h, sig_K, sig_E = _noise_vectors(config, channels.K)
    rh = helper_rates(z, t, channels.g_helpers, channels.Q, sig_h)
    rK = half_log2_1p(abs(np.vdot(e, channels.H_K @ w)) ** 2 / sig_K)
    rE = half_log2_1p(max(eve.gain(w, e), 0.0) / sig_E)
    return float(min(np.min(rh), rK) - rE)


# ---------------------------------------------------------------------------
# (z, w, t) subproblem

class _PassiveScene:
    """Normalized units as in the robust design (BS power 1, noise 1)."""

    def __init__(self, channels: ChannelSet, eve, config: SystemConfig):
        K = channels.K
        self.L = K - 1
        self.sqrtP = np.sqrt(config.P_max)
        sig_h, sig_K, sig_E = _noise_vectors(config, K)
        gq = np.conj(channels.g_helpers) @ channels.Q
        amp = self.sqrtP * np.max(np.linalg.norm(gq, axis=1))
        self.alpha = amp if amp > 0 else 1.0
        self.Gz = self.sqrtP * gq / np.sqrt(sig_h)[:, None]
        self.Hz = self.sqrtP * gq / self.alpha
        self.HK = self.alpha * channels.H_K / np.sqrt(sig_K)
        self.eve_scale = self.alpha ** 2 / sig_E
        self.eve = eve


def _zwt_program(sc: _PassiveScene, z_p, t_p, w_p, e):
    L = sc.L
    prog = ConeProgram()
    r = prog.var(1)
    z = _cvar(prog, sc.Hz.shape[1])
    w = _cvar(prog, L)
    t = prog.var(L)

    # helpers: r <= R~_k, with |c_prev|^2 factored out of the log argument
    c_prev = sc.Gz @ z_p
    for k in range(L):
        cp = abs(c_prev[k])
        if cp == 0:
            prog.add_nonneg(-r)
            continue
        sk, lk = prog.var(1), prog.var(1)
        conic.add_quad_over_lin(prog, sk, t[k], Affine.const([t_p[k]]))
        arg = 1.0 / cp ** 2 - sk + 2 * t_p[k] * _cscalar_re(np.conj(c_prev[k]) / cp ** 2 * sc.Gz[k], z)
        conic.add_log_hypograph(prog, lk, arg)
        prog.add_nonneg(lk + 2 * np.log(cp) - 2 * LN2 * r)

    # user K: r <= R^_K
    row = np.conj(e) @ sc.HK
    s_prev = row @ w_p
    if abs(s_prev) > 0:
        lK = prog.var(1)
        argK = 1.0 - abs(s_prev) ** 2 + 2 * _cscalar_re(np.conj(s_prev) * row, w)
        conic.add_log_hypograph(prog, lK, argK)
        prog.add_nonneg(lK - 2 * LN2 * r)
    else:
        prog.add_nonneg(-r)

    # eavesdropper: tau >= w^H B w, objective uses the linearized log
    B = sc.eve_scale * sc.eve.B(e)
    B = 0.5 * (B + B.conj().T)
    lam, V = np.linalg.eigh(B)
    F = V * np.sqrt(np.clip(lam, 0, None))[None, :]
    tau = prog.var(1)
    conic.add_quad_over_lin(prog, tau, 1.0, (F.conj().T @ w).stacked())
    q_prev = float(np.real(np.vdot(w_p, B @ w_p)))

    prog.add_soc(Affine.const([1.0]), z.stacked())
    prog.add_nonneg(t)
    prog.add_nonneg(1.0 - t)
    h_prev = sc.Hz @ z_p
    for k in range(L):
        pk, qk = prog.var(1), prog.var(1)
        conic.add_quad_over_lin(prog, pk, 1.0, w[k].stacked())
        conic.add_quad_over_lin(prog, qk, 1.0 - t[k], Affine.const([(1 - t_p[k]) * abs(h_prev[k])]))
        prog.add_nonneg(2 * (1 - t_p[k]) * _cscalar_re(np.conj(h_prev[k]) * sc.Hz[k], z) - pk - qk)

    prog.maximize(r - tau * (1.0 / (2 * (1 + q_prev) * LN2)))
    return prog, z, w, t


def solve_subproblem_zwt_passive(state: PassiveSolution, channels: ChannelSet, R_E_mat,
                                 config: SystemConfig, eve=None):
    """One surrogate cone solve over (z, w, t, r) with e fixed.

    Returns ``(z, w, t, ok)`` in physical units; on failure the incoming point.
    """
    eve = eve or JensenEve(channels.H_irs, R_E_mat)
    sc = _PassiveScene(channels, eve, config)
    prog, z, w, t = _zwt_program(sc, state.z / sc.sqrtP, state.t, state.w / sc.alpha, state.e)
    sol = _solve_with_retry(prog)
    if not sol.ok:
        return state.z, state.w, state.t, False
    x = sol.x
    return (z.value(x) * sc.sqrtP, w.value(x) * sc.alpha,
            np.clip(t.value(x), 0.0, 1.0), True)


# ---------------------------------------------------------------------------
# closed-form reflection update

@dataclass
class QuadraticPair:
    A_E: np.ndarray
    A_K: np.ndarray
    R_bar: float


def build_quadratics(w, channels: ChannelSet, R_E_mat, sigma2_E, sigma2_K, helper_rates_,
                     eve=None) -> QuadraticPair:
    """Quadratic forms of the ED and user-K SNRs in e, plus the helper bottleneck."""
    eve = eve or JensenEve(channels.H_irs, R_E_mat)
    A_E = eve.A(w) / sigma2_E
    a = channels.H_K @ w
    A_K = np.outer(a, a.conj()) / sigma2_K
    return QuadraticPair(0.5 * (A_E + A_E.conj().T), A_K, float(np.min(helper_rates_)))


def _lambda_max(A):
    return float(np.linalg.eigvalsh(A)[-1])


def majorize_quadratic(A, e_prev):
    """(lambda_max(A) I - A) e_prev; entries that vanish numerically are set to 0."""
    lam = _lambda_max(A)
    v = lam * e_prev - A @ e_prev
    scale = max(abs(lam), np.max(np.abs(A)) if A.size else 0.0) * np.sqrt(len(e_prev))
    v[np.abs(v) <= 1e-12 * max(scale, 1e-300)] = 0.0
    return v


def phase_align(c, e_prev):
    """argmax over unit-modulus e of Re{c^H e}; zero entries keep their old phase."""
    c = np.asarray(c, dtype=complex)
    out = np.exp(1j * np.angle(c))
    zero = np.abs(c) == 0
    out[zero] = e_prev[zero] / np.abs(e_prev[zero])
    return out


def _smallest_price(direction, feasible_fn):
    """Smallest rho >= 0 with feasible_fn(direction(rho)); None if beyond the cap."""
    if feasible_fn(direction(0.0)):
        return 0.0
    hi = 1.0
    while not feasible_fn(direction(hi)):
        hi *= 2.0
        if hi > PRICE_CAP:
            return None
    lo = 0.0 if hi == 1.0 else hi / 2.0
    for _ in range(50):
        if hi - lo <= 1e-6:
            break
        mid = 0.5 * (lo + hi)
        if feasible_fn(direction(mid)):
            hi = mid
        else:
            lo = mid
    return hi


def threshold(R_bar: float) -> float:
    """SNR needed for a rate of R_bar bits with the two-phase 1/2 factor."""
    return float(2.0 ** (2 * R_bar) - 1.0)


def solve_P1(e_prev, quad: QuadraticPair):
    """Minimize leakage subject to the linearized R_K >= R_bar; None if infeasible."""
    base = majorize_quadratic(quad.A_E, e_prev)
    k_dir = quad.A_K @ e_prev
    d_K = float(np.real(np.vdot(e_prev, k_dir)))
    need = threshold(quad.R_bar) + d_K

    def direction(rho):
        return phase_align(base + rho * k_dir, e_prev)

    def feasible(e):
        return 2 * np.real(np.vdot(k_dir, e)) >= need - 1e-12 * max(1.0, abs(need))

    rho = _smallest_price(direction, feasible)
    if rho is None:
        return None
    return direction(rho)


def solve_P2(e_prev, quad: QuadraticPair):
    """Maximize the secrecy ratio subject to the majorized R_K <= R_bar."""
    A_E, A_K = quad.A_E, quad.A_K
    d_K = float(np.real(np.vdot(e_prev, A_K @ e_prev)))
    d_E = float(np.real(np.vdot(e_prev, A_E @ e_prev)))
    c = ((1 + d_K) / (1 + d_E) ** 2 * majorize_quadratic(A_E, e_prev)
         + A_K @ e_prev / (1 + d_E))
    k_dir = majorize_quadratic(A_K, e_prev)
    lam_K = _lambda_max(A_K)
    M = len(e_prev)
    need = 2 * lam_K * M - d_K - threshold(quad.R_bar)

    def direction(rho):
        return phase_align(c + rho * k_dir, e_prev)

    def feasible(e):
        return 2 * np.real(np.vdot(k_dir, e)) >= need - 1e-12 * max(1.0, abs(need))

    rho = _smallest_price(direction, feasible)
    return direction(PRICE_CAP if rho is None else rho)


def e_objective(e, quad: QuadraticPair) -> float:
    """min{R_bar, R_K(e)} - R_E^up(e)."""
    rK = half_log2_1p(max(float(np.real(np.vdot(e, quad.A_K @ e))), 0.0))
    rE = half_log2_1p(max(float(np.real(np.vdot(e, quad.A_E @ e))), 0.0))
    return float(min(quad.R_bar, rK) - rE)


def update_e_passive(e_prev, quad: QuadraticPair, rates_fn=None):
    """Best of the two closed-form candidates and the incumbent."""
    obj = rates_fn or (lambda e: e_objective(e, quad))
    cands = [e_prev]
    e1 = solve_P1(e_prev, quad)
    if e1 is not None:
        cands.append(e1)
    cands.append(solve_P2(e_prev, quad))
    vals = [obj(c) for c in cands]
    best = int(np.argmax(vals))       # ties keep the incumbent (index 0)
    return cands[best]


# ---------------------------------------------------------------------------
# penalty-CCP reference for the reflection subproblem

def _socp_warm_start(e_prev, quad: QuadraticPair):
    """Best of the incumbent, user-K co-phasing and the top generalized direction."""
    cands = [np.asarray(e_prev, dtype=complex)]
    kdir = quad.A_K @ e_prev
    if np.any(kdir != 0):
        cands.append(phase_align(kdir, e_prev))
    _, V = np.linalg.eigh(quad.A_K - quad.A_E)
    cands.append(phase_align(V[:, -1], e_prev))
    vals = [e_objective(c, quad) for c in cands]
    return cands[int(np.argmax(vals))]


def solve_e_socp_reference(e_prev, quad: QuadraticPair, config: PccpParams | None = None,
                           rng: np.random.Generator | None = None):
    """Reflection update by penalty CCP over cone programs (the SOCP benchmark).

    Maximizes min{R_bar, R^_K(e)} - R^_E^up(e); the user-K quadratic is
    linearized at each CCP iterate, the ED term is kept exact.  Returns ``(e, converged)``; without convergence the best
    near-feasible iterate (or e_prev) is returned with ``converged=False``.
    """
    params = config or PccpParams()
    rng = np.random.default_rng(0) if rng is None else rng
    M = len(e_prev)
    d_K = float(np.real(np.vdot(e_prev, quad.A_K @ e_prev)))
    d_E = float(np.real(np.vdot(e_prev, quad.A_E @ e_prev)))
    prog = ConeProgram()
    r = prog.var(1)
    e = _cvar(prog, M)
    # e^H A_K e >= 2 Re{(A_K e_j)^H e} - e_j^H A_K e_j, refreshed at every CCP iterate
    argK = prog.var(1)
    lK = prog.var(1)
    conic.add_log_hypograph(prog, lK, argK)
    k_block = len(prog.blocks)
    prog.add_nonneg(Affine(np.zeros((1, prog.n_vars)), np.zeros(1)))

    def relinearize(e_j):
        dK_j = float(np.real(np.vdot(e_j, quad.A_K @ e_j)))
        row = 1.0 - dK_j + 2 * _cscalar_re((quad.A_K @ e_j).conj(), e) - argK
        blk = prog.blocks[k_block]
        blk.G, blk.h = row.padded(prog.n_vars), row.b
    prog.add_nonneg(lK - 2 * LN2 * r)
    prog.add_nonneg(quad.R_bar - r)
    lam, V = np.linalg.eigh(quad.A_E)
    F = V * np.sqrt(np.clip(lam, 0, None))[None, :]
    tau = prog.var(1)
    conic.add_quad_over_lin(prog, tau, 1.0, (F.conj().T @ e).stacked())
    relax = UnitModulusPenalty(prog, e)
    objective = r - tau * (1.0 / (2 * (1 + d_E) * LN2))
    # cascaded rates are O(snr) bits; rescale so the penalty does not swamp them
    weight = 2 * LN2 / min(max(d_K, d_E, 1e-9), 1.0)
    e0 = _socp_warm_start(e_prev, quad)
    e_new, converged, _, _ = run_pccp(prog, relax, weight * objective, e0, params, rng,
                                      relinearize)
    if e_new is None:
        return np.asarray(e_prev).copy(), False
    return e_new, converged


# ---------------------------------------------------------------------------
# AO driver

def ao_passive(channels: ChannelSet, R_E_mat, config: SystemConfig,
               stop: PassiveStop | None = None, rng: np.random.Generator | None = None,
               e_method: str = "closed_form", eve=None, pccp: PccpParams | None = None,
               initial=None) -> PassiveSolution:
    """MM-based alternating optimization of the average secrecy rate.

    ``e_method``: "closed_form" (phase alignment with prices), "socp" (penalty
    CCP reference) or "random" (reflection phases left at their random start).
    """
    if e_method not in ("closed_form", "socp", "random"):
        raise ValueError(f"unknown e_method {e_method!r}")
    stop = stop or PassiveStop()
    rng = np.random.default_rng(0) if rng is None else rng
    eve = eve or JensenEve(channels.H_irs, R_E_mat)
    sig_h, sig_K, sig_E = _noise_vectors(config, channels.K)
    start = time.perf_counter()
    if initial is None:
        z, t, e, w = initial_point(channels, config, rng)
    else:
        z, t, e, w = initial
    obj = passive_objective(z, w, e, t, channels, eve, config)
    trace = [obj]
    status = "ok"
    n = 0
    for n in range(1, stop.max_outer + 1):
        prev = obj
        state = PassiveSolution(z=z, w=w, e=e, t=t)
        z_c, w_c, t_c, ok = solve_subproblem_zwt_passive(state, channels, R_E_mat, config, eve)
        if not ok:
            status = "solver-failure"
            log.debug("zwt subproblem failed at iteration %d", n)
            break
        obj_c = passive_objective(z_c, w_c, e, t_c, channels, eve, config)
        if obj_c >= obj:
            z, w, t, obj = z_c, w_c, t_c, obj_c
        if e_method != "random":
            rh = helper_rates(z, t, channels.g_helpers, channels.Q, sig_h)
            quad = build_quadratics(w, channels, R_E_mat, sig_E, sig_K, rh, eve)
            if e_method == "closed_form":
                e_c = update_e_passive(e, quad)
            else:
                e_c, _ = solve_e_socp_reference(e, quad, pccp, rng)
            obj_c = passive_objective(z, w, e_c, t, channels, eve, config)
            if obj_c >= obj:
                e, obj = e_c, obj_c
        trace.append(obj)
        if abs(obj - prev) <= stop.rel_tol * max(abs(prev), 1e-12):
            break
    return PassiveSolution(z=z, w=w, e=e, t=t, achieved_rate=max(0.0, obj), iterations=n,
                           objective_trace=trace, solve_time=time.perf_counter() - start,
                           status=status)


def nonrobust_baseline(channels_estimated: ChannelSet, config: SystemConfig,
                       stop: PassiveStop | None = None,
                       rng: np.random.Generator | None = None) -> PassiveSolution:
    """Secrecy maximization treating the estimated cascaded channels as exact."""
    return ao_passive(channels_estimated, None, config, stop=stop, rng=rng,
                      eve=DeterministicEve(channels_estimated.H_E))
