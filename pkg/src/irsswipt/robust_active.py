"""Outage-constrained secrecy-rate design against an active eavesdropper.

The chance constraint on the secrecy rate is split per user, each rate is
replaced by a tractable bound (quadratic-over-linear linearization for the
helpers, auxiliary-variable bounds for the cascaded links), and every
Gaussian quadratic chance constraint is replaced by its Bernstein-type
deterministic form.  The resulting problem is solved by alternating between

* closed-form auxiliary variables (a_K, a_E, v) and the secrecy rate,
* one cone program in (z, w, W, t) with rank-one surrogates for W = w w^H,
* a penalty convex-concave loop for the unit-modulus reflection vector e.

Internally every quantity lives in normalized units (BS power 1, noise 1,
helper amplitudes scaled by the largest harvestable amplitude) which keeps
the cone programs well conditioned; the public functions take and return
physical units.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .channel import ChannelSet, CsiErrorModel, SystemConfig, ED
from .conic import Affine, CAffine, ConeProgram, HermitianVar, vstack, cvstack
from .rates import LN2, half_log2_1p, helper_rates, tight_aux

log = logging.getLogger(__name__)


def rho_bar(rho: float, K: int) -> float:
    """Per-user outage level whose product over K users meets ``rho``."""
    return 1.0 - (1.0 - rho) ** (1.0 / K)


# ---------------------------------------------------------------------------
# helper-rate surrogates

def surrogate_rk_tilde(z, t_k, g_k, Q, sigma2_k, z_prev, t_k_prev):
    """Concave lower bound of a helper rate, tight at (z_prev, t_k_prev)."""
    c_prev = np.vdot(g_k, Q @ z_prev)
    c = np.vdot(g_k, Q @ z)
    if t_k <= 0:
        return -np.inf if abs(c_prev) > 0 and t_k_prev > 0 else 0.0
    arg = (1.0 - t_k_prev ** 2 * abs(c_prev) ** 2 / (sigma2_k * t_k)
           + 2 * t_k_prev * np.real(np.conj(c_prev) * c) / sigma2_k)
    if arg <= 0:
        return -np.inf
    return float(0.5 * np.log2(arg))


def xi_harvest_bound(z, t_k, g_k, Q, z_prev, t_k_prev):
    """Linear lower bound of the harvested power (1 - t_k)|g_k^H Q z|^2."""
    c_prev = np.vdot(g_k, Q @ z_prev)
    c = np.vdot(g_k, Q @ z)
    if t_k >= 1:
        return -np.inf if (1 - t_k_prev) * abs(c_prev) > 0 else 0.0
    return float(2 * (1 - t_k_prev) * np.real(np.conj(c_prev) * c)
                 - (1 - t_k_prev) ** 2 * abs(c_prev) ** 2 / (1 - t_k))


# ---------------------------------------------------------------------------
# Bernstein-type inequality terms

@dataclass
class BtiTerms:
    trace_U: float
    frob_U: float
    norm_u: float
    lambda_max_U: float
    u_const: float


def _weighted_frob(W, lam):
    s = np.sqrt(lam)
    return float(np.linalg.norm(s[:, None] * W * s[None, :]))


def _weighted_lmax(W, lam):
    s = np.sqrt(lam)
    return max(float(np.linalg.eigvalsh(s[:, None] * W * s[None, :]).max()), 0.0)


def bti_terms_helper_k(W, e, H_hat_E, lambda_E, a_E, sigma2_E, R_tilde_k, R_sec) -> BtiTerms:
    """Scalars of the helper-k quadratic chance constraint (LIE error only)."""
    lam = np.asarray(lambda_E, dtype=float)
    M = len(e)
    b = H_hat_E.conj().T @ e                       # H^H e
    Wb = W @ b
    u_const = (a_E * np.real(np.vdot(b, Wb))
               - ((R_tilde_k - R_sec) * 2 * LN2 - a_E + np.log(a_E) + 1) * sigma2_E)
    return BtiTerms(trace_U=a_E * M * float(np.sum(lam * np.real(np.diag(W)))),
                    frob_U=a_E * M * _weighted_frob(W, lam),
                    norm_u=a_E * np.sqrt(M) * float(np.linalg.norm(np.sqrt(lam) * Wb)),
                    lambda_max_U=a_E * M * _weighted_lmax(W, lam),
                    u_const=float(u_const))


def bti_terms_user_K(W, w, e, H_hat_K, H_hat_E, lambda_K, lambda_E, a_K, a_E, v,
                     sigma2_K, sigma2_E, R_sec) -> BtiTerms:
    """Scalars of the attacked-user chance constraint (LIL and LIE errors)."""
    lam_K = np.asarray(lambda_K, dtype=float)
    lam_E = np.asarray(lambda_E, dtype=float)
    M = len(e)
    cK = a_K * abs(v) ** 2
    cE = a_E / sigma2_E
    bK = H_hat_K.conj().T @ e
    bE = H_hat_E.conj().T @ e
    WbK, WbE = W @ bK, W @ bE
    diagW = np.real(np.diag(W))
    trace = M * (cK * np.sum(lam_K * diagW) + cE * np.sum(lam_E * diagW))
    frob = M * np.hypot(cK * _weighted_frob(W, lam_K), cE * _weighted_frob(W, lam_E))
    norm_u = np.sqrt(M * np.sum(lam_K * np.abs(cK * WbK - a_K * v * w) ** 2)
                     + M * cE ** 2 * np.sum(lam_E * np.abs(WbE) ** 2))
    lmax = M * max(cK * _weighted_lmax(W, lam_K), cE * _weighted_lmax(W, lam_E))
    c = (np.log(a_E) + np.log(a_K) - a_E - a_K - 2 * R_sec * LN2
         - sigma2_K * a_K * abs(v) ** 2 + 2)
    u_const = (cK * np.real(np.vdot(bK, WbK)) + cE * np.real(np.vdot(bE, WbE))
               - 2 * a_K * np.real(v * np.vdot(e, H_hat_K @ w)) - c)
    return BtiTerms(float(trace), float(frob), float(norm_u), float(lmax), float(u_const))


def bti_slack_value(terms: BtiTerms, rho_bar_: float) -> float:
    """Left-hand side of the deterministic BTI row with tight slacks."""
    x = np.sqrt(terms.frob_U ** 2 + 2 * terms.norm_u ** 2)
    y = max(terms.lambda_max_U, 0.0)
    return (terms.trace_U + np.sqrt(2 * np.log(1 / rho_bar_)) * x
            - np.log(rho_bar_) * y + terms.u_const)


def bti_deterministic_check(terms: BtiTerms, rho_bar_: float) -> bool:
    return bool(bti_slack_value(terms, rho_bar_) <= 0.0)


# ---------------------------------------------------------------------------
# normalized problem data

@dataclass
class ActiveSolution:
    R_sec: float
    z: np.ndarray
    w: np.ndarray
    W: np.ndarray
    e: np.ndarray
    t: np.ndarray
    a_K: float = 1.0
    a_E: float = 1.0
    v: complex = 0.0
    x: np.ndarray = field(default_factory=lambda: np.zeros(2))
    y: np.ndarray = field(default_factory=lambda: np.zeros(2))
    feasible: bool = False
    iterations: int = 0
    trace: list = field(default_factory=list)
    status: str = ""


@dataclass
class PccpParams:
    lambda0: float = 10.0
    gamma: float = 3.0
    lambda_max: float = 1e4
    J_max: int = 30
    chi: float = 1e-5
    nu: float = 1e-4
    restarts: int = 3


@dataclass
class AoStop:
    tol: float = 1e-3
    max_outer: int = 30
    relative: bool = True       # |dR| < tol |R|; absolute |dR| < tol when False

    def done(self, prev: float, cur: float) -> bool:
        scale = max(abs(cur), 1e-300) if self.relative else 1.0
        return abs(cur - prev) < self.tol * scale


class ActiveScene:
    """Normalized data of one robust design instance."""

    def __init__(self, channels: ChannelSet, errors: CsiErrorModel, config: SystemConfig):
        K = channels.K
        L = K - 1
        self.K, self.L, self.M = K, L, channels.H_K.shape[0]
        self.rho_bar = rho_bar(config.rho_outage, K)
        self.sqrtP = np.sqrt(config.P_max)
        self.sig_k = np.sqrt([config.noise(k) for k in range(L)])
        self.sig_K = np.sqrt(config.noise(K - 1))
        self.sig_E = np.sqrt(config.noise(ED))
        gq = np.conj(channels.g_helpers) @ channels.Q          # rows g_k^H Q
        amp = self.sqrtP * np.max(np.linalg.norm(gq, axis=1)) if L else 0.0
        self.alpha = amp if amp > 0 else 1.0
        self.Gz = self.sqrtP * gq / self.sig_k[:, None]         # decoding SNR rows
        self.Hz = self.sqrtP * gq / self.alpha                  # harvest amplitude rows
        self.HK = self.alpha * channels.H_K / self.sig_K
        self.HE = self.alpha * channels.H_E / self.sig_E
        self.lamK = self.alpha ** 2 * errors.lambda_K / self.sig_K ** 2
        self.lamE = self.alpha ** 2 * errors.lambda_E / self.sig_E ** 2
        self.Q = channels.Q
        self.channels, self.config = channels, config

    # unit conversion -------------------------------------------------------
    def normalize(self, s: ActiveSolution) -> ActiveSolution:
        return replace(s, z=s.z / self.sqrtP, w=s.w / self.alpha, W=s.W / self.alpha ** 2,
                       v=s.v * self.sig_K,
                       x=np.array([s.x[0] / self.sig_E ** 2, s.x[1]]),
                       y=np.array([s.y[0] / self.sig_E ** 2, s.y[1]]))

    def physical(self, s: ActiveSolution) -> ActiveSolution:
        return replace(s, z=s.z * self.sqrtP, w=s.w * self.alpha, W=s.W * self.alpha ** 2,
                       v=s.v / self.sig_K,
                       x=np.array([s.x[0] * self.sig_E ** 2, s.x[1]]),
                       y=np.array([s.y[0] * self.sig_E ** 2, s.y[1]]))

    # closed-form quantities -------------------------------------------------
    def helper_rates(self, z, t):
        return half_log2_1p(t * np.abs(self.Gz @ z) ** 2)

    def terms(self, s: ActiveSolution, R_sec: float = 0.0):
        # certified with the deployed rank-one beamformer, not the lifted W
        s = replace(s, W=np.outer(s.w, s.w.conj()))
        rk = self.helper_rates(s.z, s.t)
        helpers = [bti_terms_helper_k(s.W, s.e, self.HE, self.lamE, s.a_E, 1.0, r, R_sec)
                   for r in rk]
        user = bti_terms_user_K(s.W, s.w, s.e, self.HK, self.HE, self.lamK, self.lamE,
                                s.a_K, s.a_E, s.v, 1.0, 1.0, R_sec)
        return helpers, user

    def rsec_closed_form(self, s: ActiveSolution) -> float:
        """Largest R_sec keeping every BTI row nonpositive (slacks tight)."""
        helpers, user = self.terms(s, 0.0)
        vals = [bti_slack_value(h, self.rho_bar) for h in helpers]
        vals.append(bti_slack_value(user, self.rho_bar))
        return float(-max(vals) / (2 * LN2))

    def tight_slacks(self, s: ActiveSolution):
        helpers, user = self.terms(s, 0.0)
        h = helpers[0]
        x = np.array([np.sqrt(h.frob_U ** 2 + 2 * h.norm_u ** 2),
                      np.sqrt(user.frob_U ** 2 + 2 * user.norm_u ** 2)])
        y = np.array([h.lambda_max_U, user.lambda_max_U])
        return x, y

    def tight_aux(self, s: ActiveSolution):
        qE = np.vdot(s.e, self.HE @ s.w)
        a_E = 1.0 / (1.0 + abs(qE) ** 2)
        a_K, v = tight_aux(np.vdot(s.e, self.HK @ s.w), 1.0)
        return a_E, a_K, v

    def initial(self, rng: np.random.Generator) -> ActiveSolution:
        z, t, e, w = initial_point(self.channels, self.config, rng)
        s = self.normalize(ActiveSolution(R_sec=0.0, z=z, w=w, W=np.outer(w, w.conj()),
                                          e=e, t=t))
        s.a_E, s.a_K, s.v = self.tight_aux(s)
        s.x, s.y = self.tight_slacks(s)
        s.R_sec = self.rsec_closed_form(s)
        return s


def initial_point(channels: ChannelSet, config: SystemConfig, rng: np.random.Generator):
    """(z, t, e, w) start shared by the robust and average-rate designs.

    Random reflection phases, t = 0.5, z on the principal eigenvector of
    sum_k Q^H g_k g_k^H Q at full power, and each helper forwarding its full
    harvested amplitude co-phased at user K.
    """
    K, M = channels.K, channels.H_K.shape[0]
    e = np.exp(1j * rng.uniform(0, 2 * np.pi, M))
    t = np.full(K - 1, 0.5)
    gq = np.conj(channels.g_helpers) @ channels.Q
    C = gq.conj().T @ gq
    if np.allclose(C, 0):
        z = np.zeros(gq.shape[1], dtype=complex)
        z[0] = 1.0
    else:
        z = np.linalg.eigh(C)[1][:, -1].astype(complex)
    z *= np.sqrt(config.P_max)
    amp = np.sqrt((1 - t) * np.abs(gq @ z) ** 2)
    w = amp * np.exp(-1j * np.angle(e.conj() @ channels.H_K))
    return z, t, e, w


def rank_one_tolerance(W_prev) -> float:
    return 1e-4 * max(1.0, float(np.real(np.trace(W_prev))))


# ---------------------------------------------------------------------------
# subproblem in (z, w, W, t)

def _cvar(prog: ConeProgram, n: int) -> CAffine:
    return CAffine(prog.var(n), prog.var(n))


def _cscalar_re(row, x: CAffine) -> Affine:
    """Re{row @ x} for a constant complex row vector."""
    return (np.atleast_2d(row) @ x).re


def _zwWt_program(sc: ActiveScene, s: ActiveSolution):
    L, M = sc.L, sc.M
    s1 = np.sqrt(2 * np.log(1 / sc.rho_bar))
    s2 = -np.log(sc.rho_bar)
    prog = ConeProgram()
    R = prog.var(1)
    z = _cvar(prog, sc.Hz.shape[1])
    w = _cvar(prog, L)
    W = HermitianVar(prog, L)
    t = prog.var(L)
    xE, xK, yE, yK = prog.var(1), prog.var(1), prog.var(1), prog.var(1)

    aE, aK, v = s.a_E, s.a_K, s.v
    bK = sc.HK.conj().T @ s.e
    bE = sc.HE.conj().T @ s.e
    sqlamK, sqlamE = np.sqrt(sc.lamK), np.sqrt(sc.lamE)

    trE = W.trace_weighted(sc.lamE)
    trK = W.trace_weighted(sc.lamK)
    quadE = W.quad(bE)
    quadK = W.quad(bK)
    WbE = W.matvec(bE)
    WbK = W.matvec(bK)

    # helper rows
    c_prev = sc.Gz @ s.z
    for k in range(L):
        # |c_prev|^2 is factored out of the log argument so the cone row is O(1)
        cp = abs(c_prev[k])
        if cp > 0:
            sk, lk = prog.var(1), prog.var(1)
            conic.add_quad_over_lin(prog, sk, t[k], Affine.const([s.t[k]]))
            arg = (1.0 / cp ** 2 - sk
                   + 2 * s.t[k] * _cscalar_re(np.conj(c_prev[k]) / cp ** 2 * sc.Gz[k], z))
            conic.add_log_hypograph(prog, lk, arg)
            ell = lk + 2 * np.log(cp)
        else:
            ell = Affine.const([0.0])
        row = (aE * M * trE + s1 * xE + s2 * yE + aE * quadE
               - (ell - 2 * LN2 * R - aE + np.log(aE) + 1))
        prog.add_nonneg(-row)
    prog.add_soc(xE, vstack(aE * M * W.congruence(sqlamE).stacked(),
                            (np.sqrt(2 * M) * aE * (np.diag(sqlamE) @ WbE)).stacked()))
    prog.add_nonneg(yE - aE * M * trE)
    prog.add_nonneg(yE)

    # attacked-user row
    cK, cE = aK * abs(v) ** 2, aE
    C0 = np.log(aE) + np.log(aK) - aE - aK - aK * abs(v) ** 2 + 2
    lin = -2 * aK * _cscalar_re(v * (np.conj(s.e) @ sc.HK), w)
    rowK = (M * (cK * trK + cE * trE) + s1 * xK + s2 * yK + cK * quadK + cE * quadE
            + lin - C0 + 2 * LN2 * R)
    prog.add_nonneg(-rowK)
    uK = np.diag(sqlamK) @ (cK * WbK) - (aK * v) * (np.diag(sqlamK) @ w)
    prog.add_soc(xK, vstack(cK * M * W.congruence(sqlamK).stacked(),
                            cE * M * W.congruence(sqlamE).stacked(),
                            (np.sqrt(2 * M) * uK).stacked(),
                            (np.sqrt(2 * M) * cE * (np.diag(sqlamE) @ WbE)).stacked()))
    prog.add_nonneg(yK - cK * M * trK)
    prog.add_nonneg(yK - cE * M * trE)
    prog.add_nonneg(yK)

    # power, splitting ratios, harvesting
    prog.add_soc(Affine.const([1.0]), z.stacked())
    prog.add_nonneg(t)
    prog.add_nonneg(1.0 - t)
    h_prev = sc.Hz @ s.z
    for k in range(L):
        pk, qk = prog.var(1), prog.var(1)
        conic.add_quad_over_lin(prog, pk, 1.0, w[k].stacked())
        conic.add_quad_over_lin(prog, qk, 1.0 - t[k],
                                Affine.const([(1 - s.t[k]) * abs(h_prev[k])]))
        rhs = 2 * (1 - s.t[k]) * _cscalar_re(np.conj(h_prev[k]) * sc.Hz[k], z)
        prog.add_nonneg(rhs - pk - qk)

    # rank-one surrogates
    eps = rank_one_tolerance(s.W)
    evals, evecs = np.linalg.eigh(s.W)
    d = evecs[:, -1]
    trW = W.trace_weighted(np.ones(L))
    prog.add_nonneg(eps - (trW - W.quad(d)))
    conic.add_quad_over_lin(prog, trW + eps, 1.0, w.stacked())
    lin_w = 2 * _cscalar_re(np.conj(s.w), w) - float(np.vdot(s.w, s.w).real)
    prog.add_nonneg(lin_w - trW + eps)
    # [[W, w], [w^H, 1]] >= 0, i.e. W >= w w^H; with the linearized lower bound on
    # ||w||^2 this pins Tr(W - w w^H) <= eps
    one = CAffine.const([1.0])
    cols = [cvstack(W.vec[j * L:(j + 1) * L], w[j].conj()) for j in range(L)]
    schur = cvstack(*cols, w, one)
    prog.add(conic.embed_hermitian_psd(schur, L + 1), "psd", 2 * (L + 1))

    prog.maximize(R)
    return prog, dict(R=R, z=z, w=w, W=W, t=t, xE=xE, xK=xK, yE=yE, yK=yK)


def _solve_with_retry(prog):
    sol = conic.solve(prog, 1e-8)
    if not sol.ok:
        sol = conic.solve(prog, 1e-7)
    return sol


def _zwWt(sc: ActiveScene, s: ActiveSolution):
    prog, v = _zwWt_program(sc, s)
    sol = _solve_with_retry(prog)
    if not sol.ok:
        return s, sol.status
    x = sol.x
    W = v["W"].value(x)
    out = replace(s, R_sec=float(v["R"].value(x)[0]), z=v["z"].value(x), w=v["w"].value(x),
                  W=0.5 * (W + W.conj().T), t=np.clip(v["t"].value(x), 0.0, 1.0),
                  x=np.array([v["xE"].value(x)[0], v["xK"].value(x)[0]]),
                  y=np.array([v["yE"].value(x)[0], v["yK"].value(x)[0]]))
    return out, sol.status


def solve_subproblem_zwWt(state: ActiveSolution, channels: ChannelSet, errors: CsiErrorModel,
                          config: SystemConfig) -> ActiveSolution:
    """One cone solve over {R_sec, z, w, W, t, x, y}; e and auxiliaries fixed.

    Returns the state flagged infeasible (unchanged otherwise) when the
    backend does not report an optimal solution.
    """
    sc = ActiveScene(channels, errors, config)
    out, status = _zwWt(sc, sc.normalize(state))
    res = sc.physical(out)
    res.status = str(status.value)
    if not status == conic.Status.OPTIMAL:
        res.feasible = False
    return res


# ---------------------------------------------------------------------------
# reflection subproblem: penalty CCP

class UnitModulusPenalty:
    """Relaxed unit-modulus rows for a complex variable e of length M.

    |e_m|^2 <= 1 + b_{M+m} (convex) and the concave side |e_m|^2 >= 1 - b_m
    linearized at e_j; the linear rows live in one block updated in place.
    """

    def __init__(self, prog: ConeProgram, e: CAffine):
        M = e.size
        self.prog, self.e, self.M = prog, e, M
        self.b = prog.var(2 * M)
        for m in range(M):
            conic.add_quad_over_lin(prog, 1.0 + self.b[M + m], 1.0, e[m].stacked())
        prog.add_nonneg(self.b)
        self.block = len(prog.blocks)
        prog.add_nonneg(Affine(np.zeros((M, prog.n_vars)), np.zeros(M)))

    def linearize(self, e_j: np.ndarray) -> None:
        M = self.M
        lin = (2 * (np.diag(e_j.real) @ self.e.re + np.diag(e_j.imag) @ self.e.im)
               - np.abs(e_j) ** 2 - 1.0 + self.b[:M])
        blk = self.prog.blocks[self.block]
        blk.G, blk.h = lin.padded(self.prog.n_vars), lin.b


def usable_solution(prog: ConeProgram):
    """Solve; return x when optimal or, failing that, verifiably primal feasible.

    Near a CCP fixed point the relaxed unit-modulus set loses its interior and
    the backend may stall at a feasible point that is still a valid iterate.
    """
    sol = _solve_with_retry(prog)
    x = sol.x
    if sol.ok or (np.all(np.isfinite(x)) and conic.block_residual(prog, x) <= 1e-6):
        return x
    return None


def run_pccp(prog: ConeProgram, relax: UnitModulusPenalty, objective, e0: np.ndarray,
             params: PccpParams, rng: np.random.Generator, relinearize=None):
    """Penalty CCP loop; ``objective`` is the Affine to maximize before the penalty.

    ``relinearize(e_j)``, if given, refreshes any further linearized rows at the
    current iterate before each solve.

    Returns (e, converged, last |b|_1, any solve usable).  Without convergence e
    is the best (by ``objective``) iterate whose relaxation is within chi, or
    None if no iterate qualified.
    """
    e_j = np.asarray(e0, dtype=complex).copy()
    any_ok, last_b = False, np.inf
    best, best_val = None, -np.inf
    for _ in range(params.restarts + 1):
        lam, prev_val = params.lambda0, None
        for _ in range(params.J_max):
            relax.linearize(e_j)
            if relinearize is not None:
                relinearize(e_j)
            penalized = objective - lam * relax.b.sum()
            prog.maximize(penalized)
            x = usable_solution(prog)
            lam = min(params.gamma * lam, params.lambda_max)
            if x is None:
                # isolated breakdowns: keep the iterate and tighten the penalty
                continue
            any_ok = True
            e_new, b = relax.e.value(x), relax.b.value(x)
            val = float(penalized.value(x)[0])
            last_b = float(np.sum(np.abs(b)))
            step = float(np.sum(np.abs(e_new - e_j)))
            flat = prev_val is not None and abs(val - prev_val) <= params.nu * max(1.0, abs(val))
            e_j, prev_val = e_new, val
            if last_b <= params.chi:
                if step <= params.nu or flat:
                    return e_j / np.abs(e_j), True, last_b, any_ok
                raw = float(objective.value(x)[0])
                if raw > best_val:
                    best, best_val = e_j / np.abs(e_j), raw
        e_j = np.exp(1j * rng.uniform(0, 2 * np.pi, relax.M))
    return best, False, last_b, any_ok


class _ReflectionProgram:
    """Cone program in e for fixed (z, w, W, t, aux); the linearization rows
    and the penalty weight are updated in place between CCP iterations."""

    def __init__(self, sc: ActiveScene, s: ActiveSolution):
        L, M = sc.L, sc.M
        s1 = np.sqrt(2 * np.log(1 / sc.rho_bar))
        s2 = -np.log(sc.rho_bar)
        prog = ConeProgram()
        R = prog.var(1)
        e = _cvar(prog, M)
        xE, xK, yE, yK = prog.var(1), prog.var(1), prog.var(1), prog.var(1)
        tauE, tauK = prog.var(1), prog.var(1)
        aE, aK, v = s.a_E, s.a_K, s.v
        sqlamK, sqlamE = np.sqrt(sc.lamK), np.sqrt(sc.lamE)
        W = s.W
        lam, V = np.linalg.eigh(W)
        F = V * np.sqrt(np.clip(lam, 0, None))[None, :]          # W = F F^H
        # e^H H W H^H e = || F^H H^H e ||^2
        conic.add_quad_over_lin(prog, tauE, 1.0, ((F.conj().T @ sc.HE.conj().T) @ e).stacked())
        conic.add_quad_over_lin(prog, tauK, 1.0, ((F.conj().T @ sc.HK.conj().T) @ e).stacked())
        WbE = (W @ sc.HE.conj().T) @ e               # W H^H e
        WbK = (W @ sc.HK.conj().T) @ e
        diagW = np.real(np.diag(W))
        trE = float(np.sum(sc.lamE * diagW))
        trK = float(np.sum(sc.lamK * diagW))

        rk = sc.helper_rates(s.z, s.t)
        for r in rk:
            row = (aE * M * trE + s1 * xE + s2 * yE + aE * tauE
                   - (2 * LN2 * r - 2 * LN2 * R - aE + np.log(aE) + 1))
            prog.add_nonneg(-row)
        s_half = lambda lam_: np.sqrt(lam_)[:, None] * W * np.sqrt(lam_)[None, :]  # noqa: E731
        frobE = np.linalg.norm(s_half(sc.lamE))
        frobK = np.linalg.norm(s_half(sc.lamK))
        prog.add_soc(xE, vstack(Affine.const([aE * M * frobE]),
                                (np.sqrt(2 * M) * aE * (np.diag(sqlamE) @ WbE)).stacked()))
        lmaxE = aE * M * trE
        prog.add_nonneg(yE - lmaxE)
        prog.add_nonneg(yE)

        cK, cE = aK * abs(v) ** 2, aE
        C0 = np.log(aE) + np.log(aK) - aE - aK - aK * abs(v) ** 2 + 2
        hw = sc.HK @ s.w                                          # e^H (H_K w)
        lin = -2 * aK * _cscalar_re(v * hw, e.conj())   # Re{v e^H H_K w}
        rowK = (M * (cK * trK + cE * trE) + s1 * xK + s2 * yK + cK * tauK + cE * tauE
                + lin - C0 + 2 * LN2 * R)
        prog.add_nonneg(-rowK)
        uK = cK * (np.diag(sqlamK) @ WbK) - (aK * v) * (sqlamK * s.w)
        prog.add_soc(xK, vstack(Affine.const([M * np.hypot(cK * frobK, cE * frobE)]),
                                (np.sqrt(2 * M) * uK).stacked(),
                                (np.sqrt(2 * M) * cE * (np.diag(sqlamE) @ WbE)).stacked()))
        prog.add_nonneg(yK - M * max(cK * trK, cE * trE))
        prog.add_nonneg(yK)

        self.relax = UnitModulusPenalty(prog, e)
        self.prog, self.R = prog, R
        # rates of a weak cascaded link are O(snr); weighting R by 2 ln2 / snr keeps the
        # penalty parameters meaningful whatever the link budget
        snr = max(abs(np.vdot(s.e, sc.HK @ s.w)) ** 2, abs(np.vdot(s.e, sc.HE @ s.w)) ** 2)
        self.rate_weight = 2 * LN2 / min(max(snr, 1e-9), 1.0)


def _warm_starts(sc: ActiveScene, w):
    """Unit-modulus candidates: co-phasing user K, and the phases of the leading
    eigenvector of a_K a_K^H - a_E a_E^H (user-K gain against leakage)."""
    aK, aE = sc.HK @ w, sc.HE @ w
    out = [np.exp(1j * np.angle(aK))]
    u = np.linalg.eigh(np.outer(aK, aK.conj()) - np.outer(aE, aE.conj()))[1][:, -1]
    out.append(np.exp(1j * np.angle(u)))
    return out


def _pccp(sc: ActiveScene, s: ActiveSolution, params: PccpParams, rng: np.random.Generator):
    """Penalty CCP from ``s``; returns (state with new e or None, converged, |b|_1, all_ok).

    The first attempt is warm-started from the better of the incoming e and
    phases co-phasing the attacked user's cascade (with auxiliaries refreshed
    there); restarts use random phases.
    """
    start = s
    for e0 in _warm_starts(sc, s.w):
        cand = replace(s, e=e0)
        cand.a_E, cand.a_K, cand.v = sc.tight_aux(cand)
        cand.R_sec = sc.rsec_closed_form(cand)
        if cand.R_sec > start.R_sec:
            start = cand
    rp = _ReflectionProgram(sc, start)
    e, converged, last_b, all_ok = run_pccp(rp.prog, rp.relax, rp.rate_weight * rp.R,
                                            start.e, params, rng)
    return (replace(start, e=e) if converged else None), converged, last_b, all_ok


def solve_subproblem_e_pccp(state: ActiveSolution, channels: ChannelSet, errors: CsiErrorModel,
                            config: SystemConfig, pccp: PccpParams | None = None,
                            rng: np.random.Generator | None = None):
    """Penalty-CCP update of the reflection vector.

    Returns ``(e, converged)``; on non-convergence the incoming e is returned.
    """
    sc = ActiveScene(channels, errors, config)
    rng = np.random.default_rng(0) if rng is None else rng
    out, ok, _, _ = _pccp(sc, sc.normalize(state), pccp or PccpParams(), rng)
    return (out.e, True) if ok else (state.e.copy(), False)


# ---------------------------------------------------------------------------
# auxiliary update and AO driver

def _update_aux(sc: ActiveScene, s: ActiveSolution) -> ActiveSolution:
    a_E, a_K, v = sc.tight_aux(s)
    cand = replace(s, a_E=a_E, a_K=a_K, v=v)
    cand.R_sec = sc.rsec_closed_form(cand)
    cand.x, cand.y = sc.tight_slacks(cand)
    if cand.R_sec < s.R_sec:
        return s
    return cand


def update_aux_and_rsec(state: ActiveSolution, channels_estimated: ChannelSet,
                        errors: CsiErrorModel, config: SystemConfig) -> ActiveSolution:
    sc = ActiveScene(channels_estimated, errors, config)
    return sc.physical(_update_aux(sc, sc.normalize(state)))


def ao_active(channels: ChannelSet, errors: CsiErrorModel, config: SystemConfig,
              stop: AoStop | None = None, pccp: PccpParams | None = None,
              rng: np.random.Generator | None = None,
              initial: ActiveSolution | None = None) -> ActiveSolution:
    """Alternating optimization of the outage-constrained design.

    ``channels`` carries the estimated cascaded matrices.  The returned
    solution is in physical units; ``R_sec`` is floored at zero and
    ``feasible`` requires every subproblem to succeed, the penalty CCP to
    converge and a positive secrecy rate.
    """
    stop = stop or AoStop()
    pccp = pccp or PccpParams()
    rng = np.random.default_rng(0) if rng is None else rng
    sc = ActiveScene(channels, errors, config)
    s = sc.normalize(initial) if initial is not None else sc.initial(rng)
    s.R_sec = sc.rsec_closed_form(s)
    trace = [s.R_sec]
    all_ok, pccp_ok = True, True
    it = 0
    for it in range(1, stop.max_outer + 1):
        prev = s.R_sec
        s = _update_aux(sc, s)
        cand, status = _zwWt(sc, s)
        if status != conic.Status.OPTIMAL:
            all_ok = False
            log.debug("zwWt subproblem returned %s", status)
            break
        cand.R_sec = sc.rsec_closed_form(cand)
        if cand.R_sec >= s.R_sec:
            cand.x, cand.y = sc.tight_slacks(cand)
            s = cand
        cand, converged, _, ok = _pccp(sc, s, pccp, rng)
        all_ok &= ok
        if not converged:
            pccp_ok = False
        else:
            cand.R_sec = sc.rsec_closed_form(cand)
            if cand.R_sec >= s.R_sec:
                cand.x, cand.y = sc.tight_slacks(cand)
                s = cand
        trace.append(s.R_sec)
        if stop.done(prev, s.R_sec):
            break
    out = sc.physical(s)
    out.iterations = it
    out.trace = trace
    out.feasible = bool(all_ok and pccp_ok and s.R_sec > 0)
    out.R_sec = max(0.0, s.R_sec)
    out.status = "ok" if all_ok else "solver-failure"
    if not pccp_ok:
        out.status += ",pccp-nonconvergence"
    return out


# ---------------------------------------------------------------------------
# Monte Carlo audit

def secrecy_samples(sol: ActiveSolution, channels_estimated: ChannelSet, errors: CsiErrorModel,
                    config: SystemConfig, n_mc: int, rng: np.random.Generator) -> np.ndarray:
    """min_k R_k - R_E over sampled true cascaded channels H = H_hat + Delta."""
    K = channels_estimated.K
    sig = np.array([config.noise(k) for k in range(K - 1)])
    r_help = helper_rates(sol.z, sol.t, channels_estimated.g_helpers, channels_estimated.Q, sig)
    base = float(np.min(r_help)) if len(r_help) else np.inf
    L, M = K - 1, channels_estimated.H_K.shape[0]
    cn = lambda *s: (rng.standard_normal(s) + 1j * rng.standard_normal(s)) / np.sqrt(2)  # noqa
    # e^H Delta w = sum_k w_k e^H Delta_k ~ CN(0, M sum_k lam_k |w_k|^2) for unit-modulus e,
    # but sampled explicitly to stay a direct check
    dK = cn(n_mc, M, L) * np.sqrt(errors.lambda_K)[None, None, :]
    dE = cn(n_mc, M, L) * np.sqrt(errors.lambda_E)[None, None, :]
    eH = sol.e.conj()
    qK = eH @ (channels_estimated.H_K @ sol.w) + np.einsum("m,nml,l->n", eH, dK, sol.w)
    qE = eH @ (channels_estimated.H_E @ sol.w) + np.einsum("m,nml,l->n", eH, dE, sol.w)
    rK = half_log2_1p(np.abs(qK) ** 2 / config.noise(K - 1))
    rE = half_log2_1p(np.abs(qE) ** 2 / config.noise(ED))
    return np.minimum(base, rK) - rE


def validate_outage(solution: ActiveSolution, channels_estimated: ChannelSet,
                    errors: CsiErrorModel, config: SystemConfig, n_mc: int,
                    rng: np.random.Generator) -> float:
    """Fraction of sampled error draws violating min_k R_k - R_E >= R_sec."""
    if n_mc < 1000:
        raise ValueError("use at least 1000 Monte Carlo samples")
    sec = secrecy_samples(solution, channels_estimated, errors, config, n_mc, rng)
    return float(np.mean(sec < solution.R_sec))
