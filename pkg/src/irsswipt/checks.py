"""Numerical property suites: bound tightness, BTI safety, majorization and
first-order agreement of the surrogates.  Used by the ``validate-lemmas``
command and by the acceptance tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rates import (LN2, bound_re_upper, bound_rk_lower, half_log2_1p, rate_e_jensen,
                    rate_reflect, tight_aux)
from .robust_active import (bti_deterministic_check, bti_slack_value, bti_terms_helper_k,
                            bti_terms_user_K, rho_bar, surrogate_rk_tilde)
from .passive import majorize_quadratic, surrogate_rE_up_hat, surrogate_rK_hat


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


def _cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _unit(rng, M):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, M))


# ---------------------------------------------------------------------------
# rate bounds

def lemma_tightness(n: int = 1000, seed: int = 0) -> CheckResult:
    """Upper/lower rate bounds dominate and are tight at the closed-form auxiliaries."""
    rng = np.random.default_rng(seed)
    worst_dom, worst_tight = -np.inf, 0.0
    for _ in range(n):
        M, L = rng.integers(1, 9), rng.integers(1, 5)
        H_K, H_E = _cn(rng, M, L), _cn(rng, M, L)
        w, e = _cn(rng, L), _unit(rng, M)
        s2K, s2E = 10 ** rng.uniform(-2, 1), 10 ** rng.uniform(-2, 1)
        RK, RE = rate_reflect(w, e, H_K, s2K), rate_reflect(w, e, H_E, s2E)
        a_E, a_K, v = 10 ** rng.uniform(-2, 1), 10 ** rng.uniform(-2, 1), complex(*_cn(rng, 1).view(float))
        worst_dom = max(worst_dom, RE - bound_re_upper(w, e, H_E, s2E, a_E),
                        bound_rk_lower(w, e, H_K, s2K, a_K, v) - RK)
        qE, qK = np.vdot(e, H_E @ w), np.vdot(e, H_K @ w)
        aE_t = 1.0 / tight_aux(qE, s2E)[0]          # a = 1/x maximizes the upper bound
        aK_t, v_t = tight_aux(qK, s2K)
        worst_tight = max(worst_tight, abs(bound_re_upper(w, e, H_E, s2E, aE_t) - RE),
                          abs(bound_rk_lower(w, e, H_K, s2K, aK_t, v_t) - RK))
    ok = worst_dom <= 1e-12 and worst_tight <= 1e-12
    return CheckResult("rate-bound dominance and tightness", ok,
                       f"max violation {worst_dom:.2e}, max gap at tight aux {worst_tight:.2e}")


# ---------------------------------------------------------------------------
# BTI safety audit

@dataclass
class BtiInstance:
    kind: str
    violation: float
    stderr: float


def _psd(rng, L):
    A = _cn(rng, L, L)
    return A @ A.conj().T / L


def _boundary_R(terms_fn, R0, coeff):
    """R_sec at which the deterministic row is tight (the row is affine in R_sec)."""
    s0 = terms_fn(R0)
    return R0 - s0 / coeff


def bti_audit(n_instances: int = 100, n_mc: int = 100_000, rho: float = 0.05, K: int = 5,
              seed: int = 0, batch: int = 20_000) -> tuple[CheckResult, list[BtiInstance]]:
    """Empirical violation of constraints that pass the deterministic BTI row at its boundary.

    Half of the instances are helper rows (ED error only), half attacked-user
    rows (both errors).  The violated event is evaluated directly from sampled
    cascaded channels, independently of the BTI scalars.
    """
    rng = np.random.default_rng(seed)
    rb = rho_bar(rho, K)
    out = []
    for i in range(n_instances):
        M, L = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        e = _unit(rng, M)
        W = _psd(rng, L)
        w = _cn(rng, L)
        HK, HE = _cn(rng, M, L), _cn(rng, M, L)
        lamK, lamE = 0.05 * rng.uniform(0.1, 1, L), 0.05 * rng.uniform(0.1, 1, L)
        s2E, s2K = 1.0, 1.0
        aE = 10 ** rng.uniform(-1, 0.5)
        if i % 2 == 0:
            Rt = 1.0
            f = lambda R: bti_slack_value(bti_terms_helper_k(W, e, HE, lamE, aE, s2E, Rt, R), rb)  # noqa
            R = _boundary_R(f, 0.0, 2 * LN2 * s2E) - 1e-9
            terms = bti_terms_helper_k(W, e, HE, lamE, aE, s2E, Rt, R)
            const = ((Rt - R) * 2 * LN2 - aE + np.log(aE) + 1) * s2E

            def violated(dK, dE):
                b = np.einsum("m,nml->nl", e.conj(), HE[None] + dE).conj()    # (H^H e)
                return aE * np.real(np.einsum("nl,lk,nk->n", b.conj(), W, b)) - const > 0
            kind = "helper"
        else:
            aK = 10 ** rng.uniform(-0.5, 0.5)
            v = complex(*_cn(rng, 1).view(float)) * 0.3
            coeff = 2 * LN2
            f = lambda R: bti_slack_value(bti_terms_user_K(W, w, e, HK, HE, lamK, lamE, aK, aE, v,  # noqa
                                                           s2K, s2E, R), rb)
            R = _boundary_R(f, 0.0, coeff) - 1e-9
            terms = bti_terms_user_K(W, w, e, HK, HE, lamK, lamE, aK, aE, v, s2K, s2E, R)
            cK, cE = aK * abs(v) ** 2, aE / s2E
            c = np.log(aE) + np.log(aK) - aE - aK - 2 * R * LN2 - s2K * aK * abs(v) ** 2 + 2

            def violated(dK, dE):
                bK = np.einsum("m,nml->nl", e.conj(), HK[None] + dK).conj()
                bE = np.einsum("m,nml->nl", e.conj(), HE[None] + dE).conj()
                quad = (cK * np.real(np.einsum("nl,lk,nk->n", bK.conj(), W, bK))
                        + cE * np.real(np.einsum("nl,lk,nk->n", bE.conj(), W, bE)))
                lin = 2 * aK * np.real(v * (bK.conj() @ w))
                return quad - lin - c > 0
            kind = "user"
        if not bti_deterministic_check(terms, rb):
            raise AssertionError("boundary instance failed its own deterministic check")
        count, done = 0, 0
        while done < n_mc:
            nb = min(batch, n_mc - done)
            dK = _cn(rng, nb, M, L) * np.sqrt(lamK)[None, None, :]
            dE = _cn(rng, nb, M, L) * np.sqrt(lamE)[None, None, :]
            count += int(np.sum(violated(dK, dE)))
            done += nb
        p = count / n_mc
        out.append(BtiInstance(kind, p, np.sqrt(max(rb * (1 - rb), 1e-300) / n_mc)))
    worst = max(inst.violation - (rb + 3 * inst.stderr) for inst in out)
    ok = worst <= 0
    return (CheckResult("BTI Monte Carlo safety", ok,
                        f"rho_bar={rb:.6f}, max violation {max(i.violation for i in out):.5f}"),
            out)


# ---------------------------------------------------------------------------
# majorization

def majorization_suite(n: int = 200, n_points: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_dom, worst_touch = -np.inf, 0.0
    for _ in range(n):
        M = int(rng.integers(1, 9))
        B = _cn(rng, M, M)
        A = B @ B.conj().T
        e0 = _unit(rng, M)
        lam = np.linalg.eigvalsh(A)[-1]
        g = majorize_quadratic(A, e0)
        c0 = np.real(np.vdot(e0, lam * e0 - A @ e0))

        def major(x):
            return lam * np.real(np.vdot(x, x)) - 2 * np.real(np.vdot(g, x)) + c0
        X = np.exp(1j * rng.uniform(0, 2 * np.pi, (n_points, M)))
        vals = lam * M - 2 * np.real(X @ g.conj()) + c0
        quad = np.real(np.einsum("nm,mk,nk->n", X.conj(), A, X))
        worst_dom = max(worst_dom, float(np.max(quad - vals)))
        worst_touch = max(worst_touch, abs(major(e0) - np.real(np.vdot(e0, A @ e0))))
    scale = 1e-9
    ok = worst_dom <= scale and worst_touch <= scale
    return CheckResult("majorizer dominance and touch", ok,
                       f"max violation {worst_dom:.2e}, touch error {worst_touch:.2e}")


# ---------------------------------------------------------------------------
# first-order agreement of the surrogates

def _fd_grad(f, x, h):
    """Central differences with respect to the real and imaginary parts of x."""
    x = np.asarray(x, dtype=complex)
    g = np.zeros(2 * len(x))
    for i in range(len(x)):
        for j, d in enumerate((1.0, 1j)):
            xp, xm = x.copy(), x.copy()
            xp[i] += h * d
            xm[i] -= h * d
            g[2 * i + j] = (f(xp) - f(xm)) / (2 * h)
    return g


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def gradient_suite(n: int = 100, seed: int = 0, h: float = 1e-6, tol: float = 1e-4) -> CheckResult:
    """Surrogates match the gradients of the functions they replace at the expansion point."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        M, L, N = int(rng.integers(2, 9)), int(rng.integers(1, 4)), int(rng.integers(2, 5))
        H_irs = _cn(rng, M, L)
        h_K = _cn(rng, M)
        H_K = np.conj(h_K)[:, None] * H_irs
        B = _cn(rng, M, M)
        R = B @ B.conj().T / M
        w0, e0 = _cn(rng, L), _unit(rng, M)
        s2 = 10 ** rng.uniform(-0.5, 0.5)
        # user K: w and e
        gK_w = _fd_grad(lambda w: surrogate_rK_hat(w, e0, H_K, s2, w0, e0), w0, h)
        tK_w = _fd_grad(lambda w: rate_reflect(w, e0, H_K, s2), w0, h)
        gK_e = _fd_grad(lambda e: surrogate_rK_hat(w0, e, H_K, s2, w0, e0), e0, h)
        tK_e = _fd_grad(lambda e: rate_reflect(w0, e, H_K, s2), e0, h)
        # ED Jensen rate
        gE_w = _fd_grad(lambda w: surrogate_rE_up_hat(w, e0, H_irs, R, s2, w0, e0), w0, h)
        tE_w = _fd_grad(lambda w: rate_e_jensen(w, e0, H_irs, R, s2), w0, h)
        gE_e = _fd_grad(lambda e: surrogate_rE_up_hat(w0, e, H_irs, R, s2, w0, e0), e0, h)
        tE_e = _fd_grad(lambda e: rate_e_jensen(w0, e, H_irs, R, s2), e0, h)
        # helper rate in (z, t)
        g = _cn(rng, N)
        Q = np.linalg.qr(_cn(rng, N, N))[0][:, : N - 1]
        z0 = _cn(rng, N - 1)
        t0 = rng.uniform(0.2, 0.8)
        gz = _fd_grad(lambda z: surrogate_rk_tilde(z, t0, g, Q, s2, z0, t0), z0, h)
        tz = _fd_grad(lambda z: half_log2_1p(t0 * abs(np.vdot(g, Q @ z)) ** 2 / s2), z0, h)
        gt = (surrogate_rk_tilde(z0, t0 + h, g, Q, s2, z0, t0)
              - surrogate_rk_tilde(z0, t0 - h, g, Q, s2, z0, t0)) / (2 * h)
        tt = (half_log2_1p((t0 + h) * abs(np.vdot(g, Q @ z0)) ** 2 / s2)
              - half_log2_1p((t0 - h) * abs(np.vdot(g, Q @ z0)) ** 2 / s2)) / (2 * h)
        worst = max(worst, _rel(gK_w, tK_w), _rel(gK_e, tK_e), _rel(gE_w, tE_w),
                    _rel(gE_e, tE_e), _rel(gz, tz), _rel(np.array([gt]), np.array([tt])))
    return CheckResult("surrogate first-order agreement", worst <= tol,
                       f"max relative gradient error {worst:.2e}")


def validate_lemmas(seed: int = 0, quick: bool = True) -> list[CheckResult]:
    """Run every suite; ``quick`` shrinks the Monte Carlo audit."""
    n_inst, n_mc = (20, 20_000) if quick else (100, 100_000)
    return [lemma_tightness(1000, seed),
            bti_audit(n_inst, n_mc, seed=seed)[0],
            majorization_suite(200, 1000, seed),
            gradient_suite(100 if not quick else 30, seed)]
