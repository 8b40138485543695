from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from irsswipt.channel import ED, CsiErrorModel
from irsswipt.harness import _sample_estimate
from irsswipt.rates import bound_re_upper, bound_rk_lower, rate_helper, rate_reflect
from irsswipt.robust_active import (ActiveScene, AoStop, PccpParams, _pccp,
                                    ao_active, bti_deterministic_check, bti_slack_value,
                                    bti_terms_helper_k, bti_terms_user_K, BtiTerms, rho_bar,
                                    solve_subproblem_e_pccp, solve_subproblem_zwWt,
                                    surrogate_rk_tilde, update_aux_and_rsec, validate_outage,
                                    xi_harvest_bound)

import oracles
from conftest import cn, scene, unit


def _psd(rng, n, rank=None):
    B = cn(rng, n, rank or n)
    return B @ B.conj().T


# ---------------------------------------------------------------- outage split

def test_rho_bar_examples():
    assert rho_bar(0.05, 1) == pytest.approx(0.05, abs=1e-15)
    assert rho_bar(0.0, 4) == 0.0
    assert rho_bar(0.05, 5) == pytest.approx(0.010206, abs=1e-6)
    assert (1 - rho_bar(0.05, 5)) ** 5 == pytest.approx(0.95, rel=1e-14)


# ---------------------------------------------------------------- helper surrogates

def _helper_point(rng, N=4):
    g = cn(rng, N)
    Q = np.linalg.qr(cn(rng, N, N))[0][:, : N - 1]
    return g, Q


def test_surrogate_touches_and_zero_expansion(rng):
    g, Q = _helper_point(rng)
    z, t = cn(rng, 3), 0.4
    assert surrogate_rk_tilde(z, t, g, Q, 0.3, z, t) == pytest.approx(rate_helper(z, t, g, Q, 0.3),
                                                                       abs=1e-12)
    assert surrogate_rk_tilde(z, t, g, Q, 0.3, np.zeros(3), 0.7) == 0.0


@settings(max_examples=1000)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(-2, 2))
def test_surrogate_dominated_by_rate(seed, t, t_prev, log_s2):
    rng = np.random.default_rng(seed)
    g, Q = _helper_point(rng)
    z, z_prev = cn(rng, 3), cn(rng, 3)
    s2 = 10.0 ** log_s2
    assert surrogate_rk_tilde(z, t, g, Q, s2, z_prev, t_prev) <= rate_helper(z, t, g, Q, s2) + 1e-12


@settings(max_examples=300)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
def test_xi_bound_below_harvest_and_tight(seed, t, t_prev):
    rng = np.random.default_rng(seed)
    g, Q = _helper_point(rng)
    z, z_prev = cn(rng, 3), cn(rng, 3)
    true = (1 - t) * abs(np.vdot(g, Q @ z)) ** 2
    assert xi_harvest_bound(z, t, g, Q, z_prev, t_prev) <= true + 1e-12 * max(1.0, true)
    at = (1 - t) * abs(np.vdot(g, Q @ z)) ** 2
    assert xi_harvest_bound(z, t, g, Q, z, t) == pytest.approx(at, rel=1e-12, abs=1e-14)


# ---------------------------------------------------------------- BTI algebra

def _bti_instance(seed):
    rng = np.random.default_rng(seed)
    M, L = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    w = cn(rng, L)
    W = np.outer(w, w.conj()) if rng.uniform() < 0.5 else _psd(rng, L)
    return dict(rng=rng, M=M, L=L, w=w, W=W, e=unit(rng, M), HK=cn(rng, M, L), HE=cn(rng, M, L),
                lamK=rng.uniform(0, 1, L), lamE=rng.uniform(0, 1, L), aK=rng.uniform(0.2, 3),
                aE=rng.uniform(0.2, 1), v=complex(*rng.standard_normal(2)),
                s2K=rng.uniform(0.5, 2), s2E=rng.uniform(0.5, 2), Rt=rng.uniform(0, 2),
                R=rng.uniform(0, 1))


@settings(max_examples=100)
@given(st.integers(0, 2 ** 32 - 1))
def test_helper_terms_match_kronecker_oracle(seed):
    p = _bti_instance(seed)
    T = bti_terms_helper_k(p["W"], p["e"], p["HE"], p["lamE"], p["aE"], p["s2E"], p["Rt"], p["R"])
    U, u = oracles.helper_quadratic(p["W"], p["e"], p["HE"], p["lamE"], p["aE"])
    ref = oracles.terms_from(U, u)
    got = (T.trace_U, T.frob_U, T.norm_u, T.lambda_max_U)
    assert np.allclose(got, ref, rtol=1e-10, atol=1e-10)
    # quadratic identity for the constraint at a sampled true channel
    i = cn(p["rng"], U.shape[0])
    D = (oracles.sqrt_cov(p["lamE"], p["M"]) @ i).reshape(p["M"], p["L"], order="F")
    lhs = oracles.helper_constraint(p["W"], p["e"], p["HE"] + D, p["aE"], p["s2E"], p["Rt"], p["R"])
    rhs = np.real(np.vdot(i, U @ i)) + 2 * np.real(np.vdot(u, i)) + T.u_const
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@settings(max_examples=100)
@given(st.integers(0, 2 ** 32 - 1))
def test_user_terms_match_block_oracle(seed):
    p = _bti_instance(seed)
    args = (p["W"], p["w"], p["e"], p["HK"], p["HE"], p["lamK"], p["lamE"], p["aK"], p["aE"], p["v"],
            p["s2K"], p["s2E"], p["R"])
    T = bti_terms_user_K(*args)
    U, u = oracles.user_quadratic(p["W"], p["w"], p["e"], p["HK"], p["HE"], p["lamK"], p["lamE"],
                                  p["aK"], p["aE"], p["v"], p["s2E"])
    ref = oracles.terms_from(U, u)
    got = (T.trace_U, T.frob_U, T.norm_u, T.lambda_max_U)
    assert np.allclose(got, ref, rtol=1e-10, atol=1e-10)
    M, L = p["M"], p["L"]
    i = cn(p["rng"], U.shape[0])
    n = M * L
    DK = (oracles.sqrt_cov(p["lamK"], M) @ i[:n]).reshape(M, L, order="F")
    DE = (oracles.sqrt_cov(p["lamE"], M) @ i[n:]).reshape(M, L, order="F")
    lhs = oracles.user_constraint(p["W"], p["w"], p["e"], p["HK"] + DK, p["HE"] + DE, p["aK"],
                                  p["aE"], p["v"], p["s2K"], p["s2E"], p["R"])
    rhs = np.real(np.vdot(i, U @ i)) + 2 * np.real(np.vdot(u, i)) + T.u_const
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_terms_trivial_cases(rng):
    M, L = 3, 2
    e, H = unit(rng, M), cn(rng, M, L)
    T = bti_terms_helper_k(np.zeros((L, L)), e, H, np.ones(L), 0.5, 1.0, 1.0, 0.2)
    assert (T.trace_U, T.frob_U, T.norm_u, T.lambda_max_U) == (0.0, 0.0, 0.0, 0.0)
    T = bti_terms_helper_k(np.eye(L), e, H, np.ones(L), 0.5, 1.0, 1.0, 0.2)
    assert T.trace_U == pytest.approx(0.5 * M * L)
    # v = 0: the user-K block vanishes and the E block scaled by 1/sigma_E^2 remains
    W = _psd(rng, L)
    w, lam = cn(rng, L), rng.uniform(0, 1, L)
    s2E = 0.7
    U = bti_terms_user_K(W, w, e, cn(rng, M, L), H, lam, lam, 1.3, 0.5, 0.0, 1.0, s2E, 0.0)
    h = bti_terms_helper_k(W, e, H, lam, 0.5 / s2E, 1.0, 0.0, 0.0)
    assert np.allclose([U.trace_U, U.frob_U, U.norm_u, U.lambda_max_U],
                       [h.trace_U, h.frob_U, h.norm_u, h.lambda_max_U], rtol=1e-12)


def test_lambda_max_rank_one_matches_quadratic_form(rng):
    M, L = 3, 3
    w, lam = cn(rng, L), rng.uniform(0, 1, L)
    T = bti_terms_helper_k(np.outer(w, w.conj()), unit(rng, M), cn(rng, M, L), lam, 0.8, 1.0, 0.0, 0.0)
    assert T.lambda_max_U == pytest.approx(0.8 * M * np.sum(lam * abs(w) ** 2), rel=1e-12)


def test_bti_check_examples():
    assert bti_deterministic_check(BtiTerms(0, 0, 0, 0, -1.0), 0.05)
    rb = 0.05
    boundary = -(1 + np.sqrt(2 * np.log(20)) + np.log(20))
    assert boundary == pytest.approx(-6.4434, abs=1e-4)
    assert bti_deterministic_check(BtiTerms(1, 1, 0, 1, boundary - 1e-9), rb)
    assert not bti_deterministic_check(BtiTerms(1, 1, 0, 1, boundary + 1e-9), rb)
    assert bti_slack_value(BtiTerms(1, 1, 0, 1, boundary), rb) == pytest.approx(0.0, abs=1e-12)


def test_bti_boundary_is_safe_by_monte_carlo():
    # scalar |x|^2 with x ~ CN(0,1) is Exp(1): Pr{|x|^2 <= 6.4434} = 1 - e^{-6.4434}
    rng = np.random.default_rng(0)
    n = 100_000
    x = cn(rng, n)
    boundary = -(1 + np.sqrt(2 * np.log(20)) + np.log(20))
    p_ok = np.mean(np.abs(x) ** 2 + boundary <= 0)
    assert 1 - np.exp(boundary) == pytest.approx(0.9984, abs=1e-4)
    assert abs(p_ok - (1 - np.exp(boundary))) <= 4 * np.sqrt(0.0016 / n)
    assert p_ok >= 0.95


# ---------------------------------------------------------------- designs

def _instance(seed, M=4, delta=0.05, **kw):
    kw.setdefault("N", 4)
    kw.setdefault("K", 3)
    cfg, _, ch, rng = scene(seed, Mx=M, My=1, delta_K=delta, delta_E=delta, **kw)
    errs, est = _sample_estimate(ch, cfg, rng)
    return cfg, ch, errs, est


@pytest.fixture(scope="module")
def ao_runs():
    out = []
    for seed in range(4):
        cfg, _, errs, est = _instance(seed)
        out.append((cfg, errs, est, ao_active(est, errs, cfg, rng=np.random.default_rng(seed))))
    return out


def test_ao_trace_nondecreasing_and_feasible(ao_runs):
    for _, _, _, sol in ao_runs:
        assert np.all(np.diff(sol.trace) >= -1e-5)
        assert 1 <= sol.iterations <= AoStop().max_outer
        assert sol.feasible and sol.R_sec > 0


def test_ao_solution_invariants(ao_runs):
    for cfg, errs, est, sol in ao_runs:
        sc = ActiveScene(est, errs, cfg)
        n = sc.normalize(sol)
        assert np.real(np.vdot(sol.z, sol.z)) <= cfg.P_max * (1 + 1e-6)
        assert np.all((sol.t >= 0) & (sol.t <= 1))
        assert np.all(np.abs(np.abs(sol.e) - 1) <= 1e-6)
        eps = 1e-4 * max(1.0, np.real(np.trace(n.W)))
        lam = np.linalg.eigvalsh(n.W)
        assert np.real(np.trace(n.W)) - lam[-1] <= eps
        assert abs(np.real(np.vdot(n.w, n.w)) - np.real(np.trace(n.W))) <= eps
        gap = np.linalg.norm(np.outer(n.w, n.w.conj()) - n.W)
        assert gap <= np.sqrt(2 * eps * np.real(np.trace(n.W))) + eps


def test_ao_outage_within_budget(ao_runs):
    n = 10_000
    for cfg, errs, est, sol in ao_runs:
        out = validate_outage(sol, est, errs, cfg, n, np.random.default_rng(7))
        assert out <= 0.05 + 3 * np.sqrt(0.05 * 0.95 / n)


def test_perfect_csi_upper_bounds_robust():
    cfg0, ch, errs0, est0 = _instance(11, delta=0.0)
    cfg1, _, errs1, est1 = _instance(11, delta=0.1)
    assert np.allclose(est0.H_K, ch.H_K)
    s0 = ao_active(est0, errs0, cfg0, rng=np.random.default_rng(0))
    s1 = ao_active(ch, errs1, cfg1, rng=np.random.default_rng(0))
    assert s0.R_sec >= s1.R_sec - 1e-6


def test_update_aux_tight_and_guarded():
    cfg, _, errs, est = _instance(3)
    sc = ActiveScene(est, errs, cfg)
    s0 = sc.physical(sc.initial(np.random.default_rng(0)))
    s0.a_K, s0.a_E, s0.v = 2.0, 0.3, 0.0
    s0.R_sec = -1.0
    s = update_aux_and_rsec(s0, est, errs, cfg)
    sK, sE = cfg.noise(cfg.K - 1), cfg.noise(ED)
    assert bound_re_upper(s.w, s.e, est.H_E, sE, s.a_E) == pytest.approx(
        rate_reflect(s.w, s.e, est.H_E, sE), abs=1e-12)
    assert bound_rk_lower(s.w, s.e, est.H_K, sK, s.a_K, s.v) == pytest.approx(
        rate_reflect(s.w, s.e, est.H_K, sK), abs=1e-12)
    assert s.R_sec > s0.R_sec
    # an incoming state already claiming more than the closed form is left untouched
    hi = replace(s0, R_sec=10.0)
    kept = update_aux_and_rsec(hi, est, errs, cfg)
    assert kept.R_sec == 10.0 and (kept.a_K, kept.a_E, kept.v) == (2.0, 0.3, 0.0)


def test_update_aux_zero_leakage_gives_unit_a_E():
    cfg, _, errs, est = _instance(2)
    sc = ActiveScene(est, errs, cfg)
    s0 = sc.physical(sc.initial(np.random.default_rng(0)))
    s0.w = np.zeros_like(s0.w)
    s0.R_sec = -np.inf
    assert update_aux_and_rsec(s0, est, errs, cfg).a_E == 1.0


def test_zwWt_fixed_point():
    cfg, _, errs, est = _instance(5)
    sc = ActiveScene(est, errs, cfg)
    s0 = sc.physical(sc.initial(np.random.default_rng(0)))
    s1 = solve_subproblem_zwWt(s0, est, errs, cfg)
    assert s1.status == "Optimal"
    assert s1.R_sec >= s0.R_sec - 1e-7
    # re-solving at the new expansion point with tight slacks moves R_sec only slightly
    s1 = update_aux_and_rsec(s1, est, errs, cfg)
    s2 = solve_subproblem_zwWt(s1, est, errs, cfg)
    s3 = solve_subproblem_zwWt(update_aux_and_rsec(s2, est, errs, cfg), est, errs, cfg)
    assert abs(s3.R_sec - s2.R_sec) <= 1e-5


def _grid_rsec_k2(cfg, ch, n=61):
    """Exhaustive oracle for K=2, N=2, M=2 with perfect CSI: grid over (t, |w|, e phase)."""
    sK, sE, s1 = cfg.noise(1), cfg.noise(ED), cfg.noise(0)
    c2 = cfg.P_max * abs(np.vdot(ch.g[0], ch.Q[:, 0])) ** 2
    best = 0.0
    for t in np.linspace(0, 1, n)[1:-1]:
        r1 = 0.5 * np.log2(1 + t * c2 / s1)
        for frac in np.linspace(0, 1, n)[1:]:
            amp = np.sqrt(frac * (1 - t) * c2)
            for ph in np.linspace(0, 2 * np.pi, 2 * n, endpoint=False):
                e = np.array([1.0, np.exp(1j * ph)])
                w = np.array([amp])
                rk = rate_reflect(w, e, ch.H_K, sK)
                re = rate_reflect(w, e, ch.H_E, sE)
                best = max(best, min(r1, rk) - re)
    return best


def test_k2_design_close_to_grid_oracle():
    cfg, ch, _, _ = _instance(4, M=2, delta=0.0, K=2, N=2)
    errs = CsiErrorModel(np.zeros(1), np.zeros(1), M=2)
    sol = ao_active(ch, errs, cfg, rng=np.random.default_rng(0))
    oracle = _grid_rsec_k2(cfg, ch)
    assert abs(sol.R_sec - oracle) <= 5e-2
    # the grid is not exhaustive in continuous variables; allow its own resolution
    assert sol.R_sec <= 1.05 * oracle + 1e-12


# ---------------------------------------------------------------- penalty CCP

def test_pccp_single_element_matches_phase_grid():
    cfg, _, errs, est = _instance(6, M=1)
    sc = ActiveScene(est, errs, cfg)
    s = sc.initial(np.random.default_rng(1))
    out, converged, last_b, _ = _pccp(sc, s, PccpParams(), np.random.default_rng(2))
    assert converged and last_b <= PccpParams().chi
    f = lambda th: -sc.rsec_closed_form(replace(out, e=np.array([np.exp(1j * th)])))  # noqa: E731
    grid = np.linspace(-np.pi, np.pi, 360, endpoint=False)
    th0 = grid[np.argmin([f(th) for th in grid])]
    th_star = minimize_scalar(f, bounds=(th0 - 0.02, th0 + 0.02), method="bounded",
                              options={"xatol": 1e-8}).x
    diff = np.angle(out.e[0] * np.exp(-1j * th_star))
    assert abs(diff) <= 1e-2
    assert abs(out.e[0]) == pytest.approx(1.0, abs=1e-12)


def test_pccp_converges_with_small_relaxation():
    chi = PccpParams().chi
    for seed in range(8):
        cfg, _, errs, est = _instance(20 + seed)
        sc = ActiveScene(est, errs, cfg)
        s = sc.initial(np.random.default_rng(seed))
        _, converged, last_b, _ = _pccp(sc, s, PccpParams(), np.random.default_rng(seed))
        assert converged and last_b <= chi


def test_pccp_public_wrapper_returns_unit_modulus():
    cfg, _, errs, est = _instance(8)
    sc = ActiveScene(est, errs, cfg)
    s = sc.physical(sc.initial(np.random.default_rng(0)))
    e, ok = solve_subproblem_e_pccp(s, est, errs, cfg)
    assert ok and np.all(np.abs(np.abs(e) - 1) <= 1e-6)


# ---------------------------------------------------------------- Monte Carlo audit

def test_validate_outage_examples():
    cfg, _, errs, est = _instance(1)
    sc = ActiveScene(est, errs, cfg)
    s = sc.physical(sc.initial(np.random.default_rng(0)))
    zero = replace(s, w=np.zeros_like(s.w), R_sec=0.0)
    assert validate_outage(zero, est, errs, cfg, 1000, np.random.default_rng(0)) == 0.0
    with pytest.raises(ValueError):
        validate_outage(zero, est, errs, cfg, 999, np.random.default_rng(0))
    no_err = CsiErrorModel(np.zeros(cfg.K - 1), np.zeros(cfg.K - 1), M=cfg.M)
    for R in (0.0, 1e-9, 1.0):
        out = validate_outage(replace(s, R_sec=R), est, no_err, cfg, 1000, np.random.default_rng(0))
        assert out in (0.0, 1.0)
