import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irsswipt.channel import ED, upa_shape
from irsswipt.harness import _sample_estimate
from irsswipt.passive import (PRICE_CAP, DeterministicEve, JensenEve, PassiveSolution, PassiveStop,
                              QuadraticPair, SurrogateDomainError, _smallest_price, ao_passive,
                              build_quadratics, e_objective, majorize_quadratic,
                              nonrobust_baseline, passive_objective, phase_align,
                              solve_P1, solve_P2, solve_e_socp_reference,
                              solve_subproblem_zwt_passive, surrogate_rE_up_hat,
                              surrogate_rK_hat, threshold, update_e_passive)
from irsswipt.rates import ergodic_eve_correlation, helper_rates, rate_e_jensen, rate_reflect
from irsswipt.robust_active import secrecy_samples

from conftest import cn, scene, unit


def _psd(rng, n, rank=None):
    B = cn(rng, n, rank or n)
    return B @ B.conj().T


def _grid(M, n):
    ph = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.exp(1j * np.array(list(itertools.product(ph, repeat=M))))


# ---------------------------------------------------------------- surrogates

@settings(max_examples=300)
@given(st.integers(1, 6), st.integers(1, 3), st.floats(-2, 1), st.integers(0, 2 ** 32 - 1))
def test_rK_surrogate_touch_and_dominance(M, L, log_s2, seed):
    rng = np.random.default_rng(seed)
    H, s2 = cn(rng, M, L), 10.0 ** log_s2
    w0, e0 = cn(rng, L), unit(rng, M)
    assert surrogate_rK_hat(w0, e0, H, s2, w0, e0) == pytest.approx(rate_reflect(w0, e0, H, s2),
                                                                     abs=1e-12)
    w, e = w0 + 0.3 * cn(rng, L), unit(rng, M)
    try:
        val = surrogate_rK_hat(w, e, H, s2, w0, e0)
    except SurrogateDomainError:
        return
    assert val <= rate_reflect(w, e, H, s2) + 1e-12


def test_rK_surrogate_zero_expansion_and_domain(rng):
    H, e = cn(rng, 3, 2), unit(rng, 3)
    assert surrogate_rK_hat(cn(rng, 2), e, H, 1.0, np.zeros(2), e) == 0.0
    w0 = cn(rng, 2)
    with pytest.raises(SurrogateDomainError):
        surrogate_rK_hat(-10 * w0, e, H, 1e-3, w0, e)


@settings(max_examples=300)
@given(st.integers(1, 6), st.integers(1, 3), st.floats(-2, 1), st.integers(0, 2 ** 32 - 1))
def test_rE_surrogate_touch_and_dominance(M, L, log_s2, seed):
    rng = np.random.default_rng(seed)
    H, R, s2 = cn(rng, M, L), _psd(rng, M), 10.0 ** log_s2
    w0, e0 = cn(rng, L), unit(rng, M)
    assert surrogate_rE_up_hat(w0, e0, H, R, s2, w0, e0) == pytest.approx(
        rate_e_jensen(w0, e0, H, R, s2), abs=1e-12)
    w, e = cn(rng, L), unit(rng, M)
    assert surrogate_rE_up_hat(w, e, H, R, s2, w0, e0) >= rate_e_jensen(w, e, H, R, s2) - 1e-12


def test_rE_surrogate_zero_expansion(rng):
    H, R = cn(rng, 3, 2), _psd(rng, 3)
    w, e = cn(rng, 2), unit(rng, 3)
    q = JensenEve(H, R).gain(w, e)
    val = surrogate_rE_up_hat(w, e, H, R, 0.5, np.zeros(2), e)
    assert val == pytest.approx(q / (2 * 0.5 * np.log(2)), rel=1e-12)


def test_eve_models_consistent(rng):
    M, L = 4, 3
    H, R, w, e = cn(rng, M, L), _psd(rng, M), cn(rng, L), unit(rng, M)
    for eve in (JensenEve(H, R), DeterministicEve(H)):
        g = eve.gain(w, e)
        assert np.real(np.vdot(w, eve.B(e) @ w)) == pytest.approx(g, rel=1e-12)
        assert np.real(np.vdot(e, eve.A(w) @ e)) == pytest.approx(g, rel=1e-12)


# ---------------------------------------------------------------- quadratics

def _quad_scene(seed, M=None, **kw):
    if M is not None:
        kw["Mx"], kw["My"] = upa_shape(M)
    cfg, topo, ch, rng = scene(seed, **kw)
    R = ergodic_eve_correlation(cfg, topo).R_E_mat
    return cfg, topo, ch, R, rng


def test_build_quadratics_identities():
    cfg, _, ch, R, rng = _quad_scene(0)
    s2E, s2K = cfg.noise(ED), cfg.noise(cfg.K - 1)
    w = cn(rng, cfg.K - 1) * 1e-3
    quad = build_quadratics(w, ch, R, s2E, s2K, np.array([0.3, 0.2, 0.5, 0.4]))
    assert quad.R_bar == 0.2
    for A in (quad.A_E, quad.A_K):
        assert np.allclose(A, A.conj().T, atol=1e-12 * np.abs(A).max())
        assert np.linalg.eigvalsh(A).min() >= -1e-10 * np.abs(A).max()
    sv = np.linalg.svd(quad.A_K, compute_uv=False)
    assert sv[1] <= 1e-10 * sv[0]
    for _ in range(20):
        e = unit(rng, cfg.M)
        D = np.diag(e)
        ref = np.real(w.conj() @ ch.H_irs.conj().T @ D @ R @ D.conj() @ ch.H_irs @ w) / s2E
        assert np.real(np.vdot(e, quad.A_E @ e)) == pytest.approx(ref, rel=1e-10)
    zero = build_quadratics(np.zeros(cfg.K - 1), ch, R, s2E, s2K, np.array([1.0]))
    assert not zero.A_E.any() and not zero.A_K.any()


# ---------------------------------------------------------------- majorization and phase alignment

def test_majorizer_scaled_identity_is_degenerate(rng):
    e = unit(rng, 4)
    assert not majorize_quadratic(2.5 * np.eye(4), e).any()


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_majorizer_dominates_and_touches(M, seed):
    rng = np.random.default_rng(seed)
    A = _psd(rng, M) - _psd(rng, M)
    e0 = unit(rng, M)
    lam = np.linalg.eigvalsh(A)[-1]
    d = majorize_quadratic(A, e0)

    def maj(x):
        return (lam * np.real(np.vdot(x, x)) - 2 * np.real(np.vdot(d, x))
                + np.real(np.vdot(e0, d)))
    quad = lambda x: np.real(np.vdot(x, A @ x))  # noqa: E731
    assert maj(e0) == pytest.approx(quad(e0), abs=1e-10 * max(1.0, abs(lam) * M))
    for _ in range(1000 // 50):
        X = np.exp(1j * rng.uniform(0, 2 * np.pi, (50, M)))
        for x in X:
            assert maj(x) >= quad(x) - 1e-10 * max(1.0, abs(lam) * M)


@settings(max_examples=50)
@given(st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_phase_alignment_maximizes_linear_form(M, seed):
    rng = np.random.default_rng(seed)
    c = cn(rng, M)
    e = phase_align(c, unit(rng, M))
    best = np.max(np.real(_grid(M, 36) @ c.conj()))
    assert np.real(np.vdot(c, e)) >= best - 1e-12
    assert np.all(np.abs(np.abs(e) - 1) <= 1e-15)


def test_phase_alignment_zero_entries_keep_phase(rng):
    e0 = unit(rng, 3)
    e = phase_align(np.array([0.0, 1j, 0.0]), e0)
    assert np.allclose(e[[0, 2]], e0[[0, 2]], rtol=0, atol=1e-15) and e[1] == pytest.approx(1j)


# ---------------------------------------------------------------- price bisection

def test_smallest_price_examples():
    direction = lambda rho: rho  # noqa: E731
    assert _smallest_price(direction, lambda r: r >= 0) == 0.0
    rho = _smallest_price(direction, lambda r: r >= 3.3)
    assert 3.3 <= rho <= 3.3 + 1e-6
    assert _smallest_price(direction, lambda r: r >= 2 * PRICE_CAP) is None


def test_threshold():
    assert threshold(0.0) == 0.0
    assert threshold(0.5) == pytest.approx(1.0)


def _diag_quad(rng, M=3):
    return QuadraticPair(A_E=np.diag(rng.uniform(0.1, 1.0, M)), A_K=np.zeros((M, M)), R_bar=0.0)


def test_P1_inactive_constraint():
    rng = np.random.default_rng(0)
    quad = _diag_quad(rng)
    e0 = unit(rng, 3)
    lam = np.max(np.diag(quad.A_E))
    assert np.allclose(solve_P1(e0, quad), phase_align((lam * np.eye(3) - quad.A_E) @ e0, e0))


def test_P1_diagonal_leakage_nonincreasing_vs_grid():
    rng = np.random.default_rng(1)
    quad = _diag_quad(rng)
    e0 = unit(rng, 3)
    e1 = solve_P1(e0, quad)
    leak = lambda e: np.real(np.vdot(e, quad.A_E @ e))  # noqa: E731
    assert leak(e1) <= leak(e0) + 1e-12
    # with a diagonal A_E the leakage is constant on unit-modulus vectors:
    # every grid point ties, so the update cannot be beaten
    vals = np.real(np.einsum("nm,mk,nk->n", _grid(3, 36).conj(), quad.A_E, _grid(3, 36)))
    assert leak(e1) <= vals.min() + 1e-12
    assert np.allclose(np.abs(e1), 1.0, atol=0)


def test_P1_infeasible_when_bottleneck_unreachable():
    rng = np.random.default_rng(2)
    a = cn(rng, 3) * 1e-3
    quad = QuadraticPair(A_E=_psd(rng, 3), A_K=np.outer(a, a.conj()), R_bar=5.0)
    assert solve_P1(unit(rng, 3), quad) is None


def test_P1_price_is_smallest_and_slack_complementary():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        M = 4
        a = cn(rng, M)
        A_K = np.outer(a, a.conj())
        e0 = unit(rng, M)
        d_K = np.real(np.vdot(e0, A_K @ e0))
        quad = QuadraticPair(A_E=_psd(rng, M), A_K=A_K, R_bar=0.5 * np.log2(1 + 1.2 * d_K))
        base = majorize_quadratic(quad.A_E, e0)
        k_dir = A_K @ e0
        need = threshold(quad.R_bar) + d_K
        slack = lambda e: 2 * np.real(np.vdot(k_dir, e)) - need  # noqa: E731
        e1 = solve_P1(e0, quad)
        if e1 is None:
            continue
        assert slack(e1) >= -1e-8 * max(1.0, need)
        # the output lies on the price path between the last infeasible and first
        # feasible point of a fine scan, so the price is the smallest feasible one
        grid = np.linspace(0, 50, 5001)
        feas = np.array([slack(phase_align(base + r * k_dir, e0)) >= -1e-12 * max(1.0, need)
                         for r in grid])
        i = int(np.argmax(feas))
        if i == 0:
            assert np.allclose(e1, phase_align(base, e0))
            continue
        fine = np.linspace(grid[i - 1], grid[i], 10001)
        path = [phase_align(base + r * k_dir, e0) for r in fine]
        j = int(np.argmin([np.linalg.norm(p - e1) for p in path]))
        assert np.linalg.norm(path[j] - e1) <= 1e-5
        # complementary slackness: the price only binds an active constraint
        assert fine[j] * slack(e1) <= 1e-5 * max(1.0, need)


def test_P2_examples():
    rng = np.random.default_rng(3)
    M = 3
    e0 = np.ones(M, dtype=complex)
    # A_K = 0 and A_E diagonal: c has positive real entries at e0 = 1 -> all ones
    quad = QuadraticPair(A_E=np.diag([0.1, 0.2, 0.3]), A_K=np.zeros((M, M)), R_bar=1.0)
    assert np.allclose(solve_P2(e0, quad), np.ones(M))
    # slack constraint: e2 = phases of c
    a = cn(rng, M) * 0.01
    quad = QuadraticPair(A_E=_psd(rng, M), A_K=np.outer(a, a.conj()), R_bar=10.0)
    e0 = unit(rng, M)
    d_K = np.real(np.vdot(e0, quad.A_K @ e0))
    d_E = np.real(np.vdot(e0, quad.A_E @ e0))
    c = ((1 + d_K) / (1 + d_E) ** 2 * majorize_quadratic(quad.A_E, e0) + quad.A_K @ e0 / (1 + d_E))
    e2 = solve_P2(e0, quad)
    assert np.allclose(e2, phase_align(c, e0))
    G = _grid(M, 36)
    assert 2 * np.real(np.vdot(c, e2)) >= 2 * np.max(np.real(G @ c.conj())) - 1e-6


# ---------------------------------------------------------------- e update

def test_update_e_keeps_incumbent_when_candidates_worse(rng):
    quad = QuadraticPair(A_E=_psd(rng, 3), A_K=np.zeros((3, 3)), R_bar=0.0)
    e0 = unit(rng, 3)
    assert update_e_passive(e0, quad, rates_fn=lambda e: 1.0 if e is e0 else 0.0) is e0


def test_update_e_monotone_on_desk_instances():
    for seed in range(50):
        cfg, _, ch, R, rng = _quad_scene(seed)
        sig = np.array([cfg.noise(k) for k in range(cfg.K - 1)])
        z, t = cn(rng, cfg.N - 1), rng.uniform(0.1, 0.9, cfg.K - 1)
        z *= np.sqrt(cfg.P_max) / np.linalg.norm(z)
        gq = np.conj(ch.g_helpers) @ ch.Q
        w = np.sqrt((1 - t) * np.abs(gq @ z) ** 2) * np.exp(1j * rng.uniform(0, 2 * np.pi, cfg.K - 1))
        quad = build_quadratics(w, ch, R, cfg.noise(ED), cfg.noise(cfg.K - 1),
                                helper_rates(z, t, ch.g_helpers, ch.Q, sig))
        e0 = unit(rng, cfg.M)
        e1 = update_e_passive(e0, quad)
        assert e_objective(e1, quad) >= e_objective(e0, quad)
        assert np.all(np.abs(np.abs(e1) - 1) <= 1e-15)


# ---------------------------------------------------------------- (z, w, t) subproblem

def test_zwt_fixed_point_and_ascent():
    cfg, _, ch, R, rng = _quad_scene(4, M=16)
    eve = JensenEve(ch.H_irs, R)
    sol = ao_passive(ch, R, cfg, rng=np.random.default_rng(0))
    f = lambda s: passive_objective(s.z, s.w, s.e, s.t, ch, eve, cfg)  # noqa: E731
    z, w, t, ok = solve_subproblem_zwt_passive(sol, ch, R, cfg)
    assert ok
    again = PassiveSolution(z=z, w=w, e=sol.e, t=t)
    assert abs(f(again) - f(sol)) <= 1e-5
    start = PassiveSolution(*[x for x in (sol.z, sol.w, sol.e, sol.t)])
    start.w = start.w * 0.5
    z, w, t, ok = solve_subproblem_zwt_passive(start, ch, R, cfg)
    assert ok and f(PassiveSolution(z=z, w=w, e=sol.e, t=t)) >= f(start) - 1e-9


def test_zwt_without_eavesdropper_is_max_min():
    cfg, _, ch, R, rng = _quad_scene(5, M=8)
    zero = np.zeros_like(R)
    sol = ao_passive(ch, zero, cfg, rng=np.random.default_rng(0), stop=PassiveStop(max_outer=1))
    sig = np.array([cfg.noise(k) for k in range(cfg.K - 1)])
    z, w, t, ok = solve_subproblem_zwt_passive(sol, ch, zero, cfg)
    assert ok
    rmin = lambda z, w, t: min(np.min(helper_rates(z, t, ch.g_helpers, ch.Q, sig)),  # noqa: E731
                               rate_reflect(w, sol.e, ch.H_K, cfg.noise(cfg.K - 1)))
    assert rmin(z, w, t) >= rmin(sol.z, sol.w, sol.t) - 1e-9
    assert passive_objective(z, w, sol.e, t, ch, JensenEve(ch.H_irs, zero), cfg) == pytest.approx(
        rmin(z, w, t), rel=1e-12)


def test_k2_passive_close_to_grid_oracle():
    cfg, _, ch, R, _ = _quad_scene(6, K=2, N=2, Mx=1, My=1)
    sol = ao_passive(ch, R, cfg, rng=np.random.default_rng(0))
    s1, sK, sE = cfg.noise(0), cfg.noise(1), cfg.noise(ED)
    c2 = cfg.P_max * abs(np.vdot(ch.g[0], ch.Q[:, 0])) ** 2
    best = 0.0
    for t in np.linspace(0, 1, 201)[1:-1]:
        r1 = 0.5 * np.log2(1 + t * c2 / s1)
        for frac in np.linspace(0, 1, 201):
            w = np.array([np.sqrt(frac * (1 - t) * c2)])
            val = (min(r1, rate_reflect(w, sol.e, ch.H_K, sK))
                   - rate_e_jensen(w, sol.e, ch.H_irs, R, sE))
            best = max(best, val)
    assert abs(sol.achieved_rate - best) <= 5e-2
    assert sol.achieved_rate <= best * 1.05 + 1e-12


# ---------------------------------------------------------------- AO

def test_ao_trace_nondecreasing_and_terminates():
    for seed in range(20):
        cfg, _, ch, R, _ = _quad_scene(seed, M=16)
        sol = ao_passive(ch, R, cfg, rng=np.random.default_rng(seed))
        assert np.all(np.diff(sol.objective_trace) >= -1e-6)
        assert sol.iterations <= PassiveStop().max_outer
        assert np.all(np.abs(np.abs(sol.e) - 1) <= 1e-15)
        assert np.real(np.vdot(sol.z, sol.z)) <= cfg.P_max * (1 + 1e-6)
        assert sol.achieved_rate == pytest.approx(max(0.0, sol.objective_trace[-1]))


def test_ao_beats_random_phases():
    wins, n = 0, 10
    for seed in range(n):
        cfg, _, ch, R, _ = _quad_scene(100 + seed, M=16)
        a = ao_passive(ch, R, cfg, rng=np.random.default_rng(seed))
        b = ao_passive(ch, R, cfg, rng=np.random.default_rng(seed), e_method="random")
        wins += a.achieved_rate >= b.achieved_rate
    assert wins >= 0.9 * n


def test_socp_reference_matches_closed_form_small_M():
    cfg, _, ch, R, _ = _quad_scene(2, Mx=4, My=2)
    a = ao_passive(ch, R, cfg, rng=np.random.default_rng(0))
    b = ao_passive(ch, R, cfg, rng=np.random.default_rng(0), e_method="socp")
    assert abs(a.achieved_rate - b.achieved_rate) <= 1e-3
    assert np.all(np.abs(np.abs(b.e) - 1) <= 1e-6)


def test_socp_reference_unit_modulus_output():
    rng = np.random.default_rng(9)
    M = 4
    a = cn(rng, M)
    quad = QuadraticPair(A_E=0.01 * _psd(rng, M), A_K=0.1 * np.outer(a, a.conj()), R_bar=1.0)
    e, _ = solve_e_socp_reference(unit(rng, M), quad, rng=rng)
    assert np.all(np.abs(np.abs(e) - 1) <= 1e-6)


def test_unknown_e_method_rejected():
    cfg, _, ch, R, _ = _quad_scene(0)
    with pytest.raises(ValueError):
        ao_passive(ch, R, cfg, e_method="magic")


# ---------------------------------------------------------------- non-robust baseline

def test_nonrobust_with_exact_csi_is_deterministic_design():
    cfg, _, ch, _, _ = _quad_scene(7, M=8)
    a = nonrobust_baseline(ch, cfg, rng=np.random.default_rng(0))
    b = ao_passive(ch, None, cfg, rng=np.random.default_rng(0), eve=DeterministicEve(ch.H_E))
    assert a.objective_trace == b.objective_trace
    assert np.all(np.diff(a.objective_trace) >= -1e-6)


def test_nonrobust_outage_exceeds_robust_design():
    from irsswipt.robust_active import ao_active
    worse, n = 0, 10
    for seed in range(n):
        cfg, _, ch, rng = scene(200 + seed, N=4, K=3, Mx=8, My=1, delta_K=0.0, delta_E=0.15)
        errs, est = _sample_estimate(ch, cfg, rng)
        nr = nonrobust_baseline(est, cfg, rng=np.random.default_rng(seed))
        rb = ao_active(est, errs, cfg, rng=np.random.default_rng(seed))
        mc = np.random.default_rng(1)
        out_nr = np.mean(secrecy_samples(nr, est, errs, cfg, 10_000, mc) < nr.achieved_rate)
        out_rb = np.mean(secrecy_samples(rb, est, errs, cfg, 10_000, mc) < rb.R_sec)
        worse += out_nr > out_rb
    assert worse >= 0.8 * n
