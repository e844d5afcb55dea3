import math

import numpy as np
import pytest

from kamzero.driver import (BaseParams, BudgetExhausted, PremiseFailed,
                            StepRecord, delta0, dichotomy, kam_step,
                            make_synthetic_problem, no_torus_witness, run,
                            schedule, scheduled_eps)
from kamzero.homological import NormalForm, ResonantParameter
from kamzero.series import (Budgets, DomainParams, SeriesDims, TFSeries,
                            make_key, vector_field_norm)

DIMS = SeriesDims(2, (), (1,), 6)
BUD = Budgets(6, 4096)
DP0 = DomainParams(0.6, 0.25, 0.1, 1.0)
BASE = BaseParams(n=2, b=1, tau=3.5, s1=0.6, r1=0.25, gamma1=0.05, eps1=1e-6)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

def test_gamma_schedule():
    assert schedule(1, BASE).gamma_m == pytest.approx(BASE.gamma1)
    assert schedule(2, BASE).gamma_m == pytest.approx(0.75 * BASE.gamma1)
    for m in range(1, 12):
        g = schedule(m, BASE).gamma_m
        assert BASE.gamma1 / 2 < g <= BASE.gamma1


def test_eta_and_K():
    p = schedule(3, BASE, eps_m=1e-9)
    assert p.eta_m == pytest.approx((1e-9) ** (1.0 / 3.0))
    assert p.K_m == pytest.approx(abs(math.log(1e-9)) / (p.s_m - p.s_next))


def test_s_schedule_monotone_with_floor():
    vals = [schedule(m, BASE).s_m for m in range(1, 30)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert all(v > BASE.s1 / 2 for v in vals)
    # gap halves every step
    gaps = [a - b for a, b in zip(vals, vals[1:])]
    for a, b in zip(gaps, gaps[1:]):
        assert a / b == pytest.approx(2.0)


def test_eps_recursion_formula_oracle():
    # direct evaluation for m = 2, b = 1, n = 2, gamma1 = 0.1, eps1 = 1e-8,
    # s-gap = s1 / 8
    base = BaseParams(n=2, b=1, tau=3.5, s1=1.0, r1=0.25, gamma1=0.1, eps1=1e-8)
    gap = base.s1 / 8.0
    expect = (base.gamma1 ** -6) * 1 ** 64 * gap ** (-3) * (1e-8) ** (4.0 / 3.0)
    assert scheduled_eps(2, base) == pytest.approx(expect, rel=1e-12)
    assert schedule(1, base).s_m - schedule(2, base).s_m == pytest.approx(gap)


def test_gamma_family_schedules():
    p = schedule(2, BASE)
    b4 = BASE.b ** 4
    assert p.gamma_1m == pytest.approx(p.gamma_m / 2 ** (18 * b4))
    assert p.gamma_3m == pytest.approx(p.gamma_m / 2 ** (32 * b4))
    assert p.gamma_4m == pytest.approx(p.gamma_m / 2 ** (8 * b4))
    p1 = schedule(1, BASE)
    assert p1.gamma_1m == p1.gamma_3m == p1.gamma_4m == p1.gamma_m


# ---------------------------------------------------------------------------
# kam_step
# ---------------------------------------------------------------------------

def test_step_with_zero_perturbation():
    N, _ = make_synthetic_problem(DIMS, BUD, 1e-6, seed=0, dp=DP0)
    R = TFSeries.zero(DIMS, BUD)
    params = schedule(1, BASE, eps_m=1e-6)
    dp = DomainParams(params.s_m, params.r_m, DP0.a, DP0.p)
    N1, R1, rec = kam_step(N, R, params, DIMS, dp)
    assert not R1.terms
    assert rec.eps_measured == 0.0 and rec.eps_next == 0.0
    assert np.array_equal(N1.omega, N.omega)


def test_step_contracts_and_drift_bounded():
    N, R = make_synthetic_problem(DIMS, BUD, 1e-6, seed=2, n_high=0, dp=DP0)
    eps0 = vector_field_norm(R, DP0)
    params = schedule(1, BASE, eps_m=eps0)
    dp = DomainParams(params.s_m, params.r_m, DP0.a, DP0.p)
    N1, R1, rec = kam_step(N, R, params, DIMS, dp, eps_measured=eps0)
    assert rec.eps_next <= eps0 ** 1.15
    assert rec.freq_drift <= 10.0 * eps0
    assert rec.residual <= 1e-9 * eps0


def test_budget_exhausted_when_K_exceeds_budget():
    N, R = make_synthetic_problem(DIMS, Budgets(6, 16), 1e-6, seed=2, dp=DP0)
    params = schedule(1, BASE, eps_m=1e-6)  # K ~ 184 > 16
    dp = DomainParams(params.s_m, params.r_m, DP0.a, DP0.p)
    with pytest.raises(BudgetExhausted):
        kam_step(N, R, params, DIMS, dp)


def test_normal_form_accumulation_is_exact():
    # stored sums equal the sum of the per-step increments bit-exactly
    N, R = make_synthetic_problem(DIMS, BUD, 1e-6, seed=4, n_high=0,
                                  inject_z0=1e-7, dp=DP0)
    from kamzero.homological import extract_hat, solve_homological
    from kamzero.series import fourier_truncate, split_low_high
    eps = vector_field_norm(R, DP0)
    hats = []
    Ncur = N
    r_prev = None
    for m in (1, 2):
        params = schedule(m, BASE, eps_m=eps, r_prev=r_prev)
        dp = DomainParams(params.s_m, params.r_m, DP0.a, DP0.p)
        low, _ = split_low_high(R)
        low, _, _ = fourier_truncate(low, params.K_m, dp, sigma=params.s_gap)
        hats.append(extract_hat(low, DIMS))
        Ncur, R, rec = kam_step(Ncur, R, params, DIMS, dp, eps_measured=eps)
        eps = rec.eps_next
        r_prev = params.r_m
        assert Ncur.Nz0[0] == N.Nz0[0] + sum(h.Nz0[0] for h in hats)
        assert Ncur.Nzb0[0] == N.Nzb0[0] + sum(h.Nzb0[0] for h in hats)


# ---------------------------------------------------------------------------
# delta0 and the dichotomy
# ---------------------------------------------------------------------------

def test_delta0_values():
    N = NormalForm.zero(2, 2)
    assert delta0(N) == 0.0
    N.Nz0 = np.array([3.0, 0.0], dtype=complex)
    N.Nzb0 = np.array([0.0, 4.0], dtype=complex)
    assert delta0(N) == pytest.approx(5.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        N.Nz0 = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        N.Nzb0 = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        oracle = math.sqrt(sum(abs(v) ** 2 for v in N.Nz0)
                           + sum(abs(v) ** 2 for v in N.Nzb0))
        assert delta0(N) == pytest.approx(oracle)


def _rec(m, eps_measured, eps_next, d0):
    return StepRecord(m=m, eps_scheduled=eps_measured, eps_measured=eps_measured,
                      eps_next=eps_next, xF_norm=0.0, residual=0.0,
                      freq_drift=0.0, delta0=d0, dropped_mass=0.0, lie_order=1,
                      tail_ratio=0.0, min_divisor_margin=1.0, K_m=1.0,
                      gamma_m=0.05, s_m=0.5, r_m=0.1)


def test_dichotomy_rules():
    base = BASE
    # zero perturbation: converged immediately
    assert dichotomy([_rec(1, 0.0, 0.0, 0.0)], base) == "TorusConverged"
    # delta0 strictly above 20 eps^{7/6}: no-torus candidate
    eps = 1e-6
    thr = 20.0 * eps ** (7.0 / 6.0)
    assert dichotomy([_rec(1, eps, 1e-9, 2 * thr)], base) == "NoTorusCandidate"
    # sitting exactly on the boundary decides nothing
    assert dichotomy([_rec(1, eps, 1e-9, thr)], base) is None
    # below threshold three times with eps under the floor: converged
    recs = [_rec(m, eps, 1e-16, 0.0) for m in (1, 2, 3)]
    assert dichotomy(recs, base) == "TorusConverged"
    # below threshold but eps still large: undecided
    recs = [_rec(m, eps, 1e-9, 0.0) for m in (1, 2, 3)]
    assert dichotomy(recs, base) is None


# ---------------------------------------------------------------------------
# escape witness
# ---------------------------------------------------------------------------

def _witness_nf(c, b=1):
    N = NormalForm.zero(2, b)
    N.omega = np.array([np.sqrt(3.0), np.sqrt(2.0)])
    N.Omega = {j: float(j * j) for j in DIMS.tail_modes}
    N.Nz0 = np.full(b, c, dtype=complex)
    N.Nzb0 = np.full(b, c, dtype=complex)
    return N


def test_witness_trivial_flow_stays_put():
    N = _witness_nf(0.0)
    R = TFSeries.zero(DIMS, BUD)
    params = schedule(1, BASE, eps_m=1e-6)
    escaped, rec = no_torus_witness(N, R, params, DIMS, eps_prev=1e-6)
    assert not escaped
    assert rec.final_norm == 0.0
    assert max(rec.norms) <= 2.0 * (1e-6) ** (7.0 / 6.0)


def test_witness_matches_linear_oracle():
    # A0 = 0, g0 = 0: X(1) = X(0) + alpha0; escape iff the constant drive
    # clears the 2 eps^{7/6} gate
    eps = 1e-6
    c = 1e4 * 20.0 * eps ** (7.0 / 6.0) / math.sqrt(2.0)
    N = _witness_nf(c)
    R = TFSeries.zero(DIMS, BUD)
    params = schedule(1, BASE, eps_m=eps)
    escaped, rec = no_torus_witness(N, R, params, DIMS, eps_prev=eps)
    assert escaped
    d0 = delta0(N)
    assert rec.final_norm == pytest.approx(d0, rel=1e-12)
    assert rec.final_norm == pytest.approx(rec.linear_oracle_norm, rel=0.05)
    assert rec.tilde_final_norm >= d0 / 4.0 - 3.0 * eps ** (7.0 / 6.0)


def test_witness_coupled_mode_agrees_when_drive_dominates():
    # with the perturbation gradient independent of the trajectory scale the
    # frozen and coupled flows agree to the quadrature error
    eps = 1e-6
    c = 1e4 * 20.0 * eps ** (7.0 / 6.0) / math.sqrt(2.0)
    N = _witness_nf(c)
    R = TFSeries.zero(DIMS, BUD)
    R.terms[make_key(2, k=(1, 0), beta={1: 1})] = 1e-9 + 0j
    R.terms[make_key(2, k=(-1, 0), gamma={1: 1})] = 1e-9 + 0j
    params = schedule(1, BASE, eps_m=eps)
    esc_f, rec_f = no_torus_witness(N, R, params, DIMS, eps_prev=eps, mode="frozen")
    esc_c, rec_c = no_torus_witness(N, R, params, DIMS, eps_prev=eps, mode="coupled")
    assert esc_f and esc_c
    assert rec_c.final_norm == pytest.approx(rec_f.final_norm, rel=1e-3)
    with pytest.raises(ValueError):
        no_torus_witness(N, R, params, DIMS, eps_prev=eps, mode="bogus")


def test_witness_premise_guard():
    N = _witness_nf(0.1)
    N.Nz0z0 = np.array([[5.0 + 0j]])  # ||A0|| far from small
    R = TFSeries.zero(DIMS, BUD)
    params = schedule(1, BASE, eps_m=1e-6)
    with pytest.raises(PremiseFailed):
        no_torus_witness(N, R, params, DIMS, eps_prev=1e-6)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def test_run_zero_perturbation_converges_immediately():
    N, _ = make_synthetic_problem(DIMS, BUD, 1e-6, seed=0, dp=DP0)
    R = TFSeries.zero(DIMS, BUD)
    rep = run(N, R, BASE, DIMS, DP0, max_steps=3)
    assert rep.verdict == "TorusConverged"
    assert rep.verdict_info["m"] == 1


def test_run_resonant_sample():
    N, R = make_synthetic_problem(DIMS, BUD, 1e-6, seed=3, n_high=0, dp=DP0)
    N.omega = np.array([1.0, 1.0])  # rational: <k, omega> = 0 at (1, -1)
    rep = run(N, R, BASE, DIMS, DP0, max_steps=3)
    assert rep.verdict == "ResonantSample"
    assert rep.verdict_info["family"] == "KL"


def test_run_synthetic_torus_converged():
    N, R = make_synthetic_problem(DIMS, BUD, 1e-6, seed=2, n_high=0, dp=DP0)
    rep = run(N, R, BASE, DIMS, DP0, max_steps=5)
    assert rep.verdict == "TorusConverged"
    assert all(r.delta0 == 0.0 for r in rep.steps)
    # cumulative drift constant matches items summed from the trace
    assert rep.constants["freq_drift_sum"] == pytest.approx(
        sum(r.freq_drift for r in rep.steps))


def test_run_nls_full_pipeline_converges():
    from kamzero.nls import NlsModel, build_nls

    model = NlsModel(sites=(1, 2), jmax=6, xi=np.array([4e-3, 3e-3]))
    bk, kf = build_nls(model, Budgets(6, 2048))
    base = BaseParams(n=2, b=1, tau=3.5, s1=0.6, r1=0.02, gamma1=0.005,
                      eps_floor=1e-5)
    rep = run(kf.N0, kf.R0, base, kf.dims,
              DomainParams(0.6, 0.02, 0.1, 1.0), max_steps=3)
    assert rep.verdict == "TorusConverged"
    assert all(r.delta0 <= 1e-12 for r in rep.steps)


def test_run_no_torus_witnessed():
    eps0 = 1e-6
    thr = 20.0 * eps0 ** (7.0 / 6.0)
    c = 1e4 * thr / math.sqrt(2.0)
    N, R = make_synthetic_problem(DIMS, BUD, eps0, seed=2, n_high=0,
                                  inject_z0=c, dp=DP0)
    rep = run(N, R, BASE, DIMS, DP0, max_steps=5)
    assert rep.verdict == "NoTorusWitnessed"
    assert rep.verdict_info["delta0"] > 0
    assert rep.verdict_info["final_norm"] > rep.verdict_info["threshold"]
    # delta0 stabilizes once accumulated: successive estimates differ by at
    # most a multiple of the entering perturbation size
    d0s = [r.delta0 for r in rep.steps]
    if len(d0s) >= 2:
        for prev, cur, rec in zip(d0s, d0s[1:], rep.steps[1:]):
            assert abs(cur - prev) <= 10.0 * rec.eps_measured
