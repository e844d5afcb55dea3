"""Iteration driver: schedules, the KAM step, and the delta_0 dichotomy.

One step conjugates H_m = N_m + R_m by the time-1 flow of the generating
function solving the homological equation, updates the frequencies from the
k = 0 means, accumulates the zero-mode normal-form sums, and measures the
new perturbation.  The new perturbation is assembled from the exact
decomposition

    R_{m+1} = ({N,F} + R_low - Nhat)            (solver residual)
            + tail + R_high
            + sum_{j>=2} ad_F^j N / j!
            + sum_{j>=1} ad_F^j R / j!

so no O(1) normal-form mass is pushed through a floating-point
cancellation; every piece is of size O(eps) or smaller.

The dichotomy monitors delta_0 = sqrt(|J^{z0}|_2^2 + |J^{zbar0}|_2^2)
against 20 eps_{m-1}^{7/6}: persistently below (with eps under the
convergence floor) declares a surviving torus, strictly above triggers the
escape-witness integration of the zero-mode subsystem over t in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .homological import (NormalForm, ResonantParameter, check_nonresonance,
                          solve_homological)
from .matrixkit import op_norm
from .series import (DomainParams, MonomialKey, TFSeries, fourier_truncate,
                     make_key, poisson_bracket, split_low_high,
                     vector_field_norm)


class BudgetExhausted(Exception):
    """The schedule demands a Fourier range beyond the series budget."""


class PremiseFailed(Exception):
    """The escape-witness flow premise ||A0|| << 1 does not hold."""


@dataclass(frozen=True)
class BaseParams:
    """Step-independent schedule constants."""

    n: int
    b: int
    tau: float
    s1: float
    r1: float
    gamma1: float
    eps1: float = 1e-6
    d: int = 2
    r_floor_rel: float = 1e-2
    eps_floor: float = 1e-14
    check_k_cap: float = 64.0

    def __post_init__(self):
        if not self.tau > self.n + 1:
            raise ValueError("tau must exceed n + 1")


@dataclass
class KamParams:
    """Schedule values for one step m."""

    m: int
    s_m: float
    s_next: float
    r_m: float
    gamma_m: float
    eps_m: float
    eta_m: float
    K_m: float
    base: BaseParams

    @property
    def s_gap(self):
        return self.s_m - self.s_next

    @property
    def tau(self):
        return self.base.tau

    @property
    def d(self):
        return self.base.d

    # per-family thresholds; m = 1 reduces every gamma_im to gamma_1
    @property
    def gamma_1m(self):
        return self.gamma_m / self.m ** (18 * self.base.b ** 4)

    @property
    def gamma_3m(self):
        return self.gamma_m / self.m ** (32 * self.base.b ** 4)

    @property
    def gamma_4m(self):
        return self.gamma_m / self.m ** (8 * self.base.b ** 4)

    @property
    def tau_1(self):
        return 3 * self.base.b ** 2 * self.tau

    @property
    def tau_3(self):
        return 4 * self.base.b ** 2 * self.tau

    @property
    def tau_4(self):
        return 2 * self.base.b ** 2 * self.tau


def _s_of(m, s1):
    # strict-gap variant with floor s1/2: keeps the composition domain
    # nonempty while preserving the geometric gap sizes
    return s1 * (0.5 + 0.5 ** (m + 1))


def scheduled_eps(m, base):
    """The analytic eps_m recursion seeded by eps_1 (log space, capped)."""
    log_eps = math.log(base.eps1)
    for i in range(2, m + 1):
        gam = 0.5 * base.gamma1 * (1.0 + 2.0 ** (-(i - 1) + 1))
        gap = _s_of(i - 1, base.s1) - _s_of(i, base.s1)
        log_eps = (-6 * math.log(gam) + 64 * base.b ** 4 * math.log(i - 1)
                   - (base.n + 1) * math.log(gap) + (4.0 / 3.0) * log_eps)
        if log_eps > 600.0:
            return math.inf
    return math.exp(log_eps)


def schedule(m, base, eps_m=None, r_prev=None):
    """KamParams for step m.

    ``eps_m`` defaults to the analytic recursion; the driver passes the
    measured value.  ``r_prev`` feeds the radius recursion r_m = eta_m
    r_{m-1} / 8 (clamped at the configured floor); at m = 1 the base radius
    is used.
    """
    if m < 1:
        raise ValueError("step index starts at 1")
    s_m = _s_of(m, base.s1)
    s_next = _s_of(m + 1, base.s1)
    gamma_m = 0.5 * base.gamma1 * (1.0 + 2.0 ** (-m + 1))
    eps = scheduled_eps(m, base) if eps_m is None else eps_m
    eta = eps ** (1.0 / 3.0) if eps > 0 else 0.0
    K = abs(math.log(eps)) / (s_m - s_next) if eps > 0 else base.check_k_cap
    K = max(K, 1.0)
    if m == 1 or r_prev is None:
        r_m = base.r1
    else:
        r_m = max(eta * r_prev / 8.0, base.r_floor_rel * base.r1)
    return KamParams(m, s_m, s_next, r_m, gamma_m, eps, eta, K, base)


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    m: int
    eps_scheduled: float
    eps_measured: float
    eps_next: float
    xF_norm: float
    residual: float
    freq_drift: float
    delta0: float
    dropped_mass: float
    lie_order: int
    tail_ratio: float
    min_divisor_margin: float
    K_m: float
    gamma_m: float
    s_m: float
    r_m: float
    solve_counts: dict = field(default_factory=dict)

    def as_dict(self):
        out = {k: getattr(self, k) for k in (
            "m", "eps_scheduled", "eps_measured", "eps_next", "xF_norm",
            "residual", "freq_drift", "delta0", "dropped_mass", "lie_order",
            "tail_ratio", "min_divisor_margin", "K_m", "gamma_m", "s_m", "r_m")}
        out["solve_counts"] = dict(sorted(self.solve_counts.items()))
        return out


def _ad_chain(start, F, dp, rem_tol, max_order, first_weight_index):
    """sum_{j>=j0} ad_F^j(start) / j! with ad^1(start) = {start, F} given.

    ``start`` is already ad^{j0}(seed); weights continue 1/(j0+1)!, ...
    Returns (sum_series, dropped_mass, last_norm, orders_used).
    """
    acc = None
    term = start
    dropped = term.meta.get("dropped_mass", 0.0)
    fact = math.factorial(first_weight_index)
    used = first_weight_index
    j = first_weight_index
    incr = term * (1.0 / fact)
    acc = incr
    last = vector_field_norm(incr, dp)
    while j < max_order and last >= rem_tol and term.terms:
        j += 1
        term = poisson_bracket(term, F)
        dropped += term.meta.get("dropped_mass", 0.0)
        fact *= j
        incr = term * (1.0 / fact)
        acc = acc + incr
        last = vector_field_norm(incr, dp)
        used = j
    return acc, dropped, last, used


def kam_step(N, R, params, dims, dp, max_lie_order=8, eps_measured=None):
    """One conjugation H_m -> H_{m+1}; returns (N_next, R_next, StepRecord).

    Raises ResonantParameter when the sample fails a small-divisor
    condition and BudgetExhausted when the scheduled Fourier cut-off
    exceeds the series budget.
    """
    base = params.base
    if params.K_m > R.budgets.k_max:
        raise BudgetExhausted("K_m = %.1f exceeds the Fourier budget %d"
                              % (params.K_m, R.budgets.k_max))
    eps_m = vector_field_norm(R, dp) if eps_measured is None else eps_measured

    low, high = split_low_high(R)
    low_trunc, tail, tailrep = fourier_truncate(
        low, min(params.K_m, R.budgets.k_max), dp, sigma=params.s_gap)

    failures = check_nonresonance(
        N, _capped(params), dims, families=("KL", "R1", "R3", "R4"))
    if failures:
        raise ResonantParameter(failures[0])

    F, Nhat, srep = solve_homological(N, low_trunc, params, dims, dp=dp)
    N_next = N.accumulate(Nhat)

    # exact decomposition of the transformed perturbation
    N_series = N.to_series(dims, R.budgets)
    rem_tol = 0.01 * max(eps_m ** (4.0 / 3.0), 1e-30)
    T1 = poisson_bracket(N_series, F)
    resid_series = T1 + low_trunc - Nhat.to_series(dims, R.budgets)
    dropped = T1.meta.get("dropped_mass", 0.0)
    R_next = resid_series + tail
    lie_used = 1
    if F.terms:
        T2 = poisson_bracket(T1, F)
        chainN, d2, _, usedN = _ad_chain(T2, F, dp, rem_tol, max_lie_order, 2)
        S1 = poisson_bracket(R, F)
        chainR, d3, _, usedR = _ad_chain(S1, F, dp, rem_tol, max_lie_order, 1)
        R_next = R_next + high + chainN + chainR
        dropped += d2 + d3
        lie_used = max(usedN, usedR)
    else:
        R_next = R_next + high
    R_next.prune()
    R_next.real = R.real

    s_next = params.s_next
    # monitoring radius for the outgoing norm; the next schedule recomputes
    # the radius from its own measured eps, so this only affects diagnostics
    r_next = max(params.eta_m * params.r_m / 8.0, base.r_floor_rel * base.r1)
    dp_next = DomainParams(s_next, r_next, dp.a, dp.p)
    eps_next = vector_field_norm(R_next, dp_next)

    rec = StepRecord(
        m=params.m,
        eps_scheduled=params.eps_m,
        eps_measured=eps_m,
        eps_next=eps_next,
        xF_norm=srep.xF_norm if srep.xF_norm is not None else 0.0,
        residual=srep.residual if srep.residual is not None else 0.0,
        freq_drift=float(np.max(np.abs(Nhat.omega), initial=0.0)),
        delta0=delta0(N_next),
        dropped_mass=dropped,
        lie_order=lie_used,
        tail_ratio=tailrep.ratio if tailrep else 0.0,
        min_divisor_margin=float(srep.min_divisor_margin),
        K_m=params.K_m,
        gamma_m=params.gamma_m,
        s_m=params.s_m,
        r_m=params.r_m,
        solve_counts=srep.solve_counts,
    )
    return N_next, R_next, rec


def _capped(params):
    """Copy of the step params with the condition-check range capped."""
    capped = KamParams(params.m, params.s_m, params.s_next, params.r_m,
                       params.gamma_m, params.eps_m, params.eta_m,
                       min(params.K_m, params.base.check_k_cap), params.base)
    return capped


# ---------------------------------------------------------------------------
# dichotomy
# ---------------------------------------------------------------------------

def delta0(N):
    """sqrt(|N^{z0}|_2^2 + |N^{zbar0}|_2^2) for the accumulated sums."""
    return float(np.sqrt(np.sum(np.abs(N.Nz0) ** 2) + np.sum(np.abs(N.Nzb0) ** 2)))


def dichotomy(records, base, consecutive=3):
    """Verdict from the step records so far, or None while undecided.

    TorusConverged requires delta_0 strictly below 20 eps_{m-1}^{7/6} for
    ``consecutive`` steps with the measured eps under the convergence floor;
    the no-torus branch fires at the first step with delta_0 strictly above
    the threshold (the caller then runs the escape witness).  Sitting
    exactly on the threshold decides nothing.
    """
    if not records:
        return None
    last = records[-1]
    if last.eps_measured == 0.0 and last.delta0 == 0.0:
        return "TorusConverged"
    thr = 20.0 * last.eps_measured ** (7.0 / 6.0)
    if last.delta0 > thr:
        return "NoTorusCandidate"
    streak = 0
    for rec in records:
        t = 20.0 * rec.eps_measured ** (7.0 / 6.0)
        streak = streak + 1 if rec.delta0 < t else 0
    if streak >= consecutive and last.eps_next < base.eps_floor:
        return "TorusConverged"
    return None


# ---------------------------------------------------------------------------
# escape witness
# ---------------------------------------------------------------------------

def _zero_mode_tables(R, dims):
    """Gradient tables of R restricted to y = 0, tail = 0.

    Entries are (k, beta exps, gamma exps) -> coefficient, for the z0 and
    zbar0 gradients and (terms with a single action factor) the y gradient.
    The angle dependence stays symbolic so the tables serve both the frozen
    and the coupled witness flows.
    """
    n = dims.n
    zm = dims.zero_modes
    pos = {m: i for i, m in enumerate(zm)}
    grad_z = [dict() for _ in zm]
    grad_zb = [dict() for _ in zm]
    grad_y = [dict() for _ in range(n)]

    def bump(table, k, bmap, gmap, val):
        key = (k, tuple(bmap.get(m, 0) for m in zm), tuple(gmap.get(m, 0) for m in zm))
        table[key] = table.get(key, 0j) + val

    for key, c in R.terms.items():
        if any(m not in pos for m, _ in key.beta + key.gamma):
            continue  # carries a tail factor, vanishes at z = 0
        na = sum(key.alpha)
        bmap = dict(key.beta)
        gmap = dict(key.gamma)
        if na == 1:
            b = key.alpha.index(1)
            bump(grad_y[b], key.k, bmap, gmap, c)
            continue
        if na > 0:
            continue  # vanishes at y = 0
        for m, e in key.beta:
            rest = dict(bmap)
            rest[m] = e - 1
            bump(grad_z[pos[m]], key.k, rest, gmap, e * c)
        for m, e in key.gamma:
            rest = dict(gmap)
            rest[m] = e - 1
            bump(grad_zb[pos[m]], key.k, bmap, rest, e * c)
    return grad_z, grad_zb, grad_y


def _eval_poly(table, x, z, zb):
    tot = 0j
    for (k, be, ge), c in table.items():
        v = c * np.exp(1j * float(np.dot(k, x))) if any(k) else c
        for e, zv in zip(be, z):
            if e:
                v *= zv ** e
        for e, zv in zip(ge, zb):
            if e:
                v *= zv ** e
        tot += v
    return tot


def _expm_taylor(B, t=1.0):
    out = np.eye(B.shape[0], dtype=complex)
    term = np.eye(B.shape[0], dtype=complex)
    for k in range(1, 40):
        term = term @ (B * t) / k
        out = out + term
        if np.abs(term).max() < 1e-18:
            break
    return out


def _phi1(B):
    """sum_k B^k / (k+1)! so that int_0^1 e^{B(1-t)} dt = phi1(B)."""
    out = np.eye(B.shape[0], dtype=complex)
    term = np.eye(B.shape[0], dtype=complex)
    for k in range(1, 40):
        term = term @ B / (k + 1)
        out = out + term
        if np.abs(term).max() < 1e-18:
            break
    return out


@dataclass
class WitnessRecord:
    escaped: bool
    final_norm: float
    tilde_final_norm: float
    linear_oracle_norm: float
    threshold: float
    ts: list
    norms: list
    A0_norm: float


def no_torus_witness(N, R, params, dims, eps_prev=None, steps=400, mode="frozen",
                     z_init=None, x0=None):
    """Integrate the zero-mode subsystem over t in [0, 1] and test escape.

    The subsystem is dX0/dt = alpha0 + A0 X0 + g0 with the constant and
    linear parts read from the accumulated zero-mode sums and g0 evaluated
    from R along the trajectory.  mode='frozen' (default) keeps the angles
    at x(0); mode='coupled' also flows the angles with dx/dt = omega +
    R_y(x, 0, z0, 0).  Escape means the final Euclidean norm exceeds
    2 eps_{m-1}^{7/6}; the record also carries the straightened coordinate
    e^{-A0 t} X0 and the closed-form linear oracle.
    """
    if mode not in ("frozen", "coupled"):
        raise ValueError("mode must be 'frozen' or 'coupled'")
    b = N.b
    eps_prev = params.eps_m if eps_prev is None else eps_prev
    alpha0 = np.concatenate([1j * N.Nzb0, -1j * N.Nz0]).astype(complex)
    A0 = np.block([[1j * N.Nz0zb0, 2j * N.Nzb0zb0],
                   [-2j * N.Nz0z0, -1j * N.Nz0zb0.T]])
    A0_norm = op_norm(A0)
    if A0_norm > 0.25:
        raise PremiseFailed("||A0|| = %.3e is not << 1" % A0_norm)

    bound = eps_prev ** (7.0 / 6.0)
    if z_init is None:
        X = np.zeros(2 * b, dtype=complex)
    else:
        X = np.asarray(z_init, dtype=complex)
        if np.linalg.norm(X) > bound * math.sqrt(2.0) + 1e-15:
            raise ValueError("initial data exceeds the eps^{7/6} ball")
    x0 = np.zeros(dims.n) if x0 is None else np.asarray(x0, dtype=float)

    grad_z, grad_zb, grad_y = _zero_mode_tables(R, dims)

    def g0(xv, Xv):
        z = Xv[:b]
        zb = Xv[b:]
        gz = np.array([_eval_poly(t, xv, z, zb) for t in grad_zb])
        gzb = np.array([_eval_poly(t, xv, z, zb) for t in grad_z])
        return np.concatenate([1j * gz, -1j * gzb])

    if mode == "frozen":
        def rhs(state):
            return alpha0 + A0 @ state + g0(x0, state)
    else:
        def rhs(state):
            xv = state[:dims.n].real
            Xv = state[dims.n:]
            dx = N.omega + np.array([_eval_poly(t, xv, Xv[:b], Xv[b:]).real
                                     for t in grad_y])
            dX = alpha0 + A0 @ Xv + g0(xv, Xv)
            return np.concatenate([dx.astype(complex), dX])
        X = np.concatenate([x0.astype(complex), X])

    def znorm(state):
        zpart = state if mode == "frozen" else state[dims.n:]
        return float(np.linalg.norm(zpart))

    h = 1.0 / steps
    ts = [0.0]
    norms = [znorm(X)]
    for i in range(steps):
        k1 = rhs(X)
        k2 = rhs(X + 0.5 * h * k1)
        k3 = rhs(X + 0.5 * h * k2)
        k4 = rhs(X + h * k3)
        X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        ts.append((i + 1) * h)
        norms.append(znorm(X))
    if mode == "coupled":
        X = X[dims.n:]

    tilde = _expm_taylor(-A0) @ X
    lin = _expm_taylor(A0) @ (np.zeros(2 * b) if z_init is None else np.asarray(z_init)) \
        + _phi1(A0) @ alpha0
    threshold = 2.0 * bound
    rec = WitnessRecord(
        escaped=bool(norms[-1] > threshold),
        final_norm=norms[-1],
        tilde_final_norm=float(np.linalg.norm(tilde)),
        linear_oracle_norm=float(np.linalg.norm(lin)),
        threshold=threshold,
        ts=ts,
        norms=norms,
        A0_norm=A0_norm,
    )
    return rec.escaped, rec


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------

@dataclass
class IterationReport:
    verdict: str
    verdict_info: dict
    steps: list
    constants: dict

    def as_dict(self):
        return {
            "verdict": self.verdict,
            "verdict_info": self.verdict_info,
            "constants": self.constants,
            "steps": [s.as_dict() for s in self.steps],
        }


def run(N0, R0, base, dims, dp0, max_steps=6, max_lie_order=8, witness_steps=400):
    """Iterate kam_step until a verdict; returns an IterationReport."""
    N = N0
    R = R0
    records = []
    r_prev = None
    eps = vector_field_norm(R, dp0)
    verdict = None
    info = {}
    for m in range(1, max_steps + 1):
        params = schedule(m, base, eps_m=eps, r_prev=r_prev)
        dp = DomainParams(params.s_m, params.r_m, dp0.a, dp0.p)
        try:
            N, R, rec = kam_step(N, R, params, dims, dp,
                                 max_lie_order=max_lie_order, eps_measured=eps)
        except ResonantParameter as err:
            verdict = "ResonantSample"
            cond = err.condition
            info = {"m": m, "family": cond.family, "k": list(cond.k),
                    "threshold": cond.threshold, "measured": cond.measured}
            break
        except BudgetExhausted as err:
            verdict = "BudgetExhausted"
            info = {"m": m, "reason": str(err)}
            break
        records.append(rec)
        eps = rec.eps_next
        r_prev = params.r_m
        state = dichotomy(records, base)
        if state == "TorusConverged":
            verdict = "TorusConverged"
            info = {"m": m, "delta0": rec.delta0, "eps": rec.eps_next}
            break
        if state == "NoTorusCandidate":
            try:
                escaped, wrec = no_torus_witness(
                    N, R, params, dims, eps_prev=rec.eps_measured,
                    steps=witness_steps)
            except PremiseFailed as err:
                verdict = "BudgetExhausted"
                info = {"m": m, "reason": str(err)}
                break
            if escaped:
                verdict = "NoTorusWitnessed"
                info = {"m": m, "delta0": rec.delta0,
                        "final_norm": wrec.final_norm,
                        "threshold": wrec.threshold,
                        "linear_oracle_norm": wrec.linear_oracle_norm}
                break
    if verdict is None:
        verdict = "BudgetExhausted"
        info = {"m": max_steps, "reason": "no verdict within max_steps"}
    drift_sum = sum(r.freq_drift for r in records)
    eps_sum = sum(r.eps_measured for r in records)
    constants = {
        "freq_drift_sum": drift_sum,
        "eps_sum": eps_sum,
        "drift_over_eps": drift_sum / eps_sum if eps_sum > 0 else 0.0,
    }
    return IterationReport(verdict, info, records, constants)


# ---------------------------------------------------------------------------
# synthetic problems
# ---------------------------------------------------------------------------

def hermitian_mirror(F):
    """Series with coefficient(-k, alpha, gamma, beta) = conj(c(k, alpha, beta, gamma))."""
    out = TFSeries.zero(F.dims, F.budgets)
    for key, c in F.terms.items():
        mk = MonomialKey(tuple(-v for v in key.k), key.alpha, key.gamma, key.beta)
        out.terms[mk] = c.conjugate()
    return out


def realify(F):
    """Project onto the real-valued subspace (average with the mirror)."""
    out = (F + hermitian_mirror(F)) * 0.5
    out.real = True
    return out


def make_synthetic_problem(dims, budgets, eps0, seed=0, kspread=2,
                           n_low=12, n_high=8, inject_z0=0.0, block_scale=0.0,
                           dp=None):
    """Random real perturbation of a nonresonant normal form.

    Draws random low-degree terms (over every solver class) and a few
    degree-3/4 terms, symmetrizes to a real Hamiltonian, and scales the
    whole perturbation so its vector-field norm equals ``eps0``.
    ``inject_z0`` adds a constant zero-mode term of that magnitude after
    scaling (the no-torus driver); ``block_scale`` puts random symmetric
    quadratic blocks of that size into N.
    """
    rng = np.random.default_rng(seed)
    n = dims.n
    b = dims.b
    omega = 1.0 + rng.random(n)
    N = NormalForm.zero(n, b)
    N.omega = omega
    N.Omega = {j: float(j ** 2) for j in dims.tail_modes}
    if block_scale > 0:
        S = rng.standard_normal((b, b)) + 1j * rng.standard_normal((b, b))
        S = 0.5 * (S + S.T) * block_scale
        M = rng.standard_normal((b, b)) + 1j * rng.standard_normal((b, b))
        M = 0.5 * (M + M.conj().T) * block_scale
        N.Nz0z0 = S
        N.Nzb0zb0 = S.conj()
        N.Nz0zb0 = M

    R = TFSeries.zero(dims, budgets)
    modes = dims.modes

    def rand_k():
        k = rng.integers(-kspread, kspread + 1, size=n)
        return tuple(int(v) for v in k)

    def rand_coef():
        return complex(rng.standard_normal(), rng.standard_normal())

    for _ in range(n_low):
        k = rand_k()
        kind = rng.integers(0, 6)
        if kind == 0 and n:
            alpha = tuple(1 if i == rng.integers(0, n) else 0 for i in range(n))
            key = make_key(n, k=k, alpha=alpha)
        elif kind == 1:
            key = make_key(n, k=k)
        elif kind == 2:
            m1 = modes[rng.integers(0, len(modes))]
            key = make_key(n, k=k, beta={m1: 1})
        elif kind == 3:
            m1 = modes[rng.integers(0, len(modes))]
            key = make_key(n, k=k, gamma={m1: 1})
        elif kind == 4:
            m1, m2 = rng.choice(len(modes), size=2)
            bmap = {}
            for m in (modes[m1], modes[m2]):
                bmap[m] = bmap.get(m, 0) + 1
            key = make_key(n, k=k, beta=bmap)
        else:
            m1, m2 = rng.choice(len(modes), size=2)
            key = make_key(n, k=k, beta={modes[m1]: 1}, gamma={modes[m2]: 1})
        R.terms[key] = R.terms.get(key, 0j) + rand_coef()
    for _ in range(n_high):
        k = rand_k()
        picks = rng.choice(len(modes), size=3)
        bmap = {}
        for idx in picks[:2]:
            bmap[modes[idx]] = bmap.get(modes[idx], 0) + 1
        key = make_key(n, k=k, beta=bmap, gamma={modes[picks[2]]: 1})
        R.terms[key] = R.terms.get(key, 0j) + rand_coef()

    R = realify(R)
    dp = dp or DomainParams(0.6, 0.25, 0.1, 1.0)
    norm = vector_field_norm(R, dp)
    if norm > 0:
        R = R * (eps0 / norm)
        R.real = True
    if inject_z0 > 0:
        zmode = dims.zero_modes[0]
        R.terms[make_key(n, beta={zmode: 1})] = complex(inject_z0)
        R.terms[make_key(n, gamma={zmode: 1})] = complex(inject_z0)
    return N, R
