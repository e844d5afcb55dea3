"""Grid estimates of the excluded resonance-zone measure over the parameter box.

Samples a rectangular grid in the parameter box, evaluates every
small-divisor condition per sample through an affine frequency map, and
compares the excluded fractions per family against linear strip-width
estimates and the per-step bound shape gamma^mu/(1 + K_{m-1}) +
gamma^{1/(4 b^2)}/m^2.  Estimation is grid-based (no covering arguments);
the grid resolution error 1/samples-per-axis is part of the report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .homological import assemble_block_operator


@dataclass
class ParameterGrid:
    """Regular sample grid on a box in R^n."""

    lo: np.ndarray
    hi: np.ndarray
    samples_per_axis: int

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError("invalid parameter box")
        if self.samples_per_axis < 2:
            raise ValueError("need at least 2 samples per axis")

    @property
    def ndim(self):
        return len(self.lo)

    def samples(self):
        axes = [np.linspace(self.lo[i], self.hi[i], self.samples_per_axis)
                for i in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def resolution_error(self):
        return 1.0 / self.samples_per_axis


@dataclass
class AffineFrequencyMap:
    """omega(xi) = alpha + A xi with fixed normal frequencies."""

    alpha: np.ndarray
    A: np.ndarray
    Omega: dict
    d: int = 2

    def omega(self, xi):
        return self.alpha + self.A @ np.asarray(xi)


@dataclass
class ConditionRow:
    family: str
    k: tuple
    l: tuple | None
    threshold: float
    excluded_fraction: float
    analytic_bound: float


@dataclass
class MeasureReport:
    fractions: dict
    bounds: dict
    ratios: dict
    per_step_bound: float
    cumulative_ok: bool
    grid_error: float
    n_samples: int
    lipschitz_min: float = 0.0
    lipschitz_max: float = 0.0
    rows: list = field(default_factory=list)

    def as_dict(self):
        return {
            "fractions": dict(sorted(self.fractions.items())),
            "bounds": dict(sorted(self.bounds.items())),
            "ratios": dict(sorted(self.ratios.items())),
            "per_step_bound": self.per_step_bound,
            "cumulative_ok": self.cumulative_ok,
            "grid_error": self.grid_error,
            "n_samples": self.n_samples,
            "lipschitz_min": self.lipschitz_min,
            "lipschitz_max": self.lipschitz_max,
        }


def lipschitz_quotients(fmap, grid):
    """Finite-difference Lipschitz quotients of xi -> omega(xi) on the grid.

    Returns (min, max) of |omega(a) - omega(b)|_2 / |a - b|_2 over nearest
    grid neighbors.  A strictly positive minimum is the per-sample evidence
    for the bi-Lipschitz (lipeomorphism) requirement on the frequency map;
    the maximum monitors the forward constant.
    """
    spa = grid.samples_per_axis
    nd = grid.ndim
    xi = grid.samples().reshape((spa,) * nd + (nd,))
    om = np.apply_along_axis(fmap.omega, -1, xi)
    lo = np.inf
    hi = 0.0
    for axis in range(nd):
        d_om = np.diff(om, axis=axis)
        d_xi = np.diff(xi, axis=axis)
        q = (np.linalg.norm(d_om, axis=-1)
             / np.maximum(np.linalg.norm(d_xi, axis=-1), 1e-300))
        lo = min(lo, float(q.min()))
        hi = max(hi, float(q.max()))
    return lo, hi


def _k_vectors(n, kmax, k_lo=0.0):
    axes = [np.arange(-int(kmax), int(kmax) + 1)] * n
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    kabs = np.abs(grid).sum(axis=1)
    return grid[(kabs > k_lo) & (kabs <= kmax)]


def _l_options(fmap, tail, lmax=2):
    """(l, <l,Omega>, <l>_d) for 0 <= |l| <= lmax supported on the tail."""
    Om = fmap.Omega
    d = fmap.d
    opts = [((), 0.0, 1.0)]
    for j in tail:
        opts.append((((j, 1),), Om[j], max(1.0, float(j) ** d)))
        opts.append((((j, -1),), -Om[j], max(1.0, float(j) ** d)))
    for ai, i in enumerate(tail):
        for j in tail[ai:]:
            ld = max(1.0, float(i ** d + j ** d))
            lv = ((i, 2),) if i == j else ((i, 1), (j, 1))
            opts.append((lv, Om[i] + Om[j], ld))
            opts.append((tuple((m, -e) for m, e in lv), -(Om[i] + Om[j]), ld))
            if i != j:
                ldm = max(1.0, abs(float(i ** d - j ** d)))
                opts.append((((i, 1), (j, -1)), Om[i] - Om[j], ldm))
                opts.append((((i, -1), (j, 1)), Om[j] - Om[i], ldm))
    return opts


def _strip_fraction_bound(thr, grad, grid):
    """Fraction of the box cut by |c + <grad, xi>| < thr (linear estimate)."""
    g = float(np.linalg.norm(grad, 2))
    if g == 0.0:
        return 1.0
    widths = grid.hi - grid.lo
    # strip width 2 thr / |g| against the box extent along the gradient
    extent = float(np.abs(grad) @ widths) / g
    return min(1.0, 2.0 * thr / (g * extent) if extent > 0 else 1.0)


def estimate_excluded(fmap, params, dims, grid, families=("KL", "R1", "R3", "R4"),
                      k_lo=0.0, kmax=None, blocks=None, collect_rows=True):
    """Excluded-fraction estimate for every condition family at step m.

    ``fmap`` is the affine frequency map; ``blocks`` optionally supplies a
    NormalForm whose zero-mode quadratic blocks feed the determinant
    families (zero blocks otherwise, matching the first step).  Family KL
    is restricted to the annulus k_lo < |k| <= kmax (the per-step
    bookkeeping); the determinant families use 0 < |k| <= kmax.
    """
    xi = grid.samples()
    nsamp = xi.shape[0]
    kmax = params.K_m if kmax is None else kmax
    kvecs = _k_vectors(grid.ndim, kmax, k_lo=0.0)
    kabs = np.abs(kvecs).sum(axis=1)
    base = kvecs @ fmap.alpha
    proj = kvecs @ fmap.A                    # (nk, n): gradient of <k, omega(xi)>
    vals = base[:, None] + proj @ xi.T       # (nk, nsamp)
    tail = sorted(fmap.Omega)

    fractions = {}
    bounds = {}
    rows = []

    if "KL" in families:
        sel = (kabs > k_lo) & (kabs <= kmax)
        excluded = np.zeros(nsamp, dtype=bool)
        bound = 0.0
        lopts = _l_options(fmap, tail)
        for i in np.flatnonzero(sel):
            thr_base = params.gamma_m / max(1.0, float(kabs[i])) ** params.tau
            vi = vals[i]
            for lvec, cval, ld in lopts:
                thr = thr_base * ld
                viol = np.abs(vi + cval) < thr
                excluded |= viol
                cb = _strip_fraction_bound(thr, proj[i], grid)
                bound += cb
                if collect_rows:
                    frac = float(viol.mean())
                    if frac > 0:
                        rows.append(ConditionRow("KL", tuple(int(v) for v in kvecs[i]),
                                                 lvec, thr, frac, cb))
        fractions["KL"] = float(excluded.mean())
        bounds["KL"] = min(1.0, bound)

    def det_family(name, gamma_i, tau_i, fam_matrix):
        sel = (kabs > 0) & (kabs <= kmax)
        excluded = np.zeros(nsamp, dtype=bool)
        bound = 0.0
        mu = np.linalg.eigvals(fam_matrix)
        order = len(mu)
        for i in np.flatnonzero(sel):
            thr = gamma_i / max(1.0, float(kabs[i])) ** tau_i
            det = np.abs(1j * vals[i][None, :] + mu[:, None]).prod(axis=0)
            viol = det < thr
            excluded |= viol
            # measure of {|det| < thr} scales like thr^{1/order} per root
            eff = thr ** (1.0 / order)
            cb = _strip_fraction_bound(eff, proj[i], grid) * order
            bound += cb
            if collect_rows and viol.any():
                rows.append(ConditionRow(name, tuple(int(v) for v in kvecs[i]),
                                         None, thr, float(viol.mean()), cb))
        fractions[name] = float(excluded.mean())
        bounds[name] = min(1.0, bound)

    if blocks is not None:
        N0 = blocks
    else:
        from .homological import NormalForm
        N0 = NormalForm.zero(grid.ndim, max(dims.b, 1))
        N0.omega = fmap.alpha
        N0.Omega = dict(fmap.Omega)
    zk = np.zeros(grid.ndim)
    if "R1" in families:
        det_family("R1", params.gamma_1m, params.tau_1,
                   assemble_block_operator("A", N0, zk))
    if "R4" in families:
        det_family("R4", params.gamma_4m, params.tau_4,
                   assemble_block_operator("C", N0, zk))
    if "R3" in families:
        sel = kabs <= kmax
        excluded = np.zeros(nsamp, dtype=bool)
        bound = 0.0
        for j in tail:
            if j > 2 * kmax:
                continue
            B = assemble_block_operator("B", N0, zk, j=j, Omega_j=fmap.Omega[j])
            mu = np.linalg.eigvals(B)
            order = len(mu)
            for i in np.flatnonzero(sel):
                thr = params.gamma_3m / max(1.0, float(kabs[i])) ** params.tau_3
                det = np.abs(1j * vals[i][None, :] + mu[:, None]).prod(axis=0)
                viol = det < thr
                excluded |= viol
                bound += _strip_fraction_bound(thr ** (1.0 / order), proj[i], grid) * order
        fractions["R3"] = float(excluded.mean())
        bounds["R3"] = min(1.0, bound)

    ratios = {f: (fractions[f] / bounds[f] if bounds[f] > 0 else 0.0)
              for f in fractions}
    b = max(dims.b, 1)
    mu_exp = 1.0 if fmap.d > 1 else 0.5
    K_prev = max(k_lo, 1.0)
    per_step = (params.gamma_m ** mu_exp / (1.0 + K_prev)
                + params.gamma_m ** (1.0 / (4 * b * b)) / params.m ** 2)
    # cumulative check: the empirically surviving fraction must not undershoot
    # 1 - (sum of family bounds) by more than the grid resolution
    excl_sum = sum(fractions.values())
    bound_sum = min(1.0, sum(bounds.values()))
    cumulative_ok = bool(1.0 - excl_sum >= 1.0 - bound_sum - grid.resolution_error * grid.ndim)
    lip_lo, lip_hi = lipschitz_quotients(fmap, grid)
    return MeasureReport(fractions, bounds, ratios, per_step, cumulative_ok,
                         grid.resolution_error, nsamp, lip_lo, lip_hi, rows)


def rows_to_csv(rows):
    lines = ["family,k,threshold,excluded_fraction,analytic_bound"]
    for r in rows:
        lines.append("%s,%s,%.12g,%.12g,%.12g"
                     % (r.family, " ".join(map(str, r.k)), r.threshold,
                        r.excluded_fraction, r.analytic_bound))
    return "\n".join(lines) + "\n"
