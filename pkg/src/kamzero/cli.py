"""Command-line entry points: run, nls-build, measure, check."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import driver, measure, nls
from .config import ConfigError, parse_config
from .homological import ResonantParameter
from .reporting import emit_measure_report, emit_report, report_json
from .series import Budgets, DomainParams, SeriesDims


def _load(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _budgets(cfg):
    b = cfg["budgets"]
    return Budgets(b["degree_max"], b["k_max"], b["prune_rel"])


def _domain(cfg, s, r):
    d = cfg["domain"]
    return DomainParams(s, r, d["a"], d["p"])


def _model(cfg, xi_index=None):
    m = cfg["model"]
    xi = np.asarray(m["xi"], dtype=float)
    if xi_index is not None:
        g = cfg["grid"]
        if g["lo"]:
            grid = measure.ParameterGrid(np.asarray(g["lo"]), np.asarray(g["hi"]),
                                         g["samples_per_axis"])
            xi = grid.samples()[xi_index]
    return nls.NlsModel(m["sites"], m["jmax"], xi, m["taylor_depth"])


def _base_params(cfg, n, b):
    s = cfg["schedule"]
    return driver.BaseParams(n=n, b=b, tau=s["tau"], s1=s["s1"], r1=s["r1"],
                             gamma1=s["gamma1"], eps_floor=s["eps_floor"],
                             r_floor_rel=s["r_floor_rel"],
                             check_k_cap=s["check_k_cap"])


def _build_problem(cfg, xi_index):
    if cfg.mode == "nls":
        model = _model(cfg, xi_index)
        _, kf = nls.build_nls(model, _budgets(cfg))
        base = _base_params(cfg, model.n, 1)
        return kf.N0, kf.R0, kf.dims, base
    sec = cfg["synthetic"]
    zero = sec["zero_mode"]
    dims = SeriesDims(sec["n"], (), tuple(range(zero, zero + sec["b"])), sec["jmax"])
    base = _base_params(cfg, sec["n"], sec["b"])
    dp = _domain(cfg, base.s1, base.r1)
    N0, R0 = driver.make_synthetic_problem(
        dims, _budgets(cfg), sec["eps0"], seed=cfg["run"]["seed"],
        inject_z0=sec["inject_z0"], block_scale=sec["block_scale"],
        n_low=sec["n_low"], n_high=sec["n_high"], dp=dp)
    return N0, R0, dims, base


def cmd_run(cfg, outdir, xi_index, max_steps):
    N0, R0, dims, base = _build_problem(cfg, xi_index)
    dp0 = _domain(cfg, base.s1, base.r1)
    steps = max_steps or cfg["run"]["max_steps"]
    report = driver.run(N0, R0, base, dims, dp0, max_steps=steps,
                        max_lie_order=cfg["run"]["max_lie_order"])
    code, jpath = emit_report(report, outdir)
    print("%s -> %s (exit %d)" % (report.verdict, jpath, code))
    return code


def cmd_nls_build(cfg, outdir, xi_index):
    model = _model(cfg, xi_index)
    bk, kf = nls.build_nls(model, _budgets(cfg))
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "hamiltonian.txt"), "w") as fh:
        fh.write(kf.R0.to_text())
    info = {
        "sites": list(model.sites),
        "jmax": model.jmax,
        "xi": [float(v) for v in model.xi],
        "alpha": [float(v) for v in kf.alpha],
        "A": [[float(v) for v in row] for row in kf.A],
        "omega": [float(v) for v in kf.N0.omega],
        "Omega": {str(j): float(v) for j, v in sorted(kf.N0.Omega.items())},
        "Gbar_sites": [[float(bk.Gbar[i, j]) for j in model.sites] for i in model.sites],
        "max_resonant_leftover": bk.max_resonant_leftover,
        "constant_dropped": {"re": kf.constant_dropped.real, "im": kf.constant_dropped.imag},
        "expansion_dropped": kf.expansion_dropped,
        "terms": len(kf.R0),
        "notes": kf.notes,
    }
    path = os.path.join(outdir, "model.json")
    with open(path, "w") as fh:
        fh.write(report_json(info))
    print("wrote %s and hamiltonian.txt" % path)
    return 0


def cmd_measure(cfg, outdir):
    model = _model(cfg)
    bk, kf = nls.build_nls(model, _budgets(cfg))
    g = cfg["grid"]
    grid = measure.ParameterGrid(np.asarray(g["lo"]), np.asarray(g["hi"]),
                                 g["samples_per_axis"])
    base = _base_params(cfg, model.n, 1)
    fmap = measure.AffineFrequencyMap(kf.alpha, kf.A, dict(kf.N0.Omega))
    reports = {}
    gamma = base.gamma1
    for rung in range(max(1, g["gamma_ladder"])):
        params = driver.schedule(1, driver.BaseParams(
            n=base.n, b=base.b, tau=base.tau, s1=base.s1, r1=base.r1,
            gamma1=gamma, check_k_cap=base.check_k_cap))
        rep = measure.estimate_excluded(fmap, params, kf.dims, grid,
                                        k_lo=g["k_lo"], kmax=g["kmax"])
        name = "measure_gamma_%g" % gamma
        emit_measure_report(rep, outdir, basename=name)
        reports[gamma] = rep.fractions
        gamma *= 0.5
    path = os.path.join(outdir, "measure_ladder.json")
    with open(path, "w") as fh:
        fh.write(report_json({"%g" % g_: f for g_, f in reports.items()}))
    print("wrote %s" % path)
    return 0


def cmd_check(cfg, outdir, max_steps):
    model = _model(cfg)
    bk, kf = nls.build_nls(model, _budgets(cfg))
    dims = kf.dims
    results = {
        "even_k_blocks": [self_describe(v) for v in nls.parity_check(kf.R0, dims, "even_k_blocks")],
        "odd_k_blocks": [self_describe(v) for v in nls.parity_check(kf.R0, dims, "odd_k_blocks")],
        "zero_mode_linear": [self_describe(v) for v in nls.parity_check(kf.R0, dims, "zero_mode_linear")],
        "grading_violations": [self_describe(v) for v in nls.grading_violations(kf.R0, model.sites)],
        "index_classes": nls.classify_index_vectors(kf.R0, dims).value_sets(),
        "birkhoff_resonant_leftover": bk.max_resonant_leftover,
    }
    steps = max_steps or 0
    if steps:
        base = _base_params(cfg, model.n, 1)
        N, R = kf.N0, kf.R0
        eps = driver.vector_field_norm(R, _domain(cfg, base.s1, base.r1))
        r_prev = None
        per_step = []
        for m in range(1, steps + 1):
            params = driver.schedule(m, base, eps_m=eps, r_prev=r_prev)
            dp = _domain(cfg, params.s_m, params.r_m)
            try:
                N, R, rec = driver.kam_step(N, R, params, dims, dp,
                                            max_lie_order=cfg["run"]["max_lie_order"],
                                            eps_measured=eps)
            except (driver.BudgetExhausted, ResonantParameter) as err:
                per_step.append({"m": m, "stopped": str(err)})
                break
            eps = rec.eps_next
            r_prev = params.r_m
            per_step.append({
                "m": m,
                "zero_mode_linear": [self_describe(v) for v in
                                     nls.parity_check(R, dims, "zero_mode_linear")],
                "delta0": rec.delta0,
            })
        results["steps"] = per_step
    ok = not any(results[k] for k in ("even_k_blocks", "zero_mode_linear",
                                      "grading_violations"))
    results["ok"] = ok
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "check.json")
    with open(path, "w") as fh:
        fh.write(report_json(results))
    print("%s -> %s" % ("PASS" if ok else "FAIL", path))
    return 0 if ok else 1


def self_describe(violation):
    key, mag = violation
    return {"k": list(key.k), "alpha": list(key.alpha),
            "beta": [list(p) for p in key.beta],
            "gamma": [list(p) for p in key.gamma], "magnitude": mag}


def main(argv=None):
    ap = argparse.ArgumentParser(prog="kamzero",
                                 description="Taylor-Fourier normal-form engine")
    ap.add_argument("command", choices=("run", "nls-build", "measure", "check"))
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--xi-index", type=int, default=None,
                    help="pick a parameter sample from the [grid] section")
    ap.add_argument("--max-steps", type=int, default=None)
    args = ap.parse_args(argv)
    try:
        cfg = _load(args.config)
    except ConfigError as err:
        for p in err.problems:
            print("config error: %s" % p, file=sys.stderr)
        return 5
    outdir = args.out or cfg["output"]["dir"]
    if args.command == "run":
        return cmd_run(cfg, outdir, args.xi_index, args.max_steps)
    if args.command == "nls-build":
        return cmd_nls_build(cfg, outdir, args.xi_index)
    if args.command == "measure":
        return cmd_measure(cfg, outdir)
    return cmd_check(cfg, outdir, args.max_steps)


if __name__ == "__main__":
    sys.exit(main())
