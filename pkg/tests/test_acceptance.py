"""Acceptance gate: one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from frepel.cli import main
from frepel.energy import local_time, local_time_delta
from frepel.fbm import (RngStream, TimeGrid, fgn_autocovariance, sample_path_cholesky,
                        sample_paths_cholesky, sample_paths_circulant)
from frepel.flory import (alt_flory_nu, critical_dimension, flory_index,
                          interpolation_constraints_check, kosmas_freed_residual,
                          recursion_extrapolate, recursion_invariant)
from frepel.gibbs import METROPOLIS_NOISE, SamplerConfig, estimate_partition, estimate_r2
from frepel.lab import (ExperimentPlan, fit_exponent, run_r2_sweep, slab_reduction_experiment,
                        test_scale_invariance as scale_invariance, verify_end_density)

pytestmark = pytest.mark.acceptance

SEED = 20240601
LADDER = (8.0, 16.0, 32.0, 64.0)


def mcmc_config(g, stream, n_chains=64):
    return SamplerConfig(method=METROPOLIS_NOISE, g=g, n_chains=n_chains, seed=SEED, stream_id=stream)


def test_criterion_01_closed_form_identities(verdict):
    start = time.perf_counter()
    worst = 0.0
    hs = [round(0.05 * k, 2) for k in range(1, 20)]
    for h in hs:
        for d in range(1, 20):
            if h * d >= 2:
                continue
            nu = flory_index(h, d).nu
            worst = max(worst, abs(recursion_invariant(nu, h, d) - 1 / (2 * h + 2)))
            worst = max(worst, abs(recursion_extrapolate((2 * h + 2) / 3, h, d) - nu))
    rng = np.random.default_rng(SEED)
    for nu1 in rng.uniform(0, 2, 20):
        if nu1 == 0:
            continue
        h = float(rng.uniform(0.05, 0.95))
        worst = max(worst, abs(recursion_extrapolate(nu1, h, 2 / h) - h))
    for d in (1, 2, 3, 4):
        worst = max(worst, abs(kosmas_freed_residual(1.0, 3 / (d + 2), d)))
    for d in (3, 4, 5, 6):
        for f in (lambda h: flory_index(h, d).nu, lambda h: float(alt_flory_nu(h, d))):
            worst = max(worst, *map(abs, interpolation_constraints_check(f, d)))
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-12 and elapsed < 1.0,
            f"closed-form identities, max residual {worst:.2e}, {elapsed:.3f} s")


def test_criterion_02_known_values(verdict):
    ok = (flory_index(0.5, 3).nu == 0.6 and flory_index(0.5, 4).nu == 0.5
          and critical_dimension(0.5) == 4 and flory_index(0.75, 1).nu_d1_piecewise == 1.0
          and flory_index(0.6, 1).nu_d1_piecewise == 1.0)
    verdict(2, ok, "nu(0.5,3)=0.6, nu(0.5,4)=0.5, d_c(0.5)=4, piecewise nu(1)=1 for H>1/2")


def _covariance_z(inc, gamma):
    m, n = inc.shape
    worst = 0.0
    for i in range(n):
        prod = inc[:, i:] * inc[:, : n - i]  # lag i products, columns are start times
        est = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / math.sqrt(m)
        worst = max(worst, float(np.max(np.abs(est - gamma[i]) / se)))
    return worst


def test_criterion_03_sampler_fidelity(verdict):
    grid = TimeGrid(32, 1.0)
    details, ok = [], True
    for k, h in enumerate((0.3, 0.5, 0.7)):
        gamma = fgn_autocovariance(h, grid).values
        chol = sample_paths_cholesky(h, grid, 1, RngStream(SEED, (3, k, 0)), 20000)[..., 0]
        circ = sample_paths_circulant(h, grid, 1, RngStream(SEED, (3, k, 1)), 20000)[..., 0]
        z_cov = max(_covariance_z(np.diff(chol, axis=1), gamma),
                    _covariance_z(np.diff(circ, axis=1), gamma))
        x, y = chol[:, 1:], circ[:, 1:]
        m = x.shape[0]
        z_mean = np.max(np.abs(x.mean(0) - y.mean(0)) / np.sqrt((x.var(0) + y.var(0)) / m))
        vx, vy = x.var(0, ddof=1), y.var(0, ddof=1)
        z_var = np.max(np.abs(vx - vy) / np.sqrt(2 * (vx**2 + vy**2) / (m - 1)))
        ok &= z_cov < 4 and z_mean < 4 and z_var < 4
        details.append(f"H={h}: cov {z_cov:.2f}, mean {z_mean:.2f}, var {z_var:.2f}")
    for k, (h, n, d) in enumerate(((0.5, 1.0, 1), (0.7, 2.0, 2), (0.3, 4.0, 3))):
        rep = verify_end_density(h, d, n, 20000, RngStream(SEED, (3, 9, k)), n_steps=32)
        ok &= rep.variance_z < 4
        details.append(f"endpoint({h},{n:g},{d}) {rep.variance_z:.2f}")
    verdict(3, ok, "max |z| " + "; ".join(details))


def test_criterion_04_free_oracle(verdict):
    details, ok = [], True
    for i, h in enumerate((0.3, 0.5, 0.7)):
        for d in (1, 2, 3):
            stream = (4, i, d)
            cfg = SamplerConfig(g=0.0, n_replicas=20000, seed=SEED, stream_id=stream)
            grid = TimeGrid(32, 4.0)
            z = estimate_partition(h, grid, d, cfg)
            r2 = estimate_r2(h, grid, d, cfg)
            z_r2 = abs(r2.value - d * 4.0 ** (2 * h)) / r2.std_error
            plan = ExperimentPlan(h, d, LADDER, SamplerConfig(g=0.0, n_replicas=20000, seed=SEED,
                                                              stream_id=stream + (1,)))
            fit = fit_exponent(run_r2_sweep(plan))
            z_nu = abs(fit.nu - h) / fit.nu_std_error
            case_ok = z.value == 1.0 and z.std_error == 0.0 and z_r2 < 3 and z_nu < 2
            ok &= case_ok
            details.append(f"({h},{d}) r2 z={z_r2:.2f} nu={fit.nu:.4f} z={z_nu:.2f}")
    verdict(4, ok, "Z=1 exact; " + "; ".join(details))


def test_criterion_05_estimator_cross_validation(verdict):
    grid = TimeGrid(16, 1.0)
    details, ok = [], True
    for i, (h, d, g) in enumerate(((0.5, 1, 0.5), (0.5, 2, 0.5), (0.3, 2, 0.5))):
        a = estimate_r2(h, grid, d, SamplerConfig(g=g, n_replicas=200000, seed=SEED,
                                                  stream_id=(5, i, 0)))
        b = estimate_r2(h, grid, d, mcmc_config(g, (5, i, 1), n_chains=128))
        z = abs(a.value - b.value) / math.hypot(a.std_error, b.std_error)
        ok &= z < 3
        details.append(f"({h},{d},{g}) IS {a.value:.4f}+-{a.std_error:.4f} "
                       f"MH {b.value:.4f}+-{b.std_error:.4f} z={z:.2f}")
    verdict(5, ok, "; ".join(details))


def test_criterion_06_scale_invariance(verdict):
    details, ok = [], True
    for i, h in enumerate((0.5, 0.4)):
        cfg = SamplerConfig(n_replicas=100000, seed=SEED, stream_id=(6, i))
        rep = scale_invariance(h, 2, 0.5, 1.0, 2.0, cfg, n_steps=32)
        ok &= rep.z_score < 3
        details.append(f"H={h}: Z={rep.lhs.value:.5f} vs {rep.rhs.value:.5f} z={rep.z_score:.2f}")
    verdict(6, ok, "; ".join(details))


def test_criterion_07_swelling_and_line_exponent(verdict):
    fits = {}
    for d in (2, 1):
        plan = ExperimentPlan(0.5, d, LADDER, mcmc_config(0.5, (7, d)))
        sweep = run_r2_sweep(plan)
        fits[d] = (fit_exponent(sweep), sweep.partial)
    f2, f1 = fits[2][0], fits[1][0]
    swell = f2.nu - 0.5 > 2 * f2.nu_std_error
    line = 0.85 <= f1.nu <= 1.05
    verdict(7, swell and line,
            f"d=2 nu={f2.nu:.4f}+-{f2.nu_std_error:.4f} (needs > 0.5 + 2 SE: {swell}); "
            f"d=1 nu={f1.nu:.4f}+-{f1.nu_std_error:.4f} (needs [0.85, 1.05]: {line}); "
            f"flagged points d=2 {fits[2][1]}, d=1 {fits[1][1]}")


def test_criterion_08_incremental_energy(verdict):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for trial in range(1000):
        n = int(rng.integers(2, 33))
        d = int(rng.integers(1, 4))
        path = sample_path_cholesky(float(rng.uniform(0.1, 0.9)), TimeGrid(n, 1.0), d,
                                    RngStream(SEED, (8, trial)))
        eps = float(rng.uniform(0.005, 0.5))
        k = int(rng.integers(0, n + 1))
        new = path.positions[k] + rng.normal(size=d)
        moved = path.positions.copy()
        moved[k] = new
        before = local_time(path, eps).local_time
        full = local_time(path.with_positions(moved), eps).local_time - before
        inc = local_time_delta(path, eps, k, new)
        worst = max(worst, abs(inc - full) / max(abs(full), before))
    verdict(8, worst < 1e-9, f"1000 single-point moves, max relative deviation {worst:.2e}")


def test_criterion_09_slab_growth(verdict):
    widths = [4.0, 2.0, 1.0, 0.5]
    res = slab_reduction_experiment(0.5, 2, 0.0, 1.0, widths, mcmc_config(0.0, (9,)), n_steps=32)
    free = res.unconstrained
    last = [r for r in res.rungs if not r.dropped][-1]
    se = math.hypot(free.std_error, last.estimate.std_error)
    grew = last.estimate.value - free.value > 2 * se
    ladder = ", ".join(f"D={r.width:g}: {r.estimate.value:.3f}" for r in res.rungs if not r.dropped)
    verdict(9, grew, f"free {free.value:.3f}+-{free.std_error:.3f}; {ladder}; "
                     f"smallest rung minus free = {(last.estimate.value - free.value) / se:+.1f} SE")


def _replay_ok(tmp_path, name, argv):
    first = tmp_path / name / "first"
    if main([str(a) for a in argv] + ["--out", str(first)]) != 0:
        return False
    manifest = first / "manifest.json"
    return main(["replay", str(manifest), "--out", str(tmp_path / name / "second")]) == 0


def test_criterion_10_reproducibility(verdict, tmp_path, capsys):
    commands = {
        "regime-map": ["regime-map", "--h-steps", 7, "--d-max", 6],
        "simulate": ["simulate", "--hurst", 0.3, "--dim", 2, "--paths", 3, "--seed", 1,
                     "--path-method", "circulant"],
        "sweep-is": ["sweep", "--hurst", 0.5, "--dim", 1, "--g", 0, "--ladder", "8,16,32,64",
                     "--seed", 7, "--replicas", 4096],
        "sweep-mh": ["sweep", "--hurst", 0.5, "--dim", 2, "--g", 0.5, "--seed", 7,
                     "--method", METROPOLIS_NOISE, "--chains", 8, "--mcmc-steps", 300,
                     "--burn-in", 100, "--n-steps", 16],
        "invariance": ["invariance", "--hurst", 0.5, "--dim", 2, "--g", 0.5, "--seed", 7,
                       "--replicas", 4096],
        "eps-scan": ["eps-scan", "--hurst", 0.4, "--dim", 2, "--g", 0.5, "--seed", 3,
                     "--replicas", 4096],
        "slab": ["slab", "--hurst", 0.5, "--dim", 2, "--g", 0.5, "--seed", 3, "--replicas", 4096,
                 "--widths", "1e6,4,2"],
    }
    results = {name: _replay_ok(tmp_path, name, argv) for name, argv in commands.items()}
    capsys.readouterr()
    verdict(10, all(results.values()),
            "manifest replay byte-identical: " + ", ".join(f"{k}={v}" for k, v in results.items()))
