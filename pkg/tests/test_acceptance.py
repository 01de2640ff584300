"""Acceptance gate: one check per criterion at its stated tolerance.

Each test prints a single ``criterion N ... PASS|FAIL`` line (visible with
``pytest -s`` or in the ``-rA`` summary) and then asserts.
"""

import math
import time

import numpy as np
import pytest

from sipht import (
    GAMMA_NV,
    FieldConfig,
    ModulationConfig,
    PropagatorOptions,
    SweepSpec,
    bs_bounds_from_curve,
    build_dd_sequence,
    bs_mod_period,
    default_max_step,
    fit_dipolar,
    fit_power_law,
    magnetometry_curve,
    phi_nv_analytic,
    propagate,
)
from sipht.scenarios import FIG3_RATIOS, MHZ, UT, dipolar_field, fig3_pairs, run_fig3, run_fig4a, run_fig4b, write_table

TWO_PI = 2 * math.pi
F4A = dict(b_d=102 * UT, f_d=152e3, omega=9.6 * MHZ, n_points=720)
FIG3_EXACT = (97 * UT, 3.32 * MHZ)
RESULTS = {}


def report(capsys, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    with capsys.disabled():
        print("\n" + line)
    return ok


def random_sets(n, seed):
    rng = np.random.default_rng(seed)
    kinds = [("hahn", 1), ("cpmg", 2), ("cpmg", 3), ("cpmg", 6), ("xy8", 8)]
    for _ in range(n):
        b_d = rng.uniform(0, 300e-6)
        cfg = FieldConfig(b_d=b_d, f_d=rng.uniform(50e3, 500e3), b_s=rng.uniform(0, 30e-6),
                          delta=rng.uniform(0, TWO_PI))
        mod = ModulationConfig(b_d_mod=rng.uniform(0, 1.2) * b_d, b_s_mod=rng.uniform(0, 30e-6),
                               delta_mod=rng.uniform(0, TWO_PI))
        kind, n_pi = kinds[rng.integers(len(kinds))]
        yield cfg, mod, kind, n_pi, rng.uniform(0, TWO_PI)


def oracle_errors(n, seed, opts):
    errs = []
    for cfg, mod, kind, n_pi, p in random_sets(n, seed):
        seq = build_dd_sequence(kind, n_pi, cfg, p=p, idealized=True)
        phi = propagate(seq, cfg, mod, opts).phi_nv
        ref = phi_nv_analytic(cfg, mod, seq.sensing_periods, p)
        errs.append((phi, abs(phi - ref) / max(abs(ref), 1e-12)))
    return errs


def fig3_rows(opts=None):
    pairs = fig3_pairs(FIG3_RATIOS) + [FIG3_EXACT]
    return run_fig3(pairs, n_points=32, opts=opts)


def test_criterion_1_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    errs = oracle_errors(500, 2024, PropagatorOptions(record=False))
    elapsed = time.perf_counter() - t0
    worst = max(e for _, e in errs)
    RESULTS["phi_default"] = np.array([phi for phi, _ in errs[:100]])
    ok = worst < 1e-6 and elapsed < 60
    assert report(capsys, 1, ok, f"500 sets, max rel err {worst:.2e} (< 1e-6), {elapsed:.1f} s (< 60 s)")


def test_criterion_2_sipht_null(capsys):
    numeric = run_fig4a(**F4A, mode="numeric_finite")
    analytic = run_fig4a(**F4A, mode="analytic")
    RESULTS["leakage_default"] = numeric["leakage"]
    ok = numeric["leakage"] < 1e-3 and analytic["leakage"] == 0.0
    assert report(capsys, 2, ok, f"numeric leakage {numeric['leakage']:.3e} (< 1e-3), "
                                 f"analytic leakage {analytic['leakage']!r} (== 0)")


def test_criterion_3_contrast_preservation(capsys):
    rows = fig3_rows()
    RESULTS["fig3_default"] = rows
    grid, exact = rows[:-1], rows[-1]
    ratios = [r["ratio"] for r in grid]
    monotone = all(b >= a for a, b in zip(ratios, ratios[1:]))
    ok = abs(exact["ratio"] - 2.0) <= 0.5 and monotone and ratios[-1] >= 4
    grid_txt = ", ".join(f"{r['drive_over_rabi']:.2f}:{r['ratio']:.3g}" for r in grid)
    assert report(capsys, 3, ok, f"ratio at 97 uT/3.32 MHz = {exact['ratio']:.3f} (2.0 +- 0.5); "
                                 f"grid {grid_txt}; monotone={monotone}; at 1.75 = {ratios[-1]:.1f} (>= 4)")


def test_criterion_4_delta_recovery(capsys):
    rows = run_fig4b(n_delta=16, seeds=100, noise_std=0.01)
    bias = max(abs(r["mean_error"]) for r in rows)
    gap = max(r["max_symmetry_gap"] for r in rows)
    ok = len(rows) == 32 and math.degrees(bias) < 1.0 and gap < 1.0
    assert report(capsys, 4, ok, f"max |mean delta error| {math.degrees(bias):.4f} deg (< 1 deg), "
                                 f"max symmetry-fit gap {gap:.3f} spacings (< 1)")


def test_criterion_5_eta_bounds(capsys):
    b_values = np.geomspace(0.1 * UT, 30 * UT, 200)
    hits = 0
    for i, b_s in enumerate(b_values):
        cfg = FieldConfig(b_d=100 * UT, f_d=152e3, b_s=float(b_s), delta=0.37 * i % TWO_PI)
        curve = magnetometry_curve(SweepSpec.p_period(2048), cfg, ModulationConfig.sipht(cfg))
        lo, hi = bs_bounds_from_curve(curve)
        hits += lo <= b_s <= hi
    ok = hits == len(b_values)
    assert report(capsys, 5, ok, f"bracketed {hits}/{len(b_values)} (100% required)")


def test_criterion_6_dipolar(capsys):
    d = np.array([4e-3, 5e-3, 6e-3, 8e-3, 10e-3])
    pts = list(zip(d, dipolar_field(d, 1e-14, 2e-3)))
    fit = fit_dipolar(pts)
    rel = max(abs(fit.amplitude / 1e-14 - 1), abs(fit.d0_hat / 2e-3 - 1))
    n = fit_power_law(pts).exponent
    ok = rel < 1e-6 and abs(n - 3.0) <= 0.10
    assert report(capsys, 6, ok, f"round-trip rel err {rel:.2e} (< 1e-6), free exponent {n:.4f} (3.00 +- 0.10)")


def test_criterion_7_spot_values(capsys):
    cfg = FieldConfig(b_d=100 * UT, f_d=152e3, b_s=4 * UT, delta=0.065 * TWO_PI)
    mod = ModulationConfig.sipht(cfg)
    phi1 = phi_nv_analytic(cfg, mod, 1, cfg.delta)
    phi2 = phi_nv_analytic(cfg, mod, 2, cfg.delta)
    spot_ok = abs(phi1 - 2.95) <= 1e-3
    double_ok = phi2 == 2 * phi1
    ok = spot_ok and double_ok
    assert report(capsys, 7, ok, f"phi = {phi1:.6f} rad vs 2.95 +- 1e-3 (|diff| {abs(phi1 - 2.95):.2e}, "
                                 f"gamma = 2pi*{GAMMA_NV / TWO_PI / 1e9:g} GHz/T); "
                                 f"doubling exact={double_ok}")


def test_criterion_8_determinism_and_convergence(capsys, tmp_path):
    for key in ("phi_default", "leakage_default", "fig3_default"):
        if key not in RESULTS:
            pytest.skip("depends on criteria 1-3 running first in this session")
    checks = []

    def half(cfg, mod):
        return PropagatorOptions(max_step=default_max_step(cfg, mod) / 2, record=False)

    phis = []
    for cfg, mod, kind, n_pi, p in list(random_sets(500, 2024))[:100]:
        seq = build_dd_sequence(kind, n_pi, cfg, p=p, idealized=True)
        phis.append(propagate(seq, cfg, mod, half(cfg, mod)).phi_nv)
    d1 = float(np.max(np.abs(np.array(phis) - RESULTS["phi_default"])
                      / np.maximum(np.abs(RESULTS["phi_default"]), 1e-12)))
    checks.append(("phase", d1, 1e-6))

    cfg4a = FieldConfig(b_d=F4A["b_d"], f_d=F4A["f_d"])
    # the three fig4a sweeps share one step: halve the smallest default
    leak = run_fig4a(**F4A, mode="numeric_finite", opts=half(cfg4a, ModulationConfig.sipht(cfg4a)))["leakage"]
    checks.append(("leakage", abs(leak - RESULTS["leakage_default"]), 1e-3))

    cfg3 = FieldConfig(b_d=250 * UT, f_d=149e3)
    rows_half = fig3_rows(half(cfg3, ModulationConfig(b_d_mod=cfg3.b_d, b_s_mod=bs_mod_period(cfg3.f_d))))
    d3 = max(abs(a["ratio"] - b["ratio"]) for a, b in zip(rows_half, RESULTS["fig3_default"]))
    checks.append(("fig3 ratio", d3, 0.5))

    converged = all(delta < tol for _, delta, tol in checks)

    counter = iter(range(100))

    def table_bytes(rows):
        return write_table(tmp_path / f"t{next(counter)}.csv", rows).read_bytes()

    rerun3 = fig3_rows()
    small = dict(n_delta=4, seeds=10)
    identical = (table_bytes(rerun3) == table_bytes(RESULTS["fig3_default"])
                 and table_bytes(run_fig4b(**small)) == table_bytes(run_fig4b(**small)))
    ok = converged and identical
    detail = "; ".join(f"{name} change {delta:.2e} (< {tol:g})" for name, delta, tol in checks)
    assert report(capsys, 8, ok, f"halved max_step: {detail}; reruns byte-identical={identical}")
