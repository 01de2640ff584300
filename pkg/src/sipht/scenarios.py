"""Desk-scale reproductions of the SIPHT magnetometry experiments.

Every runner is deterministic: sweeps use fixed grids and noise comes from
``numpy.random.default_rng(seed)``. Runners return data; writing files is
left to :func:`write_json`, :func:`write_table` and the CLI.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analytic import (
    ContrastCurve,
    ReadoutModel,
    SweepSpec,
    bs_mod_period,
    magnetometry_curve,
    phase_per_tesla,
)
from .estimation import (
    SymmetryWarning,
    delta_from_symmetry,
    fit_contrast_curve,
    fit_dipolar,
    fit_power_law,
    measure_leakage,
)
from .fields import GAMMA_NV, FieldConfig, ModulationConfig, config_to_dict

TWO_PI = 2 * math.pi
MHZ = TWO_PI * 1e6
UT = 1e-6

FIG2_OMEGAS = (9.6 * MHZ, 2.8 * MHZ)
FIG3_RATIOS = (0.1, 0.3, 0.5, 0.81, 1.2, 1.75)
MATERIAL_DELTAS = {"Cu": 0.48 * TWO_PI, "Al": 0.47 * TWO_PI, "Ti": 0.31 * TWO_PI}


@dataclass
class Scenario:
    name: str
    cfg: FieldConfig
    mod: ModulationConfig
    sequence: dict
    sweep: SweepSpec
    mode: str = "analytic"
    readout: ReadoutModel = field(default_factory=ReadoutModel)
    output_path: str | None = None

    def run(self, opts=None, workers=None) -> ContrastCurve:
        seq = dict(self.sequence)
        return magnetometry_curve(
            self.sweep, self.cfg, self.mod, self.readout,
            n_pi=seq.get("n_pi", 1), kind=seq.get("kind", "hahn"), mode=self.mode,
            p=seq.get("p", math.pi / 2), rabi=seq.get("rabi"), opts=opts, workers=workers,
        )


def add_noise(curve: ContrastCurve, std: float, seed: int) -> ContrastCurve:
    """Additive Gaussian contrast noise with standard deviation ``std*c_star``."""
    rng = np.random.default_rng(seed)
    noisy = curve.contrast + std * curve.readout.c_star * rng.standard_normal(len(curve))
    out = curve.with_contrast(noisy)
    out.extra.update(noise_std=std, seed=seed)
    return out


def sinusoid_amplitude(values, contrast, rate: float) -> float:
    """Amplitude of the best-fit ``a + b*cos(rate*x) + c*sin(rate*x)``."""
    x = np.asarray(values, dtype=float)
    A = np.column_stack([np.ones_like(x), np.cos(rate * x), np.sin(rate * x)])
    coef, *_ = np.linalg.lstsq(A, np.asarray(contrast, dtype=float), rcond=None)
    return float(math.hypot(coef[1], coef[2]))


# -- fig2: p-sweeps under SIPHT and conventional DD ------------------------

def run_fig2(omega: float = FIG2_OMEGAS[0], n_points: int = 181, mode: str = "numeric_finite",
             b_d: float = 100 * UT, b_s: float = 4 * UT, delta: float = 0.065 * TWO_PI,
             f_d: float = 152e3, readout: ReadoutModel | None = None, opts=None, workers=None):
    """Return ``(sipht_curve, conventional_curve)`` over p in [0, 2*pi)."""
    cfg = FieldConfig(b_d=b_d, f_d=f_d, b_s=b_s, delta=delta)
    sweep = SweepSpec.p_period(n_points)
    kw = dict(readout=readout, mode=mode, rabi=omega, opts=opts, workers=workers)
    sipht = magnetometry_curve(sweep, cfg, ModulationConfig.sipht(cfg), **kw)
    conv = magnetometry_curve(sweep, cfg, ModulationConfig(), **kw)
    for c in (sipht, conv):
        c.extra["omega"] = float(omega)
    return sipht, conv


# -- fig3: contrast preservation vs gamma*B_D/Omega -------------------------

def fig3_pairs(ratios=FIG3_RATIOS, b_d: float = 97 * UT):
    """(b_d, omega) pairs for a grid of gamma*b_d/omega.

    ``b_d`` is held at 97 uT except for the 1.75 point, which uses the
    250 uT / 2*pi*4 MHz example.
    """
    pairs = []
    for r in ratios:
        if math.isclose(r, 1.75):
            pairs.append((250 * UT, 4 * MHZ))
        else:
            pairs.append((b_d, GAMMA_NV * b_d / r))
    return pairs


def run_fig3(pairs=None, f_d: float = 149e3, n_points: int = 32, mode: str = "numeric_finite",
             p: float = math.pi / 2, delta_mod: float = math.pi / 2, opts=None, workers=None):
    """Relative magnetometry amplitude of SIPHT over conventional Hahn echo.

    For each ``(b_d, omega)`` a ``b_s_mod`` sweep over one curve period is
    simulated with and without drive cancellation; each curve's sinusoid
    amplitude is fitted at the known rate.
    """
    pairs = fig3_pairs() if pairs is None else pairs
    period = bs_mod_period(f_d)
    rate = phase_per_tesla(f_d)
    sweep = SweepSpec("bs_mod", 0.0, period, n_points, endpoint=False)
    rows = []
    for b_d, omega in pairs:
        cfg = FieldConfig(b_d=b_d, f_d=f_d)
        kw = dict(mode=mode, p=p, rabi=omega, opts=opts, workers=workers)
        s = magnetometry_curve(sweep, cfg, ModulationConfig(b_d_mod=b_d, delta_mod=delta_mod), **kw)
        c = magnetometry_curve(sweep, cfg, ModulationConfig(delta_mod=delta_mod), **kw)
        a_s = sinusoid_amplitude(s.values, s.contrast, rate)
        a_c = sinusoid_amplitude(c.values, c.contrast, rate)
        rows.append({
            "b_d": float(b_d),
            "omega": float(omega),
            "drive_over_rabi": GAMMA_NV * b_d / omega,
            "amp_sipht": a_s,
            "amp_conventional": a_c,
            "ratio": a_s / a_c if a_c > 0 else math.inf,
        })
    return rows


# -- fig4a: drive rejection ------------------------------------------------

def run_fig4a(b_d: float = 102 * UT, f_d: float = 152e3, omega: float = 9.6 * MHZ, mismatch: float = 0.0,
              n_points: int = 720, mode: str = "numeric_finite", opts=None, workers=None):
    """Three p-sweeps (no drive, drive, drive + SIPHT) and the leakage ratio.

    ``mismatch`` sets ``b_d_mod = (1 - mismatch)*b_d`` for the SIPHT sweep.
    """
    sweep = SweepSpec.p_period(n_points)
    kw = dict(mode=mode, rabi=omega, opts=opts, workers=workers)
    cfg = FieldConfig(b_d=b_d, f_d=f_d)
    reference = magnetometry_curve(sweep, FieldConfig(b_d=0.0, f_d=f_d), ModulationConfig(), **kw)
    conventional = magnetometry_curve(sweep, cfg, ModulationConfig(), **kw)
    sipht = magnetometry_curve(sweep, cfg, ModulationConfig(b_d_mod=(1 - mismatch) * b_d), **kw)
    leakage = measure_leakage(sipht, conventional)
    return {
        "leakage": leakage,
        "rejection": 1 - leakage,
        "mismatch": mismatch,
        "curves": {"reference": reference, "conventional": conventional, "sipht": sipht},
    }


# -- fig4b: delta recovery -------------------------------------------------

def run_fig4b(n_delta: int = 16, settings=((2 * UT, 78 * UT), (7 * UT, 75 * UT)), f_d: float = 160e3,
              n_points: int = 64, noise_std: float = 0.01, seeds: int = 100, mode: str = "analytic",
              omega: float | None = None, opts=None, workers=None):
    """Fit and symmetry-read delta over a grid of true phases.

    One row per (b_s, delta): mean and spread of the fitted delta error, and
    the largest disagreement between the symmetry readout and the fit, in
    units of the p sample spacing.
    """
    deltas = np.arange(n_delta) * TWO_PI / n_delta
    rows = []
    for b_s, b_d in settings:
        for k, delta in enumerate(deltas):
            cfg = FieldConfig(b_d=b_d, f_d=f_d, b_s=b_s, delta=delta)
            clean = magnetometry_curve(SweepSpec.p_period(n_points), cfg, ModulationConfig.sipht(cfg),
                                       mode=mode, rabi=omega, opts=opts, workers=workers)
            errs, sym_gap = [], []
            for seed in range(seeds):
                noisy = add_noise(clean, noise_std, seed=10_000 * k + seed + int(round(b_s / UT)) * 1_000_000)
                fit = fit_contrast_curve(noisy)
                err = (fit.delta_hat - delta + math.pi) % TWO_PI - math.pi
                errs.append(err)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", SymmetryWarning)
                    sym = delta_from_symmetry(noisy)
                gap = abs((sym - fit.delta_hat + math.pi) % TWO_PI - math.pi)
                sym_gap.append(gap / clean.spacing)
            errs = np.array(errs)
            rows.append({
                "b_s": float(b_s),
                "b_d": float(b_d),
                "delta_true": float(delta),
                "mean_error": float(errs.mean()),
                "std_error": float(errs.std(ddof=1)) if len(errs) > 1 else 0.0,
                "max_symmetry_gap": float(max(sym_gap)),
            })
    return rows


# -- fig5: eddy-current response -------------------------------------------

def dipolar_field(d, amplitude: float, d0: float, exponent: float = 3.0):
    return amplitude / (np.asarray(d, dtype=float) + d0) ** exponent


def run_fig5(disks=None, distances=None, amplitude: float = 1e-14, d0: float = 2e-3, b_d: float = 100 * UT,
             f_d: float = 152e3, n_points: int = 128, mode: str = "analytic", noise_std: float = 0.0,
             seed: int = 0, omega: float | None = None, opts=None, workers=None):
    """Synthetic eddy-current response per disk and the distance-scaling fit.

    ``disks`` maps material name to response phase delay (defaults to Cu, Al,
    Ti). Each disk is measured at every distance; b_s comes from
    ``amplitude/(d + d0)^3``.
    """
    disks = dict(MATERIAL_DELTAS) if disks is None else dict(disks)
    distances = np.array([4e-3, 5e-3, 6e-3, 8e-3, 10e-3]) if distances is None else np.asarray(distances)
    materials, points = [], []
    for m_idx, (name, delta) in enumerate(disks.items()):
        per_d = []
        for d_idx, d in enumerate(distances):
            b_s = float(dipolar_field(d, amplitude, d0))
            cfg = FieldConfig(b_d=b_d, f_d=f_d, b_s=b_s, delta=delta)
            curve = magnetometry_curve(SweepSpec.p_period(n_points), cfg, ModulationConfig.sipht(cfg),
                                       mode=mode, rabi=omega, opts=opts, workers=workers)
            if noise_std > 0:
                curve = add_noise(curve, noise_std, seed + 1000 * m_idx + d_idx)
            fit = fit_contrast_curve(curve)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SymmetryWarning)
                sym = delta_from_symmetry(curve)
            per_d.append({"d": float(d), "b_s_true": b_s, "b_s_hat": fit.b_s_hat,
                          "delta_hat": fit.delta_hat, "delta_symmetry": sym})
            points.append((float(d), fit.b_s_hat))
        materials.append({
            "material": name,
            "delta_true": float(delta),
            "delta_hat": float(np.angle(np.mean(np.exp(1j * np.array([r["delta_hat"] for r in per_d])))) % TWO_PI),
            "measurements": per_d,
        })
    # one b_s per distance for the distance series (disks share the dipolar amplitude)
    by_d = {}
    for d, b in points:
        by_d.setdefault(d, []).append(b)
    series = sorted((d, float(np.mean(bs))) for d, bs in by_d.items())
    return {
        "materials": materials,
        "distance_series": series,
        "dipolar_fit": fit_dipolar(series),
        "power_law_fit": fit_power_law(series),
    }


# -- output ------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (FieldConfig, ModulationConfig)):
        return config_to_dict(obj)
    if isinstance(obj, ContrastCurve):
        return obj.metadata()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def write_table(path, rows: list[dict]) -> Path:
    """CSV of a list of flat dicts, columns in first-row order."""
    import csv

    path = Path(path)
    if not rows:
        path.write_text("")
        return path
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in rows:
            writer.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in cols])
    return path


def scenario_from_dict(data: dict) -> Scenario:
    from .fields import field_config_from_dict, modulation_from_dict

    sweep = SweepSpec(**data["sweep"]) if "sweep" in data else SweepSpec.p_period()
    return Scenario(
        name=data.get("name", "run"),
        cfg=data["field"] if isinstance(data["field"], FieldConfig) else field_config_from_dict(data["field"]),
        mod=(data.get("modulation") if isinstance(data.get("modulation"), ModulationConfig)
             else modulation_from_dict(data.get("modulation", {}))),
        sequence=dict(data.get("sequence", {})),
        sweep=sweep,
        mode=data.get("mode", "analytic"),
        readout=ReadoutModel(**data.get("readout", {})),
        output_path=data.get("output_path"),
    )


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "name": sc.name,
        "field": config_to_dict(sc.cfg),
        "modulation": config_to_dict(sc.mod),
        "sequence": dict(sc.sequence),
        "sweep": asdict(sc.sweep),
        "mode": sc.mode,
        "readout": asdict(sc.readout),
        "output_path": sc.output_path,
    }
