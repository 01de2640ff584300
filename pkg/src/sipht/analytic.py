"""Closed-form phase accumulation, contrast readout and magnetometry curves."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .fields import GAMMA_NV, FieldConfig, ModulationConfig, config_to_dict

TWO_PI = 2 * math.pi
SWEEP_PARAMS = ("p_offset", "bs_mod", "bd_over_omega", "distance")
MODES = ("analytic", "numeric_ideal", "numeric_finite")
WORKERS_ENV = "SIPHT_WORKERS"


@dataclass(frozen=True)
class ReadoutModel:
    """Readout ``C = c0 + c_star*cos(phi + varphi)``."""

    c0: float = 0.0
    c_star: float = 1.0
    varphi: float = math.pi / 2

    def __post_init__(self):
        if self.c_star < 0:
            raise ValueError("c_star must be >= 0")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    start: float
    stop: float
    count: int
    endpoint: bool = True

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMS:
            raise ValueError(f"sweep parameter must be one of {SWEEP_PARAMS}")
        if self.count < 2:
            raise ValueError("count must be >= 2")
        if not self.start < self.stop:
            raise ValueError("start must be < stop")

    @classmethod
    def p_period(cls, count: int = 256) -> SweepSpec:
        """Uniform sweep of p over [0, 2*pi) without the duplicate endpoint."""
        return cls("p_offset", 0.0, TWO_PI, count, endpoint=False)

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count, endpoint=self.endpoint)


def phase_per_tesla(f_d: float, n_pi: float = 1, gamma: float = GAMMA_NV) -> float:
    """Accumulated phase per tesla of in-phase field, ``2*gamma*n_pi/(pi*f_d)``."""
    return 2 * gamma * n_pi / (math.pi * f_d)


def phi_nv_analytic(cfg: FieldConfig, mod: ModulationConfig, n_pi: float = 1, p=0.0,
                    gamma: float = GAMMA_NV):
    """Net spin phase of a drive-synchronized DD sequence at pulse-train offset ``p``.

    ``n_pi`` multiplies a single Hahn-echo period; for CPMG/XY8 pass the
    sequence's ``sensing_periods``. Vectorized over ``p``.
    """
    p = np.asarray(p, dtype=float)
    k = phase_per_tesla(cfg.f_d, n_pi, gamma)
    out = k * ((cfg.b_d - mod.b_d_mod) * np.cos(p)
               + cfg.b_s * np.cos(p - cfg.delta)
               - mod.b_s_mod * np.cos(p - mod.delta_mod))
    return float(out) if out.ndim == 0 else out


def contrast_from_phase(phi, readout: ReadoutModel):
    out = readout.c0 + readout.c_star * np.cos(np.asarray(phi, dtype=float) + readout.varphi)
    return float(out) if out.ndim == 0 else out


def bs_mod_period(f_d: float, n_pi: float = 1, gamma: float = GAMMA_NV) -> float:
    """``b_s_mod`` increment that advances the phase by 2*pi (one curve period)."""
    return TWO_PI / phase_per_tesla(f_d, n_pi, gamma)


@dataclass
class ContrastCurve:
    """Contrast sampled against a swept parameter, with its generating configuration.

    For ``bs_mod`` sweeps ``p`` records the fixed pulse-train offset.
    """

    sweep_param: str
    values: np.ndarray
    contrast: np.ndarray
    cfg: FieldConfig
    mod: ModulationConfig
    readout: ReadoutModel
    n_pi: int = 1
    kind: str = "hahn"
    sensing_periods: float = 1.0
    mode: str = "analytic"
    p: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.contrast = np.asarray(self.contrast, dtype=float)
        if self.values.shape != self.contrast.shape:
            raise ValueError("values and contrast must have the same length")
        order = np.argsort(self.values, kind="stable")
        self.values, self.contrast = self.values[order], self.contrast[order]

    def __len__(self):
        return len(self.values)

    @property
    def spacing(self) -> float:
        return float(np.median(np.diff(self.values)))

    def with_contrast(self, contrast) -> ContrastCurve:
        return replace(self, contrast=np.asarray(contrast, dtype=float), extra=dict(self.extra))

    def metadata(self) -> dict:
        return {
            "sweep_param": self.sweep_param,
            "field": config_to_dict(self.cfg),
            "modulation": config_to_dict(self.mod),
            "readout": {k: float(v) for k, v in asdict(self.readout).items()},
            "n_pi": self.n_pi,
            "kind": self.kind,
            "sensing_periods": self.sensing_periods,
            "mode": self.mode,
            "p": self.p,
            "extra": self.extra,
        }

    def to_csv(self, path) -> Path:
        """Write ``value,contrast`` rows plus a ``.json`` sidecar; returns the CSV path."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([self.sweep_param, "contrast"])
            for v, c in zip(self.values, self.contrast):
                writer.writerow([repr(float(v)), repr(float(c))])
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path, meta: dict | None = None) -> ContrastCurve:
        """Read a curve; the sidecar next to ``path`` is used unless ``meta`` is given."""
        path = Path(path)
        if meta is None:
            meta = json.loads(path.with_suffix(".json").read_text())
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [(float(a), float(b)) for a, b in reader]
        if header[0] != meta["sweep_param"]:
            raise ValueError(f"{path}: column {header[0]!r} does not match sidecar {meta['sweep_param']!r}")
        values, contrast = (np.array(col) for col in zip(*rows)) if rows else (np.array([]), np.array([]))
        return cls(
            sweep_param=meta["sweep_param"],
            values=values,
            contrast=contrast,
            cfg=FieldConfig(**meta["field"]),
            mod=ModulationConfig(**meta.get("modulation", {})),
            readout=ReadoutModel(**meta.get("readout", {})),
            n_pi=int(meta.get("n_pi", 1)),
            kind=meta.get("kind", "hahn"),
            sensing_periods=float(meta.get("sensing_periods", 1.0)),
            mode=meta.get("mode", "analytic"),
            p=meta.get("p"),
            extra=meta.get("extra", {}),
        )


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def _numeric_point(args):
    from .propagator import contrast_from_trajectory, propagate
    from .sequences import build_dd_sequence

    cfg, mod, readout, kind, n_pi, p, rabi, idealized, opts = args
    seq = build_dd_sequence(kind, n_pi, cfg, p=p, rabi=rabi, idealized=idealized, varphi=readout.varphi)
    traj = propagate(seq, cfg, mod, opts)
    return contrast_from_trajectory(traj, readout), traj.phi_nv


def map_points(func, items, workers: int | None = None) -> list:
    """Evaluate ``func`` over ``items`` in order, optionally in a process pool."""
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items, chunksize=max(1, len(items) // (4 * n))))


def magnetometry_curve(
    sweep: SweepSpec,
    cfg: FieldConfig,
    mod: ModulationConfig,
    readout: ReadoutModel | None = None,
    n_pi: int = 1,
    kind: str = "hahn",
    mode: str = "analytic",
    p: float = math.pi / 2,
    rabi: float | None = None,
    opts=None,
    workers: int | None = None,
) -> ContrastCurve:
    """Contrast versus pulse-train offset ``p`` or modulation amplitude ``b_s_mod``.

    ``mode="analytic"`` evaluates the closed form. The numeric modes build a
    sequence per point and propagate it (``numeric_finite`` needs ``rabi``).
    ``p`` is only used for ``bs_mod`` sweeps.
    """
    readout = readout or ReadoutModel()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if sweep.parameter not in ("p_offset", "bs_mod"):
        raise ValueError("magnetometry curves sweep p_offset or bs_mod")
    if kind == "hahn":
        sensing = 1.0
    else:
        sensing = n_pi / 2
    xs = sweep.values()
    if sweep.parameter == "p_offset":
        points = [(cfg, mod, float(x)) for x in xs]
        fixed_p = None
    else:
        if xs.min() < 0:
            raise ValueError("b_s_mod sweep must be non-negative")
        points = [(cfg, mod.with_(b_s_mod=float(x)), p) for x in xs]
        fixed_p = float(p)

    extra = {}
    if mode == "analytic":
        phis = np.array([phi_nv_analytic(c, m, sensing, pp) for c, m, pp in points])
        contrast = contrast_from_phase(phis, readout)
    else:
        idealized = mode == "numeric_ideal"
        if not idealized and rabi is None:
            raise ValueError("numeric_finite mode needs rabi")
        args = [(c, m, readout, kind, n_pi, pp, rabi, idealized, opts) for c, m, pp in points]
        results = map_points(_numeric_point, args, workers)
        contrast = np.array([r[0] for r in results])
        phis = np.array([r[1] for r in results])
        if rabi is not None and not idealized:
            extra["rabi"] = float(rabi)
    extra["phi_nv"] = [float(x) for x in np.atleast_1d(phis)]

    return ContrastCurve(
        sweep_param=sweep.parameter,
        values=xs,
        contrast=np.atleast_1d(contrast),
        cfg=cfg,
        mod=mod,
        readout=readout,
        n_pi=n_pi,
        kind=kind,
        sensing_periods=sensing,
        mode=mode,
        p=fixed_p,
        extra=extra,
    )
