"""Parameter recovery from contrast curves.

Single p-sweeps only identify the in-phase and quadrature parts of the net
phase, ``X*cos(p) + Y*sin(p)``, so drive leakage and the response field cannot
both be free in one fit. :func:`fit_contrast_curve` fits ``(b_s, delta)`` with
leakage held at a known value; :func:`fit_phase_amplitude` fits ``(X, Y)``
directly and is what :func:`measure_leakage` uses.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .analytic import ContrastCurve, ReadoutModel, phase_per_tesla
from .fields import GAMMA_NV

TWO_PI = 2 * math.pi


class FitError(RuntimeError):
    """Optimizer failed to converge; ``best_residual`` holds the best value seen."""

    def __init__(self, message, best_residual=math.nan):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


class NoNullError(RuntimeError):
    """No null of the drive-induced contrast inside the search range."""


class IdentifiabilityWarning(UserWarning):
    pass


class SymmetryWarning(UserWarning):
    pass


@dataclass
class FitResult:
    b_s_hat: float
    delta_hat: float
    leakage_hat: float
    covariance: np.ndarray
    residual_norm: float
    delta_identifiable: bool = True
    leakage_fixed: bool = True
    n_starts: int = 0

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def to_dict(self) -> dict:
        return {
            "b_s_hat": self.b_s_hat,
            "delta_hat": self.delta_hat,
            "leakage_hat": self.leakage_hat,
            "covariance": self.covariance.tolist(),
            "parameters": ["leakage", "b_s", "delta"],
            "residual_norm": self.residual_norm,
            "delta_identifiable": self.delta_identifiable,
            "leakage_fixed": self.leakage_fixed,
            "n_starts": self.n_starts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class PhaseAmplitudeFit:
    """Net phase ``in_phase*cos(p) + quadrature*sin(p)``, in radians."""

    in_phase: float
    quadrature: float
    residual_norm: float

    @property
    def amplitude(self) -> float:
        return math.hypot(self.in_phase, self.quadrature)

    @property
    def axis(self) -> float:
        return math.atan2(self.quadrature, self.in_phase) % TWO_PI


@dataclass
class DipolarFit:
    amplitude: float
    d0_hat: float
    residual_norm: float
    exponent: float = 3.0
    extra: dict = field(default_factory=dict)

    def predict(self, d):
        return self.amplitude / (np.asarray(d, dtype=float) + self.d0_hat) ** self.exponent

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "d0_hat": self.d0_hat,
                "exponent": self.exponent, "residual_norm": self.residual_norm}


# -- helpers -----------------------------------------------------------------

def _wrap_2pi(x):
    return float(x) % TWO_PI


def _check_p_curve(curve: ContrastCurve, min_samples: int = 8):
    if curve.sweep_param != "p_offset":
        raise ValueError("expected a p_offset sweep")
    n = len(curve)
    if n < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {n}")
    span = curve.values[-1] - curve.values[0]
    if span + curve.spacing < TWO_PI * (1 - 1e-9):
        raise ValueError("samples must span a full 2*pi period in p")


def _phase_scale(curve: ContrastCurve, n_pi, gamma):
    periods = curve.sensing_periods if n_pi is None else n_pi
    return phase_per_tesla(curve.cfg.f_d, periods, gamma)


def _circular_smooth(y: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return y
    kernel = np.ones(window) / window
    pad = window // 2
    ext = np.concatenate([y[-pad:], y, y[:pad]]) if pad else y
    return np.convolve(ext, kernel, mode="valid")[: len(y)]


def count_local_maxima(contrast, window: int = 3) -> int:
    """Strict three-point maxima of a periodic sampled curve after a moving average."""
    y = _circular_smooth(np.asarray(contrast, dtype=float), window)
    left, right = np.roll(y, 1), np.roll(y, -1)
    return int(np.count_nonzero((y > left) & (y > right)))


def bs_bounds_from_maxima(eta: int, f_d: float, n_pi: float = 1, gamma: float = GAMMA_NV):
    """Bracket on ``b_s`` from the number of contrast maxima over one 2*pi period in p.

    Returns ``(max(0, (eta-2)*pi^2*f_d/(4*gamma)), eta*pi^2*f_d/(4*gamma))``
    divided by ``n_pi`` (sensing periods of the sequence), with angular gamma.
    """
    if eta < 1:
        raise ValueError("eta must be >= 1")
    unit = math.pi ** 2 * f_d / (4 * gamma) / n_pi
    return max(0.0, (eta - 2) * unit), eta * unit


def bs_bounds_from_curve(curve: ContrastCurve, window: int = 3, gamma: float = GAMMA_NV):
    eta = count_local_maxima(curve.contrast, window)
    return bs_bounds_from_maxima(max(eta, 1), curve.cfg.f_d, curve.sensing_periods, gamma)


# -- curve fits --------------------------------------------------------------

def _model_xy(params, cos_p, sin_p, readout):
    phi = params[0] * cos_p + params[1] * sin_p
    return readout.c0 + readout.c_star * np.cos(phi + readout.varphi), phi


def fit_phase_amplitude(curve: ContrastCurve, readout: ReadoutModel | None = None,
                        initial=None, gamma: float = GAMMA_NV) -> PhaseAmplitudeFit:
    """Fit the net phase of a p-sweep as ``X*cos(p) + Y*sin(p)`` (radians).

    Starts come from the maxima-count amplitude bracket crossed with the
    symmetry axis, plus the curve's nominal configuration and ``initial``.
    """
    _check_p_curve(curve)
    readout = readout or curve.readout
    y = curve.contrast
    if np.ptp(y) == 0.0:
        return PhaseAmplitudeFit(0.0, 0.0, 0.0)
    cos_p, sin_p = np.cos(curve.values), np.sin(curve.values)

    def resid(params):
        return _model_xy(params, cos_p, sin_p, readout)[0] - y

    def jac(params):
        _, phi = _model_xy(params, cos_p, sin_p, readout)
        d = -readout.c_star * np.sin(phi + readout.varphi)
        return np.column_stack([d * cos_p, d * sin_p])

    k = _phase_scale(curve, None, gamma)
    cfg, mod = curve.cfg, curve.mod
    nominal_x = k * (cfg.b_d - mod.b_d_mod + cfg.b_s * math.cos(cfg.delta)
                     - mod.b_s_mod * math.cos(mod.delta_mod))
    nominal_y = k * (cfg.b_s * math.sin(cfg.delta) - mod.b_s_mod * math.sin(mod.delta_mod))
    starts = [(nominal_x, nominal_y)]
    if initial is not None:
        starts.append(tuple(initial))
    lo, hi = bs_bounds_from_curve(curve, gamma=gamma)
    amps = np.linspace(k * lo, k * hi, 5)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SymmetryWarning)
            axis = _symmetry_axis(curve)[0]
    except ValueError:
        axis = 0.0
    for a in amps:
        for ax in (axis, axis + math.pi):
            starts.append((a * math.cos(ax), a * math.sin(ax)))

    best = None
    for x0 in starts:
        sol = least_squares(resid, np.asarray(x0, dtype=float), jac=jac, method="lm", xtol=1e-14, ftol=1e-14)
        cost = float(np.sum(sol.fun ** 2))
        if best is None or cost < best[0]:
            best = (cost, sol)
    cost, sol = best
    norm = math.sqrt(cost / len(y)) / max(readout.c_star, 1e-300)
    return PhaseAmplitudeFit(float(sol.x[0]), float(sol.x[1]), norm)


def fit_contrast_curve(curve: ContrastCurve, readout: ReadoutModel | None = None, n_pi: float | None = None,
                       leakage: float | None = None, n_starts: int = 8, gamma: float = GAMMA_NV) -> FitResult:
    """Least-squares fit of ``(b_s, delta)`` to a p-sweep contrast curve.

    Parameters
    ----------
    curve : ContrastCurve
        A ``p_offset`` sweep with at least 8 samples over a full period.
    readout : ReadoutModel, optional
        Calibration; defaults to the curve's own.
    n_pi : float, optional
        Sensing periods of the sequence; defaults to the curve's.
    leakage : float, optional
        Known residual drive ``b_d - b_d_mod`` in tesla. Defaults to the
        curve's configured value (0 under SIPHT).
    n_starts : int
        Size of the delta initialization grid.

    Returns
    -------
    FitResult
        ``covariance`` is ordered (leakage, b_s, delta); the leakage row and
        column are zero because it is held fixed.

    Raises
    ------
    FitError
        If no start converged.
    """
    _check_p_curve(curve)
    readout = readout or curve.readout
    k = _phase_scale(curve, n_pi, gamma)
    if leakage is None:
        leakage = curve.cfg.b_d - curve.mod.b_d_mod
    p = curve.values
    y = curve.contrast
    # known b_s_mod term is folded into the fixed phase
    fixed_phase = k * (leakage * np.cos(p) - curve.mod.b_s_mod * np.cos(p - curve.mod.delta_mod))
    ro = readout

    cos_q, sin_q = np.cos(p), np.sin(p)
    cache = {}

    # internal parameters are the phase quadratures (X, Y) = k*b_s*(cos delta, sin delta)
    def phase(xy):
        key = (xy[0], xy[1])
        if key not in cache:
            cache.clear()
            phi = fixed_phase + xy[0] * cos_q + xy[1] * sin_q
            cache[key] = (np.cos(phi + ro.varphi), np.sin(phi + ro.varphi))
        return cache[key]

    def resid(xy):
        return ro.c0 + ro.c_star * phase(xy)[0] - y

    def jac(xy):
        g = -ro.c_star * phase(xy)[1]
        return np.column_stack([g * cos_q, g * sin_q])

    # each delta sector starts from its best cell of a fine (delta, b_s) grid
    lo, hi = bs_bounds_from_curve(curve, gamma=gamma)
    b_grid = np.linspace(0.0, 1.25 * hi + 1e-12, 64)
    sub = 4
    d_fine = (np.arange(n_starts * sub) - sub // 2) * TWO_PI / (n_starts * sub)
    phi_grid = fixed_phase[None, None, :] + k * b_grid[None, :, None] * np.cos(p[None, None, :] - d_fine[:, None, None])
    sse = np.sum((ro.c0 + ro.c_star * np.cos(phi_grid + ro.varphi) - y) ** 2, axis=2)
    sse = sse.reshape(n_starts, sub * len(b_grid))
    cells = np.argmin(sse, axis=1)
    deltas = d_fine.reshape(n_starts, sub)[np.arange(n_starts), cells // len(b_grid)]
    b_init = np.maximum(b_grid[cells % len(b_grid)], 1e-3 * hi + 1e-15)

    best, converged = None, False
    for d0, b0 in zip(deltas, b_init):
        x0 = k * b0 * np.array([math.cos(d0), math.sin(d0)])
        sol = least_squares(resid, x0, jac=jac, method="lm", xtol=1e-13, ftol=1e-13, gtol=1e-13)
        converged |= sol.status > 0
        cost = float(np.sum(sol.fun ** 2))
        if best is None or cost < best[0]:
            best = (cost, sol)
    cost, sol = best
    norm = math.sqrt(cost / len(y)) / max(ro.c_star, 1e-300)
    if not converged:
        raise FitError("no start converged", norm)

    X, Y = map(float, sol.x)
    amp = math.hypot(X, Y)
    b_hat, d_hat = amp / k, math.atan2(Y, X)
    J = jac(sol.x)
    dof = max(len(y) - 2, 1)
    s2 = cost / dof
    try:
        cov_xy = s2 * np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov_xy = np.full((2, 2), np.inf)
    # d(b_s, delta)/d(X, Y)
    if amp > 0:
        T = np.array([[X / (k * amp), Y / (k * amp)], [-Y / amp ** 2, X / amp ** 2]])
        cov2 = T @ cov_xy @ T.T
    else:
        cov2 = np.full((2, 2), np.inf)
    cov = np.zeros((3, 3))
    cov[1:, 1:] = 0.5 * (cov2 + cov2.T)

    identifiable = k * b_hat > 1e-6 and b_hat > 2 * math.sqrt(max(cov[1, 1], 0.0))
    if not identifiable:
        warnings.warn("response amplitude ~ 0: delta is unidentifiable", IdentifiabilityWarning, stacklevel=2)
    return FitResult(
        b_s_hat=b_hat,
        delta_hat=_wrap_2pi(d_hat),
        leakage_hat=float(leakage),
        covariance=cov,
        residual_norm=norm,
        delta_identifiable=bool(identifiable),
        leakage_fixed=True,
        n_starts=n_starts,
    )


# -- symmetry readout --------------------------------------------------------

def _reflection_scores(y: np.ndarray) -> np.ndarray:
    """Even-reflection score for axes at every half sample (index j -> j/2 samples)."""
    n = len(y)
    idx = np.arange(n)
    # axis at j/2 pairs sample i with sample j - i
    partner = (np.arange(2 * n)[:, None] - idx[None, :]) % n
    mse = np.mean((y[None, :] - y[partner]) ** 2, axis=1)
    return 1.0 - mse / (2 * np.var(y))


def _symmetry_axis(curve: ContrastCurve):
    """Best reflection axis (radians, mod 2*pi) and its score."""
    y = curve.contrast
    if np.ptp(y) == 0.0:
        raise ValueError("flat curve has no defined symmetry axis")
    x0, dx = curve.values[0], curve.spacing
    scores = _reflection_scores(y)
    j = int(np.argmax(scores))
    s_m, s_0, s_p = scores[j - 1], scores[j], scores[(j + 1) % len(scores)]
    denom = s_m - 2 * s_0 + s_p
    shift = 0.5 * (s_m - s_p) / denom if denom < 0 else 0.0
    shift = float(np.clip(shift, -0.5, 0.5))
    axis = x0 + 0.5 * dx * (j + shift)
    return axis % TWO_PI, float(s_0)


def delta_from_symmetry(curve: ContrastCurve, threshold: float = 0.95, gamma: float = GAMMA_NV) -> float:
    """Response phase read from the reflection axis of a SIPHT p-sweep.

    The curve is symmetric about both ``delta`` and ``delta + pi``. The tie is
    broken with the readout phase: for each candidate the best ``b_s >= 0`` on
    a grid is found and the axis with the lower residual wins. When
    ``varphi`` is a multiple of pi the two are indistinguishable and the axis
    in [0, pi) is returned with a warning.

    Warns :class:`SymmetryWarning` when the best score is below ``threshold``
    or the curve's configuration leaves drive leakage (the axis then reflects
    the drive, not ``delta``). A flat curve returns nan.
    """
    _check_p_curve(curve)
    cfg, mod = curve.cfg, curve.mod
    if abs(cfg.b_d - mod.b_d_mod) > 1e-3 * max(cfg.b_d, cfg.b_s, 1e-300):
        warnings.warn("curve has drive leakage; symmetry axis reflects the drive, not delta",
                      SymmetryWarning, stacklevel=2)
    try:
        axis, score = _symmetry_axis(curve)
    except ValueError:
        warnings.warn("flat curve: delta unidentifiable", SymmetryWarning, stacklevel=2)
        return math.nan
    if score < threshold:
        warnings.warn(f"low symmetry score {score:.3f} < {threshold}", SymmetryWarning, stacklevel=2)

    ro = curve.readout
    if math.isclose(math.sin(ro.varphi), 0.0, abs_tol=1e-12):
        warnings.warn("readout phase is a multiple of pi: delta known only modulo pi",
                      SymmetryWarning, stacklevel=2)
        return axis % math.pi

    k = _phase_scale(curve, None, gamma)
    p, y = curve.values, curve.contrast
    _, hi = bs_bounds_from_curve(curve, gamma=gamma)
    b_grid = np.linspace(0.0, 1.25 * hi + 1e-12, 400)
    best = None
    for cand in (axis, axis + math.pi):
        phi = k * b_grid[:, None] * np.cos(p[None, :] - cand)
        sse = np.sum((ro.c0 + ro.c_star * np.cos(phi + ro.varphi) - y) ** 2, axis=1).min()
        if best is None or sse < best[0]:
            best = (sse, cand)
    return best[1] % TWO_PI


# -- leakage -----------------------------------------------------------------

def measure_leakage(curve_sipht: ContrastCurve, curve_conventional: ContrastCurve,
                    gamma: float = GAMMA_NV) -> float:
    """Drive-induced phase amplitude under SIPHT relative to conventional DD.

    Both curves must come from the same field configuration. The configured
    response-field contribution is removed from each fitted phase before
    taking amplitudes.
    """
    for c in (curve_sipht, curve_conventional):
        _check_p_curve(c)
    if curve_sipht.cfg != curve_conventional.cfg:
        raise ValueError("curves must share the field configuration")

    def drive_amplitude(curve):
        fit = fit_phase_amplitude(curve, gamma=gamma)
        k = _phase_scale(curve, None, gamma)
        cfg, mod = curve.cfg, curve.mod
        rx = k * (cfg.b_s * math.cos(cfg.delta) - mod.b_s_mod * math.cos(mod.delta_mod))
        ry = k * (cfg.b_s * math.sin(cfg.delta) - mod.b_s_mod * math.sin(mod.delta_mod))
        resid = math.hypot(fit.in_phase - rx, fit.quadrature - ry)
        # phases are only resolved to round-off of the larger terms
        floor = 64 * np.finfo(float).eps * (1.0 + fit.amplitude + math.hypot(rx, ry))
        return 0.0 if resid <= floor else resid

    conv = drive_amplitude(curve_conventional)
    if conv < 1e-9:
        raise ValueError("conventional drive amplitude ~ 0: leakage ratio undefined")
    return drive_amplitude(curve_sipht) / conv


# -- dipolar distance scaling ------------------------------------------------

def _validate_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be a sequence of (d, b_s) pairs")
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    if len(np.unique(pts[:, 0])) != len(pts):
        raise ValueError("distances must be distinct")
    if np.any(pts[:, 1] <= 0):
        raise ValueError("b_s values must be positive")
    pts = pts[np.argsort(pts[:, 0])]
    if np.any(np.diff(pts[:, 1]) >= 0):
        warnings.warn("b_s is not strictly decreasing with d", UserWarning, stacklevel=3)
    return pts[:, 0], pts[:, 1]


def _two_point_init(d, b, exponent=3.0):
    # b^(-1/n) = (d + d0) / A^(1/n) is linear in d
    u = b ** (-1.0 / exponent)
    slope = (u[-1] - u[0]) / (d[-1] - d[0])
    if slope <= 0:
        return float(b.mean() * d.mean() ** exponent), 0.0
    d0 = max(u[0] / slope - d[0], 0.0)
    return float(slope ** -exponent), d0


def fit_dipolar(points) -> DipolarFit:
    """Fit ``b_s = A/(d + d0)^3`` with ``d0 >= 0``.

    Initialized from the line through ``b^(-1/3)`` at the two extreme
    distances. ``residual_norm`` is ``|model - b| / |b|``.
    """
    d, b = _validate_points(points)
    a0, d00 = _two_point_init(d, b)
    scale_b = float(np.max(b))
    scale_d = float(d[-1] - d[0])

    def resid(x):
        log_a, d0 = x
        return (np.exp(log_a) / (d + d0 * scale_d) ** 3 - b) / scale_b

    sol = least_squares(resid, [math.log(a0), d00 / scale_d], bounds=([-np.inf, 0.0], [np.inf, np.inf]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    amp, d0 = math.exp(sol.x[0]), float(sol.x[1] * scale_d)
    model = amp / (d + d0) ** 3
    return DipolarFit(amplitude=amp, d0_hat=d0,
                      residual_norm=float(np.linalg.norm(model - b) / np.linalg.norm(b)))


def fit_power_law(points, exponent0: float = 3.0) -> DipolarFit:
    """Fit ``b_s = A/(d + d0)^n`` with the exponent ``n`` free."""
    d, b = _validate_points(points)
    a0, d00 = _two_point_init(d, b, exponent0)
    scale_b = float(np.max(b))
    scale_d = float(d[-1] - d[0])
    log_d_ref = math.log(scale_d)

    def resid(x):
        log_a, d0, n = x
        # amplitude referenced to scale_d so log_a stays O(1) as n moves
        return (np.exp(log_a - n * (np.log(d + d0 * scale_d) - log_d_ref)) - b) / scale_b

    x0 = [math.log(a0) - exponent0 * log_d_ref, d00 / scale_d, exponent0]
    sol = least_squares(resid, x0, bounds=([-np.inf, 0.0, 0.1], [np.inf, np.inf, 20.0]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    log_a, d0s, n = sol.x
    d0 = float(d0s * scale_d)
    amp = math.exp(log_a + n * log_d_ref)
    model = amp / (d + d0) ** n
    return DipolarFit(amplitude=amp, d0_hat=d0, exponent=float(n),
                      residual_norm=float(np.linalg.norm(model - b) / np.linalg.norm(b)))


# -- B' null search ----------------------------------------------------------

def null_search_b_mod(oracle, search_range, readout: ReadoutModel | None = None, grid: int = 41,
                      xtol: float = 1e-11, null_tol: float = 1e-6) -> float:
    """Modulation amplitude that nulls the drive-induced phase.

    Parameters
    ----------
    oracle : callable
        ``oracle(b_mod)`` returns the contrast at one fixed p, or an array of
        contrasts at several fixed p values (preferred: a single p has
        spurious nulls every 2*pi of phase).
    search_range : (float, float)
        Interval of ``b_mod`` in tesla.
    readout : ReadoutModel
        Gives the zero-phase contrast ``c0 + c_star*cos(varphi)``.
    null_tol : float
        Largest mean-square contrast deviation (in units of ``c_star**2``)
        accepted as a null.

    Raises
    ------
    NoNullError
        The response is flat over the range, or the best point is not a null.
    """
    readout = readout or ReadoutModel()
    lo, hi = map(float, search_range)
    if not lo < hi:
        raise ValueError("search_range must be increasing")
    ref = readout.c0 + readout.c_star * math.cos(readout.varphi)
    scale = max(readout.c_star, 1e-300) ** 2

    def objective(b):
        c = np.atleast_1d(np.asarray(oracle(b), dtype=float))
        return float(np.mean((c - ref) ** 2)) / scale

    xs = np.linspace(lo, hi, grid)
    vals = np.array([objective(x) for x in xs])
    if np.ptp(vals) <= 1e-12 * max(vals.max(), 1e-300):
        raise NoNullError("flat response over the search range")
    i = int(np.argmin(vals))
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    res = minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": xtol})
    best_x, best_v = (res.x, res.fun) if res.fun <= vals[i] else (xs[i], vals[i])
    if best_v > null_tol:
        raise NoNullError(f"no null in [{lo:.6g}, {hi:.6g}] T (min mean-square deviation {best_v:.3e})")
    return float(best_x)
