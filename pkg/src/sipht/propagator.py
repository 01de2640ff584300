"""Numerical propagation of the effective two-level NV spin.

The spin is kept as a Bloch vector ``r`` obeying ``dr/dt = w(t) x r`` with
``w = (Omega*cos(theta), Omega*sin(theta), Delta)`` (RWA). Each step applies the
fourth-order Magnus rotation built from the two Gauss-Legendre nodes, so the
update is always an exact rotation and the norm is preserved to round-off.

Field sign convention: in RF0 the detuning is ``+gamma*B(t)``; in RFmod the
MW phase-modulation rate is subtracted from it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import ReadoutModel, contrast_from_phase
from .fields import (
    GAMMA_NV,
    ZERO_FIELD_SPLITTING,
    FieldConfig,
    ModulationConfig,
    mw_phase_modulation,
    mw_phase_modulation_rate,
    total_ac_field,
)
from .sequences import PulseEvent, PulseSequence

FRAMES = ("RFmod", "RF0")
_GL_OFFSETS = np.array([0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6])
_MAGNUS_COMMUTATOR = math.sqrt(3) / 12
_MAX_STEP_ANGLE = math.pi / 2


class IntegrationError(RuntimeError):
    """Step size or tolerance requirements were not met."""


@dataclass(frozen=True)
class PropagatorOptions:
    """Integrator settings.

    ``max_step`` defaults to ``1/(400*f_d)`` when None, shortened further
    so a free-evolution step never rotates by more than about 0.5 rad.
    An explicit ``max_step`` is used as given. Finite pulses are
    split into at least ``pulse_substeps`` steps. ``tolerance`` bounds the
    allowed drift of ``|r|`` from 1. ``carrier`` (rad/s) is only used with
    ``rwa=False``; None means ``D - gamma*B_DC``.
    """

    frame: str = "RFmod"
    max_step: float | None = None
    tolerance: float = 1e-6
    rwa: bool = True
    pulse_substeps: int = 40
    carrier: float | None = None
    record: bool = True

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be > 0")
        if self.pulse_substeps < 20:
            raise ValueError("pulse_substeps must be >= 20")

    def step_for(self, cfg: FieldConfig) -> float:
        h = self.max_step if self.max_step is not None else cfg.period / 400
        if h > cfg.period / 20 * (1 + 1e-12):
            raise ValueError(f"max_step {h:.3e} s exceeds 1/(20 f_d) = {cfg.period / 20:.3e} s")
        return h


@dataclass(frozen=True)
class SpinState:
    bloch: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.bloch))


@dataclass
class SpinTrajectory:
    """Sampled Bloch-vector history and the readout quantities.

    ``phi_nv`` is the continuously unwrapped toggling-frame phase just
    before the final pi/2 pulse, referred to RFmod regardless of the frame
    used for integration. ``z_final`` is the pole projection after the
    final pulse.
    """

    times: np.ndarray
    bloch: np.ndarray
    phi_nv: float
    z_final: float
    frame: str
    varphi: float
    final_pulse_simulated: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def states(self) -> list[SpinState]:
        return [SpinState(b) for b in self.bloch]

    @property
    def final_state(self) -> SpinState:
        return SpinState(self.bloch[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "bx", "by", "bz"])
            for t, (x, y, z) in zip(self.times, self.bloch):
                writer.writerow([repr(float(t)), repr(float(x)), repr(float(y)), repr(float(z))])


def hamiltonian_rfmod(t, cfg: FieldConfig, mod: ModulationConfig, pulse: PulseEvent | None = None,
                      gamma: float = GAMMA_NV):
    """Rotating-frame (RFmod) coefficients ``(detuning, drive_x, drive_y)`` in rad/s.

    ``detuning = gamma*B(t) - d/dt(modulation phase)``. The transverse
    drive is ``rabi`` along the pulse phase while ``pulse`` is active, else zero.
    """
    t = np.asarray(t, dtype=float)
    det = gamma * total_ac_field(t, cfg) - mw_phase_modulation_rate(t, cfg, mod, gamma)
    det = np.asarray(det, dtype=float)
    if pulse is None or pulse.idealized:
        dx = dy = np.zeros_like(det)
    else:
        on = (t >= pulse.start) & (t <= pulse.end)
        dx = np.where(on, pulse.rabi * math.cos(pulse.phase), 0.0)
        dy = np.where(on, pulse.rabi * math.sin(pulse.phase), 0.0)
    if det.ndim == 0:
        return float(det), float(dx), float(dy)
    return det, dx, dy


def rotation_matrices(rotvec: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrices for an (n, 3) array of rotation vectors."""
    rotvec = np.atleast_2d(rotvec)
    angle = np.linalg.norm(rotvec, axis=1)
    safe = np.where(angle > 0, angle, 1.0)
    k = rotvec / safe[:, None]
    kx, ky, kz = k.T
    zero = np.zeros_like(kx)
    K = np.stack([
        np.stack([zero, -kz, ky], axis=-1),
        np.stack([kz, zero, -kx], axis=-1),
        np.stack([-ky, kx, zero], axis=-1),
    ], axis=1)
    s = np.sin(angle)[:, None, None]
    c = (1 - np.cos(angle))[:, None, None]
    return np.eye(3)[None] + s * K + c * (K @ K)


class _Stepper:
    """Evaluates the rotating-frame field vector for one propagation."""

    def __init__(self, cfg, mod, opts: PropagatorOptions, gamma):
        self.cfg, self.mod, self.opts, self.gamma = cfg, mod, opts, gamma
        self.rf0 = opts.frame == "RF0"
        self.carrier = (opts.carrier if opts.carrier is not None
                        else ZERO_FIELD_SPLITTING - gamma * cfg.b_dc)

    def chi(self, t):
        return mw_phase_modulation(t, self.cfg, self.mod, self.gamma)

    def detuning(self, t):
        det = self.gamma * total_ac_field(t, self.cfg)
        if not self.rf0:
            det = det - mw_phase_modulation_rate(t, self.cfg, self.mod, self.gamma)
        return np.asarray(det, dtype=float)

    def axis_angle(self, pulse: PulseEvent, t):
        """In-plane drive axis of ``pulse`` in the integration frame."""
        if self.rf0:
            return pulse.phase + self.chi(t)
        return np.full_like(np.asarray(t, dtype=float), pulse.phase)

    def field(self, t, pulse: PulseEvent | None):
        t = np.asarray(t, dtype=float)
        w = np.zeros(t.shape + (3,))
        w[..., 2] = self.detuning(t)
        if pulse is not None:
            theta = self.axis_angle(pulse, t)
            w[..., 0] = pulse.rabi * np.cos(theta)
            w[..., 1] = pulse.rabi * np.sin(theta)
            if not self.opts.rwa:
                frame_angle = self.carrier * t
                if not self.rf0:
                    frame_angle = frame_angle + self.chi(t)
                counter = 2 * frame_angle + theta
                w[..., 0] += pulse.rabi * np.cos(counter)
                w[..., 1] -= pulse.rabi * np.sin(counter)
        return w

    def magnus_rotvecs(self, t0: float, t1: float, h_max: float, pulse=None):
        """Rotation vectors and end times of the steps covering [t0, t1]."""
        span = t1 - t0
        if span <= 0:
            return np.zeros((0, 3)), np.zeros(0)
        n = max(1, math.ceil(span / h_max * (1 - 1e-12)))
        edges = t0 + span * np.arange(n + 1) / n
        h = span / n
        ta = edges[:-1, None] + h * _GL_OFFSETS[None, :]
        w = self.field(ta, pulse)
        w1, w2 = w[:, 0], w[:, 1]
        vec = 0.5 * h * (w1 + w2) - _MAGNUS_COMMUTATOR * h * h * np.cross(w1, w2)
        return vec, edges[1:]


def _wrap(x):
    return (np.asarray(x) + math.pi) % (2 * math.pi) - math.pi


def default_max_step(cfg: FieldConfig, mod: ModulationConfig, gamma: float = GAMMA_NV) -> float:
    """``1/(400*f_d)``, shortened so no free-evolution step rotates by more than 0.5 rad."""
    bound = gamma * (cfg.b_d + cfg.b_s + mod.b_d_mod + mod.b_s_mod)
    h = cfg.period / 400
    return min(h, 0.5 / bound) if bound > 0 else h


def propagate(seq: PulseSequence, cfg: FieldConfig, mod: ModulationConfig,
              opts: PropagatorOptions | None = None, gamma: float = GAMMA_NV) -> SpinTrajectory:
    """Propagate the spin from the m_s = 0 pole through ``seq``.

    Idealized pulses are exact instantaneous rotations about their in-plane
    axis. Free evolution and finite pulses use Magnus-4 steps no longer than
    ``opts.max_step`` (and ``duration/opts.pulse_substeps`` inside pulses).

    Raises
    ------
    IntegrationError
        A single step rotates by more than pi/2, or ``|r|`` drifts from 1 by
        more than ``opts.tolerance``.
    """
    opts = opts or PropagatorOptions()
    h = opts.step_for(cfg) if opts.max_step is not None else default_max_step(cfg, mod, gamma)
    st = _Stepper(cfg, mod, opts, gamma)

    r = np.array([0.0, 0.0, 1.0])
    t_now = seq.t_begin
    times, states = [t_now], [r.copy()]

    # toggling-frame bookkeeping: azimuth a = c + s*(a0 + psi), referred to RFmod
    events = seq.events
    a0 = events[0].phase - math.pi / 2
    c, s = 0.0, 1.0
    psi = 0.0
    tracking = False

    def run(rotvecs, t_ends):
        nonlocal r
        if len(rotvecs) == 0:
            return np.zeros((0, 3))
        big = np.linalg.norm(rotvecs, axis=1).max()
        if big > _MAX_STEP_ANGLE:
            raise IntegrationError(
                f"step rotation {big:.3f} rad exceeds {_MAX_STEP_ANGLE:.3f}; reduce max_step"
            )
        mats = rotation_matrices(rotvecs)
        out = np.empty((len(mats), 3))
        for i, m in enumerate(mats):
            r = m @ r
            out[i] = r
        if opts.record:
            times.extend(t_ends.tolist())
            states.extend(out)
        return out

    def rfmod_azimuth(vecs, t):
        az = np.arctan2(vecs[:, 1], vecs[:, 0])
        if st.rf0:
            az = az - st.chi(t)
        return az

    def track(vecs, t_ends, predicted=0.0):
        """Unwrap psi along a run of states; the first one is matched to psi + predicted."""
        nonlocal psi
        if len(vecs) == 0:
            return
        raw = s * (rfmod_azimuth(vecs, t_ends) - c) - a0
        target = psi + predicted
        first = target + _wrap(raw[0] - target)
        steps = _wrap(np.diff(raw))
        psi = float(first + steps.sum())

    def ideal_rotation(ev: PulseEvent):
        nonlocal r
        theta = float(st.axis_angle(ev, ev.center))
        axis = np.array([math.cos(theta), math.sin(theta), 0.0])
        r = rotation_matrices(axis[None] * ev.nominal_rotation)[0] @ r
        if opts.record:
            times.append(ev.center)
            states.append(r.copy())

    phi_nv = None
    for idx, ev in enumerate(events):
        last = idx == len(events) - 1
        # free evolution up to this pulse
        if ev.start > t_now:
            vecs, t_ends = st.magnus_rotvecs(t_now, ev.start, h)
            out = run(vecs, t_ends)
            if tracking:
                track(out, t_ends)
            t_now = ev.start
        if last:
            phi_nv = psi
        if ev.is_pi:
            # pi pulse: reflection of the azimuth about the pulse axis
            predicted = 0.0
            if not ev.idealized:
                tc = ev.center
                ta = np.linspace(ev.start, tc, 9)
                tb = np.linspace(tc, ev.end, 9)
                predicted = s * (np.trapezoid(st.detuning(ta), ta) - np.trapezoid(st.detuning(tb), tb))
            psi_before = psi
            c, s = 2 * ev.phase - c, -s
            if ev.idealized:
                ideal_rotation(ev)
                track(r[None], np.array([ev.center]))
            else:
                pulse_h = min(h, ev.duration / opts.pulse_substeps)
                if not opts.rwa:
                    pulse_h = min(pulse_h, 2 * math.pi / (16 * abs(st.carrier)))
                vecs, t_ends = st.magnus_rotvecs(ev.start, ev.end, pulse_h, ev)
                out = run(vecs, t_ends)
                psi = psi_before
                track(out[-1:], t_ends[-1:], predicted)
        else:
            if ev.idealized:
                ideal_rotation(ev)
            else:
                pulse_h = min(h, ev.duration / opts.pulse_substeps)
                if not opts.rwa:
                    pulse_h = min(pulse_h, 2 * math.pi / (16 * abs(st.carrier)))
                vecs, t_ends = st.magnus_rotvecs(ev.start, ev.end, pulse_h, ev)
                run(vecs, t_ends)
            if idx == 0:
                raw = s * (rfmod_azimuth(r[None], np.array([ev.end])) - c) - a0
                psi = float(_wrap(raw[0]))
                tracking = True
        t_now = ev.end

    if not opts.record:
        times.append(t_now)
        states.append(r.copy())

    bloch = np.array(states)
    drift = np.abs(np.linalg.norm(bloch, axis=1) - 1).max()
    if drift > opts.tolerance:
        raise IntegrationError(f"|r| drifted by {drift:.2e} > tolerance {opts.tolerance:.1e}")

    return SpinTrajectory(
        times=np.array(times),
        bloch=bloch,
        phi_nv=float(phi_nv),
        z_final=float(r[2]),
        frame=opts.frame,
        varphi=seq.varphi,
        meta={"n_pi": seq.n_pi, "kind": seq.kind, "p": seq.p_offset,
              "sensing_periods": seq.sensing_periods},
    )


def contrast_from_trajectory(traj: SpinTrajectory, readout: ReadoutModel, source: str = "auto") -> float:
    """Readout contrast for a propagated sequence.

    ``source="projection"`` uses ``C0 + C*·z`` after the final pulse,
    ``"phase"`` uses ``C0 + C*·cos(phi_nv + varphi)``. ``"auto"`` picks the
    projection whenever the final pi/2 pulse was simulated.
    """
    if source == "auto":
        source = "projection" if traj.final_pulse_simulated else "phase"
    if source == "projection":
        return readout.c0 + readout.c_star * traj.z_final
    if source == "phase":
        return contrast_from_phase(traj.phi_nv, readout)
    raise ValueError(f"unknown source {source!r}")


def propagator_options_from_dict(data: dict) -> PropagatorOptions:
    return PropagatorOptions(**data)
