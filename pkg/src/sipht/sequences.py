"""Dynamical-decoupling pulse sequences synchronized to the AC drive.

Timing rule shared by every sequence kind: pi-pulse centres sit at the drive
nodes ``omega_d*t = pi/2 + k*pi`` when ``p = 0``, and the whole train is shifted
by ``p/omega_d``. Pulse *centres* carry the nominal timing; finite pulses extend
half their duration to either side.

Kinds
-----
hahn
    pi/2_x - T/2 - pi_y - T/2 - pi/2, exactly one pi pulse, spans one drive
    period T = 1/f_d.
cpmg
    pi/2_x - T/4 - (pi_y - T/2 -)... pi_y - T/4 - pi/2, spans n_pi*T/2.
xy8
    Same timing as cpmg with pi-pulse phases XYXYYXYX repeated; n_pi must be
    a multiple of 8.

The final pi/2 phase is chosen so that the ideal readout is
``z = cos(phi_nv + varphi)`` (see :func:`readout_pulse_phase`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import FieldConfig

HALF_PI = math.pi / 2
KINDS = ("hahn", "cpmg", "xy8")
XY8_PHASES = (0.0, HALF_PI, 0.0, HALF_PI, HALF_PI, 0.0, HALF_PI, 0.0)


@dataclass(frozen=True)
class PulseEvent:
    start: float
    duration: float
    rabi: float
    nominal_rotation: float
    phase: float

    @property
    def center(self) -> float:
        return self.start + 0.5 * self.duration

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def idealized(self) -> bool:
        return self.duration == 0.0

    @property
    def is_pi(self) -> bool:
        return math.isclose(self.nominal_rotation, math.pi)


@dataclass(frozen=True)
class PulseSequence:
    """Time-ordered pulse events plus the bookkeeping needed downstream.

    ``sensing_periods`` is the number of full drive periods worth of
    phase the train collects: 1 for a Hahn echo, ``n_pi/2`` for CPMG/XY8.
    It is the multiplier that replaces ``N_pi`` in the closed-form phase.
    """

    events: tuple[PulseEvent, ...]
    n_pi: int
    p_offset: float
    tau: float
    total_time: float
    kind: str
    varphi: float
    sensing_periods: float

    def __post_init__(self):
        ev = self.events
        if len(ev) < 3:
            raise ValueError("a sequence needs at least pi/2, pi, pi/2")
        if ev[0].is_pi or ev[-1].is_pi:
            raise ValueError("first and last events must be pi/2 pulses")
        if sum(e.is_pi for e in ev) != self.n_pi:
            raise ValueError("n_pi does not match the number of pi events")
        for a, b in zip(ev, ev[1:]):
            if b.start < a.end or b.center <= a.center:
                raise ValueError(
                    f"pulses overlap: [{a.start:.3e}, {a.end:.3e}] and "
                    f"[{b.start:.3e}, {b.end:.3e}]; increase rabi or lower f_d"
                )

    @property
    def idealized(self) -> bool:
        return all(e.idealized for e in self.events)

    @property
    def centers(self) -> np.ndarray:
        return np.array([e.center for e in self.events])

    @property
    def pi_events(self) -> tuple[PulseEvent, ...]:
        return tuple(e for e in self.events if e.is_pi)

    @property
    def t_begin(self) -> float:
        return self.events[0].start

    @property
    def t_end(self) -> float:
        return self.events[-1].end

    def toggling_signs(self) -> np.ndarray:
        """Sign of phase pickup in each free interval: +1, -1, +1, ..."""
        return np.array([(-1) ** k for k in range(self.n_pi + 1)], dtype=float)


def readout_pulse_phase(first_phase: float, pi_phases, varphi: float) -> float:
    """Phase of the final pi/2 pulse that realizes readout offset ``varphi``.

    An ideal pi pulse about an in-plane axis at angle ``theta`` maps the Bloch
    azimuth ``a -> 2*theta - a``. Tracking that reflection through the train
    and requiring ``z_final = cos(phi_nv + varphi)`` gives the expressions below.
    """
    c = 0.0
    for theta in pi_phases:
        c = 2 * theta - c
    if len(pi_phases) % 2:
        out = c - first_phase + varphi
    else:
        out = c + first_phase - math.pi - varphi
    return out % (2 * math.pi)


def pi_pulse_centers(kind: str, n_pi: int, cfg: FieldConfig, p: float, p_reference: str = "node"):
    if p_reference == "node":
        origin = HALF_PI
    elif p_reference == "antinode":
        origin = 0.0
    else:
        raise ValueError(f"p_reference must be 'node' or 'antinode', got {p_reference!r}")
    T = cfg.period
    t_first = (p + origin) / cfg.omega_d
    if kind == "hahn":
        return np.array([t_first])
    return t_first + 0.5 * T * np.arange(n_pi)


def build_dd_sequence(
    kind: str,
    n_pi: int,
    cfg: FieldConfig,
    p: float = 0.0,
    rabi: float | None = None,
    idealized: bool = False,
    varphi: float = HALF_PI,
    p_reference: str = "node",
) -> PulseSequence:
    """Build a drive-synchronized DD sequence.

    Parameters
    ----------
    kind : {"hahn", "cpmg", "xy8"}
    n_pi : int
        Number of pi pulses (must be 1 for ``hahn``).
    cfg : FieldConfig
        Supplies the drive frequency.
    p : float
        Phase offset of the pulse train relative to the drive nodes, rad.
    rabi : float
        Angular Rabi strength, rad/s. Ignored when ``idealized``.
    idealized : bool
        Use instantaneous rotations (duration 0).
    varphi : float
        Readout phase offset; default pi/2 makes contrast ~ -sin(phi_nv).
    p_reference : {"node", "antinode"}
        Where pi pulses sit at ``p = 0``. The closed-form phase assumes "node".
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown sequence kind {kind!r}; expected one of {KINDS}")
    n_pi = int(n_pi)
    if n_pi < 1:
        raise ValueError("n_pi must be >= 1")
    if kind == "hahn" and n_pi != 1:
        raise ValueError("a Hahn echo has exactly one pi pulse")
    if kind == "xy8" and n_pi % 8:
        raise ValueError("xy8 needs n_pi to be a multiple of 8")
    if not idealized:
        if rabi is None or not rabi > 0:
            raise ValueError("finite pulses need rabi > 0")

    T = cfg.period
    pi_centers = pi_pulse_centers(kind, n_pi, cfg, p, p_reference)
    edge_gap = T / 2 if kind == "hahn" else T / 4
    first_center = pi_centers[0] - edge_gap
    last_center = pi_centers[-1] + edge_gap

    if kind == "xy8":
        pi_phases = [XY8_PHASES[k % 8] for k in range(n_pi)]
    else:
        pi_phases = [HALF_PI] * n_pi
    first_phase = 0.0
    last_phase = readout_pulse_phase(first_phase, pi_phases, varphi)

    def event(center, rotation, phase):
        if idealized:
            return PulseEvent(float(center), 0.0, math.inf, rotation, phase)
        duration = rotation / rabi
        return PulseEvent(float(center - duration / 2), duration, float(rabi), rotation, phase)

    events = [event(first_center, HALF_PI, first_phase)]
    events += [event(c, math.pi, ph) for c, ph in zip(pi_centers, pi_phases)]
    events.append(event(last_center, HALF_PI, last_phase))

    return PulseSequence(
        events=tuple(events),
        n_pi=n_pi,
        p_offset=float(p),
        tau=T,
        total_time=float(last_center - first_center),
        kind=kind,
        varphi=float(varphi),
        sensing_periods=1.0 if kind == "hahn" else n_pi / 2,
    )


def sequence_from_dict(data: dict, cfg: FieldConfig, p: float | None = None) -> PulseSequence:
    """Build a sequence from a config ``"sequence"`` block."""
    opts = dict(data)
    kind = opts.pop("kind", "hahn")
    n_pi = opts.pop("n_pi", 1)
    if p is not None:
        opts["p"] = p
    return build_dd_sequence(kind, n_pi, cfg, **opts)
