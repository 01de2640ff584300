import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sipht import (
    GAMMA_NV,
    FieldConfig,
    IntegrationError,
    ModulationConfig,
    PropagatorOptions,
    ReadoutModel,
    build_dd_sequence,
    contrast_from_trajectory,
    hamiltonian_rfmod,
    phi_nv_analytic,
    propagate,
)

UT = 1e-6
MHZ = 2 * math.pi * 1e6
TWO_PI = 2 * math.pi


def run(cfg, mod, kind="hahn", n_pi=1, p=0.0, rabi=None, varphi=math.pi / 2, **opt):
    seq = build_dd_sequence(kind, n_pi, cfg, p=p, rabi=rabi, idealized=rabi is None, varphi=varphi)
    return seq, propagate(seq, cfg, mod, PropagatorOptions(**opt))


def test_detuning_conventional_at_t0():
    cfg = FieldConfig(b_d=100 * UT, f_d=152e3)
    det, dx, dy = hamiltonian_rfmod(0.0, cfg, ModulationConfig())
    assert det == pytest.approx(2 * math.pi * 2.8e6)
    assert dx == 0 and dy == 0


def test_detuning_null_under_sipht():
    cfg = FieldConfig(b_d=100 * UT, f_d=152e3)
    t = np.linspace(0, 2 / cfg.f_d, 101)
    det = np.array([hamiltonian_rfmod(x, cfg, ModulationConfig.sipht(cfg))[0] for x in t])
    assert np.max(np.abs(det)) < 1e-6 * GAMMA_NV * cfg.b_d


def test_detuning_reduces_to_conventional(fig2_cfg):
    for t in np.linspace(0, 1 / fig2_cfg.f_d, 7):
        w = fig2_cfg.omega_d * t
        expect = GAMMA_NV * (fig2_cfg.b_d * math.cos(w) + fig2_cfg.b_s * math.cos(w - fig2_cfg.delta))
        assert hamiltonian_rfmod(t, fig2_cfg, ModulationConfig())[0] == pytest.approx(expect, rel=1e-12, abs=1e-3)


def test_hahn_drive_only_phase():
    cfg = FieldConfig(b_d=100 * UT, f_d=152e3)
    _, traj = run(cfg, ModulationConfig())
    expect = 2 * GAMMA_NV / (math.pi * cfg.f_d) * cfg.b_d
    assert traj.phi_nv == pytest.approx(expect, rel=1e-6)
    assert expect == pytest.approx(73.7, abs=0.05)


@pytest.mark.parametrize("p", np.linspace(0, TWO_PI, 7))
def test_sipht_null_idealized(p):
    cfg = FieldConfig(b_d=100 * UT, f_d=152e3)
    _, traj = run(cfg, ModulationConfig.sipht(cfg), p=p)
    assert abs(traj.phi_nv) < 1e-9


@settings(max_examples=40, deadline=None)
@given(
    b_d=st.floats(0, 300e-6),
    mod_frac=st.floats(0, 1.2),
    b_s=st.floats(0, 30e-6),
    b_s_mod=st.floats(0, 30e-6),
    delta=st.floats(0, TWO_PI),
    delta_mod=st.floats(0, TWO_PI),
    p=st.floats(0, TWO_PI),
    seq=st.sampled_from([("hahn", 1), ("cpmg", 2), ("cpmg", 3), ("xy8", 8)]),
)
def test_oracle_equivalence(b_d, mod_frac, b_s, b_s_mod, delta, delta_mod, p, seq):
    cfg = FieldConfig(b_d=b_d, f_d=152e3, b_s=b_s, delta=delta)
    mod = ModulationConfig(b_d_mod=mod_frac * b_d, b_s_mod=b_s_mod, delta_mod=delta_mod)
    s, traj = run(cfg, mod, kind=seq[0], n_pi=seq[1], p=p, record=False)
    expect = phi_nv_analytic(cfg, mod, s.sensing_periods, p)
    assert abs(traj.phi_nv - expect) <= 1e-6 * max(abs(expect), 1e-12) + 1e-9


def test_projection_matches_phase_readout(fig2_cfg):
    readout = ReadoutModel(c0=0.1, c_star=0.5, varphi=0.3)
    for kind, n in (("hahn", 1), ("cpmg", 2), ("cpmg", 5)):
        _, traj = run(fig2_cfg, ModulationConfig(), kind=kind, n_pi=n, p=0.9, varphi=readout.varphi)
        a = contrast_from_trajectory(traj, readout, source="projection")
        b = contrast_from_trajectory(traj, readout, source="phase")
        assert a == pytest.approx(b, abs=1e-9)


def test_norm_preserved_idealized(fig2_cfg):
    _, traj = run(fig2_cfg, ModulationConfig(), kind="xy8", n_pi=16, p=0.4)
    assert np.max(np.abs(np.linalg.norm(traj.bloch, axis=1) - 1)) < 1e-9


def test_norm_preserved_finite(fig2_cfg):
    _, traj = run(fig2_cfg, ModulationConfig(), kind="cpmg", n_pi=4, p=0.4, rabi=3 * MHZ)
    assert np.max(np.abs(np.linalg.norm(traj.bloch, axis=1) - 1)) < 1e-6


@pytest.mark.parametrize("p", [0.0, 1.3, math.pi / 2])
def test_frame_equivalence(fig2_cfg, p):
    mod = ModulationConfig(b_d_mod=60 * UT, b_s_mod=2 * UT, delta_mod=0.5)
    readout = ReadoutModel()
    c = []
    for frame in ("RFmod", "RF0"):
        _, traj = run(fig2_cfg, mod, p=p, rabi=9.6 * MHZ, frame=frame)
        c.append(contrast_from_trajectory(traj, readout, source="projection"))
    assert c[0] == pytest.approx(c[1], abs=1e-6)


def test_rwa_off_close_to_rwa(fig2_cfg):
    mod = ModulationConfig.sipht(fig2_cfg)
    readout = ReadoutModel()
    res = []
    for rwa in (True, False):
        _, traj = run(fig2_cfg, mod, p=0.5, rabi=9.6 * MHZ, rwa=rwa, record=False)
        res.append(contrast_from_trajectory(traj, readout, source="projection"))
    # Bloch-Siegert shift Omega^2/(4D) over the pulses is a few mrad
    assert abs(res[0] - res[1]) < 1e-3


def test_step_halving_converges(fig2_cfg):
    cfg = FieldConfig(b_d=97 * UT, f_d=149e3, b_s=3 * UT, delta=1.0)
    readout = ReadoutModel()
    out = []
    for h in (cfg.period / 200, cfg.period / 400):
        _, traj = run(cfg, ModulationConfig(), p=math.pi / 2, rabi=3.32 * MHZ, max_step=h, record=False)
        out.append(contrast_from_trajectory(traj, readout, source="projection"))
    assert abs(out[0] - out[1]) < 1e-6


def test_max_step_bound(fig2_cfg):
    with pytest.raises(ValueError):
        run(fig2_cfg, ModulationConfig(), max_step=1 / (10 * fig2_cfg.f_d))


def test_large_step_error():
    cfg = FieldConfig(b_d=300 * UT, f_d=10e3)
    with pytest.raises(IntegrationError):
        run(cfg, ModulationConfig(), max_step=1 / (20 * cfg.f_d))


def test_invalid_options():
    with pytest.raises(ValueError):
        PropagatorOptions(frame="lab")
    with pytest.raises(ValueError):
        PropagatorOptions(pulse_substeps=5)


def test_trajectory_csv(tmp_path, fig2_cfg):
    _, traj = run(fig2_cfg, ModulationConfig(), p=0.2)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == traj.bloch.shape[:1] + (4,)
    assert np.array_equal(data[:, 1:], traj.bloch)
    assert path.read_text().splitlines()[0] == "t,bx,by,bz"


def test_deterministic(fig2_cfg, tmp_path):
    paths = []
    for i in range(2):
        _, traj = run(fig2_cfg, ModulationConfig(), p=0.2, rabi=9.6 * MHZ)
        paths.append(tmp_path / f"{i}.csv")
        traj.to_csv(paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
