import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sipht import (
    GAMMA_NV,
    ContrastCurve,
    FieldConfig,
    ModulationConfig,
    ReadoutModel,
    SweepSpec,
    bs_mod_period,
    contrast_from_phase,
    magnetometry_curve,
    phase_per_tesla,
    phi_nv_analytic,
)

UT = 1e-6
TWO_PI = 2 * math.pi

amp = st.floats(0, 300e-6)
ang = st.floats(0, TWO_PI)


def test_spot_value_response(fig2_cfg, sipht_mod):
    phi = phi_nv_analytic(fig2_cfg, sipht_mod, 1, p=fig2_cfg.delta)
    assert phi == pytest.approx(2 * GAMMA_NV * fig2_cfg.b_s / (math.pi * fig2_cfg.f_d), rel=1e-12)
    assert phi == pytest.approx(2.9474, abs=1e-4)


def test_spot_value_drive():
    cfg = FieldConfig(b_d=100 * UT, f_d=152e3)
    assert phi_nv_analytic(cfg, ModulationConfig(), 1, 0.0) == pytest.approx(73.7, abs=0.05)


def test_sipht_cancellation_all_p():
    cfg = FieldConfig(b_d=100 * UT, f_d=152e3)
    p = np.linspace(0, TWO_PI, 50)
    assert np.all(phi_nv_analytic(cfg, ModulationConfig.sipht(cfg), 1, p) == 0)


def test_contrast_examples():
    assert contrast_from_phase(0.0, ReadoutModel(c0=0.2, c_star=0.1, varphi=0.0)) == pytest.approx(0.3)
    assert contrast_from_phase(math.pi / 2, ReadoutModel(c0=0.2, c_star=0.1)) == pytest.approx(0.1)
    assert contrast_from_phase(0.0, ReadoutModel(c0=0.2, c_star=0.1, varphi=math.pi)) == pytest.approx(0.1)
    assert contrast_from_phase(math.pi / 2, ReadoutModel(c0=0.5, c_star=0.01)) == pytest.approx(0.49)
    assert contrast_from_phase(2.95, ReadoutModel()) == pytest.approx(-0.190, abs=1e-3)


def test_readout_rejects_negative_scale():
    with pytest.raises(ValueError):
        ReadoutModel(c_star=-1)


@settings(max_examples=100, deadline=None)
@given(b_d=amp, b_d_mod=amp, b_s=st.floats(0, 30e-6), b_s_mod=st.floats(0, 30e-6),
       delta=ang, delta_mod=ang, p=ang, k=st.floats(0.1, 10))
def test_linearity_and_doubling(b_d, b_d_mod, b_s, b_s_mod, delta, delta_mod, p, k):
    cfg = FieldConfig(b_d=b_d, f_d=152e3, b_s=b_s, delta=delta)
    mod = ModulationConfig(b_d_mod=b_d_mod, b_s_mod=b_s_mod, delta_mod=delta_mod)
    phi = phi_nv_analytic(cfg, mod, 1, p)
    scaled = phi_nv_analytic(cfg.with_(b_d=k * b_d, b_s=k * b_s),
                             mod.with_(b_d_mod=k * b_d_mod, b_s_mod=k * b_s_mod), 1, p)
    assert scaled == pytest.approx(k * phi, rel=1e-9, abs=1e-9)
    assert phi_nv_analytic(cfg, mod, 2, p) == 2 * phi


@settings(max_examples=100, deadline=None)
@given(b_d=amp, b_s=st.floats(0, 30e-6), delta=ang, p=ang, c0=st.floats(-1, 1))
def test_odd_half_period(b_d, b_s, delta, p, c0):
    cfg = FieldConfig(b_d=b_d, f_d=152e3, b_s=b_s, delta=delta)
    mod = ModulationConfig(b_d_mod=0.3 * b_d)
    a = phi_nv_analytic(cfg, mod, 1, p)
    b = phi_nv_analytic(cfg, mod, 1, p + math.pi)
    assert b == pytest.approx(-a, abs=1e-9 * (1 + abs(a)))
    ro = ReadoutModel(c0=c0, c_star=0.3)
    assert contrast_from_phase(a, ro) + contrast_from_phase(b, ro) == pytest.approx(2 * c0, abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(b_s=st.floats(0, 30e-6), delta=ang, x=ang)
def test_symmetric_point(b_s, delta, x):
    cfg = FieldConfig(b_d=100 * UT, f_d=152e3, b_s=b_s, delta=delta)
    mod = ModulationConfig.sipht(cfg)
    ro = ReadoutModel()
    for axis in (delta, delta + math.pi):
        left = contrast_from_phase(phi_nv_analytic(cfg, mod, 1, axis - x), ro)
        right = contrast_from_phase(phi_nv_analytic(cfg, mod, 1, axis + x), ro)
        assert left == pytest.approx(right, abs=1e-9)


def test_curve_periodic_in_p(fig2_cfg):
    sweep = SweepSpec("p_offset", 0.0, 4 * math.pi, 129)
    curve = magnetometry_curve(sweep, fig2_cfg, ModulationConfig(b_d_mod=50 * UT))
    assert np.allclose(curve.contrast[:64], curve.contrast[64:128], atol=1e-9)


def test_constant_curve_under_cancellation():
    cfg = FieldConfig(b_d=100 * UT, f_d=152e3)
    ro = ReadoutModel(c0=0.3, c_star=0.05, varphi=0.4)
    curve = magnetometry_curve(SweepSpec.p_period(32), cfg, ModulationConfig.sipht(cfg), ro)
    assert np.allclose(curve.contrast, 0.3 + 0.05 * math.cos(0.4))


def test_bs_mod_sweep_rate():
    cfg = FieldConfig(b_d=100 * UT, f_d=149e3, b_s=0.0, delta=math.pi / 2)
    mod = ModulationConfig(b_d_mod=100 * UT, delta_mod=math.pi / 2)
    sweep = SweepSpec("bs_mod", 0.0, 20 * UT, 101)
    curve = magnetometry_curve(sweep, cfg, mod, p=math.pi / 2)
    rate = phase_per_tesla(cfg.f_d)
    assert np.allclose(curve.contrast, -np.sin(-rate * curve.values), atol=1e-12)


def test_period_matches_phase_wrap():
    period = bs_mod_period(149e3)
    assert phase_per_tesla(149e3) * period == pytest.approx(TWO_PI)
    assert period == pytest.approx(math.pi * 149e3 / (2 * 28e9), rel=1e-12)


def test_numeric_ideal_matches_analytic(fig2_cfg):
    mod = ModulationConfig(b_d_mod=80 * UT, b_s_mod=1 * UT, delta_mod=0.2)
    sweep = SweepSpec.p_period(16)
    a = magnetometry_curve(sweep, fig2_cfg, mod, kind="cpmg", n_pi=4)
    b = magnetometry_curve(sweep, fig2_cfg, mod, kind="cpmg", n_pi=4, mode="numeric_ideal")
    pa, pb = np.array(a.extra["phi_nv"]), np.array(b.extra["phi_nv"])
    assert np.all(np.abs(pa - pb) <= 1e-6 * np.maximum(np.abs(pa), 1e-12) + 1e-9)


def test_finite_mode_needs_rabi(fig2_cfg):
    with pytest.raises(ValueError):
        magnetometry_curve(SweepSpec.p_period(8), fig2_cfg, ModulationConfig(), mode="numeric_finite")


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec("p_offset", 1.0, 0.0, 10)
    with pytest.raises(ValueError):
        SweepSpec("p_offset", 0.0, 1.0, 1)
    with pytest.raises(ValueError):
        SweepSpec("frequency", 0.0, 1.0, 10)


def test_curve_sorted_and_csv_round_trip(tmp_path, fig2_cfg, sipht_mod):
    curve = ContrastCurve("p_offset", [3.0, 1.0, 2.0], [0.3, 0.1, 0.2], fig2_cfg, sipht_mod, ReadoutModel())
    assert list(curve.values) == [1.0, 2.0, 3.0] and list(curve.contrast) == [0.1, 0.2, 0.3]
    full = magnetometry_curve(SweepSpec.p_period(33), fig2_cfg, sipht_mod)
    path = full.to_csv(tmp_path / "curve.csv")
    back = ContrastCurve.from_csv(path)
    assert np.array_equal(back.values, full.values) and np.array_equal(back.contrast, full.contrast)
    assert back.cfg == full.cfg and back.mod == full.mod and back.readout == full.readout
