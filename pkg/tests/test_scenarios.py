import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitchain.errors import ConfigError, PeakAmbiguousWarning, ScenarioWarning, UnknownPreset
from eitchain.medium import Layer, MediumProfile, ModulationProtocol, PulseSpec
from eitchain.scenarios import (
    PRESETS,
    SODIUM_PER_UM,
    Diagnostics,
    Scenario,
    adiabaticity_report,
    backward_energy,
    crossing_time,
    feature_width,
    forward_part,
    fwhm,
    preset,
    rel_l2,
    rescale,
    run_scenario,
    second_moment_width,
    tracked_peak,
)


def small_slab(sigma_t=150.0, **kw):
    med = MediumProfile((Layer(0.0, 100.0, 0.01, gamma_e=1e-3),), {"default": ModulationProtocol.constant(0.07)})
    opts = dict(t_end=2500.0, x_min=-2048.0, x_max=2048.0, n_points=4096, diagnostics=("restoration",))
    opts.update(kw)
    return Scenario("small", med, PulseSpec(-1000.0, sigma_t), **opts)


@pytest.mark.parametrize("name", list(PRESETS))
def test_presets_build_and_validate(name):
    sc = preset(name)
    assert sc.name == name
    assert sc.t_end > sc.t_start
    if sc.kind == "grid":
        g = sc.grid()
        assert g.n_points == sc.n_points


def test_unknown_preset_lists_choices():
    with pytest.raises(UnknownPreset) as err:
        preset("fig9")
    assert "static_interface" in str(err.value)


def test_ramp_preset_options():
    slow = preset("homogeneous_ramp")
    fast = preset("homogeneous_ramp", variant="speed_up", ramp_shape="linear", ramp_time=50.0)
    assert slow.meta["v_ratio"] == 0.5 and fast.meta["v_ratio"] == 1.8
    lay = fast.medium.layers[0]
    v0 = fast.medium.velocity(lay, 0.0)
    assert fast.medium.velocity(lay, 1e4) == pytest.approx(1.8 * v0, rel=1e-12)
    with pytest.raises(ConfigError):
        preset("homogeneous_ramp", variant="sideways")


def test_storage_preset_gamma_option():
    sc = preset("storage_single_layer", gamma_e=0.07)
    assert sc.medium.layers[0].gamma_e == 0.07
    assert sc.engines == ("mb",)
    with pytest.raises(ConfigError):
        sc.with_engine("effective")


def test_sodium_units():
    assert SODIUM_PER_UM == pytest.approx(10.647, rel=1e-3)
    sc = preset("sodium_single_layer")
    assert sc.medium.layers[0].thickness == pytest.approx(200.0 * SODIUM_PER_UM)
    assert sc.kind == "chain" and sc.engines == ("effective",)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        small_slab(engine="fdtd")
    with pytest.raises(ConfigError):
        small_slab(launch="teleport")
    with pytest.raises(ConfigError):
        small_slab(t_end=-1.0)
    with pytest.raises(ConfigError):
        small_slab(n_points=100)


def test_check_warns_on_wide_bandwidth():
    sc = small_slab(sigma_t=20.0)
    with pytest.warns(ScenarioWarning):
        notes = sc.check()
    assert notes and "window" in notes[0]
    quiet = small_slab(sigma_t=20.0, lossless=False)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert quiet.check() == []


def test_grid_override_by_dx():
    sc = small_slab()
    assert sc.grid(dx=0.25).n_points == 16384


def test_small_run_both_engines_agree_on_exit():
    # a long pulse keeps the EIT dispersion beyond group delay and diffusion small
    sc = small_slab(600.0, x_min=-8192.0, x_max=8192.0, n_points=8192, t_end=8000.0)
    run = run_scenario(replace(sc, pulse=replace(sc.pulse, center_x0=-4000.0)), engine="both")
    assert set(run.diagnostics) == {"mb", "effective"}
    assert run.comparison["final_profile_rel_l2"] < 0.05
    assert run.diagnostics["effective"].extra["transmitted_fraction"] == pytest.approx(1.0, abs=0.02)


def test_chain_run_is_fast_and_measured():
    run = run_scenario(preset("sodium_double_layer"))
    d = run.diagnostics["effective"].as_dict()
    assert d["notch_count"] >= 1
    assert 0 < d["transmitted_fraction"] <= 1.0 + 1e-9
    with pytest.raises(ConfigError):
        run_scenario(preset("sodium_double_layer"), dx=1.0)


def test_diagnostics_dict_drops_unset():
    d = Diagnostics(delay=3.0, extra={"x": 1})
    assert d.as_dict() == {"delay": 3.0, "x": 1}


def test_widths():
    x = np.linspace(-50, 50, 20001)
    y = np.exp(-(x**2) / (2 * 4.0**2))
    assert second_moment_width(x, y) == pytest.approx(4.0, rel=1e-6)
    assert fwhm(x, y) == pytest.approx(2 * np.sqrt(2 * np.log(2)) * 4.0, rel=1e-5)
    assert second_moment_width(x, 0 * y) == 0.0


def test_tracked_peak_warns_on_twin_maxima():
    x = np.linspace(0, 100, 1001)
    twin = np.exp(-((x - 30) ** 2) / 8) + 0.95 * np.exp(-((x - 70) ** 2) / 8)
    with pytest.warns(PeakAmbiguousWarning):
        xp, _, cands = tracked_peak(x, twin)
    assert xp == pytest.approx(30.0, abs=0.05) and len(cands) == 2
    flat = np.clip(1.2 - np.abs(x - 50) / 30, 0, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        tracked_peak(x, flat)


@settings(max_examples=20, deadline=None)
@given(st.floats(20.0, 200.0), st.floats(-100.0, 100.0))
def test_feature_width_of_a_box(width, centre):
    x = np.linspace(-400, 400, 8001)
    a, b = centre - width / 2, centre + width / 2
    box = 1.0 + np.tanh((x - a) / 2) - np.tanh((x - b) / 2)
    assert feature_width(x, box, centre - width, centre + width, "peak") == pytest.approx(width, abs=0.05)
    assert feature_width(x, 4.0 - box, centre - width, centre + width, "hole") == pytest.approx(width, abs=0.05)


def test_feature_width_validation():
    x = np.arange(10.0)
    with pytest.raises(ConfigError):
        feature_width(x, x, 0.0, 2.0, "peak")


def test_crossing_time():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    xp = np.array([0.0, 2.0, 4.0, 6.0])
    assert crossing_time(t, xp, 3.0) == pytest.approx(1.5)
    with pytest.raises(ConfigError):
        crossing_time(t, xp, 10.0)


def test_direction_split():
    dx = 0.5
    x = np.arange(4096) * dx
    env = np.exp(-((x - 1000) ** 2) / (2 * 50.0**2))
    fwd = env.astype(complex)
    back = env * np.exp(-2j * x)  # lab wave vector -1 is k - k_p = -2
    assert backward_energy(fwd, dx) < 1e-12
    assert backward_energy(back, dx) == pytest.approx(np.sum(env**2) * dx, rel=1e-9)
    assert np.allclose(forward_part(fwd + back, dx), fwd, atol=1e-9)


def test_rel_l2():
    assert rel_l2(np.array([1.0, 1.0]), np.array([1.0, 1.0])) == 0.0


def test_adiabaticity_report_margins():
    rows = adiabaticity_report(preset("homogeneous_ramp"))
    ramp = [r for r in rows if r["t_end"] > r["t_start"]]
    assert len(ramp) == 1 and 0 < ramp[0]["margin"] < 1
    with pytest.raises(ConfigError):
        adiabaticity_report(preset("sodium_double_layer"), leakage=True)


def test_adiabaticity_leakage_grows_with_ramp_speed():
    gentle = adiabaticity_report(preset("homogeneous_ramp", ramp_time=200.0), leakage=True)
    abrupt = adiabaticity_report(preset("homogeneous_ramp", ramp_time=5.0), leakage=True)
    leak = [r["leakage"] for r in gentle if r["t_end"] > r["t_start"]][0]
    fast = [r["leakage"] for r in abrupt if r["t_end"] > r["t_start"]][0]
    assert fast > leak


def test_rescale_preserves_velocities_and_dimensionless_ratios():
    sc = preset("static_interface")
    big = rescale(sc, 2.0)
    lay, lay2 = sc.medium.layers[0], big.medium.layers[0]
    assert big.medium.velocity(lay2, 0.0) == pytest.approx(sc.medium.velocity(lay, 0.0), rel=1e-12)
    assert lay2.thickness * 2.0 == pytest.approx(lay.thickness)
    assert big.pulse.sigma_t * 2.0 == pytest.approx(sc.pulse.sigma_t)
    assert big.meta["x_detector"] * 2.0 == pytest.approx(sc.meta["x_detector"])
