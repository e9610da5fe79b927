import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from conftest import TWO_PI
from rydcz.atom import SystemParams
from rydcz.dynamics import IntegratorConfig
from rydcz.fidelity import score_report
from rydcz.pulses import ControlSet, GaussianPulse, SegmentedPulse
from rydcz.robustness import (
    FluctuationSpec,
    SweepGrid,
    ThermalSpec,
    doppler_detuning,
    perturb_controls,
    run_sweep,
)

CONTROLS = ControlSet(GaussianPulse(TWO_PI * 300, 0.4), TWO_PI * 350, TWO_PI * 120)


def test_zero_temperature_no_shift():
    assert doppler_detuning(ThermalSpec()) == (0.0, 0.0)


def test_cesium_rms_velocity_and_shift():
    spec = ThermalSpec(temperature=100e-6)
    assert spec.v_rms == pytest.approx(math.sqrt(1.380649e-27 / 2.20695e-25), rel=1e-9)
    assert spec.v_rms == pytest.approx(0.0791, abs=1e-4)
    d_p, d_r = doppler_detuning(spec)
    assert d_p == pytest.approx(1.082, abs=1e-3)
    assert d_r == pytest.approx(2 * math.pi / 1038e-9 * spec.v_rms * 1e-6, rel=1e-12)


def test_shift_scales_as_root_temperature():
    a = doppler_detuning(ThermalSpec(temperature=25e-6))[0]
    b = doppler_detuning(ThermalSpec(temperature=100e-6))[0]
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_sign_flips_shifts():
    plus = doppler_detuning(ThermalSpec(temperature=1e-5))
    minus = doppler_detuning(ThermalSpec(temperature=1e-5, sign=-1))
    assert minus == (-plus[0], -plus[1])


def test_identity_perturbation():
    assert perturb_controls(CONTROLS, FluctuationSpec(), ThermalSpec()) == CONTROLS


def test_amplitude_offset_scales_envelope():
    seg = ControlSet(SegmentedPulse.from_half([1, 2, 3, 4, 5, 6], 1.0), 7.0, 8.0, 0.5)
    out = perturb_controls(seg, FluctuationSpec(0.1), ThermalSpec())
    t = np.linspace(0, 1, 57)
    assert np.allclose(out.omega_p(t), 1.1 * seg.omega_p(t), rtol=1e-12, atol=0)
    assert out.omega_r == pytest.approx(7.7) and out.delta_p == 8.0 and out.t_gate == 1.0


def test_offset_and_doppler_compose():
    thermal = ThermalSpec(temperature=100e-6)
    out = perturb_controls(CONTROLS, FluctuationSpec(-0.1), thermal)
    d_p, d_r = doppler_detuning(thermal)
    assert out.omega_p_shape.omega_max == pytest.approx(0.9 * CONTROLS.omega_p_shape.omega_max)
    assert out.delta_p == pytest.approx(CONTROLS.delta_p + d_p)
    assert out.delta == pytest.approx(CONTROLS.delta + d_p + d_r)
    assert out.delta_r == pytest.approx(CONTROLS.delta_r + d_r)


@pytest.mark.parametrize("kw", [dict(temperature=-1.0), dict(mass=0.0), dict(sign=0)])
def test_thermal_validation(kw):
    with pytest.raises(ValueError):
        ThermalSpec(**kw)


def test_offset_validation():
    with pytest.raises(ValueError):
        FluctuationSpec(0.6)
    with pytest.raises(ValueError):
        SweepGrid((0.0,), ())


def test_single_cell_grid_is_baseline():
    res = run_sweep(CONTROLS, SystemParams(), SweepGrid((0.0,), (0.0,)))
    assert res.f_bell.shape == (1, 1)
    assert res.f_bell[0, 0] == res.baseline
    assert res.baseline == score_report(CONTROLS, SystemParams()).f_bell
    assert res.max_drop() == 0.0


def test_grid_layout_and_order_independence():
    grid = SweepGrid((0.0, 50e-6, 100e-6), (-0.1, 0.0, 0.1))
    serial = run_sweep(CONTROLS, SystemParams(), grid)
    assert serial.f_bell.shape == (3, 3) and len(grid.cells()) == 9
    assert serial.f_bell[0, 1] == serial.baseline
    for i, t in enumerate(grid.temperatures):
        for j, d in enumerate(grid.offsets):
            c = perturb_controls(CONTROLS, FluctuationSpec(d), ThermalSpec(temperature=t))
            assert serial.f_bell[i, j] == score_report(c, SystemParams()).f_bell
    with ProcessPoolExecutor(max_workers=2) as pool:
        parallel = run_sweep(CONTROLS, SystemParams(), grid, executor=pool)
    assert np.array_equal(serial.f_bell, parallel.f_bell)


def test_unscorable_baseline_raises():
    from rydcz.dynamics import IntegrationError

    strong = ControlSet(GaussianPulse(TWO_PI * 3000, 3.0), TWO_PI * 3000, 0.0)
    with pytest.raises(IntegrationError):
        run_sweep(strong, SystemParams(), SweepGrid((0.0,), (0.0,)), IntegratorConfig(max_steps=200))


def test_missing_cell_keeps_shape(monkeypatch):
    import rydcz.robustness as rob
    from rydcz.dynamics import IntegrationError

    real = rob.score_report

    def flaky(c, *args):
        if c.omega_r > CONTROLS.omega_r:
            raise IntegrationError("step size underflow", 0.1)
        return real(c, *args)

    monkeypatch.setattr(rob, "score_report", flaky)
    res = run_sweep(CONTROLS, SystemParams(), SweepGrid((0.0, 1e-5), (0.0, 0.1)))
    assert res.f_bell.shape == (2, 2)
    assert np.isnan(res.f_bell[:, 1]).all() and np.isfinite(res.f_bell[:, 0]).all()
    assert [(i, j) for i, j, _ in res.missing] == [(0, 1), (1, 1)]
