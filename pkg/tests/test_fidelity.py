import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TWO_PI, random_controls, zero_controls
from rydcz.atom import DIM, AtomLevel, SystemParams
from rydcz.dynamics import COMPUTATIONAL_INDICES, basis_state, density_from_vector, plus_plus_state
from rydcz.fidelity import (
    BellPipelineConfig,
    bell_fidelity,
    cz_phase_diagnostic,
    fidelity_of_block,
    project_computational,
    score_controls,
    score_report,
    wrap_phase,
)

PLUS_PLUS = np.full(4, 0.5, dtype=complex)


def _embed(block):
    rho = np.zeros((DIM, DIM), dtype=complex)
    rho[np.ix_(COMPUTATIONAL_INDICES, COMPUTATIONAL_INDICES)] = block
    return rho


def _gate_block(diag):
    psi = np.asarray(diag) * PLUS_PLUS
    return np.outer(psi, psi.conj())


def _random_block(rng, trace=1.0):
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    b = a @ a.conj().T
    return trace * b / np.trace(b).real


def test_projection_examples():
    Q0, P, R = AtomLevel.Q0, AtomLevel.P, AtomLevel.R
    block, leak = project_computational(density_from_vector(basis_state(Q0, Q0)))
    assert np.array_equal(block, np.diag([1, 0, 0, 0]).astype(complex)) and leak == 0.0
    block, leak = project_computational(density_from_vector(basis_state(R, R)))
    assert not np.any(block) and leak == 1.0
    mixed = 0.5 * density_from_vector(basis_state(Q0, Q0)) + 0.5 * density_from_vector(basis_state(Q0, P))
    assert project_computational(mixed)[1] == 0.5


@pytest.mark.parametrize("diag", [(1, 1, 1, -1), (1, -1, -1, -1), (-1, 1, 1, 1)])
def test_ideal_cz_scores_one(diag):
    rep = bell_fidelity(_embed(_gate_block(diag)))
    assert rep.f_bell == pytest.approx(1.0, abs=1e-9)
    assert rep.leakage == pytest.approx(0.0, abs=1e-15)


def test_ideal_cz_optimal_angle():
    rep = fidelity_of_block(_gate_block((1, 1, 1, -1)))
    assert min(rep.theta_opt, 2 * math.pi - rep.theta_opt) == pytest.approx(0.0, abs=1e-6)


def test_cz_with_local_phases_still_scores_one():
    phi = 0.7
    diag = np.exp(1j * phi * np.array([0, 1, 1, 2])) * np.array([1, 1, 1, -1])
    rep = fidelity_of_block(_gate_block(diag))
    assert rep.f_bell == pytest.approx(1.0, abs=1e-9)
    assert rep.theta_opt == pytest.approx(2 * math.pi - phi, abs=1e-6)


def test_identity_scores_half():
    assert bell_fidelity(plus_plus_state()).f_bell == pytest.approx(0.5, abs=1e-9)


def test_maximally_mixed_scores_quarter():
    rep = fidelity_of_block(np.eye(4) / 4)
    assert rep.f_bell == pytest.approx(0.25, abs=1e-12)
    assert rep.coh_mag == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_fidelity_bounded(seed):
    f = fidelity_of_block(_random_block(np.random.default_rng(seed))).f_bell
    assert 0.0 <= f <= 1.0 + 1e-9


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * math.pi))
def test_invariant_under_extra_z_rotation(seed, phi):
    block = _random_block(np.random.default_rng(seed))
    z = np.exp(1j * phi * np.array([0, 1, 1, 2]))
    rotated = z[:, None] * block * z.conj()[None, :]
    assert fidelity_of_block(rotated).f_bell == pytest.approx(fidelity_of_block(block).f_bell, abs=1e-9)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_leakage_scales_fidelity(seed, leak):
    block = _random_block(np.random.default_rng(seed))
    full = fidelity_of_block(block)
    scaled = fidelity_of_block((1 - leak) * block)
    assert scaled.f_bell == pytest.approx((1 - leak) * full.f_bell, abs=1e-12)
    assert scaled.leakage == pytest.approx(leak, abs=1e-12)


def test_refinement_beats_scan():
    block = _gate_block(np.exp(1j * 0.0123 * np.array([0, 1, 1, 2])) * np.array([1, 1, 1, -1]))
    coarse = fidelity_of_block(block, BellPipelineConfig(theta_scan_points=8))
    assert coarse.f_bell == pytest.approx(1.0, abs=1e-9)


def test_pipeline_config_validation():
    with pytest.raises(ValueError):
        BellPipelineConfig(theta_scan_points=4)
    with pytest.raises(ValueError):
        BellPipelineConfig(theta_refine_tol=0.0)


def test_zero_controls_score_identity():
    assert score_controls(zero_controls(1.0), SystemParams()) == pytest.approx(0.5, abs=1e-9)


def test_scores_bitwise_reproducible(rng):
    c = random_controls(rng, TWO_PI * 500, 1.0)
    assert score_controls(c, SystemParams()) == score_controls(c, SystemParams())


def test_report_matches_full_density_route(rng):
    from rydcz.dynamics import evolve_master

    c = random_controls(rng, TWO_PI * 500, 0.5)
    rho = evolve_master(plus_plus_state(), SystemParams(), c, final_only=True).final_state
    assert score_report(c, SystemParams()).f_bell == pytest.approx(bell_fidelity(rho).f_bell, abs=1e-8)


def test_wrap_phase():
    assert wrap_phase(math.pi) == math.pi
    assert wrap_phase(-math.pi) == math.pi
    assert wrap_phase(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_phase(0.1) == 0.1


def test_phase_diagnostic_zero_controls():
    diag = cz_phase_diagnostic(zero_controls(1.0), SystemParams())
    assert diag.phi_01 == 0.0 and diag.phi_11 == 0.0
    assert abs(diag.phase_error) == pytest.approx(math.pi)
    assert diag.reliable


def test_phase_diagnostic_global_phase_invariance():
    # phase error is built from differences, so a shared phase cannot enter
    phi_01, phi_11, g = 0.3, -1.1, 0.77
    a = wrap_phase(phi_11 - 2 * phi_01 - math.pi)
    b = wrap_phase((phi_11 + g) - 2 * (phi_01 + g) - math.pi + g)
    assert a == pytest.approx(b, abs=1e-12)


def test_phase_diagnostic_flags_non_returning_state():
    from conftest import constant_controls

    params = SystemParams().with_gammas(0, 0)
    omega = TWO_PI * 20.0
    c = constant_controls(omega, math.pi / omega)  # pi pulse parks |01> in |0p>
    diag = cz_phase_diagnostic(c, params)
    assert diag.return_01 < 1e-6 and not diag.reliable
