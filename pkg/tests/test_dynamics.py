import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import TWO_PI, constant_controls, random_controls, zero_controls
from rydcz.atom import DIM, AtomLevel, SystemParams, basis_index
from rydcz.dynamics import (
    COMPUTATIONAL_INDICES,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    basis_state,
    density_from_vector,
    evolve_master,
    evolve_unitary,
    final_computational_block,
    lindblad_rhs,
    plus_plus_state,
    populations,
)
from rydcz.pulses import ControlSet, GaussianPulse, SegmentedPulse

Q0, Q1, D, P, R = AtomLevel
NO_DECAY = SystemParams().with_gammas(0.0, 0.0)


def _rho(a, b):
    return density_from_vector(basis_state(a, b))


def _random_density(rng, rank=3):
    vecs = rng.normal(size=(DIM, rank)) + 1j * rng.normal(size=(DIM, rank))
    rho = vecs @ vecs.conj().T
    return rho / np.trace(rho)


# right-hand side -------------------------------------------------------------


def test_rhs_zero_without_drive_or_decay():
    params = SystemParams(b_rr=0.0, gamma_p=0.0, gamma_r=0.0)
    rho = _random_density(np.random.default_rng(1))
    assert not np.any(lindblad_rhs(rho, 0.0, params, zero_controls(1.0)))


def test_rhs_intermediate_decay_rate():
    params = SystemParams()
    d = lindblad_rhs(_rho(Q0, P), 0.0, params, zero_controls(1.0))
    i = basis_index(Q0, P)
    assert d[i, i].real == pytest.approx(-params.gamma_p, rel=1e-14)


def test_rhs_traceless(rng):
    c = random_controls(rng, 1000.0, 1.0)
    for _ in range(5):
        rho = _random_density(rng)
        rho = 0.5 * (rho + rho.conj().T)
        assert abs(np.trace(lindblad_rhs(rho, 0.3 * c.t_gate, SystemParams(), c))) <= 1e-12 * np.linalg.norm(rho) * 1e4


def test_rhs_rejects_nonfinite():
    rho = _rho(Q0, Q0)
    rho[0, 0] = math.nan
    with pytest.raises(ValueError):
        lindblad_rhs(rho, 0.0, SystemParams(), zero_controls(1.0))


# analytic oracles ---------------------------------------------------------------


def test_rabi_transfer():
    omega = TWO_PI * 10.0
    cfg = IntegratorConfig(n_output_samples=51)
    traj = evolve_master(_rho(Q0, Q1), NO_DECAY, constant_controls(omega, 0.05), cfg)
    p0p = populations(traj).pop(Q0, P)
    assert np.max(np.abs(p0p - np.sin(omega * traj.times / 2) ** 2)) <= 1e-6
    assert p0p[-1] == pytest.approx(1.0, abs=1e-6)


def test_exponential_decay_of_intermediate_level():
    traj = evolve_master(_rho(Q0, P), SystemParams(), zero_controls(0.155), final_only=True)
    assert populations(traj).pop(Q0, P)[-1] == pytest.approx(math.exp(-1.0), abs=1e-6)


def test_decay_branching_into_dark_state():
    rep = populations(evolve_master(_rho(Q0, P), SystemParams(), zero_controls(5.0), final_only=True))
    assert rep.pop(Q0, D)[-1] == pytest.approx(7 / 8, abs=1e-4)
    assert rep.pop(Q0, Q0)[-1] + rep.pop(Q0, Q1)[-1] == pytest.approx(1 / 8, abs=1e-4)


@pytest.mark.parametrize("a, b", [(Q0, Q0), (Q0, Q1), (Q1, Q0), (Q1, Q1)])
def test_undriven_qubit_states_stationary(a, b):
    rho0 = _rho(a, b)
    traj = evolve_master(rho0, NO_DECAY, zero_controls(2.0), final_only=True)
    assert np.max(np.abs(traj.final_state - rho0)) <= 1e-9
    psi = evolve_unitary(basis_state(a, b), SystemParams(b_rr=0.0).with_gammas(0, 0), zero_controls(2.0))
    assert np.max(np.abs(psi.final_state - basis_state(a, b))) <= 1e-12


def test_pure_and_density_agree(rng):
    cfg = IntegratorConfig(n_output_samples=21)
    for _ in range(3):
        c = random_controls(rng, TWO_PI * 300.0, 0.5)
        psi0 = (basis_state(Q0, Q1) + basis_state(Q1, Q1)) / math.sqrt(2)
        vec = populations(evolve_unitary(psi0, NO_DECAY, c, cfg)).P
        mat = populations(evolve_master(density_from_vector(psi0), NO_DECAY, c, cfg)).P
        assert np.max(np.abs(vec - mat)) <= 1e-6


def test_unitary_norm_conserved_over_long_gate():
    c = ControlSet(GaussianPulse(TWO_PI * 50, 10.0), TWO_PI * 40, TWO_PI * 20)
    traj = evolve_unitary(basis_state(Q1, Q1), NO_DECAY, c, IntegratorConfig(n_output_samples=11))
    assert np.max(np.abs(np.linalg.norm(traj.states, axis=1) - 1.0)) <= 1e-8


def test_matches_independent_dense_solver():
    params = SystemParams()
    c = ControlSet(SegmentedPulse.from_half([60, 100, 40, 160, 80, 120], 0.3), 140.0, 50.0, 6.0)
    rho0 = plus_plus_state()
    times = np.array([0.0, 0.15, 0.3])

    def f(t, y):
        return lindblad_rhs(y.reshape(DIM, DIM), t, params, c).ravel()

    ref = solve_ivp(f, (0, 0.3), rho0.ravel(), method="DOP853", rtol=1e-9, atol=1e-11, t_eval=times)
    ref_states = ref.y.T.reshape(-1, DIM, DIM)
    ours = evolve_master(rho0, params, c, IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, n_output_samples=3))
    assert np.allclose(ours.times, times)
    assert np.max(np.abs(ours.states - ref_states)) <= 1e-7


# physicality and numerics -------------------------------------------------------


def test_physicality_on_random_controls(rng):
    cfg = IntegratorConfig(n_output_samples=6)
    for _ in range(4):
        c = random_controls(rng, TWO_PI * 500.0, 2.0)
        traj = evolve_master(plus_plus_state(), SystemParams(), c, cfg)
        assert np.all(np.diff(traj.times) > 0) and traj.times[0] == 0.0
        assert traj.times[-1] == pytest.approx(c.t_gate, rel=1e-15)
        for rho in traj.states:
            assert abs(np.trace(rho) - 1.0) <= 1e-7
            assert np.max(np.abs(rho - rho.conj().T)) <= 1e-9
            assert np.linalg.eigvalsh(rho).min() >= -1e-8


def test_tolerance_refinement_converges():
    c = ControlSet(GaussianPulse(TWO_PI * 400, 0.8), TWO_PI * 450, TWO_PI * 100)
    finals = []
    for rtol in (1e-7, 5e-8):
        cfg = IntegratorConfig(rel_tol=rtol, abs_tol=rtol * 1e-2)
        finals.append(evolve_master(plus_plus_state(), SystemParams(), c, cfg, final_only=True).final_state)
    assert np.max(np.abs(finals[0] - finals[1])) < 10 * 1e-7


def test_dopri5_agrees_with_dop853():
    c = ControlSet(GaussianPulse(TWO_PI * 100, 0.5), TWO_PI * 120, TWO_PI * 30)
    a = evolve_master(plus_plus_state(), SystemParams(), c, IntegratorConfig(method="dopri5"), final_only=True)
    b = evolve_master(plus_plus_state(), SystemParams(), c, IntegratorConfig(), final_only=True)
    assert np.max(np.abs(a.final_state - b.final_state)) <= 1e-6


def test_step_budget_failure_reports_time():
    c = ControlSet(GaussianPulse(TWO_PI * 400, 2.0), TWO_PI * 400, 0.0)
    with pytest.raises(IntegrationError) as info:
        evolve_master(plus_plus_state(), SystemParams(), c, IntegratorConfig(max_steps=10))
    assert 0.0 <= info.value.time < 2.0


def test_fast_block_matches_full_evolution(rng):
    c = random_controls(rng, TWO_PI * 800.0, 0.6)
    full = evolve_master(plus_plus_state(), SystemParams(), c, final_only=True).final_state
    block = final_computational_block(plus_plus_state(), SystemParams(), c)
    ref = full[np.ix_(COMPUTATIONAL_INDICES, COMPUTATIONAL_INDICES)]
    assert np.max(np.abs(block - ref)) <= 1e-8


def test_input_validation():
    with pytest.raises(ValueError):
        evolve_master(np.eye(4), SystemParams(), zero_controls(1.0))
    with pytest.raises(ValueError):
        evolve_unitary(2 * basis_state(Q0, Q0), SystemParams(), zero_controls(1.0))
    with pytest.raises(ValueError):
        IntegratorConfig(method="euler")


def test_deterministic_bitwise(rng):
    c = random_controls(rng, TWO_PI * 500.0, 1.0)
    a = evolve_master(plus_plus_state(), SystemParams(), c, IntegratorConfig(n_output_samples=5))
    b = evolve_master(plus_plus_state(), SystemParams(), c, IntegratorConfig(n_output_samples=5))
    assert np.array_equal(a.states, b.states)


# populations -------------------------------------------------------------------


def _single(rho):
    return populations(Trajectory(np.array([0.0]), rho[None], "density"))


def test_populations_ground_state():
    rep = _single(_rho(Q0, Q0))
    assert rep.p_000D[0] == 1.0
    assert rep.p_prime[Q0][0] == 2.0
    assert rep.p_tilde_00DD[0] == rep.p_prime[Q0][0] + rep.p_prime[D][0]


def test_populations_symmetric_rydberg_state():
    psi = (basis_state(Q1, R) + basis_state(R, Q1)) / math.sqrt(2)
    rep = _single(density_from_vector(psi))
    assert rep.p_sym_1r[0] == pytest.approx(1.0, abs=1e-15)


def test_populations_double_rydberg():
    rep = _single(_rho(R, R))
    assert rep.pop(R, R)[0] == 1.0
    assert rep.trace[0] == 1.0 and rep.P.sum() == 1.0
    assert sum(rep.p_prime[lvl][0] for lvl in AtomLevel) == pytest.approx(2.0)
    assert rep.p_000D[0] == 0.0


def test_population_columns_sum_to_trace(rng):
    c = random_controls(rng, TWO_PI * 300.0, 1.0)
    rep = populations(evolve_master(plus_plus_state(), SystemParams(), c, IntegratorConfig(n_output_samples=7)))
    cols = rep.columns()
    total = sum(v for k, v in cols.items() if k.startswith("P_") and len(k) == 4)
    assert np.max(np.abs(total - cols["trace"])) <= 1e-7
    assert np.all(rep.P >= -1e-9) and np.all(rep.P <= 1 + 1e-9)
    assert {"P_01", "P_0p", "P_0r", "P_000D", "P_tilde_00DD", "P_sym_1r"} <= set(cols)


def test_vector_and_density_reports_agree():
    psi = (basis_state(Q1, R) + basis_state(R, Q1) + basis_state(Q0, P)) / math.sqrt(3)
    a = populations(Trajectory(np.array([0.0]), psi[None], "vector"))
    b = _single(density_from_vector(psi))
    assert np.allclose(a.P, b.P) and np.allclose(a.p_sym_1r, b.p_sym_1r)
