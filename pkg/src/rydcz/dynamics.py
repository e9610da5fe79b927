"""Time evolution under the two-atom master equation and its gamma=0 limit.

The equation of motion uses the sign convention
``d rho/dt = +i[H, rho] + Gamma[rho]``; the pure-state limit is therefore
``d psi/dt = +i H psi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.integrate import RK45
from scipy.integrate._ivp import dop853_coefficients as _dop853

from . import _kernels as K
from .atom import (
    DIM,
    LEVEL_LABELS,
    N_LEVELS,
    AtomLevel,
    SystemParams,
    basis_index,
    build_collapse_ops,
    build_hamiltonian,
)
from .pulses import ControlSet, GaussianPulse

METHODS = ("dop853", "dopri5")


class IntegrationError(RuntimeError):
    """The adaptive integrator could not reach the end of the pulse."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t = {time:.6g} us")
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    n_output_samples: int = 501
    method: str = "dop853"
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.n_output_samples < 2:
            raise ValueError("n_output_samples must be at least 2")
        if self.method not in METHODS:
            raise ValueError(f"unknown integration method {self.method!r}")


@dataclass
class Trajectory:
    """Sampled evolution; ``states`` is ``(n, 25, 25)`` or ``(n, 25)``."""

    times: np.ndarray
    states: np.ndarray
    mode: str
    n_steps: int = 0
    n_fev: int = 0

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _tableau(method: str):
    if method == "dop853":
        n = _dop853.N_STAGES
        A = np.ascontiguousarray(_dop853.A[:n, :n])
        B = np.ascontiguousarray(_dop853.A[n, :n])
        C = np.ascontiguousarray(_dop853.C[:n])
        return A, B, C, np.zeros(n + 1), _dop853.E3.copy(), _dop853.E5.copy(), True, 7
    n = RK45.n_stages
    A = np.zeros((n, n))
    A[:, : RK45.A.shape[1]] = RK45.A
    return A, RK45.B.copy(), RK45.C.copy(), RK45.E.copy(), np.zeros(n + 1), np.zeros(n + 1), False, 4


_TABLEAUX = {m: _tableau(m) for m in METHODS}


def _jump_tables(params: SystemParams):
    """Jump operators as (target, source, rate) on each atom."""
    return [(atom, j, k, r) for atom in (0, 1) for j, k, r in params.channels() if r > 0.0]


def _pulse_arrays(controls: ControlSet):
    shape = controls.omega_p_shape
    empty = np.zeros(1)
    if isinstance(shape, GaussianPulse):
        fpars = np.array([shape.omega_max, shape.t_gate, shape.tau_ratio])
        return K.PULSE_GAUSSIAN, fpars, empty, empty, empty
    knots, values, sharp = shape.knots()
    return K.PULSE_KNOTS, empty, knots, values, sharp


def _stops(t_gate: float, n_samples: int, breakpoints):
    """Integration stop times: output samples merged with pulse breakpoints."""
    samples = np.linspace(0.0, t_gate, n_samples)
    samples[-1] = t_gate
    extra = [b for b in breakpoints if 0.0 < b < t_gate]
    # drop breakpoints that would leave a sliver step next to an output time
    tol = 1e-9 * t_gate
    extra = [b for b in extra if np.min(np.abs(samples - b)) > tol]
    stops = np.concatenate([samples, np.array(extra, dtype=float)])
    rows = np.concatenate([np.arange(n_samples), -np.ones(len(extra), dtype=np.int64)])
    order = np.argsort(stops, kind="stable")
    return stops[order], rows[order].astype(np.int64), samples


def _csr(mat):
    mat = sparse.csr_matrix(mat)
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat.indptr.astype(np.int64), mat.indices.astype(np.int64), mat.data.astype(np.float64)


def _lift(op, dissipative: bool):
    """Hilbert-space generator ``G`` -> action ``G rho + rho G^dag`` on vec(rho)."""
    op = sparse.csr_matrix(op)
    if not dissipative:
        return op
    eye = sparse.identity(DIM, format="csr")
    return (sparse.kron(op, eye) + sparse.kron(eye, op.conj())).tocsr()


def _generator_parts(params: SystemParams, dissipative: bool) -> dict:
    """Control-independent pieces of ``L = fixed + sum_k u_k part_k + Omega_p(t) omega_p``.

    Density mode uses row-major vectorization, ``vec(A rho B) = (A kron B^T) vec(rho)``.
    """
    zero = build_hamiltonian(params, 0.0, 0.0, 0.0, 0.0)
    parts = {
        name: _lift(1j * (build_hamiltonian(params, *unit) - zero), dissipative)
        for name, unit in (
            ("omega_p", (1.0, 0.0, 0.0, 0.0)),
            ("omega_r", (0.0, 1.0, 0.0, 0.0)),
            ("delta_p", (0.0, 0.0, 1.0, 0.0)),
            ("delta", (0.0, 0.0, 0.0, 1.0)),
        )
    }
    g0 = sparse.csr_matrix(1j * zero)
    if not dissipative:
        parts["fixed"] = g0
        return parts
    jumps = []
    local = np.zeros((N_LEVELS, N_LEVELS))
    for atom, j, k, rate in _jump_tables(params):
        local[:] = 0.0
        local[j, k] = math.sqrt(rate)
        op = np.kron(local, np.eye(N_LEVELS)) if atom == 0 else np.kron(np.eye(N_LEVELS), local)
        op = sparse.csr_matrix(op)
        g0 = g0 - 0.5 * (op.T @ op)
        jumps.append(op)
    fixed = _lift(g0, True)
    for op in jumps:
        fixed = fixed + sparse.kron(op, op)
    parts["fixed"] = fixed.tocsr()
    return parts


def _swap_permutation(dissipative: bool) -> np.ndarray:
    """Index map of the atom exchange acting on states or vectorized operators."""
    a, b = np.divmod(np.arange(DIM), N_LEVELS)
    sigma = N_LEVELS * b + a
    if not dissipative:
        return sigma
    return (sigma[:, None] * DIM + sigma[None, :]).ravel()


def _transpose_permutation() -> np.ndarray:
    i, j = np.divmod(np.arange(DIM * DIM), DIM)
    return j * DIM + i


def _closure(mask: np.ndarray, graph) -> np.ndarray:
    while True:
        grown = mask | (graph @ mask.astype(float) > 0)
        if np.array_equal(grown, mask):
            return mask
        mask = grown


class _Reduction:
    """Real coordinates for the components that matter, and the generator in them.

    Three exact reductions are applied:

    * components that stay zero for every control value are dropped, and so
      are components that can never feed the ``observed`` ones;
    * if the initial state is invariant under exchanging the atoms it stays
      so (drive and decay act identically on both atoms), and swapped
      components share one coordinate;
    * in density mode rho stays Hermitian, so ``rho_ij`` and ``rho_ji`` share
      one coordinate and diagonal-like orbits are purely real.

    ``lift_re + 1j * lift_im`` maps coordinates to the full vector and
    ``pick`` selects the coordinates back out of a full vector split into
    ``[real, imag]`` halves.
    """

    def __init__(self, params, dissipative, support, observed, symmetric):
        parts = _generator_parts(params, dissipative)
        graph = sum(abs(m) for m in parts.values()).tocsr()
        graph.data[:] = 1.0
        keep = _closure(support.copy(), graph) & _closure(observed.copy(), graph.T.tocsr())
        n_full = support.size
        sigma = _swap_permutation(dissipative) if symmetric else np.arange(n_full)
        tau = _transpose_permutation() if dissipative else None

        seen = np.zeros(n_full, dtype=bool)
        rows_re, rows_im, cols_re, cols_im, vals_im = [], [], [], [], []
        pick_rows, pick_cols = [], []
        n = 0
        for r in np.flatnonzero(keep):
            if seen[r]:
                continue
            images = {(int(r), 1), (int(sigma[r]), 1)}
            if tau is not None:
                images |= {(int(tau[r]), -1), (int(tau[sigma[r]]), -1)}
            members = {i for i, _ in images}
            seen[list(members)] = True
            real = any((i, -parity) in images for i, parity in images)
            # coordinate n: real part, coordinate n+1: imaginary part
            for i, parity in dict(images).items():
                rows_re.append(i)
                cols_re.append(n)
                if not real:
                    rows_im.append(i)
                    cols_im.append(n + 1)
                    vals_im.append(float(parity))
            pick_rows.append(n)
            pick_cols.append(int(r))
            n += 1
            if not real:
                pick_rows.append(n)
                pick_cols.append(n_full + int(r))
                n += 1
        self.size = n
        self.lift_re = sparse.csr_matrix((np.ones(len(rows_re)), (rows_re, cols_re)), shape=(n_full, n))
        self.lift_im = sparse.csr_matrix((vals_im, (rows_im, cols_im)), shape=(n_full, n))
        self.pick = sparse.csr_matrix((np.ones(n), (pick_rows, pick_cols)), shape=(n, 2 * n_full))
        lift = self.lift_re + 1j * self.lift_im
        self.parts = {}
        for name, m in parts.items():
            full = (m @ lift).tocsr()
            self.parts[name] = (self.pick @ sparse.vstack([full.real, full.imag])).tocsr()

    def reduce(self, y: np.ndarray) -> np.ndarray:
        return self.pick @ np.concatenate([y.real, y.imag])

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Coordinates ``(n, size)`` -> full complex vectors ``(n, n_full)``."""
        return (self.lift_re @ x.T + 1j * (self.lift_im @ x.T)).T

    def generator(self, controls: ControlSet):
        L0 = (
            self.parts["fixed"]
            + controls.omega_r * self.parts["omega_r"]
            + controls.delta_p * self.parts["delta_p"]
            + controls.delta * self.parts["delta"]
        )
        return _csr(L0), _csr(self.parts["omega_p"])


_REDUCTIONS: dict = {}


def _reduction(params: SystemParams, y0: np.ndarray, dissipative: bool, observed=None) -> _Reduction:
    support = np.abs(y0) > 0
    if observed is None:
        observed = np.ones(y0.size, dtype=bool)
    sigma = _swap_permutation(dissipative)
    symmetric = bool(np.array_equal(y0[sigma], y0))
    key = (params.b_rr, params.gamma_p, params.gamma_r, tuple(sorted(params.branching.items())),
           dissipative, symmetric, support.tobytes(), observed.tobytes())
    red = _REDUCTIONS.get(key)
    if red is None:
        if len(_REDUCTIONS) > 64:
            _REDUCTIONS.clear()
        red = _REDUCTIONS[key] = _Reduction(params, dissipative, support, observed, symmetric)
    return red


def _run(y0: np.ndarray, params, controls, cfg: IntegratorConfig, n_samples: int,
         dissipative: bool, observed=None):
    if not np.all(np.isfinite(y0)):
        raise ValueError("initial state contains non-finite entries")
    stops, rows, samples = _stops(controls.t_gate, n_samples, controls.omega_p_shape.breakpoints())
    kind, fpars, knots, kvals, ksharp = _pulse_arrays(controls)
    red = _reduction(params, y0, dissipative, observed)
    (p0, i0, d0), (p1, i1, d1) = red.generator(controls)
    out = np.zeros((n_samples, red.size))
    A, B, C, E, E3, E5, dop853, order = _TABLEAUX[cfg.method]
    status, t_reached, n_steps, n_fev = K.integrate(
        np.ascontiguousarray(red.reduce(y0)), stops, rows, out,
        kind, fpars, knots, kvals, ksharp,
        p0, i0, d0, p1, i1, d1,
        A, B, C, E, E3, E5, dop853, order,
        cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.max_steps,
    )
    if status == K.STATUS_STEP_UNDERFLOW:
        raise IntegrationError("step size underflow", t_reached)
    if status == K.STATUS_MAX_STEPS:
        raise IntegrationError(f"step budget of {cfg.max_steps} exhausted", t_reached)
    if status == K.STATUS_NONFINITE:
        raise IntegrationError("non-finite state", t_reached)
    return samples, np.ascontiguousarray(red.expand(out)), n_steps, n_fev


def lindblad_rhs(rho: np.ndarray, t: float, params: SystemParams, controls: ControlSet) -> np.ndarray:
    """Dense reference right-hand side ``i[H, rho] + Gamma[rho]``."""
    rho = np.asarray(rho)
    if not np.all(np.isfinite(rho)):
        raise ValueError("rho contains non-finite entries")
    H = build_hamiltonian(params, controls.omega_p(t), controls.omega_r, controls.delta_p, controls.delta)
    out = 1j * (H @ rho - rho @ H)
    for op in build_collapse_ops(params):
        dag = op.conj().T
        n = dag @ op
        out += op @ rho @ dag - 0.5 * (n @ rho + rho @ n)
    return out


def evolve_master(
    rho0: np.ndarray,
    params: SystemParams,
    controls: ControlSet,
    cfg: IntegratorConfig = IntegratorConfig(),
    final_only: bool = False,
) -> Trajectory:
    """Integrate the master equation over ``[0, t_gate]``.

    Samples are taken on ``cfg.n_output_samples`` uniform times (just the
    two end points when ``final_only``) and symmetrized to restore exact
    Hermiticity; the integration itself never sees the symmetrization.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (DIM, DIM):
        raise ValueError(f"rho0 must be {DIM}x{DIM}")
    n = 2 if final_only else cfg.n_output_samples
    times, out, n_steps, n_fev = _run(rho0.ravel(), params, controls, cfg, n, True)
    states = out.reshape(n, DIM, DIM)
    states = 0.5 * (states + np.conj(np.transpose(states, (0, 2, 1))))
    return Trajectory(times, states, "density", n_steps, n_fev)


def evolve_unitary(
    psi0: np.ndarray,
    params: SystemParams,
    controls: ControlSet,
    cfg: IntegratorConfig = IntegratorConfig(),
    final_only: bool = False,
) -> Trajectory:
    """Schroedinger evolution ``d psi/dt = +i H psi``; decay rates are ignored."""
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (DIM,):
        raise ValueError(f"psi0 must have {DIM} components")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-12:
        raise ValueError("psi0 must be normalized")
    n = 2 if final_only else cfg.n_output_samples
    times, out, n_steps, n_fev = _run(psi0, params, controls, cfg, n, False)
    return Trajectory(times, out, "vector", n_steps, n_fev)


COMPUTATIONAL_INDICES = tuple(
    basis_index(a, b) for a in (AtomLevel.Q0, AtomLevel.Q1) for b in (AtomLevel.Q0, AtomLevel.Q1)
)


def _block_mask() -> np.ndarray:
    mask = np.zeros((DIM, DIM), dtype=bool)
    mask[np.ix_(COMPUTATIONAL_INDICES, COMPUTATIONAL_INDICES)] = True
    return mask.ravel()


_BLOCK_MASK = _block_mask()


def final_computational_block(
    rho0: np.ndarray,
    params: SystemParams,
    controls: ControlSet,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> np.ndarray:
    """Final 4x4 block of rho on ``|00>, |01>, |10>, |11>`` (unnormalized).

    Only components that can influence this block are integrated, which
    makes this the fast path for scoring.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (DIM, DIM):
        raise ValueError(f"rho0 must be {DIM}x{DIM}")
    _, out, _, _ = _run(rho0.ravel(), params, controls, cfg, 2, True, _BLOCK_MASK)
    rho = out[-1].reshape(DIM, DIM)
    block = rho[np.ix_(COMPUTATIONAL_INDICES, COMPUTATIONAL_INDICES)]
    return 0.5 * (block + block.conj().T)


def density_from_vector(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, np.conj(psi))


def plus_plus_state() -> np.ndarray:
    """Density matrix of ``(|0>+|1>)(|0>+|1>)/2`` on both atoms."""
    psi = np.zeros(DIM, dtype=complex)
    for a in (AtomLevel.Q0, AtomLevel.Q1):
        for b in (AtomLevel.Q0, AtomLevel.Q1):
            psi[basis_index(a, b)] = 0.5
    return density_from_vector(psi)


def basis_state(a: AtomLevel, b: AtomLevel) -> np.ndarray:
    psi = np.zeros(DIM, dtype=complex)
    psi[basis_index(a, b)] = 1.0
    return psi


_SYM_1R = (basis_state(AtomLevel.Q1, AtomLevel.R) + basis_state(AtomLevel.R, AtomLevel.Q1)) / math.sqrt(2)


@dataclass
class PopulationReport:
    """Basis populations ``P[:, index]`` and the composite observables.

    ``p_prime[level]`` is ``sum_j P_ij + P_ji`` (the diagonal term counted
    twice), ``p_tilde_00DD = P'_00 + P'_DD - (P_0D + P_D0)``.
    """

    times: np.ndarray
    P: np.ndarray
    trace: np.ndarray
    p_000D: np.ndarray
    p_sym_1r: np.ndarray
    p_prime: dict = field(default_factory=dict)
    p_tilde_00DD: np.ndarray | None = None

    def pop(self, a: AtomLevel, b: AtomLevel) -> np.ndarray:
        return self.P[:, basis_index(a, b)]

    def columns(self) -> dict[str, np.ndarray]:
        """Flat ``name -> series`` mapping in a fixed column order."""
        cols = {"time_us": self.times}
        for i in range(DIM):
            a, b = divmod(i, N_LEVELS)
            cols["P_" + LEVEL_LABELS[AtomLevel(a)] + LEVEL_LABELS[AtomLevel(b)]] = self.P[:, i]
        cols["P_000D"] = self.p_000D
        cols["P_tilde_00DD"] = self.p_tilde_00DD
        cols["P_sym_1r"] = self.p_sym_1r
        for level in AtomLevel:
            cols["Pprime_" + LEVEL_LABELS[level] * 2] = self.p_prime[level]
        cols["trace"] = self.trace
        return cols


def populations(traj: Trajectory) -> PopulationReport:
    if traj.mode == "density":
        P = np.real(np.diagonal(traj.states, axis1=1, axis2=2)).copy()
        sym = np.real(np.einsum("i,nij,j->n", np.conj(_SYM_1R), traj.states, _SYM_1R))
    else:
        P = np.abs(traj.states) ** 2
        sym = np.abs(traj.states @ np.conj(_SYM_1R)) ** 2
    grid = P.reshape(-1, N_LEVELS, N_LEVELS)
    p_prime = {lvl: grid[:, lvl, :].sum(axis=1) + grid[:, :, lvl].sum(axis=1) for lvl in AtomLevel}
    q0, d = AtomLevel.Q0, AtomLevel.D
    p_000D = grid[:, q0, q0] + grid[:, q0, d]
    p_tilde = p_prime[q0] + p_prime[d] - (grid[:, q0, d] + grid[:, d, q0])
    return PopulationReport(
        times=traj.times,
        P=P,
        trace=P.sum(axis=1),
        p_000D=p_000D,
        p_sym_1r=sym,
        p_prime=p_prime,
        p_tilde_00DD=p_tilde,
    )
