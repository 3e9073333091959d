"""Kubo's stochastic Liouville equation in a truncated oscillator basis.

The noisy reduced density matrix obeys

    i*hbar * d rho/dt = [H_S, rho] + 1/2 [X, {gamma*P/m - eta(t), rho}]

with a c-number noise path eta(t). Operators live in the Fock basis of a
reference oscillator of frequency basis_omega; the anticommutator structure
fixes the operator ordering of the friction term.

Per realization the noisy rho need not stay positive; only the ensemble
average is a physical state. Positivity and truncation leakage are therefore
monitored and flagged, not enforced.
"""

import logging
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import linalg as spla

from qlangevin.bath_kernel import BathSpec
from qlangevin.classical_dynamics import IntegrationOverflowError, SystemSpec
from qlangevin.noise_sampler import NoisePath
from qlangevin.utils import (
    InvalidSpecError,
    check_same_grid,
    mean_and_standard_error,
    require_finite,
    require_positive,
)

logger = logging.getLogger(__name__)

MIN_DIM = 4
# Quartic and double-well potentials need room above X^4
MIN_DIM_QUARTIC = 8

# Combined population of the two highest levels that marks a run unreliable
LEAKAGE_THRESHOLD = 1e-3

# Smallest eigenvalue tolerated before a noisy state is flagged non-positive
POSITIVITY_SLACK = 1e-8


class OperatorLabel(str, Enum):
    X = "X"
    P = "P"
    H_S = "H_S"
    CUSTOM = "custom"


class InitialState(str, Enum):
    GROUND = "ground"
    COHERENT = "coherent"
    THERMAL = "thermal"


@dataclass(frozen=True)
class OperatorMatrix:
    """Complex N x N operator in the truncated basis."""

    entries: np.ndarray
    label: OperatorLabel = OperatorLabel.CUSTOM

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.entries @ other.entries)

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.entries + other.entries)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.entries - other.entries)

    def __mul__(self, scalar: complex) -> "OperatorMatrix":
        return OperatorMatrix(scalar * self.entries)

    __rmul__ = __mul__

    def __neg__(self) -> "OperatorMatrix":
        return OperatorMatrix(-self.entries)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))


@dataclass(frozen=True)
class OperatorSet:
    """Position, momentum and system Hamiltonian of one truncated basis."""

    X: OperatorMatrix
    P: OperatorMatrix
    H_S: OperatorMatrix
    mass: float
    basis_omega: float
    hbar: float

    @property
    def dim(self) -> int:
        return self.X.dim


@dataclass(frozen=True)
class DensityMatrix:
    """Complex N x N (noisy) density matrix."""

    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    @property
    def purity(self) -> float:
        return float(np.real(np.einsum("ij,ji->", self.entries, self.entries)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def min_eigenvalue(self) -> float:
        hermitian = 0.5 * (self.entries + self.entries.conj().T)
        return float(np.linalg.eigvalsh(hermitian)[0])

    def top_population(self, levels: int = 2) -> float:
        """Combined population of the highest `levels` basis states."""
        return float(np.sum(np.real(np.diag(self.entries)[-levels:])))

    def validate(self, hermitian_tol: float = 1e-10, trace_tol: float = 1e-10) -> None:
        """Check the invariants of a physical state.

        Raises:
            InvalidSpecError: If Hermiticity, unit trace or positivity is violated
        """
        if self.hermiticity_error() > hermitian_tol:
            raise InvalidSpecError(f"density matrix not Hermitian (error {self.hermiticity_error():.3g})")
        if abs(self.trace - 1.0) > trace_tol:
            raise InvalidSpecError(f"density matrix trace {self.trace} differs from 1")
        if self.min_eigenvalue() < -POSITIVITY_SLACK:
            raise InvalidSpecError(f"density matrix has eigenvalue {self.min_eigenvalue():.3g} < 0")


@dataclass
class KuboRun:
    """Stored states of one noisy evolution plus its monitors."""

    dt: float
    states: np.ndarray
    realization_index: int
    leakage: np.ndarray
    min_eigenvalues: np.ndarray
    hermitized: bool = True
    leak_flag: bool = field(init=False)
    positivity_flag: bool = field(init=False)

    def __post_init__(self) -> None:
        self.leak_flag = bool(np.max(self.leakage) > LEAKAGE_THRESHOLD)
        self.positivity_flag = bool(np.min(self.min_eigenvalues) < -POSITIVITY_SLACK)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n)

    def state(self, k: int) -> DensityMatrix:
        return DensityMatrix(self.states[k])

    def expectation(self, op: OperatorMatrix) -> np.ndarray:
        """Tr(op*rho_t) at every stored time."""
        if op.dim != self.states.shape[1]:
            raise InvalidSpecError(f"operator dim {op.dim} does not match state dim {self.states.shape[1]}")
        return np.einsum("ij,tji->t", op.entries, self.states)

    @property
    def traces(self) -> np.ndarray:
        return np.einsum("tii->t", self.states)

    @property
    def purities(self) -> np.ndarray:
        return np.real(np.einsum("tij,tji->t", self.states, self.states))


@dataclass(frozen=True)
class ObservableStats:
    """Ensemble mean and standard error of one observable over time."""

    mean: np.ndarray
    standard_error: np.ndarray


@dataclass(frozen=True)
class EnsembleAverage:
    """Noise-averaged density matrices and observable statistics."""

    dt: float
    states: np.ndarray
    observables: dict[str, ObservableStats]
    n_runs: int

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.states.shape[0])

    def state(self, k: int) -> DensityMatrix:
        return DensityMatrix(self.states[k])


def _ladder(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def _matrix_polynomial(coefficients: np.ndarray, X: np.ndarray) -> np.ndarray:
    # Horner in matrices: c_0 + X(c_1 + X(c_2 + ...))
    identity = np.eye(X.shape[0], dtype=complex)
    result = coefficients[-1] * identity
    for c in coefficients[-2::-1]:
        result = X @ result + c * identity
    return result


def build_operators(system: SystemSpec, basis_omega: float, dim: int, hbar: float = 1.0) -> OperatorSet:
    """Build X, P and H_S = P^2/2m + V(X) in the reference-oscillator basis.

    X = sqrt(hbar/2m*w_b) (a + a^dag),  P = i sqrt(hbar*m*w_b/2) (a^dag - a),
    so [X, P] = i*hbar on every basis element except the last one.

    Args:
        system: Particle mass and potential
        basis_omega: Frequency w_b of the reference oscillator
        dim: Basis size N
        hbar: Action quantum

    Returns:
        OperatorSet

    Raises:
        InvalidSpecError: If dim is too small for the potential's degree
    """
    require_positive("solver.basis_omega", basis_omega)
    require_positive("bath.hbar", hbar)
    if dim < MIN_DIM:
        raise InvalidSpecError(f"solver.dim must be >= {MIN_DIM}, got {dim}")
    if system.degree > 2 and dim < MIN_DIM_QUARTIC:
        raise InvalidSpecError(
            f"solver.dim must be >= {MIN_DIM_QUARTIC} for a degree-{system.degree} potential, got {dim}"
        )

    m = system.mass
    a = _ladder(dim)
    a_dag = a.conj().T
    x = math.sqrt(hbar / (2.0 * m * basis_omega)) * (a + a_dag)
    p = 1j * math.sqrt(hbar * m * basis_omega / 2.0) * (a_dag - a)
    h = p @ p / (2.0 * m) + _matrix_polynomial(system.potential_coefficients, x)
    h = 0.5 * (h + h.conj().T)
    logger.debug(f"Built operators: dim={dim}, basis_omega={basis_omega}, potential={system.potential}")
    return OperatorSet(
        X=OperatorMatrix(x, OperatorLabel.X),
        P=OperatorMatrix(p, OperatorLabel.P),
        H_S=OperatorMatrix(h, OperatorLabel.H_S),
        mass=m,
        basis_omega=basis_omega,
        hbar=hbar,
    )


def ground_state(dim: int) -> DensityMatrix:
    """Reference-oscillator ground state |0><0|."""
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    return DensityMatrix(rho)


def coherent_state(ops: OperatorSet, x0: float, p0: float) -> DensityMatrix:
    """Displaced ground state with means (x0, p0), renormalized after truncation."""
    require_finite("initial.x0", x0)
    require_finite("initial.p0", p0)
    m, w, hbar = ops.mass, ops.basis_omega, ops.hbar
    alpha = x0 * math.sqrt(m * w / (2.0 * hbar)) + 1j * p0 / math.sqrt(2.0 * m * hbar * w)
    amplitudes = np.empty(ops.dim, dtype=complex)
    amplitudes[0] = 1.0
    for k in range(1, ops.dim):
        amplitudes[k] = amplitudes[k - 1] * alpha / math.sqrt(k)
    amplitudes /= np.linalg.norm(amplitudes)
    return DensityMatrix(np.outer(amplitudes, amplitudes.conj()))


def thermal_state(ops: OperatorSet, kT: float) -> DensityMatrix:
    """Gibbs state exp(-H_S/kT)/Z of the truncated Hamiltonian."""
    require_positive("kT", kT)
    energies, vectors = spla.eigh(ops.H_S.entries)
    weights = np.exp(-(energies - energies[0]) / kT)
    weights /= weights.sum()
    return DensityMatrix((vectors * weights) @ vectors.conj().T)


def initial_state(kind: InitialState, ops: OperatorSet, x0: float = 0.0, p0: float = 0.0, kT: float = 1.0) -> DensityMatrix:
    """Build one of the supported initial states."""
    if kind is InitialState.GROUND:
        return ground_state(ops.dim)
    if kind is InitialState.COHERENT:
        return coherent_state(ops, x0, p0)
    if kind is InitialState.THERMAL:
        return thermal_state(ops, kT)
    raise InvalidSpecError(f"unknown initial state {kind!r}")


def observable(rho: DensityMatrix, op: OperatorMatrix) -> complex:
    """Mean value Tr(op*rho).

    Raises:
        InvalidSpecError: If the dimensions differ
    """
    if rho.dim != op.dim:
        raise InvalidSpecError(f"operator dim {op.dim} does not match state dim {rho.dim}")
    return complex(np.einsum("ij,ji->", op.entries, rho.entries))


def _generator(rho: np.ndarray, H: np.ndarray, X: np.ndarray, G: np.ndarray, eta: float, hbar: float) -> np.ndarray:
    # -(i/hbar) * ([H, rho] + 1/2 [X, {G, rho}] - eta [X, rho])
    anti = G @ rho + rho @ G
    Xrho = X @ rho
    rhoX = rho @ X
    total = (H @ rho - rho @ H) + 0.5 * (X @ anti - anti @ X) - eta * (Xrho - rhoX)
    return (-1j / hbar) * total


def evolve_noisy(
    rho0: DensityMatrix,
    ops: OperatorSet,
    bath: BathSpec,
    noise: NoisePath,
    stride: int = 1,
    hermitize: bool = True,
) -> KuboRun:
    """Integrate the stochastic Liouville equation along one noise path.

    Classical RK4 on the noise grid, with eta taken at the grid points and
    linearly interpolated at the half-step stages. The generator is trace-free,
    so the trace is conserved to round-off; the Hermitian part is re-imposed
    after every step when `hermitize` is set.

    Args:
        rho0: Initial density matrix (validated)
        ops: Operators from build_operators
        bath: Supplies gamma (and must share hbar with ops)
        noise: C-number noise path; its grid is the integration grid
        stride: Store every `stride`-th state (the last state is always reachable
            when (n - 1) is a multiple of stride)
        hermitize: Re-symmetrize rho after each step

    Returns:
        KuboRun with stored states and leakage/positivity monitors

    Raises:
        InvalidSpecError: On incompatible inputs or an invalid rho0
        IntegrationOverflowError: If the state becomes non-finite
    """
    if rho0.dim != ops.dim:
        raise InvalidSpecError(f"rho0 dim {rho0.dim} does not match operator dim {ops.dim}")
    if bath.hbar != ops.hbar:
        raise InvalidSpecError(f"bath.hbar={bath.hbar} differs from the operators' hbar={ops.hbar}")
    if stride < 1:
        raise InvalidSpecError(f"solver.stride must be >= 1, got {stride}")
    rho0.validate()

    H = ops.H_S.entries
    X = ops.X.entries
    G = (bath.gamma / ops.mass) * ops.P.entries
    hbar = ops.hbar
    dt = noise.dt
    eta = noise.values
    n = noise.n

    stored = [rho0.entries.copy()]
    leakage = [rho0.top_population()]
    rho = rho0.entries.astype(complex, copy=True)
    alarm_logged = False
    if hermitize:
        logger.debug(f"Hermitian re-symmetrization active for realization {noise.realization_index}")

    for j in range(n - 1):
        e0 = eta[j]
        e1 = eta[j + 1]
        em = 0.5 * (e0 + e1)
        k1 = _generator(rho, H, X, G, e0, hbar)
        k2 = _generator(rho + 0.5 * dt * k1, H, X, G, em, hbar)
        k3 = _generator(rho + 0.5 * dt * k2, H, X, G, em, hbar)
        k4 = _generator(rho + dt * k3, H, X, G, e1, hbar)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if hermitize:
            rho = 0.5 * (rho + rho.conj().T)
        if not np.all(np.isfinite(rho)):
            raise IntegrationOverflowError(j + 1, f"Kubo evolution overflow at step {j + 1}")

        top = float(np.sum(np.real(np.diag(rho)[-2:])))
        if (j + 1) % stride == 0:
            stored.append(rho.copy())
            leakage.append(top)
        if top > LEAKAGE_THRESHOLD and not alarm_logged:
            logger.warning(
                f"Realization {noise.realization_index}: top-level population {top:.3g} "
                f"exceeds {LEAKAGE_THRESHOLD} at step {j + 1}; result unreliable (increase solver.dim)"
            )
            alarm_logged = True

    states = np.array(stored)
    hermitian_parts = 0.5 * (states + np.conj(np.swapaxes(states, 1, 2)))
    min_eigenvalues = np.linalg.eigvalsh(hermitian_parts)[:, 0]
    run = KuboRun(
        dt=dt * stride,
        states=states,
        realization_index=noise.realization_index,
        leakage=np.array(leakage),
        min_eigenvalues=min_eigenvalues,
        hermitized=hermitize,
    )
    if run.positivity_flag:
        logger.debug(
            f"Realization {noise.realization_index}: smallest eigenvalue "
            f"{float(np.min(min_eigenvalues)):.3g} (noisy states need not be positive)"
        )
    return run


def evolve_ensemble(
    rho0: DensityMatrix,
    ops: OperatorSet,
    bath: BathSpec,
    paths: Sequence[NoisePath],
    stride: int = 1,
    threads: int = 1,
) -> list[KuboRun]:
    """Evolve one noisy density matrix per noise path, in index order."""

    def run_one(path: NoisePath) -> KuboRun:
        return evolve_noisy(rho0, ops, bath, path, stride=stride)

    if threads <= 1:
        return [run_one(path) for path in paths]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_one, paths))


def standard_observables(ops: OperatorSet) -> dict[str, OperatorMatrix]:
    """Observables reported by default: x, p, x^2, p^2."""
    return {
        "x": ops.X,
        "p": ops.P,
        "x2": ops.X @ ops.X,
        "p2": ops.P @ ops.P,
    }


def average_ensemble(
    runs: Sequence[KuboRun],
    observables: Mapping[str, OperatorMatrix] | None = None,
) -> EnsembleAverage:
    """Average noisy evolutions entrywise (the physical reduced density matrix).

    Args:
        runs: At least two runs on one grid
        observables: Named operators whose per-run expectation values get
            ensemble means and standard errors

    Returns:
        EnsembleAverage

    Raises:
        InvalidSpecError: If fewer than two runs
        HeterogeneousGridError: If runs differ in dt, length or dimension
    """
    if len(runs) < 2:
        raise InvalidSpecError(f"average_ensemble needs at least 2 runs, got {len(runs)}")
    check_same_grid([r.dt for r in runs], [r.n for r in runs], "Kubo runs")
    check_same_grid([r.dt for r in runs], [r.states.shape[1] for r in runs], "Kubo runs (basis size)")

    states = np.mean(np.stack([r.states for r in runs]), axis=0)
    stats = {}
    for name, op in (observables or {}).items():
        samples = np.real(np.stack([r.expectation(op) for r in runs]))
        mean, error = mean_and_standard_error(samples, axis=0)
        stats[name] = ObservableStats(mean=mean, standard_error=error)
    flagged = sum(r.leak_flag for r in runs)
    if flagged:
        logger.warning(f"{flagged} of {len(runs)} runs hit the truncation-leakage alarm")
    return EnsembleAverage(dt=runs[0].dt, states=states, observables=stats, n_runs=len(runs))
