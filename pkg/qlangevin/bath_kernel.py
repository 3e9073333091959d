"""Thermal noise kernel of an ohmic oscillator bath.

The bath enters through two two-time functions of the lag tau = t - t':

    K_T(tau) = (gamma*hbar/pi) * int_0^inf dw  w*coth(hbar*w/2kT) * cos(w*tau) * window(w)
    A(tau)   = -(2*gamma*hbar/pi) * int_0^inf dw  w * sin(w*tau) * window(w)

K_T is the symmetrized noise correlation, A the commutator [eta_t, eta_t'] = i*A(t-t').
The bare integrals diverge, so every BathSpec carries an explicit cutoff and
all integrals are evaluated by Gauss-Legendre quadrature on [0, omega_eff].
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from qlangevin.utils import (
    InvalidSpecError,
    require_finite,
    require_nonnegative,
    require_positive,
)

logger = logging.getLogger(__name__)

# Minimum number of Gauss-Legendre nodes accepted by BathSpec
MIN_QUADRATURE_NODES = 16

# Drude integrals are truncated at this multiple of omega_d
DRUDE_SPAN = 40.0

# Below this value of hbar*w/2kT, w*coth(hbar*w/2kT) is replaced by its series
_SERIES_THRESHOLD = 1e-6

# Largest node count a lag may require
MAX_QUADRATURE_NODES = 1 << 20

# Nodes kept above omega_eff*|lag|/2 when a lag outgrows quadrature_nodes
_NODE_MARGIN = 64

# Phase-matrix entries evaluated per block when tabulating long kernels
_BLOCK_ELEMENTS = 1 << 20


@dataclass(frozen=True)
class HardCutoff:
    """Sharp truncation of the bath spectrum at omega_c."""

    omega_c: float

    def __post_init__(self) -> None:
        require_positive("cutoff frequency", self.omega_c)

    @property
    def omega_eff(self) -> float:
        return self.omega_c

    def window(self, omega: np.ndarray) -> np.ndarray:
        return np.where(omega <= self.omega_c, 1.0, 0.0)


@dataclass(frozen=True)
class DrudeCutoff:
    """Drude regularization 1/(1 + w^2/omega_d^2), integrated up to 40*omega_d."""

    omega_d: float

    def __post_init__(self) -> None:
        require_positive("cutoff frequency", self.omega_d)

    @property
    def omega_eff(self) -> float:
        return DRUDE_SPAN * self.omega_d

    def window(self, omega: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + (omega / self.omega_d) ** 2)


Cutoff = HardCutoff | DrudeCutoff


@dataclass(frozen=True)
class BathSpec:
    """Ohmic thermal bath: friction, temperature, constants and cutoff.

    Defaults use hbar = k = 1; both stay explicit so SI-like runs work.
    """

    gamma: float
    temperature: float
    cutoff: Cutoff = field(default_factory=lambda: HardCutoff(50.0))
    hbar: float = 1.0
    boltzmann: float = 1.0
    quadrature_nodes: int = 2048

    def __post_init__(self) -> None:
        require_nonnegative("bath.gamma", self.gamma)
        require_positive("bath.temperature", self.temperature)
        require_positive("bath.hbar", self.hbar)
        require_positive("bath.boltzmann", self.boltzmann)
        if not isinstance(self.cutoff, (HardCutoff, DrudeCutoff)):
            raise InvalidSpecError(f"bath.cutoff must be HardCutoff or DrudeCutoff, got {self.cutoff!r}")
        if int(self.quadrature_nodes) != self.quadrature_nodes or self.quadrature_nodes < MIN_QUADRATURE_NODES:
            raise InvalidSpecError(
                f"bath.quadrature_nodes must be an integer >= {MIN_QUADRATURE_NODES}, "
                f"got {self.quadrature_nodes!r}"
            )

    @property
    def kT(self) -> float:
        return self.boltzmann * self.temperature

    @property
    def omega_eff(self) -> float:
        """Upper limit of every frequency integral."""
        return self.cutoff.omega_eff


@dataclass(frozen=True)
class KernelGrid:
    """Stationary kernel sampled at lags 0, dt, ..., (n-1)*dt."""

    dt: float
    values: np.ndarray
    antisymmetric: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 1 or len(self.values) < 2:
            raise InvalidSpecError("KernelGrid needs at least two lags")
        if self.values[0] < 0:
            raise InvalidSpecError(f"K_T(0) must be >= 0, got {self.values[0]}")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def lags(self) -> np.ndarray:
        return self.dt * np.arange(self.n)


@lru_cache(maxsize=32)
def _legendre_rule(omega_eff: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(nodes)
    half = 0.5 * omega_eff
    omega = half * (x + 1.0)
    weights = half * w
    omega.setflags(write=False)
    weights.setflags(write=False)
    return omega, weights


def nodes_for_lag(spec: BathSpec, lag: float) -> int:
    """Number of Gauss-Legendre nodes used at a given lag.

    On the rule's reference interval cos(w*lag) turns through omega_eff*|lag|/2
    radians, and the node count has to stay above that. Short lags use
    spec.quadrature_nodes; longer ones use the next power of two above
    omega_eff*|lag|/2 + 64.

    Args:
        spec: Bath specification
        lag: Time difference t - t'

    Returns:
        Node count, at least spec.quadrature_nodes

    Raises:
        InvalidSpecError: If the lag needs more than MAX_QUADRATURE_NODES nodes
    """
    required = 0.5 * spec.omega_eff * abs(float(lag)) + _NODE_MARGIN
    if required <= spec.quadrature_nodes:
        return int(spec.quadrature_nodes)
    nodes = 1 << math.ceil(math.log2(required))
    if nodes > MAX_QUADRATURE_NODES:
        raise InvalidSpecError(
            f"lag {lag} is beyond the resolvable range of the kernel quadrature: "
            f"omega_eff*|lag| must stay below {2 * (MAX_QUADRATURE_NODES - _NODE_MARGIN)}"
        )
    return nodes


def quadrature_rule(spec: BathSpec, lag: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Get the Gauss-Legendre nodes and weights on [0, omega_eff].

    Args:
        spec: Bath specification
        lag: Largest lag the rule must resolve; 0 gives spec.quadrature_nodes nodes

    Returns:
        Tuple of (nodes, weights), read-only and cached per (omega_eff, nodes)
    """
    return _legendre_rule(float(spec.omega_eff), nodes_for_lag(spec, lag))


def omega_coth(spec: BathSpec, omega: np.ndarray) -> np.ndarray:
    """Evaluate w*coth(hbar*w/2kT) with the w -> 0 limit 2kT/hbar filled in.

    Args:
        spec: Bath specification
        omega: Frequencies (>= 0)

    Returns:
        Array of the same shape as omega, never NaN
    """
    omega = np.asarray(omega, dtype=float)
    x = spec.hbar * omega / (2.0 * spec.kT)
    small = x < _SERIES_THRESHOLD
    safe_x = np.where(small, 1.0, x)
    regular = omega / np.tanh(safe_x)
    series = (2.0 * spec.kT / spec.hbar) * (1.0 + x * x / 3.0)
    return np.where(small, series, regular)


def spectral_density(spec: BathSpec, omega: np.ndarray) -> np.ndarray:
    """Windowed spectral weight (gamma*hbar/pi) * w*coth(hbar*w/2kT) * window(w).

    Integrating it against cos(w*tau) gives K_T(tau).
    """
    omega = np.asarray(omega, dtype=float)
    return (spec.gamma * spec.hbar / math.pi) * omega_coth(spec, omega) * spec.cutoff.window(omega)


def commutator_density(spec: BathSpec, omega: np.ndarray) -> np.ndarray:
    """Windowed weight (2*gamma*hbar/pi) * w * window(w) of the noise commutator."""
    omega = np.asarray(omega, dtype=float)
    return (2.0 * spec.gamma * spec.hbar / math.pi) * omega * spec.cutoff.window(omega)


def _require_lag(lag: float) -> float:
    lag = float(lag)
    require_finite("lag", lag)
    return lag


def _phase_sums(
    spec: BathSpec,
    lags: np.ndarray,
    density: Callable[[BathSpec, np.ndarray], np.ndarray],
    phase: Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    # Lags are grouped by node count and each gets its own dot product, so
    # scalar and tabulated evaluations agree bit for bit
    counts = np.array([nodes_for_lag(spec, lag) for lag in lags], dtype=int)
    out = np.empty(len(lags))
    for nodes in np.unique(counts):
        omega, weights = _legendre_rule(float(spec.omega_eff), int(nodes))
        weighted = weights * density(spec, omega)
        indices = np.flatnonzero(counts == nodes)
        block_size = max(1, _BLOCK_ELEMENTS // int(nodes))
        for start in range(0, len(indices), block_size):
            block = indices[start:start + block_size]
            phases = phase(np.multiply.outer(lags[block], omega))
            for i, row in zip(block, phases, strict=True):
                out[i] = np.dot(row, weighted)
    return out


def _cosine_sums(spec: BathSpec, lags: np.ndarray) -> np.ndarray:
    return _phase_sums(spec, lags, spectral_density, np.cos)


def _sine_sums(spec: BathSpec, lags: np.ndarray) -> np.ndarray:
    return -_phase_sums(spec, lags, commutator_density, np.sin)


def evaluate_kernel(spec: BathSpec, lag: float) -> float:
    """Evaluate the symmetric thermal kernel K_T at one lag.

    Args:
        spec: Bath specification
        lag: Time difference t - t'

    Returns:
        K_T(lag); exactly even in lag

    Raises:
        InvalidSpecError: If lag is not finite or beyond the resolvable range
    """
    lag = abs(_require_lag(lag))
    return float(_cosine_sums(spec, np.array([lag]))[0])


def evaluate_antisymmetric_kernel(spec: BathSpec, lag: float) -> float:
    """Evaluate A(lag) defined by [eta_t, eta_t'] = i*A(t - t').

    The sign follows the mode representation of the noise operator, so the
    finite mode sums of heisenberg_commutator reproduce it term by term.

    Args:
        spec: Bath specification
        lag: Time difference t - t'

    Returns:
        A(lag); exactly odd in lag
    """
    lag = _require_lag(lag)
    value = float(_sine_sums(spec, np.array([abs(lag)]))[0])
    return -value if lag < 0 else value


def tabulate_kernel(spec: BathSpec, dt: float, n: int) -> KernelGrid:
    """Tabulate K_T and A at lags j*dt, j = 0..n-1.

    Args:
        spec: Bath specification
        dt: Lag spacing (> 0)
        n: Number of lags (>= 2)

    Returns:
        KernelGrid whose values equal evaluate_kernel(spec, j*dt) exactly

    Raises:
        InvalidSpecError: For invalid grid parameters or lags beyond the resolvable range
    """
    require_positive("grid.dt", dt)
    if int(n) != n or n < 2:
        raise InvalidSpecError(f"grid.n must be an integer >= 2, got {n!r}")
    lags = dt * np.arange(int(n))
    values = _cosine_sums(spec, lags)
    antisymmetric = _sine_sums(spec, lags)
    logger.debug(f"Tabulated kernel: {n} lags, dt={dt}, K_T(0)={values[0]:.6g}")
    return KernelGrid(dt=float(dt), values=values, antisymmetric=antisymmetric)


def high_temperature_limit(spec: BathSpec) -> float:
    """Weight 2kT*gamma of the local kernel K_T -> 2kT*gamma*delta(t - t')."""
    return 2.0 * spec.kT * spec.gamma


def smeared_gaussian_action(spec: BathSpec, t: float, center: float, width: float) -> float:
    """Smear K_T over a Gaussian bump: int dt' K_T(t - t') f(t').

    The bump is f(s) = exp(-(s - center)^2 / (2*width^2)); its cosine transform
    is known in closed form, so the time integral is done analytically and only
    the frequency quadrature remains. In the classical limit the result tends
    to high_temperature_limit(spec) * f(t).

    Args:
        spec: Bath specification
        t: Observation time
        center: Center of the bump
        width: Standard deviation of the bump (> 0)

    Returns:
        Smeared kernel action at t
    """
    require_finite("t", t)
    require_finite("center", center)
    require_positive("width", width)
    omega, weights = quadrature_rule(spec)
    transform = math.sqrt(2.0 * math.pi) * width * np.exp(-0.5 * (omega * width) ** 2)
    integrand = spectral_density(spec, omega) * transform * np.cos(omega * (t - center))
    return float(np.dot(weights, integrand))
