"""Sampling of the stationary Gaussian bath noise with covariance K_T.

Two backends are provided:

- CIRCULANT: exact circulant embedding of the tabulated kernel (default)
- SPECTRAL: random-phase mode sum whose covariance is the midpoint Riemann sum of K_T

Each realization draws from its own counter-based stream derived from
(master_seed, realization_index), so ensembles are reproducible and can be
generated in any order.
"""

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from qlangevin.bath_kernel import BathSpec, spectral_density, tabulate_kernel
from qlangevin.utils import (
    InvalidSpecError,
    QLangevinError,
    check_same_grid,
    mean_and_standard_error,
    realization_rng,
    require_positive,
)

logger = logging.getLogger(__name__)

# Default clipped-mass budget for circulant embedding (fraction of total spectral mass)
DEFAULT_CLIP_BUDGET = 1e-6

# Embedding grows by doubling up to this multiple of the first trial size
DEFAULT_MAX_EMBEDDING_FACTOR = 64

# Default number of modes for spectral synthesis
DEFAULT_SPECTRAL_MODES = 1024

# Largest (time x mode) phase table kept in memory between realizations
_PHASE_CACHE_LIMIT = 4_000_000


class SamplingMethod(str, Enum):
    CIRCULANT = "circulant"
    SPECTRAL = "spectral"


class CirculantEmbeddingError(QLangevinError):
    """Raised when the embedded circulant is too far from non-negative definite."""

    pass


@dataclass(frozen=True)
class EnsembleSpec:
    """Seeding and backend choice for an ensemble of noise realizations."""

    master_seed: int = 0
    n_realizations: int = 1
    method: SamplingMethod = SamplingMethod.CIRCULANT
    clip_budget: float = DEFAULT_CLIP_BUDGET
    max_embedding_factor: int = DEFAULT_MAX_EMBEDDING_FACTOR
    n_modes: int = DEFAULT_SPECTRAL_MODES

    def __post_init__(self) -> None:
        if self.master_seed < 0 or self.master_seed >= 2**64:
            raise InvalidSpecError(f"ensemble.master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        if self.n_realizations < 1:
            raise InvalidSpecError(f"ensemble.n_realizations must be >= 1, got {self.n_realizations}")
        if not isinstance(self.method, SamplingMethod):
            raise InvalidSpecError(f"ensemble.method must be a SamplingMethod, got {self.method!r}")
        if not 0 <= self.clip_budget < 1:
            raise InvalidSpecError(f"ensemble.clip_budget must be in [0, 1), got {self.clip_budget}")
        if self.max_embedding_factor < 1:
            raise InvalidSpecError(f"ensemble.max_embedding_factor must be >= 1, got {self.max_embedding_factor}")
        if self.n_modes < 1:
            raise InvalidSpecError(f"ensemble.n_modes must be >= 1, got {self.n_modes}")


@dataclass(frozen=True)
class NoisePath:
    """One realization eta(j*dt), j = 0..n-1, with its generating seed."""

    dt: float
    values: np.ndarray
    seed: int
    realization_index: int

    def __post_init__(self) -> None:
        if self.values.ndim != 1 or len(self.values) < 2:
            raise InvalidSpecError("NoisePath needs at least two samples")
        if not np.all(np.isfinite(self.values)):
            raise InvalidSpecError(f"NoisePath {self.realization_index} contains non-finite samples")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n)

    def at(self, t: float) -> float:
        """Linear interpolation of the path at time t inside the grid."""
        return float(np.interp(t, self.times, self.values))


@dataclass(frozen=True)
class CovarianceEstimate:
    """Lag-resolved covariance estimate with standard errors."""

    dt: float
    mean: np.ndarray
    standard_error: np.ndarray

    @property
    def lags(self) -> np.ndarray:
        return self.dt * np.arange(len(self.mean))


def _next_power_of_two(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def circulant_spectrum(bath: BathSpec, dt: float, m: int) -> tuple[np.ndarray, float]:
    """Eigenvalues of the 2m circulant built from K_T at lags 0..m.

    Args:
        bath: Bath specification
        dt: Lag spacing
        m: Half-length of the embedding

    Returns:
        Tuple of (eigenvalues k = 0..m, clipped fraction of the absolute spectral mass)
    """
    lags = tabulate_kernel(bath, dt, m + 1).values
    # First row of the 2m circulant: c_0..c_m, c_{m-1}..c_1
    row = np.concatenate((lags, lags[-2:0:-1]))
    eigenvalues = np.fft.rfft(row).real
    total = float(np.abs(eigenvalues).sum())
    negative = float(-eigenvalues[eigenvalues < 0].sum())
    return eigenvalues, (negative / total if total > 0 else 0.0)


@dataclass
class _CirculantFactor:
    """Square-rooted circulant spectrum, ready for synthesis."""

    m: int
    sqrt_eigenvalues: np.ndarray
    clipped_fraction: float


@dataclass
class NoiseSampler:
    """Generator of noise paths for one (bath, grid, ensemble) combination.

    Expensive setup (circulant spectrum or mode tables) is done once and reused
    for every realization.
    """

    bath: BathSpec
    dt: float
    n: int
    ensemble: EnsembleSpec
    _circulant: _CirculantFactor | None = field(default=None, init=False, repr=False)
    _modes: tuple[np.ndarray, np.ndarray] | None = field(default=None, init=False, repr=False)
    _phases: tuple[np.ndarray, np.ndarray] | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        require_positive("grid.dt", self.dt)
        if int(self.n) != self.n or self.n < 2:
            raise InvalidSpecError(f"grid.n must be an integer >= 2, got {self.n!r}")

    # Circulant embedding

    def _embed(self) -> _CirculantFactor:
        if self._circulant is not None:
            return self._circulant

        m = _next_power_of_two(self.n)
        max_m = m * self.ensemble.max_embedding_factor
        while True:
            eigenvalues, clipped = circulant_spectrum(self.bath, self.dt, m)
            if clipped <= self.ensemble.clip_budget:
                break
            if 2 * m > max_m:
                raise CirculantEmbeddingError(
                    f"Circulant embedding clipped {clipped:.3g} of the spectral mass at m={m}, "
                    f"above the budget {self.ensemble.clip_budget:.3g}. "
                    f"Raise ensemble.clip_budget or use the spectral method."
                )
            logger.debug(f"Clipped fraction {clipped:.3g} at m={m}, doubling embedding")
            m *= 2

        if clipped > 0:
            logger.info(f"Circulant embedding m={m}: clipped {clipped:.3g} of spectral mass")
        # Embedding of length 2m; eigenvalues / (2m) are the variances of the Fourier modes
        scaled = np.clip(eigenvalues, 0.0, None) / (2 * m)
        self._circulant = _CirculantFactor(m=m, sqrt_eigenvalues=np.sqrt(scaled), clipped_fraction=clipped)
        return self._circulant

    def _sample_circulant(self, rng: np.random.Generator) -> np.ndarray:
        factor = self._embed()
        m = factor.m
        size = 2 * m
        # Hermitian white noise in Fourier space: real at k=0 and k=m, complex in between
        z = np.empty(m + 1, dtype=complex)
        z[0] = rng.standard_normal()
        z[m] = rng.standard_normal()
        pairs = rng.standard_normal((m - 1, 2))
        z[1:m] = (pairs[:, 0] + 1j * pairs[:, 1]) / math.sqrt(2.0)
        # irfft divides by the length; undo it so that Var(x_j) = sum(lambda)/(2m) = c_0
        x = np.fft.irfft(factor.sqrt_eigenvalues * z, n=size) * size
        return x[: self.n]

    # Spectral synthesis

    def _mode_table(self) -> tuple[np.ndarray, np.ndarray]:
        if self._modes is not None:
            return self._modes
        count = self.ensemble.n_modes
        d_omega = self.bath.omega_eff / count
        omegas = (np.arange(count) + 0.5) * d_omega
        variances = spectral_density(self.bath, omegas) * d_omega
        self._modes = (omegas, np.sqrt(variances))
        return self._modes

    def _phase_tables(self) -> tuple[np.ndarray, np.ndarray]:
        if self._phases is not None:
            return self._phases
        omegas, _ = self._mode_table()
        phases = np.multiply.outer(self.dt * np.arange(self.n), omegas)
        tables = (np.cos(phases), np.sin(phases))
        if phases.size <= _PHASE_CACHE_LIMIT:
            self._phases = tables
        return tables

    def _sample_spectral(self, rng: np.random.Generator) -> np.ndarray:
        omegas, amplitudes = self._mode_table()
        coefficients = rng.standard_normal((2, len(omegas))) * amplitudes
        cos_table, sin_table = self._phase_tables()
        return cos_table @ coefficients[0] + sin_table @ coefficients[1]

    # Public API

    @property
    def clipped_fraction(self) -> float:
        """Clipped spectral fraction of the circulant embedding (0 for SPECTRAL)."""
        if self.ensemble.method is SamplingMethod.SPECTRAL:
            return 0.0
        return self._embed().clipped_fraction

    def sample(self, index: int) -> NoisePath:
        """Generate realization `index` of the ensemble.

        Raises:
            InvalidSpecError: If index is outside [0, n_realizations)
            CirculantEmbeddingError: If the embedding exceeds the clipping budget
        """
        if not 0 <= index < self.ensemble.n_realizations:
            raise InvalidSpecError(
                f"realization index {index} outside [0, {self.ensemble.n_realizations})"
            )
        if self.bath.gamma == 0:
            values = np.zeros(self.n)
        else:
            rng = realization_rng(self.ensemble.master_seed, index)
            if self.ensemble.method is SamplingMethod.CIRCULANT:
                values = self._sample_circulant(rng)
            else:
                values = self._sample_spectral(rng)
        return NoisePath(
            dt=float(self.dt),
            values=values,
            seed=self.ensemble.master_seed,
            realization_index=index,
        )


def sample_path(bath: BathSpec, dt: float, n: int, ensemble: EnsembleSpec, index: int) -> NoisePath:
    """Sample one zero-mean Gaussian noise path with covariance K_T.

    Args:
        bath: Bath specification
        dt: Time step
        n: Number of samples
        ensemble: Seeding and backend choice
        index: Realization index in [0, n_realizations)

    Returns:
        NoisePath, bit-identical for identical arguments
    """
    return NoiseSampler(bath, dt, n, ensemble).sample(index)


def sample_ensemble(
    bath: BathSpec,
    dt: float,
    n: int,
    ensemble: EnsembleSpec,
    threads: int = 1,
) -> list[NoisePath]:
    """Sample every realization of an ensemble.

    Setup is shared across realizations; each path is identical to the
    corresponding sample_path call regardless of the thread count.

    Args:
        bath: Bath specification
        dt: Time step
        n: Number of samples per path
        ensemble: Seeding and backend choice
        threads: Worker threads (1 = sequential)

    Returns:
        Paths ordered by realization index
    """
    sampler = NoiseSampler(bath, dt, n, ensemble)
    # Force setup before fanning out so workers never race on the cache
    if bath.gamma != 0:
        if ensemble.method is SamplingMethod.CIRCULANT:
            sampler._embed()
        else:
            sampler._phase_tables()
    indices = range(ensemble.n_realizations)
    if threads <= 1:
        return [sampler.sample(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(sampler.sample, indices))


def white_noise_path(dt: float, n: int, variance: float, master_seed: int, index: int) -> NoisePath:
    """Sample a white Gaussian sequence with the given per-sample variance.

    Used as a reference input for estimator and integrator checks.
    """
    require_positive("grid.dt", dt)
    if variance < 0:
        raise InvalidSpecError(f"variance must be >= 0, got {variance}")
    rng = realization_rng(master_seed, index)
    values = math.sqrt(variance) * rng.standard_normal(n)
    return NoisePath(dt=float(dt), values=values, seed=master_seed, realization_index=index)


def empirical_covariance(paths: Sequence[NoisePath], max_lag: int) -> CovarianceEstimate:
    """Estimate the stationary covariance from an ensemble of zero-mean paths.

    For each path the lag-k product eta_t*eta_{t+k} is averaged over all n-k
    time origins (unbiased for a zero-mean process); the per-path estimates are
    independent, so the ensemble mean and its standard error follow directly.

    Args:
        paths: At least two paths on one grid
        max_lag: Largest lag index (< path length)

    Returns:
        CovarianceEstimate for lags 0..max_lag

    Raises:
        InvalidSpecError: If fewer than two paths or max_lag out of range
        HeterogeneousGridError: If paths differ in dt or length
    """
    if len(paths) < 2:
        raise InvalidSpecError(f"empirical_covariance needs at least 2 paths, got {len(paths)}")
    check_same_grid([p.dt for p in paths], [p.n for p in paths], "noise paths")
    n = paths[0].n
    if not 0 <= max_lag < n:
        raise InvalidSpecError(f"max_lag must be in [0, {n}), got {max_lag}")

    data = np.stack([p.values for p in paths])
    per_path = np.empty((len(paths), max_lag + 1))
    for k in range(max_lag + 1):
        per_path[:, k] = np.mean(data[:, : n - k] * data[:, k:], axis=1)
    mean, error = mean_and_standard_error(per_path, axis=0)
    return CovarianceEstimate(dt=paths[0].dt, mean=mean, standard_error=error)
