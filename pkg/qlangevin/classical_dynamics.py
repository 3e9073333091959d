"""Classical Langevin dynamics driven by sampled bath noise.

Solves m*x'' + gamma*x' + V'(x) = eta(t) for a given noise path. The path is a
fixed continuous forcing (linear between grid points), so a deterministic
second-order Heun scheme applies and no stochastic-calculus convention enters.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.polynomial.polynomial as poly

from qlangevin.bath_kernel import BathSpec
from qlangevin.noise_sampler import NoisePath
from qlangevin.utils import (
    InvalidSpecError,
    QLangevinError,
    check_same_grid,
    mean_and_standard_error,
    realization_rng,
    require_finite,
    require_positive,
)

logger = logging.getLogger(__name__)

# Equilibration margin in relaxation times m/gamma
BURN_IN_RELAXATION_TIMES = 10.0


class IntegrationOverflowError(QLangevinError):
    """Raised when an integrator produces a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"Non-finite state at step {step}")


# Potential families (closed set; POTENTIALS is the registry used by config parsing)


@dataclass(frozen=True)
class Free:
    """V(x) = 0."""

    def coefficients(self, mass: float) -> np.ndarray:
        return np.zeros(1)


@dataclass(frozen=True)
class Harmonic:
    """V(x) = m*omega0^2*x^2/2."""

    omega0: float

    def __post_init__(self) -> None:
        require_positive("system.omega0", self.omega0)

    def coefficients(self, mass: float) -> np.ndarray:
        return np.array([0.0, 0.0, 0.5 * mass * self.omega0**2])


@dataclass(frozen=True)
class Quartic:
    """V(x) = a*x^2 + b*x^4."""

    a: float
    b: float

    def __post_init__(self) -> None:
        require_finite("system.a", self.a)
        require_finite("system.b", self.b)

    def coefficients(self, mass: float) -> np.ndarray:
        return np.array([0.0, 0.0, self.a, 0.0, self.b])


@dataclass(frozen=True)
class DoubleWell:
    """V(x) = barrier*((x/x0)^2 - 1)^2, minima at +-x0."""

    barrier: float
    x0: float

    def __post_init__(self) -> None:
        require_finite("system.barrier", self.barrier)
        require_positive("system.x0", self.x0)

    def coefficients(self, mass: float) -> np.ndarray:
        s = 1.0 / self.x0**2
        return self.barrier * np.array([1.0, 0.0, -2.0 * s, 0.0, s * s])


Potential = Free | Harmonic | Quartic | DoubleWell

POTENTIALS: dict[str, type] = {
    "free": Free,
    "harmonic": Harmonic,
    "quartic": Quartic,
    "double_well": DoubleWell,
}


@dataclass(frozen=True)
class SystemSpec:
    """Tagged particle: mass and potential family."""

    mass: float
    potential: Potential = Free()

    def __post_init__(self) -> None:
        require_positive("system.mass", self.mass)
        if not isinstance(self.potential, (Free, Harmonic, Quartic, DoubleWell)):
            raise InvalidSpecError(f"system.potential must be a known family, got {self.potential!r}")

    @property
    def potential_coefficients(self) -> np.ndarray:
        """Ascending polynomial coefficients of V(x)."""
        return self.potential.coefficients(self.mass)

    @property
    def degree(self) -> int:
        return max(0, len(np.trim_zeros(self.potential_coefficients, "b")) - 1)


@dataclass(frozen=True)
class Trajectory:
    """Positions and momenta on the noise grid."""

    dt: float
    x: np.ndarray
    p: np.ndarray
    realization_index: int

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n)


@dataclass(frozen=True)
class Moment:
    """Ensemble mean and standard error of one quantity."""

    mean: np.ndarray
    standard_error: np.ndarray


@dataclass(frozen=True)
class MomentsReport:
    """Time-resolved and stationary ensemble moments of a trajectory set."""

    dt: float
    burn_in: int
    x: Moment
    p: Moment
    x2: Moment
    p2: Moment
    xp: Moment
    stationary: dict[str, tuple[float, float]]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.x.mean))


def potential_energy(system: SystemSpec, x):
    """V(x) for scalars or arrays."""
    return poly.polyval(x, system.potential_coefficients)


def potential_force(system: SystemSpec, x):
    """Force -V'(x) of the configured potential.

    Args:
        system: System specification
        x: Position (scalar or array)

    Returns:
        -V'(x), same shape as x

    Raises:
        InvalidSpecError: If x is not finite
    """
    if not np.all(np.isfinite(x)):
        raise InvalidSpecError(f"potential_force needs finite positions, got {x!r}")
    return -poly.polyval(x, poly.polyder(system.potential_coefficients))


def energy(system: SystemSpec, x, p):
    """Total energy p^2/2m + V(x)."""
    return np.asarray(p) ** 2 / (2.0 * system.mass) + potential_energy(system, x)


def default_burn_in(system: SystemSpec, bath: BathSpec, dt: float) -> int:
    """Burn-in of 10 relaxation times m/gamma, in steps."""
    if bath.gamma <= 0:
        raise InvalidSpecError("default burn-in needs gamma > 0")
    return int(math.ceil(BURN_IN_RELAXATION_TIMES * system.mass / bath.gamma / dt))


def _heun(system: SystemSpec, gamma: float, dt: float, eta: np.ndarray, x0, p0):
    # eta has shape (n, batch); returns x, p of the same shape
    n = eta.shape[0]
    m = system.mass
    force = poly.polyder(system.potential_coefficients)
    x = np.empty_like(eta)
    p = np.empty_like(eta)
    x[0] = x0
    p[0] = p0
    for j in range(n - 1):
        xj, pj = x[j], p[j]
        vx = pj / m
        vp = -poly.polyval(xj, force) - gamma * vx + eta[j]
        x_pred = xj + dt * vx
        p_pred = pj + dt * vp
        vx2 = p_pred / m
        vp2 = -poly.polyval(x_pred, force) - gamma * vx2 + eta[j + 1]
        x[j + 1] = xj + 0.5 * dt * (vx + vx2)
        p[j + 1] = pj + 0.5 * dt * (vp + vp2)
        if not (np.all(np.isfinite(x[j + 1])) and np.all(np.isfinite(p[j + 1]))):
            raise IntegrationOverflowError(j + 1)
    return x, p


def integrate(
    system: SystemSpec,
    bath: BathSpec,
    noise: NoisePath,
    x0: float,
    p0: float,
    dt: float | None = None,
) -> Trajectory:
    """Integrate the classical Langevin equation along one noise path.

    Uses Heun's method with the noise taken at both ends of each step, which is
    the linear interpolant of the path evaluated at the stage times.

    Args:
        system: Particle mass and potential
        bath: Supplies the friction gamma
        noise: Forcing path; its grid is the integration grid
        x0: Initial position
        p0: Initial momentum
        dt: Requested step; must equal noise.dt when given

    Returns:
        Trajectory with noise.n points

    Raises:
        InvalidSpecError: On grid mismatch or non-finite initial conditions
        IntegrationOverflowError: If the state becomes non-finite
    """
    require_finite("x0", x0)
    require_finite("p0", p0)
    if dt is not None and dt != noise.dt:
        raise InvalidSpecError(f"noise grid dt={noise.dt} does not match requested dt={dt}")
    x, p = _heun(system, bath.gamma, noise.dt, noise.values[:, None], x0, p0)
    return Trajectory(dt=noise.dt, x=x[:, 0], p=p[:, 0], realization_index=noise.realization_index)


def integrate_ensemble(
    system: SystemSpec,
    bath: BathSpec,
    paths: Sequence[NoisePath],
    x0: float,
    p0: float,
) -> list[Trajectory]:
    """Integrate many noise paths at once (vectorized over realizations).

    Each trajectory equals integrate() on the same path.
    """
    if not paths:
        return []
    require_finite("x0", x0)
    require_finite("p0", p0)
    check_same_grid([p.dt for p in paths], [p.n for p in paths], "noise paths")
    eta = np.stack([p.values for p in paths], axis=1)
    x, p = _heun(system, bath.gamma, paths[0].dt, eta, x0, p0)
    return [
        Trajectory(dt=path.dt, x=x[:, i].copy(), p=p[:, i].copy(), realization_index=path.realization_index)
        for i, path in enumerate(paths)
    ]


def euler_maruyama_white(
    system: SystemSpec,
    bath: BathSpec,
    dt: float,
    n: int,
    x0: float,
    p0: float,
    n_realizations: int,
    master_seed: int,
) -> list[Trajectory]:
    """Reference integrator for the white-noise (classical) Langevin equation.

    dp = (-V'(x) - gamma*p/m) dt + sqrt(2*gamma*kT*dt) * xi,  dx = p/m dt.
    Independent of the colored-noise pipeline; used to cross-check the
    high-temperature limit.
    """
    require_positive("grid.dt", dt)
    m = system.mass
    force = poly.polyder(system.potential_coefficients)
    kick = math.sqrt(2.0 * bath.gamma * bath.kT * dt)
    xi = np.stack(
        [realization_rng(master_seed, i).standard_normal(n - 1) for i in range(n_realizations)],
        axis=1,
    )
    x = np.empty((n, n_realizations))
    p = np.empty((n, n_realizations))
    x[0] = x0
    p[0] = p0
    for j in range(n - 1):
        x[j + 1] = x[j] + dt * p[j] / m
        p[j + 1] = p[j] + dt * (-poly.polyval(x[j], force) - bath.gamma * p[j] / m) + kick * xi[j]
        if not (np.all(np.isfinite(x[j + 1])) and np.all(np.isfinite(p[j + 1]))):
            raise IntegrationOverflowError(j + 1)
    return [Trajectory(dt=dt, x=x[:, i].copy(), p=p[:, i].copy(), realization_index=i) for i in range(n_realizations)]


def ensemble_statistics(trajectories: Sequence[Trajectory], burn_in: int) -> MomentsReport:
    """Compute ensemble moments of x, p, x^2, p^2 and xp.

    Time-resolved moments average over realizations at each step. Stationary
    values average each realization over steps >= burn_in first, then over
    realizations, so their standard errors use independent samples.

    Args:
        trajectories: At least two trajectories on one grid
        burn_in: First step included in the stationary averages

    Returns:
        MomentsReport

    Raises:
        InvalidSpecError: If fewer than two trajectories or burn_in out of range
        HeterogeneousGridError: If trajectories differ in dt or length
    """
    if len(trajectories) < 2:
        raise InvalidSpecError(f"ensemble_statistics needs at least 2 trajectories, got {len(trajectories)}")
    check_same_grid([t.dt for t in trajectories], [t.n for t in trajectories], "trajectories")
    n = trajectories[0].n
    if not 0 <= burn_in < n:
        raise InvalidSpecError(f"burn_in must be in [0, {n}), got {burn_in}")

    x = np.stack([t.x for t in trajectories])
    p = np.stack([t.p for t in trajectories])
    quantities = {"x": x, "p": p, "x2": x * x, "p2": p * p, "xp": x * p}

    resolved = {}
    stationary = {}
    for name, samples in quantities.items():
        mean, error = mean_and_standard_error(samples, axis=0)
        resolved[name] = Moment(mean=mean, standard_error=error)
        s_mean, s_error = mean_and_standard_error(samples[:, burn_in:].mean(axis=1), axis=0)
        stationary[name] = (float(s_mean), float(s_error))

    logger.debug(
        f"Ensemble of {len(trajectories)}: <x^2>={stationary['x2'][0]:.6g}+-{stationary['x2'][1]:.2g}, "
        f"<p^2>={stationary['p2'][0]:.6g}+-{stationary['p2'][1]:.2g}"
    )
    return MomentsReport(
        dt=trajectories[0].dt,
        burn_in=burn_in,
        x=resolved["x"],
        p=resolved["p"],
        x2=resolved["x2"],
        p2=resolved["p2"],
        xp=resolved["xp"],
        stationary=stationary,
    )
