"""Operator solution of the linear quantum Langevin equation.

For m*x'' + gamma*x' + m*omega0^2*x = eta the position operator is

    x_t = G_x(t)*x_0 + G(t)*p_0 + int_0^t G(t - s) eta_s ds,   p_t = m * dx_t/dt

with G the impulse response. The noise operator is represented by a finite
set of bath modes,

    eta_s = sum_j sqrt(hbar)*g_j * (a_j e^{-i w_j s} + a_j^dag e^{i w_j s}),
    g_j^2 = (gamma/pi) * w_j * dw_j * window(w_j),

so every commutator reduces to closed-form mode sums. The equal-time
commutator C(t) = [x_t, p_t]/(i*hbar) splits into an initial-operator part,
which decays as exp(-gamma*t/m), and a bath part that restores C = 1 only when
the noise keeps its quantum algebra.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from qlangevin.bath_kernel import BathSpec, DrudeCutoff, HardCutoff, omega_coth, quadrature_rule
from qlangevin.classical_dynamics import Free, Harmonic, SystemSpec
from qlangevin.utils import InvalidSpecError, QLangevinError, require_finite, require_nonnegative

logger = logging.getLogger(__name__)

# Relative width of the critical-damping window on gamma^2 - 4 m^2 omega0^2
CRITICAL_WINDOW = 1e-9

# Default sup-norm change tolerated when the mode count is doubled
DEFAULT_MODE_TOLERANCE = 1e-3

# Below this |z| the integrals int_0^1 v^k e^{zv} dv are summed as a series
_SERIES_RADIUS = 0.5
_SERIES_TERMS = 30


class UnsupportedSystemError(QLangevinError):
    """Raised when a nonlinear potential reaches the operator solution."""

    pass


class UnresolvedModeGridError(QLangevinError):
    """Raised when the bath mode grid is too coarse for the requested times."""

    pass


class Regime(str, Enum):
    UNDERDAMPED = "underdamped"
    CRITICAL = "critical"
    OVERDAMPED = "overdamped"
    FREE_DAMPED = "free_damped"


class Algebra(str, Enum):
    QUANTUM = "quantum"
    COMMUTATIVE = "commutative"


# One term c * u^k * exp(r*u) of a Green's function
Term = tuple[complex, int, complex]


def _derivative_terms(terms: Sequence[Term]) -> tuple[Term, ...]:
    out: list[Term] = []
    for c, k, r in terms:
        if k == 0:
            out.append((c * r, 0, r))
        else:
            out.append((c, 0, r))
            out.append((c * r, 1, r))
    return tuple(out)


def _power_exp_integral(k: int, z: np.ndarray) -> np.ndarray:
    """F_k(z) = int_0^1 v^k exp(z*v) dv for k in {0, 1}, vectorized over complex z."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < _SERIES_RADIUS
    large = ~small
    if np.any(large):
        zl = z[large]
        e = np.exp(zl)
        if k == 0:
            out[large] = (e - 1.0) / zl
        else:
            out[large] = (zl * e - e + 1.0) / (zl * zl)
    if np.any(small):
        zs = z[small]
        term = np.ones_like(zs)
        total = term / (k + 1)
        for n in range(1, _SERIES_TERMS):
            term = term * zs / n
            total = total + term / (n + k + 1)
        out[small] = total
    return out


@dataclass(frozen=True)
class GreensFunction:
    """Impulse response of m*x'' + gamma*x' + m*omega0^2*x = delta(t).

    Stored as a short sum of terms c * t^k * exp(r*t) so that its Fourier
    integrals over [0, t] have closed forms.
    """

    system: SystemSpec
    gamma: float
    regime: Regime
    terms: tuple[Term, ...]

    @property
    def derivative_terms(self) -> tuple[Term, ...]:
        return _derivative_terms(self.terms)

    @staticmethod
    def _evaluate(terms: Sequence[Term], t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        total = np.zeros(t.shape, dtype=complex)
        for c, k, r in terms:
            total = total + c * t**k * np.exp(r * t)
        return np.real(total)

    def value(self, t):
        """G(t)."""
        return self._evaluate(self.terms, t)

    def derivative(self, t):
        """dG/dt at t (the right derivative at t = 0)."""
        return self._evaluate(self.derivative_terms, t)

    def position_coefficient(self, t):
        """G_x(t) = m*G'(t) + gamma*G(t), the coefficient of x_0 in x_t."""
        return self.system.mass * self.derivative(t) + self.gamma * self.value(t)

    def fourier_integrals(self, t: float, omegas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closed-form response of x_t and x'_t to a unit e^{iws} forcing.

        Args:
            t: Time (>= 0)
            omegas: Mode frequencies

        Returns:
            Tuple (I, J) with I = int_0^t G(t-s) e^{iws} ds and
            J = int_0^t G'(t-s) e^{iws} ds
        """
        phase = np.exp(1j * omegas * t)
        return (
            phase * self._integrate(self.terms, t, omegas),
            phase * self._integrate(self.derivative_terms, t, omegas),
        )

    @staticmethod
    def _integrate(terms: Sequence[Term], t: float, omegas: np.ndarray) -> np.ndarray:
        # int_0^t u^k e^{(r - iw)u} du = t^{k+1} F_k((r - iw) t)
        total = np.zeros(omegas.shape, dtype=complex)
        for c, k, r in terms:
            total = total + c * t ** (k + 1) * _power_exp_integral(k, (r - 1j * omegas) * t)
        return total


def _stiffness(system: SystemSpec) -> float:
    """m*omega0^2 of a linear system."""
    if isinstance(system.potential, Free):
        return 0.0
    if isinstance(system.potential, Harmonic):
        return system.mass * system.potential.omega0**2
    raise UnsupportedSystemError(
        f"operator solution needs a free or harmonic system, got {type(system.potential).__name__}"
    )


def build_greens_function(system: SystemSpec, gamma: float) -> GreensFunction:
    """Select the damping regime and build the closed-form impulse response.

    Raises:
        UnsupportedSystemError: For quartic or double-well potentials
    """
    require_nonnegative("bath.gamma", gamma)
    m = system.mass
    k = _stiffness(system)
    lam = gamma / (2.0 * m)

    if k == 0.0:
        if gamma == 0.0:
            terms: tuple[Term, ...] = ((1.0 / m, 1, 0.0),)
        else:
            terms = ((1.0 / gamma, 0, 0.0), (-1.0 / gamma, 0, -gamma / m))
        return GreensFunction(system, gamma, Regime.FREE_DAMPED, terms)

    omega0_sq = k / m
    discriminant = gamma**2 - 4.0 * m * k
    scale = gamma**2 + 4.0 * m * k
    if abs(discriminant) <= CRITICAL_WINDOW * scale:
        regime = Regime.CRITICAL
        terms = ((1.0 / m, 1, -lam),)
    elif discriminant < 0:
        regime = Regime.UNDERDAMPED
        wd = math.sqrt(omega0_sq - lam * lam)
        c = 1.0 / (2j * m * wd)
        terms = ((c, 0, complex(-lam, wd)), (-c, 0, complex(-lam, -wd)))
    else:
        regime = Regime.OVERDAMPED
        kappa = math.sqrt(lam * lam - omega0_sq)
        c = 1.0 / (2.0 * m * kappa)
        terms = ((c, 0, -lam + kappa), (-c, 0, -lam - kappa))
    logger.debug(f"Green's function regime: {regime.value} (gamma={gamma}, m={m}, omega0^2={omega0_sq})")
    return GreensFunction(system, gamma, regime, terms)


def greens_function(system: SystemSpec, gamma: float, t: float) -> tuple[float, float]:
    """Evaluate the impulse response and its derivative.

    Args:
        system: Free or harmonic system
        gamma: Friction (>= 0)
        t: Time (>= 0)

    Returns:
        Tuple (G(t), G'(t)); G(0) = 0 and m*G'(0+) = 1

    Raises:
        UnsupportedSystemError: For anharmonic potentials
        InvalidSpecError: If t < 0
    """
    require_nonnegative("t", t)
    g = build_greens_function(system, gamma)
    return float(g.value(t)), float(g.derivative(t))


@dataclass(frozen=True)
class ModeBath:
    """Finite set of bath modes with their squared couplings.

    `widths` is the frequency weight of each mode (dw for a uniform grid, the
    quadrature weight for Gauss-Legendre nodes).
    """

    omegas: np.ndarray
    widths: np.ndarray
    coupling_sq: np.ndarray
    gamma: float
    omega_eff: float
    kind: str

    def __post_init__(self) -> None:
        if self.omegas.ndim != 1 or len(self.omegas) == 0:
            raise InvalidSpecError("ModeBath needs at least one mode")
        if np.any(self.omegas <= 0):
            raise InvalidSpecError("ModeBath frequencies must be positive")
        if np.any(self.widths <= 0) or np.any(self.coupling_sq < 0):
            raise InvalidSpecError("ModeBath widths must be positive and couplings nonnegative")

    @property
    def n_modes(self) -> int:
        return len(self.omegas)

    @property
    def d_omega(self) -> float:
        """Largest frequency spacing of the grid."""
        return float(np.max(self.widths))

    @classmethod
    def uniform(cls, bath: BathSpec, n_modes: int) -> "ModeBath":
        """Right-endpoint grid w_j = j*omega_eff/n_modes, j = 1..n_modes."""
        if int(n_modes) != n_modes or n_modes < 1:
            raise InvalidSpecError(f"commutator.n_modes must be a positive integer, got {n_modes!r}")
        n_modes = int(n_modes)
        d_omega = bath.omega_eff / n_modes
        omegas = bath.omega_eff * (np.arange(1, n_modes + 1) / n_modes)
        widths = np.full(n_modes, d_omega)
        return cls._with_couplings(bath, omegas, widths, "uniform")

    @classmethod
    def from_quadrature(cls, bath: BathSpec, n_modes: int | None = None) -> "ModeBath":
        """Gauss-Legendre nodes on [0, omega_eff], the discretization bath_kernel uses."""
        if n_modes is None:
            omegas, weights = quadrature_rule(bath)
        else:
            omegas, weights = quadrature_rule(replace(bath, quadrature_nodes=int(n_modes)))
        return cls._with_couplings(bath, np.array(omegas), np.array(weights), "quadrature")

    @classmethod
    def _with_couplings(cls, bath: BathSpec, omegas: np.ndarray, widths: np.ndarray, kind: str) -> "ModeBath":
        coupling_sq = (bath.gamma / math.pi) * omegas * widths * bath.cutoff.window(omegas)
        return cls(
            omegas=omegas,
            widths=widths,
            coupling_sq=coupling_sq,
            gamma=bath.gamma,
            omega_eff=bath.omega_eff,
            kind=kind,
        )

    def refined(self, bath: BathSpec, factor: int = 2) -> "ModeBath":
        """Same kind of grid with `factor` times more modes."""
        if self.kind == "uniform":
            return ModeBath.uniform(bath, self.n_modes * factor)
        return ModeBath.from_quadrature(bath, self.n_modes * factor)

    def check_compatible(self, bath: BathSpec) -> None:
        if self.gamma != bath.gamma or self.omega_eff != bath.omega_eff:
            raise InvalidSpecError(
                f"mode grid built for gamma={self.gamma}, omega_eff={self.omega_eff} "
                f"does not match bath gamma={bath.gamma}, omega_eff={bath.omega_eff}"
            )

    def check_resolves(self, span: float) -> None:
        """Require d_omega * span <= pi, so the grid does not alias over `span`.

        Raises:
            UnresolvedModeGridError: If the grid is too coarse
        """
        if self.d_omega * span > math.pi:
            raise UnresolvedModeGridError(
                f"{self.n_modes} modes (d_omega={self.d_omega:.3g}) cannot resolve times up to {span:.3g}; "
                f"need d_omega <= {math.pi / span:.3g}"
            )


@dataclass(frozen=True)
class CommutatorTrace:
    """Equal-time commutator [x_t, p_t] in units of i*hbar on a uniform grid."""

    dt: float
    values: np.ndarray
    algebra: Algebra

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise InvalidSpecError("commutator trace has non-finite values")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n)

    def sup_deviation(self) -> float:
        """sup_t |C(t) - 1|."""
        return float(np.max(np.abs(self.values - 1.0)))


@dataclass(frozen=True)
class CommutatorDecomposition:
    """Initial-operator part, bath part and total of C(t)."""

    dt: float
    initial: np.ndarray
    bath: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.initial + self.bath

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.initial))


@dataclass(frozen=True)
class RefinementRow:
    n_modes: int
    cutoff_frequency: float
    sup_deviation: float
    change: float


def time_grid(t_max: float, n_times: int) -> np.ndarray:
    """Uniform grid 0, ..., t_max with n_times points."""
    require_finite("commutator.t_max", t_max)
    if t_max <= 0 or n_times < 2:
        raise InvalidSpecError(f"need t_max > 0 and n_times >= 2, got {t_max}, {n_times}")
    return np.linspace(0.0, t_max, int(n_times))


def _grid_step(t_grid) -> float:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) < 2 or t[0] != 0.0:
        raise InvalidSpecError("t_grid must be a 1-D grid of at least two times starting at 0")
    steps = np.diff(t)
    dt = float(steps[0])
    if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=0.0):
        raise InvalidSpecError("t_grid must be uniformly spaced and increasing")
    return dt


def _initial_part(green: GreensFunction, t: np.ndarray) -> np.ndarray:
    # [G_x x0 + G p0, m G_x' x0 + m G' p0] / (i hbar) = G_x*m*G' + m^2*omega0^2*G^2
    m = green.system.mass
    g = green.value(t)
    mgdot = m * green.derivative(t)
    return green.position_coefficient(t) * mgdot + m * _stiffness(green.system) * g * g


def _bath_part(green: GreensFunction, modes: ModeBath, t: np.ndarray) -> np.ndarray:
    # sum_j 2 m g_j^2 Im(conj(I_j) J_j); hbar cancels against the mode commutators
    m = green.system.mass
    out = np.zeros(len(t))
    for i, ti in enumerate(t):
        if ti == 0.0:
            continue
        I, J = green.fourier_integrals(float(ti), modes.omegas)
        out[i] = 2.0 * m * float(np.dot(modes.coupling_sq, np.imag(np.conj(I) * J)))
    return out


def commutator_decomposition(
    system: SystemSpec,
    bath: BathSpec,
    modes: ModeBath,
    t_grid,
) -> CommutatorDecomposition:
    """Split C(t) into its initial-operator and bath contributions.

    Raises:
        UnsupportedSystemError: For anharmonic potentials
        UnresolvedModeGridError: If the grid aliases over the time span
    """
    dt = _grid_step(t_grid)
    t = np.asarray(t_grid, dtype=float)
    modes.check_compatible(bath)
    modes.check_resolves(float(t[-1]))
    green = build_greens_function(system, bath.gamma)
    return CommutatorDecomposition(dt=dt, initial=_initial_part(green, t), bath=_bath_part(green, modes, t))


def _trace(algebra: Algebra, dt: float, initial: np.ndarray, bath_part: np.ndarray | None) -> CommutatorTrace:
    values = initial.astype(complex)
    if algebra is Algebra.QUANTUM and bath_part is not None:
        values = values + bath_part
    values[0] = 1.0
    return CommutatorTrace(dt=dt, values=values, algebra=algebra)


def commutator_trace(
    system: SystemSpec,
    bath: BathSpec,
    modes: ModeBath,
    t_grid,
    tolerance: float | None = DEFAULT_MODE_TOLERANCE,
) -> CommutatorTrace:
    """Evaluate C(t) with the quantum noise algebra.

    When `tolerance` is set, the trace is recomputed on a grid with twice as
    many modes and the two must agree to `tolerance` in sup norm.

    Args:
        system: Free or harmonic system
        bath: Bath specification
        modes: Bath modes built from the same bath
        t_grid: Uniform times starting at 0
        tolerance: Convergence-monitor threshold, or None to skip the check

    Returns:
        CommutatorTrace with algebra QUANTUM

    Raises:
        UnsupportedSystemError: For anharmonic potentials
        UnresolvedModeGridError: If the mode grid aliases or fails the monitor
    """
    parts = commutator_decomposition(system, bath, modes, t_grid)
    trace = _trace(Algebra.QUANTUM, parts.dt, parts.initial, parts.bath)
    if tolerance is not None and bath.gamma > 0:
        finer = commutator_decomposition(system, bath, modes.refined(bath), t_grid)
        change = float(np.max(np.abs(finer.total - parts.total)))
        logger.debug(f"Mode doubling {modes.n_modes} -> {2 * modes.n_modes}: sup change {change:.3g}")
        if change > tolerance:
            raise UnresolvedModeGridError(
                f"commutator changed by {change:.3g} > {tolerance:.3g} when doubling "
                f"{modes.n_modes} modes; increase commutator.n_modes"
            )
    return trace


def commutator_trace_commutative(system: SystemSpec, bath: BathSpec, t_grid) -> CommutatorTrace:
    """Evaluate C(t) with c-number noise: every noise commutator is zero.

    Only the initial operators contribute, giving the damped Wronskian
    exp(-gamma*t/m) for free and harmonic systems.
    """
    dt = _grid_step(t_grid)
    green = build_greens_function(system, bath.gamma)
    return _trace(Algebra.COMMUTATIVE, dt, _initial_part(green, np.asarray(t_grid, dtype=float)), None)


def symmetric_noise_correlation(bath: BathSpec, modes: ModeBath, t: float, t_prime: float) -> float:
    """Thermal mode sum of (1/2)<{eta_t, eta_t'}>.

    Each mode contributes hbar*g^2*coth(hbar*w/2kT)*cos(w*(t - t')); the sum is
    a Riemann sum of K_T(t - t') over the mode grid.

    Raises:
        UnresolvedModeGridError: If the grid aliases over |t - t'|
    """
    require_finite("t", t)
    require_finite("t_prime", t_prime)
    modes.check_compatible(bath)
    lag = t - t_prime
    modes.check_resolves(abs(lag))
    coth = omega_coth(bath, modes.omegas) / modes.omegas
    return float(bath.hbar * np.dot(modes.coupling_sq * coth, np.cos(modes.omegas * lag)))


def antisymmetric_noise_commutator(bath: BathSpec, modes: ModeBath, t: float, t_prime: float) -> float:
    """A(t - t') from the mode sum [eta_t, eta_t'] = i*2*hbar*sum g^2 sin(w*(t' - t)).

    State independent; on Gauss-Legendre modes it equals
    bath_kernel.evaluate_antisymmetric_kernel to round-off.
    """
    require_finite("t", t)
    require_finite("t_prime", t_prime)
    modes.check_compatible(bath)
    return float(2.0 * bath.hbar * np.dot(modes.coupling_sq, np.sin(modes.omegas * (t_prime - t))))


def _with_cutoff(bath: BathSpec, frequency: float) -> BathSpec:
    if isinstance(bath.cutoff, HardCutoff):
        return replace(bath, cutoff=HardCutoff(frequency))
    return replace(bath, cutoff=DrudeCutoff(frequency))


def refinement_report(
    system: SystemSpec,
    bath: BathSpec,
    t_grid,
    mode_counts: Sequence[int],
    cutoff_frequencies: Sequence[float] | None = None,
    kind: str = "uniform",
) -> list[RefinementRow]:
    """Tabulate sup|C - 1| of the quantum trace over mode counts and cutoffs.

    For every cutoff frequency (default: the bath's own) the mode counts are
    visited in order; `change` is the sup-norm difference to the previous
    mode count at that cutoff (NaN for the first).
    """
    if kind not in ("uniform", "quadrature"):
        raise InvalidSpecError(f"mode grid kind must be 'uniform' or 'quadrature', got {kind!r}")
    if cutoff_frequencies is None:
        current = bath.cutoff.omega_c if isinstance(bath.cutoff, HardCutoff) else bath.cutoff.omega_d
        cutoff_frequencies = [current]

    rows = []
    for frequency in cutoff_frequencies:
        refined_bath = _with_cutoff(bath, float(frequency))
        previous = None
        for n_modes in mode_counts:
            if kind == "uniform":
                modes = ModeBath.uniform(refined_bath, n_modes)
            else:
                modes = ModeBath.from_quadrature(refined_bath, n_modes)
            trace = commutator_trace(system, refined_bath, modes, t_grid, tolerance=None)
            change = math.nan if previous is None else float(np.max(np.abs(trace.values - previous)))
            rows.append(RefinementRow(int(n_modes), float(frequency), trace.sup_deviation(), change))
            previous = trace.values
            logger.info(
                f"cutoff {frequency:g}, {n_modes} modes: sup|C-1| = {trace.sup_deviation():.3e}"
            )
    return rows
