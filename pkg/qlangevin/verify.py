"""Desk-scale acceptance suite.

Each check builds its own small problem, measures one number and compares it
with a tolerance. Statistical checks draw their noise from the configured
master seed, so two runs with the same seed write identical summaries.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from rich.console import Console
from rich.table import Table
from scipy import integrate

from qlangevin.bath_kernel import (
    BathSpec,
    DrudeCutoff,
    HardCutoff,
    evaluate_antisymmetric_kernel,
    high_temperature_limit,
    smeared_gaussian_action,
    spectral_density,
    tabulate_kernel,
)
from qlangevin.classical_dynamics import (
    Free,
    Harmonic,
    SystemSpec,
    default_burn_in,
    ensemble_statistics,
    integrate as integrate_classical,
    integrate_ensemble,
)
from qlangevin.exporter import format_csv_row
from qlangevin.heisenberg_commutator import (
    ModeBath,
    antisymmetric_noise_commutator,
    commutator_trace,
    commutator_trace_commutative,
    symmetric_noise_correlation,
    time_grid,
)
from qlangevin.kubo_solver import (
    average_ensemble,
    build_operators,
    coherent_state,
    evolve_ensemble,
    evolve_noisy,
)
from qlangevin.noise_sampler import (
    EnsembleSpec,
    NoisePath,
    SamplingMethod,
    empirical_covariance,
    sample_ensemble,
    sample_path,
)
from qlangevin.utils import InvalidSpecError, mean_and_standard_error

logger = logging.getLogger(__name__)

SUMMARY_FILE = "verify_summary.csv"

# Hard-cutoff embeddings leave a clipped fraction of order 0.1/m
RELAXED_CLIP_BUDGET = 1e-3

# sup|C - 1| is set by the early transient of a band-limited bath, about 2.6 * 2 gamma / (pi m wc)
UNITARITY_TOLERANCE = 1e-2

# First-order mode-sum errors at 2e4 and 4e4 uniform modes
FDT_TOLERANCES = (1e-3, 3e-4)


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one acceptance check."""

    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""


def check_kernel_quadrature(seed: int, threads: int) -> CheckResult:
    """Tabulated K_T against adaptive quadrature, both cutoffs, three temperatures."""
    worst = 0.0
    for cutoff in (HardCutoff(50.0), DrudeCutoff(5.0)):
        for temperature in (0.5, 2.0, 20.0):
            bath = BathSpec(gamma=1.0, temperature=temperature, cutoff=cutoff)
            grid = tabulate_kernel(bath, 0.05, 64)

            def density(w: float) -> float:
                return float(spectral_density(bath, np.array(w)))

            oracle = np.array([
                integrate.quad(density, 0.0, bath.omega_eff, weight="cos", wvar=lag, limit=500, epsabs=0.0, epsrel=1e-11)[0]
                if lag > 0 else integrate.quad(density, 0.0, bath.omega_eff, limit=500, epsabs=0.0, epsrel=1e-11)[0]
                for lag in grid.lags
            ])
            error = float(np.max(np.abs(grid.values - oracle)) / np.max(np.abs(oracle)))
            worst = max(worst, error)
    return CheckResult("kernel_quadrature", worst <= 1e-8, worst, 1e-8, "max relative error over 64 lags")


def _smeared_error(temperature: float) -> float:
    bath = BathSpec(gamma=1.0, temperature=temperature, cutoff=HardCutoff(50.0))
    action = smeared_gaussian_action(bath, t=0.0, center=0.0, width=0.5)
    return abs(action / high_temperature_limit(bath) - 1.0)


def check_classical_limit(seed: int, threads: int) -> CheckResult:
    """Smeared K_T tends to 2kT*gamma*f(t), error falling ~100x per decade of T."""
    error = _smeared_error(5000.0)
    ladder = [_smeared_error(t) for t in (5.0, 50.0, 500.0)]
    ratios = [ladder[i] / ladder[i + 1] for i in range(2)]
    passed = error <= 0.02 and min(ratios) >= 50.0
    detail = f"error at hbar*wc/kT=0.01; decade ratios {ratios[0]:.1f}, {ratios[1]:.1f}"
    return CheckResult("classical_limit", passed, error, 0.02, detail)


def check_noise_fidelity(seed: int, threads: int) -> CheckResult:
    """Empirical covariance of 10^4 paths within 5 standard errors of K_T."""
    bath = BathSpec(gamma=1.0, temperature=2.0, cutoff=HardCutoff(50.0))
    dt, n, max_lag = 0.05, 256, 10
    kernel = tabulate_kernel(bath, dt, max_lag + 1).values
    worst = 0.0
    estimates = {}
    for method in (SamplingMethod.CIRCULANT, SamplingMethod.SPECTRAL):
        spec = EnsembleSpec(
            master_seed=seed,
            n_realizations=10_000,
            method=method,
            clip_budget=RELAXED_CLIP_BUDGET,
        )
        estimate = empirical_covariance(sample_ensemble(bath, dt, n, spec, threads=threads), max_lag)
        estimates[method] = estimate
        if method is SamplingMethod.CIRCULANT:
            worst = float(np.max(np.abs(estimate.mean - kernel) / estimate.standard_error))
    a, b = estimates[SamplingMethod.CIRCULANT], estimates[SamplingMethod.SPECTRAL]
    combined = np.sqrt(a.standard_error**2 + b.standard_error**2)
    backends = float(np.max(np.abs(a.mean - b.mean) / combined))
    passed = worst <= 5.0 and backends <= 5.0
    detail = f"max z-score vs K_T; backend agreement z={backends:.2f}"
    return CheckResult("noise_fidelity", passed, worst, 5.0, detail)


def check_classical_equilibrium(seed: int, threads: int) -> CheckResult:
    """High-T harmonic ensemble reaches equipartition within 5%."""
    bath = BathSpec(gamma=1.0, temperature=5000.0, cutoff=HardCutoff(50.0))
    system = SystemSpec(mass=1.0, potential=Harmonic(1.0))
    dt, n = 0.01, 8192
    spec = EnsembleSpec(master_seed=seed, n_realizations=1000, clip_budget=RELAXED_CLIP_BUDGET)
    paths = sample_ensemble(bath, dt, n, spec, threads=threads)
    report = ensemble_statistics(integrate_ensemble(system, bath, paths, 0.0, 0.0), default_burn_in(system, bath, dt))
    x2_error = abs(report.stationary["x2"][0] / bath.kT - 1.0)
    p2_error = abs(report.stationary["p2"][0] / (system.mass * bath.kT) - 1.0)
    worst = max(x2_error, p2_error)
    detail = f"<x^2>/kT-1={x2_error:.4f}, <p^2>/mkT-1={p2_error:.4f}"
    return CheckResult("classical_equilibrium", worst <= 0.05, worst, 0.05, detail)


_KUBO_OMEGA0 = 1.0


def _kubo_setup(gamma: float, dim: int):
    bath = BathSpec(gamma=gamma, temperature=1.0, cutoff=HardCutoff(20.0))
    system = SystemSpec(mass=1.0, potential=Harmonic(_KUBO_OMEGA0))
    ops = build_operators(system, 1.0, dim, bath.hbar)
    return bath, system, ops


def check_kubo_structure(seed: int, threads: int) -> CheckResult:
    """Trace and Hermiticity over 10^4 steps; purity in the unitary limit."""
    bath, _, ops = _kubo_setup(0.05, 20)
    rho0 = coherent_state(ops, 1.0, 0.0)
    dt, n = 0.002, 10_001
    spec = EnsembleSpec(master_seed=seed, n_realizations=4, clip_budget=RELAXED_CLIP_BUDGET)
    runs = evolve_ensemble(rho0, ops, bath, sample_ensemble(bath, dt, n, spec), stride=100, threads=threads)
    trace_error = max(float(np.max(np.abs(r.traces - 1.0))) for r in runs)
    hermitian_error = max(
        float(np.max(np.abs(r.states - np.conj(np.swapaxes(r.states, 1, 2))))) for r in runs
    )

    closed = replace(bath, gamma=0.0)
    quiet = NoisePath(dt=dt, values=np.zeros(n), seed=seed, realization_index=0)
    unitary = evolve_noisy(rho0, ops, closed, quiet, stride=100)
    purity_error = float(np.max(np.abs(unitary.purities - 1.0)))

    passed = trace_error <= 1e-8 and hermitian_error <= 1e-10 and purity_error <= 1e-8
    detail = f"trace {trace_error:.2e}, hermiticity {hermitian_error:.2e}, purity {purity_error:.2e}"
    return CheckResult("kubo_structure", passed, max(trace_error, purity_error), 1e-8, detail)


def check_ehrenfest(seed: int, threads: int) -> CheckResult:
    """Kubo first moments follow the classical path of the same noise, 10 periods."""
    bath, system, ops = _kubo_setup(0.01, 32)
    dt = 0.002
    n = int(round(10 * 2 * math.pi / dt)) + 1
    spec = EnsembleSpec(master_seed=seed, n_realizations=1, clip_budget=RELAXED_CLIP_BUDGET)
    path = sample_path(bath, dt, n, spec, 0)
    rho0 = coherent_state(ops, 1.0, 0.0)
    run = evolve_noisy(rho0, ops, bath, path, stride=10)
    trajectory = integrate_classical(system, bath, path, 1.0, 0.0)
    x_quantum = np.real(run.expectation(ops.X))
    p_quantum = np.real(run.expectation(ops.P))
    x_classical = trajectory.x[::10]
    p_classical = trajectory.p[::10]
    error = max(
        float(np.max(np.abs(x_quantum - x_classical)) / np.max(np.abs(x_classical))),
        float(np.max(np.abs(p_quantum - p_classical)) / np.max(np.abs(p_classical))),
    )
    passed = error <= 1e-4 and not run.leak_flag
    return CheckResult("ehrenfest", passed, error, 1e-4, f"leak={float(np.max(run.leakage)):.1e}")


def check_cross_formalism(seed: int, threads: int) -> CheckResult:
    """Noise-averaged Kubo <X^2> equals classical E[x^2] plus the noise-free spread.

    The horizon is shorter than the relaxation time m/gamma, so kT/(m w0^2) is not
    reached here. Equipartition is asserted by `check_classical_equilibrium`; this
    check ties the Kubo ensemble to those classical paths realization by realization.
    The detail reports the classical late-time <x^2> against kT/(m w0^2).
    """
    bath, system, ops = _kubo_setup(0.05, 32)
    dt, n, stride = 0.004, 4001, 10
    spec = EnsembleSpec(master_seed=seed, n_realizations=24, clip_budget=RELAXED_CLIP_BUDGET)
    paths = sample_ensemble(bath, dt, n, spec, threads=threads)
    rho0 = coherent_state(ops, 0.5, 0.0)
    x_op = ops.X @ ops.X
    average = average_ensemble(
        evolve_ensemble(rho0, ops, bath, paths, stride=stride, threads=threads),
        {"x2": x_op},
    )
    quiet = NoisePath(dt=dt, values=np.zeros(n), seed=seed, realization_index=0)
    free_run = evolve_noisy(rho0, ops, bath, quiet, stride=stride)
    spread = np.real(free_run.expectation(x_op)) - np.real(free_run.expectation(ops.X)) ** 2

    trajectories = integrate_ensemble(system, bath, paths, 0.5, 0.0)
    x2_classical = np.stack([t.x[::stride] ** 2 for t in trajectories])
    classical_mean, classical_se = mean_and_standard_error(x2_classical, axis=0)
    predicted = classical_mean + spread

    kubo = average.observables["x2"]
    difference = np.abs(kubo.mean - predicted)
    allowed = np.maximum(3.0 * np.hypot(kubo.standard_error, classical_se), 1e-4 * np.max(predicted))
    measured = float(np.max(difference / allowed))
    equipartition = bath.kT / (system.mass * _KUBO_OMEGA0**2)
    detail = (
        f"max |diff| / allowed; classical <x^2>(t_end)={classical_mean[-1]:.4f}"
        f" vs kT/(m w0^2)={equipartition:.4f}"
    )
    return CheckResult("cross_formalism", measured <= 1.0, measured, 1.0, detail)


def check_unitarity(seed: int, threads: int) -> CheckResult:
    """Quantum-algebra C(t) near 1 and converging with the cutoff; commutative C = exp(-gamma t/m)."""
    t = time_grid(5.0, 51)
    worst_quantum = 0.0
    worst_commutative = 0.0
    worst_ratio = math.inf
    for potential in (Free(), Harmonic(1.0)):
        system = SystemSpec(mass=1.0, potential=potential)
        deviations = []
        for omega_c, n_modes in ((200.0, 20_000), (400.0, 40_000)):
            bath = BathSpec(gamma=1.0, temperature=1.0, cutoff=HardCutoff(omega_c))
            trace = commutator_trace(system, bath, ModeBath.uniform(bath, n_modes), t)
            deviations.append(trace.sup_deviation())
        worst_quantum = max(worst_quantum, deviations[0])
        worst_ratio = min(worst_ratio, deviations[0] / deviations[1])

        commutative = commutator_trace_commutative(system, bath, t)
        exact = np.exp(-bath.gamma * t / system.mass)
        worst_commutative = max(worst_commutative, float(np.max(np.abs(commutative.values - exact))))
    passed = worst_quantum <= UNITARITY_TOLERANCE and worst_ratio >= 1.5 and worst_commutative <= 1e-10
    detail = f"cutoff-doubling ratio {worst_ratio:.2f}; commutative error {worst_commutative:.1e}"
    return CheckResult("unitarity", passed, worst_quantum, UNITARITY_TOLERANCE, detail)


def check_fdt_consistency(seed: int, threads: int) -> CheckResult:
    """Mode-sum correlations: first-order convergence and exact commutator."""
    bath = BathSpec(gamma=1.0, temperature=2.0, cutoff=HardCutoff(50.0))
    lag = 0.3
    reference = tabulate_kernel(bath, lag, 2).values[1]
    errors = [
        abs(symmetric_noise_correlation(bath, ModeBath.uniform(bath, n_modes), lag, 0.0) / reference - 1.0)
        for n_modes in (20_000, 40_000)
    ]
    order = math.log2(errors[0] / errors[1])

    modes = ModeBath.from_quadrature(bath)
    lags = np.linspace(-2.0, 2.0, 41)
    scale = max(abs(evaluate_antisymmetric_kernel(bath, v)) for v in lags)
    antisymmetric = max(
        abs(antisymmetric_noise_commutator(bath, modes, v, 0.0) - evaluate_antisymmetric_kernel(bath, v)) / scale
        for v in lags
    )
    within = all(e <= bound for e, bound in zip(errors, FDT_TOLERANCES, strict=True))
    passed = within and 0.8 <= order <= 1.2 and antisymmetric <= 1e-10
    detail = f"errors {errors[0]:.2e}, {errors[1]:.2e}; order {order:.3f}; commutator error {antisymmetric:.1e}"
    return CheckResult("fdt_consistency", passed, order, 1.0, detail)


def _ensemble_text(seed: int, threads: int) -> str:
    bath = BathSpec(gamma=1.0, temperature=1.0, cutoff=DrudeCutoff(5.0))
    spec = EnsembleSpec(master_seed=seed, n_realizations=16, clip_budget=RELAXED_CLIP_BUDGET)
    paths = sample_ensemble(bath, 0.05, 128, spec, threads=threads)
    return "\n".join(format_csv_row(p.values) for p in paths)


def check_reproducibility(seed: int, threads: int) -> CheckResult:
    """Same seed, sequential and threaded: identical CSV text."""
    identical = _ensemble_text(seed, 1) == _ensemble_text(seed, max(2, threads))
    return CheckResult("reproducibility", identical, 0.0 if identical else 1.0, 0.0, "bit-identical CSV text")


CHECKS: list[tuple[str, Callable[[int, int], CheckResult]]] = [
    ("kernel_quadrature", check_kernel_quadrature),
    ("classical_limit", check_classical_limit),
    ("noise_fidelity", check_noise_fidelity),
    ("classical_equilibrium", check_classical_equilibrium),
    ("kubo_structure", check_kubo_structure),
    ("ehrenfest", check_ehrenfest),
    ("cross_formalism", check_cross_formalism),
    ("unitarity", check_unitarity),
    ("fdt_consistency", check_fdt_consistency),
    ("reproducibility", check_reproducibility),
]


def run_checks(seed: int, threads: int = 1, only: list[str] | None = None) -> list[CheckResult]:
    """Run the acceptance checks in order.

    Args:
        seed: Master seed for every statistical check
        threads: Worker threads for ensemble work
        only: Names of the checks to run (default: all)

    Returns:
        One CheckResult per check run

    Raises:
        InvalidSpecError: If `only` names an unknown check
    """
    if only is not None:
        unknown = sorted(set(only) - {name for name, _ in CHECKS})
        if unknown:
            raise InvalidSpecError(
                f"unknown check(s) {', '.join(unknown)}; available: {', '.join(name for name, _ in CHECKS)}"
            )
    results = []
    for name, check in CHECKS:
        if only is not None and name not in only:
            continue
        logger.info(f"Running check {name}...")
        result = check(seed, threads)
        logger.debug(f"{name}: measured={result.measured:.6g} tolerance={result.tolerance:.3g} ({result.detail})")
        results.append(result)
    return results


def write_summary(results: list[CheckResult], output_dir: str | Path) -> Path:
    """Write verify_summary.csv with one row per check."""
    path = Path(output_dir) / SUMMARY_FILE
    with open(path, "w", encoding="utf-8") as f:
        f.write("check,passed,measured,tolerance,detail\n")
        for r in results:
            f.write(format_csv_row([r.name, str(r.passed).lower(), float(r.measured), float(r.tolerance), r.detail.replace(",", ";")]) + "\n")
    return path


def print_summary(results: list[CheckResult], console: Console | None = None) -> None:
    """Print the pass/fail table."""
    console = console or Console()
    table = Table(title="Acceptance checks", show_header=True, header_style="bold")
    table.add_column("Check", style="cyan")
    table.add_column("Result")
    table.add_column("Measured", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Detail", style="dim")
    for r in results:
        status = "[green]pass[/green]" if r.passed else "[red]FAIL[/red]"
        table.add_row(r.name, status, f"{r.measured:.3e}", f"{r.tolerance:.1e}", r.detail)
    console.print(table)
