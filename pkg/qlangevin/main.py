"""CLI entry point for qlangevin."""

import argparse
import logging
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from qlangevin.bath_kernel import tabulate_kernel
from qlangevin.classical_dynamics import (
    IntegrationOverflowError,
    default_burn_in,
    ensemble_statistics,
    integrate_ensemble,
)
from qlangevin.config import (
    ConfigurationError,
    RunConfig,
    default_threads,
    load_config,
    write_resolved_config,
)
from qlangevin.exporter import (
    export_commutator,
    export_covariance,
    export_kernel,
    export_kubo_ensemble,
    export_kubo_run,
    export_moments,
    export_noise_path,
    export_refinement,
    export_trajectory,
    load_noise_ensemble,
    save_noise_ensemble,
)
from qlangevin.heisenberg_commutator import (
    ModeBath,
    UnresolvedModeGridError,
    UnsupportedSystemError,
    commutator_trace,
    commutator_trace_commutative,
    refinement_report,
    time_grid,
)
from qlangevin.kubo_solver import (
    average_ensemble,
    build_operators,
    evolve_ensemble,
    initial_state,
    standard_observables,
)
from qlangevin.noise_sampler import (
    CirculantEmbeddingError,
    NoisePath,
    empirical_covariance,
    sample_ensemble,
)
from qlangevin.utils import InvalidSpecError, check_same_grid
from qlangevin.verify import print_summary, run_checks, write_summary

logger = logging.getLogger(__name__)

# Exit codes
EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

# Largest lag index written to the covariance report
DEFAULT_MAX_LAG = 64

# Per-realization files written by default
DEFAULT_FILES_PER_RUN = 10


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="qlangevin",
        description="Quantum Brownian motion: noise kernels, Langevin ensembles and commutator checks",
    )

    # Global verbosity options
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument(
        "-v", "--verbose",
        action="store_true",
        help="Enable verbose output (debug logging)",
    )
    verbosity.add_argument(
        "-q", "--quiet",
        action="store_true",
        help="Quiet mode (only errors)",
    )

    # Options shared by every subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=str,
        default=None,
        help="Path to a 'key = value' config file",
    )
    common.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Master seed (overrides ensemble.master_seed)",
    )
    common.add_argument(
        "--out",
        type=str,
        default=None,
        help="Output directory (overrides output_dir)",
    )
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (default: $QLANGEVIN_THREADS or 1)",
    )
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key (repeatable)",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    subparsers.add_parser("kernel", parents=[common], help="Tabulate K_T and the noise commutator A")

    noise_parser = subparsers.add_parser(
        "sample-noise",
        parents=[common],
        help="Sample noise paths and compare their covariance with K_T",
    )
    noise_parser.add_argument(
        "--max-lag",
        type=int,
        default=DEFAULT_MAX_LAG,
        help=f"Largest lag index in the covariance report (default: {DEFAULT_MAX_LAG})",
    )
    noise_parser.add_argument(
        "--paths",
        type=int,
        default=DEFAULT_FILES_PER_RUN,
        help=f"Number of path CSV files to write (default: {DEFAULT_FILES_PER_RUN})",
    )

    classical_parser = subparsers.add_parser(
        "classical",
        parents=[common],
        help="Integrate the classical Langevin equation over the noise ensemble",
    )
    classical_parser.add_argument(
        "--noise-cache",
        type=str,
        default=None,
        help="Reuse paths from a noise.npz written by sample-noise",
    )
    classical_parser.add_argument(
        "--trajectories",
        type=int,
        default=DEFAULT_FILES_PER_RUN,
        help=f"Number of trajectory CSV files to write (default: {DEFAULT_FILES_PER_RUN})",
    )

    kubo_parser = subparsers.add_parser(
        "kubo",
        parents=[common],
        help="Evolve noisy density matrices and average them",
    )
    kubo_parser.add_argument(
        "--noise-cache",
        type=str,
        default=None,
        help="Reuse paths from a noise.npz written by sample-noise",
    )
    kubo_parser.add_argument(
        "--runs",
        type=int,
        default=DEFAULT_FILES_PER_RUN,
        help=f"Number of per-run CSV files to write (default: {DEFAULT_FILES_PER_RUN})",
    )

    commutator_parser = subparsers.add_parser(
        "commutator",
        parents=[common],
        help="Equal-time commutator [x_t, p_t] with quantum and commutative noise",
    )
    commutator_parser.add_argument(
        "--refine",
        type=int,
        default=2,
        help="Number of mode-count doublings in the refinement report (default: 2)",
    )

    verify_parser = subparsers.add_parser(
        "verify",
        parents=[common],
        help="Run the acceptance checks",
    )
    verify_parser.add_argument(
        "--only",
        action="append",
        default=None,
        metavar="CHECK",
        help="Run only the named check (repeatable)",
    )

    return parser


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Configure logging based on verbosity flags.

    Args:
        verbose: Enable debug-level logging
        quiet: Only show errors
    """
    if verbose:
        level = logging.DEBUG
        fmt = "%(levelname)s [%(name)s] %(message)s"
    elif quiet:
        level = logging.ERROR
        fmt = "%(message)s"
    else:
        level = logging.INFO
        fmt = "%(message)s"

    logging.basicConfig(level=level, format=fmt, force=True)


def prepare_output(config: RunConfig) -> Path:
    """Create the output directory and echo the resolved config into it.

    Raises:
        ConfigurationError: If the directory cannot be created or written
    """
    output_dir = Path(config.output_dir).expanduser()
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        write_resolved_config(config, output_dir)
    except OSError as e:
        raise ConfigurationError(f"output_dir {output_dir} is not writable: {e}") from e
    return output_dir


def _noise(config: RunConfig, threads: int, cache: str | None = None) -> list[NoisePath]:
    if cache is not None:
        paths = load_noise_ensemble(cache)
        check_same_grid([p.dt for p in paths], [p.n for p in paths], "cached noise paths")
        logger.info(f"Loaded {len(paths)} cached noise paths from {cache}")
        return paths
    bath = config.bath_spec()
    ensemble = config.ensemble_spec()
    logger.info(
        f"Sampling {ensemble.n_realizations} paths of {config.grid.n} points "
        f"({ensemble.method.value}, seed {ensemble.master_seed})"
    )
    return sample_ensemble(bath, config.grid.dt, config.grid.n, ensemble, threads=threads)


def run_kernel(config: RunConfig, output_dir: Path) -> int:
    grid = tabulate_kernel(config.bath_spec(), config.grid.dt, config.grid.n)
    count = export_kernel(grid, output_dir / "kernel.csv")
    logger.info(f"Wrote {count} lags to {output_dir / 'kernel.csv'}")
    return EXIT_OK


def run_sample_noise(config: RunConfig, output_dir: Path, threads: int, max_lag: int, n_files: int) -> int:
    paths = _noise(config, threads)
    paths_dir = output_dir / "paths"
    paths_dir.mkdir(exist_ok=True)
    for path in paths[:n_files]:
        export_noise_path(path, paths_dir / f"noise_{path.realization_index:05d}.csv")
    save_noise_ensemble(paths, output_dir / "noise.npz")

    if len(paths) >= 2:
        max_lag = min(max_lag, config.grid.n - 1)
        kernel = tabulate_kernel(config.bath_spec(), config.grid.dt, max(max_lag + 1, 2)).values
        estimate = empirical_covariance(paths, max_lag)
        export_covariance(estimate, kernel, output_dir / "covariance.csv")
        z = np.abs(estimate.mean - kernel[: max_lag + 1]) / np.where(estimate.standard_error > 0, estimate.standard_error, np.inf)
        logger.info(f"Covariance over {len(paths)} paths: max |z| = {float(np.max(z)):.2f} at lags <= {max_lag}")
    else:
        logger.info("Single realization: covariance report skipped")
    logger.info(f"Wrote noise ensemble to {output_dir}")
    return EXIT_OK


def run_classical(config: RunConfig, output_dir: Path, threads: int, cache: str | None, n_files: int) -> int:
    bath = config.bath_spec()
    system = config.system_spec()
    paths = _noise(config, threads, cache)
    trajectories = integrate_ensemble(system, bath, paths, config.initial.x0, config.initial.p0)

    traj_dir = output_dir / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    for trajectory in trajectories[:n_files]:
        export_trajectory(trajectory, traj_dir / f"trajectory_{trajectory.realization_index:05d}.csv")

    if len(trajectories) >= 2:
        n = trajectories[0].n
        burn_in = default_burn_in(system, bath, paths[0].dt) if bath.gamma > 0 else 0
        if burn_in >= n:
            logger.warning(f"Burn-in of {burn_in} steps exceeds the run of {n}; using no burn-in")
            burn_in = 0
        report = ensemble_statistics(trajectories, burn_in)
        export_moments(report, output_dir / "moments.csv")
        x2, x2_se = report.stationary["x2"]
        p2, p2_se = report.stationary["p2"]
        logger.info(f"Stationary <x^2> = {x2:.6g} +- {x2_se:.2g}, <p^2> = {p2:.6g} +- {p2_se:.2g}")
    logger.info(f"Wrote {len(trajectories)} trajectories' results to {output_dir}")
    return EXIT_OK


def run_kubo(config: RunConfig, output_dir: Path, threads: int, cache: str | None, n_files: int) -> int:
    bath = config.bath_spec()
    system = config.system_spec()
    ops = build_operators(system, config.solver.basis_omega, config.solver.dim, bath.hbar)
    rho0 = initial_state(config.initial_state, ops, config.initial.x0, config.initial.p0, bath.kT)
    paths = _noise(config, threads, cache)
    runs = evolve_ensemble(rho0, ops, bath, paths, stride=config.solver.stride, threads=threads)

    runs_dir = output_dir / "kubo_runs"
    runs_dir.mkdir(exist_ok=True)
    for run in runs[:n_files]:
        export_kubo_run(run, ops, runs_dir / f"run_{run.realization_index:05d}.csv")
    if len(runs) >= 2:
        average = average_ensemble(runs, standard_observables(ops))
        export_kubo_ensemble(average, output_dir / "kubo_ensemble.csv")

    leaking = [run.realization_index for run in runs if run.leak_flag]
    flagged = sum(run.positivity_flag for run in runs)
    if flagged:
        logger.info(f"{flagged} of {len(runs)} noisy states went non-positive (expected per realization)")
    if leaking:
        logger.error(
            f"Truncation leakage in {len(leaking)} of {len(runs)} runs (first: {leaking[0]}); "
            f"increase solver.dim or shorten the run"
        )
        return EXIT_NUMERICAL
    logger.info(f"Wrote {len(runs)} Kubo runs to {output_dir}")
    return EXIT_OK


def run_commutator(config: RunConfig, output_dir: Path, refine: int) -> int:
    bath = config.bath_spec()
    system = config.system_spec()
    c = config.commutator
    t = time_grid(c.t_max, c.n_times)
    if c.mode_grid == "uniform":
        modes = ModeBath.uniform(bath, c.n_modes)
    else:
        modes = ModeBath.from_quadrature(bath, c.n_modes)

    quantum = commutator_trace(system, bath, modes, t, tolerance=c.tolerance)
    commutative = commutator_trace_commutative(system, bath, t)
    export_commutator([quantum, commutative], output_dir / "commutator.csv")

    mode_counts = [c.n_modes * 2**k for k in range(refine + 1)]
    rows = refinement_report(system, bath, t, mode_counts, kind=c.mode_grid)
    export_refinement(rows, output_dir / "refinement.csv")
    logger.info(
        f"sup|C-1|: quantum {quantum.sup_deviation():.3e}, commutative {commutative.sup_deviation():.3e}"
    )
    return EXIT_OK


def run_verify(config: RunConfig, output_dir: Path, threads: int, only: list[str] | None) -> int:
    results = run_checks(config.ensemble.master_seed, threads, only)
    write_summary(results, output_dir)
    print_summary(results)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"Failed checks: {', '.join(failed)}")
        return EXIT_INVALID
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    # Load .env file if present (before reading QLANGEVIN_THREADS)
    load_dotenv()

    parser = create_parser()
    args = parser.parse_args(argv)

    setup_logging(
        verbose=getattr(args, "verbose", False),
        quiet=getattr(args, "quiet", False),
    )

    if args.command is None:
        parser.print_help()
        return EXIT_INVALID

    try:
        config = load_config(args.config, seed=args.seed, output_dir=args.out, overrides=args.overrides)
        threads = args.threads if args.threads is not None else default_threads()
        if threads < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {threads}")
        output_dir = prepare_output(config)

        if args.command == "kernel":
            return run_kernel(config, output_dir)
        if args.command == "sample-noise":
            return run_sample_noise(config, output_dir, threads, args.max_lag, args.paths)
        if args.command == "classical":
            return run_classical(config, output_dir, threads, args.noise_cache, args.trajectories)
        if args.command == "kubo":
            return run_kubo(config, output_dir, threads, args.noise_cache, args.runs)
        if args.command == "commutator":
            return run_commutator(config, output_dir, args.refine)
        if args.command == "verify":
            return run_verify(config, output_dir, threads, args.only)

    except (ConfigurationError, InvalidSpecError, UnsupportedSystemError) as e:
        logger.error(f"Error: {e}")
        return EXIT_INVALID
    except (IntegrationOverflowError, CirculantEmbeddingError, UnresolvedModeGridError) as e:
        logger.error(f"Numerical alarm: {e}")
        return EXIT_NUMERICAL

    return EXIT_OK
