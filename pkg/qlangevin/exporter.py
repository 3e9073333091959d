"""Export kernels, noise paths, trajectories and traces to CSV (and NPZ).

Every float is written with 17 significant digits so that a CSV value parses
back to the identical double.
"""

import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from qlangevin.bath_kernel import KernelGrid
from qlangevin.classical_dynamics import MomentsReport, Trajectory
from qlangevin.heisenberg_commutator import CommutatorTrace, RefinementRow
from qlangevin.kubo_solver import EnsembleAverage, KuboRun, OperatorSet
from qlangevin.noise_sampler import CovarianceEstimate, NoisePath
from qlangevin.utils import format_float

logger = logging.getLogger(__name__)


def format_csv_row(values: Iterable[object]) -> str:
    """Join one CSV row, formatting floats losslessly.

    Args:
        values: Cells; floats (and numpy floats) get 17 significant digits,
            everything else is written with str()

    Returns:
        Comma-separated line without newline
    """
    cells = []
    for value in values:
        if isinstance(value, (float, np.floating)):
            cells.append(format_float(value))
        else:
            cells.append(str(value))
    return ",".join(cells)


def _write_rows(output_path: str | Path, header: str, rows: Iterable[Iterable[object]], comments: Sequence[str] = ()) -> int:
    output_path = Path(output_path)
    count = 0
    with open(output_path, "w", encoding="utf-8") as f:
        for comment in comments:
            f.write(f"# {comment}\n")
        f.write(header + "\n")
        for row in rows:
            f.write(format_csv_row(row) + "\n")
            count += 1
    logger.debug(f"Wrote {count} rows to {output_path}")
    return count


def export_kernel(grid: KernelGrid, output_path: str | Path) -> int:
    """Write `lag,K_T,A` rows. Returns the number of rows."""
    rows = zip(grid.lags, grid.values, grid.antisymmetric, strict=True)
    return _write_rows(output_path, "lag,K_T,A", rows)


def export_noise_path(path: NoisePath, output_path: str | Path) -> int:
    """Write one path as `t,eta` preceded by its seed and index."""
    comments = [f"seed={path.seed}, index={path.realization_index}"]
    return _write_rows(output_path, "t,eta", zip(path.times, path.values, strict=True), comments)


def export_covariance(estimate: CovarianceEstimate, kernel: np.ndarray, output_path: str | Path) -> int:
    """Write the empirical covariance next to the tabulated kernel.

    Columns: `lag,K_T,empirical,standard_error,z_score`, where z_score is
    (empirical - K_T)/standard_error (0 when the error is 0).
    """
    kernel = np.asarray(kernel)[: len(estimate.mean)]
    error = estimate.standard_error
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(error > 0, (estimate.mean - kernel) / np.where(error > 0, error, 1.0), 0.0)
    rows = zip(estimate.lags, kernel, estimate.mean, error, z, strict=True)
    return _write_rows(output_path, "lag,K_T,empirical,standard_error,z_score", rows)


def export_trajectory(trajectory: Trajectory, output_path: str | Path) -> int:
    """Write `t,x,p` rows of one classical trajectory."""
    comments = [f"index={trajectory.realization_index}"]
    rows = zip(trajectory.times, trajectory.x, trajectory.p, strict=True)
    return _write_rows(output_path, "t,x,p", rows, comments)


def export_moments(report: MomentsReport, output_path: str | Path) -> int:
    """Write time-resolved ensemble moments with standard errors.

    The stationary averages after burn-in go into leading comment lines.
    """
    comments = [f"burn_in={report.burn_in}"] + [
        f"stationary {name}={format_float(mean)} se={format_float(se)}"
        for name, (mean, se) in report.stationary.items()
    ]
    rows = zip(
        report.times,
        report.x.mean, report.x.standard_error,
        report.p.mean, report.p.standard_error,
        report.x2.mean, report.x2.standard_error,
        report.p2.mean, report.p2.standard_error,
        strict=True,
    )
    header = "t,mean_x,se_x,mean_p,se_p,mean_x2,se_x2,mean_p2,se_p2"
    return _write_rows(output_path, header, rows, comments)


def export_kubo_run(run: KuboRun, ops: OperatorSet, output_path: str | Path) -> int:
    """Write per-time observables and monitors of one noisy evolution."""
    x = np.real(run.expectation(ops.X))
    p = np.real(run.expectation(ops.P))
    x2 = np.real(run.expectation(ops.X @ ops.X))
    p2 = np.real(run.expectation(ops.P @ ops.P))
    rows = zip(
        run.times, x, p, x2, p2,
        np.real(run.traces), run.purities, run.min_eigenvalues, run.leakage,
        strict=True,
    )
    header = "t,re_mean_x,re_mean_p,mean_x2,mean_p2,trace,purity,min_eig,leak"
    return _write_rows(output_path, header, rows, [f"index={run.realization_index}"])


def export_kubo_ensemble(average: EnsembleAverage, output_path: str | Path) -> int:
    """Write noise-averaged observables with their standard errors.

    Expects the x, p, x2 and p2 observables of standard_observables().
    """
    states = average.states
    traces = np.real(np.einsum("tii->t", states))
    purities = np.real(np.einsum("tij,tji->t", states, states))
    hermitian = 0.5 * (states + np.conj(np.swapaxes(states, 1, 2)))
    min_eig = np.linalg.eigvalsh(hermitian)[:, 0]
    obs = average.observables
    rows = zip(
        average.times,
        obs["x"].mean, obs["x"].standard_error,
        obs["p"].mean, obs["p"].standard_error,
        obs["x2"].mean, obs["x2"].standard_error,
        obs["p2"].mean, obs["p2"].standard_error,
        traces, purities, min_eig,
        strict=True,
    )
    header = "t,mean_x,se_x,mean_p,se_p,mean_x2,se_x2,mean_p2,se_p2,trace,purity,min_eig"
    return _write_rows(output_path, header, rows, [f"runs={average.n_runs}"])


def export_commutator(traces: Sequence[CommutatorTrace], output_path: str | Path) -> int:
    """Write `t,re_C,im_C,algebra` rows for one or more traces."""
    rows = (
        (t, float(np.real(c)), float(np.imag(c)), trace.algebra.value)
        for trace in traces
        for t, c in zip(trace.times, trace.values, strict=True)
    )
    return _write_rows(output_path, "t,re_C,im_C,algebra", rows)


def export_refinement(rows: Sequence[RefinementRow], output_path: str | Path) -> int:
    """Write the mode/cutoff refinement table."""
    cells = ((r.n_modes, r.cutoff_frequency, r.sup_deviation, r.change) for r in rows)
    return _write_rows(output_path, "n_modes,cutoff_frequency,sup_deviation,change", cells)


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV written by this module (comment lines skipped).

    Returns:
        Tuple of (column names, 2-D float array)
    """
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    header = lines[0].strip().split(",")
    data = np.array([[float(cell) for cell in line.strip().split(",")] for line in lines[1:] if line.strip()])
    return header, data.reshape(-1, len(header))


def save_noise_ensemble(paths: Sequence[NoisePath], output_path: str | Path) -> Path:
    """Cache an ensemble of paths in a compressed .npz (bit-exact)."""
    output_path = Path(output_path)
    if output_path.suffix != ".npz":
        output_path = output_path.with_suffix(".npz")
    np.savez_compressed(
        output_path,
        dt=np.array([p.dt for p in paths]),
        values=np.stack([p.values for p in paths]),
        seeds=np.array([p.seed for p in paths], dtype=np.uint64),
        indices=np.array([p.realization_index for p in paths], dtype=np.int64),
    )
    return output_path


def load_noise_ensemble(input_path: str | Path) -> list[NoisePath]:
    """Load paths written by save_noise_ensemble."""
    with np.load(input_path) as data:
        return [
            NoisePath(dt=float(dt), values=values.copy(), seed=int(seed), realization_index=int(index))
            for dt, values, seed, index in zip(data["dt"], data["values"], data["seeds"], data["indices"], strict=True)
        ]
