"""Utility functions shared by the qlangevin modules."""

import math

import numpy as np

# Digits needed for a lossless float -> text -> float round trip
FLOAT_DIGITS = 17


class QLangevinError(Exception):
    """Base class for all errors raised by qlangevin."""

    pass


class InvalidSpecError(QLangevinError, ValueError):
    """Raised when a spec, grid or operator violates its invariants."""

    pass


class HeterogeneousGridError(QLangevinError, ValueError):
    """Raised when a collection mixes different time steps or lengths."""

    pass


def format_float(value: float) -> str:
    """Format a float with enough digits to round-trip exactly.

    Args:
        value: Number to format

    Returns:
        Text with 17 significant digits (``repr``-style for inf/nan)
    """
    return f"{float(value):.{FLOAT_DIGITS}g}"


def require_positive(name: str, value: float) -> None:
    """Raise InvalidSpecError unless value is finite and > 0."""
    if not math.isfinite(value) or value <= 0:
        raise InvalidSpecError(f"{name} must be finite and > 0, got {value!r}")


def require_nonnegative(name: str, value: float) -> None:
    """Raise InvalidSpecError unless value is finite and >= 0."""
    if not math.isfinite(value) or value < 0:
        raise InvalidSpecError(f"{name} must be finite and >= 0, got {value!r}")


def require_finite(name: str, value: float) -> None:
    """Raise InvalidSpecError unless value is finite."""
    if not math.isfinite(value):
        raise InvalidSpecError(f"{name} must be finite, got {value!r}")


def realization_rng(master_seed: int, index: int) -> np.random.Generator:
    """Get the random stream of one realization.

    The stream depends only on (master_seed, index): the seed sequence is
    spawned at ``spawn_key=(index,)`` and drives a counter-based Philox bit
    generator, so realizations can be generated in any order or in parallel.

    Args:
        master_seed: Non-negative 64-bit ensemble seed
        index: Realization index

    Returns:
        Independent numpy Generator
    """
    if master_seed < 0 or master_seed >= 2**64:
        raise InvalidSpecError(f"master_seed must be an unsigned 64-bit integer, got {master_seed}")
    if index < 0:
        raise InvalidSpecError(f"realization index must be >= 0, got {index}")
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


def mean_and_standard_error(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Compute the sample mean and its standard error along an axis.

    Args:
        samples: Array of independent samples along ``axis``
        axis: Sample axis

    Returns:
        Tuple of (mean, standard_error); the error is 0 for a single sample
    """
    samples = np.asarray(samples)
    count = samples.shape[axis]
    mean = samples.mean(axis=axis)
    if count < 2:
        return mean, np.zeros_like(np.real(mean))
    std = samples.std(axis=axis, ddof=1)
    return mean, std / math.sqrt(count)


def check_same_grid(dts: list[float], lengths: list[int], what: str) -> None:
    """Ensure every member of a collection shares the same dt and length.

    Args:
        dts: Time step of each member
        lengths: Length of each member
        what: Name of the collection for the error message

    Raises:
        HeterogeneousGridError: If any dt or length differs from the first
    """
    if not dts:
        return
    if any(dt != dts[0] for dt in dts) or any(n != lengths[0] for n in lengths):
        raise HeterogeneousGridError(
            f"{what} must share one time grid, got dt values {sorted(set(dts))} "
            f"and lengths {sorted(set(lengths))}"
        )
