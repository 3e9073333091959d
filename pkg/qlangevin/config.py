"""Run configuration: flat `key = value` files, overrides and validation."""

import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from qlangevin.bath_kernel import BathSpec, Cutoff, DrudeCutoff, HardCutoff
from qlangevin.classical_dynamics import POTENTIALS, DoubleWell, Free, Harmonic, Quartic, SystemSpec
from qlangevin.kubo_solver import InitialState
from qlangevin.noise_sampler import EnsembleSpec, SamplingMethod
from qlangevin.utils import InvalidSpecError, QLangevinError, require_positive

logger = logging.getLogger(__name__)

# Environment variable giving the default worker count
THREADS_ENV = "QLANGEVIN_THREADS"

CUTOFFS = ("hard", "drude")
MODE_GRIDS = ("uniform", "quadrature")


class ConfigurationError(QLangevinError):
    """Raised when configuration is missing, malformed or invalid."""

    pass


@dataclass(frozen=True)
class BathConfig:
    gamma: float = 1.0
    temperature: float = 1.0
    hbar: float = 1.0
    boltzmann: float = 1.0
    cutoff: str = "hard"
    cutoff_frequency: float = 50.0
    quadrature_nodes: int = 2048


@dataclass(frozen=True)
class SystemConfig:
    mass: float = 1.0
    potential: str = "harmonic"
    omega0: float = 1.0
    a: float = 0.5
    b: float = 0.1
    barrier: float = 1.0
    x0: float = 1.0


@dataclass(frozen=True)
class GridConfig:
    dt: float = 0.01
    n: int = 4096


@dataclass(frozen=True)
class EnsembleConfig:
    master_seed: int = 0
    n_realizations: int = 100
    method: str = "circulant"
    clip_budget: float = 1e-6
    n_modes: int = 1024
    max_embedding_factor: int = 64


@dataclass(frozen=True)
class SolverConfig:
    dim: int = 40
    basis_omega: float = 1.0
    initial_state: str = "coherent"
    stride: int = 10


@dataclass(frozen=True)
class InitialConfig:
    x0: float = 0.0
    p0: float = 0.0


@dataclass(frozen=True)
class CommutatorConfig:
    n_modes: int = 20000
    t_max: float = 5.0
    n_times: int = 101
    mode_grid: str = "uniform"
    tolerance: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    """Complete, validated configuration of one CLI invocation."""

    bath: BathConfig = field(default_factory=BathConfig)
    system: SystemConfig = field(default_factory=SystemConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    commutator: CommutatorConfig = field(default_factory=CommutatorConfig)
    output_dir: str = "runs/default"

    def bath_spec(self) -> BathSpec:
        b = self.bath
        require_positive("bath.cutoff_frequency", b.cutoff_frequency)
        cutoff: Cutoff = HardCutoff(b.cutoff_frequency) if b.cutoff == "hard" else DrudeCutoff(b.cutoff_frequency)
        return BathSpec(
            gamma=b.gamma,
            temperature=b.temperature,
            cutoff=cutoff,
            hbar=b.hbar,
            boltzmann=b.boltzmann,
            quadrature_nodes=b.quadrature_nodes,
        )

    def system_spec(self) -> SystemSpec:
        s = self.system
        if s.potential == "free":
            potential: Free | Harmonic | Quartic | DoubleWell = Free()
        elif s.potential == "harmonic":
            potential = Harmonic(s.omega0)
        elif s.potential == "quartic":
            potential = Quartic(s.a, s.b)
        else:
            potential = DoubleWell(s.barrier, s.x0)
        return SystemSpec(mass=s.mass, potential=potential)

    def ensemble_spec(self) -> EnsembleSpec:
        e = self.ensemble
        return EnsembleSpec(
            master_seed=e.master_seed,
            n_realizations=e.n_realizations,
            method=SamplingMethod(e.method),
            clip_budget=e.clip_budget,
            max_embedding_factor=e.max_embedding_factor,
            n_modes=e.n_modes,
        )

    @property
    def initial_state(self) -> InitialState:
        return InitialState(self.solver.initial_state)


_SECTIONS = ("bath", "system", "grid", "ensemble", "solver", "initial", "commutator")

_CHOICES: dict[str, tuple[str, ...]] = {
    "bath.cutoff": CUTOFFS,
    "system.potential": tuple(POTENTIALS),
    "ensemble.method": tuple(m.value for m in SamplingMethod),
    "solver.initial_state": tuple(s.value for s in InitialState),
    "commutator.mode_grid": MODE_GRIDS,
}


def known_keys() -> list[str]:
    """All dotted keys accepted in config files and overrides."""
    defaults = RunConfig()
    keys = []
    for section in _SECTIONS:
        keys.extend(f"{section}.{f.name}" for f in fields(getattr(defaults, section)))
    keys.append("output_dir")
    return keys


def _coerce(key: str, text: str, default: Any) -> Any:
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text, 0)
        if isinstance(default, float):
            return float(text)
    except ValueError as e:
        raise ConfigurationError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from e
    if key in _CHOICES and text not in _CHOICES[key]:
        raise ConfigurationError(f"{key}: must be one of {', '.join(_CHOICES[key])}, got {text!r}")
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse flat `key = value` lines.

    Blank lines are ignored and `#` starts a comment.

    Args:
        text: Config file contents
        source: Name used in error messages

    Returns:
        Dict of raw string values keyed by dotted name

    Raises:
        ConfigurationError: On a malformed line or duplicate key
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{lineno}: missing key")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def parse_override(text: str) -> tuple[str, str]:
    """Split a `--set key=value` argument."""
    if "=" not in text:
        raise ConfigurationError(f"override must look like key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def apply_values(config: RunConfig, values: dict[str, str]) -> RunConfig:
    """Return a copy of config with raw string values applied.

    Raises:
        ConfigurationError: On unknown keys or unparsable values
    """
    sections = {name: getattr(config, name) for name in _SECTIONS}
    output_dir = config.output_dir
    for key, text in values.items():
        if key == "output_dir":
            output_dir = text
            continue
        section, _, name = key.partition(".")
        if section not in sections or name not in {f.name for f in fields(sections[section])}:
            raise ConfigurationError(f"unknown config key {key!r}")
        current = getattr(sections[section], name)
        sections[section] = replace(sections[section], **{name: _coerce(key, text, current)})
    return RunConfig(output_dir=output_dir, **sections)


def validate(config: RunConfig) -> RunConfig:
    """Check every nested invariant by building the domain objects.

    Raises:
        ConfigurationError: Naming the offending field path
    """
    for key, choices in _CHOICES.items():
        section, _, name = key.partition(".")
        value = getattr(getattr(config, section), name)
        if value not in choices:
            raise ConfigurationError(f"{key}: must be one of {', '.join(choices)}, got {value!r}")
    try:
        config.bath_spec()
        config.system_spec()
        config.ensemble_spec()
        require_positive("grid.dt", config.grid.dt)
        if config.grid.n < 2:
            raise InvalidSpecError(f"grid.n must be >= 2, got {config.grid.n}")
        if config.solver.dim < 4:
            raise InvalidSpecError(f"solver.dim must be >= 4, got {config.solver.dim}")
        require_positive("solver.basis_omega", config.solver.basis_omega)
        if config.solver.stride < 1:
            raise InvalidSpecError(f"solver.stride must be >= 1, got {config.solver.stride}")
        require_positive("commutator.t_max", config.commutator.t_max)
        require_positive("commutator.tolerance", config.commutator.tolerance)
        if config.commutator.n_modes < 1 or config.commutator.n_times < 2:
            raise InvalidSpecError("commutator.n_modes must be >= 1 and commutator.n_times >= 2")
    except InvalidSpecError as e:
        raise ConfigurationError(str(e)) from e
    if not config.output_dir:
        raise ConfigurationError("output_dir must not be empty")
    return config


def load_config(
    path: str | Path | None = None,
    seed: int | None = None,
    output_dir: str | None = None,
    overrides: list[str] | None = None,
) -> RunConfig:
    """Resolve a RunConfig from defaults, a file, flags and overrides.

    Precedence: defaults < file < --seed/--out < --set key=value.

    Raises:
        ConfigurationError: If anything is missing or invalid
    """
    config = RunConfig()
    if path is not None:
        config_path = Path(path).expanduser()
        try:
            text = config_path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError(f"cannot read config file {config_path}: {e}") from e
        config = apply_values(config, parse_config_text(text, str(config_path)))
        logger.debug(f"Loaded config from {config_path}")

    flags: dict[str, str] = {}
    if seed is not None:
        flags["ensemble.master_seed"] = str(seed)
    if output_dir is not None:
        flags["output_dir"] = output_dir
    config = apply_values(config, flags)

    if overrides:
        config = apply_values(config, dict(parse_override(item) for item in overrides))
    return validate(config)


def format_config(config: RunConfig) -> str:
    """Render a config in the file format, one `key = value` per line."""
    lines = []
    for section in _SECTIONS:
        values = getattr(config, section)
        for f in fields(values):
            value = getattr(values, f.name)
            text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{section}.{f.name} = {text}")
    lines.append(f"output_dir = {config.output_dir}")
    return "\n".join(lines) + "\n"


def write_resolved_config(config: RunConfig, output_dir: str | Path) -> Path:
    """Echo the resolved configuration to <output_dir>/resolved_config.txt."""
    path = Path(output_dir) / "resolved_config.txt"
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_config(config))
    return path


def default_threads() -> int:
    """Worker count from QLANGEVIN_THREADS, or 1.

    Raises:
        ConfigurationError: If the variable is set but not a positive integer
    """
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError as e:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from e
    if threads < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return threads
