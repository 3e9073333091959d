"""Tests for run configuration.

Focus on:
- Parsing of flat key = value files
- Precedence of defaults, file, flags and overrides
- Validation errors naming the offending field
- Resolved-config echo
"""

import pytest

from qlangevin.bath_kernel import DrudeCutoff, HardCutoff
from qlangevin.classical_dynamics import DoubleWell, Quartic
from qlangevin.config import (
    THREADS_ENV,
    ConfigurationError,
    RunConfig,
    apply_values,
    default_threads,
    format_config,
    known_keys,
    load_config,
    parse_config_text,
    parse_override,
    validate,
    write_resolved_config,
)
from qlangevin.kubo_solver import InitialState
from qlangevin.noise_sampler import SamplingMethod


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text(
        "# weak coupling\n"
        "bath.gamma = 0.05\n"
        "bath.cutoff = drude   # smooth\n"
        "\n"
        "grid.n = 4001\n"
        "ensemble.master_seed = 17\n"
        "solver.initial_state = thermal\n",
        encoding="utf-8",
    )
    return path


class TestParseConfigText:
    """Test the file format."""

    def test_comments_and_blanks(self):
        """Comments and blank lines are skipped; values are stripped."""
        values = parse_config_text("# header\n\n bath.gamma = 2.5 # trailing\n")
        assert values == {"bath.gamma": "2.5"}

    def test_missing_equals(self):
        """Lines without '=' report their position."""
        with pytest.raises(ConfigurationError, match="run.conf:2"):
            parse_config_text("bath.gamma = 1\nbath.temperature 2\n", "run.conf")

    def test_duplicate_key(self):
        """A key may appear once."""
        with pytest.raises(ConfigurationError, match="duplicate"):
            parse_config_text("grid.n = 10\ngrid.n = 20\n")

    def test_missing_key(self):
        """'= value' has no key."""
        with pytest.raises(ConfigurationError, match="missing key"):
            parse_config_text(" = 3\n")

    def test_override(self):
        """--set values split at the first '='."""
        assert parse_override("output_dir=runs/a=b") == ("output_dir", "runs/a=b")
        with pytest.raises(ConfigurationError):
            parse_override("bath.gamma")


class TestApplyValues:
    """Test typed application of raw values."""

    def test_types(self):
        """Values take the type of their defaults."""
        config = apply_values(RunConfig(), {"grid.n": "128", "bath.gamma": "0.25", "ensemble.master_seed": "0x10"})
        assert config.grid.n == 128
        assert config.bath.gamma == 0.25
        assert config.ensemble.master_seed == 16

    def test_unknown_key(self):
        """Unknown keys are rejected."""
        with pytest.raises(ConfigurationError, match="unknown config key"):
            apply_values(RunConfig(), {"bath.viscosity": "1"})
        with pytest.raises(ConfigurationError, match="unknown config key"):
            apply_values(RunConfig(), {"gamma": "1"})

    def test_unparsable(self):
        """A non-numeric value for a numeric key names the key."""
        with pytest.raises(ConfigurationError, match="grid.n"):
            apply_values(RunConfig(), {"grid.n": "many"})

    def test_choices(self):
        """Enumerated keys accept only their choices."""
        with pytest.raises(ConfigurationError, match="bath.cutoff"):
            apply_values(RunConfig(), {"bath.cutoff": "soft"})
        with pytest.raises(ConfigurationError, match="system.potential"):
            apply_values(RunConfig(), {"system.potential": "morse"})

    def test_known_keys(self):
        """Every section field plus output_dir."""
        keys = known_keys()
        assert "bath.gamma" in keys and "commutator.mode_grid" in keys and "output_dir" in keys
        assert len(keys) == len(set(keys))


class TestValidate:
    """Test nested validation."""

    def test_defaults_are_valid(self):
        """The default config passes."""
        validate(RunConfig())

    def test_negative_mass_names_field(self):
        """Domain errors keep the field path."""
        config = apply_values(RunConfig(), {"system.mass": "-1"})
        with pytest.raises(ConfigurationError, match="system.mass"):
            validate(config)

    @pytest.mark.parametrize(
        "key, value",
        [
            ("bath.temperature", "0"),
            ("bath.cutoff_frequency", "-5"),
            ("grid.dt", "0"),
            ("grid.n", "1"),
            ("solver.dim", "3"),
            ("solver.stride", "0"),
            ("ensemble.clip_budget", "1.5"),
            ("commutator.n_times", "1"),
        ],
    )
    def test_rejects_invalid(self, key, value):
        """Each invalid field raises ConfigurationError naming it."""
        with pytest.raises(ConfigurationError, match=key.split(".")[1]):
            validate(apply_values(RunConfig(), {key: value}))

    def test_domain_objects(self):
        """Config sections build the domain objects."""
        config = apply_values(
            RunConfig(),
            {"bath.cutoff": "drude", "bath.cutoff_frequency": "5", "system.potential": "quartic", "ensemble.method": "spectral"},
        )
        assert isinstance(config.bath_spec().cutoff, DrudeCutoff)
        assert isinstance(config.system_spec().potential, Quartic)
        assert config.ensemble_spec().method is SamplingMethod.SPECTRAL
        well = apply_values(RunConfig(), {"system.potential": "double_well", "system.x0": "2"})
        assert well.system_spec().potential == DoubleWell(1.0, 2.0)


class TestLoadConfig:
    """Test resolution order."""

    def test_defaults(self):
        """Without inputs the defaults are returned."""
        config = load_config()
        assert config == RunConfig()
        assert isinstance(config.bath_spec().cutoff, HardCutoff)

    def test_file(self, config_file):
        """File values replace defaults."""
        config = load_config(config_file)
        assert config.bath.gamma == 0.05
        assert config.bath.cutoff == "drude"
        assert config.grid.n == 4001
        assert config.initial_state is InitialState.THERMAL

    def test_precedence(self, config_file):
        """defaults < file < flags < --set."""
        config = load_config(config_file, seed=99, output_dir="runs/x", overrides=["ensemble.master_seed=5"])
        assert config.ensemble.master_seed == 5
        assert config.output_dir == "runs/x"
        assert load_config(config_file, seed=99).ensemble.master_seed == 99

    def test_missing_file(self, tmp_path):
        """An unreadable file is a configuration error."""
        with pytest.raises(ConfigurationError, match="cannot read"):
            load_config(tmp_path / "absent.conf")

    def test_invalid_override(self):
        """Overrides are validated like file values."""
        with pytest.raises(ConfigurationError, match="system.mass"):
            load_config(overrides=["system.mass=-2"])


class TestResolvedConfig:
    """Test the resolved-config echo."""

    def test_round_trip(self, tmp_path, config_file):
        """The echoed file loads back to the same config."""
        config = load_config(config_file, overrides=["bath.temperature=0.1", "ensemble.clip_budget=1e-3"])
        path = write_resolved_config(config, tmp_path)
        assert path.name == "resolved_config.txt"
        assert load_config(path) == config

    def test_float_text(self):
        """Floats are written losslessly."""
        text = format_config(apply_values(RunConfig(), {"bath.gamma": "0.1"}))
        assert "bath.gamma = 0.1\n" in text
        assert text.endswith("output_dir = runs/default\n")


class TestDefaultThreads:
    """Test the worker-count environment variable."""

    def test_unset(self, monkeypatch):
        """Unset means one thread."""
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert default_threads() == 1

    def test_set(self, monkeypatch):
        """A positive integer is used."""
        monkeypatch.setenv(THREADS_ENV, "6")
        assert default_threads() == 6

    @pytest.mark.parametrize("raw", ["0", "-2", "four"])
    def test_invalid(self, monkeypatch, raw):
        """Anything else is a configuration error."""
        monkeypatch.setenv(THREADS_ENV, raw)
        with pytest.raises(ConfigurationError, match=THREADS_ENV):
            default_threads()
