"""Tests for the command-line interface.

Focus on:
- Files written by each subcommand
- Exit codes for invalid input and numerical alarms
- Reproducibility of written results
"""

import numpy as np
import pytest

from qlangevin.exporter import read_csv
from qlangevin.main import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, create_parser, main


# Small smooth-bath problem shared by the ensemble subcommands
SMALL = [
    "--set", "bath.gamma=0.05",
    "--set", "bath.cutoff=drude",
    "--set", "bath.cutoff_frequency=5",
    "--set", "grid.dt=0.01",
    "--set", "grid.n=201",
    "--set", "ensemble.n_realizations=6",
    "--set", "ensemble.clip_budget=1e-3",
    "--set", "solver.dim=16",
    "--set", "initial.x0=0.5",
]


def run(tmp_path, *args: str) -> int:
    command, *rest = args
    return main([command, "--out", str(tmp_path), *rest])


class TestParser:
    """Test argument parsing."""

    def test_common_options(self):
        """Every subcommand takes the shared options."""
        args = create_parser().parse_args(["kubo", "--seed", "3", "--threads", "2", "--set", "a=b", "--set", "c=d"])
        assert args.seed == 3 and args.threads == 2
        assert args.overrides == ["a=b", "c=d"]

    def test_no_command(self, capsys):
        """Without a subcommand help is printed and the exit code is 1."""
        assert main([]) == EXIT_INVALID
        assert "usage" in capsys.readouterr().out


class TestKernel:
    """Test the kernel subcommand."""

    def test_writes_kernel(self, tmp_path):
        """kernel.csv and the resolved config are written."""
        assert run(tmp_path, "kernel", "--set", "grid.n=32") == EXIT_OK
        header, data = read_csv(tmp_path / "kernel.csv")
        assert header == ["lag", "K_T", "A"]
        assert data.shape == (32, 3)
        assert (tmp_path / "resolved_config.txt").exists()

    def test_zero_gamma(self, tmp_path):
        """gamma = 0 gives an all-zero kernel."""
        assert run(tmp_path, "kernel", "--set", "bath.gamma=0", "--set", "grid.n=16") == EXIT_OK
        _, data = read_csv(tmp_path / "kernel.csv")
        assert np.all(data[:, 1:] == 0.0)

    def test_negative_mass(self, tmp_path):
        """Invalid configuration exits 1 before writing results."""
        assert run(tmp_path, "kernel", "--set", "system.mass=-1") == EXIT_INVALID
        assert not (tmp_path / "kernel.csv").exists()

    def test_config_file(self, tmp_path):
        """Values come from --config."""
        conf = tmp_path / "run.conf"
        conf.write_text("grid.n = 8\nbath.temperature = 3\n", encoding="utf-8")
        assert run(tmp_path, "kernel", "--config", str(conf)) == EXIT_OK
        _, data = read_csv(tmp_path / "kernel.csv")
        assert len(data) == 8

    def test_unknown_key(self, tmp_path):
        """Unknown overrides exit 1."""
        assert run(tmp_path, "kernel", "--set", "bath.colour=red") == EXIT_INVALID

    def test_bad_threads(self, tmp_path):
        """--threads must be positive."""
        assert run(tmp_path, "kernel", "--threads", "0") == EXIT_INVALID


class TestEnsembleCommands:
    """Test sample-noise, classical and kubo."""

    def test_sample_noise(self, tmp_path):
        """Path files, the cache and the covariance report."""
        assert run(tmp_path, "sample-noise", *SMALL, "--paths", "2", "--max-lag", "5") == EXIT_OK
        assert sorted(p.name for p in (tmp_path / "paths").iterdir()) == ["noise_00000.csv", "noise_00001.csv"]
        assert (tmp_path / "noise.npz").exists()
        header, data = read_csv(tmp_path / "covariance.csv")
        assert header[-1] == "z_score"
        assert len(data) == 6

    def test_same_seed_same_files(self, tmp_path):
        """Two runs with one seed write identical path files, threaded or not."""
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(a, "sample-noise", *SMALL, "--seed", "9") == EXIT_OK
        assert run(b, "sample-noise", *SMALL, "--seed", "9", "--threads", "3") == EXIT_OK
        for name in ("noise_00000.csv", "noise_00005.csv"):
            assert (a / "paths" / name).read_text() == (b / "paths" / name).read_text()

    def test_classical_from_cache(self, tmp_path):
        """classical reuses a noise cache and writes moments."""
        assert run(tmp_path, "sample-noise", *SMALL) == EXIT_OK
        out = tmp_path / "classical"
        code = run(out, "classical", *SMALL, "--noise-cache", str(tmp_path / "noise.npz"), "--trajectories", "1")
        assert code == EXIT_OK
        assert [p.name for p in (out / "trajectories").iterdir()] == ["trajectory_00000.csv"]
        header, data = read_csv(out / "moments.csv")
        assert header[0] == "t" and len(data) == 201

    def test_kubo(self, tmp_path):
        """kubo writes per-run files and the ensemble average."""
        assert run(tmp_path, "kubo", *SMALL, "--runs", "2") == EXIT_OK
        assert len(list((tmp_path / "kubo_runs").iterdir())) == 2
        header, data = read_csv(tmp_path / "kubo_ensemble.csv")
        assert header[0] == "t" and len(data) == 21
        assert np.allclose(data[:, header.index("trace")], 1.0)

    def test_kubo_leakage(self, tmp_path):
        """A state crowding the basis edge is a numerical alarm."""
        code = run(tmp_path, "kubo", *SMALL, "--set", "solver.dim=6", "--set", "initial.x0=3")
        assert code == EXIT_NUMERICAL

    def test_clip_budget_exceeded(self, tmp_path):
        """A hard cutoff under a zero clip budget cannot be embedded."""
        code = run(
            tmp_path, "sample-noise",
            "--set", "bath.cutoff=hard", "--set", "bath.cutoff_frequency=20",
            "--set", "grid.dt=0.05", "--set", "grid.n=128",
            "--set", "ensemble.clip_budget=0", "--set", "ensemble.max_embedding_factor=1",
            "--set", "ensemble.n_realizations=2",
        )
        assert code == EXIT_NUMERICAL


class TestCommutator:
    """Test the commutator subcommand."""

    COMMON = [
        "--set", "bath.cutoff_frequency=20",
        "--set", "commutator.n_modes=2000",
        "--set", "commutator.t_max=2",
        "--set", "commutator.n_times=21",
    ]

    def test_writes_traces(self, tmp_path):
        """Both algebras and the refinement table are written."""
        assert run(tmp_path, "commutator", *self.COMMON, "--refine", "1") == EXIT_OK
        lines = (tmp_path / "commutator.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t,re_C,im_C,algebra"
        assert sum(line.endswith(",quantum") for line in lines) == 21
        assert sum(line.endswith(",commutative") for line in lines) == 21
        header, data = read_csv(tmp_path / "refinement.csv")
        assert data[:, 0].tolist() == [2000, 4000]

    def test_quartic_unsupported(self, tmp_path):
        """The operator solution needs a linear system."""
        assert run(tmp_path, "commutator", *self.COMMON, "--set", "system.potential=quartic") == EXIT_INVALID

    def test_unresolved_grid(self, tmp_path):
        """Too few modes for the time span is a numerical alarm."""
        assert run(tmp_path, "commutator", *self.COMMON, "--set", "commutator.n_modes=10") == EXIT_NUMERICAL


class TestVerify:
    """Test the verify subcommand."""

    def test_selected_checks(self, tmp_path):
        """--only runs the named checks and writes the summary."""
        code = run(tmp_path, "verify", "--only", "classical_limit", "--only", "reproducibility")
        assert code == EXIT_OK
        lines = (tmp_path / "verify_summary.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "check,passed,measured,tolerance,detail"
        assert [line.split(",")[0] for line in lines[1:]] == ["classical_limit", "reproducibility"]

    def test_unknown_check(self, tmp_path):
        """Unknown check names exit 1."""
        assert run(tmp_path, "verify", "--only", "nonsense") == EXIT_INVALID

    @pytest.mark.slow
    def test_full_suite(self, tmp_path):
        """Every acceptance check passes with the default seed."""
        assert run(tmp_path, "verify", "--threads", "4") == EXIT_OK
