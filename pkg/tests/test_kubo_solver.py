"""Tests for the stochastic Liouville solver.

Focus on:
- Ladder-operator construction and truncation edge
- Initial states and expectation values
- Trace, Hermiticity and purity during evolution
- Per-realization agreement with the classical integrator (harmonic case)
- Ensemble averaging and leakage monitoring
"""

import math

import numpy as np
import pytest

from qlangevin.bath_kernel import BathSpec, HardCutoff
from qlangevin.classical_dynamics import (
    Free,
    Harmonic,
    IntegrationOverflowError,
    Quartic,
    SystemSpec,
    integrate,
    integrate_ensemble,
)
from qlangevin.kubo_solver import (
    DensityMatrix,
    InitialState,
    KuboRun,
    OperatorLabel,
    OperatorMatrix,
    average_ensemble,
    build_operators,
    coherent_state,
    evolve_ensemble,
    evolve_noisy,
    ground_state,
    initial_state,
    observable,
    standard_observables,
    thermal_state,
)
from qlangevin.noise_sampler import EnsembleSpec, NoisePath, sample_ensemble, sample_path
from qlangevin.utils import HeterogeneousGridError, InvalidSpecError, mean_and_standard_error


def zero_path(dt: float, n: int) -> NoisePath:
    return NoisePath(dt=dt, values=np.zeros(n), seed=0, realization_index=0)


@pytest.fixture
def oscillator():
    return SystemSpec(mass=1.0, potential=Harmonic(1.0))


@pytest.fixture
def ops(oscillator):
    return build_operators(oscillator, basis_omega=1.0, dim=24)


@pytest.fixture
def bath():
    """Weakly damped bath so noisy states stay inside the basis."""
    return BathSpec(gamma=0.05, temperature=1.0, cutoff=HardCutoff(20.0))


@pytest.fixture
def closed():
    return BathSpec(gamma=0.0, temperature=1.0)


class TestBuildOperators:
    """Test X, P and H_S."""

    @pytest.mark.parametrize("hbar", [1.0, 2.5])
    def test_canonical_commutator(self, oscillator, hbar):
        """[X, P] = i*hbar on the leading (dim-2) block."""
        ops = build_operators(oscillator, 1.3, 16, hbar)
        comm = ops.X.entries @ ops.P.entries - ops.P.entries @ ops.X.entries
        block = comm[:14, :14]
        assert np.max(np.abs(block - 1j * hbar * np.eye(14))) <= 1e-12

    def test_hermitian(self, ops):
        """X, P and H_S are Hermitian."""
        for op in (ops.X, ops.P, ops.H_S):
            assert op.hermiticity_error() <= 1e-14

    def test_labels(self, ops):
        """Operators carry their labels."""
        assert ops.X.label is OperatorLabel.X
        assert ops.P.label is OperatorLabel.P
        assert ops.H_S.label is OperatorLabel.H_S
        assert ops.dim == 24

    def test_harmonic_in_own_basis(self, ops):
        """omega0 = basis_omega: H_S is diagonal with gaps hbar*omega0."""
        h = ops.H_S.entries[:22, :22]
        assert np.max(np.abs(h - np.diag(np.diag(h)))) <= 1e-12
        assert np.allclose(np.real(np.diag(h)), np.arange(22) + 0.5, atol=1e-12)

    def test_free_particle_matches_oracle(self):
        """H_S = P^2/2m from an independently built P, band-limited to offsets 0 and +-2."""
        m, w, dim = 2.0, 0.7, 12
        ops = build_operators(SystemSpec(mass=m, potential=Free()), w, dim)
        n = np.arange(1, dim)
        lower = np.diag(np.sqrt(n), -1)
        p = 1j * math.sqrt(m * w / 2.0) * (lower - lower.T)
        assert np.max(np.abs(ops.H_S.entries - p @ p / (2 * m))) <= 1e-12
        for offset in (1, 3, 4):
            assert np.all(np.abs(np.diag(ops.H_S.entries, offset)) <= 1e-14)

    def test_quartic_potential(self):
        """Quartic H_S equals P^2/2m + a X^2 + b X^4 as matrix products."""
        system = SystemSpec(mass=1.0, potential=Quartic(0.5, 0.1))
        ops = build_operators(system, 1.0, 10)
        x, p = ops.X.entries, ops.P.entries
        expected = p @ p / 2.0 + 0.5 * x @ x + 0.1 * x @ x @ x @ x
        assert np.max(np.abs(ops.H_S.entries - expected)) <= 1e-12

    def test_dimension_limits(self, oscillator):
        """dim >= 4, and >= 8 for quartic potentials."""
        with pytest.raises(InvalidSpecError, match="solver.dim"):
            build_operators(oscillator, 1.0, 3)
        with pytest.raises(InvalidSpecError, match="solver.dim"):
            build_operators(SystemSpec(mass=1.0, potential=Quartic(0.5, 0.1)), 1.0, 6)

    def test_rejects_bad_basis_frequency(self, oscillator):
        """basis_omega must be positive."""
        with pytest.raises(InvalidSpecError, match="basis_omega"):
            build_operators(oscillator, 0.0, 8)


class TestOperatorArithmetic:
    """Test sums, differences and scalar multiples of operators."""

    def test_symmetrized_product(self, ops):
        """XP + PX is Hermitian and labelled custom."""
        sym = ops.X @ ops.P + ops.P @ ops.X
        assert isinstance(sym, OperatorMatrix)
        assert sym.label is OperatorLabel.CUSTOM
        assert sym.hermiticity_error() <= 1e-12
        assert np.array_equal(sym.entries, ops.X.entries @ ops.P.entries + ops.P.entries @ ops.X.entries)

    def test_commutator_and_scaling(self, ops):
        """[X, P] = i hbar on the leading block, built from operator arithmetic."""
        comm = ops.X @ ops.P - ops.P @ ops.X
        scaled = (-1j / ops.hbar) * comm
        assert np.allclose(scaled.entries[:20, :20], np.eye(20), atol=1e-12)
        assert np.array_equal((comm * 2.0).entries, (2.0 * comm).entries)
        assert np.array_equal((-comm).entries, -comm.entries)


class TestStatesAndObservables:
    """Test initial states and Tr(op*rho)."""

    def test_identity(self, ops):
        """Tr(rho) = 1."""
        identity = OperatorMatrix(np.eye(ops.dim, dtype=complex))
        assert observable(ground_state(ops.dim), identity) == pytest.approx(1.0)

    def test_ground_state_moments(self):
        """<X> = 0 and <X^2> = hbar/(2 m w_b) in the reference ground state."""
        ops = build_operators(SystemSpec(mass=2.0, potential=Harmonic(1.0)), 0.8, 12, hbar=1.5)
        rho = ground_state(12)
        assert observable(rho, ops.X) == pytest.approx(0.0, abs=1e-15)
        assert observable(rho, ops.X @ ops.X).real == pytest.approx(1.5 / (2 * 2.0 * 0.8), rel=1e-12)

    def test_real_for_hermitian(self, ops):
        """Hermitian op and rho give a real mean to 1e-10."""
        rho = coherent_state(ops, 0.7, -0.4)
        assert abs(observable(rho, ops.X @ ops.P + ops.P @ ops.X).imag) <= 1e-10

    def test_dimension_mismatch(self, ops):
        """Mismatched dimensions are rejected."""
        with pytest.raises(InvalidSpecError, match="dim"):
            observable(ground_state(8), ops.X)

    def test_coherent_state_means(self, ops):
        """The displaced ground state has means (x0, p0)."""
        rho = coherent_state(ops, 1.2, -0.5)
        rho.validate()
        assert observable(rho, ops.X).real == pytest.approx(1.2, abs=1e-10)
        assert observable(rho, ops.P).real == pytest.approx(-0.5, abs=1e-10)
        assert rho.purity == pytest.approx(1.0, abs=1e-12)

    def test_thermal_state(self):
        """Gibbs state of the oscillator: <X^2> = (hbar/2mw) coth(hbar w/2kT)."""
        ops = build_operators(SystemSpec(mass=1.0, potential=Harmonic(1.0)), 1.0, 40)
        rho = thermal_state(ops, kT=1.0)
        rho.validate()
        expected = 0.5 / math.tanh(0.5)
        assert observable(rho, ops.X @ ops.X).real == pytest.approx(expected, rel=1e-6)

    def test_initial_state_dispatch(self, ops):
        """initial_state builds each kind."""
        assert initial_state(InitialState.GROUND, ops).entries[0, 0] == 1.0
        coherent = initial_state(InitialState.COHERENT, ops, x0=0.5)
        assert observable(coherent, ops.X).real == pytest.approx(0.5, abs=1e-10)
        thermal = initial_state(InitialState.THERMAL, ops, kT=2.0)
        assert thermal.purity < 1.0

    def test_validate_rejects_bad_trace(self):
        """Trace must be 1."""
        with pytest.raises(InvalidSpecError, match="trace"):
            DensityMatrix(0.5 * np.eye(4, dtype=complex) / 4).validate()

    def test_validate_rejects_non_hermitian(self):
        """Entries must be Hermitian."""
        rho = np.diag([1.0, 0, 0, 0]).astype(complex)
        rho[0, 1] = 0.1
        with pytest.raises(InvalidSpecError, match="Hermitian"):
            DensityMatrix(rho).validate()

    def test_validate_rejects_negative(self):
        """Eigenvalues below -1e-8 are rejected."""
        with pytest.raises(InvalidSpecError, match="eigenvalue"):
            DensityMatrix(np.diag([1.1, -0.1, 0, 0]).astype(complex)).validate()


class TestEvolveNoisy:
    """Test single-path evolution."""

    def test_unitary_limit(self, ops, closed):
        """gamma = 0, eta = 0: purity, trace and spectrum are preserved."""
        rho0 = coherent_state(ops, 1.0, 0.0)
        run = evolve_noisy(rho0, ops, closed, zero_path(0.001, 2001), stride=100)
        assert np.max(np.abs(run.purities - 1.0)) <= 1e-8
        assert np.max(np.abs(run.traces - 1.0)) <= 1e-8
        first = np.linalg.eigvalsh(run.states[0])
        last = np.linalg.eigvalsh(run.states[-1])
        assert np.max(np.abs(first - last)) <= 1e-6

    def test_free_oscillation(self, ops, closed):
        """Without bath, <X>(t) = x0 cos(t) for omega0 = 1."""
        rho0 = coherent_state(ops, 1.0, 0.0)
        run = evolve_noisy(rho0, ops, closed, zero_path(0.001, 3001), stride=10)
        x = np.real(run.expectation(ops.X))
        assert np.max(np.abs(x - np.cos(run.times))) <= 1e-8

    def test_structure_under_noise(self, ops, bath):
        """Trace to 1e-8 and exact Hermiticity along a noisy path."""
        spec = EnsembleSpec(master_seed=8, n_realizations=1, clip_budget=1e-3)
        path = sample_path(bath, 0.002, 2001, spec, 0)
        run = evolve_noisy(coherent_state(ops, 0.5, 0.0), ops, bath, path, stride=20)
        assert np.max(np.abs(run.traces - 1.0)) <= 1e-8
        dagger = np.conj(np.swapaxes(run.states, 1, 2))
        assert np.max(np.abs(run.states - dagger)) <= 1e-10
        assert not run.leak_flag

    def test_stride(self, ops, closed):
        """Every stride-th state is stored, starting with rho0."""
        run = evolve_noisy(ground_state(ops.dim), ops, closed, zero_path(0.01, 101), stride=10)
        assert run.n == 11
        assert run.dt == pytest.approx(0.1)
        assert np.array_equal(run.states[0], ground_state(ops.dim).entries)

    def test_ehrenfest(self, oscillator, bath):
        """Harmonic V: over two periods Kubo first moments follow the classical path of the same noise."""
        ops = build_operators(oscillator, 1.0, 32)
        spec = EnsembleSpec(master_seed=21, n_realizations=1, clip_budget=1e-3)
        dt = 0.002
        path = sample_path(bath, dt, 6281, spec, 0)
        run = evolve_noisy(coherent_state(ops, 1.0, 0.0), ops, bath, path, stride=5)
        traj = integrate(oscillator, bath, path, 1.0, 0.0)
        x_cl, p_cl = traj.x[::5], traj.p[::5]
        assert np.max(np.abs(np.real(run.expectation(ops.X)) - x_cl)) <= 1e-4 * np.max(np.abs(x_cl))
        assert np.max(np.abs(np.real(run.expectation(ops.P)) - p_cl)) <= 1e-4 * np.max(np.abs(p_cl))

    def test_leakage_flag(self, oscillator, closed):
        """A state crowding the top of a small basis is flagged."""
        small = build_operators(oscillator, 1.0, 6)
        run = evolve_noisy(coherent_state(small, 3.0, 0.0), small, closed, zero_path(0.01, 11))
        assert run.leak_flag

    def test_truncation_robustness(self, oscillator, bath):
        """Doubling dim leaves observables unchanged while the leakage monitor stays quiet."""
        spec = EnsembleSpec(master_seed=17, n_realizations=1, clip_budget=1e-3)
        path = sample_path(bath, 0.002, 1001, spec, 0)
        results = []
        for dim in (16, 32):
            basis = build_operators(oscillator, 1.0, dim)
            run = evolve_noisy(coherent_state(basis, 0.5, 0.0), basis, bath, path, stride=10)
            assert not run.leak_flag
            results.append([np.real(run.expectation(op)) for op in (basis.X, basis.P, basis.X @ basis.X)])
        for small, large in zip(*results, strict=True):
            assert np.max(np.abs(small - large)) <= 1e-7

    def test_overflow(self, oscillator, closed):
        """A wildly unstable step reports IntegrationOverflowError."""
        small = build_operators(oscillator, 1.0, 8)
        with pytest.raises(IntegrationOverflowError):
            evolve_noisy(coherent_state(small, 0.5, 0.0), small, closed, zero_path(10.0, 400))

    def test_rejects_mismatches(self, ops, bath, closed):
        """Dimension, hbar and stride are checked; rho0 is validated."""
        with pytest.raises(InvalidSpecError, match="dim"):
            evolve_noisy(ground_state(8), ops, closed, zero_path(0.01, 10))
        other_hbar = BathSpec(gamma=0.0, temperature=1.0, hbar=2.0)
        with pytest.raises(InvalidSpecError, match="hbar"):
            evolve_noisy(ground_state(ops.dim), ops, other_hbar, zero_path(0.01, 10))
        with pytest.raises(InvalidSpecError, match="stride"):
            evolve_noisy(ground_state(ops.dim), ops, closed, zero_path(0.01, 10), stride=0)
        with pytest.raises(InvalidSpecError):
            evolve_noisy(DensityMatrix(np.eye(ops.dim, dtype=complex)), ops, closed, zero_path(0.01, 10))


class TestEnsemble:
    """Test ensemble evolution and averaging."""

    def test_threads_preserve_order(self, ops, bath):
        """Threaded evolution matches sequential evolution."""
        spec = EnsembleSpec(master_seed=4, n_realizations=4, clip_budget=1e-3)
        paths = sample_ensemble(bath, 0.01, 201, spec)
        rho0 = coherent_state(ops, 0.5, 0.0)
        sequential = evolve_ensemble(rho0, ops, bath, paths, stride=10)
        threaded = evolve_ensemble(rho0, ops, bath, paths, stride=10, threads=3)
        for a, b in zip(sequential, threaded, strict=True):
            assert a.realization_index == b.realization_index
            assert np.array_equal(a.states, b.states)

    def test_identical_runs(self, ops, closed):
        """Averaging copies of one run returns it with zero errors."""
        run = evolve_noisy(coherent_state(ops, 0.5, 0.0), ops, closed, zero_path(0.01, 51), stride=5)
        average = average_ensemble([run, run, run], standard_observables(ops))
        assert np.allclose(average.states, run.states, atol=1e-15)
        for stats in average.observables.values():
            assert np.all(stats.standard_error <= 1e-14)
        assert average.n_runs == 3

    def test_average_is_physical(self, ops, bath):
        """The averaged matrix stays Hermitian with unit trace."""
        spec = EnsembleSpec(master_seed=12, n_realizations=6, clip_budget=1e-3)
        runs = evolve_ensemble(coherent_state(ops, 0.5, 0.0), ops, bath, sample_ensemble(bath, 0.01, 301, spec), stride=30)
        average = average_ensemble(runs)
        for k in range(average.states.shape[0]):
            rho = average.state(k)
            assert rho.hermiticity_error() <= 1e-10
            assert abs(rho.trace - 1.0) <= 1e-8

    def test_needs_two_runs(self, ops, closed):
        """A single run is rejected."""
        run = evolve_noisy(ground_state(ops.dim), ops, closed, zero_path(0.01, 11))
        with pytest.raises(InvalidSpecError):
            average_ensemble([run])

    def test_rejects_mixed_grids(self, ops, closed):
        """Runs must share one grid."""
        a = evolve_noisy(ground_state(ops.dim), ops, closed, zero_path(0.01, 11))
        b = evolve_noisy(ground_state(ops.dim), ops, closed, zero_path(0.01, 21))
        with pytest.raises(HeterogeneousGridError):
            average_ensemble([a, b])

    def test_run_flags(self):
        """Leak and positivity flags follow the monitors."""
        states = np.stack([np.eye(4, dtype=complex) / 4] * 2)
        run = KuboRun(dt=0.1, states=states, realization_index=0,
                      leakage=np.array([0.0, 2e-3]), min_eigenvalues=np.array([0.25, -1e-6]))
        assert run.leak_flag and run.positivity_flag

    @pytest.mark.slow
    def test_second_moment_decomposition(self, oscillator, ops, bath):
        """Noise-averaged <X^2> = E[<X>^2] + noise-free spread, against the classical ensemble."""
        dt, n, stride = 0.004, 2501, 10
        spec = EnsembleSpec(master_seed=31, n_realizations=16, clip_budget=1e-3)
        paths = sample_ensemble(bath, dt, n, spec)
        rho0 = coherent_state(ops, 0.5, 0.0)
        x2 = ops.X @ ops.X
        average = average_ensemble(evolve_ensemble(rho0, ops, bath, paths, stride=stride, threads=4), {"x2": x2})
        quiet = evolve_noisy(rho0, ops, bath, zero_path(dt, n), stride=stride)
        spread = np.real(quiet.expectation(x2)) - np.real(quiet.expectation(ops.X)) ** 2
        trajs = integrate_ensemble(oscillator, bath, paths, 0.5, 0.0)
        classical, _ = mean_and_standard_error(np.stack([t.x[::stride] ** 2 for t in trajs]), axis=0)
        assert np.max(np.abs(average.observables["x2"].mean - (classical + spread))) <= 1e-3 * np.max(classical + spread)
