import dataclasses
import functools
import itertools

import numpy as np
import pytest
from scipy import linalg

from spinbath.bath_gen import BathConfiguration, FieldOrientation, LatticeSpec, generate_bath
from spinbath.cce_engine import (
    CCEOptions,
    cce_coherence,
    cce_coherence_by_order,
    cce_correlation,
    cce_correlation_by_order,
    cce_correlation_lines,
    cluster_coherence,
    cluster_correlation,
    enumerate_clusters,
    frozen_spin_states,
    _cluster_hamiltonians,
    pair_correlation_oracle,
)
from spinbath.common import DIPOLAR_SI_PREFACTOR
from spinbath.dd_sequences import cpmg, custom, hahn, ramsey
from spinbath.donor_levels import TransitionPair
from spinbath.errors import CCEBreakdownError, ClusterSizeError
from spinbath.types import LevelLabel

TWO_PI = 2 * np.pi


def _spin_operators(n: int) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    sz = np.diag([0.5, -0.5])
    sp = np.array([[0.0, 1.0], [0.0, 0.0]])

    def embed(op, i):
        return functools.reduce(np.kron, [op if k == i else np.eye(2) for k in range(n)])

    return [embed(sz, i) for i in range(n)], [embed(sp, i) for i in range(n)], [embed(sp.T, i) for i in range(n)]


def _bath_hamiltonian(bath: BathConfiguration, zeeman: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Full bath Hamiltonian and beta = sum_i A_i I_i^z on the 2^n space."""
    n = bath.n_spins
    Iz, Ip, Im = _spin_operators(n)
    H = -zeeman * sum(Iz)
    for i, j in itertools.combinations(range(n), 2):
        H = H + bath.D[i, j] * (Ip[i] @ Im[j] + Im[i] @ Ip[j]) - 4 * bath.D[i, j] * Iz[i] @ Iz[j]
    beta = sum(bath.A[i] * Iz[i] for i in range(n))
    return H, beta


def brute_force_coherence(bath, pair, seq, times, zeeman=0.0) -> np.ndarray:
    """Tr[U_-^dag U_+] / 2^n by matrix exponentials of the full bath."""
    H_bath, beta = _bath_hamiltonian(bath, zeeman)
    branches = [pair.P_plus * beta + H_bath, pair.P_minus * beta + H_bath]
    dim = 2 ** bath.n_spins
    values = []
    for t in times:
        U = [np.eye(dim, dtype=complex), np.eye(dim, dtype=complex)]
        for k, fraction in enumerate(np.diff(seq.boundaries)):
            U = [linalg.expm(-1j * branches[(b + k) % 2] * fraction * t) @ U[b] for b in (0, 1)]
        values.append(np.trace(U[1].conj().T @ U[0]) / dim)
    return np.array(values)


def brute_force_correlation(bath, s, times) -> np.ndarray:
    """Tr[e^{iHt} beta e^{-iHt} beta] / 2^n with H = s/2 beta + H_bath."""
    H_bath, beta = _bath_hamiltonian(bath)
    H = 0.5 * s * beta + H_bath
    dim = 2 ** bath.n_spins
    values = []
    for t in times:
        U = linalg.expm(-1j * H * t)
        values.append(np.real(np.trace(U.conj().T @ beta @ U @ beta)) / dim)
    return np.array(values)


@pytest.fixture
def qubit():
    """A transition with sizable polarization difference."""
    return TransitionPair(plus_label=LevelLabel(5, -1), minus_label=LevelLabel(4, -2),
                          P_plus=0.3, P_minus=-0.2, frequency=1e10, field_B=0.08)


@pytest.fixture
def triangle_bath():
    """Three strongly coupled spins (enlarged gyromagnetic ratio so D is comparable to the hyperfine splittings)."""
    positions = np.array([[0.4, 0.1, 0.2], [0.9, 0.5, 0.1], [0.5, 0.8, 0.7]]) * 1e-9
    A = TWO_PI * np.array([30e3, 42e3, 55e3])
    return BathConfiguration(seed=11, positions=positions, A=A, orientation=FieldOrientation.parse("110"), gamma=1e9)


@pytest.fixture
def pair_bath(triangle_bath):
    return BathConfiguration(seed=5, positions=triangle_bath.positions[:2], A=triangle_bath.A[:2],
                             orientation=triangle_bath.orientation, gamma=triangle_bath.gamma)


@pytest.fixture
def random_bath():
    return generate_bath(LatticeSpec(cutoff_radius=2.5e-9), 3, FieldOrientation.parse("110"))


def full_order_options(bath, times, mean_field=False, **kwargs) -> CCEOptions:
    return CCEOptions(max_order=bath.n_spins, pair_cutoff=10e-9, mean_field=mean_field, time_grid=times, **kwargs)


ECHO_TIMES = np.linspace(0.0, 1e-3, 41)
RAMSEY_TIMES = np.linspace(0.0, 1e-5, 21)


class TestEnumerateClusters:
    """Tests for cluster enumeration."""

    def test_complete_triangle(self, triangle_bath):
        clusters = enumerate_clusters(triangle_bath, full_order_options(triangle_bath, ECHO_TIMES))
        assert clusters == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)]

    def test_chain_gives_connected_triple(self, triangle_bath):
        distances = triangle_bath.distances
        longest = np.max(distances[np.triu_indices(3, 1)])
        options = CCEOptions(max_order=3, pair_cutoff=0.999 * longest, mean_field=False)
        clusters = enumerate_clusters(triangle_bath, options)
        assert sum(len(c) == 2 for c in clusters) == 2
        assert (0, 1, 2) in clusters

    def test_dipolar_floor_removes_pairs(self, triangle_bath):
        floor = 2 * np.max(np.abs(triangle_bath.D))
        options = CCEOptions(max_order=3, pair_cutoff=10e-9, dipolar_floor=floor)
        assert enumerate_clusters(triangle_bath, options) == [(0,), (1,), (2,)]

    def test_sorted_by_size(self, random_bath):
        clusters = enumerate_clusters(random_bath, CCEOptions(max_order=3))
        sizes = [len(c) for c in clusters]
        assert sizes == sorted(sizes)


class TestOptions:
    def test_invalid_order(self):
        with pytest.raises(ValueError):
            CCEOptions(max_order=4)

    def test_grid_must_start_at_zero(self):
        with pytest.raises(ValueError):
            CCEOptions(time_grid=np.array([1e-6, 2e-6]))


class TestCoherenceOracle:
    """CCE at full order must reproduce dense propagation of the whole bath."""

    @pytest.mark.parametrize("mean_field", [False, True])
    @pytest.mark.parametrize("seq, times", [
        (ramsey(), RAMSEY_TIMES),
        (hahn(), ECHO_TIMES),
        (cpmg(4), ECHO_TIMES),
        (cpmg(3), ECHO_TIMES),
        (custom([0.1, 0.4, 0.8]), ECHO_TIMES),
    ])
    def test_three_spins(self, triangle_bath, qubit, seq, times, mean_field):
        curve = cce_coherence(triangle_bath, qubit, seq, full_order_options(triangle_bath, times, mean_field))
        expected = brute_force_coherence(triangle_bath, qubit, seq, times)
        np.testing.assert_allclose(curve.values, expected, rtol=0, atol=1e-10)

    @pytest.mark.parametrize("seq, times", [(ramsey(), RAMSEY_TIMES), (hahn(), ECHO_TIMES), (cpmg(4), ECHO_TIMES)])
    def test_two_spins(self, pair_bath, qubit, seq, times):
        curve = cce_coherence(pair_bath, qubit, seq, full_order_options(pair_bath, times))
        np.testing.assert_allclose(curve.values, brute_force_coherence(pair_bath, qubit, seq, times), atol=1e-10)

    def test_high_field_like_transition(self, triangle_bath):
        qubit = TransitionPair(plus_label=LevelLabel(5, -4), minus_label=LevelLabel(4, -5),
                               P_plus=0.4264, P_minus=-0.5, frequency=1e10, field_B=0.47)
        curve = cce_coherence(triangle_bath, qubit, cpmg(4), full_order_options(triangle_bath, ECHO_TIMES))
        expected = brute_force_coherence(triangle_bath, qubit, cpmg(4), ECHO_TIMES)
        np.testing.assert_allclose(curve.values, expected, atol=1e-10)

    def test_single_cluster(self, triangle_bath, qubit):
        t = 6e-4
        value = cluster_coherence((0, 2), triangle_bath, qubit, hahn(), t)
        sub_bath = BathConfiguration(seed=0, positions=triangle_bath.positions[[0, 2]], A=triangle_bath.A[[0, 2]],
                                     orientation=triangle_bath.orientation, gamma=triangle_bath.gamma)
        assert value == pytest.approx(brute_force_coherence(sub_bath, qubit, hahn(), [t])[0], abs=1e-10)


class TestCoherenceInvariants:
    """Tests for exact properties of the CCE coherence."""

    def test_uniform_zeeman_shift(self, triangle_bath, qubit):
        options = full_order_options(triangle_bath, ECHO_TIMES, mean_field=True)
        shifted = dataclasses.replace(options, bath_zeeman=TWO_PI * 1e5)
        for seq in (hahn(), cpmg(4)):
            reference = cce_coherence(triangle_bath, qubit, seq, options).values
            np.testing.assert_allclose(cce_coherence(triangle_bath, qubit, seq, shifted).values, reference,
                                       rtol=0, atol=1e-10)

    def test_zero_polarization_difference(self, random_bath):
        qubit = TransitionPair(plus_label=LevelLabel(5, -1), minus_label=LevelLabel(4, -2),
                               P_plus=0.0525, P_minus=0.0525, frequency=1e10)
        for seq in (ramsey(), hahn(), cpmg(16)):
            curve = cce_coherence(random_bath, qubit, seq, CCEOptions(time_grid=ECHO_TIMES))
            np.testing.assert_allclose(curve.values, 1.0, rtol=0, atol=1e-12)

    def test_unit_disk(self, random_bath, qubit):
        for seq in (hahn(), cpmg(4)):
            curve = cce_coherence(random_bath, qubit, seq, CCEOptions(time_grid=ECHO_TIMES))
            assert np.all(curve.magnitude <= 1 + 1e-9)
            assert curve.values[0] == 1.0

    def test_worker_count_does_not_change_result(self, random_bath, qubit):
        serial = cce_coherence(random_bath, qubit, cpmg(4), CCEOptions(time_grid=ECHO_TIMES))
        threaded = cce_coherence(random_bath, qubit, cpmg(4), CCEOptions(time_grid=ECHO_TIMES, workers=4))
        np.testing.assert_array_equal(serial.values, threaded.values)

    def test_echo_order_one_without_mean_field(self, random_bath, qubit):
        """Test that independent spins are fully refocused by an echo."""
        curves = cce_coherence_by_order(random_bath, qubit, hahn(),
                                        CCEOptions(max_order=2, mean_field=False, time_grid=ECHO_TIMES))
        np.testing.assert_allclose(curves[1].values, 1.0, atol=1e-12)
        assert set(curves) == {1, 2}
        assert curves[2].metadata["order"] == 2

    def test_empty_bath(self, qubit):
        bath = BathConfiguration(seed=0, positions=np.zeros((0, 3)), A=np.zeros(0),
                                 orientation=FieldOrientation.parse("001"))
        curve = cce_coherence(bath, qubit, hahn(), CCEOptions(time_grid=ECHO_TIMES))
        np.testing.assert_array_equal(curve.values, 1.0)

    def test_frozen_states_reproducible(self, random_bath):
        np.testing.assert_array_equal(frozen_spin_states(random_bath), frozen_spin_states(random_bath))
        assert set(np.unique(frozen_spin_states(random_bath))) <= {-0.5, 0.5}


class TestCoherenceErrors:
    def test_cluster_too_large(self, random_bath, qubit):
        with pytest.raises(ClusterSizeError):
            cluster_coherence((0, 1, 2, 3), random_bath, qubit, hahn(), 1e-4)

    def test_breakdown_on_vanishing_sub_cluster(self, pair_bath, qubit):
        """Test that a Ramsey singleton term crossing zero on the grid aborts the division."""
        t_zero = np.pi / (qubit.P_e * pair_bath.A[0])
        options = full_order_options(pair_bath, np.array([0.0, t_zero]))
        with pytest.raises(CCEBreakdownError):
            cce_coherence(pair_bath, qubit, ramsey(), options)


class TestCorrelation:
    """Tests for the bath-noise correlation C(t)."""

    @pytest.mark.parametrize("mean_field", [False, True])
    def test_matches_full_bath(self, triangle_bath, qubit, mean_field):
        options = full_order_options(triangle_bath, ECHO_TIMES, mean_field)
        curve = cce_correlation(triangle_bath, qubit, options)
        expected = brute_force_correlation(triangle_bath, qubit.s, ECHO_TIMES)
        np.testing.assert_allclose(curve.values, expected, rtol=0, atol=1e-10 * expected[0])

    def test_initial_value(self, random_bath, qubit):
        curve = cce_correlation(random_bath, qubit, CCEOptions(time_grid=ECHO_TIMES))
        assert curve.C0 == pytest.approx(np.sum(random_bath.A ** 2) / 4, rel=1e-12)

    def test_uniform_zeeman_shift(self, random_bath, qubit):
        options = CCEOptions(time_grid=ECHO_TIMES)
        reference = cce_correlation(random_bath, qubit, options).values
        shifted = cce_correlation(random_bath, qubit, dataclasses.replace(options, bath_zeeman=TWO_PI * 1e5)).values
        np.testing.assert_allclose(shifted, reference, rtol=0, atol=1e-10 * reference[0])

    @pytest.mark.parametrize("order", [2, 3])
    def test_lines_match_sampled_correlation(self, random_bath, qubit, order):
        options = CCEOptions(max_order=order, time_grid=ECHO_TIMES)
        curve = cce_correlation(random_bath, qubit, options)
        lines = cce_correlation_lines(random_bath, qubit, options)
        assert lines.C0 == pytest.approx(curve.C0, rel=1e-12)
        np.testing.assert_allclose(lines.value(ECHO_TIMES), curve.values, rtol=0, atol=1e-9 * curve.C0)

    def test_lines_between_grid_points(self, triangle_bath, qubit):
        lines = cce_correlation_lines(triangle_bath, qubit, full_order_options(triangle_bath, ECHO_TIMES))
        off_grid = np.geomspace(1e-7, 5e-3, 37)
        expected = brute_force_correlation(triangle_bath, qubit.s, off_grid)
        np.testing.assert_allclose(lines.value(off_grid), expected, rtol=0, atol=1e-9 * lines.C0)

    def test_orders_nested(self, random_bath, qubit):
        curves = cce_correlation_by_order(random_bath, qubit, CCEOptions(max_order=2, time_grid=ECHO_TIMES))
        np.testing.assert_allclose(curves[1].values, curves[1].C0)
        assert curves[2].C0 == curves[1].C0

    def test_pair_term_matches_oracle(self, pair_bath, qubit):
        t = np.linspace(0.0, 2e-3, 33)
        values = cluster_correlation((0, 1), pair_bath, qubit, t)
        oracle = pair_correlation_oracle(pair_bath.A[0], pair_bath.A[1], pair_bath.D[0, 1], qubit.s)
        np.testing.assert_allclose(values, oracle.amplitude * (np.cos(oracle.omega * t) - 1), atol=1e-9 * oracle.amplitude)

    def test_singleton_term(self, pair_bath, qubit):
        assert cluster_correlation((1,), pair_bath, qubit, 1e-4) == pytest.approx(pair_bath.A[1] ** 2 / 4)


class TestPairOracle:
    """Tests for the isolated-pair flip-flop oracle."""

    def test_frequency_and_amplitude_match_closed_form(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            A_i, A_j = TWO_PI * rng.uniform(1e4, 1e6, size=2)
            D = TWO_PI * rng.uniform(1e3, 1e4) * rng.choice([-1.0, 1.0])
            s = rng.uniform(0.05, 1.0)
            Z = s * (A_i - A_j) / 4
            oracle = pair_correlation_oracle(A_i, A_j, D, s)
            assert oracle.omega == pytest.approx(2 * np.sqrt(Z ** 2 + D ** 2), rel=1e-8)
            assert oracle.amplitude == pytest.approx((A_i - A_j) ** 2 * D ** 2 / (8 * (Z ** 2 + D ** 2)), rel=1e-8)

    def test_uncoupled_pair_does_not_oscillate(self):
        oracle = pair_correlation_oracle(TWO_PI * 1e5, TWO_PI * 2e5, 0.0, 0.5)
        assert oracle.amplitude == 0.0

    def test_matches_dense_pair_correlation(self, pair_bath, qubit):
        t = np.linspace(0.0, 2e-3, 17)
        oracle = pair_correlation_oracle(pair_bath.A[0], pair_bath.A[1], pair_bath.D[0, 1], qubit.s)
        dense = brute_force_correlation(pair_bath, qubit.s, t)
        np.testing.assert_allclose(dense - dense[0], oracle.amplitude * (np.cos(oracle.omega * t) - 1),
                                   atol=1e-9 * dense[0])


def _pair_with_couplings(pair_bath: BathConfiguration, A: np.ndarray) -> BathConfiguration:
    return BathConfiguration(seed=pair_bath.seed, positions=pair_bath.positions, A=A,
                             orientation=pair_bath.orientation, gamma=pair_bath.gamma)


class TestIsolatedPairs:
    """Tests for baths whose pairs lie beyond the cluster cutoff of each other."""

    @pytest.fixture
    def separated_pairs(self, pair_bath):
        offsets = np.array([[0.0, 0.0, 0.0], [20e-9, 0.0, 0.0], [0.0, 0.0, 20e-9]])
        positions = np.concatenate([pair_bath.positions + offset for offset in offsets])
        A = TWO_PI * np.array([30e3, 42e3, 25e3, 61e3, 48e3, 37e3])
        return BathConfiguration(seed=9, positions=positions, A=A, orientation=pair_bath.orientation,
                                 gamma=pair_bath.gamma)

    @pytest.mark.parametrize("seq", [hahn(), cpmg(4), custom([0.2, 0.5])])
    def test_cce2_is_product_of_dense_pairs(self, separated_pairs, qubit, seq):
        options = CCEOptions(max_order=2, pair_cutoff=2e-9, mean_field=False, time_grid=ECHO_TIMES)
        curve = cce_coherence(separated_pairs, qubit, seq, options)
        assert curve.metadata["n_clusters"] == 9
        expected = np.ones(len(ECHO_TIMES), dtype=complex)
        for k in range(3):
            members = [2 * k, 2 * k + 1]
            sub_bath = BathConfiguration(seed=0, positions=separated_pairs.positions[members],
                                         A=separated_pairs.A[members], orientation=separated_pairs.orientation,
                                         gamma=separated_pairs.gamma)
            expected *= brute_force_coherence(sub_bath, qubit, seq, ECHO_TIMES)
        np.testing.assert_allclose(curve.values, expected, rtol=0, atol=1e-10)


class TestBackAction:
    """Tests for the weak-coupling suppression of pair decoherence."""

    def test_smaller_polarization_difference_never_decoheres_more(self, pair_bath):
        rng = np.random.default_rng(21)
        D = abs(pair_bath.D[0, 1])
        for _ in range(20):
            s = rng.uniform(0.3, 1.0)
            P_e = rng.uniform(0.1, 1.0) * s
            delta_A = 4 * D * rng.uniform(0.2, 3.0) / s
            bath = _pair_with_couplings(pair_bath, TWO_PI * 30e3 + np.array([delta_A, 0.0]))
            Z_max = (s + P_e) / 2 * delta_A / 2
            times = np.linspace(0.0, 2.0 / (2 * np.sqrt(Z_max ** 2 + D ** 2)), 21)
            magnitudes = []
            for scale in (0.25, 0.5, 0.75, 1.0):
                qubit = TransitionPair(plus_label=LevelLabel(5, -1), minus_label=LevelLabel(4, -2),
                                       P_plus=(s + scale * P_e) / 2, P_minus=(s - scale * P_e) / 2, frequency=1e10)
                magnitudes.append(cce_coherence(bath, qubit, hahn(), full_order_options(bath, times)).magnitude)
            assert np.all(np.diff(magnitudes, axis=0) <= 1e-12)
            assert magnitudes[-1][-1] < 1.0


class TestCorrelationInvariants:
    """Tests for exact properties of the CCE correlation."""

    def test_no_dipolar_coupling_gives_constant(self, triangle_bath, qubit):
        uncoupled = BathConfiguration(seed=1, positions=triangle_bath.positions, A=triangle_bath.A,
                                      orientation=triangle_bath.orientation, gamma=0.0)
        curve = cce_correlation(uncoupled, qubit, full_order_options(uncoupled, ECHO_TIMES))
        np.testing.assert_allclose(curve.values, curve.C0, rtol=1e-12)

    def test_pair_frequency_matches_pseudospin_gap(self, pair_bath, qubit):
        rng = np.random.default_rng(4)
        D = pair_bath.D[0, 1]
        for _ in range(10):
            A = TWO_PI * rng.uniform(2e4, 8e4, size=2)
            Z = qubit.s * (A[0] - A[1]) / 4
            omega = 2 * np.sqrt(Z ** 2 + D ** 2)
            amplitude = (A[0] - A[1]) ** 2 * D ** 2 / (8 * (Z ** 2 + D ** 2))
            # fifty periods, so a relative frequency error of 1e-10 would show up in the phase
            t = np.linspace(0.0, 100 * np.pi / omega, 401)
            values = cluster_correlation((0, 1), _pair_with_couplings(pair_bath, A), qubit, t)
            np.testing.assert_allclose(values, amplitude * (np.cos(omega * t) - 1), rtol=0, atol=1e-10 * amplitude)


class TestSecularDipolar:
    """The pair Hamiltonian is the secular part of the full dipolar tensor."""

    def test_flip_flop_and_zz_signs(self, pair_bath):
        R = pair_bath.positions[1] - pair_bath.positions[0]
        b = pair_bath.orientation.vector
        e1 = np.cross(b, [1.0, 0.0, 0.0] if abs(b[0]) < 0.9 else [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(b, e1)
        r_hat = np.array([R @ e1, R @ e2, R @ b]) / np.linalg.norm(R)
        d = DIPOLAR_SI_PREFACTOR * pair_bath.gamma ** 2 / np.linalg.norm(R) ** 3

        sz = np.diag([0.5, -0.5]).astype(complex)
        sx = np.array([[0.0, 0.5], [0.5, 0.0]], dtype=complex)
        sy = np.array([[0.0, -0.5j], [0.5j, 0.0]])
        one = np.eye(2)
        first = [np.kron(op, one) for op in (sx, sy, sz)]
        second = [np.kron(one, op) for op in (sx, sy, sz)]
        full = d * (sum(x @ y for x, y in zip(first, second))
                    - 3 * sum(r_hat[k] * first[k] for k in range(3)) @ sum(r_hat[k] * second[k] for k in range(3)))
        total_m = np.array([1.0, 0.0, 0.0, -1.0])
        secular = np.where(total_m[:, None] == total_m[None, :], full, 0.0)

        D = pair_bath.D[0, 1]
        engine = _cluster_hamiltonians(np.array([[[0.0, D], [D, 0.0]]]), np.zeros((1, 2)))[0]
        np.testing.assert_allclose(secular, engine, rtol=0, atol=1e-12 * abs(D))
        assert np.real(secular[1, 2]) == pytest.approx(D)
        # spin-up pair: -4 D I^z I^z = -D
        assert np.real(secular[0, 0]) == pytest.approx(-D)


class TestOrderConvergence:
    def test_pairs_and_triples_agree_near_clock_transition(self, random_bath):
        nearest = np.argsort(np.linalg.norm(random_bath.positions, axis=1))[:50]
        bath = BathConfiguration(seed=random_bath.seed, positions=random_bath.positions[nearest],
                                 A=random_bath.A[nearest], orientation=random_bath.orientation)
        qubit = TransitionPair(plus_label=LevelLabel(5, -1), minus_label=LevelLabel(4, -2),
                               P_plus=0.0527, P_minus=0.0521, frequency=1e10)
        times = np.concatenate([[0.0], np.geomspace(1e-4, 1.0, 60)])
        curves = cce_coherence_by_order(bath, qubit, hahn(), CCEOptions(max_order=3, time_grid=times))
        assert bath.n_spins == 50
        assert np.max(np.abs(curves[3].values - curves[2].values)) < 0.02
