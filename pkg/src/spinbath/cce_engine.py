"""
Cluster-correlation expansion (CCE) of the central-spin coherence L(t) and of the bath-noise
correlation C(t).

Branch Hamiltonians restricted to a cluster C (bath spins are spin-1/2):

    H^(+/-) = P_+/- beta_C + H_bath,C        beta_C = sum_i A_i I_i^z
    H_bath,C = sum_{i<j} D_ij (I_i^+ I_j^- + I_i^- I_j^+) - 4 D_ij I_i^z I_j^z  [+ frozen mean field]

The flip-flop element equals D_ij, so an isolated pair has the pseudospin gap 2 sqrt(Z^2 + D^2). The ZZ
coefficient -4 D_ij follows from the secular truncation of the dipolar tensor that defines D_ij.

L_C = Tr[U_-^dag U_+] / 2^|C| with U_+ starting on H^(+) and the branches swapping at each pulse.
L = prod_C Ltilde_C,  Ltilde_C = L_C / prod_{C' subset C} Ltilde_C'.

C(t) = Tr[e^{i H_e t} beta e^{-i H_e t} beta] / 2^M with H_e = s/2 beta + H_bath; the connected cluster
terms are additive and singletons contribute the constant A_i^2 / 4.
"""
import dataclasses
import functools
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from collections.abc import Callable, Sequence

import numpy as np

from .bath_gen import BathConfiguration, SeedStream, child_seed
from .dd_sequences import PulseSequence, cpmg
from .donor_levels import TransitionPair, spin_operators
from .errors import CCEBreakdownError, ClusterSizeError
from .types import CoherenceCurve, CorrelationCurve, CorrelationLines

logger = logging.getLogger(__name__)

Cluster = tuple[int, ...]

MAX_ORDER = 3
BREAKDOWN_THRESHOLD = 1e-12
UNIT_DISK_TOLERANCE = 1e-9
# line gaps below this fraction of the cluster energy scale are degenerate levels
LINE_DEGENERACY = 1e-12
# complex entries per evaluation chunk (clusters x times x d x d)
CHUNK_ELEMENTS = 1 << 21


@dataclasses.dataclass
class CCEOptions:
    """Truncation and evaluation controls."""
    max_order: int = 2
    pair_cutoff: float = 0.8e-9
    dipolar_floor: float = 0.0
    mean_field: bool = True
    time_grid: np.ndarray = dataclasses.field(default_factory=lambda: np.linspace(0.0, 1e-3, 101))
    bath_zeeman: float = 0.0
    workers: int = 1

    def __post_init__(self):
        self.time_grid = np.asarray(self.time_grid, dtype=np.float64)
        if self.max_order not in range(1, MAX_ORDER + 1):
            raise ValueError(f"max_order must be 1, 2 or 3, got {self.max_order}")
        if self.pair_cutoff <= 0:
            raise ValueError(f"pair_cutoff must be positive, got {self.pair_cutoff}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if len(self.time_grid) == 0 or self.time_grid[0] != 0 or np.any(np.diff(self.time_grid) <= 0):
            raise ValueError("time_grid must start at 0 and be strictly increasing")


def frozen_spin_states(bath: BathConfiguration) -> np.ndarray:
    """Random +-1/2 states of all bath spins, seeded from the bath seed."""
    rng = np.random.default_rng(child_seed(bath.seed, 0, SeedStream.FROZEN_STATES))
    return rng.choice(np.array([-0.5, 0.5]), size=bath.n_spins)


def enumerate_clusters(bath: BathConfiguration, options: CCEOptions) -> list[Cluster]:
    """
    Connected clusters of the pair graph (edge: distance <= pair_cutoff and |D| >= dipolar_floor),
    sorted by size then lexicographically.
    """
    n = bath.n_spins
    clusters: list[Cluster] = [(i,) for i in range(n)]
    if n < 2 or options.max_order < 2:
        return clusters

    adjacency = (bath.distances <= options.pair_cutoff) & (np.abs(bath.D) >= options.dipolar_floor)
    np.fill_diagonal(adjacency, False)
    edges = [tuple(int(v) for v in pair) for pair in np.argwhere(np.triu(adjacency))]
    clusters.extend(sorted(edges))

    if options.max_order >= 3:
        neighbours = [set(np.flatnonzero(row).tolist()) for row in adjacency]
        triples = set()
        for i, j in edges:
            for k in (neighbours[i] | neighbours[j]) - {i, j}:
                triples.add(tuple(sorted((i, j, k))))
        clusters.extend(sorted(triples))

    logger.debug(f"{n} spins -> {len(edges)} pairs, {len(clusters) - n - len(edges)} triples")
    return clusters


@functools.lru_cache(maxsize=MAX_ORDER)
def _cluster_operators(size: int) -> tuple[np.ndarray, dict[tuple[int, int], np.ndarray]]:
    """
    m values of each product state (2^size, size), spin up first, and the flip-flop
    matrices I_a^+ I_b^- + I_a^- I_b^+ for every pair of cluster positions a < b.
    """
    m = 0.5 - np.array(list(itertools.product((0, 1), repeat=size)), dtype=np.float64).reshape(-1, size)
    dim = len(m)
    flipflops = {}
    for a, b in itertools.combinations(range(size), 2):
        op = np.zeros((dim, dim))
        for p, q in itertools.product(range(dim), repeat=2):
            others_equal = np.all(np.delete(m[p] == m[q], [a, b]))
            if others_equal and m[p, a] == -m[q, a] and m[p, b] == -m[q, b] and m[p, a] == -m[p, b]:
                op[p, q] = 1.0
        flipflops[(a, b)] = op
    return m, flipflops


def _static_fields(bath: BathConfiguration, idx: np.ndarray, options: CCEOptions,
                   frozen: np.ndarray | None) -> np.ndarray:
    """I^z coefficients of cluster spins from the frozen outside spins and the uniform Zeeman term."""
    fields = np.full(idx.shape, -options.bath_zeeman)
    if options.mean_field and frozen is not None:
        full_field = -4.0 * bath.D @ frozen
        D_in = _couplings(bath, idx)
        # remove the contribution of spins inside the cluster
        fields += full_field[idx] + 4.0 * np.einsum("nab,nb->na", D_in, frozen[idx])
    return fields


def _couplings(bath: BathConfiguration, idx: np.ndarray) -> np.ndarray:
    return bath.D[idx[:, :, None], idx[:, None, :]]


def _cluster_hamiltonians(D_in: np.ndarray, z_coefficients: np.ndarray) -> np.ndarray:
    """Stacked real Hamiltonians (n, d, d) from in-cluster couplings (n, k, k) and I^z coefficients (n, k)."""
    m, flipflops = _cluster_operators(D_in.shape[1])
    dim = len(m)
    diagonal = z_coefficients @ m.T
    H = np.zeros((len(D_in), dim, dim))
    for (a, b), op in flipflops.items():
        D_ab = D_in[:, a, b]
        H += D_ab[:, None, None] * op
        diagonal = diagonal - 4.0 * D_ab[:, None] * (m[:, a] * m[:, b])[None, :]
    H[:, np.arange(dim), np.arange(dim)] += diagonal
    return H


def _propagators(energies: np.ndarray, vectors: np.ndarray, durations: np.ndarray) -> np.ndarray:
    """exp(-i H dt) for every cluster and every duration: (n, T, d, d)."""
    phases = np.exp(-1j * energies[:, None, :] * durations[None, :, None])
    return np.einsum("nij,ntj,nkj->ntik", vectors, phases, vectors)


def _is_cpmg(seq: PulseSequence) -> bool:
    return seq.N >= 1 and np.allclose(seq.fractions, cpmg(seq.N).fractions, rtol=0.0, atol=1e-14)


def _branch_propagators(eig_plus, eig_minus, seq: PulseSequence, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """U_+ and U_- for every cluster and time, (n, T, d, d) each."""
    eigs = (eig_plus, eig_minus)
    if _is_cpmg(seq):
        N = seq.N
        half = [_propagators(*e, times / (2 * N)) for e in eigs]
        full = [_propagators(*e, times / N) for e in eigs]
        branches = []
        for a, b in ((0, 1), (1, 0)):
            # segments: a(t/2N), then N-1 segments of t/N alternating b, a, ..., then t/2N
            end = half[a] if N % 2 == 0 else half[b]
            cycle = full[a] @ full[b]
            if (N - 1) % 2 == 0:
                middle = np.linalg.matrix_power(cycle, (N - 1) // 2)
            else:
                middle = full[b] @ np.linalg.matrix_power(cycle, (N - 2) // 2)
            branches.append(end @ middle @ half[a])
        return branches[0], branches[1]

    cache: dict[float, list[np.ndarray]] = {}
    n, dim = eig_plus[0].shape
    identity = np.broadcast_to(np.eye(dim, dtype=np.complex128), (n, len(times), dim, dim))
    U_plus, U_minus = identity, identity
    for k, fraction in enumerate(np.diff(seq.boundaries)):
        if fraction not in cache:
            cache[fraction] = [_propagators(*e, times * fraction) for e in eigs]
        step_plus, step_minus = cache[fraction]
        if k % 2 == 0:
            U_plus, U_minus = step_plus @ U_plus, step_minus @ U_minus
        else:
            U_plus, U_minus = step_minus @ U_plus, step_plus @ U_minus
    return U_plus, U_minus


def _coherence_chunk(H_plus: np.ndarray, H_minus: np.ndarray, seq: PulseSequence, times: np.ndarray) -> np.ndarray:
    dim = H_plus.shape[-1]
    U_plus, U_minus = _branch_propagators(np.linalg.eigh(H_plus), np.linalg.eigh(H_minus), seq, times)
    values = np.einsum("ntij,ntij->nt", U_minus.conj(), U_plus) / dim
    values[:, times == 0] = 1.0
    return values


def _correlation_chunk(H_e: np.ndarray, beta: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Time-dependent part sum_mn |beta_mn|^2 (cos w_mn t - 1) / d of each cluster, (n, T)."""
    dim = H_e.shape[-1]
    energies, vectors = np.linalg.eigh(H_e)
    beta_eig = np.einsum("nji,nj,njk->nik", vectors, beta, vectors)
    weights = (beta_eig ** 2 / dim).reshape(len(H_e), -1)
    omegas = (energies[:, :, None] - energies[:, None, :]).reshape(len(H_e), -1)
    return np.einsum("nk,nkt->nt", weights, np.cos(omegas[:, :, None] * times[None, None, :]) - 1.0)


def _evaluate_by_size(
    clusters: Sequence[Cluster],
    times: np.ndarray,
    workers: int,
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray],
    dtype: type,
) -> np.ndarray:
    """
    Run `evaluate(idx, times)` over chunks of equally sized clusters, returning rows in the input order.
    Chunk results are placed by index, so the output does not depend on the worker count.
    """
    values = np.empty((len(clusters), len(times)), dtype=dtype)
    jobs = []
    for size in sorted({len(c) for c in clusters}):
        rows = np.array([k for k, c in enumerate(clusters) if len(c) == size])
        idx = np.array([clusters[k] for k in rows], dtype=np.int64).reshape(len(rows), size)
        chunk = max(1, CHUNK_ELEMENTS // (len(times) * 4 ** size))
        for start in range(0, len(rows), chunk):
            jobs.append((rows[start:start + chunk], idx[start:start + chunk]))

    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = executor.map(lambda job: evaluate(job[1], times), jobs)
        for (rows, _), result in zip(jobs, results):
            values[rows] = result
    return values


def _check_order(cluster: Cluster):
    if len(cluster) > MAX_ORDER:
        raise ClusterSizeError(f"Cluster {cluster} has {len(cluster)} spins; dense propagation is capped at {MAX_ORDER}")


def _coherence_values(bath, transition, seq, clusters, times, options, frozen) -> np.ndarray:
    def evaluate(idx: np.ndarray, t: np.ndarray) -> np.ndarray:
        fields = _static_fields(bath, idx, options, frozen)
        A = bath.A[idx]
        H_plus = _cluster_hamiltonians(_couplings(bath, idx), transition.P_plus * A + fields)
        H_minus = _cluster_hamiltonians(_couplings(bath, idx), transition.P_minus * A + fields)
        return _coherence_chunk(H_plus, H_minus, seq, t)
    return _evaluate_by_size(clusters, times, options.workers, evaluate, np.complex128)


def _correlation_values(bath, transition, clusters, times, options, frozen) -> np.ndarray:
    def evaluate(idx: np.ndarray, t: np.ndarray) -> np.ndarray:
        fields = _static_fields(bath, idx, options, frozen)
        A = bath.A[idx]
        H_e = _cluster_hamiltonians(_couplings(bath, idx), 0.5 * transition.s * A + fields)
        m, _ = _cluster_operators(idx.shape[1])
        return _correlation_chunk(H_e, A @ m.T, t)
    return _evaluate_by_size(clusters, times, options.workers, evaluate, np.float64)


def cluster_coherence(
    cluster: Cluster,
    bath: BathConfiguration,
    transition: TransitionPair,
    seq: PulseSequence,
    t_total: float,
    options: CCEOptions | None = None,
    frozen_states: np.ndarray | None = None,
) -> complex:
    """Full (not irreducible) coherence L_C of one cluster at one total time."""
    _check_order(cluster)
    options = options if options is not None else CCEOptions(mean_field=False)
    values = _coherence_values(bath, transition, seq, [tuple(cluster)], np.array([float(t_total)]),
                               options, frozen_states)
    return complex(values[0, 0])


def _proper_subclusters(cluster: Cluster) -> list[Cluster]:
    return [sub for size in range(1, len(cluster)) for sub in itertools.combinations(cluster, size)]


def _irreducible_coherence(clusters: list[Cluster], values: np.ndarray, times: np.ndarray) -> np.ndarray:
    position = {c: k for k, c in enumerate(clusters)}
    irreducible = values.copy()
    for k, cluster in enumerate(clusters):
        if len(cluster) == 1:
            continue
        for sub in _proper_subclusters(cluster):
            if sub not in position:
                continue
            sub_term = irreducible[position[sub]]
            small = np.abs(sub_term) < BREAKDOWN_THRESHOLD
            if np.any(small):
                t_bad = times[np.argmax(small)]
                raise CCEBreakdownError(
                    f"Irreducible term of cluster {sub} fell below {BREAKDOWN_THRESHOLD:g} at t = {t_bad:.6g} s "
                    f"while dividing cluster {cluster}: strongly correlated bath")
            irreducible[k] = irreducible[k] / sub_term
    return irreducible


def _assemble_coherence(clusters, irreducible, times, max_size, metadata) -> CoherenceCurve:
    values = np.ones(len(times), dtype=np.complex128)
    for cluster, term in zip(clusters, irreducible):
        if len(cluster) <= max_size:
            values = values * term
    excess = np.abs(values) - 1.0
    if np.any(excess > UNIT_DISK_TOLERANCE):
        t_bad = times[np.argmax(excess)]
        raise CCEBreakdownError(f"Assembled |L| = {1 + excess.max():.12g} exceeds 1 at t = {t_bad:.6g} s")
    return CoherenceCurve(times=times.copy(), values=values, metadata=metadata)


def cce_coherence_by_order(
    bath: BathConfiguration,
    transition: TransitionPair,
    seq: PulseSequence,
    options: CCEOptions,
    frozen_states: np.ndarray | None = None,
) -> dict[int, CoherenceCurve]:
    """CCE coherence truncated at every order 1..max_order from a single cluster evaluation."""
    if options.mean_field and frozen_states is None:
        frozen_states = frozen_spin_states(bath)
    times = options.time_grid
    clusters = enumerate_clusters(bath, options)
    values = _coherence_values(bath, transition, seq, clusters, times, options, frozen_states)
    irreducible = _irreducible_coherence(clusters, values, times)
    metadata = {
        "transition": f"{transition.plus_label}<->{transition.minus_label}",
        "field_mT": transition.field_B * 1e3,
        "sequence": seq.name,
        "seed": bath.seed,
        "n_spins": bath.n_spins,
        "n_clusters": len(clusters),
    }
    return {
        order: _assemble_coherence(clusters, irreducible, times, order, {**metadata, "order": order})
        for order in range(1, options.max_order + 1)
    }


def cce_coherence(
    bath: BathConfiguration,
    transition: TransitionPair,
    seq: PulseSequence,
    options: CCEOptions,
    frozen_states: np.ndarray | None = None,
) -> CoherenceCurve:
    """
    L(t) on options.time_grid as the product of irreducible cluster terms.

    Raises:
        CCEBreakdownError: if a sub-cluster term is too small to divide by, or |L| exceeds 1
    """
    curves = cce_coherence_by_order(bath, transition, seq, options, frozen_states)
    curve = curves[options.max_order]
    logger.debug(f"CCE-{options.max_order} {seq.name}: {curve.metadata['n_clusters']} clusters, "
                 f"|L(t_max)| = {abs(curve.values[-1]):.4f}")
    return curve


def cluster_correlation(
    cluster: Cluster,
    bath: BathConfiguration,
    transition: TransitionPair,
    t: float | np.ndarray,
    options: CCEOptions | None = None,
    frozen_states: np.ndarray | None = None,
) -> float | np.ndarray:
    """
    Connected correlation term of one cluster: singletons give A_i^2 / 4, larger clusters their
    time-dependent part minus the connected terms of every proper sub-cluster.
    """
    _check_order(cluster)
    cluster = tuple(sorted(cluster))
    times = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if len(cluster) == 1:
        values = np.full(len(times), bath.A[cluster[0]] ** 2 / 4)
    else:
        options = options if options is not None else CCEOptions(mean_field=False)
        subs = [sub for sub in _proper_subclusters(cluster) if len(sub) > 1] + [cluster]
        raw = _correlation_values(bath, transition, subs, times, options, frozen_states)
        connected = {}
        for sub, row in zip(subs, raw):
            connected[sub] = row - sum((connected[s] for s in _proper_subclusters(sub) if s in connected),
                                       np.zeros(len(times)))
        values = connected[cluster]
    return float(values[0]) if np.ndim(t) == 0 else values


def cce_correlation_by_order(
    bath: BathConfiguration,
    transition: TransitionPair,
    options: CCEOptions,
    frozen_states: np.ndarray | None = None,
) -> dict[int, CorrelationCurve]:
    """C(t) truncated at every order 1..max_order."""
    if options.mean_field and frozen_states is None:
        frozen_states = frozen_spin_states(bath)
    times = options.time_grid
    clusters = [c for c in enumerate_clusters(bath, options) if len(c) > 1]
    raw = _correlation_values(bath, transition, clusters, times, options, frozen_states) if clusters \
        else np.zeros((0, len(times)))

    position = {c: k for k, c in enumerate(clusters)}
    connected = raw.copy()
    for k, cluster in enumerate(clusters):
        for sub in _proper_subclusters(cluster):
            if len(sub) > 1 and sub in position:
                connected[k] -= connected[position[sub]]

    C0 = float(np.sum(bath.A ** 2) / 4)
    sizes = np.array([len(c) for c in clusters], dtype=np.int64)
    metadata = {
        "transition": f"{transition.plus_label}<->{transition.minus_label}",
        "field_mT": transition.field_B * 1e3,
        "seed": bath.seed,
        "n_spins": bath.n_spins,
        "orientation": bath.orientation.direction,
    }
    curves = {}
    for order in range(1, options.max_order + 1):
        decay = connected[sizes <= order].sum(axis=0) if len(clusters) else np.zeros(len(times))
        values = C0 + decay
        values[times == 0] = C0
        curves[order] = CorrelationCurve(times=times.copy(), values=values, metadata={**metadata, "order": order})
    return curves


def cce_correlation(
    bath: BathConfiguration,
    transition: TransitionPair,
    options: CCEOptions,
    frozen_states: np.ndarray | None = None,
) -> CorrelationCurve:
    """C(t) on options.time_grid; C(0) = sum_i A_i^2 / 4 exactly."""
    return cce_correlation_by_order(bath, transition, options, frozen_states)[options.max_order]


def _line_chunk(H_e: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gaps |E_m - E_n| and amplitudes 2 |beta_mn|^2 / d over the pairs m < n of each cluster, (n, L)."""
    dim = H_e.shape[-1]
    energies, vectors = np.linalg.eigh(H_e)
    beta_eig = np.einsum("nji,nj,njk->nik", vectors, beta, vectors)
    upper_m, upper_n = np.triu_indices(dim, k=1)
    omegas = np.abs(energies[:, upper_m] - energies[:, upper_n])
    return omegas, 2.0 * beta_eig[:, upper_m, upper_n] ** 2 / dim


def _inclusion_exclusion_weights(clusters: list[Cluster]) -> dict[Cluster, float]:
    """Coefficient of each cluster's full term in the sum of connected terms over `clusters`."""
    expansion: dict[Cluster, dict[Cluster, float]] = {}
    for cluster in clusters:
        terms = {cluster: 1.0}
        for sub in _proper_subclusters(cluster):
            for member, coefficient in expansion.get(sub, {}).items():
                terms[member] = terms.get(member, 0.0) - coefficient
        expansion[cluster] = terms
    weights: dict[Cluster, float] = {}
    for terms in expansion.values():
        for member, coefficient in terms.items():
            weights[member] = weights.get(member, 0.0) + coefficient
    return weights


def cce_correlation_lines(
    bath: BathConfiguration,
    transition: TransitionPair,
    options: CCEOptions,
    frozen_states: np.ndarray | None = None,
) -> CorrelationLines:
    """
    The CCE correlation of order options.max_order as discrete lines, so that
    lines.value(t) equals cce_correlation at any t, not only on the time grid.
    """
    if options.mean_field and frozen_states is None:
        frozen_states = frozen_spin_states(bath)
    clusters = [c for c in enumerate_clusters(bath, options) if len(c) > 1]
    weights = _inclusion_exclusion_weights(clusters)
    omegas, amplitudes = [], []
    for size in sorted({len(c) for c in clusters}):
        members = [c for c in clusters if len(c) == size and weights[c] != 0.0]
        if not members:
            continue
        idx = np.array(members, dtype=np.int64)
        fields = _static_fields(bath, idx, options, frozen_states)
        A = bath.A[idx]
        H_e = _cluster_hamiltonians(_couplings(bath, idx), 0.5 * transition.s * A + fields)
        m, _ = _cluster_operators(size)
        gaps, strengths = _line_chunk(H_e, A @ m.T)
        scale = np.max(np.abs(np.linalg.eigvalsh(H_e)), axis=1, keepdims=True)
        keep = gaps > LINE_DEGENERACY * scale
        coefficients = np.array([weights[c] for c in members])[:, None]
        omegas.append(gaps[keep])
        amplitudes.append((coefficients * strengths)[keep])

    C0 = float(np.sum(bath.A ** 2) / 4)
    lines = CorrelationLines(
        C0=C0,
        omegas=np.concatenate(omegas) if omegas else np.empty(0),
        amplitudes=np.concatenate(amplitudes) if amplitudes else np.empty(0),
        metadata={
            "transition": f"{transition.plus_label}<->{transition.minus_label}",
            "field_mT": transition.field_B * 1e3,
            "seed": bath.seed,
            "n_spins": bath.n_spins,
            "order": options.max_order,
        })
    logger.debug(f"CCE-{options.max_order} correlation: {len(lines.omegas)} lines from {len(clusters)} clusters")
    return lines


@dataclasses.dataclass(frozen=True)
class PairOracle:
    """Oscillating part of an isolated pair's correlation: amplitude * (cos(omega t) - 1)."""
    omega: float
    amplitude: float


def pair_correlation_oracle(A_i: float, A_j: float, D: float, s: float) -> PairOracle:
    """Dense 4-dimensional evaluation of the pair correlation under H_e = s/2 beta + H_bath."""
    iz, iplus, iminus = spin_operators(0.5)
    one = np.eye(2)
    beta = A_i * np.kron(iz, one) + A_j * np.kron(one, iz)
    flip_flop = np.kron(iplus, iminus) + np.kron(iminus, iplus)
    H_e = 0.5 * s * beta + D * flip_flop - 4 * D * np.kron(iz, iz)
    energies, vectors = np.linalg.eigh(H_e)
    beta_eig = vectors.T @ beta @ vectors
    weights = beta_eig ** 2 / 4
    omegas = np.abs(energies[:, None] - energies[None, :])
    scale = np.max(np.abs(energies)) + abs(D) + np.finfo(float).tiny
    oscillating = (omegas > 1e-12 * scale) & (weights > 1e-30 * np.max(weights))
    if not np.any(oscillating):
        return PairOracle(omega=0.0, amplitude=0.0)
    dominant = np.unravel_index(np.argmax(np.where(oscillating, weights, -1.0)), weights.shape)
    return PairOracle(omega=float(omegas[dominant]), amplitude=float(np.sum(weights[oscillating])))
