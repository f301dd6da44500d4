"""
Ideal pi-pulse sequences, modulation function f(t) and filter function F(x = w t).

Pulse times are normalized to the total evolution time. f(t) starts at +1 and flips sign at each pulse.
Writing the boundaries tau_0 = 0 < tau_1 < ... < tau_N < tau_{N+1} = 1, the transform of f is

    w * int_0^T f(t) e^{i w t} dt = -i * sum_j g_j e^{i x tau_j}

with boundary weights g_0 = -1, g_j = 2 (-1)^(j-1) for pulses, g_{N+1} = (-1)^N, so that
F(x) = |sum_j g_j e^{i x tau_j}|^2.
"""
import dataclasses
import re

import numpy as np

from .errors import SequenceError
from .types import SequenceFamily

XY_PATTERN = re.compile(r"^xy(4|8|16)(?:x(\d+))?$")
FILTER_CHUNK_ELEMENTS = 1 << 22


@dataclasses.dataclass(frozen=True)
class PulseSequence:
    fractions: tuple[float, ...]
    family: SequenceFamily
    name: str = ""

    def __post_init__(self):
        fractions = np.asarray(self.fractions, dtype=np.float64)
        if np.any(fractions <= 0) or np.any(fractions >= 1):
            raise SequenceError(f"Pulse fractions must lie in (0, 1): {self.fractions}")
        if np.any(np.diff(fractions) <= 0):
            raise SequenceError(f"Pulse fractions must be strictly increasing: {self.fractions}")
        object.__setattr__(self, "fractions", tuple(float(f) for f in fractions))
        if not self.name:
            object.__setattr__(self, "name", self._default_name())

    def _default_name(self) -> str:
        match self.family:
            case SequenceFamily.RAMSEY | SequenceFamily.HAHN:
                return str(self.family)
            case SequenceFamily.CPMG:
                return f"cpmg:{self.N}"
            case _:
                return "custom:" + ",".join(f"{f:.12g}" for f in self.fractions)

    @property
    def N(self) -> int:
        return len(self.fractions)

    @property
    def boundaries(self) -> np.ndarray:
        """[0, tau_1, ..., tau_N, 1]"""
        return np.concatenate([[0.0], self.fractions, [1.0]])

    @property
    def segment_signs(self) -> np.ndarray:
        """Sign of f on each of the N+1 free-evolution segments."""
        return (-1.0) ** np.arange(self.N + 1)

    @property
    def boundary_weights(self) -> np.ndarray:
        signs = self.segment_signs
        weights = np.zeros(self.N + 2)
        weights[:-1] -= signs
        weights[1:] += signs
        return weights

    @property
    def net_area(self) -> float:
        """int_0^1 f(u) du, zero for every echo-type sequence."""
        return float(np.sum(self.segment_signs * np.diff(self.boundaries)))


def ramsey() -> PulseSequence:
    return PulseSequence((), SequenceFamily.RAMSEY)


def hahn() -> PulseSequence:
    return PulseSequence((0.5,), SequenceFamily.HAHN)


def cpmg(N: int) -> PulseSequence:
    """CPMG-N: pulses at (2k - 1) / 2N, k = 1..N."""
    if N < 1:
        raise SequenceError(f"CPMG needs N >= 1 (got {N}); use ramsey() for free evolution")
    k = np.arange(1, N + 1)
    return PulseSequence(tuple((2 * k - 1) / (2 * N)), SequenceFamily.CPMG)


def xy(N: int) -> PulseSequence:
    """XY-type sequence with N pulses; identical to CPMG-N for ideal pulses."""
    if N < 4 or N % 4:
        raise SequenceError(f"XY sequences need a multiple of 4 pulses, got {N}")
    return cpmg(N)


def custom(fractions: list[float] | tuple[float, ...]) -> PulseSequence:
    return PulseSequence(tuple(fractions), SequenceFamily.CUSTOM)


def parse_sequence(text: str) -> PulseSequence:
    """
    Parse a sequence spec: "ramsey", "hahn", "cpmg:N", "custom:t1,t2,...", "xy4", "xy8", "xy16", "xy16x<k>".
    """
    spec = text.strip().lower()
    if spec == "ramsey":
        return ramsey()
    if spec == "hahn":
        return hahn()
    try:
        if spec.startswith("cpmg:"):
            return cpmg(int(spec.removeprefix("cpmg:")))
        if spec.startswith("custom:"):
            return custom([float(v) for v in spec.removeprefix("custom:").split(",")])
    except ValueError as e:
        if isinstance(e, SequenceError):
            raise
        raise SequenceError(f"Could not parse sequence: '{text}'") from e
    match = XY_PATTERN.match(spec)
    if match:
        repeats = int(match.group(2)) if match.group(2) else 1
        return xy(int(match.group(1)) * repeats)
    raise SequenceError(f"Unknown sequence: '{text}'")


def modulation(seq: PulseSequence, t_total: float, t: float | np.ndarray) -> float | np.ndarray:
    """f(t) = (-1)^(number of pulses at or before t)."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > t_total):
        raise SequenceError(f"t must lie in [0, {t_total}]")
    n_flips = np.searchsorted(np.asarray(seq.fractions) * t_total, t_arr, side="right")
    values = (-1.0) ** n_flips
    return float(values) if values.ndim == 0 else values


def _boundary_sum_filter(seq: PulseSequence, x: np.ndarray) -> np.ndarray:
    """|sum_j g_j e^{i x tau_j}|^2 for a flat array x, in chunks."""
    values = np.empty(len(x))
    chunk = max(1, FILTER_CHUNK_ELEMENTS // len(seq.boundaries))
    for start in range(0, len(x), chunk):
        phases = np.exp(1j * np.multiply.outer(x[start:start + chunk], seq.boundaries))
        values[start:start + chunk] = np.abs(phases @ seq.boundary_weights) ** 2
    return values


def _cpmg_filter(N: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed form 16 sin^4(x/4N) {sin^2, cos^2}(x/2) / cos^2(x/2N) for N {even, odd}."""
    carrier = np.sin(x / 2) ** 2 if N % 2 == 0 else np.cos(x / 2) ** 2
    denominator = np.cos(x / (2 * N)) ** 2
    values = np.empty(len(x))
    # removable 0/0 points of the closed form
    singular = denominator < 1e-8
    regular = ~singular
    values[regular] = 16.0 * np.sin(x[regular] / (4 * N)) ** 4 * carrier[regular] / denominator[regular]
    return values, singular


def filter_function(seq: PulseSequence, x: float | np.ndarray) -> float | np.ndarray:
    """
    F(x) = |sum_k (-1)^k (e^{i x tau_{k+1}} - e^{i x tau_k})|^2.

    Ramsey and CPMG-type sequences use their closed forms, everything else the boundary-weight sum.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    flat = x_arr.ravel()
    match seq.family:
        case SequenceFamily.RAMSEY:
            values = 4.0 * np.sin(flat / 2) ** 2
        case SequenceFamily.HAHN | SequenceFamily.CPMG:
            values, singular = _cpmg_filter(seq.N, flat)
            if np.any(singular):
                values[singular] = _boundary_sum_filter(seq, flat[singular])
        case _:
            values = _boundary_sum_filter(seq, flat)
    values = values.reshape(x_arr.shape)
    return float(values) if values.ndim == 0 else values


def filter_function_quadrature(seq: PulseSequence, x: float | np.ndarray, order: int = 32) -> float | np.ndarray:
    """
    x^2 |int_0^1 f(u) e^{i x u} du|^2 by Gauss-Legendre quadrature of the modulation function.

    Each segment is split so that a cell spans at most half a period of e^{i x u}.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    x_arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    bounds = seq.boundaries
    values = np.empty(len(x_arr))
    for n, xv in enumerate(x_arr):
        integral = 0j
        for k in range(seq.N + 1):
            a, b = bounds[k], bounds[k + 1]
            n_cells = int(np.ceil(abs(xv) * (b - a) / np.pi)) + 1
            edges = np.linspace(a, b, n_cells + 1)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            u = mid[:, None] + half[:, None] * nodes[None, :]
            integral += (-1) ** k * np.sum(half[:, None] * weights[None, :] * np.exp(1j * xv * u))
        values[n] = xv ** 2 * abs(integral) ** 2
    return float(values[0]) if np.ndim(x) == 0 else values
