import enum
import dataclasses
from typing import Any

import numpy as np

# (times x lines) elements evaluated at once
LINE_CHUNK_ELEMENTS = 1 << 22


class SequenceFamily(enum.StrEnum):
    RAMSEY = "ramsey"
    HAHN = "hahn"
    CPMG = "cpmg"
    CUSTOM = "custom"


class ModelKind(enum.StrEnum):
    QUANTUM = "quantum"
    GAUSSIAN = "gaussian"
    BOTH = "both"


class Domain(enum.StrEnum):
    TIME = "time"
    FREQ = "freq"


class AmplitudeMode(enum.StrEnum):
    """Amplitude of the pairwise flip-flop correlation term."""
    # Published form 2 Z^2 D^2 / (Z^2 + D^2), carries the back-action factor s^2 through Z
    SCALED = "scaled"
    # (A_i - A_j)^2 D^2 / (8 (Z^2 + D^2)), exact for an isolated pair under H_e
    ORACLE = "oracle-derived"

    @classmethod
    def _missing_(cls, value):
        # "paper" names the published form
        if isinstance(value, str) and value.lower() == "paper":
            return cls.SCALED
        return None


class Extrapolation(enum.StrEnum):
    """Continuation of a sampled spectrum outside its grid."""
    POWER_LAW = "power-law"
    ZERO = "zero"
    HOLD = "hold"


class CorrelationSource(enum.StrEnum):
    """Where the Gaussian model takes its bath correlation C(t) from."""
    CCE = "cce"
    PAIRS = "pairs"


class ScenarioKind(enum.StrEnum):
    ORIENTATION = "orientation"
    CLASSICALITY = "classicality"
    SPECTROSCOPY = "spectroscopy"


class QualityFlag(enum.StrEnum):
    """Recoverable numerical conditions attached to results instead of raising."""
    NOT_DECAYED = "not-decayed"
    NOT_CONVERGED = "not-converged"
    UNIDENTIFIABLE = "unidentifiable"
    NEGATIVE_SPECTRUM = "negative-spectrum"
    LOW_COVERAGE = "low-coverage"
    LOWER_BOUND = "lower-bound"


@dataclasses.dataclass(frozen=True, order=True)
class LevelLabel:
    """Adiabatic |F, m_F> tag of a donor eigenstate."""
    F: int
    m_F: int

    @classmethod
    def parse(cls, text: str) -> "LevelLabel":
        """Parse "5,-1" (optionally wrapped as "|5,-1>")."""
        stripped = text.strip().strip("|>").strip()
        try:
            f_str, mf_str = stripped.split(",")
            return cls(int(f_str), int(mf_str))
        except ValueError as e:
            raise ValueError(f"Could not parse level label: '{text}'") from e

    def __str__(self) -> str:
        return f"|{self.F},{self.m_F}>"


@dataclasses.dataclass
class CoherenceCurve:
    """Sampled central-spin coherence L(t) (complex)."""
    times: np.ndarray
    values: np.ndarray
    metadata: dict[str, Any] = dataclasses.field(default_factory=dict)
    flags: set[QualityFlag] = dataclasses.field(default_factory=set)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.times.shape != self.values.shape:
            raise ValueError(f"times {self.times.shape} and values {self.values.shape} differ in shape")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclasses.dataclass
class CorrelationCurve:
    """Sampled bath-noise autocorrelation C(t) for t >= 0 (rad^2/s^2)."""
    times: np.ndarray
    values: np.ndarray
    metadata: dict[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.times.shape != self.values.shape:
            raise ValueError(f"times {self.times.shape} and values {self.values.shape} differ in shape")

    @property
    def C0(self) -> float:
        return float(self.values[0])


@dataclasses.dataclass
class CorrelationLines:
    """
    C(t) = C0 + sum_k a_k (cos(w_k t) - 1): the exact correlation of a finite bath as discrete lines.

    Sampling C(t) on a coarse or logarithmic grid aliases the line oscillations; the lines do not.
    """
    C0: float
    omegas: np.ndarray
    amplitudes: np.ndarray
    metadata: dict[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.C0 = float(self.C0)
        self.omegas = np.abs(np.asarray(self.omegas, dtype=np.float64)).ravel()
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64).ravel()
        if self.omegas.shape != self.amplitudes.shape:
            raise ValueError(f"{len(self.omegas)} line frequencies but {len(self.amplitudes)} amplitudes")

    @property
    def static(self) -> float:
        """C(t) averaged over long times, C0 - sum_k a_k."""
        return self.C0 - float(np.sum(self.amplitudes))

    def value(self, t: float | np.ndarray) -> float | np.ndarray:
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        values = np.full(len(t_arr), self.C0)
        chunk = max(1, LINE_CHUNK_ELEMENTS // len(t_arr))
        for start in range(0, len(self.omegas), chunk):
            phases = np.multiply.outer(t_arr, self.omegas[start:start + chunk])
            values += (np.cos(phases) - 1.0) @ self.amplitudes[start:start + chunk]
        return float(values[0]) if np.ndim(t) == 0 else values

    def curve(self, times: np.ndarray) -> CorrelationCurve:
        return CorrelationCurve(times=np.asarray(times, dtype=np.float64).copy(), values=self.value(times),
                                metadata=dict(self.metadata))

    @classmethod
    def average(cls, members: list["CorrelationLines"], metadata: dict[str, Any] | None = None) -> "CorrelationLines":
        """Configuration average: every member's lines with amplitudes divided by the member count."""
        n = len(members)
        if n == 0:
            raise ValueError("Cannot average an empty list of line sets")
        return cls(C0=sum(m.C0 for m in members) / n,
                   omegas=np.concatenate([m.omegas for m in members]),
                   amplitudes=np.concatenate([m.amplitudes for m in members]) / n,
                   metadata={**(metadata or {}), "n_configurations": n})
