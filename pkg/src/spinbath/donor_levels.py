"""
Bi donor electron-nuclear spin levels.

H_cs = w_e S^z - w_n I^z + A0 S.I with w_e = gamma_e B, w_n = gamma_n B.
The Hamiltonian conserves m_F = m_S + m_I, so it is diagonalized block by block
(blocks of size <= 2 for S = 1/2) with a closed-form 2x2 solver. A dense 20x20 path
is kept for cross-checks.

Usage examples:

    params = DonorParams()
    levels = eigensystem(params, 0.0799)
    pair = transition(params, 0.0799, LevelLabel(5, -1), LevelLabel(4, -2))
    ct = find_clock_transition(params, LevelLabel(5, -1), LevelLabel(4, -2), (0.05, 0.12))
"""
import dataclasses
import logging
from collections.abc import Iterable

import numpy as np
import pandas as pd
from scipy import optimize

from .common import TWO_PI, ghz_to_rad_s, rad_s_to_ghz, tesla_to_mt
from .errors import LevelCrossingError, NoClockTransitionError, UnknownLabelError
from .types import LevelLabel

logger = logging.getLogger(__name__)

CROSSING_TOLERANCE = 1e-12


@dataclasses.dataclass(frozen=True)
class DonorParams:
    """Si:Bi constants, angular frequencies in rad/s."""
    A0: float = ghz_to_rad_s(1.4754)
    gamma_e: float = TWO_PI * 27.997e9
    gamma_n_host: float = TWO_PI * 6.963e6
    electron_spin: float = 0.5
    nuclear_spin: float = 4.5

    def __post_init__(self):
        if self.A0 <= 0:
            raise ValueError(f"A0 must be positive, got {self.A0}")
        if self.electron_spin != 0.5:
            raise ValueError("Only an electron spin of 1/2 is supported")
        if self.nuclear_spin <= 0 or not float(2 * self.nuclear_spin).is_integer():
            raise ValueError(f"nuclear_spin must be a positive half-integer, got {self.nuclear_spin}")

    @property
    def dimension(self) -> int:
        return int(round((2 * self.electron_spin + 1) * (2 * self.nuclear_spin + 1)))

    @property
    def F_upper(self) -> int:
        return int(round(self.nuclear_spin + self.electron_spin))

    @property
    def F_lower(self) -> int:
        return int(round(self.nuclear_spin - self.electron_spin))


def spin_operators(j: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Spin-j matrices in the |j, m> basis ordered m = j, j-1, ..., -j.

    Returns:
        (J^z, J^+, J^-) as real arrays
    """
    m = j - np.arange(int(round(2 * j)) + 1)
    jz = np.diag(m)
    # <m+1|J+|m> = sqrt(j(j+1) - m(m+1)), sits one row above the diagonal
    jplus = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), k=1)
    return jz, jplus, jplus.T.copy()


def product_basis(params: DonorParams) -> tuple[np.ndarray, np.ndarray]:
    """(m_S, m_I) of each product-basis index, electron index major."""
    m_s = params.electron_spin - np.arange(int(round(2 * params.electron_spin)) + 1)
    m_i = params.nuclear_spin - np.arange(int(round(2 * params.nuclear_spin)) + 1)
    ms_grid, mi_grid = np.meshgrid(m_s, m_i, indexing="ij")
    return ms_grid.ravel(), mi_grid.ravel()


def build_hamiltonian(params: DonorParams, B: float) -> np.ndarray:
    """Dense H_cs (rad/s) on the |m_S, m_I> product basis."""
    if B < 0:
        raise ValueError(f"Field must be non-negative, got {B}")
    sz, sp, sm = spin_operators(params.electron_spin)
    iz, ip, im = spin_operators(params.nuclear_spin)
    eye_s = np.eye(sz.shape[0])
    eye_i = np.eye(iz.shape[0])

    s_dot_i = np.kron(sz, iz) + 0.5 * (np.kron(sp, im) + np.kron(sm, ip))
    return (params.gamma_e * B * np.kron(sz, eye_i)
            - params.gamma_n_host * B * np.kron(eye_s, iz)
            + params.A0 * s_dot_i)


def dense_eigenvalues(params: DonorParams, B: float) -> np.ndarray:
    """Sorted eigenvalues from full diagonalization, for cross-checking the block solver."""
    return np.linalg.eigvalsh(build_hamiltonian(params, B))


def _solve_2x2(a: float, b: float, c: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Closed-form eigensystem of [[a, c], [c, b]].

    Returns:
        (energies ascending, eigenvectors as columns)
    """
    mean = 0.5 * (a + b)
    half_gap = np.hypot(0.5 * (a - b), c)
    if 2 * half_gap <= CROSSING_TOLERANCE * max(abs(a), abs(b), abs(c), 1.0):
        raise LevelCrossingError(f"Degenerate m_F block: diagonal ({a}, {b}), coupling {c}")
    theta = 0.5 * np.arctan2(2 * c, a - b)
    upper = np.array([np.cos(theta), np.sin(theta)])
    lower = np.array([-np.sin(theta), np.cos(theta)])
    return np.array([mean - half_gap, mean + half_gap]), np.column_stack([lower, upper])


@dataclasses.dataclass
class LevelSet:
    """Donor eigenstates at one field, ordered by m_F block then energy."""
    field_B: float
    energies: np.ndarray
    states: np.ndarray
    labels: list[LevelLabel]
    Sz: np.ndarray
    Iz: np.ndarray

    def index_of(self, label: LevelLabel) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabelError(f"No level {label} at B = {tesla_to_mt(self.field_B):.4f} mT") from None

    def energy(self, label: LevelLabel) -> float:
        return float(self.energies[self.index_of(label)])

    def state(self, label: LevelLabel) -> np.ndarray:
        return self.states[:, self.index_of(label)]


def eigensystem(params: DonorParams, B: float) -> LevelSet:
    """
    Diagonalize H_cs in m_F blocks and assign adiabatic |F, m_F> labels.

    Two-state blocks: the lower eigenvalue is F = I - 1/2, the upper F = I + 1/2 (the 2x2 gap never
    closes, so the ordering is fixed by continuity from B = 0). The stretched states are labelled by
    their high-field manifold: m_F = +(I + 1/2) -> F = I + 1/2 and m_F = -(I + 1/2) -> F = I - 1/2.
    """
    H = build_hamiltonian(params, B)
    m_s, m_i = product_basis(params)
    m_f = m_s + m_i
    dim = params.dimension

    energies = np.zeros(dim)
    states = np.zeros((dim, dim))
    labels: list[LevelLabel] = []
    col = 0
    for block_mf in np.unique(m_f):
        idx = np.flatnonzero(m_f == block_mf)
        mf_int = int(round(block_mf))
        if len(idx) == 1:
            energies[col] = H[idx[0], idx[0]]
            states[idx[0], col] = 1.0
            F = params.F_upper if mf_int > 0 else params.F_lower
            labels.append(LevelLabel(F, mf_int))
            col += 1
            continue
        a, b, c = H[idx[0], idx[0]], H[idx[1], idx[1]], H[idx[0], idx[1]]
        block_energies, block_vectors = _solve_2x2(a, b, c)
        for k, F in enumerate((params.F_lower, params.F_upper)):
            energies[col] = block_energies[k]
            states[idx, col] = block_vectors[:, k]
            labels.append(LevelLabel(F, mf_int))
            col += 1

    probabilities = states ** 2
    return LevelSet(
        field_B=B,
        energies=energies,
        states=states,
        labels=labels,
        Sz=m_s @ probabilities,
        Iz=m_i @ probabilities,
    )


@dataclasses.dataclass(frozen=True)
class TransitionPair:
    """The central-spin qubit: two donor eigenstates |+> and |->."""
    plus_label: LevelLabel
    minus_label: LevelLabel
    P_plus: float
    P_minus: float
    frequency: float
    field_B: float = 0.0
    Iz_plus: float = 0.0
    Iz_minus: float = 0.0

    @property
    def P_e(self) -> float:
        return abs(self.P_plus - self.P_minus)

    @property
    def s(self) -> float:
        return abs(self.P_plus) + abs(self.P_minus)

    def df_dB(self, params: DonorParams) -> float:
        """Hellmann-Feynman field derivative of the transition frequency (rad/s/T)."""
        return (params.gamma_e * (self.P_plus - self.P_minus)
                - params.gamma_n_host * (self.Iz_plus - self.Iz_minus))

    def describe(self) -> str:
        return (f"{self.plus_label}<->{self.minus_label} at {tesla_to_mt(self.field_B):.4f} mT: "
                f"P+={self.P_plus:.4f}, P-={self.P_minus:.4f}, f={rad_s_to_ghz(self.frequency):.6f} GHz")


def transition(params: DonorParams, B: float, plus_label: LevelLabel, minus_label: LevelLabel) -> TransitionPair:
    levels = eigensystem(params, B)
    i_plus, i_minus = levels.index_of(plus_label), levels.index_of(minus_label)
    if levels.energies[i_plus] < levels.energies[i_minus]:
        i_plus, i_minus = i_minus, i_plus
        plus_label, minus_label = minus_label, plus_label
    return TransitionPair(
        plus_label=plus_label,
        minus_label=minus_label,
        P_plus=float(levels.Sz[i_plus]),
        P_minus=float(levels.Sz[i_minus]),
        frequency=float(levels.energies[i_plus] - levels.energies[i_minus]),
        field_B=B,
        Iz_plus=float(levels.Iz[i_plus]),
        Iz_minus=float(levels.Iz[i_minus]),
    )


@dataclasses.dataclass(frozen=True)
class ClockTransition:
    """Field where df/dB = 0, with the nearby root of P+ - P- for comparison."""
    field_B: float
    field_P_root: float | None

    @property
    def root_difference(self) -> float | None:
        if self.field_P_root is None:
            return None
        return self.field_P_root - self.field_B


def find_clock_transition(
    params: DonorParams,
    plus_label: LevelLabel,
    minus_label: LevelLabel,
    B_range: tuple[float, float],
    rtol: float = 1e-9,
) -> ClockTransition:
    """
    Locate the clock transition of a level pair by Brent root finding on df/dB.

    Raises:
        NoClockTransitionError: if df/dB has no sign change over B_range
    """
    B_lo, B_hi = B_range

    def df_dB(B: float) -> float:
        return transition(params, B, plus_label, minus_label).df_dB(params)

    def delta_P(B: float) -> float:
        pair = transition(params, B, plus_label, minus_label)
        return pair.P_plus - pair.P_minus

    if np.sign(df_dB(B_lo)) == np.sign(df_dB(B_hi)):
        raise NoClockTransitionError(
            f"df/dB of {plus_label}<->{minus_label} does not change sign on "
            f"[{tesla_to_mt(B_lo):.3f}, {tesla_to_mt(B_hi):.3f}] mT")
    B_ct = optimize.brentq(df_dB, B_lo, B_hi, xtol=1e-15, rtol=rtol)

    B_p = None
    if np.sign(delta_P(B_lo)) != np.sign(delta_P(B_hi)):
        B_p = optimize.brentq(delta_P, B_lo, B_hi, xtol=1e-15, rtol=rtol)

    logger.info(f"Clock transition {plus_label}<->{minus_label} at {tesla_to_mt(B_ct):.4f} mT"
                + ("" if B_p is None else f" (P+ = P- at {tesla_to_mt(B_p):.4f} mT)"))
    return ClockTransition(field_B=float(B_ct), field_P_root=None if B_p is None else float(B_p))


def level_table(params: DonorParams, fields_B: Iterable[float]) -> pd.DataFrame:
    """Energies and <S^z> of all levels at each field, columns B_mT, label, energy_GHz, P."""
    rows = []
    for B in fields_B:
        levels = eigensystem(params, B)
        for label, energy, p in zip(levels.labels, levels.energies, levels.Sz):
            rows.append({
                "B_mT": tesla_to_mt(B),
                "label": str(label),
                "energy_GHz": rad_s_to_ghz(energy),
                "P": p,
            })
    return pd.DataFrame(rows, columns=["B_mT", "label", "energy_GHz", "P"])
