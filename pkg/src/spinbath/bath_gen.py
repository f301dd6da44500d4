"""
29Si bath configurations on the silicon diamond lattice.

Sites are FCC translations plus the two-atom basis, in units of a0:
    r = b * (1,1,1)/4 + l * (0,1,1)/2 + m * (1,0,1)/2 + n * (1,1,0)/2,   b in {0, 1}
The donor sits on the origin site, which is never occupied by a bath spin.

Seed splitting: a configuration's seeds are derived from (root_seed, configuration index, stream)
through numpy's SeedSequence spawn keys, see child_seed().
"""
import dataclasses
import enum
import functools
import logging
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np
import pandas as pd

from .common import DIPOLAR_SI_PREFACTOR, GAMMA_SI29, SI_LATTICE_CONSTANT, TWO_PI, khz_to_rad_s, rad_s_to_khz
from .errors import BathGenerationError, CoincidentSitesError, HyperfineTableError

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1

BASIS_OFFSET = np.array([1.0, 1.0, 1.0]) / 4
FCC_VECTORS = np.array([
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
]) / 2

SITE_TABLE_COLUMNS = ["x_nm", "y_nm", "z_nm", "A_kHz"]


class SeedStream(enum.IntEnum):
    PLACEMENT = 0
    FROZEN_STATES = 1


def child_seed(root_seed: int, index: int, stream: SeedStream) -> int:
    """64-bit seed for one configuration and one random stream."""
    sequence = np.random.SeedSequence(entropy=root_seed & SEED_MASK, spawn_key=(index, int(stream)))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclasses.dataclass(frozen=True)
class LatticeSpec:
    a0: float = SI_LATTICE_CONSTANT
    cutoff_radius: float = 4.5e-9
    abundance: float = 0.047

    def __post_init__(self):
        if not 0 < self.abundance <= 1:
            raise ValueError(f"abundance must be in (0, 1], got {self.abundance}")
        if self.cutoff_radius <= 0:
            raise ValueError(f"cutoff_radius must be positive, got {self.cutoff_radius}")
        if self.a0 <= 0:
            raise ValueError(f"a0 must be positive, got {self.a0}")


@dataclasses.dataclass(frozen=True)
class FieldOrientation:
    """Direction of B in the crystal frame."""
    direction: tuple[float, float, float]

    def __post_init__(self):
        vec = np.asarray(self.direction, dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ValueError("Field direction must be non-zero")
        object.__setattr__(self, "direction", tuple(float(v) for v in vec / norm))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.direction)

    @classmethod
    def from_theta(cls, theta_deg: float) -> "FieldOrientation":
        """Angle from [001] towards [110] in the (1-10) plane."""
        theta = np.deg2rad(theta_deg)
        return cls((np.sin(theta) / np.sqrt(2), np.sin(theta) / np.sqrt(2), np.cos(theta)))

    @classmethod
    def parse(cls, text: str) -> "FieldOrientation":
        """
        Parse "001", "111", "110", "theta:<deg>" or "vec:h,k,l".
        """
        text = text.strip().lower()
        if text in ("001", "111", "110"):
            return cls(tuple(float(c) for c in text))
        if text.startswith("theta:"):
            return cls.from_theta(float(text.removeprefix("theta:")))
        if text.startswith("vec:"):
            components = [float(c) for c in text.removeprefix("vec:").split(",")]
            if len(components) != 3:
                raise ValueError(f"Orientation vector needs 3 components: '{text}'")
            return cls(tuple(components))
        raise ValueError(f"Unknown orientation: '{text}'")


class HyperfineModel(ABC):
    """Contact hyperfine coupling A_i of a bath site (rad/s)."""

    @abstractmethod
    def couplings(self, positions: np.ndarray) -> np.ndarray:
        raise NotImplementedError("couplings must be implemented by subclass")


@dataclasses.dataclass(frozen=True)
class IsotropicEnvelope(HyperfineModel):
    """A(r) = A_max exp(-2 r / r_B)."""
    A_max: float = TWO_PI * 1.0e6
    r_B: float = 1.5e-9

    def couplings(self, positions: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(positions, axis=1)
        if np.any(r == 0):
            raise BathGenerationError("The donor site at the origin is not a bath site")
        return self.A_max * np.exp(-2.0 * r / self.r_B)


class HyperfineTable(HyperfineModel):
    """Site table read from CSV (x_nm, y_nm, z_nm, A_kHz); positions matched to 1e-6 nm."""

    def __init__(self, filepath: Path):
        self.filepath = Path(filepath)
        table = read_site_table(self.filepath)
        keys = [self._key(row) for row in table[["x_nm", "y_nm", "z_nm"]].to_numpy()]
        self._lookup = dict(zip(keys, khz_to_rad_s(table["A_kHz"].to_numpy())))

    @staticmethod
    def _key(position_nm: np.ndarray) -> tuple[float, float, float]:
        # +0.0 folds -0.0 into 0.0
        return tuple(float(v) + 0.0 for v in np.round(position_nm, 6))

    def couplings(self, positions: np.ndarray) -> np.ndarray:
        values = np.empty(len(positions))
        for k, position in enumerate(positions):
            key = self._key(position * 1e9)
            if key not in self._lookup:
                raise HyperfineTableError(f"No hyperfine entry for site {key} nm in {self.filepath}")
            values[k] = self._lookup[key]
        return values


def hyperfine_map(positions: np.ndarray, model: HyperfineModel) -> np.ndarray:
    return model.couplings(np.asarray(positions, dtype=np.float64))


@functools.lru_cache(maxsize=8)
def _diamond_sites(a0: float, cutoff_radius: float) -> np.ndarray:
    n_max = int(np.ceil(2 * cutoff_radius / a0)) + 1
    span = np.arange(-n_max, n_max + 1)
    l, m, n = np.meshgrid(span, span, span, indexing="ij")
    fcc = np.stack([l.ravel(), m.ravel(), n.ravel()], axis=1) @ FCC_VECTORS
    sites = np.concatenate([fcc, fcc + BASIS_OFFSET]) * a0

    radius = np.linalg.norm(sites, axis=1)
    keep = (radius > 0) & (radius <= cutoff_radius)
    sites, radius = sites[keep], radius[keep]
    # canonical order: by shell, then lexicographic within the shell
    order = np.lexsort((sites[:, 2], sites[:, 1], sites[:, 0], np.round(radius / a0, 9)))
    sites = sites[order]
    sites.setflags(write=False)
    return sites


def diamond_sites(spec: LatticeSpec) -> np.ndarray:
    """All lattice sites within the cutoff sphere except the origin, in canonical order (m)."""
    return _diamond_sites(spec.a0, spec.cutoff_radius)


def dipolar_coupling(r_i: np.ndarray, r_j: np.ndarray, orientation: FieldOrientation,
                     gamma: float = GAMMA_SI29) -> float:
    """D_ij = gamma^2 (3 cos^2 theta - 1) / (4 |R|^3) in rad/s."""
    R = np.asarray(r_j, dtype=np.float64) - np.asarray(r_i, dtype=np.float64)
    distance = np.linalg.norm(R)
    if distance == 0:
        raise CoincidentSitesError(f"Sites coincide at {np.asarray(r_i)}")
    cos_theta = R @ orientation.vector / distance
    return float(DIPOLAR_SI_PREFACTOR * gamma ** 2 * (3 * cos_theta ** 2 - 1) / (4 * distance ** 3))


def dipolar_matrix(positions: np.ndarray, orientation: FieldOrientation,
                   gamma: float = GAMMA_SI29) -> np.ndarray:
    """Symmetric matrix of D_ij with a zero diagonal."""
    R = positions[None, :, :] - positions[:, None, :]
    distance = np.linalg.norm(R, axis=-1)
    np.fill_diagonal(distance, np.inf)
    if np.any(distance == 0):
        raise CoincidentSitesError("Bath contains duplicated sites")
    cos_theta = (R @ orientation.vector) / distance
    return DIPOLAR_SI_PREFACTOR * gamma ** 2 * (3 * cos_theta ** 2 - 1) / (4 * distance ** 3)


@dataclasses.dataclass
class BathConfiguration:
    """One random placement of 29Si spins around the donor."""
    seed: int
    positions: np.ndarray
    A: np.ndarray
    orientation: FieldOrientation
    gamma: float = GAMMA_SI29

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.A = np.asarray(self.A, dtype=np.float64)
        if len(self.A) != len(self.positions):
            raise ValueError(f"{len(self.positions)} positions but {len(self.A)} hyperfine couplings")

    @property
    def n_spins(self) -> int:
        return len(self.positions)

    @functools.cached_property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.positions[None, :, :] - self.positions[:, None, :], axis=-1)

    @functools.cached_property
    def D(self) -> np.ndarray:
        return dipolar_matrix(self.positions, self.orientation, self.gamma)

    def with_orientation(self, orientation: FieldOrientation) -> "BathConfiguration":
        return BathConfiguration(self.seed, self.positions, self.A, orientation, self.gamma)


def generate_bath(
    spec: LatticeSpec,
    seed: int,
    orientation: FieldOrientation,
    hyperfine: HyperfineModel | None = None,
) -> BathConfiguration:
    """
    Occupy every lattice site within the cutoff independently with probability `abundance`.

    Raises:
        BathGenerationError: if the cutoff sphere holds no lattice site
    """
    sites = diamond_sites(spec)
    if len(sites) == 0:
        raise BathGenerationError(
            f"No lattice site within cutoff {spec.cutoff_radius * 1e9:.4f} nm (a0 = {spec.a0 * 1e9:.4f} nm)")
    rng = np.random.default_rng(seed & SEED_MASK)
    occupied = rng.random(len(sites)) < spec.abundance
    positions = sites[occupied].copy()
    A = hyperfine_map(positions, hyperfine if hyperfine is not None else IsotropicEnvelope())
    logger.debug(f"Bath seed {seed}: {len(positions)} spins out of {len(sites)} sites")
    return BathConfiguration(seed=seed, positions=positions, A=A, orientation=orientation)


def site_table(bath: BathConfiguration) -> pd.DataFrame:
    positions_nm = bath.positions * 1e9
    return pd.DataFrame({
        "x_nm": positions_nm[:, 0],
        "y_nm": positions_nm[:, 1],
        "z_nm": positions_nm[:, 2],
        "A_kHz": rad_s_to_khz(bath.A),
    }, columns=SITE_TABLE_COLUMNS)


def read_site_table(filepath: Path) -> pd.DataFrame:
    table = pd.read_csv(filepath, comment="#")
    missing = [c for c in SITE_TABLE_COLUMNS if c not in table.columns]
    if missing:
        raise HyperfineTableError(f"{filepath} lacks columns {missing}")
    return table


def bath_from_site_table(filepath: Path, orientation: FieldOrientation, seed: int = 0) -> BathConfiguration:
    """Rebuild a bath from a site table (the output format of `spinbath-ct bath`)."""
    table = read_site_table(filepath)
    positions = table[["x_nm", "y_nm", "z_nm"]].to_numpy() * 1e-9
    return BathConfiguration(seed=seed, positions=positions, A=khz_to_rad_s(table["A_kHz"].to_numpy()),
                             orientation=orientation)
