import numpy as np
from pathlib import Path
from scipy import constants


def repo_root_path() -> Path:
    """Get the root path of the spinbath repo."""
    repo_root = Path(__file__).parent
    # Look for pyproject.toml
    while not (repo_root / "pyproject.toml").exists():
        repo_root = repo_root.parent
        if repo_root == repo_root.parent:
            # Fallback: assume we're in src/spinbath, so go up 2 levels
            return Path(__file__).parent.parent.parent
    return repo_root

REPO_ROOT_PATH: Path = repo_root_path()
DATA_FOLDER_PATH: Path = REPO_ROOT_PATH / "data"
PRESETS_FOLDER_PATH: Path = DATA_FOLDER_PATH / "presets"

TWO_PI = 2.0 * np.pi

# Silicon lattice constant (m)
SI_LATTICE_CONSTANT = 5.431e-10

# 29Si gyromagnetic ratio (rad/s/T), gamma/2pi = -8.465 MHz/T
GAMMA_SI29 = -TWO_PI * 8.465e6

# mu0/(4 pi) * hbar, the only SI prefactor of the dipolar coupling (m^3 rad/s per (rad/s/T)^2)
DIPOLAR_SI_PREFACTOR = constants.mu_0 / (4.0 * np.pi) * constants.hbar


def ghz_to_rad_s(value_ghz: float) -> float:
    return TWO_PI * value_ghz * 1e9


def rad_s_to_ghz(value: float | np.ndarray) -> float | np.ndarray:
    return value / TWO_PI / 1e9


def rad_s_to_khz(value: float | np.ndarray) -> float | np.ndarray:
    return value / TWO_PI / 1e3


def khz_to_rad_s(value: float | np.ndarray) -> float | np.ndarray:
    return TWO_PI * value * 1e3


def mt_to_tesla(value_mt: float) -> float:
    return value_mt * 1e-3


def tesla_to_mt(value_t: float) -> float:
    return value_t * 1e3

