"""
Semiclassical Gaussian noise model of the nuclear-spin bath.

In this model the coherence is L = exp(-P_e^2 chi / 2) with

    chi = int_0^T int_0^T C(t1 - t2) f(t1) f(t2) dt1 dt2                       (time domain)
        = 1/pi int_0^inf S(w) F(w T) / w^2 dw  +  C_static (T int f)^2          (frequency domain)

S(w) = int e^{i w t} C(t) dt is the two-sided spectrum of the dynamic part of C; a constant part C_static
is carried as a delta at w = 0.

Time domain: with f' = -sum_j g_j delta(t - T tau_j) and K(u) = int_0^u (u - v) C(v) dv (so K'' = C, K even),
two integrations by parts give chi = -sum_{j,l} g_j g_l K(T |tau_j - tau_l|). Every model exposes K.
"""
import dataclasses
import logging
from abc import ABC, abstractmethod
from collections.abc import Callable

import numpy as np
import pandas as pd
from scipy import integrate, optimize, special

from .bath_gen import BathConfiguration
from .cce_engine import CCEOptions, enumerate_clusters, pair_correlation_oracle
from .dd_sequences import PulseSequence, filter_function
from .donor_levels import TransitionPair
from .errors import QuadratureError, UnresolvedFilterError
from .types import LINE_CHUNK_ELEMENTS, AmplitudeMode, CorrelationCurve, CorrelationLines, Extrapolation, QualityFlag

logger = logging.getLogger(__name__)

PAIR_TABLE_COLUMNS = ["i", "j", "Z_rad_s", "D_rad_s", "omega_rad_s", "amplitude_scaled", "amplitude_oracle"]

# quadrature of K for models that only provide C(v)
QUAD_CELLS = 64
QUAD_ORDER = 16
QUAD_RTOL = 1e-9
QUAD_CHUNK = 256

# frequency-domain integration
FREQ_ORDER = 8
OMEGA_SPAN = 200.0
MAX_CELLS = 2_000_000
# log-spaced cells per e-fold where the filter is replaced by its mean
AVERAGED_CELLS_PER_E = 16

TAIL_FIT_POINTS = 5
# fitted tail exponents below this are flat (white) tails
FLAT_TAIL_EXPONENT = 1e-6
NEGATIVE_TOLERANCE = 1e-6


# ---------------------------------------------------------------------------
# Pairwise flip-flop correlation
# ---------------------------------------------------------------------------

def pair_terms(bath: BathConfiguration, transition: TransitionPair, options: CCEOptions | None = None) -> pd.DataFrame:
    """
    Pseudospin parameters of every connected pair.

    Z = s (A_i - A_j) / 4 is the flip-flop energy cost, omega = 2 sqrt(Z^2 + D^2). The scaled amplitude is
    2 Z^2 D^2 / (Z^2 + D^2); the oracle-derived one (A_i - A_j)^2 D^2 / (8 (Z^2 + D^2)).
    """
    options = dataclasses.replace(options if options is not None else CCEOptions(), max_order=2)
    pairs = np.array([c for c in enumerate_clusters(bath, options) if len(c) == 2], dtype=np.int64).reshape(-1, 2)
    i, j = pairs[:, 0], pairs[:, 1]
    dA = bath.A[i] - bath.A[j]
    Z = transition.s * dA / 4
    D = bath.D[i, j]
    norm = Z ** 2 + D ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(norm > 0, 2 * Z ** 2 * D ** 2 / norm, 0.0)
        oracle = np.where(norm > 0, dA ** 2 * D ** 2 / (8 * norm), 0.0)
    return pd.DataFrame({
        "i": i,
        "j": j,
        "Z_rad_s": Z,
        "D_rad_s": D,
        "omega_rad_s": 2 * np.sqrt(norm),
        "amplitude_scaled": scaled,
        "amplitude_oracle": oracle,
    }, columns=PAIR_TABLE_COLUMNS)


def pair_flipflop_lines(
    bath: BathConfiguration,
    transition: TransitionPair,
    options: CCEOptions | None = None,
    mode: AmplitudeMode = AmplitudeMode.ORACLE,
) -> CorrelationLines:
    """One line per connected pair at its pseudospin gap, C(0) = sum_i A_i^2 / 4."""
    terms = pair_terms(bath, transition, options)
    amplitude = terms["amplitude_scaled" if mode == AmplitudeMode.SCALED else "amplitude_oracle"].to_numpy()
    return CorrelationLines(C0=np.sum(bath.A ** 2) / 4, omegas=terms["omega_rad_s"].to_numpy(), amplitudes=amplitude,
                            metadata={"seed": bath.seed, "n_spins": bath.n_spins, "amplitude_mode": str(mode)})


def pair_flipflop_correlation(
    bath: BathConfiguration,
    transition: TransitionPair,
    t: float | np.ndarray,
    options: CCEOptions | None = None,
    mode: AmplitudeMode = AmplitudeMode.ORACLE,
) -> float | np.ndarray:
    """C(t) = C(0) + sum_pairs amplitude (cos(omega t) - 1), C(0) = sum_i A_i^2 / 4."""
    return pair_flipflop_lines(bath, transition, options, mode).value(t)


def pair_amplitude_report(
    bath: BathConfiguration,
    transition: TransitionPair,
    options: CCEOptions | None = None,
) -> pd.DataFrame:
    """Analytic pair terms next to the dense pair oracle, with the scaled/oracle amplitude ratio."""
    table = pair_terms(bath, transition, options)
    oracles = [pair_correlation_oracle(bath.A[i], bath.A[j], D, transition.s)
               for i, j, D in zip(table["i"], table["j"], table["D_rad_s"])]
    table["omega_oracle_rad_s"] = [o.omega for o in oracles]
    table["amplitude_dense"] = [o.amplitude for o in oracles]
    with np.errstate(divide="ignore", invalid="ignore"):
        table["ratio_scaled_to_oracle"] = table["amplitude_scaled"] / table["amplitude_oracle"]
    if len(table):
        ratio = np.nanmedian(table["ratio_scaled_to_oracle"].replace([np.inf, -np.inf], np.nan))
        logger.warning(f"Scaled pair amplitudes differ from the oracle-derived ones by a median factor of "
                       f"{ratio:.4g} (s^2 = {transition.s ** 2:.4g}) over {len(table)} pairs")
    return table


# ---------------------------------------------------------------------------
# Correlation models (time domain)
# ---------------------------------------------------------------------------

class CorrelationModel(ABC):
    """Stationary correlation C(t) = C(-t) of a classical Gaussian noise."""

    @abstractmethod
    def value(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError("value must be implemented by subclass")

    @property
    def static_part(self) -> float:
        """C(t -> inf)."""
        return 0.0

    def second_antiderivative(self, u: np.ndarray) -> np.ndarray:
        """
        K(u) = int_0^|u| (|u| - v) C(v) dv by graded Gauss-Legendre quadrature, checked against one refinement.

        Raises:
            QuadratureError: if the refinement changes K beyond QUAD_RTOL or the integrand is not finite
        """
        u_arr = np.abs(np.asarray(u, dtype=np.float64))
        flat = u_arr.ravel()
        result = np.empty(len(flat))
        for start in range(0, len(flat), QUAD_CHUNK):
            chunk = flat[start:start + QUAD_CHUNK]
            coarse, scale = _k_quadrature(self.value, chunk, QUAD_CELLS)
            fine, _ = _k_quadrature(self.value, chunk, 2 * QUAD_CELLS)
            if not np.all(np.isfinite(fine)) or not np.all(np.isfinite(coarse)):
                raise QuadratureError(f"{type(self).__name__}: non-finite correlation values in the quadrature")
            error = np.abs(fine - coarse)
            if np.any(error > QUAD_RTOL * scale):
                worst = int(np.argmax(error / np.maximum(scale, np.finfo(float).tiny)))
                raise QuadratureError(f"{type(self).__name__}: K({chunk[worst]:.6g}) did not converge "
                                      f"(change {error[worst]:.3g} after refinement)")
            result[start:start + QUAD_CHUNK] = fine
        return result.reshape(u_arr.shape)


def _k_quadrature(func: Callable[[np.ndarray], np.ndarray], u: np.ndarray, cells: int) -> tuple[np.ndarray, np.ndarray]:
    """K(u) and int_0^u (u - v) |C(v)| dv on cells graded towards v = 0, all u at once."""
    unit_edges = np.union1d(np.concatenate([[0.0], np.geomspace(1e-6, 1.0, cells)]), np.linspace(0.0, 1.0, cells + 1))
    nodes, weights = np.polynomial.legendre.leggauss(QUAD_ORDER)
    half = 0.5 * np.diff(unit_edges)
    mid = 0.5 * (unit_edges[1:] + unit_edges[:-1])
    unit_v = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    unit_w = (half[:, None] * weights[None, :]).ravel()

    v = np.multiply.outer(u, unit_v)
    w = np.multiply.outer(u, unit_w)
    with np.errstate(invalid="ignore", over="ignore"):
        integrand = (u[:, None] - v) * func(v)
        return np.sum(w * integrand, axis=1), np.sum(w * np.abs(integrand), axis=1)


@dataclasses.dataclass(frozen=True)
class CallableCorrelation(CorrelationModel):
    """Wraps any vectorized C(t); K comes from quadrature."""
    func: Callable[[np.ndarray], np.ndarray]
    static: float = 0.0

    def value(self, t: np.ndarray) -> np.ndarray:
        return self.func(np.abs(np.asarray(t, dtype=np.float64)))

    @property
    def static_part(self) -> float:
        return self.static


class SpectralDensity(ABC):
    """Two-sided noise spectrum S(w) = S(-w) (rad^2/s), with a separate delta weight at w = 0."""

    @abstractmethod
    def __call__(self, omega: np.ndarray) -> np.ndarray:
        raise NotImplementedError("__call__ must be implemented by subclass")

    @property
    def static_weight(self) -> float:
        """Weight of 2 pi static_weight delta(w) in S."""
        return 0.0

    @property
    def knots(self) -> np.ndarray:
        """Frequencies where S changes character; used as integration cell edges."""
        return np.empty(0)

    @property
    def resolution(self) -> float:
        """Smallest frequency scale of S."""
        return np.inf

    @property
    def band_limit(self) -> float:
        """Frequency beyond which S follows its asymptotic tail."""
        return 0.0

    @property
    def tail_exponent(self) -> float | None:
        """p such that S ~ w^-p beyond band_limit; None when S vanishes there."""
        return None

    def total_power(self) -> float:
        """1/(2 pi) int S dw + static weight, equal to C(0)."""
        dynamic, _ = integrate.quad(lambda w: float(self(np.array([w]))[0]), 0.0, np.inf, limit=500)
        return dynamic / np.pi + self.static_weight


@dataclasses.dataclass(frozen=True)
class StaticNoise(CorrelationModel, SpectralDensity):
    """C(t) = C0: quasi-static, refocused by any echo."""
    C0: float

    def value(self, t):
        return np.full(np.shape(t), self.C0, dtype=np.float64)

    @property
    def static_part(self) -> float:
        return self.C0

    def second_antiderivative(self, u):
        return self.C0 * np.asarray(u, dtype=np.float64) ** 2 / 2

    def __call__(self, omega):
        return np.zeros(np.shape(omega))

    @property
    def static_weight(self) -> float:
        return self.C0

    def total_power(self) -> float:
        return self.C0


@dataclasses.dataclass(frozen=True)
class WhiteNoise(CorrelationModel, SpectralDensity):
    """C(t) = S0 delta(t), S(w) = S0."""
    S0: float

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(t == 0, np.inf, 0.0)

    def second_antiderivative(self, u):
        return self.S0 * np.abs(np.asarray(u, dtype=np.float64)) / 2

    def __call__(self, omega):
        return np.full(np.shape(omega), self.S0, dtype=np.float64)

    @property
    def tail_exponent(self) -> float | None:
        return 0.0

    def total_power(self) -> float:
        return np.inf


@dataclasses.dataclass(frozen=True)
class NarrowBandNoise(CorrelationModel, SpectralDensity):
    """Damped oscillation C(t) = Delta^2 e^{-gamma |t|} cos(omega_c t), a Lorentzian line at +-omega_c."""
    Delta: float
    gamma: float
    omega_c: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def value(self, t):
        t = np.abs(np.asarray(t, dtype=np.float64))
        return self.Delta ** 2 * np.exp(-self.gamma * t) * np.cos(self.omega_c * t)

    def second_antiderivative(self, u):
        u = np.abs(np.asarray(u, dtype=np.float64))
        kappa = self.gamma - 1j * self.omega_c
        z = kappa * u
        small = np.abs(z) < 1e-3
        with np.errstate(invalid="ignore", divide="ignore"):
            exact = (np.exp(-z) - 1 + z) / kappa ** 2
        series = u ** 2 * (0.5 - z / 6 + z ** 2 / 24)
        return self.Delta ** 2 * np.real(np.where(small, series, exact))

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=np.float64)
        g = self.gamma
        return self.Delta ** 2 * (g / (g ** 2 + (omega - self.omega_c) ** 2) + g / (g ** 2 + (omega + self.omega_c) ** 2))

    @property
    def knots(self) -> np.ndarray:
        offsets = np.array([-5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0]) * self.gamma
        knots = self.omega_c + offsets
        return knots[knots > 0]

    @property
    def resolution(self) -> float:
        return self.gamma

    @property
    def band_limit(self) -> float:
        return 10.0 * (self.omega_c + self.gamma)

    @property
    def tail_exponent(self) -> float | None:
        return 2.0

    def total_power(self) -> float:
        return self.Delta ** 2


class LorentzianNoise(NarrowBandNoise):
    """Ornstein-Uhlenbeck noise C(t) = Delta^2 e^{-|t|/tau}, S(w) = 2 Delta^2 tau / (1 + w^2 tau^2)."""

    def __init__(self, Delta: float, tau: float):
        super().__init__(Delta=Delta, gamma=1.0 / tau, omega_c=0.0)

    @property
    def tau(self) -> float:
        return 1.0 / self.gamma


@dataclasses.dataclass(frozen=True)
class GaussianShapedNoise(CorrelationModel, SpectralDensity):
    """C(t) = Delta^2 e^{-t^2/tau^2}, S(w) = Delta^2 tau sqrt(pi) e^{-w^2 tau^2 / 4}."""
    Delta: float
    tau: float

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.Delta ** 2 * np.exp(-(t / self.tau) ** 2)

    def second_antiderivative(self, u):
        u = np.abs(np.asarray(u, dtype=np.float64))
        tau = self.tau
        return self.Delta ** 2 * (tau * np.sqrt(np.pi) / 2 * u * special.erf(u / tau)
                                  + tau ** 2 / 2 * (np.exp(-(u / tau) ** 2) - 1))

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=np.float64)
        return self.Delta ** 2 * self.tau * np.sqrt(np.pi) * np.exp(-(omega * self.tau) ** 2 / 4)

    @property
    def resolution(self) -> float:
        return 1.0 / self.tau

    @property
    def band_limit(self) -> float:
        # S(band_limit) / S(0) = e^-36
        return 12.0 / self.tau

    def total_power(self) -> float:
        return self.Delta ** 2


@dataclasses.dataclass(frozen=True)
class StretchedExpNoise(CorrelationModel):
    """C(t) = static + Delta^2 exp(-(|t|/tau)^n); K in closed form through regularized incomplete gammas."""
    Delta: float
    tau: float
    n: float
    static: float = 0.0

    def value(self, t):
        t = np.abs(np.asarray(t, dtype=np.float64))
        return self.static + self.Delta ** 2 * np.exp(-(t / self.tau) ** self.n)

    @property
    def static_part(self) -> float:
        return self.static

    def second_antiderivative(self, u):
        u = np.abs(np.asarray(u, dtype=np.float64))
        if not np.isfinite(self.tau):
            return (self.static + self.Delta ** 2) * u ** 2 / 2
        n, tau = self.n, self.tau
        x = (u / tau) ** n
        first = tau / n * special.gamma(1 / n) * special.gammainc(1 / n, x)
        second = tau ** 2 / n * special.gamma(2 / n) * special.gammainc(2 / n, x)
        return self.static * u ** 2 / 2 + self.Delta ** 2 * (u * first - second)


class SampledCorrelation(CorrelationModel):
    """Piecewise-linear C(t) through the samples of a curve, held constant beyond the last sample."""

    def __init__(self, curve: CorrelationCurve):
        self.times = curve.times
        self.values = curve.values
        h = np.diff(self.times)
        a, b = self.times[:-1], self.times[1:]
        ca, cb = self.values[:-1], self.values[1:]
        # exact segment integrals of C and v C for a linear C
        self._cum0 = np.concatenate([[0.0], np.cumsum(h * (ca + cb) / 2)])
        self._cum1 = np.concatenate([[0.0], np.cumsum(h / 6 * ((2 * a + b) * ca + (a + 2 * b) * cb))])

    def value(self, t):
        return np.interp(np.abs(np.asarray(t, dtype=np.float64)), self.times, self.values)

    @property
    def static_part(self) -> float:
        return float(self.values[-1])

    def second_antiderivative(self, u):
        u = np.abs(np.asarray(u, dtype=np.float64))
        k = np.clip(np.searchsorted(self.times, u, side="right") - 1, 0, len(self.times) - 1)
        a, ca = self.times[k], self.values[k]
        cu = self.value(u)
        h = u - a
        I0 = self._cum0[k] + h * (ca + cu) / 2
        I1 = self._cum1[k] + h / 6 * ((2 * a + u) * ca + (a + 2 * u) * cu)
        return u * I0 - I1


class LineNoise(CorrelationModel):
    """
    C(t) = C_static + sum_k a_k cos(w_k t): discrete lines at +-w_k plus a static part.

    chi has the closed form sum_k a_k F(w_k T) / w_k^2 + C_static (T int f)^2 in both domains.
    """

    def __init__(self, lines: CorrelationLines):
        self.lines = lines

    def value(self, t):
        return self.lines.value(np.abs(np.asarray(t, dtype=np.float64)))

    @property
    def static_part(self) -> float:
        return self.lines.static

    def second_antiderivative(self, u):
        # a (1 - cos w u) / w^2 = a u^2 sinc^2(w u / 2 pi) / 2
        u = np.abs(np.asarray(u, dtype=np.float64))
        flat = u.ravel()
        total = np.full(len(flat), self.static_part)
        omegas, amplitudes = self.lines.omegas, self.lines.amplitudes
        chunk = max(1, LINE_CHUNK_ELEMENTS // max(len(flat), 1))
        for start in range(0, len(omegas), chunk):
            x = np.multiply.outer(flat, omegas[start:start + chunk]) / (2 * np.pi)
            total += np.sinc(x) ** 2 @ amplitudes[start:start + chunk]
        return (flat ** 2 * total / 2).reshape(u.shape)

    def dephasing(self, seq: PulseSequence, t_total: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t_total, dtype=np.float64))
        omegas, amplitudes = self.lines.omegas, self.lines.amplitudes
        chi = self.static_part * (t * seq.net_area) ** 2
        chunk = max(1, LINE_CHUNK_ELEMENTS // len(t))
        for start in range(0, len(omegas), chunk):
            w = omegas[start:start + chunk]
            x = np.multiply.outer(t, w)
            with np.errstate(divide="ignore", invalid="ignore"):
                weight = np.where(x > 0, filter_function(seq, x) / np.where(w > 0, w, 1.0) ** 2,
                                  (t[:, None] * seq.net_area) ** 2)
            chi += weight @ amplitudes[start:start + chunk]
        return np.maximum(chi, 0.0)


# ---------------------------------------------------------------------------
# Stretched-exponential fit
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class StretchedExpFit:
    """C(t) = C0 + Delta^2 (exp(-(|t|/tau)^n) - 1)."""
    Delta: float
    tau: float
    n_stretch: float
    C0: float
    residual_rms: float
    flags: set[QualityFlag] = dataclasses.field(default_factory=set)

    @property
    def C_inf(self) -> float:
        return self.C0 - self.Delta ** 2

    def value(self, t: float | np.ndarray) -> float | np.ndarray:
        t = np.abs(np.asarray(t, dtype=np.float64))
        if not np.isfinite(self.tau):
            return self.C0 + 0.0 * t
        return self.C0 + self.Delta ** 2 * (np.exp(-(t / self.tau) ** self.n_stretch) - 1.0)

    def to_model(self) -> StretchedExpNoise:
        return StretchedExpNoise(Delta=self.Delta, tau=self.tau, n=self.n_stretch, static=self.C_inf)


N_BOUNDS = (0.3, 6.0)
N_RESTARTS = (0.5, 1.0, 2.0)
CONSTANT_TOLERANCE = 1e-12


def fit_stretched_exponential(curve: CorrelationCurve, max_iterations: int = 4000) -> StretchedExpFit:
    """
    Least-squares fit of (Delta, tau, n) with C0 taken from the curve.

    Nelder-Mead restarts from n in {0.5, 1, 2} are polished by a trust-region least-squares step.
    Degenerate or poorly converged fits are flagged, never raised.
    """
    t, C = curve.times, curve.values
    C0 = float(C[0])
    gap = C0 - float(C[-1])
    scale = max(float(np.max(np.abs(C))), np.finfo(float).tiny)

    if gap <= CONSTANT_TOLERANCE * scale:
        rms = float(np.sqrt(np.mean((C - C0) ** 2)))
        logger.warning("Correlation curve does not decay: Delta = 0, tau and n unidentifiable")
        return StretchedExpFit(Delta=0.0, tau=np.inf, n_stretch=1.0, C0=C0, residual_rms=rms,
                               flags={QualityFlag.UNIDENTIFIABLE})

    below = np.flatnonzero(C - C[-1] <= gap / np.e)
    tau0 = float(t[max(int(below[0]), 1)]) if len(below) else float(t[-1])
    t_min = float(t[1]) if len(t) > 1 else tau0

    def unpack(x: np.ndarray) -> tuple[float, float, float]:
        return x[0] * gap, tau0 * np.exp(x[1]), x[2]

    def residuals(x: np.ndarray) -> np.ndarray:
        d2, tau, n = unpack(x)
        return (d2 * (np.exp(-(t / tau) ** n) - 1.0) + C0 - C) / gap

    d2_max = C0 / gap if C0 > 0 else 1.0
    lower = np.array([0.0, np.log(t_min / tau0) - 3.0, N_BOUNDS[0]])
    upper = np.array([d2_max, np.log(t[-1] / tau0) + 5.0, N_BOUNDS[1]])

    best = None
    for n0 in N_RESTARTS:
        start = np.clip(np.array([1.0, 0.0, n0]), lower, upper)
        result = optimize.minimize(lambda x: float(np.sum(residuals(x) ** 2)), start, method="Nelder-Mead",
                                   bounds=list(zip(lower, upper)),
                                   options={"maxiter": max_iterations, "xatol": 1e-12, "fatol": 1e-20})
        if best is None or result.fun < best.fun:
            best = result

    margin = 1e-12 * (upper - lower)
    polish = optimize.least_squares(residuals, np.clip(best.x, lower + margin, upper - margin),
                                    bounds=(lower, upper), method="trf",
                                    xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_iterations)
    if 2 * polish.cost <= best.fun:
        x, converged = polish.x, polish.success or best.success
    else:
        x, converged = best.x, best.success

    d2, tau, n = unpack(x)
    flags = set()
    if not converged:
        flags.add(QualityFlag.NOT_CONVERGED)
    if np.exp(-(t[-1] / tau) ** n) > 0.5:
        flags.add(QualityFlag.NOT_DECAYED)
    fit = StretchedExpFit(Delta=float(np.sqrt(d2)), tau=float(tau), n_stretch=float(n), C0=C0,
                          residual_rms=float(np.sqrt(np.mean((residuals(x) * gap) ** 2))), flags=flags)
    if flags:
        logger.warning(f"Stretched-exponential fit flagged {sorted(flags)}: Delta = {fit.Delta:.4g} rad/s, "
                       f"tau = {fit.tau:.4g} s, n = {fit.n_stretch:.3f}")
    else:
        logger.info(f"Stretched-exponential fit: Delta = {fit.Delta:.4g} rad/s, tau = {fit.tau:.4g} s, "
                    f"n = {fit.n_stretch:.3f}, rms = {fit.residual_rms:.3g}")
    return fit


# ---------------------------------------------------------------------------
# Sampled spectra
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class NoiseSpectrum(SpectralDensity):
    """
    S(w) sampled on a non-negative grid, interpolated log-log (linear where a value is not positive).

    Below the grid S is held at its first value or set to zero; above it either follows a power law
    fitted to the last samples or vanishes.
    """
    omegas: np.ndarray
    values: np.ndarray
    static_weight: float = 0.0
    high_extrapolation: Extrapolation = Extrapolation.POWER_LAW
    low_extrapolation: Extrapolation = Extrapolation.HOLD
    flags: set[QualityFlag] = dataclasses.field(default_factory=set)
    metadata: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.omegas = np.asarray(self.omegas, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.omegas.shape != self.values.shape or self.omegas.ndim != 1 or len(self.omegas) < 2:
            raise ValueError("NoiseSpectrum needs matching 1-d omega and value arrays of length >= 2")
        if np.any(self.omegas < 0) or np.any(np.diff(self.omegas) <= 0):
            raise ValueError("NoiseSpectrum omegas must be non-negative and strictly increasing")
        if self.high_extrapolation not in (Extrapolation.POWER_LAW, Extrapolation.ZERO):
            raise ValueError(f"Unsupported high-frequency extrapolation: {self.high_extrapolation}")
        if self.low_extrapolation not in (Extrapolation.HOLD, Extrapolation.ZERO):
            raise ValueError(f"Unsupported low-frequency extrapolation: {self.low_extrapolation}")
        if np.any(self.values < -NEGATIVE_TOLERANCE * np.max(np.abs(self.values), initial=0.0)):
            self.flags.add(QualityFlag.NEGATIVE_SPECTRUM)
        self._tail = self._fit_tail()

    def _fit_tail(self) -> tuple[float, float] | None:
        if self.high_extrapolation == Extrapolation.ZERO or self.values[-1] <= 0:
            return None
        omegas, values = self.omegas[-TAIL_FIT_POINTS:], self.values[-TAIL_FIT_POINTS:]
        usable = (omegas > 0) & (values > 0)
        if np.sum(usable) < 2:
            return None
        slope, _ = np.polyfit(np.log(omegas[usable]), np.log(values[usable]), 1)
        p = -slope if -slope > FLAT_TAIL_EXPONENT else 0.0
        # anchored on the last sample so S stays continuous at the band edge
        return float(self.values[-1] * self.omegas[-1] ** p), float(p)

    def __call__(self, omega):
        omega = np.abs(np.asarray(omega, dtype=np.float64))
        flat = omega.ravel()
        linear = np.interp(flat, self.omegas, self.values)
        result = linear.copy()

        k = np.clip(np.searchsorted(self.omegas, flat, side="right") - 1, 0, len(self.omegas) - 2)
        w0, w1 = self.omegas[k], self.omegas[k + 1]
        s0, s1 = self.values[k], self.values[k + 1]
        inside = (flat >= self.omegas[0]) & (flat <= self.omegas[-1])
        loglog = inside & (w0 > 0) & (s0 > 0) & (s1 > 0) & (flat > 0)
        if np.any(loglog):
            frac = np.log(flat[loglog] / w0[loglog]) / np.log(w1[loglog] / w0[loglog])
            result[loglog] = s0[loglog] * (s1[loglog] / s0[loglog]) ** frac

        below = flat < self.omegas[0]
        result[below] = self.values[0] if self.low_extrapolation == Extrapolation.HOLD else 0.0
        above = flat > self.omegas[-1]
        if np.any(above):
            result[above] = 0.0 if self._tail is None else self._tail[0] * flat[above] ** (-self._tail[1])
        return result.reshape(omega.shape)

    @property
    def knots(self) -> np.ndarray:
        return self.omegas[self.omegas > 0]

    @property
    def band_limit(self) -> float:
        return float(self.omegas[-1])

    @property
    def tail_exponent(self) -> float | None:
        return None if self._tail is None else self._tail[1]

    def total_power(self) -> float:
        """Trapezoid over a refined grid plus the low-frequency hold and the analytic power-law tail."""
        grid = np.union1d(self.omegas, np.linspace(self.omegas[0], self.omegas[-1], 8 * len(self.omegas)))
        dynamic = integrate.trapezoid(self(grid), grid)
        if self.low_extrapolation == Extrapolation.HOLD:
            dynamic += self.values[0] * self.omegas[0]
        if self._tail is not None:
            a, p = self._tail
            dynamic += np.inf if p <= 1 else a * self.omegas[-1] ** (1 - p) / (p - 1)
        return dynamic / np.pi + self.static_weight

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"omega_rad_s": self.omegas, "S": self.values})


def _cosine_transform_linear(times: np.ndarray, values: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """int_{t_0}^{t_end} y(t) cos(w t) dt exactly for the piecewise-linear interpolant of (times, values)."""
    a, b = times[:-1], times[1:]
    ya, yb = values[:-1], values[1:]
    h = b - a
    slope = (yb - ya) / h
    result = np.empty(len(omegas))
    tiny = omegas * times[-1] < 1e-4
    result[tiny] = np.sum(h * (ya + yb) / 2)
    w = omegas[~tiny][:, None]
    if len(w):
        result[~tiny] = np.sum((yb * np.sin(w * b) - ya * np.sin(w * a)) / w
                               + slope * (np.cos(w * b) - np.cos(w * a)) / w ** 2, axis=1)
    return result


def _stretched_tail_transform(fit: StretchedExpFit, t_start: float, omegas: np.ndarray) -> np.ndarray:
    """int_{t_start}^inf Delta^2 exp(-(t/tau)^n) cos(w t) dt by Gauss-Legendre on half-period cells."""
    if fit.Delta == 0 or not np.isfinite(fit.tau):
        return np.zeros(len(omegas))
    t_end = fit.tau * 40.0 ** (1.0 / fit.n_stretch)
    if t_end <= t_start:
        return np.zeros(len(omegas))
    nodes, weights = np.polynomial.legendre.leggauss(16)
    result = np.empty(len(omegas))
    for k, w in enumerate(omegas):
        width = min(fit.tau / 4, np.pi / w if w > 0 else np.inf)
        edges = np.linspace(t_start, t_end, int(np.ceil((t_end - t_start) / width)) + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        t = mid[:, None] + half[:, None] * nodes[None, :]
        integrand = fit.Delta ** 2 * np.exp(-(t / fit.tau) ** fit.n_stretch) * np.cos(w * t)
        result[k] = np.sum(half[:, None] * weights[None, :] * integrand)
    return result


def spectrum(
    curve: CorrelationCurve,
    extrapolation: StretchedExpFit,
    omegas: np.ndarray | None = None,
    n_omegas: int = 512,
) -> NoiseSpectrum:
    """
    S(w) = 2 int_0^inf [C(t) - C_inf] cos(w t) dt with C_inf = C0 - Delta^2 from the fit.

    The sampled window is transformed exactly for its piecewise-linear interpolant; beyond it the fitted
    stretched exponential is integrated. C_inf becomes the static (delta) weight.
    """
    if omegas is None:
        omegas = np.linspace(0.0, np.pi / np.min(np.diff(curve.times)), n_omegas)
    omegas = np.asarray(omegas, dtype=np.float64)
    C_inf = extrapolation.C_inf
    window = _cosine_transform_linear(curve.times, curve.values - C_inf, omegas)
    tail = _stretched_tail_transform(extrapolation, float(curve.times[-1]), omegas)
    result = NoiseSpectrum(omegas=omegas, values=2.0 * (window + tail), static_weight=C_inf,
                           metadata=dict(curve.metadata))
    if QualityFlag.NEGATIVE_SPECTRUM in result.flags:
        logger.warning(f"Spectrum has negative values down to {result.values.min():.4g} rad^2/s")
    return result


def line_spectrum(lines: CorrelationLines, omegas: np.ndarray) -> NoiseSpectrum:
    """
    Bin the lines onto a grid: S_j = pi sum_{w_k in bin j} a_k / width_j.

    Bin edges sit at the midpoints between grid points (geometric when the grid is positive), so the
    binned S carries the same total power as the lines inside the grid.
    """
    omegas = np.asarray(omegas, dtype=np.float64)
    if np.all(omegas > 0):
        inner = np.sqrt(omegas[1:] * omegas[:-1])
        edges = np.concatenate([[omegas[0] ** 2 / inner[0]], inner, [omegas[-1] ** 2 / inner[-1]]])
    else:
        inner = 0.5 * (omegas[1:] + omegas[:-1])
        edges = np.concatenate([[max(0.0, 2 * omegas[0] - inner[0])], inner, [2 * omegas[-1] - inner[-1]]])
    weight, _ = np.histogram(lines.omegas, bins=edges, weights=lines.amplitudes)
    return NoiseSpectrum(omegas=omegas, values=np.pi * weight / np.diff(edges), static_weight=lines.static,
                         high_extrapolation=Extrapolation.ZERO, low_extrapolation=Extrapolation.ZERO,
                         metadata=dict(lines.metadata))


# ---------------------------------------------------------------------------
# Gaussian decoherence
# ---------------------------------------------------------------------------

def as_correlation_model(
    source: CorrelationModel | StretchedExpFit | CorrelationCurve | CorrelationLines,
) -> CorrelationModel:
    match source:
        case CorrelationModel():
            return source
        case CorrelationLines():
            return LineNoise(source)
        case StretchedExpFit():
            return source.to_model()
        case CorrelationCurve():
            return SampledCorrelation(source)
    raise TypeError(f"Cannot build a correlation model from {type(source).__name__}")


def dephasing_time(model: CorrelationModel, seq: PulseSequence, t_total: np.ndarray) -> np.ndarray:
    """chi(T) = -sum_{j,l} g_j g_l K(T |tau_j - tau_l|)."""
    diff = np.abs(np.subtract.outer(seq.boundaries, seq.boundaries))
    unique, inverse = np.unique(diff, return_inverse=True)
    weights = np.multiply.outer(seq.boundary_weights, seq.boundary_weights)
    K = model.second_antiderivative(np.multiply.outer(t_total, unique))
    chi = -np.sum(K[:, inverse.reshape(diff.shape)] * weights, axis=(1, 2))
    # exact zero for refocused static noise can come out as -eps
    return np.maximum(chi, 0.0)


def gaussian_coherence_time(
    source: CorrelationModel | StretchedExpFit | CorrelationCurve | CorrelationLines,
    seq: PulseSequence,
    P_e: float,
    t_total: float | np.ndarray,
) -> complex | np.ndarray:
    """L(T) = exp(-P_e^2 chi / 2) from the time-domain double integral."""
    model = as_correlation_model(source)
    t_arr = np.atleast_1d(np.asarray(t_total, dtype=np.float64))
    values = np.exp(-P_e ** 2 * dephasing_time(model, seq, t_arr) / 2).astype(np.complex128)
    return complex(values[0]) if np.ndim(t_total) == 0 else values


def _tail_cosine_integral(a: np.ndarray, omega_max: float) -> np.ndarray:
    """int_{omega_max}^inf cos(a w) / w^2 dw."""
    a = np.abs(a)
    si, _ = special.sici(a * omega_max)
    return np.cos(a * omega_max) / omega_max - a * (np.pi / 2 - si)


def gauss_legendre(edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of a FREQ_ORDER-point rule on every cell between consecutive edges."""
    nodes, weights = np.polynomial.legendre.leggauss(FREQ_ORDER)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * nodes[None, :]).ravel(), (half[:, None] * weights[None, :]).ravel()


def _averaged_filter_band(spectrum: SpectralDensity, seq: PulseSequence, lo: float, hi: float) -> float:
    """1/pi int_lo^hi S(w) <F> / w^2 dw with F replaced by its mean sum_j g_j^2, on log-spaced cells."""
    knots = spectrum.knots
    n_cells = int(np.ceil(AVERAGED_CELLS_PER_E * np.log(hi / lo)))
    edges = np.union1d(np.geomspace(lo, hi, n_cells + 1), knots[(knots > lo) & (knots < hi)])
    omega, w = gauss_legendre(edges)
    return float(np.sum(seq.boundary_weights ** 2) * np.sum(w * spectrum(omega) / omega ** 2) / np.pi)


def dephasing_freq(spectrum: SpectralDensity, seq: PulseSequence, t: float, max_cells: int = MAX_CELLS) -> float:
    """
    chi(T) = 1/pi int_0^inf S(w) F(w T) / w^2 dw + static_weight (T int f)^2.

    F is resolved cell by cell up to OMEGA_SPAN times its first peak; between there and the band limit of S
    it is replaced by its mean, and beyond the band limit the power-law tail is integrated analytically.
    """
    if t == 0:
        return 0.0
    width = min(np.pi / (2 * t), spectrum.resolution / 2)
    omega_max = OMEGA_SPAN * np.pi * max(seq.N, 1) / t
    n_cells = int(np.ceil(omega_max / width))
    if n_cells > max_cells:
        raise UnresolvedFilterError(
            f"Resolving the filter of {seq.name} at T = {t:.6g} s needs {n_cells} cells (limit {max_cells})")
    knots = spectrum.knots
    edges = np.union1d(np.linspace(0.0, omega_max, n_cells + 1), knots[(knots > 0) & (knots < omega_max)])
    omega, w = gauss_legendre(edges)
    chi = np.sum(w * spectrum(omega) * filter_function(seq, omega * t) / omega ** 2) / np.pi

    tail_start = omega_max
    if spectrum.band_limit > omega_max:
        chi += _averaged_filter_band(spectrum, seq, omega_max, spectrum.band_limit)
        tail_start = spectrum.band_limit

    p = spectrum.tail_exponent
    if p is not None:
        S_edge = float(spectrum(np.array([tail_start]))[0])
        g = seq.boundary_weights
        if p == 0:
            a = t * np.subtract.outer(seq.boundaries, seq.boundaries)
            chi += S_edge * np.sum(np.multiply.outer(g, g) * _tail_cosine_integral(a, tail_start)) / np.pi
        else:
            chi += S_edge * np.sum(g ** 2) / (np.pi * (1 + p) * tail_start)

    chi += spectrum.static_weight * (t * seq.net_area) ** 2
    return float(max(chi, 0.0))


def gaussian_coherence_freq(
    spectrum: SpectralDensity | LineNoise | CorrelationLines,
    seq: PulseSequence,
    P_e: float,
    t_total: float | np.ndarray,
    max_cells: int = MAX_CELLS,
) -> float | np.ndarray:
    """
    L(T) = exp(-P_e^2 chi / 2) with chi from the filter-function integral.

    Line spectra are summed line by line, continuous ones integrated on cells.

    Raises:
        UnresolvedFilterError: if the filter at some T would need more than max_cells integration cells
    """
    t_arr = np.atleast_1d(np.asarray(t_total, dtype=np.float64))
    match spectrum:
        case CorrelationLines():
            chi = LineNoise(spectrum).dephasing(seq, t_arr)
        case LineNoise():
            chi = spectrum.dephasing(seq, t_arr)
        case _:
            chi = np.array([dephasing_freq(spectrum, seq, float(t), max_cells) for t in t_arr])
    values = np.exp(-P_e ** 2 * chi / 2)
    return float(values[0]) if np.ndim(t_total) == 0 else values
