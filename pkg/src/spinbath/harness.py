"""
Experiment orchestration.

Every bath configuration k is generated from child_seed(root_seed, k, PLACEMENT) and evaluated on its
own (optionally in a worker process); curves are then averaged in configuration order, so results only
depend on root_seed. The scenario runners build the tables of the shipped presets on top of the same
per-configuration machinery.
"""
import dataclasses
import logging
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat

import numpy as np
import pandas as pd
from scipy import ndimage

from .bath_gen import BathConfiguration, FieldOrientation, SeedStream, child_seed, generate_bath
from .cce_engine import (
    cce_coherence,
    cce_correlation,
    cce_correlation_by_order,
    cce_correlation_lines,
    frozen_spin_states,
)
from .common import mt_to_tesla
from .config import ExperimentConfig
from .dd_sequences import PulseSequence, cpmg
from .donor_levels import TransitionPair, find_clock_transition, transition
from .errors import ConfigError, SpinBathError
from .noise_model import (
    LineNoise,
    NoiseSpectrum,
    fit_stretched_exponential,
    gaussian_coherence_freq,
    gaussian_coherence_time,
    line_spectrum,
    pair_flipflop_lines,
    spectrum,
)
from .spectroscopy import extract_spectrum, predict_decoherence, relative_log_error
from .types import (
    CoherenceCurve,
    CorrelationCurve,
    CorrelationLines,
    CorrelationSource,
    Domain,
    ModelKind,
    QualityFlag,
    ScenarioKind,
)

logger = logging.getLogger(__name__)

SMOOTHING_WINDOW = 3
STRETCH_WINDOW = (0.05, 0.95)

QUANTUM = "quantum"
GAUSSIAN = "gaussian"


@dataclasses.dataclass(frozen=True)
class FieldPoint:
    """A qubit transition evaluated at one static field; `tag` names it in tables and file names."""
    tag: str
    transition: TransitionPair

    @property
    def field_mT(self) -> float:
        return self.transition.field_B * 1e3


@dataclasses.dataclass(frozen=True)
class CoherenceTime:
    seconds: float
    lower_bound: bool = False


@dataclasses.dataclass
class EnsembleResult:
    """Configuration-averaged coherence of one (model, sequence, field) combination."""
    model: str
    sequence: str
    field: FieldPoint
    curves: list[CoherenceCurve]
    mean: CoherenceCurve
    std: np.ndarray
    T2: CoherenceTime
    stretch_exponent: float
    flags: set[QualityFlag] = dataclasses.field(default_factory=set)


@dataclasses.dataclass
class ScenarioReport:
    """Tables and curves produced by one scenario preset."""
    kind: ScenarioKind | None
    tables: dict[str, pd.DataFrame]
    ensembles: list[EnsembleResult] = dataclasses.field(default_factory=list)
    correlations: dict[str, CorrelationCurve] = dataclasses.field(default_factory=dict)
    spectra: dict[str, NoiseSpectrum] = dataclasses.field(default_factory=dict)


def resolve_fields(config: ExperimentConfig) -> list[FieldPoint]:
    """
    Transitions at every configured field: offsets from the clock transition, absolute fields and the
    scenario's high-field transition.

    Raises:
        NoClockTransitionError: if offsets are requested but the CT search bracket holds no CT
    """
    params = config.donor.to_params()
    plus, minus = config.transition.labels
    points = []
    if config.field.offsets_mT:
        ct = find_clock_transition(params, plus, minus, config.transition.search_bracket)
        for offset in config.field.offsets_mT:
            B = ct.field_B + mt_to_tesla(offset)
            points.append(FieldPoint(f"CT{offset:+g}mT", transition(params, B, plus, minus)))
    for B_mT in config.field.absolute_mT:
        points.append(FieldPoint(f"{B_mT:g}mT", transition(params, mt_to_tesla(B_mT), plus, minus)))
    if config.scenario is not None and config.scenario.high_field is not None:
        high = config.scenario.high_field
        high_plus, high_minus = high.labels
        points.append(FieldPoint(f"{high.field_mT:g}mT",
                                 transition(params, mt_to_tesla(high.field_mT), high_plus, high_minus)))
    for point in points:
        logger.info(f"Field {point.tag}: {point.transition.describe()}")
    return points


def configuration_bath(config: ExperimentConfig, index: int,
                       orientation: FieldOrientation | None = None) -> BathConfiguration:
    seed = child_seed(config.root_seed, index, SeedStream.PLACEMENT)
    return generate_bath(config.bath.lattice(), seed,
                         orientation if orientation is not None else config.bath.field_orientation(),
                         config.bath.hyperfine_model())


# ---------------------------------------------------------------------------
# Per-configuration evaluation
# ---------------------------------------------------------------------------

def _run_configuration(task: Callable, config: ExperimentConfig, index: int, *args):
    try:
        return task(config, index, *args)
    except SpinBathError as e:
        e.configuration_index = index
        e.add_note(f"while evaluating bath configuration {index} "
                   f"(seed {child_seed(config.root_seed, index, SeedStream.PLACEMENT)})")
        raise


def evaluate_configurations(config: ExperimentConfig, task: Callable, *args) -> list:
    """
    task(config, index, *args) for every configuration index, in index order.

    With workers > 1 the configurations run in a process pool; `task` and its arguments must be picklable.
    """
    indices = range(config.n_configurations)
    if config.workers == 1:
        return [_run_configuration(task, config, index, *args) for index in indices]
    logger.info(f"Evaluating {config.n_configurations} configurations on {config.workers} processes")
    with ProcessPoolExecutor(max_workers=config.workers) as executor:
        return list(executor.map(_run_configuration, repeat(task), repeat(config), indices,
                                 *(repeat(arg) for arg in args)))


def correlation_curve(config: ExperimentConfig, bath: BathConfiguration, pair: TransitionPair,
                      frozen_states: np.ndarray | None = None) -> CorrelationCurve:
    """C(t) of one configuration from the configured source (full CCE or analytic pairs)."""
    options = config.cce_options()
    if config.correlation_source == CorrelationSource.PAIRS:
        return correlation_lines(config, bath, pair).curve(options.time_grid)
    return cce_correlation(bath, pair, options, frozen_states)


def correlation_lines(config: ExperimentConfig, bath: BathConfiguration, pair: TransitionPair,
                      frozen_states: np.ndarray | None = None) -> CorrelationLines:
    """C(t) of one configuration as discrete lines, valid at any time rather than on the grid only."""
    options = config.cce_options()
    if config.correlation_source == CorrelationSource.PAIRS:
        return pair_flipflop_lines(bath, pair, options, config.amplitude_mode)
    return cce_correlation_lines(bath, pair, options, frozen_states)


def gaussian_curves(config: ExperimentConfig, correlation: CorrelationLines | CorrelationCurve,
                    pair: TransitionPair, sequences: list[PulseSequence]) -> dict[str, np.ndarray]:
    """
    Gaussian-model L(t) per sequence, in the configured domain.

    Lines are exact in both domains. A sampled curve is integrated as is in the time domain and through
    the spectrum of its stretched-exponential extension in the frequency domain.
    """
    times = config.time_grid.times()
    if isinstance(correlation, CorrelationLines):
        noise = LineNoise(correlation)
        if config.domain == Domain.FREQ:
            return {seq.name: gaussian_coherence_freq(noise, seq, pair.P_e, times).astype(np.complex128)
                    for seq in sequences}
        return {seq.name: gaussian_coherence_time(noise, seq, pair.P_e, times) for seq in sequences}
    if config.domain == Domain.FREQ:
        noise = spectrum(correlation, fit_stretched_exponential(correlation))
        return {seq.name: gaussian_coherence_freq(noise, seq, pair.P_e, times).astype(np.complex128)
                for seq in sequences}
    return {seq.name: gaussian_coherence_time(correlation, seq, pair.P_e, times) for seq in sequences}


def _experiment_configuration(config: ExperimentConfig, index: int,
                              fields: list[FieldPoint]) -> dict[tuple[str, str, str], np.ndarray]:
    bath = configuration_bath(config, index)
    logger.info(f"Configuration {index}: {bath.n_spins} bath spins")
    options = config.cce_options()
    frozen = frozen_spin_states(bath) if options.mean_field else None
    sequences = config.pulse_sequences()
    values = {}
    for point in fields:
        if config.model in (ModelKind.QUANTUM, ModelKind.BOTH):
            for seq in sequences:
                curve = cce_coherence(bath, point.transition, seq, options, frozen)
                values[QUANTUM, seq.name, point.tag] = curve.values
        if config.model in (ModelKind.GAUSSIAN, ModelKind.BOTH):
            correlation = correlation_lines(config, bath, point.transition, frozen)
            for name, curve_values in gaussian_curves(config, correlation, point.transition, sequences).items():
                values[GAUSSIAN, name, point.tag] = curve_values
    return values


# ---------------------------------------------------------------------------
# Ensemble statistics
# ---------------------------------------------------------------------------

def coherence_time(curve: CoherenceCurve, threshold: float = 1 / np.e,
                   smoothing_window: int = SMOOTHING_WINDOW) -> CoherenceTime:
    """
    First crossing of |L| = threshold on the moving-average smoothed curve, linearly interpolated.

    A curve that never crosses gives its last time as a lower bound.
    """
    magnitude = curve.magnitude
    if smoothing_window > 1 and len(magnitude) >= smoothing_window:
        magnitude = ndimage.uniform_filter1d(magnitude, size=smoothing_window, mode="nearest")
    below = np.flatnonzero(magnitude <= threshold)
    if len(below) == 0:
        return CoherenceTime(float(curve.times[-1]), lower_bound=True)
    k = int(below[0])
    if k == 0:
        return CoherenceTime(float(curve.times[0]))
    t0, t1 = curve.times[k - 1], curve.times[k]
    m0, m1 = magnitude[k - 1], magnitude[k]
    return CoherenceTime(float(t0 + (m0 - threshold) * (t1 - t0) / (m0 - m1)))


def stretch_exponent(curve: CoherenceCurve, window: tuple[float, float] = STRETCH_WINDOW) -> float:
    """Slope of ln(-ln|L|) against ln t where window[0] < |L| < window[1]; NaN with fewer than two points."""
    magnitude = curve.magnitude
    usable = (curve.times > 0) & (magnitude > window[0]) & (magnitude < window[1])
    if np.sum(usable) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(curve.times[usable]), np.log(-np.log(magnitude[usable])), 1)
    return float(slope)


def ensemble_average(curves: list[CoherenceCurve], model: str, sequence: str, field: FieldPoint) -> EnsembleResult:
    """Pointwise mean of complex L over configurations, with the spread of |L| and T2 of the mean."""
    times = curves[0].times
    stack = np.array([curve.values for curve in curves])
    mean = CoherenceCurve(times=times.copy(), values=stack.mean(axis=0), metadata={
        "model": model,
        "sequence": sequence,
        "field": field.tag,
        "field_mT": field.field_mT,
        "transition": f"{field.transition.plus_label}<->{field.transition.minus_label}",
        "P_e": field.transition.P_e,
        "n_configurations": len(curves),
    })
    T2 = coherence_time(mean)
    flags = {QualityFlag.LOWER_BOUND} if T2.lower_bound else set()
    if T2.lower_bound:
        logger.warning(f"{model} {sequence} at {field.tag}: |L| stays above 1/e, T2 > {T2.seconds:.4g} s")
    return EnsembleResult(model=model, sequence=sequence, field=field, curves=curves, mean=mean,
                          std=np.abs(stack).std(axis=0), T2=T2, stretch_exponent=stretch_exponent(mean),
                          flags=flags)


def _average_correlation(curves: list[CorrelationCurve], metadata: dict) -> CorrelationCurve:
    return CorrelationCurve(times=curves[0].times.copy(), values=np.mean([c.values for c in curves], axis=0),
                            metadata={**metadata, "n_configurations": len(curves)})


def run_experiment(config: ExperimentConfig) -> list[EnsembleResult]:
    """
    Ensemble-averaged coherence for every (model, field, sequence) of the configuration.

    Raises:
        SpinBathError: from any module, with `configuration_index` set when a configuration failed
    """
    fields = resolve_fields(config)
    per_configuration = evaluate_configurations(config, _experiment_configuration, fields)
    times = config.time_grid.times()
    models = {ModelKind.QUANTUM: [QUANTUM], ModelKind.GAUSSIAN: [GAUSSIAN],
              ModelKind.BOTH: [QUANTUM, GAUSSIAN]}[config.model]

    results = []
    for point in fields:
        for model in models:
            for seq in config.pulse_sequences():
                key = (model, seq.name, point.tag)
                curves = [CoherenceCurve(times=times.copy(), values=values[key],
                                         metadata={"configuration": k, "model": model, "sequence": seq.name,
                                                   "field": point.tag})
                          for k, values in enumerate(per_configuration)]
                result = ensemble_average(curves, model, seq.name, point)
                logger.info(f"{model:>8} {seq.name:>10} {point.tag}: T2 = {result.T2.seconds:.4g} s"
                            + (" (lower bound)" if result.T2.lower_bound else ""))
                results.append(result)
    return results


def t2_table(results: list[EnsembleResult]) -> pd.DataFrame:
    return pd.DataFrame([{
        "model": r.model,
        "sequence": r.sequence,
        "field": r.field.tag,
        "field_mT": r.field.field_mT,
        "P_e": r.field.transition.P_e,
        "T2_s": r.T2.seconds,
        "lower_bound": r.T2.lower_bound,
        "stretch_exponent": r.stretch_exponent,
    } for r in results], columns=["model", "sequence", "field", "field_mT", "P_e", "T2_s", "lower_bound",
                                  "stretch_exponent"])


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

def _orientation_configuration(config: ExperimentConfig, index: int, pair: TransitionPair) -> list[np.ndarray]:
    bath = configuration_bath(config, index)
    options = config.cce_options()
    frozen = frozen_spin_states(bath) if options.mean_field else None
    return [cce_correlation(bath.with_orientation(FieldOrientation.from_theta(theta)), pair, options, frozen).values
            for theta in config.scenario.angles_deg]


def run_orientation_scenario(config: ExperimentConfig) -> ScenarioReport:
    """
    Configuration-averaged C(t) at the first configured field for every field angle, each fitted with
    a stretched exponential; plus the CCE order convergence of C(t) for configuration 0.
    """
    point = resolve_fields(config)[0]
    times = config.time_grid.times()
    per_configuration = evaluate_configurations(config, _orientation_configuration, point.transition)

    rows, correlations = [], {}
    for a, theta in enumerate(config.scenario.angles_deg):
        curves = [CorrelationCurve(times=times, values=values[a]) for values in per_configuration]
        averaged = _average_correlation(curves, {"theta_deg": theta, "field": point.tag})
        fit = fit_stretched_exponential(averaged)
        correlations[f"theta{theta:g}"] = averaged
        rows.append({
            "theta_deg": theta,
            "Delta_rad_s": fit.Delta,
            "tau_s": fit.tau,
            "n_stretch": fit.n_stretch,
            "C0_rad2_per_s2": fit.C0,
            "residual_rms": fit.residual_rms,
            "relative_residual": fit.residual_rms / fit.Delta ** 2 if fit.Delta > 0 else np.nan,
            "flags": ",".join(sorted(fit.flags)),
        })
        logger.info(f"theta = {theta:g} deg: Delta = {fit.Delta:.4g} rad/s, tau = {fit.tau:.4g} s, "
                    f"n = {fit.n_stretch:.3f}")

    options = dataclasses.replace(config.cce_options(), max_order=config.scenario.convergence_max_order)
    bath = configuration_bath(config, 0)
    by_order = cce_correlation_by_order(bath, point.transition, options)
    convergence = pd.DataFrame({"t_s": times, **{f"order_{order}": curve.values for order, curve in by_order.items()}})
    if len(by_order) > 1:
        top, previous = by_order[len(by_order)].values, by_order[len(by_order) - 1].values
        logger.info(f"Order {len(by_order)} changes C(t) by at most "
                    f"{np.max(np.abs(top - previous)) / max(abs(top[0]), np.finfo(float).tiny):.3g} of C(0)")

    return ScenarioReport(kind=ScenarioKind.ORIENTATION,
                          tables={"orientation_fits": pd.DataFrame(rows), "order_convergence": convergence},
                          correlations=correlations)


def run_classicality_scenario(config: ExperimentConfig) -> ScenarioReport:
    """Quantum against Gaussian T2 at every field and sequence."""
    results = run_experiment(config)
    table = t2_table(results)
    comparison = []
    for (sequence, field), group in table.groupby(["sequence", "field"], sort=False):
        by_model = group.set_index("model")
        if QUANTUM not in by_model.index or GAUSSIAN not in by_model.index:
            continue
        T2_q, T2_g = by_model.loc[QUANTUM, "T2_s"], by_model.loc[GAUSSIAN, "T2_s"]
        comparison.append({
            "sequence": sequence,
            "field": field,
            "T2_quantum_s": T2_q,
            "T2_gaussian_s": T2_g,
            "relative_difference": abs(T2_g - T2_q) / T2_q,
            "lower_bound": bool(by_model["lower_bound"].any()),
        })
    return ScenarioReport(kind=ScenarioKind.CLASSICALITY,
                          tables={"t2": table, "classicality": pd.DataFrame(comparison)},
                          ensembles=results)


def _spectroscopy_sequences(config: ExperimentConfig) -> list[PulseSequence]:
    numbers = dict.fromkeys([config.scenario.extraction_N, *config.scenario.prediction_N])
    return [cpmg(N) for N in numbers]


def _spectroscopy_configuration(config: ExperimentConfig, index: int, fields: list[FieldPoint]) -> dict:
    bath = configuration_bath(config, index)
    options = config.cce_options()
    frozen = frozen_spin_states(bath) if options.mean_field else None
    values = {}
    for point in fields:
        for seq in _spectroscopy_sequences(config):
            values[QUANTUM, seq.name, point.tag] = cce_coherence(bath, point.transition, seq, options, frozen).values
        values["lines", point.tag] = cce_correlation_lines(bath, point.transition, options, frozen)
    return values


def apparent_spectrum(lines: CorrelationLines, extracted: NoiseSpectrum, N: int) -> NoiseSpectrum:
    """
    What CPMG-N spectroscopy would extract from Gaussian noise with these lines: chi_N(t) / t at t = pi N / w.

    Both carry the delta-filter bias, so an extracted spectrum differs from this one by the quantum
    correction alone.
    """
    t = np.pi * N / extracted.omegas
    values = LineNoise(lines).dephasing(cpmg(N), t) / t
    return NoiseSpectrum(omegas=extracted.omegas.copy(), values=values, static_weight=lines.static,
                         high_extrapolation=extracted.high_extrapolation,
                         low_extrapolation=extracted.low_extrapolation,
                         metadata={**lines.metadata, "extraction_N": N})


def run_spectroscopy_scenario(config: ExperimentConfig) -> ScenarioReport:
    """
    Extract the spectrum from configuration-averaged quantum CPMG curves, compare it with what the same
    extraction gives for Gaussian noise with the CCE correlation, and predict the other CPMG orders from it.

    The binned line spectrum of the CCE correlation is reported next to both as S_lines.
    """
    scenario = config.scenario
    fields = resolve_fields(config)
    per_configuration = evaluate_configurations(config, _spectroscopy_configuration, fields)
    times = config.time_grid.times()

    def ensemble(seq: PulseSequence, point: FieldPoint) -> EnsembleResult:
        curves = [CoherenceCurve(times=times.copy(), values=values[QUANTUM, seq.name, point.tag])
                  for values in per_configuration]
        return ensemble_average(curves, QUANTUM, seq.name, point)

    ensembles, spectra, correlations, spectrum_rows, prediction_rows = [], {}, {}, [], []
    for point in fields:
        P_e = point.transition.P_e
        quantum = {seq.name: ensemble(seq, point) for seq in _spectroscopy_sequences(config)}
        ensembles.extend(quantum.values())

        extracted = extract_spectrum(quantum[cpmg(scenario.extraction_N).name].mean, scenario.extraction_N, P_e,
                                     high_extrapolation=scenario.high_extrapolation)
        lines = CorrelationLines.average([values["lines", point.tag] for values in per_configuration],
                                         {"field": point.tag})
        from_correlation = apparent_spectrum(lines, extracted, scenario.extraction_N)
        binned = line_spectrum(lines, extracted.omegas)
        spectra[f"extracted_{point.tag}"] = extracted
        spectra[f"cce_{point.tag}"] = from_correlation
        spectra[f"lines_{point.tag}"] = binned
        correlations[point.tag] = lines.curve(times)

        reference = np.max(np.abs(from_correlation.values), initial=0.0)
        for omega, S_ext, S_cce, S_lines in zip(extracted.omegas, extracted.values, from_correlation.values,
                                                binned.values):
            t = np.pi * scenario.extraction_N / omega
            spectrum_rows.append({
                "field": point.tag,
                "omega_rad_s": omega,
                "S_extracted": S_ext,
                "S_cce": S_cce,
                "S_lines": S_lines,
                "coherence": float(np.exp(-S_ext * t * P_e ** 2 / 2)),
                "relative_difference": abs(S_ext - S_cce) / reference if reference > 0 else np.nan,
            })

        for N in scenario.prediction_N:
            seq = cpmg(N)
            prediction = predict_decoherence(extracted, seq, P_e, times)
            T2_q, T2_p = quantum[seq.name].T2, coherence_time(prediction)
            prediction_rows.append({
                "field": point.tag,
                "N": N,
                "T2_quantum_s": T2_q.seconds,
                "T2_predicted_s": T2_p.seconds,
                "T2_relative_error": abs(T2_p.seconds - T2_q.seconds) / T2_q.seconds,
                "log_error": relative_log_error(quantum[seq.name].mean, prediction),
                "lower_bound": T2_q.lower_bound or T2_p.lower_bound,
                "low_coverage": QualityFlag.LOW_COVERAGE in prediction.flags,
            })

    return ScenarioReport(kind=ScenarioKind.SPECTROSCOPY,
                          tables={"spectrum_comparison": pd.DataFrame(spectrum_rows),
                                  "predictions": pd.DataFrame(prediction_rows)},
                          ensembles=ensembles, correlations=correlations, spectra=spectra)


SCENARIO_RUNNERS: dict[ScenarioKind, Callable[[ExperimentConfig], ScenarioReport]] = {
    ScenarioKind.ORIENTATION: run_orientation_scenario,
    ScenarioKind.CLASSICALITY: run_classicality_scenario,
    ScenarioKind.SPECTROSCOPY: run_spectroscopy_scenario,
}


def run_scenario(config: ExperimentConfig) -> ScenarioReport:
    if config.scenario is None:
        raise ConfigError("Configuration has no [scenario] section")
    logger.info(f"Running the {config.scenario.kind} scenario over {config.n_configurations} configurations")
    return SCENARIO_RUNNERS[config.scenario.kind](config)
