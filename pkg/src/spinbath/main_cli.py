"""
spinbath-ct: command-line front end.

Usage:
    uv run spinbath-ct run --config experiment.toml --seed 7 --out results/
    uv run spinbath-ct preset classicality --configurations 20
    uv run spinbath-ct find-ct --pair 5,-1:4,-2 --range 50:120
    uv run spinbath-ct coherence --model gaussian --order 3 --domain freq
    uv run spinbath-ct spectroscopy extract results/curves/quantum_cpmg-100_CT+1mT.csv --n 100 -o spectrum.csv
    uv run spinbath-ct spectroscopy predict spectrum.csv --seq cpmg:32

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical breakdown, 4 I/O error.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .bath_gen import site_table
from .cce_engine import cce_coherence, frozen_spin_states
from .common import tesla_to_mt
from .config import (
    ExperimentConfig,
    available_presets,
    config_hash,
    load_config,
    load_preset,
    parse_config,
    with_overrides,
)
from .dd_sequences import parse_sequence
from .donor_levels import find_clock_transition, level_table, transition
from .errors import (
    CCEBreakdownError,
    ConfigError,
    LevelCrossingError,
    QuadratureError,
    ResultFormatError,
    SpinBathError,
    UnresolvedFilterError,
)
from .harness import (
    configuration_bath,
    correlation_curve,
    correlation_lines,
    gaussian_curves,
    resolve_fields,
    run_experiment,
    run_scenario,
)
from .noise_model import NoiseSpectrum, fit_stretched_exponential, pair_amplitude_report
from .result_codec import (
    CoherenceCurveCodec,
    CorrelationCurveCodec,
    SpectrumCodec,
    TableCodec,
    export,
    load_result,
    save_result,
)
from .spectroscopy import extract_spectrum, predict_decoherence
from .types import CoherenceCurve, CorrelationCurve, Domain, Extrapolation, ModelKind

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

NUMERICAL_ERRORS = (CCEBreakdownError, QuadratureError, UnresolvedFilterError, LevelCrossingError)


# argparse destination -> config field (section__field for nested sections)
CLI_OVERRIDES = {
    "workers": "workers",
    "configurations": "n_configurations",
    "model": "model",
    "domain": "domain",
    "order": "cce__order",
    "cutoff": "bath__cutoff_nm",
    "abundance": "bath__abundance",
    "orient": "bath__orientation",
    "ct_range": "transition__ct_search_mT",
}


def _label_pair(text: str) -> tuple[str, str]:
    """"5,-1:4,-2" -> ("5,-1", "4,-2")"""
    plus, sep, minus = text.partition(":")
    if not sep or not plus or not minus:
        raise argparse.ArgumentTypeError(f"expected PLUS:MINUS labels such as 5,-1:4,-2, got {text!r}")
    return plus, minus


def _field_range(text: str) -> tuple[float, float]:
    """"50:120" -> (50.0, 120.0) in mT"""
    low, sep, high = text.partition(":")
    try:
        return float(low), float(high)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW:HIGH in mT such as 50:120, got {text!r}") from None


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config is not None else parse_config({})
    fields = {field: getattr(args, name, None) for name, field in CLI_OVERRIDES.items()}
    if getattr(args, "pair", None) is not None:
        fields["transition__plus"], fields["transition__minus"] = args.pair
    return with_overrides(config, seed=args.seed, out=args.out, **fields)


def _write_table(table: pd.DataFrame, out: Path | None, filename: str, config: ExperimentConfig | None = None):
    if out is None:
        table.to_csv(sys.stdout, index=False, lineterminator="\n")
        return
    save_result(TableCodec(), table, Path(out) / filename, "" if config is None else config_hash(config))


def cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    export(run_experiment(config), config)
    return EXIT_OK


def cmd_preset(args: argparse.Namespace) -> int:
    config = with_overrides(load_preset(args.name), seed=args.seed, out=args.out,
                            workers=args.workers, n_configurations=args.configurations)
    export(run_scenario(config), config)
    return EXIT_OK


def cmd_pair_report(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bath = configuration_bath(config, args.index)
    tables = []
    for point in resolve_fields(config):
        table = pair_amplitude_report(bath, point.transition, config.cce_options())
        table.insert(0, "field", point.tag)
        tables.append(table)
    _write_table(pd.concat(tables, ignore_index=True), args.out, "pair_report.csv", config)
    return EXIT_OK


def cmd_fit_correlation(args: argparse.Namespace) -> int:
    curve = load_result(args.file)
    if not isinstance(curve, CorrelationCurve):
        raise ResultFormatError(f"{args.file} does not hold a correlation function")
    fit = fit_stretched_exponential(curve)
    table = pd.DataFrame([{"Delta_rad_s": fit.Delta, "tau_s": fit.tau, "n_stretch": fit.n_stretch,
                           "C0_rad2_per_s2": fit.C0, "residual_rms": fit.residual_rms,
                           "flags": ",".join(sorted(fit.flags))}])
    _write_table(table, args.out, "correlation_fit.csv")
    return EXIT_OK


def cmd_bath(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bath = configuration_bath(config, args.index)
    logger.info(f"Configuration {args.index}: {bath.n_spins} spins")
    _write_table(site_table(bath), args.out, f"bath_{args.index}.csv", config)
    return EXIT_OK


def cmd_levels(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    fields_B = np.asarray(args.fields_mT, dtype=np.float64) * 1e-3
    _write_table(level_table(config.donor.to_params(), fields_B), args.out, "levels.csv", config)
    return EXIT_OK


def cmd_find_ct(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    params = config.donor.to_params()
    plus, minus = config.transition.labels
    ct = find_clock_transition(params, plus, minus, config.transition.search_bracket)
    pair = transition(params, ct.field_B, plus, minus)
    table = pd.DataFrame([{
        "transition": f"{plus}<->{minus}",
        "B_CT_mT": tesla_to_mt(ct.field_B),
        "B_P_root_mT": None if ct.field_P_root is None else tesla_to_mt(ct.field_P_root),
        "frequency_GHz": pair.frequency / (2 * np.pi) / 1e9,
        "P_plus": pair.P_plus,
        "P_minus": pair.P_minus,
    }])
    _write_table(table, args.out, "clock_transition.csv", config)
    return EXIT_OK


def cmd_coherence(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bath = configuration_bath(config, args.index)
    options = config.cce_options()
    frozen = frozen_spin_states(bath) if options.mean_field else None
    out = Path(args.out) if args.out is not None else config.output.directory
    sequences = config.pulse_sequences()
    for point in resolve_fields(config):
        curves = {}
        if config.model in (ModelKind.QUANTUM, ModelKind.BOTH):
            for seq in sequences:
                curves[ModelKind.QUANTUM, seq.name] = cce_coherence(bath, point.transition, seq, options, frozen)
        if config.model in (ModelKind.GAUSSIAN, ModelKind.BOTH):
            correlation = correlation_lines(config, bath, point.transition, frozen)
            for name, values in gaussian_curves(config, correlation, point.transition, sequences).items():
                curves[ModelKind.GAUSSIAN, name] = CoherenceCurve(
                    times=options.time_grid.copy(), values=values,
                    metadata={"domain": str(config.domain), "sequence": name})
        for (model, name), curve in curves.items():
            curve.metadata.update({"P_e": point.transition.P_e, "model": str(model)})
            filename = f"coherence_{args.index}_{model}_{name.replace(':', '-')}_{point.tag}.csv"
            save_result(CoherenceCurveCodec(), curve, out / filename, config_hash(config))
    return EXIT_OK


def cmd_correlation(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bath = configuration_bath(config, args.index)
    frozen = frozen_spin_states(bath) if config.cce.mean_field else None
    out = Path(args.out) if args.out is not None else config.output.directory
    for point in resolve_fields(config):
        curve = correlation_curve(config, bath, point.transition, frozen)
        save_result(CorrelationCurveCodec(), curve, out / f"correlation_{args.index}_{point.tag}.csv",
                    config_hash(config))
    return EXIT_OK


def cmd_spectroscopy_extract(args: argparse.Namespace) -> int:
    curve = load_result(args.file)
    if not isinstance(curve, CoherenceCurve):
        raise ResultFormatError(f"{args.file} does not hold a coherence curve")
    P_e = args.pe if args.pe is not None else curve.metadata.get("P_e")
    if P_e is None:
        raise ConfigError(f"{args.file} carries no P_e; pass --pe")
    spectrum = extract_spectrum(curve, args.N, float(P_e), high_extrapolation=Extrapolation(args.high_extrapolation))
    out = Path(args.out) if args.out is not None else Path(args.file).with_name(f"spectrum_N{args.N}.csv")
    save_result(SpectrumCodec(), spectrum, out, str(curve.metadata.get("config_hash", "")))
    return EXIT_OK


def cmd_spectroscopy_predict(args: argparse.Namespace) -> int:
    spectrum = load_result(args.file)
    if not isinstance(spectrum, NoiseSpectrum):
        raise ResultFormatError(f"{args.file} does not hold a spectrum")
    P_e = args.pe if args.pe is not None else spectrum.metadata.get("P_e")
    if P_e is None:
        raise ConfigError(f"{args.file} carries no P_e; pass --pe")
    seq = parse_sequence(args.sequence)
    t_grid = np.linspace(0.0, args.t_max_ms * 1e-3, args.n_points)
    curve = predict_decoherence(spectrum, seq, float(P_e), t_grid)
    out = Path(args.out) if args.out is not None else \
        Path(args.file).with_name(f"prediction_{seq.name.replace(':', '-')}.csv")
    save_result(CoherenceCurveCodec(), curve, out, str(spectrum.metadata.get("config_hash", "")))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinbath-ct",
        description="Decoherence of a bismuth-donor qubit in a 29Si nuclear-spin bath near clock transitions.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment configuration (defaults when omitted)")
    common.add_argument("--seed", type=int, help="Override root_seed")
    common.add_argument("--out", type=Path, help="Output directory (tables go to stdout when omitted)")

    ensemble = argparse.ArgumentParser(add_help=False)
    ensemble.add_argument("--workers", type=int, help="Worker processes over bath configurations")
    ensemble.add_argument("--configurations", type=int, help="Override n_configurations")

    single = argparse.ArgumentParser(add_help=False)
    single.add_argument("--index", type=int, default=0, help="Bath configuration index (default: 0)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common, ensemble], help="Run the experiment of a configuration file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", parents=[ensemble], help="Run a shipped scenario preset")
    p.add_argument("name", choices=available_presets())
    p.add_argument("--seed", type=int, help="Override root_seed")
    p.add_argument("--out", type=Path, help="Output directory")
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("pair-report", parents=[common, single],
                       help="Analytic pair frequencies and amplitudes against the dense pair oracle")
    p.set_defaults(func=cmd_pair_report)

    p = sub.add_parser("fit-correlation", help="Fit a stretched exponential to an exported C(t)")
    p.add_argument("file", type=Path)
    p.add_argument("--out", type=Path, help="Output directory")
    p.set_defaults(func=cmd_fit_correlation)

    p = sub.add_parser("bath", parents=[common, single], help="Site table of one bath configuration")
    p.add_argument("--cutoff", type=float, help="Cutoff radius in nm")
    p.add_argument("--abundance", type=float, help="29Si abundance in (0, 1]")
    p.add_argument("--orient", help='Field direction: "001", "110", "111", "theta:<deg>" or "vec:h,k,l"')
    p.set_defaults(func=cmd_bath)

    p = sub.add_parser("levels", parents=[common], help="Donor level energies and <S^z> versus field")
    p.add_argument("--field", "--fields-mT", dest="fields_mT", type=float, nargs="+",
                   default=[0.0, 50.0, 79.9, 100.0, 500.0], help="Fields in mT")
    p.set_defaults(func=cmd_levels)

    p = sub.add_parser("find-ct", parents=[common], help="Locate the clock transition of the configured pair")
    p.add_argument("--pair", type=_label_pair, help="Transition as PLUS:MINUS labels, e.g. 5,-1:4,-2")
    p.add_argument("--range", dest="ct_range", type=_field_range, help="Search bracket LOW:HIGH in mT")
    p.set_defaults(func=cmd_find_ct)

    p = sub.add_parser("coherence", parents=[common, single],
                       help="Quantum (CCE) or Gaussian coherence of one configuration")
    p.add_argument("--model", choices=list(ModelKind))
    p.add_argument("--order", type=int, choices=[1, 2, 3], help="CCE order")
    p.add_argument("--domain", choices=list(Domain), help="Gaussian-model evaluation domain")
    p.set_defaults(func=cmd_coherence)

    p = sub.add_parser("correlation", parents=[common, single], help="Noise correlation C(t) of one configuration")
    p.add_argument("--order", type=int, choices=[1, 2, 3], help="CCE order")
    p.set_defaults(func=cmd_correlation)

    p = sub.add_parser("spectroscopy", help="Noise spectroscopy from CPMG curves")
    spectroscopy = p.add_subparsers(dest="action", required=True)
    extract = spectroscopy.add_parser("extract", help="Spectrum from an exported CPMG-N coherence curve")
    extract.add_argument("file", type=Path)
    extract.add_argument("--n", "--N", dest="N", type=int, required=True,
                         help="Pulse number of the measuring CPMG sequence")
    extract.add_argument("--pe", type=float, help="P_e of the transition (read from the file when omitted)")
    extract.add_argument("--high-extrapolation", choices=[Extrapolation.POWER_LAW, Extrapolation.ZERO],
                         default=Extrapolation.POWER_LAW)
    extract.add_argument("-o", "--out", type=Path, help="Output file")
    extract.set_defaults(func=cmd_spectroscopy_extract)
    predict = spectroscopy.add_parser("predict", help="Gaussian-model coherence from an exported spectrum")
    predict.add_argument("file", type=Path)
    predict.add_argument("--seq", "--sequence", dest="sequence", required=True, help='e.g. "cpmg:32"')
    predict.add_argument("--pe", type=float, help="P_e of the transition (read from the file when omitted)")
    predict.add_argument("--t-max-ms", type=float, default=1.0)
    predict.add_argument("--n-points", type=int, default=101)
    predict.add_argument("-o", "--out", type=Path, help="Output file")
    predict.set_defaults(func=cmd_spectroscopy_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')

    try:
        return args.func(args)
    except (ResultFormatError, OSError) as e:
        logger.error(str(e))
        return EXIT_IO
    except NUMERICAL_ERRORS as e:
        logger.error(f"Numerical breakdown: {e}")
        for note in getattr(e, "__notes__", []):
            logger.error(note)
        return EXIT_NUMERICAL
    except SpinBathError as e:
        logger.error(str(e))
        for note in getattr(e, "__notes__", []):
            logger.error(note)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
