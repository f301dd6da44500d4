"""
Result files.

Every CSV file starts with one header comment naming its schema and the hash of the configuration
that produced it, followed by scalar metadata:

    # schema: spinbath-curve/1; config_hash: 3f2a...; sequence: cpmg:16

`load_result` reads that header to pick the codec, so exported curves and spectra can be fed back to
the CLI without naming their type.
"""
import json
import logging
import re
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .config import ExperimentConfig, config_hash
from .errors import ResultFormatError
from .harness import EnsembleResult, ScenarioReport, t2_table
from .noise_model import NoiseSpectrum
from .types import CoherenceCurve, CorrelationCurve, Extrapolation, QualityFlag

logger = logging.getLogger(__name__)

HEADER_PREFIX = "# "
FIELD_SEPARATOR = "; "
SUMMARY_SCHEMA = "spinbath-summary/1"
SUMMARY_FILENAME = "summary.json"


class ResultCodec(ABC):
    """Abstract base class for result codecs: a result object <-> a table plus header fields."""

    columns: list[str] = []

    @staticmethod
    @abstractmethod
    def get_schema() -> str:
        """
        Get the schema identifier written in the header.

        Returns:
            Schema string "spinbath-<kind>/<version>"
        """
        raise NotImplementedError("get_schema must be implemented by subclass")

    @abstractmethod
    def encode(self, result: Any) -> tuple[pd.DataFrame, dict[str, Any]]:
        """
        Encode a result into its table and scalar header fields.

        Args:
            result: The object to save

        Returns:
            Tuple of (table with `columns` in order, header fields)
        """
        raise NotImplementedError("encode must be implemented by subclass")

    @abstractmethod
    def decode(self, frame: pd.DataFrame, header: dict[str, Any]) -> Any:
        """
        Decode a result from its loaded table and header fields.

        Args:
            frame: Table read from the file
            header: Parsed header fields (schema and config_hash included)

        Returns:
            The result object
        """
        raise NotImplementedError("decode must be implemented by subclass")


def _scalar_metadata(metadata: dict) -> dict[str, Any]:
    return {k: v for k, v in metadata.items()
            if k not in ("schema", "config_hash") and isinstance(v, (str, int, float, bool, np.number))
            and FIELD_SEPARATOR not in str(v)}


class CoherenceCurveCodec(ResultCodec):
    """L(t) as magnitude and real/imaginary parts."""

    columns = ["t_s", "abs_L", "re_L", "im_L"]

    @staticmethod
    def get_schema() -> str:
        return "spinbath-curve/1"

    def encode(self, result: CoherenceCurve) -> tuple[pd.DataFrame, dict[str, Any]]:
        frame = pd.DataFrame({
            "t_s": result.times,
            "abs_L": result.magnitude,
            "re_L": result.values.real,
            "im_L": result.values.imag,
        }, columns=self.columns)
        header = _scalar_metadata(result.metadata)
        if result.flags:
            header["flags"] = ",".join(sorted(result.flags))
        return frame, header

    def decode(self, frame: pd.DataFrame, header: dict[str, Any]) -> CoherenceCurve:
        metadata = {k: v for k, v in header.items() if k not in ("schema", "flags")}
        return CoherenceCurve(times=frame["t_s"].to_numpy(),
                              values=frame["re_L"].to_numpy() + 1j * frame["im_L"].to_numpy(),
                              metadata=metadata,
                              flags={QualityFlag(flag) for flag in str(header.get("flags", "")).split(",") if flag})


class CorrelationCurveCodec(ResultCodec):
    columns = ["t_s", "C_rad2_per_s2"]

    @staticmethod
    def get_schema() -> str:
        return "spinbath-correlation/1"

    def encode(self, result: CorrelationCurve) -> tuple[pd.DataFrame, dict[str, Any]]:
        frame = pd.DataFrame({"t_s": result.times, "C_rad2_per_s2": result.values}, columns=self.columns)
        return frame, _scalar_metadata(result.metadata)

    def decode(self, frame: pd.DataFrame, header: dict[str, Any]) -> CorrelationCurve:
        metadata = {k: v for k, v in header.items() if k != "schema"}
        return CorrelationCurve(times=frame["t_s"].to_numpy(), values=frame["C_rad2_per_s2"].to_numpy(),
                                metadata=metadata)


class SpectrumCodec(ResultCodec):
    """Sampled S(w); the static weight and both extrapolation modes travel in the header."""

    columns = ["omega_rad_s", "S"]

    @staticmethod
    def get_schema() -> str:
        return "spinbath-spectrum/1"

    def encode(self, result: NoiseSpectrum) -> tuple[pd.DataFrame, dict[str, Any]]:
        header = {
            **_scalar_metadata(result.metadata),
            "static_weight": result.static_weight,
            "high_extrapolation": str(result.high_extrapolation),
            "low_extrapolation": str(result.low_extrapolation),
        }
        return result.to_frame()[self.columns], header

    def decode(self, frame: pd.DataFrame, header: dict[str, Any]) -> NoiseSpectrum:
        reserved = ("schema", "static_weight", "high_extrapolation", "low_extrapolation")
        return NoiseSpectrum(
            omegas=frame["omega_rad_s"].to_numpy(),
            values=frame["S"].to_numpy(),
            static_weight=float(header.get("static_weight", 0.0)),
            high_extrapolation=Extrapolation(header.get("high_extrapolation", Extrapolation.POWER_LAW)),
            low_extrapolation=Extrapolation(header.get("low_extrapolation", Extrapolation.HOLD)),
            metadata={k: v for k, v in header.items() if k not in reserved},
        )


class TableCodec(ResultCodec):
    """Any data table, written with its own column order."""

    @staticmethod
    def get_schema() -> str:
        return "spinbath-table/1"

    def encode(self, result: pd.DataFrame) -> tuple[pd.DataFrame, dict[str, Any]]:
        return result, {}

    def decode(self, frame: pd.DataFrame, header: dict[str, Any]) -> pd.DataFrame:
        return frame


CODECS: dict[str, type[ResultCodec]] = {
    codec.get_schema(): codec for codec in (CoherenceCurveCodec, CorrelationCurveCodec, SpectrumCodec, TableCodec)
}


def _format_header(schema: str, digest: str, fields: dict[str, Any]) -> str:
    parts = [f"schema: {schema}", f"config_hash: {digest}"]
    parts += [f"{key}: {value}" for key, value in sorted(fields.items())]
    return HEADER_PREFIX + FIELD_SEPARATOR.join(parts) + "\n"


def _parse_value(text: str) -> Any:
    for convert in (int, float):
        try:
            return convert(text)
        except ValueError:
            pass
    return text


def _parse_header(line: str, filepath: Path) -> dict[str, Any]:
    if not line.startswith(HEADER_PREFIX + "schema: "):
        raise ResultFormatError(f"File {filepath} has no schema header. Cannot determine loader.")
    header = {}
    for part in line[len(HEADER_PREFIX):].rstrip("\n").split(FIELD_SEPARATOR):
        key, _, value = part.partition(": ")
        header[key] = value if key in ("schema", "config_hash") else _parse_value(value)
    return header


def save_result(codec: ResultCodec, result: Any, filepath: Path, digest: str = "") -> Path:
    """
    Save a result as a CSV file with a schema header.

    Args:
        codec: The codec to use for encoding
        result: The object to save
        filepath: Full path to the output file
        digest: Hash of the producing configuration (see config.config_hash)
    """
    frame, fields = codec.encode(result)
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with filepath.open("w", encoding="utf-8", newline="") as f:
        f.write(_format_header(codec.get_schema(), digest, fields))
        frame.to_csv(f, index=False, lineterminator="\n")
    logger.debug(f"Saved {codec.get_schema()} to {filepath}")
    return filepath


def load_result(filepath: Path, codec: ResultCodec | None = None) -> Any:
    """
    Load a result file. If codec is not provided, it is detected from the schema header.

    Raises:
        ResultFormatError: for a missing or unknown schema, or missing columns
        OSError: if the file cannot be read
    """
    filepath = Path(filepath)
    with filepath.open(encoding="utf-8") as f:
        header = _parse_header(f.readline(), filepath)
    if codec is None:
        if header["schema"] not in CODECS:
            raise ResultFormatError(f"Unknown schema '{header['schema']}' in {filepath}")
        codec = CODECS[header["schema"]]()
    frame = pd.read_csv(filepath, skiprows=1)
    missing = [c for c in codec.columns if c not in frame.columns]
    if missing:
        raise ResultFormatError(f"{filepath} lacks columns {missing} required by {codec.get_schema()}")
    logger.info(f"Loaded {header['schema']} from {filepath}")
    return codec.decode(frame, header)


def _json_ready(value: Any) -> Any:
    """Plain JSON types; NaN and infinities become null."""
    if isinstance(value, dict):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _file_stem(*parts: str) -> str:
    return "_".join(re.sub(r"[^A-Za-z0-9.+-]+", "-", str(part)).strip("-") for part in parts)


def write_summary(filepath: Path, config: ExperimentConfig, report: ScenarioReport) -> Path:
    """JSON summary: T2 per (model, sequence, field) plus every scenario table."""
    summary = {
        "schema": SUMMARY_SCHEMA,
        "config_hash": config_hash(config),
        "scenario": None if report.kind is None else str(report.kind),
        "root_seed": config.root_seed,
        "n_configurations": config.n_configurations,
        "T2": t2_table(report.ensembles).to_dict(orient="records"),
        "tables": {name: table.to_dict(orient="records") for name, table in sorted(report.tables.items())},
    }
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    filepath.write_text(json.dumps(_json_ready(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return filepath


def load_summary(filepath: Path) -> dict:
    data = json.loads(Path(filepath).read_text(encoding="utf-8"))
    if data.get("schema") != SUMMARY_SCHEMA:
        raise ResultFormatError(f"{filepath} is not a {SUMMARY_SCHEMA} file")
    return data


def export(results: list[EnsembleResult] | ScenarioReport, config: ExperimentConfig,
           directory: Path | None = None) -> list[Path]:
    """
    Write ensemble curves, correlation functions, spectra and tables as CSV and the summary as JSON,
    according to config.output.formats.

    Raises:
        OSError: if the output directory is not writable
    """
    report = results if isinstance(results, ScenarioReport) else \
        ScenarioReport(kind=None, tables={"t2": t2_table(results)}, ensembles=results)
    directory = Path(directory if directory is not None else config.output.directory)
    digest = config_hash(config)
    written = []
    if "csv" in config.output.formats:
        for result in report.ensembles:
            name = _file_stem(result.model, result.sequence, result.field.tag)
            written.append(save_result(CoherenceCurveCodec(), result.mean, directory / "curves" / f"{name}.csv", digest))
        for key, curve in sorted(report.correlations.items()):
            written.append(save_result(CorrelationCurveCodec(), curve,
                                       directory / "correlations" / f"{_file_stem(key)}.csv", digest))
        for key, noise in sorted(report.spectra.items()):
            written.append(save_result(SpectrumCodec(), noise, directory / "spectra" / f"{_file_stem(key)}.csv", digest))
        for name, table in sorted(report.tables.items()):
            written.append(save_result(TableCodec(), table, directory / f"{_file_stem(name)}.csv", digest))
    if "json" in config.output.formats:
        written.append(write_summary(directory / SUMMARY_FILENAME, config, report))
    logger.info(f"Wrote {len(written)} result files to {directory}")
    return written
