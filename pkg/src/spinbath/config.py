"""
Experiment configuration: pydantic models loaded from TOML files.

A minimal file only names what differs from the defaults:

    model = "both"
    sequences = ["hahn", "cpmg:4", "cpmg:16"]
    n_configurations = 20

    [field]
    offsets_mT = [0.15]

    [bath]
    orientation = "110"

See docs/CONFIGURATION.md for every key.
"""
import hashlib
import json
import tomllib
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .bath_gen import FieldOrientation, HyperfineModel, HyperfineTable, IsotropicEnvelope, LatticeSpec
from .cce_engine import CCEOptions
from .common import PRESETS_FOLDER_PATH, TWO_PI, ghz_to_rad_s, mt_to_tesla
from .dd_sequences import PulseSequence, parse_sequence
from .donor_levels import DonorParams
from .errors import ConfigError, SequenceError
from .types import AmplitudeMode, CorrelationSource, Domain, Extrapolation, LevelLabel, ModelKind, ScenarioKind


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DonorSection(Section):
    A0_GHz: float = Field(1.4754, gt=0)
    gamma_e_GHz_per_T: float = 27.997
    gamma_n_MHz_per_T: float = 6.963
    nuclear_spin: float = Field(4.5, gt=0)

    def to_params(self) -> DonorParams:
        return DonorParams(
            A0=ghz_to_rad_s(self.A0_GHz),
            gamma_e=TWO_PI * self.gamma_e_GHz_per_T * 1e9,
            gamma_n_host=TWO_PI * self.gamma_n_MHz_per_T * 1e6,
            nuclear_spin=self.nuclear_spin,
        )


def _check_label(value: str) -> str:
    LevelLabel.parse(value)
    return value


class TransitionSection(Section):
    plus: str = "5,-1"
    minus: str = "4,-2"
    ct_search_mT: tuple[float, float] = (50.0, 120.0)

    @field_validator("plus", "minus")
    @classmethod
    def _valid_label(cls, value: str) -> str:
        return _check_label(value)

    @field_validator("ct_search_mT")
    @classmethod
    def _ordered(cls, value: tuple[float, float]) -> tuple[float, float]:
        if not 0 <= value[0] < value[1]:
            raise ValueError(f"ct_search_mT must be an increasing pair of non-negative fields, got {value}")
        return value

    @property
    def labels(self) -> tuple[LevelLabel, LevelLabel]:
        return LevelLabel.parse(self.plus), LevelLabel.parse(self.minus)

    @property
    def search_bracket(self) -> tuple[float, float]:
        return mt_to_tesla(self.ct_search_mT[0]), mt_to_tesla(self.ct_search_mT[1])


class FieldSection(Section):
    """Fields as offsets from the clock transition and/or absolute values."""
    offsets_mT: list[float] = Field(default_factory=lambda: [0.15])
    absolute_mT: list[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _not_empty(self) -> "FieldSection":
        if not self.offsets_mT and not self.absolute_mT:
            raise ValueError("At least one field (offset or absolute) is required")
        if any(b < 0 for b in self.absolute_mT):
            raise ValueError("Absolute fields must be non-negative")
        return self


class BathSection(Section):
    cutoff_nm: float = Field(4.5, gt=0)
    abundance: float = Field(0.047, gt=0, le=1)
    orientation: str = "110"
    hyperfine: Literal["envelope", "table"] = "envelope"
    A_max_MHz: float = Field(1.0, ge=0)
    r_B_nm: float = Field(1.5, gt=0)
    table_path: Path | None = None

    @field_validator("orientation")
    @classmethod
    def _parse_orientation(cls, value: str) -> str:
        FieldOrientation.parse(value)
        return value

    @model_validator(mode="after")
    def _table_exists(self) -> "BathSection":
        if self.hyperfine == "table":
            if self.table_path is None:
                raise ValueError("hyperfine = 'table' needs table_path")
            if not self.table_path.is_file():
                raise ValueError(f"Hyperfine table not found: {self.table_path}")
        return self

    def lattice(self) -> LatticeSpec:
        return LatticeSpec(cutoff_radius=self.cutoff_nm * 1e-9, abundance=self.abundance)

    def field_orientation(self) -> FieldOrientation:
        return FieldOrientation.parse(self.orientation)

    def hyperfine_model(self) -> HyperfineModel:
        if self.hyperfine == "table":
            return HyperfineTable(self.table_path)
        return IsotropicEnvelope(A_max=TWO_PI * self.A_max_MHz * 1e6, r_B=self.r_B_nm * 1e-9)


class CCESection(Section):
    order: int = Field(2, ge=1, le=3)
    pair_cutoff_nm: float = Field(0.8, gt=0)
    dipolar_floor_Hz: float = Field(0.0, ge=0)
    mean_field: bool = True
    cluster_workers: int = Field(1, ge=1)


class TimeGridSection(Section):
    """Total evolution times; "log" spacing puts t = 0 first and n_points - 1 log-spaced times from t_min_ms."""
    t_max_ms: float = Field(1.0, gt=0)
    n_points: int = Field(101, ge=2)
    spacing: Literal["linear", "log"] = "linear"
    t_min_ms: float = Field(1e-3, gt=0)

    @model_validator(mode="after")
    def _ordered(self) -> "TimeGridSection":
        if self.spacing == "log" and not self.t_min_ms < self.t_max_ms:
            raise ValueError(f"t_min_ms ({self.t_min_ms}) must be below t_max_ms ({self.t_max_ms})")
        return self

    def times(self) -> np.ndarray:
        if self.spacing == "log":
            return np.concatenate([[0.0], np.geomspace(self.t_min_ms * 1e-3, self.t_max_ms * 1e-3, self.n_points - 1)])
        return np.linspace(0.0, self.t_max_ms * 1e-3, self.n_points)


class OutputSection(Section):
    directory: Path = Path("results")
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class HighFieldSection(Section):
    plus: str = "5,-4"
    minus: str = "4,-5"
    field_mT: float = Field(468.65, gt=0)

    @field_validator("plus", "minus")
    @classmethod
    def _valid_label(cls, value: str) -> str:
        return _check_label(value)

    @property
    def labels(self) -> tuple[LevelLabel, LevelLabel]:
        return LevelLabel.parse(self.plus), LevelLabel.parse(self.minus)


class ScenarioSection(Section):
    """Extra inputs of the shipped scenario presets."""
    kind: ScenarioKind
    angles_deg: list[float] = Field(default_factory=lambda: [0.0, 15.0, 30.0, 45.0, 55.0, 70.0, 90.0])
    convergence_max_order: int = Field(3, ge=1, le=3)
    high_field: HighFieldSection | None = None
    extraction_N: int = Field(100, ge=1)
    prediction_N: list[int] = Field(default_factory=lambda: [16, 32, 50, 100, 200])
    high_extrapolation: Extrapolation = Extrapolation.POWER_LAW


class ExperimentConfig(Section):
    model: ModelKind = ModelKind.BOTH
    domain: Domain = Domain.TIME
    correlation_source: CorrelationSource = CorrelationSource.CCE
    amplitude_mode: AmplitudeMode = AmplitudeMode.ORACLE
    sequences: list[str] = Field(default_factory=lambda: ["hahn", "cpmg:4", "cpmg:16"])
    n_configurations: int = Field(20, ge=1)
    root_seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)

    donor: DonorSection = Field(default_factory=DonorSection)
    transition: TransitionSection = Field(default_factory=TransitionSection)
    field: FieldSection = Field(default_factory=FieldSection)
    bath: BathSection = Field(default_factory=BathSection)
    cce: CCESection = Field(default_factory=CCESection)
    time_grid: TimeGridSection = Field(default_factory=TimeGridSection)
    output: OutputSection = Field(default_factory=OutputSection)
    scenario: ScenarioSection | None = None

    @field_validator("sequences")
    @classmethod
    def _parse_sequences(cls, value: list[str]) -> list[str]:
        if not value:
            raise ValueError("At least one sequence is required")
        for text in value:
            parse_sequence(text)
        return value

    @field_validator("amplitude_mode", mode="before")
    @classmethod
    def _amplitude_alias(cls, value):
        return AmplitudeMode(value) if isinstance(value, str) else value

    def pulse_sequences(self) -> list[PulseSequence]:
        return [parse_sequence(text) for text in self.sequences]

    def cce_options(self) -> CCEOptions:
        return CCEOptions(
            max_order=self.cce.order,
            pair_cutoff=self.cce.pair_cutoff_nm * 1e-9,
            dipolar_floor=TWO_PI * self.cce.dipolar_floor_Hz,
            mean_field=self.cce.mean_field,
            time_grid=self.time_grid.times(),
            workers=self.cce.cluster_workers,
        )


def _format_validation_error(error: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in error.errors())


def parse_config(data: dict, source: str = "<dict>") -> ExperimentConfig:
    """
    Raises:
        ConfigError: listing every invalid field
    """
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration {source}: {_format_validation_error(e)}") from e
    except (SequenceError, ValueError) as e:
        raise ConfigError(f"Invalid configuration {source}: {e}") from e


def load_config(filepath: Path) -> ExperimentConfig:
    filepath = Path(filepath)
    if not filepath.is_file():
        raise ConfigError(f"Configuration file not found: {filepath}")
    try:
        with filepath.open("rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{filepath} is not valid TOML: {e}") from e
    return parse_config(data, str(filepath))


def available_presets() -> list[str]:
    return sorted(path.stem for path in PRESETS_FOLDER_PATH.glob("*.toml"))


def load_preset(name: str) -> ExperimentConfig:
    filepath = PRESETS_FOLDER_PATH / f"{name}.toml"
    if not filepath.is_file():
        raise ConfigError(f"Unknown preset '{name}'; available: {', '.join(available_presets())}")
    return load_config(filepath)


def with_overrides(config: ExperimentConfig, seed: int | None = None, out: Path | None = None,
                   **fields) -> ExperimentConfig:
    """
    Copy of the config with CLI overrides applied and re-validated.

    Section fields are addressed as section__field, e.g. bath__cutoff_nm=5.0; None leaves a value unchanged.
    """
    data = config.model_dump(mode="json")
    if seed is not None:
        data["root_seed"] = seed
    if out is not None:
        data["output"]["directory"] = str(out)
    for key, value in fields.items():
        if value is None:
            continue
        section, _, name = key.partition("__")
        if name:
            if data.get(section) is None:
                data[section] = {}
            data[section][name] = value
        else:
            data[key] = value
    return parse_config(data, "<overrides>")


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
