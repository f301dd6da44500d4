"""spinbath - central-spin decoherence of Si:Bi donor qubits in a 29Si nuclear-spin bath."""

# ignore F401: imported but unused
# flake8: noqa: F401

from . import common
from .common import REPO_ROOT_PATH, DATA_FOLDER_PATH, PRESETS_FOLDER_PATH

from . import types
from .types import LevelLabel, CoherenceCurve, CorrelationCurve, QualityFlag

from . import errors
from .errors import SpinBathError

from . import donor_levels
from .donor_levels import DonorParams, TransitionPair, transition, find_clock_transition

from . import bath_gen
from .bath_gen import BathConfiguration, FieldOrientation, LatticeSpec, generate_bath

from . import dd_sequences
from .dd_sequences import PulseSequence, parse_sequence, filter_function

from . import cce_engine
from .cce_engine import CCEOptions, cce_coherence, cce_correlation

from . import noise_model
from .noise_model import NoiseSpectrum, fit_stretched_exponential, spectrum

from . import spectroscopy
from .spectroscopy import extract_spectrum, predict_decoherence

from . import config
from .config import ExperimentConfig, load_config, load_preset

from . import harness  # allow "import spinbath.harness"
from .harness import run_experiment, run_scenario, coherence_time

from . import result_codec

# Deactivate `from spinbath import *` behavior
__all__ = []
