# qbath/__init__.py
"""
Quantum bath correlation simulator and weak-measurement reconstruction toolkit.
"""

__version__ = "0.3.0"

from .Config import Config
from .errors import QBathError, ConfigValidationError, NumericalInvariantError
from .bath_models import build_bath, load_preset, thermal_state
from .correlations import CorrelationIndex, CorrelationTensor, bath_correlation, correlations_up_to
from .measurement import ChannelMode, MeasurementConfig, sample_records
from .reconstruction import build_config_set, estimate_G, reconstruct
from .dynamics import predict_dephasing, exact_reduced_dynamics
from .pipeline import BathCharacterization
