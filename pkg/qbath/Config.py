import os
from typing import Dict, Any

from .errors import ConfigValidationError


class Config:
    """Runtime configuration for the bath characterization toolkit"""

    ENV_PREFIX = "QBATH_"

    # Numerics
    TOLERANCE = 1e-10
    HERMITICITY_TOLERANCE = 1e-10
    PROBABILITY_TOLERANCE = 1e-9
    IMAGINARY_TOLERANCE = 1e-10
    RANK_TOLERANCE = 1e-9

    # Quadrature
    QUADRATURE_TOLERANCE = 1e-6
    MAX_REFINEMENTS = 6
    INITIAL_GRID_POINTS = 11

    # Sampling
    SHOT_CHUNK = 65536
    TRACE_DRIFT_LIMIT = 1e-8
    ZERO_PROBABILITY = 1e-300
    CONSISTENCY_SIGMAS = 4.0

    # System Settings
    THREADS = 1
    LOG_LEVEL = "INFO"

    def __init__(self, overrides: Dict[str, Any] = None):
        """Initialize configuration with environment variables"""
        self._config_dict = {}
        self._load_defaults()
        self._load_env_vars()
        if overrides:
            for key, value in overrides.items():
                self._config_dict[key.upper()] = value
        self._validate_config()

    def _load_defaults(self):
        """Load default values into config dictionary"""
        for key in dir(self):
            if key.isupper() and key != "ENV_PREFIX":
                value = getattr(self, key)
                if isinstance(value, (int, float, str, bool)):
                    self._config_dict[key] = value

    def _load_env_vars(self):
        """Load configuration from environment variables"""
        for key in self._config_dict:
            env_value = os.getenv(f'{self.ENV_PREFIX}{key}')
            if env_value is not None:
                self._config_dict[key] = self._convert_type(env_value, self._config_dict[key])

    def _convert_type(self, value: str, reference: Any) -> Any:
        """Convert string value to reference type"""
        try:
            if isinstance(reference, bool):
                return value.lower() in ('true', '1', 'yes')
            elif isinstance(reference, int):
                return int(value)
            elif isinstance(reference, float):
                return float(value)
            return value
        except ValueError:
            return reference

    def _validate_config(self):
        """Validate configuration values"""
        checks = [
            (self._config_dict['THREADS'] >= 1, "THREADS must be at least 1"),
            (self._config_dict['TOLERANCE'] > 0, "TOLERANCE must be positive"),
            (self._config_dict['PROBABILITY_TOLERANCE'] > 0, "PROBABILITY_TOLERANCE must be positive"),
            (self._config_dict['QUADRATURE_TOLERANCE'] > 0, "QUADRATURE_TOLERANCE must be positive"),
            (self._config_dict['MAX_REFINEMENTS'] >= 0, "MAX_REFINEMENTS must be non-negative"),
            (self._config_dict['INITIAL_GRID_POINTS'] >= 3, "INITIAL_GRID_POINTS must be at least 3"),
            (self._config_dict['SHOT_CHUNK'] >= 1, "SHOT_CHUNK must be positive"),
            (self._config_dict['TRACE_DRIFT_LIMIT'] > 0, "TRACE_DRIFT_LIMIT must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigValidationError(message)

    def __getitem__(self, key: str) -> Any:
        """Enable dictionary-style access to config values"""
        return self._config_dict.get(key)

    def get(self, key: str, default: Any = None) -> Any:
        """Get config value with default"""
        return self._config_dict.get(key, default)

    def to_dict(self) -> Dict[str, Any]:
        """Convert config to dictionary"""
        return self._config_dict.copy()
