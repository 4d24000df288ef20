"""Configuration module - loads and validates environment variables and experiment files."""

import math
import os
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv


# Load environment variables from .env file
load_dotenv()

_REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class ConfigError(Exception):
    """Custom exception for configuration errors."""
    pass


class Config:
    """Application configuration loaded from environment variables."""

    # Grid Configuration
    LEVEL_CAP = int(os.getenv("STAGGER_LEVEL_CAP", "12"))

    # Solver Configuration
    CFL_SAFETY = float(os.getenv("STAGGER_CFL", "0.45"))

    # Verification Configuration
    ORACLE_RESOLUTION = int(os.getenv("STAGGER_ORACLE_RESOLUTION", "96"))
    VERIFY_SAMPLES = int(os.getenv("STAGGER_VERIFY_SAMPLES", "200"))

    # File Paths
    EXPERIMENTS_FILE = os.getenv(
        "STAGGER_EXPERIMENTS_FILE", os.path.join(_REPO_ROOT, "config", "experiments.yaml")
    )

    # Application Settings
    DEBUG_MODE = os.getenv("DEBUG_MODE", "false").lower() == "true"

    @classmethod
    def validate(cls) -> None:
        """
        Validate that all required configuration is present and valid.

        Raises:
            ConfigError: If any required configuration is missing or invalid
        """
        errors = []

        if not os.path.exists(cls.EXPERIMENTS_FILE):
            errors.append(f"Experiments file not found: {cls.EXPERIMENTS_FILE}")

        if not 1 <= cls.LEVEL_CAP <= 20:
            errors.append(f"STAGGER_LEVEL_CAP must be in [1, 20], got: {cls.LEVEL_CAP}")

        if not 0.0 < cls.CFL_SAFETY <= 1.0:
            errors.append(f"STAGGER_CFL must be in (0, 1], got: {cls.CFL_SAFETY}")

        if cls.ORACLE_RESOLUTION <= 0 or cls.ORACLE_RESOLUTION % 24 != 0:
            errors.append(
                f"STAGGER_ORACLE_RESOLUTION must be a positive multiple of 24, got: {cls.ORACLE_RESOLUTION}"
            )

        if cls.VERIFY_SAMPLES < 1:
            errors.append(f"STAGGER_VERIFY_SAMPLES must be positive, got: {cls.VERIFY_SAMPLES}")

        # Raise all errors at once
        if errors:
            error_message = "Configuration validation failed:\n" + "\n".join(f"  - {e}" for e in errors)
            raise ConfigError(error_message)

    @classmethod
    def get_summary(cls) -> str:
        """
        Get a summary of the current configuration.

        Returns:
            str: Formatted configuration summary
        """
        summary = [
            "Configuration Summary:",
            f"  Level Cap: {cls.LEVEL_CAP}",
            f"  CFL Safety: {cls.CFL_SAFETY}",
            f"  Oracle Resolution: {cls.ORACLE_RESOLUTION}",
            f"  Verify Samples: {cls.VERIFY_SAMPLES}",
            f"  Experiments File: {cls.EXPERIMENTS_FILE}",
            f"  Debug Mode: {cls.DEBUG_MODE}",
        ]
        return "\n".join(summary)


DEFAULT_EXPERIMENTS: Dict[str, Dict[str, Any]] = {
    "paraboloid": {
        "center": [0.5, 0.5, 0.35],
        "tilt_x_degrees": 20.0,
        "tilt_y_degrees": 15.0,
        "coefficients": [2.0, 1.0],
        "offset": 0.35,
    },
    "sphere": {
        "center": [0.5, 0.5, 0.5],
        "radius": 0.3,
    },
    "cone": {
        "center": [0.6, 0.3, 0.2],
        "radius": 0.25,
        "plane_u": [1.0, 0.0, 0.0],
        "plane_v": [0.0, 1.0, 0.5],
        "angular_speed": 1.0,
        "end_time": math.pi / 4.0,
    },
}


def load_experiments(path: Optional[str] = None) -> Dict[str, Dict[str, Any]]:
    """
    Load experiment parameters from a YAML file.

    Sections missing from the file keep their built-in defaults; keys inside a
    section override the defaults one by one.

    Args:
        path: Path to the YAML file (default: Config.EXPERIMENTS_FILE)

    Returns:
        dict: Experiment parameters keyed by section ("paraboloid", "sphere", "cone")

    Raises:
        ConfigError: If the file is missing or malformed
    """
    path = path or Config.EXPERIMENTS_FILE
    if not os.path.exists(path):
        raise ConfigError(f"Experiments file not found: {path}")

    try:
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in experiments file '{path}': {e}")

    if not isinstance(loaded, dict):
        raise ConfigError(f"Experiments file '{path}' must contain a mapping")

    experiments = {}
    for section, defaults in DEFAULT_EXPERIMENTS.items():
        override = loaded.get(section) or {}
        if not isinstance(override, dict):
            raise ConfigError(f"Section '{section}' in '{path}' must be a mapping")
        experiments[section] = {**defaults, **override}
    return experiments
