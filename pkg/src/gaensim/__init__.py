"""Exposure-notification protocol simulator with privacy attack models."""

from .crypto import TemporaryExposureKey, derive_aemk, derive_rpi, derive_rpik, generate_tek
from .device import Device
from .errors import GaenError
from .exposure import ExposureConfig, detect_exposure, should_notify
from .radio import PathLossModel, World
from .server import KeyServer
from .scenario import ScenarioConfig, emit_report, load_scenario, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Device",
    "ExposureConfig",
    "GaenError",
    "KeyServer",
    "PathLossModel",
    "ScenarioConfig",
    "TemporaryExposureKey",
    "World",
    "derive_aemk",
    "derive_rpi",
    "derive_rpik",
    "detect_exposure",
    "emit_report",
    "generate_tek",
    "load_scenario",
    "run_scenario",
    "should_notify",
]
