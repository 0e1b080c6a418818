"""ToA + IMU pose estimation with an error-state Kalman filter and sliding-window pose-graph optimization."""

from ._core import (
    ConfigError,
    DataError,
    Error,
    NumericalError,
    ate,
    config_template,
    default_base_stations,
    exp_so3,
    generate_trajectory,
    log_so3,
    preset_noise,
    run,
    simulate_toa,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "NumericalError",
    "ate",
    "config_template",
    "default_base_stations",
    "exp_so3",
    "generate_trajectory",
    "log_so3",
    "preset_noise",
    "run",
    "simulate_toa",
]
