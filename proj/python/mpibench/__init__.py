"""Reconstruction benchmark for multi-coil MPI systems.

Volumes are numpy arrays shaped (nz, ny, nx). Experiment and method arguments
are dicts in the same schema as the JSON config files.
"""

import sys

from ._core import (
    ConfigError,
    ConvergenceError,
    DataError,
    DimensionError,
    Error,
    NumericalError,
    evaluate,
    halving_grid,
    load_system,
    phantom,
    psnr,
    reconstruct,
    run_cli,
    ssim3d,
)

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DimensionError",
    "Error",
    "NumericalError",
    "evaluate",
    "halving_grid",
    "load_system",
    "main",
    "phantom",
    "psnr",
    "reconstruct",
    "run_cli",
    "ssim3d",
]


def main() -> int:
    return run_cli(sys.argv[1:])
