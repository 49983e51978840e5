"""Multiscale mixed Darcy solver with online enrichment and two-phase transport."""

from ._core import (
    Field,
    Grid,
    InvalidArgument,
    IoError,
    OmgmsError,
    RasterLayout,
    ValidationError,
    config_hash,
    expected_dimension,
    fine_solve,
    five_spot_sources,
    run_online,
    run_two_phase,
)

__all__ = [
    "Field",
    "Grid",
    "InvalidArgument",
    "IoError",
    "OmgmsError",
    "RasterLayout",
    "ValidationError",
    "config_hash",
    "expected_dimension",
    "fine_solve",
    "five_spot_sources",
    "run_online",
    "run_two_phase",
]
