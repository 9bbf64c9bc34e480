"""changekit-export: run a segmentation foundation model over bitemporal pairs
and write sessions in the engine's interchange formats."""

from .backends import ModelLoadError, SamEncoder, SyntheticEncoder, make_backend
from .demodulate import DemodulationParams, check_demodulated, demodulate, demodulation_residual
from .export import ExportResult, export_session

__version__ = "0.1.0"

__all__ = [
    "DemodulationParams",
    "ExportResult",
    "ModelLoadError",
    "SamEncoder",
    "SyntheticEncoder",
    "check_demodulated",
    "demodulate",
    "demodulation_residual",
    "export_session",
    "make_backend",
]
