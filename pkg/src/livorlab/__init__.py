"""livorlab: reflectance spectrometry ELN with a Monte-Carlo fitting engine."""

__version__ = "0.1.0"

from .errors import LivorlabError
from .spectral import (
    ChromophoreConcentrations,
    ExtinctionRecord,
    Spectrum,
    SpectrumKind,
    absorption_spectrum,
    cohb_fraction,
    default_grid,
    normalize_reflectance,
    resample,
)

__all__ = [
    "__version__",
    "LivorlabError",
    "Spectrum",
    "SpectrumKind",
    "ExtinctionRecord",
    "ChromophoreConcentrations",
    "default_grid",
    "normalize_reflectance",
    "resample",
    "absorption_spectrum",
    "cohb_fraction",
]
