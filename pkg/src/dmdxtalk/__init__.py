"""Scalar Fourier-optics simulator for crosstalk suppression with binary DMD holograms."""

from .config import OpticalConfig
from .errors import (CapacityError, ConfigError, Diagnostic, DmdXtalkError, NoBeamError, NoPeakError,
                     ParameterError, RuleViolation, ShapeError)
from .hologram import (AddressingTarget, GratingSpec, SecondaryHologramSpec, WindowSpec, ifta_primary,
                       multiplex, random_binarize, secondary_continuous, shift_grating)
from .metrics import CrosstalkProfile, extract_profile, fit_waist, relative_crosstalk
from .optics import (AberrationMap, ComplexField, DmdPattern, apply_mask, fourier_aperture, gaussian_illumination,
                     lens_fourier, relay_image)

__version__ = "0.1.0"

__all__ = [
    "AberrationMap", "AddressingTarget", "CapacityError", "ComplexField", "ConfigError", "CrosstalkProfile",
    "Diagnostic", "DmdPattern", "DmdXtalkError", "GratingSpec", "NoBeamError", "NoPeakError", "OpticalConfig",
    "ParameterError", "RuleViolation", "SecondaryHologramSpec", "ShapeError", "WindowSpec", "apply_mask",
    "extract_profile", "fit_waist", "fourier_aperture", "gaussian_illumination", "ifta_primary", "lens_fourier",
    "multiplex", "random_binarize", "relative_crosstalk", "relay_image", "secondary_continuous", "shift_grating",
]
