"""Optical train configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class OpticalConfig:
    """Geometry and physical constants of the DMD optical train.

    Lengths are in metres. ``superpixel`` groups ``superpixel x superpixel``
    micromirrors into one simulation pixel; every pattern and FP1 field is
    sampled at that reduced resolution.

    Parameters
    ----------
    wavelength : float
        Vacuum wavelength of the addressing light.
    focal_length : float
        Focal length of the lens that maps FP1 onto IP1.
    dmd_pitch : float
        Micromirror pitch.
    dmd_rows, dmd_cols : int
        Full DMD extent in mirrors.
    fp1_cols, ip1_cols : int
        Column split between the Fourier-plane and image-plane regions.
    illumination_waist : float
        1/e amplitude radius of the Gaussian illumination on FP1.
    relay_magnification : float
        Lateral magnification of the IP1 to IP2 relay (f4 / f3).
    relay_focal_length : float
        Focal length f3 of the first relay lens.
    superpixel : int
        Simulation down-sampling factor.
    detector_floor_db : float
        Relative intensity floor applied by the metrics.
    amplitude_floor : float
        Fraction of the window maximum below which the illumination amplitude
        is clamped when equalising secondary holograms.
    ip1_grid : int
        Samples per axis of the local IP1 simulation grid.
    ip1_oversample : int
        IP1 samples per target waist.
    as2_cutoff : float
        Radius of the AS2 Fourier stop expressed as a spatial frequency in
        cycles per micromirror pitch.
    as2_shape : str
        ``"circle"`` or ``"square"``.
    relay_aberration_rms : float
        Default RMS (radians) of the relay pupil aberration.
    """

    wavelength: float = 370e-9
    focal_length: float = 0.25
    dmd_pitch: float = 7.6e-6
    dmd_rows: int = 1600
    dmd_cols: int = 2560
    fp1_cols: int = 2060
    ip1_cols: int = 500
    illumination_waist: float = 10e-3
    relay_magnification: float = 0.6
    relay_focal_length: float = 0.25
    superpixel: int = 4
    detector_floor_db: float = -60.0
    amplitude_floor: float = 0.05
    ip1_grid: int = 1024
    ip1_oversample: int = 8
    as2_cutoff: float = 0.25
    as2_shape: str = "circle"
    relay_aberration_rms: float = 0.5

    def __post_init__(self):
        lengths = {
            "wavelength": self.wavelength,
            "focal_length": self.focal_length,
            "dmd_pitch": self.dmd_pitch,
            "illumination_waist": self.illumination_waist,
            "relay_focal_length": self.relay_focal_length,
        }
        for name, value in lengths.items():
            if not value > 0:
                raise ConfigError(f"{name} must be strictly positive, got {value!r}")
        if not self.relay_magnification > 0:
            raise ConfigError("relay_magnification must be positive")
        for name in ("dmd_rows", "dmd_cols", "fp1_cols", "ip1_cols", "superpixel",
                     "ip1_grid", "ip1_oversample"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.fp1_cols + self.ip1_cols != self.dmd_cols:
            raise ConfigError("fp1_cols + ip1_cols must equal dmd_cols")
        s = self.superpixel
        for name in ("dmd_rows", "dmd_cols", "fp1_cols", "ip1_cols"):
            if getattr(self, name) % s:
                raise ConfigError(f"superpixel {s} does not divide {name}")
        if self.ip1_grid < 2:
            raise ConfigError("ip1_grid must be at least 2")
        if not 0 < self.amplitude_floor < 1:
            raise ConfigError("amplitude_floor must lie in (0, 1)")
        if not self.as2_cutoff > 0:
            raise ConfigError("as2_cutoff must be positive")
        if self.as2_shape not in ("circle", "square"):
            raise ConfigError("as2_shape must be 'circle' or 'square'")
        if self.relay_aberration_rms < 0:
            raise ConfigError("relay_aberration_rms must be non-negative")

    # derived geometry -------------------------------------------------

    @property
    def pitch(self) -> float:
        """Simulation pixel pitch (superpixel size)."""
        return self.dmd_pitch * self.superpixel

    @property
    def dmd_shape(self) -> tuple[int, int]:
        return self.dmd_rows // self.superpixel, self.dmd_cols // self.superpixel

    @property
    def fp1_shape(self) -> tuple[int, int]:
        return self.dmd_rows // self.superpixel, self.fp1_cols // self.superpixel

    @property
    def ip1_shape(self) -> tuple[int, int]:
        return self.dmd_rows // self.superpixel, self.ip1_cols // self.superpixel

    @property
    def partition(self) -> int:
        """First IP1 column in simulation pixels."""
        return self.fp1_cols // self.superpixel

    @property
    def relay_f4(self) -> float:
        return self.relay_focal_length * self.relay_magnification

    @property
    def as2_radius(self) -> float:
        """Radius of the AS2 stop in the relay Fourier plane, in metres."""
        return self.wavelength * self.relay_focal_length * self.as2_cutoff / self.dmd_pitch

    def image_fov(self) -> tuple[float, float]:
        """Unaliased image-plane extent (x, y) addressable from FP1."""
        lf = self.wavelength * self.focal_length
        return lf / self.pitch, lf / self.pitch

    def replace(self, **changes) -> "OpticalConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "OpticalConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown optics keys: {sorted(unknown)}")
        return cls(**data)
