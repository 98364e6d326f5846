"""Optical photometry and projective geometry for a fixed-focal-length camera.

Covers the quantities that relate aperture geometry to image formation:
field of view, f-numbers, the photometric gain needed to equalize intensity
between apertures of different area, numerical aperture, the diffraction
limited spot size, and the mapping between an object's physical width and
the pixel width of its bounding box at a given distance.

Angles are handled in radians internally; degrees appear only at API
boundaries where stated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "CameraModel",
    "ApertureSpec",
    "ObjectClassGeometry",
    "PowerLawFit",
    "horizontal_fov",
    "f_number",
    "effective_f_number",
    "gain_factor_db",
    "numerical_aperture",
    "min_spot_size",
    "bbox_width_px",
    "fit_power_law",
    "distance_for_width",
]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: focal length, square pixel pitch and resolution.

    No orientation is assumed; ``sensor_width_px`` is simply the horizontal
    pixel count used for the horizontal field of view.
    """

    focal_length_mm: float
    pixel_pitch_um: float
    sensor_width_px: int
    sensor_height_px: int

    def __post_init__(self) -> None:
        for name in ("focal_length_mm", "pixel_pitch_um",
                     "sensor_width_px", "sensor_height_px"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class ApertureSpec:
    """A pupil shape reduced to what photometry needs: its open area.

    ``effective_diameter_mm`` is only meaningful for apertures whose
    f-number is defined directly from a diameter (e.g. a circular pupil);
    shaped apertures get an effective f-number from their area instead.
    """

    name: str
    area_mm2: float
    effective_diameter_mm: float | None = None
    is_reference: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("aperture name must be non-empty")
        if self.area_mm2 <= 0:
            raise ValueError("aperture area must be strictly positive")
        if self.effective_diameter_mm is not None and self.effective_diameter_mm <= 0:
            raise ValueError("effective diameter must be strictly positive")


@dataclass(frozen=True)
class ObjectClassGeometry:
    """Physical width of an object class, for bbox-vs-distance mapping."""

    class_name: str
    physical_width_m: float

    def __post_init__(self) -> None:
        if self.physical_width_m <= 0:
            raise ValueError("physical width must be strictly positive")


@dataclass(frozen=True)
class PowerLawFit:
    """Least-squares fit of ``value = scale_a * x ** exponent_b``.

    ``residual_rms`` is the RMS of the log-space residuals (the space
    where the fit is linear). For bbox-width-versus-distance data the
    exponent comes out negative; this is not enforced here because the
    fit is generic.
    """

    scale_a: float
    exponent_b: float
    residual_rms: float

    def __post_init__(self) -> None:
        if self.scale_a <= 0:
            raise ValueError("scale_a must be strictly positive")


def _horizontal_fov_rad(camera: CameraModel) -> float:
    half_extent_mm = 0.5 * camera.sensor_width_px * camera.pixel_pitch_um * 1e-3
    return 2.0 * math.atan(half_extent_mm / camera.focal_length_mm)


def horizontal_fov(camera: CameraModel) -> float:
    """Horizontal field of view in degrees.

    FOV_H = 2 * atan((width_px / 2 * pitch) / f), with the half-sensor
    extent and the focal length in the same length unit.
    """
    return math.degrees(_horizontal_fov_rad(camera))


def f_number(focal_length_mm: float, diameter_mm: float) -> float:
    """f-number of a lens: focal length over effective aperture diameter."""
    if focal_length_mm <= 0 or diameter_mm <= 0:
        raise ValueError("focal length and diameter must be strictly positive")
    return focal_length_mm / diameter_mm


def effective_f_number(aperture: ApertureSpec, reference: ApertureSpec,
                       reference_f_number: float) -> float:
    """Effective f-number of a shaped aperture, relative to a reference.

    The f-number scales with the square root of the area ratio:
    f/#_aperture = f/#_reference * sqrt(area_reference / area_aperture).
    """
    if reference_f_number <= 0:
        raise ValueError("reference f-number must be strictly positive")
    return reference_f_number * math.sqrt(reference.area_mm2 / aperture.area_mm2)


def gain_factor_db(aperture: ApertureSpec, reference: ApertureSpec,
                   *, literal: bool = False) -> float:
    """Gain (dB) that restores the reference aperture's image intensity.

    Collected light scales linearly with open area, and sensor gain in dB
    follows the digital-number convention (20*log10 of the value ratio),
    so the compensating gain for a smaller aperture is
    ``20*log10(area_reference / area_aperture)``. The reference aperture
    maps to exactly 0 dB.

    ``literal=True`` instead returns 20*log10 of the f-number ratio, i.e.
    half the area-ratio value (f/# goes as sqrt(area)). That convention
    treats the f-number ratio itself as an amplitude ratio; it does not
    restore intensity and is provided for comparison only.
    """
    ratio = reference.area_mm2 / aperture.area_mm2
    if literal:
        return 20.0 * math.log10(math.sqrt(ratio))
    return 20.0 * math.log10(ratio)


def numerical_aperture(f_num: float) -> float:
    """NA = 1 / (2 * f/#), the small-angle acceptance-cone sine."""
    if f_num <= 0:
        raise ValueError("f-number must be strictly positive")
    return 1.0 / (2.0 * f_num)


def min_spot_size(wavelength_um: float, f_num: float) -> float:
    """Diffraction-limited minimum spot size in micrometers.

    Four pixels should span the first Airy zero for feature extraction,
    giving spot = 4 * 1.22 * wavelength * f/#. The 1.22 factor is the
    first zero of the order-one Bessel function J1.
    """
    if wavelength_um <= 0 or f_num <= 0:
        raise ValueError("wavelength and f-number must be strictly positive")
    return 4.0 * 1.22 * wavelength_um * f_num


def bbox_width_px(obj: ObjectClassGeometry, distance_m: float,
                  camera: CameraModel) -> int:
    """Pixel width of the bounding box of ``obj`` seen at ``distance_m``.

    The object subtends 2*atan(W / 2D); its share of the horizontal field
    of view, times the horizontal resolution, rounded up to a whole pixel:

        w = ceil( (2*atan(W / 2D) / FOV_H) * R )

    Both angles are evaluated in radians.
    """
    if distance_m <= 0:
        raise ValueError("distance must be strictly positive")
    angle = 2.0 * math.atan(obj.physical_width_m / (2.0 * distance_m))
    fov = _horizontal_fov_rad(camera)
    return math.ceil(angle / fov * camera.sensor_width_px)


def fit_power_law(samples: Sequence[tuple[float, float]]) -> PowerLawFit:
    """Fit ``width = a * distance ** b`` by least squares in log-log space.

    ``samples`` are (distance, width) pairs; at least two are required and
    all values must be strictly positive.
    """
    if len(samples) < 2:
        raise ValueError("power-law fit needs at least 2 samples")
    dist = np.asarray([s[0] for s in samples], dtype=np.float64)
    width = np.asarray([s[1] for s in samples], dtype=np.float64)
    if (dist <= 0).any() or (width <= 0).any():
        raise ValueError("power-law fit needs strictly positive samples")
    log_d = np.log(dist)
    log_w = np.log(width)
    exponent, log_scale = np.polyfit(log_d, log_w, 1)
    residuals = log_w - (log_scale + exponent * log_d)
    rms = float(np.sqrt(np.mean(residuals ** 2)))
    return PowerLawFit(scale_a=float(np.exp(log_scale)),
                       exponent_b=float(exponent),
                       residual_rms=rms)


def distance_for_width(fit: PowerLawFit, width_px: float) -> float:
    """Invert a width-versus-distance power law: D = (w / a) ** (1 / b)."""
    if width_px <= 0:
        raise ValueError("width must be strictly positive")
    if fit.exponent_b == 0:
        raise ValueError("cannot invert a flat power law (exponent 0)")
    return (width_px / fit.scale_a) ** (1.0 / fit.exponent_b)
