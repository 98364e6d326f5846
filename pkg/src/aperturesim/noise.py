"""Gain-dependent sensor noise model.

Dark-frame noise grows exponentially with analog gain. Per color channel,
the standard deviation in 8-bit gray levels is modeled as

    sigma_c(g) = amplitude_c * exp(rate_c * g)      [g in dB]

which is linear in log space, so fitting is a plain least squares on
``ln sigma``. The fitted gain range is recorded; evaluation outside it is
allowed but flags extrapolation with a warning.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .psf import CHANNELS, channel_index

__all__ = [
    "NoiseModel",
    "NoiseFitError",
    "ExtrapolationWarning",
    "fit_noise_model",
    "noise_std_for_gain",
]


class NoiseFitError(ValueError):
    """The measurement set cannot support an exponential fit."""


class ExtrapolationWarning(UserWarning):
    """A noise std was evaluated outside the fitted gain range."""


@dataclass(frozen=True)
class NoiseModel:
    """Per-channel exponential gain-to-noise curve, R/G/B order."""

    amplitude: tuple[float, float, float]
    rate: tuple[float, float, float]
    valid_gain_range: tuple[float, float]

    def __post_init__(self) -> None:
        if len(self.amplitude) != 3 or len(self.rate) != 3:
            raise ValueError("noise model needs one (amplitude, rate) pair per channel")
        if any(a <= 0 for a in self.amplitude):
            raise ValueError("noise amplitudes must be strictly positive")
        lo, hi = self.valid_gain_range
        if lo > hi:
            raise ValueError("valid gain range must be ordered (lo <= hi)")
        for a, b in zip(self.amplitude, self.rate):
            if not (math.isfinite(a * math.exp(b * lo)) and math.isfinite(a * math.exp(b * hi))):
                raise ValueError("noise std is not finite over the valid gain range")

    def std_for_gain(self, gain_db: float, channel: int | str) -> float:
        """Noise standard deviation (gray levels) at ``gain_db``.

        Warns with :class:`ExtrapolationWarning` outside the fitted range.
        """
        ch = channel_index(channel)
        lo, hi = self.valid_gain_range
        if not (lo <= gain_db <= hi):
            warnings.warn(
                f"gain {gain_db:g} dB outside the fitted range [{lo:g}, {hi:g}] dB; "
                f"extrapolating", ExtrapolationWarning, stacklevel=2)
        return self.amplitude[ch] * math.exp(self.rate[ch] * gain_db)

    def stds_for_gain(self, gain_db: float) -> tuple[float, float, float]:
        return tuple(self.std_for_gain(gain_db, ch) for ch in range(3))

    def to_dict(self) -> dict:
        return {
            "valid_gain_range_db": list(self.valid_gain_range),
            "channels": {
                name: {"amplitude": self.amplitude[i], "rate": self.rate[i]}
                for i, name in enumerate(CHANNELS)
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "NoiseModel":
        channels = data["channels"]
        return cls(
            amplitude=tuple(float(channels[name]["amplitude"]) for name in CHANNELS),
            rate=tuple(float(channels[name]["rate"]) for name in CHANNELS),
            valid_gain_range=tuple(float(v) for v in data["valid_gain_range_db"]),
        )


def fit_noise_model(
        measurements: Mapping[int | str, Sequence[tuple[float, float]]]) -> NoiseModel:
    """Fit the exponential gain-to-noise curve per channel.

    ``measurements`` maps a channel ('R'/'G'/'B' or 0/1/2) to (gain_db,
    std_gray) pairs. Each channel needs at least two distinct gains and
    strictly positive stds.
    """
    by_channel: dict[int, list[tuple[float, float]]] = {}
    for channel, points in measurements.items():
        by_channel[channel_index(channel)] = [(float(g), float(s)) for g, s in points]
    for ch in range(3):
        if ch not in by_channel:
            raise NoiseFitError(f"missing measurements for channel {CHANNELS[ch]}")

    amplitude = [0.0, 0.0, 0.0]
    rate = [0.0, 0.0, 0.0]
    all_gains: list[float] = []
    for ch in range(3):
        points = by_channel[ch]
        gains = [g for g, _ in points]
        stds = [s for _, s in points]
        if len(set(gains)) < 2:
            raise NoiseFitError(
                f"channel {CHANNELS[ch]}: need measurements at >= 2 distinct gains")
        if any(s <= 0 for s in stds):
            raise NoiseFitError(f"channel {CHANNELS[ch]}: noise stds must be > 0")
        slope, intercept = np.polyfit(np.asarray(gains), np.log(np.asarray(stds)), 1)
        amplitude[ch] = float(np.exp(intercept))
        rate[ch] = float(slope)
        all_gains.extend(gains)

    return NoiseModel(amplitude=tuple(amplitude), rate=tuple(rate),
                      valid_gain_range=(min(all_gains), max(all_gains)))


def noise_std_for_gain(model: NoiseModel, gain_db: float, channel: int | str) -> float:
    """Module-level alias for :meth:`NoiseModel.std_for_gain`."""
    return model.std_for_gain(gain_db, channel)
