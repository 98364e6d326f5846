"""Measurement profiles: the built-in defaults and YAML config loading.

A profile bundles everything the geometry and rendering commands need:
the camera (16 mm lens on a 3.45 um, 2048x1536 sensor by default), the
aperture set with its photometric reference, the object classes used for
bbox/distance mapping, the depth plan, and a gain-to-noise model. The
built-in profile ships as package data; users point APERTURESIM_CONFIG or
``--config`` at their own YAML file with the same layout.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

import yaml

from .noise import NoiseModel
from .optics import ApertureSpec, CameraModel, ObjectClassGeometry
from .psf import DepthPlanSpec

__all__ = ["Profile", "load_profile", "ENV_CONFIG"]

ENV_CONFIG = "APERTURESIM_CONFIG"


@dataclass(frozen=True)
class Profile:
    camera: CameraModel
    apertures: dict[str, ApertureSpec]
    reference_aperture: str
    objects: dict[str, ObjectClassGeometry]
    depth_plan: DepthPlanSpec
    noise_model: NoiseModel

    @property
    def reference(self) -> ApertureSpec:
        return self.apertures[self.reference_aperture]


def _build_profile(data: Mapping) -> Profile:
    cam = data["camera"]
    camera = CameraModel(
        focal_length_mm=float(cam["focal_length_mm"]),
        pixel_pitch_um=float(cam["pixel_pitch_um"]),
        sensor_width_px=int(cam["sensor_width_px"]),
        sensor_height_px=int(cam["sensor_height_px"]),
    )

    apertures: dict[str, ApertureSpec] = {}
    reference_name = None
    for entry in data["apertures"]:
        spec = ApertureSpec(
            name=str(entry["name"]),
            area_mm2=float(entry["area_mm2"]),
            effective_diameter_mm=(float(entry["effective_diameter_mm"])
                                   if "effective_diameter_mm" in entry else None),
            is_reference=bool(entry.get("is_reference", False)),
        )
        if spec.name in apertures:
            raise ValueError(f"duplicate aperture name {spec.name!r}")
        apertures[spec.name] = spec
        if spec.is_reference:
            if reference_name is not None:
                raise ValueError("at most one aperture may be the reference")
            reference_name = spec.name
    if reference_name is None:
        raise ValueError("exactly one aperture must set is_reference: true")

    objects = {}
    for entry in data["objects"]:
        geometry = ObjectClassGeometry(class_name=str(entry["class_name"]),
                                       physical_width_m=float(entry["physical_width_m"]))
        objects[geometry.class_name] = geometry

    plan_cfg = data["depth_plan"]
    if "distances_m" in plan_cfg:
        plan = DepthPlanSpec(tuple(float(d) for d in plan_cfg["distances_m"]))
    else:
        plan = DepthPlanSpec.from_range(float(plan_cfg["start_m"]),
                                        float(plan_cfg["stop_m"]),
                                        float(plan_cfg["step_m"]))

    noise_model = NoiseModel.from_dict(data["noise_model"])
    return Profile(camera=camera, apertures=apertures,
                   reference_aperture=reference_name, objects=objects,
                   depth_plan=plan, noise_model=noise_model)


def load_profile(path: str | Path | None = None) -> Profile:
    """Load a profile from ``path``, APERTURESIM_CONFIG, or the built-in.

    Precedence: explicit path, then the environment variable, then the
    packaged default profile.
    """
    if path is None:
        env = os.environ.get(ENV_CONFIG)
        if env:
            path = env
    if path is None:
        text = resources.files("aperturesim.data").joinpath("default_profile.yaml").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text)
    try:
        return _build_profile(data)
    except KeyError as exc:
        raise ValueError(f"profile is missing required key {exc}") from exc
