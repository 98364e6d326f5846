"""Dataset plumbing: manifests, image/depth/annotation I/O, size classes.

A dataset is described by a JSON manifest listing scene records (RGB image,
16-bit depth map, per-image annotation file) plus a class catalog that maps
the 100 class ids onto the three object groups. Bounding boxes are binned
into tiny/small/medium/large by area against square side thresholds, and
reports are exported as RFC 4180 CSV.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

__all__ = [
    "GROUPS",
    "ManifestError",
    "ManifestSchemaError",
    "MissingFileError",
    "DimensionMismatchError",
    "SizeClassification",
    "ClassDef",
    "SceneRecord",
    "Manifest",
    "classify_bbox",
    "group_of_class",
    "default_class_catalog",
    "load_manifest",
    "export_report",
    "load_rgb",
    "save_rgb",
    "load_depth",
    "save_depth",
    "depth_to_meters",
]

GROUPS = ("traffic_sign", "speed_sign", "traffic_light")
DEFAULT_DEPTH_SCALE = 0.01  # meters per 16-bit depth unit


class ManifestError(ValueError):
    """Base class for manifest loading problems."""


class ManifestSchemaError(ManifestError):
    """The manifest or an annotation violates the documented schema."""


class MissingFileError(ManifestError):
    """A file referenced by a record does not exist."""


class DimensionMismatchError(ManifestError):
    """A record's RGB image and depth map disagree in size."""


# ---------------------------------------------------------------------------
# bounding-box size classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SizeClassification:
    """Side-length thresholds (pixels) separating the size classes.

    Boxes compare by area: area <= tiny^2 is tiny, <= small^2 small,
    <= medium^2 medium, else large. Boundaries are inclusive.
    """

    tiny: int = 23
    small: int = 32
    medium: int = 96

    def __post_init__(self) -> None:
        if not (0 < self.tiny < self.small < self.medium):
            raise ValueError("size thresholds must be strictly increasing and positive")


def classify_bbox(bbox: Sequence[float],
                  rules: SizeClassification = SizeClassification()) -> str:
    """Size class of an (x, y, w, h) box, by area against side thresholds."""
    w, h = float(bbox[2]), float(bbox[3])
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate bbox (w={w}, h={h})")
    area = w * h
    if area <= rules.tiny ** 2:
        return "tiny"
    if area <= rules.small ** 2:
        return "small"
    if area <= rules.medium ** 2:
        return "medium"
    return "large"


# ---------------------------------------------------------------------------
# class catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassDef:
    class_id: int
    class_name: str
    group: str

    def __post_init__(self) -> None:
        if self.group not in GROUPS:
            raise ValueError(f"unknown group {self.group!r}; expected one of {GROUPS}")


def default_class_catalog() -> list[ClassDef]:
    """The built-in 100-class catalog (57 signs, 28 speed signs, 15 lights)."""
    text = resources.files("aperturesim.data").joinpath("class_catalog.json").read_text()
    data = json.loads(text)
    return [ClassDef(int(c["id"]), str(c["name"]), str(c["group"]))
            for c in data["classes"]]


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneRecord:
    """One dataset entry; paths are resolved against the manifest location."""

    record_id: str
    rgb_path: Path
    depth_path: Path
    annotation_path: Path
    depth_scale: float = DEFAULT_DEPTH_SCALE

    def __post_init__(self) -> None:
        if self.depth_scale <= 0:
            raise ValueError(f"record {self.record_id!r}: depth_scale must be > 0")


@dataclass
class Manifest:
    records: list[SceneRecord]
    dataset_name: str = ""
    class_catalog: list[ClassDef] = field(default_factory=default_class_catalog)
    base_dir: Path = Path(".")

    def __post_init__(self) -> None:
        self._groups = {c.class_id: c.group for c in self.class_catalog}

    def group_of_class(self, class_id: int) -> str:
        try:
            return self._groups[class_id]
        except KeyError:
            raise KeyError(f"class id {class_id} is not in the catalog") from None

    def class_ids_of_group(self, group: str) -> list[int]:
        if group not in GROUPS:
            raise ValueError(f"unknown group {group!r}; expected one of {GROUPS}")
        return [c.class_id for c in self.class_catalog if c.group == group]


def group_of_class(manifest: Manifest, class_id: int) -> str:
    """Group tag ('traffic_sign'/'speed_sign'/'traffic_light') of a class id."""
    return manifest.group_of_class(class_id)


def _png_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as img:
        return (img.height, img.width)


def load_manifest(path: str | Path, *, validate_files: bool = True) -> Manifest:
    """Load and validate a dataset manifest.

    With ``validate_files`` every referenced file must exist, RGB and depth
    dimensions must agree, and every annotation category id must be in the
    catalog. Passing ``validate_files=False`` defers those checks to the
    consumer (used by batch jobs that want to skip-and-report bad records).
    """
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestSchemaError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(data, list):
        # bare-array form: just the record list, defaults for everything else
        data = {"records": data}
    if not isinstance(data, Mapping) or "records" not in data:
        raise ManifestSchemaError(f"{path}: manifest must be an object with a "
                                  f"'records' list, or a bare list of records")

    base = path.parent
    if "class_catalog" in data:
        try:
            catalog = [ClassDef(int(c["id"]), str(c["name"]), str(c["group"]))
                       for c in data["class_catalog"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestSchemaError(f"{path}: bad class catalog entry ({exc})") from exc
    else:
        catalog = default_class_catalog()

    default_scale = float(data.get("depth_scale", DEFAULT_DEPTH_SCALE))
    records: list[SceneRecord] = []
    seen_ids: set[str] = set()
    for entry in data["records"]:
        try:
            record_id = str(entry["id"])
            record = SceneRecord(
                record_id=record_id,
                rgb_path=base / entry["rgb_path"],
                depth_path=base / entry["depth_path"],
                annotation_path=base / entry["annotation_path"],
                depth_scale=float(entry.get("depth_scale", default_scale)),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestSchemaError(f"{path}: record missing field ({exc})") from exc
        if record_id in seen_ids:
            raise ManifestSchemaError(f"{path}: duplicate record id {record_id!r}")
        seen_ids.add(record_id)
        records.append(record)

    manifest = Manifest(records=records, dataset_name=str(data.get("dataset_name", "")),
                        class_catalog=catalog, base_dir=base)
    if validate_files:
        known_ids = {c.class_id for c in catalog}
        for record in records:
            validate_record_files(record, known_ids)
    return manifest


def validate_record_files(record: SceneRecord, known_class_ids: set[int]) -> None:
    """Existence, dimension and annotation checks for one record."""
    for kind, file_path in (("rgb", record.rgb_path),
                            ("depth", record.depth_path),
                            ("annotation", record.annotation_path)):
        if not Path(file_path).exists():
            raise MissingFileError(
                f"record {record.record_id!r}: {kind} file not found: {file_path}")
    rgb_size = _png_size(record.rgb_path)
    depth_size = _png_size(record.depth_path)
    if rgb_size != depth_size:
        raise DimensionMismatchError(
            f"record {record.record_id!r}: RGB is {rgb_size} but depth is {depth_size}")
    try:
        annotation = json.loads(Path(record.annotation_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestSchemaError(
            f"record {record.record_id!r}: annotation is not valid JSON ({exc})") from exc
    for ann in annotation.get("annotations", []):
        cid = ann.get("category_id")
        if cid not in known_class_ids:
            raise ManifestSchemaError(
                f"record {record.record_id!r}: unknown category_id {cid}")


# ---------------------------------------------------------------------------
# image / depth files
# ---------------------------------------------------------------------------

def load_rgb(path: str | Path) -> np.ndarray:
    """8-bit RGB PNG as an (H, W, 3) uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_rgb(path: str | Path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("RGB image must be (H, W, 3) uint8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)


def load_depth(path: str | Path) -> np.ndarray:
    """16-bit single-channel PNG as an (H, W) uint16 array."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"{path}: depth PNG must be single-channel")
    return arr.astype(np.uint16)


def save_depth(path: str | Path, depth: np.ndarray) -> None:
    arr = np.asarray(depth, dtype=np.uint16)
    if arr.ndim != 2:
        raise ValueError("depth map must be a 2-D uint16 array")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def depth_to_meters(depth: np.ndarray, depth_scale: float = DEFAULT_DEPTH_SCALE) -> np.ndarray:
    """Fixed-point depth units to meters."""
    return np.asarray(depth, dtype=np.float64) * float(depth_scale)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def export_report(rows: Sequence[Mapping[str, object]], schema: Sequence[str],
                  path: str | Path) -> None:
    """Write rows as RFC 4180 CSV with a header and a stable column order.

    Every row must provide exactly the keys in ``schema``.
    """
    schema = list(schema)
    expected = set(schema)
    for i, row in enumerate(rows):
        if set(row.keys()) != expected:
            missing = expected - set(row.keys())
            extra = set(row.keys()) - expected
            raise ValueError(f"row {i} does not conform to schema "
                             f"(missing {sorted(missing)}, extra {sorted(extra)})")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=schema)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
