"""Batch replication: one input dataset -> |apertures| x |gains| replicas.

Every manifest record is rendered once per (aperture bank, gain) pair into
``<output_root>/<aperture>/<gain>dB/<relative rgb path>``, with the record's
annotation file copied unchanged alongside the image. Records that cannot be
processed (missing or mismatched files) are skipped and reported. Rendering
is pure per (record, aperture, gain) and the noise seed depends only on
identifying strings, so the output is byte-identical regardless of worker
count or scheduling order.
"""

from __future__ import annotations

import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import Manifest, SceneRecord, depth_to_meters, load_depth, load_rgb, save_rgb
from .noise import NoiseModel
from .psf import PsfBank
from .render import POLICY_CLAMP, RenderConfig, render

__all__ = ["ReplicationReport", "replicate_dataset", "gain_dirname"]


def gain_dirname(gain_db: float) -> str:
    return f"{gain_db:g}dB"


@dataclass
class ReplicationReport:
    """Per-replica write counts, skipped records and wall time."""

    replica_counts: dict[tuple[str, float], int] = field(default_factory=dict)
    skipped: list[dict[str, str]] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def total_written(self) -> int:
        return sum(self.replica_counts.values())

    def to_dict(self) -> dict:
        return {
            "replicas": [
                {"aperture": aperture, "gain_db": gain, "images_written": count}
                for (aperture, gain), count in sorted(self.replica_counts.items())
            ],
            "skipped": list(self.skipped),
            "total_written": self.total_written,
            "wall_time_s": self.wall_time_s,
        }

    def summary(self) -> str:
        lines = [f"wrote {self.total_written} images in {self.wall_time_s:.2f}s"]
        for (aperture, gain), count in sorted(self.replica_counts.items()):
            lines.append(f"  {aperture}/{gain_dirname(gain)}: {count} images")
        if self.skipped:
            lines.append(f"skipped {len(self.skipped)} records:")
            for entry in self.skipped:
                lines.append(f"  {entry['id']}: {entry['reason']}")
        return "\n".join(lines)


def _relative_output(path: Path, base_dir: Path) -> Path:
    try:
        return path.resolve().relative_to(base_dir.resolve())
    except ValueError:
        return Path(path.name)


def _replicate_record(record: SceneRecord, base_dir: Path,
                      banks: Mapping[str, PsfBank], noise_model: NoiseModel | None,
                      gains: Sequence[float], output_root: Path,
                      base_seed: int, policy: str, apply_centroid_offset: bool,
                      ) -> tuple[list[tuple[str, float]], dict[str, str] | None]:
    """Render one record under every (aperture, gain). Returns (written, skip)."""
    try:
        if not record.rgb_path.exists():
            raise FileNotFoundError(f"rgb file not found: {record.rgb_path}")
        if not record.depth_path.exists():
            raise FileNotFoundError(f"depth file not found: {record.depth_path}")
        rgb = load_rgb(record.rgb_path)
        depth_m = depth_to_meters(load_depth(record.depth_path), record.depth_scale)
        if depth_m.shape != rgb.shape[:2]:
            raise ValueError(f"RGB is {rgb.shape[:2]} but depth is {depth_m.shape}")
    except (OSError, ValueError) as exc:
        return [], {"id": record.record_id, "reason": str(exc)}

    rel_rgb = _relative_output(record.rgb_path, base_dir)
    rel_ann = _relative_output(record.annotation_path, base_dir)
    written = []
    for aperture, bank in banks.items():
        for gain in gains:
            config = RenderConfig(aperture_name=aperture, gain_db=gain,
                                  base_seed=base_seed, out_of_range_policy=policy,
                                  apply_centroid_offset=apply_centroid_offset)
            result = render(rgb, depth_m, bank, noise_model, config,
                            image_id=record.record_id)
            replica_dir = output_root / aperture / gain_dirname(gain)
            save_rgb(replica_dir / rel_rgb, result)
            if record.annotation_path.exists():
                ann_out = replica_dir / rel_ann
                ann_out.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(record.annotation_path, ann_out)
            written.append((aperture, gain))
    return written, None


def replicate_dataset(manifest: Manifest, banks: Mapping[str, PsfBank],
                      noise_model: NoiseModel | None, gains: Sequence[float],
                      output_root: str | Path, *, base_seed: int = 0,
                      policy: str = POLICY_CLAMP, apply_centroid_offset: bool = False,
                      workers: int = 1) -> ReplicationReport:
    """Write every (aperture, gain) replica of the manifest's images.

    ``banks`` maps aperture names to their kernel banks; the output tree is
    ``<output_root>/<aperture>/<gain>dB/...`` mirroring each record's
    relative path. Bad records are skipped and listed in the report; an
    unwritable output root aborts.
    """
    gains = [float(g) for g in gains]
    output_root = Path(output_root)
    output_root.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    report = ReplicationReport()
    for aperture in banks:
        for gain in gains:
            report.replica_counts[(aperture, gain)] = 0

    def job(record: SceneRecord):
        return _replicate_record(record, manifest.base_dir, banks, noise_model,
                                 gains, output_root, base_seed, policy,
                                 apply_centroid_offset)

    if workers <= 1:
        outcomes = [job(record) for record in manifest.records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, manifest.records))

    for written, skip in outcomes:
        for key in written:
            report.replica_counts[key] += 1
        if skip is not None:
            report.skipped.append(skip)
    report.wall_time_s = time.perf_counter() - start
    return report
