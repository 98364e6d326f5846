"""Impulse-grid calibration targets and spatially varying PSF kernel banks.

A sensor frame is tiled into square blocks (51 px on the default 1536x2048
frame, leaving thin margins at the edges). A calibration target places a
one-pixel impulse of a single color channel at the center of every block; an
optical simulation of that target yields, per block, a small blob that is
the local PSF for that field position, channel and object distance.

``extract_bank`` turns a stack of such response frames (one per depth plane
and channel) into a ``PsfBank``: a normalized convolution kernel plus a
sub-pixel centroid displacement for every (plane, channel, block) key. The
spatial PSF model is piecewise constant: a pixel uses the kernel of the
block whose center is nearest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

__all__ = [
    "CHANNELS",
    "DepthPlanSpec",
    "BlockGrid",
    "ImpulseGridSpec",
    "PsfKernel",
    "PsfBank",
    "DegenerateBlockError",
    "synthesize_impulse_grid",
    "extract_bank",
    "kernel_at",
]

CHANNELS = ("R", "G", "B")

# Response pixels below this fraction of the block maximum are treated as
# background noise floor and zeroed before normalization.
BACKGROUND_THRESHOLD = 2.0 / 255.0


class DegenerateBlockError(ValueError):
    """A block produced no response (all-zero window) during extraction."""


def channel_index(channel: int | str) -> int:
    """Normalize a channel given as 'R'/'G'/'B' or 0/1/2 to an index."""
    if isinstance(channel, str):
        try:
            return CHANNELS.index(channel.upper())
        except ValueError:
            raise ValueError(f"unknown channel {channel!r}; expected one of {CHANNELS}") from None
    if channel not in (0, 1, 2):
        raise ValueError(f"channel index out of range: {channel}")
    return int(channel)


@dataclass(frozen=True)
class DepthPlanSpec:
    """Ordered object distances (meters) for which PSF kernels exist."""

    distances: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.distances) == 0:
            raise ValueError("depth plan must contain at least one distance")
        if any(d <= 0 for d in self.distances):
            raise ValueError("depth plan distances must be strictly positive")
        if any(b <= a for a, b in zip(self.distances, self.distances[1:])):
            raise ValueError("depth plan distances must be strictly increasing")

    @classmethod
    def from_range(cls, start_m: float, stop_m: float, step_m: float) -> "DepthPlanSpec":
        if step_m <= 0:
            raise ValueError("depth plan step must be strictly positive")
        count = int(round((stop_m - start_m) / step_m)) + 1
        if count < 1 or abs(start_m + (count - 1) * step_m - stop_m) > 1e-9:
            raise ValueError("depth plan range is not an integer number of steps")
        return cls(tuple(start_m + i * step_m for i in range(count)))

    @classmethod
    def default(cls) -> "DepthPlanSpec":
        """19 planes, 10 m to 100 m inclusive in 5 m steps."""
        return cls.from_range(10.0, 100.0, 5.0)

    def __len__(self) -> int:
        return len(self.distances)

    def __iter__(self) -> Iterator[float]:
        return iter(self.distances)

    def label(self, index: int) -> str:
        """Compact text form of a plane distance, e.g. '10' or '12.5'."""
        return f"{self.distances[index]:g}"


@dataclass(frozen=True)
class BlockGrid:
    """Tiling of a sensor into square blocks with symmetric edge margins.

    The leftover pixels (resolution modulo block size) are split evenly
    between the leading and trailing edges; an odd leftover puts the extra
    pixel at the trailing (bottom/right) edge. Block (0, 0) is top-left.
    """

    height: int
    width: int
    block_size: int

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ValueError("grid resolution must be strictly positive")
        if self.block_size <= 0 or self.block_size % 2 == 0:
            raise ValueError("block size must be positive and odd")
        if self.block_size > min(self.height, self.width):
            raise ValueError("block size exceeds the frame")

    @property
    def n_rows(self) -> int:
        return self.height // self.block_size

    @property
    def n_cols(self) -> int:
        return self.width // self.block_size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def margin_top(self) -> int:
        return (self.height - self.n_rows * self.block_size) // 2

    @property
    def margin_left(self) -> int:
        return (self.width - self.n_cols * self.block_size) // 2

    def block_center(self, block_row: int, block_col: int) -> tuple[int, int]:
        half = self.block_size // 2
        return (self.margin_top + block_row * self.block_size + half,
                self.margin_left + block_col * self.block_size + half)

    def block_containing(self, pixel: tuple[int, int]) -> tuple[int, int]:
        """Block whose center is nearest to ``pixel`` (margins clamp to edge blocks)."""
        row, col = pixel
        br = min(max((row - self.margin_top) // self.block_size, 0), self.n_rows - 1)
        bc = min(max((col - self.margin_left) // self.block_size, 0), self.n_cols - 1)
        return (int(br), int(bc))

    def block_bounds(self, block_row: int, block_col: int,
                     *, absorb_margins: bool = False) -> tuple[int, int, int, int]:
        """Pixel bounds (r0, r1, c0, c1), half-open, of one block.

        With ``absorb_margins`` the first/last blocks extend over the edge
        margins so that the blocks partition the full frame.
        """
        r0 = self.margin_top + block_row * self.block_size
        c0 = self.margin_left + block_col * self.block_size
        r1 = r0 + self.block_size
        c1 = c0 + self.block_size
        if absorb_margins:
            if block_row == 0:
                r0 = 0
            if block_col == 0:
                c0 = 0
            if block_row == self.n_rows - 1:
                r1 = self.height
            if block_col == self.n_cols - 1:
                c1 = self.width
        return (r0, r1, c0, c1)


@dataclass(frozen=True)
class ImpulseGridSpec:
    """Parameters of a single-channel impulse calibration target."""

    height: int = 1536
    width: int = 2048
    block_size: int = 51
    channel: str = "R"

    def __post_init__(self) -> None:
        channel_index(self.channel)
        # Constructing the grid validates block size (odd, within frame).
        BlockGrid(self.height, self.width, self.block_size)

    @property
    def impulse_value(self) -> tuple[int, int, int]:
        value = [0, 0, 0]
        value[channel_index(self.channel)] = 255
        return tuple(value)


def synthesize_impulse_grid(spec: ImpulseGridSpec) -> np.ndarray:
    """Black RGB frame with one full-brightness impulse per block center.

    Returns a (height, width, 3) uint8 array. Only the requested channel is
    set; edge margins stay black.
    """
    grid = BlockGrid(spec.height, spec.width, spec.block_size)
    image = np.zeros((spec.height, spec.width, 3), dtype=np.uint8)
    ch = channel_index(spec.channel)
    for i in range(grid.n_rows):
        for j in range(grid.n_cols):
            r, c = grid.block_center(i, j)
            image[r, c, ch] = 255
    return image


@dataclass(eq=False)
class PsfKernel:
    """One PSF: normalized non-negative weights plus a centroid displacement.

    ``weights`` has odd dimensions and sums to 1 (within 1e-6); it is
    applied centered. ``centroid_offset`` is the (dx, dy) displacement, in
    pixels, of the blob's intensity centroid from the impulse that produced
    it. The displacement is deliberately not baked into the weights so a
    renderer can decide whether to apply it (blur and refraction shift are
    separable effects).
    """

    weights: np.ndarray
    centroid_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float32))
        if w.ndim != 2:
            raise ValueError("kernel weights must be a 2-D array")
        if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise ValueError(f"kernel support must be odd in both dimensions, got {w.shape}")
        if (w < 0).any():
            raise ValueError("kernel weights must be non-negative")
        total = float(w.sum(dtype=np.float64))
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"kernel weights must sum to 1 within 1e-6, got {total}")
        w.setflags(write=False)
        self.weights = w
        self.centroid_offset = (float(self.centroid_offset[0]),
                                float(self.centroid_offset[1]))

    @property
    def support(self) -> tuple[int, int]:
        return self.weights.shape

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PsfKernel):
            return NotImplemented
        return (self.weights.shape == other.weights.shape
                and np.array_equal(self.weights, other.weights)
                and self.centroid_offset == other.centroid_offset)


@dataclass(eq=False)
class PsfBank:
    """Complete kernel set: one ``PsfKernel`` per (plane, channel, block).

    Keys are (plane_index, channel_index, block_row, block_col). A bank is
    validated for completeness on construction and should be treated as
    immutable afterwards; it is then safe to share across threads.
    """

    plan: DepthPlanSpec
    grid: BlockGrid
    kernels: dict[tuple[int, int, int, int], PsfKernel] = field(repr=False)
    aperture_name: str = ""

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        rows, cols = self.grid.shape
        for p in range(len(self.plan)):
            for c in range(3):
                for i in range(rows):
                    for j in range(cols):
                        if (p, c, i, j) not in self.kernels:
                            raise ValueError(
                                f"incomplete bank: missing kernel for plane {p}, "
                                f"channel {CHANNELS[c]}, block ({i}, {j})")

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.grid.height, self.grid.width)

    @property
    def block_size(self) -> int:
        return self.grid.block_size

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def n_planes(self) -> int:
        return len(self.plan)

    def kernel_at(self, pixel: tuple[int, int], plane_index: int,
                  channel: int | str) -> PsfKernel:
        """Kernel governing ``pixel`` (nearest block center, clamped at edges)."""
        row, col = pixel
        if not (0 <= row < self.grid.height and 0 <= col < self.grid.width):
            raise ValueError(f"pixel {pixel} outside the {self.resolution} frame")
        if not (0 <= plane_index < self.n_planes):
            raise ValueError(f"plane index {plane_index} outside the {self.n_planes}-plane plan")
        ch = channel_index(channel)
        bi, bj = self.grid.block_containing((row, col))
        return self.kernels[(plane_index, ch, bi, bj)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PsfBank):
            return NotImplemented
        return (self.plan == other.plan
                and self.grid == other.grid
                and self.aperture_name == other.aperture_name
                and self.kernels == other.kernels)


def kernel_at(bank: PsfBank, pixel: tuple[int, int], plane_index: int,
              channel: int | str) -> PsfKernel:
    """Spatial kernel lookup; see :meth:`PsfBank.kernel_at`."""
    return bank.kernel_at(pixel, plane_index, channel)


def _pad_to_odd(patch: np.ndarray) -> np.ndarray:
    # A one-pixel pad cannot be symmetric; the extra row/column goes to the
    # trailing edge, mirroring the grid margin convention.
    pad_r = patch.shape[0] % 2 == 0
    pad_c = patch.shape[1] % 2 == 0
    if pad_r or pad_c:
        patch = np.pad(patch, ((0, int(pad_r)), (0, int(pad_c))))
    return patch


def _center_crop_odd(patch: np.ndarray, max_size: int) -> np.ndarray:
    # Cap oversized supports at the block size, keeping odd dimensions.
    out = patch
    for axis in (0, 1):
        size = out.shape[axis]
        if size > max_size:
            start = (size - max_size) // 2
            sl = [slice(None), slice(None)]
            sl[axis] = slice(start, start + max_size)
            out = out[tuple(sl)]
    return out


def _extract_block(frame: np.ndarray, grid: BlockGrid, block_row: int,
                   block_col: int) -> PsfKernel:
    r0, r1, c0, c1 = grid.block_bounds(block_row, block_col, absorb_margins=True)
    window = frame[r0:r1, c0:c1].astype(np.float64)
    peak = float(window.max())
    if peak <= 0.0:
        raise DegenerateBlockError(
            f"no response in block ({block_row}, {block_col})")

    window = np.where(window >= peak * BACKGROUND_THRESHOLD, window, 0.0)

    ys, xs = np.nonzero(window)
    total = window.sum()
    centroid_r = float((window[ys, xs] * ys).sum() / total) + r0
    centroid_c = float((window[ys, xs] * xs).sum() / total) + c0
    impulse_r, impulse_c = grid.block_center(block_row, block_col)
    offset = (centroid_c - impulse_c, centroid_r - impulse_r)  # (dx, dy)

    patch = window[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    patch = _pad_to_odd(patch)
    patch = _center_crop_odd(patch, grid.block_size)
    patch = patch / patch.sum()
    return PsfKernel(weights=patch.astype(np.float32), centroid_offset=offset)


def extract_bank(frames: Mapping[tuple[int, int | str], np.ndarray],
                 plan: DepthPlanSpec, block_size: int,
                 aperture_name: str = "") -> PsfBank:
    """Extract per-block PSF kernels from impulse-response frames.

    ``frames`` maps (plane_index, channel) to the response frame for that
    object distance and color channel. A frame is either an (H, W, 3) image,
    of which the addressed channel plane is used, or a single (H, W) plane.
    Values may be uint8 or float; extraction runs in float64 so calibration
    frames kept in floating point lose nothing to quantization.

    Per block: the block window is cropped around the impulse position
    (edge blocks include the frame margins), values below 2/255 of the
    window maximum are zeroed as noise floor, the intensity centroid of the
    surviving pixels minus the impulse position gives ``centroid_offset``,
    and the tight bounding box of the surviving pixels, padded to odd
    dimensions and normalized to unit sum, gives the kernel weights. A blob
    that crosses its block boundary is still attributed to the block whose
    impulse produced it, but the part beyond the window is clipped; blobs
    must keep displacement + support radius within half a block.
    """
    planes = len(plan)
    normalized: dict[tuple[int, int], np.ndarray] = {}
    for (plane, channel), frame in frames.items():
        normalized[(int(plane), channel_index(channel))] = np.asarray(frame)

    shape = None
    for plane in range(planes):
        for ch in range(3):
            if (plane, ch) not in normalized:
                raise ValueError(
                    f"missing frame for plane {plane} ({plan.label(plane)} m), "
                    f"channel {CHANNELS[ch]}")
            frame = normalized[(plane, ch)]
            frame_shape = frame.shape[:2]
            if shape is None:
                shape = frame_shape
            elif frame_shape != shape:
                raise ValueError(
                    f"frame for plane {plane}, channel {CHANNELS[ch]} has shape "
                    f"{frame_shape}, expected {shape}")

    grid = BlockGrid(shape[0], shape[1], block_size)
    kernels: dict[tuple[int, int, int, int], PsfKernel] = {}
    for (plane, ch), frame in sorted(normalized.items()):
        plane_frame = frame[..., ch] if frame.ndim == 3 else frame
        for i in range(grid.n_rows):
            for j in range(grid.n_cols):
                try:
                    kernels[(plane, ch, i, j)] = _extract_block(plane_frame, grid, i, j)
                except DegenerateBlockError:
                    raise DegenerateBlockError(
                        f"no response in block ({i}, {j}) of plane {plane} "
                        f"({plan.label(plane)} m), channel {CHANNELS[ch]}") from None
    return PsfBank(plan=plan, grid=grid, kernels=kernels, aperture_name=aperture_name)
