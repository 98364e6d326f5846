"""Single-file container for PSF kernel banks.

Layout::

    4 bytes   magic "PSFB"
    4 bytes   header length, uint32 little-endian
    N bytes   UTF-8 JSON header
    M bytes   payload: kernel weights, little-endian float32, row-major,
              concatenated in header order
    4 bytes   CRC-32 of the payload, uint32 little-endian

The header carries the format version, aperture name, depth plan, grid
geometry, the payload size, and per kernel its key, support, centroid
offset and byte offset into the payload. Weights survive a save/load
round trip bit-exactly (they are float32 in memory and on disk).
"""

from __future__ import annotations

import json
import zlib
from os import PathLike
from pathlib import Path

import numpy as np

from .psf import BlockGrid, DepthPlanSpec, PsfBank, PsfKernel

__all__ = [
    "FORMAT_VERSION",
    "PsfBankFormatError",
    "PsfBankVersionError",
    "PsfBankTruncatedError",
    "PsfBankChecksumError",
    "save_bank",
    "load_bank",
]

MAGIC = b"PSFB"
FORMAT_VERSION = 1


class PsfBankFormatError(ValueError):
    """Malformed bank container (bad magic, header or geometry)."""


class PsfBankVersionError(PsfBankFormatError):
    """The file's format version is not supported by this reader."""


class PsfBankTruncatedError(PsfBankFormatError):
    """The file ends before the declared payload and checksum."""


class PsfBankChecksumError(PsfBankFormatError):
    """The payload does not match its stored CRC-32."""


def save_bank(bank: PsfBank, path: str | PathLike) -> None:
    """Write ``bank`` to ``path`` in the container format above."""
    entries = []
    chunks = []
    pos = 0
    for key in sorted(bank.kernels):
        kernel = bank.kernels[key]
        data = np.ascontiguousarray(kernel.weights, dtype="<f4").tobytes()
        entries.append({
            "key": list(key),
            "support": list(kernel.support),
            "offset": list(kernel.centroid_offset),
            "pos": pos,
        })
        chunks.append(data)
        pos += len(data)
    payload = b"".join(chunks)

    header = {
        "format_version": FORMAT_VERSION,
        "aperture_name": bank.aperture_name,
        "plan_m": list(bank.plan.distances),
        "resolution": list(bank.resolution),
        "block_size": bank.block_size,
        "grid_shape": list(bank.grid_shape),
        "payload_size": len(payload),
        "kernels": entries,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(zlib.crc32(payload).to_bytes(4, "little"))


def load_bank(path: str | PathLike) -> PsfBank:
    """Read a bank container, verifying version, completeness and checksum."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise PsfBankTruncatedError(f"{path}: file too short for a bank container")
    if blob[:4] != MAGIC:
        raise PsfBankFormatError(f"{path}: not a PSF bank container (bad magic)")
    header_len = int.from_bytes(blob[4:8], "little")
    if len(blob) < 8 + header_len:
        raise PsfBankTruncatedError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PsfBankFormatError(f"{path}: unreadable header ({exc})") from exc

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise PsfBankVersionError(
            f"{path}: format version {version} is not supported "
            f"(this reader handles version {FORMAT_VERSION})")

    payload_size = int(header["payload_size"])
    payload_start = 8 + header_len
    if len(blob) < payload_start + payload_size + 4:
        raise PsfBankTruncatedError(
            f"{path}: payload truncated (expected {payload_size} bytes plus checksum)")
    payload = blob[payload_start:payload_start + payload_size]
    stored_crc = int.from_bytes(blob[payload_start + payload_size:
                                     payload_start + payload_size + 4], "little")
    if zlib.crc32(payload) != stored_crc:
        raise PsfBankChecksumError(f"{path}: payload CRC-32 mismatch")

    try:
        plan = DepthPlanSpec(tuple(header["plan_m"]))
        height, width = header["resolution"]
        grid = BlockGrid(int(height), int(width), int(header["block_size"]))
        kernels = {}
        for entry in header["kernels"]:
            key = tuple(int(v) for v in entry["key"])
            kh, kw = (int(v) for v in entry["support"])
            pos = int(entry["pos"])
            count = kh * kw
            weights = np.frombuffer(payload, dtype="<f4", count=count,
                                    offset=pos).reshape(kh, kw).copy()
            dx, dy = entry["offset"]
            kernels[key] = PsfKernel(weights=weights,
                                     centroid_offset=(float(dx), float(dy)))
        bank = PsfBank(plan=plan, grid=grid, kernels=kernels,
                       aperture_name=header.get("aperture_name", ""))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PsfBankFormatError):
            raise
        raise PsfBankFormatError(f"{path}: invalid bank content ({exc})") from exc
    if list(grid.shape) != list(header["grid_shape"]):
        raise PsfBankFormatError(
            f"{path}: grid shape {header['grid_shape']} inconsistent with "
            f"resolution and block size")
    return bank
