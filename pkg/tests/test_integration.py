"""End-to-end: calibration frames -> bank file -> rendering.

The full loop must reproduce the optics that produced the calibration
frames: filtering an image with a bank extracted from blurred impulse grids
matches direct convolution with the original blur kernel, and a calibration
blob displacement reappears as an image displacement when offsets are
enabled.
"""

import numpy as np
from scipy.signal import convolve2d

from aperturesim.bank_io import load_bank, save_bank
from aperturesim.psf import CHANNELS, DepthPlanSpec, ImpulseGridSpec, extract_bank
from aperturesim.render import RenderConfig, filter_image
from test_psf import blur_grid, gaussian_kernel

HEIGHT, WIDTH, BLOCK = 153, 204, 51
PLAN = DepthPlanSpec((10.0, 15.0))
SHIFT_DX, SHIFT_DY = 2, 1


def calibration_frames():
    """Plane 0: plain Gaussian blur. Plane 1: different blur plus a shift."""
    kernels = {0: gaussian_kernel(5, 1.0), 1: gaussian_kernel(7, 1.6)}
    frames = {}
    for plane, kernel in kernels.items():
        for ch in CHANNELS:
            spec = ImpulseGridSpec(height=HEIGHT, width=WIDTH, block_size=BLOCK,
                                   channel=ch)
            frame = blur_grid(spec, kernel)
            if plane == 1:
                frame = np.roll(np.roll(frame, SHIFT_DY, axis=0), SHIFT_DX, axis=1)
            frames[(plane, ch)] = frame
    return frames, kernels


def test_calibrate_persist_render_roundtrip(rng, tmp_path):
    frames, kernels = calibration_frames()
    bank = extract_bank(frames, PLAN, BLOCK, aperture_name="itest")
    save_bank(bank, tmp_path / "itest.psfb")
    bank = load_bank(tmp_path / "itest.psfb")

    image = rng.integers(0, 256, (HEIGHT, WIDTH, 3)).astype(np.uint8)

    # Uniform depth in plane 0: bank filtering equals direct convolution
    # with the kernel that produced the calibration frames (away from the
    # border, where mask renormalization replaces zero padding).
    out = filter_image(image, np.full((HEIGHT, WIDTH), 10.0), bank)
    pad = 4
    for ch in range(3):
        direct = convolve2d(image[:, :, ch].astype(np.float64), kernels[0],
                            mode="same")
        diff = np.abs(out[pad:-pad, pad:-pad, ch] - direct[pad:-pad, pad:-pad])
        assert diff.max() < 0.5  # gray levels

    # Plane 1 with offsets enabled: the calibration displacement reappears.
    config = RenderConfig(apply_centroid_offset=True)
    out = filter_image(image, np.full((HEIGHT, WIDTH), 15.0), bank, config)
    pad = 8
    for ch in range(3):
        direct = convolve2d(image[:, :, ch].astype(np.float64), kernels[1],
                            mode="same")
        displaced = np.roll(np.roll(direct, SHIFT_DY, axis=0), SHIFT_DX, axis=1)
        diff = np.abs(out[pad:-pad, pad:-pad, ch] - displaced[pad:-pad, pad:-pad])
        assert diff.max() < 0.5

    # With offsets disabled only the blur survives, not the displacement.
    out = filter_image(image, np.full((HEIGHT, WIDTH), 15.0), bank)
    for ch in range(3):
        direct = convolve2d(image[:, :, ch].astype(np.float64), kernels[1],
                            mode="same")
        diff = np.abs(out[pad:-pad, pad:-pad, ch] - direct[pad:-pad, pad:-pad])
        assert diff.max() < 0.5
