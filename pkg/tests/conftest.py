import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from aperturesim.psf import BlockGrid, DepthPlanSpec, PsfBank, PsfKernel

# Make the test-side oracle helpers importable from every test module.
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


def delta_kernel() -> PsfKernel:
    return PsfKernel(weights=np.array([[1.0]], dtype=np.float32))


def make_bank(height, width, block_size, plan, kernel_factory,
              aperture_name="test") -> PsfBank:
    """Bank with one kernel per key produced by ``kernel_factory(key)``."""
    if isinstance(plan, int):
        plan = DepthPlanSpec(tuple(10.0 + 5.0 * i for i in range(plan)))
    grid = BlockGrid(height, width, block_size)
    kernels = {}
    for p in range(len(plan)):
        for ch in range(3):
            for i in range(grid.n_rows):
                for j in range(grid.n_cols):
                    key = (p, ch, i, j)
                    kernels[key] = kernel_factory(key)
    return PsfBank(plan=plan, grid=grid, kernels=kernels, aperture_name=aperture_name)


def random_kernel(rng, size=5, low=0.05) -> PsfKernel:
    """Normalized random kernel bounded away from the extraction noise floor."""
    weights = rng.uniform(low, 1.0, (size, size))
    weights /= weights.sum()
    return PsfKernel(weights=weights.astype(np.float32))


def delta_bank(height, width, block_size=21, planes=2) -> PsfBank:
    return make_bank(height, width, block_size, planes, lambda key: delta_kernel())


def random_bank(rng, height, width, block_size=21, planes=2, size=5) -> PsfBank:
    return make_bank(height, width, block_size, planes,
                     lambda key: random_kernel(rng, size=size))


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
