"""Random training-cube sampling and sliding-window tiling with
overlap-averaged merging.

Training draws cube corners uniformly over the whole volume (random
translation augmentation); whole-volume inference tiles the volume with
a half-cube stride, runs the model per cube, and averages every voxel
over all cubes covering it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .volume import Volume3D


@dataclass(frozen=True)
class PatchSpec:
    """Cube extraction geometry; stride defaults to half the cube size."""

    cube_size: int = 64
    stride: int = None
    batch_cubes: int = 2

    def __post_init__(self):
        if self.cube_size < 1:
            raise ValueError("cube_size must be >= 1")
        stride = self.stride if self.stride is not None else max(1, self.cube_size // 2)
        if not 1 <= stride <= self.cube_size:
            raise ValueError(f"stride must be in [1, cube_size], got {stride}")
        if self.batch_cubes < 1:
            raise ValueError("batch_cubes must be >= 1")
        object.__setattr__(self, "stride", int(stride))


@dataclass(frozen=True)
class TilePlan:
    """Ordered cube corners covering a volume."""

    corners: tuple          # lexicographically ordered (cx, cy, cz) triples
    dims: tuple
    cube_size: int
    stride: int


def _check_cube_fits(dims, cube_size):
    if any(d < cube_size for d in dims):
        raise ValueError(f"volume dims {tuple(dims)} smaller than cube size {cube_size}")


def sample_patch_pair(lr: Volume3D, hr: Volume3D, spec: PatchSpec, rng: np.random.Generator):
    """One aligned (lr cube, hr cube) pair at a uniformly random corner."""
    if lr.dims != hr.dims:
        raise ValueError(f"LR/HR dims differ: {lr.dims} vs {hr.dims}")
    _check_cube_fits(lr.dims, spec.cube_size)
    corner = tuple(int(rng.integers(0, d - spec.cube_size + 1)) for d in lr.dims)
    sl = tuple(slice(c, c + spec.cube_size) for c in corner)
    return lr.values[sl].copy(), hr.values[sl].copy()


def _axis_corners(dim: int, cube_size: int, stride: int):
    corners = list(range(0, dim - cube_size + 1, stride))
    if corners[-1] != dim - cube_size:
        corners.append(dim - cube_size)
    return corners


def tile_positions(dims, spec: PatchSpec) -> TilePlan:
    """Sliding-window corners; the final corner per axis is clipped to
    dim - cube_size so every voxel is covered."""
    dims = tuple(int(d) for d in dims)
    _check_cube_fits(dims, spec.cube_size)
    per_axis = [_axis_corners(d, spec.cube_size, spec.stride) for d in dims]
    corners = tuple(itertools.product(*per_axis))
    return TilePlan(corners=corners, dims=dims, cube_size=spec.cube_size, stride=spec.stride)


def extract_patches(values: np.ndarray, plan: TilePlan):
    """Cube views of `values` in plan order (stacked into one array)."""
    cs = plan.cube_size
    if values.shape != plan.dims:
        raise ValueError(f"array shape {values.shape} does not match plan dims {plan.dims}")
    return np.stack([values[cx : cx + cs, cy : cy + cs, cz : cz + cs]
                     for cx, cy, cz in plan.corners])


def merge_patches(outputs, plan: TilePlan, spacing=(0.7, 0.7, 0.7)) -> Volume3D:
    """Average overlapping cubes back into a full volume.

    Every voxel equals the arithmetic mean over all cubes covering it;
    the plan guarantees coverage >= 1 everywhere.
    """
    outputs = np.asarray(outputs)
    cs = plan.cube_size
    if len(outputs) != len(plan.corners):
        raise ValueError(f"{len(outputs)} cubes for {len(plan.corners)} plan positions")
    if outputs.shape[1:] != (cs, cs, cs):
        raise ValueError(f"cube shape {outputs.shape[1:]} does not match cube_size {cs}")
    acc = np.zeros(plan.dims, dtype=np.float64)
    count = np.zeros(plan.dims, dtype=np.int64)
    for cube, (cx, cy, cz) in zip(outputs, plan.corners):
        sl = (slice(cx, cx + cs), slice(cy, cy + cs), slice(cz, cz + cs))
        acc[sl] += cube
        count[sl] += 1
    return Volume3D(values=(acc / count).astype(np.float32), spacing=spacing)


def coverage_counts(plan: TilePlan) -> np.ndarray:
    """Per-voxel number of covering cubes."""
    cs = plan.cube_size
    count = np.zeros(plan.dims, dtype=np.int64)
    for cx, cy, cz in plan.corners:
        count[cx : cx + cs, cy : cy + cs, cz : cz + cs] += 1
    return count


def cube_to_slices(cube: np.ndarray) -> np.ndarray:
    """Split one cube into single-slice patches along the first axis,
    shaped (n_slices, 1, 1, h, w) for unit-depth 2D networks."""
    if cube.ndim != 3:
        raise ValueError(f"expected a 3D cube, got shape {cube.shape}")
    return cube[:, None, None, :, :]


def slices_to_cube(slices: np.ndarray) -> np.ndarray:
    """Inverse of cube_to_slices."""
    if slices.ndim != 5 or slices.shape[1] != 1 or slices.shape[2] != 1:
        raise ValueError(f"expected (n, 1, 1, h, w), got shape {slices.shape}")
    return slices[:, 0, 0, :, :]
