"""Differentiable pull-based resampling of volumes and label maps.

Each target voxel's normalized coordinate is mapped through the affine
matrix into the source's normalized frame and the source is sampled with
trilinear interpolation. Samples whose mapped coordinate leaves [-1, 1]
on any axis are zero-filled and flagged invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interp import trilinear, trilinear_with_grad
from .volume import GridGeometry, LabelVolume, NUM_CLASSES, Volume

_BOUNDS_EPS = 1e-12


@dataclass(frozen=True)
class SampleResult:
    """Resampled image plus the validity mask V of in-bounds source samples."""

    image: Volume
    validity: np.ndarray

    def __post_init__(self):
        validity = np.ascontiguousarray(np.asarray(self.validity, dtype=np.float64))
        validity.flags.writeable = False
        object.__setattr__(self, "validity", validity)


def target_coords(target: GridGeometry) -> np.ndarray:
    """Homogeneous normalized coordinates of the target grid, shape (4, N)."""
    nx, ny, nz = target.normalized_grid()
    n = target.num_voxels
    return np.stack([nx.reshape(n), ny.reshape(n), nz.reshape(n), np.ones(n)])


def _source_samples(src_shape, m: np.ndarray, coords: np.ndarray):
    s = m[:3, :] @ coords
    valid = np.all(np.abs(s) <= 1.0 + _BOUNDS_EPS, axis=0)
    scale = (np.asarray(src_shape, dtype=float) - 1.0) / 2.0
    idx = (s + 1.0) * scale[:, None]
    # snap float residue at the lattice so the identity transform is exact
    nearest = np.rint(idx)
    idx = np.where(np.abs(idx - nearest) < 1e-9, nearest, idx)
    return idx, valid


def transform_volume(
    src: Volume,
    m: np.ndarray,
    target: GridGeometry,
    coords: np.ndarray | None = None,
) -> SampleResult:
    """Pull-warp ``src`` onto ``target`` under the normalized-space affine ``m``."""
    if coords is None:
        coords = target_coords(target)
    idx, valid = _source_samples(src.geometry.shape, m, coords)
    values = trilinear(src.data, idx[0], idx[1], idx[2])
    values = np.where(valid, values, 0.0)
    shape = target.shape
    return SampleResult(
        image=Volume(target, values.reshape(shape)),
        validity=valid.astype(np.float64).reshape(shape),
    )


def transform_labels(
    src: LabelVolume,
    m: np.ndarray,
    target: GridGeometry,
    scale: float = 100.0,
) -> LabelVolume:
    """Per-class linear interpolation of scaled one-hot channels, then argmax."""
    coords = target_coords(target)
    idx, valid = _source_samples(src.geometry.shape, m, coords)
    channels = src.one_hot() * scale
    interpolated = np.stack(
        [trilinear(channels[c], idx[0], idx[1], idx[2]) for c in range(NUM_CLASSES)]
    )
    interpolated[:, ~valid] = 0.0
    interpolated[0, ~valid] = scale  # out-of-bounds voxels are background
    labels = np.argmax(interpolated, axis=0).astype(np.int16)
    return LabelVolume(target, labels.reshape(target.shape))


@dataclass(frozen=True)
class SampleTape:
    """Forward sample plus everything needed for the parameter VJP."""

    result: SampleResult
    coords: np.ndarray
    grad_norm: np.ndarray  # (3, N) d(value)/d(normalized source coordinate)

    def vjp(self, d_m_stack: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Accumulate <upstream, d(output)/d(params)> for a (K,4,4) matrix Jacobian.

        ``upstream`` is d(loss)/d(output voxel), flattened or volume-shaped.
        """
        u = np.asarray(upstream, dtype=float).reshape(-1)
        weighted = self.grad_norm * u[None, :]  # (3, N)
        # ds_k/dp = d_m_stack[k,:3,:] @ coords; contract voxels first (3x4),
        # then the cheap (K,3,4) x (3,4) contraction
        accum = weighted @ self.coords.T
        return np.einsum("kij,ij->k", d_m_stack[:, :3, :], accum)


def transform_volume_with_tape(
    src: Volume,
    m: np.ndarray,
    target: GridGeometry,
    coords: np.ndarray | None = None,
) -> SampleTape:
    """Like transform_volume but records the spatial gradients for backprop."""
    if coords is None:
        coords = target_coords(target)
    idx, valid = _source_samples(src.geometry.shape, m, coords)
    value, dx, dy, dz = trilinear_with_grad(src.data, idx[0], idx[1], idx[2])
    value = np.where(valid, value, 0.0)
    scale = (np.asarray(src.geometry.shape, dtype=float) - 1.0) / 2.0
    grad = np.stack([dx, dy, dz]) * scale[:, None]
    grad[:, ~valid] = 0.0
    shape = target.shape
    result = SampleResult(
        image=Volume(target, value.reshape(shape)),
        validity=valid.astype(np.float64).reshape(shape),
    )
    return SampleTape(result=result, coords=coords, grad_norm=grad)
