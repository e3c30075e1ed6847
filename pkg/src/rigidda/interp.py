"""Trilinear interpolation on voxel-index coordinates.

Conventions shared by the resampler and the preprocessing code:

* index coordinate ``i`` along an axis with ``n`` voxels is continuous in
  ``[0, n - 1]``; integer values hit voxel centers exactly,
* the interpolation cell at an exact lattice point is the *left* cell, so
  the derivative there is the left-sided subgradient,
* neighbors requested outside the array are clamped to the edge voxel.
"""

from __future__ import annotations

import numpy as np


def _cell_indices(idx: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Left cell index i0 in [0, n-2] and fractional offset for each sample."""
    i0 = np.clip(np.ceil(idx) - 1.0, 0.0, max(n - 2, 0)).astype(np.intp)
    frac = idx - i0
    return i0, frac


def _gather_corners(data: np.ndarray, ix, iy, iz):
    """Cell corner values and fractional offsets for each sample.

    Corners are fetched from the raveled array with a single flat base
    index; the left-cell convention guarantees i0 + 1 stays in bounds on
    every axis with at least two voxels. Single-voxel axes fall back to
    a degenerate cell whose two corners coincide.
    """
    w, h, d = data.shape
    x0, fx = _cell_indices(np.clip(ix, 0.0, w - 1.0), w)
    y0, fy = _cell_indices(np.clip(iy, 0.0, h - 1.0), h)
    z0, fz = _cell_indices(np.clip(iz, 0.0, d - 1.0), d)
    sx = h * d if w > 1 else 0
    sy = d if h > 1 else 0
    sz = 1 if d > 1 else 0
    flat = (x0 * h + y0) * d + z0
    r = np.ascontiguousarray(data).reshape(-1)
    corners = (
        r.take(flat),
        r.take(flat + sx),
        r.take(flat + sy),
        r.take(flat + sx + sy),
        r.take(flat + sz),
        r.take(flat + sx + sz),
        r.take(flat + sy + sz),
        r.take(flat + sx + sy + sz),
    )
    return corners, fx, fy, fz


def trilinear(data: np.ndarray, ix: np.ndarray, iy: np.ndarray, iz: np.ndarray) -> np.ndarray:
    """Sample ``data`` (shape (W, H, D)) at continuous index coordinates.

    Coordinates outside the grid are clamped to the edge; callers decide
    separately which samples count as in-bounds.
    """
    (c000, c100, c010, c110, c001, c101, c011, c111), fx, fy, fz = _gather_corners(
        data, ix, iy, iz
    )
    # two-coefficient lerps stay bit-exact at frac 0 and 1 (lattice points)
    gx = 1.0 - fx
    gy = 1.0 - fy
    c00 = c000 * gx + c100 * fx
    c10 = c010 * gx + c110 * fx
    c01 = c001 * gx + c101 * fx
    c11 = c011 * gx + c111 * fx
    c0 = c00 * gy + c10 * fy
    c1 = c01 * gy + c11 * fy
    return c0 * (1.0 - fz) + c1 * fz


def trilinear_with_grad(
    data: np.ndarray, ix: np.ndarray, iy: np.ndarray, iz: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Value plus partial derivatives with respect to the index coordinates."""
    (c000, c100, c010, c110, c001, c101, c011, c111), fx, fy, fz = _gather_corners(
        data, ix, iy, iz
    )
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz

    # lerp along z first; two-coefficient lerps keep lattice points bit-exact
    e00 = c000 * gz + c001 * fz
    e10 = c100 * gz + c101 * fz
    e01 = c010 * gz + c011 * fz
    e11 = c110 * gz + c111 * fz

    a0 = e00 * gx + e10 * fx
    a1 = e01 * gx + e11 * fx
    value = a0 * gy + a1 * fy

    dx0 = e10 - e00
    dx1 = e11 - e01
    dx = dx0 * gy + dx1 * fy
    dy = a1 - a0

    # z derivative needs the xy-bilinear of the z differences
    d00 = c001 - c000
    d10 = c101 - c100
    d01 = c011 - c010
    d11 = c111 - c110
    b0 = d00 * gx + d10 * fx
    b1 = d01 * gx + d11 * fx
    dz = b0 * gy + b1 * fy
    return value, dx, dy, dz
