"""Volume representation, grid geometry, coordinate frames, preprocessing.

Axis order is x (width) fastest, then y, then z; all shapes are written
(W, H, D). Arrays are indexed ``data[x, y, z]``. Normalized coordinates are
align-corners style: the centers of the two extreme voxels along each axis
map to -1 and +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .interp import trilinear

LABEL_BACKGROUND = 0
LABEL_LV = 1
LABEL_MYO = 2
LABEL_RV = 3
NUM_CLASSES = 4
FOREGROUND_CLASSES = (LABEL_LV, LABEL_MYO, LABEL_RV)
CLASS_NAMES = {LABEL_BACKGROUND: "background", LABEL_LV: "LV", LABEL_MYO: "MYO", LABEL_RV: "RV"}


@dataclass(frozen=True)
class GridGeometry:
    """Voxel grid embedded in world space (mm)."""

    shape: tuple[int, int, int]
    spacing: np.ndarray
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "spacing", np.asarray(self.spacing, dtype=float).copy())
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).copy())
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float).copy())
        if len(self.shape) != 3 or any(n < 1 for n in self.shape):
            raise ValidationError(f"invalid grid shape {self.shape}")
        if self.spacing.shape != (3,) or np.any(self.spacing <= 0):
            raise ValidationError(f"spacing must be 3 positive values, got {self.spacing}")
        if self.origin.shape != (3,):
            raise ValidationError("origin must be a 3-vector")
        if self.direction.shape != (3, 3):
            raise ValidationError("direction must be a 3x3 matrix")
        if not np.allclose(self.direction.T @ self.direction, np.eye(3), atol=1e-9):
            raise ValidationError("direction columns must be orthonormal")
        self.spacing.flags.writeable = False
        self.origin.flags.writeable = False
        self.direction.flags.writeable = False

    @classmethod
    def isotropic(cls, shape, spacing_mm: float, centered: bool = True) -> "GridGeometry":
        """Axis-aligned grid; when centered, the grid midpoint sits at the world origin."""
        shape = tuple(int(n) for n in shape)
        sp = np.full(3, float(spacing_mm))
        if centered:
            origin = -sp * (np.asarray(shape, dtype=float) - 1.0) / 2.0
        else:
            origin = np.zeros(3)
        return cls(shape, sp, origin, np.eye(3))

    @property
    def num_voxels(self) -> int:
        w, h, d = self.shape
        return w * h * d

    @property
    def voxel_volume_mm3(self) -> float:
        return float(np.prod(self.spacing))

    def world_from_voxel(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.origin + (v * self.spacing) @ self.direction.T

    def voxel_from_world(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return ((p - self.origin) @ self.direction) / self.spacing

    def normalized_from_voxel(self, v: np.ndarray) -> np.ndarray:
        if any(n < 2 for n in self.shape):
            raise ValidationError("normalized coordinates need >= 2 voxels per axis")
        n = np.asarray(self.shape, dtype=float)
        return 2.0 * np.asarray(v, dtype=float) / (n - 1.0) - 1.0

    def voxel_from_normalized(self, c: np.ndarray) -> np.ndarray:
        n = np.asarray(self.shape, dtype=float)
        return (np.asarray(c, dtype=float) + 1.0) / 2.0 * (n - 1.0)

    def normalized_to_world_matrix(self) -> np.ndarray:
        """Homogeneous 4x4 mapping normalized coordinates to world mm."""
        n = np.asarray(self.shape, dtype=float)
        scale = self.spacing * (n - 1.0) / 2.0
        m = np.eye(4)
        m[:3, :3] = self.direction * scale[None, :]
        m[:3, 3] = self.origin + self.direction @ (self.spacing * (n - 1.0) / 2.0)
        return m

    def world_to_normalized_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.normalized_to_world_matrix())

    def almost_equal(self, other: "GridGeometry", tol: float = 1e-9) -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.spacing, other.spacing, atol=tol)
            and np.allclose(self.origin, other.origin, atol=tol)
            and np.allclose(self.direction, other.direction, atol=tol)
        )

    def normalized_grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Normalized coordinates of every voxel center, three (W,H,D) arrays."""
        axes = [2.0 * np.arange(n) / (n - 1.0) - 1.0 for n in self.shape]
        return np.meshgrid(*axes, indexing="ij")


def world_to_normalized(g: GridGeometry, p: np.ndarray) -> np.ndarray:
    """Normalized coordinate of world point(s) p; the grid center maps to 0."""
    return g.normalized_from_voxel(g.voxel_from_world(p))


def normalized_to_world(g: GridGeometry, c: np.ndarray) -> np.ndarray:
    return g.world_from_voxel(g.voxel_from_normalized(c))


@dataclass(frozen=True)
class Volume:
    """Scalar intensity volume. Immutable after construction."""

    geometry: GridGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if data.shape != self.geometry.shape:
            raise ValidationError(
                f"data shape {data.shape} does not match grid {self.geometry.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ValidationError("volume contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(self.geometry, data)


@dataclass(frozen=True)
class LabelVolume:
    """Disjoint integer class map over the same grid conventions as Volume."""

    geometry: GridGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.int16))
        if data.shape != self.geometry.shape:
            raise ValidationError(
                f"label shape {data.shape} does not match grid {self.geometry.shape}"
            )
        bad = np.setdiff1d(np.unique(data), np.arange(NUM_CLASSES))
        if bad.size:
            raise ValidationError(f"unknown class id(s) {bad.tolist()}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def class_mask(self, cls: int) -> np.ndarray:
        return self.data == cls

    def one_hot(self) -> np.ndarray:
        """(NUM_CLASSES, W, H, D) float one-hot encoding."""
        return (self.data[None, ...] == np.arange(NUM_CLASSES)[:, None, None, None]).astype(float)


def resample_isotropic(v: Volume, iso: float) -> Volume:
    """Resample to uniform isotropic spacing with trilinear interpolation."""
    if iso <= 0:
        raise ValidationError("isotropic spacing must be positive")
    if any(n < 2 for n in v.geometry.shape):
        raise ValidationError("resampling needs >= 2 voxels per axis")
    g = v.geometry
    old_n = np.asarray(g.shape, dtype=float)
    new_shape = tuple(int(round((n - 1) * sp / iso)) + 1 for n, sp in zip(old_n, g.spacing))
    new_shape = tuple(max(2, n) for n in new_shape)
    # voxel-center extent preserved: index k of the new grid sits at k*iso mm
    idx = [np.arange(n) * iso / sp for n, sp in zip(new_shape, g.spacing)]
    ix, iy, iz = np.meshgrid(*idx, indexing="ij")
    data = trilinear(v.data, ix, iy, iz)
    geom = GridGeometry(new_shape, np.full(3, float(iso)), g.origin, g.direction)
    return Volume(geom, data)


def pad_to_grid(v: Volume, target: tuple[int, int, int]) -> Volume:
    """Center the volume in a fixed target grid, zero-filling the margin.

    Inputs larger than the target on any axis are center-cropped first. The
    origin is updated so world positions of surviving voxels are unchanged.
    """
    target = tuple(int(n) for n in target)
    g = v.geometry
    data = v.data
    origin = g.origin.copy()
    # crop
    starts = []
    for ax in range(3):
        excess = data.shape[ax] - target[ax]
        starts.append(max(0, excess // 2))
    sl = tuple(slice(s, s + min(data.shape[ax], target[ax])) for ax, s in enumerate(starts))
    data = data[sl]
    shift_vox = np.array([s.start for s in sl], dtype=float)
    origin = origin + g.direction @ (g.spacing * shift_vox)
    # pad
    pads = []
    for ax in range(3):
        missing = target[ax] - data.shape[ax]
        before = missing // 2
        pads.append((before, missing - before))
    data = np.pad(data, pads, mode="constant")
    before_vox = np.array([p[0] for p in pads], dtype=float)
    origin = origin - g.direction @ (g.spacing * before_vox)
    geom = GridGeometry(target, g.spacing, origin, g.direction)
    return Volume(geom, data)


def nearest_rank_quantile(values: np.ndarray, q: float) -> float:
    """Nearest-rank quantile on the sorted voxel multiset."""
    if not 0 < q <= 1:
        raise ValidationError("quantile must be in (0, 1]")
    flat = np.sort(values, axis=None)
    k = int(np.ceil(q * flat.size))
    return float(flat[max(k - 1, 0)])


def clip_and_normalize(v: Volume, q: float = 0.999) -> Volume:
    """Clip at the q-quantile then min/max map to [0, 1].

    A constant volume maps to all zeros.
    """
    hi = nearest_rank_quantile(v.data, q)
    lo = float(v.data.min())
    clipped = np.minimum(v.data, hi)
    if hi <= lo:
        return v.with_data(np.zeros_like(v.data))
    return v.with_data((clipped - lo) / (hi - lo))


def extend_z_geometry(g: GridGeometry, extend_mm: float, shift_mm: float) -> GridGeometry:
    """Grow the grid along z by ``extend_mm`` on each side and shift the origin.

    ``shift_mm`` is signed along the grid's z axis (CLI default -10 mm).
    """
    extra = int(round(extend_mm / g.spacing[2]))
    shape = (g.shape[0], g.shape[1], g.shape[2] + 2 * extra)
    origin = g.origin + g.direction @ np.array([0.0, 0.0, shift_mm - extra * g.spacing[2]])
    return GridGeometry(shape, g.spacing, origin, g.direction)


def preprocess_volume(
    v: Volume,
    iso: float = 1.5,
    grid: tuple[int, int, int] = (224, 224, 96),
    quantile: float = 0.999,
) -> Volume:
    """Standard intensity preprocessing: isotropic resample, pad/crop, normalize."""
    out = resample_isotropic(v, iso)
    out = pad_to_grid(out, grid)
    return clip_and_normalize(out, quantile)


def preprocess_labels(
    lv: LabelVolume,
    iso: float = 1.5,
    grid: tuple[int, int, int] = (224, 224, 96),
) -> LabelVolume:
    """Label preprocessing: per-class linear resample then argmax, pad/crop."""
    channels = lv.one_hot()
    resampled = []
    for c in range(NUM_CLASSES):
        vol = Volume(lv.geometry, channels[c])
        vol = resample_isotropic(vol, iso)
        resampled.append(vol)
    stacked = np.stack([r.data for r in resampled], axis=0)
    labels = np.argmax(stacked, axis=0).astype(np.int16)
    inter = LabelVolume(resampled[0].geometry, labels)
    padded = pad_to_grid(Volume(inter.geometry, inter.data.astype(float)), grid)
    return LabelVolume(padded.geometry, np.rint(padded.data).astype(np.int16))
