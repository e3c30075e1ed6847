"""Analytic cardiac-like phantoms and the pluggable task-module interface.

The phantom is built from nested ellipsoids (LV blood pool, myocardial
shell, RV crescent) rendered as smooth signed-distance sigmoids, with an
exact label map. The analytic segmenter stands in for an injected
pre-trained segmentation network: it is pose-sensitive by construction and
only produces confident class probabilities where the presented volume
matches its canonical pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import ValidationError
from .losses import ProbabilityVolume
from .rigid import rotation_matrix
from .volume import (
    FOREGROUND_CLASSES,
    GridGeometry,
    LABEL_LV,
    LABEL_MYO,
    LABEL_RV,
    LabelVolume,
    NUM_CLASSES,
    Volume,
    clip_and_normalize,
    pad_to_grid,
    preprocess_labels,
    resample_isotropic,
)


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]

    def sdf(self, points_mm: np.ndarray) -> np.ndarray:
        """Approximate signed distance in mm; negative inside."""
        c = np.asarray(self.center, dtype=float)
        a = np.asarray(self.semi_axes, dtype=float)
        if np.any(a <= 0):
            raise ValidationError("ellipsoid semi-axes must be positive")
        rel = (points_mm - c) / a
        return (np.linalg.norm(rel, axis=-1) - 1.0) * float(a.min())


@dataclass
class PhantomSpec:
    """Nested-ellipsoid phantom description, all lengths in mm."""

    lv: Ellipsoid = field(default_factory=lambda: Ellipsoid((0.0, 0.0, 0.0), (18.0, 18.0, 30.0)))
    myo_outer: Ellipsoid = field(default_factory=lambda: Ellipsoid((0.0, 0.0, 0.0), (26.0, 26.0, 38.0)))
    rv: Ellipsoid = field(default_factory=lambda: Ellipsoid((-24.0, 0.0, 0.0), (16.0, 20.0, 26.0)))
    levels: dict = field(
        default_factory=lambda: {"background": 0.0, "LV": 1.0, "MYO": 0.55, "RV": 0.75}
    )
    sigma_mm: float = 1.0
    noise_sigma: float = 0.01
    logit_scale: float = 40.0
    prior_sigma_mm: float = 0.5
    prior_bias_mm: float = 0.5
    intensity_sigma: float = 0.1
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float)
        if self.pose.shape != (4, 4):
            raise ValidationError("pose must be a 4x4 homogeneous matrix")
        if self.sigma_mm <= 0:
            raise ValidationError("smoothness width must be positive")

    def scaled(self, factor: float) -> "PhantomSpec":
        """Geometrically scaled copy (centers, semi-axes, smoothing width)."""

        def scale_ell(e: Ellipsoid) -> Ellipsoid:
            return Ellipsoid(
                tuple(c * factor for c in e.center),
                tuple(a * factor for a in e.semi_axes),
            )

        return PhantomSpec(
            lv=scale_ell(self.lv),
            myo_outer=scale_ell(self.myo_outer),
            rv=scale_ell(self.rv),
            levels=dict(self.levels),
            sigma_mm=self.sigma_mm * factor,
            noise_sigma=self.noise_sigma,
            logit_scale=self.logit_scale,
            prior_sigma_mm=self.prior_sigma_mm * factor,
            prior_bias_mm=self.prior_bias_mm * factor,
            intensity_sigma=self.intensity_sigma,
            pose=self.pose.copy(),
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "lv": {"center": list(self.lv.center), "semi_axes": list(self.lv.semi_axes)},
                "myo_outer": {
                    "center": list(self.myo_outer.center),
                    "semi_axes": list(self.myo_outer.semi_axes),
                },
                "rv": {"center": list(self.rv.center), "semi_axes": list(self.rv.semi_axes)},
                "levels": self.levels,
                "sigma_mm": self.sigma_mm,
                "noise_sigma": self.noise_sigma,
                "logit_scale": self.logit_scale,
                "prior_sigma_mm": self.prior_sigma_mm,
                "prior_bias_mm": self.prior_bias_mm,
                "intensity_sigma": self.intensity_sigma,
                "pose": np.asarray(self.pose).reshape(16).tolist(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid phantom spec JSON: {exc}") from exc
        kwargs = {}
        for name in ("lv", "myo_outer", "rv"):
            if name in raw:
                kwargs[name] = Ellipsoid(tuple(raw[name]["center"]), tuple(raw[name]["semi_axes"]))
        for name in (
            "levels",
            "sigma_mm",
            "noise_sigma",
            "logit_scale",
            "prior_sigma_mm",
            "prior_bias_mm",
            "intensity_sigma",
        ):
            if name in raw:
                kwargs[name] = raw[name]
        if "pose" in raw:
            kwargs["pose"] = np.asarray(raw["pose"], dtype=float).reshape(4, 4)
        return cls(**kwargs)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _region_sdfs(spec: PhantomSpec, points_mm: np.ndarray) -> dict[int, np.ndarray]:
    """Signed distances of the three disjoint tissue regions."""
    sdf_lv = spec.lv.sdf(points_mm)
    sdf_outer = spec.myo_outer.sdf(points_mm)
    sdf_rv_ell = spec.rv.sdf(points_mm)
    return {
        LABEL_LV: sdf_lv,
        LABEL_MYO: np.maximum(sdf_outer, -sdf_lv),
        LABEL_RV: np.maximum(sdf_rv_ell, -sdf_outer),
    }


def _phantom_points(spec: PhantomSpec, g: GridGeometry, pose: np.ndarray) -> np.ndarray:
    """World voxel centers mapped into the phantom's canonical frame."""
    w, h, d = g.shape
    ix, iy, iz = np.meshgrid(np.arange(w), np.arange(h), np.arange(d), indexing="ij")
    vox = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3).astype(float)
    world = g.world_from_voxel(vox)
    inv = np.linalg.inv(pose)
    return world @ inv[:3, :3].T + inv[:3, 3]


def generate_phantom(
    spec: PhantomSpec,
    g: GridGeometry,
    noise_sigma: float | None = None,
    seed: int = 0,
    pose: np.ndarray | None = None,
) -> tuple[Volume, LabelVolume]:
    """Render the smooth intensity volume and the exact label map."""
    pose = spec.pose if pose is None else np.asarray(pose, dtype=float)
    pts = _phantom_points(spec, g, pose)
    levels = spec.levels
    sdf_lv = spec.lv.sdf(pts)
    sdf_outer = spec.myo_outer.sdf(pts)
    sdf_rv_region = np.maximum(spec.rv.sdf(pts), -sdf_outer)

    intensity = np.full(pts.shape[0], float(levels["background"]))
    for sdf, level in (
        (sdf_outer, levels["MYO"]),
        (sdf_lv, levels["LV"]),
        (sdf_rv_region, levels["RV"]),
    ):
        w_in = _sigmoid(-sdf / spec.sigma_mm)
        intensity = intensity * (1.0 - w_in) + level * w_in

    sigma = spec.noise_sigma if noise_sigma is None else noise_sigma
    if sigma > 0:
        rng = np.random.default_rng(seed)
        span = max(levels.values()) - min(levels.values())
        intensity = intensity + rng.normal(0.0, sigma * span, size=intensity.shape)

    labels = np.zeros(pts.shape[0], dtype=np.int16)
    labels[sdf_rv_region <= 0] = LABEL_RV
    labels[np.maximum(sdf_outer, -sdf_lv) <= 0] = LABEL_MYO
    labels[sdf_lv <= 0] = LABEL_LV

    shape = g.shape
    return Volume(g, intensity.reshape(shape)), LabelVolume(g, labels.reshape(shape))


class TaskModule(Protocol):
    """Fixed, differentiable per-voxel class-probability provider."""

    classes: tuple[int, ...]

    def evaluate(self, vol: Volume) -> ProbabilityVolume: ...

    def gradient(self, vol: Volume, upstream: np.ndarray) -> np.ndarray: ...


class AnalyticSegmenter:
    """Closed-form soft segmenter tied to a canonical phantom pose.

    Class logits combine a spatial prior (signed distance of the canonical
    structures, precomputed per voxel) with a shared Gaussian affinity of
    the presented intensity to the canonical-pose intensity template at the
    same voxel. At the canonical pose the affinity is 1 everywhere, so the
    prior dominates and foreground probabilities saturate; any pose offset
    makes the presented intensity disagree with the template and shuts the
    foreground logits down. The computation is per slice in-plane and
    independent across slices.
    """

    classes = tuple(range(NUM_CLASSES))

    def __init__(self, spec: PhantomSpec, geometry: GridGeometry, pose: np.ndarray | None = None):
        self.spec = spec
        self.geometry = geometry
        pose = spec.pose if pose is None else np.asarray(pose, dtype=float)
        pts = _phantom_points(spec, geometry, pose)
        sdfs = _region_sdfs(spec, pts)
        # small outward bias keeps voxels right at a structure surface confident
        self._prior = {
            c: _sigmoid((spec.prior_bias_mm - sdfs[c]) / spec.prior_sigma_mm).reshape(
                geometry.shape
            )
            for c in FOREGROUND_CLASSES
        }
        template, _ = generate_phantom(spec, geometry, noise_sigma=0.0, pose=pose)
        self._template = template.data

    def _check(self, vol: Volume):
        if vol.geometry.shape != self.geometry.shape:
            raise ValidationError(
                f"segmenter built for grid {self.geometry.shape}, got {vol.geometry.shape}"
            )

    def _logits_and_affinity(self, data: np.ndarray):
        k = self.spec.logit_scale
        sig2 = self.spec.intensity_sigma**2
        aff = np.exp(-((data - self._template) ** 2) / (2.0 * sig2))
        logits = np.empty((NUM_CLASSES, *data.shape))
        logits[0] = 0.5 * k
        for c in FOREGROUND_CLASSES:
            logits[c] = k * self._prior[c] * aff
        return logits, aff

    def evaluate(self, vol: Volume) -> ProbabilityVolume:
        self._check(vol)
        logits, _ = self._logits_and_affinity(vol.data)
        logits = logits - logits.max(axis=0, keepdims=True)
        ex = np.exp(logits)
        q = ex / ex.sum(axis=0, keepdims=True)
        return ProbabilityVolume(vol.geometry, q)

    def gradient(self, vol: Volume, upstream: np.ndarray) -> np.ndarray:
        """VJP: d(loss)/d(input intensity) given upstream = d(loss)/dq."""
        self._check(vol)
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != (NUM_CLASSES, *vol.geometry.shape):
            raise ValidationError("upstream must have one channel per class")
        data = vol.data
        logits, aff = self._logits_and_affinity(data)
        logits = logits - logits.max(axis=0, keepdims=True)
        ex = np.exp(logits)
        q = ex / ex.sum(axis=0, keepdims=True)
        k = self.spec.logit_scale
        sig2 = self.spec.intensity_sigma**2
        daff = -(data - self._template) / sig2 * aff
        dz = np.zeros_like(logits)
        for c in FOREGROUND_CLASSES:
            dz[c] = k * self._prior[c] * daff
        # softmax VJP: dL/dv = sum_c U_c q_c (dz_c - sum_m q_m dz_m)
        mean_dz = np.sum(q * dz, axis=0)
        return np.sum(upstream * q * (dz - mean_dz[None, ...]), axis=0)


def world_rigid(angles: tuple[float, float, float], translation_mm: tuple[float, float, float]) -> np.ndarray:
    """World-space rigid matrix with the same rotation convention as the layer."""
    m = np.eye(4)
    m[:3, :3] = rotation_matrix(*angles)
    m[:3, 3] = np.asarray(translation_mm, dtype=float)
    return m


@dataclass(frozen=True)
class PhantomPair:
    i: Volume
    j: Volume
    labels_i: LabelVolume
    labels_j: LabelVolume
    gt_m: np.ndarray
    gt_m_inv: np.ndarray


def make_pair(
    spec: PhantomSpec,
    rel: np.ndarray,
    grid: tuple[int, int, int] = (64, 64, 64),
    iso: float = 1.5,
    ax_spacing: tuple[float, float, float] | None = None,
    sax_spacing: tuple[float, float, float] | None = None,
    seed: int = 0,
    noise_sigma: float | None = None,
) -> PhantomPair:
    """Render two views of one phantom related by the world rigid map ``rel``.

    The first view i (the "axial" role) samples the phantom displaced by
    rel o pose; the second view j (the "short-axis" role) samples it at the
    canonical pose, each optionally on its own anisotropic acquisition
    grid. Both are then preprocessed onto the common isotropic grid.
    ``gt_m`` is the exact relative transform in normalized coordinates of
    that grid: transform_volume(i, gt_m) reproduces j up to interpolation,
    and a segmenter built at the canonical pose is confident on that output.
    """
    rel = np.asarray(rel, dtype=float)
    extent = np.asarray(grid, dtype=float) * iso

    def acquisition_geometry(spacing):
        if spacing is None:
            return GridGeometry.isotropic(grid, iso)
        spacing = np.asarray(spacing, dtype=float)
        shape = tuple(max(2, int(round(e / s)) + 1) for e, s in zip(extent, spacing))
        origin = -spacing * (np.asarray(shape, dtype=float) - 1.0) / 2.0
        return GridGeometry(shape, spacing, origin, np.eye(3))

    g_ax = acquisition_geometry(ax_spacing)
    g_sax = acquisition_geometry(sax_spacing)

    vol_i, lab_i = generate_phantom(
        spec, g_ax, noise_sigma=noise_sigma, seed=seed, pose=rel @ spec.pose
    )
    vol_j, lab_j = generate_phantom(spec, g_sax, noise_sigma=noise_sigma, seed=seed + 1, pose=spec.pose)

    def preprocess(vol):
        out = resample_isotropic(vol, iso)
        out = pad_to_grid(out, grid)
        return clip_and_normalize(out)

    i_pre = preprocess(vol_i)
    j_pre = preprocess(vol_j)
    lab_i_pre = preprocess_labels(lab_i, iso, grid)
    lab_j_pre = preprocess_labels(lab_j, iso, grid)

    n2w_i = i_pre.geometry.normalized_to_world_matrix()
    n2w_j = j_pre.geometry.normalized_to_world_matrix()
    rel_inv = np.linalg.inv(rel)
    gt_m = np.linalg.inv(n2w_i) @ rel @ n2w_j
    gt_m_inv = np.linalg.inv(n2w_j) @ rel_inv @ n2w_i
    return PhantomPair(i_pre, j_pre, lab_i_pre, lab_j_pre, gt_m, gt_m_inv)
