"""Loss terms: segmentation losses, masked MSE, cycle loss, focus loss.

All reductions are means over voxels (and foreground classes where a class
sum appears), so loss magnitudes do not scale with the grid size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .resampler import SampleResult, transform_volume
from .volume import FOREGROUND_CLASSES, GridGeometry, NUM_CLASSES, Volume

PROB_EPS = 1e-7


@dataclass(frozen=True)
class ProbabilityVolume:
    """Per-voxel class probabilities, shape (NUM_CLASSES, W, H, D)."""

    geometry: GridGeometry
    q: np.ndarray

    def __post_init__(self):
        q = np.ascontiguousarray(np.asarray(self.q, dtype=np.float64))
        if q.shape != (NUM_CLASSES, *self.geometry.shape):
            raise ValidationError(f"probability field has wrong shape {q.shape}")
        if q.min() < -1e-9 or q.max() > 1.0 + 1e-9:
            raise ValidationError("probabilities must lie in [0, 1]")
        sums = q.sum(axis=0)
        if np.max(np.abs(sums - 1.0)) > 1e-6:
            raise ValidationError("per-voxel class probabilities must sum to 1")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)

    def foreground(self) -> np.ndarray:
        """(3, N) view of the foreground class probabilities."""
        return self.q[list(FOREGROUND_CLASSES)].reshape(len(FOREGROUND_CLASSES), -1)


@dataclass
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 0.1
    w_seg: float = 0.5
    r: float = 0.9
    tau: float = 0.02
    smooth: float = 1.0

    def __post_init__(self):
        # the stability condition is alpha1 > alpha2; alpha2 = 0 disables focus
        if not self.alpha1 > self.alpha2 >= 0:
            raise ValidationError("require alpha1 > alpha2 >= 0")
        if not 0 < self.r < 1:
            raise ValidationError("threshold r must be in (0, 1)")
        if self.smooth <= 0:
            raise ValidationError("dice smoothing constant must be positive")
        if self.tau <= 0:
            raise ValidationError("surrogate temperature must be positive")


def _check_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")


def bce(q: np.ndarray, g: np.ndarray) -> float:
    """Binary cross-entropy for one foreground class, mean over voxels."""
    _check_shapes(np.asarray(q), np.asarray(g))
    qc = np.clip(q, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(g * np.log(qc) + (1.0 - g) * np.log(1.0 - qc)))


def ce(q_classes: np.ndarray, g_classes: np.ndarray) -> float:
    """Mean BCE over the foreground classes; inputs are (C, ...) stacks."""
    _check_shapes(np.asarray(q_classes), np.asarray(g_classes))
    return float(np.mean([bce(qj, gj) for qj, gj in zip(q_classes, g_classes)]))


def soft_dice(q: np.ndarray, g: np.ndarray, smooth: float = 1.0) -> float:
    """Soft Dice coefficient for one class with a smoothing constant."""
    _check_shapes(np.asarray(q), np.asarray(g))
    num = 2.0 * float(np.sum(g * q)) + smooth
    den = float(np.sum(g)) + float(np.sum(q)) + smooth
    return num / den


def sdl(q_classes: np.ndarray, g_classes: np.ndarray, smooth: float = 1.0) -> float:
    """Soft Dice loss: 1 minus the mean per-class soft Dice."""
    _check_shapes(np.asarray(q_classes), np.asarray(g_classes))
    dscs = [soft_dice(qj, gj, smooth) for qj, gj in zip(q_classes, g_classes)]
    return 1.0 - float(np.mean(dscs))


def seg_loss(q_classes: np.ndarray, g_classes: np.ndarray, w_seg: float = 0.5, smooth: float = 1.0) -> float:
    return w_seg * ce(q_classes, g_classes) + sdl(q_classes, g_classes, smooth)


def in_plane_weight(g: GridGeometry) -> np.ndarray:
    """Separable linear weight: 1 at the slice center, 0 on the slice border.

    Constant along z; computed from normalized in-plane coordinates.
    """
    nx, ny, _ = g.normalized_grid()
    return (1.0 - np.abs(nx)) * (1.0 - np.abs(ny))


def masked_mse(
    a: SampleResult | Volume,
    b: SampleResult,
    weight: np.ndarray | None = None,
) -> float:
    """Half mean of the squared masked difference.

    The validity mask is taken from ``b`` (the ground-truth-transformed side)
    and applied to both operands.
    """
    a_img = a.image if isinstance(a, SampleResult) else a
    if a_img.geometry.shape != b.image.geometry.shape:
        raise ValidationError("masked_mse operands live on different grids")
    mask = b.validity if weight is None else b.validity * weight
    diff = (a_img.data - b.image.data) * mask
    return 0.5 * float(np.mean(diff * diff))


def cycle_loss(
    i_vol: Volume,
    j_vol: Volume,
    m: np.ndarray,
    m_inv: np.ndarray,
    gt_m: np.ndarray,
    gt_m_inv: np.ndarray,
    target: GridGeometry,
    weight: np.ndarray | None = None,
) -> tuple[float, float]:
    """Forward and backward masked MSE terms of the cycle loss."""
    fixed_fwd = transform_volume(i_vol, gt_m, target)
    fixed_bwd = transform_volume(j_vol, gt_m_inv, target)
    moving_fwd = transform_volume(i_vol, m, target)
    moving_bwd = transform_volume(j_vol, m_inv, target)
    return (
        masked_mse(moving_fwd, fixed_fwd, weight),
        masked_mse(moving_bwd, fixed_bwd, weight),
    )


def focus_exact(q: ProbabilityVolume, r: float = 0.9) -> float:
    """1 minus the fraction of foreground entries strictly above threshold r."""
    fg = q.foreground()
    count = float(np.count_nonzero(fg > r))
    return 1.0 - count / fg.size


def focus_smooth(q: ProbabilityVolume, r: float = 0.9, tau: float = 0.02) -> float:
    """Sigmoid surrogate of the indicator count; converges to exact as tau -> 0."""
    fg = q.foreground()
    return 1.0 - float(np.mean(_sigmoid((fg - r) / tau)))


def focus_smooth_upstream(q: ProbabilityVolume, r: float, tau: float) -> np.ndarray:
    """d(focus_smooth)/dq over all classes, shape (NUM_CLASSES, W, H, D)."""
    fg = q.foreground()
    s = _sigmoid((fg - r) / tau)
    grad_fg = -(s * (1.0 - s)) / (tau * fg.size)
    out = np.zeros_like(q.q)
    out[list(FOREGROUND_CLASSES)] = grad_fg.reshape(len(FOREGROUND_CLASSES), *q.geometry.shape)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def total_loss(
    i_vol: Volume,
    j_vol: Volume,
    params,
    gt_m: np.ndarray,
    gt_m_inv: np.ndarray,
    task,
    weights: LossWeights,
    target: GridGeometry | None = None,
    use_in_plane_weight: bool = True,
) -> "LossReport":
    """Combined loss alpha1 * cycle + alpha2 * focus, with an itemized report.

    The focus terms are evaluated on task(T(I, R T_t)), the task-branch image.
    """
    from .rigid import euler_to_affine

    if target is None:
        target = i_vol.geometry
    mats = euler_to_affine(params)
    w = in_plane_weight(target) if use_in_plane_weight else None
    fwd, bwd = cycle_loss(i_vol, j_vol, mats.m, mats.m_inv, gt_m, gt_m_inv, target, w)
    i_t = transform_volume(i_vol, mats.m_t, target)
    q = task.evaluate(i_t.image)
    return LossReport(
        cycle_fwd=fwd,
        cycle_bwd=bwd,
        focus_exact=focus_exact(q, weights.r),
        focus_smooth=focus_smooth(q, weights.r, weights.tau),
        alpha1=weights.alpha1,
        alpha2=weights.alpha2,
    )


@dataclass
class LossReport:
    """Itemized loss terms; total = alpha1 * cycle + alpha2 * focus(smooth)."""

    cycle_fwd: float = 0.0
    cycle_bwd: float = 0.0
    focus_exact: float = 0.0
    focus_smooth: float = 0.0
    alpha1: float = 1.0
    alpha2: float = 0.1
    extras: dict = field(default_factory=dict)

    @property
    def cycle(self) -> float:
        return self.cycle_fwd + self.cycle_bwd

    @property
    def total(self) -> float:
        return self.alpha1 * self.cycle + self.alpha2 * self.focus_smooth

    def to_dict(self) -> dict:
        d = {
            "cycle_fwd": self.cycle_fwd,
            "cycle_bwd": self.cycle_bwd,
            "cycle": self.cycle,
            "focus_exact": self.focus_exact,
            "focus_smooth": self.focus_smooth,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "total": self.total,
        }
        d.update(self.extras)
        return d
