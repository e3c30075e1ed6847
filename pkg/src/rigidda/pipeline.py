"""End-to-end wiring: register, apply the task module, back-transform, evaluate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .engine import RegistrationTrace, register_pair
from .metrics import MetricReport, evaluate_labels, postprocess_labels
from .phantom import PhantomPair, TaskModule
from .resampler import transform_labels, transform_volume
from .rigid import RigidParams, euler_to_affine
from .volume import LabelVolume, Volume


def apply_task(
    ax: Volume,
    params: RigidParams,
    task: TaskModule,
    post: bool = True,
) -> LabelVolume:
    """Segment in the task frame and bring the labels back to the axial grid.

    The axial volume is transformed with M_t, the task module produces class
    probabilities, hard labels are taken per voxel, back-transformed with
    M_t^-1 and post-processed.
    """
    mats = euler_to_affine(params)
    i_t = transform_volume(ax, mats.m_t, ax.geometry)
    q = task.evaluate(i_t.image)
    hard = np.argmax(q.q, axis=0).astype(np.int16)
    task_labels = LabelVolume(ax.geometry, hard)
    back = transform_labels(task_labels, mats.m_t_inv, ax.geometry)
    return postprocess_labels(back) if post else back


@dataclass
class End2EndResult:
    params: RigidParams
    trace: RegistrationTrace
    pred_labels: LabelVolume
    report: MetricReport


def run_end2end(pair: PhantomPair, task: TaskModule, config: PipelineConfig) -> End2EndResult:
    """Register the pair, apply the task, evaluate against the axial labels."""
    params, trace = register_pair(
        pair.i,
        pair.j,
        pair.gt_m,
        pair.gt_m_inv,
        task,
        config.weights,
        config.optim,
        mode=config.mode,
    )
    apply_params = params
    if config.mode in ("baseline", "cycle"):
        # 6-parameter modes have no task branch; M_t falls back to M
        apply_params = RigidParams(params.phi, params.theta, params.psi, params.t, params.t)
    pred = apply_task(pair.i, apply_params, task)
    report = evaluate_labels(pred, pair.labels_i)
    return End2EndResult(params=params, trace=trace, pred_labels=pred, report=report)
