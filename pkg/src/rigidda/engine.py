"""Per-pair optimization of the 9 rigid parameters by gradient descent.

This is the desk-scale stand-in for a learned localisation network: the
same objective (cycle loss plus focus loss) is minimized directly per
image pair with Adam, reduce-on-plateau learning-rate decay and early
stopping. Both branches share the rotation; its gradient accumulates from
the cycle path (through M and M^-1) and the focus path (through M_t).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .losses import (
    LossReport,
    LossWeights,
    focus_exact,
    focus_smooth,
    focus_smooth_upstream,
    in_plane_weight,
)
from .resampler import SampleTape, target_coords, transform_volume, transform_volume_with_tape
from .rigid import N_PARAMS, RigidParams, affine_jacobian, euler_to_affine
from .volume import Volume

MODES = ("baseline", "cycle", "cycle+focus", "full")

TRACE_COLUMNS = (
    "step",
    "lr",
    "loss_total",
    "loss_cycle_fwd",
    "loss_cycle_bwd",
    "loss_focus_exact",
    "loss_focus_smooth",
    "phi",
    "theta",
    "psi",
    "tx",
    "ty",
    "tz",
    "txt",
    "tyt",
    "tzt",
)


@dataclass
class OptimConfig:
    lr0: float = 1e-3
    plateau_factor: float = 0.3
    plateau_patience: int = 5  # epochs without gain before one lr decay
    lr_min: float = 1e-8
    stop_patience: int = 10  # epochs without gain before stopping
    epoch_steps: int = 25  # optimizer steps per scheduler "epoch"
    max_steps: int = 1000
    seed: int = 0
    min_delta: float = 1e-6  # improvement below this counts as "no gain"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise ValidationError("plateau factor must be in (0, 1)")
        if self.lr_min > self.lr0:
            raise ValidationError("minimal learning rate exceeds the initial one")
        if self.epoch_steps < 1 or self.max_steps < 1:
            raise ValidationError("step counts must be positive")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(
    p: np.ndarray, grad: np.ndarray, state: AdamState, lr: float, cfg: OptimConfig
) -> np.ndarray:
    """Standard Adam update; mutates ``state`` in place, returns new params."""
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient in Adam step")
    state.t += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = state.m / (1.0 - cfg.beta1**state.t)
    v_hat = state.v / (1.0 - cfg.beta2**state.t)
    return p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


class PlateauScheduler:
    """Reduce-on-plateau with a floor; fed once per epoch with the epoch loss."""

    def __init__(self, cfg: OptimConfig):
        self.cfg = cfg
        self.lr = cfg.lr0
        self.best = np.inf
        self.bad_epochs = 0

    def epoch_end(self, loss: float) -> float:
        if loss < self.best - self.cfg.min_delta:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.cfg.plateau_patience:
                self.lr = max(self.cfg.lr_min, self.lr * self.cfg.plateau_factor)
                self.bad_epochs = 0
        return self.lr


class EarlyStopper:
    """Stops after ``stop_patience`` epochs without best-loss improvement."""

    def __init__(self, cfg: OptimConfig):
        self.cfg = cfg
        self.best = np.inf
        self.bad_epochs = 0

    def epoch_end(self, loss: float) -> bool:
        if loss < self.best - self.cfg.min_delta:
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.cfg.stop_patience


@dataclass
class TraceRow:
    step: int
    lr: float
    report: LossReport
    params: np.ndarray


@dataclass
class RegistrationTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow):
        self.rows.append(row)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows:
                rep = row.report
                writer.writerow(
                    [
                        row.step,
                        repr(row.lr),
                        repr(rep.total),
                        repr(rep.cycle_fwd),
                        repr(rep.cycle_bwd),
                        repr(rep.focus_exact),
                        repr(rep.focus_smooth),
                    ]
                    + [repr(v) for v in row.params]
                )


class PairObjective:
    """Loss and analytic 9-parameter gradient for one preprocessed pair."""

    def __init__(
        self,
        i_vol: Volume,
        j_vol: Volume | None,
        gt_m: np.ndarray,
        gt_m_inv: np.ndarray | None,
        task,
        weights: LossWeights,
        mode: str = "full",
    ):
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")
        if mode != "baseline" and (j_vol is None or gt_m_inv is None):
            raise ValidationError("cycle modes need the second volume and the inverse transform")
        if mode in ("cycle+focus", "full") and task is None:
            raise ValidationError("focus modes need a task module")
        self.mode = mode
        self.i_vol = i_vol
        self.j_vol = j_vol
        self.task = task
        self.weights = weights
        self.target = i_vol.geometry
        self.coords = target_coords(self.target)
        self.use_focus = mode in ("cycle+focus", "full")
        self.use_cycle_bwd = mode != "baseline"
        w_field = in_plane_weight(self.target) if mode == "full" else None
        self.fixed_fwd = transform_volume(i_vol, gt_m, self.target, self.coords)
        self.mask_fwd = self.fixed_fwd.validity if w_field is None else self.fixed_fwd.validity * w_field
        if self.use_cycle_bwd:
            self.fixed_bwd = transform_volume(j_vol, gt_m_inv, self.target, self.coords)
            self.mask_bwd = (
                self.fixed_bwd.validity if w_field is None else self.fixed_bwd.validity * w_field
            )

    def _mse_term(self, tape: SampleTape, fixed, mask: np.ndarray, d_m: np.ndarray):
        """Half mean squared masked difference plus its parameter gradient."""
        diff = (tape.result.image.data - fixed.image.data) * mask
        n = diff.size
        loss = 0.5 * float(np.sum(diff * diff)) / n
        upstream = diff * mask / n
        grad = tape.vjp(d_m, upstream)
        return loss, grad

    def __call__(self, vec: np.ndarray) -> tuple[LossReport, np.ndarray]:
        params = RigidParams.from_vector(vec)
        mats = euler_to_affine(params)
        jac = affine_jacobian(params)
        w = self.weights
        a1 = 1.0 if self.mode == "baseline" else w.alpha1
        a2 = w.alpha2 if self.use_focus else 0.0
        grad = np.zeros(N_PARAMS)

        tape_fwd = transform_volume_with_tape(self.i_vol, mats.m, self.target, self.coords)
        fwd_loss, fwd_grad = self._mse_term(tape_fwd, self.fixed_fwd, self.mask_fwd, jac.d_m)
        grad += a1 * fwd_grad

        bwd_loss = 0.0
        if self.use_cycle_bwd:
            tape_bwd = transform_volume_with_tape(self.j_vol, mats.m_inv, self.target, self.coords)
            bwd_loss, bwd_grad = self._mse_term(
                tape_bwd, self.fixed_bwd, self.mask_bwd, jac.d_m_inv
            )
            grad += a1 * bwd_grad

        f_exact = 0.0
        f_smooth = 0.0
        if self.use_focus:
            tape_t = transform_volume_with_tape(self.i_vol, mats.m_t, self.target, self.coords)
            q = self.task.evaluate(tape_t.result.image)
            f_exact = focus_exact(q, w.r)
            f_smooth = focus_smooth(q, w.r, w.tau)
            up_q = focus_smooth_upstream(q, w.r, w.tau)
            up_img = self.task.gradient(tape_t.result.image, up_q)
            grad += a2 * tape_t.vjp(jac.d_m_t, up_img)

        report = LossReport(
            cycle_fwd=fwd_loss,
            cycle_bwd=bwd_loss,
            focus_exact=f_exact,
            focus_smooth=f_smooth,
            alpha1=a1,
            alpha2=a2,
        )
        return report, grad

    def free_mask(self) -> np.ndarray:
        """Which of the 9 parameters this mode optimizes."""
        free = np.ones(N_PARAMS, dtype=bool)
        if not self.use_focus:
            free[6:] = False  # t_t only exists in the two-branch modes
        return free


def register_pair(
    i_vol: Volume,
    j_vol: Volume | None,
    gt_m: np.ndarray,
    gt_m_inv: np.ndarray | None,
    task,
    weights: LossWeights,
    cfg: OptimConfig,
    mode: str = "full",
) -> tuple[RigidParams, RegistrationTrace]:
    """Optimize the rigid parameters for one preprocessed pair."""
    objective = PairObjective(i_vol, j_vol, gt_m, gt_m_inv, task, weights, mode)
    rng = np.random.default_rng(cfg.seed)
    vec = RigidParams.random_init(rng).to_vector()
    free = objective.free_mask()

    state = AdamState.zeros(N_PARAMS)
    scheduler = PlateauScheduler(cfg)
    stopper = EarlyStopper(cfg)
    trace = RegistrationTrace()
    lr = cfg.lr0
    best_vec = vec.copy()
    best_loss = np.inf
    epoch_losses: list[float] = []

    for step in range(cfg.max_steps):
        report, grad = objective(vec)
        total = report.total
        if not np.isfinite(total):
            trace.append(TraceRow(step, lr, report, vec.copy()))
            raise NumericalError(f"loss diverged at step {step}")
        trace.append(TraceRow(step, lr, report, vec.copy()))
        if total < best_loss:
            best_loss = total
            best_vec = vec.copy()
        grad = np.where(free, grad, 0.0)
        vec = adam_step(vec, grad, state, lr, cfg)
        epoch_losses.append(total)
        if len(epoch_losses) == cfg.epoch_steps:
            epoch_loss = float(np.mean(epoch_losses))
            epoch_losses.clear()
            lr = scheduler.epoch_end(epoch_loss)
            if stopper.epoch_end(epoch_loss):
                break

    return RigidParams.from_vector(best_vec), trace


def baseline_register(
    i_vol: Volume,
    gt_m: np.ndarray,
    cfg: OptimConfig,
    weights: LossWeights | None = None,
) -> tuple[RigidParams, RegistrationTrace]:
    """6-parameter optimization of the forward masked MSE only."""
    weights = weights or LossWeights()
    return register_pair(i_vol, None, gt_m, None, None, weights, cfg, mode="baseline")
