"""Command-line front end.

Subcommands: phantom-gen, register, resample, eval, losses-check, apply,
end2end. Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 I/O error. Set RIGIDDA_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .engine import MODES, OptimConfig, register_pair
from .errors import RigiddaError, ValidationError
from .io import read_volume, write_volume
from .losses import LossWeights, total_loss
from .metrics import evaluate_labels, postprocess_labels
from .phantom import AnalyticSegmenter, PhantomPair, PhantomSpec, make_pair
from .pipeline import apply_task, run_end2end
from .resampler import transform_labels, transform_volume
from .rigid import RigidParams, euler_to_affine
from .volume import LabelVolume, Volume

log = logging.getLogger("rigidda")


def _setup_logging():
    level = os.environ.get("RIGIDDA_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")


def _load_matrix_pair(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Transform file: {"m": [16 numbers], "m_inv": [16 numbers]} or a bare list."""
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        m = np.asarray(raw["m"], dtype=float).reshape(4, 4)
        if "m_inv" in raw:
            m_inv = np.asarray(raw["m_inv"], dtype=float).reshape(4, 4)
        else:
            m_inv = np.linalg.inv(m)
        return m, m_inv
    m = np.asarray(raw, dtype=float)
    if m.shape != (16,):
        raise ValidationError("transform JSON must hold 16 numbers or {m, m_inv}")
    m = m.reshape(4, 4)
    return m, np.linalg.inv(m)


def _parse_transform_arg(text: str) -> np.ndarray:
    """Either a path to a transform JSON or 9 comma-separated parameters."""
    if Path(text).exists():
        return _load_matrix_pair(text)[0]
    parts = [p for p in text.split(",") if p]
    if len(parts) == 9:
        return euler_to_affine(RigidParams.from_vector([float(p) for p in parts])).m
    if len(parts) == 16:
        return np.asarray([float(p) for p in parts]).reshape(4, 4)
    raise ValidationError("--transform expects a JSON file, 9 parameters, or 16 matrix entries")


def _parse_weights_arg(text: str | None) -> LossWeights:
    if not text:
        return LossWeights()
    kwargs = {}
    for item in text.split(","):
        if not item:
            continue
        if "=" not in item:
            raise ValidationError(f"bad weights item {item!r}, expected name=value")
        name, value = item.split("=", 1)
        kwargs[name.strip()] = float(value)
    return LossWeights(**kwargs)


def _require_intensity(vol, name: str) -> Volume:
    if not isinstance(vol, Volume):
        raise ValidationError(f"{name} must be an intensity volume")
    return vol


def _require_labels(vol, name: str) -> LabelVolume:
    if not isinstance(vol, LabelVolume):
        raise ValidationError(f"{name} must be a label volume")
    return vol


def cmd_phantom_gen(args) -> int:
    spec = PhantomSpec.from_json(Path(args.spec).read_text()) if args.spec else PhantomSpec()
    rel = (
        _load_matrix_pair(args.rel_transform)[0]
        if args.rel_transform
        else np.eye(4)
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pair = make_pair(
        spec,
        rel,
        grid=tuple(args.grid),
        iso=args.iso,
        seed=args.seed,
    )
    write_volume(pair.i, out / "I.nii")
    write_volume(pair.j, out / "J.nii")
    write_volume(pair.labels_i, out / "labels_I.nii")
    write_volume(pair.labels_j, out / "labels_J.nii")
    (out / "gtM.json").write_text(
        json.dumps(
            {
                "m": pair.gt_m.reshape(16).tolist(),
                "m_inv": pair.gt_m_inv.reshape(16).tolist(),
            },
            indent=2,
        )
    )
    (out / "spec.json").write_text(spec.to_json())
    log.info("phantom pair written to %s", out)
    return 0


def _load_pair_dir(pair_dir: Path) -> tuple[PhantomPair, PhantomSpec]:
    spec = PhantomSpec.from_json((pair_dir / "spec.json").read_text())
    i_vol = _require_intensity(read_volume(pair_dir / "I.nii"), "I.nii")
    j_vol = _require_intensity(read_volume(pair_dir / "J.nii"), "J.nii")
    labels_i = _require_labels(read_volume(pair_dir / "labels_I.nii"), "labels_I.nii")
    labels_j = _require_labels(read_volume(pair_dir / "labels_J.nii"), "labels_J.nii")
    gt_m, gt_m_inv = _load_matrix_pair(str(pair_dir / "gtM.json"))
    return (
        PhantomPair(i_vol, j_vol, labels_i, labels_j, gt_m, gt_m_inv),
        spec,
    )


def cmd_register(args) -> int:
    ax = _require_intensity(read_volume(args.ax), "--ax")
    sax = _require_intensity(read_volume(args.sax), "--sax") if args.sax else None
    gt_m, gt_m_inv = _load_matrix_pair(args.gt_transform)
    weights = _parse_weights_arg(args.weights)
    cfg = PipelineConfig.from_file(args.config).optim if args.config else OptimConfig()
    task = None
    if args.mode in ("cycle+focus", "full"):
        if not args.spec:
            raise ValidationError("focus modes need --spec for the task module")
        spec = PhantomSpec.from_json(Path(args.spec).read_text())
        task = AnalyticSegmenter(spec, ax.geometry)
    params, trace = register_pair(ax, sax, gt_m, gt_m_inv, task, weights, cfg, mode=args.mode)
    if args.trace:
        trace.write_csv(args.trace)
    if args.dump_transform:
        mats = euler_to_affine(params)
        Path(args.dump_transform).write_text(
            json.dumps(
                {
                    "params": params.to_vector().tolist(),
                    "m": mats.m.reshape(16).tolist(),
                    "m_inv": mats.m_inv.reshape(16).tolist(),
                    "m_t": mats.m_t.reshape(16).tolist(),
                    "m_t_inv": mats.m_t_inv.reshape(16).tolist(),
                },
                indent=2,
            )
        )
    print(json.dumps({"params": params.to_vector().tolist(), "final_loss": trace.rows[-1].report.total}))
    return 0


def cmd_resample(args) -> int:
    src = read_volume(args.input)
    target_like = read_volume(args.target_like) if args.target_like else src
    m = _parse_transform_arg(args.transform)
    if args.labels:
        out = transform_labels(_require_labels(src, "--input"), m, target_like.geometry)
    else:
        out = transform_volume(_require_intensity(src, "--input"), m, target_like.geometry).image
    write_volume(out, args.output)
    return 0


def cmd_eval(args) -> int:
    pred = _require_labels(read_volume(args.pred), "--pred")
    truth = _require_labels(read_volume(args.truth), "--truth")
    if args.spacing_from:
        ref = read_volume(args.spacing_from)
        truth = LabelVolume(ref.geometry, truth.data)
        pred = LabelVolume(ref.geometry, pred.data)
    if args.post:
        pred = postprocess_labels(pred)
    report = evaluate_labels(pred, truth)
    if args.csv:
        import csv as _csv

        with open(args.csv, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["class", "dice", "hausdorff_mm", "excluded", "vol_pred_ml", "vol_truth_ml", "vol_diff_ml"])
            for cls, m in report.per_class.items():
                writer.writerow(
                    [cls, m.dice, m.hausdorff_mm, m.hausdorff_excluded, m.volume_pred_ml, m.volume_truth_ml, m.volume_diff_ml]
                )
    print(report.to_json())
    return 0


def cmd_losses_check(args) -> int:
    ax = _require_intensity(read_volume(args.ax), "--ax")
    sax = _require_intensity(read_volume(args.sax), "--sax")
    gt_m, gt_m_inv = _load_matrix_pair(args.gt_transform)
    weights = _parse_weights_arg(args.weights)
    params = RigidParams.from_vector([float(p) for p in args.params.split(",")])
    spec = PhantomSpec.from_json(Path(args.spec).read_text()) if args.spec else PhantomSpec()
    task = AnalyticSegmenter(spec, ax.geometry)
    report = total_loss(ax, sax, params, gt_m, gt_m_inv, task, weights)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_apply(args) -> int:
    ax = _require_intensity(read_volume(args.ax), "--ax")
    params = RigidParams.from_vector([float(p) for p in args.params.split(",")])
    spec = PhantomSpec.from_json(Path(args.spec).read_text()) if args.spec else PhantomSpec()
    task = AnalyticSegmenter(spec, ax.geometry)
    labels = apply_task(ax, params, task, post=not args.no_post)
    write_volume(labels, args.output)
    return 0


def cmd_end2end(args) -> int:
    pair_dir = Path(args.pair_dir)
    pair, spec = _load_pair_dir(pair_dir)
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.mode:
        config.mode = args.mode
    task = AnalyticSegmenter(spec, pair.i.geometry)
    result = run_end2end(pair, task, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.trace.write_csv(out / "trace.csv")
    mats = euler_to_affine(result.params)
    (out / "transform.json").write_text(
        json.dumps(
            {
                "params": result.params.to_vector().tolist(),
                "m": mats.m.reshape(16).tolist(),
                "m_t": mats.m_t.reshape(16).tolist(),
            },
            indent=2,
        )
    )
    write_volume(result.pred_labels, out / "pred_labels.nii")
    (out / "metrics.json").write_text(result.report.to_json())
    print(result.report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rigidda", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="generate a synthetic phantom pair")
    p.add_argument("--spec", help="PhantomSpec JSON file")
    p.add_argument("--rel-transform", help="world rigid transform JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, nargs=3, default=[64, 64, 64])
    p.add_argument("--iso", type=float, default=1.5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("register", help="optimize rigid parameters for a pair")
    p.add_argument("--ax", required=True)
    p.add_argument("--sax")
    p.add_argument("--gt-transform", required=True)
    p.add_argument("--weights", help="e.g. alpha1=1.0,alpha2=0.1")
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--spec", help="PhantomSpec JSON for the task module")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--trace", help="write the per-step trace CSV here")
    p.add_argument("--dump-transform", help="write the final matrices here")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("resample", help="apply an affine transform to a volume")
    p.add_argument("--input", required=True)
    p.add_argument("--transform", required=True)
    p.add_argument("--target-like", help="volume providing the target grid")
    p.add_argument("--labels", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("eval", help="evaluate predicted labels against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--spacing-from", help="take the grid geometry from this volume")
    p.add_argument("--post", action="store_true", help="post-process the prediction first")
    p.add_argument("--csv", help="write per-class metric rows here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("losses-check", help="print an itemized loss report")
    p.add_argument("--ax", required=True)
    p.add_argument("--sax", required=True)
    p.add_argument("--gt-transform", required=True)
    p.add_argument("--params", required=True, help="9 comma-separated parameters")
    p.add_argument("--weights")
    p.add_argument("--spec")
    p.set_defaults(func=cmd_losses_check)

    p = sub.add_parser("apply", help="segment via the task frame and back-transform")
    p.add_argument("--ax", required=True)
    p.add_argument("--params", required=True, help="9 comma-separated parameters")
    p.add_argument("--spec")
    p.add_argument("--no-post", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("end2end", help="register, apply the task, evaluate")
    p.add_argument("--pair-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_end2end)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RigiddaError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
