"""Command-line interface and pipeline-configuration tests.

Every subcommand is exercised end to end on tiny grids through ``main`` so
argument wiring, file I/O and exit codes are all covered.
"""

import json

import numpy as np
import pytest

from rigidda.cli import main
from rigidda.config import PipelineConfig
from rigidda.errors import ValidationError
from rigidda.io import read_volume
from rigidda.phantom import PhantomSpec, world_rigid
from rigidda.volume import LabelVolume
from conftest import gentle_task_spec

GRID = ["16", "16", "16"]
ISO = "3.0"


@pytest.fixture
def spec_path(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(gentle_task_spec().to_json())
    return path


@pytest.fixture
def pair_dir(tmp_path, spec_path):
    rel = world_rigid((0.1, -0.05, 0.08), (2.0, -1.0, 1.5))
    rel_path = tmp_path / "rel.json"
    rel_path.write_text(json.dumps({"m": rel.reshape(16).tolist()}))
    out = tmp_path / "pair"
    code = main(
        [
            "phantom-gen",
            "--spec", str(spec_path),
            "--rel-transform", str(rel_path),
            "--seed", "1",
            "--grid", *GRID,
            "--iso", ISO,
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    return out


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "seed": 3,
                "mode": "cycle",
                "optim": {"lr0": 0.02, "epoch_steps": 5, "max_steps": 15},
            }
        )
    )
    return path


class TestPhantomGen:
    def test_outputs_complete(self, pair_dir):
        for name in ("I.nii", "J.nii", "labels_I.nii", "labels_J.nii", "gtM.json", "spec.json"):
            assert (pair_dir / name).exists()
        raw = json.loads((pair_dir / "gtM.json").read_text())
        m = np.asarray(raw["m"]).reshape(4, 4)
        m_inv = np.asarray(raw["m_inv"]).reshape(4, 4)
        np.testing.assert_allclose(m @ m_inv, np.eye(4), atol=1e-9)


class TestRegister:
    def test_cycle_mode(self, pair_dir, fast_config, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        dump = tmp_path / "result.json"
        code = main(
            [
                "register",
                "--ax", str(pair_dir / "I.nii"),
                "--sax", str(pair_dir / "J.nii"),
                "--gt-transform", str(pair_dir / "gtM.json"),
                "--mode", "cycle",
                "--config", str(fast_config),
                "--trace", str(trace),
                "--dump-transform", str(dump),
            ]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert len(out["params"]) == 9
        assert trace.exists()
        dumped = json.loads(dump.read_text())
        assert set(dumped) == {"params", "m", "m_inv", "m_t", "m_t_inv"}

    def test_focus_mode_requires_spec(self, pair_dir, fast_config):
        code = main(
            [
                "register",
                "--ax", str(pair_dir / "I.nii"),
                "--sax", str(pair_dir / "J.nii"),
                "--gt-transform", str(pair_dir / "gtM.json"),
                "--mode", "full",
                "--config", str(fast_config),
            ]
        )
        assert code == 2

    def test_missing_file_is_io_error(self, pair_dir):
        code = main(
            [
                "register",
                "--ax", str(pair_dir / "missing.nii"),
                "--gt-transform", str(pair_dir / "gtM.json"),
                "--mode", "baseline",
            ]
        )
        assert code == 4


class TestResample:
    def test_intensity_with_params(self, pair_dir, tmp_path):
        out = tmp_path / "res.nii"
        code = main(
            [
                "resample",
                "--input", str(pair_dir / "I.nii"),
                "--transform", "0,0,0,0.1,0,0,0,0,0",
                "--output", str(out),
            ]
        )
        assert code == 0
        assert read_volume(out).geometry.shape == (16, 16, 16)

    def test_labels_with_matrix_file(self, pair_dir, tmp_path):
        out = tmp_path / "lab.nii"
        code = main(
            [
                "resample",
                "--input", str(pair_dir / "labels_I.nii"),
                "--transform", str(pair_dir / "gtM.json"),
                "--target-like", str(pair_dir / "J.nii"),
                "--labels",
                "--output", str(out),
            ]
        )
        assert code == 0
        assert isinstance(read_volume(out), LabelVolume)

    def test_bad_transform_string(self, pair_dir, tmp_path):
        code = main(
            [
                "resample",
                "--input", str(pair_dir / "I.nii"),
                "--transform", "1,2,3",
                "--output", str(tmp_path / "x.nii"),
            ]
        )
        assert code == 2


class TestEval:
    def test_report_and_csv(self, pair_dir, tmp_path, capsys):
        csv_path = tmp_path / "metrics.csv"
        code = main(
            [
                "eval",
                "--pred", str(pair_dir / "labels_I.nii"),
                "--truth", str(pair_dir / "labels_I.nii"),
                "--post",
                "--csv", str(csv_path),
            ]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {"LV", "MYO", "RV"}
        assert csv_path.read_text().startswith("class,")

    def test_intensity_volume_rejected(self, pair_dir):
        code = main(
            [
                "eval",
                "--pred", str(pair_dir / "I.nii"),
                "--truth", str(pair_dir / "labels_I.nii"),
            ]
        )
        assert code == 2


class TestLossesCheck:
    def test_itemized_report(self, pair_dir, spec_path, capsys):
        code = main(
            [
                "losses-check",
                "--ax", str(pair_dir / "I.nii"),
                "--sax", str(pair_dir / "J.nii"),
                "--gt-transform", str(pair_dir / "gtM.json"),
                "--params", "0,0,0,0,0,0,0,0,0",
                "--weights", "alpha1=1.0,alpha2=0.1,tau=0.1",
                "--spec", str(spec_path),
            ]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert {"cycle_fwd", "cycle_bwd", "focus_exact", "focus_smooth", "total"} <= set(report)
        assert report["total"] > 0.0

    def test_bad_weights_string(self, pair_dir, spec_path):
        code = main(
            [
                "losses-check",
                "--ax", str(pair_dir / "I.nii"),
                "--sax", str(pair_dir / "J.nii"),
                "--gt-transform", str(pair_dir / "gtM.json"),
                "--params", "0,0,0,0,0,0,0,0,0",
                "--weights", "alpha1",
                "--spec", str(spec_path),
            ]
        )
        assert code == 2


class TestApply:
    def test_writes_labels(self, pair_dir, spec_path, tmp_path):
        out = tmp_path / "pred.nii"
        code = main(
            [
                "apply",
                "--ax", str(pair_dir / "J.nii"),
                "--params", "0,0,0,0,0,0,0,0,0",
                "--spec", str(spec_path),
                "--output", str(out),
            ]
        )
        assert code == 0
        pred = read_volume(out)
        assert isinstance(pred, LabelVolume)
        assert set(np.unique(pred.data)) <= {0, 1, 2, 3}


class TestEnd2End:
    def test_full_small_run(self, pair_dir, fast_config, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(
            [
                "end2end",
                "--pair-dir", str(pair_dir),
                "--config", str(fast_config),
                "--out-dir", str(out),
            ]
        )
        assert code == 0
        for name in ("trace.csv", "transform.json", "pred_labels.nii", "metrics.json"):
            assert (out / name).exists()
        printed = json.loads(capsys.readouterr().out)
        assert set(printed) == {"LV", "MYO", "RV"}


class TestPipelineConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert cfg.mode == "full" and cfg.grid == (64, 64, 64)
        assert cfg.z_shift_mm == -10.0

    def test_seed_propagates_to_optimizer(self):
        cfg = PipelineConfig.from_json('{"seed": 7}')
        assert cfg.seed == 7 and cfg.optim.seed == 7

    def test_explicit_optim_seed_wins(self):
        cfg = PipelineConfig.from_json('{"seed": 7, "optim": {"seed": 11}}')
        assert cfg.optim.seed == 11

    def test_nested_sections_parsed(self):
        cfg = PipelineConfig.from_json(
            '{"grid": [32, 32, 32], "weights": {"alpha2": 0.05}, "optim": {"lr0": 0.01}}'
        )
        assert cfg.grid == (32, 32, 32)
        assert cfg.weights.alpha2 == 0.05
        assert cfg.optim.lr0 == 0.01

    def test_schema_rejects_unknown_and_invalid(self):
        with pytest.raises(ValidationError):
            PipelineConfig.from_json('{"bogus": 1}')
        with pytest.raises(ValidationError):
            PipelineConfig.from_json('{"mode": "fancy"}')
        with pytest.raises(ValidationError):
            PipelineConfig.from_json('{"quantile": 2.0}')
        with pytest.raises(ValidationError):
            PipelineConfig.from_json("{broken")

    def test_spec_json_usable_from_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"iso_mm": 2.0}')
        assert PipelineConfig.from_file(path).iso_mm == 2.0


class TestSpecRoundTripThroughCli:
    def test_written_spec_parses_back(self, pair_dir):
        spec = PhantomSpec.from_json((pair_dir / "spec.json").read_text())
        assert spec.sigma_mm == gentle_task_spec().sigma_mm
