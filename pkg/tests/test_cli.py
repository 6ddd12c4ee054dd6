"""CLI contract tests: exit codes, determinism, artifact schemas."""

import json
from pathlib import Path

import numpy as np
import pytest

from mvtt import cli, metrics, phantom
from mvtt.phantom import Volume


def run(*argv):
    return cli.main([str(a) for a in argv])


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def tiny_volume(seed, extents=(2, 8, 8)):
    rng = np.random.default_rng(seed)
    la = np.zeros(extents, dtype=bool)
    la[:, 2:6, 2:6] = True
    scar = np.zeros(extents, dtype=bool)
    scar[0, 2, 2] = True
    scar[1, 5, 5] = True
    intensities = 10.0 + 50.0 * la + 60.0 * scar + 3.0 * rng.random(extents)
    return Volume(intensities=intensities, la_pv=la, scar=scar)


@pytest.fixture
def tiny_dataset(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    for i in range(2):
        phantom.save(tiny_volume(i), data / f"vol{i:03d}.mvttvol")
    return data


class TestPhantomCommand:
    def test_deterministic_directories(self, tmp_path):
        assert run("phantom", "--count", 2, "--size", 16, "--seed", 7, "--out", tmp_path / "a") == 0
        assert run("phantom", "--count", 2, "--size", 16, "--seed", 7, "--out", tmp_path / "b") == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_count_zero_usage_error(self, tmp_path):
        assert run("phantom", "--count", 0, "--out", tmp_path / "d") == 1

    def test_indivisible_size_rejected(self, tmp_path, capsys):
        assert run("phantom", "--count", 1, "--size", 20, "--out", tmp_path / "d") == 1
        assert "divisible by 8" in capsys.readouterr().err

    def test_manifest_lists_existing_artifacts(self, tmp_path):
        out = tmp_path / "ds"
        assert run("phantom", "--count", 3, "--size", 16, "--seed", 1, "--out", out) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["timestamps"] is None
        for rel in manifest["artifacts"]:
            assert (out / rel).exists()
        dataset = json.loads((out / "dataset.json").read_text())
        assert dataset["fold_assignment"] == [0, 1, 2]


class TestTrainCommand:
    def test_bogus_variant_usage_error(self, tiny_dataset, tmp_path, capsys):
        rc = run("train", "--data", tiny_dataset, "--out", tmp_path / "r", "--variant", "Bogus")
        assert rc == 1
        assert "MVTT" in capsys.readouterr().err  # lists valid tags

    def test_overfit_mode_artifacts_and_loss(self, tiny_dataset, tmp_path):
        out = tmp_path / "run"
        rc = run(
            "train", "--data", tiny_dataset, "--out", out,
            "--variant", "MVTT", "--epochs", 10, "--folds", 0,
        )
        assert rc == 0
        lines = (out / "loss.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,loss"
        losses = [float(line.split(",")[1]) for line in lines[1:]]
        assert len(losses) == 10
        assert losses[-1] < losses[0]
        report = json.loads((out / "report.json").read_text())
        assert {r["task"] for r in report["per_volume"]} == {"la_pv", "scar"}

    def test_rerun_byte_identical(self, tiny_dataset, tmp_path):
        for name in ("a", "b"):
            rc = run(
                "train", "--data", tiny_dataset, "--out", tmp_path / name,
                "--variant", "MVTT", "--epochs", 2, "--folds", 0,
            )
            assert rc == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_cross_validation_layout(self, tiny_dataset, tmp_path):
        out = tmp_path / "cv"
        rc = run(
            "train", "--data", tiny_dataset, "--out", out,
            "--variant", "MultiViewOnly", "--epochs", 1, "--folds", 2,
        )
        assert rc == 0
        assert (out / "fold0" / "checkpoint.mvttckpt").exists()
        assert (out / "fold1" / "loss.csv").exists()
        report = json.loads((out / "report.json").read_text())
        assert {r["volume"] for r in report["per_volume"]} == {"vol000", "vol001"}

    def test_too_many_folds_data_error(self, tiny_dataset, tmp_path):
        rc = run(
            "train", "--data", tiny_dataset, "--out", tmp_path / "r",
            "--variant", "MVTT", "--epochs", 1, "--folds", 5,
        )
        assert rc == 2

    def test_invalid_config_fails_before_compute(self, tiny_dataset, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"w_anat": 0.0, "w_scar": 0.0}))
        rc = run("train", "--data", tiny_dataset, "--out", tmp_path / "r", "--config", cfg)
        assert rc == 1
        assert not (tmp_path / "r").exists()

    def test_missing_dataset_data_error(self, tmp_path):
        rc = run("train", "--data", tmp_path / "nope", "--out", tmp_path / "r", "--epochs", 1)
        assert rc == 2

    def test_numeric_failure_exit_code(self, tiny_dataset, tmp_path, monkeypatch):
        def boom(*a, **kw):
            raise FloatingPointError("non-finite loss at step 0")

        monkeypatch.setattr(cli.train, "train_model", boom)
        rc = run(
            "train", "--data", tiny_dataset, "--out", tmp_path / "r",
            "--variant", "MVTT", "--epochs", 1, "--folds", 0,
        )
        assert rc == 3


@pytest.fixture
def trained(tiny_dataset, tmp_path):
    out = tmp_path / "trained"
    rc = run(
        "train", "--data", tiny_dataset, "--out", out,
        "--variant", "MVTT", "--epochs", 1, "--folds", 0,
    )
    assert rc == 0
    return out / "checkpoint.mvttckpt"


class TestInferCommand:
    def test_outputs_and_threshold_contract(self, trained, tiny_dataset, tmp_path):
        out = tmp_path / "inf"
        rc = run("infer", "--checkpoint", trained, "--volume", tiny_dataset / "vol000.mvttvol", "--out", out)
        assert rc == 0
        prob = phantom.load(out / "la_prob.mvttvol").intensities
        masks = phantom.load(out / "pred_masks.mvttvol")
        assert np.array_equal(masks.la_pv, prob > 0.5)
        pgms = sorted((out / "overlays" / "scar").glob("*.pgm"))
        assert len(pgms) == 2  # one per slice
        assert pgms[0].read_bytes().startswith(b"P5\n32 32\n255\n")  # x4 upscale of 8x8

    def test_rerun_identical_bytes(self, trained, tiny_dataset, tmp_path):
        for name in ("x", "y"):
            rc = run(
                "infer", "--checkpoint", trained,
                "--volume", tiny_dataset / "vol000.mvttvol", "--out", tmp_path / name,
            )
            assert rc == 0
        assert tree_bytes(tmp_path / "x") == tree_bytes(tmp_path / "y")

    def test_volume_without_truth_ok(self, trained, tmp_path):
        bare = tmp_path / "bare.mvttvol"
        phantom.save(Volume(intensities=tiny_volume(5).intensities), bare)
        rc = run("infer", "--checkpoint", trained, "--volume", bare, "--out", tmp_path / "o")
        assert rc == 0
        assert (tmp_path / "o" / "overlays" / "la_pv" / "slice_000.pgm").exists()

    def test_extent_mismatch_names_both_shapes(self, trained, tmp_path, capsys):
        wrong = tmp_path / "wrong.mvttvol"
        phantom.save(Volume(intensities=np.ones((4, 16, 16))), wrong)
        rc = run("infer", "--checkpoint", trained, "--volume", wrong, "--out", tmp_path / "o")
        assert rc == 2
        err = capsys.readouterr().err
        assert "(4, 16, 16)" in err and "(2, 8, 8)" in err

    def test_png_flag_adds_pngs(self, trained, tiny_dataset, tmp_path):
        out = tmp_path / "inf"
        rc = run(
            "infer", "--checkpoint", trained,
            "--volume", tiny_dataset / "vol000.mvttvol", "--out", out, "--png",
        )
        assert rc == 0
        assert (out / "overlays" / "la_pv" / "slice_000.png").exists()


class TestBaselinesCommand:
    def test_unknown_method_usage_error(self, tiny_dataset, tmp_path, capsys):
        rc = run("baselines", "--data", tiny_dataset, "--out", tmp_path / "b", "--methods", "magic")
        assert rc == 1
        assert "kmeans" in capsys.readouterr().err

    def test_single_method_single_report(self, tiny_dataset, tmp_path):
        out = tmp_path / "b"
        rc = run("baselines", "--data", tiny_dataset, "--out", out, "--methods", "2sd")
        assert rc == 0
        assert (out / "report_2sd.json").exists()
        assert not (out / "report_kmeans.json").exists()
        assert (out / "masks" / "2sd" / "vol000.mvttvol").exists()

    def test_comparison_csv_row_per_volume_method(self, tiny_dataset, tmp_path):
        out = tmp_path / "b"
        rc = run("baselines", "--data", tiny_dataset, "--out", out)
        assert rc == 0
        lines = (out / "comparison.csv").read_text().strip().splitlines()
        assert lines[0] == "volume,method,accuracy,sensitivity,specificity,dice"
        assert len(lines) == 1 + 2 * 3  # 2 volumes x 3 methods

    def test_clean_phantom_all_methods_decent(self, tmp_path):
        # high-contrast, low-noise phantom: every method reaches scar Dice > 0.6
        data = tmp_path / "data"
        data.mkdir()
        spec = phantom.PhantomSpec(seed=4, extents=(16, 16, 16), noise_std=2.0)
        phantom.save(phantom.generate(spec), data / "vol000.mvttvol")
        out = tmp_path / "b"
        assert run("baselines", "--data", data, "--out", out) == 0
        for line in (out / "comparison.csv").read_text().strip().splitlines()[1:]:
            assert float(line.split(",")[-1]) > 0.6, line


class TestEvalCommand:
    def test_pred_equals_truth(self, tiny_dataset, tmp_path):
        out = tmp_path / "ev"
        rc = run("eval", "--pred", tiny_dataset, "--truth", tiny_dataset, "--out", out)
        assert rc == 0
        doc = json.loads((out / "report.json").read_text())
        assert doc["aggregate"]["scar"]["dice"]["mean"] == 1.0
        assert doc["agreement"]["mean_diff"] == 0.0
        # identical percentages have zero variance: pearson undefined, omitted
        assert doc["agreement"]["pearson_r"] is None or doc["agreement"]["pearson_r"] == 1.0

    def test_orphan_files_listed(self, tiny_dataset, tmp_path):
        pred = tmp_path / "pred"
        pred.mkdir()
        phantom.save(tiny_volume(0), pred / "vol000.mvttvol")
        phantom.save(tiny_volume(9), pred / "extra.mvttvol")
        rc = run("eval", "--pred", pred, "--truth", tiny_dataset, "--out", tmp_path / "ev")
        assert rc == 2

    def test_report_matches_direct_metrics(self, tiny_dataset, tmp_path):
        pred = tmp_path / "pred"
        pred.mkdir()
        for i in range(2):
            v = tiny_volume(i)
            flipped = v.scar.copy()
            flipped[0, 3, 3] = True  # a deliberate false positive
            phantom.save(
                Volume(intensities=v.intensities, la_pv=v.la_pv, scar=flipped),
                pred / f"vol{i:03d}.mvttvol",
            )
        out = tmp_path / "ev"
        assert run("eval", "--pred", pred, "--truth", tiny_dataset, "--out", out) == 0
        doc = json.loads((out / "report.json").read_text())
        v0 = tiny_volume(0)
        flipped = v0.scar.copy()
        flipped[0, 3, 3] = True
        expected = metrics.derive(metrics.confusion(flipped, v0.scar))
        row = next(
            r for r in doc["per_volume"] if r["volume"] == "vol000" and r["task"] == "scar"
        )
        assert row["dice"] == expected.dice
        assert row["sensitivity"] == expected.sensitivity
