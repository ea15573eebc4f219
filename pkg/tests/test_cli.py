import json

import numpy as np
import pytest

from eigencoin.cli import (CONFIG_ENV_VAR, EXIT_DATA, EXIT_OK, EXIT_USAGE,
                           classifier_config, main, resolve_config)
from eigencoin.errors import InvalidParameterError
from eigencoin.imaging import GrayImage, save_image

SMALL_SPEC = {
    "image_size": 96,
    "noise_sigma": 0.0,
    "seed": 11,
    "classes": [
        {"name": "alpha", "train_count": 4, "test_count": 2,
         "bust_width": 0.5, "bust_height": 0.7, "mark_angle": 90.0,
         "crown_span": 70.0, "legend_ticks": 8},
        {"name": "beta", "train_count": 4, "test_count": 2,
         "bust_width": 0.65, "bust_height": 0.8, "bust_angle": 20.0,
         "rim_count": 2, "mark_angle": 30.0, "crown_span": 110.0,
         "legend_ticks": 14},
        {"name": "gamma", "train_count": 4, "test_count": 2,
         "bust_width": 0.4, "bust_height": 0.55, "bust_angle": -30.0,
         "mark_angle": 150.0, "crown_span": 45.0, "legend_ticks": 17},
    ],
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthesized dataset on disk plus a trained model, shared per module."""
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(SMALL_SPEC))
    data_dir = root / "data"
    rc = main(["synth", "--spec", str(spec_path), "--out", str(data_dir)])
    assert rc == EXIT_OK
    model_dir = root / "model"
    rc = main(["train", "--manifest", str(data_dir / "manifest.json"),
               "--out", str(model_dir), "--k", "6"])
    assert rc == EXIT_OK
    return {"root": root, "spec": spec_path, "data": data_dir,
            "manifest": data_dir / "manifest.json",
            "model": model_dir / "model.ecm"}


class TestSynth:
    def test_writes_images_and_manifest(self, workspace):
        data = workspace["data"]
        assert (data / "manifest.json").is_file()
        manifest = json.loads((data / "manifest.json").read_text())
        names = [e["name"] for e in manifest["classes"]]
        assert names == ["alpha", "beta", "gamma"]
        assert all(e["train_count"] == 4 for e in manifest["classes"])
        for name in names:
            assert len(list((data / name).glob("*.png"))) == 6
        assert (data / "synth_summary.json").is_file()

    def test_deterministic_output(self, workspace, tmp_path):
        again = tmp_path / "again"
        rc = main(["synth", "--spec", str(workspace["spec"]), "--out", str(again)])
        assert rc == EXIT_OK
        for rel in ("alpha/coin_0000.png", "gamma/coin_0005.png"):
            a = (workspace["data"] / rel).read_bytes()
            b = (again / rel).read_bytes()
            assert a == b

    def test_seed_override_changes_pixels(self, workspace, tmp_path):
        other = tmp_path / "other"
        rc = main(["synth", "--spec", str(workspace["spec"]), "--seed", "99",
                   "--out", str(other)])
        assert rc == EXIT_OK
        a = (workspace["data"] / "alpha/coin_0000.png").read_bytes()
        b = (other / "alpha/coin_0000.png").read_bytes()
        assert a != b

    def test_preset_runs(self, tmp_path):
        rc = main(["synth", "--preset", "imbalanced4_tenth_v1", "--out",
                   str(tmp_path / "preset")])
        assert rc == EXIT_OK
        manifest = json.loads((tmp_path / "preset/manifest.json").read_text())
        assert [e["train_count"] for e in manifest["classes"]] == [5, 49, 10, 1]


class TestTrain:
    def test_model_file_exists(self, workspace):
        assert workspace["model"].is_file()

    def test_stdout_summary(self, workspace, tmp_path, capsys):
        rc = main(["train", "--manifest", str(workspace["manifest"]),
                   "--out", str(tmp_path), "--k", "6"])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "trained eigencoin on 12 gallery item(s)" in out
        assert "basis size 6" in out

    def test_method_flag(self, workspace, tmp_path, capsys):
        rc = main(["train", "--manifest", str(workspace["manifest"]),
                   "--out", str(tmp_path), "--method", "wavelet"])
        assert rc == EXIT_OK
        assert "trained wavelet" in capsys.readouterr().out

    def test_reruns_byte_identical(self, workspace, tmp_path):
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        for d in (d1, d2):
            rc = main(["train", "--manifest", str(workspace["manifest"]),
                       "--out", str(d), "--k", "6"])
            assert rc == EXIT_OK
        assert (d1 / "model.ecm").read_bytes() == (d2 / "model.ecm").read_bytes()

    def test_bad_k_is_usage_error(self, workspace, tmp_path, capsys):
        rc = main(["train", "--manifest", str(workspace["manifest"]),
                   "--out", str(tmp_path), "--k", "100"])
        assert rc == EXIT_USAGE
        assert "error" in capsys.readouterr().err

    def test_missing_manifest_is_data_error(self, tmp_path):
        rc = main(["train", "--manifest", str(tmp_path / "ghost.json"),
                   "--out", str(tmp_path)])
        assert rc == EXIT_DATA


class TestClassify:
    def test_jsonl_output(self, workspace, capsys):
        img = workspace["data"] / "alpha/coin_0004.png"  # test item of alpha
        rc = main(["classify", "--model", str(workspace["model"]), str(img)])
        assert rc == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert record["path"] == str(img)
        assert record["label"] == "alpha"
        assert record["distance"] >= 0.0
        assert "runner_up" in record

    def test_multiple_images_one_line_each(self, workspace, capsys):
        imgs = sorted((workspace["data"] / "beta").glob("*.png"))[:3]
        rc = main(["classify", "--model", str(workspace["model"])]
                  + [str(p) for p in imgs])
        assert rc == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        for line, path in zip(lines, imgs):
            record = json.loads(line)
            assert record["path"] == str(path)
            assert record["label"] == "beta"

    def test_unsegmentable_image_reports_error(self, workspace, tmp_path, capsys):
        blank = tmp_path / "blank.png"
        save_image(GrayImage(np.full((96, 96), 0.5)), blank)
        rc = main(["classify", "--model", str(workspace["model"]), str(blank)])
        assert rc == EXIT_OK  # not strict: failure is recorded, not fatal
        record = json.loads(capsys.readouterr().out.strip())
        assert record["error"] == "threshold"
        assert "label" not in record

    def test_strict_failure_exit_code(self, workspace, tmp_path, capsys):
        blank = tmp_path / "blank.png"
        save_image(GrayImage(np.full((96, 96), 0.5)), blank)
        rc = main(["classify", "--strict", "--model", str(workspace["model"]),
                   str(blank)])
        capsys.readouterr()
        assert rc == EXIT_DATA


class TestEval:
    def test_report_files(self, workspace, tmp_path, capsys):
        rc = main(["eval", "--model", str(workspace["model"]),
                   "--manifest", str(workspace["manifest"]),
                   "--out", str(tmp_path)])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "overall accuracy" in out and "%" in out
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["format_version"] == 1
        results = report["results"]
        assert results["class_names"] == ["alpha", "beta", "gamma"]
        assert len(results["per_class_rates"]) == 3
        assert 0.0 <= results["overall_accuracy"] <= 1.0
        csv_lines = (tmp_path / "confusion.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "true_class,alpha,beta,gamma,rejected"
        assert len(csv_lines) == 4
        # row totals recover the test split sizes
        totals = [sum(int(v) for v in line.split(",")[1:]) for line in csv_lines[1:]]
        assert totals == [2, 2, 2]

    def test_reruns_byte_identical(self, workspace, tmp_path, capsys):
        d1, d2 = tmp_path / "e1", tmp_path / "e2"
        for d in (d1, d2):
            rc = main(["eval", "--model", str(workspace["model"]),
                       "--manifest", str(workspace["manifest"]), "--out", str(d)])
            assert rc == EXIT_OK
        capsys.readouterr()
        assert (d1 / "report.json").read_bytes() == (d2 / "report.json").read_bytes()
        assert (d1 / "confusion.csv").read_bytes() == (d2 / "confusion.csv").read_bytes()

    def test_timestamps_only_in_sidecar(self, workspace, tmp_path, capsys):
        rc = main(["eval", "--model", str(workspace["model"]),
                   "--manifest", str(workspace["manifest"]), "--out", str(tmp_path)])
        assert rc == EXIT_OK
        capsys.readouterr()
        assert (tmp_path / "run.log").is_file()
        report = (tmp_path / "report.json").read_text()
        assert "time" not in json.loads(report).get("config", {})


class TestSweep:
    def test_csv_layout_and_monotone_mse(self, workspace, tmp_path, capsys):
        rc = main(["sweep", "--manifest", str(workspace["manifest"]),
                   "--k-list", "1,2,4,6", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        capsys.readouterr()
        lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == "K,acc_overall,R_1,R_2,R_3,weighted_precision,mse_train"
        assert [row.split(",")[0] for row in lines[1:]] == ["1", "2", "4", "6"]
        mses = [float(row.split(",")[-1]) for row in lines[1:]]
        assert all(b <= a + 1e-12 for a, b in zip(mses, mses[1:]))
        payload = json.loads((tmp_path / "sweep.json").read_text())
        assert [r["k"] for r in payload["rows"]] == [1, 2, 4, 6]

    def test_bad_k_list(self, workspace, tmp_path, capsys):
        rc = main(["sweep", "--manifest", str(workspace["manifest"]),
                   "--k-list", "2,four", "--out", str(tmp_path)])
        capsys.readouterr()
        assert rc == EXIT_USAGE


class TestCompare:
    def test_all_methods(self, workspace, tmp_path, capsys):
        rc = main(["compare", "--manifest", str(workspace["manifest"]),
                   "--k", "6", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        capsys.readouterr()
        lines = (tmp_path / "compare.csv").read_text().strip().splitlines()
        assert lines[0] == "method,R_alpha,R_beta,R_gamma,overall"
        assert [row.split(",")[0] for row in lines[1:]] == [
            "eigencoin", "bdpca", "wavelet", "harris"]
        payload = json.loads((tmp_path / "compare.json").read_text())
        assert len(payload["rows"]) == 4
        for row in payload["rows"]:
            assert 0.0 <= row["weighted_precision"] <= 1.0

    def test_unknown_method_is_usage_error(self, workspace, tmp_path, capsys):
        rc = main(["compare", "--manifest", str(workspace["manifest"]),
                   "--methods", "eigencoin,svm", "--out", str(tmp_path)])
        capsys.readouterr()
        assert rc == EXIT_USAGE

    def test_subset_of_methods(self, workspace, tmp_path, capsys):
        rc = main(["compare", "--manifest", str(workspace["manifest"]),
                   "--methods", "wavelet", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        capsys.readouterr()
        lines = (tmp_path / "compare.csv").read_text().strip().splitlines()
        assert len(lines) == 2 and lines[1].startswith("wavelet,")


class TestConfigResolution:
    def test_env_var_is_picked_up(self, workspace, tmp_path, capsys, monkeypatch):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"classifier": {"method": "wavelet"}}))
        monkeypatch.setenv(CONFIG_ENV_VAR, str(cfg_path))
        rc = main(["train", "--manifest", str(workspace["manifest"]),
                   "--out", str(tmp_path)])
        assert rc == EXIT_OK
        assert "trained wavelet" in capsys.readouterr().out

    def test_flag_beats_file(self, workspace, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"classifier": {"method": "wavelet"}}))
        rc = main(["train", "--config", str(cfg_path),
                   "--manifest", str(workspace["manifest"]),
                   "--out", str(tmp_path), "--method", "eigencoin", "--k", "6"])
        assert rc == EXIT_OK
        assert "trained eigencoin" in capsys.readouterr().out

    def test_unknown_config_key_is_usage_error(self, workspace, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"classifer": {}}))
        rc = main(["train", "--config", str(cfg_path),
                   "--manifest", str(workspace["manifest"]), "--out", str(tmp_path)])
        capsys.readouterr()
        assert rc == EXIT_USAGE

    def test_energy_in_file_displaces_default_k(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"classifier": {"energy": 0.9}}))
        resolved, provenance = resolve_config(str(cfg_path), {})
        cfg = classifier_config(resolved, provenance)
        assert cfg.k is None
        assert cfg.energy == 0.9

    def test_explicit_k_and_energy_conflict(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"classifier": {"energy": 0.9, "k": 4}}))
        resolved, provenance = resolve_config(str(cfg_path), {})
        with pytest.raises(InvalidParameterError):
            classifier_config(resolved, provenance)

    def test_provenance_tracking(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"dataset": {"seed": 3}}))
        resolved, provenance = resolve_config(str(cfg_path),
                                              {"classifier": {"k": 9}})
        assert provenance["dataset.seed"] == "file"
        assert provenance["classifier.k"] == "flag"
        assert provenance["classifier.method"] == "default"
        assert resolved["dataset"]["seed"] == 3
        assert resolved["classifier"]["k"] == 9


class TestUsageErrors:
    def test_missing_subcommand(self, capsys):
        with pytest.raises(SystemExit) as err:
            main([])
        capsys.readouterr()
        assert err.value.code == EXIT_USAGE

    def test_missing_required_argument(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["train"])
        capsys.readouterr()
        assert err.value.code == EXIT_USAGE

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["synth", "--bogus"])
        capsys.readouterr()
        assert err.value.code == EXIT_USAGE


class TestPreprocess:
    def test_normalizes_directory(self, workspace, tmp_path, capsys):
        out = tmp_path / "norm"
        rc = main(["preprocess", "--in", str(workspace["data"] / "alpha"),
                   "--out", str(out)])
        assert rc == EXIT_OK
        assert "preprocessed 6 image(s), 0 failure(s)" in capsys.readouterr().out
        summary = json.loads((out / "preprocess_summary.json").read_text())
        assert summary["success_count"] == 6
        assert summary["failure_count"] == 0
        pngs = sorted(out.glob("*.png"))
        assert len(pngs) == 6
        from eigencoin.imaging import load_image
        assert load_image(pngs[0]).shape == (64, 64)

    def test_strict_flags_failures(self, workspace, tmp_path, capsys):
        bad_dir = tmp_path / "bad"
        bad_dir.mkdir()
        save_image(GrayImage(np.full((48, 48), 0.5)), bad_dir / "flat.png")
        out = tmp_path / "normbad"
        rc = main(["preprocess", "--in", str(bad_dir), "--out", str(out)])
        assert rc == EXIT_OK
        capsys.readouterr()
        summary = json.loads((out / "preprocess_summary.json").read_text())
        assert summary["failure_count"] == 1
        assert summary["items"][0]["stage"] == "threshold"
        rc = main(["preprocess", "--strict", "--in", str(bad_dir),
                   "--out", str(tmp_path / "strictout")])
        capsys.readouterr()
        assert rc == EXIT_DATA
