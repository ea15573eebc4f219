"""Batch command line interface.

Subcommands: preprocess, train, classify, eval, sweep, compare, synth.
Report files are deterministic byte for byte; timestamps go to a sidecar
run.log only. Exit codes: 0 success, 1 usage or configuration error,
2 data error, 3 internal failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime
import json
import math
import os
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import classify as classify_mod
from . import dataset as dataset_mod
from . import evaluation
from .classify import ClassifierConfig, fit, load_model, predict, save_model
from .errors import (DatasetLoadError, EigenCoinError, InvalidDatasetError,
                     InvalidParameterError, ModelFormatError,
                     PredictionFailureError, SegmentationFailureError)
from .imaging import PreprocessConfig, extract_roi, load_image, save_image

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

CONFIG_ENV_VAR = "EIGENCOIN_CONFIG"
REPORT_FORMAT_VERSION = 1

DEFAULT_CONFIG = {
    "preprocess": {"sobel_threshold": 0.2, "se_length": 3, "normalized_size": 64},
    "classifier": {
        "method": "eigencoin",
        "k": 112,
        "energy": None,
        "k_rows": 15,
        "k_cols": 35,
        "level": 2,
        "harris": {"k": 0.04, "window_radius": 2, "threshold_fraction": 0.01, "top_count": 128},
        "distance": None,
        "cov_model": None,
        "epsilon": None,
        "amd_p": 1.0,
        "threshold": "inf",
    },
    "eval": {"alpha_mode": "rank", "rejection_aware": False},
    "dataset": {"fraction": 0.7, "seed": 0},
}


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2 by default; this CLI uses 1."""

    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _merge(base: dict, override: dict, provenance: Dict[str, str],
           origin: str, prefix: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise InvalidParameterError(f"unknown config key {path!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, provenance, origin, prefix=path + ".")
        else:
            out[key] = value
            provenance[path] = origin
    return out


def resolve_config(config_path: Optional[str],
                   flag_overrides: dict) -> Tuple[dict, Dict[str, str]]:
    """Layer defaults, then the config file, then command line flags.

    Returns the resolved config plus a per-key provenance map
    (default, file, or flag) that reports embed verbatim.
    """
    provenance: Dict[str, str] = {}

    def mark_defaults(node: dict, prefix: str = ""):
        for key, value in node.items():
            path = f"{prefix}{key}"
            if isinstance(value, dict):
                mark_defaults(value, path + ".")
            else:
                provenance[path] = "default"

    resolved = copy.deepcopy(DEFAULT_CONFIG)
    mark_defaults(resolved)
    path = config_path or os.environ.get(CONFIG_ENV_VAR)
    if path:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InvalidParameterError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidParameterError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise InvalidParameterError(f"config {path} must hold a JSON object")
        resolved = _merge(resolved, loaded, provenance, "file")
    if flag_overrides:
        resolved = _merge(resolved, flag_overrides, provenance, "flag")
    return resolved, provenance


def classifier_config(resolved: dict, provenance: Optional[Dict[str, str]] = None) -> ClassifierConfig:
    section = dict(resolved["classifier"])
    method = section.get("method", "eigencoin")
    cfg_dict: dict = {"method": method, "preprocess": resolved["preprocess"]}
    if method == "eigencoin":
        k, energy = section.get("k"), section.get("energy")
        # an explicitly requested energy fraction displaces the default k
        if provenance is not None and energy is not None:
            if provenance.get("classifier.k", "default") == "default":
                k = None
        cfg_dict["k"] = k
        cfg_dict["energy"] = energy
    elif method == "bdpca":
        cfg_dict["k_rows"] = section.get("k_rows", 15)
        cfg_dict["k_cols"] = section.get("k_cols", 35)
    elif method == "wavelet":
        cfg_dict["level"] = section.get("level", 2)
    elif method == "harris":
        cfg_dict["harris"] = section.get("harris", {})
    for key in ("distance", "cov_model", "epsilon"):
        if section.get(key) is not None:
            cfg_dict[key] = section[key]
    cfg_dict["amd_p"] = section.get("amd_p", 1.0)
    cfg_dict["threshold"] = section.get("threshold", "inf")
    return ClassifierConfig.from_dict(cfg_dict)


def _flag_overrides(args) -> dict:
    flags: dict = {}
    if getattr(args, "seed", None) is not None:
        flags.setdefault("dataset", {})["seed"] = args.seed
    if getattr(args, "method", None) is not None:
        flags.setdefault("classifier", {})["method"] = args.method
    if getattr(args, "k", None) is not None:
        flags.setdefault("classifier", {})["k"] = args.k
    return flags


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(out: Path, message: str) -> None:
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    with open(out / "run.log", "a", encoding="utf-8") as fh:
        fh.write(f"{stamp} {message}\n")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(value: float) -> str:
    return repr(float(value))


def _report_header(resolved: dict, provenance: Dict[str, str]) -> dict:
    return {"format_version": REPORT_FORMAT_VERSION, "config": resolved,
            "config_provenance": provenance}


def _load_dataset(args, resolved: dict) -> Tuple[dataset_mod.LabeledDataset, dict]:
    manifest_path = Path(args.manifest)
    manifest = dataset_mod.load_manifest(manifest_path)
    if "fraction" not in manifest:
        manifest["fraction"] = resolved["dataset"]["fraction"]
    if "seed" not in manifest:
        manifest["seed"] = resolved["dataset"]["seed"]
    ds = dataset_mod.load_and_split(manifest_path.parent, manifest)
    return ds, manifest


def cmd_preprocess(args) -> int:
    resolved, provenance = resolve_config(args.config, _flag_overrides(args))
    pre = PreprocessConfig.from_dict(resolved["preprocess"])
    in_dir = Path(args.input)
    if not in_dir.is_dir():
        raise DatasetLoadError(f"input directory {in_dir} does not exist")
    out = _out_dir(args)
    items = []
    failures = 0
    for path in sorted(in_dir.rglob("*")):
        if path.suffix.lower() not in dataset_mod.RASTER_SUFFIXES or not path.is_file():
            continue
        rel = path.relative_to(in_dir)
        try:
            img = load_image(path)
            roi = extract_roi(img, pre)
        except SegmentationFailureError as exc:
            items.append({"file": str(rel), "status": "failed", "stage": exc.stage})
            failures += 1
            continue
        except Exception as exc:
            items.append({"file": str(rel), "status": "failed", "stage": f"decode: {exc}"})
            failures += 1
            continue
        target = out / rel.with_suffix(".png")
        target.parent.mkdir(parents=True, exist_ok=True)
        save_image(roi, target)
        items.append({"file": str(rel), "status": "ok"})
    summary = _report_header(resolved, provenance)
    summary.update({"items": items, "success_count": len(items) - failures,
                    "failure_count": failures})
    _write_json(out / "preprocess_summary.json", summary)
    _log(out, f"preprocess {in_dir} -> {out}: {len(items) - failures} ok, {failures} failed")
    print(f"preprocessed {len(items) - failures} image(s), {failures} failure(s)")
    if failures and args.strict:
        return EXIT_DATA
    return EXIT_OK


def cmd_train(args) -> int:
    resolved, provenance = resolve_config(args.config, _flag_overrides(args))
    cfg = classifier_config(resolved, provenance)
    ds, _ = _load_dataset(args, resolved)
    model = fit(ds, cfg)
    out = _out_dir(args)
    model_path = Path(args.model_out) if args.model_out else out / "model.ecm"
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_path)
    _log(out, f"train {args.manifest} -> {model_path}")
    line = f"trained {cfg.method} on {model.gallery.shape[0]} gallery item(s)"
    if model.manifold is not None:
        line += (f", basis size {model.manifold.k}"
                 f", energy captured {100.0 * model.manifold.energy_captured():.2f}%")
    print(line)
    return EXIT_OK


def cmd_classify(args) -> int:
    model = load_model(args.model)
    failures = 0
    for path in args.images:
        record: dict = {"path": str(path)}
        try:
            pred = predict(model, load_image(path))
        except PredictionFailureError as exc:
            record["error"] = exc.stage
            failures += 1
        except Exception as exc:
            record["error"] = str(exc)
            failures += 1
        else:
            if pred.label is None:
                record["label"] = "REJECTED"
            else:
                record["label"] = model.class_names[pred.label - 1]
            record["distance"] = pred.best_distance
            if pred.runner_up is not None:
                record["runner_up"] = pred.runner_up
        print(json.dumps(record, sort_keys=True))
    if failures and args.strict:
        return EXIT_DATA
    return EXIT_OK


def _eval_payload(report: evaluation.EvalReport, class_names) -> dict:
    payload = report.to_dict()
    payload["class_names"] = list(class_names)
    return payload


def _write_confusion_csv(path: Path, cm: evaluation.ConfusionMatrix, class_names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_class"] + list(class_names) + ["rejected"])
        for i, name in enumerate(class_names):
            writer.writerow([name] + [int(v) for v in cm.counts[i]] + [int(cm.rejected[i])])


def cmd_eval(args) -> int:
    resolved, provenance = resolve_config(args.config, _flag_overrides(args))
    model = load_model(args.model)
    ds, _ = _load_dataset(args, resolved)
    if tuple(ds.class_names) != model.class_names:
        raise InvalidDatasetError("dataset classes do not match the model's classes")
    images, truth = ds.test_set()
    report = evaluation.evaluate(
        model, images, truth, class_counts=ds.class_counts(),
        alpha_mode=resolved["eval"]["alpha_mode"],
        rejection_aware=resolved["eval"]["rejection_aware"])
    out = _out_dir(args)
    payload = _report_header(resolved, provenance)
    payload["results"] = _eval_payload(report, ds.class_names)
    _write_json(out / "report.json", payload)
    _write_confusion_csv(out / "confusion.csv", report.confusion_matrix, ds.class_names)
    _log(out, f"eval {args.model} on {args.manifest}")
    print(f"overall accuracy {100.0 * report.overall:.2f}%, "
          f"weighted precision {100.0 * report.weighted:.2f}%")
    for name, rate in zip(ds.class_names, report.rates):
        print(f"  {name}: {100.0 * rate:.2f}%")
    return EXIT_OK


def cmd_sweep(args) -> int:
    resolved, provenance = resolve_config(args.config, _flag_overrides(args))
    try:
        k_values = [int(part) for part in args.k_list.split(",") if part.strip()]
    except ValueError as exc:
        raise InvalidParameterError(f"bad --k-list: {exc}") from exc
    cfg = classifier_config(resolved, provenance)
    if cfg.method != "eigencoin":
        raise InvalidParameterError("the sweep applies to the eigencoin method")
    ds, _ = _load_dataset(args, resolved)
    rows = evaluation.sweep(ds, k_values, cfg=cfg,
                            alpha_mode=resolved["eval"]["alpha_mode"])
    out = _out_dir(args)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["K", "acc_overall"]
                        + [f"R_{i + 1}" for i in range(ds.n_classes)]
                        + ["weighted_precision", "mse_train"])
        for row in rows:
            writer.writerow([row.k, _fmt(row.overall)] + [_fmt(r) for r in row.rates]
                            + [_fmt(row.weighted), _fmt(row.mse_train)])
    payload = _report_header(resolved, provenance)
    payload["rows"] = [{"k": row.k, "acc_overall": row.overall,
                        "rates": list(row.rates), "weighted_precision": row.weighted,
                        "mse_train": row.mse_train} for row in rows]
    payload["class_names"] = list(ds.class_names)
    _write_json(out / "sweep.json", payload)
    _log(out, f"sweep {args.manifest} K={k_values}")
    for row in rows:
        print(f"K={row.k}: accuracy {100.0 * row.overall:.2f}%, "
              f"weighted {100.0 * row.weighted:.2f}%, train mse {row.mse_train:.4f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    resolved, provenance = resolve_config(args.config, _flag_overrides(args))
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise InvalidParameterError("no methods given")
    for m in methods:
        if m not in classify_mod.METHODS:
            raise InvalidParameterError(
                f"unknown method {m!r}, expected one of {classify_mod.METHODS}")
    ds, _ = _load_dataset(args, resolved)
    images, truth = ds.test_set()
    out = _out_dir(args)
    results = []
    for m in methods:
        method_resolved = copy.deepcopy(resolved)
        method_resolved["classifier"]["method"] = m
        cfg = classifier_config(method_resolved, provenance)
        model = fit(ds, cfg)
        report = evaluation.evaluate(model, images, truth,
                                     class_counts=ds.class_counts(),
                                     alpha_mode=resolved["eval"]["alpha_mode"])
        results.append((m, report))
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method"] + [f"R_{name}" for name in ds.class_names] + ["overall"])
        for m, report in results:
            writer.writerow([m] + [_fmt(100.0 * r) for r in report.rates]
                            + [_fmt(100.0 * report.weighted)])
    payload = _report_header(resolved, provenance)
    payload["class_names"] = list(ds.class_names)
    payload["rows"] = [{"method": m, "rates": report.rates.tolist(),
                        "weighted_precision": report.weighted,
                        "overall_accuracy": report.overall} for m, report in results]
    _write_json(out / "compare.json", payload)
    _log(out, f"compare {args.manifest} methods={methods}")
    for m, report in results:
        print(f"{m}: weighted precision {100.0 * report.weighted:.2f}%")
    return EXIT_OK


def cmd_synth(args) -> int:
    resolved, provenance = resolve_config(args.config, _flag_overrides(args))
    if args.spec:
        synth_cfg = dataset_mod.SynthConfig.from_dict(
            json.loads(Path(args.spec).read_text(encoding="utf-8")))
    else:
        synth_cfg = dataset_mod.load_preset(args.preset)
    if args.seed is not None:
        synth_cfg = dataset_mod.SynthConfig.from_dict(
            {**synth_cfg.to_dict(), "seed": args.seed})
    if args.noise is not None:
        synth_cfg = dataset_mod.SynthConfig.from_dict(
            {**synth_cfg.to_dict(), "noise_sigma": args.noise})
    ds = dataset_mod.synthesize(synth_cfg)
    out = _out_dir(args)
    dataset_mod.write_dataset(ds, out, fraction=resolved["dataset"]["fraction"],
                              seed=synth_cfg.seed)
    summary = _report_header(resolved, provenance)
    summary["synth"] = synth_cfg.to_dict()
    summary["counts"] = {name: int(c) for name, c in
                         zip(ds.class_names, ds.class_counts())}
    _write_json(out / "synth_summary.json", summary)
    _log(out, f"synth -> {out}")
    print(f"wrote {len(ds.images)} image(s) across {ds.n_classes} class(es) to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"config JSON path (default: ${CONFIG_ENV_VAR})")
    common.add_argument("--seed", type=int, help="override the dataset seed")
    common.add_argument("--strict", action="store_true",
                        help="treat per-item failures as a data error")
    common.add_argument("--out", help="output directory (default: current directory)")

    parser = _Parser(prog="eigencoin",
                     description="Coin image classification experiments, batch style.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common],
                       help="segment and normalize every image under a directory")
    p.add_argument("--in", dest="input", required=True, help="input image directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="fit a classifier from a dataset manifest")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--model-out", help="model file path (default: OUT/model.ecm)")
    p.add_argument("--method", choices=classify_mod.METHODS, help="override the configured method")
    p.add_argument("--k", type=int, help="override the eigencoin basis size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", parents=[common], help="classify images, one JSON line each")
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("images", nargs="+", help="image files to classify")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", parents=[common], help="score a model on a manifest's test split")
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="evaluate eigenspace sizes")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--k-list", required=True, help="comma separated basis sizes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", parents=[common], help="fit and score several methods")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--methods", default=",".join(classify_mod.METHODS),
                   help="comma separated method names")
    p.add_argument("--k", type=int, help="override the eigencoin basis size")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.add_argument("--preset", default="imbalanced4_tenth_v1",
                   help=f"shipped preset name {dataset_mod.preset_names()}")
    p.add_argument("--spec", help="synthetic config JSON path (overrides --preset)")
    p.add_argument("--noise", type=float, help="override the noise sigma")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidDatasetError, DatasetLoadError, ModelFormatError,
            SegmentationFailureError, PredictionFailureError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EigenCoinError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
