"""Command-line entry point.

    leafscope prepare  --config run.json
    leafscope train    --config run.json [--backbone toyconv] [--epochs 20] [--seed 1]
    leafscope evaluate --config run.json
    leafscope evaluate --matrix figure.csv --transpose-paper --out DIR [--model densenet201]
    leafscope compare  RUN_DIR [RUN_DIR ...] --out DIR
    leafscope report   --run RUN_DIR [--transpose-paper]

Exit status is 0 on success, 1 on usage or validation errors and 2 on
runtime failures. Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .augment import expand_training_set
from .config import RunConfig, load_config
from .dataset import DatasetManifest, encode_labels, scan_dataset, stratified_split
from .errors import ConfigError, InputError, LeafscopeError
from .imgproc import cache_preprocessed, load_image, preprocess_raw
from .metrics import EvaluationReport, build_report, confusion_matrix, read_matrix_csv, write_matrix_csv
from .model import build_classifier, config_digest, load_checkpoint
from .report import RunBundle, compare_runs, format_report_table, load_bundle, render_confusion, render_history
from .streams import BatchStream, load_split_images
from .trainer import TrainingHistory, evaluate_stream, train

log = logging.getLogger("leafscope")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leafscope", description="Fine-tune CNN backbones for leaf disease classification.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="override dataset/augment/train seeds")
        sp.add_argument("--backbone", help="override model.backbone")
        sp.add_argument("--epochs", type=int, help="override train.epochs")
        sp.add_argument("--run-dir", help="override output.run_dir")

    common(sub.add_parser("prepare", help="scan the corpus and write manifest.json with the split"))
    common(sub.add_parser("train", help="two-phase training; writes checkpoints and history.json"))
    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split, or import a matrix")
    common(ev, config_required=False)
    ev.add_argument("--matrix", help="confusion-matrix CSV to import instead of running a checkpoint")
    ev.add_argument("--transpose-paper", action="store_true",
                    help="the imported CSV has rows = predicted, columns = true")
    ev.add_argument("--model", default="densenet201", help="model name recorded for an imported matrix")
    ev.add_argument("--out", help="run directory for an imported matrix")
    cmp_ = sub.add_parser("compare", help="comparison table over several run directories")
    cmp_.add_argument("runs", nargs="+")
    cmp_.add_argument("--out", required=True)
    rep = sub.add_parser("report", help="render every artifact for one run directory")
    rep.add_argument("--run", required=True)
    rep.add_argument("--transpose-paper", action="store_true",
                     help="render the confusion matrix with rows = predicted")
    return p


def _flag_overrides(args) -> dict:
    flags: dict[str, dict] = {}
    if getattr(args, "seed", None) is not None:
        for section in ("dataset", "augment", "train"):
            flags.setdefault(section, {})["seed"] = args.seed
    if getattr(args, "backbone", None):
        flags.setdefault("model", {})["backbone"] = args.backbone
        if args.backbone == "toyconv":
            flags["model"]["pretrained"] = False
    if getattr(args, "epochs", None) is not None:
        flags.setdefault("train", {})["epochs"] = args.epochs
    if getattr(args, "run_dir", None):
        flags.setdefault("output", {})["run_dir"] = args.run_dir
    return flags


# --- stages ----------------------------------------------------------------

def _manifest(cfg: RunConfig) -> DatasetManifest:
    path = cfg.run_dir / "manifest.json"
    if path.exists():
        return DatasetManifest.load(path)
    return cmd_prepare(cfg)


def cmd_prepare(cfg: RunConfig) -> DatasetManifest:
    if not cfg.dataset.root:
        raise ConfigError("dataset.root is required")
    manifest = scan_dataset(cfg.dataset.root)
    split = stratified_split(manifest, cfg.dataset.ratio, cfg.dataset.seed, cfg.dataset.val_ratio)
    manifest = manifest.with_split(split)
    manifest.save(cfg.run_dir / "manifest.json")
    log.info("manifest: %d samples, %d train / %d val / %d test", len(manifest.samples),
             len(split.train_ids), len(split.val_ids), len(split.test_ids))
    if cfg.preprocess.cache:
        cache_preprocessed(manifest, cfg.preprocess.stages(), cfg.run_dir / "cache")
    if cfg.augment.materialize:
        aug = expand_training_set(manifest, split, cfg.augment.policy(), cfg.augment.augment_eval)
        pc = cfg.preprocess.stages()
        aug.materialize(manifest, lambda i: preprocess_raw(load_image(manifest.path_of(i)), pc),
                        cfg.run_dir / "augmented")
    return manifest


def _streams(cfg: RunConfig, manifest: DatasetManifest) -> tuple[BatchStream, BatchStream, BatchStream]:
    split = manifest.split_assignment()
    pc = cfg.preprocess.stages()
    cache = cfg.run_dir / "cache" if cfg.preprocess.cache else None
    bs, size = cfg.train.batch_size, pc.model_input_size

    def stream(ids, training):
        imgs = load_split_images(manifest, ids, pc, cache)
        aug = cfg.augment.policy() if (training and cfg.augment.enabled) else None
        return BatchStream(imgs, manifest.labels(ids), bs, size, training, aug, cfg.train.seed,
                           np.asarray(ids, dtype=np.int64))

    train_s = stream(split.train_ids, True)
    test_s = stream(split.test_ids, False)
    val_s = stream(split.val_ids, False) if split.val_ids else test_s
    return train_s, val_s, test_s


def _environment() -> dict:
    return {"python": platform.python_version(), "torch": torch.__version__,
            "platform": platform.platform(), "leafscope": __version__}


def cmd_train(cfg: RunConfig) -> TrainingHistory:
    manifest = _manifest(cfg)
    train_s, val_s, _ = _streams(cfg, manifest)
    clf = build_classifier(cfg.model.backbone, manifest.num_classes, cfg.model.dropout_rate,
                           cfg.preprocess.model_input_size, cfg.model.pretrained,
                           cfg.model.weights_path, seed=cfg.train.seed)
    digest = config_digest(cfg.to_dict())
    t0 = time.time()
    _, history = train(clf, train_s, val_s, cfg.train, cfg.run_dir, digest)
    meta = {
        "model_name": cfg.model.backbone,
        "config": cfg.to_dict(),
        "config_hash": digest,
        "manifest_sha256": manifest.digest(),
        "started": t0,
        "wall_clock_seconds": time.time() - t0,
        "environment": _environment(),
    }
    (cfg.run_dir / "run.json").write_text(json.dumps(meta, indent=1) + "\n")
    return history


def cmd_evaluate(cfg: RunConfig) -> EvaluationReport:
    manifest = _manifest(cfg)
    _, _, test_s = _streams(cfg, manifest)
    clf = load_checkpoint(cfg.run_dir / cfg.model.backbone)
    _, _, y_true, y_pred = evaluate_stream(clf, test_s)
    report = build_report(confusion_matrix(y_true, y_pred, manifest.num_classes),
                          encode_labels(manifest.class_names))
    out = cfg.run_dir / "reports"
    report.save(out / "report.json")
    write_matrix_csv(out / "confusion.csv", report.matrix, report.class_names)
    if not (cfg.run_dir / "run.json").exists():
        meta = {"model_name": cfg.model.backbone, "config": cfg.to_dict(),
                "config_hash": config_digest(cfg.to_dict()), "environment": _environment()}
        (cfg.run_dir / "run.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(format_report_table(report, cfg.model.backbone), end="")
    return report


def cmd_import_matrix(path: str, transpose_paper: bool, model: str, out: str) -> EvaluationReport:
    matrix, names = read_matrix_csv(path, transpose_paper=transpose_paper or None)
    report = build_report(matrix, names)
    RunBundle(model, None, report)  # validates the model name
    run_dir = Path(out)
    report.save(run_dir / "reports" / "report.json")
    write_matrix_csv(run_dir / "reports" / "confusion.csv", report.matrix, names)
    (run_dir / "run.json").write_text(json.dumps(
        {"model_name": model, "source": str(path), "config_hash": ""}, indent=1) + "\n")
    print(format_report_table(report, model), end="")
    return report


def cmd_report(run: str, transpose_paper: bool) -> None:
    bundle = load_bundle(run)
    out = Path(run) / "reports"
    if bundle.history is not None and bundle.history.records:
        render_history(bundle.history, out)
    render_confusion(bundle.report, out, "paper" if transpose_paper else "internal", bundle.model_name)
    # the CSV in the run tree always stays in internal orientation
    write_matrix_csv(out / "confusion.csv", bundle.report.matrix, bundle.report.class_names)
    bundle.report.save(out / "report.json")
    (out / "report.txt").write_text(format_report_table(bundle.report, bundle.model_name))
    compare_runs([bundle], out)


def run_command(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_INVALID
    except UsageError as exc:
        print(f"leafscope: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_INVALID

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command in ("prepare", "train") or (args.command == "evaluate" and not args.matrix):
            if not args.config:
                raise ConfigError("--config is required")
            cfg = load_config(args.config, _flag_overrides(args))
            {"prepare": cmd_prepare, "train": cmd_train, "evaluate": cmd_evaluate}[args.command](cfg)
        elif args.command == "evaluate":
            if not args.out:
                raise ConfigError("--out is required when importing a matrix")
            cmd_import_matrix(args.matrix, args.transpose_paper, args.model, args.out)
        elif args.command == "compare":
            table = compare_runs([load_bundle(r) for r in args.runs], args.out)
            print((Path(args.out) / "comparison.txt").read_text(), end="")
            log.info("ranked %d runs; best: %s", len(table.rows), table.rows[0].model_name)
        elif args.command == "report":
            cmd_report(args.run, args.transpose_paper)
    except (ConfigError, InputError) as exc:
        print(f"leafscope: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (LeafscopeError, OSError, KeyError, ValueError) as exc:
        print(f"leafscope: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
