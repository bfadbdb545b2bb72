"""Command-line entry point.

Subcommands: gen, train, xval, eval, gradcheck, report. Exit codes: 0 on
success, 1 for usage or config problems, 2 for data or file problems, 3
for numeric failures (non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import load_config_file, make_run_config
from .errors import (CheckpointFormatError, CheckpointMismatchError,
                     ConfigError, DataError, NumericError, PitnetError,
                     ShapeError)
from .metrics import MetricsReport, emit_report, format_table


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_run_flags(sp):
    sp.add_argument("--config", help="JSON file with run-config keys")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--profile", choices=("desk", "paper"), default="paper")
    sp.add_argument("--model", choices=("proposed", "light_resnet"))
    sp.add_argument("--transfer", metavar="CKPT",
                    help="checkpoint to transfer-load before training")
    sp.add_argument("--freeze", metavar="PREFIX[,PREFIX...]",
                    help="mark parameters under these prefixes non-trainable")
    sp.add_argument("--manifest", help="dataset manifest CSV")


def build_parser() -> _Parser:
    p = _Parser(prog="pitnet",
                description="Synthetic tactile pit-pattern classification")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config", help="JSON file with generator keys")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--profile", choices=("desk", "paper"), default="paper")
    g.add_argument("--per-class", type=int, dest="per_class",
                   help="images per class (default: the study mix)")
    g.add_argument("--size", type=int, help="output image side in pixels")

    for name, desc in (("train", "train one holdout run"),
                       ("xval", "cross-validate over all folds")):
        sp = sub.add_parser(name, help=desc)
        _add_run_flags(sp)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    e.add_argument("checkpoint")
    e.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    _add_run_flags(e)

    gc = sub.add_parser("gradcheck", help="finite-difference backward checks")
    gc.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="re-emit the report for a run directory")
    r.add_argument("run_dir")
    r.add_argument("--out", help="directory to write into (default: run_dir)")
    return p


def _run_config_from(args) -> "RunConfig":
    file_values = load_config_file(args.config) if args.config else None
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.model is not None:
        overrides["model"] = args.model
    if args.transfer is not None:
        overrides["transfer_checkpoint"] = args.transfer
    if args.freeze is not None:
        overrides["freeze_prefixes"] = tuple(
            s for s in args.freeze.split(",") if s)
    if args.manifest is not None:
        overrides["manifest"] = args.manifest
    return make_run_config(args.profile, file_values, overrides)


def cmd_gen(args) -> int:
    from .phantoms import GenConfig, generate_dataset

    values = load_config_file(args.config) if args.config else {}
    if args.profile == "desk":
        values.setdefault("out_size", 64)
        values.setdefault("margin_px", 8)
    if args.per_class is not None:
        values["per_class"] = args.per_class
    if args.size is not None:
        values["out_size"] = args.size
    if isinstance(values.get("render"), dict):
        from .phantoms import RenderConfig
        values["render"] = RenderConfig(**{k: tuple(v) if isinstance(v, list) else v
                                           for k, v in values["render"].items()})
    if isinstance(values.get("per_class"), list):
        values["per_class"] = tuple(values["per_class"])
    if isinstance(values.get("materials"), list):
        values["materials"] = tuple(values["materials"])
    config = GenConfig(**values)
    manifest = generate_dataset(args.out, config, master_seed=args.seed)
    from .data import read_manifest
    entries = read_manifest(manifest)
    by_class = {}
    n_partial = 0
    for e in entries:
        by_class[e.kudo_class] = by_class.get(e.kudo_class, 0) + 1
        n_partial += e.orientation == "partial"
    counts = ", ".join(f"{c}: {by_class[c]}" for c in sorted(by_class))
    print(f"wrote {len(entries)} images to {args.out} ({counts}; "
          f"{n_partial} partial contact)")
    print(f"manifest: {manifest}")
    return 0


def cmd_train(args) -> int:
    from .train import run_train

    rc = _run_config_from(args)
    result = run_train(rc)
    if result.transfer_report is not None:
        tr = result.transfer_report
        print(f"transfer: loaded {len(tr.loaded)} tensors, "
              f"skipped {len(tr.skipped)}, frozen {len(tr.frozen)}")
        for name, reason in tr.skipped:
            print(f"  skipped {name}: {reason}")
    for row in result.history:
        print(f"epoch {row['epoch']:3d}  train_loss {row['train_loss']:.4f}  "
              f"train_acc {row['train_acc']:.3f}  val_loss {row['val_loss']:.4f}  "
              f"val_acc {row['val_acc']:.3f}")
    print(f"best epoch {result.best_epoch} val_acc {result.best_val_accuracy:.3f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def cmd_xval(args) -> int:
    from .train import run_xval

    rc = _run_config_from(args)
    reports, _ = run_xval(rc)
    print(format_table(reports))
    accs = [r.accuracy for r in reports]
    print(f"fold test accuracies: {', '.join(f'{a:.3f}' for a in accs)}")
    print(f"report: {os.path.join(rc.out_dir, 'report.json')}")
    return 0


def cmd_eval(args) -> int:
    from .data import Dataset, stratified_kfold
    from .train import fold_report, load_model_from_checkpoint

    rc = _run_config_from(args)
    model, metadata = load_model_from_checkpoint(args.checkpoint)
    dataset = Dataset(rc.manifest, model.config.input_size[0])
    # reconstruct the training-time split: the checkpoint remembers its
    # seed and fold, a --seed flag overrides
    split_seed = args.seed if args.seed is not None else metadata.get("seed", rc.seed)
    fold_id = metadata.get("fold", 0)
    if args.split == "all":
        indices = np.arange(len(dataset.labels))
        fold_id = 0
    else:
        plan = stratified_kfold(dataset.labels, rc.folds, split_seed)
        indices = getattr(plan.folds[fold_id], args.split)
    report = fold_report(model, dataset, indices, fold_id,
                         extras={"param_count": model.param_count(),
                                 "split": args.split})
    print(f"samples: {report.sample_count}  accuracy: {report.accuracy:.4f}")
    for name in ("sensitivity", "precision", "specificity", "f1", "auc"):
        print(f"macro {name}: {report.macro[name]:.4f}")
    print("normalized confusion (rows predicted, columns true):")
    for row in report.confusion_normalized:
        print("  " + "  ".join(f"{v:.3f}" for v in row))
    out_dir = rc.out_dir if args.out else os.path.dirname(
        os.path.abspath(args.checkpoint))
    emit_report([report], out_dir)
    print(f"report: {os.path.join(out_dir, 'report.json')}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    failed = []
    for r in run_suite(seed=args.seed):
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:28s} max_rel_err {r.max_err:.3e}  tol {r.tol:.0e}  {status}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}")
        raise NumericError("gradient check exceedance")
    print("all gradient checks passed")
    return 0


def cmd_report(args) -> int:
    path = os.path.join(args.run_dir, "report.json")
    if not os.path.exists(path):
        raise DataError(f"{path}: no report found")
    with open(path) as fh:
        aggregate = json.load(fh)
    reports = []
    for f in aggregate["folds"]:
        reports.append(MetricsReport(
            fold=f["fold"], sample_count=f["sample_count"],
            accuracy=f["accuracy"], macro=f["macro"],
            per_class={int(k): v for k, v in f["per_class"].items()},
            auc={"per_class": {int(k): v for k, v in f["auc"]["per_class"].items()},
                 "macro": f["auc"]["macro"], "excluded": f["auc"]["excluded"]},
            binary=f["binary"], confusion=f["confusion"],
            confusion_normalized=f["confusion_normalized"],
            extras=f.get("extras", {})))
    emit_report(reports, args.out or args.run_dir)
    print(format_table(reports))
    return 0


_COMMANDS = {"gen": cmd_gen, "train": cmd_train, "xval": cmd_xval,
             "eval": cmd_eval, "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, ShapeError, CheckpointFormatError,
            CheckpointMismatchError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, PitnetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
