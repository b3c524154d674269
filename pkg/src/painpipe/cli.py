"""Command-line pipeline driver.

Every stage is independently invokable and they compose:

    painpipe synth --config run.cfg
    painpipe evaluate --config run.cfg
    painpipe report reports/metrics.json --format csv --out reports/metrics.csv
    painpipe plot reports/metrics.json --out reports/comparison.svg

Each command prints the resolved seed and the config digest on stderr;
training emits JSON-lines epoch records on stdout. Output files are
written atomically so a failed command leaves nothing partial behind.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from painpipe.config import ConfigError, RunConfig, config_digest, load_run_config, resolve_seed
from painpipe.dataset import IngestError, class_histogram, compute_class_weights, ingest, ingest_summary, make_fold_plan
from painpipe.evaluation import CrossValidationError, emit_comparison_plot, emit_report, load_report, run_cross_validation
from painpipe.synth import SynthConfig, generate_synthetic
from painpipe.training import save_checkpoint, train_fold


def _announce(args: argparse.Namespace, config: RunConfig) -> int:
    seed = resolve_seed(getattr(args, "seed", None), config)
    print(f"seed={seed} config_digest={config_digest(config)}", file=sys.stderr)
    return seed


def _load_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(getattr(args, "config", None))


def _dataset_root(args: argparse.Namespace, config: RunConfig) -> Path:
    root = getattr(args, "root", None) or config.dataset.root
    if root is None:
        raise ConfigError("dataset.root: no dataset directory given (flag or config)")
    return Path(root)


def _cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args)
    seed = _announce(args, config)
    synth = SynthConfig(
        n_subjects=args.subjects or config.dataset.n_subjects,
        frames_per_subject=args.frames or config.dataset.frames_per_subject,
        image_size=args.image_size or config.dataset.image_size,
        class_mix=tuple(float(v) for v in args.mix.split(",")) if args.mix else config.dataset.class_mix,
        seed=seed,
    )
    out = Path(args.out) if args.out else _dataset_root(args, config)
    index = generate_synthetic(synth, out)
    print(f"{len(index.records)} frames, {len(index.subjects)} subjects -> {out}")
    return 0


def _cmd_ingest(args: argparse.Namespace) -> int:
    config = _load_config(args)
    _announce(args, config)
    root = _dataset_root(args, config)
    index = ingest(root, layout=args.layout or config.dataset.layout, n_classes=config.dataset.n_classes)
    print(f"{len(index.records)} frames, {len(index.subjects)} subjects")
    print(json.dumps(ingest_summary(index), indent=2))
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    config = _load_config(args)
    _announce(args, config)
    root = _dataset_root(args, config)
    index = ingest(root, layout=args.layout or config.dataset.layout, n_classes=config.dataset.n_classes)
    table = compute_class_weights(index)
    print(
        json.dumps(
            {
                "histogram": class_histogram(index),
                "weights": {c: w for c, w in table.weights.items() if w > 0},
                "zero_sample_classes": list(table.zero_sample_classes),
                "total_samples": table.total_samples,
                "n_classes": table.n_classes,
            },
            indent=2,
        )
    )
    return 0


def _cmd_folds(args: argparse.Namespace) -> int:
    config = _load_config(args)
    seed = _announce(args, config)
    if args.root:
        index = ingest(Path(args.root), layout=config.dataset.layout, n_classes=config.dataset.n_classes)
        subjects = sorted(index.subjects)
    else:
        subjects = [f"s{i:03d}" for i in range(args.subjects)]
    plan = make_fold_plan(subjects, k=args.k, n_train=args.train, n_val=args.val, n_test=args.test, seed=seed)
    text = plan.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _prepare_run(args: argparse.Namespace):
    config = _load_config(args)
    seed = _announce(args, config)
    root = _dataset_root(args, config)
    index = ingest(root, layout=config.dataset.layout, n_classes=config.dataset.n_classes)
    ev = config.evaluation
    plan = make_fold_plan(sorted(index.subjects), k=ev.k, n_train=ev.n_train, n_val=ev.n_val, n_test=ev.n_test, seed=seed)
    training = replace(config.training, seed=seed)
    return config, index, plan, training


def _cmd_train(args: argparse.Namespace) -> int:
    config, index, plan, training = _prepare_run(args)
    if not 0 <= args.fold < len(plan.folds):
        raise ConfigError(f"fold index {args.fold} outside 0..{len(plan.folds) - 1}")
    checkpoint = train_fold(
        index,
        plan.folds[args.fold],
        config.model_spec(),
        training,
        preprocess_config=config.preprocess,
        fold_id=args.fold,
        log_fn=print,
    )
    out = Path(args.out) if args.out else Path(f"checkpoint_fold{args.fold}.pt")
    save_checkpoint(checkpoint, out)
    print(f"best_epoch={checkpoint.best_epoch} val_mae={checkpoint.history[checkpoint.best_epoch - 1].val_mae:.4f} -> {out}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config, index, plan, training = _prepare_run(args)
    log_fn = print if args.verbose else None
    report = run_cross_validation(
        index, plan, config.model_spec(), training, preprocess_config=config.preprocess, log_fn=log_fn
    )
    out = Path(args.out) if args.out else config.evaluation.report_path
    emit_report(report, "json", out)
    agg = report.aggregate
    print(f"aggregate mae={agg.mae:.4f} mse={agg.mse:.4f} accuracy={agg.accuracy:.2f} -> {out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    config = _load_config(args)
    _announce(args, config)
    report = load_report(args.report)
    emit_report(report, args.format, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    config = _load_config(args)
    _announce(args, config)
    reports = [load_report(p) for p in args.reports]
    emit_comparison_plot(reports, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_validate_config(args: argparse.Namespace) -> int:
    config = load_run_config(args.config_file)
    print(f"seed={resolve_seed(getattr(args, 'seed', None), config)} config_digest={config_digest(config)}", file=sys.stderr)
    print("config ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="painpipe", description="Pain-level detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="run config file (INI)")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(p)
    p.add_argument("--subjects", type=int, default=None)
    p.add_argument("--frames", type=int, default=None, help="frames per subject")
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--mix", type=str, default=None, help="comma-separated class mix, e.g. 0.7,0.2,0.1")
    p.add_argument("--out", type=Path, default=None, help="output dataset directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="index a dataset and print a summary")
    add_common(p)
    p.add_argument("root", type=Path, nargs="?", default=None)
    p.add_argument("--layout", choices=("unbc_like", "synthetic"), default=None)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("stats", help="print the class histogram and loss weights")
    add_common(p)
    p.add_argument("root", type=Path, nargs="?", default=None)
    p.add_argument("--layout", choices=("unbc_like", "synthetic"), default=None)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("folds", help="emit a subject-disjoint fold plan as JSON")
    add_common(p)
    p.add_argument("--subjects", type=int, default=25, help="subject count (synthetic names)")
    p.add_argument("--root", type=Path, default=None, help="take subjects from a dataset instead")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--train", type=int, default=15)
    p.add_argument("--val", type=int, default=5)
    p.add_argument("--test", type=int, default=5)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=_cmd_folds)

    p = sub.add_parser("train", help="train a single fold and save its checkpoint")
    add_common(p)
    p.add_argument("--root", type=Path, default=None)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="run the full cross-validation and write the report")
    add_common(p)
    p.add_argument("--root", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--verbose", action="store_true", help="emit per-epoch JSON lines")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="convert a JSON report to json/csv")
    add_common(p)
    p.add_argument("report", type=Path)
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("plot", help="emit the grouped metric comparison chart (SVG)")
    add_common(p)
    p.add_argument("reports", type=Path, nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("validate-config", help="check a config file and print its digest")
    p.add_argument("config_file", type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_validate_config)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, CrossValidationError, FileExistsError, FileNotFoundError, PermissionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
