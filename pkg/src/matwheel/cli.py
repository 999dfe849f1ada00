"""Command-line entry point: ``matwheel <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .arms import Scenario
from .config import ConfigErrors, config_to_dict, load_config, resolve_output_dir
from .data import (
    JARVIS2D_EXFOLIATION,
    MP_POLY_TOTAL,
    DatasetMeta,
    read_jsonl,
    split_dataset,
    subsample_labeled,
    write_jsonl,
)
from .evaluation import aggregate, mae, render_csv, render_markdown
from .exceptions import ConfigError, MatWheelError
from .flywheel import ArmResult, load_records, run_flywheel_iterations, run_scenario, seed_table
from .generator import GeneratorConfig, generate_synthetic_set, load_generator, save_generator, train_generator
from .graph import NeighborParams
from .kde import fit_kde
from .predictor import PredictorConfig, init_predictor, predict, save_predictor, train_predictor
from .toy import make_toy_dataset

log = logging.getLogger("matwheel")

KNOWN_DATASETS = {m.name: m for m in (JARVIS2D_EXFOLIATION, MP_POLY_TOTAL)}
RESULTS_FILE = "results.json"
REPORT_FILES = {"csv": "report.csv", "markdown": "report.md"}


class UsageError(Exception):
    pass


def _setup_logging(level="INFO"):
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format="%(levelname)s %(name)s %(message)s", force=True)


def _meta_from_args(args) -> DatasetMeta:
    if args.dataset:
        return KNOWN_DATASETS[args.dataset]
    if args.max_atoms is None or args.property_range is None:
        raise UsageError("give --dataset or both --max-atoms and --property-range")
    return DatasetMeta(args.name or "custom", args.max_atoms, tuple(args.property_range))


def _add_meta_args(p):
    p.add_argument("--dataset", choices=sorted(KNOWN_DATASETS), help="use a built-in dataset's bounds")
    p.add_argument("--name", help="dataset name when giving bounds explicitly")
    p.add_argument("--max-atoms", type=int)
    p.add_argument("--property-range", type=float, nargs=2, metavar=("LOW", "HIGH"))


def _read_or_fail(path, meta):
    try:
        records, rejected = read_jsonl(path, meta, strict=False)
    except OSError as exc:
        raise RuntimeError(f"cannot read {path}: {exc}") from None
    return records, rejected


def cmd_ingest(args) -> int:
    meta = _meta_from_args(args)
    records, rejected = _read_or_fail(args.input, meta)
    for lineno, reason in rejected:
        log.warning("stage=ingest line=%d rejected reason=%r", lineno, reason)
    if args.output and records:
        write_jsonl(records, args.output)
    print(f"accepted {len(records)}, rejected {len(rejected)}")
    return 0 if records else 1


def cmd_split(args) -> int:
    records, _ = _read_or_fail(args.input, None)
    if not records:
        raise RuntimeError("dataset is empty")
    splits = split_dataset(records, tuple(args.ratios), args.seed)
    out = {"seed": args.seed, "train_ids": list(splits.train_ids), "val_ids": list(splits.val_ids),
           "test_ids": list(splits.test_ids)}
    if args.labeled_fraction is not None:
        part = subsample_labeled(splits.train_ids, args.labeled_fraction, args.seed)
        out["labeled_ids"], out["unlabeled_ids"] = list(part.labeled_ids), list(part.unlabeled_ids)
    text = json.dumps(out, indent=1) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sizes = ", ".join(f"{k[:-4]} {len(v)}" for k, v in out.items() if k.endswith("_ids"))
    print(sizes)
    return 0


def _load_split(path, records, seed):
    if path is None:
        splits = split_dataset(records, seed=seed)
        return list(splits.train_ids), list(splits.val_ids), list(splits.test_ids)
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    return blob["train_ids"], blob["val_ids"], blob["test_ids"]


def cmd_train_predictor(args) -> int:
    records, _ = _read_or_fail(args.input, None)
    by_id = {r.id: r for r in records}
    train_ids, val_ids, test_ids = _load_split(args.split, records, args.seed)
    config = PredictorConfig(epochs=args.epochs, seed=args.seed)
    model = init_predictor(config, NeighborParams())
    model, report = train_predictor(model, [by_id[i] for i in train_ids], [by_id[i] for i in val_ids], config)
    save_predictor(model, args.output)
    test = [by_id[i] for i in test_ids]
    msg = f"best_epoch={report.best_epoch} best_val_mae={report.best_val_mae:.6f}"
    if test:
        msg += f" test_mae={mae(predict(model, [r.structure for r in test]), [r.property for r in test]):.6f}"
    print(msg)
    return 0


def cmd_train_generator(args) -> int:
    meta = _meta_from_args(args)
    records, _ = _read_or_fail(args.input, meta)
    if not records:
        raise RuntimeError("dataset is empty")
    config = GeneratorConfig(max_atoms=meta.max_atoms, epochs=args.epochs, seed=args.seed)
    model = train_generator(records, config)
    save_generator(model, args.output)
    print(f"trained on {len(records)} records, final loss {model.loss_history[-1]:.6f}"
          if model.loss_history else f"trained on {len(records)} records")
    return 0


def cmd_sample(args) -> int:
    model = load_generator(args.checkpoint)
    records, _ = _read_or_fail(args.kde_from, None)
    if not records:
        raise RuntimeError("no property values to fit the condition KDE")
    kde = fit_kde([r.property for r in records])
    synthetic = generate_synthetic_set(model, kde, args.n, model.config.max_atoms, args.seed)
    write_jsonl(synthetic, args.output)
    print(f"wrote {len(synthetic)} synthetic records")
    return 0


def _write_text(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_reports(out_dir: Path, dataset: str, results) -> dict:
    cells = aggregate(results, dataset)
    texts = {"csv": render_csv(cells), "markdown": render_markdown(cells)}
    for fmt, text in texts.items():
        _write_text(out_dir / REPORT_FILES[fmt], text)
    return texts


def cmd_run(args) -> int:
    overrides = {"n_runs": args.n_runs, "rounds": args.rounds, "base_seed": args.seed, "scenario": args.scenario}
    cfg = load_config(args.config, overrides)
    _setup_logging(args.log_level or cfg.log_level)
    out_dir = Path(resolve_output_dir(cfg, args.output_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    done = out_dir / "DONE"
    if done.exists():
        done.unlink()
    run = cfg.run

    scenarios = [Scenario.FULL, Scenario.SEMI] if cfg.scenario == "both" else [Scenario(cfg.scenario)]
    _write_text(out_dir / "config.json", json.dumps(config_to_dict(cfg), indent=1, sort_keys=True) + "\n")
    _write_text(out_dir / "seeds.json", json.dumps(seed_table(run, scenarios), indent=1) + "\n")

    records = load_records(run)
    log.info("stage=load dataset=%s records=%d", run.meta.name, len(records))
    ckpt_dir = out_dir / "checkpoints"
    results = []
    for scenario in scenarios:
        log.info("stage=scenario scenario=%s runs=%d", scenario.value, run.n_runs)
        if scenario == Scenario.SEMI and run.rounds > 1:
            by_round = run_flywheel_iterations(run, records, artifact_dir=ckpt_dir, jobs=args.jobs)
            results += [r for rnd in sorted(by_round) for r in by_round[rnd]]
        else:
            results += run_scenario(scenario, run, records, artifact_dir=ckpt_dir, jobs=args.jobs)

    blob = {"dataset": run.meta.name, "results": [r.to_dict() for r in results]}
    _write_text(out_dir / RESULTS_FILE, json.dumps(blob, indent=1) + "\n")
    compositions = [{"arm": r.arm.value, "run": r.run_index, "round": r.round,
                     "composition": r.train_set_composition} for r in results]
    _write_text(out_dir / "compositions.json", json.dumps(compositions, indent=1) + "\n")
    write_reports(out_dir, run.meta.name, results)
    done.write_text("ok\n", encoding="utf-8")
    log.info("stage=done output_dir=%s results=%d", out_dir, len(results))
    return 0


def load_results(results_dir):
    path = Path(results_dir) / RESULTS_FILE
    try:
        blob = json.loads(path.read_text(encoding="utf-8"))
        return blob["dataset"], [ArmResult.from_dict(r) for r in blob["results"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise RuntimeError(f"cannot load results from {path}: {exc}") from None


def cmd_report(args) -> int:
    dataset, results = load_results(args.results_dir)
    if not results:
        raise RuntimeError("results file holds no results")
    cells = aggregate(results, dataset)
    text = render_csv(cells) if args.format == "csv" else render_markdown(cells)
    if args.output:
        _write_text(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_toy(args) -> int:
    records, meta = make_toy_dataset(args.n, args.seed)
    write_jsonl(records, args.output)
    print(f"wrote {len(records)} records; max_atoms={meta.max_atoms} "
          f"property_range=({meta.property_range[0]:.6f}, {meta.property_range[1]:.6f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matwheel", description="Materials data flywheel experiments.")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="overrides log_level from a run config (default INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize a JSON-lines dataset")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    _add_meta_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="write a seeded train/val/test split")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", type=float, nargs=3, default=[0.70, 0.15, 0.15])
    p.add_argument("--labeled-fraction", type=float)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-predictor", help="train the graph regressor on a split")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--split", help="split file from `matwheel split`")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("train-generator", help="train the conditional generator")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    _add_meta_args(p)
    p.set_defaults(func=cmd_train_generator)

    p = sub.add_parser("sample", help="sample a synthetic set from a generator checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--kde-from", required=True, help="dataset whose labels define the condition KDE")
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("run", help="run the full experiment from a config file")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.add_argument("--n-runs", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--scenario", choices=["full", "semi", "both"])
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-render reports from a results directory")
    p.add_argument("results_dir")
    p.add_argument("--format", choices=["csv", "markdown"], default="csv")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("toy", help="write the toy dataset as JSON lines")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("-n", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_level or "INFO")
    try:
        return args.func(args)
    except ConfigErrors as exc:
        for path, message in exc.errors:
            print(f"config error: {path}: {message}", file=sys.stderr)
        return 2
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MatWheelError, RuntimeError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
