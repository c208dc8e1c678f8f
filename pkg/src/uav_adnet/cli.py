"""Command line entry point: ``uav-adnet <subcommand> ...``.

Subcommands mirror the pipeline stages (``ingest``, ``synth``, ``train``,
``detect``, ``eval``) plus ``reproduce``, which runs all of them from one
experiment file. Exit statuses: 0 success, 1 usage, 2 validation, 3 numeric
failure. Failures print a JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import RunConfig
from .detection import DEFAULT_THRESHOLD, SWEEP_THRESHOLDS, check_threshold, detect_many
from .errors import AdNetError, ConfigError, UsageError
from .evaluation import MetricRow, detection_accuracy, emit_tables, evaluate_scenario, metrics_json
from .grid import GridSpec
from .ingest import (DEFAULT_MAX_GAP_MS, DEFAULT_RATIOS, build_samples, dataset_paths, load_dataset, parse_annotations,
                     parse_flight_log, save_dataset, split)
from .nn import DISPLAY_NAMES, VARIANTS, load_network, save_network
from .synth import SyntheticWorld, default_rules, generate_test_set, load_rules, load_synthetic, save_synthetic
from .training import TrainState, export_curve, fit_network, read_curve

logger = logging.getLogger("uav_adnet")

SPLITS = ("train", "val", "test")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _grid_args(p):
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--cols", type=int, default=8)
    p.add_argument("--frame-width", type=int, default=1920)
    p.add_argument("--frame-height", type=int, default=1080)


def _spec(args) -> GridSpec:
    return GridSpec(args.rows, args.cols, frame_width_px=args.frame_width, frame_height_px=args.frame_height)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _require_container(stem, what):
    for path in dataset_paths(stem):
        if not path.is_file():
            raise UsageError(f"{what} split not found: {path}")


# -- ingest -----------------------------------------------------------------------

def _validation_report(args, spec):
    errors = []
    frames = parse_annotations(args.annotations, errors=errors)
    report = {"annotation_errors": [e.to_dict() for e in errors], "frames": len(frames)}
    try:
        flight = parse_flight_log(args.flight_log)
        report["flight_records"] = len(flight)
        if frames and not errors:
            samples, _, _ = build_samples(frames, flight, spec, max_gap_ms=args.max_gap_ms)
            report["samples"] = len(samples)
    except AdNetError as exc:
        report["flight_error"] = exc.to_dict()
    report["valid"] = not errors and "flight_error" not in report
    return report


def cmd_ingest(args) -> int:
    spec = _spec(args)
    if args.validate_only:
        report = _validation_report(args, spec)
        _emit(report)
        return 0 if report["valid"] else 2
    frames = parse_annotations(args.annotations)
    flight = parse_flight_log(args.flight_log)
    samples, _, bounds = build_samples(frames, flight, spec, max_gap_ms=args.max_gap_ms)
    parts = split(samples, args.split, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLITS, parts):
        save_dataset(out / name, part, spec)
    sidecar = {
        "grid": list(spec.shape),
        "frame": [spec.frame_width_px, spec.frame_height_px],
        "gps_bounds": bounds.to_dict(),
        "split": list(args.split),
        "seed": args.seed,
        "counts": {name: len(part) for name, part in zip(SPLITS, parts)},
    }
    (out / "dataset.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _emit({"out": str(out), **sidecar["counts"]})
    return 0


# -- synth ------------------------------------------------------------------------

def _rules(path, spec):
    return default_rules(spec) if path in (None, "default") else load_rules(path, spec)


def cmd_synth(args) -> int:
    spec, samples = load_dataset(args.dataset)
    pairs = generate_test_set(samples, args.scenario, args.per_source, _rules(args.rules, spec),
                              seed=args.seed, count=args.count)
    save_synthetic(args.out, pairs, spec)
    _emit({"out": str(args.out), "samples": len(pairs), "injected": sum(len(r.injected) for _, r in pairs)})
    return 0


# -- train ------------------------------------------------------------------------

def _train_inputs(args):
    if args.dataset:
        train_stem, val_stem = Path(args.dataset) / "train", Path(args.dataset) / "val"
    else:
        train_stem, val_stem = args.train, args.val
    if train_stem is None or val_stem is None:
        raise UsageError("train needs --dataset DIR or both --train and --val")
    _require_container(train_stem, "train")
    _require_container(val_stem, "val")
    spec, train = load_dataset(train_stem)
    _, val = load_dataset(val_stem, spec)
    return spec, train, val


def _train_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    flags = {
        "model.hidden_sizes": args.hidden, "model.latent_dim": args.latent, "model.kl_weight": args.kl_weight,
        "train.epochs_max": args.epochs, "train.batch_size": args.batch_size,
        "train.learning_rate": args.lr, "train.patience": args.patience, "seed": args.seed,
    }
    cfg.values.update({k: v for k, v in flags.items() if v is not None})
    return cfg


def _model_extra(spec, variant, curve):
    return {"kind": "model", "variant": variant, "grid": list(spec.shape), "epochs": len(curve)}


def cmd_train(args) -> int:
    spec, train, val = _train_inputs(args)
    cfg = _train_config(args)
    model_cfg = cfg.model_config(args.model, spec.length)
    opts = cfg.train_options()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = None
    if args.resume:
        resume_path = out / "state.ckpt" if args.resume is True else Path(args.resume)
        state = TrainState.load(resume_path, opts)
    state = fit_network(train, val, model_cfg, opts, state)
    save_network(out / "model.ckpt", state.best, _model_extra(spec, args.model, state.curve))
    state.save(out / "state.ckpt", opts)
    export_curve(state.curve, out / "loss.csv")
    (out / "config.txt").write_text(cfg.to_text() + f"# model: {args.model}\n", encoding="utf-8")
    _emit({"out": str(out), "epochs": len(state.curve), "best_val": state.best_val, "stopped_early": state.stopped})
    return 0


# -- detect -----------------------------------------------------------------------

def _load_model(path, spec: GridSpec):
    net, extra, _ = load_network(path)
    shape = extra.get("grid")
    if net.config.grid_len != spec.length or (shape is not None and tuple(shape) != spec.shape):
        raise ConfigError(f"{path} was trained on grid {tuple(shape) if shape else net.config.grid_len}, "
                          f"data uses {spec.shape}")
    return net, extra


def cmd_detect(args) -> int:
    spec, samples = load_dataset(args.dataset)
    net, _ = _load_model(args.checkpoint, spec)
    reports = detect_many(net, samples, check_threshold(args.threshold))
    lines = [r.to_json() + "\n" for r in reports]
    if args.out:
        Path(args.out).write_text("".join(lines), encoding="utf-8")
    else:
        sys.stdout.writelines(lines)
    logger.info("%d of %d scenes flagged", sum(r.scene_anomalous for r in reports), len(reports))
    return 0


# -- eval -------------------------------------------------------------------------

def _model_name(net, extra):
    return DISPLAY_NAMES.get(extra.get("variant") or net.config.variant, net.config.variant)


def evaluate_models(models, test_sets, thresholds, average="micro"):
    """Score every (model, scenario, threshold) combination.

    ``models`` is a list of ``(display name, network)``; ``test_sets`` maps a
    scenario number to its injected pairs. Returns a JSON-ready dict keyed by
    threshold, then scenario, then model.
    """
    results = {}
    for t in thresholds:
        by_scenario = {}
        for scenario, pairs in sorted(test_sets.items()):
            rows = {}
            for name, net in models:
                counts, row = evaluate_scenario(net, pairs, t, name, average)
                reports = detect_many(net, [s for s, _ in pairs], t)
                injected = [r for _, r in pairs]
                rows[name] = {
                    "counts": counts, "precision": row.precision, "recall": row.recall, "f1": row.f1,
                    "degenerate": row.degenerate,
                    "accuracy": detection_accuracy(reports, injected),
                    "accuracy_lax": detection_accuracy(reports, injected, lax=True),
                }
            by_scenario[str(scenario)] = rows
        results[f"{t:.2f}"] = by_scenario
    return results


def write_result_tables(results, out_dir) -> None:
    out_dir = Path(out_dir)
    for key, by_scenario in results.items():
        target = out_dir / f"threshold_{key}" if len(results) > 1 else out_dir
        rows = {int(s): [MetricRow(m, r["precision"], r["recall"], r["f1"], r["degenerate"]) for m, r in ms.items()]
                for s, ms in by_scenario.items()}
        acc = {int(s): {m: r["accuracy"] for m, r in ms.items()} for s, ms in by_scenario.items()}
        lax = {int(s): {m: r["accuracy_lax"] for m, r in ms.items()} for s, ms in by_scenario.items()}
        emit_tables(rows, acc, target, lax)


def _thresholds(values, sweep):
    if sweep:
        return SWEEP_THRESHOLDS
    return tuple(check_threshold(t) for t in (values or (DEFAULT_THRESHOLD,)))


def cmd_eval(args) -> int:
    test_sets = {}
    spec = None
    for stem in args.test:
        pairs = load_synthetic(stem, spec)
        spec = pairs[0][0].grid.spec
        scenario = pairs[0][1].scenario
        if scenario in test_sets:
            raise UsageError(f"two test sets for scenario {scenario}")
        test_sets[scenario] = pairs
    models = []
    for path in args.checkpoint:
        net, extra = _load_model(path, spec)
        models.append((_model_name(net, extra), net))
    names = [n for n, _ in models]
    if len(set(names)) != len(names):
        raise UsageError("each checkpoint must be a different model variant")
    results = evaluate_models(models, test_sets, _thresholds(args.threshold, args.sweep), args.average)
    out = Path(args.out)
    write_result_tables(results, out)
    (out / "metrics.json").write_text(metrics_json({"average": args.average, "results": results}), encoding="utf-8")
    _emit({"out": str(out), "thresholds": list(results)})
    return 0


# -- reproduce ----------------------------------------------------------------------

DATA_KEYS = ("seed", "grid.rows", "grid.cols", "grid.frame_width", "grid.frame_height", "data.source",
             "data.annotations", "data.flight_log", "data.split", "data.max_gap_ms",
             "world.train", "world.val", "world.test")
SYNTH_KEYS = DATA_KEYS + ("synth.rules", "synth.scenarios", "synth.per_source", "synth.count")
TRAIN_KEYS = DATA_KEYS + ("model.hidden_sizes", "model.latent_dim", "model.kl_weight", "train.epochs_max",
                          "train.batch_size", "train.learning_rate", "train.patience")


def _stage_done(marker: Path, digest: str) -> bool:
    return marker.is_file() and marker.read_text(encoding="utf-8").strip() == digest


def _mark(marker: Path, digest: str) -> None:
    marker.write_text(digest + "\n", encoding="utf-8")


def _stage_data(cfg: RunConfig, out: Path) -> None:
    spec = cfg.grid_spec()
    digest = cfg.digest(DATA_KEYS)
    if _stage_done(out / ".done", digest):
        logger.info("data: cached")
        return
    out.mkdir(parents=True, exist_ok=True)
    if cfg["data.source"] == "world":
        world = SyntheticWorld(spec)
        parts = [world.samples(cfg[f"world.{name}"], [cfg["seed"], k], prefix=f"{name}_")
                 for k, name in enumerate(SPLITS, start=1)]
    else:
        frames = parse_annotations(cfg.resolve(cfg["data.annotations"]))
        flight = parse_flight_log(cfg.resolve(cfg["data.flight_log"]))
        samples, _, _ = build_samples(frames, flight, spec, max_gap_ms=cfg["data.max_gap_ms"])
        parts = split(samples, cfg["data.split"], seed=cfg["seed"])
    for name, part in zip(SPLITS, parts):
        if not part:
            raise ConfigError(f"the {name} split is empty")
        save_dataset(out / name, part, spec)
    _mark(out / ".done", digest)


def _stage_synth(cfg: RunConfig, data_dir: Path, out: Path) -> None:
    digest = cfg.digest(SYNTH_KEYS)
    if _stage_done(out / ".done", digest):
        logger.info("synth: cached")
        return
    out.mkdir(parents=True, exist_ok=True)
    spec, test = load_dataset(data_dir / "test")
    rules_key = cfg["synth.rules"]
    rules = _rules("default" if rules_key == "default" else cfg.resolve(rules_key), spec)
    for scenario in cfg["synth.scenarios"]:
        pairs = generate_test_set(test, scenario, cfg["synth.per_source"], rules,
                                  seed=cfg["seed"] * 10 + scenario, count=cfg["synth.count"])
        save_synthetic(out / f"scenario_{scenario}", pairs, spec)
    _mark(out / ".done", digest)


def _train_job(job):
    """Worker entry point; must stay importable at module level for process pools."""
    variant, values, data_dir, out_dir = job
    cfg = RunConfig(values=values)
    spec, train = load_dataset(Path(data_dir) / "train")
    _, val = load_dataset(Path(data_dir) / "val", spec)
    model_cfg = cfg.model_config(variant, spec.length)
    opts = cfg.train_options()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = fit_network(train, val, model_cfg, opts)
    save_network(out / "model.ckpt", state.best, _model_extra(spec, variant, state.curve))
    export_curve(state.curve, out / "loss.csv")
    return variant


def _stage_train(cfg: RunConfig, data_dir: Path, out: Path, jobs: int) -> None:
    todo = []
    for variant in cfg["model.variants"]:
        vdir = out / variant
        digest = cfg.digest(TRAIN_KEYS) + f" {variant}"
        if _stage_done(vdir / ".done", digest):
            logger.info("train %s: cached", variant)
            continue
        todo.append((variant, dict(cfg.values), str(data_dir), str(vdir)))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(todo))) as pool:
            finished = list(pool.map(_train_job, todo))
    else:
        finished = [_train_job(job) for job in todo]
    for variant in finished:
        _mark(out / variant / ".done", cfg.digest(TRAIN_KEYS) + f" {variant}")


def _training_summary(model_dir: Path, variant: str) -> dict:
    curve = read_curve(model_dir / variant / "loss.csv")
    best = min(curve, key=lambda p: (p.e_val, p.epoch))
    return {"epochs": len(curve), "best_epoch": best.epoch, "best_e_val": best.e_val,
            "e_train_first": curve[0].e_train, "e_train_last": curve[-1].e_train}


def cmd_reproduce(args) -> int:
    cfg = RunConfig.from_file(args.config, args.set).validate()
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    data_dir, synth_dir, model_dir = out / "data", out / "synth", out / "models"
    _stage_data(cfg, data_dir)
    _stage_synth(cfg, data_dir, synth_dir)
    _stage_train(cfg, data_dir, model_dir, args.jobs)

    spec = cfg.grid_spec()
    test_sets = {s: load_synthetic(synth_dir / f"scenario_{s}", spec) for s in cfg["synth.scenarios"]}
    models = []
    for variant in cfg["model.variants"]:
        net, extra = _load_model(model_dir / variant / "model.ckpt", spec)
        models.append((_model_name(net, extra), net))
    results = evaluate_models(models, test_sets, _thresholds(cfg["eval.thresholds"], cfg["eval.sweep"]),
                              cfg["eval.average"])
    write_result_tables(results, out / "tables")
    payload = {
        "config": cfg.as_dict(),
        "results": results,
        "training": {v: _training_summary(model_dir, v) for v in cfg["model.variants"]},
    }
    (out / "metrics.json").write_text(metrics_json(payload), encoding="utf-8")
    _emit({"out": str(out), "metrics": str(out / "metrics.json")})
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uav-adnet", description=__doc__.split("\n", 1)[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="annotations + flight log -> train/val/test grid containers")
    p.add_argument("--annotations", required=True)
    p.add_argument("--flight-log", required=True)
    p.add_argument("--out")
    _grid_args(p)
    p.add_argument("--max-gap-ms", type=float, default=DEFAULT_MAX_GAP_MS)
    p.add_argument("--split", type=_floats, default=DEFAULT_RATIOS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--validate-only", action="store_true", help="check inputs and print a report; write nothing")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="inject scenario anomalies into a dataset split")
    p.add_argument("--dataset", required=True, help="container stem, e.g. out/test")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--rules", default="default", help="rule JSON file (default: bundled rule set)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-source", type=int, default=1)
    p.add_argument("--count", type=int, default=1, help="injected cells per scene")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--dataset", help="directory holding train and val containers")
    p.add_argument("--train")
    p.add_argument("--val")
    p.add_argument("--model", choices=tuple(VARIANTS), default="uav-adnet")
    p.add_argument("--config", help="experiment file supplying model.* and train.* values")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=_ints)
    p.add_argument("--latent", type=int)
    p.add_argument("--kl-weight", type=float)
    p.add_argument("--resume", nargs="?", const=True, default=None,
                   help="continue from a training state (default: <out>/state.ckpt)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="write one anomaly report per scene as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="metric and accuracy tables for checkpoints on scenario test sets")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--test", nargs="+", required=True, help="synthetic set stems (one per scenario)")
    p.add_argument("--threshold", type=float, nargs="+")
    p.add_argument("--sweep", action="store_true", help="evaluate thresholds 0.1..0.9")
    p.add_argument("--average", choices=("micro", "macro"), default="micro")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reproduce", help="run the whole experiment described by an experiment file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for training (1 = reference mode)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override an experiment key")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "ingest" and not args.validate_only and not args.out:
            raise UsageError("ingest needs --out unless --validate-only is given")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
        return args.func(args)
    except AdNetError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                     "path": exc.filename}, sort_keys=True) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
