"""Command-line entry point: ``symnets {gen,train,ablation,eval,export-features}``.

Settings resolve as built-in defaults < ``--config`` JSON < explicit flags.
Every output directory receives ``config.json`` with the fully resolved run
settings, which is enough to reproduce the run.

Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .data import DatasetSpec, generate_pair, load_csv, save_csv, split_domains
from .evaluation import ExperimentSpec, accuracy, convergence_curves, export_features, run_ablation
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .seeding import SCHEME
from .training import METHODS, ScheduleConfig, TrainReport, train

log = logging.getLogger("symnets")

GEN_DEFAULTS = {f.name: f.default for f in fields(DatasetSpec)}


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _seeds(text: str) -> tuple[int, ...]:
    """``1..10`` (inclusive range) or ``1,4,7``."""
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split(".."))
            return tuple(range(lo, hi + 1))
        return _int_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")


def _methods(text: str) -> tuple[str, ...]:
    if text == "all":
        return METHODS
    out = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in out if m not in METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    return out


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset generation")
    g.add_argument("--task", choices=("two-moons", "blobs"))
    g.add_argument("--n", type=int, help="samples per domain")
    g.add_argument("--noise", dest="noise_std", type=float)
    g.add_argument("--rotation", dest="rotation_deg", type=float, help="target rotation in degrees")
    g.add_argument("--translation", type=_float_list)
    g.add_argument("--scale", type=float)
    g.add_argument("--shift-noise", dest="shift_noise_std", type=float)
    g.add_argument("--K", dest="num_categories", type=int, help="categories (blobs)")
    g.add_argument("--d", dest="dim", type=int, help="input dimension (blobs)")
    g.add_argument("--separation", type=float)


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", dest="total_epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--eta0", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--classifier-lr-multiplier", type=float)
    g.add_argument("--eval-every", type=int)
    g.add_argument("--fixed-lambda", type=float)
    g.add_argument("--classifier-loss-updates-g", action="store_const", const=True)
    g.add_argument("--hidden-dims", type=_int_list)
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--test-fraction", type=float)
    g.add_argument("--protocol", choices=("holdout", "transductive"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symnets", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate source/target dataset CSVs")
    _add_dataset_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train one method on a dataset pair")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--src", type=Path, required=True)
    p.add_argument("--tgt", type=Path, required=True)
    _add_training_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("ablation", help="run methods x seeds and aggregate")
    p.add_argument("--methods", type=_methods)
    p.add_argument("--seeds", type=_seeds)
    p.add_argument("--src", type=Path, help="fixed source CSV (otherwise generated per seed)")
    p.add_argument("--tgt", type=Path, help="fixed target CSV (otherwise generated per seed)")
    _add_dataset_flags(p)
    _add_training_flags(p)
    p.add_argument("--jobs", type=int)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on dataset CSVs")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("export-features", help="write feature-extractor outputs as CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    return parser


# -- config resolution ---------------------------------------------------------

SCHEDULE_KEYS = {f.name for f in fields(ScheduleConfig)}
DATASET_KEYS = {f.name for f in fields(DatasetSpec)}
TRAIN_DEFAULTS = {"method": "symnet", "seed": 0, "hidden_dims": (64, 64), "feature_dim": 32,
                  "batch_size": 64, "test_fraction": 0.3, "protocol": "holdout"}
ABLATION_DEFAULTS = {"methods": METHODS, "seeds": tuple(range(1, 11)), "jobs": 1}


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return raw


def resolve(args: argparse.Namespace, defaults: dict, allowed: set[str]) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    from_file = _load_config(getattr(args, "config", None))
    unknown = set(from_file) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg.update(from_file)
    for k in allowed:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _jsonable(d: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else str(v) if isinstance(v, Path) else v)
            for k, v in d.items()}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _schedule(cfg: dict) -> ScheduleConfig:
    kw = {k: cfg[k] for k in SCHEDULE_KEYS if k in cfg}
    if kw.get("classifier_loss_updates_g") is None:
        kw.pop("classifier_loss_updates_g", None)
    return ScheduleConfig(**kw)


def _dataset_spec(cfg: dict) -> DatasetSpec:
    return DatasetSpec(**{k: (tuple(v) if k == "translation" else v)
                          for k, v in cfg.items() if k in DATASET_KEYS})


# -- commands ------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = resolve(args, {**GEN_DEFAULTS, "seed": 0}, DATASET_KEYS | {"seed"})
    spec = _dataset_spec(cfg)
    src, tgt = generate_pair(spec, cfg["seed"])
    args.out.mkdir(parents=True, exist_ok=True)
    save_csv(src, args.out / "source.csv")
    save_csv(tgt, args.out / "target.csv")
    _write_json(args.out / "manifest.json",
                {**asdict(spec), "seed": cfg["seed"], "seed_scheme": SCHEME,
                 "files": ["source.csv", "target.csv"]})
    log.info("wrote %d source and %d target samples to %s", len(src), len(tgt), args.out)
    return 0


def _train_config(args) -> dict:
    allowed = SCHEDULE_KEYS | {"method", "seed", "hidden_dims", "feature_dim", "test_fraction", "protocol"}
    return resolve(args, {**asdict(ScheduleConfig()), **TRAIN_DEFAULTS}, allowed)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    schedule = _schedule(cfg)
    src = load_csv(args.src)
    tgt = load_csv(args.tgt)
    if src.num_categories != tgt.num_categories:
        raise ValueError(f"K mismatch: {args.src} has {src.num_categories} categories, "
                         f"{args.tgt} has {tgt.num_categories}")
    splits = split_domains(src, tgt, cfg["seed"], cfg["test_fraction"], cfg["protocol"])
    mc = ModelConfig(src.input_dim, src.num_categories, cfg["feature_dim"], tuple(cfg["hidden_dims"]))
    started = time.perf_counter()
    report, net = train(cfg["method"], schedule, splits.src_train, splits.tgt_train, cfg["seed"],
                        model_config=mc, src_test=splits.src_test, tgt_test=splits.tgt_test)
    log.info("trained %s in %.1fs", cfg["method"], time.perf_counter() - started)
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, args.out / "checkpoint.json")
    report.to_csv(args.out / "report.csv")
    _write_json(args.out / "config.json", {**cfg, "command": "train", "src": args.src,
                                           "tgt": args.tgt, "seed_scheme": SCHEME})
    if report.records:
        print(json.dumps({k: v for k, v in report.final.items() if k.startswith("acc_")}))
    return 0


def cmd_ablation(args) -> int:
    allowed = (SCHEDULE_KEYS | DATASET_KEYS | set(ABLATION_DEFAULTS)
               | {"hidden_dims", "feature_dim"})
    defaults = {**GEN_DEFAULTS, **asdict(ScheduleConfig()), **TRAIN_DEFAULTS, **ABLATION_DEFAULTS}
    defaults.pop("method")
    defaults.pop("seed")
    cfg = resolve(args, defaults, allowed)
    spec = ExperimentSpec(methods=tuple(cfg["methods"]), seeds=tuple(cfg["seeds"]),
                          dataset=_dataset_spec(cfg), schedule=_schedule(cfg),
                          hidden_dims=tuple(cfg["hidden_dims"]), feature_dim=cfg["feature_dim"])
    args.out.mkdir(parents=True, exist_ok=True)
    if (args.src is None) != (args.tgt is None):
        raise ValueError("--src and --tgt must be given together")
    if args.src is not None:
        table = _ablation_on_files(spec, load_csv(args.src), load_csv(args.tgt), args.out)
    else:
        table = run_ablation(spec, args.out, n_jobs=cfg["jobs"])
    reports = [TrainReport.from_csv(p, p.stem.rsplit("_seed", 1)[0])
               for p in sorted((args.out / "reports").glob("*.csv"))]
    if reports:
        try:
            convergence_curves(reports, args.out / "curves.csv")
        except ValueError as exc:
            log.warning("skipping curves: %s", exc)
    _write_json(args.out / "config.json", {**cfg, "command": "ablation", "src": args.src,
                                           "tgt": args.tgt, "seed_scheme": SCHEME})
    for row in table.aggregate():
        print(f"{row['method']:30s} {row['mean_tgt_acc']:.4f} +/- {row['stderr_tgt_acc']:.4f}")
    return 0


def _ablation_on_files(spec: ExperimentSpec, src, tgt, out: Path):
    from .evaluation import ResultTable, available_heads

    table = ResultTable()
    (out / "reports").mkdir(parents=True, exist_ok=True)
    mc = ModelConfig(src.input_dim, src.num_categories, spec.feature_dim, spec.hidden_dims)
    for method in spec.methods:
        for seed in spec.seeds:
            splits = split_domains(src, tgt, seed, spec.dataset.test_fraction, spec.dataset.protocol)
            report, _ = train(method, spec.schedule, splits.src_train, splits.tgt_train, seed,
                              model_config=mc, src_test=splits.src_test, tgt_test=splits.tgt_test)
            report.to_csv(out / "reports" / f"{method}_seed{seed}.csv")
            for head in available_heads(method):
                tag = head.lower()
                table.add(method, seed, head, report.final[f"acc_{tag}_src"], report.final[f"acc_{tag}_tgt"])
    table.write(out)
    return table


def cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    heads = [h for h in ("Cs", "Ct") if f"{h}.W" in net.params]
    results = {}
    for path in args.data:
        ds = load_csv(path, net.config.num_categories)
        results[str(path)] = {head: accuracy(net, ds, head) for head in heads}
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "eval.json", results)
    _write_json(args.out / "config.json", {"command": "eval", "checkpoint": args.checkpoint,
                                           "data": [str(p) for p in args.data]})
    print(json.dumps(results, indent=2))
    return 0


def cmd_export_features(args) -> int:
    net = load_checkpoint(args.checkpoint)
    ds = load_csv(args.data, net.config.num_categories)
    args.out.mkdir(parents=True, exist_ok=True)
    export_features(net, ds, args.out / "features.csv")
    _write_json(args.out / "config.json", {"command": "export-features",
                                           "checkpoint": args.checkpoint, "data": args.data})
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "ablation": cmd_ablation,
            "eval": cmd_eval, "export-features": cmd_export_features}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"symnets {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
