"""Accuracy, feature export, and the multi-seed ablation driver."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, DatasetSpec, generate_pair, split_domains
from .model import ModelConfig, SymNet, forward_features, predict
from .training import (
    BASELINE_VARIANTS, METHODS, ScheduleConfig, TrainReport, train,
)


def accuracy(net: SymNet, ds: Dataset, head: str = "Ct") -> float:
    """Fraction of rows whose arg-max category under ``head`` matches the label."""
    if not isinstance(ds, Dataset):
        raise ValueError("accuracy needs a labeled Dataset")
    if head not in ("Cs", "Ct"):
        raise ValueError(f"head must be 'Cs' or 'Ct', got {head!r}")
    return float(np.mean(predict(net, ds.inputs, head) == ds.labels))


def reported_head(method: str) -> str:
    """Classifier whose target accuracy represents ``method`` in result tables.

    Baselines have a single head (stored as Cs). Without the cross-domain task
    loss Ct never sees category labels, so that ablation is read off Cs.
    """
    if method in BASELINE_VARIANTS or method == "symnet_wo_Etask_t":
        return "Cs"
    return "Ct"


def available_heads(method: str) -> tuple[str, ...]:
    if method in BASELINE_VARIANTS or method == "symnet_wo_Etask_t":
        return ("Cs",)
    return ("Cs", "Ct")


@dataclass(frozen=True)
class ExperimentSpec:
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    dataset: DatasetSpec = DatasetSpec()
    schedule: ScheduleConfig = ScheduleConfig(batch_size=64)
    hidden_dims: tuple[int, ...] = (64, 64)
    feature_dim: int = 32

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.methods:
            raise ValueError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods: {unknown}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")


@dataclass
class ResultTable:
    rows: list[dict] = field(default_factory=list)

    def add(self, method: str, seed: int, head: str, src_acc: float, tgt_acc: float) -> None:
        self.rows.append({"method": method, "seed": seed, "head": head,
                          "src_acc": src_acc, "tgt_acc": tgt_acc})

    def target_accuracies(self, method: str) -> np.ndarray:
        head = reported_head(method)
        return np.array([r["tgt_acc"] for r in self.rows if r["method"] == method and r["head"] == head])

    def aggregate(self) -> list[dict]:
        """Mean target accuracy and its standard error across seeds, per method."""
        out = []
        for method in dict.fromkeys(r["method"] for r in self.rows):
            acc = self.target_accuracies(method)
            stderr = float(acc.std(ddof=1) / math.sqrt(acc.size)) if acc.size > 1 else float("nan")
            out.append({"method": method, "mean_tgt_acc": float(acc.mean()), "stderr_tgt_acc": stderr})
        return out

    def mean(self, method: str) -> float:
        return float(self.target_accuracies(method).mean())

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cells, agg = out_dir / "results.csv", out_dir / "aggregate.csv"
        _write_rows(cells, ("method", "seed", "head", "src_acc", "tgt_acc"), self.rows)
        _write_rows(agg, ("method", "mean_tgt_acc", "stderr_tgt_acc"), self.aggregate())
        return cells, agg


def _fmt(v) -> str:
    return format(v, ".17g") if isinstance(v, float) else str(v)


def _write_rows(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def run_cell(spec: ExperimentSpec, method: str, seed: int) -> tuple[TrainReport, SymNet]:
    """Generate the seed's data, split it, and train one method on it."""
    src, tgt = generate_pair(spec.dataset, seed)
    splits = split_domains(src, tgt, seed, spec.dataset.test_fraction, spec.dataset.protocol)
    mc = ModelConfig(src.input_dim, src.num_categories, spec.feature_dim, spec.hidden_dims)
    return train(method, spec.schedule, splits.src_train, splits.tgt_train, seed, model_config=mc,
                 src_test=splits.src_test, tgt_test=splits.tgt_test)


def run_ablation(spec: ExperimentSpec, out_dir=None, n_jobs: int = 1) -> ResultTable:
    """Train every (method, seed) cell and collect final accuracies.

    Cells are independent; ``n_jobs > 1`` runs them in worker processes with
    identical results. Raw reports go to ``out_dir/reports`` when given.
    """
    cells = [(m, s) for m in spec.methods for s in spec.seeds]
    if n_jobs == 1:
        outputs = [run_cell(spec, m, s) for m, s in cells]
    else:
        from joblib import Parallel, delayed

        outputs = Parallel(n_jobs=n_jobs)(delayed(run_cell)(spec, m, s) for m, s in cells)
    table = ResultTable()
    report_dir = None
    if out_dir is not None:
        report_dir = Path(out_dir) / "reports"
        report_dir.mkdir(parents=True, exist_ok=True)
    for (method, seed), (report, _) in zip(cells, outputs):
        final = report.final if report.records else {}
        for head in available_heads(method):
            tag = head.lower()
            table.add(method, seed, head, final.get(f"acc_{tag}_src", float("nan")),
                      final.get(f"acc_{tag}_tgt", float("nan")))
        if report_dir is not None:
            report.to_csv(report_dir / f"{method}_seed{seed}.csv")
    if out_dir is not None:
        table.write(out_dir)
    return table


def export_features(net: SymNet, ds: Dataset, path) -> Path:
    """Write G's outputs as ``f0..f{d-1},label,domain`` rows."""
    path = Path(path)
    feats = forward_features(net, ds.inputs)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{i}" for i in range(feats.shape[1])] + ["label", "domain"])
            for row, label in zip(feats, ds.labels):
                w.writerow([format(v, ".17g") for v in row] + [int(label), ds.domain])
    except OSError as exc:
        raise OSError(f"cannot write features to {path}: {exc}") from exc
    return path


CURVE_COLUMNS = ("method", "epoch", "p", "tgt_err_cs", "tgt_err_ct")


def convergence_curves(reports: Sequence[TrainReport], path=None) -> list[dict]:
    """Target-test error per checkpoint for each report (one row per checkpoint
    per report). ``tgt_err_cs`` / ``tgt_err_ct`` are the source- and target-
    classifier curves; single-head runs leave ``tgt_err_ct`` empty."""
    if not reports:
        raise ValueError("no reports given")
    grid = [r["epoch"] for r in reports[0].records]
    rows = []
    for rep in reports:
        if [r["epoch"] for r in rep.records] != grid:
            raise ValueError(f"report {rep.method!r} has a different checkpoint grid")
        for r in rep.records:
            rows.append({
                "method": rep.method, "epoch": r["epoch"], "p": r["p"],
                "tgt_err_cs": 1.0 - r["acc_cs_tgt"],
                "tgt_err_ct": 1.0 - r["acc_ct_tgt"] if "acc_ct_tgt" in r else "",
            })
    if path is not None:
        _write_rows(Path(path), CURVE_COLUMNS, rows)
    return rows
