"""Cell-level confusion counts, precision/recall/F1 and scene-level accuracy.

``G`` is the ground-truth grid and ``M`` the binarized reconstruction::

    TP = |G1 & M1|   TN = |G0 & M0|   FP = |G0 & M1|   FN = |G1 & M0|

For synthetic scenarios the ground truth is the source grid before injection,
so a model scores well by reproducing normal objects and dropping the
injected ones.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .detection import AnomalyReport, binarize, check_threshold
from .errors import ShapeError
from .grid import GridVector, linear_index
from .nn import DISPLAY_NAMES, Network, reconstruct_batch

MODEL_ORDER = tuple(DISPLAY_NAMES.values())
TABLE_HEADER = "| Model | Precision | Recall | F1-score |"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricRow:
    model_name: str
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


def confusion(ground, model_out) -> ConfusionCounts:
    g = np.asarray(getattr(ground, "bits", ground)).astype(bool)
    m = np.asarray(getattr(model_out, "bits", model_out)).astype(bool)
    if isinstance(ground, GridVector) and isinstance(model_out, GridVector):
        if not ground.spec.same_layout(model_out.spec):
            raise ShapeError("ground truth and model output use different grid specs")
    if g.shape != m.shape:
        raise ShapeError(f"shapes differ: {g.shape} vs {m.shape}")
    tp = int(np.count_nonzero(g & m))
    fp = int(np.count_nonzero(~g & m))
    fn = int(np.count_nonzero(g & ~m))
    return ConfusionCounts(tp, g.size - tp - fp - fn, fp, fn)


def metrics(counts: ConfusionCounts, model_name: str = "") -> MetricRow:
    """Precision, recall and their harmonic mean; zero denominators give 0 and ``degenerate``."""
    degenerate = False
    if counts.tp + counts.fp:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision, degenerate = 0.0, True
    if counts.tp + counts.fn:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall, degenerate = 0.0, True
    row = metrics_from_pr(precision, recall, model_name)
    return MetricRow(model_name, precision, recall, row.f1, degenerate or row.degenerate)


def metrics_from_pr(precision: float, recall: float, model_name: str = "") -> MetricRow:
    """Score a published (precision, recall) pair with the same F1 formula."""
    if precision + recall <= 0:
        return MetricRow(model_name, precision, recall, 0.0, True)
    return MetricRow(model_name, precision, recall, 2.0 * precision * recall / (precision + recall))


def f1_from(precision: float, recall: float) -> float:
    return metrics_from_pr(precision, recall).f1


def scenario_grids(net: Network, test_set, threshold: float):
    """Ground-truth and binarized-output bit matrices for a scenario test set."""
    if not test_set:
        raise ValueError("evaluation needs a nonempty test set")
    threshold = check_threshold(threshold)
    X = np.stack([s.grid.bits for s, _ in test_set]).astype(np.float64)
    G = np.stack([s.gps for s, _ in test_set]) if net.config.use_gps else None
    ground = np.stack([res.source_grid().bits for _, res in test_set])
    M = binarize(reconstruct_batch(net, X, G), threshold)
    return ground, M


def evaluate_scenario(net: Network, test_set, threshold: float = 0.5, model_name: str = "",
                      average: str = "micro") -> tuple[ConfusionCounts, MetricRow]:
    """Aggregate counts over the test set and score them.

    ``average="micro"`` sums counts before dividing; ``"macro"`` averages the
    per-sample precision, recall and F1 instead (counts are still summed).
    """
    ground, M = scenario_grids(net, test_set, threshold)
    per_sample = [confusion(g, m) for g, m in zip(ground, M)]
    total = sum(per_sample, ConfusionCounts())
    if average == "micro":
        return total, metrics(total, model_name)
    if average != "macro":
        raise ValueError(f"average must be 'micro' or 'macro', got {average!r}")
    rows = [metrics(c) for c in per_sample]
    return total, MetricRow(
        model_name,
        float(np.mean([r.precision for r in rows])),
        float(np.mean([r.recall for r in rows])),
        float(np.mean([r.f1 for r in rows])),
        any(r.degenerate for r in rows),
    )


def _injected_indices(res):
    return {linear_index(c, res.grid.spec) for c in res.injected}


def _flagged_indices(report: AnomalyReport):
    return {linear_index(c, report.input.spec) for c in report.anomalous_cells}


def detection_accuracy(reports: Sequence[AnomalyReport], injected: Sequence, lax: bool = False) -> float:
    """Share of scenes whose flagged cells equal the injected cells exactly.

    With ``lax=True`` a scene counts when every injected cell is flagged,
    extra flags allowed.
    """
    if len(reports) != len(injected):
        raise ValueError(f"{len(reports)} reports but {len(injected)} injection results")
    if not reports:
        raise ValueError("detection_accuracy needs at least one report")
    hits = 0
    for rep, res in zip(reports, injected):
        flagged, truth = _flagged_indices(rep), _injected_indices(res)
        hits += truth <= flagged if lax else flagged == truth
    return hits / len(reports)


# -- tables ---------------------------------------------------------------------

def _order(rows: Sequence[MetricRow]) -> list[MetricRow]:
    rank = {name: i for i, name in enumerate(MODEL_ORDER)}
    return sorted(rows, key=lambda r: (rank.get(r.model_name, len(rank)), r.model_name))


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def write_metric_csv(path, rows: Sequence[MetricRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "precision", "recall", "f1"])
        for r in _order(rows):
            writer.writerow([r.model_name, _fmt(r.precision), _fmt(r.recall), _fmt(r.f1)])


def read_metric_csv(path) -> list[MetricRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [MetricRow(r["model"], float(r["precision"]), float(r["recall"]), float(r["f1"]))
                for r in csv.DictReader(fh)]


def metric_markdown(rows: Sequence[MetricRow], title: str = "") -> str:
    lines = [f"**{title}**", ""] if title else []
    lines += [TABLE_HEADER, "|---|---|---|---|"]
    lines += [f"| {r.model_name} | {_fmt(r.precision)} | {_fmt(r.recall)} | {_fmt(r.f1)} |" for r in _order(rows)]
    return "\n".join(lines) + "\n"


def accuracy_markdown(accuracy: Mapping[int, Mapping[str, float]], title: str = "") -> str:
    scenarios = sorted(accuracy)
    models = _order([MetricRow(m, 0, 0, 0) for m in {m for s in scenarios for m in accuracy[s]}])
    lines = [f"**{title}**", ""] if title else []
    lines.append("| Model | " + " | ".join(f"Scenario {s}" for s in scenarios) + " |")
    lines.append("|---|" + "---|" * len(scenarios))
    for m in models:
        cells = [_fmt(accuracy[s][m.model_name]) if m.model_name in accuracy[s] else "n/a" for s in scenarios]
        lines.append(f"| {m.model_name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_accuracy_csv(path, accuracy: Mapping[int, Mapping[str, float]]) -> None:
    scenarios = sorted(accuracy)
    models = _order([MetricRow(m, 0, 0, 0) for m in {m for s in scenarios for m in accuracy[s]}])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + [f"scenario_{s}" for s in scenarios])
        for m in models:
            writer.writerow([m.model_name] + [_fmt(accuracy[s][m.model_name]) if m.model_name in accuracy[s] else ""
                                              for s in scenarios])


def emit_tables(rows: Mapping[int, Sequence[MetricRow]], accuracy: Mapping[int, Mapping[str, float]] | None,
                out_dir, lax_accuracy: Mapping[int, Mapping[str, float]] | None = None) -> list[Path]:
    """Write ``scenario_<k>.csv/.md`` per scenario plus the accuracy tables."""
    if not rows or not any(rows.values()):
        raise ValueError("emit_tables needs at least one metric row")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for scenario in sorted(rows):
        csv_path, md_path = out_dir / f"scenario_{scenario}.csv", out_dir / f"scenario_{scenario}.md"
        write_metric_csv(csv_path, rows[scenario])
        md_path.write_text(metric_markdown(rows[scenario], f"Scenario {scenario} performances"), encoding="utf-8")
        written += [csv_path, md_path]
    for name, table, title in (("accuracy", accuracy, "Anomaly detection accuracy (exact match)"),
                               ("accuracy_lax", lax_accuracy, "Anomaly detection accuracy (lax: all injected flagged)")):
        if table:
            write_accuracy_csv(out_dir / f"{name}.csv", table)
            (out_dir / f"{name}.md").write_text(accuracy_markdown(table, title), encoding="utf-8")
            written += [out_dir / f"{name}.csv", out_dir / f"{name}.md"]
    return written


def metrics_json(payload: dict) -> str:
    """Canonical JSON (sorted keys, fixed separators) so reruns are byte-identical."""
    return json.dumps(payload, sort_keys=True, indent=1, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, (ConfusionCounts, MetricRow)):
        return asdict(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
