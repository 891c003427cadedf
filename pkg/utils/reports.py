import csv
import logging
import os
from typing import Dict, List, Sequence

from utils.metrics import PerClassMetrics
from utils.model import CLASS_NAMES
from utils.trainer import AblationTable, OrderingReport

METRICS_COLUMNS = ["variant", "class", "precision", "recall", "f1"]
GRID_COLUMNS = ["scheme", "alpha", "beta", "class", "f1"]
BEST_COLUMNS = ["scheme", "best_alpha", "macro_f1"]
ORDERING_COLUMNS = ["seed", "variant", "macro_f1"]
TABLE1_COLUMNS = ["variant"] + [f"{name}_{q}" for name in CLASS_NAMES for q in ("p", "r")]


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _write_rows(path: str, header: List[str], rows: Sequence[Sequence[str]]):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logging.info(f"Wrote {len(rows)} rows to {path}")


def metrics_rows(variant: str, metrics: PerClassMetrics) -> List[List[str]]:
    rows = [
        [variant, name, _fmt(metrics.precision[name]), _fmt(metrics.recall[name]), _fmt(metrics.f1[name])]
        for name in CLASS_NAMES
    ]
    rows.append(
        [variant, "macro", _fmt(metrics.macro_precision), _fmt(metrics.macro_recall), _fmt(metrics.macro_f1)]
    )
    return rows


def write_metrics_tsv(path: str, results: Dict[str, PerClassMetrics]):
    """Long form: one row per (variant, class) plus a macro row per variant."""
    rows = []
    for variant, metrics in results.items():
        rows.extend(metrics_rows(variant, metrics))
    _write_rows(path, METRICS_COLUMNS, rows)


def write_table1_tsv(path: str, results: Dict[str, PerClassMetrics]):
    """Wide form: rows are variants, column pairs are precision/recall per class."""
    rows = []
    for variant, metrics in results.items():
        row = [variant]
        for name in CLASS_NAMES:
            row += [_fmt(metrics.precision[name]), _fmt(metrics.recall[name])]
        rows.append(row)
    _write_rows(path, TABLE1_COLUMNS, rows)


def write_confusion_tsv(path: str, metrics: PerClassMetrics):
    rows = [[name] + [str(int(c)) for c in metrics.confusion[k]] for k, name in enumerate(CLASS_NAMES)]
    _write_rows(path, ["true\\predicted"] + list(CLASS_NAMES), rows)


def write_grid_tsv(path: str, table: AblationTable):
    rows = []
    for cell in table.cells:
        for name in CLASS_NAMES:
            rows.append([cell.scheme, _fmt(cell.alpha), _fmt(cell.beta), name, _fmt(cell.f1[name])])
        rows.append([cell.scheme, _fmt(cell.alpha), _fmt(cell.beta), "macro", _fmt(cell.macro_f1)])
    _write_rows(path, GRID_COLUMNS, rows)


def write_best_tsv(path: str, table: AblationTable):
    rows = []
    for scheme in table.schemes:
        alpha = table.best_alpha(scheme)
        cell = next(c for c in table.cells if c.scheme == scheme and c.alpha == alpha)
        rows.append([scheme, _fmt(alpha), _fmt(cell.macro_f1)])
    _write_rows(path, BEST_COLUMNS, rows)


def write_ordering_tsv(path: str, report: OrderingReport):
    """Per-seed macro F1 rows, then one "mean" row per variant."""
    rows = [[str(r.seed), r.variant, _fmt(r.macro_f1)] for r in report.runs]
    for variant in dict.fromkeys(r.variant for r in report.runs):
        rows.append(["mean", variant, _fmt(report.mean_f1(variant))])
    _write_rows(path, ORDERING_COLUMNS, rows)


def write_loss_curve(path: str, losses: Sequence[float]):
    _write_rows(path, ["epoch", "loss"], [[str(i), _fmt(loss)] for i, loss in enumerate(losses, start=1)])


def read_tsv(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f, delimiter="\t"))
