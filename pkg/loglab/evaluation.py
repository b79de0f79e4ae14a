#!/usr/bin/env python3

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

from sklearn.metrics import confusion_matrix

from loglab.errors import EvaluationError
from loglab.ingest import LogMessage, Truth

#
# Created: Oct 2026
# License: Apache license
#

logger = logging.getLogger(__name__)

LABELS = [Truth.NORMAL.value, Truth.ABNORMAL.value]


@dataclass(frozen=True)
class ConfusionCounts:
    # Abnormal is the positive class
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EvaluationReport:
    counts: ConfusionCounts
    precision: float
    recall: float
    f1: float
    # names of the metrics whose denominator was zero (reported as 0)
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            **asdict(self.counts),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "flags": list(self.flags),
        }


def _safe_ratio(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(f"{name}_zero_division")
        return 0.0
    return num / den


def evaluate_labels(truth: list[Truth], predicted: list[Truth]) -> EvaluationReport:
    if len(truth) != len(predicted):
        raise EvaluationError(f"Mismatched line sets: {len(truth)} truths vs {len(predicted)} predictions")
    if not truth:
        raise EvaluationError("Nothing to evaluate")
    if any(t is None for t in truth) or any(p is None for p in predicted):
        raise EvaluationError("Every evaluated line needs both a ground-truth and a predicted label")

    tn, fp, fn, tp = (
        int(c)
        for c in confusion_matrix(
            [Truth(t).value for t in truth], [Truth(p).value for p in predicted], labels=LABELS
        ).ravel()
    )
    flags = []
    precision = _safe_ratio(tp, tp + fp, "precision", flags)
    recall = _safe_ratio(tp, tp + fn, "recall", flags)
    f1 = _safe_ratio(2 * precision * recall, precision + recall, "f1", flags)
    report = EvaluationReport(ConfusionCounts(tp, fp, tn, fn), precision, recall, f1, tuple(flags))
    logger.info(f"precision={precision:.4f} recall={recall:.4f} f1={f1:.4f} (tp={tp} fp={fp} tn={tn} fn={fn})")
    return report


def read_scores(path: str) -> dict[int, Truth]:
    """Reads a score export ('index,z_norm,label') into {line index: assigned label}."""
    labels = {}
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                try:
                    labels[int(row["index"])] = Truth(row["label"])
                except (KeyError, TypeError, ValueError):
                    raise EvaluationError(f"Invalid score record in {path}: {row}")
    except FileNotFoundError:
        raise EvaluationError(f"Score file '{path}' not found")
    return labels


def evaluate_against_corpus(corpus: list[LogMessage], predicted: dict[int, Truth]) -> EvaluationReport:
    indices = [m.index for m in corpus]
    if set(indices) != set(predicted):
        raise EvaluationError(
            f"The scored lines ({len(predicted)}) and the corpus lines ({len(indices)}) are not the same set"
        )
    return evaluate_labels([m.truth for m in corpus], [predicted[i] for i in indices])


def write_metrics(report: EvaluationReport, path: str, provenance: dict | None = None, extra: dict | None = None):
    document = report.to_dict()
    if extra:
        document.update(extra)
    if provenance is not None:
        document = {"provenance": provenance, **document}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2)
        fh.write("\n")
