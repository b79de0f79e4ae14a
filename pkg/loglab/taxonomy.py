#!/usr/bin/env python3

import csv
import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from loglab.constants import TaxonomyDefaults
from loglab.errors import TaxonomyError
from loglab.ingest import LogMessage, Truth
from loglab.parse import WILDCARD, AttributeSet, ContextKey, ParsedCorpus, build_context

#
# Created: Oct 2026
# License: Apache license
#

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledSplit:
    # positions of the lines in the corpus
    normal: frozenset[int]
    abnormal: frozenset[int]

    def __post_init__(self):
        if self.normal & self.abnormal:
            raise TaxonomyError("Normal and abnormal line sets overlap")

    def __len__(self):
        return len(self.normal) + len(self.abnormal)


def split_from_truth(messages: list[LogMessage]) -> LabeledSplit:
    normal, abnormal = set(), set()
    for pos, m in enumerate(messages):
        if m.truth is None:
            raise TaxonomyError(f"Line {m.index} has no ground-truth label")
        (abnormal if m.truth == Truth.ABNORMAL else normal).add(pos)
    return LabeledSplit(frozenset(normal), frozenset(abnormal))


@dataclass(frozen=True)
class AnomalyScores:
    origin: int
    alpha: float
    beta: float
    gamma: float

    def score_of(self, anomaly_type: str) -> float:
        return {"template": self.alpha, "attribute": self.beta, "contextual": self.gamma}[anomaly_type]


@dataclass(frozen=True)
class TaxonomyReport:
    threshold: float
    n_abnormal: int
    # abnormal lines qualifying for each type; types overlap
    counts: dict = field(default_factory=dict)
    unclassified: tuple[int, ...] = ()

    @property
    def empty(self) -> bool:
        return self.n_abnormal == 0

    @property
    def flags(self) -> tuple[str, ...]:
        return ("percentage_zero_division",) if self.empty else ()

    def percentage(self, anomaly_type: str) -> float:
        if self.empty:
            return 0.0
        if anomaly_type == "unclassified":
            return 100.0 * len(self.unclassified) / self.n_abnormal
        return 100.0 * self.counts[anomaly_type] / self.n_abnormal

    def rows(self) -> list[tuple[float, str, int, float]]:
        rows = [(self.threshold, t, self.counts[t], self.percentage(t)) for t in TaxonomyDefaults.TYPES]
        rows.append((self.threshold, "unclassified", len(self.unclassified), self.percentage("unclassified")))
        return rows


def _ratio(counts: list[int]) -> float:
    abnormal, normal = counts
    return abnormal / (abnormal + normal)


# =======================================================================================================
# AnomalyScorer
# =======================================================================================================


class AnomalyScorer:
    """
    Computes the template (alpha), attribute (beta) and contextual (gamma) anomaly scores.
    Each score is |occurrences in abnormal lines| / |occurrences in all lines| of the line's template,
    attribute value or context; counts are line counts built once in the constructor.
    """

    def __init__(
        self,
        parsed: ParsedCorpus,
        split: LabeledSplit,
        context_before: int = TaxonomyDefaults.CONTEXT_BEFORE,
        context_after: int = TaxonomyDefaults.CONTEXT_AFTER,
        attribute_scope: str = TaxonomyDefaults.ATTRIBUTE_SCOPE,
    ):
        if attribute_scope not in TaxonomyDefaults.ALLOWED_ATTRIBUTE_SCOPES:
            raise TaxonomyError(f"Unknown attribute scope '{attribute_scope}'")
        n = len(parsed)
        if len(split) != n or any(p < 0 or p >= n for p in split.normal | split.abnormal):
            raise TaxonomyError(f"The labeled split does not cover the {n} corpus lines")

        self.parsed = parsed
        self.split = split
        self.attribute_scope = attribute_scope
        self.contexts = build_context(parsed.template_ids, context_before, context_after)
        self._pos_by_origin = {attrs.origin: pos for pos, attrs in enumerate(parsed.attributes)}

        # [abnormal, normal] line counts
        self._template_counts = defaultdict(lambda: [0, 0])
        self._value_counts = defaultdict(lambda: [0, 0])
        self._context_counts = defaultdict(lambda: [0, 0])
        for pos in range(n):
            col = 0 if pos in split.abnormal else 1
            tid = parsed.template_ids[pos]
            self._template_counts[tid][col] += 1
            for key in self._value_keys(tid, parsed.attributes[pos]):
                self._value_counts[key][col] += 1
            self._context_counts[self.contexts[pos].neighbor_ids][col] += 1

        self.stats = {
            "num_lines": n,
            "num_abnormal": len(split.abnormal),
            "num_templates": len(self._template_counts),
            "num_attribute_values": len(self._value_counts),
            "num_contexts": len(self._context_counts),
        }

    def _value_keys(self, tid: int, attrs: AttributeSet) -> set:
        if self.attribute_scope == "corpus":
            return set(attrs.values)
        slots = [i for i, tok in enumerate(self.parsed.templates[tid].skeleton) if tok == WILDCARD]
        return {(tid, slot, value) for slot, value in zip(slots, attrs.values)}

    def template_score(self, template_id: int) -> float:
        counts = self._template_counts.get(template_id)
        if counts is None:
            raise TaxonomyError(f"Template {template_id} never occurs in the corpus")
        return _ratio(counts)

    def attribute_score(self, attrs: AttributeSet) -> float:
        if not attrs.values:
            return 0.0
        tid = self.parsed.template_ids[self._pos_by_origin[attrs.origin]]
        return max(_ratio(self._value_counts[key]) for key in self._value_keys(tid, attrs))

    def context_score(self, key: ContextKey) -> float:
        counts = self._context_counts.get(key.neighbor_ids)
        if counts is None:
            raise TaxonomyError(f"Context of line {key.origin} never occurs in the corpus")
        return _ratio(counts)

    def score_line(self, pos: int) -> AnomalyScores:
        return AnomalyScores(
            origin=self.parsed.sequences[pos].origin,
            alpha=self.template_score(self.parsed.template_ids[pos]),
            beta=self.attribute_score(self.parsed.attributes[pos]),
            gamma=self.context_score(self.contexts[pos]),
        )

    def score_abnormal(self) -> list[AnomalyScores]:
        return [self.score_line(pos) for pos in sorted(self.split.abnormal)]

    def score_all(self) -> list[AnomalyScores]:
        return [self.score_line(pos) for pos in range(len(self.parsed))]

    def print_stats(self):
        print(">> ANOMALY SCORER:")
        print(f">>   Num lines: {self.stats['num_lines']} ({self.stats['num_abnormal']} abnormal)")
        print(f">>   Num templates: {self.stats['num_templates']}")
        print(f">>   Num distinct attribute keys ({self.attribute_scope} scope): {self.stats['num_attribute_values']}")
        print(f">>   Num distinct contexts: {self.stats['num_contexts']}")


def classify(scores: list[AnomalyScores], threshold: float) -> TaxonomyReport:
    """'scores' holds the scores of the abnormal lines; a line qualifies as type T iff its T-score >= threshold."""
    if not 0.0 < threshold <= 1.0:
        raise TaxonomyError(f"Invalid threshold {threshold}: must be in (0,1]")
    if not scores:
        logger.warning("No abnormal line to classify: percentages are reported as 0")

    counts = {t: 0 for t in TaxonomyDefaults.TYPES}
    unclassified = []
    for s in scores:
        qualified = [t for t in TaxonomyDefaults.TYPES if s.score_of(t) >= threshold]
        for t in qualified:
            counts[t] += 1
        if not qualified:
            unclassified.append(s.origin)
    return TaxonomyReport(threshold, len(scores), counts, tuple(unclassified))


def write_taxonomy_report(reports: list[TaxonomyReport], path: str, header_line: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "type", "count", "percentage", "flags"])
        for report in reports:
            flags = ";".join(report.flags)
            for threshold, anomaly_type, count, pct in report.rows():
                writer.writerow([threshold, anomaly_type, count, f"{pct:.4f}", flags])


def write_per_line_scores(scores: list[AnomalyScores], path: str, provenance: dict | None = None):
    document = {"scores": [asdict(s) for s in scores]}
    if provenance is not None:
        document = {"provenance": provenance, **document}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2)
        fh.write("\n")
