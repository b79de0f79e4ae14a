#!/usr/bin/env python3

import csv
import enum
import logging
import math
from collections import deque
from dataclasses import dataclass

from loglab.errors import WeakLabelError
from loglab.ingest import GroundTruthManifest, LogMessage, Truth

#
# Created: Oct 2026
# License: Apache license
#

logger = logging.getLogger(__name__)

FAILURES_HEADER = ["timestamp_ms", "tag"]


class WeakLabel(str, enum.Enum):
    # P: positive (presumed normal), U: unknown (inside a failure window)
    P = "P"
    U = "U"


class WindowSide(str, enum.Enum):
    SYMMETRIC = "symmetric"
    BEFORE = "before"


@dataclass(frozen=True)
class FailureEvent:
    timestamp: int
    tag: str = ""

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise WeakLabelError(f"Failure timestamp must be finite, got {self.timestamp}")


@dataclass(frozen=True)
class FailureWindow:
    id: int
    failure: FailureEvent
    start_ms: int
    end_ms: int
    # True: [start, end]; False: [start, end)
    closed_end: bool

    def covers(self, ts: int) -> bool:
        if ts < self.start_ms:
            return False
        return ts <= self.end_ms if self.closed_end else ts < self.end_ms


@dataclass
class WeakLabeledDataset:
    """
    Weak labels of a corpus. Rows refer to corpus positions through 'lines'; a resampled dataset may hold
    the same position several times or omit some.
    """

    lines: list[int]
    labels: list[WeakLabel]
    # ids of the windows covering each row, ascending; empty for P rows
    window_ids: list[tuple[int, ...]]
    delta_ms: int
    windows: list[FailureWindow]
    side: WindowSide = WindowSide.SYMMETRIC

    def __len__(self):
        return len(self.lines)

    def count(self, label: WeakLabel) -> int:
        return sum(1 for lbl in self.labels if lbl == label)

    def rows_with(self, label: WeakLabel) -> list[int]:
        return [r for r, lbl in enumerate(self.labels) if lbl == label]

    def select(self, rows: list[int]) -> "WeakLabeledDataset":
        return WeakLabeledDataset(
            lines=[self.lines[r] for r in rows],
            labels=[self.labels[r] for r in rows],
            window_ids=[self.window_ids[r] for r in rows],
            delta_ms=self.delta_ms,
            windows=self.windows,
            side=self.side,
        )

    def window_members(self) -> dict[int, list[int]]:
        """Corpus positions covered by each window (every window is listed, possibly empty)."""
        members = {w.id: set() for w in self.windows}
        for pos, ids in zip(self.lines, self.window_ids):
            for wid in ids:
                members[wid].add(pos)
        return {wid: sorted(positions) for wid, positions in members.items()}


def assign_pu_labels(
    corpus: list[LogMessage],
    failures: list[FailureEvent],
    delta_ms: int,
    side: WindowSide = WindowSide.SYMMETRIC,
) -> WeakLabeledDataset:
    """
    Marks as U every line inside a failure window ([t-delta, t+delta] for the symmetric side, [t-delta, t)
    for the 'before' side) and as P every other line. Windows are numbered by (timestamp, tag) of their
    failure so that the result does not depend on the order of 'failures'.
    """
    if delta_ms <= 0:
        raise WeakLabelError(f"Window half-width must be positive, got {delta_ms}")
    for prev, cur in zip(corpus, corpus[1:]):
        if cur.timestamp < prev.timestamp:
            raise WeakLabelError(f"Corpus timestamps decrease at line {cur.index}")

    ordered = sorted(failures, key=lambda f: (f.timestamp, f.tag or ""))
    closed_end = side == WindowSide.SYMMETRIC
    windows = [
        FailureWindow(wid, f, f.timestamp - delta_ms, f.timestamp + delta_ms if closed_end else f.timestamp, closed_end)
        for wid, f in enumerate(ordered)
    ]
    if not windows:
        logger.warning("No failure event given: every line is labeled P and training would be degenerate")

    # two-pointer sweep: windows share the same width, so they are sorted by start and by end alike
    labels, window_ids = [], []
    active = deque()
    next_window = 0
    for m in corpus:
        while next_window < len(windows) and windows[next_window].start_ms <= m.timestamp:
            active.append(windows[next_window])
            next_window += 1
        while active and not active[0].covers(m.timestamp):
            active.popleft()
        ids = tuple(w.id for w in active)
        window_ids.append(ids)
        labels.append(WeakLabel.U if ids else WeakLabel.P)

    dataset = WeakLabeledDataset(list(range(len(corpus))), labels, window_ids, delta_ms, windows, side)
    logger.info(
        f"Weak labels with delta={delta_ms}ms ({side.value}): {dataset.count(WeakLabel.U)} U, "
        f"{dataset.count(WeakLabel.P)} P lines over {len(windows)} failure windows"
    )
    return dataset


def failures_from_truth(corpus: list[LogMessage]) -> list[FailureEvent]:
    """One failure event per ground-truth abnormal line, at the timestamp of that line."""
    if not corpus or any(m.truth is None for m in corpus):
        raise WeakLabelError("The corpus has no (or incomplete) ground-truth labels")
    failures = [FailureEvent(m.timestamp, "") for m in corpus if m.truth == Truth.ABNORMAL]
    if not failures:
        raise WeakLabelError("The corpus has no ground-truth abnormal line to derive failures from")
    return failures


def failures_from_manifest(manifest: GroundTruthManifest) -> list[FailureEvent]:
    return [FailureEvent(r.failure_ms, r.tag) for r in manifest.incidents]


def compute_q(dataset: WeakLabeledDataset) -> float:
    """Share of P rows in the dataset; it must be strictly between 0 and 1 to train on it."""
    q = dataset.count(WeakLabel.P) / len(dataset) if len(dataset) else 0.0
    if not 0.0 < q < 1.0:
        raise WeakLabelError(
            f"q={q} is degenerate: the training split needs both P and U lines "
            f"({dataset.count(WeakLabel.P)} P, {dataset.count(WeakLabel.U)} U)"
        )
    return q


# =======================================================================================================
# Files
# =======================================================================================================


def read_failures(path: str) -> list[FailureEvent]:
    failures = []
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            rows = csv.reader(line for line in fh if not line.startswith("#"))
            for row_no, row in enumerate(rows, start=1):
                if not row or row == FAILURES_HEADER:
                    continue
                try:
                    failures.append(FailureEvent(int(row[0]), row[1] if len(row) > 1 else ""))
                except ValueError:
                    raise WeakLabelError(f"Invalid failure record #{row_no} in {path}: {row}")
    except FileNotFoundError:
        raise WeakLabelError(f"Failure file '{path}' not found")
    return failures


def write_failures(failures: list[FailureEvent], path: str, header_line: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FAILURES_HEADER)
        for f in failures:
            writer.writerow([f.timestamp, f.tag])


def write_weak_labels(
    dataset: WeakLabeledDataset, corpus: list[LogMessage], path: str, header_line: str | None = None
):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "weak_label", "window_ids"])
        for pos, label, ids in zip(dataset.lines, dataset.labels, dataset.window_ids):
            writer.writerow([corpus[pos].index, label.value, ";".join(str(i) for i in ids)])
