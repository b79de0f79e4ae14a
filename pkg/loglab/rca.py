#!/usr/bin/env python3

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import AgglomerativeClustering

from loglab.constants import RcaDefaults
from loglab.errors import DataError
from loglab.ingest import LogMessage
from loglab.pumodel import LineScore
from loglab.weaklabel import WeakLabel, WeakLabeledDataset

#
# Created: Oct 2026
# License: Apache license
#

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WindowVector:
    window_id: int
    # occurrences of each corpus source among the lines of the window
    w: np.ndarray

    @property
    def empty(self) -> bool:
        return not self.w.any()


@dataclass
class Clustering:
    # window id -> cluster id
    assignment: dict[int, int]
    # cluster id -> window ids
    members: dict[int, list[int]]
    # cluster id -> number of distinct U lines
    sizes: dict[int, int]

    @property
    def n_clusters(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ClusterTarget:
    cluster_id: int
    size: int
    target: float
    resampled_size: int

    @property
    def directive(self) -> str:
        if self.resampled_size > self.size:
            return "upsample"
        if self.resampled_size < self.size:
            return "downsample"
        return "keep"


@dataclass
class BalancePlan:
    targets: dict[int, ClusterTarget]
    # window id -> cluster id, used to find the cluster of each U line
    assignment: dict[int, int] = field(default_factory=dict)


def _line_cluster(window_ids: tuple[int, ...], assignment: dict[int, int]) -> int:
    # a line covered by several windows counts for the cluster of its lowest window id
    return assignment[min(window_ids)]


def vectorize_windows(
    dataset: WeakLabeledDataset, corpus: list[LogMessage], binary: bool = RcaDefaults.BINARY_VECTORS
) -> list[WindowVector]:
    """One vector per failure window; its dimensions are the sorted unique sources of the whole corpus."""
    if not dataset.windows:
        raise DataError("No failure window to vectorize")
    sources = sorted({m.source for m in corpus})
    dim_of = {s: i for i, s in enumerate(sources)}

    vectors = []
    for wid, positions in sorted(dataset.window_members().items()):
        w = np.zeros(len(sources), dtype=np.int64)
        for pos in positions:
            w[dim_of[corpus[pos].source]] += 1
        if binary:
            w = np.minimum(w, 1)
        if not w.any():
            logger.warning(f"Failure window {wid} holds no log line: its vector is all zeros")
        vectors.append(WindowVector(wid, w))
    return vectors


# =======================================================================================================
# WindowClusterer
# =======================================================================================================


class WindowClusterer:
    """
    Groups window vectors by agglomerative clustering (average linkage over cosine distance) cut at a
    distance threshold, so the number of clusters is not an input. All-zero vectors have no cosine distance
    and form a cluster of their own.
    """

    def __init__(self, distance_threshold: float = RcaDefaults.DISTANCE_THRESHOLD):
        if distance_threshold <= 0:
            raise ValueError(f"Invalid distance threshold {distance_threshold}")
        self.distance_threshold = distance_threshold
        self.stats = {
            "num_windows": 0,
            "num_empty_windows": 0,
            "num_clusters": 0,
        }

    def _raw_labels(self, vectors: list[WindowVector]) -> list:
        labels = ["empty" if v.empty else None for v in vectors]
        dense = [i for i, v in enumerate(vectors) if not v.empty]
        if len(dense) == 1:
            labels[dense[0]] = 0
        elif len(dense) > 1:
            model = AgglomerativeClustering(
                n_clusters=None,
                distance_threshold=self.distance_threshold,
                metric="cosine",
                linkage="average",
            )
            fitted = model.fit_predict(np.vstack([vectors[i].w for i in dense]).astype(float))
            for i, lbl in zip(dense, fitted):
                labels[i] = int(lbl)
        return labels

    def cluster(self, vectors: list[WindowVector], dataset: WeakLabeledDataset) -> Clustering:
        if not vectors:
            raise DataError("No window vector to cluster")
        vectors = sorted(vectors, key=lambda v: v.window_id)
        raw = self._raw_labels(vectors)

        # cluster ids follow the first window of each cluster
        renumber = {}
        assignment = {}
        members = {}
        for v, lbl in zip(vectors, raw):
            cid = renumber.setdefault(lbl, len(renumber))
            assignment[v.window_id] = cid
            members.setdefault(cid, []).append(v.window_id)

        lines = {cid: set() for cid in members}
        for pos, label, ids in zip(dataset.lines, dataset.labels, dataset.window_ids):
            if label == WeakLabel.U and ids:
                lines[_line_cluster(ids, assignment)].add(pos)
        sizes = {cid: len(positions) for cid, positions in lines.items()}

        self.stats["num_windows"] = len(vectors)
        self.stats["num_empty_windows"] = sum(1 for v in vectors if v.empty)
        self.stats["num_clusters"] = len(members)
        logger.info(f"Clustered {len(vectors)} failure windows into {len(members)} root-cause groups")
        return Clustering(assignment, members, sizes)

    def print_stats(self):
        print(">> WINDOW CLUSTERER:")
        print(f">>   Num windows: {self.stats['num_windows']} ({self.stats['num_empty_windows']} empty)")
        print(f">>   Num clusters: {self.stats['num_clusters']}")


def cluster_windows(
    vectors: list[WindowVector],
    dataset: WeakLabeledDataset,
    distance_threshold: float = RcaDefaults.DISTANCE_THRESHOLD,
) -> Clustering:
    return WindowClusterer(distance_threshold).cluster(vectors, dataset)


# =======================================================================================================
# Balancing
# =======================================================================================================


def target_size(size: int, smallest: int, largest: int) -> float:
    """Maps [smallest, largest] affinely onto [largest/2, largest]; every size maps to largest if they are equal."""
    if largest == smallest:
        return float(largest)
    return (size - smallest) / (largest - smallest) * (largest - largest / 2) + largest / 2


def target_sizes(clustering: Clustering) -> BalancePlan:
    """
    Computes the target U-line count of every cluster. Clusters without any U line (windows that are empty
    or fully shared with a lower window) take no part in the min/max and keep their size 0.
    """
    if not clustering.sizes:
        raise DataError("Cannot balance an empty clustering")
    populated = [s for s in clustering.sizes.values() if s > 0]
    smallest, largest = (min(populated), max(populated)) if populated else (0, 0)

    targets = {}
    for cid, size in sorted(clustering.sizes.items()):
        target = target_size(size, smallest, largest) if size > 0 else 0.0
        targets[cid] = ClusterTarget(cid, size, target, math.floor(target + 0.5))
    return BalancePlan(targets, dict(clustering.assignment))


def rebalance(dataset: WeakLabeledDataset, plan: BalancePlan, seed: int) -> WeakLabeledDataset:
    """
    Resamples the U rows of every cluster to its rounded target: seeded removal without replacement when the
    cluster shrinks, the original rows plus seeded draws with replacement when it grows. P rows are kept as is.
    """
    rng = np.random.default_rng(seed)
    rows_of = {cid: [] for cid in plan.targets}
    keep = []
    for r, (label, ids) in enumerate(zip(dataset.labels, dataset.window_ids)):
        if label == WeakLabel.U and ids:
            cid = _line_cluster(ids, plan.assignment)
            if cid not in rows_of:
                raise DataError(f"The balance plan does not cover cluster {cid}")
            rows_of[cid].append(r)
        else:
            keep.append(r)

    for cid, rows in sorted(rows_of.items()):
        wanted = plan.targets[cid].resampled_size
        if wanted < len(rows):
            keep.extend(int(r) for r in rng.choice(rows, size=wanted, replace=False))
        else:
            keep.extend(rows)
            if wanted > len(rows) and rows:
                keep.extend(int(r) for r in rng.choice(rows, size=wanted - len(rows), replace=True))

    balanced = dataset.select(sorted(keep))
    logger.info(f"Rebalanced U from {dataset.count(WeakLabel.U)} to {balanced.count(WeakLabel.U)} rows")
    return balanced


# =======================================================================================================
# Ranking
# =======================================================================================================


@dataclass(frozen=True)
class RankedLine:
    index: int
    timestamp: int
    z_norm: float
    content: str


def rank_root_causes(
    scores: list[LineScore],
    dataset: WeakLabeledDataset,
    corpus: list[LogMessage],
    window_id: int,
    top_n: int = RcaDefaults.TOP_N,
) -> list[RankedLine]:
    """Top 'top_n' lines of a window by z_norm, descending; ties go to the earlier line."""
    positions = dataset.window_members().get(window_id)
    if positions is None:
        raise DataError(f"Unknown failure window {window_id}")
    return _rank_window(window_id, positions, {s.origin: s.z_norm for s in scores}, corpus, top_n)


def rank_all_windows(
    scores: list[LineScore],
    dataset: WeakLabeledDataset,
    corpus: list[LogMessage],
    top_n: int = RcaDefaults.TOP_N,
) -> dict[int, list[RankedLine]]:
    z_by_index = {s.origin: s.z_norm for s in scores}
    return {
        wid: _rank_window(wid, positions, z_by_index, corpus, top_n)
        for wid, positions in sorted(dataset.window_members().items())
    }


def _rank_window(
    window_id: int, positions: list[int], z_by_index: dict[int, float], corpus: list[LogMessage], top_n: int
) -> list[RankedLine]:
    candidates = [
        RankedLine(corpus[pos].index, corpus[pos].timestamp, z_by_index[corpus[pos].index], corpus[pos].content)
        for pos in positions
        if corpus[pos].index in z_by_index
    ]
    if top_n > len(candidates):
        logger.warning(f"Window {window_id} holds only {len(candidates)} scored lines, fewer than top_n={top_n}")
    candidates.sort(key=lambda r: (-r.z_norm, r.timestamp, r.index))
    return candidates[:top_n]


def write_clusters(clustering: Clustering, path: str, header_line: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["window_id", "cluster_id"])
        for wid, cid in sorted(clustering.assignment.items()):
            writer.writerow([wid, cid])


def write_plan(plan: BalancePlan, path: str, header_line: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster_id", "size", "target", "resampled_size"])
        for cid, t in sorted(plan.targets.items()):
            writer.writerow([cid, t.size, f"{t.target:.4f}", t.resampled_size])


def write_ranked_causes(
    ranking: dict[int, list[RankedLine]],
    dataset: WeakLabeledDataset,
    clustering: Clustering,
    path: str,
    provenance: dict | None = None,
):
    windows = []
    for w in dataset.windows:
        windows.append(
            {
                "window_id": w.id,
                "failure_ms": w.failure.timestamp,
                "tag": w.failure.tag,
                "cluster_id": clustering.assignment.get(w.id),
                "lines": [{"index": r.index, "z_norm": r.z_norm, "content": r.content} for r in ranking.get(w.id, [])],
            }
        )
    document = {"windows": windows}
    if provenance is not None:
        document = {"provenance": provenance, **document}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2)
        fh.write("\n")
