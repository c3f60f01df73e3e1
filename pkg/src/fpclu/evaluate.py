"""Clustering quality: misclassification error, accuracy, FAR and the
distance-measure comparison table.

Clusters are named after the majority label of their members (ties go to
the class that comes first in ``ClassLabel``), so every number here is
invariant under renumbering of the clusters.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cluster import ClusterAssignment, DistanceMeasure, fpclu, lloyd_refine
from .errors import LengthMismatch, NoLabels
from .metabase import MetaBase
from .mining import Seed, SeedSet
from .raster import ClassLabel, atomic_write_text

CLASSES = list(ClassLabel)


def misclassification_error(before: Sequence[int], after: Sequence[int], total: Optional[int] = None) -> float:
    """``(1/N) * sum |before_i - after_i|`` over the k classes."""
    if len(before) != len(after):
        raise LengthMismatch(f"{len(before)} reference counts vs {len(after)} cluster counts")
    n = sum(before) if total is None else total
    if n <= 0:
        raise ValueError("total count must be positive")
    return sum(abs(int(b) - int(a)) for b, a in zip(before, after)) / n


def _labeled(assignment: ClusterAssignment, labels: Optional[dict] = None) -> list[tuple[int, ClassLabel]]:
    pairs = []
    for iid, c, own in zip(assignment.image_ids, assignment.clusters, assignment.labels):
        lab = labels.get(iid) if labels is not None else own
        if lab is not None:
            pairs.append((c, lab))
    if not pairs:
        raise NoLabels("no labeled image in the assignment")
    return pairs


def confusion(assignment: ClusterAssignment, labels: Optional[dict] = None) -> np.ndarray:
    """Counts of shape (k clusters, 5 classes) over the labeled images."""
    pairs = _labeled(assignment, labels)
    k = max(assignment.k, max(c for c, _ in pairs) + 1)
    table = np.zeros((k, len(CLASSES)), dtype=np.int64)
    for c, lab in pairs:
        table[c, lab.index] += 1
    return table


def majority_mapping(table: np.ndarray) -> list[Optional[ClassLabel]]:
    """Class of each cluster by majority vote; empty clusters map to None."""
    out: list[Optional[ClassLabel]] = []
    for row in table:
        out.append(CLASSES[int(np.argmax(row))] if row.sum() else None)
    return out


def accuracy(assignment: ClusterAssignment, labels: Optional[dict] = None) -> float:
    table = confusion(assignment, labels)
    mapping = majority_mapping(table)
    correct = sum(int(table[c, mapping[c].index]) for c in range(len(mapping)) if mapping[c] is not None)
    return correct / int(table.sum())


def far(assignment: ClusterAssignment, labels: Optional[dict] = None) -> float:
    """Share of labeled images sitting in a cluster named after another class."""
    table = confusion(assignment, labels)
    mapping = majority_mapping(table)
    wrong = sum(
        int(table[c].sum() - (table[c, mapping[c].index] if mapping[c] is not None else 0)) for c in range(len(mapping))
    )
    return wrong / int(table.sum())


def class_counts(assignment: ClusterAssignment, labels: Optional[dict] = None) -> tuple[list[int], list[int]]:
    """(reference counts per class, cluster counts per mapped class)."""
    table = confusion(assignment, labels)
    before = table.sum(axis=0).tolist()
    after = [0] * len(CLASSES)
    for c, cls in enumerate(majority_mapping(table)):
        if cls is not None:
            after[cls.index] += int(table[c].sum())
    return before, after


@dataclass(frozen=True)
class EvalReport:
    measure: str
    dataset_size: int
    misclassification_error: Optional[float]
    accuracy: Optional[float]
    far: Optional[float]
    noise_count: int
    confusion: Optional[np.ndarray] = None

    @property
    def labeled(self) -> bool:
        return self.accuracy is not None


def evaluate(assignment: ClusterAssignment, labels: Optional[dict] = None, measure: Optional[str] = None) -> EvalReport:
    """Report for one assignment; label-dependent fields are None without labels."""
    name = measure or assignment.measure.value
    noise = sum(assignment.noise)
    try:
        table = confusion(assignment, labels)
    except NoLabels:
        return EvalReport(name, len(assignment.image_ids), None, None, None, noise)
    before, after = class_counts(assignment, labels)
    me = misclassification_error(before, after)
    return EvalReport(name, len(assignment.image_ids), me, accuracy(assignment, labels), far(assignment, labels), noise, table)


# ---------------------------------------------------------------------------
# measure comparison

BASELINE_NAME = "kmeans_random"


def default_sizes(m: int, k: int = 5) -> list[int]:
    sizes = sorted({max(k, m // 4), max(k, m // 2), m})
    return [s for s in sizes if s <= m]


def random_seed_kmeans(mb: MetaBase, k: int, rng_seed: int, max_iters: int = 20) -> ClusterAssignment:
    """Plain k-means from ``k`` randomly drawn rows (Euclidean)."""
    rng = np.random.default_rng(rng_seed)
    picks = sorted(rng.choice(mb.m, size=min(k, mb.m), replace=False).tolist())
    seeds = SeedSet(tuple(Seed((), mb.rows[i].image_id, mb.rows[i]) for i in picks))
    init = fpclu(mb, seeds, DistanceMeasure.EUCLIDEAN, delta_s=0)
    return lloyd_refine(mb, init, DistanceMeasure.EUCLIDEAN, max_iters)


def compare_measures(
    mb: MetaBase,
    seeds: SeedSet,
    labels: Optional[dict] = None,
    sizes: Optional[Sequence[int]] = None,
    measures: Sequence[DistanceMeasure] = tuple(DistanceMeasure),
    delta_s: int = 8,
    baseline_seed: Optional[int] = None,
) -> list[EvalReport]:
    """FPCLU once per measure on nested prefixes of the meta-base.

    Rows are ordered by size, then measure.  With ``baseline_seed`` set a
    random-seed k-means row is added per size.
    """
    if mb.m < 1:
        raise ValueError("empty meta-base")
    sizes = list(sizes) if sizes else default_sizes(mb.m, seeds.k)
    out = []
    for size in sizes:
        part = mb.head(size)
        for m in measures:
            a = fpclu(part, seeds, m, delta_s)
            out.append(evaluate(a, labels, m.value))
        if baseline_seed is not None:
            a = random_seed_kmeans(part, seeds.k, baseline_seed)
            out.append(evaluate(a, labels, BASELINE_NAME))
    return out


# ---------------------------------------------------------------------------
# report files

REPORT_HEADER = ["measure", "dataset_size", "misclassification_error", "accuracy", "far", "noise_count"]


def _num(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


def format_report(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in reports:
        w.writerow([r.measure, r.dataset_size, _num(r.misclassification_error), _num(r.accuracy), _num(r.far), r.noise_count])
    return buf.getvalue()


def save_report(reports: Sequence[EvalReport], path: str | os.PathLike) -> None:
    atomic_write_text(path, format_report(reports))


def format_confusion(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cluster_index"] + [c.value for c in CLASSES])
    if report.confusion is not None:
        for c, row in enumerate(report.confusion):
            w.writerow([c, *row.tolist()])
    return buf.getvalue()


def format_plot_data(reports: Sequence[EvalReport]) -> str:
    """Two whitespace-separated columns, ``accuracy far``, one line per run."""
    lines = ["# accuracy far"]
    for r in reports:
        if r.accuracy is not None:
            lines.append(f"{r.accuracy:.6f} {r.far:.6f}")
    return "\n".join(lines) + "\n"
