"""Seeded nearest-seed partitioning of meta-base rows, with four distances
and optional Lloyd refinement.

Codes are compared as plain numbers; direction 7 is not treated as adjacent
to direction 0.
"""
from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateVector, DimensionMismatch
from .metabase import MetaBase
from .mining import SeedSet
from .raster import ClassLabel, atomic_write_text

_TINY = 1e-12


class DistanceMeasure(enum.Enum):
    EUCLIDEAN = "euclidean"
    CITYBLOCK = "cityblock"
    COSINE = "cosine"
    CORRELATION = "correlation"

    @classmethod
    def parse(cls, text: str) -> "DistanceMeasure":
        try:
            return cls(text.strip().lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown distance measure {text!r} (choose from {names})") from None


def _vec(v) -> np.ndarray:
    codes = getattr(v, "codes", v)
    return np.asarray(codes, dtype=np.float64)


def distance(a, b, m: DistanceMeasure = DistanceMeasure.EUCLIDEAN) -> float:
    """Distance between two code tuples (or plain sequences)."""
    x, y = _vec(a), _vec(b)
    if x.shape != y.shape:
        raise DimensionMismatch(f"lengths {x.size} and {y.size} differ")
    if m is DistanceMeasure.EUCLIDEAN:
        return float(np.sqrt(np.sum((x - y) ** 2)))
    if m is DistanceMeasure.CITYBLOCK:
        return float(np.sum(np.abs(x - y)))
    if m is DistanceMeasure.COSINE:
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        if nx < _TINY or ny < _TINY:
            raise DegenerateVector("cosine distance of a zero vector")
        return float(max(0.0, 1.0 - np.dot(x, y) / (nx * ny)))
    if m is DistanceMeasure.CORRELATION:
        xc, yc = x - x.mean(), y - y.mean()
        nx, ny = np.linalg.norm(xc), np.linalg.norm(yc)
        if nx < _TINY or ny < _TINY:
            raise DegenerateVector("correlation distance of a constant vector")
        return float(max(0.0, 1.0 - np.dot(xc, yc) / (nx * ny)))
    raise ValueError(f"unsupported measure {m!r}")


def _safe_distance(a, b, m: DistanceMeasure) -> float:
    # a constant row carries no angle or correlation; treat it as orthogonal
    try:
        return distance(a, b, m)
    except DegenerateVector:
        return 1.0


def match_count(a, b) -> int:
    """Number of positions holding the same code."""
    return int(np.sum(_vec(a) == _vec(b)))


@dataclass
class ClusterAssignment:
    image_ids: list[str]
    clusters: list[int]
    distances: list[float]
    seed_tids: list[str]
    measure: DistanceMeasure
    noise: list[bool] = field(default_factory=list)
    labels: list = field(default_factory=list)  # optional ClassLabel per row

    def __post_init__(self) -> None:
        m = len(self.image_ids)
        if not self.noise:
            self.noise = [False] * m
        if not self.labels:
            self.labels = [None] * m
        if not (len(self.clusters) == len(self.distances) == len(self.noise) == len(self.labels) == m):
            raise ValueError("assignment columns must have equal length")

    @property
    def k(self) -> int:
        return len(self.seed_tids)

    @property
    def assignments(self) -> dict[str, int]:
        return dict(zip(self.image_ids, self.clusters))

    @property
    def noise_flags(self) -> dict[str, bool]:
        return dict(zip(self.image_ids, self.noise))

    def sizes(self) -> list[int]:
        return np.bincount(np.asarray(self.clusters, dtype=np.int64), minlength=self.k).tolist()


def _seed_vectors(seeds: SeedSet, n: int) -> list:
    rows = [s.row for s in seeds.seeds]
    for r in rows:
        if len(r.codes) != n:
            raise DimensionMismatch(f"seed {r.image_id!r} has {len(r.codes)} codes, meta-base has {n}")
    return rows


def fpclu(
    mb: MetaBase,
    seeds: SeedSet,
    measure: DistanceMeasure = DistanceMeasure.EUCLIDEAN,
    delta_s: int = 8,
) -> ClusterAssignment:
    """Single pass: every row goes to its nearest seed.

    Seed rows are placed in their own cluster.  Ties go to the lowest
    cluster index.  A non-seed row whose positional match count with its
    seed is below ``delta_s`` is flagged as noise (it is still assigned).
    """
    if seeds.k < 1:
        raise ValueError("need at least one seed")
    seed_rows = _seed_vectors(seeds, mb.n)
    own = {s.tid: k for k, s in enumerate(seeds.seeds)}
    clusters, dists, noise = [], [], []
    for row in mb.rows:
        if row.image_id in own:
            k = own[row.image_id]
            clusters.append(k)
            dists.append(0.0)
            noise.append(False)
            continue
        best_k, best_d = 0, None
        for k, s in enumerate(seed_rows):
            d = _safe_distance(row, s, measure)
            if best_d is None or d < best_d:
                best_k, best_d = k, d
        clusters.append(best_k)
        dists.append(float(best_d))
        noise.append(match_count(row, seed_rows[best_k]) < delta_s)
    return ClusterAssignment(mb.ids(), clusters, dists, seeds.tids(), measure, noise, list(mb.labels))


def _centroid(points: np.ndarray, measure: DistanceMeasure) -> np.ndarray:
    if measure is DistanceMeasure.CITYBLOCK:
        return np.median(points, axis=0)
    return points.mean(axis=0)


def lloyd_refine(
    mb: MetaBase,
    init: ClusterAssignment,
    measure: DistanceMeasure = DistanceMeasure.EUCLIDEAN,
    max_iters: int = 20,
) -> ClusterAssignment:
    """Alternate centroid update and nearest-centroid reassignment.

    Starts from ``init`` and stops at a fixpoint or after ``max_iters``
    rounds.  An emptied cluster keeps its previous centroid.  Ties go to
    the lowest cluster index, and a row only moves when another centroid is
    strictly nearer, so the assignment cannot oscillate between equals.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    data = mb.as_array().astype(np.float64)
    labels = np.asarray(init.clusters, dtype=np.int64)
    k = init.k
    centroids = np.zeros((k, mb.n))
    for c in range(k):
        members = data[labels == c]
        if len(members):
            centroids[c] = members.mean(axis=0)
    dists = np.zeros(len(data))
    for _ in range(max_iters):
        for c in range(k):
            members = data[labels == c]
            if len(members):
                centroids[c] = _centroid(members, measure)
        new = labels.copy()
        for i, x in enumerate(data):
            d = np.array([_safe_distance(x, centroids[c], measure) for c in range(k)])
            best = int(np.argmin(d))
            if d[best] < d[labels[i]] - 1e-12:
                new[i] = best
            dists[i] = d[new[i]]
        if np.array_equal(new, labels):
            break
        labels = new
    return ClusterAssignment(
        list(init.image_ids),
        labels.tolist(),
        dists.tolist(),
        list(init.seed_tids),
        measure,
        list(init.noise),
        list(init.labels),
    )


def sum_squared_error(mb: MetaBase, clusters: Sequence[int], k: int) -> float:
    """Within-cluster sum of squared Euclidean distances to the cluster means."""
    data = mb.as_array().astype(np.float64)
    labels = np.asarray(clusters)
    total = 0.0
    for c in range(k):
        members = data[labels == c]
        if len(members):
            total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total


# ---------------------------------------------------------------------------
# assignment file

ASSIGNMENT_HEADER = ["image_id", "cluster_index", "distance_to_seed", "noise_flag", "label"]


def format_assignment(a: ClusterAssignment) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ASSIGNMENT_HEADER)
    for iid, c, d, nz, lab in zip(a.image_ids, a.clusters, a.distances, a.noise, a.labels):
        w.writerow([iid, c, f"{d:.6f}", int(nz), lab.value if lab is not None else ""])
    return buf.getvalue()


def save_assignment(a: ClusterAssignment, path: str | os.PathLike) -> None:
    atomic_write_text(path, format_assignment(a))


def parse_assignment(text: str, seed_tids: Optional[Sequence[str]] = None, measure: DistanceMeasure = DistanceMeasure.EUCLIDEAN) -> ClusterAssignment:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[:4] != ASSIGNMENT_HEADER[:4]:
        raise ValueError("assignment header must start with image_id,cluster_index,distance_to_seed,noise_flag")
    ids, clusters, dists, noise, labels = [], [], [], [], []
    for rec in reader:
        if not rec:
            continue
        ids.append(rec[0])
        clusters.append(int(rec[1]))
        dists.append(float(rec[2]))
        noise.append(rec[3].strip() == "1")
        labels.append(ClassLabel.parse(rec[4]) if len(rec) > 4 else None)
    k = max(clusters) + 1 if clusters else 0
    tids = list(seed_tids) if seed_tids is not None else [f"seed{c}" for c in range(k)]
    return ClusterAssignment(ids, clusters, dists, tids, measure, noise, labels)


def load_assignment(path: str | os.PathLike, seed_tids: Optional[Sequence[str]] = None, measure: DistanceMeasure = DistanceMeasure.EUCLIDEAN) -> ClusterAssignment:
    with open(path, encoding="utf-8") as fh:
        return parse_assignment(fh.read(), seed_tids, measure)
