"""Frequent-itemset mining over the meta-base and cluster-seed selection.

Each meta-base row becomes a transaction whose items are (position, code)
pairs encoded as ``(p - 1) * 8 + code + 1``.  Transaction sets are held as
Python integers used as bitsets, so support counting is a popcount of an AND.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import SeedShortfall
import numpy as np

from .metabase import MetaBase, RidgeFlowTuple
from .raster import atomic_write_text

_EPS = 1e-9


@dataclass(frozen=True)
class Transaction:
    tid: str
    items: tuple[int, ...]

    def __post_init__(self) -> None:
        items = tuple(sorted(set(int(i) for i in self.items)))
        if not items:
            raise ValueError(f"transaction {self.tid!r} is empty")
        if items[0] < 1:
            raise ValueError("items must be positive integers")
        object.__setattr__(self, "items", items)


@dataclass(frozen=True, order=True)
class FrequentItemset:
    items: tuple[int, ...]
    support: int


@dataclass(frozen=True)
class MiningParams:
    min_support: float = 0.2
    alpha: int = 3
    k_classes: int = 5
    delta_s: int = 8
    tie_break: str = "medoid"  # or "lexicographic"
    distinct_seeds: bool = True

    def __post_init__(self) -> None:
        if self.tie_break not in ("medoid", "lexicographic"):
            raise ValueError(f"tie_break must be medoid or lexicographic, got {self.tie_break!r}")
        if not 0.0 < self.min_support <= 1.0:
            raise ValueError(f"min_support must lie in (0, 1], got {self.min_support}")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.k_classes < 1:
            raise ValueError("k_classes must be >= 1")
        if self.delta_s < 0:
            raise ValueError("delta_s must be >= 0")


@dataclass(frozen=True)
class Seed:
    items: tuple[int, ...]  # signature: intersection of the grouped itemsets
    tid: str
    row: RidgeFlowTuple
    group: tuple[FrequentItemset, ...] = ()


@dataclass(frozen=True)
class SeedSet:
    seeds: tuple[Seed, ...]

    def __len__(self) -> int:
        return len(self.seeds)

    @property
    def k(self) -> int:
        return len(self.seeds)

    def tids(self) -> list[str]:
        return [s.tid for s in self.seeds]


def min_count(min_support: float, total: int) -> int:
    """Smallest support count meeting the fractional threshold."""
    return max(1, math.ceil(min_support * total - _EPS))


def itemize(row: RidgeFlowTuple) -> Transaction:
    return Transaction(row.image_id, tuple((p * 8) + c + 1 for p, c in enumerate(row.codes)))


def item_meaning(item: int) -> tuple[int, int]:
    """Inverse of the encoding: (1-based position, code)."""
    return (item - 1) // 8 + 1, (item - 1) % 8


def _tidsets(txns: Sequence[Transaction]) -> dict[int, int]:
    bits: dict[int, int] = {}
    for k, t in enumerate(txns):
        for item in t.items:
            bits[item] = bits.get(item, 0) | (1 << k)
    return bits


def _popcount(x: int) -> int:
    return bin(x).count("1")


def apriori(txns: Sequence[Transaction], min_support: float) -> list[FrequentItemset]:
    """Every itemset with support >= ceil(min_support * |txns|).

    Level-wise: frequent k-sets are joined on their common (k-1)-prefix and a
    candidate survives only if all its k-subsets are frequent.  Output is
    sorted by (size, items).
    """
    if not txns:
        raise ValueError("apriori needs at least one transaction")
    if not 0.0 < min_support <= 1.0:
        raise ValueError(f"min_support must lie in (0, 1], got {min_support}")
    need = min_count(min_support, len(txns))
    bits = _tidsets(txns)
    level = {(i,): b for i, b in sorted(bits.items()) if _popcount(b) >= need}
    out: list[FrequentItemset] = []
    while level:
        out.extend(FrequentItemset(items, _popcount(b)) for items, b in level.items())
        keys = sorted(level)
        nxt: dict[tuple[int, ...], int] = {}
        for a in range(len(keys)):
            pa = keys[a]
            for b in range(a + 1, len(keys)):
                pb = keys[b]
                if pa[:-1] != pb[:-1]:
                    break
                cand = pa + (pb[-1],)
                if any(cand[:j] + cand[j + 1 :] not in level for j in range(len(cand) - 2)):
                    continue
                tids = level[pa] & level[pb]
                if _popcount(tids) >= need:
                    nxt[cand] = tids
        level = nxt
    return out


def maximal_frequent(freq: Iterable[FrequentItemset]) -> list[FrequentItemset]:
    """Keep the itemsets that have no frequent proper superset."""
    freq = sorted(freq, key=lambda f: (-len(f.items), f.items))
    kept: list[FrequentItemset] = []
    kept_sets: list[frozenset] = []
    for f in freq:
        s = frozenset(f.items)
        if any(s < k for k in kept_sets):
            continue
        kept.append(f)
        kept_sets.append(s)
    return sorted(kept, key=lambda f: (len(f.items), f.items))


def mine_maximal(txns: Sequence[Transaction], min_support: float) -> list[FrequentItemset]:
    """Maximal frequent itemsets without listing every frequent itemset.

    Walks closed itemsets depth first with prefix-preserving closure
    extension (each closed set is reached once).  A subtree is skipped when
    its node plus every frequent extension item fits inside a maximal set
    already found, and closed at once when that union is itself frequent.
    Agrees with ``maximal_frequent(apriori(...))`` but stays tractable when
    rows share long runs of identical codes.
    """
    if not txns:
        raise ValueError("mining needs at least one transaction")
    if not 0.0 < min_support <= 1.0:
        raise ValueError(f"min_support must lie in (0, 1], got {min_support}")
    need = min_count(min_support, len(txns))
    bits = _tidsets(txns)
    items = sorted(i for i, b in bits.items() if _popcount(b) >= need)
    tid_of = [bits[i] for i in items]
    nitems = len(items)

    def closure(tids: int) -> list[int]:
        return [k for k in range(nitems) if tid_of[k] & tids == tids]

    found: list[FrequentItemset] = []

    def is_maximal(closed: set, tids: int) -> bool:
        for k in range(nitems):
            if k not in closed and _popcount(tid_of[k] & tids) >= need:
                return False
        return True

    everyone = (1 << len(txns)) - 1
    root = closure(everyone)
    found_sets: list[set] = []

    def emit(members: set, tids: int) -> None:
        if members and members not in found_sets and is_maximal(members, tids):
            found_sets.append(members)
            found.append(FrequentItemset(tuple(items[k] for k in sorted(members)), _popcount(tids)))

    stack = [(root, everyone, -1)]
    while stack:
        closed, tids, core = stack.pop()
        cset = set(closed)
        tail = [e for e in range(core + 1, nitems) if e not in cset and _popcount(tids & tid_of[e]) >= need]
        # every set below this node lies inside closed + tail
        bound = cset.union(tail)
        if any(bound <= m for m in found_sets):
            continue
        joint = tids
        for e in tail:
            joint &= tid_of[e]
        if _popcount(joint) >= need:
            # the bound itself is frequent, so nothing else below can be maximal
            emit(bound, joint)
            continue
        if not tail:
            emit(cset, tids)
            continue
        children = []
        for e in tail:
            sub = tids & tid_of[e]
            ext = closure(sub)
            # prefix preservation: no new item below e
            if any(k < e and k not in cset for k in ext):
                continue
            children.append((ext, sub, e))
        if not children:
            emit(cset, tids)
        # larger first so that big maximal sets are known early for pruning
        stack.extend(sorted(children, key=lambda ch: len(ch[0])))
    return sorted(found, key=lambda f: (len(f.items), f.items))


def _group_order(maximal: Sequence[FrequentItemset]) -> list[FrequentItemset]:
    return sorted(maximal, key=lambda f: (-f.support, f.items))


def group_itemsets(maximal: Sequence[FrequentItemset], alpha: int) -> list[tuple[tuple[int, ...], list[FrequentItemset]]]:
    """Greedy running-intersection grouping of maximal itemsets.

    The unclaimed itemset of highest support (ties: lexicographically
    smallest) opens a group; each later unclaimed itemset in the same order
    joins when it shares at least ``alpha`` items with the group's running
    intersection, which then shrinks to the common part.  Groups whose
    opener has fewer than ``alpha`` items are discarded.  Returns
    ``(signature, members)`` pairs in the order they were formed.
    """
    pending = _group_order(maximal)
    groups = []
    while pending:
        pivot = pending.pop(0)
        common = set(pivot.items)
        members = [pivot]
        rest = []
        for f in pending:
            shared = common & set(f.items)
            if len(shared) >= alpha:
                common = shared
                members.append(f)
            else:
                rest.append(f)
        pending = rest
        if len(common) >= alpha:
            groups.append((tuple(sorted(common)), members))
    return groups


def _ranked_candidates(
    signature: Sequence[int],
    members: Sequence[FrequentItemset],
    txns: Sequence[Transaction],
    mb: Optional[MetaBase] = None,
) -> list[str]:
    """Tids holding the signature, best seed candidate first.

    Candidates are ranked by how many group itemsets they contain.  Among
    equals, with ``mb`` given, the medoid wins: the row with the smallest
    summed Euclidean distance to every row holding the signature.  Remaining
    ties (and every tie without ``mb``) go to the smallest tid.
    """
    sig = set(signature)
    pool = [t for t in txns if sig <= set(t.items)]
    score = {t.tid: sum(1 for f in members if set(f.items) <= set(t.items)) for t in pool}
    spread = {t.tid: 0.0 for t in pool}
    if mb is not None and len(pool) > 1:
        data = np.array([mb.row(t.tid).codes for t in pool], dtype=np.float64)
        diff = data[:, None, :] - data[None, :, :]
        sums = np.sqrt((diff**2).sum(axis=2)).sum(axis=1)
        spread = {t.tid: round(float(v), 9) for t, v in zip(pool, sums)}
    return sorted(score, key=lambda tid: (-score[tid], spread[tid], tid))


def seed_tid(
    signature: Sequence[int],
    members: Sequence[FrequentItemset],
    txns: Sequence[Transaction],
    mb: Optional[MetaBase] = None,
) -> str:
    """Transaction holding the signature that contains the most group itemsets.

    Ties go to the medoid when ``mb`` is given, else to the smallest tid.
    """
    ranked = _ranked_candidates(signature, members, txns, mb)
    if not ranked:
        raise SeedShortfall(f"no transaction contains signature {sorted(signature)}")
    return ranked[0]


def select_seeds(
    maximal: Sequence[FrequentItemset],
    txns: Sequence[Transaction],
    mb: Optional[MetaBase],
    params: MiningParams = MiningParams(),
) -> SeedSet:
    """Pick ``k_classes`` seeds from the grouped maximal itemsets.

    Groups are visited in the order they were formed and each yields its
    best candidate transaction.  With ``distinct_seeds`` a candidate that is
    coherent with an already chosen seed (at least ``delta_s`` positions
    agree) stands for the same flow pattern, so the group is passed over;
    if that leaves fewer than ``k_classes`` seeds, the passed-over groups
    fill the remaining places in order.
    ``mb`` supplies the seed rows; it may be ``None`` when the transactions
    are abstract, in which case seed rows are empty placeholders and the
    coherence test and medoid tie-break are skipped.
    """
    groups = group_itemsets(maximal, params.alpha)
    seeds: list[Seed] = []
    used: set = set()
    ranking_mb = mb if params.tie_break == "medoid" else None
    passed_over = []
    for signature, members in groups:
        if len(seeds) == params.k_classes:
            break
        candidates = [t for t in txns if t.tid not in used]
        try:
            tid = seed_tid(signature, members, candidates, ranking_mb)
        except SeedShortfall:
            continue
        row = mb.row(tid) if mb is not None else RidgeFlowTuple(tid, ())
        if mb is not None and params.distinct_seeds:
            if any(_coherent(row, s.row, params.delta_s) for s in seeds):
                passed_over.append((signature, members))
                continue
        used.add(tid)
        seeds.append(Seed(signature, tid, row, tuple(members)))
    for signature, members in passed_over:
        if len(seeds) == params.k_classes:
            break
        candidates = [t for t in txns if t.tid not in used]
        try:
            tid = seed_tid(signature, members, candidates, ranking_mb)
        except SeedShortfall:
            continue
        used.add(tid)
        seeds.append(Seed(signature, tid, mb.row(tid), tuple(members)))
    if len(seeds) < params.k_classes:
        raise SeedShortfall(
            f"found {len(seeds)} distinct seed group(s) with >= {params.alpha} common items, need {params.k_classes}"
        )
    return SeedSet(tuple(seeds))


def _coherent(a: RidgeFlowTuple, b: RidgeFlowTuple, delta_s: int) -> bool:
    return sum(1 for x, y in zip(a.codes, b.codes) if x == y) >= delta_s


def seeds_from_metabase(mb: MetaBase, params: MiningParams = MiningParams()) -> SeedSet:
    """Itemize, mine maximal frequent itemsets and select seeds."""
    txns = [itemize(r) for r in mb.rows]
    maximal = mine_maximal(txns, params.min_support)
    if len(maximal) < params.k_classes:
        raise SeedShortfall(f"only {len(maximal)} maximal frequent itemset(s), need {params.k_classes}")
    return select_seeds(maximal, txns, mb, params)


# ---------------------------------------------------------------------------
# seeds file


def format_seeds(seeds: SeedSet, n: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_index", "seed_tid", "signature_items"] + [f"c{i}" for i in range(1, n + 1)])
    for k, s in enumerate(seeds.seeds):
        w.writerow([k, s.tid, ";".join(str(i) for i in s.items), *s.row.codes])
    return buf.getvalue()


def save_seeds(seeds: SeedSet, n: int, path: str | os.PathLike) -> None:
    atomic_write_text(path, format_seeds(seeds, n))


def parse_seeds(text: str) -> SeedSet:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[:3] != ["class_index", "seed_tid", "signature_items"]:
        raise ValueError("seeds header must start with class_index,seed_tid,signature_items")
    seeds = []
    for rec in reader:
        if not rec:
            continue
        items = tuple(int(i) for i in rec[2].split(";") if i)
        seeds.append(Seed(items, rec[1], RidgeFlowTuple(rec[1], tuple(int(c) for c in rec[3:]))))
    return SeedSet(tuple(seeds))


def load_seeds(path: str | os.PathLike) -> SeedSet:
    with open(path, encoding="utf-8") as fh:
        return parse_seeds(fh.read())

