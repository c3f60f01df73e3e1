"""Ridge-flow chain codes and the per-image meta-base.

Every image contributes one fixed-length tuple of Freeman direction codes
obtained by walking its skeleton away from the core (or arch reference)
point.  The meta-base is the ``m x n`` table of those tuples.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import AllImagesFailed, FpcluError, MalformedRow, NoSkeletonNearStart, ZeroStep
from .orientfield import CorePoint, PointKind, orientation_field, reference_point, ridge_direction
from .preprocess import EnhanceParams, binarize, enhance_fft, equalize_histogram, segment, thin
from .raster import ClassLabel, DatasetManifest, atomic_write_text, load_gray_image

log = logging.getLogger(__name__)

# (dx, dy, code, Z) with y pointing up; Z is carried verbatim from the code table
CODE_TABLE: tuple[tuple[int, int, int, int], ...] = (
    (0, 1, 0, 11),
    (-1, 1, 1, 7),
    (-1, 0, 2, 6),
    (-1, -1, 3, 5),
    (0, -1, 4, 9),
    (1, -1, 5, 13),
    (1, 0, 6, 14),
    (1, 1, 7, 15),
)
_CODE_OF = {(dx, dy): code for dx, dy, code, _ in CODE_TABLE}
_STEP_OF = {code: (dx, dy) for dx, dy, code, _ in CODE_TABLE}
_Z_TO_CODE = {z: code for _, _, code, z in CODE_TABLE}


def direction_code(dx: int, dy: int) -> int:
    """Freeman code of a unit step; ``dy = +1`` points up."""
    try:
        return _CODE_OF[(int(dx), int(dy))]
    except KeyError:
        if dx == 0 and dy == 0:
            raise ZeroStep("no direction for a zero step") from None
        raise ValueError(f"step ({dx}, {dy}) is not a unit neighbour offset") from None


def code_step(code: int) -> tuple[int, int]:
    return _STEP_OF[code]


def directionality(code: int) -> int:
    return CODE_TABLE[code][3]


def code_from_ridge(rpv: int, z: int) -> Optional[int]:
    """Second-table lookup: a ridge pixel (``rpv == 1``) with directionality ``z``."""
    if rpv != 1:
        return None
    return _Z_TO_CODE.get(z)


@dataclass(frozen=True)
class RidgeFlowTuple:
    image_id: str
    codes: tuple[int, ...]

    def __post_init__(self) -> None:
        codes = tuple(int(c) for c in self.codes)
        if any(c < 0 or c > 7 for c in codes):
            raise ValueError(f"codes must lie in 0..7: {codes}")
        object.__setattr__(self, "codes", codes)

    def __len__(self) -> int:
        return len(self.codes)


# ---------------------------------------------------------------------------
# tracing

_NEIGHBOURS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


@dataclass
class Trace:
    codes: list[int]
    control_points: list[tuple[int, int]]  # (x, y) pixel coordinates
    path: list[tuple[int, int]]  # (row, col) of every traced pixel
    jumps: list[int] = field(default_factory=list)  # path indices reached by a jump
    padded: int = 0


def _snap(sk: np.ndarray, x: int, y: int, radius: int = 5) -> tuple[int, int]:
    h, w = sk.shape
    r0, r1 = max(0, y - radius), min(h, y + radius + 1)
    c0, c1 = max(0, x - radius), min(w, x + radius + 1)
    pts = np.argwhere(sk[r0:r1, c0:c1])
    if not len(pts):
        raise NoSkeletonNearStart(f"no skeleton pixel within {radius} px of ({x}, {y})")
    pts += (r0, c0)
    d2 = (pts[:, 0] - y) ** 2 + (pts[:, 1] - x) ** 2
    keys = np.lexsort((pts[:, 1], pts[:, 0], d2))
    if d2[keys[0]] > radius * radius:
        raise NoSkeletonNearStart(f"no skeleton pixel within {radius} px of ({x}, {y})")
    r, c = pts[keys[0]]
    return int(r), int(c)


def _angle_between(ax: float, ay: float, bx: float, by: float) -> float:
    dot = ax * bx + ay * by
    cross = ax * by - ay * bx
    return abs(math.atan2(cross, dot))


def trace_ridge(
    thinned: np.ndarray,
    start: CorePoint,
    n: int = 32,
    stride: int = 8,
    heading: tuple[float, float] = (0.0, 1.0),
    jump_radius: int = 12,
    heading_lag: int = 3,
    quantize: str = "octant",
) -> Trace:
    """Walk the skeleton from ``start`` and emit ``n`` direction codes.

    ``heading`` is the initial direction as ``(dx, dy)`` with y up.  At each
    step the untraced neighbour with the smallest turn from the current
    heading is taken (ties: lower code); steps turning more than 90 degrees
    are not taken.  When the ridge ends the walk jumps to the nearest
    untraced skeleton pixel within ``jump_radius`` that lies within 60
    degrees of the heading; failing that, the last code is repeated.

    ``quantize`` maps the displacement between control points to a unit
    step: ``"sign"`` takes the signs of both components, ``"octant"`` the
    nearest of the eight 45 degree directions (a component is dropped when
    it is below tan(22.5 deg) of the larger one).
    """
    if quantize not in QUANTIZERS:
        raise ValueError(f"quantize must be one of {sorted(QUANTIZERS)}")
    sk = np.asarray(thinned) > 0
    h, w = sk.shape
    r, c = _snap(sk, start.x, start.y)
    visited = np.zeros_like(sk)
    visited[r, c] = True
    path = [(r, c)]
    hx, hy = heading
    norm = math.hypot(hx, hy) or 1.0
    hx, hy = hx / norm, hy / norm
    anchor = 0  # path index the heading is measured from
    codes: list[int] = []
    points = [(c, r)]
    jumps: list[int] = []
    last_cp = (r, c)
    while len(codes) < n:
        best = None
        for dr, dc in _NEIGHBOURS:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < h and 0 <= cc < w) or not sk[rr, cc] or visited[rr, cc]:
                continue
            turn = _angle_between(hx, hy, dc, -dr)
            if turn > math.pi / 2 + 1e-9:
                continue
            key = (round(turn, 9), direction_code(dc, -dr))
            if best is None or key < best[0]:
                best = (key, rr, cc)
        if best is None:
            nxt = _jump_target(sk, visited, r, c, hx, hy, jump_radius)
            if nxt is None:
                break
            r, c = nxt
            jumps.append(len(path))
            anchor = len(path)
        else:
            _, r, c = best
        visited[r, c] = True
        path.append((r, c))
        i = len(path) - 1
        if i - anchor >= 1:
            ar, ac = path[max(anchor, i - heading_lag)]
            vx, vy = c - ac, ar - r
            vn = math.hypot(vx, vy)
            if vn > 0:
                hx, hy = vx / vn, vy / vn
        if i % stride == 0:
            pr, pc = last_cp
            sx, sy = QUANTIZERS[quantize](c - pc, pr - r)
            if sx == 0 and sy == 0:
                codes.append(codes[-1] if codes else _heading_code(hx, hy))
            else:
                codes.append(direction_code(sx, sy))
            points.append((c, r))
            last_cp = (r, c)
    padded = n - len(codes)
    if padded:
        fill = codes[-1] if codes else _heading_code(hx, hy)
        codes.extend([fill] * padded)
    return Trace(codes, points, path, jumps, padded)


def _sign_step(dx: int, dy: int) -> tuple[int, int]:
    return int(np.sign(dx)), int(np.sign(dy))


_TAN_HALF_OCTANT = math.tan(math.pi / 8)


def _octant_step(dx: int, dy: int) -> tuple[int, int]:
    big = max(abs(dx), abs(dy))
    sx = int(np.sign(dx)) if abs(dx) > _TAN_HALF_OCTANT * big else 0
    sy = int(np.sign(dy)) if abs(dy) > _TAN_HALF_OCTANT * big else 0
    return sx, sy


QUANTIZERS = {"sign": _sign_step, "octant": _octant_step}


def _heading_code(hx: float, hy: float) -> int:
    angle = math.atan2(hy, hx)
    k = int(round(angle / (math.pi / 4))) % 8
    # k counts 45 degree sectors anticlockwise from +x
    dx, dy = round(math.cos(k * math.pi / 4)), round(math.sin(k * math.pi / 4))
    return direction_code(dx, dy)


def _jump_target(sk, visited, r, c, hx, hy, radius):
    h, w = sk.shape
    r0, r1 = max(0, r - radius), min(h, r + radius + 1)
    c0, c1 = max(0, c - radius), min(w, c + radius + 1)
    window = sk[r0:r1, c0:c1] & ~visited[r0:r1, c0:c1]
    pts = np.argwhere(window)
    if not len(pts):
        return None
    pts += (r0, c0)
    vx = (pts[:, 1] - c).astype(float)
    vy = (r - pts[:, 0]).astype(float)
    dist = np.hypot(vx, vy)
    cosang = (vx * hx + vy * hy) / np.where(dist == 0, 1.0, dist)
    ok = (dist <= radius) & (dist > 0) & (cosang >= math.cos(math.pi / 3) - 1e-9)
    if not ok.any():
        return None
    pts, dist = pts[ok], dist[ok]
    order = np.lexsort((pts[:, 1], pts[:, 0], dist))
    rr, cc = pts[order[0]]
    return int(rr), int(cc)


def extract_ridge_code(
    thinned: np.ndarray,
    start: CorePoint,
    n: int = 32,
    stride: int = 8,
    heading: tuple[float, float] = (0.0, 1.0),
    image_id: str = "",
    quantize: str = "octant",
) -> RidgeFlowTuple:
    trace = trace_ridge(thinned, start, n, stride, heading, quantize=quantize)
    return RidgeFlowTuple(image_id, tuple(trace.codes))


# ---------------------------------------------------------------------------
# meta-base


@dataclass(frozen=True)
class PipelineParams:
    exponent_k: float = 0.55
    enhance_block: int = 32
    binarize_block: int = 16
    orient_block: int = 16
    seg_tau_factor: float = 0.1
    n: int = 32
    stride: int = 8
    quantize: str = "octant"
    start_offset: int = 32  # px left of the core where the traced ridge is picked
    start_reach: int = 64

    def __post_init__(self) -> None:
        if self.n < 1 or self.stride < 1:
            raise ValueError("nmc.n and nmc.stride must be >= 1")
        if self.quantize not in QUANTIZERS:
            raise ValueError(f"quantize must be one of {sorted(QUANTIZERS)}")
        if not 0 <= self.start_offset <= self.start_reach:
            raise ValueError("need 0 <= start_offset <= start_reach")


@dataclass(frozen=True)
class SkipRecord:
    image_id: str
    reason: str


@dataclass
class MetaBase:
    n: int
    rows: list[RidgeFlowTuple]
    labels: list[Optional[ClassLabel]] = field(default_factory=list)
    skipped: list[SkipRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.labels:
            self.labels = [None] * len(self.rows)
        if len(self.labels) != len(self.rows):
            raise ValueError("labels must align with rows")
        for row in self.rows:
            if len(row) != self.n:
                raise ValueError(f"row {row.image_id!r} has {len(row)} codes, expected {self.n}")

    @property
    def m(self) -> int:
        return len(self.rows)

    def ids(self) -> list[str]:
        return [r.image_id for r in self.rows]

    def as_array(self) -> np.ndarray:
        return np.array([r.codes for r in self.rows], dtype=np.int64).reshape(len(self.rows), self.n)

    def row(self, image_id: str) -> RidgeFlowTuple:
        for r in self.rows:
            if r.image_id == image_id:
                return r
        raise KeyError(image_id)

    def label_map(self) -> dict[str, ClassLabel]:
        return {r.image_id: lab for r, lab in zip(self.rows, self.labels) if lab is not None}

    def head(self, size: int) -> "MetaBase":
        return MetaBase(self.n, self.rows[:size], self.labels[:size])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MetaBase):
            return NotImplemented
        return self.n == other.n and self.rows == other.rows and self.labels == other.labels


def _nearest_on(mask: np.ndarray, x: int, y: int) -> CorePoint | None:
    pts = np.argwhere(mask)
    if not len(pts):
        return None
    d2 = (pts[:, 0] - y) ** 2 + (pts[:, 1] - x) ** 2
    r, c = pts[np.lexsort((pts[:, 1], pts[:, 0], d2))[0]]
    return CorePoint(int(c), int(r))


@dataclass
class ImageTrace:
    start: CorePoint
    heading: tuple[float, float]
    skeleton: np.ndarray
    roi: np.ndarray
    trace: Trace


def _left_crossing(sk: np.ndarray, x: int, y: int, offset: int, reach: int) -> CorePoint | None:
    """First skeleton pixel on row ``y`` scanning left from ``x - offset``."""
    if not 0 <= y < sk.shape[0]:
        return None
    for col in range(min(x - offset, sk.shape[1] - 1), max(-1, x - reach - 1), -1):
        if col < 0:
            break
        if sk[y, col]:
            return CorePoint(col, y)
    return None


def trace_image(img: np.ndarray, params: PipelineParams = PipelineParams()) -> ImageTrace:
    """Full per-image chain: preprocess, locate the start point, trace.

    The ROI comes from the enhanced image and the skeleton is restricted to
    the ROI shrunk by one orientation block, which keeps the finger border
    out of both the arch reference search and the trace.  From a core the
    traced ridge is the first one met left of the core on its row, at least
    ``start_offset`` px away; it is followed upwards along the local block
    orientation, so loops and whorls show their turn within a few control
    points.  An arch reference is the start of a ridge and is traced
    rightwards.
    """
    enhanced = enhance_fft(equalize_histogram(img), EnhanceParams(params.enhance_block, params.exponent_k))
    roi = segment(enhanced, params.binarize_block, params.seg_tau_factor)
    interior = ndimage.binary_erosion(roi, structure=np.ones((3, 3)), iterations=params.orient_block)
    if not interior.any():
        interior = roi
    skeleton = thin(binarize(enhanced, params.binarize_block) * roi) * interior
    field_ = orientation_field(enhanced, roi, params.orient_block)
    start = reference_point(field_, skeleton, interior)
    snapped = None
    if start.kind is PointKind.CORE:
        snapped = _left_crossing(skeleton, start.x, start.y, params.start_offset, params.start_reach)
    if snapped is None:
        snapped = _nearest_on(skeleton, start.x, start.y)
    if snapped is None:
        raise NoSkeletonNearStart("empty skeleton")
    theta = field_.angle_at(snapped.x, snapped.y)
    if start.kind is PointKind.ARCH_REFERENCE:
        heading = (abs(math.cos(theta)), math.sin(theta) if math.cos(theta) >= 0 else -math.sin(theta))
    else:
        heading = ridge_direction(theta)
    origin = CorePoint(snapped.x, snapped.y, start.kind)
    trace = trace_ridge(skeleton, origin, params.n, params.stride, heading, quantize=params.quantize)
    return ImageTrace(start, heading, skeleton, interior, trace)


def image_ridge_code(img: np.ndarray, params: PipelineParams = PipelineParams(), image_id: str = "") -> RidgeFlowTuple:
    return RidgeFlowTuple(image_id, tuple(trace_image(img, params).trace.codes))


def _process_entry(args):
    image_id, path, params = args
    try:
        return image_ridge_code(load_gray_image(path), params, image_id), None
    except (FpcluError, ValueError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def build_metabase(manifest: DatasetManifest, params: PipelineParams = PipelineParams(), jobs: int = 1) -> MetaBase:
    """Run the per-image chain over a manifest; failures become skip records."""
    work = [(e.image_id, e.path, params) for e in manifest]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_process_entry, work, chunksize=4))
    else:
        results = [_process_entry(w) for w in work]
    rows, labels, skipped = [], [], []
    for entry, (row, reason) in zip(manifest, results):
        if row is None:
            log.warning("skipping %s: %s", entry.image_id, reason)
            skipped.append(SkipRecord(entry.image_id, reason))
        else:
            rows.append(row)
            labels.append(entry.label)
    if not rows:
        raise AllImagesFailed(f"all {len(work)} images failed")
    return MetaBase(params.n, rows, labels, skipped)


def format_metabase(mb: MetaBase) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id"] + [f"c{i}" for i in range(1, mb.n + 1)] + ["label"])
    for row, lab in zip(mb.rows, mb.labels):
        w.writerow([row.image_id, *row.codes, lab.value if lab else ""])
    return buf.getvalue()


def save_metabase(mb: MetaBase, path: str | os.PathLike) -> None:
    atomic_write_text(path, format_metabase(mb))


def parse_metabase(text: str) -> MetaBase:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[0] != "image_id" or header[-1] != "label":
        raise MalformedRow("metabase header must be image_id,c1..cn,label")
    n = len(header) - 2
    if n < 1 or header[1:-1] != [f"c{i}" for i in range(1, n + 1)]:
        raise MalformedRow("metabase code columns must be c1..cn")
    rows, labels = [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != n + 2:
            raise MalformedRow(f"line {lineno}: expected {n + 2} fields, got {len(rec)}")
        codes = []
        for cell in rec[1:-1]:
            cell = cell.strip()
            if len(cell) != 1 or cell not in "01234567":
                raise MalformedRow(f"line {lineno}: bad code {cell!r}")
            codes.append(int(cell))
        try:
            label = ClassLabel.parse(rec[-1])
        except FpcluError as exc:
            raise MalformedRow(f"line {lineno}: {exc}") from None
        rows.append(RidgeFlowTuple(rec[0], tuple(codes)))
        labels.append(label)
    if not rows:
        raise MalformedRow("metabase has no rows")
    return MetaBase(n, rows, labels)


def load_metabase(path: str | os.PathLike) -> MetaBase:
    return parse_metabase(Path(path).read_text(encoding="utf-8"))


def format_skips(skipped: Sequence[SkipRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "reason"])
    for s in skipped:
        w.writerow([s.image_id, s.reason])
    return buf.getvalue()
