"""Block orientation field, Poincaré-index core detection and the arch
reference point.

Angles follow the usual maths convention (x to the right, y *up*), so a
ridge running from lower-left to upper-right has ``theta = pi/4``.  Points
are reported in pixel coordinates ``x = column, y = row``.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import InsufficientRidges, NoCoreFound


class PointKind(enum.Enum):
    CORE = "core"
    ARCH_REFERENCE = "arch_reference"


@dataclass(frozen=True)
class CorePoint:
    x: int
    y: int
    kind: PointKind = PointKind.CORE


@dataclass
class OrientationField:
    block_size: int
    theta: np.ndarray  # (blocks_y, blocks_x), radians in [0, pi)
    coherence: np.ndarray  # same shape, [0, 1]; 0 outside the ROI
    shape: tuple[int, int]  # source image (height, width)

    @property
    def blocks_y(self) -> int:
        return self.theta.shape[0]

    @property
    def blocks_x(self) -> int:
        return self.theta.shape[1]

    def block_of(self, x: int, y: int) -> tuple[int, int]:
        bs = self.block_size
        return min(int(y) // bs, self.blocks_y - 1), min(int(x) // bs, self.blocks_x - 1)

    def angle_at(self, x: int, y: int) -> float:
        return float(self.theta[self.block_of(x, y)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "theta", "coherence"])
        for (r, c), t in np.ndenumerate(self.theta):
            w.writerow([r, c, f"{t:.6f}", f"{self.coherence[r, c]:.6f}"])
        return buf.getvalue()


def _block_sums(arr: np.ndarray, bs: int) -> np.ndarray:
    h, w = arr.shape
    ph, pw = -(-h // bs) * bs, -(-w // bs) * bs
    padded = np.zeros((ph, pw))
    padded[:h, :w] = arr
    return padded.reshape(ph // bs, bs, pw // bs, bs).sum(axis=(1, 3))


def orientation_field(img: np.ndarray, roi: Optional[np.ndarray] = None, block_size: int = 16) -> OrientationField:
    """Least-squares block orientation from Sobel gradients.

    ``coherence = |sum of doubled-angle gradient vectors| / sum of squared
    magnitudes``.  Blocks with less than half their pixels inside ``roi``
    get coherence 0 and theta 0.
    """
    if block_size < 4:
        raise ValueError("block_size must be >= 4")
    img = np.asarray(img, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1)
    gy = -ndimage.sobel(img, axis=0)
    vx = _block_sums(2.0 * gx * gy, block_size)
    vy = _block_sums(gx * gx - gy * gy, block_size)
    energy = _block_sums(gx * gx + gy * gy, block_size)
    theta = np.mod(0.5 * np.arctan2(vx, vy) + np.pi / 2.0, np.pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        coherence = np.where(energy > 1e-9, np.hypot(vx, vy) / energy, 0.0)
    coherence = np.clip(coherence, 0.0, 1.0)
    if roi is not None:
        inside = _block_sums(np.asarray(roi, dtype=np.float64), block_size)
        counts = _block_sums(np.ones(img.shape), block_size)
        coherence = np.where(inside * 2 >= counts, coherence, 0.0)
    theta = np.where(coherence > 0, theta, 0.0)
    return OrientationField(block_size, theta, coherence, img.shape)


# ---------------------------------------------------------------------------
# core detection

# closed loop through the 8 neighbours, counter-clockwise with y up
_LOOP = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)]


def smooth_orientation(field: OrientationField) -> np.ndarray:
    """3x3 block average of the doubled-angle unit vectors of valid blocks."""
    valid = field.coherence > 0
    c2 = np.where(valid, np.cos(2.0 * field.theta), 0.0)
    s2 = np.where(valid, np.sin(2.0 * field.theta), 0.0)
    kernel = np.ones((3, 3))
    c2 = ndimage.convolve(c2, kernel, mode="constant")
    s2 = ndimage.convolve(s2, kernel, mode="constant")
    return np.mod(0.5 * np.arctan2(s2, c2), np.pi)


def poincare_index(theta: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Winding number of ``theta`` around each block's 8-neighbour loop.

    Blocks whose loop leaves ``valid`` get 0.
    """
    by, bx = theta.shape
    index = np.zeros((by, bx))
    ok = ndimage.binary_erosion(valid, structure=np.ones((3, 3)), border_value=0)
    padded = np.pad(theta, 1, mode="edge")
    loop = [padded[1 + dr : 1 + dr + by, 1 + dc : 1 + dc + bx] for dr, dc in _LOOP]
    loop.append(loop[0])
    total = np.zeros((by, bx))
    for a, b in zip(loop[:-1], loop[1:]):
        d = b - a
        d = np.where(d > np.pi / 2, d - np.pi, d)
        d = np.where(d <= -np.pi / 2, d + np.pi, d)
        total += d
    index[ok] = total[ok] / (2.0 * np.pi)
    return index


def find_core(field: OrientationField) -> CorePoint:
    """Block centre with the strongest smoothed +1/2 Poincaré response.

    Ties go to the candidate nearest the centroid of the valid blocks.
    """
    valid = field.coherence > 0
    if not valid.any():
        raise NoCoreFound("orientation field has no valid block")
    index = poincare_index(smooth_orientation(field), valid)
    core = (index >= 0.4) & (index <= 0.6)
    if not core.any():
        raise NoCoreFound("no block with Poincaré index near +1/2")
    response = ndimage.convolve(core.astype(float), np.ones((3, 3)), mode="constant")
    cand = np.argwhere(core)
    scores = response[core]
    best = cand[scores == scores.max()]
    cy, cx = np.argwhere(valid).mean(axis=0)
    dist = np.hypot(best[:, 0] - cy, best[:, 1] - cx)
    r, c = best[int(np.argmin(dist))]
    bs = field.block_size
    h, w = field.shape
    return CorePoint(min(int(c * bs + bs // 2), w - 1), min(int(r * bs + bs // 2), h - 1), PointKind.CORE)


# ---------------------------------------------------------------------------
# arch reference


def _runs(column: np.ndarray) -> list[tuple[int, int]]:
    """(first, last) row of each run of set pixels."""
    idx = np.flatnonzero(column)
    if not idx.size:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    ends = np.concatenate((idx[breaks], [idx[-1]]))
    return list(zip(starts.tolist(), ends.tolist()))


def arch_reference(thinned: np.ndarray, roi: Optional[np.ndarray] = None, min_gap: int = 2, persist: int = 3) -> CorePoint:
    """Point where two consecutive ridge crossings of a column are closest.

    Each ROI column is scanned top to bottom; a run of skeleton pixels is one
    crossing and the gap between crossings is measured centre to centre.  A
    gap counts only if the same pair of ridges (upper crossing within 2 rows)
    is found in the next ``persist - 1`` columns too, and it is scored by the
    widest gap over those columns, which suppresses skeleton spurs.  Gaps
    below ``min_gap`` are ignored.  Returns the first pixel of the upper
    crossing of the best pair (ties: leftmost column, then topmost).
    """
    sk = np.asarray(thinned) > 0
    if roi is not None:
        sk = sk & np.asarray(roi, dtype=bool)
    _, ncomp = ndimage.label(sk, structure=np.ones((3, 3)))
    if ncomp < 2:
        raise InsufficientRidges(f"{ncomp} ridge component(s) in ROI")
    pairs = []  # per column: list of (upper_row, gap)
    for col in range(sk.shape[1]):
        runs = _runs(sk[:, col])
        pairs.append(
            [
                (a0, (b0 + b1) / 2.0 - (a0 + a1) / 2.0)
                for (a0, a1), (b0, b1) in zip(runs[:-1], runs[1:])
            ]
        )
    best = None
    ncols = len(pairs)
    for col in range(ncols - persist + 1):
        for row, gap in pairs[col]:
            if gap < min_gap:
                continue
            worst = gap
            cur = row
            for k in range(1, persist):
                match = [(abs(r - cur), g, r) for r, g in pairs[col + k] if abs(r - cur) <= 2]
                if not match:
                    worst = None
                    break
                _, g, cur = min(match)
                worst = max(worst, g)
            if worst is None:
                continue
            key = (worst, col, row)
            if best is None or key < best:
                best = key
    if best is None:
        raise InsufficientRidges("no column crosses two ridges")
    _, col, row = best
    return CorePoint(int(col), int(row), PointKind.ARCH_REFERENCE)


def reference_point(field: OrientationField, thinned: np.ndarray, roi: Optional[np.ndarray] = None) -> CorePoint:
    """Core if one is found, otherwise the arch reference point."""
    try:
        return find_core(field)
    except NoCoreFound:
        return arch_reference(thinned, roi)


def ridge_direction(theta: float) -> tuple[float, float]:
    """Unit vector along ``theta`` on the upward branch (rightward if level)."""
    dx, dy = math.cos(theta), math.sin(theta)
    if dy < -1e-12 or (abs(dy) <= 1e-12 and dx < 0):
        dx, dy = -dx, -dy
    return dx, dy
