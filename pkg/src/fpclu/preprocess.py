"""Image preprocessing: equalization, block FFT enhancement, binarization,
segmentation and thinning.

Order used by the pipeline: equalize -> enhance -> binarize, with the ROI
computed on the raw image and the skeleton computed from the ROI-masked
binary image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyRoi


@dataclass(frozen=True)
class EnhanceParams:
    block_size: int = 32
    exponent_k: float = 0.55

    def __post_init__(self) -> None:
        if self.block_size < 1 or self.block_size & (self.block_size - 1):
            raise ValueError(f"block_size must be a power of two, got {self.block_size}")
        if self.exponent_k < 0:
            raise ValueError("exponent_k must be >= 0")


def equalize_histogram(img: np.ndarray) -> np.ndarray:
    """CDF-mapping histogram equalization onto [0, 255].

    A constant image has no spread to redistribute and is returned as is.
    """
    img = np.asarray(img, dtype=np.uint8)
    hist = np.bincount(img.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[hist > 0][0]
    total = img.size
    if total == cdf_min:
        return img.copy()
    lut = np.floor((cdf - cdf_min) / (total - cdf_min) * 255.0 + 0.5)
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return lut[img]


def _blocks(arr: np.ndarray, bs: int) -> np.ndarray:
    h, w = arr.shape
    return arr.reshape(h // bs, bs, w // bs, bs).swapaxes(1, 2)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    nby, nbx, bs, _ = blocks.shape
    return blocks.swapaxes(1, 2).reshape(nby * bs, nbx * bs)


def enhance_fft_real(img: np.ndarray, p: EnhanceParams = EnhanceParams()) -> np.ndarray:
    """Real-valued block result ``IDFT(F * |F|**k)`` before rescaling.

    The image is zero-padded to a multiple of ``p.block_size``; the returned
    array is cropped back to the input shape.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    bs = p.block_size
    ph, pw = -(-h // bs) * bs, -(-w // bs) * bs
    padded = np.zeros((ph, pw))
    padded[:h, :w] = img
    spectrum = np.fft.fft2(_blocks(padded, bs))
    # |F|**0 == 1 everywhere, including empty bins
    filtered = spectrum * np.abs(spectrum) ** p.exponent_k
    out = np.fft.ifft2(filtered).real
    return _unblocks(out)[:h, :w]


def rescale_to_gray(values: np.ndarray) -> np.ndarray:
    """Global min-max rescale to [0, 255], rounding half up; flat input maps to 0."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = (values - lo) * (255.0 / (hi - lo))
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def enhance_fft(img: np.ndarray, p: EnhanceParams = EnhanceParams()) -> np.ndarray:
    return rescale_to_gray(enhance_fft_real(img, p))


def binarize(img: np.ndarray, block_size: int = 16) -> np.ndarray:
    """1 where a pixel is strictly brighter than the mean of its block.

    Blocks tile the image from the top-left corner; edge blocks may be smaller.
    """
    if block_size < 2:
        raise ValueError("block_size must be >= 2")
    img = np.asarray(img, dtype=np.float64)
    out = np.zeros(img.shape, dtype=np.uint8)
    h, w = img.shape
    for r in range(0, h, block_size):
        for c in range(0, w, block_size):
            block = img[r : r + block_size, c : c + block_size]
            out[r : r + block_size, c : c + block_size] = block > block.mean()
    return out


# ---------------------------------------------------------------------------
# segmentation


def gradient_variance_blocks(img: np.ndarray, block_size: int = 16) -> np.ndarray:
    """Per-block variance of the Sobel gradient magnitude."""
    img = np.asarray(img, dtype=np.float64)
    mag = np.hypot(ndimage.sobel(img, axis=1), ndimage.sobel(img, axis=0))
    h, w = img.shape
    nby, nbx = -(-h // block_size), -(-w // block_size)
    var = np.zeros((nby, nbx))
    for i in range(nby):
        for j in range(nbx):
            var[i, j] = mag[i * block_size : (i + 1) * block_size, j * block_size : (j + 1) * block_size].var()
    return var


def segment_blocks(img: np.ndarray, tau: float, block_size: int = 16) -> np.ndarray:
    """Raw block mask before morphology: variance >= tau (and non-zero)."""
    var = gradient_variance_blocks(img, block_size)
    return (var >= tau) & (var > 0)


def segment(img: np.ndarray, block_size: int = 16, tau_factor: float = 0.1, min_blocks: int = 4) -> np.ndarray:
    """Gradient-variance ROI as a boolean pixel mask.

    ``tau = tau_factor * mean(block variances)``.  The block mask has its
    holes filled and 8-connected components smaller than ``min_blocks``
    removed.
    """
    img = np.asarray(img)
    var = gradient_variance_blocks(img, block_size)
    tau = tau_factor * var.mean()
    blocks = (var >= tau) & (var > 0)
    blocks = ndimage.binary_fill_holes(blocks)
    labels, count = ndimage.label(blocks, structure=np.ones((3, 3)))
    if count:
        sizes = np.bincount(labels.ravel())
        keep = sizes >= min_blocks
        keep[0] = False
        blocks = keep[labels]
    if not blocks.any():
        raise EmptyRoi("no block passes the gradient-variance threshold")
    h, w = img.shape
    mask = np.repeat(np.repeat(blocks, block_size, axis=0), block_size, axis=1)
    return mask[:h, :w]


# ---------------------------------------------------------------------------
# thinning
#
# Neighbour bits, clockwise from north: P2=N, P3=NE, P4=E, P5=SE, P6=S,
# P7=SW, P8=W, P9=NW  ->  bit 0..7.

_OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def _neighbour_codes(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img.astype(np.uint8), 1)
    h, w = img.shape
    code = np.zeros((h, w), dtype=np.uint8)
    for bit, (dr, dc) in enumerate(_OFFSETS):
        code |= padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] << bit
    return code


def _ring_groups(code: int) -> int:
    """8-connected groups formed by the foreground neighbours of a pixel."""
    pts = [_OFFSETS[b] for b in range(8) if (code >> b) & 1]
    seen: set = set()
    groups = 0
    for start in pts:
        if start in seen:
            continue
        groups += 1
        stack = [start]
        seen.add(start)
        while stack:
            r, c = stack.pop()
            for q in pts:
                if q not in seen and abs(q[0] - r) <= 1 and abs(q[1] - c) <= 1:
                    seen.add(q)
                    stack.append(q)
    return groups


def _zs_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    first = np.zeros(256, dtype=bool)
    second = np.zeros(256, dtype=bool)
    # removable without disconnecting anything: one neighbour group, not an end
    removable = np.zeros(256, dtype=bool)
    for code in range(256):
        p = [(code >> b) & 1 for b in range(8)]
        p2, p3, p4, p5, p6, p7, p8, p9 = p
        b = sum(p)
        a = sum(1 for k in range(8) if p[k] == 0 and p[(k + 1) % 8] == 1)
        base = 2 <= b <= 6 and a == 1
        first[code] = base and p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
        second[code] = base and p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
        removable[code] = b >= 2 and _ring_groups(code) == 1
    return first, second, removable


_ZS_FIRST, _ZS_SECOND, _REMOVABLE = _zs_tables()


def _protect_components(img: np.ndarray, marked: np.ndarray) -> np.ndarray:
    """Unmark one pixel of every 8-component that would vanish entirely."""
    labels, count = ndimage.label(img, structure=np.ones((3, 3)))
    if not count:
        return marked
    total = np.bincount(labels.ravel(), minlength=count + 1)
    hit = np.bincount(labels[marked], minlength=count + 1)
    doomed = np.flatnonzero((hit == total) & (total > 0))
    doomed = doomed[doomed > 0]
    if doomed.size:
        uniq, idx = np.unique(labels.ravel(), return_index=True)
        first = np.zeros(count + 1, dtype=np.int64)
        first[uniq] = idx
        marked = marked.copy()
        marked.ravel()[first[doomed]] = False
    return marked


def _zhang_suen_pass(img: np.ndarray) -> bool:
    changed = False
    for table in (_ZS_FIRST, _ZS_SECOND):
        marked = img.astype(bool) & table[_neighbour_codes(img)]
        if marked.any():
            marked = _protect_components(img, marked)
            img[marked] = 0
            changed = changed or bool(marked.any())
    return changed


def _square_corners(img: np.ndarray) -> np.ndarray:
    """Top-left corners of all-foreground 2x2 squares."""
    sq = img[:-1, :-1] & img[:-1, 1:] & img[1:, :-1] & img[1:, 1:]
    return np.argwhere(sq)


def _detach_cost(img: np.ndarray, corner: tuple[int, int], square: list) -> np.ndarray:
    """Pixels cut off from the rest of the square if ``corner`` is deleted."""
    trial = img.copy()
    trial[corner] = 0
    labels, _ = ndimage.label(trial, structure=np.ones((3, 3)))
    keep = labels[next(q for q in square if q != corner)]
    whole, _ = ndimage.label(img, structure=np.ones((3, 3)))
    mine = whole == whole[corner]
    return mine & (labels != keep) & (trial > 0)


def _break_squares(img: np.ndarray) -> bool:
    """Sequentially delete pixels until no 2x2 square is left.

    A pixel may go when its remaining neighbours stay 8-connected among
    themselves, so no component splits (a one-pixel hole may open).  When
    every pixel of a square is a cut point (an X through the square), the
    corner with the smallest dangling branch is removed together with that
    branch.
    """
    changed = False
    h, w = img.shape
    while True:
        corners = _square_corners(img)
        if not len(corners):
            return changed
        for r, c in corners:
            square = [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)]
            if not all(img[q] for q in square):
                continue
            for rr, cc in square:
                code = 0
                for bit, (dr, dc) in enumerate(_OFFSETS):
                    y, x = rr + dr, cc + dc
                    if 0 <= y < h and 0 <= x < w and img[y, x]:
                        code |= 1 << bit
                if _REMOVABLE[code]:
                    img[rr, cc] = 0
                    break
            else:
                cuts = [(_detach_cost(img, q, square), q) for q in square]
                branch, q = min(cuts, key=lambda t: (int(t[0].sum()), t[1]))
                img[branch] = 0
                img[q] = 0
            changed = True


def thin(img: np.ndarray) -> np.ndarray:
    """Zhang-Suen parallel thinning iterated to a fixpoint.

    Two guards keep the 8-component count unchanged: no component is ever
    deleted entirely, and leftover 2x2 squares are broken one pixel at a time
    only where that cannot split a component.
    """
    out = (np.asarray(img) > 0).astype(np.uint8)
    while True:
        while _zhang_suen_pass(out):
            pass
        if not _break_squares(out):
            return out
