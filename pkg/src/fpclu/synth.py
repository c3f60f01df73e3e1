"""Deterministic synthetic fingerprints for the five classes.

Each class template is a scalar "ridge coordinate" ``s(x, y)`` in pixels whose
level sets are the ridge lines; the image is ``cos(2*pi*(s/wavelength + phase))``
inside an elliptical finger mask, plus Gaussian noise.  Ridges are bright.

* arch:         ``s = y - A(y) * exp(-x^2 / 2 sigma^2)``; no singular point
* tented arch:  distance to a ray pointing straight down from the core
* left loop:    distance to a ray leaving the core towards the lower left
* right loop:   same, towards the lower right
* whorl:        distance to a short vertical segment; its two ends are cores

Template coordinates use x to the right and y *up*, origin at the image
centre. Public methods take pixel (col, row) arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SizeTooSmall
from .raster import ClassLabel

MIN_SIZE = 128
DEFAULT_SIZE = 256


@dataclass(frozen=True)
class SynthTemplate:
    label: ClassLabel
    size: int
    wavelength: float
    phase: float
    noise_sigma: float
    # core points in (col, row) pixel coordinates
    cores: tuple[tuple[float, float], ...]
    params: dict = field(default_factory=dict, compare=False)

    # -- geometry ---------------------------------------------------------
    def _xy(self, col, row):
        c = (self.size - 1) / 2.0
        return np.asarray(col, dtype=float) - c, c - np.asarray(row, dtype=float)

    def ridge_coordinate(self, col, row) -> np.ndarray:
        x, y = self._xy(col, row)
        p = self.params
        if self.label is ClassLabel.ARCH:
            amp = p["amp"] * (1.0 - 0.5 * np.tanh((y - p["y0"]) / p["w"]))
            return y - amp * np.exp(-((x - p["x0"]) ** 2) / (2.0 * p["sigma"] ** 2))
        return _segment_distance(x, y, p["ax"], p["ay"], p["ux"], p["uy"], p["length"])

    def gradient(self, col, row) -> tuple[np.ndarray, np.ndarray]:
        """Analytic gradient of the ridge coordinate in template (x right, y up) axes."""
        x, y = self._xy(col, row)
        p = self.params
        if self.label is ClassLabel.ARCH:
            g = np.exp(-((x - p["x0"]) ** 2) / (2.0 * p["sigma"] ** 2))
            t = np.tanh((y - p["y0"]) / p["w"])
            amp = p["amp"] * (1.0 - 0.5 * t)
            damp = -0.5 * p["amp"] * (1.0 - t**2) / p["w"]
            gx = amp * g * (x - p["x0"]) / p["sigma"] ** 2
            gy = 1.0 - damp * g
            return gx, gy
        qx, qy = _closest_on_segment(x, y, p["ax"], p["ay"], p["ux"], p["uy"], p["length"])
        dx, dy = x - qx, y - qy
        norm = np.hypot(dx, dy)
        norm = np.where(norm == 0, 1.0, norm)
        return dx / norm, dy / norm

    def orientation(self, col, row) -> np.ndarray:
        """Ridge direction in radians, [0, pi), x right / y up."""
        gx, gy = self.gradient(col, row)
        return np.mod(np.arctan2(gy, gx) + np.pi / 2.0, np.pi)

    def support(self) -> np.ndarray:
        """Soft finger mask in [0, 1] over the pixel grid."""
        p = self.params
        rows, cols = np.mgrid[0 : self.size, 0 : self.size]
        c = (self.size - 1) / 2.0
        r = np.sqrt(((cols - c - p["mask_dx"]) / p["mask_rx"]) ** 2 + ((rows - c - p["mask_dy"]) / p["mask_ry"]) ** 2)
        edge = 6.0 / min(p["mask_rx"], p["mask_ry"])
        return np.clip((1.0 - r) / edge, 0.0, 1.0)


def _closest_on_segment(x, y, ax, ay, ux, uy, length):
    t = (x - ax) * ux + (y - ay) * uy
    t = np.clip(t, 0.0, length)
    return ax + t * ux, ay + t * uy


def _segment_distance(x, y, ax, ay, ux, uy, length):
    qx, qy = _closest_on_segment(x, y, ax, ay, ux, uy, length)
    return np.hypot(x - qx, y - qy)


_RAY_TILT = {
    # angle of the ray measured from straight down, positive towards +x
    ClassLabel.TENTED_ARCH: 0.0,
    ClassLabel.LEFT_LOOP: -math.radians(50.0),
    ClassLabel.RIGHT_LOOP: math.radians(50.0),
}


def synth_template(label: ClassLabel, rng_seed: int, size: int = DEFAULT_SIZE) -> SynthTemplate:
    if size < MIN_SIZE:
        raise SizeTooSmall(f"size {size} < {MIN_SIZE}")
    label = ClassLabel(label)
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed) & 0xFFFFFFFF, label.index]))
    scale = size / DEFAULT_SIZE
    wavelength = float(rng.uniform(8.0, 12.0))
    phase = float(rng.uniform(0.0, 1.0))
    noise_sigma = float(rng.uniform(6.0, 14.0))
    params = {
        "mask_rx": 0.40 * size * rng.uniform(0.95, 1.05),
        "mask_ry": 0.46 * size * rng.uniform(0.95, 1.05),
        "mask_dx": rng.uniform(-4.0, 4.0) * scale,
        "mask_dy": rng.uniform(-4.0, 4.0) * scale,
    }
    half = (size - 1) / 2.0
    jx, jy = rng.uniform(-10.0, 10.0, size=2) * scale
    if label is ClassLabel.ARCH:
        params.update(
            amp=rng.uniform(28.0, 40.0) * scale,
            sigma=rng.uniform(38.0, 50.0) * scale,
            x0=jx,
            y0=jy,
            w=rng.uniform(30.0, 40.0) * scale,
        )
        cores: tuple[tuple[float, float], ...] = ()
    elif label is ClassLabel.WHORL:
        length = rng.uniform(28.0, 40.0) * scale
        ax, ay = jx, jy + length / 2.0 + 10.0 * scale
        params.update(ax=ax, ay=ay, ux=0.0, uy=-1.0, length=length)
        cores = ((half + ax, half - ay), (half + ax, half - (ay - length)))
    else:
        tilt = _RAY_TILT[label] + math.radians(rng.uniform(-8.0, 8.0))
        ax, ay = jx, jy + 20.0 * scale
        params.update(ax=ax, ay=ay, ux=math.sin(tilt), uy=-math.cos(tilt), length=4.0 * size)
        cores = ((half + ax, half - ay),)
    return SynthTemplate(label, size, wavelength, phase, noise_sigma, cores, params)


def render(template: SynthTemplate, rng_seed: int) -> np.ndarray:
    size = template.size
    rows, cols = np.mgrid[0:size, 0:size]
    s = template.ridge_coordinate(cols, rows)
    ridges = np.cos(2.0 * np.pi * (s / template.wavelength + template.phase))
    mask = template.support()
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed) & 0xFFFFFFFF, template.label.index, 1]))
    noise = rng.normal(0.0, template.noise_sigma, size=(size, size))
    img = 128.0 + 100.0 * mask * ridges + noise
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_fingerprint(label: ClassLabel, rng_seed: int, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Render a labelled synthetic fingerprint; pure function of its arguments."""
    return render(synth_template(label, rng_seed, size), rng_seed)


def poincare_singularities(template: SynthTemplate, step: int = 8, tol: float = 0.1) -> list[tuple[float, float, float]]:
    """Singular points of the generating field, found on a ``step``-pixel lattice.

    Returns ``(col, row, index)`` for every lattice cell (restricted to the
    finger mask) whose boundary winding number is within ``tol`` of a
    non-zero multiple of one half.
    """
    size = template.size
    coords = np.arange(step / 2.0, size, step)
    cc, rr = np.meshgrid(coords, coords)
    theta = template.orientation(cc, rr)
    inside = template.support()[rr.astype(int), cc.astype(int)] > 0.5
    found = []
    for i in range(len(coords) - 1):
        for j in range(len(coords) - 1):
            if not inside[i : i + 2, j : j + 2].all():
                continue
            # counter-clockwise with y up: down the left side, then back up the right
            loop = [theta[i, j], theta[i + 1, j], theta[i + 1, j + 1], theta[i, j + 1], theta[i, j]]
            total = 0.0
            for a, b in zip(loop[:-1], loop[1:]):
                d = b - a
                if d > np.pi / 2:
                    d -= np.pi
                elif d < -np.pi / 2:
                    d += np.pi
                total += d
            index = total / (2.0 * np.pi)
            if abs(index) > tol and abs(index * 2 - round(index * 2)) < 2 * tol:
                found.append(((coords[j] + coords[j + 1]) / 2, (coords[i] + coords[i + 1]) / 2, index))
    return found


def image_seed(rng_seed: int, index: int) -> int:
    """Per-image seed derived from the dataset seed and the image's position."""
    return int(np.random.SeedSequence([int(rng_seed) & 0xFFFFFFFF, int(index)]).generate_state(1)[0])


def dataset_plan(count_per_class: int, rng_seed: int) -> list[tuple[str, ClassLabel, int]]:
    """``(image_id, label, image_seed)`` for a balanced set.

    Classes are interleaved round-robin so that every prefix of the list is
    as balanced as it can be.
    """
    if count_per_class < 0:
        raise ValueError("count_per_class must be >= 0")
    plan = []
    for j in range(count_per_class):
        for label in ClassLabel:
            idx = len(plan)
            plan.append((f"fp{idx + 1:04d}", label, image_seed(rng_seed, idx)))
    return plan
