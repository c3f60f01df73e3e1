import math

import numpy as np
import pytest

from fpclu.errors import InsufficientRidges, NoCoreFound
from fpclu.orientfield import (
    CorePoint,
    OrientationField,
    PointKind,
    arch_reference,
    find_core,
    orientation_field,
    poincare_index,
    reference_point,
    ridge_direction,
)
from fpclu.preprocess import binarize, enhance_fft, equalize_histogram, segment, thin
from fpclu.raster import ClassLabel
from fpclu.synth import synth_fingerprint, synth_template


def _stripes(angle, size=128, wavelength=9.0):
    rows, cols = np.mgrid[0:size, 0:size]
    x, y = cols.astype(float), -rows.astype(float)
    # ridges run along ``angle`` (y up); phase varies along the normal
    phase = -x * math.sin(angle) + y * math.cos(angle)
    return 128 + 100 * np.cos(2 * np.pi * phase / wavelength)


def _ang_diff(a, b):
    d = np.mod(a - b, np.pi)
    return np.minimum(d, np.pi - d)


def test_parallel_ridges_at_45_degrees():
    f = orientation_field(_stripes(math.pi / 4), block_size=16)
    ok = _ang_diff(f.theta, math.pi / 4) < 0.05
    assert ok.mean() >= 0.95


def test_constant_image_has_zero_coherence():
    f = orientation_field(np.full((64, 64), 9.0))
    assert not f.coherence.any()


def test_rotation_by_90_degrees():
    img = _stripes(0.3)
    a = orientation_field(img)
    b = orientation_field(np.rot90(img))  # anticlockwise
    inner = (slice(1, -1), slice(1, -1))
    rotated_back = np.rot90(b.theta, -1)
    assert np.all(_ang_diff(rotated_back[inner], a.theta[inner] + np.pi / 2) < 0.05)


def test_ranges():
    f = orientation_field(synth_fingerprint(ClassLabel.WHORL, 2))
    assert f.theta.min() >= 0 and f.theta.max() < np.pi
    assert f.coherence.min() >= 0 and f.coherence.max() <= 1


def test_roi_blocks_outside_get_zero_coherence():
    img = _stripes(1.0, size=64)
    roi = np.zeros((64, 64), dtype=bool)
    roi[:32] = True
    f = orientation_field(img, roi, 16)
    assert not f.coherence[2:].any() and f.coherence[:2].all()


def test_csv_export():
    f = orientation_field(_stripes(0.5, size=32))
    lines = f.to_csv().splitlines()
    assert lines[0] == "row,col,theta,coherence" and len(lines) == 1 + 4


def _field_from_template(t, bs=16):
    n = t.size // bs
    centres = np.arange(n) * bs + bs / 2.0
    cc, rr = np.meshgrid(centres, centres)
    theta = t.orientation(cc, rr)
    valid = t.support()[rr.astype(int), cc.astype(int)] > 0.3
    return OrientationField(bs, np.where(valid, theta, 0.0), valid.astype(float), (t.size, t.size))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_core_on_left_loop_field(seed):
    t = synth_template(ClassLabel.LEFT_LOOP, seed)
    core = find_core(_field_from_template(t))
    cx, cy = t.cores[0]
    assert math.hypot(core.x - cx, core.y - cy) <= 2 * 16
    assert core.kind is PointKind.CORE


def test_core_on_whorl_is_one_of_two():
    t = synth_template(ClassLabel.WHORL, 4)
    core = find_core(_field_from_template(t))
    assert min(math.hypot(core.x - cx, core.y - cy) for cx, cy in t.cores) <= 2 * 16


def test_core_on_rendered_loop_image():
    t = synth_template(ClassLabel.RIGHT_LOOP, 8)
    img = synth_fingerprint(ClassLabel.RIGHT_LOOP, 8)
    enhanced = enhance_fft(equalize_histogram(img))
    core = find_core(orientation_field(enhanced, segment(enhanced)))
    cx, cy = t.cores[0]
    assert math.hypot(core.x - cx, core.y - cy) <= 2 * 16


def test_uniform_field_has_no_core():
    theta = np.full((8, 8), 0.7)
    with pytest.raises(NoCoreFound):
        find_core(OrientationField(16, theta, np.ones((8, 8)), (128, 128)))


def test_core_translation_equivariance():
    base = synth_template(ClassLabel.TENTED_ARCH, 5)
    f = _field_from_template(base)
    shift = 2
    theta = np.roll(f.theta, shift, axis=1)
    coh = np.roll(f.coherence, shift, axis=1)
    coh[:, :shift] = 0
    a = find_core(f)
    b = find_core(OrientationField(16, np.where(coh > 0, theta, 0), coh, f.shape))
    assert abs((b.x - a.x) - shift * 16) <= 16 and abs(b.y - a.y) <= 16


def test_poincare_index_of_planted_singularity():
    # theta = half the polar angle has a +1/2 winding around the origin
    by = bx = 9
    yy, xx = np.mgrid[0:by, 0:bx]
    theta = np.mod(0.5 * np.arctan2(-(yy - 4.5), xx - 4.5), np.pi)
    idx = poincare_index(theta, np.ones((by, bx), dtype=bool))
    # the four blocks around the point each enclose it with their loop
    expected = np.zeros((by, bx))
    expected[4:6, 4:6] = 0.5
    assert np.allclose(idx, expected, atol=1e-9)


def test_arch_reference_picks_the_close_pair():
    img = np.zeros((64, 64), dtype=np.uint8)
    img[10, 5:40] = 1
    img[14, 5:40] = 1  # 4 px pair
    img[30, 2:60] = 1
    img[40, 2:60] = 1  # 10 px pair
    p = arch_reference(img)
    assert p.kind is PointKind.ARCH_REFERENCE
    assert p.y in (10, 14) and p.x == 5


def test_arch_reference_single_ridge():
    img = np.zeros((32, 32), dtype=np.uint8)
    img[10, 2:30] = 1
    with pytest.raises(InsufficientRidges):
        arch_reference(img)


def test_arch_reference_on_synthetic_arch():
    t = synth_template(ClassLabel.ARCH, 1)
    img = synth_fingerprint(ClassLabel.ARCH, 1)
    enhanced = enhance_fft(equalize_histogram(img))
    roi = segment(enhanced)
    from scipy import ndimage

    interior = ndimage.binary_erosion(roi, np.ones((3, 3)), iterations=16)
    sk = thin(binarize(enhanced) * roi) * interior
    f = orientation_field(enhanced, roi)
    p = reference_point(f, sk, interior)
    assert p.kind is PointKind.ARCH_REFERENCE
    assert interior[p.y, p.x]
    # the ridge it starts lies in the curved band around the arch crest
    centre = (t.size - 1) / 2 + t.params["x0"]
    assert abs(p.x - centre) <= t.params["sigma"] * 2.5


def test_ridge_direction_branch():
    assert ridge_direction(0.0) == pytest.approx((1.0, 0.0))
    dx, dy = ridge_direction(math.radians(135))
    assert dy > 0 and dx < 0
