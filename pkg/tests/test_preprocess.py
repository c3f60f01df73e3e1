import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fpclu.errors import EmptyRoi
from fpclu.preprocess import (
    EnhanceParams,
    binarize,
    enhance_fft,
    enhance_fft_real,
    equalize_histogram,
    segment,
    segment_blocks,
    gradient_variance_blocks,
    thin,
)
from fpclu.raster import ClassLabel
from fpclu.synth import synth_fingerprint, synth_template
from oracles import binary_shapes, component_count, has_2x2_square, naive_dft2, naive_idft2


# -- equalization --------------------------------------------------------


def test_equalize_constant():
    img = np.full((8, 8), 90, dtype=np.uint8)
    out = equalize_histogram(img)
    assert len(np.unique(out)) == 1


def test_equalize_two_levels_keeps_order():
    img = np.zeros((4, 4), dtype=np.uint8)
    img[:2] = 255
    out = equalize_histogram(img)
    assert len(np.unique(out)) == 2 and out[0, 0] > out[3, 3]


def test_equalize_flattens_histogram():
    rng = np.random.default_rng(0)
    img = np.clip(rng.normal(100, 20, (256, 256)), 0, 255).astype(np.uint8)
    out = equalize_histogram(img)
    assert np.bincount(out.ravel()).max() <= np.bincount(img.ravel()).max()
    assert out.min() == 0 and out.max() == 255


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, (10, 10)))
def test_equalize_is_monotone(img):
    out = equalize_histogram(img)
    order = np.argsort(img.ravel(), kind="stable")
    assert np.all(np.diff(out.ravel()[order].astype(int)) >= 0)


# -- block FFT enhancement ----------------------------------------------


def test_enhance_exponent_zero_is_identity():
    rng = np.random.default_rng(1)
    block = rng.uniform(0, 255, (32, 32))
    assert np.max(np.abs(enhance_fft_real(block, EnhanceParams(32, 0.0)) - block)) < 1e-6


def test_enhance_matches_dft_definition():
    rng = np.random.default_rng(2)
    block = rng.uniform(0, 255, (32, 32))
    spectrum = naive_dft2(block)
    expected = naive_idft2(spectrum * np.abs(spectrum) ** 0.55).real
    got = enhance_fft_real(block, EnhanceParams(32, 0.55))
    assert np.allclose(got, expected, rtol=1e-9, atol=1e-6 * np.abs(expected).max())


def test_enhance_constant_block_closed_form():
    c = 3.0
    got = enhance_fft_real(np.full((32, 32), c), EnhanceParams(32, 0.55))
    assert np.allclose(got, c * (1024 * c) ** 0.55, rtol=1e-9)


def test_enhance_pads_and_crops():
    img = np.random.default_rng(3).uniform(0, 255, (40, 50))
    out = enhance_fft(img)
    assert out.shape == (40, 50) and out.dtype == np.uint8
    assert out.min() == 0 and out.max() == 255


def test_enhance_amplifies_ridge_peak():
    img = synth_fingerprint(ClassLabel.ARCH, 5).astype(float)
    block = img[112:144, 112:144]

    def peak_ratio(b):
        mag = np.abs(np.fft.fft2(b - b.mean()))
        mag[0, 0] = 0
        return mag.max() / np.median(mag[mag > 0])

    enhanced = enhance_fft_real(block, EnhanceParams(32, 0.55))
    assert peak_ratio(enhanced) > peak_ratio(block)


def test_enhance_params_validation():
    with pytest.raises(ValueError):
        EnhanceParams(24, 0.5)
    with pytest.raises(ValueError):
        EnhanceParams(32, -1.0)


# -- binarization --------------------------------------------------------


def test_binarize_uniform_block():
    assert not binarize(np.full((16, 16), 77)).any()


def test_binarize_single_bright_pixel():
    img = np.full((16, 16), 100.0)
    img[5, 9] = 200
    out = binarize(img, 16)
    assert out.sum() == 1 and out[5, 9] == 1


def test_binarize_checkerboard():
    img = (np.indices((32, 32)).sum(axis=0) % 2) * 255
    assert np.array_equal(binarize(img, 16), (img == 255).astype(np.uint8))


def test_binarize_is_block_local():
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 255, (32, 32))
    other = img.copy()
    other[16:, 16:] = rng.uniform(0, 255, (16, 16))
    a, b = binarize(img, 16), binarize(other, 16)
    assert np.array_equal(a[:16], b[:16]) and np.array_equal(a[:, :16], b[:, :16])


# -- segmentation --------------------------------------------------------


def test_segment_constant_image():
    with pytest.raises(EmptyRoi):
        segment(np.full((64, 64), 50, dtype=np.uint8))


def test_segment_noise_is_full_frame():
    img = np.random.default_rng(5).integers(0, 256, (128, 128)).astype(np.uint8)
    assert segment(img).all()


@pytest.mark.parametrize("label", list(ClassLabel))
def test_segment_covers_ridge_support(label):
    t = synth_template(label, 11)
    img = synth_fingerprint(label, 11)
    roi = segment(img)
    ridge = t.support() > 0.5
    assert (roi & ridge).sum() >= 0.9 * ridge.sum()


def test_segment_monotone_in_threshold():
    img = synth_fingerprint(ClassLabel.RIGHT_LOOP, 6)
    var = gradient_variance_blocks(img)
    lo = segment_blocks(img, 0.5 * var.mean())
    hi = segment_blocks(img, 1.5 * var.mean())
    assert not (hi & ~lo).any()


# -- thinning ------------------------------------------------------------


def test_thin_keeps_diagonal_line():
    img = np.eye(20, dtype=np.uint8)
    assert np.array_equal(thin(img), img)


def test_thin_empty():
    assert not thin(np.zeros((10, 10), dtype=np.uint8)).any()


def test_thin_bar_matches_reference_extent():
    from skimage.morphology import skeletonize

    img = np.zeros((11, 30), dtype=np.uint8)
    img[4:7, 5:25] = 1
    ours = thin(img)
    ref = skeletonize(img.astype(bool))
    assert ours.sum(axis=0).max() == 1  # one pixel wide
    cols, ref_cols = np.flatnonzero(ours.any(axis=0)), np.flatnonzero(ref.any(axis=0))
    assert abs(cols[0] - ref_cols[0]) <= 1 and abs(cols[-1] - ref_cols[-1]) <= 1


@pytest.mark.parametrize("shape", binary_shapes(18, seed=9), ids=lambda s: f"px{int(s.sum())}")
def test_thin_invariants(shape):
    out = thin(shape)
    assert not (out & ~shape.astype(bool)).any()
    assert not has_2x2_square(out)
    assert np.array_equal(thin(out), out)
    assert component_count(out) == component_count(shape)
