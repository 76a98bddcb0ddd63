import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from widefov.imaging import (
    NUM_PATCHES,
    Patch,
    PatchGrid,
    as_image,
    assemble,
    assemble_tensor,
    bicubic_resize,
    decode_image,
    encode_png,
    feather_seams,
    luminance,
    partition,
    resize_to_multiple,
    tile,
    to_uint8,
)

sides = st.integers(min_value=1, max_value=6).map(lambda k: 8 * k)


def img_from_seed(seed, h, w):
    return np.random.default_rng(seed).random((h, w, 3), dtype=np.float32)


@given(st.integers(0, 2**31), sides, sides)
def test_partition_then_assemble_without_blending_is_bit_exact(seed, h, w):
    img = img_from_seed(seed, h, w)
    patches = partition(img)
    assert len(patches) == NUM_PATCHES
    assert sum(p.pixels.size for p in patches) == img.size
    assert np.array_equal(assemble(patches, b=0), img)


def test_partition_is_row_major_with_expected_patch_size():
    img = img_from_seed(0, 512, 512)
    patches = partition(img)
    assert [p.grid_pos for p in patches[:3]] == [(0, 0), (0, 1), (0, 2)]
    assert patches[8].grid_pos == (1, 0)
    assert all(p.pixels.shape == (64, 64, 3) for p in patches)
    assert np.array_equal(patches[9].pixels, img[64:128, 64:128])


def test_partition_rejects_indivisible_dims():
    with pytest.raises(ValueError, match="not divisible"):
        partition(np.zeros((100, 64, 3), np.float32))


@given(st.floats(0, 1, width=32), st.integers(0, 4))
def test_constant_patches_assemble_to_constant(c, b):
    img = np.full((64, 64, 3), c, np.float32)
    out = assemble(partition(img), b)
    assert np.all(out == np.float32(c)) or np.allclose(out, c, atol=1e-7)


def feather_oracle(left_val, right_val, b, width):
    """Per-pixel linear ramp across one vertical seam at column ``width``."""
    cols = {}
    for x in range(width - b, width + b):
        alpha = (x - (width - b) + 0.5) / (2 * b)
        cols[x] = (1 - alpha) * left_val + alpha * right_val
    return cols


def test_feather_two_tone_seam_matches_per_pixel_oracle():
    pw = 8
    img = np.zeros((64, 64, 3), np.float32)
    img[:, pw:2 * pw] = 1.0  # patch column 1 is white, its neighbours black
    out = feather_seams(img, PatchGrid(8, 8), b=2)
    expect = feather_oracle(0.0, 1.0, 2, pw)
    for x, v in expect.items():
        assert out[4, x, 0] == pytest.approx(v, abs=1e-7)
    # far from any seam the value is untouched
    assert out[4, 12, 0] == 1.0
    assert out[4, 3, 0] == 0.0


def test_assemble_rejects_duplicate_or_missing_positions():
    patches = partition(img_from_seed(1, 64, 64))
    patches[5] = Patch(patches[5].pixels, (0, 0))
    with pytest.raises(ValueError, match="duplicated or missing"):
        tile(patches)
    with pytest.raises(ValueError):
        tile(patches[:10])


@given(st.integers(0, 2**31), st.integers(1, 4))
def test_feathering_is_a_convex_combination(seed, b):
    img = img_from_seed(seed, 64, 64)
    out = assemble(partition(img), b)
    assert out.min() >= img.min() - 1e-7 and out.max() <= img.max() + 1e-7


@given(st.integers(0, 2**31), st.integers(0, 4))
def test_torch_assembly_matches_numpy_assembly(seed, b):
    img = img_from_seed(seed, 64, 64)
    patches = partition(img)
    stack = torch.from_numpy(np.stack([p.pixels for p in patches])).permute(0, 3, 1, 2)
    t = assemble_tensor(stack, b)[0].permute(1, 2, 0).numpy()
    np.testing.assert_allclose(t, assemble(patches, b), atol=1e-6)


@pytest.mark.parametrize("shape,expected", [((1024, 1024), (1024, 1024)), ((1000, 700), (1024, 704)),
                                            ((513, 513), (576, 576))])
def test_resize_to_multiple_ceiling(shape, expected):
    img = np.full(shape + (3,), 0.5, np.float32)
    out = resize_to_multiple(img, 64)
    assert out.shape[:2] == expected


def test_resize_to_multiple_identity_and_idempotence():
    img = img_from_seed(3, 128, 192)
    assert resize_to_multiple(img, 64) is img or np.array_equal(resize_to_multiple(img, 64), img)
    once = resize_to_multiple(img_from_seed(4, 70, 90), 64)
    assert np.array_equal(resize_to_multiple(once, 64), once)
    with pytest.raises(ValueError):
        resize_to_multiple(img, 0)


def test_luminance_matches_double_loop():
    img = img_from_seed(5, 9, 7)
    y = luminance(img)
    for i in range(9):
        for j in range(7):
            r, g, b = (float(v) for v in img[i, j])
            assert y[i, j] == pytest.approx(0.299 * r + 0.587 * g + 0.114 * b, abs=1e-6)
    assert np.allclose(luminance(np.ones((4, 4, 3))), 1.0)
    red = np.zeros((4, 4, 3))
    red[..., 0] = 1
    assert np.allclose(luminance(red), 0.299)


def test_as_image_validation():
    with pytest.raises(ValueError, match="HxWx3"):
        as_image(np.zeros((8, 8)))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        as_image(np.full((8, 8, 3), 2.0))
    with pytest.raises(ValueError, match="non-finite"):
        as_image(np.full((8, 8, 3), np.nan))


def test_png_round_trip_is_exact_for_8bit_values():
    img = to_uint8(img_from_seed(6, 16, 16)).astype(np.float32) / 255.0
    assert np.array_equal(decode_image(encode_png(img)), img)
    with pytest.raises(ValueError):
        decode_image(b"not an image")


def test_bicubic_resize_keeps_range_and_identity():
    img = img_from_seed(7, 32, 32)
    assert np.array_equal(bicubic_resize(img, 32, 32), img)
    up = bicubic_resize(img, 64, 64)
    assert up.shape == (64, 64, 3) and up.min() >= 0 and up.max() <= 1
