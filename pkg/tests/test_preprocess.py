import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sheetseg.data_io import Volume
from sheetseg.errors import ContractError, PreprocessingError
from sheetseg.preprocess import (
    BrainMask,
    compute_brain_mask,
    crop_pad_inplane,
    invert_crop_pad,
    zscore_normalize,
)


def _two_blob_image(big=10, small=2, level=100.0):
    data = np.zeros((40, 40, 40), dtype=np.float32)
    data[5 : 5 + big, 5 : 5 + big, 5 : 5 + big] = level
    data[30 : 30 + small, 30 : 30 + small, 30 : 30 + small] = level
    return Volume(data)


# brain mask


def test_mask_keeps_largest_component_only():
    v = _two_blob_image(big=10, small=2)
    bm = compute_brain_mask(v)
    m = bm.mask.data
    assert m[10, 10, 10] == 1  # inside the 1000-voxel blob
    assert m[31, 31, 31] == 0  # the 8-voxel blob is discarded
    assert bm.voxel_count == int(m.sum()) >= 1000


def test_mask_closing_fills_interior_hole():
    v = _two_blob_image(big=12, small=0)
    v.data[10, 10, 10] = 0.0  # one dark voxel inside the blob
    bm = compute_brain_mask(v)
    assert bm.mask.data[10, 10, 10] == 1


def test_mask_scale_invariance():
    v = _two_blob_image()
    base = compute_brain_mask(v).mask.data
    for c in (0.25, 3.0, 1000.0):
        scaled = compute_brain_mask(Volume(v.data * c)).mask.data
        np.testing.assert_array_equal(scaled, base)


def test_mask_absolute_threshold_override():
    v = _two_blob_image(level=100.0)
    bm = compute_brain_mask(v, threshold=50.0)
    assert bm.voxel_count > 0
    with pytest.raises(PreprocessingError, match="no brain voxels"):
        compute_brain_mask(v, threshold=200.0)


def test_mask_all_zero_volume_rejected():
    with pytest.raises(PreprocessingError, match="no brain voxels"):
        compute_brain_mask(Volume(np.zeros((8, 8, 8), dtype=np.float32)))


def test_mask_is_binary_uint8_volume():
    bm = compute_brain_mask(_two_blob_image())
    assert bm.mask.kind == "mask"
    assert set(np.unique(bm.mask.data)) <= {0, 1}


# z-score


def _manual_brainmask(shape, where):
    m = np.zeros(shape, dtype=np.uint8)
    m[where] = 1
    vol = Volume(m, kind="mask")
    return BrainMask(mask=vol, voxel_count=int(m.sum()))


def test_zscore_three_voxel_example():
    # brain values {2, 4, 6}: mean 4, population std sqrt(8/3)
    data = np.zeros((3, 1, 1), dtype=np.float32)
    data[:, 0, 0] = [2.0, 4.0, 6.0]
    bm = _manual_brainmask((3, 1, 1), (slice(None), 0, 0))
    out = zscore_normalize(Volume(data), bm)
    expected = np.array([-1.22474487, 0.0, 1.22474487])
    np.testing.assert_allclose(out.data[:, 0, 0], expected, atol=1e-6)


def test_zscore_statistics_from_mask_only():
    rng = np.random.default_rng(0)
    data = rng.normal(50.0, 7.0, size=(12, 12, 12)).astype(np.float32)
    data[0] = 1e6  # extreme values outside the mask must not matter
    m = np.zeros((12, 12, 12), dtype=np.uint8)
    m[4:9, 4:9, 4:9] = 1
    bm = BrainMask(mask=Volume(m, kind="mask"), voxel_count=int(m.sum()))
    out = zscore_normalize(Volume(data), bm)
    inside = out.data[m > 0].astype(np.float64)
    assert abs(inside.mean()) <= 1e-6
    assert abs(inside.std() - 1.0) <= 1e-6
    assert out.data.dtype == np.float32


def test_zscore_transforms_outside_voxels_too():
    data = np.full((4, 4, 4), 10.0, dtype=np.float32)
    data[0, 0, 0] = 0.0
    data[0, 0, 1] = 20.0
    bm = _manual_brainmask((4, 4, 4), (0, 0, slice(0, 2)))
    out = zscore_normalize(Volume(data), bm)
    # outside voxels mapped with the same affine transform
    assert out.data[3, 3, 3] == pytest.approx(0.0, abs=1e-6)


def test_zscore_rejects_tiny_or_constant_mask():
    data = np.ones((4, 4, 4), dtype=np.float32)
    with pytest.raises(PreprocessingError, match="at least 2"):
        zscore_normalize(Volume(data), _manual_brainmask((4, 4, 4), (0, 0, 0)))
    bm = _manual_brainmask((4, 4, 4), (0, 0, slice(None)))
    with pytest.raises(PreprocessingError, match="constant"):
        zscore_normalize(Volume(data), bm)


# crop / pad


def test_crop_pad_mixed_example():
    # 170 x 190 in-plane slices to 180 x 180: pad rows, crop columns
    v = Volume(np.ones((170, 190, 4), dtype=np.float32))
    out, rec = crop_pad_inplane(v, (180, 180), "axial")
    assert out.shape == (180, 180, 4)
    assert rec.offsets == ((5, 5), (-5, -5), (0, 0))
    assert rec.axis == "axial"
    assert rec.original_shape == (170, 190, 4)


def test_crop_pad_odd_difference_goes_high():
    v = Volume(np.ones((179, 180, 2), dtype=np.float32))
    out, rec = crop_pad_inplane(v, (180, 180), "axial")
    assert out.shape == (180, 180, 2)
    assert rec.offsets == ((0, 1), (0, 0), (0, 0))
    assert out.data[-1].sum() == 0  # the padded row is zero


def test_crop_pad_pure_pad_roundtrip_exact():
    rng = np.random.default_rng(1)
    v = Volume(rng.normal(size=(20, 24, 6)).astype(np.float32))
    out, rec = crop_pad_inplane(v, (32, 32), "axial")
    back = invert_crop_pad(out, rec)
    np.testing.assert_array_equal(back.data, v.data)


def test_crop_invert_zero_fills_borders():
    v = Volume(np.ones((10, 10, 4), dtype=np.float32))
    out, rec = crop_pad_inplane(v, (6, 12), "axial")
    assert out.shape == (6, 12, 4)
    back = invert_crop_pad(out, rec)
    assert back.shape == (10, 10, 4)
    assert back.data[:2].sum() == 0 and back.data[8:].sum() == 0  # cropped rows zeroed
    np.testing.assert_array_equal(back.data[2:8, :, :], np.ones((6, 10, 4), dtype=np.float32))


def test_crop_pad_view_axis_untouched():
    rng = np.random.default_rng(2)
    v = Volume(rng.normal(size=(8, 9, 10)).astype(np.float32))
    out, rec = crop_pad_inplane(v, (4, 4), "coronal")
    assert out.shape[1] == 9  # coronal axis length preserved
    assert rec.offsets[1] == (0, 0)


def test_crop_pad_rejects_bad_target():
    v = Volume(np.ones((4, 4, 4), dtype=np.float32))
    with pytest.raises(ContractError):
        crop_pad_inplane(v, (0, 8), "axial")
    with pytest.raises(ContractError):
        crop_pad_inplane(v, (8,), "axial")


def test_invert_rejects_shape_mismatch():
    v = Volume(np.ones((10, 10, 4), dtype=np.float32))
    out, rec = crop_pad_inplane(v, (6, 12), "axial")
    wrong = Volume(np.ones((7, 12, 4), dtype=np.float32))
    with pytest.raises(ContractError):
        invert_crop_pad(wrong, rec)


@settings(max_examples=40, deadline=None)
@given(
    shape=st.tuples(
        st.integers(min_value=2, max_value=24),
        st.integers(min_value=2, max_value=24),
        st.integers(min_value=1, max_value=4),
    ),
    target=st.tuples(st.integers(min_value=1, max_value=30), st.integers(min_value=1, max_value=30)),
    axis=st.sampled_from(["sagittal", "coronal", "axial"]),
    seed=st.integers(min_value=0, max_value=999),
)
def test_crop_pad_roundtrip_property(shape, target, axis, seed):
    rng = np.random.default_rng(seed)
    v = Volume(rng.normal(size=shape).astype(np.float32))
    out, rec = crop_pad_inplane(v, target, axis)
    ax = v.axis_index(axis)
    inplane = [i for i in range(3) if i != ax]
    for t, i in zip(target, inplane):
        assert out.shape[i] == t
    assert out.shape[ax] == shape[ax]
    back = invert_crop_pad(out, rec)
    assert back.shape == v.shape
    # voxels that survived the forward transform must come back untouched
    keep = [slice(None)] * 3
    for t, i in zip(target, inplane):
        lo, hi = rec.offsets[i]
        if lo < 0 or hi < 0:  # cropped (possibly only on the high side)
            keep[i] = slice(-lo, shape[i] + hi)
    np.testing.assert_array_equal(back.data[tuple(keep)], v.data[tuple(keep)])
