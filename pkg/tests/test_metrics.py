import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sheetseg.data_io import Volume
from sheetseg.errors import ContractError, MetricError
from sheetseg.metrics import (
    HD95_EMPTY_MSG,
    dice_coefficient,
    evaluate_subject,
    hausdorff95,
    volumetric_similarity,
)

UNIT = (1.0, 1.0, 1.0)


def _mask_with(shape, coords):
    m = np.zeros(shape, dtype=bool)
    for c in coords:
        m[tuple(c)] = True
    return m


def _random_pair(rng, max_side=30, p_fg=0.3):
    shape = tuple(rng.integers(3, max_side + 1, size=3))
    g = rng.random(shape) < p_fg * rng.random()
    p = rng.random(shape) < p_fg * rng.random()
    return g, p


def _hd95_oracle(g, p, spacing):
    """Exhaustive all-pairs nearest distances; deliberately ignorant of the
    distance-transform shortcut used by the production path."""
    sp = np.asarray(spacing, dtype=np.float64)
    gp = np.argwhere(g)
    pp = np.argwhere(p)
    d = np.sqrt((((gp[:, None, :] - pp[None, :, :]) * sp) ** 2).sum(axis=2))
    return float(max(np.percentile(d.min(axis=1), 95), np.percentile(d.min(axis=0), 95)))


# volumetric similarity


def test_vs_count_example():
    g = _mask_with((10, 10, 10), [(i, j, 0) for i in range(10) for j in range(10)])  # 100
    p = _mask_with((10, 10, 10), [(i, j, 1) for i in range(10) for j in range(8)])  # 80
    assert volumetric_similarity(g, p) == pytest.approx(1 - 20 / 180, abs=1e-12)


def test_vs_identity_and_empty_prediction():
    g = _mask_with((5, 5, 5), [(1, 1, 1), (2, 2, 2)])
    assert volumetric_similarity(g, g) == 1.0
    fifty = _mask_with((5, 5, 5), [(i, j, 2) for i in range(5) for j in range(5)])
    empty = np.zeros((5, 5, 5), dtype=bool)
    assert volumetric_similarity(fifty, empty) == 0.0


def test_vs_both_empty_is_one():
    empty = np.zeros((4, 4, 4), dtype=bool)
    assert volumetric_similarity(empty, empty) == 1.0


# dice


def test_dsc_count_example():
    # |G|=100, |P|=80, overlap 60 -> 120/180
    g = np.zeros((10, 10, 10), dtype=bool)
    p = np.zeros((10, 10, 10), dtype=bool)
    g.flat[:100] = True
    p.flat[40:120] = True  # overlap = indices 40..99 -> 60
    assert int((g & p).sum()) == 60
    assert dice_coefficient(g, p) == pytest.approx(120 / 180, abs=1e-12)


def test_dsc_disjoint_identity_empty():
    a = _mask_with((4, 4, 4), [(0, 0, 0)])
    b = _mask_with((4, 4, 4), [(3, 3, 3)])
    assert dice_coefficient(a, b) == 0.0
    assert dice_coefficient(a, a) == 1.0
    empty = np.zeros((4, 4, 4), dtype=bool)
    assert dice_coefficient(empty, empty) == 1.0


# hausdorff95


def test_hd95_single_voxel_pair():
    g = _mask_with((8, 8, 8), [(0, 0, 0)])
    p = _mask_with((8, 8, 8), [(3, 0, 0)])
    assert hausdorff95(g, p, UNIT) == 3.0


def test_hd95_identity_is_zero():
    rng = np.random.default_rng(0)
    g = rng.random((12, 12, 12)) < 0.2
    g[5, 5, 5] = True
    assert hausdorff95(g, g, UNIT) == 0.0


def test_hd95_inbounds_diagonal_shift():
    rng = np.random.default_rng(1)
    pts = rng.integers(2, 20, size=(10, 3))
    g = _mask_with((25, 25, 25), pts)
    p = _mask_with((25, 25, 25), pts + np.array([1, 1, 0]))
    got = hausdorff95(g, p, UNIT)
    assert got == _hd95_oracle(g, p, UNIT)
    if not (g & p).any():  # when no shifted point lands on an original one
        assert got == pytest.approx(np.sqrt(2.0), abs=1e-12)


def test_hd95_empty_mask_raises():
    g = _mask_with((5, 5, 5), [(1, 1, 1)])
    empty = np.zeros((5, 5, 5), dtype=bool)
    with pytest.raises(MetricError, match=HD95_EMPTY_MSG):
        hausdorff95(g, empty, UNIT)
    with pytest.raises(MetricError, match=HD95_EMPTY_MSG):
        hausdorff95(empty, g, UNIT)


def test_hd95_matches_oracle_small_batch():
    rng = np.random.default_rng(7)
    for _ in range(25):
        g, p = _random_pair(rng, max_side=14)
        if not g.any() or not p.any():
            continue
        spacing = tuple(rng.uniform(0.5, 3.0, size=3))
        assert hausdorff95(g, p, spacing) == _hd95_oracle(g, p, spacing)


def test_hd95_surface_variant_matches_surface_oracle():
    rng = np.random.default_rng(3)
    g = np.zeros((16, 16, 16), dtype=bool)
    p = np.zeros((16, 16, 16), dtype=bool)
    g[4:12, 4:12, 4:12] = True
    p[5:13, 5:13, 6:14] = True
    from scipy import ndimage

    def surf(m):
        er = ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(3, 1))
        return m & ~er

    assert hausdorff95(g, p, UNIT, surface=True) == _hd95_oracle(surf(g), surf(p), UNIT)
    # full-set and surface variants legitimately differ on solid blocks
    assert hausdorff95(g, p, UNIT) != hausdorff95(g, p, UNIT, surface=True)


def test_metric_symmetry():
    rng = np.random.default_rng(11)
    for _ in range(10):
        g, p = _random_pair(rng, max_side=12)
        assert volumetric_similarity(g, p) == volumetric_similarity(p, g)
        assert dice_coefficient(g, p) == dice_coefficient(p, g)
        if g.any() and p.any():
            assert hausdorff95(g, p, UNIT) == hausdorff95(p, g, UNIT)


def test_translation_invariance():
    rng = np.random.default_rng(13)
    core_g = rng.random((8, 8, 8)) < 0.3
    core_p = rng.random((8, 8, 8)) < 0.3
    core_g[0, 0, 0] = core_p[0, 0, 0] = True

    def embed(core, offset):
        m = np.zeros((20, 20, 20), dtype=bool)
        m[
            offset[0] : offset[0] + 8,
            offset[1] : offset[1] + 8,
            offset[2] : offset[2] + 8,
        ] = core
        return m

    base = (
        volumetric_similarity(embed(core_g, (0, 0, 0)), embed(core_p, (0, 0, 0))),
        hausdorff95(embed(core_g, (0, 0, 0)), embed(core_p, (0, 0, 0)), UNIT),
        dice_coefficient(embed(core_g, (0, 0, 0)), embed(core_p, (0, 0, 0))),
    )
    for off in [(3, 0, 0), (0, 5, 2), (11, 12, 9)]:
        moved = (
            volumetric_similarity(embed(core_g, off), embed(core_p, off)),
            hausdorff95(embed(core_g, off), embed(core_p, off), UNIT),
            dice_coefficient(embed(core_g, off), embed(core_p, off)),
        )
        assert moved == base


def test_spacing_scaling():
    rng = np.random.default_rng(17)
    g, p = _random_pair(rng, max_side=15)
    g[1, 1, 1] = p[2, 2, 2] = True
    base = hausdorff95(g, p, (0.7, 1.1, 2.0))
    for c in (0.5, 3.0, 10.0):
        scaled = hausdorff95(g, p, (0.7 * c, 1.1 * c, 2.0 * c))
        assert scaled == pytest.approx(c * base, rel=1e-12)
    assert volumetric_similarity(g, p) == volumetric_similarity(g, p)  # spacing-free
    assert dice_coefficient(g, p) == dice_coefficient(g, p)


def test_masks_accept_volumes_and_arrays():
    g = _mask_with((6, 6, 6), [(1, 1, 1), (2, 2, 2)])
    gv = Volume(g.astype(np.uint8), kind="mask")
    assert dice_coefficient(gv, g) == 1.0
    assert volumetric_similarity(gv, gv) == 1.0
    assert hausdorff95(gv, g, UNIT) == 0.0


def test_shape_mismatch_rejected():
    a = np.zeros((4, 4, 4), dtype=bool)
    b = np.zeros((4, 4, 5), dtype=bool)
    a[0, 0, 0] = b[0, 0, 0] = True
    for fn in (volumetric_similarity, dice_coefficient):
        with pytest.raises(ContractError):
            fn(a, b)
    with pytest.raises(ContractError):
        hausdorff95(a, b, UNIT)
    with pytest.raises(ContractError):
        hausdorff95(a, a, (1.0, -1.0, 1.0))


# evaluate_subject


def test_evaluate_identity():
    g = _mask_with((6, 6, 6), [(2, 2, 2), (3, 3, 3)])
    t = evaluate_subject(g, g, UNIT)
    assert (t.vs, t.hd95_mm, t.dsc) == (1.0, 0.0, 1.0)
    assert t.status == "ok"


def test_evaluate_empty_prediction_marks_hd_error():
    g = _mask_with((6, 6, 6), [(2, 2, 2)])
    p = np.zeros((6, 6, 6), dtype=bool)
    t = evaluate_subject(g, p, UNIT)
    assert t.vs == 0.0
    assert t.dsc == 0.0
    assert t.hd95_mm is None
    assert "hd95_mm" in t.errors
    assert HD95_EMPTY_MSG in t.status


def test_evaluate_matches_standalone_ops():
    rng = np.random.default_rng(23)
    g, p = _random_pair(rng, max_side=20)
    g[1, 1, 1] = p[1, 1, 2] = True
    t = evaluate_subject(g, p, (1.0, 1.5, 2.0))
    assert t.vs == volumetric_similarity(g, p)
    assert t.dsc == dice_coefficient(g, p)
    assert t.hd95_mm == hausdorff95(g, p, (1.0, 1.5, 2.0))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_hd95_oracle_property(seed):
    rng = np.random.default_rng(seed)
    g, p = _random_pair(rng, max_side=10)
    if not g.any() or not p.any():
        return
    spacing = tuple(rng.uniform(0.4, 2.5, size=3))
    assert hausdorff95(g, p, spacing) == _hd95_oracle(g, p, spacing)
