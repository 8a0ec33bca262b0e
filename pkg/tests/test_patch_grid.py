import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relpatch.errors import DimensionError, InfeasibleError
from relpatch.patch_grid import (
    GridPos,
    Lattice,
    MegaPatchLayout,
    PatchGrid,
    extract_megapatches,
    index_of,
    patchify,
    position_of,
    raster_positions,
    sample_megapatch_layout,
    unpatchify,
)


def test_grid_shape():
    g = PatchGrid(32, 32, 3, 4)
    assert (g.n_rows, g.n_cols, g.N, g.patch_dim) == (8, 8, 64, 48)
    assert PatchGrid(224, 224, 3, 32).N == 49


def test_grid_rejects_indivisible():
    with pytest.raises(DimensionError):
        PatchGrid(30, 32, 3, 4)


def test_patchify_layout():
    # channel-major (C, P, P) flatten, raster over patches
    img = np.arange(2 * 4 * 6, dtype=np.float64).reshape(2, 4, 6)
    g = PatchGrid(4, 6, 2, 2)
    rows = patchify(img, g)
    assert rows.shape == (6, 8)
    # token 4 is row 1, col 1: pixels [2:4, 2:4]
    assert np.array_equal(rows[4], img[:, 2:4, 2:4].reshape(-1))
    assert np.array_equal(rows[2], img[:, 0:2, 4:6].reshape(-1))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(0, 3))
def test_patchify_roundtrip(r, c, p, ch, batch):
    g = PatchGrid(r * p, c * p, ch, p)
    shape = (batch, ch, r * p, c * p) if batch else (ch, r * p, c * p)
    img = np.random.default_rng(r * 31 + c).random(shape)
    assert np.array_equal(unpatchify(patchify(img, g), g), img)


def test_raster_positions():
    lat = Lattice(2, 3)
    assert raster_positions(lat) == [GridPos(0, 0), GridPos(1, 0), GridPos(2, 0),
                                     GridPos(0, 1), GridPos(1, 1), GridPos(2, 1)]
    for i in range(lat.N):
        assert index_of(position_of(i, lat), lat) == i
    with pytest.raises(IndexError):
        position_of(6, lat)


def test_layout_validation():
    with pytest.raises(DimensionError):
        MegaPatchLayout(3, (2, 2), (1, 2), 4, 4)
    with pytest.raises(DimensionError):
        MegaPatchLayout(2, (4,), (1,), 4, 4)
    with pytest.raises(DimensionError):
        MegaPatchLayout(2, (), (1,), 4, 4)


def test_sample_errors():
    g = PatchGrid(16, 16, 1, 4)
    rng = np.random.default_rng(0)
    with pytest.raises(InfeasibleError):
        sample_megapatch_layout(g, 5, rng)
    with pytest.raises(ValueError):
        sample_megapatch_layout(g, 0, rng)


def test_m1_and_full_resolution_layouts():
    g = PatchGrid(16, 16, 1, 4)
    rng = np.random.default_rng(0)
    one = sample_megapatch_layout(g, 1, rng)
    assert one.regions() == [(0, 4, 0, 4)]
    full = sample_megapatch_layout(g, 4, rng)
    assert full.row_cuts == (1, 2, 3) and full.col_cuts == (1, 2, 3)


def test_full_resolution_megapatches_equal_patches():
    g = PatchGrid(16, 16, 3, 4)
    img = np.random.default_rng(2).random((3, 16, 16))
    layout = sample_megapatch_layout(g, 4, np.random.default_rng(0))
    rows, pos = extract_megapatches(img, layout, 4)
    assert np.allclose(rows, patchify(img, g), atol=1e-12)
    assert pos == raster_positions(Lattice(4, 4))


def test_megapatch_constant_region_resizes_to_constant():
    g = PatchGrid(32, 32, 1, 4)
    layout = sample_megapatch_layout(g, 3, np.random.default_rng(5))
    img = np.zeros((1, 32, 32))
    for k, (r0, r1, c0, c1) in enumerate(layout.pixel_regions(4)):
        img[:, r0:r1, c0:c1] = k
    rows, _ = extract_megapatches(img, layout, 4)
    for k in range(9):
        assert np.allclose(rows[k], k)


def test_extract_shape_errors():
    layout = sample_megapatch_layout(Lattice(4, 4), 2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        extract_megapatches(np.zeros((1, 12, 16)), layout, 4)
    with pytest.raises(DimensionError):
        extract_megapatches(np.zeros((16, 16)), layout, 4)


def tiling_ok(layout: MegaPatchLayout, patch_size: int) -> bool:
    cover = np.zeros((layout.n_rows * patch_size, layout.n_cols * patch_size), dtype=np.int64)
    regs = layout.pixel_regions(patch_size)
    if len(regs) != layout.M ** 2:
        return False
    for r0, r1, c0, c1 in regs:
        if r1 <= r0 or c1 <= c0:
            return False
        if any(v % patch_size for v in (r0, r1, c0, c1)):
            return False
        cover[r0:r1, c0:c1] += 1
    return bool(np.all(cover == 1))


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_sampled_layouts_tile(g, m, seed):
    if m > g:
        with pytest.raises(InfeasibleError):
            sample_megapatch_layout(Lattice(g, g), m, np.random.default_rng(seed))
        return
    layout = sample_megapatch_layout(Lattice(g, g), m, np.random.default_rng(seed))
    assert tiling_ok(layout, 4)


def test_tiny_image_rows_are_pixels():
    img = np.arange(4.0).reshape(1, 2, 2)
    rows = patchify(img, PatchGrid(2, 2, 1, 1))
    assert rows.shape == (4, 1) and rows[:, 0].tolist() == [0, 1, 2, 3]


def test_position_examples():
    assert position_of(0, Lattice(3, 3)) == GridPos(0, 0)
    assert position_of(8, Lattice(3, 3)) == GridPos(2, 2)
    lat = Lattice(8, 8)
    assert sorted(position_of(i, lat) for i in range(64)) == sorted(raster_positions(lat))
    assert [index_of(position_of(i, lat), lat) for i in range(64)] == list(range(64))


def test_m5_has_25_regions():
    layout = sample_megapatch_layout(Lattice(8, 8), 5, np.random.default_rng(0))
    assert len(layout.regions()) == 25


def test_m1_single_token_is_downsized_image():
    img = np.random.default_rng(0).random((3, 16, 16))
    layout = sample_megapatch_layout(Lattice(4, 4), 1, np.random.default_rng(0))
    rows, pos = extract_megapatches(img, layout, 4)
    # half-pixel bilinear 16 -> 4 averages the two middle pixels of each 4-block
    ref = 0.25 * sum(img[:, a::4, b::4] for a in (1, 2) for b in (1, 2))
    assert rows.shape == (1, 48) and pos == [GridPos(0, 0)]
    assert np.allclose(rows[0], ref.reshape(-1), atol=1e-12)


def test_uniform_cuts_give_2x2_blocks():
    layout = MegaPatchLayout(4, (2, 4, 6), (2, 4, 6), 8, 8)
    for r0, r1, c0, c1 in layout.pixel_regions(8):
        assert (r1 - r0, c1 - c0) == (16, 16)
    img = np.random.default_rng(1).random((3, 64, 64))
    rows, _ = extract_megapatches(img, layout, 8)
    blk = img[:, 16:32, 32:48]  # region (1, 2) -> token 6
    ref = 0.25 * sum(blk[:, a::2, b::2] for a in (0, 1) for b in (0, 1))
    assert np.allclose(rows[6], ref.reshape(-1), atol=1e-12)


def test_cut_distribution_uniform_over_pairs():
    rng = np.random.default_rng(2024)
    n = 100_000
    counts: dict[tuple[int, int], int] = {}
    for _ in range(n):
        cuts = sample_megapatch_layout(Lattice(8, 8), 3, rng).row_cuts
        counts[cuts] = counts.get(cuts, 0) + 1
    pairs = [(a, b) for a in range(1, 8) for b in range(a + 1, 8)]
    assert sorted(counts) == pairs
    p = 1 / len(pairs)
    sigma = np.sqrt(n * p * (1 - p))
    for c in counts.values():
        assert abs(c - n * p) < 3 * sigma + 1
