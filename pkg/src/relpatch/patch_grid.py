"""Patch lattice geometry: patchify, token positions, random mega-patch layouts.

Coordinates: ``x`` is the column (grows rightward), ``y`` the row (grows
downward), both zero-based. Tokens are numbered in raster order,
``i = y * n_cols + x``. A flattened patch is laid out channel-major as
``(C, P, P)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, InfeasibleError
from .numerics import bilinear_resize


class GridPos(NamedTuple):
    x: int
    y: int


class Lattice(NamedTuple):
    """Bare rows x cols token lattice (a patch grid or an M x M mega-patch grid)."""

    n_rows: int
    n_cols: int

    @property
    def N(self) -> int:
        return self.n_rows * self.n_cols


@dataclass(frozen=True)
class PatchGrid:
    img_h: int
    img_w: int
    channels: int
    patch_size: int

    def __post_init__(self):
        if min(self.img_h, self.img_w, self.channels, self.patch_size) < 1:
            raise DimensionError(f"grid sizes must be positive: {self}")
        if self.img_h % self.patch_size or self.img_w % self.patch_size:
            raise DimensionError(
                f"image {self.img_h}x{self.img_w} is not divisible by patch size {self.patch_size}"
            )

    @property
    def n_rows(self) -> int:
        return self.img_h // self.patch_size

    @property
    def n_cols(self) -> int:
        return self.img_w // self.patch_size

    @property
    def N(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.n_rows, self.n_cols)


def _as_lattice(grid) -> Lattice:
    if isinstance(grid, Lattice):
        return grid
    return Lattice(grid.n_rows, grid.n_cols)


def patchify(image: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Split ``(..., C, H, W)`` images into ``(..., N, C*P*P)`` raster-ordered patch rows."""
    image = np.asarray(image)
    c, h, w = image.shape[-3:] if image.ndim >= 3 else (None, None, None)
    if (c, h, w) != (grid.channels, grid.img_h, grid.img_w):
        raise DimensionError(
            f"image shape {image.shape[-3:]} does not match grid "
            f"({grid.channels}, {grid.img_h}, {grid.img_w})"
        )
    lead = image.shape[:-3]
    p = grid.patch_size
    x = image.reshape(*lead, c, grid.n_rows, p, grid.n_cols, p)
    nd = len(lead)
    # (..., rows, cols, C, P, P)
    x = x.transpose(*range(nd), nd + 1, nd + 3, nd, nd + 2, nd + 4)
    return np.ascontiguousarray(x.reshape(*lead, grid.N, grid.patch_dim))


def unpatchify(rows: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    rows = np.asarray(rows)
    if rows.shape[-2:] != (grid.N, grid.patch_dim):
        raise DimensionError(f"patch rows {rows.shape} do not match grid {grid}")
    lead = rows.shape[:-2]
    p = grid.patch_size
    nd = len(lead)
    x = rows.reshape(*lead, grid.n_rows, grid.n_cols, grid.channels, p, p)
    x = x.transpose(*range(nd), nd + 2, nd, nd + 3, nd + 1, nd + 4)
    return np.ascontiguousarray(x.reshape(*lead, grid.channels, grid.img_h, grid.img_w))


def position_of(i: int, grid) -> GridPos:
    lat = _as_lattice(grid)
    if not 0 <= i < lat.N:
        raise IndexError(f"token index {i} outside [0, {lat.N})")
    return GridPos(int(i % lat.n_cols), int(i // lat.n_cols))


def index_of(pos: GridPos, grid) -> int:
    lat = _as_lattice(grid)
    if not (0 <= pos.x < lat.n_cols and 0 <= pos.y < lat.n_rows):
        raise IndexError(f"{pos} outside lattice {lat.n_rows}x{lat.n_cols}")
    return pos.y * lat.n_cols + pos.x


def raster_positions(grid) -> list[GridPos]:
    lat = _as_lattice(grid)
    return [GridPos(i % lat.n_cols, i // lat.n_cols) for i in range(lat.N)]


@dataclass(frozen=True)
class MegaPatchLayout:
    """M x M partition of the patch grid by ``M - 1`` horizontal and vertical cuts.

    Cuts are grid-line indices in patch units: a row cut ``k`` separates patch
    rows ``k - 1`` and ``k``.
    """

    M: int
    row_cuts: tuple[int, ...]
    col_cuts: tuple[int, ...]
    n_rows: int
    n_cols: int
    _bounds: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for cuts, g, axis in ((self.row_cuts, self.n_rows, "row"), (self.col_cuts, self.n_cols, "col")):
            if len(cuts) != self.M - 1:
                raise DimensionError(f"{axis} cuts must number M - 1 = {self.M - 1}")
            if any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise DimensionError(f"{axis} cuts must be strictly increasing: {cuts}")
            if cuts and (cuts[0] < 1 or cuts[-1] > g - 1):
                raise DimensionError(f"{axis} cuts must lie in [1, {g - 1}]: {cuts}")
        rb = (0, *self.row_cuts, self.n_rows)
        cb = (0, *self.col_cuts, self.n_cols)
        object.__setattr__(self, "_bounds", (rb, cb))

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.M, self.M)

    def regions(self) -> list[tuple[int, int, int, int]]:
        """(row0, row1, col0, col1) in patch units, half-open, raster order over the M x M lattice."""
        rb, cb = self._bounds
        return [(rb[r], rb[r + 1], cb[c], cb[c + 1]) for r in range(self.M) for c in range(self.M)]

    def pixel_regions(self, patch_size: int) -> list[tuple[int, int, int, int]]:
        return [tuple(v * patch_size for v in reg) for reg in self.regions()]


def sample_megapatch_layout(grid, M: int, rng: np.random.Generator) -> MegaPatchLayout:
    """Draw ``M - 1`` distinct cuts per axis uniformly from ``{1, ..., G - 1}``."""
    lat = _as_lattice(grid)
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if M > min(lat.n_rows, lat.n_cols):
        raise InfeasibleError(f"M={M} mega-patches per side do not fit a {lat.n_rows}x{lat.n_cols} grid")
    rows = np.sort(rng.choice(np.arange(1, lat.n_rows), M - 1, replace=False)) if M > 1 else []
    cols = np.sort(rng.choice(np.arange(1, lat.n_cols), M - 1, replace=False)) if M > 1 else []
    return MegaPatchLayout(M, tuple(int(v) for v in rows), tuple(int(v) for v in cols), lat.n_rows, lat.n_cols)


def extract_megapatches(
    image: np.ndarray, layout: MegaPatchLayout, patch_size: int
) -> tuple[np.ndarray, list[GridPos]]:
    """Resize each mega-patch region to P x P and flatten.

    Returns ``(M*M, C*P*P)`` rows and their positions on the M x M lattice.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise DimensionError(f"expected a C x H x W image, got {image.shape}")
    c, h, w = image.shape
    if (h, w) != (layout.n_rows * patch_size, layout.n_cols * patch_size):
        raise DimensionError(f"image {h}x{w} does not match layout grid {layout.n_rows}x{layout.n_cols}")
    out = np.empty((layout.M * layout.M, c * patch_size * patch_size), dtype=image.dtype)
    for k, (r0, r1, c0, c1) in enumerate(layout.pixel_regions(patch_size)):
        out[k] = bilinear_resize(image[:, r0:r1, c0:c1], patch_size, patch_size).reshape(-1)
    return out, raster_positions(layout.lattice)
