"""Pairwise and absolute-position labels for the patch-relation pretext tasks.

For tokens ``i`` and ``j`` at lattice positions ``p_i`` and ``p_j``:

* ``rel[i, j]`` is the 9-way spatial relation of ``j`` relative to ``i``,
  encoded as ``3 * s_y + s_x`` with L/T -> 0, C -> 1, R/B -> 2.
* ``dist[i, j]`` is the Euclidean distance, mapped affinely onto [-1, 1]
  by ``2 d / d_max - 1`` where ``d_max`` is the lattice diagonal.
* ``ang[i, j]`` is the angle between the shifted position vectors, mapped
  by ``2 a / a_max - 1`` where ``a_max`` is the largest angle attainable on
  the lattice.
* ``abs_pos[i] = i``.

Exactly parallel shifted vectors (zero cross product, which includes
``i == j``) get angle 0; ``eps`` only guards the cosine denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .patch_grid import GridPos, Lattice, _as_lattice, raster_positions

_SX = ("L", "C", "R")
_SY = ("T", "C", "B")
CENTER_CLASS = 4
NUM_RELATIONS = 9


@dataclass(frozen=True)
class RelationLabel:
    s_x: str
    s_y: str

    def __post_init__(self):
        if self.s_x not in _SX or self.s_y not in _SY:
            raise ValueError(f"invalid relation ({self.s_x}, {self.s_y})")

    @property
    def class_index(self) -> int:
        return 3 * _SY.index(self.s_y) + _SX.index(self.s_x)

    @classmethod
    def from_index(cls, k: int) -> RelationLabel:
        if not 0 <= k < NUM_RELATIONS:
            raise IndexError(f"relation class {k} outside [0, 9)")
        return cls(_SX[k % 3], _SY[k // 3])


@dataclass(frozen=True)
class AngleConfig:
    shift: tuple[float, float] = (1.0, 1.0)
    eps: float = 1e-8

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if min(self.shift) <= 0:
            raise ValueError("shift must make zero-based positions strictly positive")


def spatial_relation(p_i: GridPos, p_j: GridPos) -> RelationLabel:
    """Relation of ``p_j`` as seen from ``p_i``."""
    sx = 0 if p_j.x < p_i.x else (1 if p_j.x == p_i.x else 2)
    sy = 0 if p_j.y < p_i.y else (1 if p_j.y == p_i.y else 2)
    return RelationLabel(_SX[sx], _SY[sy])


def lattice_max_distance(grid) -> float:
    lat = _as_lattice(grid)
    d = float(np.hypot(lat.n_cols - 1, lat.n_rows - 1))
    if d == 0:
        raise ConfigurationError("distance targets are undefined on a single-token lattice")
    return d


def distance_target(p_i: GridPos, p_j: GridPos, d_max: float) -> float:
    if d_max <= 0:
        raise ConfigurationError("d_max must be positive")
    return 2.0 * float(np.hypot(p_i.x - p_j.x, p_i.y - p_j.y)) / d_max - 1.0


def _raw_angles(xy_i: np.ndarray, xy_j: np.ndarray, cfg: AngleConfig) -> np.ndarray:
    """Angles between shifted position vectors; inputs broadcast over leading axes, last axis = (x, y)."""
    s = np.asarray(cfg.shift, dtype=np.float64)
    a = xy_i.astype(np.float64) + s
    b = xy_j.astype(np.float64) + s
    dot = (a * b).sum(-1)
    norms = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    cos = np.clip(dot / (norms + cfg.eps), -1.0, 1.0)
    ang = np.arccos(cos)
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return np.where(cross == 0, 0.0, ang)


def lattice_max_angle(grid, cfg: AngleConfig = AngleConfig()) -> float:
    """Largest raw angle over all position pairs of the lattice (exhaustive scan)."""
    xy = np.array(raster_positions(grid), dtype=np.float64)
    a_max = float(_raw_angles(xy[:, None, :], xy[None, :, :], cfg).max())
    if a_max <= 0:
        raise ConfigurationError("angle targets are undefined on this lattice (all positions collinear)")
    return a_max


def angle_target(p_i: GridPos, p_j: GridPos, cfg: AngleConfig, alpha_max: float) -> float:
    if alpha_max <= 0:
        raise ConfigurationError("alpha_max must be positive")
    raw = float(_raw_angles(np.array(p_i, float), np.array(p_j, float), cfg))
    return 2.0 * raw / alpha_max - 1.0


@dataclass
class TargetSet:
    """Labels for one lattice. Arrays may carry leading batch axes (see :func:`stack_targets`).

    ``dist``/``ang`` are ``None`` when the lattice has a single token.
    """

    rel: np.ndarray
    abs_pos: np.ndarray
    dist: np.ndarray | None = None
    ang: np.ndarray | None = None
    d_max: float | None = None
    alpha_max: float | None = None
    lattice: Lattice | None = field(default=None, compare=False)

    @property
    def N(self) -> int:
        return self.rel.shape[-1]

    def require(self, name: str) -> np.ndarray:
        value = getattr(self, name)
        if value is None:
            raise ConfigurationError(f"targets for '{name}' are undefined on a {self.N}-token lattice")
        return value


def build_target_set(grid, positions: Sequence[GridPos] | None = None, cfg: AngleConfig = AngleConfig()) -> TargetSet:
    lat = _as_lattice(grid)
    if positions is None:
        positions = raster_positions(lat)
    if len(positions) != lat.N:
        raise ValueError(f"expected {lat.N} positions, got {len(positions)}")
    xy = np.array(positions, dtype=np.int64).reshape(lat.N, 2)
    dx = xy[None, :, 0] - xy[:, None, 0]  # x_j - x_i
    dy = xy[None, :, 1] - xy[:, None, 1]
    rel = 3 * (np.sign(dy) + 1) + (np.sign(dx) + 1)
    ts = TargetSet(rel=rel.astype(np.int64), abs_pos=np.arange(lat.N), lattice=lat)
    if lat.N > 1:
        d_max = lattice_max_distance(lat)
        a_max = lattice_max_angle(lat, cfg)
        ts.dist = 2.0 * np.hypot(dx, dy) / d_max - 1.0
        ts.ang = 2.0 * _raw_angles(xy[:, None, :], xy[None, :, :], cfg) / a_max - 1.0
        ts.d_max, ts.alpha_max = d_max, a_max
    return ts


def _check_perm(perm, n: int) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError(f"not a permutation of {n} elements")
    return perm.astype(np.int64)


def permute_targets(t: TargetSet, perm) -> TargetSet:
    """Relabel for inputs reordered as ``x'[i] = x[perm[i]]``.

    ``rel'[i, j] = rel[perm[i], perm[j]]`` (same for ``dist``/``ang``) and
    ``abs_pos'[i] = abs_pos[perm[i]]``. Permuting by ``pi`` then ``sigma``
    equals permuting once by ``pi[sigma]``.
    """
    perm = _check_perm(perm, t.N)
    ix = np.ix_(perm, perm)
    return replace(
        t,
        rel=t.rel[ix],
        abs_pos=t.abs_pos[perm],
        dist=None if t.dist is None else t.dist[ix],
        ang=None if t.ang is None else t.ang[ix],
    )


def stack_targets(t: TargetSet, batch: int) -> TargetSet:
    """Repeat a single-lattice TargetSet along a new leading batch axis."""

    def rep(a):
        return None if a is None else np.broadcast_to(a, (batch, *a.shape))

    return replace(t, rel=rep(t.rel), abs_pos=rep(t.abs_pos), dist=rep(t.dist), ang=rep(t.ang))


def permute_batch(t: TargetSet, perms: np.ndarray) -> TargetSet:
    """Per-item permutation of batched targets; ``perms`` is ``B x N``."""
    rows = perms[:, :, None]
    cols = perms[:, None, :]
    b = np.arange(perms.shape[0])[:, None, None]

    def pair(a):
        return None if a is None else a[b, rows, cols]

    return replace(
        t,
        rel=pair(t.rel),
        abs_pos=np.take_along_axis(t.abs_pos, perms, axis=1),
        dist=pair(t.dist),
        ang=pair(t.ang),
    )


def targets_to_json(t: TargetSet) -> dict:
    def mat(a):
        return None if a is None else np.asarray(a).tolist()

    lat = t.lattice
    return {
        "n_rows": None if lat is None else lat.n_rows,
        "n_cols": None if lat is None else lat.n_cols,
        "N": t.N,
        "d_max": t.d_max,
        "alpha_max": t.alpha_max,
        "rel": mat(t.rel),
        "dist": mat(t.dist),
        "ang": mat(t.ang),
        "abs_pos": mat(t.abs_pos),
    }
