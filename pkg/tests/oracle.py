"""Brute-force reference labels written with plain Python loops and ``math`` only.

Kept deliberately independent of the package: positions are enumerated from
(row, col) loops, the angle maximum is taken by scanning every pair, and the
relation class is spelled out from the three-way comparisons.
"""

import math

SHIFT = (1.0, 1.0)
EPS = 1e-8


def positions(n_rows, n_cols):
    return [(c, r) for r in range(n_rows) for c in range(n_cols)]  # (x, y), raster order


def rel_class(pi, pj):
    def side(a, b):
        if b < a:
            return 0
        if b == a:
            return 1
        return 2

    return 3 * side(pi[1], pj[1]) + side(pi[0], pj[0])


def raw_angle(pi, pj):
    ax, ay = pi[0] + SHIFT[0], pi[1] + SHIFT[1]
    bx, by = pj[0] + SHIFT[0], pj[1] + SHIFT[1]
    if ax * by - ay * bx == 0:
        return 0.0
    c = (ax * bx + ay * by) / (math.sqrt(ax * ax + ay * ay) * math.sqrt(bx * bx + by * by) + EPS)
    return math.acos(max(-1.0, min(1.0, c)))


def targets(n_rows, n_cols):
    pos = positions(n_rows, n_cols)
    n = len(pos)
    rel = [[rel_class(pos[i], pos[j]) for j in range(n)] for i in range(n)]
    out = {"rel": rel, "abs_pos": list(range(n)), "dist": None, "ang": None}
    if n == 1:
        return out
    d_max = math.sqrt((n_cols - 1) ** 2 + (n_rows - 1) ** 2)
    a_max = max(raw_angle(p, q) for p in pos for q in pos)
    out["dist"] = [[2 * math.dist(pos[i], pos[j]) / d_max - 1 for j in range(n)] for i in range(n)]
    out["ang"] = [[2 * raw_angle(pos[i], pos[j]) / a_max - 1 for j in range(n)] for i in range(n)]
    out["d_max"], out["a_max"] = d_max, a_max
    return out


def max_abs_diff(a, b):
    return max(abs(float(x) - float(y)) for ra, rb in zip(a, b) for x, y in zip(ra, rb))
