"""
Empirical efficient frontier in (p-index, return) space.

Both frontier programs have the same shape: optimise a linear objective over
the weight simplex subject to one extra linear equality. Every basic feasible
solution then has at most two nonzero weights, and the optimum at target
``t`` is the lower convex hull of the points ``(a_i, c_i)`` evaluated at
``t``. :func:`solve_lp` uses that hull directly; :func:`enumerate_lp` scans
all singletons and pairs and serves as the reference solver in tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import DomainError

MIN = "min"
MAX = "max"
MERGE_TOL = 1e-9


@dataclass(frozen=True)
class AssetPoint:
    symbol: str
    v: float
    R: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and math.isfinite(self.R)):
            raise DomainError(f"{self.symbol}: non-finite (v, R) = ({self.v}, {self.R})")
        if self.v < 0:
            raise DomainError(f"{self.symbol}: negative p-index {self.v}")


@dataclass(frozen=True)
class LPResult:
    feasible: bool
    weights: np.ndarray | None = None
    value: float = math.nan
    support: tuple[int, ...] = ()


@dataclass(frozen=True)
class Vertex:
    v: float
    R: float
    weights: dict = field(default_factory=dict, hash=False, compare=False)


@dataclass
class FrontierCurve:
    vertices: list[Vertex]
    left: list[Vertex]
    right: list[Vertex]

    def members(self, side: str) -> set[str]:
        return eef_stock_members(self, side)

    def breakpoints(self) -> "FrontierCurve":
        """Same curve with collinear interior vertices removed."""
        return FrontierCurve(_simplify(self.vertices), _simplify(self.left), _simplify(self.right))


def _sign(direction: str) -> float:
    if direction == MIN:
        return 1.0
    if direction == MAX:
        return -1.0
    raise ValueError(f"direction must be 'min' or 'max', got {direction!r}")


def _prepare(objective, equality, direction):
    c = np.asarray(objective, dtype=float) * _sign(direction)
    a = np.asarray(equality[0], dtype=float)
    t = float(equality[1])
    if c.ndim != 1 or c.shape != a.shape or c.size == 0:
        raise DomainError("objective and constraint vectors must share length n >= 1")
    scale = max(1.0, float(np.abs(a).max()))
    return c, a, t, 1e-12 * scale, 1e-12 * max(1.0, float(np.abs(c).max()))


def _keys(n: int, symbols: Sequence[Hashable] | None):
    return list(range(n)) if symbols is None else list(symbols)


def _result(n, sign, c, a, t, support):
    w = np.zeros(n)
    if len(support) == 1:
        w[support[0]] = 1.0
    else:
        i, j = support
        wj = (t - a[i]) / (a[j] - a[i])
        w[i], w[j] = 1.0 - wj, wj
    return LPResult(True, w, sign * float(w @ c), tuple(sorted(support)))


def solve_lp(objective: Sequence[float], direction: str,
             equality: tuple[Sequence[float], float],
             symbols: Sequence[Hashable] | None = None) -> LPResult:
    """Optimise ``objective . w`` over ``w >= 0, sum(w) = 1, a . w = t``.

    Among optimal solutions the one with the fewest nonzero weights wins,
    then the lexicographically smallest set of ``symbols`` (indices when
    omitted). An unattainable target returns ``LPResult(feasible=False)``.
    """
    sign = _sign(direction)
    c, a, t, tol_a, tol_c = _prepare(objective, equality, direction)
    n = c.size
    keys = _keys(n, symbols)
    if t < a.min() - tol_a or t > a.max() + tol_a:
        return LPResult(False)
    t = min(max(t, a.min()), a.max())

    # lower hull over distinct a, keeping the lowest c per a
    order = np.lexsort((c, a))
    xs, ys = [], []
    for i in order:
        if xs and a[i] == xs[-1]:
            continue
        x, y = a[i], c[i]
        while len(xs) >= 2 and (xs[-1] - xs[-2]) * (y - ys[-2]) - (ys[-1] - ys[-2]) * (x - xs[-2]) <= 0:
            xs.pop()
            ys.pop()
        xs.append(x)
        ys.append(y)

    k = int(np.searchsorted(xs, t))
    if k < len(xs) and abs(xs[k] - t) <= tol_a:
        z = ys[k]
    elif k > 0 and abs(xs[k - 1] - t) <= tol_a:
        z = ys[k - 1]
    else:
        z = ys[k - 1] + (ys[k] - ys[k - 1]) * (t - xs[k - 1]) / (xs[k] - xs[k - 1])

    single = [i for i in range(n) if abs(a[i] - t) <= tol_a and c[i] <= z + tol_c]
    if single:
        best = min(single, key=lambda i: keys[i])
        return _result(n, sign, c, a, t, (best,))

    # t lies strictly inside hull segment (xs[k-1], xs[k])
    x0, y0, x1, y1 = xs[k - 1], ys[k - 1], xs[k], ys[k]
    slope = (y1 - y0) / (x1 - x0)
    on_line = np.abs(c - (y0 + slope * (a - x0))) <= tol_c
    lo = [i for i in range(n) if on_line[i] and a[i] < t - tol_a]
    hi = [i for i in range(n) if on_line[i] and a[i] > t + tol_a]
    first = min(lo + hi, key=lambda i: keys[i])
    partner = min(hi if first in lo else lo, key=lambda i: keys[i])
    i, j = (first, partner) if a[first] < a[partner] else (partner, first)
    return _result(n, sign, c, a, t, (i, j))


def enumerate_lp(objective: Sequence[float], direction: str,
                 equality: tuple[Sequence[float], float],
                 symbols: Sequence[Hashable] | None = None) -> LPResult:
    """Brute-force the same program over all one- and two-asset supports."""
    sign = _sign(direction)
    c, a, t, tol_a, tol_c = _prepare(objective, equality, direction)
    n = c.size
    keys = _keys(n, symbols)
    cands = []
    for i in range(n):
        if abs(a[i] - t) <= tol_a:
            cands.append((c[i], 1, (keys[i],), (i,)))
    for i in range(n):
        for j in range(i + 1, n):
            if a[i] == a[j] or not min(a[i], a[j]) < t < max(a[i], a[j]):
                continue
            wj = (t - a[i]) / (a[j] - a[i])
            val = (1 - wj) * c[i] + wj * c[j]
            cands.append((val, 2, tuple(sorted((keys[i], keys[j]))), (i, j)))
    if not cands:
        return LPResult(False)
    best_val = min(x[0] for x in cands)
    tied = [x for x in cands if x[0] <= best_val + tol_c]
    _, _, _, support = min(tied, key=lambda x: (x[1], x[2]))
    if len(support) == 2 and a[support[0]] > a[support[1]]:
        support = support[::-1]
    return _result(n, sign, c, a, t, support)


# ---------------------------------------------------------------------------
# curves


def _vertex(assets: Sequence[AssetPoint], res: LPResult) -> Vertex:
    w = res.weights
    v = float(sum(w[i] * assets[i].v for i in res.support))
    R = float(sum(w[i] * assets[i].R for i in res.support))
    return Vertex(v, R, {assets[i].symbol: float(w[i]) for i in res.support})


def _dedupe(vertices: list[Vertex]) -> list[Vertex]:
    out: list[Vertex] = []
    for vx in vertices:
        if any(abs(vx.v - o.v) <= MERGE_TOL and abs(vx.R - o.R) <= MERGE_TOL for o in out):
            continue
        out.append(vx)
    return out


def _solve_grid(assets, grid, objective, constraint, direction):
    assets = list(assets)
    if not assets:
        raise DomainError("empty cross-section")
    syms = [x.symbol for x in assets]
    obj = [getattr(x, objective) for x in assets]
    con = [getattr(x, constraint) for x in assets]
    out = []
    for target in sorted(grid):
        res = solve_lp(obj, direction, (con, target), syms)
        if res.feasible:
            out.append(_vertex(assets, res))
    if not out:
        raise DomainError("no feasible grid point")
    return _dedupe(out)


def min_pindex_curve(assets: Iterable[AssetPoint], grid: Iterable[float]) -> FrontierCurve:
    """Minimum p-index portfolio at each target return.

    ``left`` is the upper branch (return rising with p-index), ``right`` the
    lower branch, both ordered by p-index.
    """
    verts = _solve_grid(assets, grid, "v", "R", MIN)
    verts.sort(key=lambda x: (x.v, -x.R))
    pivot = verts[0].R
    left = [x for x in verts if x.R >= pivot]
    right = [x for x in verts if x.R <= pivot]
    return FrontierCurve(verts, left, right)


def max_return_curve(assets: Iterable[AssetPoint], grid: Iterable[float]) -> FrontierCurve:
    """Maximum-return portfolio at each target p-index, split at the return peak."""
    verts = _solve_grid(assets, grid, "R", "v", MAX)
    verts.sort(key=lambda x: (x.v, x.R))
    peak = max(range(len(verts)), key=lambda i: (verts[i].R, -i))
    return FrontierCurve(verts, verts[: peak + 1], verts[peak:])


def eef_grid(assets: Sequence[AssetPoint], grid_size: int) -> list[float]:
    """Asset p-indexes plus evenly spaced interior points up to ``grid_size``."""
    vs = sorted({x.v for x in assets})
    extra = max(grid_size - len(assets), 0)
    if extra and vs[-1] > vs[0]:
        vs = sorted(set(vs) | set(np.linspace(vs[0], vs[-1], extra + 2)[1:-1].tolist()))
    return vs


def build_eef(assets: Iterable[AssetPoint], grid_size: int = 50) -> FrontierCurve:
    """Empirical efficient frontier.

    ``left`` holds the vertices of the maximum-return curve that are also
    minimum-p-index portfolios for their return (the EEF); ``right`` holds the
    non-positive-slope remainder of the maximum-return curve.
    """
    assets = list(assets)
    if not assets:
        raise DomainError("empty cross-section")
    curve = max_return_curve(assets, eef_grid(assets, grid_size))
    syms = [x.symbol for x in assets]
    vs = [x.v for x in assets]
    Rs = [x.R for x in assets]
    eef = []
    for vx in curve.left:
        res = solve_lp(vs, MIN, (Rs, vx.R), syms)
        if res.feasible and abs(res.value - vx.v) <= MERGE_TOL:
            eef.append(vx)
    return FrontierCurve(curve.vertices, eef, curve.right)


def eef_stock_members(curve: FrontierCurve, side: str) -> set[str]:
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    verts = curve.left if side == "left" else curve.right
    return {s for vx in verts for s, w in vx.weights.items() if w > 0}


def tangent_stock(assets: Iterable[AssetPoint], r: float) -> str:
    """Highest p-ratio asset; ties go to the smallest symbol."""
    best = None
    for x in sorted(assets, key=lambda x: x.symbol):
        if not x.v > 0:
            raise DomainError(f"{x.symbol}: p-index must be > 0")
        ratio = (x.R - r) / x.v
        if best is None or ratio > best[0]:
            best = (ratio, x.symbol)
    if best is None:
        raise DomainError("empty cross-section")
    return best[1]


def _simplify(vertices: list[Vertex]) -> list[Vertex]:
    if len(vertices) <= 2:
        return list(vertices)
    out = [vertices[0]]
    for cur, nxt in zip(vertices[1:-1], vertices[2:]):
        prev = out[-1]
        cross = (cur.v - prev.v) * (nxt.R - prev.R) - (cur.R - prev.R) * (nxt.v - prev.v)
        span = max(abs(nxt.v - prev.v), abs(nxt.R - prev.R), 1e-300)
        if abs(cross) > 1e-12 * span * span:
            out.append(cur)
    out.append(vertices[-1])
    return out


def write_curve(fh, curve: FrontierCurve) -> None:
    """CSV rows ``v,R,side,weights_json``; a vertex on both sides appears twice."""
    fh.write("v,R,side,weights_json\n")
    for side, verts in (("left", curve.left), ("right", curve.right)):
        for vx in verts:
            weights = json.dumps(dict(sorted(vx.weights.items())), separators=(",", ":"))
            fh.write(f'{vx.v!r},{vx.R!r},{side},"{weights.replace(chr(34), chr(34) * 2)}"\n')
