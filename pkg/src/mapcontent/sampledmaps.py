"""Maps [0,1]^(n+m) -> X sampled on the dyadic lattice of depth D."""

from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Callable

import numpy as np

from .dyadic import CellSet, CubeId, Region
from .errors import ArgumentError, DepthError, ResolutionError
from .metricspaces import (
    DistanceOracle,
    EuclideanSpace,
    FiniteMetric,
    StarTree,
    load_finite_metric,
)

# (2^D+1)^d lattice points allowed: D <= 8 for d = 2 and D <= 5 for d = 3.
LATTICE_BUDGET = 70_000

BUILTINS = ("projection", "constant", "linear", "star9", "shear-demo")


def check_budget(d: int, depth: int) -> None:
    if depth < 0:
        raise DepthError("depth must be nonnegative")
    if ((1 << depth) + 1) ** d > LATTICE_BUDGET:
        raise DepthError(f"depth {depth} exceeds the lattice budget for d={d}")


class SampledMap:
    """Lattice samples of f: [0,1]^(n+m) -> X.

    ``values`` has one row per lattice point in C order over a grid of shape
    (2^D+1,)*d whose axis i is coordinate i; the first n coordinates are x,
    the last m are y.  A restricted view carries a mask of allowed lattice
    points (the corners of the allowed cells).
    """

    def __init__(self, n: int, m: int, depth: int, target: DistanceOracle, values: np.ndarray,
                 lipschitz: float, name: str = "custom", params: dict | None = None,
                 cells: CellSet | None = None):
        if n < 0 or m < 0 or n + m < 1:
            raise ArgumentError("need n, m >= 0 with n + m >= 1")
        check_budget(n + m, depth)
        values = np.asarray(values, dtype=float)
        npts = ((1 << depth) + 1) ** (n + m)
        if values.ndim == 1 and values.size % npts == 0:
            values = values.reshape(npts, -1)
        if values.shape != (npts, target.width):
            raise ArgumentError(f"values must have shape {(npts, target.width)}, got {values.shape}")
        target.validate(values[:1])
        values.flags.writeable = False
        self.n, self.m, self.depth = n, m, depth
        self.target = target
        self.values = values
        self.lipschitz = float(lipschitz)
        self.name = name
        self.params = dict(params or {})
        self.cells = cells
        self.allowed = None if cells is None else corner_mask(cells)

    # lattice geometry

    @property
    def d(self) -> int:
        return self.n + self.m

    @property
    def h(self) -> float:
        return 2.0 ** -self.depth

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return ((1 << self.depth) + 1,) * self.d

    @property
    def npoints(self) -> int:
        return self.values.shape[0]

    @property
    def eps_match(self) -> float:
        """Image tolerance: lattice-adjacent preimages differ by at most this."""
        return 2.0 * self.lipschitz * self.h

    def flat(self, multi: np.ndarray) -> np.ndarray:
        multi = np.asarray(multi, dtype=np.int64)
        return np.ravel_multi_index(tuple(multi.T), self.grid_shape)

    def multi(self, flat: np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat, dtype=np.int64), self.grid_shape), axis=-1)

    def coords(self, flat: np.ndarray) -> np.ndarray:
        return self.multi(flat) * self.h

    def box_indices(self, lo, hi) -> np.ndarray:
        """Flat indices of lattice points in the closed box [lo, hi] (lattice units)."""
        ranges = [np.arange(int(a), int(b) + 1) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*ranges, indexing="ij")
        idx = np.ravel_multi_index(tuple(g.ravel() for g in mesh), self.grid_shape)
        if self.allowed is not None:
            idx = idx[self.allowed.reshape(-1)[idx]]
        return idx

    def cube_indices(self, cube: CubeId) -> np.ndarray:
        lo, hi = cube.lattice_bounds(self.depth)
        return self.box_indices(lo, hi)

    def region_indices(self, region: Region) -> np.ndarray:
        lo, hi = region.lattice_bounds(self.depth)
        return self.box_indices(lo, hi)

    def anchors(self, cells: CellSet) -> np.ndarray:
        """Flat lattice index of the lower corner of each cell, cell C order."""
        if cells.depth != self.depth or cells.d != self.d:
            raise ArgumentError("cell set does not match the map's lattice")
        return self.flat(cells.cells())

    def values_at(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        if self.allowed is not None and not self.allowed.reshape(-1)[flat].all():
            raise ArgumentError("query outside the restricted cell set")
        return self.values[flat]

    def image(self, flat: np.ndarray) -> np.ndarray:
        return self.values_at(flat)

    def describe(self) -> dict:
        out = {"name": self.name, "n": self.n, "m": self.m, "depth": self.depth,
               "lipschitz": self.lipschitz, "target": self.target.describe()}
        if self.params:
            out["params"] = self.params
        return out

    @classmethod
    def from_function(cls, n: int, m: int, depth: int, target: DistanceOracle,
                      fn: Callable[[np.ndarray], np.ndarray], lipschitz: float,
                      name: str = "custom", params: dict | None = None) -> "SampledMap":
        """Sample ``fn`` (coords (N, d) -> points (N, width)) on the lattice."""
        check_budget(n + m, depth)
        grid = lattice_coords(n + m, depth)
        vals = np.asarray(fn(grid), dtype=float).reshape(len(grid), target.width)
        return cls(n, m, depth, target, vals, lipschitz, name, params)


def lattice_coords(d: int, depth: int) -> np.ndarray:
    side = (1 << depth) + 1
    mesh = np.meshgrid(*([np.arange(side)] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1) * 2.0 ** -depth


def corner_mask(cells: CellSet) -> np.ndarray:
    """Lattice points that are a corner of some cell in ``cells``."""
    n = (1 << cells.depth) + 1
    mask = np.zeros((n,) * cells.d, dtype=bool)
    for offs in itertools.product((0, 1), repeat=cells.d):
        sl = tuple(slice(o, o + n - 1) for o in offs)
        mask[sl] |= cells.bits
    return mask


def restrict(fmap: SampledMap, cells: CellSet) -> SampledMap:
    """View of ``fmap`` whose queries are limited to the corners of ``cells``."""
    if not cells:
        raise ArgumentError("cannot restrict to an empty cell set")
    return SampledMap(fmap.n, fmap.m, fmap.depth, fmap.target, fmap.values, fmap.lipschitz,
                      fmap.name, fmap.params, cells)


def lipschitz_estimate(fmap: SampledMap) -> float:
    """Max ratio d(f(p), f(q)) / |p - q| over axis-adjacent lattice pairs."""
    shape = fmap.grid_shape
    idx = np.arange(fmap.npoints).reshape(shape)
    best = 0.0
    for axis in range(fmap.d):
        lo = np.take(idx, np.arange(shape[axis] - 1), axis=axis).ravel()
        hi = np.take(idx, np.arange(1, shape[axis]), axis=axis).ravel()
        if fmap.allowed is not None:
            ok = fmap.allowed.reshape(-1)
            keep = ok[lo] & ok[hi]
            lo, hi = lo[keep], hi[keep]
        if lo.size:
            dist = fmap.target.paired(fmap.values[lo], fmap.values[hi])
            best = max(best, float(dist.max()) / fmap.h)
    return best


# builtins

def _projection(n, m, depth, scale=1.0):
    target = EuclideanSpace(max(n, 1))

    def fn(p):
        return scale * p[:, :n] if n else np.zeros((len(p), 1))

    return SampledMap.from_function(n, m, depth, target, fn, abs(scale), "projection",
                                    {"scale": scale} if scale != 1.0 else None)


def _constant(n, m, depth, value=0.0):
    target = EuclideanSpace(max(n, 1))
    return SampledMap.from_function(n, m, depth, target,
                                    lambda p: np.full((len(p), target.width), float(value)),
                                    0.0, "constant")


def _linear(n, m, depth, matrix=None):
    d = n + m
    A = np.ones((1, d)) if matrix is None else np.atleast_2d(np.asarray(matrix, dtype=float))
    if A.shape[1] != d:
        raise ArgumentError(f"linear map needs a k x {d} matrix")
    target = EuclideanSpace(A.shape[0])
    lip = float(np.linalg.norm(A, 2))
    return SampledMap.from_function(n, m, depth, target, lambda p: p @ A.T, lip, "linear",
                                    {"matrix": A.tolist()})


def _shear_demo(n, m, depth):
    if (n, m) != (1, 1):
        raise ArgumentError("shear-demo is defined for n = m = 1")
    return SampledMap.from_function(1, 1, depth, EuclideanSpace(1),
                                    lambda p: np.minimum(p[:, 0], p[:, 1])[:, None],
                                    1.0, "shear-demo")


def star_map_values(k: int, coords: np.ndarray) -> np.ndarray:
    """Star-tree points for the bottom-left cube map and its extension.

    On Q_{a,b} = [2a s, (2a+1) s] x [2b s, (2b+1) s] with s = 2^-k the map
    sends (x, y) to spike b of star a at offset x - 2a s.  Nearby, the
    offset is clamp(x - 2a s, 0, s) - 3 dist_inf(p, Q_{a,b}) while positive;
    elsewhere the point goes to the backbone, held at v_a up to x = 2a s + 4s/3
    and then moving linearly (slope 3) to v_{a+1}.  Offset and backbone
    coordinate are both at most 4-Lipschitz and agree where they meet.
    """
    S = 1 << (k - 1)
    s = 2.0 ** -k
    x, y = coords[:, 0], coords[:, 1]
    a = np.minimum(np.floor(x / (2 * s)), S - 1)
    xa = a * 2 * s
    dx = np.maximum.reduce([np.zeros_like(x), xa - x, x - xa - s])
    along = np.clip(x - xa, 0.0, s)
    comp = np.full(len(x), -1.0)
    offset = xa + np.clip(3.0 * (x - xa - 4.0 * s / 3.0), 0.0, 2.0 * s)
    b0 = np.floor(y / (2 * s))
    for b in (b0, b0 + 1):
        valid = (b >= 0) & (b <= S - 1)
        yb = b * 2 * s
        dy = np.maximum.reduce([np.zeros_like(y), yb - y, y - yb - s])
        u = along - 3.0 * np.maximum(dx, dy)
        hit = valid & (u > 0)
        comp = np.where(hit, a * S + b, comp)
        offset = np.where(hit, u, offset)
    return np.stack([comp, offset], axis=1)


def build_star_map(k: int, depth: int, scale: float = 1.0) -> SampledMap:
    if depth < k + 1:
        raise ResolutionError(f"depth {depth} cannot resolve the level-{k} cubes Q_ab (need >= {k + 1})")
    tree = StarTree(k, scale)

    params = {"k": k} if scale == 1.0 else {"k": k, "scale": scale}
    return SampledMap.from_function(1, 1, depth, tree, lambda p: star_map_values(k, p),
                                    4.0 * scale, "star9", params)


def star_set(k: int, depth: int) -> CellSet:
    """The union A of the cubes Q_{a,b} as a cell set."""
    S = 1 << (k - 1)
    cubes = [CubeId(k, (2 * a, 2 * b)) for a in range(S) for b in range(S)]
    return CellSet.from_cubes(cubes, 2, depth)


def star_cube(k: int, a: int, b: int) -> CubeId:
    return CubeId(k, (2 * a, 2 * b))


def from_builtin(name: str, params: dict | None = None) -> SampledMap:
    """Builtin maps; params carry n, m, depth and map-specific keys."""
    p = dict(params or {})
    depth = int(p.pop("depth", 4))
    if name == "star9":
        k = int(p.pop("k", 2))
        return build_star_map(k, depth, float(p.pop("scale", 1.0)))
    n = int(p.pop("n", 1))
    m = int(p.pop("m", 1))
    if name == "projection":
        return _projection(n, m, depth, float(p.pop("scale", 1.0)))
    if name == "constant":
        return _constant(n, m, depth, float(p.pop("value", 0.0)))
    if name == "linear":
        return _linear(n, m, depth, p.pop("matrix", None))
    if name == "shear-demo":
        return _shear_demo(n, m, depth)
    raise ArgumentError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")


# grid-map files

def load_grid_map(path: str | Path) -> SampledMap:
    path = Path(path)
    spec = json.loads(path.read_text())
    try:
        n, m, depth = int(spec["n"]), int(spec["m"]), int(spec["depth"])
        tgt = spec["target"]
        kind = tgt["kind"]
        raw = np.asarray(spec["values"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ArgumentError(f"{path}: malformed grid map ({exc})") from exc
    if kind == "euclidean":
        target = EuclideanSpace(int(tgt["dim"]))
        values = raw.astype(float).reshape(-1, target.width)
    elif kind == "finite":
        mpath = Path(tgt["matrix"])
        if not mpath.is_absolute():
            mpath = path.parent / mpath
        target = load_finite_metric(mpath)
        values = raw.astype(np.int64).astype(float).reshape(-1, 1)
        target.validate(values)
        target.ids(values)
    elif kind == "startree":
        target = StarTree(int(tgt["k"]))
        values = target.decode(raw.astype(np.int64), depth)
    else:
        raise ArgumentError(f"{path}: unknown target kind {kind!r}")
    fm = SampledMap(n, m, depth, target, values, 0.0, name=path.stem)
    declared = spec.get("lipschitz")
    fm.lipschitz = float(declared) if declared is not None else lipschitz_estimate(fm)
    return fm


def save_grid_map(fmap: SampledMap, path: str | Path, matrix_path: str | None = None) -> None:
    t = fmap.target
    if isinstance(t, EuclideanSpace):
        target = {"kind": "euclidean", "dim": t.width}
        values = fmap.values.reshape(-1).tolist()
    elif isinstance(t, FiniteMetric):
        target = {"kind": "finite", "matrix": matrix_path or t.source}
        values = fmap.values[:, 0].astype(np.int64).tolist()
    elif isinstance(t, StarTree):
        target = {"kind": "startree", "k": t.k}
        values = t.encode(fmap.values, fmap.depth).tolist()
    else:
        raise ArgumentError("only euclidean, finite and startree targets can be saved")
    doc = {"n": fmap.n, "m": fmap.m, "depth": fmap.depth, "target": target,
           "lipschitz": fmap.lipschitz, "values": values}
    Path(path).write_text(json.dumps(doc))
