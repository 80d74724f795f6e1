"""Hausdorff content brackets, Lebesgue measure and mapping content.

A finite sample has zero Hausdorff content, so contents here are taken at
a resolution r0: covers use closed balls centred at sample points with
radius at least r0, each ball costing (2r)^k.  A set with a single
distinct point costs nothing.  The upper bracket comes from a greedy ball
cover; the lower bracket is the mass of a greedy distribution that no
admissible ball overloads, so it bounds every admissible cover from below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull

from .dyadic import CellSet, CubeId, children, cubes_at_level, root
from .errors import ArgumentError
from .metricspaces import DistanceOracle, EuclideanSpace
from .parallel import pmap
from .sampledmaps import SampledMap, corner_mask, lattice_coords

# Candidate ball centres and mass-bound points are capped for large sets.
MAX_CENTERS = 2000
MAX_MASS_POINTS = 1500
NET_THRESHOLD = 3000
RATIO_GREEDY_POINTS = 200


@dataclass(frozen=True)
class ContentBracket:
    lower: float
    upper: float
    k: float

    def __post_init__(self):
        if self.lower > self.upper * (1 + 1e-12) + 1e-15:
            raise ArgumentError(f"bracket lower {self.lower} exceeds upper {self.upper}")

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper, "k": self.k}


def dyadic_floor(x: float) -> float:
    return 2.0 ** math.floor(math.log2(x))


def dyadic_ceil(x: float) -> float:
    return 2.0 ** math.ceil(math.log2(x))


def map_resolution(fmap: SampledMap) -> float:
    """Smallest dyadic radius reaching half the image of a lattice step."""
    return dyadic_ceil(max(fmap.lipschitz, 1e-300) * fmap.h / 2.0) if fmap.lipschitz > 0 else fmap.h / 2


def unique_points(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    return np.unique(pts, axis=0)


def _radii(dist: np.ndarray, r0: float) -> np.ndarray:
    reach = float(dist.max(axis=1).min())
    radii = [r0]
    while radii[-1] < reach:
        radii.append(radii[-1] * 2)
    return np.array(radii)


def _subsample(n: int, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, cap).round().astype(np.int64))


def _eccentricities(pts: np.ndarray, centers: np.ndarray, oracle: DistanceOracle) -> np.ndarray:
    out = np.empty(len(centers))
    step = max(1, 4_000_000 // max(len(pts), 1))
    for s in range(0, len(centers), step):
        out[s:s + step] = oracle.pairwise(pts[centers[s:s + step]], pts).max(axis=1)
    return out


def greedy_cover_upper(pts: np.ndarray, oracle: DistanceOracle, k: float, r0: float) -> float:
    """Upper bound from ball covers; the cheaper of two greedy rules.

    The rule taking the ball covering the most uncovered points (smaller
    radius on ties) stops after one ball of least eccentricity.  For small
    sets a second rule takes the ball of least cost per newly covered point,
    with dyadic radii from r0, which suits scattered sets.  That rule only
    credits a ball with the samples whose r0-balls it contains, so gaps
    between lattice samples cannot be skipped.
    """
    centers = _subsample(len(pts), MAX_CENTERS)
    ecc = float(_eccentricities(pts, centers, oracle).min())
    best = float((2 * max(r0, ecc)) ** k)
    if len(pts) <= RATIO_GREEDY_POINTS:
        best = min(best, _ratio_greedy(oracle.pairwise(pts), k, r0))
    return best


def _ratio_greedy(dist: np.ndarray, k: float, r0: float) -> float:
    radii = _radii(dist, r0)
    cost = (2 * radii) ** k
    # a ball is credited with a sample only if it holds the sample's r0-ball
    inside = dist[:, None, :] + r0 <= radii[None, :, None] * (1 + 1e-12)
    left = np.ones(len(dist), dtype=bool)
    total = 0.0
    while left.any():
        gain = (inside & left).sum(axis=2)
        score = np.where(gain > 0, cost[None, :] / np.maximum(gain, 1), np.inf)
        c, r = np.unravel_index(int(np.argmin(score)), score.shape)
        total += float(cost[r])
        left &= ~inside[c, r]
    return total


def _mass_lower(dist: np.ndarray, radii: np.ndarray, k: float) -> float:
    """Greedy mass distribution with mu(B(c, r)) <= (2r)^k for every ball."""
    n = len(dist)
    slack = np.broadcast_to(((2 * radii) ** k)[:, None], (len(radii), n)).copy()
    total = 0.0
    for p in range(n):
        inside = dist[:, p][None, :] <= radii[:, None]
        mu = float(slack[inside].min())
        if mu <= 0:
            continue
        slack[inside] -= mu
        total += mu
    return total


def hausdorff_content(points: np.ndarray, oracle: DistanceOracle, k: float,
                      resolution: float | None = None) -> ContentBracket:
    """Bracket the k-dimensional Hausdorff content of a finite point set.

    Admissible balls are centred at sample points with radii of at least
    ``resolution`` (default: half the smallest nonzero distance, rounded
    down to a power of two).  The lower value is the mass of a distribution
    that no dyadic-radius ball overloads, divided by 2^k since every
    admissible ball sits inside a dyadic one of at most twice its radius.
    It is computed on a subsample when the set is large, which keeps it a
    lower bound.
    """
    if k <= 0:
        raise ArgumentError("content dimension k must be positive")
    pts = unique_points(points)
    if len(pts) == 0:
        raise ArgumentError("need at least one point")
    if len(pts) == 1:
        return ContentBracket(0.0, 0.0, k)
    sub = pts[_subsample(len(pts), MAX_MASS_POINTS)]
    dist = oracle.pairwise(sub)
    if resolution is None:
        nz = dist[dist > 0]
        resolution = dyadic_floor(float(nz.min()) / 2.0)
    r0 = float(resolution)
    upper = greedy_cover_upper(pts, oracle, k, r0)
    lower = _mass_lower(dist, _radii(dist, r0), k) / 2.0 ** k if len(sub) > 1 else 0.0
    return ContentBracket(min(lower, upper), upper, k)


def lebesgue_measure(E: CellSet) -> float:
    return E.measure


def matched_mask(a: np.ndarray, b: np.ndarray, oracle: DistanceOracle, tol: float) -> np.ndarray:
    """Rows of ``a`` lying within ``tol`` of some row of ``b``."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros(len(a), dtype=bool)
    out = np.zeros(len(a), dtype=bool)
    step = max(1, 2_000_000 // max(len(b), 1))
    for s in range(0, len(a), step):
        out[s:s + step] = (oracle.pairwise(a[s:s + step], b) <= tol).any(axis=1)
    return out


class ContentEngine:
    """Per-map cache of cube image contents at the map's resolution."""

    def __init__(self, fmap: SampledMap, k: float | None = None):
        self.map = fmap
        self.k = float(fmap.n if k is None else k)
        self.resolution = map_resolution(fmap)
        self._cache: dict[CubeId, ContentBracket] = {}

    def points_bracket(self, flat: np.ndarray) -> ContentBracket:
        if self.k == 0:
            return ContentBracket(1.0, 1.0, 0.0)
        return hausdorff_content(self.map.values[flat], self.map.target, self.k, self.resolution)

    def image_bracket(self, cube: CubeId) -> ContentBracket:
        hit = self._cache.get(cube)
        if hit is None:
            hit = self.points_bracket(self.map.cube_indices(cube))
            self._cache[cube] = hit
        return hit

    def prefetch(self, cubes: list[CubeId]) -> None:
        todo = [q for q in cubes if q not in self._cache]
        for q, br in zip(todo, pmap(lambda q: self.points_bracket(self.map.cube_indices(q)), todo)):
            self._cache[q] = br

    def cost(self, cube: CubeId) -> ContentBracket:
        br = self.image_bracket(cube)
        w = cube.side ** self.map.m
        return ContentBracket(br.lower * w, br.upper * w, self.k)


@dataclass
class MappingContentResult:
    value: float
    lower: float
    upper: float
    antichain: list[CubeId]
    costs: dict[CubeId, float] = field(default_factory=dict)

    def to_dict(self):
        return {
            "value": self.value,
            "lower": self.lower,
            "upper": self.upper,
            "antichain": [q.as_list() for q in self.antichain],
        }


def meeting_cubes(E: CellSet, depth: int) -> dict[int, list[CubeId]]:
    """Cubes of levels 0..depth that meet E, by level, lexicographic."""
    out = {}
    bits = E.bits
    for level in range(depth, -1, -1):
        w = 1 << (E.depth - level)
        shape = []
        for _ in range(E.d):
            shape.extend([1 << level, w])
        blocks = bits.reshape(shape).any(axis=tuple(range(1, 2 * E.d, 2)))
        idx = np.argwhere(blocks)
        out[level] = sorted(CubeId(level, tuple(int(v) for v in row)) for row in idx)
    return out


def mapping_content(fmap: SampledMap, E: CellSet, depth: int | None = None,
                    engine: ContentEngine | None = None) -> MappingContentResult:
    """Exact dyadic-antichain minimum of sum cost(Q) over covers of E.

    best(Q) = min(cost(Q), sum over children of best(child)); cubes missing
    E contribute nothing.  ``lower`` repeats the recursion with the lower
    brackets.
    """
    depth = fmap.depth if depth is None else depth
    if depth > fmap.depth:
        raise ArgumentError("DP depth cannot exceed the lattice depth")
    if E.depth != fmap.depth or E.d != fmap.d:
        raise ArgumentError("cell set does not match the map's lattice")
    if not E:
        raise ArgumentError("E must be nonempty")
    eng = engine or ContentEngine(fmap)
    levels = meeting_cubes(E, depth)
    eng.prefetch([q for lvl in sorted(levels) for q in levels[lvl]])
    best_u: dict[CubeId, float] = {}
    best_l: dict[CubeId, float] = {}
    take: dict[CubeId, bool] = {}
    costs: dict[CubeId, float] = {}
    for level in range(depth, -1, -1):
        for q in levels[level]:
            c = eng.cost(q)
            costs[q] = c.upper
            if level == depth:
                best_u[q], best_l[q], take[q] = c.upper, c.lower, True
                continue
            kids = [ch for ch in children(q) if ch in best_u]
            su = sum(best_u[ch] for ch in kids)
            sl = sum(best_l[ch] for ch in kids)
            take[q] = c.upper <= su
            best_u[q] = c.upper if take[q] else su
            best_l[q] = min(c.lower, sl)
    top = root(fmap.d)
    antichain = []
    stack = [top]
    while stack:
        q = stack.pop()
        if take[q]:
            antichain.append(q)
        else:
            stack.extend(ch for ch in children(q) if ch in take)
    antichain.sort()
    return MappingContentResult(best_u[top], best_l[top], best_u[top], antichain, costs)


def cell_corner_indices(fmap: SampledMap, cells: CellSet) -> np.ndarray:
    return np.flatnonzero(corner_mask(cells).reshape(-1))


def set_diameter(fmap: SampledMap, cells: CellSet) -> float:
    """Euclidean diameter of a union of closed cells."""
    idx = cell_corner_indices(fmap, cells)
    pts = fmap.coords(idx)
    if len(pts) > 2000 and fmap.d >= 2:
        # diameter endpoints are vertices of the convex hull
        pts = pts[ConvexHull(pts).vertices]
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=2)).max())


def _set_cost(fmap: SampledMap, eng: ContentEngine, cells: CellSet) -> float:
    br = eng.points_bracket(cell_corner_indices(fmap, cells))
    if br.upper == 0.0:
        return 0.0
    return br.upper * set_diameter(fmap, cells) ** fmap.m


def arbitrary_mapping_content_upper(fmap: SampledMap, E: CellSet,
                                    strategies=("dp", "clusters", "single")) -> float:
    """Upper bound for the arbitrary-set variant: min over candidate covers.

    Each cover {S_i} of E costs sum H^n-upper(f(S_i)) diam(S_i)^m.
    """
    if not E:
        raise ArgumentError("E must be nonempty")
    eng = ContentEngine(fmap)
    found = []
    d = fmap.d
    if "dp" in strategies:
        res = mapping_content(fmap, E, engine=eng)
        total = 0.0
        for q in res.antichain:
            whole = eng.image_bracket(q).upper * (math.sqrt(d) * q.side) ** fmap.m
            part = E.within(q)
            total += min(whole, _set_cost(fmap, eng, part))
        found.append(total)
    if "single" in strategies:
        found.append(_set_cost(fmap, eng, E))
    if "clusters" in strategies:
        found.append(_cluster_cover(fmap, eng, E))
    if not found:
        raise ArgumentError("no strategy selected")
    return min(found)


def _cluster_cover(fmap: SampledMap, eng: ContentEngine, E: CellSet) -> float:
    """Group cells by greedy image-space clustering and pull the clusters back."""
    anchors = fmap.anchors(E)
    cells = E.cells()
    imgs = fmap.values[anchors]
    uniq, inverse = np.unique(imgs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(uniq) == 1:
        return 0.0
    if len(uniq) > NET_THRESHOLD:
        return math.inf
    dist = fmap.target.pairwise(uniq)
    best = math.inf
    rho = eng.resolution
    top = float(dist.max())
    while rho < 2 * top:
        label = np.full(len(uniq), -1)
        centers = []
        for i in range(len(uniq)):
            if label[i] < 0:
                centers.append(i)
                label[(label < 0) & (dist[i] <= rho)] = len(centers) - 1
        total = 0.0
        for c in range(len(centers)):
            members = cells[label[inverse] == c]
            bits = np.zeros_like(E.bits)
            bits[tuple(members.T)] = True
            total += _set_cost(fmap, eng, CellSet(bits, E.depth))
            if total >= best:
                break
        best = min(best, total)
        rho *= 2
    return best


def local_density(fmap: SampledMap, x, radii) -> float:
    """min over r of H^n-upper(f(B(x, r) ∩ lattice)) / r^n."""
    radii = list(radii)
    if not radii:
        raise ArgumentError("need at least one radius")
    if any(not 0 < r <= 1 for r in radii):
        raise ArgumentError("radii must lie in (0, 1]")
    eng = ContentEngine(fmap)
    x = np.asarray(x, dtype=float)
    grid = lattice_coords(fmap.d, fmap.depth)
    dist = np.sqrt(((grid - x) ** 2).sum(axis=1))
    out = math.inf
    for r in radii:
        idx = np.flatnonzero(dist <= r + 1e-12)
        br = eng.points_bracket(idx)
        out = min(out, br.upper / r ** fmap.n)
    return out


@lru_cache(maxsize=None)
def unit_cube_content(n: int, depth: int = 4) -> ContentBracket:
    """Bracket for the content of a densely sampled unit n-cube."""
    pts = lattice_coords(n, depth)
    return hausdorff_content(pts, EuclideanSpace(n), float(n), 2.0 ** -(depth + 1))


def all_cubes(d: int, depth: int) -> list[CubeId]:
    return [q for level in range(depth + 1) for q in cubes_at_level(d, level)]


EXHAUSTIVE_LIMIT = 2_000_000


def exhaustive_mapping_content(fmap: SampledMap, E: CellSet, depth: int,
                               engine: ContentEngine | None = None) -> float:
    """Minimum over an explicit list of every dyadic antichain cover of E.

    Each cube meeting E contributes the totals of all covers of E ∩ Q:
    either Q alone, or one cover per child combined in every way.  Only
    practical for small depths.
    """
    if depth > fmap.depth:
        raise ArgumentError("depth cannot exceed the lattice depth")
    if not E:
        raise ArgumentError("E must be nonempty")
    eng = engine or ContentEngine(fmap)
    levels = meeting_cubes(E, depth)
    totals: dict[CubeId, np.ndarray] = {}
    for level in range(depth, -1, -1):
        for q in levels[level]:
            own = np.array([eng.cost(q).upper])
            if level == depth:
                totals[q] = own
                continue
            combo = np.zeros(1)
            for ch in children(q):
                if ch in totals:
                    combo = (combo[:, None] + totals[ch][None, :]).ravel()
                    if combo.size > EXHAUSTIVE_LIMIT:
                        raise ArgumentError("too many antichains for exhaustive enumeration")
            totals[q] = np.concatenate([own, combo])
    return float(totals[root(fmap.d)].min())
