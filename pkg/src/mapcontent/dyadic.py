"""Dyadic cubes of [0,1]^d, dilations, cell sets and the greedy splitting.

All cube geometry is exact integer arithmetic: a cube at level k with index
vector j is the box prod_i [j_i 2^-k, (j_i+1) 2^-k].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, DepthError


@dataclass(frozen=True, order=True)
class CubeId:
    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise ArgumentError("cube level must be nonnegative")
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))
        top = 1 << self.level
        for i in self.index:
            if not 0 <= i < top:
                raise ArgumentError(f"index {self.index} out of range at level {self.level}")

    @property
    def d(self) -> int:
        return len(self.index)

    @property
    def side(self) -> float:
        return 2.0 ** -self.level

    @property
    def volume(self) -> float:
        return 2.0 ** (-self.level * self.d)

    def lattice_bounds(self, depth: int) -> tuple[np.ndarray, np.ndarray]:
        """Closed integer bounds [lo, hi] of the cube in lattice units 2^-depth."""
        if self.level > depth:
            raise DepthError(f"level {self.level} is finer than depth {depth}")
        w = 1 << (depth - self.level)
        lo = np.array(self.index, dtype=np.int64) * w
        return lo, lo + w

    def contains(self, other: "CubeId") -> bool:
        """True when ``other`` is this cube or one of its descendants."""
        if other.level < self.level:
            return False
        shift = other.level - self.level
        return all((j >> shift) == i for i, j in zip(self.index, other.index))

    def parent(self) -> "CubeId":
        if self.level == 0:
            raise DepthError("the root cube has no parent")
        return CubeId(self.level - 1, tuple(i >> 1 for i in self.index))

    def ancestor(self, level: int) -> "CubeId":
        if level > self.level:
            raise DepthError("ancestor level must not exceed the cube level")
        shift = self.level - level
        return CubeId(level, tuple(i >> shift for i in self.index))

    def as_list(self) -> list[int]:
        return [self.level, *self.index]


def root(d: int) -> CubeId:
    return CubeId(0, (0,) * d)


def cubes_at_level(d: int, level: int) -> list[CubeId]:
    """All cubes of a level, lexicographic in the index vector."""
    top = 1 << level
    return [CubeId(level, idx) for idx in itertools.product(range(top), repeat=d)]


def children(cube: CubeId, depth: int | None = None) -> list[CubeId]:
    """The 2^d children, first coordinate varying fastest."""
    if depth is not None and cube.level >= depth:
        raise DepthError(f"cube at level {cube.level} has no children at depth {depth}")
    out = []
    for offs in itertools.product((0, 1), repeat=cube.d):
        offs = offs[::-1]
        out.append(CubeId(cube.level + 1, tuple(2 * i + o for i, o in zip(cube.index, offs))))
    return out


@dataclass(frozen=True)
class Region:
    """Axis-aligned box with exact bounds num/2^level.

    ``lo``/``hi`` are the clipped bounds; ``clipped`` records whether the
    nominal box stuck out of [0,1]^d.  ``nominal_side`` is the unclipped
    side length, which normalizes metric derivatives.
    """

    level: int
    lo: tuple[int, ...]
    hi: tuple[int, ...]
    clipped: bool
    nominal_side: float

    @property
    def d(self) -> int:
        return len(self.lo)

    def lattice_bounds(self, depth: int) -> tuple[np.ndarray, np.ndarray]:
        if self.level > depth:
            raise DepthError(f"region level {self.level} is finer than depth {depth}")
        s = 1 << (depth - self.level)
        return np.array(self.lo, dtype=np.int64) * s, np.array(self.hi, dtype=np.int64) * s

    def bounds(self) -> tuple[tuple[Fraction, ...], tuple[Fraction, ...]]:
        den = 1 << self.level
        return (tuple(Fraction(v, den) for v in self.lo), tuple(Fraction(v, den) for v in self.hi))

    def contains_point(self, x: Sequence) -> bool:
        lo, hi = self.bounds()
        return all(a <= Fraction(v) <= b for a, v, b in zip(lo, x, hi))

    def cubes(self) -> list[CubeId]:
        """Same-level cubes making up the (clipped) box."""
        ranges = [range(a, b) for a, b in zip(self.lo, self.hi)]
        return [CubeId(self.level, idx[::-1]) for idx in itertools.product(*ranges[::-1])]


def dilate(cube: CubeId, factor: int, clip: bool = True) -> Region:
    """Concentric box with ``factor`` times the side, clipped to [0,1]^d."""
    if factor < 1 or factor % 2 == 0:
        raise ArgumentError(f"dilation factor must be an odd positive integer, got {factor}")
    half = (factor - 1) // 2
    top = 1 << cube.level
    lo = [i - half for i in cube.index]
    hi = [i + half + 1 for i in cube.index]
    was_clipped = any(v < 0 for v in lo) or any(v > top for v in hi)
    if clip:
        lo = [max(v, 0) for v in lo]
        hi = [min(v, top) for v in hi]
    return Region(cube.level, tuple(lo), tuple(hi), was_clipped, factor * cube.side)


def boxes_disjoint(a: Region, b: Region) -> bool:
    """Closed boxes are disjoint iff they are separated in some coordinate."""
    lvl = max(a.level, b.level)
    sa, sb = 1 << (lvl - a.level), 1 << (lvl - b.level)
    for alo, ahi, blo, bhi in zip(a.lo, a.hi, b.lo, b.hi):
        if ahi * sa < blo * sb or bhi * sb < alo * sa:
            return True
    return False


def interiors_disjoint(a: CubeId, b: CubeId) -> bool:
    return not (a.contains(b) or b.contains(a))


def minimal_containing_cube(x: Sequence, y: Sequence, depth: int) -> CubeId:
    """Smallest dyadic cube Q (level <= depth) with x, y in 3Q.

    Ties at the minimal level go to the smallest lexicographic index.
    Coordinates are converted to exact fractions.
    """
    xs = [Fraction(v) for v in x]
    ys = [Fraction(v) for v in y]
    for level in range(depth, -1, -1):
        side = Fraction(1, 1 << level)
        top = (1 << level) - 1
        idx = []
        for a, b in zip(xs, ys):
            lo_pt, hi_pt = min(a, b), max(a, b)
            first = max(math.ceil(hi_pt / side - 2), 0)
            last = min(math.floor(lo_pt / side + 1), top)
            if first > last:
                break
            idx.append(first)
        else:
            return CubeId(level, tuple(idx))
    raise ArgumentError("points must lie in the unit cube")


def family_count_bound(lam: int, eta: float, d: int) -> int:
    """Analytic bound k0 on the number of Λ-separated families."""
    c = 1.0 / (1.0 + (2 * lam + 1) ** d)
    return max(1, math.ceil(math.log(eta) / math.log(1.0 - c)))


def split_separated(cubes: Iterable[CubeId], lam: int, eta: float):
    """Greedy split into Λ-separated families plus a small remainder B.

    Each round scans the remaining cubes largest first (ties lexicographic)
    and keeps a cube when its Λ-dilation misses those already kept.  Rounds
    stop once the remaining measure drops below ``eta``.
    """
    if eta <= 0:
        raise ArgumentError("eta must be positive")
    if lam <= 3 or lam % 2 == 0:
        raise ArgumentError("Λ must be an odd integer greater than 3")
    remaining = sorted(set(cubes))
    families: list[list[CubeId]] = []
    while remaining and sum(q.volume for q in remaining) >= eta:
        fam: list[CubeId] = []
        boxes: list[Region] = []
        rest = []
        for q in remaining:
            box = dilate(q, lam, clip=False)
            if all(boxes_disjoint(box, other) for other in boxes):
                fam.append(q)
                boxes.append(box)
            else:
                rest.append(q)
        families.append(fam)
        remaining = rest
    return families, remaining


class CellSet:
    """Set of finest cells at depth D, stored as a boolean grid.

    Axis i of the grid is coordinate i.  Instances are immutable.
    """

    __slots__ = ("depth", "d", "bits")

    def __init__(self, bits: np.ndarray, depth: int):
        bits = np.array(bits, dtype=bool)
        if bits.shape != (1 << depth,) * bits.ndim:
            raise ArgumentError(f"cell grid shape {bits.shape} does not match depth {depth}")
        bits.flags.writeable = False
        self.bits = bits
        self.depth = depth
        self.d = bits.ndim

    @classmethod
    def full(cls, d: int, depth: int) -> "CellSet":
        return cls(np.ones((1 << depth,) * d, dtype=bool), depth)

    @classmethod
    def empty(cls, d: int, depth: int) -> "CellSet":
        return cls(np.zeros((1 << depth,) * d, dtype=bool), depth)

    @classmethod
    def from_cubes(cls, cubes: Iterable[CubeId], d: int, depth: int) -> "CellSet":
        bits = np.zeros((1 << depth,) * d, dtype=bool)
        for q in cubes:
            bits[q_slices(q, depth)] = True
        return cls(bits, depth)

    @classmethod
    def from_flat(cls, flat: np.ndarray, d: int, depth: int) -> "CellSet":
        return cls(np.asarray(flat, dtype=bool).reshape((1 << depth,) * d), depth)

    def _check(self, other: "CellSet"):
        if other.depth != self.depth or other.d != self.d:
            raise ArgumentError("cell sets live at different resolutions")

    def __or__(self, other):
        self._check(other)
        return CellSet(self.bits | other.bits, self.depth)

    def __and__(self, other):
        self._check(other)
        return CellSet(self.bits & other.bits, self.depth)

    def __sub__(self, other):
        self._check(other)
        return CellSet(self.bits & ~other.bits, self.depth)

    def __invert__(self):
        return CellSet(~self.bits, self.depth)

    def __eq__(self, other):
        return (
            isinstance(other, CellSet)
            and other.depth == self.depth
            and np.array_equal(other.bits, self.bits)
        )

    def __hash__(self):
        return hash((self.depth, self.bits.tobytes()))

    def __len__(self):
        return int(self.bits.sum())

    def __bool__(self):
        return bool(self.bits.any())

    def __repr__(self):
        return f"CellSet(d={self.d}, depth={self.depth}, count={len(self)})"

    @property
    def measure(self) -> float:
        return len(self) * 2.0 ** (-self.d * self.depth)

    def issubset(self, other: "CellSet") -> bool:
        self._check(other)
        return not (self.bits & ~other.bits).any()

    def cells(self) -> np.ndarray:
        """Integer multi-indices (lower corners) of member cells, C order."""
        return np.argwhere(self.bits)

    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1)

    def meets(self, cube: CubeId) -> bool:
        return bool(self.bits[q_slices(cube, self.depth)].any())

    def within(self, cube: CubeId) -> "CellSet":
        bits = np.zeros_like(self.bits)
        sl = q_slices(cube, self.depth)
        bits[sl] = self.bits[sl]
        return CellSet(bits, self.depth)

    def run_lengths(self) -> list[int]:
        """Alternating run lengths of the flat mask, starting with a 0-run."""
        flat = self.flat().astype(np.int8)
        change = np.flatnonzero(np.diff(flat)) + 1
        edges = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(edges).tolist()
        if flat.size and flat[0]:
            runs = [0] + runs
        return runs


def q_slices(cube: CubeId, depth: int) -> tuple[slice, ...]:
    """Index slices of the cells inside ``cube`` on a depth-D cell grid."""
    if cube.level > depth:
        raise DepthError(f"level {cube.level} is finer than depth {depth}")
    w = 1 << (depth - cube.level)
    return tuple(slice(i * w, (i + 1) * w) for i in cube.index)


def region_slices(region: Region, depth: int) -> tuple[slice, ...]:
    lo, hi = region.lattice_bounds(depth)
    return tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))
