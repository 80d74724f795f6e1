"""Cube classification, coding, stopping time, pieces and piecewise rotations.

Pipeline: classify cubes as Md / Compressed / Good, pick an initial level
whose non-Good cubes carry little mapping content, run the plane-switching
stopping time below every Good top cube, split each stopping generation
into Λ-separated families, intersect with the coding classes and finally
rotate cubes in place so every assigned plane lines up with the first n
coordinates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .content import ContentEngine, mapping_content
from .dyadic import (
    CellSet,
    CubeId,
    boxes_disjoint,
    children,
    cubes_at_level,
    dilate,
    q_slices,
    region_slices,
    split_separated,
)
from .errors import ArgumentError, FailureReport
from .metricderiv import MdEngine, Seminorm, default_c0
from .sampledmaps import SampledMap

MESH_DEGREES = 5.0

Plane = tuple[int, ...]


# parameter presets

@dataclass(frozen=True)
class Preset:
    eps: float = 0.01
    delta: float = 0.2
    delta_prime: float = 0.05
    lam: int = 5
    K: int = 6
    K1: int | None = None
    alpha: float = 0.05
    C: float = 1.0
    c0: int | None = None
    coding_eta: float | None = None
    c_star: float = 0.0
    lip_star: float = math.inf

    @property
    def alpha_prime(self) -> float:
        return self.alpha / (10.0 * self.C)

    @property
    def alpha_second(self) -> float:
        return self.alpha_prime / self.K

    def k1(self, depth: int) -> int:
        return depth - 1 if self.K1 is None else self.K1

    def c0_for(self, n: int, m: int) -> int:
        return default_c0(n, m) if self.c0 is None else self.c0

    def eta_for_coding(self) -> float:
        return self.alpha_prime if self.coding_eta is None else self.coding_eta

    def validate(self) -> None:
        for name in ("eps", "delta", "delta_prime", "alpha", "C"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"preset value {name} must be positive")
        if self.lam <= 3 or self.lam % 2 == 0:
            raise ArgumentError("Λ must be an odd integer greater than 3")
        if self.K < 1:
            raise ArgumentError("K must be at least 1")

    def to_dict(self) -> dict:
        return {"eps": self.eps, "delta": self.delta, "delta_prime": self.delta_prime,
                "lam": self.lam, "K": self.K, "K1": self.K1, "alpha": self.alpha, "C": self.C,
                "alpha_prime": self.alpha_prime, "alpha_second": self.alpha_second,
                "c0": self.c0, "coding_eta": self.coding_eta}


PRESETS = {
    "default": Preset(),
    # coarse schedule that lets desk-scale lattices reach the later stages
    "desk": Preset(eps=0.05, delta=0.2, delta_prime=0.05, lam=5, K=4, alpha=0.5, c0=1),
}


def get_preset(name: str, **overrides) -> Preset:
    if name not in PRESETS:
        raise ArgumentError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    base = PRESETS[name].to_dict()
    for key in ("alpha_prime", "alpha_second"):
        base.pop(key)
    base.update({k: v for k, v in overrides.items() if v is not None})
    preset = Preset(**base)
    preset.validate()
    return preset


# coordinate planes and unit-vector meshes

def coordinate_planes(n: int, d: int) -> list[Plane]:
    """All coordinate n-planes of R^d as sorted index tuples, lexicographic."""
    return list(itertools.combinations(range(d), n))


def _sphere_mesh(k: int) -> np.ndarray:
    """Unit vectors of R^k on a mesh of at most MESH_DEGREES, up to sign."""
    if k == 1:
        return np.ones((1, 1))
    step = math.radians(MESH_DEGREES)
    if k == 2:
        t = np.arange(0.0, math.pi, step)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if k == 3:
        out = [[0.0, 0.0, 1.0]]
        for theta in np.arange(step, math.pi / 2 + 1e-12, step):
            count = max(1, math.ceil(2 * math.pi * math.sin(theta) / step))
            for phi in np.arange(count) * 2 * math.pi / count:
                out.append([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi),
                            math.cos(theta)])
        return np.array(out)
    raise ArgumentError("unit-vector meshes are provided for planes of dimension <= 3")


def _lattice_directions(k: int, reach: int = 2) -> np.ndarray:
    vecs = [v for v in itertools.product(range(-reach, reach + 1), repeat=k) if any(v)]
    arr = np.array(vecs, dtype=float)
    return arr / np.linalg.norm(arr, axis=1)[:, None]


def plane_directions(plane: Plane, d: int) -> np.ndarray:
    """Mesh plus lattice unit vectors of the coordinate plane, in R^d."""
    k = len(plane)
    local = np.vstack([_sphere_mesh(k), _lattice_directions(k)])
    out = np.zeros((len(local), d))
    out[:, list(plane)] = local
    return out


def plane_minimum(seminorm: Seminorm, plane: Plane, d: int) -> float:
    return float(seminorm(plane_directions(plane, d)).min())


# classification

@dataclass(frozen=True)
class CubeClass:
    kind: str  # "md", "compressed" or "good"
    md: float
    plane: Plane | None = None
    plane_min: dict = field(default_factory=dict)

    @property
    def good(self) -> bool:
        return self.kind == "good"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "md": self.md}
        if self.plane is not None:
            out["plane"] = list(self.plane)
        return out


def classify_cube(result, eps: float, delta: float, n: int, d: int) -> CubeClass:
    if result.md_upper >= eps:
        return CubeClass("md", result.md_upper)
    mins = {P: plane_minimum(result.seminorm, P, d) for P in coordinate_planes(n, d)}
    for P, val in mins.items():
        if val >= delta:
            return CubeClass("good", result.md_upper, P, mins)
    return CubeClass("compressed", result.md_upper, None, mins)


def classify_cubes(fmap: SampledMap, eps: float, delta: float, levels, engine: MdEngine | None = None
                   ) -> dict[CubeId, CubeClass]:
    """Classification of every cube at the given levels."""
    if fmap.n < 1:
        raise ArgumentError("classification needs n >= 1")
    eng = engine or MdEngine(fmap)
    cubes = [q for level in levels for q in cubes_at_level(fmap.d, level)]
    fits = eng.fit_many(cubes, lower=False)
    return {q: classify_cube(r, eps, delta, fmap.n, fmap.d) for q, r in zip(cubes, fits)}


def triples_cellset(cubes, d: int, depth: int) -> CellSet:
    bits = np.zeros((1 << depth,) * d, dtype=bool)
    for q in cubes:
        bits[region_slices(dilate(q, 3), depth)] = True
    return CellSet(bits, depth)


def compressed_content_bound(fmap: SampledMap, classes: dict[CubeId, CubeClass], eps: float,
                             delta: float, engine: ContentEngine | None = None) -> dict:
    """DP content of the union of triples of Compressed cubes, against eps + delta."""
    comp = [q for q, c in classes.items() if c.kind == "compressed"]
    region = triples_cellset(comp, fmap.d, fmap.depth)
    value = mapping_content(fmap, region, engine=engine).value if region else 0.0
    return {"compressed_cubes": len(comp), "measure": region.measure, "content": value,
            "ratio": value / (eps + delta)}


# farthest coordinate plane

def farthest_coordinate_plane(K_basis, n: int) -> tuple[Plane, float]:
    """Coordinate n-plane whose unit vectors stay farthest from span(K_basis).

    For a plane P the minimum of dist(w, K) over unit w in P is the square
    root of the least eigenvalue of B_P^T (I - Π_K) B_P; the mesh search
    over P is used as a cross-check and may only lower the value.
    """
    B = np.atleast_2d(np.asarray(K_basis, dtype=float))
    d = B.shape[1]
    m = d - n
    if n < 1 or m < 0:
        raise ArgumentError("need 1 <= n <= d")
    rank = np.linalg.matrix_rank(B, tol=1e-10) if B.size else 0
    if rank > m:
        raise ArgumentError(f"span of K has dimension {rank} > m = {m}")
    if rank:
        U, s, _ = np.linalg.svd(B.T, full_matrices=False)
        U = U[:, :rank]
        proj = np.eye(d) - U @ U.T
    else:
        proj = np.eye(d)
    best_plane, best = None, -1.0
    for P in coordinate_planes(n, d):
        sub = proj[np.ix_(P, P)]
        exact = math.sqrt(max(float(np.linalg.eigvalsh(sub).min()), 0.0))
        if n <= 3:
            W = plane_directions(P, d)
            mesh = float(np.sqrt(np.clip(((W @ proj) * W).sum(axis=1), 0.0, None)).min())
            exact = min(exact, mesh)
        if exact > best + 1e-15:
            best_plane, best = P, exact
    return best_plane, best


# coding

@dataclass
class CodingResult:
    classes: list[CellSet]
    g_md: CellSet
    n_cap: int
    labels: np.ndarray
    eps: float
    eta: float

    @property
    def count(self) -> int:
        return len(self.classes)

    def to_dict(self) -> dict:
        return {"classes": self.count, "g_md_measure": self.g_md.measure, "n_cap": self.n_cap,
                "class_measures": [c.measure for c in self.classes]}


GRID_MIN_LEVEL = -4
BAD_WINDOW = (-1, 4)


def shifted_index(cells: np.ndarray, level: int, shift: np.ndarray, depth: int) -> np.ndarray:
    """Index of the shifted cube 2^-level (j + [0,1]^d) + shift/3 holding each cell centre.

    Exact integer arithmetic: the centre is (2c+1)/2^(depth+1).
    """
    lift = level - GRID_MIN_LEVEL
    num = 3 * (2 * cells + 1) * (1 << lift) - shift[None, :] * (1 << (depth + 1 - GRID_MIN_LEVEL))
    den = 3 * (1 << (depth + 1 - GRID_MIN_LEVEL))
    return num // den


def _bad_levels(fmap: SampledMap, eps: float, engine: MdEngine) -> dict[int, np.ndarray]:
    """Per standard level, the cell mask of the triples of cubes with md >= eps."""
    out = {}
    for level in range(fmap.depth + 1):
        cubes = cubes_at_level(fmap.d, level)
        vals = engine.fit_many(cubes, lower=False)
        bad = [q for q, r in zip(cubes, vals) if r.md_upper >= eps]
        out[level] = triples_cellset(bad, fmap.d, fmap.depth).bits.reshape(-1)
    return out


def coding_decomposition(fmap: SampledMap, eps: float, eta: float, engine: MdEngine | None = None
                         ) -> CodingResult:
    """Split the cells into classes A_p plus a small remainder G_md.

    On each of the 2^d grids shifted by 0 or 1/3 per coordinate, a shifted
    cube R of level k is bad when a standard cube Q of level in
    [k-1, k+4] whose triple meets R has md(C0 Q) >= eps.  A cell's word in
    a grid lists, level by level, which child of each bad ancestor holds
    it.  Cells with more than N_cap bad ancestors in some grid form G_md,
    with N_cap the least value giving measure(G_md) < eta; the remaining
    cells are grouped by their words in all grids.
    """
    if eta <= 0:
        raise ArgumentError("eta must be positive")
    eng = engine or MdEngine(fmap)
    D, d = fmap.depth, fmap.d
    cells = np.argwhere(np.ones((1 << D,) * d, dtype=bool))
    bad_std = _bad_levels(fmap, eps, eng)
    ncell = len(cells)
    levels = range(GRID_MIN_LEVEL, D + 1)
    words = []
    counts = np.zeros(ncell, dtype=np.int64)
    for shift in itertools.product((0, 1), repeat=d):
        sh = np.array(shift, dtype=np.int64)
        grid_word = np.full((ncell, len(levels)), -1, dtype=np.int64)
        grid_count = np.zeros(ncell, dtype=np.int64)
        for col, k in enumerate(levels):
            idx = shifted_index(cells, k, sh, D)
            window = np.zeros(ncell, dtype=bool)
            for L in range(max(k + BAD_WINDOW[0], 0), min(k + BAD_WINDOW[1], D) + 1):
                window |= bad_std[L]
            _, group = np.unique(idx, axis=0, return_inverse=True)
            group = group.reshape(-1)
            bad_group = np.bincount(group, weights=window, minlength=group.max() + 1) > 0
            bad = bad_group[group]
            child = shifted_index(cells, k + 1, sh, D) - 2 * idx
            letter = (child * (1 << np.arange(d))).sum(axis=1)
            grid_word[bad, col] = letter[bad]
            grid_count += bad
        words.append(grid_word)
        counts = np.maximum(counts, grid_count)
    cell_vol = 2.0 ** (-d * D)
    n_cap = 0
    while (counts > n_cap).sum() * cell_vol >= eta:
        n_cap += 1
    in_g = counts > n_cap
    key = np.concatenate(words, axis=1)
    labels = np.full(ncell, -1, dtype=np.int64)
    order: dict[bytes, int] = {}
    for i in np.flatnonzero(~in_g):
        labels[i] = order.setdefault(key[i].tobytes(), len(order))
    grid_shape = (1 << D,) * d
    classes = [CellSet((labels == p).reshape(grid_shape), D) for p in range(len(order))]
    g_md = CellSet(in_g.reshape(grid_shape), D)
    return CodingResult(classes, g_md, n_cap, labels.reshape(grid_shape), eps, eta)


# initial level

def initial_level(fmap: SampledMap, classes: dict[CubeId, CubeClass], alpha_prime: float, K1: int,
                  engine: ContentEngine | None = None) -> tuple[int, dict[int, float]]:
    """Smallest level in 1..K1 whose non-Good cubes have DP content < alpha'."""
    eng = engine or ContentEngine(fmap)
    contents: dict[int, float] = {}
    for level in range(1, K1 + 1):
        bad = [q for q in cubes_at_level(fmap.d, level) if not classes[q].good]
        region = CellSet.from_cubes(bad, fmap.d, fmap.depth)
        contents[level] = mapping_content(fmap, region, engine=eng).value if region else 0.0
        if contents[level] < alpha_prime:
            return level, contents
    raise FailureReport("initial_level",
                        f"no level up to {K1} has non-Good content below {alpha_prime:g}",
                        {"contents": {str(k): v for k, v in contents.items()},
                         "alpha_prime": alpha_prime})


# stopping time

@dataclass
class StoppingForest:
    top: CubeId
    levels: list[list[CubeId]]
    planes: dict[CubeId, Plane]
    depth: int
    K: int

    def measures(self) -> list[float]:
        return [sum(q.volume for q in lvl) for lvl in self.levels]

    def contraction(self) -> float | None:
        """1 - max over S^i cubes Q of |∪S^{i+1} ∩ Q| / |Q|; None when nothing stops."""
        worst = None
        for upper, lower in zip(self.levels, self.levels[1:]):
            for q in upper:
                inside = sum(r.volume for r in lower if q.contains(r))
                ratio = inside / q.volume
                worst = ratio if worst is None else max(worst, ratio)
        return None if worst is None else 1.0 - worst

    def to_dict(self) -> dict:
        return {"top": self.top.as_list(),
                "levels": [[q.as_list() for q in lvl] for lvl in self.levels],
                "measures": self.measures(), "contraction": self.contraction()}


def stopping_time(classes: dict[CubeId, CubeClass], top: CubeId, delta_prime: float, K: int,
                  maxlevel: int) -> StoppingForest:
    """Generations S^0..S^(K+1) below a Good top cube.

    S^(i+1) holds the maximal Good cubes inside an S^i cube R on which some
    unit vector of R's plane has seminorm below delta'; they are found by
    a top-down search that stops descending at the first hit.
    """
    if not classes[top].good:
        raise ArgumentError("the top cube must be Good")
    planes = {top: classes[top].plane}
    gens = [[top]]
    for _ in range(K + 1):
        nxt = []
        for R in gens[-1]:
            P = planes[R]
            stack = list(reversed(children(R))) if R.level < maxlevel else []
            while stack:
                Q = stack.pop()
                c = classes.get(Q)
                if c is None:
                    continue
                if c.good and c.plane_min.get(P, math.inf) < delta_prime:
                    nxt.append(Q)
                    planes[Q] = c.plane
                elif Q.level < maxlevel:
                    stack.extend(reversed(children(Q)))
        gens.append(sorted(nxt))
        if not nxt:
            break
    depth = max(q.level for lvl in gens for q in lvl)
    return StoppingForest(top, gens, planes, depth, K)


# rotations

@dataclass(frozen=True)
class SignedPermutation:
    """y[perm[t]] = sign[t] x[t]."""

    perm: tuple[int, ...]
    sign: tuple[int, ...]

    def matrix(self) -> np.ndarray:
        d = len(self.perm)
        A = np.zeros((d, d), dtype=np.int64)
        for t, (p, s) in enumerate(zip(self.perm, self.sign)):
            A[p, t] = s
        return A

    def maps_plane(self, src: Plane, dst: Plane) -> bool:
        return sorted(self.perm[i] for i in src) == sorted(dst)

    @classmethod
    def aligning(cls, src: Plane, dst: Plane, d: int) -> "SignedPermutation":
        """Order-preserving permutation taking src onto dst and the rest onto the rest."""
        rest_src = [i for i in range(d) if i not in src]
        rest_dst = [i for i in range(d) if i not in dst]
        perm = [0] * d
        for a, b in zip(list(src) + rest_src, list(dst) + rest_dst):
            perm[a] = b
        return cls(tuple(perm), (1,) * d)

    @property
    def identity(self) -> bool:
        return self.perm == tuple(range(len(self.perm))) and all(s == 1 for s in self.sign)


@dataclass
class PiecewiseRotation:
    """φ = φ^0 ∘ ... ∘ φ^ℓ, each φ^i rotating its cubes in place."""

    steps: list[dict[CubeId, SignedPermutation]]
    depth: int

    def apply(self, cells: np.ndarray) -> np.ndarray:
        """Image of integer cell indices (rows) under φ."""
        out = np.array(cells, dtype=np.int64, copy=True)
        for step in reversed(self.steps):
            for cube, A in step.items():
                if A.identity:
                    continue
                w = 1 << (self.depth - cube.level)
                lo = np.array(cube.index, dtype=np.int64) * w
                inside = ((out >= lo) & (out < lo + w)).all(axis=1)
                u = 2 * (out[inside] - lo) - (w - 1)
                v = np.empty_like(u)
                for t, (p, s) in enumerate(zip(A.perm, A.sign)):
                    v[:, p] = s * u[:, t]
                out[inside] = (v + (w - 1)) // 2 + lo
        return out

    def centers(self, cells: np.ndarray) -> np.ndarray:
        return (self.apply(cells) + 0.5) * 2.0 ** -self.depth

    def nontrivial(self) -> bool:
        return any(not A.identity for step in self.steps for A in step.values())

    def to_dict(self) -> dict:
        return {"steps": [[{"cube": q.as_list(), "perm": list(A.perm), "sign": list(A.sign)}
                           for q, A in sorted(step.items())] for step in self.steps]}


# pieces

@dataclass
class PieceSet:
    top: CubeId
    p: int
    word: tuple[int, ...]
    cells: CellSet
    T: list[list[CubeId]]

    def to_dict(self) -> dict:
        return {"top": self.top.as_list(), "p": self.p, "word": list(self.word),
                "measure": self.cells.measure, "cells": self.cells.run_lengths()}


@dataclass
class PieceResult:
    pieces: list[tuple[PieceSet, PiecewiseRotation]]
    leftover: CellSet
    families: dict
    garbage_measure: float


def build_pieces(fmap: SampledMap, forests: list[StoppingForest], coding: CodingResult,
                 classes: dict[CubeId, CubeClass], lam: int, alpha_second: float) -> PieceResult:
    """Sets F(Q0, p, w) and their rotations for every forest."""
    D, d, n = fmap.depth, fmap.d, fmap.n
    shape = (1 << D,) * d
    compressed = triples_cellset([q for q, c in classes.items() if c.kind == "compressed"], d, D)
    covered = np.zeros(shape, dtype=bool)
    target_plane = tuple(range(n))
    pieces = []
    families_out = {}
    garbage = 0.0
    for forest in forests:
        gens = forest.levels
        fams: list[list[list[CubeId]]] = [[[forest.top]]]
        fam_of: dict[CubeId, int] = {forest.top: 1}
        for i in range(1, len(gens)):
            families, rest = split_separated(gens[i], lam, alpha_second)
            fams.append(families)
            for j, fam in enumerate(families, start=1):
                for q in fam:
                    fam_of[q] = j
            for q in rest:
                fam_of[q] = 0
                garbage += q.volume
        families_out[forest.top] = [[len(f) for f in level] for level in fams[1:]]
        # per cell: generation count and family labels along its chain
        depth_arr = np.zeros(shape, dtype=np.int64)
        fam_arr = np.zeros((len(gens),) + shape, dtype=np.int64)
        for i, gen in enumerate(gens):
            for q in gen:
                sl = q_slices(q, D)
                depth_arr[sl] = i
                fam_arr[(i,) + sl] = fam_of[q]
        top_mask = np.zeros(shape, dtype=bool)
        top_mask[q_slices(forest.top, D)] = True
        ok = top_mask & ~compressed.bits
        if len(gens) > forest.K + 1:
            # cells reaching S^(K+1) are left over
            ok &= depth_arr < len(gens) - 1
        # garbage families anywhere along the chain
        for i in range(1, len(gens)):
            ok &= ~((depth_arr >= i) & (fam_arr[i] == 0))
        for p, cls in enumerate(coding.classes, start=1):
            member = ok & cls.bits
            if not member.any():
                continue
            keys = {}
            for cell in np.argwhere(member):
                c = tuple(cell)
                ell = int(depth_arr[c])
                word = tuple(int(fam_arr[(i,) + c]) for i in range(1, ell + 1))
                keys.setdefault(word, []).append(c)
            for word in sorted(keys, key=lambda w: (len(w), w)):
                bits = np.zeros(shape, dtype=bool)
                bits[tuple(np.array(keys[word]).T)] = True
                T = _t_collections(forest.top, fams, word)
                rot = _rotation(T, forest.planes, target_plane, d, D)
                pieces.append((PieceSet(forest.top, p, word, CellSet(bits, D), T), rot))
                covered |= bits
    leftover = CellSet(~covered, D)
    return PieceResult(pieces, leftover, families_out, garbage)


def _t_collections(top: CubeId, fams, word) -> list[list[CubeId]]:
    T = [[top]]
    for i, j in enumerate(word, start=1):
        prev = T[-1]
        T.append([q for q in fams[i][j - 1] if any(r.contains(q) for r in prev)])
    return T


def _rotation(T, planes, target: Plane, d: int, depth: int) -> PiecewiseRotation:
    steps = [{T[0][0]: SignedPermutation.aligning(planes[T[0][0]], target, d)}]
    for i in range(1, len(T)):
        step = {}
        for q in T[i]:
            parent = next(r for r in T[i - 1] if r.contains(q))
            step[q] = SignedPermutation.aligning(planes[q], planes[parent], d)
        steps.append(step)
    return PiecewiseRotation(steps, depth)


def separation_ok(T: list[list[CubeId]], lam: int) -> bool:
    for gen in T[1:]:
        boxes = [dilate(q, lam, clip=False) for q in gen]
        for a, b in itertools.combinations(boxes, 2):
            if not boxes_disjoint(a, b):
                return False
    return True


# verification

@dataclass
class BilipReport:
    c_low: float
    c_high: float
    npairs: int
    worst_low: tuple | None
    worst_high: tuple | None
    threshold: float

    @property
    def accepted(self) -> bool:
        return self.c_low > self.threshold

    def to_dict(self) -> dict:
        return {"c_low": self.c_low, "c_high": self.c_high, "pairs": self.npairs,
                "accepted": self.accepted}


MAX_EXHAUSTIVE_CELLS = 2048
SAMPLED_PAIRS = 100_000


def pair_indices(count: int, seed: int = 0, cap: int = MAX_EXHAUSTIVE_CELLS,
                 samples: int = SAMPLED_PAIRS) -> tuple[np.ndarray, np.ndarray]:
    """All pairs i < j when count <= cap, else a seeded sample of distinct pairs."""
    if count <= cap:
        return np.triu_indices(count, k=1)
    rng = np.random.default_rng(seed)
    a = rng.integers(0, count, size=samples)
    b = rng.integers(0, count, size=samples)
    keep = a != b
    return np.minimum(a, b)[keep], np.maximum(a, b)[keep]


def verify_supplemented_bilipschitz(fmap: SampledMap, piece: PieceSet, rotation: PiecewiseRotation,
                                    threshold: float = 0.0, seed: int = 0) -> BilipReport:
    """Two-sided ratios of (x, y) -> (f(φ^-1(x, y)), y) on the rotated piece.

    ratio = max(d(f(a), f(b)), |π⊥ φ(a) - π⊥ φ(b)|_inf) / |φ(a) - φ(b)|_inf,
    where π⊥ keeps the last m coordinates.
    """
    cells = piece.cells.cells()
    if len(cells) < 2:
        raise ArgumentError("piece needs at least two cells")
    anchors = fmap.flat(cells)
    vals = fmap.values[anchors]
    phi = rotation.centers(cells)
    ii, jj = pair_indices(len(cells), seed)
    lo_r, hi_r = math.inf, 0.0
    worst_lo = worst_hi = None
    step = 500_000
    for s in range(0, len(ii), step):
        a, b = ii[s:s + step], jj[s:s + step]
        df = fmap.target.paired(vals[a], vals[b])
        dphi = np.abs(phi[a] - phi[b])
        num = np.maximum(df, dphi[:, fmap.n:].max(axis=1)) if fmap.m else df
        ratio = num / dphi.max(axis=1)
        k_lo, k_hi = int(np.argmin(ratio)), int(np.argmax(ratio))
        if ratio[k_lo] < lo_r:
            lo_r, worst_lo = float(ratio[k_lo]), (int(a[k_lo]), int(b[k_lo]))
        if ratio[k_hi] > hi_r:
            hi_r, worst_hi = float(ratio[k_hi]), (int(a[k_hi]), int(b[k_hi]))
    return BilipReport(lo_r, hi_r, len(ii), worst_lo, worst_hi, threshold)


# full pipeline

@dataclass
class DecompositionResult:
    preset: Preset
    level: int
    level_contents: dict
    classes: dict[CubeId, CubeClass]
    forests: list[StoppingForest]
    coding: CodingResult
    pieces: PieceResult
    leftover_content: float
    compressed: dict
    checks: list[BilipReport]

    def coverage(self) -> float:
        return sum(p.cells.measure for p, _ in self.pieces.pieces)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset.to_dict(),
            "initial_level": self.level,
            "level_contents": {str(k): v for k, v in self.level_contents.items()},
            "class_counts": _class_counts(self.classes),
            "forests": [f.to_dict() for f in self.forests],
            "coding": self.coding.to_dict(),
            "pieces": [dict(p.to_dict(), rotation=r.to_dict(), check=c.to_dict())
                       for (p, r), c in zip(self.pieces.pieces, self.checks)],
            "coverage": self.coverage(),
            "leftover_measure": self.pieces.leftover.measure,
            "leftover_content": self.leftover_content,
            "split_garbage_measure": self.pieces.garbage_measure,
            "compressed": self.compressed,
        }


def _class_counts(classes) -> dict:
    out = {"md": 0, "compressed": 0, "good": 0}
    for c in classes.values():
        out[c.kind] += 1
    return out


def decompose(fmap: SampledMap, preset: Preset, md_engine: MdEngine | None = None,
              content_engine: ContentEngine | None = None) -> DecompositionResult:
    """Run the whole pipeline; raises FailureReport when the schedule is insufficient."""
    preset.validate()
    if fmap.depth < 2:
        raise ArgumentError("decomposition needs depth >= 2")
    md_eng = md_engine or MdEngine(fmap, preset.c0_for(fmap.n, fmap.m))
    c_eng = content_engine or ContentEngine(fmap)
    maxlevel = fmap.depth - 1
    K1 = min(preset.k1(fmap.depth), maxlevel)
    classes = classify_cubes(fmap, preset.eps, preset.delta, range(maxlevel + 1), md_eng)
    level, contents = initial_level(fmap, classes, preset.alpha_prime, K1, c_eng)
    tops = [q for q in cubes_at_level(fmap.d, level) if classes[q].good]
    forests = [stopping_time(classes, q, preset.delta_prime, preset.K, maxlevel) for q in tops]
    coding = coding_decomposition(fmap, preset.eps, preset.eta_for_coding(), md_eng)
    pieces = build_pieces(fmap, forests, coding, classes, preset.lam, preset.alpha_second)
    left = pieces.leftover
    leftover_content = mapping_content(fmap, left, engine=c_eng).value if left else 0.0
    compressed = compressed_content_bound(fmap, classes, preset.eps, preset.delta, c_eng)
    checks = [verify_supplemented_bilipschitz(fmap, p, r, preset.c_star) if len(p.cells) >= 2
              else BilipReport(math.inf, 0.0, 0, None, None, preset.c_star)
              for p, r in pieces.pieces]
    return DecompositionResult(preset, level, contents, classes, forests, coding, pieces,
                               leftover_content, compressed, checks)
