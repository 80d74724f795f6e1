"""Star-tree counterexample harness and the one-dimensional scaling experiment."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .content import ContentEngine, exhaustive_mapping_content, mapping_content
from .dyadic import CellSet
from .errors import ArgumentError, ResolutionError
from .metricspaces import StarTree
from .parallel import pmap
from .sampledmaps import (SampledMap, build_star_map, from_builtin, lipschitz_estimate, star_cube,
                          star_set)

CROSS_CHECK_DEPTH = 3


@dataclass
class Candidate:
    """A proposed straightened piece: cells E and g values at E's anchors."""

    E: CellSet
    g: np.ndarray
    label: str = ""


@dataclass
class StarExampleReport:
    k: int
    depth: int
    lipschitz: float
    injectivity_violations: int
    a_measure: float
    tree_length: Fraction
    content: dict
    candidates: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "depth": self.depth,
            "lipschitz_estimate": self.lipschitz,
            "injectivity_violations": self.injectivity_violations,
            "A_measure": self.a_measure,
            "tree_length": str(self.tree_length),
            "tree_length_float": float(self.tree_length),
            "content": self.content,
            "candidates": self.candidates,
        }


def interior_indices(fmap: SampledMap, cube) -> np.ndarray:
    lo, hi = cube.lattice_bounds(fmap.depth)
    if (hi - lo < 2).any():
        return np.zeros(0, dtype=np.int64)
    return fmap.box_indices(lo + 1, hi - 1)


def injectivity_violations(fmap: SampledMap, k: int) -> int:
    """Pairs of interior lattice points of distinct cubes Q_ab with equal images."""
    S = 1 << (k - 1)
    imgs = [fmap.values[interior_indices(fmap, star_cube(k, a, b))]
            for a in range(S) for b in range(S)]
    count = 0
    for i, j in itertools.combinations(range(len(imgs)), 2):
        if len(imgs[i]) and len(imgs[j]):
            count += int((fmap.target.pairwise(imgs[i], imgs[j]) <= 0.0).sum())
    return count


def candidate_report(fmap: SampledMap, k: int, cand: Candidate) -> dict:
    """|E ∩ A| against 2^-k and overlaps of the x-projections of g(E ∩ Q_ab)."""
    A = star_set(k, fmap.depth)
    inter = cand.E & A
    S = 1 << (k - 1)
    cells = cand.E.cells()
    proj = {}
    for a in range(S):
        for b in range(S):
            q = star_cube(k, a, b)
            w = 1 << (fmap.depth - q.level)
            lo = np.array(q.index) * w
            inside = ((cells >= lo) & (cells < lo + w)).all(axis=1)
            if inside.any():
                proj[(a, b)] = np.unique(np.rint(cand.g[inside, :fmap.n] / fmap.h).astype(np.int64), axis=0)
    overlaps = 0
    for p, q in itertools.combinations(sorted(proj), 2):
        common = set(map(tuple, proj[p])) & set(map(tuple, proj[q]))
        overlaps += len(common)
    return {"label": cand.label, "measure": cand.E.measure, "A_intersection": inter.measure,
            "ratio_to_scale": inter.measure / 2.0 ** -k, "projection_overlaps": overlaps}


def verify_star_claims(k: int, depth: int, candidates: list[Candidate] | None = None,
                       cross_check_depth: int = CROSS_CHECK_DEPTH) -> StarExampleReport:
    if depth < k + 2:
        raise ResolutionError(f"depth {depth} is too coarse for k = {k} (need >= {k + 2})")
    fmap = build_star_map(k, depth)
    A = star_set(k, depth)
    eng = ContentEngine(fmap)
    dp = mapping_content(fmap, A, engine=eng)
    content = {"upper": dp.upper, "lower": dp.lower, "antichain_size": len(dp.antichain)}
    if cross_check_depth <= depth:
        content["cross_check_depth"] = cross_check_depth
        content["dp_at_cross_check"] = mapping_content(fmap, A, depth=cross_check_depth, engine=eng).value
        content["exhaustive_at_cross_check"] = exhaustive_mapping_content(fmap, A, cross_check_depth, eng)
    cands = [candidate_report(fmap, k, c) for c in candidates or []]
    return StarExampleReport(k, depth, lipschitz_estimate(fmap), injectivity_violations(fmap, k),
                             A.measure, StarTree(k).total_length, content, cands)


# scaling experiment

@dataclass
class ScalingRow:
    map_id: str
    eta: float
    diam: float
    m: int

    def to_dict(self) -> dict:
        return {"map_id": self.map_id, "eta": self.eta, "diam": self.diam, "m": self.m}


def default_corpus() -> list[dict]:
    corpus = [{"name": "projection", "params": {"scale": t}} for t in (1.0, 0.5, 0.25, 0.125)]
    corpus.append({"name": "constant", "params": {}})
    # the star map is 4-Lipschitz; a quarter of it is 1-Lipschitz
    corpus += [{"name": "star9", "params": {"k": k, "scale": 0.25}} for k in (2, 3)]
    return corpus


def corpus_id(entry: dict) -> str:
    params = ",".join(f"{k}={v}" for k, v in sorted(entry.get("params", {}).items()))
    return f"{entry['name']}({params})"


def image_diameter(fmap: SampledMap) -> float:
    pts = np.unique(fmap.values, axis=0)
    best = 0.0
    step = max(1, 2_000_000 // len(pts))
    for s in range(0, len(pts), step):
        best = max(best, float(fmap.target.pairwise(pts[s:s + step], pts).max()))
    return best


def scaling_row(entry: dict, m: int, depth: int) -> ScalingRow:
    params = dict(entry.get("params", {}))
    params.update(depth=depth)
    if entry["name"] != "star9":
        params.update(n=1, m=m)
    fmap = from_builtin(entry["name"], params)
    if fmap.n != 1 or fmap.m != m:
        raise ArgumentError(f"{corpus_id(entry)} is not a map of 1 + {m} variables")
    if fmap.lipschitz > 1.0 + 1e-9:
        raise ArgumentError(f"{corpus_id(entry)} is not 1-Lipschitz")
    eta = mapping_content(fmap, CellSet.full(fmap.d, depth)).value
    return ScalingRow(corpus_id(entry), eta, image_diameter(fmap), m)


@dataclass
class ScalingResult:
    rows: list[ScalingRow]
    slope: float | None
    max_ratio: float

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "slope": self.slope,
                "max_ratio": self.max_ratio}


def onedim_scaling_experiment(corpus: list[dict] | None = None, m: int = 1, depth: int = 5
                              ) -> ScalingResult:
    """Content eta against image diameter for 1-Lipschitz maps of 1 + m variables."""
    corpus = default_corpus() if corpus is None else corpus
    if len(corpus) < 5:
        raise ArgumentError("the scaling corpus needs at least five maps")
    rows = pmap(lambda e: scaling_row(e, m, depth), corpus)
    fit = [(r.eta, r.diam) for r in rows if 0 < r.eta < 0.5 and r.diam > 0]
    slope = None
    if len({e for e, _ in fit}) >= 2:
        x = np.log([e for e, _ in fit])
        y = np.log([d for _, d in fit])
        slope = float(np.polyfit(x, y, 1)[0])
    ratio = 0.0
    for r in rows:
        if r.eta > 0:
            ratio = max(ratio, r.diam / r.eta ** (1.0 / (m + 2)))
        elif r.diam > 0:
            ratio = math.inf
    return ScalingResult(rows, slope, ratio)
