"""Hard Sard pair checks and the directional shear construction.

Sets are cell sets; each cell is represented by its anchor lattice point.
A candidate straightening g is an array of shape (cells, n + m) aligned
with the anchors in cell C order, and F = f∘g⁻¹ is evaluated through
F(g(a)) = f(a).  Every check is over the sampled points only, so a passing
certificate asserts restricted bi-Lipschitz bounds, not the existence of a
global extension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .content import hausdorff_content, map_resolution, mapping_content, matched_mask
from .decompose import DecompositionResult, PieceSet, PiecewiseRotation, pair_indices
from .dyadic import CellSet
from .errors import ArgumentError, NotBiLipschitzError, StateError
from .sampledmaps import SampledMap

CAVEAT = "restricted-only: bounds hold on sampled lattice pairs; no global extension is constructed"
EXHAUSTIVE_CELLS = 4096
PRUNE_CELLS = 4096
CHUNK = 400_000


@dataclass(frozen=True)
class Tolerances:
    c_star: float = 8.0
    eq_tol: float = 1e-9
    seed: int = 0


def _anchor_points(fmap: SampledMap, E: CellSet) -> tuple[np.ndarray, np.ndarray]:
    """Anchor coordinates and map values of the cells of E."""
    flat = fmap.anchors(E)
    return fmap.coords(flat), fmap.values[flat]


@dataclass
class PairStats:
    g_ratio: tuple[float, float]
    fy_ratio: tuple[float, float]
    fiber_violations: int
    npairs: int

    @property
    def c_lip(self) -> float:
        vals = [self.g_ratio[1], self.fy_ratio[1]]
        for lo in (self.g_ratio[0], self.fy_ratio[0]):
            vals.append(math.inf if lo == 0 else 1.0 / lo)
        return max(vals)


def _pair_terms(fmap, x, vals, g, a, b, eq_tol):
    """Per-pair ratios of g and of (F, y), and fiber-condition violations."""
    n = fmap.n
    h = fmap.h
    dx = np.abs(x[a] - x[b]).max(axis=1)
    dg = np.abs(g[a] - g[b])
    dg_all = dg.max(axis=1)
    dgx = dg[:, :n].max(axis=1)
    dF = fmap.target.paired(vals[a], vals[b])
    with np.errstate(divide="ignore", invalid="ignore"):
        r_g = dg_all / dx
        num = np.maximum(dF, dg[:, n:].max(axis=1)) if fmap.m else dF
        r_fy = np.where(dg_all > 0, num / np.where(dg_all > 0, dg_all, 1.0), math.inf)
    slack = h * (1 + 1e-9)
    fiber = ((dgx <= slack) & (dF > fmap.eps_match)) | ((dF <= eq_tol) & (dgx > slack))
    return r_g, r_fy, fiber


def pair_statistics(fmap: SampledMap, E: CellSet, g: np.ndarray, tol: Tolerances) -> PairStats:
    x, vals = _anchor_points(fmap, E)
    g = _check_g(fmap, x, g)
    ii, jj = pair_indices(len(x), tol.seed, cap=EXHAUSTIVE_CELLS, samples=1_000_000)
    g_lo, g_hi, f_lo, f_hi, viol = math.inf, 0.0, math.inf, 0.0, 0
    for s in range(0, len(ii), CHUNK):
        r_g, r_fy, fiber = _pair_terms(fmap, x, vals, g, ii[s:s + CHUNK], jj[s:s + CHUNK], tol.eq_tol)
        g_lo, g_hi = min(g_lo, float(r_g.min())), max(g_hi, float(r_g.max()))
        f_lo, f_hi = min(f_lo, float(r_fy.min())), max(f_hi, float(r_fy.max()))
        viol += int(fiber.sum())
    if len(ii) == 0:
        g_lo = g_hi = f_lo = f_hi = 1.0
    return PairStats((g_lo, g_hi), (f_lo, f_hi), viol, len(ii))


def _check_g(fmap: SampledMap, x: np.ndarray, g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != x.shape:
        raise ArgumentError(f"g must have shape {x.shape}, got {g.shape}")
    return g


@dataclass
class HardSardCertificate:
    E: CellSet
    g: np.ndarray
    stats: PairStats
    tolerances: Tolerances
    notes: list = field(default_factory=list)

    @property
    def c_lip(self) -> float:
        return self.stats.c_lip

    @property
    def accepted(self) -> bool:
        c = self.tolerances.c_star
        lo_g, hi_g = self.stats.g_ratio
        lo_f, hi_f = self.stats.fy_ratio
        return (self.stats.fiber_violations == 0 and lo_g >= 1 / c and hi_g <= c
                and lo_f >= 1 / c and hi_f <= c)

    def to_dict(self, include_g: bool = True) -> dict:
        out = {
            "E": self.E.run_lengths(),
            "measure": self.E.measure,
            "c_lip": self.c_lip,
            "c_star": self.tolerances.c_star,
            "residuals": {"bilip_g": list(self.stats.g_ratio),
                          "fiber_violations": self.stats.fiber_violations,
                          "bilip_Fy": list(self.stats.fy_ratio)},
            "pairs": self.stats.npairs,
            "accepted": self.accepted,
            "caveat": CAVEAT,
        }
        if include_g:
            out["g"] = self.g.tolist()
        return out


def check_hard_sard(fmap: SampledMap, E: CellSet, g, tol: Tolerances | None = None) -> HardSardCertificate:
    """Conditions (i)-(iii): g bi-Lipschitz, fibers of F vertical, (F, y) bi-Lipschitz."""
    if not E:
        raise ArgumentError("E is empty")
    tol = tol or Tolerances()
    x, _ = _anchor_points(fmap, E)
    g = _check_g(fmap, x, g)
    return HardSardCertificate(E, g, pair_statistics(fmap, E, g, tol), tol)


def identity_straightening(fmap: SampledMap, E: CellSet) -> np.ndarray:
    return _anchor_points(fmap, E)[0]


# supplemented map pre-check

def supplemented_precheck(fmap: SampledMap, F: CellSet, L: float, seed: int = 0) -> tuple[float, float]:
    """Two-sided ratios of (x, y) -> (f(x, y), y); raises if outside [1/L, L]."""
    if not F:
        raise ArgumentError("F is empty")
    flat = fmap.anchors(F)
    x = fmap.coords(flat)
    vals = fmap.values[flat]
    ii, jj = pair_indices(len(x), seed, cap=EXHAUSTIVE_CELLS, samples=1_000_000)
    lo, hi, worst_lo, worst_hi = math.inf, 0.0, None, None
    for s in range(0, len(ii), CHUNK):
        a, b = ii[s:s + CHUNK], jj[s:s + CHUNK]
        dF = fmap.target.paired(vals[a], vals[b])
        dy = np.abs(x[a, fmap.n:] - x[b, fmap.n:]).max(axis=1) if fmap.m else 0.0
        r = np.maximum(dF, dy) / np.abs(x[a] - x[b]).max(axis=1)
        k_lo, k_hi = int(np.argmin(r)), int(np.argmax(r))
        if r[k_lo] < lo:
            lo, worst_lo = float(r[k_lo]), (int(flat[a[k_lo]]), int(flat[b[k_lo]]))
        if r[k_hi] > hi:
            hi, worst_hi = float(r[k_hi]), (int(flat[a[k_hi]]), int(flat[b[k_hi]]))
    if len(ii) == 0:
        return 1.0, 1.0
    if lo < 1.0 / L:
        raise NotBiLipschitzError(f"(f, y) contracts a pair by {lo:.4g} < 1/L", worst_lo, lo)
    if hi > L:
        raise NotBiLipschitzError(f"(f, y) expands a pair by {hi:.4g} > L", worst_hi, hi)
    return lo, hi


# slices

def _slices(fmap: SampledMap, F: CellSet) -> dict[tuple, np.ndarray]:
    """Anchors of F grouped by their integer y-coordinates, y keys sorted."""
    cells = F.cells()
    keys = [tuple(r) for r in cells[:, fmap.n:]]
    groups: dict[tuple, list[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    return {tuple(int(v) for v in k): cells[groups[k]] for k in sorted(groups)}


@dataclass
class SliceChoice:
    y: tuple
    score: float
    bound: float
    scores: dict

    def to_dict(self) -> dict:
        return {"y": list(self.y), "score": self.score, "bound": self.bound,
                "ratio_to_bound": self.score / self.bound if self.bound > 0 else math.inf}


def select_y_slice(fmap: SampledMap, F: CellSet, L: float, precheck: bool = True) -> SliceChoice:
    """Slice y' maximising Σ_z H^n(f(F_y') ∩ f(F_z)) 2^(-mD), ties to the first y'."""
    if fmap.m < 1:
        raise ArgumentError("slices need m >= 1")
    if precheck:
        supplemented_precheck(fmap, F, L)
    slices = _slices(fmap, F)
    if not slices:
        raise ArgumentError("F is empty")
    res = map_resolution(fmap)
    k = float(fmap.n)
    images = {y: fmap.values[fmap.flat(c)] for y, c in slices.items()}
    full_cache: dict[tuple, float] = {}
    weight = 2.0 ** (-fmap.m * fmap.depth)
    scores = {}
    for y, img in images.items():
        total = 0.0
        for z, other in images.items():
            hit = matched_mask(img, other, fmap.target, fmap.eps_match)
            if not hit.any():
                continue
            if hit.all():
                if y not in full_cache:
                    full_cache[y] = hausdorff_content(img, fmap.target, k, res).upper
                total += full_cache[y]
            else:
                total += hausdorff_content(img[hit], fmap.target, k, res).upper
        scores[y] = total * weight
    best = max(scores, key=lambda y: (scores[y], [-v for v in y]))
    all_img = fmap.values[fmap.anchors(F)]
    image_content = hausdorff_content(all_img, fmap.target, k, res).upper
    bound = L ** (-fmap.n) * F.measure ** 2 / image_content if image_content > 0 else math.inf
    return SliceChoice(best, scores[best], bound, scores)


@dataclass
class ShearStep:
    y: tuple
    slice_cells: CellSet
    E1: CellSet
    lookup_images: np.ndarray
    lookup_x: np.ndarray
    g: np.ndarray
    claim_bound: float | None = None

    def to_dict(self) -> dict:
        return {"y": list(self.y), "slice_measure": self.slice_cells.measure,
                "E1_measure": self.E1.measure, "claim_bound": self.claim_bound}


def construct_shear(fmap: SampledMap, F: CellSet, y, L: float | None = None, eta: float | None = None
                    ) -> ShearStep:
    """E¹ = cells of F whose image matches f(F_y'); g¹(x, y) = (p¹(f(x, y)), y)."""
    y = tuple(int(v) for v in y)
    cells = F.cells()
    on_slice = (cells[:, fmap.n:] == np.array(y, dtype=np.int64)).all(axis=1)
    if not on_slice.any():
        raise StateError(f"slice y = {y} of F is empty")
    ref = cells[on_slice]
    ref_img = fmap.values[fmap.flat(ref)]
    ref_x = ref[:, :fmap.n] * fmap.h
    img = fmap.values[fmap.flat(cells)]
    member = matched_mask(img, ref_img, fmap.target, fmap.eps_match)
    E1_cells = cells[member]
    E1_img = img[member]
    nearest = np.empty(len(E1_cells), dtype=np.int64)
    step = max(1, 2_000_000 // len(ref_img))
    for s in range(0, len(E1_cells), step):
        nearest[s:s + step] = np.argmin(fmap.target.pairwise(E1_img[s:s + step], ref_img), axis=1)
    y_coords = E1_cells[:, fmap.n:] * fmap.h
    g = np.concatenate([ref_x[nearest], y_coords], axis=1)
    bits = np.zeros(F.bits.shape, dtype=bool)
    bits[tuple(E1_cells.T)] = True
    claim = L ** (-2 * fmap.n) * eta if (L is not None and eta is not None) else None
    slice_bits = np.zeros_like(bits)
    slice_bits[tuple(ref.T)] = True
    return ShearStep(y, CellSet(slice_bits, fmap.depth), CellSet(bits, fmap.depth), ref_img,
                     ref_x, g, claim)


# pruning and iteration

def _violation_matrix(fmap, x, vals, g, tol: Tolerances) -> np.ndarray:
    N = len(x)
    V = np.zeros((N, N), dtype=bool)
    c = tol.c_star
    ii, jj = np.triu_indices(N, k=1)
    for s in range(0, len(ii), CHUNK):
        a, b = ii[s:s + CHUNK], jj[s:s + CHUNK]
        r_g, r_fy, fiber = _pair_terms(fmap, x, vals, g, a, b, tol.eq_tol)
        bad = fiber | (r_g < 1 / c) | (r_g > c) | (r_fy < 1 / c) | (r_fy > c)
        V[a[bad], b[bad]] = True
    return V | V.T


def prune(fmap: SampledMap, E: CellSet, g: np.ndarray, tol: Tolerances) -> np.ndarray:
    """Mask of retained cells after greedily removing the worst offenders.

    Repeatedly drops the cell in the most violating pairs (ties to the
    lowest index) until no violating pair remains.
    """
    x, vals = _anchor_points(fmap, E)
    if len(x) > PRUNE_CELLS:
        raise ArgumentError(f"pruning is exhaustive and limited to {PRUNE_CELLS} cells")
    V = _violation_matrix(fmap, x, vals, g, tol)
    counts = V.sum(axis=1).astype(np.int64)
    keep = np.ones(len(x), dtype=bool)
    while counts.max(initial=0) > 0:
        i = int(np.argmax(counts))
        keep[i] = False
        counts -= V[:, i]
        counts[i] = 0
        V[i, :] = False
        V[:, i] = False
    return keep


@dataclass
class DirectionalResult:
    certificates: list[HardSardCertificate]
    steps: list[dict]
    garbage: CellSet
    iteration_cap: int

    def to_dict(self) -> dict:
        return {"certificates": [c.to_dict(include_g=False) for c in self.certificates],
                "steps": self.steps, "garbage_measure": self.garbage.measure,
                "iteration_cap": self.iteration_cap, "caveat": CAVEAT}


def iterate_directional(fmap: SampledMap, F: CellSet, alpha: float, L: float,
                        tol: Tolerances | None = None) -> DirectionalResult:
    """Peel F into certified pieces until less than alpha of it remains."""
    if alpha <= 0:
        raise ArgumentError("alpha must be positive")
    tol = tol or Tolerances()
    supplemented_precheck(fmap, F, L, tol.seed)
    cap = max(1, math.ceil(L ** (2 * fmap.n) / alpha))
    certs, steps = [], []
    current = F
    while current.measure >= alpha and len(certs) < cap:
        choice = select_y_slice(fmap, current, L, precheck=False)
        shear = construct_shear(fmap, current, choice.y, L, current.measure)
        # g¹ values follow E¹'s cell order; E¹ is a subset of current
        keep = prune(fmap, shear.E1, shear.g, tol)
        if not keep.any():
            break
        cells = shear.E1.cells()[keep]
        bits = np.zeros(current.bits.shape, dtype=bool)
        bits[tuple(cells.T)] = True
        piece = CellSet(bits, fmap.depth)
        cert = check_hard_sard(fmap, piece, shear.g[keep], tol)
        certs.append(cert)
        steps.append(dict(choice.to_dict(), E1_measure=shear.E1.measure, kept_measure=piece.measure,
                          retained_fraction=piece.measure / shear.E1.measure,
                          claim_bound=shear.claim_bound))
        current = current - piece
    return DirectionalResult(certs, steps, current, cap)


# content against measure

def content_measure_comparison(fmap: SampledMap, E: CellSet, cert: HardSardCertificate) -> dict:
    """DP content of E over its measure, against the bracket [1/R, R], R = (4 C_Lip)^(n+m)."""
    if not cert.accepted:
        raise StateError("certificate was not accepted")
    if not E:
        raise ArgumentError("E is empty")
    value = mapping_content(fmap, E).value
    ratio = value / E.measure
    R = (4.0 * cert.c_lip) ** (fmap.n + fmap.m)
    return {"content": value, "measure": E.measure, "ratio": ratio, "R": R,
            "within": 1.0 / R <= ratio <= R}


# pipeline replay

def rotated_straightening(fmap: SampledMap, piece: PieceSet, rotation: PiecewiseRotation) -> np.ndarray:
    """g∘φ at the anchors: the rotated cell centre shifted back by half a cell."""
    return rotation.centers(piece.cells.cells()) - 0.5 * fmap.h


def pipeline_certificates(fmap: SampledMap, result: DecompositionResult, tol: Tolerances | None = None
                          ) -> list[tuple[HardSardCertificate, dict]]:
    out = []
    for piece, rot in result.pieces.pieces:
        cert = check_hard_sard(fmap, piece.cells, rotated_straightening(fmap, piece, rot), tol)
        cmp = content_measure_comparison(fmap, piece.cells, cert) if cert.accepted else None
        out.append((cert, cmp))
    return out
