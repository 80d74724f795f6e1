"""Metric derivatives: best seminorm approximation of pulled-back distances.

For a cube Q and dilation factor C0 the region R = C0 Q (clipped) is
sampled on the lattice.  md(C0 Q) is

    (1 / (C0 side(Q))) inf over seminorms of max over pairs |d(f(x), f(y)) - ||x - y|||.

The upper value comes from fitted seminorms (Euclidean and max-of-linear
families) evaluated on every region pair, or on a farthest-point sample
when the region is large.  The lower value is a linear program over
seminorm values on the sampled directions, constrained by subadditivity on
sampled triangles; any true seminorm is feasible for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.sparse import coo_matrix

from .dyadic import CubeId, Region, cubes_at_level, dilate
from .errors import ArgumentError, ResolutionError, StateError
from .parallel import pmap
from .sampledmaps import SampledMap

DEFAULT_C0 = 21
FULL_PAIR_POINTS = 64
SAMPLE_ENDPOINTS = 91
FULL_EVAL_PAIRS = 200_000
TRIANGLES = 3000
LP_TOL = 1e-9


def default_c0(n: int, m: int) -> int:
    """10(n+m), rounded up to the next odd integer so the dilation is concentric."""
    c = 10 * (n + m)
    return c if c % 2 else c + 1


@dataclass(frozen=True)
class Seminorm:
    """A seminorm on R^d.

    family "euclidean": params is a matrix M, value |Mv|.
    family "maxlinear": params rows are covectors a_i, value max_i |<a_i, v>|.
    family "tabulated": params rows are unit directions u, ``values`` their
    norms; v is evaluated as |v| times the value at the nearest direction
    (up to sign).
    """

    family: str
    params: np.ndarray
    values: np.ndarray | None = None

    def __call__(self, v) -> np.ndarray:
        V = np.atleast_2d(np.asarray(v, dtype=float))
        if self.family == "euclidean":
            return np.sqrt(((V @ self.params.T) ** 2).sum(axis=1))
        if self.family == "maxlinear":
            if len(self.params) == 0:
                return np.zeros(len(V))
            return np.abs(V @ self.params.T).max(axis=1)
        if self.family == "tabulated":
            lengths = np.sqrt((V ** 2).sum(axis=1))
            unit = V / np.where(lengths > 0, lengths, 1.0)[:, None]
            near = np.abs(unit @ self.params.T).argmax(axis=1)
            return lengths * self.values[near]
        raise ArgumentError(f"unknown seminorm family {self.family!r}")

    @property
    def d(self) -> int:
        return self.params.shape[1]

    def to_dict(self) -> dict:
        out = {"family": self.family, "params": np.round(self.params, 12).tolist()}
        if self.values is not None:
            out["values"] = np.round(self.values, 12).tolist()
        return out

    @classmethod
    def zero(cls, d: int) -> "Seminorm":
        return cls("euclidean", np.zeros((d, d)))


@dataclass
class MdResult:
    cube: CubeId
    md_upper: float
    md_lower: float | None
    seminorm: Seminorm
    c0: int
    npairs: int
    exact_pairs: bool
    notes: list[str] = field(default_factory=list)

    def to_row(self) -> dict:
        return {
            "level": self.cube.level,
            "index": " ".join(map(str, self.cube.index)),
            "md_lower": "" if self.md_lower is None else f"{self.md_lower:.12g}",
            "md_upper": f"{self.md_upper:.12g}",
            "family": self.seminorm.family,
            "params": " ".join(f"{v:.9g}" for v in self.seminorm.params.ravel()),
        }


@dataclass
class PairSample:
    """Displacements (lattice units) and target distances of region pairs."""

    disp: np.ndarray
    dist: np.ndarray
    endpoints: np.ndarray
    exact: bool


def farthest_point_order(coords: np.ndarray, count: int) -> np.ndarray:
    """Greedy farthest-point sample starting at row 0; ties to the lower row."""
    count = min(count, len(coords))
    chosen = [0]
    gap = np.sqrt(((coords - coords[0]) ** 2).sum(axis=1))
    for _ in range(count - 1):
        nxt = int(np.argmax(gap))
        chosen.append(nxt)
        gap = np.minimum(gap, np.sqrt(((coords - coords[nxt]) ** 2).sum(axis=1)))
    return np.array(sorted(chosen))


def _pairs_of(fmap: SampledMap, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ii, jj = np.triu_indices(len(idx), k=1)
    multi = fmap.multi(idx)
    disp = multi[jj] - multi[ii]
    dist = fmap.target.pairwise(fmap.values[idx])[ii, jj]
    return disp, dist


def sample_pairs(fmap: SampledMap, region: Region, full: bool = False) -> PairSample:
    """All pairs for small regions, farthest-point endpoints otherwise."""
    idx = fmap.region_indices(region)
    if len(idx) < 2:
        raise ResolutionError("dilated cube holds fewer than two lattice points")
    exact = full or len(idx) <= FULL_PAIR_POINTS
    if not exact:
        idx = idx[farthest_point_order(fmap.multi(idx).astype(float), SAMPLE_ENDPOINTS)]
    disp, dist = _pairs_of(fmap, idx)
    return PairSample(disp, dist, idx, exact)


def objective(seminorm: Seminorm, disp: np.ndarray, dist: np.ndarray, h: float) -> float:
    if len(dist) == 0:
        return 0.0
    return float(np.abs(dist - seminorm(disp * h)).max())


def _psd_root(G: np.ndarray) -> np.ndarray:
    G = 0.5 * (G + G.T)
    w, Q = np.linalg.eigh(G)
    w[w < 1e-12 * max(float(w.max()), 0.0)] = 0.0
    return (Q * np.sqrt(w)).T


def _quad_design(V: np.ndarray) -> tuple[np.ndarray, list[tuple[int, int]]]:
    d = V.shape[1]
    terms = [(i, j) for i in range(d) for j in range(i, d)]
    cols = [V[:, i] * V[:, j] * (1.0 if i == j else 2.0) for i, j in terms]
    return np.stack(cols, axis=1), terms


def _gram(coef: np.ndarray, terms, d: int) -> np.ndarray:
    G = np.zeros((d, d))
    for c, (i, j) in zip(coef, terms):
        G[i, j] = G[j, i] = c
    return G


def _euclid_starts(V: np.ndarray, dist: np.ndarray) -> list[np.ndarray]:
    """Least squares and minimax fits of the Gram matrix to squared distances."""
    d = V.shape[1]
    X, terms = _quad_design(V)
    starts = []
    coef, *_ = np.linalg.lstsq(X, dist ** 2, rcond=None)
    starts.append(_psd_root(_gram(coef, terms, d)))
    if float(np.abs(X @ coef - dist ** 2).max()) <= 1e-12 * max(1.0, float(dist.max()) ** 2):
        return starts
    nt = X.shape[1]
    # minimise s subject to |X c - D^2| <= s
    c_obj = np.zeros(nt + 1)
    c_obj[-1] = 1.0
    ones = np.ones((len(dist), 1))
    A = np.vstack([np.hstack([X, -ones]), np.hstack([-X, -ones])])
    b = np.concatenate([dist ** 2, -(dist ** 2)])
    res = linprog(c_obj, A_ub=A, b_ub=b, bounds=[(None, None)] * nt + [(0, None)], method="highs")
    if res.status == 0:
        starts.append(_psd_root(_gram(res.x[:nt], terms, d)))
    return starts


def _polish(fun, x0: np.ndarray) -> tuple[np.ndarray, float]:
    best = fun(x0)
    if best <= 1e-13:
        return x0, best
    res = minimize(fun, x0, method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-11, "maxiter": 150 * len(x0)})
    if res.fun < best:
        return res.x, float(res.fun)
    return x0, best


def fit_upper(disp: np.ndarray, dist: np.ndarray, h: float) -> tuple[Seminorm, float]:
    """Best seminorm found over both families; returns it and its max deviation."""
    V = disp * h
    d = V.shape[1]
    zero = Seminorm.zero(d)
    if len(dist) == 0 or float(np.abs(dist).max()) == 0.0:
        return zero, 0.0

    def f_e(x):
        return float(np.abs(dist - np.sqrt(((V @ x.reshape(d, d).T) ** 2).sum(axis=1))).max())

    def f_m(x):
        return float(np.abs(dist - np.abs(V @ x.reshape(d, d).T).max(axis=1)).max())

    start = min(_euclid_starts(V, dist), key=lambda M: f_e(M.ravel()))
    x, val = _polish(f_e, start.ravel())
    candidates = [(val, Seminorm("euclidean", x.reshape(d, d))),
                  (objective(zero, disp, dist, h), zero)]
    if val > 1e-13:
        # covectors seeded by the rows of the Euclidean fit
        xm, valm = _polish(f_m, x)
        candidates.append((valm, Seminorm("maxlinear", xm.reshape(d, d))))
    val, best = min(candidates, key=lambda c: c[0])
    return best, val


def direction_keys(disp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced, sign-normalised integer directions and their inverse index."""
    g = np.gcd.reduce(np.abs(disp), axis=1)
    red = disp // np.where(g > 0, g, 1)[:, None]
    first = np.argmax(red != 0, axis=1)
    sign = np.sign(red[np.arange(len(red)), first])
    red = red * np.where(sign == 0, 1, sign)[:, None]
    keys, inverse = np.unique(red, axis=0, return_inverse=True)
    return keys, inverse.reshape(-1)


def lp_lower(disp: np.ndarray, dist: np.ndarray, h: float, endpoints_multi: np.ndarray | None = None,
             triangles: int = TRIANGLES, seed: int = 0) -> tuple[float, np.ndarray, np.ndarray]:
    """Relaxation optimum: t_u >= 0 per direction, pair and triangle constraints.

    Returns the optimum s (unnormalised), the directions and their t values.
    """
    keys, inv = direction_keys(disp)
    U = len(keys)
    lengths = np.sqrt((disp.astype(float) ** 2).sum(axis=1)) * h
    rows, cols, vals, rhs = [], [], [], []
    P = len(dist)
    r = np.arange(P)
    # t_u l - s <= D and -t_u l - s <= -D
    rows += [r, r, P + r, P + r]
    cols += [inv, np.full(P, U), inv, np.full(P, U)]
    vals += [lengths, -np.ones(P), -lengths, -np.ones(P)]
    rhs.append(dist)
    rhs.append(-dist)
    nrow = 2 * P
    if endpoints_multi is not None and len(endpoints_multi) >= 3:
        rng = np.random.default_rng(seed)
        trip = rng.integers(0, len(endpoints_multi), size=(triangles, 3))
        trip = trip[(trip[:, 0] != trip[:, 1]) & (trip[:, 1] != trip[:, 2]) & (trip[:, 0] != trip[:, 2])]
        pa, pb, pc = (endpoints_multi[trip[:, i]] for i in range(3))
        sides = [pb - pa, pc - pb, pc - pa]
        lookup = {tuple(k): i for i, k in enumerate(keys.tolist())}
        ids = []
        for v in sides:
            kv, iv = direction_keys(v)
            ids.append(np.array([lookup.get(tuple(k), -1) for k in kv.tolist()])[iv])
        ids = np.stack(ids, axis=1)
        ok = (ids >= 0).all(axis=1)
        ids = ids[ok]
        ls = np.stack([np.sqrt((v[ok].astype(float) ** 2).sum(axis=1)) * h for v in sides], axis=1)
        T = len(ids)
        # ||v_ac|| - ||v_ab|| - ||v_bc|| <= 0
        tr = nrow + np.arange(T)
        rows += [tr, tr, tr]
        cols += [ids[:, 0], ids[:, 1], ids[:, 2]]
        vals += [-ls[:, 0], -ls[:, 1], ls[:, 2]]
        rhs.append(np.zeros(T))
        nrow += T
    A = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(nrow, U + 1)).tocsr()
    c = np.zeros(U + 1)
    c[-1] = 1.0
    res = linprog(c, A_ub=A, b_ub=np.concatenate(rhs), bounds=[(0, None)] * (U + 1), method="highs",
                  options={"primal_feasibility_tolerance": LP_TOL, "dual_feasibility_tolerance": LP_TOL})
    if res.status != 0:
        raise StateError(f"metric-derivative LP failed: {res.message}")
    return float(res.x[-1]), keys, res.x[:U]


class MdEngine:
    """Per-map cache of seminorm fits keyed by the clipped lattice region."""

    def __init__(self, fmap: SampledMap, c0: int | None = None, lower: bool = False):
        self.map = fmap
        self.c0 = default_c0(fmap.n, fmap.m) if c0 is None else int(c0)
        if self.c0 < 1 or self.c0 % 2 == 0:
            raise ArgumentError("C0 must be an odd positive integer")
        self.lower = lower
        self._fits: dict = {}
        self._results: dict[CubeId, MdResult] = {}

    def region(self, cube: CubeId) -> Region:
        return dilate(cube, self.c0)

    def _fit(self, region: Region, want_lower: bool):
        lo, hi = region.lattice_bounds(self.map.depth)
        key = (tuple(lo.tolist()), tuple(hi.tolist()))
        hit = self._fits.get(key)
        if hit is not None and (hit[3] is not None or not want_lower):
            return hit
        fm = self.map
        sample = sample_pairs(fm, region)
        semi, _ = fit_upper(sample.disp, sample.dist, fm.h)
        exact = sample.exact
        npairs = len(sample.dist)
        full = fm.region_indices(region)
        if not exact and len(full) * (len(full) - 1) // 2 <= FULL_EVAL_PAIRS:
            disp, dist = _pairs_of(fm, full)
            exact, npairs = True, len(dist)
        else:
            disp, dist = sample.disp, sample.dist
        dev = objective(semi, disp, dist, fm.h)
        low = None
        if want_lower:
            low, _, _ = lp_lower(sample.disp, sample.dist, fm.h, fm.multi(sample.endpoints))
            low = max(0.0, min(low, dev))
        hit = (semi, dev, npairs, low, exact)
        self._fits[key] = hit
        return hit

    def fit(self, cube: CubeId, lower: bool | None = None) -> MdResult:
        want = self.lower if lower is None else lower
        res = self._results.get(cube)
        if res is not None and (res.md_lower is not None or not want):
            return res
        region = self.region(cube)
        semi, dev, npairs, low, exact = self._fit(region, want)
        scale = region.nominal_side
        notes = [] if exact else ["upper evaluated on sampled pairs"]
        res = MdResult(cube, dev / scale, None if low is None else low / scale, semi,
                       self.c0, npairs, exact, notes)
        self._results[cube] = res
        return res

    def md(self, cube: CubeId) -> float:
        return self.fit(cube, lower=False).md_upper

    def fit_many(self, cubes: list[CubeId], lower: bool | None = None) -> list[MdResult]:
        return pmap(lambda q: self.fit(q, lower), cubes)


def fit_seminorm(fmap: SampledMap, cube: CubeId, c0: int | None = None, lower: bool = True) -> MdResult:
    """Fit the approximating seminorm on C0 Q; both bounds by default."""
    return MdEngine(fmap, c0, lower).fit(cube)


@dataclass
class MdProfile:
    results: dict[CubeId, MdResult]
    eps: float
    maxlevel: int

    def exceedance(self, eps: float | None = None, maxlevel: int | None = None) -> float:
        eps = self.eps if eps is None else eps
        top = self.maxlevel if maxlevel is None else maxlevel
        return sum(r.cube.volume for r in self.results.values()
                   if r.cube.level <= top and r.md_upper > eps)

    def rows(self) -> list[dict]:
        return [self.results[q].to_row() for q in sorted(self.results)]


def md_profile(fmap: SampledMap, maxlevel: int, eps: float = 0.05, c0: int | None = None,
               engine: MdEngine | None = None, lower: bool = False) -> MdProfile:
    """Fits for every cube of levels 0..maxlevel and the exceedance volume."""
    if maxlevel > fmap.depth - 1 or maxlevel < 0:
        raise ArgumentError(f"maxlevel must lie in [0, {fmap.depth - 1}]")
    eng = engine or MdEngine(fmap, c0, lower)
    cubes = [q for level in range(maxlevel + 1) for q in cubes_at_level(fmap.d, level)]
    results = dict(zip(cubes, eng.fit_many(cubes, lower)))
    return MdProfile(results, eps, maxlevel)


@dataclass
class NormBoundReport:
    holds: bool
    worst_slack: float
    checked: int


def norm_bound_check(fmap: SampledMap, result: MdResult, eps: float) -> NormBoundReport:
    """Check ||v|| <= L |v| + C0 eps side(Q) on the region's lattice displacements.

    L is the map's Lipschitz constant (1 for the 1-Lipschitz normalisation).
    """
    if not result.md_upper < eps:
        raise StateError(f"norm bound needs md_upper < eps, got {result.md_upper} >= {eps}")
    cube = result.cube
    region = dilate(cube, result.c0)
    idx = fmap.region_indices(region)
    if len(idx) > FULL_PAIR_POINTS * 4:
        idx = idx[farthest_point_order(fmap.multi(idx).astype(float), SAMPLE_ENDPOINTS)]
    multi = fmap.multi(idx)
    ii, jj = np.triu_indices(len(idx), k=1)
    V = (multi[jj] - multi[ii]) * fmap.h
    length = np.sqrt((V ** 2).sum(axis=1))
    keep = length < result.c0 * cube.side
    V, length = V[keep], length[keep]
    lip = max(fmap.lipschitz, 1.0)
    slack = lip * length + result.c0 * eps * cube.side - result.seminorm(V)
    worst = float(slack.min()) if len(slack) else math.inf
    return NormBoundReport(worst >= -1e-12, worst, int(len(slack)))
