"""Distance oracles for target spaces.

Every oracle works on points stored as rows of a float array of shape
(N, width): Euclidean coordinates, finite point ids, or star-tree
(component, offset) pairs.
"""

from __future__ import annotations

import logging
import struct
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ArgumentError

log = logging.getLogger(__name__)

DMAT_MAGIC = b"DMATv001"


class DistanceOracle:
    """Base class; subclasses implement ``_paired`` and ``_pairwise``."""

    width = 1
    kind = "abstract"

    def validate(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1) if pts.size == self.width else pts.reshape(-1, self.width)
        if pts.shape[1] != self.width:
            raise KeyError(f"{self.kind} points have width {self.width}, got {pts.shape[1]}")
        return pts

    def paired(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Row-by-row distances d(p_i, q_i)."""
        return self._paired(self.validate(p), self.validate(q))

    def pairwise(self, p: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
        """Distance matrix between the rows of p and the rows of q."""
        p = self.validate(p)
        q = p if q is None else self.validate(q)
        return self._pairwise(p, q)

    def _pairwise(self, p, q):
        ii, jj = np.meshgrid(np.arange(len(p)), np.arange(len(q)), indexing="ij")
        return self._paired(p[ii.ravel()], q[jj.ravel()]).reshape(len(p), len(q))

    def describe(self) -> dict:
        return {"kind": self.kind}


def distance(oracle: DistanceOracle, p, q) -> float:
    return float(oracle.paired(np.atleast_2d(np.asarray(p, dtype=float)),
                               np.atleast_2d(np.asarray(q, dtype=float)))[0])


class EuclideanSpace(DistanceOracle):
    kind = "euclidean"

    def __init__(self, dim: int):
        if dim < 1:
            raise ArgumentError("Euclidean dimension must be positive")
        self.width = dim

    def _paired(self, p, q):
        return np.sqrt(((p - q) ** 2).sum(axis=1))

    def _pairwise(self, p, q):
        if self.width == 1:
            return np.abs(p[:, 0:1] - q[:, 0].reshape(1, -1))
        diff = p[:, None, :] - q[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=2))

    def describe(self):
        return {"kind": "euclidean", "dim": self.width}


class FiniteMetric(DistanceOracle):
    """Finite metric space given by a distance matrix; points are ids."""

    kind = "finite"
    width = 1

    def __init__(self, matrix: np.ndarray, source: str | None = None):
        mat = np.asarray(matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ArgumentError("distance matrix must be square")
        asym = float(np.abs(mat - mat.T).max()) if mat.size else 0.0
        if asym > 1e-9:
            log.warning("distance matrix asymmetric by %.3g; symmetrizing", asym)
        mat = 0.5 * (mat + mat.T)
        np.fill_diagonal(mat, 0.0)
        if (mat < 0).any():
            raise ArgumentError("distance matrix has negative entries")
        mat.flags.writeable = False
        self.matrix = mat
        self.source = source

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def ids(self, pts: np.ndarray) -> np.ndarray:
        ids = pts[:, 0].astype(np.int64)
        if (ids != pts[:, 0]).any() or (ids < 0).any() or (ids >= self.size).any():
            bad = pts[(ids != pts[:, 0]) | (ids < 0) | (ids >= self.size), 0]
            raise KeyError(f"unknown point id {bad[0]!r}")
        return ids

    def _paired(self, p, q):
        return self.matrix[self.ids(p), self.ids(q)]

    def _pairwise(self, p, q):
        return self.matrix[np.ix_(self.ids(p), self.ids(q))]

    def describe(self):
        return {"kind": "finite", "size": self.size, "matrix": self.source}


def read_distance_matrix(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != DMAT_MAGIC:
        raise ArgumentError(f"{path}: bad magic, expected {DMAT_MAGIC!r}")
    (n,) = struct.unpack("<Q", raw[8:16])
    body = raw[16:]
    if len(body) != 8 * n * n:
        raise ArgumentError(f"{path}: expected {n * n} float64 entries")
    return np.frombuffer(body, dtype="<f8").reshape(n, n).copy()


def write_distance_matrix(path: str | Path, matrix: np.ndarray) -> None:
    mat = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(DMAT_MAGIC)
        fh.write(struct.pack("<Q", mat.shape[0]))
        fh.write(mat.tobytes())


def load_finite_metric(path: str | Path) -> FiniteMetric:
    return FiniteMetric(read_distance_matrix(path), source=str(path))


class StarTree(DistanceOracle):
    """Backbone [0,1] with 2^(k-1) stars of 2^(k-1) spikes of length 2^-k.

    Star a is centred at v_a, glued to the backbone at a / 2^(k-1).  A point
    is (component, offset): component -1 is the backbone with offset its
    coordinate, component a*S + b is spike b of star a with offset the
    distance from v_a.  ``scale`` multiplies all distances.
    """

    kind = "startree"
    width = 2

    def __init__(self, k: int, scale: float = 1.0):
        if not 2 <= k <= 12:
            raise ArgumentError(f"star tree parameter k must lie in [2, 12], got {k}")
        if scale <= 0:
            raise ArgumentError("scale must be positive")
        self.k = k
        self.scale = float(scale)
        self.stars = 1 << (k - 1)
        self.spike = 2.0 ** -k

    @property
    def total_length(self) -> Fraction:
        spikes = self.stars * self.stars
        return (1 + spikes * Fraction(1, 1 << self.k)) * Fraction(self.scale)

    def center(self, a: int) -> np.ndarray:
        return np.array([-1.0, a / self.stars])

    def spike_point(self, a: int, b: int, offset: float) -> np.ndarray:
        return np.array([float(a * self.stars + b), offset])

    def _split(self, pts):
        comp = pts[:, 0]
        off = pts[:, 1]
        ic = comp.astype(np.int64)
        on_spike = ic >= 0
        if (ic != comp).any() or (ic < -1).any() or (ic >= self.stars * self.stars).any():
            raise KeyError("unknown star-tree component")
        if (on_spike & ((off < -1e-12) | (off > self.spike + 1e-12))).any():
            raise KeyError("spike offset out of range")
        if (~on_spike & ((off < -1e-12) | (off > 1 + 1e-12))).any():
            raise KeyError("backbone coordinate out of range")
        base = np.where(on_spike, (ic // self.stars) / self.stars, off)
        up = np.where(on_spike, off, 0.0)
        return ic, base, up

    def _paired(self, p, q):
        cp, bp, up = self._split(p)
        cq, bq, uq = self._split(q)
        same = (cp == cq) & (cp >= 0)
        d = np.where(same, np.abs(up - uq), up + uq + np.abs(bp - bq))
        return self.scale * d

    def _pairwise(self, p, q):
        cp, bp, up = self._split(p)
        cq, bq, uq = self._split(q)
        same = (cp[:, None] == cq[None, :]) & (cp[:, None] >= 0)
        far = up[:, None] + uq[None, :] + np.abs(bp[:, None] - bq[None, :])
        near = np.abs(up[:, None] - uq[None, :])
        return self.scale * np.where(same, near, far)

    def encode(self, pts: np.ndarray, depth: int) -> np.ndarray:
        """Integer ids of points whose offsets are multiples of 2^-depth."""
        comp, off = pts[:, 0].astype(np.int64), pts[:, 1]
        steps = off * (1 << depth)
        ticks = np.rint(steps).astype(np.int64)
        if np.abs(steps - ticks).max(initial=0.0) > 1e-6:
            raise ArgumentError("star-tree offsets are not on the 2^-depth grid")
        per = 1 << max(depth - self.k, 0)
        nback = (1 << depth) + 1
        spike_ids = nback + comp * per + ticks - 1
        ids = np.where((comp < 0) | (ticks == 0), -1, spike_ids)
        back = np.where(comp < 0, ticks, (comp // self.stars) * (1 << depth) // self.stars)
        return np.where(ids < 0, back, ids)

    def decode(self, ids: np.ndarray, depth: int) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        nback = (1 << depth) + 1
        per = 1 << max(depth - self.k, 0)
        if (ids < 0).any() or (ids >= nback + self.stars * self.stars * per).any():
            raise KeyError("star-tree id out of range")
        h = 2.0 ** -depth
        rel = ids - nback
        comp = np.where(ids < nback, -1, rel // per)
        off = np.where(ids < nback, ids * h, (rel % per + 1) * h)
        return np.stack([comp.astype(float), off], axis=1)

    def describe(self):
        out = {"kind": "startree", "k": self.k}
        if self.scale != 1.0:
            out["scale"] = self.scale
        return out


class ProductSpace(DistanceOracle):
    """X × [0,1]^m with d = max(d_X, sup-norm on the cube factor)."""

    kind = "product"

    def __init__(self, base: DistanceOracle, m: int):
        if m < 0:
            raise ArgumentError("m must be nonnegative")
        self.base = base
        self.m = m
        self.width = base.width + m

    def _paired(self, p, q):
        w = self.base.width
        d = self.base._paired(p[:, :w], q[:, :w])
        if self.m:
            d = np.maximum(d, np.abs(p[:, w:] - q[:, w:]).max(axis=1))
        return d

    def _pairwise(self, p, q):
        w = self.base.width
        d = self.base._pairwise(p[:, :w], q[:, :w])
        if self.m:
            cube = np.abs(p[:, None, w:] - q[None, :, w:]).max(axis=2)
            d = np.maximum(d, cube)
        return d

    def describe(self):
        return {"kind": "product", "base": self.base.describe(), "m": self.m}


def product_with_cube(oracle: DistanceOracle, m: int) -> ProductSpace:
    return ProductSpace(oracle, m)


def star_tree(k: int, scale: float = 1.0) -> StarTree:
    return StarTree(k, scale)
