import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mapcontent.dyadic import (CellSet, CubeId, boxes_disjoint, children, cubes_at_level, dilate,
                               family_count_bound, interiors_disjoint, minimal_containing_cube,
                               root, split_separated)
from mapcontent.errors import ArgumentError, DepthError


def cube_strategy(d=2, maxlevel=5):
    return st.integers(0, maxlevel).flatmap(
        lambda k: st.tuples(*[st.integers(0, (1 << k) - 1)] * d).map(lambda idx: CubeId(k, idx)))


def test_root_children_tile_unit_square():
    kids = children(root(2))
    assert len(kids) == 4
    assert {q.index for q in kids} == {(0, 0), (1, 0), (0, 1), (1, 1)}
    assert all(q.level == 1 for q in kids)
    assert sum(q.volume for q in kids) == 1.0


def test_children_of_level_one_corner():
    kids = children(CubeId(1, (0, 0)))
    assert [q.index for q in kids] == [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert all(q.level == 2 for q in kids)


@given(cube_strategy(d=3, maxlevel=4))
def test_children_partition_parent_3d(q):
    kids = children(q)
    assert len(kids) == 8
    assert math.isclose(sum(c.volume for c in kids), q.volume)
    assert all(q.contains(c) and c.parent() == q for c in kids)
    for a, b in itertools.combinations(kids, 2):
        assert interiors_disjoint(a, b)


def test_children_past_depth():
    with pytest.raises(DepthError):
        children(CubeId(3, (0, 0)), depth=3)


def test_side_and_identity():
    q = CubeId(3, (1, 2))
    assert q.side == 0.125
    assert q == CubeId(3, (1, 2))
    assert hash(q) == hash(CubeId(3, [1, 2]))
    with pytest.raises(ArgumentError):
        CubeId(1, (2, 0))


def test_dilate_center_cube():
    reg = dilate(CubeId(2, (1, 1)), 3)
    assert not reg.clipped
    assert sorted(q.index for q in reg.cubes()) == sorted(itertools.product(range(3), repeat=2))


def test_dilate_corner_is_clipped():
    reg = dilate(CubeId(1, (0, 0)), 3)
    assert reg.clipped
    assert reg.bounds() == ((0, 0), (1, 1))
    wide = dilate(CubeId(1, (0, 0)), 3, clip=False)
    assert wide.bounds() == ((Fraction(-1, 2),) * 2, (Fraction(1),) * 2)
    # nominal box is [-1/4, 5/4]^2 in centred form: centre 1/4, half side 3/4
    lo, hi = wide.bounds()
    assert (lo[0] + hi[0]) / 2 == Fraction(1, 4)
    assert hi[0] - lo[0] == Fraction(3, 2)


def test_dilate_factor_one_and_even():
    q = CubeId(3, (5, 2))
    assert dilate(q, 1).cubes() == [q]
    with pytest.raises(ArgumentError):
        dilate(q, 4)


@given(cube_strategy(d=2, maxlevel=4), st.sampled_from([1, 3, 5, 7]))
def test_unclipped_dilation_count(q, factor):
    reg = dilate(q, factor, clip=False)
    width = [h - l for l, h in zip(reg.lo, reg.hi)]
    assert math.prod(width) == factor ** 2


def brute_minimal_cube(x, y, depth):
    """Scan every cube, finest level first, lexicographic within a level."""
    for level in range(depth, -1, -1):
        side = Fraction(1, 1 << level)
        for q in sorted(cubes_at_level(len(x), level), key=lambda c: c.index):
            lo = [(i - 1) * side for i in q.index]
            hi = [(i + 2) * side for i in q.index]
            if all(l <= a <= h and l <= b <= h for a, b, l, h in zip(x, y, lo, hi)):
                return q
    raise AssertionError("no cube found")


def test_minimal_cube_far_points():
    x, y = (Fraction(1, 10),) * 2, (Fraction(9, 10),) * 2
    q = minimal_containing_cube(x, y, 5)
    assert q == brute_minimal_cube(x, y, 5)
    assert q.level <= 1


def test_minimal_cube_close_points():
    x = (Fraction(33, 100), Fraction(1, 2))
    y = (Fraction(331, 1000), Fraction(1, 2))
    q = minimal_containing_cube(x, y, 5)
    assert q == brute_minimal_cube(x, y, 5)
    assert q.level >= 4


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 16), min_size=4, max_size=4))
def test_minimal_cube_matches_scan(coords):
    x = tuple(Fraction(c, 16) for c in coords[:2])
    y = tuple(Fraction(c, 16) for c in coords[2:])
    assert minimal_containing_cube(x, y, 4) == brute_minimal_cube(x, y, 4)


def test_minimal_cube_same_cube_interior():
    x = (Fraction(5, 32), Fraction(5, 32))
    y = (Fraction(6, 32), Fraction(7, 32))
    # both inside the interior of the level-2 cube (0, 0)
    assert minimal_containing_cube(x, y, 5).level >= 2


def greedy_oracle(cubes, lam, eta):
    """Independent replay: float boxes, side-descending then lexicographic order."""
    def box(q):
        half = lam * q.side / 2
        c = [(i + 0.5) * q.side for i in q.index]
        return [(v - half, v + half) for v in c]

    def meet(a, b):
        return all(lo1 <= hi2 and lo2 <= hi1 for (lo1, hi1), (lo2, hi2) in zip(a, b))

    rest = sorted(set(cubes), key=lambda q: (q.level, q.index))
    fams = []
    while rest and sum(q.volume for q in rest) >= eta:
        fam, boxes, nxt = [], [], []
        for q in rest:
            b = box(q)
            if any(meet(b, o) for o in boxes):
                nxt.append(q)
            else:
                fam.append(q)
                boxes.append(b)
        fams.append(fam)
        rest = nxt
    return fams, rest


def test_split_single_cube():
    fams, rest = split_separated([CubeId(2, (1, 1))], 5, 0.01)
    assert fams == [[CubeId(2, (1, 1))]] and rest == []


def test_split_opposite_corners():
    cubes = [CubeId(3, (0, 0)), CubeId(3, (7, 7))]
    fams, rest = split_separated(cubes, 5, 0.001)
    assert len(fams) == 1 and sorted(fams[0]) == sorted(cubes) and rest == []


def test_split_level_two_grid_matches_oracle():
    cubes = cubes_at_level(2, 2)
    fams, rest = split_separated(cubes, 5, 0.01)
    ofams, orest = greedy_oracle(cubes, 5, 0.01)
    assert len(fams) == len(ofams)
    assert [sorted(f) for f in fams] == [sorted(f) for f in ofams]
    assert sum(q.volume for q in rest) == sum(q.volume for q in orest) < 0.01


def check_split(cubes, lam, eta):
    fams, rest = split_separated(cubes, lam, eta)
    placed = [q for f in fams for q in f] + list(rest)
    assert sorted(placed) == sorted(set(cubes))
    for fam in fams:
        for p, q in itertools.combinations(fam, 2):
            assert boxes_disjoint(dilate(p, lam, clip=False), dilate(q, lam, clip=False))
    assert sum(q.volume for q in rest) < eta
    assert len(fams) <= family_count_bound(lam, eta, cubes[0].d)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.sampled_from([5, 7]), st.sampled_from([0.1, 0.01]), st.integers(0, 10 ** 6))
def test_split_properties(level, lam, eta, seed):
    rng = np.random.default_rng(seed)
    grid = cubes_at_level(2, level)
    pick = [q for q in grid if rng.random() < 0.6] or grid[:1]
    check_split(pick, lam, eta)


def test_split_rejects_bad_eta():
    with pytest.raises(ArgumentError):
        split_separated([CubeId(1, (0, 0))], 5, 0.0)


def test_family_count_bound_formula():
    c = 1 / (1 + 11 ** 2)
    assert family_count_bound(5, 0.01, 2) == math.ceil(math.log(0.01) / math.log(1 - c))


def random_cellset(rng, depth=3, p=0.5):
    return CellSet(rng.random((1 << depth,) * 2) < p, depth)


@settings(max_examples=40)
@given(st.integers(0, 10 ** 6))
def test_cellset_algebra(seed):
    rng = np.random.default_rng(seed)
    a, b = random_cellset(rng), random_cellset(rng)
    assert (a | b).measure == len(a | b) * 2.0 ** -6
    assert math.isclose((a | b).measure + (a & b).measure, a.measure + b.measure)
    assert ((a - b) & b).measure == 0.0
    assert (a - b).issubset(a)
    assert (~a | a) == CellSet.full(2, 3)


def test_cellset_from_cubes_and_within():
    q = CubeId(1, (1, 0))
    E = CellSet.from_cubes([q], 2, 3)
    assert E.measure == 0.25
    assert E.within(q) == E
    assert not E.within(CubeId(1, (0, 0)))
    assert E.meets(q) and not E.meets(CubeId(2, (0, 3)))


@given(cube_strategy(), cube_strategy())
def test_interior_disjointness_matches_boxes(a, b):
    def span(q, i):
        s = Fraction(1, 1 << q.level)
        return q.index[i] * s, (q.index[i] + 1) * s

    overlap = all(max(span(a, i)[0], span(b, i)[0]) < min(span(a, i)[1], span(b, i)[1])
                  for i in range(2))
    assert interiors_disjoint(a, b) == (not overlap)


def test_antichain_disjointness_is_exact():
    assert interiors_disjoint(CubeId(2, (0, 0)), CubeId(2, (1, 0)))
    assert not interiors_disjoint(CubeId(1, (0, 0)), CubeId(3, (3, 3)))
