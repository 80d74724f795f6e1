import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mapcontent.content import (ContentEngine, arbitrary_mapping_content_upper, dyadic_ceil,
                                exhaustive_mapping_content, hausdorff_content, lebesgue_measure,
                                local_density, mapping_content, unit_cube_content)
from mapcontent.dyadic import CellSet, CubeId, children, cubes_at_level, interiors_disjoint, root
from mapcontent.errors import ArgumentError
from mapcontent.metricspaces import EuclideanSpace, FiniteMetric
from mapcontent.sampledmaps import SampledMap, from_builtin, lipschitz_estimate, star_cube, star_set


def enumerate_antichains(q, depth, E):
    """Every dyadic antichain below q covering E ∩ q, as explicit cube lists."""
    if not E.meets(q):
        return [[]]
    if q.level == depth:
        return [[q]]
    below = [enumerate_antichains(ch, depth, E) for ch in children(q)]
    covers = [[q]]
    for combo in itertools.product(*below):
        covers.append([c for part in combo for c in part])
    return covers


def brute_content(fmap, E, depth):
    eng = ContentEngine(fmap)
    best = math.inf
    for cover in enumerate_antichains(root(fmap.d), depth, E):
        best = min(best, sum(eng.cost(q).upper for q in cover))
    return best


def random_finite_map(seed, depth=3):
    rng = np.random.default_rng(seed)
    pts = rng.random((6, 2))
    mat = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    target = FiniteMetric(mat)
    vals = rng.integers(0, 6, ((1 << depth) + 1) ** 2).astype(float)
    fm = SampledMap(1, 1, depth, target, vals, 0.0, name=f"random{seed}")
    fm.lipschitz = lipschitz_estimate(fm)
    return fm


def test_antichain_count_at_depth_two():
    # a(0) = 1, a(j+1) = 1 + a(j)^4
    assert len(enumerate_antichains(root(2), 2, CellSet.full(2, 2))) == 17


@pytest.mark.parametrize("name,params", [("projection", {}), ("constant", {}), ("star9", {"k": 2})])
def test_dp_matches_brute_force(name, params):
    fmap = from_builtin(name, dict(params, depth=3))
    E = CellSet.full(2, 3)
    dp = mapping_content(fmap, E).value
    assert abs(dp - brute_content(fmap, E, 3)) <= 1e-12
    assert abs(dp - exhaustive_mapping_content(fmap, E, 3)) <= 1e-12


def test_dp_matches_brute_force_on_A():
    fmap = from_builtin("star9", {"k": 2, "depth": 4})
    A = star_set(2, 4)
    dp = mapping_content(fmap, A, depth=3).value
    assert abs(dp - brute_content(fmap, A, 3)) <= 1e-12


def test_dp_matches_brute_force_random_depth3():
    fmap = random_finite_map(0)
    E = CellSet.full(2, 3)
    assert abs(mapping_content(fmap, E).value - brute_content(fmap, E, 3)) <= 1e-12


@pytest.mark.parametrize("seed", range(1, 11))
def test_dp_matches_brute_force_random(seed):
    fmap = random_finite_map(seed)
    rng = np.random.default_rng(seed)
    E = CellSet(rng.random((8, 8)) < 0.7, 3)
    if not E:
        return
    dp = mapping_content(fmap, E, depth=2).value
    assert abs(dp - brute_content(fmap, E, 2)) <= 1e-12
    assert abs(dp - exhaustive_mapping_content(fmap, E, 2)) <= 1e-12


def test_dp_result_structure():
    fmap = from_builtin("star9", {"k": 2, "depth": 4})
    E = CellSet.full(2, 4)
    res = mapping_content(fmap, E)
    covered = CellSet.from_cubes(res.antichain, 2, 4)
    assert E.issubset(covered)
    for a, b in itertools.combinations(res.antichain, 2):
        assert interiors_disjoint(a, b)
    assert res.value == pytest.approx(sum(res.costs[q] for q in res.antichain), abs=1e-12)
    assert res.lower <= res.value
    assert res.value <= res.costs[root(2)] + 1e-15


def test_projection_content_is_area():
    for D in (3, 4, 5):
        fmap = from_builtin("projection", {"depth": D})
        assert mapping_content(fmap, CellSet.full(2, D)).value == pytest.approx(1.0, rel=0.02)


def test_constant_content_zero():
    fmap = from_builtin("constant", {"depth": 4})
    assert mapping_content(fmap, CellSet.full(2, 4)).value == 0.0


def test_empty_set_rejected():
    fmap = from_builtin("projection", {"depth": 3})
    with pytest.raises(ArgumentError):
        mapping_content(fmap, CellSet.empty(2, 3))


def test_single_point_content():
    assert hausdorff_content(np.zeros((1, 1)), EuclideanSpace(1), 1).upper == 0.0


@pytest.mark.parametrize("D", [3, 5, 8])
def test_segment_content(D):
    pts = np.linspace(0, 1, (1 << D) + 1)[:, None]
    br = hausdorff_content(pts, EuclideanSpace(1), 1)
    assert br.lower <= 1.0 <= br.upper <= 1 + 2.0 ** -D


def test_star_cube_image_content():
    k, D = 2, 5
    fmap = from_builtin("star9", {"k": k, "depth": D})
    eng = ContentEngine(fmap)
    br = eng.image_bracket(star_cube(k, 1, 0))
    assert br.lower <= 2.0 ** -k <= br.upper


def test_content_rejects_bad_k():
    with pytest.raises(ArgumentError):
        hausdorff_content(np.zeros((2, 1)), EuclideanSpace(1), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([1.0, 2.0]))
def test_bracket_sanity(seed, k):
    rng = np.random.default_rng(seed)
    pts = rng.random((int(rng.integers(2, 60)), 2))
    br = hausdorff_content(pts, EuclideanSpace(2), k)
    assert 0 <= br.lower <= br.upper
    if br.lower > 0:
        assert br.upper / br.lower <= 5 ** k * (1 + 1e-9)


def test_lebesgue_measure():
    assert lebesgue_measure(CellSet.full(2, 3)) == 1.0
    left = CellSet.from_cubes([CubeId(1, (0, 0)), CubeId(1, (0, 1))], 2, 3)
    assert lebesgue_measure(left) == 0.5
    assert lebesgue_measure(star_set(2, 3)) == 0.25


def random_pair(rng, D):
    a = CellSet(rng.random((1 << D,) * 2) < rng.random(), D)
    b = CellSet(rng.random((1 << D,) * 2) < rng.random(), D)
    return a, b


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_subadditivity_and_monotonicity(seed):
    rng = np.random.default_rng(seed)
    fmap = from_builtin("star9", {"k": 2, "depth": 4})
    eng = ContentEngine(fmap)
    a, b = random_pair(rng, 4)
    if not a or not b:
        return
    u = mapping_content(fmap, a | b, engine=eng).value
    assert u <= mapping_content(fmap, a, engine=eng).value + mapping_content(fmap, b, engine=eng).value + 1e-9
    assert mapping_content(fmap, a, engine=eng).value <= u + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_domination_by_measure(seed):
    # the constant is the largest cost-to-volume ratio over the projection's cubes
    D = 4
    proj = from_builtin("projection", {"depth": D})
    eng = ContentEngine(proj)
    C = max(eng.cost(q).upper / q.volume for lv in range(D + 1) for q in cubes_at_level(2, lv))
    assert C == pytest.approx(2.0)
    rng = np.random.default_rng(seed)
    E, _ = random_pair(rng, D)
    if not E:
        return
    assert mapping_content(proj, E).value <= C * E.measure + 1e-12
    star = from_builtin("star9", {"k": 2, "depth": D})
    assert mapping_content(star, E).value <= C * E.measure * star.lipschitz + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_content_measure_comparability(seed):
    rng = np.random.default_rng(seed)
    D = 4
    E = CellSet(rng.random((1 << D,) * 2) < 0.5, D)
    if not E:
        return
    cells = E.cells()
    pts = np.concatenate([cells + np.array(o) for o in itertools.product((0, 1), repeat=2)]) * 2.0 ** -D
    br = hausdorff_content(pts, EuclideanSpace(2), 2.0, 2.0 ** -(D + 1))
    assert br.lower <= 20 ** 2 * E.measure
    assert E.measure <= 20 ** 2 * br.upper


def test_unit_cube_content():
    one = unit_cube_content(1)
    assert one.lower <= 1.0 <= one.upper
    assert unit_cube_content(2).upper >= 1.0


def test_local_density_projection():
    fmap = from_builtin("projection", {"depth": 6})
    assert local_density(fmap, (0.5, 0.5), [0.25, 0.125, 0.0625]) == pytest.approx(2.0, rel=0.05)


def test_local_density_constant():
    fmap = from_builtin("constant", {"depth": 5})
    assert local_density(fmap, (0.5, 0.5), [0.25]) == 0.0


def test_local_density_linear():
    # the ball's image is a segment of length 2|J| r, so density = 2|J|
    fmap = from_builtin("linear", {"depth": 6, "matrix": [[1.0, 1.0]]})
    theta = local_density(fmap, (0.5, 0.5), [0.25, 0.125, 0.0625])
    assert theta / 2 == pytest.approx(math.sqrt(2), rel=0.25)


def test_local_density_radii():
    fmap = from_builtin("projection", {"depth": 3})
    with pytest.raises(ArgumentError):
        local_density(fmap, (0.5, 0.5), [])
    with pytest.raises(ArgumentError):
        local_density(fmap, (0.5, 0.5), [1.5])


def test_arbitrary_content_projection():
    fmap = from_builtin("projection", {"depth": 4})
    full = CellSet.full(2, 4)
    assert arbitrary_mapping_content_upper(fmap, full) <= math.sqrt(2) * mapping_content(fmap, full).value


def test_arbitrary_content_constant():
    fmap = from_builtin("constant", {"depth": 4})
    assert arbitrary_mapping_content_upper(fmap, CellSet.full(2, 4)) == 0.0


def test_arbitrary_content_star_on_A():
    fmap = from_builtin("star9", {"k": 2, "depth": 4})
    A = star_set(2, 4)
    assert arbitrary_mapping_content_upper(fmap, A) <= math.sqrt(2) * mapping_content(fmap, A).value


def test_dyadic_resolution():
    fmap = from_builtin("star9", {"k": 2, "depth": 4})
    assert ContentEngine(fmap).resolution == dyadic_ceil(4 * 2.0 ** -4 / 2)
