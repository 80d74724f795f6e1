import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mapcontent.dyadic import CellSet, CubeId
from mapcontent.errors import ArgumentError, NotBiLipschitzError, StateError
from mapcontent.hardsard import (CAVEAT, Tolerances, _pair_terms, check_hard_sard,
                                 construct_shear, content_measure_comparison, identity_straightening,
                                 iterate_directional, prune, select_y_slice, supplemented_precheck)
from mapcontent.metricspaces import EuclideanSpace
from mapcontent.sampledmaps import SampledMap, from_builtin, star_set


def two_level(depth=4):
    # x below y = 1/2, x + 1 above
    return SampledMap.from_function(1, 1, depth, EuclideanSpace(1),
                                    lambda p: (p[:, 0] + (p[:, 1] >= 0.5))[:, None], 1.0, "two-level")


def test_projection_identity_accepted():
    fmap = from_builtin("projection", {"depth": 4})
    E = CellSet.full(2, 4)
    cert = check_hard_sard(fmap, E, identity_straightening(fmap, E))
    assert cert.accepted
    assert cert.c_lip == pytest.approx(1.0)
    assert cert.stats.fiber_violations == 0
    assert cert.to_dict()["caveat"] == CAVEAT


def test_swap_rejected():
    fmap = from_builtin("projection", {"depth": 4})
    E = CellSet.full(2, 4)
    g = identity_straightening(fmap, E)[:, ::-1]
    cert = check_hard_sard(fmap, E, g)
    assert not cert.accepted
    assert cert.stats.fiber_violations > 0


def test_check_errors():
    fmap = from_builtin("projection", {"depth": 3})
    with pytest.raises(ArgumentError):
        check_hard_sard(fmap, CellSet.empty(2, 3), np.zeros((0, 2)))
    with pytest.raises(ArgumentError):
        check_hard_sard(fmap, CellSet.full(2, 3), np.zeros((3, 2)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_fiber_violation_symmetry(seed):
    rng = np.random.default_rng(seed)
    fmap = from_builtin("star9", {"k": 2, "depth": 4})
    E = CellSet.full(2, 4)
    flat = fmap.anchors(E)
    x, vals = fmap.coords(flat), fmap.values[flat]
    g = x + rng.normal(0, fmap.h, x.shape) * rng.random()
    a = rng.integers(0, len(x), 500)
    b = rng.integers(0, len(x), 500)
    keep = a != b
    a, b = a[keep], b[keep]
    _, _, fwd = _pair_terms(fmap, x, vals, g, a, b, 1e-9)
    _, _, bwd = _pair_terms(fmap, x, vals, g, b, a, 1e-9)
    assert np.array_equal(fwd, bwd)


def test_precheck():
    fmap = from_builtin("projection", {"depth": 3})
    lo, hi = supplemented_precheck(fmap, CellSet.full(2, 3), 2.0)
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)
    with pytest.raises(NotBiLipschitzError):
        supplemented_precheck(two_level(), CellSet.full(2, 4), 4.0)


def test_slice_projection_first():
    fmap = from_builtin("projection", {"depth": 4})
    ch = select_y_slice(fmap, CellSet.full(2, 4), 2.0)
    assert ch.y == (0,)
    assert set(ch.scores.values()) == {ch.score}
    assert ch.score == pytest.approx(1.0, rel=0.1)


def test_slice_two_level():
    # the half slices tie; matching leaks one column across the jump
    ch = select_y_slice(two_level(), CellSet.full(2, 4), 17.0)
    assert ch.y == (0,)
    assert ch.score == pytest.approx(0.5, abs=0.07)
    assert ch.score >= ch.bound


def test_slice_star_on_A():
    fmap = from_builtin("star9", {"k": 2, "depth": 5})
    ch = select_y_slice(fmap, star_set(2, 5), 3.0)
    assert ch.score > 0 and ch.score >= ch.bound


def test_shear_projection_identity():
    fmap = from_builtin("projection", {"depth": 4})
    F = CellSet.full(2, 4)
    step = construct_shear(fmap, F, (3,))
    assert step.E1 == F
    assert np.allclose(step.g, identity_straightening(fmap, F))


def test_shear_two_level_half():
    fmap = two_level()
    step = construct_shear(fmap, CellSet.full(2, 4), (0,))
    bottom = CellSet.from_cubes([CubeId(1, (0, 0)), CubeId(1, (1, 0))], 2, 4)
    assert bottom.issubset(step.E1)
    assert (step.E1 - bottom).measure <= 2 * 8 * 2.0 ** -8


def test_shear_star_preserves_y():
    fmap = from_builtin("star9", {"k": 2, "depth": 5})
    A = star_set(2, 5)
    step = construct_shear(fmap, A, (0,))
    assert step.E1
    y = step.E1.cells()[:, 1] * fmap.h
    assert np.array_equal(step.g[:, 1], y)


def test_shear_empty_slice():
    fmap = from_builtin("projection", {"depth": 3})
    half = CellSet.from_cubes([CubeId(1, (0, 0))], 2, 3)
    with pytest.raises(StateError):
        construct_shear(fmap, half, (7,))


def test_prune_removes_violations():
    fmap = from_builtin("projection", {"depth": 3})
    E = CellSet.full(2, 3)
    g = identity_straightening(fmap, E)[:, ::-1]
    keep = prune(fmap, E, g, Tolerances())
    bits = np.zeros((8, 8), dtype=bool)
    bits[tuple(E.cells()[keep].T)] = True
    sub = CellSet(bits, 3)
    assert check_hard_sard(fmap, sub, g[keep]).stats.fiber_violations == 0


def test_iterate_projection():
    fmap = from_builtin("projection", {"depth": 4})
    F = CellSet.full(2, 4)
    res = iterate_directional(fmap, F, 0.05, 2.0)
    assert len(res.certificates) == 1
    assert res.certificates[0].E.measure >= 0.95
    assert res.garbage.measure < 0.05


def test_iterate_two_level():
    fmap = two_level()
    res = iterate_directional(fmap, CellSet.full(2, 4), 0.05, 17.0)
    assert len(res.certificates) == 2
    assert all(c.accepted for c in res.certificates)
    bottom = CellSet.from_cubes([CubeId(1, (0, 0)), CubeId(1, (1, 0))], 2, 4)
    first, second = (c.E for c in res.certificates)
    assert (first & bottom).measure >= 0.9 * first.measure
    assert (second - bottom).measure >= 0.9 * second.measure
    measures = [1.0] + [1.0 - sum(c.E.measure for c in res.certificates[:i + 1]) for i in range(2)]
    assert all(a > b for a, b in zip(measures, measures[1:]))
    assert res.garbage.measure < 0.05


def test_iterate_star_on_A():
    fmap = from_builtin("star9", {"k": 2, "depth": 5})
    res = iterate_directional(fmap, star_set(2, 5), 0.05, 3.0)
    assert res.certificates and all(c.accepted for c in res.certificates)
    assert len(res.certificates) <= res.iteration_cap
    assert res.garbage.measure < 0.05


def test_iterate_bad_alpha():
    fmap = from_builtin("projection", {"depth": 3})
    with pytest.raises(ArgumentError):
        iterate_directional(fmap, CellSet.full(2, 3), 0.0, 2.0)


def test_content_comparison_projection():
    fmap = from_builtin("projection", {"depth": 4})
    full = CellSet.full(2, 4)
    cert = check_hard_sard(fmap, full, identity_straightening(fmap, full))
    out = content_measure_comparison(fmap, full, cert)
    assert out["ratio"] == pytest.approx(1.0, rel=0.05) and out["within"]
    left = CellSet.from_cubes([CubeId(1, (0, 0)), CubeId(1, (0, 1))], 2, 4)
    cert = check_hard_sard(fmap, left, identity_straightening(fmap, left))
    out = content_measure_comparison(fmap, left, cert)
    assert out["content"] == pytest.approx(0.5, rel=0.05)
    assert out["ratio"] == pytest.approx(1.0, rel=0.05) and out["within"]


def test_content_comparison_needs_acceptance():
    fmap = from_builtin("projection", {"depth": 3})
    E = CellSet.full(2, 3)
    cert = check_hard_sard(fmap, E, identity_straightening(fmap, E)[:, ::-1])
    with pytest.raises(StateError):
        content_measure_comparison(fmap, E, cert)
