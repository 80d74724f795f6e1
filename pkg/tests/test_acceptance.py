"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import itertools
import json
import math
import time

import numpy as np
import pytest

from mapcontent import cli
from mapcontent.content import (ContentEngine, arbitrary_mapping_content_upper,
                                exhaustive_mapping_content, mapping_content)
from mapcontent.decompose import (classify_cube, decompose, farthest_coordinate_plane, get_preset,
                                  verify_supplemented_bilipschitz)
from mapcontent.dyadic import (CellSet, boxes_disjoint, cubes_at_level, dilate, family_count_bound,
                               split_separated)
from mapcontent.errors import FailureReport
from mapcontent.examples import default_corpus, onedim_scaling_experiment, verify_star_claims
from mapcontent.hardsard import pipeline_certificates
from mapcontent.metricderiv import MdEngine, md_profile, norm_bound_check
from mapcontent.metricspaces import FiniteMetric
from mapcontent.parallel import set_threads
from mapcontent.sampledmaps import BUILTINS, SampledMap, from_builtin, lipschitz_estimate


@pytest.fixture
def report(capsys):
    def emit(number, title, passed, **values):
        detail = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in values.items())
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'} {title} {detail}")
        assert passed
    return emit


def random_finite_map(seed, depth=3):
    rng = np.random.default_rng(seed)
    pts = rng.random((6, 2))
    mat = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    vals = rng.integers(0, 6, ((1 << depth) + 1) ** 2).astype(float)
    fm = SampledMap(1, 1, depth, FiniteMetric(mat), vals, 0.0, name=f"random{seed}")
    fm.lipschitz = lipschitz_estimate(fm)
    return fm


def test_01_dp_oracle_equivalence(report):
    start = time.perf_counter()
    maps = [from_builtin(name, dict(params, depth=3))
            for name, params in (("projection", {}), ("constant", {}), ("star9", {"k": 2}))]
    maps += [random_finite_map(seed) for seed in range(20)]
    gap = 0.0
    for fmap in maps:
        E = CellSet.full(2, 3)
        gap = max(gap, abs(mapping_content(fmap, E).value - exhaustive_mapping_content(fmap, E, 3)))
    elapsed = time.perf_counter() - start
    report(1, "dp-oracle", gap <= 1e-12 and elapsed < 10, maps=len(maps), max_gap=gap,
           seconds=elapsed)


def test_02_projection_content(report):
    full = CellSet.full(2, 4)
    pv = mapping_content(from_builtin("projection", {"depth": 4}), full).value
    cv = mapping_content(from_builtin("constant", {"depth": 4}), full).value
    report(2, "projection-content", abs(pv - 1) <= 0.02 and cv == 0.0, projection=pv, constant=cv)


def test_03_subadditivity_domination(report):
    D = 4
    rng = np.random.default_rng(3)
    star = from_builtin("star9", {"k": 2, "depth": D})
    proj = from_builtin("projection", {"depth": D})
    s_eng, p_eng = ContentEngine(star), ContentEngine(proj)
    # one constant for every map: the largest cost-to-volume ratio of the projection's cubes
    C = max(p_eng.cost(q).upper / q.volume for lv in range(D + 1) for q in cubes_at_level(2, lv))
    excess, dom = -math.inf, 0.0
    pairs = 0
    while pairs < 100:
        a = CellSet(rng.random((1 << D,) * 2) < rng.random(), D)
        b = CellSet(rng.random((1 << D,) * 2) < rng.random(), D)
        if not a or not b:
            continue
        pairs += 1
        ca = mapping_content(star, a, engine=s_eng).value
        cb = mapping_content(star, b, engine=s_eng).value
        excess = max(excess, mapping_content(star, a | b, engine=s_eng).value - ca - cb)
        for fmap, eng, val in ((star, s_eng, ca), (proj, p_eng, None)):
            v = val if val is not None else mapping_content(fmap, a, engine=eng).value
            dom = max(dom, v / (C * fmap.lipschitz * a.measure))
    report(3, "subadditivity-domination", excess <= 1e-9 and dom <= 1 + 1e-12, pairs=pairs,
           worst_excess=excess, C=C, worst_domination_ratio=dom)


def test_04_md_certification(report):
    lin_worst = 0.0
    for matrix in ([[1.0, 2.0]], [[0.6, -0.8]], [[1.0, 0.0], [0.5, 0.5]]):
        fmap = from_builtin("linear", {"depth": 4, "matrix": matrix})
        prof = md_profile(fmap, 2)
        lin_worst = max(lin_worst, max(r.md_upper for r in prof.results.values()))
    star = from_builtin("star9", {"k": 2, "depth": 4})
    prof = md_profile(star, 2, c0=3, lower=True)
    order_ok = all(r.md_lower <= r.md_upper + 1e-12 for r in prof.results.values())
    star5 = from_builtin("star9", {"k": 2, "depth": 5})
    eng = MdEngine(star5, 3)
    good = 0
    holds = True
    for lv in range(1, 5):
        for q in cubes_at_level(2, lv):
            res = eng.fit(q)
            if classify_cube(res, 0.05, 0.2, 1, 2).good:
                good += 1
                holds &= norm_bound_check(star5, res, 0.05).holds
    report(4, "md-certification", lin_worst <= 1e-9 and order_ok and holds and good > 0,
           linear_max_md=lin_worst, lower_le_upper=order_ok, good_cubes=good, norm_bound=holds)


def test_05_quantitative_differentiation(report):
    ex = {}
    for D in (5, 6):
        ex[D] = md_profile(from_builtin("star9", {"k": 3, "depth": D}), 4).exceedance(0.05)
    ok = all(math.isfinite(v) for v in ex.values()) and ex[6] <= ex[5]
    report(5, "quantitative-differentiation", ok, exceedance_D5=ex[5], exceedance_D6=ex[6])


def test_06_splitting(report):
    start = time.perf_counter()
    cubes = cubes_at_level(2, 3)
    fams, rest = split_separated(cubes, 5, 0.01)
    separated = all(boxes_disjoint(dilate(p, 5, clip=False), dilate(q, 5, clip=False))
                    for fam in fams for p, q in itertools.combinations(fam, 2))
    rest_measure = sum(q.volume for q in rest)
    bound = family_count_bound(5, 0.01, 2)
    elapsed = time.perf_counter() - start
    placed = sorted([q for f in fams for q in f] + list(rest)) == sorted(cubes)
    ok = separated and placed and rest_measure < 0.01 and len(fams) <= bound and elapsed < 1
    report(6, "splitting", ok, families=len(fams), k0=bound, remainder=rest_measure,
           seconds=elapsed)


def test_07_coordinate_plane(report):
    rng = np.random.default_rng(7)
    cmin = {}
    for n, m in ((1, 1), (2, 1), (1, 2)):
        cmin[(n, m)] = min(farthest_coordinate_plane(rng.standard_normal((m, n + m)), n)[1]
                           for _ in range(1000))
    report(7, "coordinate-plane", all(c > 0 for c in cmin.values()),
           **{f"min_c_{n}{m}": c for (n, m), c in cmin.items()})


def test_08_pipeline_projection(report):
    preset = get_preset("default")
    fmap = from_builtin("projection", {"depth": 5})
    res = decompose(fmap, preset)
    reps = [verify_supplemented_bilipschitz(fmap, p, r) for p, r in res.pieces.pieces]
    lo = min(r.c_low for r in reps)
    hi = max(r.c_high for r in reps)
    ok = (len(reps) >= 1 and res.coverage() >= 0.95 and res.leftover_content < preset.alpha
          and 0.99 <= lo and hi <= 1.01)
    report(8, "pipeline-projection", ok, pieces=len(reps), coverage=res.coverage(),
           leftover=res.leftover_content, c_low=lo, c_high=hi)


def test_09_pipeline_star(report):
    start = time.perf_counter()
    preset = get_preset("default")
    fmap = from_builtin("star9", {"k": 2, "depth": 5})
    try:
        res = decompose(fmap, preset)
    except FailureReport as exc:
        info = exc.to_dict()
        elapsed = time.perf_counter() - start
        structured = bool(info.get("stage")) and bool(info.get("message"))
        report(9, "pipeline-star", structured and elapsed < 300, outcome="failure-report",
               stage=info.get("stage"), seconds=elapsed)
        return
    certs = pipeline_certificates(fmap, res)
    elapsed = time.perf_counter() - start
    ok = (res.leftover_content < preset.alpha
          and all(c.c_low > 0 for c in res.checks)
          and all(cert.accepted for cert, _ in certs)
          and all(cmp["within"] for _, cmp in certs) and elapsed < 300)
    report(9, "pipeline-star", ok, outcome="decomposed", pieces=len(certs),
           leftover=res.leftover_content, seconds=elapsed)


def test_10_star_harness(report):
    r2 = verify_star_claims(2, 5)
    r3 = verify_star_claims(3, 6)
    lo2, lo3 = r2.content["lower"], r3.content["lower"]
    ok = (r2.a_measure == 0.25 and r3.a_measure == 0.25
          and r2.tree_length == 2 and r3.tree_length == 3
          and r2.injectivity_violations == 0 and r3.injectivity_violations == 0
          and lo2 > 0 and lo3 > 0 and abs(lo2 - lo3) <= 0.25 * max(lo2, lo3))
    report(10, "star-harness", ok, A=r2.a_measure, length_k2=r2.tree_length,
           length_k3=r3.tree_length, lower_k2=lo2, lower_k3=lo3)


def test_11_scaling(report):
    corpus = [{"name": "projection", "params": {"scale": t}} for t in (1.0, 0.5, 0.25, 0.125)]
    corpus.append({"name": "constant", "params": {}})
    res = onedim_scaling_experiment(corpus, 1, 5)
    C = res.max_ratio
    ok = math.isfinite(C) and all(r.diam <= C * r.eta ** (1 / 3) + 1e-12 for r in res.rows)
    report(11, "scaling", ok, C=C, slope=res.slope)


def test_12_two_contents(report):
    D = 4
    full = CellSet.full(2, D)
    maps = [from_builtin(name, {"k": 2, "depth": D} if name == "star9" else {"depth": D})
            for name in BUILTINS]
    for entry in default_corpus():
        params = dict(entry["params"], depth=D)
        maps.append(from_builtin(entry["name"], params))
    worst = 0.0
    together = True
    for fmap in maps:
        arb = arbitrary_mapping_content_upper(fmap, full)
        dp = mapping_content(fmap, full).value
        if dp == 0.0 or arb == 0.0:
            together &= dp == arb == 0.0
        else:
            worst = max(worst, arb / dp)
    const = from_builtin("constant", {"depth": D})
    zero = arbitrary_mapping_content_upper(const, full) == mapping_content(const, full).value == 0.0
    report(12, "two-contents", together and zero and worst <= math.sqrt(2), maps=len(maps),
           worst_ratio=worst, bound=math.sqrt(2))


def test_13_determinism(report, tmp_path, capsys):
    manifests = []
    try:
        for threads in ("1", "8"):
            out = tmp_path / f"threads{threads}"
            code = cli.main(["verify-all", "--preset", "default", "--depth", "5", "--seed", "0",
                             "--threads", threads, "--out", str(out)])
            manifests.append((code, (out / "run-manifest.json").read_bytes(),
                              (out / "checks.json").read_bytes()))
    finally:
        set_threads(1)
    capsys.readouterr()
    same = manifests[0][1:] == manifests[1][1:]
    passed = json.loads(manifests[0][1])["status"] == "ok"
    report(13, "determinism", same and passed and manifests[0][0] == manifests[1][0] == 0,
           identical=same, verify_all_ok=passed)
