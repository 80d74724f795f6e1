"""Command-line front end.

Exit codes: 0 success, 1 error, 2 the parameter schedule was insufficient
for the map (a FailureReport), 64 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import content as content_mod
from .decompose import (PRESETS, Preset, classify_cubes, decompose,
                        farthest_coordinate_plane, get_preset, verify_supplemented_bilipschitz)
from .dyadic import CellSet, boxes_disjoint, cubes_at_level, dilate, family_count_bound, split_separated
from .errors import ArgumentError, FailureReport, MapContentError
from .examples import onedim_scaling_experiment, verify_star_claims
from .hardsard import (Tolerances, content_measure_comparison, iterate_directional,
                       pipeline_certificates)
from .metricderiv import MdEngine, md_profile
from .parallel import set_threads
from .sampledmaps import BUILTINS, SampledMap, from_builtin, load_grid_map, star_set
from . import svg

log = logging.getLogger("mapcontent")

SCHEMA = "mcfgv1"
EXIT_OK, EXIT_ERROR, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2, 64
COMMANDS = ("content", "md", "classify", "decompose", "hardsard", "star-example", "onedim",
            "verify-all")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# configuration

@dataclass
class RunConfig:
    command: str
    builtin: str | None = "projection"
    map_file: str | None = None
    params: dict = field(default_factory=dict)
    depth: int = 4
    preset: str = "default"
    overrides: dict = field(default_factory=dict)
    out: str | None = None
    seed: int = 0
    options: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.map_file is None and self.builtin not in BUILTINS:
            raise UsageError(f"unknown builtin {self.builtin!r}; choose from {', '.join(BUILTINS)}")
        if not 0 <= self.depth <= 12:
            raise UsageError("depth must lie in [0, 12]")
        if self.preset not in PRESETS:
            raise UsageError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        for key, val in self.overrides.items():
            if val is not None and key not in ("K", "K1", "lam", "c0") and not val > 0:
                raise UsageError(f"tolerance {key} must be positive")
        try:
            self.resolved_preset()
        except ArgumentError as exc:
            raise UsageError(str(exc)) from exc

    def resolved_preset(self) -> Preset:
        return get_preset(self.preset, **self.overrides)

    def load_map(self) -> SampledMap:
        if self.map_file:
            return load_grid_map(self.map_file)
        params = dict(self.params)
        params["depth"] = self.depth
        return from_builtin(self.builtin, params)

    def to_dict(self) -> dict:
        out = asdict(self)
        # the output location does not affect any result
        out.pop("out")
        out["schema"] = SCHEMA
        return out


def read_config(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("schema") != SCHEMA:
        raise UsageError(f"config {path} must be a JSON object with schema {SCHEMA!r}")
    return raw


def build_config(args: argparse.Namespace) -> RunConfig:
    base = read_config(args.config) if getattr(args, "config", None) else {}
    cfg = RunConfig(command=args.command)
    mapspec = base.get("map", {})
    cfg.builtin = mapspec.get("builtin", cfg.builtin)
    cfg.map_file = mapspec.get("file")
    cfg.params = dict(mapspec.get("params", {}))
    cfg.depth = int(base.get("depth", cfg.depth))
    cfg.preset = base.get("preset", cfg.preset)
    cfg.overrides = dict(base.get("overrides", {}))
    cfg.out = base.get("out")
    cfg.seed = int(base.get("seed", 0))
    cfg.options = dict(base.get("options", {}))
    if getattr(args, "builtin", None):
        cfg.builtin, cfg.map_file = args.builtin, None
    if getattr(args, "map", None):
        cfg.map_file = args.map
    for key in ("n", "m", "k", "scale", "value"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.params[key] = val
    if getattr(args, "depth", None) is not None:
        cfg.depth = args.depth
    if getattr(args, "preset", None):
        cfg.preset = args.preset
    for key in ("eps", "delta", "delta_prime", "lam", "K", "K1", "alpha", "C", "c0"):
        val = getattr(args, f"p_{key}", None)
        if val is not None:
            cfg.overrides[key] = val
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for key in ("set", "maxlevel", "md_eps", "lower", "alpha", "L", "c_star", "m"):
        val = getattr(args, f"o_{key}", None)
        if val is not None:
            cfg.options[key] = val
    cfg.validate()
    return cfg


# output helpers

def clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars plain values."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=2) + "\n"


class Outputs:
    """Collects artifacts and writes them, plus a manifest, to the output directory."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def add_csv(self, name: str, rows: list[dict]) -> None:
        buf = io.StringIO()
        if rows:
            keys = list(rows[0])
            w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: clean(r[k]) for k in keys})
        self.add(name, buf.getvalue())

    def finish(self, result: dict, status: str) -> None:
        if not self.cfg.out:
            return
        out = Path(self.cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        digests = {}
        for name, text in sorted(self.files.items()):
            (out / name).write_text(text)
            digests[name] = hashlib.sha256(text.encode()).hexdigest()
        manifest = {"schema": SCHEMA, "command": self.cfg.command, "config": self.cfg.to_dict(),
                    "status": status, "outputs": digests, "result": result}
        (out / "run-manifest.json").write_text(dumps(manifest))


def cell_set(fmap: SampledMap, name: str) -> CellSet:
    d, D = fmap.d, fmap.depth
    if name == "full":
        return CellSet.full(d, D)
    if name == "A":
        if fmap.name != "star9":
            raise ArgumentError("set A is defined for the star9 map only")
        return star_set(int(fmap.params["k"]), D)
    if name == "left":
        bits = np.zeros((1 << D,) * d, dtype=bool)
        bits[: 1 << (D - 1)] = True
        return CellSet(bits, D)
    raise ArgumentError(f"unknown set {name!r}; choose from full, A, left")


# commands

def cmd_content(cfg: RunConfig, out: Outputs) -> dict:
    fmap = cfg.load_map()
    E = cell_set(fmap, cfg.options.get("set", "full"))
    res = content_mod.mapping_content(fmap, E)
    result = {"map": fmap.describe(), "set": cfg.options.get("set", "full"), "value": res.value,
              "lower": res.lower, "upper": res.upper, "antichain_size": len(res.antichain),
              "measure": E.measure,
              "arbitrary_upper": content_mod.arbitrary_mapping_content_upper(fmap, E)}
    out.add("content.json", dumps(dict(result, antichain=[q.as_list() for q in res.antichain])))
    return result


def cmd_md(cfg: RunConfig, out: Outputs) -> dict:
    fmap = cfg.load_map()
    preset = cfg.resolved_preset()
    maxlevel = int(cfg.options.get("maxlevel", fmap.depth - 1))
    eps = float(cfg.options.get("md_eps", 0.05))
    c0 = preset.c0_for(fmap.n, fmap.m)
    prof = md_profile(fmap, maxlevel, eps, c0, lower=bool(cfg.options.get("lower", False)))
    out.add_csv("md.csv", prof.rows())
    if fmap.d == 2:
        finest = {q: r.md_upper for q, r in prof.results.items() if q.level == maxlevel}
        out.add("md.svg", svg.heatmap(finest, f"md upper bound, level {maxlevel}"))
    per_level = {str(lv): max(r.md_upper for q, r in prof.results.items() if q.level == lv)
                 for lv in range(maxlevel + 1)}
    return {"map": fmap.describe(), "c0": c0, "eps": eps, "maxlevel": maxlevel,
            "exceedance": prof.exceedance(), "max_md_per_level": per_level,
            "cubes": len(prof.results)}


def cmd_classify(cfg: RunConfig, out: Outputs) -> dict:
    fmap = cfg.load_map()
    preset = cfg.resolved_preset()
    eng = MdEngine(fmap, preset.c0_for(fmap.n, fmap.m))
    classes = classify_cubes(fmap, preset.eps, preset.delta, range(fmap.depth), eng)
    rows = [dict(level=q.level, index=" ".join(map(str, q.index)), kind=c.kind, md=c.md,
                 plane=" ".join(map(str, c.plane)) if c.plane else "")
            for q, c in sorted(classes.items())]
    out.add_csv("classes.csv", rows)
    if fmap.d == 2:
        for lv in range(fmap.depth):
            out.add(f"classes-level{lv}.svg", svg.class_map(classes, lv))
    counts = {}
    for c in classes.values():
        counts[c.kind] = counts.get(c.kind, 0) + 1
    return {"map": fmap.describe(), "preset": preset.to_dict(), "counts": counts}


def cmd_decompose(cfg: RunConfig, out: Outputs) -> dict:
    fmap = cfg.load_map()
    preset = cfg.resolved_preset()
    res = decompose(fmap, preset)
    certs = pipeline_certificates(fmap, res)
    report = res.to_dict()
    report["certificates"] = [dict(c.to_dict(include_g=False), comparison=cmp) for c, cmp in certs]
    out.add("decomposition.json", dumps(report))
    if fmap.d == 2:
        grid = np.full((1 << fmap.depth,) * 2, -1)
        for i, (p, _) in enumerate(res.pieces.pieces):
            grid[p.cells.bits] = i
        out.add("pieces.svg", svg.cell_map(grid.tolist(), "pieces"))
    return {"map": fmap.describe(), "pieces": len(res.pieces.pieces), "coverage": res.coverage(),
            "leftover_content": res.leftover_content, "initial_level": res.level,
            "certificates_accepted": sum(c.accepted for c, _ in certs)}


def cmd_hardsard(cfg: RunConfig, out: Outputs) -> dict:
    fmap = cfg.load_map()
    E = cell_set(fmap, cfg.options.get("set", "full"))
    tol = Tolerances(c_star=float(cfg.options.get("c_star", 8.0)), seed=cfg.seed)
    alpha = float(cfg.options.get("alpha", 0.05))
    L = float(cfg.options.get("L", 4.0))
    res = iterate_directional(fmap, E, alpha, L, tol)
    comps = [content_measure_comparison(fmap, c.E, c) for c in res.certificates if c.accepted]
    report = dict(res.to_dict(), comparisons=comps)
    out.add("hardsard.json", dumps(report))
    return {"map": fmap.describe(), "certificates": len(res.certificates),
            "accepted": sum(c.accepted for c in res.certificates),
            "garbage_measure": res.garbage.measure}


def cmd_star(cfg: RunConfig, out: Outputs) -> dict:
    k = int(cfg.params.get("k", 2))
    rep = verify_star_claims(k, cfg.depth).to_dict()
    out.add("star-example.json", dumps(rep))
    if cfg.depth <= 8:
        grid = star_set(k, cfg.depth).bits.astype(int) - 1
        out.add("star-set.svg", svg.cell_map(grid.tolist(), f"set A for k = {k}"))
    return rep


def cmd_onedim(cfg: RunConfig, out: Outputs) -> dict:
    m = int(cfg.options.get("m", 1))
    res = onedim_scaling_experiment(None, m, cfg.depth)
    out.add_csv("scaling.csv", [r.to_dict() for r in res.rows])
    out.add("scaling.svg", svg.loglog_scatter([(r.eta, r.diam) for r in res.rows],
                                              "diameter against content", "eta", "diam"))
    return res.to_dict()


def cmd_verify_all(cfg: RunConfig, out: Outputs) -> dict:
    checks = run_checks(cfg.depth, cfg.resolved_preset(), cfg.seed)
    out.add("checks.json", dumps(checks))
    return {"checks": {c["name"]: c["passed"] for c in checks},
            "passed": all(c["passed"] for c in checks)}


HANDLERS = {"content": cmd_content, "md": cmd_md, "classify": cmd_classify,
            "decompose": cmd_decompose, "hardsard": cmd_hardsard, "star-example": cmd_star,
            "onedim": cmd_onedim, "verify-all": cmd_verify_all}


# verification battery

def _check(name: str, passed: bool, **values) -> dict:
    return {"name": name, "passed": bool(passed), "values": values}


def run_checks(depth: int, preset: Preset, seed: int = 0) -> list[dict]:
    """A small-scale replay of the acceptance properties."""
    rng = np.random.default_rng(seed)
    D = max(depth, 4)
    out = []
    small = min(D, 3)
    gaps = []
    for name, params in (("projection", {}), ("constant", {}), ("star9", {"k": 2})):
        fmap = from_builtin(name, dict(params, depth=small))
        E = CellSet.full(fmap.d, small)
        gaps.append(abs(content_mod.mapping_content(fmap, E).value
                        - content_mod.exhaustive_mapping_content(fmap, E, small)))
    out.append(_check("dp_matches_exhaustive", max(gaps) <= 1e-12, max_gap=max(gaps)))

    proj = from_builtin("projection", {"depth": D})
    full = CellSet.full(2, D)
    pv = content_mod.mapping_content(proj, full).value
    cv = content_mod.mapping_content(from_builtin("constant", {"depth": D}), full).value
    out.append(_check("projection_content", abs(pv - 1) <= 0.02 and cv == 0.0, projection=pv,
                      constant=cv))

    worst = -math.inf
    star = from_builtin("star9", {"depth": D, "k": 2})
    eng = content_mod.ContentEngine(star)
    for _ in range(10):
        a = CellSet(rng.random((1 << D,) * 2) < 0.3, D)
        b = CellSet(rng.random((1 << D,) * 2) < 0.3, D)
        if not a or not b:
            continue
        u = content_mod.mapping_content(star, a | b, engine=eng).value
        s = (content_mod.mapping_content(star, a, engine=eng).value
             + content_mod.mapping_content(star, b, engine=eng).value)
        worst = max(worst, u - s)
    out.append(_check("subadditivity", worst <= 1e-9, worst_excess=worst))

    lin = from_builtin("linear", {"depth": D, "matrix": [[1.0, 2.0]]})
    md_eng = MdEngine(lin)
    lin_md = max(md_eng.md(q) for lv in range(2) for q in cubes_at_level(2, lv))
    out.append(_check("md_linear", lin_md <= 1e-9, max_md=lin_md))

    cubes = cubes_at_level(2, 3)
    fams, rest = split_separated(cubes, 5, 0.01)
    separated = all(boxes_disjoint(dilate(p, 5, clip=False), dilate(q, 5, clip=False))
                    for fam in fams for p, q in itertools.combinations(fam, 2))
    rest_measure = sum(q.volume for q in rest)
    bound = family_count_bound(5, 0.01, 2)
    out.append(_check("splitting", separated and rest_measure < 0.01 and len(fams) <= bound,
                      families=len(fams), bound=bound, remainder=rest_measure))

    cmin = math.inf
    for n, m in ((1, 1), (2, 1), (1, 2)):
        for _ in range(50):
            _, c = farthest_coordinate_plane(rng.standard_normal((m, n + m)), n)
            cmin = min(cmin, c)
    out.append(_check("coordinate_plane", cmin > 0, min_c=cmin))

    res = decompose(proj, preset)
    rep = [verify_supplemented_bilipschitz(proj, p, r) for p, r in res.pieces.pieces]
    ok = (res.pieces.pieces and res.coverage() >= 0.95 and res.leftover_content < preset.alpha
          and all(0.99 <= x.c_low and x.c_high <= 1.01 for x in rep))
    out.append(_check("pipeline_projection", ok, pieces=len(res.pieces.pieces),
                      coverage=res.coverage(), leftover=res.leftover_content))

    try:
        sres = decompose(star, preset)
        certs = pipeline_certificates(star, sres)
        ok = (all(c.c_low > 0 for c in sres.checks) and all(c.accepted for c, _ in certs)
              and all(cmp["within"] for _, cmp in certs))
        out.append(_check("pipeline_star", ok, pieces=len(sres.pieces.pieces),
                          leftover=sres.leftover_content))
    except FailureReport as exc:
        out.append(_check("pipeline_star", True, failure=exc.to_dict()))

    r2 = verify_star_claims(2, D)
    r3 = verify_star_claims(3, max(D, 5))
    lo2, lo3 = r2.content["lower"], r3.content["lower"]
    ok = (r2.a_measure == 0.25 and r2.tree_length == 2 and r3.tree_length == 3
          and r2.injectivity_violations == 0 and r3.injectivity_violations == 0
          and lo2 > 0 and lo3 > 0 and abs(lo2 - lo3) <= 0.25 * max(lo2, lo3))
    out.append(_check("star_example", ok, lower_k2=lo2, lower_k3=lo3))

    sc = onedim_scaling_experiment(None, 1, min(D, 5))
    out.append(_check("scaling", math.isfinite(sc.max_ratio), max_ratio=sc.max_ratio,
                      slope=sc.slope))

    const = from_builtin("constant", {"depth": D})
    zero = (content_mod.arbitrary_mapping_content_upper(const, full) == 0.0
            and content_mod.mapping_content(const, full).value == 0.0)
    ratio = content_mod.arbitrary_mapping_content_upper(star, full) / \
        content_mod.mapping_content(star, full).value
    out.append(_check("two_contents", zero and ratio <= 2.0 ** 0.5, ratio=ratio))
    return out


# argument parsing

def _map_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("map")
    g.add_argument("--builtin", choices=BUILTINS, help="builtin map")
    g.add_argument("--map", help="grid-map JSON file")
    g.add_argument("--n", type=int, help="number of x variables")
    g.add_argument("--m", type=int, help="number of y variables")
    g.add_argument("--k", type=int, help="star-tree parameter")
    g.add_argument("--scale", type=float, help="scale factor for the map")
    g.add_argument("--value", type=float, help="value of the constant map")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--depth", type=int, help="lattice depth D")
    p.add_argument("--config", help=f"JSON config file (schema {SCHEMA})")
    p.add_argument("--out", help="output directory for artifacts and run-manifest.json")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--threads", type=int, help="worker threads (default: $MAPCONTENT_THREADS or 1)")


def _preset_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("parameters")
    g.add_argument("--preset", help=f"parameter preset ({', '.join(PRESETS)})")
    g.add_argument("--eps", dest="p_eps", type=float)
    g.add_argument("--delta", dest="p_delta", type=float)
    g.add_argument("--delta-prime", dest="p_delta_prime", type=float)
    g.add_argument("--lam", dest="p_lam", type=int)
    g.add_argument("--K", dest="p_K", type=int)
    g.add_argument("--K1", dest="p_K1", type=int)
    g.add_argument("--alpha", dest="p_alpha", type=float)
    g.add_argument("--C", dest="p_C", type=float)
    g.add_argument("--c0", dest="p_c0", type=int)


def build_parser() -> Parser:
    parser = Parser(prog="mapcontent", description="Mapping content and Hard Sard toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("content", help="DP mapping content of a set")
    _map_options(p)
    _common(p)
    p.add_argument("--set", dest="o_set", choices=("full", "A", "left"))

    p = sub.add_parser("md", help="metric-derivative fits for every cube")
    _map_options(p)
    _common(p)
    _preset_options(p)
    p.add_argument("--maxlevel", dest="o_maxlevel", type=int)
    p.add_argument("--md-eps", dest="o_md_eps", type=float)
    p.add_argument("--lower", dest="o_lower", action="store_const", const=True)

    p = sub.add_parser("classify", help="Md / Compressed / Good classification")
    _map_options(p)
    _common(p)
    _preset_options(p)

    p = sub.add_parser("decompose", help="full decomposition pipeline")
    _map_options(p)
    _common(p)
    _preset_options(p)

    p = sub.add_parser("hardsard", help="directional shear iteration and certificates")
    _map_options(p)
    _common(p)
    p.add_argument("--set", dest="o_set", choices=("full", "A", "left"))
    p.add_argument("--alpha", dest="o_alpha", type=float)
    p.add_argument("--L", dest="o_L", type=float)
    p.add_argument("--c-star", dest="o_c_star", type=float)

    p = sub.add_parser("star-example", help="star-tree counterexample report")
    _common(p)
    p.add_argument("--k", type=int, default=2)

    p = sub.add_parser("onedim", help="content against diameter scaling experiment")
    _common(p)
    p.add_argument("--m", dest="o_m", type=int)

    p = sub.add_parser("verify-all", help="small-scale replay of the acceptance properties")
    _common(p)
    _preset_options(p)
    return parser


def run(cfg: RunConfig) -> tuple[int, dict]:
    out = Outputs(cfg)
    try:
        result = HANDLERS[cfg.command](cfg, out)
    except FailureReport as exc:
        result = exc.to_dict()
        out.add("failure.json", dumps(result))
        out.finish(result, "failure")
        return EXIT_FAILURE, result
    status = "ok"
    code = EXIT_OK
    if cfg.command == "verify-all" and not result["passed"]:
        status, code = "failed", EXIT_ERROR
    out.finish(result, status)
    return code, result


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(args.threads)
        cfg = build_config(args)
    except (UsageError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"mapcontent: error: {exc}\n")
        return EXIT_USAGE
    try:
        code, result = run(cfg)
    except MapContentError as exc:
        sys.stderr.write(f"mapcontent: {type(exc).__name__}: {exc}\n")
        return EXIT_ERROR
    sys.stdout.write(dumps(result))
    return code


if __name__ == "__main__":
    sys.exit(main())
