"""JSON scenario files.

A scenario bundles a problem instance with grid, Monte Carlo and output
settings::

    {
      "name": "section5",
      "geometry": {"edges": 3, "length": 8.0},
      "edges": [{"family": "sin_quadratic", "sigma": 1.0, "kappa": 2.0,
                 "theta": 0.5, "gamma": 0.5, "lambda": 0.3, "rho": 1.0}, ...],
      "junction": {"mode": "quadratic", "floor": 0.1},
      "terminal": {"family": "tanh", "value": 0.5, "slopes": [...], "scale": 1.0},
      "horizon": {"T": 1.0, "t0": 0.0},
      "grid": {"n_time": 1000, "n_space": 200},
      "mc": {"n_paths": 100000, "dt": 0.001, "seed": 7, "start": {"edge": 1, "x": 0.5}},
      "output": {"dir": "out/section5", "time_stride": 10}
    }

Unknown keys are rejected and every error carries the line it refers to.
"""

from __future__ import annotations

import json
import json.decoder
import json.scanner
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .pde import SpaceTimeGrid
from .problem import (ControlProblem, EdgeDynamics, EdgePoint, Horizon, JunctionCost, JunctionGeometry,
                      TerminalCondition)

SHIPPED = ("zero", "reflected_bm_oracle", "symmetric_heat", "section5")

_TOP_KEYS = {"name", "description", "geometry", "edges", "junction", "terminal", "horizon", "ellipticity",
             "grid", "mc", "output"}
_REQUIRED_TOP = ("geometry", "edges", "junction", "terminal", "horizon")
_EDGE_KEYS = {
    "constant": {"family", "sigma", "kappa", "drift", "cost"},
    "sin_quadratic": {"family", "sigma", "kappa", "theta", "gamma", "lambda", "rho"},
}


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<scenario>"):
        self.message = message
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


class _Obj(dict):
    """Dict that remembers where it sits in the source text."""

    start = 0
    end = 0


def _located_decoder(text: str):
    dec = json.JSONDecoder()

    def parse_object(s_and_end, *args, **kwargs):
        start = s_and_end[1] - 1
        obj, end = json.decoder.JSONObject(s_and_end, *args, **kwargs)
        node = _Obj(obj)
        node.start, node.end = start, end
        return node, end

    dec.parse_object = parse_object
    dec.scan_once = json.scanner.py_make_scanner(dec)
    return dec


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 10000
    dt: float = 1e-3
    seed: int | None = None
    start: EdgePoint = EdgePoint(1, 0.0)
    tau: float | None = None


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    time_stride: int = 1


@dataclass(frozen=True)
class Scenario:
    name: str
    problem: ControlProblem
    grid: SpaceTimeGrid
    mc: McConfig
    output: OutputConfig
    description: str = ""

    def with_overrides(self, *, n_paths=None, dt=None, seed=None, n_space=None, n_time=None, length=None,
                       out_dir=None, time_stride=None) -> "Scenario":
        sc = self
        if length is not None:
            p = sc.problem
            sc = replace(sc, problem=replace(p, geometry=JunctionGeometry(p.edge_count, length)))
        if n_space is not None or n_time is not None:
            sc = replace(sc, grid=SpaceTimeGrid(n_time if n_time is not None else sc.grid.n_time,
                                                n_space if n_space is not None else sc.grid.n_space))
        mc = sc.mc
        if n_paths is not None:
            mc = replace(mc, n_paths=n_paths)
        if dt is not None:
            mc = replace(mc, dt=dt)
        if seed is not None:
            mc = replace(mc, seed=seed)
        out = sc.output
        if out_dir is not None:
            out = replace(out, dir=str(out_dir))
        if time_stride is not None:
            out = replace(out, time_stride=time_stride)
        return replace(sc, mc=mc, output=out)


class _Reader:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def line_at(self, offset: int) -> int:
        return self.text.count("\n", 0, max(offset, 0)) + 1

    def key_line(self, obj, key: str) -> int | None:
        if not isinstance(obj, _Obj):
            return None
        m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(self.text, obj.start, obj.end)
        return self.line_at(m.start() if m else obj.start)

    def fail(self, message: str, obj=None, key: str | None = None):
        line = None
        if obj is not None:
            line = self.key_line(obj, key) if key is not None else self.line_at(obj.start)
        raise ScenarioError(message, line, self.source)

    def section(self, parent, key: str, allowed: set[str], required=(), where: str | None = None):
        obj = parent[key] if key in parent else None
        where = where or key
        if not isinstance(obj, dict):
            self.fail(f"'{where}' must be an object", parent, key if key in parent else None)
        self.keys(obj, allowed, required, where)
        return obj

    def keys(self, obj, allowed: set[str], required, where: str):
        for k in obj:
            if k not in allowed:
                self.fail(f"unknown key '{k}' in {where} (allowed: {', '.join(sorted(allowed))})", obj, k)
        for k in required:
            if k not in obj:
                self.fail(f"missing key '{k}' in {where}", obj)

    def number(self, obj, key: str, where: str, default=None, integer=False):
        if key not in obj:
            if default is None:
                self.fail(f"missing key '{key}' in {where}", obj)
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            self.fail(f"'{where}.{key}' must be {'an integer' if integer else 'a number'}, got {v!r}", obj, key)
        return int(v) if integer else float(v)

    def numbers(self, obj, key: str, where: str):
        v = obj.get(key, [])
        if not isinstance(v, list) or any(isinstance(a, bool) or not isinstance(a, (int, float)) for a in v):
            self.fail(f"'{where}.{key}' must be a list of numbers", obj, key)
        return tuple(float(a) for a in v)

    def string(self, obj, key: str, where: str, default=None):
        if key not in obj:
            if default is None:
                self.fail(f"missing key '{key}' in {where}", obj)
            return default
        v = obj[key]
        if not isinstance(v, str):
            self.fail(f"'{where}.{key}' must be a string", obj, key)
        return v


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        root = _located_decoder(text).decode(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON: {exc.msg} (column {exc.colno})", exc.lineno, source) from None
    rd = _Reader(text, source)
    if not isinstance(root, dict):
        raise ScenarioError("top level must be an object", 1, source)
    rd.keys(root, _TOP_KEYS, _REQUIRED_TOP, "scenario")
    name = rd.string(root, "name", "scenario", default=Path(source).stem)
    description = rd.string(root, "description", "scenario", default="")

    def build(factory, obj, key=None):
        try:
            return factory()
        except ScenarioError:
            raise
        except ValueError as exc:  # ProblemError and grid errors
            rd.fail(str(exc), obj, key)

    geo = rd.section(root, "geometry", {"edges", "length"}, ("edges", "length"))
    geometry = build(lambda: JunctionGeometry(rd.number(geo, "edges", "geometry", integer=True),
                                              rd.number(geo, "length", "geometry")), geo)

    edges_raw = root["edges"]
    if not isinstance(edges_raw, list) or not edges_raw:
        rd.fail("'edges' must be a non-empty list", root, "edges")
    edges = []
    for n, e in enumerate(edges_raw, start=1):
        where = f"edges[{n}]"
        if not isinstance(e, dict):
            rd.fail(f"{where} must be an object", root, "edges")
        fam = rd.string(e, "family", where)
        if fam not in _EDGE_KEYS:
            rd.fail(f"unknown edge family '{fam}' in {where}", e, "family")
        rd.keys(e, _EDGE_KEYS[fam], ("family", "sigma", "kappa"), where)
        kw = {k: rd.number(e, k, where, default=0.0) for k in _EDGE_KEYS[fam] - {"family", "lambda"}}
        if fam == "sin_quadratic":
            kw["lam"] = rd.number(e, "lambda", where, default=0.0)
            kw["theta"] = rd.number(e, "theta", where)
        kw["sigma"] = rd.number(e, "sigma", where)
        kw["kappa"] = rd.number(e, "kappa", where)
        edges.append(build(lambda: EdgeDynamics(family=fam, **kw), e))

    jn = rd.section(root, "junction", {"mode", "floor", "quad_weights"}, ("mode", "floor"))
    mode = rd.string(jn, "mode", "junction")
    weights = None
    if mode == "quadratic":
        weights = rd.numbers(jn, "quad_weights", "junction") if "quad_weights" in jn else \
            tuple(float(e.sigma_at(0.0)) ** 2 for e in edges)
    elif "quad_weights" in jn:
        rd.fail("quad_weights only apply in quadratic mode", jn, "quad_weights")
    junction = build(lambda: JunctionCost(rd.number(jn, "floor", "junction"), mode, weights), jn)
    build(lambda: junction.check_size(geometry.edge_count), jn)

    tm = rd.section(root, "terminal", {"family", "value", "slopes", "scale", "amplitudes"}, ("family",))
    terminal = build(lambda: TerminalCondition(
        rd.string(tm, "family", "terminal"), rd.number(tm, "value", "terminal", default=0.0),
        rd.numbers(tm, "slopes", "terminal"), rd.number(tm, "scale", "terminal", default=1.0),
        rd.numbers(tm, "amplitudes", "terminal")), tm)

    hz = rd.section(root, "horizon", {"T", "t0"}, ("T",))
    horizon = build(lambda: Horizon(rd.number(hz, "T", "horizon"), rd.number(hz, "t0", "horizon", default=0.0)), hz)

    problem = build(lambda: ControlProblem(
        geometry, tuple(edges), junction, terminal, horizon,
        ellipticity=rd.number(root, "ellipticity", "scenario", default=0.05), name=name), root)

    grid = SpaceTimeGrid(200, 100)
    if "grid" in root:
        gr = rd.section(root, "grid", {"n_time", "n_space"}, ("n_time", "n_space"))
        grid = build(lambda: SpaceTimeGrid(rd.number(gr, "n_time", "grid", integer=True),
                                           rd.number(gr, "n_space", "grid", integer=True)), gr)

    mc = McConfig()
    if "mc" in root:
        m = rd.section(root, "mc", {"n_paths", "dt", "seed", "start", "tau"})
        seed = rd.number(m, "seed", "mc", integer=True) if "seed" in m else None
        if seed is not None and seed < 0:
            rd.fail("'mc.seed' must be >= 0", m, "seed")
        start = mc.start
        if "start" in m:
            st = rd.section(m, "start", {"edge", "x"}, ("edge", "x"), where="mc.start")
            start = build(lambda: EdgePoint(rd.number(st, "edge", "mc.start", integer=True),
                                            rd.number(st, "x", "mc.start")), st)
            if start.edge > geometry.edge_count:
                rd.fail(f"start edge {start.edge} exceeds the {geometry.edge_count} edges", st, "edge")
        mc = McConfig(rd.number(m, "n_paths", "mc", default=mc.n_paths, integer=True),
                      rd.number(m, "dt", "mc", default=mc.dt), seed, start,
                      rd.number(m, "tau", "mc") if "tau" in m else None)
        if mc.n_paths < 1 or not mc.dt > 0:
            rd.fail("'mc' needs n_paths >= 1 and dt > 0", m)

    out = OutputConfig(dir=str(Path("out") / name))
    if "output" in root:
        o = rd.section(root, "output", {"dir", "time_stride"})
        out = OutputConfig(rd.string(o, "dir", "output", default=out.dir),
                           rd.number(o, "time_stride", "output", default=1, integer=True))
        if out.time_stride < 1:
            rd.fail("'output.time_stride' must be >= 1", o, "time_stride")

    return Scenario(name, problem, grid, mc, out, description)


def load_scenario(name_or_path: str | Path) -> Scenario:
    """Load a scenario from a file path, or one of the shipped scenarios by name."""
    path = Path(name_or_path)
    if path.is_file():
        return parse_scenario(path.read_text(), str(path))
    if str(name_or_path) in SHIPPED:
        res = resources.files(__package__) / "scenarios" / f"{name_or_path}.json"
        return parse_scenario(res.read_text(), f"{name_or_path}.json")
    raise ScenarioError(f"no such scenario file, and not one of the shipped scenarios {', '.join(SHIPPED)}",
                        source=str(name_or_path))
