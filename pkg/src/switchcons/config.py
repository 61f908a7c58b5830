"""Experiment configuration: a single TOML file holding the agent model,
gains, graph family, switching schedule and initial conditions.

Matrices are nested arrays (row-major). Graph edges and schedule modes are
1-based in the file, matching the usual agent/mode numbering; the library
API is 0-based.

Example::

    [model]
    A = [[-1.5, 2.0], [-1.28, 1.7]]
    B = [[1.0], [2.0]]

    [gains]
    K = [[0.1333, -1.9167]]
    gamma = [2.5, 1.5]

    [[graphs.modes]]
    name = "G1"
    m = 4
    edges = [[1, 2, 0.1892], [2, 3, 0.7206], [3, 4, 1.1249]]

    [schedule]
    seed = 0
    dwell_low = 0.5
    dwell_high = 1.0
    horizon = 30.0

    [initial]
    w0 = [[6.0, -8.0], [-12.0, 6.0], [-17.0, 22.0], [18.0, -3.0]]
    eta = "scaled"
    eta_scale = 0.5
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .netgraph import DEFAULT_ALPHA_FLOOR, Digraph, laplacian_of
from .switchsim import GraphFamily, Schedule, generate_schedule
from .synth import AgentModel

ENGINES = ("modal", "ode", "both")
ETA_RULES = ("zero", "scaled", "explicit")
DESIGNS = ("uniform", "fixed")

Matrix = list  # list of row lists of floats


def _matrix(value, where, rows=None, cols=None) -> Matrix:
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ConfigError("must be a nonempty array of row arrays", where)
    try:
        mat = [[float(x) for x in row] for row in value]
    except (TypeError, ValueError):
        raise ConfigError("entries must be numbers", where) from None
    width = len(mat[0])
    if width == 0 or any(len(r) != width for r in mat):
        raise ConfigError("rows must be nonempty and of equal length", where)
    if rows is not None and len(mat) != rows:
        raise ConfigError(f"expected {rows} rows, got {len(mat)}", where)
    if cols is not None and width != cols:
        raise ConfigError(f"expected {cols} columns, got {width}", where)
    return mat


def _opt_matrix(d, key, where, **kw):
    return None if d.get(key) is None else _matrix(d[key], f"{where}.{key}", **kw)


def _number(d, key, where, default=None, positive=False):
    if key not in d:
        if default is None:
            raise ConfigError("is required", f"{where}.{key}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("must be a number", f"{where}.{key}")
    v = float(v)
    if positive and not v > 0:
        raise ConfigError("must be positive", f"{where}.{key}")
    return v


def _table(d, key):
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError("must be a table", key)
    return v


@dataclass
class ModelSection:
    A: Matrix
    B: Matrix
    C: Optional[Matrix] = None
    Q: Optional[Matrix] = None


@dataclass
class GainsSection:
    K: Optional[Matrix] = None
    H: Optional[Matrix] = None
    gamma: Optional[list] = None
    design: str = "uniform"
    margin: float = 0.25
    strict_jordan: bool = True


@dataclass
class GraphMode:
    m: int
    name: str = ""
    directed: bool = False
    edges: Optional[list] = None
    weights: Optional[Matrix] = None


@dataclass
class ScheduleSection:
    horizon: float
    seed: int = 0
    dwell_low: Optional[float] = None
    dwell_high: Optional[float] = None
    dwell_floor: Optional[float] = None
    switch_times: Optional[list] = None
    modes: Optional[list] = None


@dataclass
class InitialSection:
    w0: Matrix
    eta: str = "zero"
    eta_scale: float = 0.5
    eta0: Optional[Matrix] = None
    wtilde0: Optional[Matrix] = None


@dataclass
class RunSection:
    engine: str = "ode"
    step: Optional[float] = None
    samples_per_interval: int = 10
    out: str = "out"


@dataclass
class ExperimentConfig:
    model: ModelSection
    gains: GainsSection
    graphs: list
    schedule: ScheduleSection
    initial: InitialSection
    run: RunSection = field(default_factory=RunSection)
    alpha_floor: float = DEFAULT_ALPHA_FLOOR

    @property
    def n(self) -> int:
        return len(self.model.A)

    @property
    def m(self) -> int:
        return self.graphs[0].m

    def to_dict(self) -> dict:
        def clean(obj):
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items() if v is not None}
            if isinstance(obj, list):
                return [clean(v) for v in obj]
            return obj

        d = asdict(self)
        graphs = d.pop("graphs")
        floor = d.pop("alpha_floor")
        d["graphs"] = {"alpha_floor": floor, "modes": graphs}
        return clean(d)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, schedule=replace(self.schedule, seed=int(seed)))

    # -- runtime objects ------------------------------------------------
    def build_model(self) -> AgentModel:
        m = self.model
        return AgentModel(np.array(m.A), np.array(m.B), None if m.C is None else np.array(m.C))

    def build_family(self) -> GraphFamily:
        laps = []
        for k, g in enumerate(self.graphs):
            name = g.name or f"mode{k + 1}"
            try:
                if g.weights is not None:
                    dg = Digraph(np.array(g.weights), alpha_floor=self.alpha_floor, name=name)
                else:
                    dg = Digraph.from_edges(g.m, g.edges, undirected=not g.directed,
                                            alpha_floor=self.alpha_floor, name=name, one_based=True)
            except ValueError as exc:
                raise ConfigError(str(exc), f"graphs.modes[{k}]") from None
            laps.append(laplacian_of(dg))
        return GraphFamily(laps)

    def build_schedule(self) -> Schedule:
        s = self.schedule
        if s.switch_times is not None:
            floor = s.dwell_floor
            if floor is None:
                gaps = np.diff(s.switch_times)
                floor = float(gaps.min()) if gaps.size else s.horizon - s.switch_times[0]
            return Schedule(np.array(s.switch_times), np.array(s.modes) - 1, s.horizon, floor, seed=s.seed)
        return generate_schedule(s.seed, len(self.graphs), s.dwell_low, s.dwell_high, s.horizon,
                                 dwell_floor=s.dwell_floor)

    def initial_states(self):
        """``(w0, eta0, wtilde0)`` arrays; ``wtilde0`` defaults to ``w0``."""
        w0 = np.array(self.initial.w0)
        rule = self.initial.eta
        if rule == "zero":
            eta0 = np.zeros_like(w0)
        elif rule == "scaled":
            eta0 = self.initial.eta_scale * w0
        else:
            eta0 = np.array(self.initial.eta0)
        wt0 = w0.copy() if self.initial.wtilde0 is None else np.array(self.initial.wtilde0)
        return w0, eta0, wt0


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a decoded TOML document and build the config."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a table")
    md = _table(data, "model")
    if "A" not in md:
        raise ConfigError("is required", "model.A")
    A = _matrix(md["A"], "model.A")
    n = len(A)
    if len(A[0]) != n:
        raise ConfigError("must be square", "model.A")
    if "B" not in md:
        raise ConfigError("is required", "model.B")
    B = _matrix(md["B"], "model.B", rows=n)
    nB = len(B[0])
    C = _opt_matrix(md, "C", "model", cols=n)
    Q = _opt_matrix(md, "Q", "model", rows=n, cols=n)
    model = ModelSection(A, B, C, Q)

    gd = _table(data, "gains")
    K = _opt_matrix(gd, "K", "gains", rows=nB, cols=n)
    H = None
    if gd.get("H") is not None:
        if C is None:
            raise ConfigError("observer gain given but model.C is missing", "gains.H")
        H = _matrix(gd["H"], "gains.H", rows=n, cols=len(C))
    gamma = gd.get("gamma")
    if gamma is not None:
        if not isinstance(gamma, list) or len(gamma) != n:
            raise ConfigError(f"must be a list of {n} numbers", "gains.gamma")
        try:
            gamma = [float(g) for g in gamma]
        except (TypeError, ValueError):
            raise ConfigError("entries must be numbers", "gains.gamma") from None
        if any(not g > 0 for g in gamma):
            raise ConfigError("gains must be positive", "gains.gamma")
    design = gd.get("design", "uniform")
    if design not in DESIGNS:
        raise ConfigError(f"must be one of {DESIGNS}", "gains.design")
    strict = gd.get("strict_jordan", True)
    if not isinstance(strict, bool):
        raise ConfigError("must be true or false", "gains.strict_jordan")
    gains = GainsSection(K, H, gamma, design, _number(gd, "margin", "gains", 0.25, positive=True), strict)

    grd = _table(data, "graphs")
    floor = _number(grd, "alpha_floor", "graphs", DEFAULT_ALPHA_FLOOR, positive=True)
    raw_modes = grd.get("modes")
    if not isinstance(raw_modes, list) or not raw_modes:
        raise ConfigError("at least one graph mode is required", "graphs.modes")
    graphs = []
    for k, g in enumerate(raw_modes):
        where = f"graphs.modes[{k}]"
        if not isinstance(g, dict):
            raise ConfigError("must be a table", where)
        m = g.get("m")
        weights = _opt_matrix(g, "weights", where)
        if m is None and weights is not None:
            m = len(weights)
        if isinstance(m, bool) or not isinstance(m, int) or m < 1:
            raise ConfigError("agent count must be a positive integer", f"{where}.m")
        if weights is not None and (len(weights) != m or len(weights[0]) != m):
            raise ConfigError(f"must be {m} x {m}", f"{where}.weights")
        edges = g.get("edges")
        if edges is not None:
            if weights is not None:
                raise ConfigError("give either edges or weights, not both", where)
            if not isinstance(edges, list) or any(not isinstance(e, list) or len(e) != 3 for e in edges):
                raise ConfigError("edges must be [i, j, alpha] triples", f"{where}.edges")
            try:
                edges = [[int(e[0]), int(e[1]), float(e[2])] for e in edges]
            except (TypeError, ValueError):
                raise ConfigError("edges must be [i, j, alpha] triples", f"{where}.edges") from None
        elif weights is None:
            edges = []
        directed = g.get("directed", False)
        if not isinstance(directed, bool):
            raise ConfigError("must be true or false", f"{where}.directed")
        graphs.append(GraphMode(m=m, name=str(g.get("name", "")), directed=directed,
                                edges=edges, weights=weights))
    m = graphs[0].m
    for k, g in enumerate(graphs):
        if g.m != m:
            raise ConfigError(f"agent count {g.m} differs from {m}", f"graphs.modes[{k}].m")

    sd = _table(data, "schedule")
    horizon = _number(sd, "horizon", "schedule", positive=True)
    seed = sd.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("must be a nonnegative integer", "schedule.seed")
    dwell_floor = None if "dwell_floor" not in sd else _number(sd, "dwell_floor", "schedule", positive=True)
    if sd.get("switch_times") is not None:
        times = sd["switch_times"]
        modes = sd.get("modes")
        if not isinstance(times, list) or not isinstance(modes, list) or len(times) != len(modes) or not times:
            raise ConfigError("switch_times and modes must be lists of equal nonzero length", "schedule")
        times = [float(t) for t in times]
        if any(not isinstance(x, int) or isinstance(x, bool) or not 1 <= x <= len(graphs) for x in modes):
            raise ConfigError(f"modes must be integers in 1..{len(graphs)}", "schedule.modes")
        if any(b <= a for a, b in zip(times, times[1:])) or not horizon > times[-1]:
            raise ConfigError("switch times must increase and precede the horizon", "schedule.switch_times")
        sched = ScheduleSection(horizon, seed, None, None, dwell_floor, times, list(modes))
    else:
        low = _number(sd, "dwell_low", "schedule", positive=True)
        high = _number(sd, "dwell_high", "schedule", positive=True)
        if not low <= high:
            raise ConfigError("need 0 < dwell_low <= dwell_high", "schedule")
        sched = ScheduleSection(horizon, seed, low, high, dwell_floor)

    idt = _table(data, "initial")
    if "w0" not in idt:
        raise ConfigError("is required", "initial.w0")
    w0 = _matrix(idt["w0"], "initial.w0", rows=m, cols=n)
    rule = idt.get("eta", "zero")
    if rule not in ETA_RULES:
        raise ConfigError(f"must be one of {ETA_RULES}", "initial.eta")
    eta0 = _opt_matrix(idt, "eta0", "initial", rows=m, cols=n)
    if rule == "explicit" and eta0 is None:
        raise ConfigError("eta = 'explicit' needs eta0", "initial.eta0")
    initial = InitialSection(w0, rule, _number(idt, "eta_scale", "initial", 0.5), eta0,
                             _opt_matrix(idt, "wtilde0", "initial", rows=m, cols=n))

    rd = _table(data, "run")
    engine = rd.get("engine", "ode")
    if engine not in ENGINES:
        raise ConfigError(f"must be one of {ENGINES}", "run.engine")
    step = None if "step" not in rd else _number(rd, "step", "run", positive=True)
    spi = rd.get("samples_per_interval", 10)
    if isinstance(spi, bool) or not isinstance(spi, int) or spi < 1:
        raise ConfigError("must be a positive integer", "run.samples_per_interval")
    run = RunSection(engine, step, spi, str(rd.get("out", "out")))
    return ExperimentConfig(model, gains, graphs, sched, initial, run, floor)


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    return parse_config(data)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return loads(text)


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def reference_example(seed: int = 0) -> ExperimentConfig:
    """Four agents with a double unstable eigenvalue, switching among four
    undirected path graphs with dwell times uniform on [0.5, 1]."""
    return ExperimentConfig(
        model=ModelSection(A=[[-1.5, 2.0], [-1.28, 1.7]], B=[[1.0], [2.0]],
                           Q=[[-0.2, -0.5], [-0.16, -0.5]]),
        gains=GainsSection(K=[[0.1333, -1.9167]], gamma=[2.5, 1.5], strict_jordan=False),
        graphs=[
            GraphMode(4, "G1", edges=[[1, 2, 0.1892], [2, 3, 0.7206], [3, 4, 1.1249]]),
            GraphMode(4, "G2", edges=[[4, 1, 0.1293], [2, 3, 1.0800], [3, 4, 0.6605]]),
            GraphMode(4, "G3", edges=[[4, 1, 0.1849], [1, 2, 0.5128], [3, 4, 0.2971]]),
            GraphMode(4, "G4", edges=[[4, 1, 0.6394], [1, 2, 0.5368], [2, 3, 0.4256]]),
        ],
        schedule=ScheduleSection(horizon=30.0, seed=int(seed), dwell_low=0.5, dwell_high=1.0),
        initial=InitialSection(w0=[[6.0, -8.0], [-12.0, 6.0], [-17.0, 22.0], [18.0, -3.0]],
                               eta="scaled", eta_scale=0.5),
        run=RunSection(engine="ode"),
    )
