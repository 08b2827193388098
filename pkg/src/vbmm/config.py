"""Run configuration: a YAML document validated into dataclasses.

Unknown keys and ill-typed values raise :class:`ConfigError` carrying the
dotted field name and the line where it appears.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .bregman import MajorantKind, MajorantSpec
from .errors import ConfigError
from .regularizer import RegularizerParams, reg_lipschitz
from .simulator import Ellipse, PhantomSpec, ScanGeometry
from .solver import SOLVER_MAJORANTS, SolverConfig

__all__ = [
    "PhantomConfig",
    "GeometryConfig",
    "SimulationConfig",
    "RegularizerConfig",
    "SolverSection",
    "BenchmarkConfig",
    "CheckConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "DEFAULT_CONFIG_TEXT",
]


@dataclass
class EllipseConfig:
    center: list
    semi_axes: list
    value: float
    rotation: float = 0.0


@dataclass
class PhantomConfig:
    width: int = 32
    height: int = 32
    background: float = 0.0
    ellipses: list = field(default_factory=list)

    def to_spec(self) -> PhantomSpec:
        return PhantomSpec(self.width, self.height,
                           tuple(Ellipse(tuple(e.center), tuple(e.semi_axes), e.value, e.rotation)
                                 for e in self.ellipses),
                           self.background)


@dataclass
class GeometryConfig:
    n_angles: int = 32
    n_bins: Optional[int] = None
    bin_width: float = 1.0

    def to_geometry(self) -> ScanGeometry:
        return ScanGeometry(self.n_angles, self.n_bins, self.bin_width)


@dataclass
class SimulationConfig:
    background_fraction: float = 0.05
    background_value: Optional[float] = None
    fov_dilation: int = 0


@dataclass
class RegularizerConfig:
    lam: float = 1.0
    delta: float = 0.5
    epsilon: float = 0.01

    def to_params(self) -> RegularizerParams:
        return RegularizerParams(self.lam, self.delta, self.epsilon)


@dataclass
class SolverSection:
    max_iters: int = 20000
    step_tol: float = 1e-7
    residual_tol: Optional[float] = None
    wall_clock_budget: Optional[float] = None
    M_R: Optional[float] = None
    M_R_factor: float = 1.01
    epsilon0: Optional[float] = None
    mu_fraction: float = 1.0
    tau_fraction: float = 0.5
    record_wall_time: bool = False


@dataclass
class BenchmarkConfig:
    majorants: list = field(default_factory=lambda: ["maj1", "maj4", "maj5", "maj6", "maj8"])
    tolerance: float = 1e-3
    limit_factor: int = 10


@dataclass
class CheckConfig:
    samples: int = 10000
    seed: int = 0
    model_rows: int = 12
    model_cols: int = 16
    fault_scale: Optional[float] = None


@dataclass
class RunConfig:
    seed: int = 1
    output_dir: str = "out"
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    solver: SolverSection = field(default_factory=SolverSection)
    per_majorant: dict = field(default_factory=dict)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    check: CheckConfig = field(default_factory=CheckConfig)

    def solver_config(self, majorant, rho: float) -> SolverConfig:
        """Solver settings for one majorant, applying its ``per_majorant`` overrides."""
        kind = MajorantKind.parse(majorant)
        sec = self.per_majorant.get(kind.label, self.solver)
        reg = self.regularizer.to_params()
        spec = MajorantSpec.default(kind, rho, sec.mu_fraction, sec.tau_fraction)
        m_r = sec.M_R if sec.M_R is not None else sec.M_R_factor * reg_lipschitz(reg)
        cfg = SolverConfig(spec, reg, M_R=m_r, epsilon0=sec.epsilon0, max_iters=sec.max_iters,
                           step_tol=sec.step_tol, wall_clock_budget=sec.wall_clock_budget,
                           residual_tol=sec.residual_tol, seed=self.seed,
                           record_wall_time=sec.record_wall_time)
        cfg.validate()
        return cfg


_SECTIONS = {
    "phantom": PhantomConfig,
    "geometry": GeometryConfig,
    "simulation": SimulationConfig,
    "regularizer": RegularizerConfig,
    "solver": SolverSection,
    "benchmark": BenchmarkConfig,
    "check": CheckConfig,
}


def _line_map(node, prefix="", out=None):
    """Dotted path -> 1-based line for every mapping key and sequence item."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _line_map(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = v.start_mark.line + 1
            _line_map(v, path, out)
    return out


class _Builder:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, msg, path):
        raise ConfigError(msg, field=path or None, line=self.lines.get(path))

    def scalar(self, value, typ, path, optional=False):
        if value is None:
            if optional:
                return None
            self.fail("value is required", path)
        if typ is bool:
            if not isinstance(value, bool):
                self.fail("expected true or false", path)
            return value
        if typ is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.fail("expected an integer", path)
            return value
        if typ is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail("expected a number", path)
            return float(value)
        if typ is str:
            if not isinstance(value, str):
                self.fail("expected a string", path)
            return value
        raise TypeError(typ)

    def section(self, cls, data, path):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            self.fail("expected a mapping", path)
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in data.items():
            sub = f"{path}.{key}" if path else str(key)
            if key not in fields:
                self.fail(f"unknown key '{key}'", sub)
            kwargs[key] = self.value(cls, fields[key], value, sub)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            self.fail(str(exc), path)

    def value(self, cls, f, value, path):
        if cls is PhantomConfig and f.name == "ellipses":
            if not isinstance(value, list):
                self.fail("expected a list of ellipses", path)
            out = []
            for i, item in enumerate(value):
                e = self.section(EllipseConfig, item, f"{path}[{i}]")
                for name in ("center", "semi_axes"):
                    vec = getattr(e, name)
                    if not (isinstance(vec, list) and len(vec) == 2):
                        self.fail("expected two numbers", f"{path}[{i}].{name}")
                    setattr(e, name, [self.scalar(v, float, f"{path}[{i}].{name}") for v in vec])
                e.value = self.scalar(e.value, float, f"{path}[{i}].value")
                e.rotation = self.scalar(e.rotation, float, f"{path}[{i}].rotation")
                out.append(e)
            return out
        if cls is BenchmarkConfig and f.name == "majorants":
            if not isinstance(value, list):
                self.fail("expected a list of majorant names", path)
            names = []
            for i, v in enumerate(value):
                try:
                    names.append(MajorantKind.parse(v).label)
                except ValueError as exc:
                    self.fail(str(exc), f"{path}[{i}]")
            return names
        if cls is EllipseConfig:
            return value
        hint = str(f.type)
        optional = "Optional" in hint
        for name, typ in (("int", int), ("float", float), ("bool", bool), ("str", str)):
            if hint.replace("Optional[", "").rstrip("]") == name:
                return self.scalar(value, typ, path, optional)
        return value


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate a YAML run configuration."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: malformed YAML: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from None
    if data is None:
        data = {}
    lines = _line_map(node) if node is not None else {}
    b = _Builder(lines)
    if not isinstance(data, dict):
        b.fail("top level must be a mapping", "")
    kwargs = {}
    per_raw = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = b.section(_SECTIONS[key], value, key)
        elif key == "seed":
            kwargs[key] = b.scalar(value, int, key)
            if kwargs[key] < 0:
                b.fail("seed must be >= 0", key)
        elif key == "output_dir":
            kwargs[key] = b.scalar(value, str, key)
        elif key == "per_majorant":
            if not isinstance(value, dict):
                b.fail("expected a mapping of majorant name to solver settings", key)
            per_raw = value
        else:
            b.fail(f"unknown key '{key}'", str(key))
    base = dataclasses.asdict(kwargs.get("solver", SolverSection()))
    per = {}
    for name, sec in per_raw.items():
        path = f"per_majorant.{name}"
        try:
            label = MajorantKind.parse(name).label
        except ValueError as exc:
            b.fail(str(exc), path)
        given = b.section(SolverSection, sec, path)
        overrides = {k: getattr(given, k) for k in (sec or {})}
        per[label] = SolverSection(**{**base, **overrides})
    kwargs["per_majorant"] = per
    cfg = RunConfig(**kwargs)
    _validate(cfg, b)
    return cfg


def _validate(cfg: RunConfig, b: _Builder) -> None:
    try:
        cfg.phantom.to_spec()
    except ValueError as exc:
        b.fail(str(exc), "phantom")
    try:
        cfg.geometry.to_geometry()
    except ValueError as exc:
        b.fail(str(exc), "geometry")
    try:
        reg = cfg.regularizer.to_params()
    except ValueError as exc:
        b.fail(str(exc), "regularizer")
    sim = cfg.simulation
    if not sim.background_fraction > 0 and sim.background_value is None:
        b.fail("background_fraction must be > 0", "simulation.background_fraction")
    if sim.background_value is not None and not sim.background_value > 0:
        b.fail("background_value must be > 0", "simulation.background_value")
    if sim.fov_dilation < 0:
        b.fail("fov_dilation must be >= 0", "simulation.fov_dilation")
    sections = [("solver", cfg.solver)] + [(f"per_majorant.{k}", v)
                                           for k, v in cfg.per_majorant.items()]
    for path, sec in sections:
        m_r = sec.M_R if sec.M_R is not None else sec.M_R_factor * reg_lipschitz(reg)
        if not m_r > reg_lipschitz(reg):
            b.fail(f"M_R={m_r} must exceed L_R={reg_lipschitz(reg)}",
                   f"{path}.M_R" if sec.M_R is not None else f"{path}.M_R_factor")
        if sec.max_iters < 0:
            b.fail("max_iters must be >= 0", f"{path}.max_iters")
        if sec.step_tol < 0:
            b.fail("step_tol must be >= 0", f"{path}.step_tol")
        if sec.residual_tol is not None and not sec.residual_tol > 0:
            b.fail("residual_tol must be > 0", f"{path}.residual_tol")
        if sec.wall_clock_budget is not None and not sec.wall_clock_budget > 0:
            b.fail("wall_clock_budget must be > 0", f"{path}.wall_clock_budget")
        if sec.epsilon0 is not None and sec.epsilon0 < 0:
            b.fail("epsilon0 must be >= 0", f"{path}.epsilon0")
        if not 0.0 <= sec.mu_fraction <= 1.0:
            b.fail("mu_fraction must lie in [0, 1]", f"{path}.mu_fraction")
        if not 0.0 < sec.tau_fraction < 1.0:
            b.fail("tau_fraction must lie in (0, 1)", f"{path}.tau_fraction")
    bench = cfg.benchmark
    for i, name in enumerate(bench.majorants):
        if MajorantKind.parse(name) not in SOLVER_MAJORANTS:
            b.fail(f"{name} cannot be used by the solver", f"benchmark.majorants[{i}]")
    if not bench.tolerance > 0:
        b.fail("tolerance must be > 0", "benchmark.tolerance")
    if bench.limit_factor < 2:
        b.fail("limit_factor must be >= 2", "benchmark.limit_factor")
    chk = cfg.check
    if chk.samples < 1 or chk.model_rows < 1 or chk.model_cols < 1:
        b.fail("check sizes must be >= 1", "check")
    if chk.fault_scale is not None and not chk.fault_scale > 0:
        b.fail("fault_scale must be > 0", "check.fault_scale")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


DEFAULT_CONFIG_TEXT = """\
seed: 1
output_dir: out
phantom:
  width: 32
  height: 32
  background: 0.0
  ellipses:
    - {center: [0.0, 0.0], semi_axes: [0.8, 0.9], value: 2.0}
    - {center: [0.2, 0.1], semi_axes: [0.25, 0.3], value: 6.0, rotation: 30.0}
    - {center: [-0.35, -0.3], semi_axes: [0.15, 0.15], value: 0.5}
geometry:
  n_angles: 32
  n_bins: null
  bin_width: 1.0
simulation:
  background_fraction: 0.05
  background_value: null
  fov_dilation: 0
regularizer:
  lam: 1.0
  delta: 0.5
  epsilon: 0.01
solver:
  max_iters: 20000
  step_tol: 1.0e-7
  residual_tol: null
  wall_clock_budget: null
  M_R: null
  M_R_factor: 1.01
  epsilon0: null
  mu_fraction: 1.0
  tau_fraction: 0.5
  record_wall_time: false
benchmark:
  majorants: [maj1, maj4, maj5, maj6, maj8]
  tolerance: 1.0e-3
  limit_factor: 10
check:
  samples: 10000
  seed: 0
  model_rows: 12
  model_cols: 16
  fault_scale: null
"""
