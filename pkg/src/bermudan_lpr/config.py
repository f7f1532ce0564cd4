"""Run configuration: TOML or JSON files, validated before anything is simulated.

Validation errors name the file and line of the offending key, e.g.
``benchmark.toml:14: regression.degree must be a nonnegative integer``.
"""

from __future__ import annotations

import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dp import DpConfig
from .errors import InvalidInput, Unsupported
from .localpoly import KERNEL_CODES
from .models import ExerciseGrid, GbmParams
from .oracles import LatticeParams, PowerPutParams
from .payoffs import PayoffSpec
from .pricing import Experiment, gbm_experiment
from .studies import RegressionPlan
from .testbeds import DigitalModel, linear_margin_chain, isolating_bandwidth

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODEL_KINDS = ("gbm", "linear_margin_chain", "digital", "power_put", "uniform_margins")
PAYOFF_KINDS = ("max_call", "vanilla_put", "power_put", "zero")


class ConfigError(InvalidInput):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.source, self.line, self.message = source, line, message
        where = source if line is None else f"{source}:{line}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ModelSection:
    kind: str = "gbm"
    d: int = 2
    rate: float = 0.0
    dividend: float = 0.0
    sigma: float = 0.2
    x0: tuple = (100.0, 100.0)
    correlation: tuple | None = None
    # finite-chain testbed
    n_states: int = 50
    halfwidth: float = 0.25
    # digital testbed
    lo: float = 0.5
    hi: float = 1.5
    delta: float = 1.0
    strike: float = 1.0
    gap_ratio: float = 0.5
    quadrature_points: int = 20000
    # power put margins
    alpha: float = 2.0
    upper: float | None = None


@dataclass(frozen=True)
class GridSection:
    maturity: float = 1.0
    dates: int = 1
    times: tuple | None = None


@dataclass(frozen=True)
class PayoffSection:
    kind: str = "max_call"
    strike: float = 100.0
    alpha: float = 1.0


@dataclass(frozen=True)
class SimulationSection:
    M: int = 4000
    N: int = 4000
    replications: int = 1
    seed: int = 0


@dataclass(frozen=True)
class RegressionSection:
    degree: int = 0
    kernel: str = "triangle"
    bandwidth: float | None = None
    beta: float | None = None
    nu: float = 0.0
    truncation: bool = True
    c_max: float | None = None
    discount: str = "market"
    start_index: int = 1


@dataclass(frozen=True)
class StudySection:
    h_grid: tuple = ()
    M_grid: tuple = ()
    delta_grid: tuple = ()
    samples: int = 100000
    min_hits: int = 20
    lattice_steps: tuple = (300,)


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    payoff: PayoffSection = field(default_factory=PayoffSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    regression: RegressionSection = field(default_factory=RegressionSection)
    study: StudySection = field(default_factory=StudySection)
    output: OutputSection = field(default_factory=OutputSection)
    source: str = "<config>"

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("source")
        return _jsonable(out)

    def with_overrides(self, seed=None, replications=None, out_dir=None) -> "RunConfig":
        sim = self.simulation
        if seed is not None:
            if not 0 <= seed < 1 << 64:
                raise ConfigError("seed must be an unsigned 64-bit integer", "--seed")
            sim = replace(sim, seed=int(seed))
        if replications is not None:
            if replications < 1:
                raise ConfigError("replications must be >= 1", "--replications")
            sim = replace(sim, replications=int(replications))
        output = self.output if out_dir is None else OutputSection(str(out_dir))
        return replace(self, simulation=sim, output=output)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ---------------------------------------------------------------- line lookup

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.]+)\s*\]")
_TOML_KEY = re.compile(r"^\s*([A-Za-z0-9_]+)\s*=")
_JSON_KEY = re.compile(r'"([A-Za-z0-9_]+)"\s*:')


def _line_index(text: str, is_json: bool) -> dict:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    index = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        if is_json:
            for key in _JSON_KEY.findall(line):
                if key in _SECTIONS:
                    section = key
                    index.setdefault((key, None), n)
                elif section is not None:
                    index.setdefault((section, key), n)
            continue
        m = _HEADER.match(line)
        if m:
            section = m.group(1)
            index.setdefault((section, None), n)
            continue
        m = _TOML_KEY.match(line)
        if m:
            index.setdefault((section, m.group(1)), n)
    return index


class _Reader:
    def __init__(self, source: str, index: dict):
        self.source = source
        self.index = index

    def error(self, section, key, message):
        line = self.index.get((section, key), self.index.get((section, None)))
        return ConfigError(message, self.source, line)


# ---------------------------------------------------------------- field coercion


def _coerce(reader: _Reader, section: str, key: str, value, default):
    name = f"{section}.{key}"
    err = lambda msg: reader.error(section, key, f"{name} {msg}")  # noqa: E731
    if value is None:
        if default is None:
            return None
        raise err("must not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise err("must be true or false")
        return value
    if isinstance(default, int) and key not in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise err("must be an integer")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise err("must be a string")
        return value
    if isinstance(default, tuple) or key in _LIST_KEYS:
        if isinstance(value, (int, float)) and not isinstance(value, bool) and key == "x0":
            return (float(value),)
        if isinstance(value, dict) and key.endswith("_grid"):
            return _expand_grid(err, key, value)
        if not isinstance(value, list):
            raise err("must be a list")
        try:
            if key == "correlation":
                return tuple(tuple(float(v) for v in row) for row in value)
            if key in ("M_grid", "lattice_steps"):
                if any(isinstance(v, bool) or not isinstance(v, int) for v in value):
                    raise TypeError
                return tuple(value)
            return tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise err("has non-numeric entries") from None
    if default is None or isinstance(default, float) or key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise err("must be a number")
        value = float(value)
        if not math.isfinite(value) and key not in ("c_max",):
            raise err("must be finite")
        return value
    return value


def _expand_grid(err, key, spec: dict):
    """Grids may be written as {start, stop, num[, log]} as well as lists."""
    unknown = set(spec) - {"start", "stop", "num", "log"}
    if unknown or not {"start", "stop", "num"} <= set(spec):
        raise err("as a table needs start, stop, num and optional log")
    num = spec["num"]
    if isinstance(num, bool) or not isinstance(num, int) or num < 1:
        raise err("num must be a positive integer")
    if spec.get("log", False):
        if spec["start"] <= 0 or spec["stop"] <= 0:
            raise err("log grid needs positive endpoints")
        vals = np.logspace(math.log10(spec["start"]), math.log10(spec["stop"]), num)
    else:
        vals = np.linspace(spec["start"], spec["stop"], num)
    if key == "M_grid":
        return tuple(int(round(v)) for v in vals)
    return tuple(float(v) for v in vals)


_FLOAT_KEYS = {"rate", "dividend", "sigma", "halfwidth", "lo", "hi", "delta", "strike", "gap_ratio",
               "alpha", "upper", "maturity", "bandwidth", "beta", "nu", "c_max"}
_LIST_KEYS = {"x0", "correlation", "times", "h_grid", "M_grid", "delta_grid", "lattice_steps"}
_SECTIONS = {
    "model": ModelSection, "grid": GridSection, "payoff": PayoffSection,
    "simulation": SimulationSection, "regression": RegressionSection,
    "study": StudySection, "output": OutputSection,
}


def _build_section(reader: _Reader, name: str, cls, raw):
    if not isinstance(raw, dict):
        raise reader.error(name, None, f"[{name}] must be a table")
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        if not hasattr(defaults, key):
            raise reader.error(name, key, f"unknown key {name}.{key}")
        kwargs[key] = _coerce(reader, name, key, value, getattr(defaults, key))
    return cls(**kwargs)


# ---------------------------------------------------------------- loading


def parse_config(text: str, source: str = "<config>", fmt: str | None = None) -> RunConfig:
    is_json = fmt == "json" if fmt else text.lstrip().startswith("{")
    try:
        raw = json.loads(text) if is_json else tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", source, exc.lineno) from None
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", source, int(m.group(1)) if m else None) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a table", source, 1)
    reader = _Reader(source, _line_index(text, is_json))
    sections = {}
    for name, value in raw.items():
        if name not in _SECTIONS:
            raise reader.error(name, None, f"unknown section [{name}]")
        sections[name] = _build_section(reader, name, _SECTIONS[name], value)
    cfg = RunConfig(**sections, source=source)
    validate(cfg, reader)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, path.name, "json" if path.suffix == ".json" else None)


def validate(cfg: RunConfig, reader: _Reader | None = None) -> None:
    """Check every value a run will need; raises ConfigError with the key's line."""
    reader = reader or _Reader(cfg.source, {})
    m, g, p, s, r, st = cfg.model, cfg.grid, cfg.payoff, cfg.simulation, cfg.regression, cfg.study

    def need(ok, section, key, message):
        if not ok:
            raise reader.error(section, key, message)

    need(m.kind in MODEL_KINDS, "model", "kind", f"model.kind must be one of {', '.join(MODEL_KINDS)}")
    if m.kind == "gbm":
        need(m.d >= 1, "model", "d", "model.d must be >= 1")
        need(len(m.x0) in (1, m.d), "model", "x0", f"model.x0 needs 1 or {m.d} entries")
        need(all(v > 0 for v in m.x0), "model", "x0", "model.x0 entries must be positive")
        need(m.sigma >= 0, "model", "sigma", "model.sigma must be >= 0")
        need(m.dividend >= 0, "model", "dividend", "model.dividend must be >= 0")
        if m.correlation is not None:
            need(len(m.correlation) == m.d and all(len(row) == m.d for row in m.correlation),
                 "model", "correlation", f"model.correlation must be {m.d} x {m.d}")
        need(p.kind in PAYOFF_KINDS, "payoff", "kind", f"payoff.kind must be one of {', '.join(PAYOFF_KINDS)}")
        need(p.kind in ("zero", "max_call") or m.d == 1, "payoff", "kind",
             f"payoff.kind {p.kind} is one-dimensional but model.d = {m.d}")
        need(p.kind == "zero" or p.strike > 0, "payoff", "strike", "payoff.strike must be positive")
        need(p.alpha > 0, "payoff", "alpha", "payoff.alpha must be positive")
        if g.times is not None:
            need(len(g.times) >= 2 and all(b > a for a, b in zip(g.times, g.times[1:])),
                 "grid", "times", "grid.times must be increasing with at least two entries")
        else:
            need(g.maturity > 0, "grid", "maturity", "grid.maturity must be positive")
            need(g.dates >= 1, "grid", "dates", "grid.dates must be >= 1")
    if m.kind == "linear_margin_chain":
        need(2 <= m.n_states <= 50, "model", "n_states", "model.n_states must lie in [2, 50]")
        need(0 < m.halfwidth <= 0.5, "model", "halfwidth", "model.halfwidth must lie in (0, 0.5]")
    if m.kind == "digital":
        need(0 < m.lo < m.hi, "model", "hi", "model needs 0 < lo < hi")
        need(m.sigma > 0 and m.delta > 0 and m.strike > 0, "model", "sigma",
             "model.sigma, delta and strike must be positive")
        need(0 < m.gap_ratio < 1, "model", "gap_ratio", "model.gap_ratio must lie in (0, 1)")
        need(m.quadrature_points >= 100, "model", "quadrature_points", "model.quadrature_points must be >= 100")
    if m.kind == "power_put":
        need(min(m.strike, m.alpha, m.sigma, m.delta) > 0, "model", "alpha",
             "model.strike, alpha, sigma and delta must be positive")
        need(m.upper is None or m.upper > 0, "model", "upper", "model.upper must be positive")
    need(s.M >= 1, "simulation", "M", "simulation.M must be >= 1")
    need(s.N >= 1, "simulation", "N", "simulation.N must be >= 1")
    need(s.replications >= 1, "simulation", "replications", "simulation.replications must be >= 1")
    need(0 <= s.seed < 1 << 64, "simulation", "seed", "simulation.seed must be an unsigned 64-bit integer")
    need(r.degree >= 0, "regression", "degree", "regression.degree must be a nonnegative integer")
    d = m.d if m.kind == "gbm" else 1
    n_basis = math.comb(d + r.degree, r.degree)
    need(s.M >= n_basis, "simulation", "M",
         f"simulation.M = {s.M} is smaller than the {n_basis} monomials of degree {r.degree} in {d} dimensions")
    need(r.kernel in KERNEL_CODES, "regression", "kernel",
         f"regression.kernel must be one of {', '.join(KERNEL_CODES)}")
    need(r.bandwidth is None or r.bandwidth > 0, "regression", "bandwidth", "regression.bandwidth must be positive")
    need(r.beta is None or r.beta > 0, "regression", "beta", "regression.beta must be positive")
    need(r.nu >= 0, "regression", "nu", "regression.nu must be >= 0")
    need(r.c_max is None or r.c_max >= 0, "regression", "c_max", "regression.c_max must be >= 0")
    need(r.discount in ("market", "none"), "regression", "discount", "regression.discount must be market or none")
    need(r.start_index in (0, 1), "regression", "start_index", "regression.start_index must be 0 or 1")
    need(all(h > 0 for h in st.h_grid), "study", "h_grid", "study.h_grid entries must be positive")
    need(all(b > a for a, b in zip(st.M_grid, st.M_grid[1:])) and all(v >= 2 for v in st.M_grid),
         "study", "M_grid", "study.M_grid must be increasing integers >= 2")
    need(all(v > 0 for v in st.delta_grid) and all(b > a for a, b in zip(st.delta_grid, st.delta_grid[1:])),
         "study", "delta_grid", "study.delta_grid must be positive and increasing")
    need(st.samples >= 1000, "study", "samples", "study.samples must be >= 1000")
    need(st.min_hits >= 1, "study", "min_hits", "study.min_hits must be >= 1")
    need(all(v >= 1 for v in st.lattice_steps), "study", "lattice_steps", "study.lattice_steps entries must be >= 1")
    need(bool(cfg.output.dir), "output", "dir", "output.dir must not be empty")


# ---------------------------------------------------------------- builders


def exercise_grid(cfg: RunConfig) -> ExerciseGrid:
    g = cfg.grid
    if g.times is not None:
        return ExerciseGrid(tuple(g.times))
    return ExerciseGrid.uniform(g.maturity, g.dates)


def gbm_params(cfg: RunConfig) -> GbmParams:
    m = cfg.model
    corr = None if m.correlation is None else np.array(m.correlation)
    return GbmParams(m.d, m.rate, m.dividend, m.sigma, corr)


def x0_vector(cfg: RunConfig) -> np.ndarray:
    x0 = np.asarray(cfg.model.x0, dtype=float)
    return np.full(cfg.model.d, x0[0]) if x0.size == 1 else x0


def payoff_spec(cfg: RunConfig) -> PayoffSpec:
    p = cfg.payoff
    if p.kind == "zero":
        return PayoffSpec.zero()
    if p.kind == "power_put":
        return PayoffSpec.power_put(p.strike, p.alpha)
    if p.kind == "vanilla_put":
        return PayoffSpec.vanilla_put(p.strike)
    return PayoffSpec.max_call(p.strike)


def regression_plan(cfg: RunConfig) -> RegressionPlan:
    r = cfg.regression
    bandwidth = r.bandwidth
    if bandwidth is None and r.beta is None:
        if cfg.model.kind == "linear_margin_chain":
            bandwidth = isolating_bandwidth(oracle_model(cfg).chain)
        else:
            raise ConfigError("regression needs bandwidth or beta", cfg.source)
    return RegressionPlan(r.degree, r.kernel, bandwidth, r.beta, r.nu, r.truncation, r.c_max)


def discount_per_step(cfg: RunConfig, grid: ExerciseGrid) -> float:
    if cfg.regression.discount == "none" or cfg.model.kind != "gbm" or cfg.model.rate == 0:
        return 1.0
    if not grid.is_uniform:
        raise Unsupported("market discounting needs equally spaced exercise dates")
    return math.exp(-cfg.model.rate * float(grid.steps[0]))


def oracle_model(cfg: RunConfig):
    """The exactly priced testbed named by the config, for rate studies."""
    m = cfg.model
    if m.kind == "linear_margin_chain":
        return linear_margin_chain(m.n_states, m.halfwidth)
    if m.kind == "digital":
        return DigitalModel(m.lo, m.hi, m.sigma, m.delta, m.strike, m.gap_ratio, m.quadrature_points)
    raise Unsupported(f"no exact price oracle for model.kind = {m.kind}")


def build_experiment(cfg: RunConfig, threads: int = 1) -> Experiment:
    """Experiment for price / bandwidth-study; works for GBM and the testbeds."""
    s = cfg.simulation
    plan = regression_plan(cfg)
    echo = {"config": cfg.to_dict()}
    if cfg.model.kind == "gbm":
        grid = exercise_grid(cfg)
        disc = discount_per_step(cfg, grid)
        dp = plan.dp_config(s.M, cfg.model.d, disc, cfg.regression.start_index)
        return gbm_experiment(gbm_params(cfg), x0_vector(cfg), grid, payoff_spec(cfg), dp, s.M, s.N, s.seed, echo)
    if cfg.model.kind in ("linear_margin_chain", "digital"):
        model = oracle_model(cfg)
        d = model.simulate(1, 0).d
        dp = plan.dp_config(s.M, d, 1.0, cfg.regression.start_index)
        return Experiment(model.simulate, model.payoff, dp, s.M, s.N, s.seed, echo)
    raise Unsupported(f"model.kind = {cfg.model.kind} cannot be priced by simulation")


def lattice_params(cfg: RunConfig, steps: int) -> LatticeParams:
    if cfg.model.kind != "gbm" or cfg.payoff.kind != "max_call":
        raise Unsupported("the lattice oracle covers the GBM max-call only")
    return LatticeParams(int(steps), gbm_params(cfg), cfg.payoff.strike, tuple(x0_vector(cfg)),
                         exercise_grid(cfg), cfg.regression.start_index)


def power_put_params(cfg: RunConfig) -> PowerPutParams:
    m = cfg.model
    return PowerPutParams(m.strike, m.alpha, m.sigma, m.delta)


def dp_config(cfg: RunConfig) -> DpConfig:
    """DpConfig for the configured M."""
    return build_experiment(cfg).dp
