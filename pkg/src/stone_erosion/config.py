"""Run configuration: TOML reading with line-precise diagnostics, and writing."""

from __future__ import annotations

import dataclasses
import hashlib
import math
import re
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .absorption import AsymmetricParams, ParameterError, SymmetricParams
from .physics import (
    DAY,
    WEEK,
    YEAR,
    SCENARIO_KINDS,
    Ambient,
    AmbientSchedule,
    ModelParams,
    SampleBox,
    Scenario,
    make_scenario,
)

__all__ = [
    "ConfigError",
    "OutputConfig",
    "SolverConfig",
    "StudyConfig",
    "RunConfig",
    "parse_config",
    "load_config",
    "dump_config",
    "default_config",
]


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        self.bare = message
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


DEFAULT_SNAPSHOTS = (WEEK, 180 * DAY, YEAR)


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "output"
    # snapshot times (s); only those not after the run duration are written
    snapshots: tuple = DEFAULT_SNAPSHOTS
    # front-log cadence (s); 0 samples every time step
    front_every: float = 3600.0
    co2_diagnostic: bool = False


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 50
    backend: str = "auto"


@dataclass(frozen=True)
class StudyConfig:
    refinements: int = 5
    horizon: float = 3600.0
    manufactured: bool = False


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    output: OutputConfig = field(default_factory=OutputConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    kind: str = "standard_1d"
    digest: str = ""


_SECTIONS = {
    "scenario": {"kind", "N", "dt", "duration", "length", "sample_lower", "sample_upper"},
    "ambient": {"E", "C", "times"},
    "params": {f.name for f in dataclasses.fields(ModelParams)} - {"symmetric", "asymmetric"},
    "params.symmetric": {f.name for f in dataclasses.fields(SymmetricParams)},
    "params.asymmetric": {f.name for f in dataclasses.fields(AsymmetricParams)} - {"mu"},
    "output": {f.name for f in dataclasses.fields(OutputConfig)},
    "solver": {f.name for f in dataclasses.fields(SolverConfig)},
    "study": {f.name for f in dataclasses.fields(StudyConfig)},
}


def _locate(text: str, section: str, key: str | None = None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the header when key is None)."""
    current = ""
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\s]+?)\s*\]\s*(#.*)?$")
    for no, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = re.sub(r"\s+", "", m.group(1))
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"^\s*\"?{re.escape(key)}\"?\s*=", line):
            return no
    return None


class _Reader:
    def __init__(self, text: str, data: dict, source: str):
        self.text, self.data, self.source = text, data, source

    def fail(self, message, section, key=None):
        line = _locate(self.text, section, key)
        if line is None and key is not None:
            line = _locate(self.text, section)
        raise ConfigError(message, line, self.source)

    def table(self, section: str) -> dict:
        node = self.data
        for part in section.split("."):
            node = node.get(part, {})
            if not isinstance(node, dict):
                self.fail(f"[{section}] must be a table", section)
        allowed = _SECTIONS[section]
        nested = {s.split(".")[-1] for s in _SECTIONS if s.startswith(section + ".")}
        for k in node:
            if k not in allowed and k not in nested:
                self.fail(f"unknown key {k!r} in [{section}]", section, k)
        return {k: v for k, v in node.items() if k not in nested}

    def number(self, section, key, value, *, integer=False, positive=False, nonneg=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"{section}.{key} must be a number, got {value!r}", section, key)
        if integer and not isinstance(value, int):
            self.fail(f"{section}.{key} must be an integer, got {value!r}", section, key)
        if not math.isfinite(value):
            self.fail(f"{section}.{key} must be finite", section, key)
        if positive and not value > 0:
            self.fail(f"{section}.{key} must be positive, got {value!r}", section, key)
        if nonneg and not value >= 0:
            self.fail(f"{section}.{key} must be non-negative, got {value!r}", section, key)
        return int(value) if integer else float(value)

    def numbers(self, section, key, value, **kw):
        if not isinstance(value, list) or not value:
            self.fail(f"{section}.{key} must be a non-empty array of numbers", section, key)
        return tuple(self.number(section, key, v, **kw) for v in value)


_INT_KEYS = {"N", "max_iter", "refinements"}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse TOML text into a validated :class:`RunConfig`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None, source) from None
    rd = _Reader(text, data, source)
    for k in data:
        if k not in {s.split(".")[0] for s in _SECTIONS}:
            raise ConfigError(f"unknown section [{k}]", _locate(text, k), source)

    sc = rd.table("scenario")
    kind = sc.get("kind", "standard_1d")
    if kind not in SCENARIO_KINDS:
        rd.fail(f"scenario.kind must be one of {SCENARIO_KINDS}, got {kind!r}", "scenario", "kind")

    # model parameters
    pv = {}
    for k, v in rd.table("params").items():
        if k in ("law", "outside_porosity"):
            if not isinstance(v, str):
                rd.fail(f"params.{k} must be a string", "params", k)
            pv[k] = v
        else:
            pv[k] = rd.number("params", k, v)
    sym = {k: rd.number("params.symmetric", k, v) for k, v in rd.table("params.symmetric").items()}
    asym = {k: rd.number("params.asymmetric", k, v) for k, v in rd.table("params.asymmetric").items()}
    try:
        if sym:
            pv["symmetric"] = SymmetricParams(**sym)
        if asym:
            pv["asymmetric"] = AsymmetricParams(**asym)
    except ParameterError as exc:
        rd.fail(str(exc), "params.symmetric" if sym and "asymmetric" not in pv else "params.asymmetric")
    explicit_law = "law" in pv
    try:
        params = ModelParams(**pv)
    except ParameterError as exc:
        msg = str(exc)
        # the threshold is the usual culprit when the porosity ordering fails
        keys = sorted(pv, key=lambda k: k != "n_max")
        key = next((k for k in keys if re.search(rf"\b{k}\b", msg)), None)
        rd.fail(msg, "params", key)

    overrides = {}
    for k, v in sc.items():
        if k == "kind":
            continue
        if k in ("sample_lower", "sample_upper"):
            overrides[k] = rd.numbers("scenario", k, v)
        else:
            overrides[k] = rd.number("scenario", k, v, integer=k in _INT_KEYS, positive=True)

    if kind == "catastrophic_1d" and not explicit_law:
        # the submerged-stone test uses the symmetric law unless one is chosen
        params = params.replace(law="symmetric")
    try:
        scen = make_scenario(kind, params)
    except ParameterError as exc:
        rd.fail(str(exc), "scenario", "kind")

    amb = rd.table("ambient")
    ambient = None
    if "times" in amb:
        times = rd.numbers("ambient", "times", amb["times"], nonneg=True)
        Es = rd.numbers("ambient", "E", amb["E"], nonneg=True) if "E" in amb else None
        Cs = rd.numbers("ambient", "C", amb["C"], nonneg=True) if "C" in amb else None
        if Es is None or Cs is None or not (len(Es) == len(Cs) == len(times)):
            rd.fail("ambient.times, ambient.E and ambient.C must have equal lengths", "ambient", "times")
        try:
            ambient = AmbientSchedule(times, tuple(Ambient(e, c) for e, c in zip(Es, Cs)))
        except ParameterError as exc:
            rd.fail(str(exc), "ambient", "times")
    elif amb:
        cur = scen.ambient.values[0]
        E = rd.number("ambient", "E", amb["E"], nonneg=True) if "E" in amb else cur.E
        C = rd.number("ambient", "C", amb["C"], nonneg=True) if "C" in amb else cur.C
        ambient = AmbientSchedule.constant(Ambient(E, C))

    try:
        lo = overrides.pop("sample_lower", scen.sample.lower)
        hi = overrides.pop("sample_upper", scen.sample.upper)
        changes = dict(overrides, sample=SampleBox(tuple(lo), tuple(hi)))
        if ambient is not None:
            changes["ambient"] = ambient
        scen = scen.replace(**changes)
    except ParameterError as exc:
        msg = str(exc)
        key = "sample_lower" if "sample" in msg else next((k for k in sc if k in msg), None)
        rd.fail(msg, "scenario", key)

    out = rd.table("output")
    o = {}
    if "dir" in out:
        if not isinstance(out["dir"], str) or not out["dir"]:
            rd.fail("output.dir must be a non-empty string", "output", "dir")
        o["dir"] = out["dir"]
    if "snapshots" in out:
        if out["snapshots"] == []:
            o["snapshots"] = ()
        else:
            o["snapshots"] = tuple(sorted(rd.numbers("output", "snapshots", out["snapshots"], nonneg=True)))
    if "front_every" in out:
        o["front_every"] = rd.number("output", "front_every", out["front_every"], nonneg=True)
    if "co2_diagnostic" in out:
        if not isinstance(out["co2_diagnostic"], bool):
            rd.fail("output.co2_diagnostic must be true or false", "output", "co2_diagnostic")
        o["co2_diagnostic"] = out["co2_diagnostic"]

    sv = rd.table("solver")
    s = {}
    if "tol" in sv:
        s["tol"] = rd.number("solver", "tol", sv["tol"], positive=True)
    if "max_iter" in sv:
        s["max_iter"] = rd.number("solver", "max_iter", sv["max_iter"], integer=True, positive=True)
    if "backend" in sv:
        if sv["backend"] not in ("auto", "compiled", "python"):
            rd.fail("solver.backend must be 'auto', 'compiled' or 'python'", "solver", "backend")
        s["backend"] = sv["backend"]

    st = rd.table("study")
    y = {}
    if "refinements" in st:
        y["refinements"] = rd.number("study", "refinements", st["refinements"], integer=True, positive=True)
        if y["refinements"] < 3:
            rd.fail(f"study.refinements must be at least 3, got {y['refinements']}", "study", "refinements")
    if "horizon" in st:
        y["horizon"] = rd.number("study", "horizon", st["horizon"], positive=True)
    if "manufactured" in st:
        if not isinstance(st["manufactured"], bool):
            rd.fail("study.manufactured must be true or false", "study", "manufactured")
        y["manufactured"] = st["manufactured"]

    return RunConfig(
        scenario=scen,
        output=OutputConfig(**o),
        solver=SolverConfig(**s),
        study=StudyConfig(**y),
        kind=kind,
        digest=hashlib.sha256(text.encode()).hexdigest(),
    )


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"not UTF-8 text: {exc}", None, str(path)) from None
    return parse_config(text, str(path))


# --- writing ---------------------------------------------------------------


def _value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def _section(name, items) -> list:
    lines = [f"[{name}]"]
    lines += [f"{k} = {_value(v)}" for k, v in items]
    return lines + [""]


def dump_config(cfg: RunConfig) -> str:
    """TOML text that parses back to an equal configuration."""
    sc, p = cfg.scenario, cfg.scenario.params
    out = _section("scenario", [
        ("kind", cfg.kind),
        ("N", sc.N),
        ("dt", float(sc.dt)),
        ("duration", float(sc.duration)),
        ("length", float(sc.length)),
        ("sample_lower", [float(x) for x in sc.sample.lower]),
        ("sample_upper", [float(x) for x in sc.sample.upper]),
    ])
    amb = sc.ambient
    if len(amb.times) == 1:
        out += _section("ambient", [("E", float(amb.values[0].E)), ("C", float(amb.values[0].C))])
    else:
        out += _section("ambient", [
            ("times", [float(t) for t in amb.times]),
            ("E", [float(a.E) for a in amb.values]),
            ("C", [float(a.C) for a in amb.values]),
        ])
    scalar = [(f.name, getattr(p, f.name)) for f in dataclasses.fields(p) if f.name not in ("symmetric", "asymmetric")]
    out += _section("params", [(k, float(v) if isinstance(v, (int, float)) else v) for k, v in scalar])
    out += _section("params.symmetric", [(k, float(v)) for k, v in dataclasses.asdict(p.symmetric).items()])
    out += _section("params.asymmetric", [
        (k, float(v)) for k, v in dataclasses.asdict(p.asymmetric).items() if k != "mu"
    ])
    o = cfg.output
    out += _section("output", [
        ("dir", o.dir),
        ("snapshots", [float(t) for t in o.snapshots]),
        ("front_every", float(o.front_every)),
        ("co2_diagnostic", o.co2_diagnostic),
    ])
    s = cfg.solver
    out += _section("solver", [("tol", float(s.tol)), ("max_iter", s.max_iter), ("backend", s.backend)])
    y = cfg.study
    out += _section("study", [("refinements", y.refinements), ("horizon", float(y.horizon)), ("manufactured", y.manufactured)])
    return "\n".join(out)


def default_config(kind: str = "standard_1d") -> RunConfig:
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")
    return RunConfig(scenario=make_scenario(kind), kind=kind)
