"""Experiment configuration files.

Flat ``[section]`` blocks of ``key = value`` lines; ``#`` starts a comment,
surrounding quotes are stripped and arrays are written in brackets::

    [experiment]
    pipeline = heat-potential
    seed = 7

    [grid]
    nodes = 51
    forward_nodes = 101

Every problem found is collected as a Violation(line, key, constraint) and
raised together in one ConfigError. Absent keys take the defaults below.
"""

import logging
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import ClassVar

from obslab.errors import ConfigError, DomainError, Violation
from obslab.expressions import parse_expression
from obslab.forward import PROBLEM_KINDS
from obslab.grid import Grid
from obslab.recovery import RecoveryConfig
from obslab.stability import MODULUS_KINDS, PIPELINE_IDS

log = logging.getLogger(__name__)

DEFAULT_HEAT_DT = 1e-3

# an expression, or a bracketed node table
Coefficient = str | tuple[float, ...]

# pipeline -> problem kind it runs on
PIPELINE_PROBLEMS = {
    "wave-source": "wave",
    "heat-source": "heat",
    "heat-potential": "heat",
    "wave-potential": "wave",
    "boundary-damping": "square",
}


def _positive(v):
    return None if v is None or v > 0 else "must be positive"


def _nonnegative(v):
    return None if v >= 0 else "must be nonnegative"


def _one_of(*choices):
    def check(v):
        return None if v in choices else f"must be one of {', '.join(repr(c) for c in choices)}"

    return check


@dataclass(frozen=True)
class ExperimentSection:
    problem: str = "wave"
    pipeline: str = ""
    seed: int | None = None
    label: str = "boundary"
    name: str = "obslab"

    CHECKS: ClassVar[dict] = {
        "problem": _one_of(*PROBLEM_KINDS),
        "pipeline": _one_of("", *PIPELINE_IDS),
        "seed": lambda v: None if v is None or 0 <= v < 2**64 else "must be an unsigned 64-bit integer",
    }


@dataclass(frozen=True)
class GridSection:
    dimension: int = 1
    nodes: int = 51
    forward_nodes: int | None = None

    CHECKS: ClassVar[dict] = {
        "dimension": _one_of(1, 2),
        "nodes": lambda v: None if v >= 5 else "must be at least 5",
        "forward_nodes": lambda v: None if v is None or v >= 9 else "must be at least 9",
    }

    def inversion_grid(self) -> Grid:
        return Grid(self.dimension, (self.nodes,) * self.dimension)

    def forward_grid(self) -> Grid:
        nodes = self.forward_nodes if self.forward_nodes is not None else 2 * (self.nodes - 1) + 1
        return Grid(self.dimension, (nodes,) * self.dimension)


@dataclass(frozen=True)
class TimeSection:
    tau: float = 1.0
    dt: float | None = None

    CHECKS: ClassVar[dict] = {"tau": _positive, "dt": _positive}


@dataclass(frozen=True)
class CoefficientSection:
    """Reference coefficients, the truth used to synthesize data, initial data,
    and a separable source g(t)f(x). Each is an expression or a node table."""

    q: Coefficient = "0"
    q_true: Coefficient | None = None
    a: Coefficient = "0"
    a_true: Coefficient | None = None
    a1: Coefficient = "0"
    a2: Coefficient = "0"
    u0: Coefficient = "phi1"
    u1: Coefficient = "0"
    source: Coefficient = "0"
    kernel: Coefficient = "1"

    EXPRESSIONS: ClassVar[tuple] = ("q", "q_true", "a", "a_true", "a1", "a2", "u0", "u1", "source", "kernel")


@dataclass(frozen=True)
class SweepSection:
    pipeline: str = ""
    family: str = "mode"
    amplitudes: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)
    seeds: tuple[int, ...] = (0,)
    noise: float = 0.0
    fit: str = "holder"

    CHECKS: ClassVar[dict] = {
        "pipeline": _one_of("", *PIPELINE_IDS),
        "family": _one_of("mode", "bump", "damping", "potential", "constant"),
        "amplitudes": lambda v: (
            None
            if v and all(a >= 0 for a in v) and all(b < a for a, b in zip(v, v[1:]))
            else "must be nonempty, nonnegative and strictly decreasing"
        ),
        "seeds": lambda v: None if v and all(s >= 0 for s in v) else "must list nonnegative seeds",
        "noise": _nonnegative,
        "fit": _one_of(*MODULUS_KINDS),
    }


@dataclass(frozen=True)
class InequalitySection:
    hardy: tuple[str, ...] = ("sin(pi*x)", "x*(1-x)", "x**2*(1-x)")
    hopf: tuple[str, ...] = ("sqrt(2)*sin(pi*x)",)
    interpolation: tuple[str, ...] = ("sin(2*pi*x)",)
    weight: str = "phi1"
    negative_power: tuple[str, ...] = ("phi1",)
    deltas: tuple[float, ...] = (0.25, 0.5, 0.75, 0.9, 1.5)
    weighted_l2: tuple[str, ...] = ("x*(1-x)",)
    weighted_delta: float = 0.5

    EXPRESSIONS: ClassVar[tuple] = ("hardy", "hopf", "interpolation", "weight", "negative_power", "weighted_l2")
    CHECKS: ClassVar[dict] = {
        "deltas": lambda v: None if all(d > 0 for d in v) else "must be positive",
        "weighted_delta": lambda v: None if 0 < v <= 1 else "must lie in (0, 1]",
    }


@dataclass(frozen=True)
class VolterraSection:
    """A kernel λ(t) and either a signal h (data y = λ∗h are synthesized) or
    the data series y itself."""

    kernel: str = "exp(-t)"
    signal: str = "cos(3*t)"
    series: str | None = None
    smoothing: int = 1
    noise: float = 0.0
    dt: float = 1e-3

    EXPRESSIONS: ClassVar[tuple] = ("kernel", "signal", "series")
    CHECKS: ClassVar[dict] = {
        "smoothing": lambda v: None if v >= 1 and v % 2 == 1 else "must be a positive odd integer",
        "noise": _nonnegative,
        "dt": _positive,
    }


@dataclass(frozen=True)
class CertifySection:
    input: str = "sweep.csv"
    pipeline: str = ""
    modulus: str = ""
    parameter: float | None = None

    CHECKS: ClassVar[dict] = {
        "pipeline": _one_of("", *PIPELINE_IDS),
        "modulus": _one_of("", *MODULUS_KINDS),
        "parameter": _positive,
    }


SECTIONS = {
    "experiment": ExperimentSection,
    "grid": GridSection,
    "time": TimeSection,
    "coefficients": CoefficientSection,
    "recovery": RecoveryConfig,
    "sweep": SweepSection,
    "inequalities": InequalitySection,
    "volterra": VolterraSection,
    "certify": CertifySection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    grid: GridSection = field(default_factory=GridSection)
    time: TimeSection = field(default_factory=TimeSection)
    coefficients: CoefficientSection = field(default_factory=CoefficientSection)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    sweep: SweepSection = field(default_factory=SweepSection)
    inequalities: InequalitySection = field(default_factory=InequalitySection)
    volterra: VolterraSection = field(default_factory=VolterraSection)
    certify: CertifySection = field(default_factory=CertifySection)
    source_text: str = field(default="", compare=False, repr=False)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    @property
    def seed(self) -> int:
        return int(self.experiment.seed)

    @property
    def problem(self) -> str:
        pipeline = self.experiment.pipeline
        return PIPELINE_PROBLEMS.get(pipeline, self.experiment.problem) if pipeline else self.experiment.problem

    def time_step(self) -> float | None:
        """The configured dt; heat falls back to 10⁻³, waves to the CFL default (None)."""
        if self.time.dt is not None:
            return self.time.dt
        return DEFAULT_HEAT_DT if self.problem == "heat" else None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, experiment=replace(self.experiment, seed=seed))


# ---------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------


def _split_items(body: str) -> list[str]:
    """Split on commas outside parentheses."""
    items, depth, current = [], 0, []
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            items.append("".join(current))
            current = []
        else:
            current.append(ch)
    items.append("".join(current))
    items = [i.strip() for i in items]
    if items == [""]:
        return []
    if any(not i for i in items):
        raise ValueError("empty array element")
    return items


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


def _scalar(kind, text: str):
    text = _unquote(text)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _bracketed(text: str) -> bool:
    text = text.strip()
    return text.startswith("[") and text.endswith("]")


def _convert(hint, text: str):
    """Convert ``text`` to the annotated type of a section field.

    In a union of a scalar and an array type, brackets select the array.
    """
    optional = False
    if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union:
        members = typing.get_args(hint)
        args = [a for a in members if a is not type(None)]
        optional = len(args) < len(members)
        hint = next((a for a in args if (typing.get_origin(a) is tuple) == _bracketed(text)), args[0])
    if optional and _unquote(text) == "":
        return None
    if typing.get_origin(hint) is tuple:
        item = typing.get_args(hint)[0]
        text = text.strip()
        if not _bracketed(text):
            raise ValueError("expected an array in brackets")
        return tuple(_scalar(item, i) for i in _split_items(text[1:-1]))
    return _scalar(hint, text)


def _format(value) -> str:
    if isinstance(value, tuple):
        return "[" + ", ".join(_format(v) for v in value) + "]"
    if isinstance(value, bool):
        raise TypeError("booleans are not part of the schema")
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    return f'"{value}"'


# ---------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------


def _check_expressions(section: str, cls, values: dict, lines: dict, violations: list):
    for key in getattr(cls, "EXPRESSIONS", ()):
        value = values.get(key)
        if value is None:
            continue
        for text in value if isinstance(value, tuple) else (value,):
            if not isinstance(text, str):
                continue
            try:
                parse_expression(text)
            except DomainError as exc:
                violations.append(Violation(lines.get((section, key)), f"{section}.{key}", str(exc)))


def _cross_checks(config: ExperimentConfig, lines: dict, violations: list):
    def add(section, key, constraint):
        violations.append(Violation(lines.get((section, key)), f"{section}.{key}", constraint))

    if config.experiment.seed is None:
        add("experiment", "seed", "is required")
    grid = config.grid
    if grid.forward_nodes is not None and grid.nodes >= 5:
        try:
            ratio = grid.inversion_grid().refinement_ratio(grid.forward_grid())
        except DomainError:
            ratio = 0
        if ratio < 2:
            add("grid", "forward_nodes",
                f"must satisfy forward_nodes - 1 = r (nodes - 1) with integer r ≥ 2 "
                f"(inverse-crime guard; got {grid.forward_nodes} for {grid.nodes})")
    problem = config.problem
    pipeline = config.experiment.pipeline
    if pipeline and config.experiment.problem != PIPELINE_PROBLEMS[pipeline] and ("experiment", "problem") in lines:
        add("experiment", "problem", f"pipeline {pipeline} runs on the {PIPELINE_PROBLEMS[pipeline]} problem")
    if problem == "square" and grid.dimension != 2:
        add("grid", "dimension", "the boundary-damped problem lives on the unit square (dimension = 2)")
    if grid.dimension == 2 and config.experiment.label not in Grid.square(5).labels:
        add("experiment", "label", "unknown boundary label")
    if grid.dimension == 1 and config.experiment.label not in Grid.interval(5).labels:
        add("experiment", "label", "unknown boundary label")
    certify = config.certify
    if certify.modulus and certify.parameter is None:
        add("certify", "parameter", "is required with certify.modulus")


def parse_config(text: str, base_dir: Path | str = ".", seed: int | None = None) -> ExperimentConfig:
    """Validated ExperimentConfig, or ConfigError listing every violation.

    A ``seed`` given here (the --seed flag) replaces the file's experiment.seed.
    """
    violations: list[Violation] = []
    raw: dict[str, dict[str, str]] = {name: {} for name in SECTIONS}
    lines: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]") and "=" not in line:
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                violations.append(Violation(lineno, section, "unknown section"))
                section = ""
            continue
        if "=" not in line:
            violations.append(Violation(lineno, "-", "expected 'key = value'"))
            continue
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if section is None:
            violations.append(Violation(lineno, key, "key outside a [section]"))
            continue
        if section == "":
            continue
        if key in raw[section]:
            violations.append(Violation(lineno, f"{section}.{key}", "duplicate key"))
            continue
        raw[section][key] = value.strip()
        lines[(section, key)] = lineno

    sections = {}
    for name, cls in SECTIONS.items():
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        values = {}
        for key, text_value in raw[name].items():
            where = lines[(name, key)]
            if key not in known:
                violations.append(Violation(where, f"{name}.{key}", "unknown key"))
                continue
            try:
                value = _convert(hints[key], text_value)
            except ValueError as exc:
                violations.append(Violation(where, f"{name}.{key}", f"invalid value '{text_value}': {exc}"))
                continue
            check = getattr(cls, "CHECKS", {}).get(key)
            problem = check(value) if check else None
            if problem:
                violations.append(Violation(where, f"{name}.{key}", problem))
                continue
            values[key] = value
        _check_expressions(name, cls, values, lines, violations)
        try:
            sections[name] = cls(**values)
        except DomainError as exc:
            violations.append(Violation(None, name, str(exc)))
            sections[name] = cls()

    config = ExperimentConfig(**sections, source_text=text, base_dir=Path(base_dir))
    if seed is not None:
        config = config.with_seed(seed)
    _cross_checks(config, lines, violations)
    if violations:
        raise ConfigError(sorted(violations, key=lambda v: (v.line is None, v.line or 0)))
    log.debug("config parsed: %s, pipeline '%s'", config.problem, config.experiment.pipeline)
    return config


def load_config(path: Path | str, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent, seed=seed)


def serialize(config: ExperimentConfig) -> str:
    """Text that parse_config reads back into an equal config; keys left at
    their defaults are omitted."""
    out = []
    for name in SECTIONS:
        section = getattr(config, name)
        out.append(f"[{name}]")
        for f in fields(section):
            value = getattr(section, f.name)
            if value is not None and value != f.default:
                out.append(f"{f.name} = {_format(value)}")
        out.append("")
    return "\n".join(out)
