"""Strict YAML run configuration.

Grammar: nested mappings of scalars and lists.  Top-level sections are
``problem``, ``grid``, ``ensemble``, ``basis``, ``solver``, ``certification``,
``flow``, ``lemmas`` and ``output``; every key is checked and unknown keys are
rejected with their dotted path and line number.
"""
from __future__ import annotations

import dataclasses
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .presets import REGISTRY, PresetError, build_preset

SUBCOMMANDS = ("solve-bsvie", "solve-system", "check-assumptions", "verify-lemmas", "flow-check", "oracle-compare")
DUMPS = ("ensemble", "family", "trace", "policy")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-6`` style floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?$|^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$"),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class ProblemConfig:
    preset: str = "zero"
    params: dict = field(default_factory=dict)


@dataclass
class GridConfig:
    horizon: float = 1.0
    steps: int = 16


@dataclass
class EnsembleConfig:
    n_paths: int = 10_000
    seed: int = 0
    x0: float = 0.0
    sigma: float = 1.0
    tree: bool = False


@dataclass
class BasisConfig:
    kind: str = "poly"
    degree: int = 3
    n_bins: int = 16


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 50
    scheme: str = "explicit"
    variant: str = "frozen"
    truncation: typing.Optional[float] = None


@dataclass
class CertificationConfig:
    kappa: typing.Optional[float] = None
    eps: typing.Optional[typing.List[float]] = None
    gamma: float = 0.5
    c: typing.Optional[float] = None
    radius_sq: typing.Optional[float] = None
    mode: typing.Optional[str] = None


@dataclass
class FlowConfig:
    pairs: typing.Optional[typing.List[typing.List[int]]] = None


@dataclass
class LemmaConfig:
    resolution: int = 1000


@dataclass
class OutputConfig:
    directory: str = "out"
    dumps: typing.List[str] = field(default_factory=lambda: ["ensemble", "trace", "policy"])


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    certification: CertificationConfig = field(default_factory=CertificationConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    lemmas: LemmaConfig = field(default_factory=LemmaConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    subcommand: typing.Optional[str] = None
    source: typing.Optional[str] = None

    @property
    def dimension(self) -> int:
        """Dimension of the solution, read off the preset."""
        p = self.problem.params
        if self.problem.preset == "game":
            return int(p.get("players", REGISTRY["game"].defaults["players"]))
        if self.problem.preset == "ti-control":
            return 2
        return 1

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("source")
        out.pop("subcommand")
        return out


_SECTION_TYPES = {
    "problem": ProblemConfig,
    "grid": GridConfig,
    "ensemble": EnsembleConfig,
    "basis": BasisConfig,
    "solver": SolverConfig,
    "certification": CertificationConfig,
    "flow": FlowConfig,
    "lemmas": LemmaConfig,
    "output": OutputConfig,
}


def _key_lines(node, prefix: str = "") -> dict:
    """Map dotted key paths to 1-based line numbers of a composed YAML tree."""
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            lines[path] = k.start_mark.line + 1
            lines.update(_key_lines(v, path))
    return lines


def _where(path: str, lines: dict) -> str:
    line = lines.get(path)
    return f"'{path}'" + (f" (line {line})" if line else "")


def _coerce(value, tp, path: str, lines: dict):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path, lines)
    if origin in (list, typing.List):
        if not isinstance(value, list):
            raise ConfigError(f"{_where(path, lines)} must be a list")
        (inner,) = typing.get_args(tp) or (object,)
        return [_coerce(v, inner, f"{path}[{i}]", lines) for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{_where(path, lines)} must be true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{_where(path, lines)} must be an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{_where(path, lines)} must be a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{_where(path, lines)} must be a string")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{_where(path, lines)} must be a mapping")
        return value
    return value


def _section(cls, raw, name: str, lines: dict):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{_where(name, lines)} must be a mapping")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key {_where(f'{name}.{key}', lines)}")
    values = {k: _coerce(v, hints[k], f"{name}.{k}", lines) for k, v in raw.items()}
    return cls(**values)


def _validate(cfg: RunConfig, lines: dict) -> None:
    def need(cond: bool, path: str, what: str):
        if not cond:
            raise ConfigError(f"{_where(path, lines)} {what}")

    need(cfg.grid.horizon > 0, "grid.horizon", "must be positive")
    need(cfg.grid.steps > 0, "grid.steps", "must be positive")
    need(cfg.ensemble.n_paths > 0, "ensemble.n_paths", "must be positive")
    need(cfg.ensemble.seed >= 0, "ensemble.seed", "must be non-negative")
    need(cfg.ensemble.sigma > 0, "ensemble.sigma", "must be positive")
    need(cfg.basis.kind in ("poly", "bins", "exact"), "basis.kind", "must be one of poly, bins, exact")
    need(cfg.basis.degree >= 0, "basis.degree", "must be non-negative")
    need(cfg.basis.n_bins > 0, "basis.n_bins", "must be positive")
    need(cfg.solver.tol > 0, "solver.tol", "must be positive")
    need(cfg.solver.max_iter >= 1, "solver.max_iter", "must be at least 1")
    need(cfg.solver.scheme in ("explicit", "implicit"), "solver.scheme", "must be explicit or implicit")
    need(cfg.solver.variant in ("frozen", "sequential"), "solver.variant", "must be frozen or sequential")
    need(cfg.solver.truncation is None or cfg.solver.truncation > 0, "solver.truncation", "must be positive")
    cert = cfg.certification
    need(cert.kappa is None or cert.kappa >= 1, "certification.kappa", "must be at least 1")
    need(cert.eps is None or all(e > 0 for e in cert.eps), "certification.eps", "entries must be positive")
    need(cert.gamma > 0, "certification.gamma", "must be positive")
    need(cert.c is None or cert.c >= 0, "certification.c", "must be non-negative")
    need(cert.radius_sq is None or cert.radius_sq > 0, "certification.radius_sq", "must be positive")
    need(cert.mode in (None, "lq", "quadratic"), "certification.mode", "must be lq or quadratic")
    if cfg.flow.pairs is not None:
        for k, pair in enumerate(cfg.flow.pairs):
            need(len(pair) == 2 and 0 <= pair[0] < pair[1] <= cfg.grid.steps, f"flow.pairs[{k}]", "must be [a, b] with 0 <= a < b <= steps")
    need(cfg.lemmas.resolution >= 100, "lemmas.resolution", "must be at least 100")
    for k, d in enumerate(cfg.output.dumps):
        need(d in DUMPS, f"output.dumps[{k}]", f"must be one of {', '.join(DUMPS)}")
    if cfg.ensemble.tree:
        need(cfg.grid.steps <= 10, "grid.steps", "must be at most 10 for tree ensembles")
    try:
        build_preset(cfg.problem.preset, cfg.problem.params, cfg.grid.horizon)
    except PresetError as exc:
        path = "problem.preset" if cfg.problem.preset not in REGISTRY else "problem.params"
        raise ConfigError(f"{_where(path, lines)}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where('problem.params', lines)}: {exc}") from None


def parse_config_text(text: str, source: str | None = None) -> RunConfig:
    try:
        node = yaml.compose(text, Loader=_Loader)
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"malformed YAML{where}: {getattr(exc, 'problem', exc)}") from None
    lines = _key_lines(node) if node is not None else {}
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("the configuration must be a mapping of sections")
    for key in raw:
        if key not in _SECTION_TYPES:
            raise ConfigError(f"unknown key {_where(str(key), lines)}")
    sections = {name: _section(cls, raw.get(name), name, lines) for name, cls in _SECTION_TYPES.items()}
    cfg = RunConfig(**sections, source=source)
    _validate(cfg, lines)
    return cfg


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file {str(path)!r} does not exist")
    return parse_config_text(path.read_text(), source=str(path))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
