from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

from harnackprop.errors import ConfigError, ParseError
from harnackprop.utils import expr


@dataclass(frozen=True)
class OperatorConfig:
    preset: str | None = None
    n: int | None = None
    a: dict[str, str] = field(default_factory=dict)
    b: list[str] = field(default_factory=list)
    lift: bool = False


@dataclass(frozen=True)
class DomainConfig:
    box: tuple[tuple[float, float], ...] = ()
    ball: dict[str, Any] | None = None


@dataclass(frozen=True)
class GridConfig:
    h: float | None = None


@dataclass(frozen=True)
class ReachSection:
    x0: tuple[float, ...] | None = None
    dt: float | None = None
    substeps: int = 4
    max_iterations: int = 100_000
    controls: tuple[float, ...] = (1.0,)
    combined: bool = False
    max_hop_steps: int = 32


@dataclass(frozen=True)
class PathConfig:
    mode: str = "extract"
    target: tuple[float, ...] | None = None
    sample_step: float = 1e-3
    tol: float | None = None


@dataclass(frozen=True)
class PdeConfig:
    tol: float = 1e-10
    maxiter: int = 1_000_000
    method: str = "relaxation"
    boundary: dict[str, Any] = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    node: tuple[float, ...] | None = None


@dataclass(frozen=True)
class HarnackConfig:
    K: tuple[tuple[float, float], ...] = ()
    eps: float = 1e-12


@dataclass(frozen=True)
class AnalysisConfig:
    samples: int = 200
    depth: int = 2
    rank_points: int = 20
    axis: int | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    precision: int = 12


@dataclass(frozen=True)
class ExperimentConfig:
    operator: OperatorConfig
    domain: DomainConfig
    grid: GridConfig
    reach: ReachSection
    path: PathConfig
    pde: PdeConfig
    harnack: HarnackConfig
    analysis: AnalysisConfig
    output: OutputConfig
    log_level: str = "INFO"


_SECTIONS = {
    "operator": OperatorConfig,
    "domain": DomainConfig,
    "grid": GridConfig,
    "reach": ReachSection,
    "path": PathConfig,
    "pde": PdeConfig,
    "harnack": HarnackConfig,
    "analysis": AnalysisConfig,
    "output": OutputConfig,
}
BOUNDARY_KINDS = ("constant", "expression", "indicator", "support")
PATH_MODES = ("extract", "mumford", "ou")


def _key_lines(text: str) -> dict[str, int]:
    """1-based line of every section and section key, as ``section`` / ``section.key``."""
    root = yaml.compose(text, Loader=yaml.SafeLoader)
    lines: dict[str, int] = {}
    if not isinstance(root, yaml.MappingNode):
        return lines
    for key, value in root.value:
        lines[str(key.value)] = key.start_mark.line + 1
        if isinstance(value, yaml.MappingNode):
            for sub, _ in value.value:
                lines[f"{key.value}.{sub.value}"] = sub.start_mark.line + 1
    return lines


def _load_yaml(path: Path) -> tuple[dict[str, Any], dict[str, int]]:
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        text = path.read_text(encoding="utf-8")
        data = yaml.safe_load(text) or {}
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"invalid YAML in {path}{where}: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping of sections")
    return data, lines


def _located(names: Sequence[str], prefix: str, lines: dict[str, int]) -> str:
    parts = []
    for name in names:
        line = lines.get(f"{prefix}{name}")
        parts.append(f"{name} (line {line})" if line is not None else str(name))
    return ", ".join(parts)


def apply_overrides(data: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Apply ``section.key=value`` overrides; values are read as YAML scalars or lists."""
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} must look like section.key=value")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r} has an unreadable value") from exc
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override {item!r}: {part} is not a section")
            node = child
        node[parts[-1]] = value
    return data


def constant(value: Any, what: str) -> float:
    """A number, or a constant expression such as ``3*pi/2``."""
    if isinstance(value, bool):
        raise ConfigError(f"{what} must be a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(expr.evaluate(expr.parse(value, 0), ()))
        except ParseError as exc:
            raise ConfigError(f"{what}: {exc}") from exc
    raise ConfigError(f"{what} must be a number, got {value!r}")


def _point(value: Any, what: str) -> tuple[float, ...] | None:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{what} must be a list of numbers")
    return tuple(constant(v, what) for v in value)


def _intervals(value: Any, what: str) -> tuple[tuple[float, float], ...]:
    if value in (None, []):
        return ()
    if not isinstance(value, (list, tuple)) or not all(
        isinstance(pair, (list, tuple)) and len(pair) == 2 for pair in value
    ):
        raise ConfigError(f"{what} must be a list of [lo, hi] pairs")
    return tuple((constant(lo, what), constant(hi, what)) for lo, hi in value)


def _section(cls: type, name: str, raw: Any, lines: dict[str, int]) -> Any:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {_located(unknown, name + '.', lines)}")
    return raw


def _operator(raw: dict[str, Any]) -> OperatorConfig:
    a = raw.get("a") or {}
    if not isinstance(a, dict):
        raise ConfigError('operator.a must map "i,j" to an expression')
    b = raw.get("b") or []
    if not isinstance(b, list):
        raise ConfigError("operator.b must be a list of expressions")
    n = raw.get("n")
    if n is not None:
        try:
            n = int(n)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"operator.n must be an integer, got {n!r}") from exc
        if n < 1:
            raise ConfigError(f"operator.n must be positive, got {n}")
    return OperatorConfig(
        preset=raw.get("preset"),
        n=n,
        a={str(k): str(v) for k, v in a.items()},
        b=[str(v) for v in b],
        lift=bool(raw.get("lift", False)),
    )


def _domain(raw: dict[str, Any]) -> DomainConfig:
    ball = raw.get("ball")
    if ball is not None:
        if not isinstance(ball, dict) or set(ball) - {"center", "radius"} or "radius" not in ball:
            raise ConfigError("domain.ball needs radius and an optional center")
        ball = {"center": _point(ball.get("center"), "domain.ball.center"), "radius": constant(ball["radius"], "domain.ball.radius")}
    return DomainConfig(box=_intervals(raw.get("box"), "domain.box"), ball=ball)


def _boundary(raw: Any) -> dict[str, Any]:
    if not isinstance(raw, dict) or raw.get("kind") not in BOUNDARY_KINDS:
        raise ConfigError(f"pde.boundary.kind must be one of {', '.join(BOUNDARY_KINDS)}")
    boundary = dict(raw)
    kind = boundary["kind"]
    if kind == "constant":
        boundary["value"] = constant(boundary.get("value", 1.0), "pde.boundary.value")
    elif kind == "expression":
        if "expr" not in boundary:
            raise ConfigError("pde.boundary.expr is required for kind expression")
        boundary["expr"] = str(boundary["expr"])
    elif kind == "indicator":
        boundary["box"] = _intervals(boundary.get("box"), "pde.boundary.box")
        boundary["inside"] = constant(boundary.get("inside", 1.0), "pde.boundary.inside")
        boundary["outside"] = constant(boundary.get("outside", 0.0), "pde.boundary.outside")
    return boundary


def _from_dict(data: dict[str, Any], lines: dict[str, int] | None = None) -> ExperimentConfig:
    lines = lines or {}
    unknown = sorted(set(data) - set(_SECTIONS) - {"log_level"})
    if unknown:
        raise ConfigError(f"unknown sections: {_located(unknown, '', lines)}")
    raw = {name: _section(cls, name, data.get(name), lines) for name, cls in _SECTIONS.items()}

    operator = _operator(raw["operator"])
    if operator.preset is None and operator.n is None:
        raise ConfigError("operator.n is required unless operator.preset is given")
    domain = _domain(raw["domain"])
    if not domain.box:
        raise ConfigError("domain.box is required")
    if raw["grid"].get("h") is None:
        raise ConfigError("grid.h is required")

    reach = raw["reach"]
    path = raw["path"]
    if path.get("mode", "extract") not in PATH_MODES:
        raise ConfigError(f"path.mode must be one of {', '.join(PATH_MODES)}")
    pde = raw["pde"]
    harnack = raw["harnack"]
    analysis = raw["analysis"]
    output = raw["output"]
    try:
        return ExperimentConfig(
            operator=operator,
            domain=domain,
            grid=GridConfig(h=constant(raw["grid"]["h"], "grid.h")),
            reach=ReachSection(
                x0=_point(reach.get("x0"), "reach.x0"),
                dt=constant(reach["dt"], "reach.dt") if reach.get("dt") is not None else None,
                substeps=int(reach.get("substeps", 4)),
                max_iterations=int(reach.get("max_iterations", 100_000)),
                controls=_point(reach.get("controls"), "reach.controls") or (1.0,),
                combined=bool(reach.get("combined", False)),
                max_hop_steps=int(reach.get("max_hop_steps", 32)),
            ),
            path=PathConfig(
                mode=str(path.get("mode", "extract")),
                target=_point(path.get("target"), "path.target"),
                sample_step=float(path.get("sample_step", 1e-3)),
                tol=float(path["tol"]) if path.get("tol") is not None else None,
            ),
            pde=PdeConfig(
                tol=float(pde.get("tol", 1e-10)),
                maxiter=int(pde.get("maxiter", 1_000_000)),
                method=str(pde.get("method", "relaxation")),
                boundary=_boundary(pde.get("boundary", {"kind": "constant", "value": 1.0})),
                node=_point(pde.get("node"), "pde.node"),
            ),
            harnack=HarnackConfig(
                K=_intervals(harnack.get("K"), "harnack.K"),
                eps=float(harnack.get("eps", 1e-12)),
            ),
            analysis=AnalysisConfig(
                samples=int(analysis.get("samples", 200)),
                depth=int(analysis.get("depth", 2)),
                rank_points=int(analysis.get("rank_points", 20)),
                axis=int(analysis["axis"]) if analysis.get("axis") is not None else None,
            ),
            output=OutputConfig(
                directory=str(output.get("directory", "out")),
                precision=int(output.get("precision", 12)),
            ),
            log_level=str(data.get("log_level", "INFO")).upper(),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value: {exc}") from exc


def load_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    env = os.environ
    config_path = Path(path if path is not None else env.get("HARNACKPROP_CONFIG", "config.yml"))
    data, lines = _load_yaml(config_path)
    config = _from_dict(apply_overrides(data, overrides), lines)

    level = env.get("LOG_LEVEL")
    out = env.get("HARNACKPROP_OUT")
    if level or out:
        config = dataclasses.replace(
            config,
            log_level=level.upper() if level else config.log_level,
            output=dataclasses.replace(config.output, directory=out) if out else config.output,
        )
    return config
