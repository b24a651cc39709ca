from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from harnackprop.config import ExperimentConfig
from harnackprop.errors import ConfigError
from harnackprop.services import operator as operators
from harnackprop.services import reach
from harnackprop.services.operator import Box, BoxBall, DomainSpec, OperatorSpec
from harnackprop.utils import tables

logger = logging.getLogger(__name__)

LIFT_INTERVAL = (-1.0, 1.0)


@dataclass(frozen=True, eq=False)
class RunContext:
    config: ExperimentConfig
    base: OperatorSpec
    base_domain: DomainSpec
    op: OperatorSpec
    domain: DomainSpec
    x0: np.ndarray
    out_dir: Path

    @property
    def lifted(self) -> bool:
        return self.config.operator.lift

    @property
    def precision(self) -> int:
        return self.config.output.precision

    @property
    def barrier_axis(self) -> int:
        if self.config.analysis.axis is not None:
            return self.config.analysis.axis
        return self.op.n if self.lifted else 1

    def grid(self) -> reach.Grid:
        return reach.build_grid(self.domain, float(self.config.grid.h))

    def reach_config(self) -> reach.ReachConfig:
        section = self.config.reach
        return reach.ReachConfig(
            dt=section.dt,
            substeps=section.substeps,
            max_iterations=section.max_iterations,
            controls=section.controls,
            combined=section.combined,
            max_hop_steps=section.max_hop_steps,
        )

    def write_csv(self, name: str, headers: list[str], rows) -> Path:
        return tables.write_csv(self.out_dir / f"{name}.csv", headers, rows, self.precision)

    def write_text(self, name: str, lines: list[str]) -> Path:
        return tables.write_text(self.out_dir / f"{name}.txt", lines)


def build_operator(config: ExperimentConfig) -> OperatorSpec:
    section = config.operator
    if section.preset is not None:
        factory = operators.PRESETS.get(section.preset)
        if factory is None:
            raise ConfigError(f"unknown operator preset {section.preset!r}; known: {', '.join(operators.PRESETS)}")
        if section.a or section.b:
            raise ConfigError("operator.preset cannot be combined with operator.a or operator.b")
        return factory()
    entries = {}
    for key, text in section.a.items():
        try:
            i, j = (int(part) for part in key.split(","))
        except ValueError as exc:
            raise ConfigError(f'operator.a key {key!r} must look like "i,j"') from exc
        entries[(i, j)] = text
    return OperatorSpec.from_strings(int(section.n), entries, section.b)


def build_domain(config: ExperimentConfig, n: int) -> DomainSpec:
    section = config.domain
    if section.ball is None:
        domain: DomainSpec = Box(section.box)
    else:
        center = section.ball["center"]
        if center is None:
            center = (0.0,) * (n - len(section.box))
        domain = BoxBall(intervals=section.box, center=tuple(center), radius=section.ball["radius"])
    if domain.dim != n:
        raise ConfigError(f"domain has dimension {domain.dim}, operator has {n}")
    return domain


def build_context(config: ExperimentConfig, out_dir: Path) -> RunContext:
    base = build_operator(config)
    base_domain = build_domain(config, base.n)
    op, domain = base, base_domain
    if config.operator.lift:
        op = operators.lift(base)
        domain = base_domain.extend(LIFT_INTERVAL)
        logger.info("Lifted operator to dimension %d", op.n)

    x0 = np.zeros(op.n) if config.reach.x0 is None else np.asarray(config.reach.x0, dtype=float)
    if config.operator.lift and x0.shape == (base.n,):
        x0 = np.append(x0, 0.0)
    if x0.shape != (op.n,):
        raise ConfigError(f"reach.x0 has {x0.shape[0]} coordinates, operator has {op.n}")
    return RunContext(
        config=config,
        base=base,
        base_domain=base_domain,
        op=op,
        domain=domain,
        x0=x0,
        out_dir=out_dir,
    )
