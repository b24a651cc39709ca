from __future__ import annotations

from typing import Callable

from harnackprop.handlers import analysis, common, dirichlet, propagation

COMMANDS: dict[str, Callable] = {
    "check": analysis.check,
    "fields": analysis.fields,
    "brackets": analysis.brackets,
    "lift": analysis.lift,
    "reach": propagation.reach_command,
    "path": propagation.path_command,
    "solve": dirichlet.solve_command,
    "measure": dirichlet.measure_command,
    "harnack": dirichlet.harnack_command,
    "absorbent": dirichlet.absorbent_command,
}

__all__ = ["COMMANDS", "analysis", "common", "dirichlet", "propagation"]
