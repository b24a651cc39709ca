from __future__ import annotations

import logging
from typing import Callable

import numpy as np
from scipy.stats import qmc

from harnackprop.errors import PreconditionError

logger = logging.getLogger(__name__)


def halton_box(lower: np.ndarray, upper: np.ndarray, count: int, *, skip: int = 1) -> np.ndarray:
    """Deterministic Halton points in the box, shape ``(count, d)``.

    The first Halton point is the lower corner, which is never inside an open
    domain, so it is skipped by default.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    sampler = qmc.Halton(d=lower.shape[0], scramble=False)
    if skip:
        sampler.fast_forward(skip)
    unit = sampler.random(count)
    return qmc.scale(unit, lower, upper)


def halton_filtered(
    lower: np.ndarray,
    upper: np.ndarray,
    count: int,
    keep: Callable[[np.ndarray], np.ndarray],
    *,
    max_rounds: int = 20,
) -> np.ndarray:
    """First ``count`` Halton points of the box accepted by ``keep``."""
    batch = max(2 * count, 64)
    for _ in range(max_rounds):
        points = halton_box(lower, upper, batch)
        accepted = points[keep(points)]
        if accepted.shape[0] >= count:
            return accepted[:count]
        batch *= 2
    if accepted.shape[0] == 0:
        raise PreconditionError(f"no sample points fall inside the domain after {max_rounds} rounds")
    logger.warning("Only %d of %d sample points fall inside the domain", accepted.shape[0], count)
    return accepted
