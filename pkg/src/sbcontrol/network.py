"""Two-stage lossy channel model.

A transmission round has a Bernoulli(q) success flag on the sensor->controller
hop; conditional on success, the controller->actuator hop delays the packet by
``i`` steps with probability ``p_i`` or drops it with probability ``p_inf``.
Unconditionally the packet is usable after ``i`` steps with probability
``q * p_i`` and is lost with probability ``q * p_inf + (1 - q)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

NORMALIZATION_TOL = 1e-12


class Loss(enum.Enum):
    """Explicit marker for packets that never arrive."""

    INFINITE = "infinite"


INFINITE = Loss.INFINITE

Delay = Union[int, Loss]


@dataclass(frozen=True)
class DelayDistribution:
    """Channel law: success probability, conditional delay pmf, dropout mass.

    Delays beyond the stored pmf have probability zero; unbounded-support laws
    enter only through the ``p_inf`` mass.
    """

    q: float
    delay_pmf: tuple[float, ...]
    p_inf: float

    def probability(self, delay: int) -> float:
        """Conditional probability of a finite delay, zero beyond the support."""
        if 0 <= delay < len(self.delay_pmf):
            return self.delay_pmf[delay]
        return 0.0

    def coverage(self, horizon: int) -> float:
        """Conditional mass on delays strictly below ``horizon``."""
        return math.fsum(self.delay_pmf[: max(0, horizon)])


class LinkOutcome(NamedTuple):
    """One transmission round: success flag and (possibly infinite) delay."""

    gamma: int
    tau: Delay


def validate(dist: DelayDistribution) -> None:
    """Check that the law is a well-formed probability distribution.

    Raises ValueError on range errors or when the conditional masses do not
    sum to one within ``NORMALIZATION_TOL``.
    """
    if not 0.0 <= dist.q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {dist.q!r}")
    if len(dist.delay_pmf) == 0:
        raise ValueError("delay_pmf must contain at least one entry")
    for i, mass in enumerate(dist.delay_pmf):
        if not 0.0 <= mass <= 1.0:
            raise ValueError(f"delay_pmf[{i}] must lie in [0, 1], got {mass!r}")
    if not 0.0 <= dist.p_inf <= 1.0:
        raise ValueError(f"p_inf must lie in [0, 1], got {dist.p_inf!r}")
    total = math.fsum(list(dist.delay_pmf) + [dist.p_inf])
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"delay_pmf and p_inf must sum to 1, got {total!r}")


def sample_outcome(dist: DelayDistribution, rng: np.random.Generator) -> LinkOutcome:
    """Draw one transmission round.

    Consumes one uniform for the success flag and, on success, a second one
    for the delay, so identical generator states reproduce identical streams.
    """
    if rng.random() >= dist.q:
        return LinkOutcome(0, INFINITE)
    u = rng.random()
    acc = 0.0
    for delay, mass in enumerate(dist.delay_pmf):
        acc += mass
        if u < acc:
            return LinkOutcome(1, delay)
    return LinkOutcome(1, INFINITE)


def unconditional_tau_pmf(dist: DelayDistribution) -> dict[Delay, float]:
    """Unconditional delay law: ``i -> q * p_i`` plus the pooled loss mass."""
    validate(dist)
    pmf: dict[Delay, float] = {i: dist.q * p for i, p in enumerate(dist.delay_pmf)}
    pmf[INFINITE] = dist.q * dist.p_inf + (1.0 - dist.q)
    return pmf
