"""Lifted closed-loop recursion used as a trajectory oracle.

The loop state is augmented with the still-usable tails of previously
generated input sequences:

    theta(k) = (x(k), U(k)),
    U(k) stacks, for age i = 1..N-1, the blocks of the sequence generated at
    time k-i that target times k, k+1, ..., k-i+N-1 (length N-i blocks).

One step shifts every tail down by one age (dropping the block it just
outgrew), injects the tail of the freshly generated sequence at age 1, and
feeds the plant the block selected by the current buffer length: the head of
the age-(N - lam) segment when 0 < lam < N, the head of the fresh sequence
when lam == N, and zero when lam == 0.

The stored depth is N-1 regardless of the largest supported delay: an
already-delivered packet can stay the newest one for up to N-1 ticks, so
every age up to N-1 is reachable whenever the channel can deliver at all.
Selector indices are derived from this stacking and validated behaviorally
against the actuator buffer, not taken from any closed-form index expression.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .actuator import lambda_trace
from .network import DelayDistribution, LinkOutcome, validate
from .plant import PlantBundle, rollout_sequence, step


def n_bar(dist: DelayDistribution, horizon: int) -> int:
    """Largest delay within the horizon that the channel realizes.

    Returns -1 when no finite delay up to ``horizon`` has positive
    unconditional probability (the loop then never closes).
    """
    validate(dist)
    usable = [i for i in range(horizon + 1) if dist.q * dist.probability(i) > 0.0]
    return max(usable) if usable else -1


@dataclass(frozen=True)
class SelectorTable:
    """Index maps routing stored blocks to the plant input and through the shift."""

    horizon: int
    input_dim: int
    n_bar: int
    depth: int  # number of stored tail segments (ages 1..depth)
    nu: int  # total stored blocks
    seg_starts: tuple[int, ...]  # block row where the age-i segment begins

    def segment_length(self, age: int) -> int:
        return self.horizon - age

    def pick(self, lam: int) -> int:
        """Block row of the input applied now, for 0 < lam < horizon."""
        if not 0 < lam < self.horizon:
            raise ValueError(f"pick is defined for 0 < lam < {self.horizon}, got {lam}")
        age = self.horizon - lam
        if age > self.depth:
            raise ValueError(f"no stored segment of age {age} (depth {self.depth})")
        return self.seg_starts[age - 1]

    # Dense 0/1 forms, reconstructed for tests; the step itself only routes.
    def dense_g(self, lam: int) -> np.ndarray:
        p = self.input_dim
        g = np.zeros((p, self.nu * p))
        if 0 < lam < self.horizon and self.depth > 0:
            row = self.pick(lam)
            g[:, row * p : (row + 1) * p] = np.eye(p)
        return g

    def dense_e(self, lam: int) -> np.ndarray:
        p = self.input_dim
        e = np.zeros((p, self.horizon * p))
        if lam == self.horizon:
            e[:, :p] = np.eye(p)
        return e

    def dense_shift(self) -> tuple[np.ndarray, np.ndarray]:
        """Shift matrix over the stored blocks and the fresh-sequence injection."""
        p = self.input_dim
        shift = np.zeros((self.nu * p, self.nu * p))
        inject = np.zeros((self.nu * p, self.horizon * p))
        for age in range(1, self.depth):
            src = self.seg_starts[age - 1]
            dst = self.seg_starts[age]
            for t in range(self.segment_length(age + 1)):
                r = (dst + t) * p
                c = (src + 1 + t) * p
                shift[r : r + p, c : c + p] = np.eye(p)
        if self.depth >= 1:
            for t in range(self.horizon - 1):
                r = t * p
                c = (t + 1) * p
                inject[r : r + p, c : c + p] = np.eye(p)
        return shift, inject


def build_selectors(horizon: int, usable_n_bar: int, input_dim: int) -> SelectorTable:
    """Build the routing table; ``usable_n_bar < 0`` yields the open-loop model."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    if usable_n_bar > horizon:
        raise ValueError(f"n_bar {usable_n_bar} exceeds the horizon {horizon}")
    depth = horizon - 1 if usable_n_bar >= 0 else 0
    seg_starts = []
    offset = 0
    for age in range(1, depth + 1):
        seg_starts.append(offset)
        offset += horizon - age
    return SelectorTable(horizon, input_dim, usable_n_bar, depth, offset, tuple(seg_starts))


@dataclass(frozen=True)
class LiftedState:
    """Plant state plus stored tails; ``valid[i]`` marks ages holding a real
    generated sequence rather than zero fill."""

    x: np.ndarray
    stored: np.ndarray  # (nu, input_dim)
    valid: tuple[bool, ...]


def initial_lifted_state(x0: np.ndarray, table: SelectorTable) -> LiftedState:
    return LiftedState(
        x=np.asarray(x0, dtype=float),
        stored=np.zeros((table.nu, table.input_dim)),
        valid=tuple([False] * table.depth),
    )


def lifted_step(
    state: LiftedState,
    lam: int,
    u_seq: Optional[np.ndarray],
    table: SelectorTable,
    bundle: PlantBundle,
) -> LiftedState:
    """One jump of the lifted recursion under buffer length ``lam``.

    ``u_seq`` is the sequence generated this tick, or None when the sensor
    link failed; a missing sequence shifts zero fill into the age-1 slot.
    """
    n = table.horizon
    p = table.input_dim
    if lam < 0 or lam > n:
        raise ValueError(f"lam must lie in 0..{n}, got {lam}")
    if lam == 0:
        u = np.zeros(p)
    elif lam == n:
        if u_seq is None:
            raise ValueError("lam == horizon requires a freshly generated sequence")
        u = u_seq[0]
    else:
        age = n - lam
        if not state.valid[age - 1]:
            raise RuntimeError(f"buffer length {lam} selects the age-{age} slot, which holds no sequence")
        u = state.stored[table.pick(lam)]
    x_next = step(bundle.plant, state.x, u)

    stored_next = np.zeros_like(state.stored)
    valid_next = [False] * table.depth
    if table.depth >= 1:
        if u_seq is not None:
            stored_next[0 : n - 1] = u_seq[1:]
            valid_next[0] = True
        for age in range(1, table.depth):
            src = table.seg_starts[age - 1]
            dst = table.seg_starts[age]
            length = table.segment_length(age + 1)
            stored_next[dst : dst + length] = state.stored[src + 1 : src + 1 + length]
            valid_next[age] = state.valid[age - 1]
    return LiftedState(x_next, stored_next, tuple(valid_next))


def run_lifted(
    bundle: PlantBundle,
    channel: DelayDistribution,
    horizon: int,
    x0: np.ndarray,
    outcomes: Sequence[LinkOutcome],
) -> np.ndarray:
    """Drive the lifted recursion over a realized outcome stream.

    Buffer lengths come from the direct trace recursion; sequences are rolled
    out from the lifted plant state, so any bookkeeping divergence from the
    operational loop shows up as a state deviation.
    """
    table = build_selectors(horizon, n_bar(channel, horizon), bundle.plant.input_dim)
    lams = lambda_trace(outcomes, horizon)
    state = initial_lifted_state(x0, table)
    xs = np.empty((len(outcomes) + 1, bundle.plant.state_dim))
    xs[0] = state.x
    for k, outcome in enumerate(outcomes):
        u_seq = None
        if outcome.gamma == 1:
            u_seq = rollout_sequence(bundle.plant, bundle.law, state.x, horizon)
        state = lifted_step(state, lams[k], u_seq, table, bundle)
        xs[k + 1] = state.x
    return xs


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_deviation: float
    num_runs: int
    steps: int


def equivalence_check(cfg, num_runs: int, steps: int) -> EquivalenceReport:
    """Replay operational episodes through the lifted model and compare states.

    Both paths see identical realized outcomes and compute inputs through the
    same plant calls, so the expected deviation is exactly zero; any nonzero
    value indicates a protocol or indexing bug.
    """
    from .sim import run_episode  # local import; sim builds on this module's peers

    cfg = replace(cfg, steps=steps)
    worst = 0.0
    for run in range(num_runs):
        trace = run_episode(cfg, episode=run)
        outcomes = [LinkOutcome(g, t) for g, t in zip(trace.gammas, trace.taus)]
        xs = run_lifted(cfg.bundle, cfg.channel, cfg.horizon, trace.states[0], outcomes)
        dev = float(np.max(np.abs(xs[: len(trace.states)] - trace.states)))
        worst = max(worst, dev)
    return EquivalenceReport(worst, num_runs, steps)
