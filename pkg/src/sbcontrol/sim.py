"""Monte Carlo engine: seeded closed-loop episodes and statistical oracles.

Episodes are independent units of work; the generator for episode ``e`` is
derived from ``(master seed, stream, e)`` so results do not depend on worker
count or execution order.  Within one tick the order of events is fixed:
sample the channel, generate and enqueue a sequence if the sensor hop
succeeded, deliver due packets, read the buffer, then step the plant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .actuator import ActuatorBuffer, ControlPacket, lambda_trace
from .analysis import MarkovChainModel, ReturnTimeDistribution, omega, transition_matrix
from .network import INFINITE, Delay, DelayDistribution, LinkOutcome, sample_outcome, validate
from .plant import PlantBundle, rollout_sequence, step

DIVERGENCE_GUARD = 1e12

# Entropy namespaces: regular episodes live in stream 0, long-run oracle
# samplers in stream 1, drift episodes far above the Monte Carlo range.
_EPISODE_SPACE = 0
_ORACLE_SPACE = 1
_TRANSITION_TAG = 0
_RETURN_TAG = 1
_DRIFT_EPISODE_BASE = 1_000_000_000


@dataclass(frozen=True)
class EpisodeConfig:
    bundle: PlantBundle
    channel: DelayDistribution
    horizon: int
    steps: int
    seed: int
    init_state_std: float = 1.0


def _validate_config(cfg: EpisodeConfig) -> None:
    validate(cfg.channel)
    if cfg.horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {cfg.horizon}")
    if cfg.steps < 1:
        raise ValueError(f"steps must be >= 1, got {cfg.steps}")
    if cfg.init_state_std < 0.0:
        raise ValueError(f"init_state_std must be >= 0, got {cfg.init_state_std}")


@dataclass(frozen=True)
class SimulationTrace:
    """Per-step record of one episode.

    ``states`` has one more row than the other columns (the terminal state);
    a diverged episode is truncated at the step that tripped the guard.
    """

    states: np.ndarray  # (recorded + 1, state_dim)
    inputs: np.ndarray  # (recorded, input_dim)
    gammas: list[int]
    taus: list[Delay]
    buffer_lengths: list[int]
    origins: list[Optional[int]]
    seed: int
    episode: int
    steps_requested: int
    diverged: bool

    @property
    def recorded(self) -> int:
        return len(self.inputs)


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng((seed, _EPISODE_SPACE, episode))


def run_episode(cfg: EpisodeConfig, episode: int = 0, x0: Optional[np.ndarray] = None) -> SimulationTrace:
    """Run one seeded closed-loop episode.

    The initial state is drawn from the configured zero-mean Gaussian unless
    ``x0`` pins it (the draw is then skipped, shifting the stream).
    """
    _validate_config(cfg)
    plant = cfg.bundle.plant
    rng = episode_rng(cfg.seed, episode)
    if x0 is None:
        x = rng.normal(0.0, cfg.init_state_std, plant.state_dim)
    else:
        x = np.array(x0, dtype=float)
    buf = ActuatorBuffer(cfg.horizon, plant.input_dim)
    pending: dict[int, list[ControlPacket]] = {}
    states = np.empty((cfg.steps + 1, plant.state_dim))
    inputs = np.empty((cfg.steps, plant.input_dim))
    gammas: list[int] = []
    taus: list[Delay] = []
    lams: list[int] = []
    origins: list[Optional[int]] = []
    diverged = False
    for k in range(cfg.steps):
        outcome = sample_outcome(cfg.channel, rng)
        if outcome.gamma == 1:
            payload = rollout_sequence(plant, cfg.bundle.law, x, cfg.horizon)
            if outcome.tau is not INFINITE:
                due = k + outcome.tau
                pending.setdefault(due, []).append(ControlPacket(k, payload, due))
        buf.ingest(k, pending.pop(k, ()))
        readout = buf.readout(k)
        states[k] = x
        inputs[k] = readout.u
        gammas.append(outcome.gamma)
        taus.append(outcome.tau)
        lams.append(readout.lam)
        origins.append(readout.active_origin)
        x = step(plant, x, readout.u)
        if not np.all(np.isfinite(x)) or float(np.linalg.norm(x)) > DIVERGENCE_GUARD:
            diverged = True
            states[k + 1] = x
            states = states[: k + 2]
            inputs = inputs[: k + 1]
            break
    if not diverged:
        states[cfg.steps] = x
    return SimulationTrace(
        states=states,
        inputs=inputs,
        gammas=gammas,
        taus=taus,
        buffer_lengths=lams,
        origins=origins,
        seed=cfg.seed,
        episode=episode,
        steps_requested=cfg.steps,
        diverged=diverged,
    )


def episode_cost(trace: SimulationTrace) -> float:
    """Average squared state norm over the recorded steps (terminal row excluded)."""
    span = trace.recorded
    total = math.fsum(float(np.dot(row, row)) for row in trace.states[:span])
    return total / trace.steps_requested


@dataclass(frozen=True)
class CostReport:
    costs: np.ndarray
    diverged: np.ndarray
    mean_cost: float
    stderr_cost: Optional[float]

    @property
    def num_episodes(self) -> int:
        return len(self.costs)

    @property
    def all_diverged(self) -> bool:
        return bool(self.diverged.all())


def monte_carlo(cfg: EpisodeConfig, num_episodes: int) -> CostReport:
    """Independent seeded episodes; mean and standard error of the cost.

    Aggregation uses exact compensated summation, so the result is identical
    for any evaluation order of the episodes.  Diverged episodes are flagged
    and excluded from the aggregate.
    """
    if num_episodes < 1:
        raise ValueError("num_episodes must be >= 1")
    costs = np.empty(num_episodes)
    diverged = np.zeros(num_episodes, dtype=bool)
    for e in range(num_episodes):
        trace = run_episode(cfg, episode=e)
        costs[e] = episode_cost(trace)
        diverged[e] = trace.diverged
    kept = [float(c) for c, d in zip(costs, diverged) if not d]
    if not kept:
        return CostReport(costs, diverged, float("nan"), None)
    mean = math.fsum(kept) / len(kept)
    stderr = None
    if len(kept) >= 2:
        var = math.fsum((c - mean) ** 2 for c in kept) / (len(kept) - 1)
        stderr = math.sqrt(var / len(kept))
    return CostReport(costs, diverged, mean, stderr)


@dataclass(frozen=True)
class TransitionCounts:
    counts: np.ndarray  # (N+1, N+1) integer transition counts
    frequencies: np.ndarray  # row-normalized where visited, zero rows otherwise
    row_exits: np.ndarray
    low_confidence_rows: tuple[int, ...]  # visited rows with < 1000 exits


def empirical_transition_counts(cfg: EpisodeConfig, total_steps: int) -> TransitionCounts:
    """Conditional transition frequencies of the buffer length over a long run."""
    _validate_config(cfg)
    if total_steps < 2:
        raise ValueError("total_steps must be >= 2")
    rng = np.random.default_rng((cfg.seed, _ORACLE_SPACE, _TRANSITION_TAG))
    outcomes = [sample_outcome(cfg.channel, rng) for _ in range(total_steps)]
    lams = lambda_trace(outcomes, cfg.horizon)
    n = cfg.horizon
    counts = np.zeros((n + 1, n + 1), dtype=np.int64)
    for a, b in zip(lams[:-1], lams[1:]):
        counts[a, b] += 1
    exits = counts.sum(axis=1)
    freqs = np.zeros((n + 1, n + 1))
    for i in range(n + 1):
        if exits[i] > 0:
            freqs[i] = counts[i] / exits[i]
    low = tuple(int(i) for i in range(n + 1) if 0 < exits[i] < 1000)
    return TransitionCounts(counts, freqs, exits, low)


def transition_error(observed: TransitionCounts, model: MarkovChainModel) -> float:
    """Largest entrywise deviation from the analytic law, over visited rows."""
    worst = 0.0
    for i in range(model.horizon + 1):
        if observed.row_exits[i] > 0:
            worst = max(worst, float(np.max(np.abs(observed.frequencies[i] - model.full[i]))))
    return worst


@dataclass(frozen=True)
class ReturnHistogram:
    counts: dict[int, int]
    collected: int
    steps_used: int
    partial: bool


def empirical_return_times(
    cfg: EpisodeConfig, num_returns: int, max_steps: Optional[int] = None
) -> ReturnHistogram:
    """Histogram of gaps between consecutive empty-buffer times.

    Requires a law under which the empty state recurs (positive probability
    of a tick without a usable arrival); hitting ``max_steps`` first yields a
    flagged partial histogram.
    """
    _validate_config(cfg)
    if num_returns < 1:
        raise ValueError("num_returns must be >= 1")
    model = transition_matrix(cfg.channel, cfg.horizon)
    if model.stall_prob == 0.0:
        raise ValueError("the empty state never recurs under this law (every tick restocks)")
    if max_steps is None:
        max_steps = num_returns * 10_000
    rng = np.random.default_rng((cfg.seed, _ORACLE_SPACE, _RETURN_TAG))
    counts: dict[int, int] = {}
    pending: dict[int, int] = {}
    newest = -1  # newest arrived origin; -1 = none yet
    last_zero = 0
    collected = 0
    k = 0
    while collected < num_returns and k < max_steps:
        k += 1
        outcome = sample_outcome(cfg.channel, rng)
        # the outcome sampled on tick k-1 governs the packet originating there
        origin = k - 1
        if outcome.gamma == 1 and outcome.tau is not INFINITE:
            due = origin + outcome.tau
            pending[due] = max(pending.get(due, origin), origin)
        if k in pending:
            newest = max(newest, pending.pop(k))
        lam = max(0, newest + cfg.horizon - k) if newest >= 0 else 0
        if lam == 0:
            gap = k - last_zero
            counts[gap] = counts.get(gap, 0) + 1
            last_zero = k
            collected += 1
    return ReturnHistogram(counts, collected, k, collected < num_returns)


def ks_distance(hist: ReturnHistogram, pmf: ReturnTimeDistribution) -> float:
    """Kolmogorov-Smirnov distance between the histogram and the analytic pmf."""
    if hist.collected == 0:
        raise ValueError("empty histogram")
    j_eval = max(max(hist.counts), pmf.j_max)
    worst = 0.0
    emp_acc = 0
    ana_acc = 0.0
    for j in range(1, j_eval + 1):
        emp_acc += hist.counts.get(j, 0)
        ana_acc += pmf.prob(j)
        worst = max(worst, abs(emp_acc / hist.collected - ana_acc))
    return worst


@dataclass(frozen=True)
class DriftReport:
    """Per-cycle contraction of the certificate value sampled at empty times.

    ``ratio`` estimates E[V at next empty time] / E[V at this one]; the
    analytic bound is alpha * Omega.  Not applicable when the empty state
    never recurs.
    """

    applicable: bool
    ratio: Optional[float]
    stderr: Optional[float]
    bound: float
    cycles: int
    episodes: int
    partial: bool

    def within_bound(self, k_sigma: float = 3.0) -> bool:
        if not self.applicable or self.ratio is None:
            return False
        slack = k_sigma * self.stderr if self.stderr is not None else 0.0
        return self.ratio <= self.bound + slack


def empirical_drift(
    cfg: EpisodeConfig,
    num_cycles: int,
    steps_per_episode: int = 500,
    max_episodes: int = 5000,
) -> DriftReport:
    """Estimate the certificate contraction across empty-buffer cycles.

    Pools cycle endpoints over independent episodes; the standard error comes
    from a delta-method linearization over per-episode totals, which respects
    the dependence between overlapping cycles inside an episode.
    """
    _validate_config(cfg)
    cert = cfg.bundle.certificate
    bound = cert.alpha * omega(cfg.channel, cfg.horizon, cert.rho)
    model = transition_matrix(cfg.channel, cfg.horizon)
    if model.stall_prob == 0.0:
        return DriftReport(False, None, None, bound, 0, 0, False)
    drift_cfg = replace(cfg, steps=steps_per_episode)
    start_sums: list[float] = []
    end_sums: list[float] = []
    cycles = 0
    episodes = 0
    while cycles < num_cycles and episodes < max_episodes:
        trace = run_episode(drift_cfg, episode=_DRIFT_EPISODE_BASE + episodes)
        episodes += 1
        zeros = [k for k, lam in enumerate(trace.buffer_lengths) if lam == 0]
        if len(zeros) < 2:
            continue
        values = [cert.V(trace.states[k]) for k in zeros]
        start_sums.append(math.fsum(values[:-1]))
        end_sums.append(math.fsum(values[1:]))
        cycles += len(values) - 1
    total_start = math.fsum(start_sums)
    if cycles == 0 or total_start == 0.0:
        return DriftReport(True, None, None, bound, cycles, episodes, True)
    ratio = math.fsum(end_sums) / total_start
    stderr = None
    n = len(start_sums)
    if n >= 2:
        residual_sq = math.fsum((s1 - ratio * s0) ** 2 for s0, s1 in zip(start_sums, end_sums))
        stderr = math.sqrt(residual_sq * n / (n - 1)) / total_start
    return DriftReport(True, ratio, stderr, bound, cycles, episodes, cycles < num_cycles)


def prediction_consistent_steps(trace: SimulationTrace) -> list[bool]:
    """Steps whose applied input provably replays the feedback on the true state.

    A stored input equals ``kappa(actual state)`` only when every step back to
    the packet's origin also played such an input; a packet whose lifetime
    crosses an empty-buffer step carries predictions computed for inputs that
    were never applied, so those steps are excluded.
    """
    good: list[bool] = []
    for k in range(trace.recorded):
        if trace.buffer_lengths[k] == 0:
            good.append(False)
            continue
        origin = trace.origins[k]
        good.append(all(good[j] for j in range(origin, k)))
    return good
