"""Analytical core: buffer-length Markov chain, return times, stability margin.

Under an i.i.d. channel law the buffer-length process is a homogeneous Markov
chain on {0, ..., N} whose transitions are

    p[i][j] = q * p_{N-j}                        for 1 <= i <= j
    p[i][j] = 1 - q * (p_0 + ... + p_{N-i})      for i == j + 1
    p[i][j] = 0                                  for i >= j + 2
    p[0][j] = p[1][j]

(the buffer loses at most one usable input per tick, hence the
lower-Hessenberg structure).  First returns of the chain to the empty state
have pmf

    Pr{D = 1} = beta,   Pr{D = j} = beta * sigma' P^(j-2) 1   for j >= 2

with beta = 1 - q * (p_0 + ... + p_{N-1}), sigma' = q * (p_{N-1}, ..., p_0)
and P the sub-matrix over states {1, ..., N}.  The stability margin

    Omega = sum_j Pr{D = j} * rho^(j-1)
          = beta * (1 + rho * sigma' (I - rho P)^{-1} 1)

certifies stochastic stability of the closed loop whenever Omega < 1/alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import solve_dense
from .network import DelayDistribution, validate

DUAL_PATH_TOL = 1e-12
DEFAULT_J_MAX = 1000


@dataclass(frozen=True)
class MarkovChainModel:
    """Buffer-length chain: full matrix, sub-matrix over {1..N}, entry vector.

    ``stall_prob`` is the probability that no packet usable within the horizon
    arrives on a given tick; it is both the 1 -> 0 fall probability and the
    one-step return probability of the empty state.
    """

    horizon: int
    full: np.ndarray  # (N+1, N+1), row-stochastic
    sub: np.ndarray  # (N, N), states 1..N
    sigma: np.ndarray  # (N,) transition row out of state 0 into states 1..N
    stall_prob: float


def transition_matrix(dist: DelayDistribution, horizon: int) -> MarkovChainModel:
    """Exact transition probabilities of the buffer-length chain."""
    validate(dist)
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    n = horizon
    # prefix[i] = p_0 + ... + p_i, with masses beyond the stored pmf exactly 0
    prefix = np.zeros(n + 1)
    acc = 0.0
    for i in range(n + 1):
        acc += dist.probability(i)
        prefix[i] = acc
    full = np.zeros((n + 1, n + 1))
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            full[i, j] = dist.q * dist.probability(n - j)
        full[i, i - 1] = 1.0 - dist.q * prefix[n - i]
    full[0] = full[1]
    return MarkovChainModel(
        horizon=n,
        full=full,
        sub=full[1:, 1:].copy(),
        sigma=full[0, 1:].copy(),
        stall_prob=float(full[1, 0]),
    )


@dataclass(frozen=True)
class ReturnTimeDistribution:
    """First-return-time pmf of the empty state, truncated at ``j_max``.

    ``probabilities[j-1]`` is Pr{D = j}.  When ``no_return`` is set the empty
    state is never revisited (every tick restocks the buffer); the pmf is all
    zeros with zero tail and must not be read as a proper distribution.
    """

    probabilities: np.ndarray
    tail_mass: float
    no_return: bool

    @property
    def j_max(self) -> int:
        return len(self.probabilities)

    def prob(self, j: int) -> float:
        if 1 <= j <= self.j_max:
            return float(self.probabilities[j - 1])
        return 0.0

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probabilities)


def return_time_pmf(model: MarkovChainModel, j_max: int = DEFAULT_J_MAX) -> ReturnTimeDistribution:
    """Return-time pmf via iterated vector products (no explicit matrix powers)."""
    if j_max < 1:
        raise ValueError(f"j_max must be >= 1, got {j_max}")
    beta = model.stall_prob
    probs = np.zeros(j_max)
    if beta == 0.0:
        return ReturnTimeDistribution(probs, 0.0, True)
    probs[0] = beta
    w = np.ones(model.horizon)  # w holds P^(j-2) @ 1 when computing Pr{D = j}
    for j in range(2, j_max + 1):
        probs[j - 1] = beta * float(np.dot(model.sigma, w))
        w = model.sub @ w
    tail = max(0.0, 1.0 - math.fsum(probs.tolist()))
    return ReturnTimeDistribution(probs, tail, False)


def _series_length(rho: float, tol: float) -> int:
    # Smallest J with rho^J <= tol; the truncated-away mass of any of the
    # series below is bounded by rho^J because the pmf sums to at most one
    # and sigma' P^j 1 <= 1 for the sub-stochastic P.
    if rho == 0.0:
        return 1
    return max(1, math.ceil(math.log(tol) / math.log(rho)))


def omega(dist: DelayDistribution, horizon: int, rho: float) -> float:
    """Stability margin in closed form via one dense linear solve.

    The geometric operator series collapses to ``(I - rho P)^{-1} 1``; the
    system is strictly diagonally dominant for rho < 1, so the solve cannot
    be singular.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho!r}")
    model = transition_matrix(dist, horizon)
    n = model.horizon
    a = np.eye(n) - rho * model.sub
    y = solve_dense(a, np.ones(n))
    return model.stall_prob * (1.0 + rho * float(np.dot(model.sigma, y)))


def omega_series(dist: DelayDistribution, horizon: int, rho: float, tol: float = DUAL_PATH_TOL) -> float:
    """Truncated-series evaluation of the stability margin (cross-check path).

    Sums ``beta * (1 + sum_j rho^(j+1) sigma' P^j 1)`` far enough that the
    certified geometric tail bound drops below ``tol``.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho!r}")
    model = transition_matrix(dist, horizon)
    if model.stall_prob == 0.0:
        return 0.0
    terms = []
    w = np.ones(model.horizon)
    power = rho
    # tail after J terms is <= rho^(J+1) / (1 - rho), hence the (1 - rho) factor
    for _ in range(_series_length(rho, tol * (1.0 - rho))):
        terms.append(power * float(np.dot(model.sigma, w)))
        w = model.sub @ w
        power *= rho
    return model.stall_prob * (1.0 + math.fsum(terms))


def expected_rho_power(dist: DelayDistribution, horizon: int, rho: float, tol: float = DUAL_PATH_TOL) -> float:
    """Independent recomputation of the margin as ``E[rho^(D-1)]``.

    Sums the return-time pmf directly against the rho powers, truncated where
    the geometric tail bound falls below ``tol``.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho!r}")
    model = transition_matrix(dist, horizon)
    pmf = return_time_pmf(model, _series_length(rho, tol))
    if pmf.no_return:
        return 0.0
    powers = rho ** np.arange(pmf.j_max)  # rho^(j-1) for j = 1..j_max, 0^0 == 1
    return math.fsum((pmf.probabilities * powers).tolist())


@dataclass(frozen=True)
class StabilityReport:
    omega: float
    threshold: float
    verdict: str
    margin: float


def stability_verdict(dist: DelayDistribution, horizon: int, rho: float, alpha: float) -> StabilityReport:
    """Sufficient-condition verdict: stable iff Omega < 1/alpha strictly.

    "not-certified" is not a proof of instability; the criterion is
    sufficient only.
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be > 0, got {alpha!r}")
    value = omega(dist, horizon, rho)
    threshold = 1.0 / alpha
    verdict = "stable" if value < threshold else "not-certified"
    return StabilityReport(value, threshold, verdict, threshold - value)
