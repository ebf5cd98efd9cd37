"""Plant abstraction, nominal feedback law, and Lyapunov certificate data.

A plant bundle packages discrete-time dynamics ``x+ = f(x, u)`` with an input
set, a nominally stabilizing feedback ``kappa`` and a certificate
``(V, phi1, phi2, rho, alpha)`` satisfying

    phi1(|x|) <= V(x) <= phi2(|x|)
    V(f(x, kappa(x))) <= rho * V(x)      (closed loop contracts)
    V(f(x, 0))        <= alpha * V(x)    (coasting growth is bounded)

The built-in ``saturating2d`` example is a constrained two-state plant with a
saturating coupling term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

CERTIFICATE_TOL = 1e-12

# Tight zero-input growth factor of the saturating2d example: the golden
# ratio, attained on a whole ray segment (1, (1+sqrt(5))/2) * t.
GOLDEN_GROWTH = (1.0 + math.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class PlantModel:
    state_dim: int
    input_dim: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    input_set: Callable[[np.ndarray], bool]
    project_input: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ControlLaw:
    kappa: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LyapunovCertificate:
    V: Callable[[np.ndarray], float]
    phi1: Callable[[float], float]
    phi2: Callable[[float], float]
    rho: float
    alpha: float


@dataclass(frozen=True)
class PlantBundle:
    """Dynamics, feedback law and certificate shipped as one unit."""

    name: str
    plant: PlantModel
    law: ControlLaw
    certificate: LyapunovCertificate


def sat(value: float) -> float:
    """Clamp to [-1, 1] exactly."""
    if value < -1.0:
        return -1.0
    if value > 1.0:
        return 1.0
    return value


def saturating_2d() -> PlantBundle:
    """Constrained two-state example plant.

    Dynamics ``f(x, u) = (x2 + u1, -sat(x1 + x2) + u2)`` with input set
    ``R x [-0.8, 0.8]``, feedback ``kappa(x) = (-x2, 0.8 * sat(x1 + x2))``,
    ``V(x) = 2|x|`` (Euclidean), ``rho = 1/2`` and ``alpha`` the golden ratio
    (about 1.618).
    """

    def dynamics(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.array([x[1] + u[0], -sat(x[0] + x[1]) + u[1]])

    def in_input_set(u: np.ndarray) -> bool:
        return bool(abs(u[1]) <= 0.8)

    def project(u: np.ndarray) -> np.ndarray:
        return np.array([u[0], min(max(u[1], -0.8), 0.8)])

    def kappa(x: np.ndarray) -> np.ndarray:
        return np.array([-x[1], 0.8 * sat(x[0] + x[1])])

    def lyapunov(x: np.ndarray) -> float:
        return 2.0 * float(np.linalg.norm(x))

    def bound(s: float) -> float:
        # phi1 == phi2 == 2s for this example
        return 2.0 * s

    return PlantBundle(
        name="saturating2d",
        plant=PlantModel(2, 2, dynamics, in_input_set, project),
        law=ControlLaw(kappa),
        certificate=LyapunovCertificate(lyapunov, bound, bound, 0.5, GOLDEN_GROWTH),
    )


BUILTIN_PLANTS: dict[str, Callable[[], PlantBundle]] = {"saturating2d": saturating_2d}


def step(plant: PlantModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Advance the plant one step: returns ``f(x, u)``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (plant.state_dim,):
        raise ValueError(f"state has shape {x.shape}, expected ({plant.state_dim},)")
    if u.shape != (plant.input_dim,):
        raise ValueError(f"input has shape {u.shape}, expected ({plant.input_dim},)")
    if not plant.input_set(u):
        raise ValueError(f"input {u!r} violates the input constraints")
    return plant.dynamics(x, u)


def rollout_sequence(plant: PlantModel, law: ControlLaw, x: np.ndarray, horizon: int) -> np.ndarray:
    """Tentative input sequence from nominal predictions.

    Applies the feedback law to the predicted state, steps the nominal model,
    and repeats; each predicted state is used once, so the cost is ``horizon``
    dynamics evaluations.  Returns an array of shape ``(horizon, input_dim)``.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    x = np.asarray(x, dtype=float)
    payload = np.empty((horizon, plant.input_dim))
    predicted = x
    for j in range(horizon):
        u = law.kappa(predicted)
        payload[j] = u
        if j + 1 < horizon:
            predicted = plant.dynamics(predicted, u)
    return payload


@dataclass(frozen=True)
class CertificateReport:
    """Sampled ratio check of the contraction and coasting bounds."""

    samples_evaluated: int
    rho_violations: int
    alpha_violations: int
    max_feedback_ratio: float
    max_coast_ratio: float


def gaussian_sampler(state_dim: int, std: float = 1.0) -> Callable[[np.random.Generator], np.ndarray]:
    return lambda rng: rng.normal(0.0, std, state_dim)


def check_certificate(
    plant: PlantModel,
    law: ControlLaw,
    cert: LyapunovCertificate,
    sampler: Callable[[np.random.Generator], np.ndarray],
    num_samples: int,
    rng: np.random.Generator,
    tol: float = CERTIFICATE_TOL,
) -> CertificateReport:
    """Sample states and report the observed Lyapunov ratios.

    Draws with ``V(x) == 0`` are skipped (the bounds hold trivially at the
    origin and the ratio is undefined there).  A sample counts as a violation
    when it exceeds the certified factor by more than ``tol``.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    evaluated = 0
    rho_bad = 0
    alpha_bad = 0
    max_fb = 0.0
    max_coast = 0.0
    zero_u = np.zeros(plant.input_dim)
    for _ in range(num_samples):
        x = np.asarray(sampler(rng), dtype=float)
        v = cert.V(x)
        if v == 0.0:
            continue
        evaluated += 1
        v_fb = cert.V(plant.dynamics(x, law.kappa(x)))
        v_coast = cert.V(plant.dynamics(x, zero_u))
        max_fb = max(max_fb, v_fb / v)
        max_coast = max(max_coast, v_coast / v)
        if v_fb > cert.rho * v + tol:
            rho_bad += 1
        if v_coast > cert.alpha * v + tol:
            alpha_bad += 1
    return CertificateReport(evaluated, rho_bad, alpha_bad, max_fb, max_coast)
