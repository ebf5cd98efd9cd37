"""Timestamped actuator-side buffer.

The buffer keeps only the newest-origin packet received so far and indexes
into its payload.  With horizon ``N`` and newest stored origin ``T``, the
number of still-usable inputs at time ``k`` is ``max(0, T + N - k)``; when it
is zero the actuator applies the zero input.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .network import INFINITE, LinkOutcome


class ControlPacket(NamedTuple):
    """Tentative input sequence stamped with its origin and arrival times."""

    origin: int
    payload: np.ndarray  # shape (horizon, input_dim)
    arrival: int


class BufferReadout(NamedTuple):
    lam: int
    u: np.ndarray
    active_origin: Optional[int]


class ActuatorBuffer:
    """Single-owner mutable buffer state for one closed-loop episode."""

    def __init__(self, horizon: int, input_dim: int):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = horizon
        self.input_dim = input_dim
        self.stored_origin: Optional[int] = None
        self.stored_payload: Optional[np.ndarray] = None

    def ingest(self, now: int, packets: Iterable[ControlPacket]) -> None:
        """Absorb the packets arriving at time ``now``.

        Keeps the maximal origin seen; older packets are discarded, as is any
        packet (stored or arriving) whose origin is ``now - horizon`` or less,
        since such a packet can never supply another input.
        """
        if self.stored_origin is not None and self.stored_origin <= now - self.horizon:
            self.stored_origin = None
            self.stored_payload = None
        for packet in packets:
            if packet.arrival != now:
                raise ValueError(f"packet stamped for arrival {packet.arrival} ingested at {now}")
            if packet.origin > packet.arrival:
                raise ValueError(f"packet origin {packet.origin} after its arrival {packet.arrival}")
            if packet.payload.shape != (self.horizon, self.input_dim):
                raise ValueError(f"payload shape {packet.payload.shape} does not match the buffer")
            if packet.origin <= now - self.horizon:
                continue
            if self.stored_origin is None or packet.origin > self.stored_origin:
                self.stored_origin = packet.origin
                self.stored_payload = packet.payload

    def readout(self, now: int) -> BufferReadout:
        """Buffer length and plant input for time ``now`` (after ingest).

        The first tick always reads out empty by definition, even if a
        zero-delay packet already arrived; that packet becomes usable from the
        next tick on.
        """
        if now == 0 or self.stored_origin is None:
            return BufferReadout(0, np.zeros(self.input_dim), None)
        lam = self.stored_origin + self.horizon - now
        if lam <= 0:
            return BufferReadout(0, np.zeros(self.input_dim), None)
        return BufferReadout(lam, self.stored_payload[now - self.stored_origin], self.stored_origin)


def lambda_trace(outcomes: Sequence[LinkOutcome], horizon: int) -> list[int]:
    """Buffer-length sequence computed straight from the defining recursion.

    Tracks the newest origin whose packet has arrived by each tick and maps it
    through ``max(0, newest + horizon - k)``; independent of the buffer
    mutation above, so the two can cross-check each other.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    arrivals: dict[int, int] = {}
    for origin, outcome in enumerate(outcomes):
        if outcome.gamma == 1 and outcome.tau is not INFINITE:
            due = origin + outcome.tau
            arrivals[due] = max(arrivals.get(due, origin), origin)
    trace = []
    newest: Optional[int] = None
    for k in range(len(outcomes)):
        if k in arrivals:
            newest = arrivals[k] if newest is None else max(newest, arrivals[k])
        if k == 0 or newest is None:
            trace.append(0)
        else:
            trace.append(max(0, newest + horizon - k))
    return trace
