"""Deterministic discrete-event channel with propagation-delay physics.

Time is integer picoseconds (1 ps of flight ~ 0.3 mm), so RTT subtraction is
exact.  Propagation delays round up, which keeps every distance estimate a
conservative upper bound.  Geometry is a 1-D line; that is enough for every
attack placement the strategies need.

The event loop is single-threaded and owns nothing shared: one loop per
trial, events processed in nondecreasing time with insertion-order
tie-breaking, so a trial is a pure function of (seed, config).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from random import Random
from typing import Any, Protocol

from .errors import DeadlockedTrial, NegativeElapsed, QdbError

SPEED_OF_LIGHT_M_PER_S = 299_792_458.0

# slack subtracted before ceil() so that exact-integer delays (e.g. the
# 0.299792458 m -> 1000 ps case) do not round up through float error
_CEIL_GUARD = 1e-6


def propagation_delay_ps(distance_m: float, signal_speed: float = SPEED_OF_LIGHT_M_PER_S) -> int:
    """Flight time over a distance, rounded up to integer picoseconds."""
    if distance_m < 0:
        raise ValueError("distance must be nonnegative")
    return max(0, math.ceil(distance_m * 1e12 / signal_speed - _CEIL_GUARD))


def rtt_to_distance(
    t_send_ps: int,
    t_recv_ps: int,
    alpha_ps: int,
    signal_speed: float = SPEED_OF_LIGHT_M_PER_S,
) -> float:
    """Distance upper bound (t_r - t_s - alpha)/2 * c, in meters."""
    elapsed = t_recv_ps - t_send_ps - alpha_ps
    if elapsed < 0:
        raise NegativeElapsed(
            f"t_recv={t_recv_ps} precedes t_send={t_send_ps} plus alpha={alpha_ps}"
        )
    return elapsed * 1e-12 * signal_speed / 2.0


@dataclass
class Topology:
    """Party positions on a 1-D line, in meters."""

    positions: dict[str, float]
    signal_speed: float = SPEED_OF_LIGHT_M_PER_S
    _delay_cache: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)

    def distance(self, a: str, b: str) -> float:
        try:
            return abs(self.positions[a] - self.positions[b])
        except KeyError as exc:
            raise QdbError(f"unknown party in topology: {exc.args[0]!r}") from None

    def delay_ps(self, a: str, b: str) -> int:
        key = (a, b)
        cached = self._delay_cache.get(key)
        if cached is None:
            cached = propagation_delay_ps(self.distance(a, b), self.signal_speed)
            self._delay_cache[key] = cached
        return cached


@dataclass
class ChannelConfig:
    """Shared channel parameters.

    ``alpha_ps`` is both the honest per-party processing delay and the value
    the verifier subtracts in the RTT-to-distance formula.
    """

    distance_budget_m: float
    alpha_ps: int = 0
    loss_probability: float = 0.0
    timeout_ps: int | None = None

    def __post_init__(self) -> None:
        if self.alpha_ps < 0:
            raise ValueError("alpha_ps must be >= 0")
        if self.distance_budget_m <= 0:
            raise ValueError("distance budget must be positive")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss_probability must lie in [0, 1]")

    def effective_timeout_ps(self, signal_speed: float = SPEED_OF_LIGHT_M_PER_S) -> int:
        """Round-trip wait before a verifier declares a response lost."""
        if self.timeout_ps is not None:
            return self.timeout_ps
        rtt = 2 * propagation_delay_ps(self.distance_budget_m, signal_speed) + self.alpha_ps
        return math.ceil(rtt * 1.25) + 1000


class Party(Protocol):
    name: str

    def bind(self, loop: "EventLoop") -> None: ...

    def start(self, now: int) -> None: ...

    def on_message(self, src: str, msg: Any, now: int) -> None: ...

    def on_timer(self, tag: Any, now: int) -> None: ...

    @property
    def is_terminal(self) -> bool: ...


@dataclass(frozen=True)
class TraceRecord:
    """One delivered wire message, as serialized by the `trace` subcommand."""

    trial: int
    time_ps: int
    src: str
    dst: str
    kind: str
    round: int | None
    payload: str


_DELIVER = 0
_TIMER = 1


class EventLoop:
    """Single-trial scheduler driving party state machines.

    ``routes`` lets an adversary sit on a path: deliveries addressed to
    ``dst`` are handed to ``routes[(src, dst)]`` instead, with the physical
    delay computed to the actual recipient's position.
    """

    def __init__(
        self,
        topology: Topology,
        config: ChannelConfig,
        parties: dict[str, Party],
        loss_rng: Random | None = None,
        routes: dict[tuple[str, str], str] | None = None,
        trial: int = 0,
        collect_trace: bool = False,
        max_events: int | None = None,
    ):
        self.topology = topology
        self.config = config
        self.parties = parties
        self.routes = routes or {}
        self.trial = trial
        self.now = 0
        self.trace: list[TraceRecord] = []
        self.collect_trace = collect_trace
        self.messages_delivered = 0
        self.rapid_messages_delivered = 0
        self._loss_rng = loss_rng
        self._queue: list[tuple[int, int, int, Any]] = []
        self._seq = 0
        self._max_events = max_events
        for party in parties.values():
            party.bind(self)

    def _push(self, time_ps: int, kind: int, payload: Any) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time_ps, self._seq, kind, payload))

    def send(self, src: str, dst: str, msg: Any, depart_ps: int) -> int:
        """Schedule a delivery; returns the arrival time."""
        actual_dst = self.routes.get((src, dst), dst)
        delay = self.topology.delay_ps(src, actual_dst)
        arrival = depart_ps + delay
        if arrival < self.now:
            raise QdbError(
                f"acausal send: arrival {arrival} ps before current time {self.now} ps"
            )
        # loss models the physical rapid-phase channel; init/final messages
        # ride a reliable classical transport
        if self._loss_rng is not None and msg.RAPID and self.config.loss_probability > 0:
            if self._loss_rng.random() < self.config.loss_probability:
                return arrival  # dropped in flight; timers surface the loss
        self._push(arrival, _DELIVER, (src, actual_dst, msg))
        return arrival

    def set_timer(self, party: str, tag: Any, fire_ps: int) -> None:
        if fire_ps < self.now:
            raise QdbError("timer scheduled in the past")
        self._push(fire_ps, _TIMER, (party, tag))

    def run(self) -> None:
        """Process events until the queue drains or every party is terminal."""
        processed = 0
        queue = self._queue
        parties = self.parties
        party_list = list(parties.values())
        pop = heapq.heappop
        max_events = self._max_events
        for party in party_list:
            party.start(self.now)
        while queue:
            done = True
            for party in party_list:
                if not party.is_terminal:
                    done = False
                    break
            if done:
                break
            time_ps, _, kind, payload = pop(queue)
            self.now = time_ps
            processed += 1
            if max_events is not None and processed > max_events:
                raise DeadlockedTrial(f"exceeded {max_events} events")
            if kind == _DELIVER:
                src, dst, msg = payload
                self.messages_delivered += 1
                if msg.RAPID:
                    self.rapid_messages_delivered += 1
                if self.collect_trace:
                    self.trace.append(
                        TraceRecord(
                            trial=self.trial,
                            time_ps=time_ps,
                            src=src,
                            dst=dst,
                            kind=type(msg).__name__,
                            round=getattr(msg, "round", None),
                            payload=msg.summary(),
                        )
                    )
                parties[dst].on_message(src, msg, time_ps)
            else:
                party_name, tag = payload
                parties[party_name].on_timer(tag, time_ps)

    def assert_settled(self, verdict_party: str) -> None:
        """Raise DeadlockedTrial if the verdict party never finished."""
        party = self.parties[verdict_party]
        if not party.is_terminal:
            raise DeadlockedTrial(
                f"event queue drained with {verdict_party!r} still mid-protocol"
            )
