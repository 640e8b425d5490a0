"""Deterministic discrete-event network with logical-step time.

Time only moves when ``step()`` is called. A message sent while step ``s``
is being processed is enqueued at ``s`` and can be delivered at ``s + 1`` at
the earliest. Which eligible messages are delivered, and when, is up to the
scheduler policy:

* ``Fifo``: every message is delivered exactly one step after it was sent.
* ``RandomDelay``: delay drawn uniformly from ``1..max_delay``.
* ``Adversarial``: a strategy picks deliveries each step from message headers
  (kind, round, endpoints, age; never the payload). With a finite
  ``horizon`` any message that old is force-delivered.

Timeouts are scheduler events addressed to a single node; they bypass
partitions, drops and the adversary.

Trace lines have the form ``<step> <round> <src> <dst> <kind> <payload-hex>``
with ``-`` standing in for an empty payload.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .errors import ConfigError, LifecycleError, ReplayError

TIMEOUT = "TIMEOUT"
QMEASURE = "QMEASURE"


@dataclass(frozen=True)
class MessageEnvelope:
    seq: int
    src: int
    dst: int
    kind: str
    payload: bytes
    round: int
    enqueued_at: int
    deliverable_from: int

    def __post_init__(self):
        if self.deliverable_from < self.enqueued_at:
            raise ConfigError("deliverable_from precedes enqueued_at")

    def header(self) -> "EnvelopeHeader":
        return EnvelopeHeader(self.seq, self.src, self.dst, self.kind, self.round, self.enqueued_at)


@dataclass(frozen=True)
class EnvelopeHeader:
    """What the adversary may see of a pending message."""

    seq: int
    src: int
    dst: int
    kind: str
    round: int
    enqueued_at: int


@dataclass(frozen=True)
class NetworkView:
    now: int
    pending: tuple[EnvelopeHeader, ...]
    delivered: tuple[EnvelopeHeader, ...]  # deliveries made so far this run, in order


class Strategy(Protocol):
    def choose(self, view: NetworkView) -> Sequence[int]:
        """Sequence numbers to deliver at this step, in delivery order."""


class HoldBack:
    """Delivers nothing voluntarily; with a horizon every message arrives as late as allowed."""

    def choose(self, view: NetworkView) -> Sequence[int]:
        return ()


class DeliverAll:
    def choose(self, view: NetworkView) -> Sequence[int]:
        return [h.seq for h in view.pending]


@dataclass(frozen=True)
class Fifo:
    @property
    def max_latency(self) -> int:
        return 1


@dataclass(frozen=True)
class RandomDelay:
    max_delay: int = 3

    def __post_init__(self):
        if self.max_delay < 1:
            raise ConfigError("max_delay must be >= 1")

    @property
    def max_latency(self) -> int:
        return self.max_delay


@dataclass(frozen=True)
class Adversarial:
    strategy: Strategy = field(default_factory=HoldBack)
    horizon: int | None = 4

    def __post_init__(self):
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be >= 1 (or None for unbounded delay)")

    @property
    def max_latency(self) -> int | None:
        return self.horizon


SchedulerPolicy = Fifo | RandomDelay | Adversarial


@dataclass(frozen=True)
class PartitionSpec:
    groups: tuple[frozenset[int], ...]
    from_step: int
    to_step: int

    def __post_init__(self):
        groups = tuple(frozenset(g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        seen: set[int] = set()
        for g in groups:
            if seen & g:
                raise ConfigError("partition groups must be disjoint")
            seen |= g

    def active(self, step: int) -> bool:
        return self.from_step <= step < self.to_step

    def separates(self, a: int, b: int) -> bool:
        ga = next((g for g in self.groups if a in g), None)
        gb = next((g for g in self.groups if b in g), None)
        return ga is not gb


class Network:
    def __init__(
        self,
        policy: SchedulerPolicy | None = None,
        rng: np.random.Generator | None = None,
        partitions: Iterable[PartitionSpec] = (),
        drop_rate: float = 0.0,
    ):
        self.policy = policy if policy is not None else Fifo()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.partitions = tuple(partitions)
        if not 0.0 <= drop_rate <= 1.0:
            raise ConfigError("drop_rate must lie in [0, 1]")
        self.drop_rate = drop_rate
        self.now = 0
        self.halted = False
        self.trace: list[str] = []
        self.dropped: list[MessageEnvelope] = []
        self.sent_count = 0
        self._seq = 0
        self._pending: list[tuple[int, int, MessageEnvelope]] = []  # heap on (deliverable_from, seq)
        self._delivered: list[EnvelopeHeader] = []

    # -- sending ----------------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _delay(self) -> int:
        if isinstance(self.policy, RandomDelay):
            return int(self.rng.integers(1, self.policy.max_delay + 1))
        return 1

    def _cut(self, src: int, dst: int, step: int) -> bool:
        return any(p.active(step) and p.separates(src, dst) for p in self.partitions)

    def send(
        self, src: int, dst: int, kind: str, payload: bytes = b"", round: int = 0
    ) -> MessageEnvelope | None:
        if self.halted:
            raise LifecycleError("send after halt")
        env = MessageEnvelope(
            self._next_seq(), src, dst, kind, bytes(payload), round, self.now, self.now + self._delay()
        )
        self.sent_count += 1
        if self.drop_rate and self.rng.random() < self.drop_rate:
            self.dropped.append(env)
            return None
        if self._cut(src, dst, self.now):
            self.dropped.append(env)
            return None
        heapq.heappush(self._pending, (env.deliverable_from, env.seq, env))
        return env

    def broadcast(self, src: int, dsts: Iterable[int], kind: str, payload: bytes = b"", round: int = 0):
        for d in dsts:
            if d != src:
                self.send(src, d, kind, payload, round)

    def schedule_timeout(self, node: int, after: int, round: int = 0, tag: bytes = b"") -> MessageEnvelope:
        if self.halted:
            raise LifecycleError("timeout scheduled after halt")
        if after < 1:
            raise ConfigError("timeouts fire at least one step ahead")
        env = MessageEnvelope(self._next_seq(), node, node, TIMEOUT, tag, round, self.now, self.now + after)
        heapq.heappush(self._pending, (env.deliverable_from, env.seq, env))
        return env

    def record(self, src: int, dst: int, kind: str, payload: bytes = b"", round: int = 0) -> None:
        """Log a local event (e.g. a share measurement) at the current step."""
        self._log(self.now, round, src, dst, kind, payload)

    def _log(self, step, round, src, dst, kind, payload: bytes) -> None:
        self.trace.append(f"{step} {round} {src} {dst} {kind} {payload.hex() or '-'}")

    # -- delivery ---------------------------------------------------------

    @property
    def pending(self) -> list[MessageEnvelope]:
        return [e for _, _, e in sorted(self._pending)]

    def quiescent(self) -> bool:
        return not self._pending

    def halt(self) -> None:
        self.halted = True

    def step(self) -> list[MessageEnvelope]:
        """Advance one logical step and return what was delivered, in order."""
        if self.halted:
            raise LifecycleError("step after halt")
        self.now += 1
        eligible = []
        while self._pending and self._pending[0][0] <= self.now:
            eligible.append(heapq.heappop(self._pending)[2])

        if isinstance(self.policy, Adversarial):
            ordered = self._adversarial_order(eligible)
        else:
            ordered = eligible

        delivered = []
        for env in ordered:
            if env.kind != TIMEOUT and self._cut(env.src, env.dst, self.now):
                self.dropped.append(env)
                continue
            delivered.append(env)
            self._delivered.append(env.header())
            self._log(self.now, env.round, env.src, env.dst, env.kind, env.payload)
        return delivered

    def _adversarial_order(self, eligible: list[MessageEnvelope]) -> list[MessageEnvelope]:
        horizon = self.policy.horizon
        timers = [e for e in eligible if e.kind == TIMEOUT]
        msgs = [e for e in eligible if e.kind != TIMEOUT]
        forced = [e for e in msgs if horizon is not None and self.now - e.enqueued_at >= horizon]
        forced_ids = {e.seq for e in forced}
        free = {e.seq: e for e in msgs if e.seq not in forced_ids}
        view = NetworkView(
            self.now,
            tuple(e.header() for e in free.values()),
            tuple(self._delivered),
        )
        chosen = []
        for seq in self.policy.strategy.choose(view) if free else ():
            env = free.pop(seq, None)
            if env is not None:
                chosen.append(env)
        for env in free.values():  # held back: eligible again next step
            heapq.heappush(self._pending, (env.deliverable_from, env.seq, env))
        return forced + chosen + timers


def first_divergence(a: Sequence[str], b: Sequence[str]) -> int | None:
    """Index of the first differing trace line, or None if the traces match."""
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    if len(a) != len(b):
        return min(len(a), len(b))
    return None


def replay(log: Sequence[str], run: Callable[..., Sequence[str]], *args, **kwargs) -> list[str]:
    """Re-run ``run(*args, **kwargs)`` and demand the identical trace."""
    again = list(run(*args, **kwargs))
    i = first_divergence(list(log), again)
    if i is not None:
        step = (log[i] if i < len(log) else again[i]).split(" ", 1)[0]
        raise ReplayError(f"trace diverges at line {i} (step {step})", step_index=i)
    return again
