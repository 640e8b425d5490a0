"""Randomized binary agreement over the shared coin, and an FLP-style stall.

Crash-fault binary agreement in the Ben-Or style. Each phase has two
exchanges, and every wait is for ``n - t`` messages (one's own included):

* EST: broadcast the current estimate. ``aux`` becomes ``v`` when more than
  ``n/2`` of all nodes reported ``v``; otherwise it is ⊥.
* AUX: broadcast ``aux``. Decide ``v`` once at least ``t + 1`` nodes report
  ``v``. Otherwise adopt ``v`` if anyone reported it, and toss the common
  coin if nobody did.

Since ``n - t > n/2``, two different non-⊥ ``aux`` values cannot coexist. A
decision therefore forces every other node onto the same estimate for the
next phase. A node that has decided runs one more EST/AUX exchange so the
others can finish, then halts.

The strawman swaps the coin for the constant 0, which makes the protocol
deterministic. ``StallStrategy`` is a network adversary that sees only
message kinds, phase tags and endpoints. It steers the strawman through
bivalent configurations indefinitely.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, SizeError
from .netsim import QMEASURE, Adversarial, EnvelopeHeader, Fifo, MessageEnvelope, Network, NetworkView, SchedulerPolicy
from .server import CKAServer, CoinRound, ServerMode

EST = "EST"
AUX = "AUX"
BOTTOM = 2  # wire encoding of ⊥
DEFAULT_MAX_PHASES = 1000


@dataclass(frozen=True)
class CrashFault:
    """Stop at ``phase``/``stage``; the final broadcast reaches only ``reach`` peers."""

    phase: int = 1
    stage: str = EST
    reach: int = 0

    def __post_init__(self):
        if self.phase < 1 or self.stage not in (EST, AUX) or self.reach < 0:
            raise ConfigError("crash fault needs phase >= 1, stage EST/AUX and reach >= 0")


@dataclass
class BAOutcome:
    decisions: dict[int, int | None]
    decision_phase: dict[int, int | None]
    phases_used: int
    inputs: dict[int, int]
    crashed: frozenset[int]
    messages_sent: int = 0
    trace: list[str] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (decision per node, phases_used)
        yield self.decisions
        yield self.phases_used

    def honest_decisions(self) -> dict[int, int | None]:
        return {i: d for i, d in self.decisions.items() if i not in self.crashed}

    @property
    def all_decided(self) -> bool:
        return all(d is not None for d in self.honest_decisions().values())

    @property
    def agreement(self) -> bool:
        return len({d for d in self.honest_decisions().values() if d is not None}) <= 1

    def summary(self) -> dict:
        return {
            "decisions": {str(i): d for i, d in sorted(self.decisions.items())},
            "phases_used": self.phases_used,
            "crashed": sorted(self.crashed),
            "messages_sent": self.messages_sent,
        }


# -- local rules shared by nodes and the adversary's model ----------------------


def aux_rule(ests: Sequence[int], n: int) -> int | None:
    for v in (0, 1):
        if 2 * sum(1 for e in ests if e == v) > n:
            return v
    return None


def aux_outcome(auxes: Sequence[int | None], t: int, coin: int | None) -> tuple[int | None, int | None]:
    """Return ``(decision, next_estimate)``. A None estimate means the coin is needed."""
    for v in (0, 1):
        if sum(1 for a in auxes if a == v) >= t + 1:
            return v, v
    seen = [a for a in auxes if a is not None]
    if seen:
        return None, seen[0]
    return None, coin


class _Node:
    def __init__(self, i: int, est: int):
        self.i = i
        self.est = est
        self.phase = 1
        self.stage = EST
        self.halted = False
        self.decision: int | None = None
        self.decision_phase: int | None = None
        self.got: dict[tuple[str, int], dict[int, int | None]] = {}
        self.buffer: list[MessageEnvelope] = []


class _BASim:
    def __init__(self, n, t, inputs, crashes, net: Network, rng, strawman: bool, server_mode, max_phases):
        self.n, self.t = n, t
        self.net = net
        self.rng = rng
        self.strawman = strawman
        self.max_phases = max_phases
        self.crashes: dict[int, CrashFault] = dict(crashes)
        self.nodes = [_Node(i, inputs[i]) for i in range(n)]
        self.crashed: set[int] = set()
        self._coin_phase: dict[int, int] = {}
        self.server = CKAServer(server_mode, hook=self._on_measure)
        self.coins: dict[int, CoinRound] = {}

    def _on_measure(self, round_id, node, value):
        v = 0xFF if value is None else value
        self.net.record(node, node, QMEASURE, bytes([v]), self._coin_phase[round_id])

    def coin(self, node: _Node) -> int:
        if self.strawman:
            return 0
        r = self.coins.get(node.phase)
        if r is None:
            r = self.server.open_round(self.n, rng=self.rng)
            self._coin_phase[r.round_id] = node.phase
            self.coins[node.phase] = r
        v = r.measure(node.i, self.rng)
        return 0 if v is None else v

    def _broadcast(self, node: _Node, kind: str, value: int | None) -> bool:
        """Send to every peer; False if the node crashed while doing so."""
        payload = bytes([BOTTOM if value is None else value])
        crash = self.crashes.get(node.i)
        peers = [j for j in range(self.n) if j != node.i]
        if crash is not None and (crash.phase, crash.stage) == (node.phase, kind):
            for j in peers[: crash.reach]:
                self.net.send(node.i, j, kind, payload, node.phase)
            self.crashed.add(node.i)
            node.halted = True
            return False
        for j in peers:
            self.net.send(node.i, j, kind, payload, node.phase)
        node.got.setdefault((kind, node.phase), {})[node.i] = value
        return True

    def begin_phase(self, node: _Node) -> None:
        if node.phase > self.max_phases:
            node.halted = True
            return
        node.stage = EST
        if self._broadcast(node, EST, node.est):
            self._drain(node)
            self._advance(node)

    def _drain(self, node: _Node) -> None:
        pending, node.buffer = node.buffer, []
        for env in pending:
            self.deliver(env)

    def deliver(self, env: MessageEnvelope) -> None:
        node = self.nodes[env.dst]
        if node.halted:
            return
        v = env.payload[0]
        value = None if v == BOTTOM else v
        key = (env.kind, env.round)
        here = (node.stage, node.phase)
        order = lambda k, p: (p, 0 if k == EST else 1)
        if order(*key) > order(*here):
            node.buffer.append(env)
            return
        if key != here:
            return  # stale
        node.got.setdefault(key, {}).setdefault(env.src, value)
        self._advance(node)

    def _advance(self, node: _Node) -> None:
        quorum = self.n - self.t
        got = node.got.get((node.stage, node.phase), {})
        if node.halted or len(got) < quorum:
            return
        if node.stage == EST:
            aux = aux_rule(list(got.values()), self.n)
            node.stage = AUX
            if not self._broadcast(node, AUX, aux):
                return
            if node.decision is not None and node.phase > node.decision_phase:
                node.halted = True  # the extra phase after deciding is done
                return
            self._drain(node)
            self._advance(node)
            return
        decision, est = aux_outcome(list(got.values()), self.t, None)
        if est is None:
            est = self.coin(node)
        if decision is not None and node.decision is None:
            node.decision, node.decision_phase = decision, node.phase
        node.est = node.decision if node.decision is not None else est
        node.phase += 1
        self.begin_phase(node)

    def live(self) -> list[_Node]:
        return [x for x in self.nodes if x.i not in self.crashed and x.i not in self.crashes]

    def done(self) -> bool:
        live = self.live()
        return all(x.decision is not None for x in live) or all(x.halted for x in live)

    def run(self) -> None:
        for node in self.nodes:
            self.begin_phase(node)
        while not self.done() and not self.net.quiescent():
            for env in self.net.step():
                self.deliver(env)


def _check(n: int, t: int) -> None:
    if n < 2:
        raise SizeError("binary agreement needs n >= 2")
    if t < 0 or 2 * t >= n:
        raise ConfigError(f"need 0 <= t < n/2, got t={t} for n={n}")


def run_coin_binary_agreement(
    n: int,
    t: int,
    initial: Mapping[int, int] | Sequence[int],
    behaviors: Mapping[int, CrashFault] | None = None,
    scheduler: SchedulerPolicy | None = None,
    rng: np.random.Generator | int | None = None,
    *,
    strawman: bool = False,
    server_mode: ServerMode = ServerMode.ORACLE,
    max_phases: int = DEFAULT_MAX_PHASES,
) -> BAOutcome:
    """Run crash-tolerant binary agreement; ``behaviors`` maps faulty nodes to their crash."""
    _check(n, t)
    inputs = dict(enumerate(initial)) if not isinstance(initial, Mapping) else dict(initial)
    if sorted(inputs) != list(range(n)) or any(v not in (0, 1) for v in inputs.values()):
        raise ConfigError("initial must give a bit for every node")
    behaviors = dict(behaviors or {})
    if len(behaviors) > t:
        raise ConfigError(f"{len(behaviors)} faulty nodes exceed t={t}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    net = Network(scheduler if scheduler is not None else Fifo(), rng)
    sim = _BASim(n, t, inputs, behaviors, net, rng, strawman, ServerMode(server_mode), max_phases)
    sim.run()
    faulty = frozenset(behaviors)
    decisions = {x.i: x.decision for x in sim.nodes}
    phases = {x.i: x.decision_phase for x in sim.nodes}
    honest_phases = [p for i, p in phases.items() if i not in faulty and p is not None]
    reached = max(x.phase for x in sim.nodes if x.i not in faulty)
    used = max(honest_phases) if len(honest_phases) == n - len(faulty) else min(reached, max_phases)
    return BAOutcome(decisions, phases, used, inputs, faulty, net.sent_count, list(net.trace))


# -- the stall adversary -------------------------------------------------------


def _subsets(n: int, i: int, size: int):
    return itertools.combinations([j for j in range(n) if j != i], size)


@lru_cache(maxsize=None)
def _aux_choices(est: tuple[int, ...], t: int) -> tuple[dict, ...]:
    """Per node: achievable aux value -> the first sender subset producing it."""
    n = len(est)
    out = []
    for i in range(n):
        opts: dict = {}
        for s in _subsets(n, i, n - t - 1):
            a = aux_rule([est[i], *(est[j] for j in s)], n)
            opts.setdefault(a, s)
        out.append(opts)
    return tuple(out)


def _est_choices(aux: tuple, t: int, coin: int) -> tuple[dict, ...]:
    """Per node: next estimate reachable without deciding -> sender subset."""
    n = len(aux)
    out = []
    for i in range(n):
        opts: dict = {}
        for s in _subsets(n, i, n - t - 1):
            decision, est = aux_outcome([aux[i], *(aux[j] for j in s)], t, coin)
            if decision is None:
                opts.setdefault(est, s)
        out.append(opts)
    return tuple(out)


@lru_cache(maxsize=None)
def _successors(est: tuple[int, ...], t: int, coin: int) -> tuple[tuple[tuple, tuple], ...]:
    """(aux vector, next est vector) pairs reachable from ``est`` with no decision."""
    aux_opts = _aux_choices(est, t)
    out = []
    for aux in itertools.product(*(sorted(o, key=lambda a: (a is None, a)) for o in aux_opts)):
        non_bottom = {a for a in aux if a is not None}
        if len(non_bottom) > 1:
            continue
        est_opts = _est_choices(aux, t, coin)
        if any(not o for o in est_opts):
            continue
        for nxt in itertools.product(*(sorted(o) for o in est_opts)):
            out.append((aux, nxt))
    return tuple(out)


@lru_cache(maxsize=None)
def stallable_configs(n: int, t: int, coin: int = 0) -> frozenset[tuple[int, ...]]:
    """Greatest set of estimate vectors from which the adversary can avoid decisions forever."""
    alive = {e for e in itertools.product((0, 1), repeat=n) if 0 < sum(e) < n}
    while True:
        keep = {e for e in alive if any(nxt in alive for _, nxt in _successors(e, t, coin))}
        if keep == alive:
            return frozenset(alive)
        alive = keep


def bivalent_start(n: int, t: int) -> tuple[int, ...]:
    configs = stallable_configs(n, t)
    if not configs:
        raise ConfigError(f"no stallable configuration for n={n}, t={t}")
    return min(configs, key=lambda e: (sum(e), e))


class StallStrategy:
    """Network adversary that keeps the constant-coin protocol bivalent.

    It replays the deterministic protocol in its head from the known inputs and
    its own delivery choices, so it needs only kind and phase tags. For every
    node it picks the ``n - t - 1`` peers whose message arrives first in each
    exchange. Messages it passed over are delivered once they are stale. As
    soon as the real run leaves its model (some node stops sending), it gives
    up steering and delivers everything.
    """

    def __init__(self, n: int, t: int, inputs: Sequence[int], coin: int = 0):
        self.n, self.t, self.coin = n, t, coin
        self.est = tuple(inputs)
        self.stall = stallable_configs(n, t, coin)
        self.phase, self.stage = 1, EST
        self.steering = self.est in self.stall
        self._aux: tuple | None = None
        self._next: tuple | None = None

    def _key(self, h: EnvelopeHeader) -> tuple[int, int]:
        return (h.round, 0 if h.kind == EST else 1)

    def _plan(self) -> dict[int, tuple[int, ...]]:
        if self.stage == EST:
            aux, nxt = next(
                (a, x) for a, x in _successors(self.est, self.t, self.coin) if x in self.stall
            )
            self._aux, self._next = aux, nxt
            opts = _aux_choices(self.est, self.t)
            return {i: opts[i][aux[i]] for i in range(self.n)}
        opts = _est_choices(self._aux, self.t, self.coin)
        return {i: opts[i][self._next[i]] for i in range(self.n)}

    def choose(self, view: NetworkView) -> Sequence[int]:
        if not view.pending:
            return ()
        if not self.steering:
            return [h.seq for h in view.pending]
        current = (self.phase, 0 if self.stage == EST else 1)
        stale = [h.seq for h in view.pending if self._key(h) < current]
        batch = [h for h in view.pending if self._key(h) == current]
        if len(batch) < self.n * (self.n - 1):
            if stale:
                return stale
            self.steering = False  # someone fell silent; the model no longer applies
            return [h.seq for h in view.pending]
        plan = self._plan()
        chosen = [h.seq for h in batch if h.src in plan[h.dst]]
        if self.stage == EST:
            self.stage = AUX
        else:
            self.est = self._next
            self.phase, self.stage = self.phase + 1, EST
        return stale + chosen


@dataclass(frozen=True)
class StallReport:
    n: int
    t: int
    strawman: bool
    budget: int
    inputs: tuple[int, ...]
    decided: bool  # every honest node decided within the budget
    decision_phase: int | None
    phases_reached: int
    decisions: dict[int, int | None]

    @property
    def stalled(self) -> bool:
        return not self.decided

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "t": self.t,
            "strawman": self.strawman,
            "budget": self.budget,
            "inputs": list(self.inputs),
            "decided": self.decided,
            "decision_phase": self.decision_phase,
            "phases_reached": self.phases_reached,
            "decisions": {str(i): d for i, d in sorted(self.decisions.items())},
        }


def run_flp_demo(
    n: int = 3,
    deterministic_strawman: bool = True,
    scheduler_budget: int = 50,
    rng: np.random.Generator | int | None = None,
    *,
    t: int = 1,
    inputs: Sequence[int] | None = None,
    server_mode: ServerMode = ServerMode.ORACLE,
) -> StallReport:
    """Run binary agreement against the stall adversary with unbounded delay.

    Inputs default to a crafted bivalent configuration. The run is cut off once
    ``scheduler_budget`` phases have passed.
    """
    if n < 3:
        raise SizeError("the FLP demonstration needs n >= 3")
    _check(n, t)
    inputs = tuple(inputs) if inputs is not None else bivalent_start(n, t)
    strategy = StallStrategy(n, t, inputs)
    out = run_coin_binary_agreement(
        n, t, list(inputs), None, Adversarial(strategy, horizon=None), rng,
        strawman=deterministic_strawman, server_mode=server_mode, max_phases=scheduler_budget,
    )
    phases = [p for p in out.decision_phase.values()]
    decided = all(p is not None and p <= scheduler_budget for p in phases)
    return StallReport(
        n, t, deterministic_strawman, scheduler_budget, inputs, decided,
        max(phases) if decided else None, out.phases_used, out.decisions,
    )
