"""XOR block agreement driven by shared coin bits.

Each protocol round, every node:

1. measures its shares of two server rounds, getting ``b1`` and ``b2``;
2. computes ``b3 = b1 ^ b2``;
3. broadcasts ``b3``. Once it holds every node's ``b3``, or the round's
   first deadline passes, it takes the majority ``m``. Nodes whose ``b3``
   differs from ``m`` are excluded for the round. A tied vote aborts the
   round with no exclusions;
4. if not excluded, broadcasts ``d2 = mask ^ d1``, where ``d1`` is the
   round's proposed block and ``mask`` comes from the shared coin bits;
5. once it holds ``d2`` from every non-excluded node, or the second
   deadline passes, decides ``d1 = mask ^ d2`` if all received ``d2`` are
   identical. Otherwise it retries with fresh coins.

Deadlines sit on a global per-round schedule. Round ``r`` occupies steps
``[(r-1)*2*tau, r*2*tau)`` with ``tau = max_latency + 1``. A node may run
ahead when it already holds every message. Any message a live node sends is
delivered before the deadline that concerns it, so honest nodes see the same
messages.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, SizeError, UnresolvableRoundError
from .netsim import QMEASURE, TIMEOUT, Adversarial, Fifo, MessageEnvelope, Network, SchedulerPolicy
from .server import NO_FAULTS, CKAServer, CoinRound, FaultSpec, ServerMode

B3 = "B3"
D2 = "D2"
DEFAULT_BLOCK_LEN = 256
DEFAULT_MAX_ROUNDS = 100


class Behavior(enum.Enum):
    HONEST = "honest"
    CRASH_AT = "crash"
    BYZANTINE_FLIP_B3 = "flip-b3"
    BYZANTINE_RANDOM_D2 = "random-d2"
    SILENT = "silent"


@dataclass(frozen=True)
class NodeBehavior:
    kind: Behavior = Behavior.HONEST
    crash_step: int | None = None  # protocol step (1-5) at which a CrashAt node stops

    def __post_init__(self):
        if self.kind is Behavior.CRASH_AT and self.crash_step not in (1, 2, 3, 4, 5):
            raise ConfigError("CrashAt needs a protocol step in 1..5")

    @property
    def faulty(self) -> bool:
        return self.kind is not Behavior.HONEST

    @classmethod
    def crash_at(cls, step: int) -> "NodeBehavior":
        return cls(Behavior.CRASH_AT, step)

    def __str__(self) -> str:
        if self.kind is Behavior.CRASH_AT:
            return f"crash@{self.crash_step}"
        return self.kind.value


HONEST = NodeBehavior()
SILENT = NodeBehavior(Behavior.SILENT)
FLIP_B3 = NodeBehavior(Behavior.BYZANTINE_FLIP_B3)
RANDOM_D2 = NodeBehavior(Behavior.BYZANTINE_RANDOM_D2)


class MaskMode(enum.Enum):
    REPLICATE = "replicate"  # b1 repeated over the block
    KEYSTREAM = "keystream"  # one fresh shared bit per block position


class Phase(enum.Enum):
    COIN_SHARE = "coin-share"
    COMPUTE_B3 = "compute-b3"
    EXCHANGE_B3 = "exchange-b3"
    APPLY_MASK = "apply-mask"
    EXCHANGE_D2 = "exchange-d2"
    DECIDED = "decided"
    RETRY = "retry"


@dataclass(frozen=True)
class BlockData:
    payload: tuple[int, ...]
    proposer: int

    def __post_init__(self):
        if len(self.payload) < 1:
            raise SizeError("a block holds at least one bit")

    @property
    def bits(self) -> np.ndarray:
        return np.array(self.payload, dtype=np.uint8)

    def hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()


def xor_mask(mask: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Encode and decode are the same operation."""
    return np.bitwise_xor(mask.astype(np.uint8), bits.astype(np.uint8))


def pack(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8)).tobytes()


def unpack(data: bytes, length: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:length]


@dataclass
class ConsensusRoundState:
    round: int
    b1: int | None = None
    b2: int | None = None
    b3: int | None = None
    d1: BlockData | None = None
    d2: tuple[int, ...] | None = None
    mask: np.ndarray | None = None
    received_b3: dict[int, int] = field(default_factory=dict)
    received_d2: dict[int, tuple[int, ...]] = field(default_factory=dict)
    excluded: frozenset[int] = frozenset()
    expected_d2: frozenset[int] = frozenset()
    observer: bool = False
    phase: Phase = Phase.COIN_SHARE


@dataclass(frozen=True)
class WaitRecord:
    node: int
    round: int
    step: int  # protocol step: 3 or 5
    completed_at: int
    deadline: int
    via_timeout: bool


@dataclass
class ConsensusOutcome:
    n: int
    decided_block: dict[int, BlockData | None]
    decided_round: dict[int, int | None]
    excluded_history: list[frozenset[int]]  # index r-1: who was excluded in round r
    rounds_used: int
    messages_sent: int
    proposals: dict[int, BlockData] = field(default_factory=dict)
    observers: dict[int, frozenset[int]] = field(default_factory=dict)
    tied_rounds: list[int] = field(default_factory=list)
    waits: list[WaitRecord] = field(default_factory=list)
    exhausted: bool = False
    trace: list[str] = field(default_factory=list)

    def honest_decisions(self, behaviors: Mapping[int, NodeBehavior]) -> dict[int, BlockData | None]:
        return {
            i: b for i, b in self.decided_block.items() if not behaviors.get(i, HONEST).faulty
        }

    def summary(self) -> dict:
        return {
            "n": self.n,
            "rounds_used": self.rounds_used,
            "messages_sent": self.messages_sent,
            "decided": {str(i): (b.hex() if b else None) for i, b in sorted(self.decided_block.items())},
            "decided_round": {str(i): r for i, r in sorted(self.decided_round.items())},
            "excluded_history": [sorted(s) for s in self.excluded_history],
            "observers": {str(r): sorted(s) for r, s in sorted(self.observers.items())},
            "tied_rounds": list(self.tied_rounds),
            "exhausted": self.exhausted,
        }


@dataclass(frozen=True)
class PropertyReport:
    agreement: bool
    validity: bool
    wait_free: bool
    deciders: frozenset[int] = frozenset()
    notes: tuple[str, ...] = ()

    @property
    def all_hold(self) -> bool:
        return self.agreement and self.validity and self.wait_free


def round_robin(round: int, n: int) -> int:
    return (round - 1) % n


FaultSchedule = FaultSpec | tuple[FaultSpec, FaultSpec] | Callable[[int], "FaultSpec | tuple[FaultSpec, FaultSpec]"] | None


def _faults_for(faults: FaultSchedule, round: int) -> tuple[FaultSpec, FaultSpec]:
    f = faults(round) if callable(faults) else faults
    if f is None:
        return NO_FAULTS, NO_FAULTS
    if isinstance(f, tuple):
        return f
    return f, f


class _Round:
    """Server-side material shared by every node in one protocol round."""

    def __init__(self, b1: CoinRound, b2: CoinRound, extra: list[CoinRound], block: BlockData):
        self.b1, self.b2, self.extra, self.block = b1, b2, extra, block


class _Sim:
    def __init__(
        self,
        n: int,
        behaviors: Mapping[int, NodeBehavior],
        proposer_policy: Callable[[int, int], int],
        mask_mode: MaskMode,
        faults: FaultSchedule,
        net: Network,
        rng: np.random.Generator,
        block_len: int,
        max_rounds: int,
        mask_source: str,
        server_mode: ServerMode,
        blocks: Mapping[int, BlockData] | None,
    ):
        self.n = n
        self.behaviors = {i: behaviors.get(i, HONEST) for i in range(n)}
        self.proposer_policy = proposer_policy
        self.mask_mode = mask_mode
        self.faults = faults
        self.net = net
        self.rng = rng
        self.block_len = block_len
        self.max_rounds = max_rounds
        self.mask_source = mask_source
        self.blocks = dict(blocks or {})
        latency = net.policy.max_latency
        if latency is None:
            raise ConfigError("block agreement needs a scheduler with bounded delay")
        self.tau = latency + 1
        self._coin_tags: dict[int, tuple[int, int]] = {}
        self.server = CKAServer(server_mode, hook=self._on_measure)
        self.rounds: dict[int, _Round] = {}
        self.states: dict[int, ConsensusRoundState] = {}
        self.current: dict[int, int] = {}
        self.crashed: set[int] = set()
        self.finished: set[int] = set()
        self.buffer: dict[int, list[MessageEnvelope]] = {i: [] for i in range(n)}
        self.outcome = ConsensusOutcome(
            n=n,
            decided_block={i: None for i in range(n)},
            decided_round={i: None for i in range(n)},
            excluded_history=[],
            rounds_used=0,
            messages_sent=0,
        )
        self._exclusion: dict[int, set[int]] = {}
        self._observers: dict[int, set[int]] = {}

    # -- shared material --------------------------------------------------

    def _on_measure(self, coin_round_id: int, node: int, value: int | None) -> None:
        proto_round, idx = self._coin_tags[coin_round_id]
        v = 0xFF if value is None else value
        self.net.record(node, node, QMEASURE, bytes([idx & 0xFF, v]), proto_round)

    def round_material(self, r: int) -> _Round:
        if r not in self.rounds:
            f1, f2 = _faults_for(self.faults, r)
            b1, b2 = self.server.coin_pair(self.n, (f1, f2), self.rng)
            extra = []
            if self.mask_mode is MaskMode.KEYSTREAM:
                f_mask = f2 if self.mask_source == "b2" else f1
                extra = [self.server.open_round(self.n, f_mask, self.rng) for _ in range(self.block_len - 1)]
            for idx, cr in enumerate([b1, b2, *extra]):
                self._coin_tags[cr.round_id] = (r, idx)
            proposer = self.proposer_policy(r, self.n)
            block = self.blocks.get(r)
            if block is None:
                bits = self.rng.integers(0, 2, self.block_len, dtype=np.uint8)
                block = BlockData(tuple(int(b) for b in bits), proposer)
            self.outcome.proposals[r] = block
            self.rounds[r] = _Round(b1, b2, extra, block)
        return self.rounds[r]

    def deadline(self, r: int, step: int) -> int:
        base = (r - 1) * 2 * self.tau
        return base + (self.tau if step == 3 else 2 * self.tau)

    # -- node behaviour -----------------------------------------------------

    def _crashes(self, node: int, step: int) -> bool:
        b = self.behaviors[node]
        if b.kind is Behavior.CRASH_AT and self.current.get(node, 1) == 1 and b.crash_step <= step:
            self.crashed.add(node)
            return True
        return node in self.crashed

    def start_round(self, node: int, r: int) -> None:
        if node in self.crashed or node in self.finished:
            return
        if r > self.max_rounds:
            self.finished.add(node)
            self.outcome.exhausted = True
            return
        self.current[node] = r
        self.outcome.rounds_used = max(self.outcome.rounds_used, r)
        st = ConsensusRoundState(r)
        self.states[node] = st
        behavior = self.behaviors[node]
        if self._crashes(node, 1):
            return
        mat = self.round_material(r)
        st.d1 = mat.block
        st.b1 = mat.b1.measure(node, self.rng)
        st.b2 = mat.b2.measure(node, self.rng)
        keystream = [cr.measure(node, self.rng) for cr in mat.extra]
        st.phase = Phase.COMPUTE_B3
        if self._crashes(node, 2):
            return
        if st.b1 is None or st.b2 is None or any(k is None for k in keystream):
            # a lost share leaves nothing to vote with; sit the round out
            st.observer = True
        else:
            st.b3 = st.b1 ^ st.b2
            lead = st.b2 if self.mask_source == "b2" else st.b1
            if self.mask_mode is MaskMode.REPLICATE:
                st.mask = np.full(self.block_len, lead, dtype=np.uint8)
            else:
                st.mask = np.array([lead, *keystream], dtype=np.uint8)
        st.phase = Phase.EXCHANGE_B3
        self.net.schedule_timeout(node, self.deadline(r, 3) - self.net.now, r, b"\x03")
        if self._crashes(node, 3):
            return
        if st.b3 is not None and behavior.kind is not Behavior.SILENT:
            sent = st.b3 ^ 1 if behavior.kind is Behavior.BYZANTINE_FLIP_B3 else st.b3
            st.received_b3[node] = sent
            self.net.broadcast(node, range(self.n), B3, bytes([sent]), r)
        self._drain(node)
        self._maybe_finish_b3(node)

    def _drain(self, node: int) -> None:
        pending, self.buffer[node] = self.buffer[node], []
        for env in pending:
            self.deliver(env)

    def deliver(self, env: MessageEnvelope) -> None:
        node = env.dst
        if node in self.crashed or node in self.finished:
            return
        r = self.current.get(node)
        if r is None or env.round > r:
            self.buffer[node].append(env)
            return
        if env.round < r:
            return
        st = self.states[node]
        if env.kind == TIMEOUT:
            if env.payload == b"\x03" and st.phase is Phase.EXCHANGE_B3:
                self._finish_b3(node, via_timeout=True)
            elif env.payload == b"\x05" and st.phase is Phase.EXCHANGE_D2:
                self._finish_d2(node, via_timeout=True)
            return
        if env.kind == B3:
            if st.phase is Phase.EXCHANGE_B3 or st.phase is Phase.COMPUTE_B3:
                st.received_b3.setdefault(env.src, env.payload[0])
                self._maybe_finish_b3(node)
            return
        if env.kind == D2:
            if st.phase is Phase.EXCHANGE_B3:
                # arrived ahead of our own step 3; hold it
                self.buffer[node].append(env)
            elif st.phase is Phase.EXCHANGE_D2 and env.src in st.expected_d2:
                st.received_d2.setdefault(env.src, tuple(unpack(env.payload, self.block_len)))
                self._maybe_finish_d2(node)

    def _maybe_finish_b3(self, node: int) -> None:
        st = self.states[node]
        if st.phase is Phase.EXCHANGE_B3 and len(st.received_b3) == self.n:
            self._finish_b3(node, via_timeout=False)

    def _record_wait(self, node: int, st: ConsensusRoundState, step: int, via_timeout: bool) -> None:
        self.outcome.waits.append(
            WaitRecord(node, st.round, step, self.net.now, self.deadline(st.round, step), via_timeout)
        )

    def _finish_b3(self, node: int, via_timeout: bool) -> None:
        st = self.states[node]
        r = st.round
        self._record_wait(node, st, 3, via_timeout)
        votes = list(st.received_b3.values())
        ones = sum(votes)
        zeros = len(votes) - ones
        if ones == zeros:
            if r not in self.outcome.tied_rounds:
                self.outcome.tied_rounds.append(r)
            self._retry(node)
            return
        m = 1 if ones > zeros else 0
        st.excluded = frozenset(j for j, v in st.received_b3.items() if v != m)
        st.expected_d2 = frozenset(j for j, v in st.received_b3.items() if v == m)
        if not self.behaviors[node].faulty:
            self._exclusion.setdefault(r, set()).update(st.excluded)
        if st.b3 is None or st.received_b3.get(node) != m:
            st.observer = True
        if self.behaviors[node].kind is Behavior.BYZANTINE_FLIP_B3:
            st.observer = False  # it ignores its own exclusion
        st.phase = Phase.APPLY_MASK
        self.net.schedule_timeout(node, self.deadline(r, 5) - self.net.now, r, b"\x05")
        if self._crashes(node, 4):
            return
        if not st.observer and st.mask is not None and self.behaviors[node].kind is not Behavior.SILENT:
            if self.behaviors[node].kind is Behavior.BYZANTINE_RANDOM_D2:
                d2 = self.rng.integers(0, 2, self.block_len, dtype=np.uint8)
            else:
                d2 = xor_mask(st.mask, st.d1.bits)
            st.d2 = tuple(int(x) for x in d2)
            if node in st.expected_d2:
                st.received_d2[node] = st.d2
            self.net.broadcast(node, range(self.n), D2, pack(d2), r)
        st.phase = Phase.EXCHANGE_D2
        self._drain(node)
        self._maybe_finish_d2(node)

    def _maybe_finish_d2(self, node: int) -> None:
        st = self.states[node]
        if st.phase is Phase.EXCHANGE_D2 and st.expected_d2 and set(st.received_d2) >= st.expected_d2:
            self._finish_d2(node, via_timeout=False)

    def _finish_d2(self, node: int, via_timeout: bool) -> None:
        st = self.states[node]
        r = st.round
        self._record_wait(node, st, 5, via_timeout)
        if self._crashes(node, 5):
            return
        values = set(st.received_d2.values())
        if len(values) == 1:
            (d2,) = values
            if st.observer:
                # excluded nodes adopt what the active set agreed on without decoding
                block = st.d1
                self._observers.setdefault(r, set()).add(node)
            else:
                decoded = xor_mask(st.mask, np.array(d2, dtype=np.uint8))
                block = BlockData(tuple(int(x) for x in decoded), st.d1.proposer)
            st.phase = Phase.DECIDED
            self.outcome.decided_block[node] = block
            self.outcome.decided_round[node] = r
            self.finished.add(node)
            return
        self._retry(node)

    def _retry(self, node: int) -> None:
        st = self.states[node]
        st.phase = Phase.RETRY
        self.start_round(node, st.round + 1)

    # -- driver -------------------------------------------------------------

    def active(self) -> bool:
        return any(
            i not in self.crashed and i not in self.finished and not self.behaviors[i].faulty
            for i in range(self.n)
        )

    def run(self) -> ConsensusOutcome:
        for node in range(self.n):
            self.start_round(node, 1)
        while self.active() and not self.net.quiescent():
            for env in self.net.step():
                self.deliver(env)
        out = self.outcome
        out.excluded_history = [
            frozenset(self._exclusion.get(r, set())) for r in range(1, out.rounds_used + 1)
        ]
        out.observers = {r: frozenset(s) for r, s in self._observers.items()}
        out.messages_sent = self.net.sent_count
        out.trace = list(self.net.trace)
        return out


def run_block_agreement(
    n: int,
    behaviors: Mapping[int, NodeBehavior] | None = None,
    proposer_policy: Callable[[int, int], int] = round_robin,
    mask_mode: MaskMode = MaskMode.KEYSTREAM,
    faults: FaultSchedule = None,
    scheduler: SchedulerPolicy | None = None,
    rng: np.random.Generator | int | None = None,
    *,
    block_len: int = DEFAULT_BLOCK_LEN,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    mask_source: str = "b1",
    server_mode: ServerMode = ServerMode.ORACLE,
    blocks: Mapping[int, BlockData] | None = None,
) -> ConsensusOutcome:
    """Run block agreement among ``n`` nodes until every honest node decides.

    ``faults`` may be one FaultSpec (applied to both coin rounds), a
    ``(b1_faults, b2_faults)`` pair, or a callable mapping the protocol round
    to either. Keystream mask rounds inherit the faults of the round that
    supplies the leading mask bit.

    Raises UnresolvableRoundError if ``max_rounds`` pass without a decision
    and honest nodes are not a strict majority. With an honest majority the
    outcome is returned with ``exhausted`` set.
    """
    if n < 3:
        raise SizeError("block agreement needs n >= 3")
    if block_len < 1:
        raise SizeError("block length must be >= 1")
    if mask_source not in ("b1", "b2"):
        raise ConfigError("mask_source is 'b1' or 'b2'")
    behaviors = dict(behaviors or {})
    if any(not 0 <= i < n for i in behaviors):
        raise ConfigError("behavior assigned to a node outside the network")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    net = Network(scheduler if scheduler is not None else Fifo(), rng)
    sim = _Sim(
        n, behaviors, proposer_policy, MaskMode(mask_mode), faults, net, rng,
        block_len, max_rounds, mask_source, ServerMode(server_mode), blocks,
    )
    out = sim.run()
    honest = sum(1 for i in range(n) if not sim.behaviors[i].faulty)
    undecided = all(out.decided_block[i] is None for i in range(n) if not sim.behaviors[i].faulty)
    if out.exhausted and undecided and honest * 2 <= n:
        raise UnresolvableRoundError(
            f"no decision after {max_rounds} rounds with only {honest} honest nodes of {n}"
        )
    return out


def check_properties(o: ConsensusOutcome, behaviors: Mapping[int, NodeBehavior] | None = None) -> PropertyReport:
    behaviors = behaviors or {}
    decisions = {
        i: b for i, b in o.honest_decisions(behaviors).items() if b is not None
    }
    agreement = len({b.payload for b in decisions.values()}) <= 1
    validity = all(
        o.proposals.get(o.decided_round[i]) is not None
        and b.payload == o.proposals[o.decided_round[i]].payload
        for i, b in decisions.items()
    )
    honest_waits = [w for w in o.waits if not behaviors.get(w.node, HONEST).faulty]
    wait_free = all(w.completed_at <= w.deadline for w in honest_waits)
    notes = []
    if any(o.observers.values()):
        notes.append("excluded nodes adopted the block as observers")
    if o.exhausted:
        notes.append("round budget exhausted")
    return PropertyReport(agreement, validity, wait_free, frozenset(decisions), tuple(notes))


def odd_corruption(b1_faults: FaultSpec, b2_faults: FaultSpec) -> frozenset[int]:
    """Nodes whose b3 is wrong: exactly one of their two shares was flipped."""
    return b1_faults.corrupt_shares ^ b2_faults.corrupt_shares
