"""Trusted quantum server handing out one GHZ share per node per round."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import quantum
from .errors import ConfigError, ProtocolMisuseError, SizeError
from .quantum import IDEAL, NoiseChannel, Q, StateVector

LOST = None  # the "no share" view, printed as ⊥ in reports


class ServerMode(enum.Enum):
    ORACLE = "oracle"
    STATEVECTOR = "statevector"


@dataclass(frozen=True)
class FaultSpec:
    corrupt_shares: frozenset[int] = frozenset()
    lost_shares: frozenset[int] = frozenset()
    eavesdrop: bool = False
    channel: NoiseChannel = IDEAL

    def __post_init__(self):
        object.__setattr__(self, "corrupt_shares", frozenset(self.corrupt_shares))
        object.__setattr__(self, "lost_shares", frozenset(self.lost_shares))
        if self.corrupt_shares & self.lost_shares:
            raise ConfigError("a share cannot be both corrupted and lost")

    @property
    def affected(self) -> frozenset[int]:
        return self.corrupt_shares | self.lost_shares

    @property
    def is_ideal(self) -> bool:
        return not self.affected and not self.eavesdrop and self.channel.is_identity


NO_FAULTS = FaultSpec()

# Called as hook(round_id, node, value) after every share measurement.
MeasureHook = Callable[[int, int, "int | None"], None]


@dataclass
class CoinRound:
    """One server round: a shared bit spread over ``n`` shares.

    All fault randomness (channel noise and the eavesdropper's disturbance) is
    drawn when the round opens, so a node's view does not depend on the order
    in which nodes measure.
    """

    round_id: int
    n: int
    mode: ServerMode
    faults: FaultSpec
    per_node_view: dict[int, int | None] = field(default_factory=dict)
    _common_bit: int | None = None
    _state: StateVector | None = None
    _disturbance: list = field(default_factory=list)
    hook: MeasureHook | None = None

    @property
    def common_bit(self) -> int | None:
        """The shared value; hidden (None) until the first share is measured."""
        if self.mode is ServerMode.STATEVECTOR and not self.per_node_view:
            return None
        return self._common_bit

    @property
    def state(self) -> StateVector | None:
        return self._state

    def measure(self, node: int, rng: np.random.Generator) -> int | None:
        if not 0 <= node < self.n:
            raise ProtocolMisuseError(f"node {node} is not part of a {self.n}-node round")
        if node in self.per_node_view:
            raise ProtocolMisuseError(f"node {node} already measured round {self.round_id}")
        if self.mode is ServerMode.STATEVECTOR:
            outcome = quantum.measure_one(self._state, Q(node), rng)
            self._state = outcome.collapsed
            bit = outcome.bits[Q(node)]
            if self._common_bit is None:
                self._common_bit = bit
        else:
            bit = self._common_bit
        value = self._deliver(node, bit)
        self.per_node_view[node] = value
        if self.hook is not None:
            self.hook(self.round_id, node, value)
        return value

    def _deliver(self, node: int, bit: int) -> int | None:
        if node in self.faults.lost_shares:
            return LOST
        if node in self.faults.corrupt_shares:
            bit ^= 1
        eve, u, r, cu, cr = self._disturbance[node]
        if eve:
            bit = int(r < 0.5) if u < 0.5 else bit
        return quantum.noisy_bit(bit, self.faults.channel, cu, cr)

    def views(self) -> dict[int, int | None]:
        return dict(self.per_node_view)


class CKAServer:
    """Issues rounds with strictly increasing ids."""

    def __init__(self, mode: ServerMode = ServerMode.ORACLE, hook: MeasureHook | None = None):
        self.mode = ServerMode(mode)
        self.hook = hook
        self._ids = itertools.count(1)

    def open_round(
        self, n: int, faults: FaultSpec = NO_FAULTS, rng: np.random.Generator | None = None
    ) -> CoinRound:
        if not isinstance(n, (int, np.integer)) or n < 2:
            raise SizeError(f"a coin round needs at least 2 nodes, got {n!r}")
        if any(not 0 <= x < n for x in faults.affected):
            raise ConfigError("fault spec names a node outside the round")
        if self.mode is ServerMode.STATEVECTOR and n > quantum.MAX_REGISTERS:
            raise SizeError(f"state-vector rounds are capped at {quantum.MAX_REGISTERS} nodes")
        rng = rng if rng is not None else np.random.default_rng()
        r = CoinRound(next(self._ids), int(n), self.mode, faults, hook=self.hook)
        if self.mode is ServerMode.STATEVECTOR:
            r._state = quantum.make_ghz(int(n))
        else:
            r._common_bit = int(rng.random() < 0.5)
        r._disturbance = self._draw_disturbance(int(n), faults, rng)
        return r

    @staticmethod
    def _draw_disturbance(n: int, faults: FaultSpec, rng: np.random.Generator) -> list:
        target = int(rng.integers(n)) if faults.eavesdrop else -1
        if faults.eavesdrop:
            u, r = rng.random(2)
        else:
            u = r = 1.0
        if faults.channel.is_identity:
            noise = np.ones((n, 2))
        else:
            noise = rng.random((n, 2))
        return [
            (i == target, u, r, noise[i, 0], noise[i, 1]) for i in range(n)
        ]

    def coin_pair(
        self, n: int, faults: FaultSpec | tuple[FaultSpec, FaultSpec] = NO_FAULTS, rng=None
    ) -> tuple[CoinRound, CoinRound]:
        """Two independent rounds, the sources of b1 and b2."""
        f1, f2 = faults if isinstance(faults, tuple) else (faults, faults)
        rng = rng if rng is not None else np.random.default_rng()
        return self.open_round(n, f1, rng), self.open_round(n, f2, rng)
