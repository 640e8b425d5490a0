"""Common-coin runs over the CKA server and their fairness statistics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import split
from .server import NO_FAULTS, CKAServer, FaultSpec, ServerMode

NOT_COMMON = "not-common"


@dataclass(frozen=True)
class CoinOutcome:
    outputs: dict[int, int]
    good_set: frozenset[int]

    def __post_init__(self):
        if not self.good_set:
            raise ConfigError("a coin outcome needs at least one good player")


@dataclass(frozen=True)
class FairnessEstimate:
    p_hat_zero: float
    p_hat_one: float
    common_rate: float
    trials: int
    t: int
    n: int = 0
    node_marginals: list[float] = field(default_factory=list)  # P(v_i = 1) per node

    @property
    def fairness(self) -> float:
        return min(self.p_hat_zero, self.p_hat_one)

    def to_dict(self) -> dict:
        return asdict(self)


def is_common(o: CoinOutcome) -> int | str:
    """The bit every good player output, or ``NOT_COMMON``."""
    values = {o.outputs.get(i) for i in o.good_set}
    if len(values) == 1:
        (b,) = values
        if b in (0, 1):
            return b
    return NOT_COMMON


def _check_budget(n: int, t: int, faults: FaultSpec) -> None:
    if t < 0:
        raise ConfigError("t must be non-negative")
    if len(faults.affected) > t:
        raise ConfigError(
            f"fault spec touches {len(faults.affected)} nodes but the coin tolerates t={t}"
        )
    if len(faults.affected) >= n:
        raise ConfigError("no good players left")


def run_coin(
    n: int,
    t: int,
    faults: FaultSpec = NO_FAULTS,
    rng: np.random.Generator | None = None,
    server: CKAServer | None = None,
) -> CoinOutcome:
    """One coin toss: every node measures its share of a fresh round."""
    _check_budget(n, t, faults)
    server = server or CKAServer(ServerMode.STATEVECTOR)
    rng = rng if rng is not None else np.random.default_rng()
    r = server.open_round(n, faults, rng)
    outputs = {}
    for node in range(n):
        v = r.measure(node, rng)
        if v is not None:
            outputs[node] = v
    good = frozenset(range(n)) - faults.affected
    return CoinOutcome(outputs, good)


def estimate_fairness(
    n: int,
    t: int,
    faults: FaultSpec = NO_FAULTS,
    trials: int = 10_000,
    seed: int = 0,
    mode: ServerMode = ServerMode.STATEVECTOR,
) -> FairnessEstimate:
    """Monte Carlo estimate of the coin's per-value fairness.

    A trial counts toward ``b`` only if every good player output ``b``.
    Trial ``i`` uses the generator ``split(seed, i)``.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    _check_budget(n, t, faults)
    server = CKAServer(mode)
    counts = [0, 0]
    ones = np.zeros(n)
    seen = np.zeros(n)
    for i in range(trials):
        o = run_coin(n, t, faults, split(seed, i), server)
        c = is_common(o)
        if c != NOT_COMMON:
            counts[c] += 1
        for node, v in o.outputs.items():
            ones[node] += v
            seen[node] += 1
    marginals = [float(a / b) if b else None for a, b in zip(ones, seen)]
    return FairnessEstimate(
        p_hat_zero=counts[0] / trials,
        p_hat_one=counts[1] / trials,
        common_rate=(counts[0] + counts[1]) / trials,
        trials=trials,
        t=t,
        n=n,
        node_marginals=marginals,
    )
