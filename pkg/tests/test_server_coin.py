import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckacoin import quantum
from ckacoin.coin import NOT_COMMON, CoinOutcome, estimate_fairness, is_common, run_coin
from ckacoin.errors import ConfigError, ProtocolMisuseError, SizeError
from ckacoin.quantum import NoiseChannel, NoiseKind
from ckacoin.rng import split
from ckacoin.server import LOST, CKAServer, FaultSpec, ServerMode

MODES = [ServerMode.ORACLE, ServerMode.STATEVECTOR]


def test_split_is_stable():
    a = split(5, 3).random(4)
    b = split(5, 3).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, split(5, 4).random(4))


# -- server -------------------------------------------------------------------


def test_oracle_round_unmeasured():
    r = CKAServer(ServerMode.ORACLE).open_round(4)
    assert r.n == 4 and r.views() == {}


def test_statevector_round_is_ghz():
    r = CKAServer(ServerMode.STATEVECTOR).open_round(4)
    assert r.state == quantum.make_ghz(4)
    assert r.common_bit is None  # nothing measured yet


def test_round_ids_increase():
    srv = CKAServer()
    ids = [srv.open_round(3).round_id for _ in range(5)]
    assert ids == sorted(set(ids))


def test_open_round_errors():
    srv = CKAServer()
    with pytest.raises(SizeError):
        srv.open_round(1)
    with pytest.raises(ConfigError):
        srv.open_round(3, FaultSpec(corrupt_shares={5}))
    with pytest.raises(ConfigError):
        FaultSpec(corrupt_shares={1}, lost_shares={1})


@pytest.mark.parametrize("mode", MODES)
def test_common_bit_fraction(mode):
    srv = CKAServer(mode)
    zeros = 0
    for s in range(10_000):
        r = srv.open_round(3, rng=split(1, s))
        r.measure(0, split(2, s))
        zeros += r.common_bit == 0
    assert 0.48 <= zeros / 10_000 <= 0.52


@pytest.mark.parametrize("mode", MODES)
def test_ideal_all_equal(mode, rng):
    r = CKAServer(mode).open_round(4, rng=rng)
    bits = [r.measure(i, rng) for i in range(4)]
    assert len(set(bits)) == 1 and bits[0] == r.common_bit


@pytest.mark.parametrize("mode", MODES)
def test_double_measure(mode, rng):
    r = CKAServer(mode).open_round(3, rng=rng)
    r.measure(1, rng)
    with pytest.raises(ProtocolMisuseError):
        r.measure(1, rng)
    with pytest.raises(ProtocolMisuseError):
        r.measure(3, rng)


@pytest.mark.parametrize("mode", MODES)
def test_corrupt_and_lost(mode, rng):
    r = CKAServer(mode).open_round(4, FaultSpec(corrupt_shares={2}, lost_shares={1}), rng)
    v = [r.measure(i, rng) for i in range(4)]
    assert v[1] is LOST
    assert v[0] == v[3] == 1 - v[2]


def test_hook_sees_every_measurement(rng):
    seen = []
    srv = CKAServer(ServerMode.STATEVECTOR, hook=lambda rid, node, val: seen.append((rid, node, val)))
    r = srv.open_round(3, rng=rng)
    for i in (2, 0, 1):
        r.measure(i, rng)
    assert [s[1] for s in seen] == [2, 0, 1]
    assert {s[0] for s in seen} == {r.round_id}


def test_coin_pair_reproducible():
    def pair(seed):
        rng = np.random.default_rng(seed)
        a, b = CKAServer().coin_pair(4, rng=rng)
        return a.measure(0, rng), b.measure(0, rng)

    assert pair(11) == pair(11)


def test_coin_pair_joint_uniform():
    srv = CKAServer()
    counts = np.zeros((2, 2))
    for s in range(10_000):
        rng = split(3, s)
        a, b = srv.coin_pair(2, rng=rng)
        counts[a.measure(0, rng), b.measure(0, rng)] += 1
    assert np.all(np.abs(counts / 10_000 - 0.25) <= 0.02)


def test_coin_pair_separate_faults(rng):
    a, b = CKAServer().coin_pair(3, (FaultSpec(corrupt_shares={0}), FaultSpec()), rng)
    va = [a.measure(i, rng) for i in range(3)]
    vb = [b.measure(i, rng) for i in range(3)]
    assert va[0] != va[1] and vb[0] == vb[1]


def test_eavesdrop_hits_one_node_half_the_time():
    srv = CKAServer(ServerMode.ORACLE)
    disagree = 0
    for s in range(4000):
        rng = split(4, s)
        r = srv.open_round(4, FaultSpec(eavesdrop=True), rng)
        disagree += len({r.measure(i, rng) for i in range(4)}) > 1
    # one target, replaced with probability 1/2 by a fair bit: P(visible) = 1/4
    assert abs(disagree / 4000 - 0.25) < 0.03


@given(st.integers(0, 2**32 - 1), st.permutations(range(5)))
def test_views_independent_of_order(seed, order):
    faults = FaultSpec(corrupt_shares={1}, eavesdrop=True, channel=NoiseChannel(NoiseKind.DEPOLARIZING, 0.3))
    ref = CKAServer(ServerMode.STATEVECTOR).open_round(5, faults, np.random.default_rng(seed))
    g = np.random.default_rng(seed + 1)
    for i in range(5):
        ref.measure(i, g)
    r = CKAServer(ServerMode.STATEVECTOR).open_round(5, faults, np.random.default_rng(seed))
    g = np.random.default_rng(seed + 1)
    for i in order:
        r.measure(i, g)
    assert r.views() == ref.views()


@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_both_modes_common_when_ideal(seed, n):
    views = []
    for mode in MODES:
        rng = np.random.default_rng(seed)
        r = CKAServer(mode).open_round(n, rng=np.random.default_rng(seed))
        for i in range(n):
            r.measure(i, rng)
        assert len(set(r.views().values())) == 1
        views.append(r)
    assert all(v.common_bit in (0, 1) for v in views)


# -- coin ---------------------------------------------------------------------


def test_is_common_cases():
    assert is_common(CoinOutcome({0: 1, 1: 1, 2: 1}, frozenset({0, 1, 2}))) == 1
    assert is_common(CoinOutcome({0: 0, 1: 1}, frozenset({0, 1}))) == NOT_COMMON
    assert is_common(CoinOutcome({0: 0, 1: 1}, frozenset({0}))) == 0


def test_empty_good_set():
    with pytest.raises(ConfigError):
        CoinOutcome({}, frozenset())


def test_run_coin_ideal(rng):
    o = run_coin(4, 0, rng=rng)
    assert len(set(o.outputs.values())) == 1


def test_run_coin_corruption_is_local(rng):
    for _ in range(50):
        o = run_coin(7, 2, FaultSpec(corrupt_shares={0, 1}), rng)
        assert o.good_set == frozenset(range(2, 7))
        assert is_common(o) in (0, 1)


def test_run_coin_loss(rng):
    o = run_coin(4, 1, FaultSpec(lost_shares={3}), rng)
    assert 3 not in o.outputs and o.good_set == {0, 1, 2}


def test_run_coin_budget(rng):
    with pytest.raises(ConfigError):
        run_coin(4, 1, FaultSpec(corrupt_shares={0, 1}), rng)


def test_fairness_ideal():
    est = estimate_fairness(4, 0, trials=10_000, seed=1)
    assert est.common_rate == 1.0
    assert 0.48 <= est.p_hat_zero <= 0.52 and 0.48 <= est.p_hat_one <= 0.52
    assert est.p_hat_zero + est.p_hat_one <= 1 + 1e-12


def test_fairness_corrupt_t_nodes():
    assert estimate_fairness(5, 2, FaultSpec(corrupt_shares={3, 4}), 2000, 2).common_rate == 1.0


@pytest.mark.parametrize("n", [2, 3, 5])
def test_bitflip_half_common_rate(n):
    trials = 6000
    est = estimate_fairness(n, 0, FaultSpec(channel=NoiseChannel(NoiseKind.BIT_FLIP, 0.5)), trials, 3, ServerMode.ORACLE)
    p = 2 * 0.5**n  # all n i.i.d. fair flips land on the same value
    assert abs(est.common_rate - p) < 4 * math.sqrt(p * (1 - p) / trials)


def test_fairness_to_dict_is_json_safe():
    import json

    est = estimate_fairness(3, 1, FaultSpec(lost_shares={2}), 50, 0)
    d = est.to_dict()
    assert d["node_marginals"][2] is None
    json.dumps(d)
