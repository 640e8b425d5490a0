import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckacoin.agreement import (
    AUX, EST, CrashFault, StallStrategy, aux_outcome, aux_rule, bivalent_start, run_coin_binary_agreement,
    run_flp_demo, stallable_configs,
)
from ckacoin.errors import ConfigError, SizeError
from ckacoin.netsim import Adversarial, RandomDelay
from ckacoin.rng import split
from ckacoin.server import ServerMode


def test_unanimous_fast_path():
    decisions, phases = run_coin_binary_agreement(5, 0, [1] * 5, rng=0)
    assert set(decisions.values()) == {1} and phases <= 2


def test_t_bound():
    with pytest.raises(ConfigError):
        run_coin_binary_agreement(4, 2, [0, 1, 0, 1])
    with pytest.raises(ConfigError):
        run_coin_binary_agreement(5, 1, [0] * 5, {0: CrashFault(), 1: CrashFault()})


def test_local_rules():
    assert aux_rule([1, 1, 0], 3) == 1
    assert aux_rule([1, 0], 3) is None
    assert aux_outcome([1, 1, None], 1, 0) == (1, 1)
    assert aux_outcome([1, None, None], 1, 0) == (None, 1)
    assert aux_outcome([None, None], 1, 0) == (None, 0)


@given(st.integers(0, 2**31), st.sampled_from([(4, 1), (5, 2), (7, 2), (7, 3), (9, 4)]), st.data())
def test_agreement_and_validity_under_crashes(seed, nt, data):
    n, t = nt
    inputs = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    faulty = data.draw(st.lists(st.integers(0, n - 1), max_size=t, unique=True))
    crashes = {
        i: CrashFault(data.draw(st.integers(1, 3)), data.draw(st.sampled_from([EST, AUX])), data.draw(st.integers(0, n)))
        for i in faulty
    }
    o = run_coin_binary_agreement(n, t, inputs, crashes, RandomDelay(3), seed)
    honest = o.honest_decisions()
    assert o.all_decided and o.agreement
    assert o.phases_used <= 60
    honest_inputs = {inputs[i] for i in honest}
    if len(honest_inputs) == 1:
        assert set(honest.values()) == honest_inputs


def test_mean_phases_n7_t2():
    phases = []
    for s in range(300):
        g = split(21, s)
        inputs = [int(x) for x in g.integers(0, 2, 7)]
        crashed = g.choice(7, 2, replace=False)
        o = run_coin_binary_agreement(7, 2, inputs, {int(c): CrashFault(1) for c in crashed}, RandomDelay(3), g)
        phases.append(o.phases_used)
    assert np.mean(phases) <= 7 and max(phases) <= 60


def test_statevector_coin():
    o = run_coin_binary_agreement(4, 1, [0, 1, 0, 1], None, RandomDelay(2), 3, server_mode=ServerMode.STATEVECTOR)
    assert o.all_decided and o.agreement


def test_stallable_configs_small():
    assert stallable_configs(3, 1) == {(0, 1, 1), (1, 0, 1), (1, 1, 0)}
    assert bivalent_start(3, 1) == (0, 1, 1)
    assert all(0 < sum(e) < len(e) for e in stallable_configs(4, 1))


def test_strawman_stalls():
    for s in range(10):
        r = run_flp_demo(3, True, 50, s)
        assert r.stalled and r.phases_reached >= 50
        assert set(r.decisions.values()) == {None}


def test_strawman_stalls_n4():
    assert run_flp_demo(4, True, 30, 0).stalled


def test_real_coin_escapes():
    decided = [run_flp_demo(3, False, 50, s).decided for s in range(300)]
    assert sum(decided) / 300 >= 0.99


@pytest.mark.parametrize("strawman", [True, False])
@pytest.mark.parametrize("b", [0, 1])
def test_unanimous_decides_immediately(strawman, b):
    r = run_flp_demo(3, strawman, 50, 0, inputs=(b, b, b))
    assert r.decided and r.decision_phase == 1
    assert set(r.decisions.values()) == {b}


def test_adversarial_real_coin_terminates():
    for s in range(100):
        g = split(31, s)
        inputs = [int(x) for x in g.integers(0, 2, 5)]
        o = run_coin_binary_agreement(5, 2, inputs, None, Adversarial(StallStrategy(5, 2, inputs), horizon=4), g)
        assert o.all_decided and o.agreement and o.phases_used <= 60


def test_flp_demo_size():
    with pytest.raises(SizeError):
        run_flp_demo(2)
