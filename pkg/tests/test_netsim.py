import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckacoin.errors import ConfigError, LifecycleError, ReplayError
from ckacoin.netsim import (
    TIMEOUT, Adversarial, DeliverAll, Fifo, HoldBack, Network, NetworkView, PartitionSpec,
    RandomDelay, first_divergence, replay,
)


def drain(net, max_steps=1000):
    out = []
    while not net.quiescent() and max_steps:
        out.extend(net.step())
        max_steps -= 1
    return out


def test_fifo_order():
    net = Network(Fifo())
    net.send(0, 1, "A", b"\x01")
    net.send(0, 1, "B", b"\x02")
    got = net.step()
    assert [e.kind for e in got] == ["A", "B"]
    assert all(e.enqueued_at == 0 and net.now == 1 for e in got)


def test_send_after_halt():
    net = Network()
    net.halt()
    with pytest.raises(LifecycleError):
        net.send(0, 1, "A")
    with pytest.raises(LifecycleError):
        net.step()


def random_traffic(seed, max_delay=5):
    net = Network(RandomDelay(max_delay), np.random.default_rng(seed))
    for i in range(30):
        net.send(i % 4, (i + 1) % 4, "M", bytes([i]))
    drain(net)
    return net.trace


def test_random_delay_replay():
    assert random_traffic(7) == random_traffic(7)
    replay(random_traffic(7), random_traffic, 7)
    assert random_traffic(7) != random_traffic(8)


def test_replay_reports_divergence():
    with pytest.raises(ReplayError) as ei:
        replay(random_traffic(7), random_traffic, 8)
    assert ei.value.step_index == first_divergence(random_traffic(7), random_traffic(8))


def test_empty_run_empty_log():
    net = Network()
    assert drain(net) == [] and net.trace == []
    assert first_divergence([], []) is None


@given(st.integers(0, 2**31), st.integers(1, 6))
def test_random_delay_bounds_and_causality(seed, d):
    net = Network(RandomDelay(d), np.random.default_rng(seed))
    sent = [net.send(0, 1, "M", bytes([i])) for i in range(20)]
    got = drain(net)
    assert len(got) == 20
    for e in sent:
        step = next(int(line.split()[0]) for line in net.trace if line.endswith(e.payload.hex()))
        assert e.enqueued_at < step <= e.enqueued_at + d


def test_partition_isolation():
    part = PartitionSpec(({0, 1}, {2, 3}), 0, 5)
    net = Network(Fifo(), partitions=[part])
    for s in range(4):
        for d in range(4):
            if s != d:
                net.send(s, d, "M")
    got = drain(net)
    assert got and all((e.src < 2) == (e.dst < 2) for e in got)
    # after the window closes, cross traffic flows again
    while net.now < 5:
        net.step()
    net.send(0, 3, "M")
    assert [e.dst for e in net.step()] == [3]


def test_partition_drops_in_flight_messages():
    for seed in range(20):
        net = Network(RandomDelay(3), np.random.default_rng(seed), partitions=[PartitionSpec(({0}, {1}), 2, 10)])
        net.send(0, 1, "M")
        delivered = drain(net)
        assert len(delivered) + len(net.dropped) == 1
        assert all(int(line.split()[0]) < 2 for line in net.trace)


def test_partition_groups_disjoint():
    with pytest.raises(ConfigError):
        PartitionSpec(({0, 1}, {1, 2}), 0, 1)


def test_timeouts_fire_on_schedule():
    net = Network(Adversarial(HoldBack(), horizon=None))
    net.schedule_timeout(2, 3, round=1, tag=b"\x05")
    got = [e for _ in range(3) for e in net.step()]
    assert [(e.kind, e.dst, net.now) for e in got] == [(TIMEOUT, 2, 3)]
    with pytest.raises(ConfigError):
        net.schedule_timeout(0, 0)


def test_adversary_horizon_forces_delivery():
    net = Network(Adversarial(HoldBack(), horizon=4))
    net.send(0, 1, "M")
    steps = 0
    while not net.step():
        steps += 1
    assert net.now == 4


def test_adversary_sees_headers_only():
    seen = []

    class Spy:
        def choose(self, view: NetworkView):
            seen.extend(view.pending)
            return [h.seq for h in view.pending]

    net = Network(Adversarial(Spy(), horizon=None))
    net.send(0, 1, "EST", b"secret", round=3)
    net.step()
    assert seen and not hasattr(seen[0], "payload")
    assert (seen[0].kind, seen[0].round) == ("EST", 3)


def test_adversary_empty_network_noop():
    assert DeliverAll().choose(NetworkView(0, (), ())) == []
    assert Network(Adversarial(DeliverAll())).step() == []


def test_drop_rate():
    net = Network(Fifo(), np.random.default_rng(0), drop_rate=1.0)
    assert net.send(0, 1, "M") is None and net.quiescent()


def test_trace_format():
    net = Network()
    net.send(1, 2, "B3", b"\x01", round=4)
    net.send(2, 1, "B3", b"", round=4)
    net.step()
    assert net.trace == ["1 4 1 2 B3 01", "1 4 2 1 B3 -"]
