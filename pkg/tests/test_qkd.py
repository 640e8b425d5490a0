import itertools
import math
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckacoin.errors import ConfigError, InsufficientDataError, SizeError
from ckacoin.qkd import (
    SiftResult, bb84_exchange, detect_eavesdropper, intercept_resend_qber_exact, topology_cost,
)
from ckacoin.quantum import NoiseChannel, NoiseKind
from ckacoin.rng import split


def enumerated_qber():
    """The 8 equiprobable (sender basis, eve basis, receiver outcome) branches, on matched bases."""
    errors = 0
    for a_basis, e_basis, b_out in itertools.product((0, 1), repeat=3):
        # sender sent 0; eve's basis matching keeps 0, otherwise the resent state is random
        resent_random = e_basis != a_basis
        errors += resent_random and b_out == 1
    return errors / 8


def test_oracle_values_agree():
    assert enumerated_qber() == 0.25
    assert intercept_resend_qber_exact() == pytest.approx(0.25, abs=1e-12)


def test_clean_exchange():
    s = bb84_exchange(100_000, rng=np.random.default_rng(1))
    assert 0.49 <= s.sift_rate <= 0.51
    assert s.qber == 0.0
    assert np.array_equal(s.alice_key, s.bob_key)


def test_intercept_resend_qber():
    s = bb84_exchange(100_000, eavesdrop=True, rng=np.random.default_rng(2))
    assert 0.23 <= s.qber <= 0.27


def test_single_photon_matched_basis():
    for seed in range(100):
        s = bb84_exchange(1, rng=np.random.default_rng(seed))
        if s.n_kept == 1:
            assert s.alice_key[0] == s.bob_key[0]
            return
    pytest.fail("no seed gave matching bases")


def test_bitflip_channel_qber():
    s = bb84_exchange(100_000, channel=NoiseChannel(NoiseKind.BIT_FLIP, 0.05), rng=np.random.default_rng(3))
    assert abs(s.qber - 0.05) < 0.005


def test_loss_reduces_sift():
    s = bb84_exchange(100_000, channel=NoiseChannel(NoiseKind.LOSS, 0.5), rng=np.random.default_rng(4))
    assert abs(s.sift_rate - 0.25) < 0.01 and s.qber == 0.0


def test_zero_photons():
    with pytest.raises(SizeError):
        bb84_exchange(0)


@given(st.integers(1, 400), st.booleans(), st.integers(0, 2**31))
def test_sift_invariants(n, eve, seed):
    s = bb84_exchange(n, eve, rng=np.random.default_rng(seed))
    assert s.kept_indices.size == s.alice_key.size == s.bob_key.size
    assert np.all(np.diff(s.kept_indices) > 0)
    assert s.sift_rate == s.n_kept / n
    if s.n_kept:
        assert s.qber == np.mean(s.alice_key != s.bob_key)


def binomial_miss(n_sample: int, p: float, threshold: float) -> float:
    """P(sample QBER <= threshold) when each sampled bit is wrong with probability p."""
    k_max = math.floor(threshold * n_sample)
    return sum(comb(n_sample, k) * p**k * (1 - p) ** (n_sample - k) for k in range(k_max + 1))


def test_detection_rates():
    # about 5000 sifted bits, 1000 sampled: missing a 25% error rate is astronomically unlikely
    assert binomial_miss(1000, 0.25, 0.11) < 1e-20
    tp = fp = 0
    for i in range(1000):
        g = split(5, i)
        tp += bool(detect_eavesdropper(bb84_exchange(10_000, True, rng=g), 0.2, 0.11, g))
        fp += bool(detect_eavesdropper(bb84_exchange(10_000, False, rng=g), 0.2, 0.11, g))
    assert tp >= 990 and fp <= 10


def test_threshold_one_never_detects(rng):
    s = bb84_exchange(2000, True, rng=rng)
    assert not detect_eavesdropper(s, threshold=1.0, rng=rng)


def test_detection_removes_sample(rng):
    s = bb84_exchange(2000, rng=rng)
    d = detect_eavesdropper(s, 0.25, rng=rng)
    assert d.sample_size == round(0.25 * s.n_kept)
    assert d.remaining.n_kept == s.n_kept - d.sample_size


def test_detection_errors(rng):
    empty = SiftResult(np.array([], int), np.array([], int), np.array([], int), 0.0, 0.0, 10)
    with pytest.raises(InsufficientDataError):
        detect_eavesdropper(empty, rng=rng)
    with pytest.raises(ConfigError):
        detect_eavesdropper(bb84_exchange(100, rng=rng), sample_fraction=1.0, rng=rng)


@pytest.mark.parametrize("n,pair,cka", [(2, 1, 2), (4, 6, 4), (100, 4950, 100), (10**6, 499_999_500_000, 10**6)])
def test_topology(n, pair, cka):
    c = topology_cost(n)
    assert (c.pairwise_channels, c.cka_channels) == (pair, cka)


@given(st.integers(2, 10**6))
def test_topology_formula(n):
    c = topology_cost(n)
    assert c.pairwise_channels == n * (n - 1) // 2 and c.cka_channels == n


@pytest.mark.parametrize("n", [1, 0, -3])
def test_topology_size_error(n):
    with pytest.raises(SizeError):
        topology_cost(n)
