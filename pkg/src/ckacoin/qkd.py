"""Pairwise BB84 baseline: sifting, intercept-resend, QBER testing, channel counts."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError, SizeError
from .quantum import IDEAL, NoiseChannel, NoiseKind

DEFAULT_THRESHOLD = 0.11


class Basis(enum.IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1


@dataclass(frozen=True)
class SiftResult:
    kept_indices: np.ndarray
    alice_key: np.ndarray
    bob_key: np.ndarray
    sift_rate: float
    qber: float
    n_photons: int = 0

    @property
    def n_kept(self) -> int:
        return int(self.kept_indices.size)

    def summary(self) -> dict:
        return {
            "n_photons": self.n_photons,
            "n_kept": self.n_kept,
            "sift_rate": self.sift_rate,
            "qber": self.qber,
        }


@dataclass(frozen=True)
class TopologyCost:
    n: int
    pairwise_channels: int
    cka_channels: int


def _measure(bits: np.ndarray, prep: np.ndarray, meas: np.ndarray, coin: np.ndarray) -> np.ndarray:
    # matching basis reads the prepared bit; otherwise the outcome is a fair coin
    return np.where(prep == meas, bits, coin)


def bb84_exchange(
    n_photons: int,
    eavesdrop: bool = False,
    channel: NoiseChannel = IDEAL,
    rng: np.random.Generator | None = None,
) -> SiftResult:
    """Send ``n_photons`` BB84 states and sift on matching bases.

    The eavesdropper, when present, measures each photon in a uniformly random
    basis and resends what she saw in that basis. The channel acts on the
    photon reaching the receiver: bit flip or depolarizing on the encoded bit,
    loss removes the photon before sifting.
    """
    if n_photons < 1:
        raise SizeError("need at least one photon")
    rng = rng if rng is not None else np.random.default_rng()
    n = int(n_photons)
    a_bits = rng.integers(0, 2, n, dtype=np.int8)
    a_basis = rng.integers(0, 2, n, dtype=np.int8)
    b_basis = rng.integers(0, 2, n, dtype=np.int8)

    sent_bits, sent_basis = a_bits, a_basis
    if eavesdrop:
        e_basis = rng.integers(0, 2, n, dtype=np.int8)
        e_bits = _measure(a_bits, a_basis, e_basis, rng.integers(0, 2, n, dtype=np.int8))
        sent_bits, sent_basis = e_bits, e_basis

    arrived = np.ones(n, dtype=bool)
    if not channel.is_identity:
        hit = rng.random(n) < channel.p
        if channel.kind is NoiseKind.BIT_FLIP:
            sent_bits = np.where(hit, sent_bits ^ 1, sent_bits)
        elif channel.kind is NoiseKind.DEPOLARIZING:
            sent_bits = np.where(hit, rng.integers(0, 2, n, dtype=np.int8), sent_bits)
        elif channel.kind is NoiseKind.LOSS:
            arrived = ~hit

    b_bits = _measure(sent_bits, sent_basis, b_basis, rng.integers(0, 2, n, dtype=np.int8))
    kept = np.flatnonzero((a_basis == b_basis) & arrived)
    alice, bob = a_bits[kept], b_bits[kept]
    qber = float(np.mean(alice != bob)) if kept.size else 0.0
    return SiftResult(kept, alice, bob, kept.size / n, qber, n)


@dataclass(frozen=True)
class Detection:
    detected: bool
    sample_qber: float
    sample_size: int
    remaining: SiftResult

    def __bool__(self) -> bool:
        return self.detected


def detect_eavesdropper(
    s: SiftResult,
    sample_fraction: float = 0.2,
    threshold: float = DEFAULT_THRESHOLD,
    rng: np.random.Generator | None = None,
) -> Detection:
    """Disclose a random sample of the sifted key and compare its QBER to ``threshold``.

    The disclosed positions are removed from the key returned in ``remaining``.
    """
    if not 0.0 < sample_fraction < 1.0:
        raise ConfigError("sample_fraction must lie strictly between 0 and 1")
    if s.n_kept == 0:
        raise InsufficientDataError("sifted key is empty")
    rng = rng if rng is not None else np.random.default_rng()
    k = max(1, int(round(sample_fraction * s.n_kept)))
    picked = np.sort(rng.choice(s.n_kept, size=k, replace=False))
    sample_qber = float(np.mean(s.alice_key[picked] != s.bob_key[picked]))
    keep = np.ones(s.n_kept, dtype=bool)
    keep[picked] = False
    alice, bob = s.alice_key[keep], s.bob_key[keep]
    remaining = SiftResult(
        s.kept_indices[keep],
        alice,
        bob,
        int(keep.sum()) / s.n_photons if s.n_photons else 0.0,
        float(np.mean(alice != bob)) if alice.size else 0.0,
        s.n_photons,
    )
    return Detection(sample_qber > threshold, sample_qber, k, remaining)


def topology_cost(n: int) -> TopologyCost:
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise SizeError(f"topology needs at least 2 nodes, got {n!r}")
    n = int(n)
    return TopologyCost(n, n * (n - 1) // 2, n)


def _ket(bit: int, basis: int) -> np.ndarray:
    if basis == Basis.RECTILINEAR:
        return np.eye(2)[bit]
    return np.array([1.0, 1.0 if bit == 0 else -1.0]) / np.sqrt(2.0)


def intercept_resend_qber_exact() -> float:
    """Sifted error rate under intercept-resend, summed over every branch with Born weights."""
    err = total = 0.0
    for a_bit, a_basis, e_basis, b_basis in itertools.product((0, 1), repeat=4):
        if a_basis != b_basis:
            continue
        w = 1 / 16
        psi = _ket(a_bit, a_basis)
        for e_bit in (0, 1):
            pe = abs(_ket(e_bit, e_basis) @ psi) ** 2
            resent = _ket(e_bit, e_basis)
            for b_bit in (0, 1):
                pb = abs(_ket(b_bit, b_basis) @ resent) ** 2
                total += w * pe * pb
                if b_bit != a_bit:
                    err += w * pe * pb
    return float(err / total)
