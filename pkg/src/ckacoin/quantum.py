"""Dense state-vector simulator for the handful of registers a CKA round needs.

Basis indices are big-endian: register 0 is the most significant bit, so for
labels ``(Q0, Q1, Q2)`` the index of ``|q0 q1 q2>`` is ``4*q0 + 2*q1 + q2``.
Polarization registers use ``H`` (horizontal) = 0 and ``V`` (vertical) = 1.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import LabelError, SizeError, StateError

MAX_REGISTERS = 24
NORM_TOL = 1e-9
SQRT_HALF = 1.0 / math.sqrt(2.0)

H, V = 0, 1


class RegisterKind(enum.Enum):
    TIME_BIN = "T"
    POLARIZATION = "P"
    GENERIC = "Q"


@dataclass(frozen=True)
class RegisterLabel:
    kind: RegisterKind
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise LabelError(f"register index must be non-negative, got {self.index}")
        object.__setattr__(self, "_hash", hash((self.kind.value, self.index)))

    def __hash__(self):
        return self._hash

    def __str__(self) -> str:
        return f"{self.kind.value}{self.index}"


@functools.lru_cache(maxsize=None)
def T(i: int) -> RegisterLabel:
    return RegisterLabel(RegisterKind.TIME_BIN, i)


@functools.lru_cache(maxsize=None)
def P(i: int) -> RegisterLabel:
    return RegisterLabel(RegisterKind.POLARIZATION, i)


@functools.lru_cache(maxsize=None)
def Q(i: int) -> RegisterLabel:
    return RegisterLabel(RegisterKind.GENERIC, i)


class StateVector:
    """Immutable pure state over labelled two-level registers.

    ``erased`` holds registers whose carrier was lost in transit; they still
    occupy an axis of the amplitude tensor but measurements report them as
    ``None``.
    """

    __slots__ = ("labels", "amps", "erased", "_positions", "__dict__")

    def __init__(
        self,
        labels: Sequence[RegisterLabel],
        amps,
        *,
        erased: Iterable[RegisterLabel] = (),
        validate: bool = True,
    ):
        labels = tuple(labels)
        if not 1 <= len(labels) <= MAX_REGISTERS:
            raise SizeError(f"register count must be in [1, {MAX_REGISTERS}], got {len(labels)}")
        if len(set(labels)) != len(labels):
            raise LabelError(f"duplicate register labels in {[str(x) for x in labels]}")
        # arrays are frozen and shared, not copied; callers hand over ownership
        amps = np.asarray(amps, dtype=np.complex128).reshape(-1)
        if amps.size != 1 << len(labels):
            raise SizeError(f"expected {1 << len(labels)} amplitudes, got {amps.size}")
        amps.setflags(write=False)
        self.labels = labels
        self.amps = amps
        self.erased = frozenset(erased)
        self._positions = {lab: i for i, lab in enumerate(labels)}
        if not self.erased <= set(labels):
            raise LabelError("erased registers must be present in the state")
        if validate:
            self.check()

    def check(self) -> None:
        if not np.all(np.isfinite(self.amps)):
            raise StateError("non-finite amplitude")
        norm = self.norm_squared
        if abs(norm - 1.0) > NORM_TOL:
            raise StateError(f"state not normalized: sum |amp|^2 = {norm!r}")

    @property
    def n_registers(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.amps.size

    @functools.cached_property
    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amps) ** 2
        p.setflags(write=False)
        return p

    @functools.cached_property
    def norm_squared(self) -> float:
        return float(self.probabilities.sum())

    @functools.cached_property
    def is_normalized(self) -> bool:
        return bool(np.all(np.isfinite(self.amps))) and abs(self.norm_squared - 1.0) <= NORM_TOL

    @functools.cached_property
    def _cdf(self) -> np.ndarray:
        return np.cumsum(self.probabilities)

    @functools.cached_property
    def support(self) -> np.ndarray:
        """Basis indices with non-negligible amplitude."""
        return np.flatnonzero(self.probabilities > NORM_TOL**2)

    def position(self, label: RegisterLabel) -> int:
        try:
            return self._positions[label]
        except KeyError:
            raise LabelError(f"unknown register {label}") from None

    def bits_of(self, index: int) -> tuple[int, ...]:
        n = self.n_registers
        return tuple((index >> (n - 1 - k)) & 1 for k in range(n))

    def index_of(self, bits: Sequence[int]) -> int:
        if len(bits) != self.n_registers:
            raise SizeError("bit string length does not match register count")
        idx = 0
        for b in bits:
            idx = (idx << 1) | (int(b) & 1)
        return idx

    def tensor_view(self) -> np.ndarray:
        return self.amps.reshape((2,) * self.n_registers)

    def fidelity(self, other: "StateVector") -> float:
        """|<self|other>|^2, aligning registers by label."""
        if set(self.labels) != set(other.labels):
            raise LabelError("fidelity needs states over the same registers")
        if other.labels != self.labels:
            other = reorder(other, self.labels)
        return float(abs(np.vdot(self.amps, other.amps)) ** 2)

    def __eq__(self, other):
        if not isinstance(other, StateVector):
            return NotImplemented
        return (
            self.labels == other.labels
            and self.erased == other.erased
            and np.array_equal(self.amps, other.amps)
        )

    def __hash__(self):
        return hash((self.labels, self.amps.tobytes(), self.erased))

    def __repr__(self) -> str:
        terms = []
        for idx in self.support[:8]:
            bits = "".join(map(str, self.bits_of(int(idx))))
            terms.append(f"{self.amps[idx]:.4g}|{bits}>")
        more = " + ..." if self.support.size > 8 else ""
        labels = ",".join(map(str, self.labels))
        return f"StateVector[{labels}]({' + '.join(terms)}{more})"


def basis_state(labels: Sequence[RegisterLabel], bits: Sequence[int]) -> StateVector:
    labels = tuple(labels)
    amps = np.zeros(1 << len(labels), dtype=np.complex128)
    idx = 0
    for b in bits:
        idx = (idx << 1) | (int(b) & 1)
    amps[idx] = 1.0
    return StateVector(labels, amps)


def renormalize(s: StateVector) -> StateVector:
    norm = math.sqrt(float(np.sum(np.abs(s.amps) ** 2)))
    if norm == 0.0 or not math.isfinite(norm):
        raise StateError("cannot renormalize a zero or non-finite vector")
    return StateVector(s.labels, s.amps / norm, erased=s.erased)


@functools.lru_cache(maxsize=64)
def _ghz_cached(n: int) -> StateVector:
    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[0] = amps[-1] = SQRT_HALF
    return StateVector([Q(i) for i in range(n)], amps)


def make_ghz(n: int, labels: Sequence[RegisterLabel] | None = None) -> StateVector:
    """(|0...0> + |1...1>)/sqrt(2) over ``n`` registers (``Q0..Q{n-1}`` by default)."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_REGISTERS:
        raise SizeError(f"GHZ size must be in [1, {MAX_REGISTERS}], got {n!r}")
    ghz = _ghz_cached(int(n))
    if labels is None:
        return ghz
    return relabel(ghz, labels)


def relabel(s: StateVector, labels: Sequence[RegisterLabel]) -> StateVector:
    labels = tuple(labels)
    if len(labels) != s.n_registers:
        raise SizeError("relabel needs one label per register")
    mapping = dict(zip(s.labels, labels))
    return StateVector(labels, s.amps, erased={mapping[x] for x in s.erased})


def reorder(s: StateVector, labels: Sequence[RegisterLabel]) -> StateVector:
    """Permute registers into the given label order."""
    labels = tuple(labels)
    if len(labels) != s.n_registers or set(labels) != set(s.labels):
        raise LabelError("reorder needs a permutation of the existing labels")
    axes = [s.position(lab) for lab in labels]
    amps = np.transpose(s.tensor_view(), axes).reshape(-1)
    return StateVector(labels, amps, erased=s.erased)


def tensor(a: StateVector, b: StateVector) -> StateVector:
    return StateVector(a.labels + b.labels, np.kron(a.amps, b.amps), erased=a.erased | b.erased)


def _axis_slices(s: StateVector, label: RegisterLabel) -> np.ndarray:
    k = s.position(label)
    return s.amps.reshape(1 << k, 2, -1)


def apply_x(s: StateVector, label: RegisterLabel) -> StateVector:
    view = _axis_slices(s, label)
    return StateVector(s.labels, view[:, ::-1, :].reshape(-1), erased=s.erased)


def apply_z(s: StateVector, label: RegisterLabel) -> StateVector:
    view = _axis_slices(s, label).copy()
    view[:, 1, :] *= -1
    return StateVector(s.labels, view.reshape(-1), erased=s.erased)


def apply_y(s: StateVector, label: RegisterLabel) -> StateVector:
    # Y = i X Z
    out = apply_x(apply_z(s, label), label)
    return StateVector(s.labels, 1j * out.amps, erased=s.erased)


def append_register(s: StateVector, label: RegisterLabel, bit: int) -> StateVector:
    return tensor(s, basis_state([label], [bit]))


def copy_register(s: StateVector, src: RegisterLabel, new: RegisterLabel) -> StateVector:
    """Isometry |x> -> |x x>: a fresh register entangled as a copy of ``src``."""
    out = _axis_slices(append_register(s, new, 0), src).copy()
    # the new register is the last axis; flip it where src = 1
    tail = out[:, 1, :].reshape(-1, 2)
    out[:, 1, :] = tail[:, ::-1].reshape(out[:, 1, :].shape)
    return StateVector(s.labels + (new,), out.reshape(-1), erased=s.erased)


def definite_value(s: StateVector, label: RegisterLabel) -> int | None:
    """The register's bit if it is the same on every supported basis index, else None."""
    k = s.position(label)
    shift = s.n_registers - 1 - k
    values = {(int(i) >> shift) & 1 for i in s.support}
    return values.pop() if len(values) == 1 else None


def remove_register(s: StateVector, label: RegisterLabel) -> StateVector:
    """Drop a register that is in a definite basis state (unentangled)."""
    bit = definite_value(s, label)
    if bit is None:
        raise StateError(f"register {label} is not in a definite basis state")
    view = _axis_slices(s, label)[:, bit, :].reshape(-1)
    labels = tuple(x for x in s.labels if x != label)
    return StateVector(labels, view, erased=s.erased - {label})


def reduced_density(s: StateVector, keep: Sequence[RegisterLabel]) -> np.ndarray:
    """Partial trace of |s><s| onto ``keep`` (in the given order)."""
    keep = tuple(keep)
    rest = [x for x in s.labels if x not in keep]
    axes = [s.position(x) for x in keep] + [s.position(x) for x in rest]
    m = np.transpose(s.tensor_view(), axes).reshape(1 << len(keep), -1)
    return m @ m.conj().T


@dataclass(frozen=True)
class MeasurementOutcome:
    """Classical record of a measurement plus the post-measurement state.

    ``bits`` maps each measured register to 0/1, or ``None`` when the register
    was erased.
    """

    bits: Mapping[RegisterLabel, int | None]
    collapsed: StateVector

    def values(self) -> tuple[int | None, ...]:
        return tuple(self.bits[lab] for lab in self.collapsed.labels if lab in self.bits)

    def all_equal(self) -> bool:
        seen = {b for b in self.bits.values() if b is not None}
        return len(seen) <= 1


def _require_normalized(s: StateVector) -> None:
    if not s.is_normalized:
        raise StateError(f"measurement needs a normalized state (norm^2 = {s.norm_squared!r})")


def _collapsed_basis(s: StateVector, idx: int) -> StateVector:
    amps = np.zeros(s.dim, dtype=np.complex128)
    amps[idx] = 1.0
    out = StateVector(s.labels, amps, erased=s.erased, validate=False)
    # seed the caches instead of rescanning 2^n entries
    out.__dict__["norm_squared"] = 1.0
    out.__dict__["is_normalized"] = True
    out.__dict__["support"] = np.array([idx])
    return out


def measure_all_z(s: StateVector, rng: np.random.Generator) -> MeasurementOutcome:
    """Sample a basis index by inverse CDF over |amp|^2 and collapse onto it."""
    _require_normalized(s)
    u = rng.random() * s.norm_squared
    idx = int(np.searchsorted(s._cdf, u, side="right"))
    if idx >= s.dim:  # u rounded past the last cdf entry
        idx = int(s.support[-1])
    bits = s.bits_of(idx)
    collapsed = _collapsed_basis(s, idx)
    return MeasurementOutcome(
        {lab: (None if lab in s.erased else b) for lab, b in zip(s.labels, bits)}, collapsed
    )


_SPARSE_SUPPORT = 256


def measure_one(
    s: StateVector, which: RegisterLabel, rng: np.random.Generator
) -> MeasurementOutcome:
    """Measure a single register in Z; the rest of the state collapses accordingly."""
    k = s.position(which)
    _require_normalized(s)
    u = rng.random()
    shift = s.n_registers - 1 - k
    sup = s.support
    if sup.size == 1:
        # already a basis state: the outcome is certain and nothing changes
        bit = (int(sup[0]) >> shift) & 1
        return MeasurementOutcome({which: None if which in s.erased else bit}, s)
    if sup.size <= _SPARSE_SUPPORT:
        reg_bits = (sup >> shift) & 1
        probs = s.probabilities[sup]
        p0 = float(probs[reg_bits == 0].sum()) / s.norm_squared
    else:
        view = s.probabilities.reshape(1 << k, 2, -1)
        p0 = float(view[:, 0, :].sum()) / s.norm_squared
    bit = 0 if u < p0 else 1
    prob = p0 if bit == 0 else 1.0 - p0
    if sup.size <= _SPARSE_SUPPORT and np.count_nonzero(reg_bits == bit) == 1:
        idx = int(sup[reg_bits == bit][0])
        phase = s.amps[idx] / abs(s.amps[idx])
        collapsed = _collapsed_basis(s, idx)
        if phase != 1:
            collapsed = StateVector(s.labels, collapsed.amps * phase, erased=s.erased)
    else:
        amps = _axis_slices(s, which).copy()
        amps[:, 1 - bit, :] = 0.0
        collapsed = StateVector(s.labels, amps.reshape(-1) / math.sqrt(prob), erased=s.erased)
    value = None if which in s.erased else bit
    return MeasurementOutcome({which: value}, collapsed)


class NoiseKind(enum.Enum):
    IDEAL = "ideal"
    BIT_FLIP = "bitflip"
    DEPOLARIZING = "depolarizing"
    LOSS = "loss"


@dataclass(frozen=True)
class NoiseChannel:
    kind: NoiseKind = NoiseKind.IDEAL
    p: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0 or math.isnan(self.p):
            raise ValueError(f"noise probability must be in [0, 1], got {self.p}")
        if self.kind is NoiseKind.IDEAL and self.p != 0.0:
            raise ValueError("ideal channel takes p = 0")

    @property
    def is_identity(self) -> bool:
        return self.kind is NoiseKind.IDEAL or self.p == 0.0

    @classmethod
    def parse(cls, kind: str, p: float = 0.0) -> "NoiseChannel":
        return cls(NoiseKind(kind.lower()), float(p))


IDEAL = NoiseChannel()


def noisy_bit(bit: int, ch: NoiseChannel, u: float, r: float) -> int | None:
    """Pass one classical bit through ``ch`` given two uniform draws."""
    if ch.is_identity or u >= ch.p:
        return bit
    if ch.kind is NoiseKind.BIT_FLIP:
        return bit ^ 1
    if ch.kind is NoiseKind.DEPOLARIZING:
        return int(r < 0.5)
    return None


def apply_noise(obj, ch: NoiseChannel, rng: np.random.Generator):
    """Push a MeasurementOutcome or StateVector through an i.i.d. noise channel.

    On outcomes the channel acts per classical bit. On states it acts per
    register as a sampled trajectory: bit flip applies X, depolarizing applies
    a uniformly random Pauli, loss marks the register erased. A channel with
    p = 0 returns its input untouched and consumes no randomness.
    """
    if ch.is_identity:
        return obj
    if isinstance(obj, MeasurementOutcome):
        labels = list(obj.bits)
        draws = rng.random((len(labels), 2))
        bits = {}
        for lab, (u, r) in zip(labels, draws):
            b = obj.bits[lab]
            bits[lab] = None if b is None else noisy_bit(b, ch, u, r)
        erased = obj.collapsed.erased | {lab for lab, b in bits.items() if b is None}
        full = [bits.get(lab, 0) or 0 for lab in obj.collapsed.labels]
        if set(labels) == set(obj.collapsed.labels):
            collapsed = StateVector(obj.collapsed.labels, basis_state(obj.collapsed.labels, full).amps, erased=erased)
        else:
            collapsed = obj.collapsed
        return MeasurementOutcome(bits, collapsed)
    if isinstance(obj, StateVector):
        draws = rng.random((obj.n_registers, 2))
        out = obj
        erased = set(obj.erased)
        for lab, (u, r) in zip(obj.labels, draws):
            if u >= ch.p:
                continue
            if ch.kind is NoiseKind.BIT_FLIP:
                out = apply_x(out, lab)
            elif ch.kind is NoiseKind.DEPOLARIZING:
                pauli = int(r * 4)
                if pauli == 1:
                    out = apply_x(out, lab)
                elif pauli == 2:
                    out = apply_y(out, lab)
                elif pauli == 3:
                    out = apply_z(out, lab)
            else:
                erased.add(lab)
        return StateVector(out.labels, out.amps, erased=erased)
    raise TypeError(f"cannot apply noise to {type(obj).__name__}")


# --- time-bin CKA source -------------------------------------------------

class TimeBinStages(NamedTuple):
    timebin: StateVector  # pump pulse split into early/late bins
    phi: StateVector  # polarization qubit out of the first crystal
    Phi: StateVector  # time-bin-correlated V/H pair
    Psi: StateVector  # four photons before detection

    def as_list(self) -> list[StateVector]:
        return list(self)


PSI_LABELS = tuple(T(i) for i in range(4)) + tuple(P(i) for i in range(4))
PSI_POLARIZATION = (H, V, H, V)
DETECTORS = ("D1", "D2", "D3", "D4")


def spdc(
    s: StateVector,
    timebin: RegisterLabel,
    consumed_polarization: RegisterLabel | None,
    out_timebin: RegisterLabel,
    out_polarizations: tuple[RegisterLabel, RegisterLabel],
    values: tuple[int, int],
) -> StateVector:
    """Down-convert one photon into an orthogonally polarized pair.

    Both daughters inherit the parent's time bin: the first keeps ``timebin``,
    the second gets ``out_timebin`` as an entangled copy. The parent's
    polarization register, if any, must be definite and is removed.
    """
    if values[0] == values[1]:
        raise StateError("down-converted pair must be orthogonally polarized")
    if consumed_polarization is not None:
        s = remove_register(s, consumed_polarization)
    s = copy_register(s, timebin, out_timebin)
    s = append_register(s, out_polarizations[0], values[0])
    s = append_register(s, out_polarizations[1], values[1])
    return renormalize(s)


def timebin_pipeline() -> TimeBinStages:
    """Build the four staged states of the time-bin CKA source.

    Register bookkeeping for the final state: photon ``k`` (detector ``D{k+1}``)
    carries time bin ``T{k}`` and polarization ``P{k}``; detectors D1/D2 sit on
    the arm that transmits H at the polarization beamsplitter, D3/D4 on the
    reflected arm.
    """
    timebin = make_ghz(1, [T(0)])
    # (|V> + |H>)/sqrt(2); with H=0, V=1 this is the uniform superposition
    phi = make_ghz(1, [P(0)])

    # first crystal: the pump photon becomes a V photon and an H photon
    pair = spdc(timebin, T(0), None, T(1), (P(0), P(1)), (V, H))
    Phi = renormalize(reorder(pair, (T(0), T(1), P(0), P(1))))

    # PBS splits the pair. Transmitted arm: the H photon (T1, P1).
    # Reflected arm: the V photon (T0, P0), rotated to H by a half-wave plate.
    s = apply_x(Phi, P(0))
    a = RegisterLabel(RegisterKind.GENERIC, 100)  # scratch labels before renaming
    b = RegisterLabel(RegisterKind.GENERIC, 101)
    pa = [RegisterLabel(RegisterKind.GENERIC, 110 + i) for i in range(4)]
    # second crystal, both arms: each H photon becomes an H/V pair
    s = spdc(s, T(1), P(1), a, (pa[0], pa[1]), (H, V))
    s = spdc(s, T(0), P(0), b, (pa[2], pa[3]), (H, V))
    s = reorder(s, (T(1), a, T(0), b, *pa))
    Psi = renormalize(relabel(s, PSI_LABELS))
    return TimeBinStages(timebin, phi, Phi, Psi)


def _detector_index(d) -> int:
    if isinstance(d, str):
        if d.upper() not in DETECTORS:
            raise LabelError(f"unknown detector {d!r}")
        return DETECTORS.index(d.upper())
    if not 1 <= int(d) <= 4:
        raise LabelError(f"unknown detector {d!r}")
    return int(d) - 1


def _check_psi(psi: StateVector) -> None:
    if psi.labels != PSI_LABELS:
        raise StateError("detector marginals need the four-photon pre-detection state")
    for k, pol in enumerate(PSI_POLARIZATION):
        if definite_value(psi, P(k)) != pol:
            raise StateError("polarization pattern does not match the pre-detection state")


def detector_marginal(psi: StateVector, d) -> StateVector:
    """Time-bin state seen by one detector.

    Detectors resolve arrival time only, so each ket of ``psi`` is restricted
    to the detector's time-bin register and equal terms are merged, then the
    result is renormalized. For the pre-detection state this is the uniform
    early/late superposition at every detector. (The physical single-photon
    reduced density matrix is ``reduced_density(psi, [T(k)])``.)
    """
    _check_psi(psi)
    k = _detector_index(d)
    shift = psi.n_registers - 1 - k
    out = np.zeros(2, dtype=np.complex128)
    for idx in psi.support:
        out[(int(idx) >> shift) & 1] += psi.amps[idx]
    return renormalize(StateVector([T(k)], out, validate=False))


def detector_polarization(psi: StateVector, d) -> int:
    _check_psi(psi)
    return PSI_POLARIZATION[_detector_index(d)]


def plus_state(label: RegisterLabel) -> StateVector:
    return make_ghz(1, [label])
