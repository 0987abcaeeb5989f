"""Exact single-qubit and Bell-pair simulation.

States are complex amplitude vectors at double precision.  Qubits live in a
:class:`QuantumRegistry` and are referenced through consume-once
:class:`QuantumHandle` objects, so no piece of protocol or adversary code can
read a qubit twice or copy it: measuring a handle removes the state (or, for
one half of an entangled pair, collapses the sibling onto its conditional
post-measurement state).

Probabilities are derived from amplitudes only; sampling happens in one place
(:meth:`QuantumRegistry.measure`) against the registry's RNG stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from functools import lru_cache
from random import Random

from .errors import AlreadyConsumed, UnknownHandle

SQRT_HALF = math.sqrt(0.5)

_NORM_TOL = 1e-12


class Basis(IntEnum):
    """Measurement/encoding basis: computational (+) or Hadamard (x)."""

    COMPUTATIONAL = 0
    HADAMARD = 1

    @property
    def complement(self) -> "Basis":
        return Basis(1 - self.value)


BASIS_BY_BIT = (Basis.COMPUTATIONAL, Basis.HADAMARD)


def basis_from_bit(bit: int) -> Basis:
    """Register-bit convention: 0 selects computational, 1 selects Hadamard."""
    return BASIS_BY_BIT[bit & 1]


@dataclass(frozen=True, slots=True)
class PureState1:
    """Normalized single-qubit state ``amp0|0> + amp1|1>``."""

    amp0: complex
    amp1: complex

    def norm_sq(self) -> float:
        return abs(self.amp0) ** 2 + abs(self.amp1) ** 2

    def is_normalized(self, tol: float = _NORM_TOL) -> bool:
        return abs(self.norm_sq() - 1.0) <= tol


@dataclass(frozen=True, slots=True)
class PureState2:
    """Normalized two-qubit state, amplitudes ordered |00>,|01>,|10>,|11>."""

    amps: tuple[complex, complex, complex, complex]

    def norm_sq(self) -> float:
        return sum(abs(a) ** 2 for a in self.amps)

    def is_normalized(self, tol: float = _NORM_TOL) -> bool:
        return abs(self.norm_sq() - 1.0) <= tol


KET_0 = PureState1(1.0 + 0j, 0j)
KET_1 = PureState1(0j, 1.0 + 0j)
KET_PLUS = PureState1(SQRT_HALF + 0j, SQRT_HALF + 0j)
KET_MINUS = PureState1(SQRT_HALF + 0j, -SQRT_HALF + 0j)

_ENCODING = {
    (0, Basis.COMPUTATIONAL): KET_0,
    (1, Basis.COMPUTATIONAL): KET_1,
    (0, Basis.HADAMARD): KET_PLUS,
    (1, Basis.HADAMARD): KET_MINUS,
}


def encode(bit: int, basis: Basis) -> PureState1:
    """Encode a classical bit as |0>, |1>, |+> or |-> per the basis table."""
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    return _ENCODING[(bit, basis)]


def _p0_unchecked(state: PureState1, basis: Basis) -> float:
    """P(outcome 0) without the normalization guard (registry-internal)."""
    if basis is Basis.COMPUTATIONAL:
        a = state.amp0
    else:
        a = (state.amp0 + state.amp1) * SQRT_HALF
    return a.real * a.real + a.imag * a.imag


def distribution1(state: PureState1, basis: Basis) -> tuple[float, float]:
    """Outcome probabilities (p0, p1) of measuring ``state`` in ``basis``."""
    if not state.is_normalized():
        raise ValueError(f"state not normalized: |psi|^2 = {state.norm_sq()!r}")
    if basis is Basis.COMPUTATIONAL:
        p0 = abs(state.amp0) ** 2
        p1 = abs(state.amp1) ** 2
    else:
        p0 = abs(state.amp0 + state.amp1) ** 2 * 0.5
        p1 = abs(state.amp0 - state.amp1) ** 2 * 0.5
    return (p0, p1)


def collapse1(basis: Basis, outcome: int) -> PureState1:
    """Post-measurement state for an outcome in a basis."""
    return _ENCODING[(outcome, basis)]


def states_equal_up_to_phase(a: PureState1, b: PureState1, tol: float = 1e-9) -> bool:
    """State equality ignoring global phase: |<a|b>| = 1."""
    overlap = a.amp0.conjugate() * b.amp0 + a.amp1.conjugate() * b.amp1
    return abs(abs(overlap) - 1.0) <= tol


class BellLabel(Enum):
    B00 = "b00"
    B01 = "b01"
    B10 = "b10"
    B11 = "b11"


_BELL_AMPS: dict[BellLabel, tuple[complex, complex, complex, complex]] = {
    BellLabel.B00: (SQRT_HALF, 0j, 0j, SQRT_HALF),
    BellLabel.B01: (SQRT_HALF, 0j, 0j, -SQRT_HALF),
    BellLabel.B10: (0j, SQRT_HALF, SQRT_HALF, 0j),
    BellLabel.B11: (0j, SQRT_HALF, -SQRT_HALF, 0j),
}


def bell_state(label: BellLabel) -> PureState2:
    return PureState2(_BELL_AMPS[label])


def project_pair(
    state: PureState2, qubit: int, basis: Basis, outcome: int
) -> tuple[float, PureState1 | None]:
    """Project one qubit of a pair onto an outcome.

    Returns the outcome probability and the normalized residual state of the
    *other* qubit (``None`` when the probability is zero).
    """
    a00, a01, a10, a11 = state.amps
    if qubit == 0:
        v0, v1 = (a00, a01), (a10, a11)
    elif qubit == 1:
        v0, v1 = (a00, a10), (a01, a11)
    else:
        raise ValueError("qubit must be 0 or 1")
    if basis is Basis.COMPUTATIONAL:
        u = v0 if outcome == 0 else v1
    else:
        sign = 1.0 if outcome == 0 else -1.0
        u = (
            (v0[0] + sign * v1[0]) * SQRT_HALF,
            (v0[1] + sign * v1[1]) * SQRT_HALF,
        )
    prob = abs(u[0]) ** 2 + abs(u[1]) ** 2
    if prob <= 1e-18:
        return (0.0, None)
    norm = math.sqrt(prob)
    return (prob, PureState1(u[0] / norm, u[1] / norm))


def joint_distribution(
    state: PureState2,
    basis_first: Basis,
    basis_second: Basis,
    measure_second_first: bool = False,
) -> dict[tuple[int, int], float]:
    """Joint outcome distribution of measuring both halves of a pair.

    Keys are (first-qubit outcome, second-qubit outcome) regardless of
    measurement order; the order flag exists so tests can check that
    sequential half-measurements commute statistically.
    """
    dist: dict[tuple[int, int], float] = {}
    if not measure_second_first:
        for x in (0, 1):
            p_x, residual = project_pair(state, 0, basis_first, x)
            if residual is None:
                dist[(x, 0)] = dist[(x, 1)] = p_x / 2.0
                continue
            q0, q1 = distribution1(residual, basis_second)
            dist[(x, 0)] = p_x * q0
            dist[(x, 1)] = p_x * q1
    else:
        for y in (0, 1):
            p_y, residual = project_pair(state, 1, basis_second, y)
            if residual is None:
                dist[(0, y)] = dist[(1, y)] = p_y / 2.0
                continue
            q0, q1 = distribution1(residual, basis_first)
            dist[(0, y)] = p_y * q0
            dist[(1, y)] = p_y * q1
    return dist


@lru_cache(maxsize=None)
def same_basis_flip(label: BellLabel, basis: Basis) -> bool:
    """Whether same-basis measurements of both halves anti-correlate.

    Derived from the amplitudes: B00 correlates (False) in both bases, B11
    anti-correlates (True) in both, B01/B10 differ per basis.  Honest parties
    use this to turn a Bell-pair outcome into the partner's predicted bit.
    """
    dist = joint_distribution(bell_state(label), basis, basis)
    p_equal = dist[(0, 0)] + dist[(1, 1)]
    if abs(p_equal - 1.0) <= 1e-9:
        return False
    if abs(p_equal) <= 1e-9:
        return True
    raise ValueError(f"{label} is not perfectly correlated in {basis}")


@dataclass(slots=True)
class QuantumHandle:
    """Consume-once reference to a live qubit or one half of a pair."""

    ident: int
    pair_id: int | None = None
    slot: int | None = None
    consumed: bool = False

    @property
    def is_half(self) -> bool:
        return self.pair_id is not None


class QuantumRegistry:
    """Owner of all live quantum states within one simulation trial.

    Single-threaded by design: one registry per trial, collapse outcomes
    sampled from the registry's own RNG stream.
    """

    def __init__(self, rng: Random):
        self._rng = rng
        self._random = rng.random
        self._singles: dict[int, PureState1] = {}
        self._pairs: dict[int, PureState2] = {}
        # residual single-qubit states of pair halves, keyed (pair_id, slot)
        self._residuals: dict[tuple[int, int], PureState1] = {}
        self._next_id = 0

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def new_single(self, state: PureState1) -> QuantumHandle:
        if not state.is_normalized():
            raise ValueError("cannot register a non-normalized state")
        handle = QuantumHandle(ident=self._new_id())
        self._singles[handle.ident] = state
        return handle

    def new_pair(self, state: PureState2) -> tuple[QuantumHandle, QuantumHandle]:
        if not state.is_normalized():
            raise ValueError("cannot register a non-normalized state")
        pair_id = self._new_id()
        first = QuantumHandle(ident=self._new_id(), pair_id=pair_id, slot=0)
        second = QuantumHandle(ident=self._new_id(), pair_id=pair_id, slot=1)
        self._pairs[pair_id] = state
        return first, second

    def make_bell(self, label: BellLabel) -> tuple[QuantumHandle, QuantumHandle]:
        return self.new_pair(bell_state(label))

    def live_count(self) -> int:
        return len(self._singles) + len(self._pairs) * 2 + len(self._residuals)

    def _sample(self, p0: float) -> int:
        return 0 if self._random() < p0 else 1

    def measure(self, handle: QuantumHandle, basis: Basis) -> int:
        """Measure a handle in a basis, collapse, and consume it."""
        if handle.consumed:
            raise AlreadyConsumed(f"handle {handle.ident} already measured")
        if handle.pair_id is None:
            state = self._singles.pop(handle.ident, None)
            if state is None:
                raise UnknownHandle(f"no live single for handle {handle.ident}")
            outcome = self._sample(_p0_unchecked(state, basis))
            handle.consumed = True
            return outcome
        return self._measure_half(handle, basis)

    def _measure_half(self, handle: QuantumHandle, basis: Basis) -> int:
        assert handle.pair_id is not None and handle.slot is not None
        key = (handle.pair_id, handle.slot)
        pair = self._pairs.pop(handle.pair_id, None)
        if pair is not None:
            p0, residual0 = project_pair(pair, handle.slot, basis, 0)
            outcome = self._sample(p0)
            if outcome == 0:
                residual = residual0
            else:
                _, residual = project_pair(pair, handle.slot, basis, 1)
            sibling_key = (handle.pair_id, 1 - handle.slot)
            if residual is not None:
                self._residuals[sibling_key] = residual
            handle.consumed = True
            return outcome
        residual_state = self._residuals.pop(key, None)
        if residual_state is None:
            raise UnknownHandle(f"no live state for pair half {key}")
        outcome = self._sample(_p0_unchecked(residual_state, basis))
        handle.consumed = True
        return outcome
