"""Event-driven state machines for the five simulated DB protocols.

Each protocol is a pair of party classes driven by the channel event loop:

* Brands-Chaum        — commit to nonce N, rapid bits r_i = N_i xor c_i, open.
* Hancke-Kuhn         — registers a/b, rapid bits r_i = a_i or b_i per c_i.
* Prior one-way QDB   — challenge qubit |c_i> in basis a_i, re-encoded in b_i.
* One-way QDB (EPR)   — Bell half as challenge, response |m'_i> in basis b_i.
* Mutual QDB (EPR)    — Bell half, response |m'_i xor r_i> in b_i, echo
                        |r'_i> in c_i, commitment to r opened at the end.

Timer semantics: a verifier's clock starts at the emission of its challenge
and stops at the arrival of the response; processing delay is charged at the
responding party between arrival and emission.  A first failing round aborts
immediately (tally mode keeps going, for statistics only).  Designated test
rounds are excluded from bit checks; the verifier retains both the local
Bell half and the returned qubit unmeasured for later correlation analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from random import Random
from typing import Any

from . import crypto
from .channel import EventLoop, rtt_to_distance
from .crypto import Bits, Commitment, RegisterMode, Registers
from .errors import ConfigError, NegativeElapsed, ProtocolViolation
from .qstate import (
    Basis,
    BellLabel,
    QuantumHandle,
    QuantumRegistry,
    basis_from_bit,
    encode,
    same_basis_flip,
)


class ProtocolId(Enum):
    BRANDS_CHAUM = "brands_chaum"
    HANCKE_KUHN = "hancke_kuhn"
    QDB_PRIOR = "qdb_prior"
    EQDB_ONE_WAY = "eqdb_one_way"
    EQDB_MUTUAL = "eqdb_mutual"


class Role(Enum):
    VERIFIER = "verifier"
    PROVER = "prover"
    PARTY_A = "party_a"
    PARTY_B = "party_b"


class Phase(Enum):
    INIT = "init"
    RAPID = "rapid"
    FINAL = "final"
    DONE = "done"
    ABORTED = "aborted"


_PHASE_ORDER = {Phase.INIT: 0, Phase.RAPID: 1, Phase.FINAL: 2, Phase.DONE: 3, Phase.ABORTED: 3}


class FailureReason(Enum):
    NONE = "none"
    BIT_MISMATCH = "bit_mismatch"
    TIMING_EXCEEDED = "timing_exceeded"
    COMMITMENT_INVALID = "commitment_invalid"
    FINAL_CHECK_FAILED = "final_check_failed"
    REFLECTION_DETECTED = "reflection_detected"


class AbortPolicy(Enum):
    IMMEDIATE = "immediate"
    TALLY = "tally"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    distance_bound_m: float | None = None
    failure_reason: FailureReason = FailureReason.NONE

    def __post_init__(self) -> None:
        if self.accepted and self.failure_reason is not FailureReason.NONE:
            raise ValueError("accepted verdict must carry failure_reason NONE")


# --------------------------------------------------------------------------
# Wire messages
# --------------------------------------------------------------------------


@dataclass(slots=True)
class NonceMsg:
    RAPID = False
    bits: Bits

    def summary(self) -> str:
        return f"nonce[{len(self.bits)}b]"


@dataclass(slots=True)
class CommitMsg:
    RAPID = False
    commitment: Commitment

    def summary(self) -> str:
        return f"commit[{self.commitment.digest.hex()[:12]}]"


@dataclass(slots=True)
class ChallengeBit:
    RAPID = True
    round: int
    bit: int

    def summary(self) -> str:
        return f"challenge r{self.round} bit={self.bit}"


@dataclass(slots=True)
class ResponseBit:
    RAPID = True
    round: int
    bit: int

    def summary(self) -> str:
        return f"response r{self.round} bit={self.bit}"


@dataclass(slots=True)
class QubitMsg:
    RAPID = True
    round: int
    handle: QuantumHandle

    def summary(self) -> str:
        return f"qubit r{self.round} id={self.handle.ident}"


@dataclass(slots=True)
class EprHalf:
    RAPID = True
    round: int
    handle: QuantumHandle

    def summary(self) -> str:
        return f"epr-half r{self.round} id={self.handle.ident}"


@dataclass(slots=True)
class FinalReveal:
    RAPID = False
    m_bits: Bits
    r_bits: Bits
    salt: bytes

    def summary(self) -> str:
        return f"final-reveal m[{len(self.m_bits)}b] r[{len(self.r_bits)}b]"


WireMessage = NonceMsg | CommitMsg | ChallengeBit | ResponseBit | QubitMsg | EprHalf | FinalReveal


@dataclass(slots=True)
class RoundRecord:
    index: int
    t_send_ps: int | None = None
    t_recv_ps: int | None = None
    local_bit: int | None = None
    decoded_bit: int | None = None
    bases: tuple[int, ...] = ()
    check_ok: bool | None = None
    is_test: bool = False


@dataclass
class ProtocolConfig:
    """Everything a single session's parties need beyond their RNG streams."""

    protocol: ProtocolId
    n: int
    key: bytes = b"\x00" * crypto.DEFAULT_KEY_BYTES
    bell_label: BellLabel = BellLabel.B00
    register_mode: RegisterMode = RegisterMode.PRF
    registers_override: Registers | None = None
    distance_budget_m: float = 200.0
    alpha_nominal_ps: int = 0
    timeout_ps: int = 10_000_000
    abort_policy: AbortPolicy = AbortPolicy.IMMEDIATE
    nonce_bits: int = crypto.NONCE_BITS
    test_rounds: frozenset[int] = frozenset()
    use_timers: bool = True
    # per-trial memo shared by both parties (they derive identical registers)
    derivation_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ConfigError("n must be >= 0")
        if self.registers_override is not None and self.registers_override.n != self.n:
            raise ConfigError("explicit registers must have length n")
        if any(i < 1 or i > self.n for i in self.test_rounds):
            raise ConfigError("test round indices must lie in [1, n]")


# --------------------------------------------------------------------------
# Response formulas of the classical baselines (also used by the oracle tests)
# --------------------------------------------------------------------------


def hancke_kuhn_response(challenge: int, a_i: int, b_i: int) -> int:
    """r_i = not(c_i)*a_i + c_i*b_i."""
    return b_i if challenge else a_i


def brands_chaum_response(nonce_bit: int, challenge: int) -> int:
    """r_i = N_i xor c_i."""
    return nonce_bit ^ challenge


# --------------------------------------------------------------------------
# Party machinery
# --------------------------------------------------------------------------


class PartyBase:
    """Common plumbing: phase tracking, emission with processing delay,
    round records, timing bookkeeping and verdict assembly."""

    role: Role = Role.PROVER

    def __init__(
        self,
        name: str,
        peer: str,
        cfg: ProtocolConfig,
        rng: Random,
        registry: QuantumRegistry,
        processing_ps: int = 0,
    ):
        self.name = name
        self.peer = peer
        self.cfg = cfg
        self.rng = rng
        self.registry = registry
        self.processing_ps = processing_ps
        self.loop: EventLoop | None = None
        self.phase = Phase.INIT
        self.round = 0
        self.records: dict[int, RoundRecord] = {}
        self.registers: Registers | None = None
        self.nonce: Bits = ()
        self._verdict: Verdict | None = None
        self.mismatches = 0
        # (local half, returned qubit) retained unmeasured on test rounds
        self.retained_pairs: list[tuple[QuantumHandle, QuantumHandle]] = []
        # per-round basis/correlation tables, filled when registers are set
        self._bases_a: tuple[Basis, ...] = ()
        self._bases_b: tuple[Basis, ...] = ()
        self._bases_c: tuple[Basis, ...] = ()
        self._flips_a: tuple[int, ...] = ()

    # -- wiring ------------------------------------------------------------

    def bind(self, loop: EventLoop) -> None:
        self.loop = loop

    def start(self, now: int) -> None:  # pragma: no cover - overridden
        pass

    def on_timer(self, tag: Any, now: int) -> None:
        if self.is_terminal:
            return
        kind, index = tag
        if kind == "round" and self.phase is Phase.RAPID and self.round == index:
            record = self.records.get(index)
            if record is None or record.t_recv_ps is None:
                self._abort(FailureReason.TIMING_EXCEEDED)
        elif kind == "final" and self.phase is Phase.FINAL:
            self._abort(FailureReason.TIMING_EXCEEDED)

    def _set_final_timer(self, now: int) -> None:
        """Bound the wait for the peer's final message."""
        if not self.cfg.use_timers:
            return
        assert self.loop is not None
        self.loop.set_timer(self.name, ("final", 0), now + 4 * self.cfg.timeout_ps)

    @property
    def is_terminal(self) -> bool:
        return self.phase in (Phase.DONE, Phase.ABORTED)

    def phase_ordinal(self) -> tuple[int, int]:
        return (_PHASE_ORDER[self.phase], self.round)

    def verdict(self) -> Verdict | None:
        return self._verdict

    # -- helpers -----------------------------------------------------------

    def _emit(self, msg: WireMessage, now: int, processing_ps: int | None = None) -> int:
        assert self.loop is not None, "party not bound to an event loop"
        delay = self.processing_ps if processing_ps is None else processing_ps
        depart = now + delay
        self.loop.send(self.name, self.peer, msg, depart)
        return depart

    def _set_round_timer(self, index: int, depart: int) -> None:
        if not self.cfg.use_timers:
            return
        assert self.loop is not None
        self.loop.set_timer(self.name, ("round", index), depart + self.cfg.timeout_ps)

    def _record(self, index: int) -> RoundRecord:
        record = self.records.get(index)
        if record is None:
            record = RoundRecord(index=index, is_test=index in self.cfg.test_rounds)
            self.records[index] = record
        return record

    def _abort(self, reason: FailureReason) -> None:
        self.phase = Phase.ABORTED
        self._verdict = Verdict(False, self._distance_bound(), reason)

    def _finish_accept(self) -> None:
        self.phase = Phase.DONE
        self._verdict = Verdict(True, self._distance_bound(), FailureReason.NONE)

    def _violation(self, msg: WireMessage, now: int) -> None:
        raise ProtocolViolation(
            f"{self.name}: illegal {type(msg).__name__} in phase {self.phase.value}"
            f" (round {self.round}) at {now} ps"
        )

    def _round_estimate_m(self, record: RoundRecord) -> float | None:
        if record.t_send_ps is None or record.t_recv_ps is None:
            return None
        try:
            return rtt_to_distance(
                record.t_send_ps, record.t_recv_ps, self.cfg.alpha_nominal_ps
            )
        except NegativeElapsed:
            # impossibly fast response: clamp to the floor of the formula
            return 0.0

    def _distance_bound(self) -> float | None:
        estimates = [
            est
            for record in self.records.values()
            if (est := self._round_estimate_m(record)) is not None
        ]
        return max(estimates) if estimates else None

    def _check_round_timing(self, record: RoundRecord) -> bool:
        """True if the round's distance estimate fits the budget."""
        est = self._round_estimate_m(record)
        return est is None or est <= self.cfg.distance_budget_m

    def _register_bit(self, reg: Bits, index: int) -> int:
        return reg[index - 1]

    def _note_mismatch(self) -> bool:
        """Apply the abort policy; returns True if the session continues."""
        self.mismatches += 1
        if self.cfg.abort_policy is AbortPolicy.IMMEDIATE:
            self._abort(FailureReason.BIT_MISMATCH)
            return False
        return True

    def _derive(self, nonce_initiator: Bits, nonce_responder: Bits, count: int) -> Registers:
        cache_key = (nonce_initiator, nonce_responder, count)
        cached = self.cfg.derivation_cache.get(cache_key)
        if cached is None:
            if self.cfg.registers_override is not None:
                registers = self.cfg.registers_override
            elif self.cfg.n == 0:
                registers = Registers((), (), () if count == 3 else None)
            else:
                registers = crypto.derive_registers(
                    self.cfg.register_mode, self.cfg.key, nonce_initiator, nonce_responder,
                    self.cfg.n, count,
                )
            bases_a = tuple(basis_from_bit(bit) for bit in registers.a)
            bases_b = tuple(basis_from_bit(bit) for bit in registers.b)
            bases_c = (
                tuple(basis_from_bit(bit) for bit in registers.c)
                if registers.c is not None
                else ()
            )
            label = self.cfg.bell_label
            flips_a = tuple(int(same_basis_flip(label, basis)) for basis in bases_a)
            cached = (registers, bases_a, bases_b, bases_c, flips_a)
            self.cfg.derivation_cache[cache_key] = cached
        registers, self._bases_a, self._bases_b, self._bases_c, self._flips_a = cached
        return registers

    def _finalize_checks(self) -> None:
        """Shared end-of-session verdict: bit tally and the distance bound.

        Per-round timing was already gated at each response; here only the
        aggregate bound is assembled.
        """
        if self.is_terminal:
            return
        if self.mismatches > 0:
            self._abort(FailureReason.BIT_MISMATCH)
            return
        self._finish_accept()


class ProverSideBase(PartyBase):
    """Responder without a verdict of its own beyond 'completed'."""

    def _finish_prover(self) -> None:
        self.phase = Phase.DONE
        self._verdict = Verdict(True, None, FailureReason.NONE)


# --------------------------------------------------------------------------
# Brands-Chaum
# --------------------------------------------------------------------------


class BrandsChaumProver(ProverSideBase):
    role = Role.PROVER

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.nonce_n: Bits = crypto.random_bits(self.rng, self.cfg.n)
        self.salt = self.rng.randbytes(16)

    def start(self, now: int) -> None:
        self._emit(CommitMsg(crypto.commit(self.nonce_n, self.salt)), now)
        if self.cfg.n == 0:
            self._emit(FinalReveal((), self.nonce_n, self.salt), now)
            self._finish_prover()
            return
        self.phase = Phase.RAPID
        self.round = 1

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if not isinstance(msg, ChallengeBit) or self.phase is not Phase.RAPID:
            self._violation(msg, now)
        if msg.round != self.round:
            self._violation(msg, now)
        reply = brands_chaum_response(self.nonce_n[msg.round - 1], msg.bit)
        self._emit(ResponseBit(msg.round, reply), now)
        if self.round == self.cfg.n:
            self.phase = Phase.FINAL
            self._emit(FinalReveal((), self.nonce_n, self.salt), now)
            self._finish_prover()
        else:
            self.round += 1


class BrandsChaumVerifier(PartyBase):
    role = Role.VERIFIER

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.commitment: Commitment | None = None
        self.challenges: dict[int, int] = {}
        self.responses: dict[int, int] = {}

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, CommitMsg) and self.phase is Phase.INIT:
            self.commitment = msg.commitment
            if self.cfg.n == 0:
                self.phase = Phase.FINAL
                self._set_final_timer(now)
            else:
                self.phase = Phase.RAPID
                self._begin_round(1, now)
        elif isinstance(msg, ResponseBit) and self.phase is Phase.RAPID:
            if msg.round != self.round:
                self._violation(msg, now)
            record = self._record(msg.round)
            record.t_recv_ps = now
            record.decoded_bit = msg.bit
            self.responses[msg.round] = msg.bit
            if not self._check_round_timing(record):
                self._abort(FailureReason.TIMING_EXCEEDED)
                return
            if self.round == self.cfg.n:
                self.phase = Phase.FINAL
                self._set_final_timer(now)
            else:
                self._begin_round(self.round + 1, now)
        elif isinstance(msg, FinalReveal) and self.phase is Phase.FINAL:
            self._final_check(msg)
        else:
            self._violation(msg, now)

    def _begin_round(self, index: int, now: int) -> None:
        self.round = index
        bit = self.rng.getrandbits(1)
        self.challenges[index] = bit
        record = self._record(index)
        record.bases = ()
        depart = self._emit(ChallengeBit(index, bit), now)
        record.t_send_ps = depart
        self._set_round_timer(index, depart)

    def _final_check(self, msg: FinalReveal) -> None:
        assert self.commitment is not None
        if not crypto.open_commitment(self.commitment, msg.r_bits, msg.salt):
            self._abort(FailureReason.COMMITMENT_INVALID)
            return
        for i in range(1, self.cfg.n + 1):
            expected = brands_chaum_response(msg.r_bits[i - 1], self.challenges[i])
            record = self.records[i]
            record.check_ok = self.responses[i] == expected
            if not record.check_ok and not self._note_mismatch():
                return
        self._finalize_checks()


# --------------------------------------------------------------------------
# Hancke-Kuhn
# --------------------------------------------------------------------------


class HanckeKuhnProver(ProverSideBase):
    role = Role.PROVER

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.nonce = crypto.random_bits(self.rng, self.cfg.nonce_bits)

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg) and self.phase is Phase.INIT:
            self._emit(NonceMsg(self.nonce), now)
            self.registers = self._derive(msg.bits, self.nonce, 2)
            self.phase = Phase.RAPID
            self.round = 1
            if self.cfg.n == 0:
                self._finish_prover()
        elif isinstance(msg, ChallengeBit) and self.phase is Phase.RAPID:
            if msg.round != self.round:
                self._violation(msg, now)
            assert self.registers is not None
            reply = hancke_kuhn_response(
                msg.bit,
                self._register_bit(self.registers.a, msg.round),
                self._register_bit(self.registers.b, msg.round),
            )
            self._emit(ResponseBit(msg.round, reply), now)
            if self.round == self.cfg.n:
                self._finish_prover()
            else:
                self.round += 1
        else:
            self._violation(msg, now)


class NonceInitiatorMixin(PartyBase):
    """Verifier-side init for the nonce-exchange protocols."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.nonce = crypto.random_bits(self.rng, self.cfg.nonce_bits)
        self.register_count = 2

    def start(self, now: int) -> None:
        self._emit(NonceMsg(self.nonce), now)

    def _handle_nonce(self, msg: NonceMsg, now: int) -> None:
        self.registers = self._derive(self.nonce, msg.bits, self.register_count)
        if self.cfg.n == 0:
            self._finalize_checks()
            return
        self.phase = Phase.RAPID
        self._begin_round(1, now)

    def _begin_round(self, index: int, now: int) -> None:  # pragma: no cover
        raise NotImplementedError


class HanckeKuhnVerifier(NonceInitiatorMixin):
    role = Role.VERIFIER

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.challenges: dict[int, int] = {}

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg) and self.phase is Phase.INIT:
            self._handle_nonce(msg, now)
        elif isinstance(msg, ResponseBit) and self.phase is Phase.RAPID:
            if msg.round != self.round:
                self._violation(msg, now)
            self._close_round(msg, now)
        else:
            self._violation(msg, now)

    def _begin_round(self, index: int, now: int) -> None:
        self.round = index
        bit = self.rng.getrandbits(1)
        self.challenges[index] = bit
        record = self._record(index)
        depart = self._emit(ChallengeBit(index, bit), now)
        record.t_send_ps = depart
        self._set_round_timer(index, depart)

    def _close_round(self, msg: ResponseBit, now: int) -> None:
        assert self.registers is not None
        record = self.records[msg.round]
        record.t_recv_ps = now
        record.decoded_bit = msg.bit
        expected = hancke_kuhn_response(
            self.challenges[msg.round],
            self._register_bit(self.registers.a, msg.round),
            self._register_bit(self.registers.b, msg.round),
        )
        record.check_ok = msg.bit == expected
        if not record.check_ok and not self._note_mismatch():
            return
        if not self._check_round_timing(record):
            self._abort(FailureReason.TIMING_EXCEEDED)
            return
        if self.round == self.cfg.n:
            self._finalize_checks()
        else:
            self._begin_round(self.round + 1, now)


# --------------------------------------------------------------------------
# Prior one-way QDB (unentangled challenge qubits)
# --------------------------------------------------------------------------


class QdbPriorProver(ProverSideBase):
    role = Role.PROVER

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.nonce = crypto.random_bits(self.rng, self.cfg.nonce_bits)

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg) and self.phase is Phase.INIT:
            self._emit(NonceMsg(self.nonce), now)
            self.registers = self._derive(msg.bits, self.nonce, 2)
            self.phase = Phase.RAPID
            self.round = 1
            if self.cfg.n == 0:
                self._finish_prover()
        elif isinstance(msg, QubitMsg) and self.phase is Phase.RAPID:
            if msg.round != self.round:
                self._violation(msg, now)
            decoded = self.registry.measure(msg.handle, self._bases_a[msg.round - 1])
            reply = self.registry.new_single(encode(decoded, self._bases_b[msg.round - 1]))
            self._emit(QubitMsg(msg.round, reply), now)
            if self.round == self.cfg.n:
                self._finish_prover()
            else:
                self.round += 1
        else:
            self._violation(msg, now)


class QdbPriorVerifier(NonceInitiatorMixin):
    role = Role.VERIFIER

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.challenges: dict[int, int] = {}

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg) and self.phase is Phase.INIT:
            self._handle_nonce(msg, now)
        elif isinstance(msg, QubitMsg) and self.phase is Phase.RAPID:
            if msg.round != self.round:
                self._violation(msg, now)
            self._close_round(msg, now)
        else:
            self._violation(msg, now)

    def _begin_round(self, index: int, now: int) -> None:
        self.round = index
        bit = self.rng.getrandbits(1)
        self.challenges[index] = bit
        handle = self.registry.new_single(encode(bit, self._bases_a[index - 1]))
        record = self._record(index)
        depart = self._emit(QubitMsg(index, handle), now)
        record.t_send_ps = depart
        self._set_round_timer(index, depart)

    def _close_round(self, msg: QubitMsg, now: int) -> None:
        record = self.records[msg.round]
        record.t_recv_ps = now
        decoded = self.registry.measure(msg.handle, self._bases_b[msg.round - 1])
        record.decoded_bit = decoded
        record.check_ok = decoded == self.challenges[msg.round]
        if not record.check_ok and not self._note_mismatch():
            return
        if not self._check_round_timing(record):
            self._abort(FailureReason.TIMING_EXCEEDED)
            return
        if self.round == self.cfg.n:
            self._finalize_checks()
        else:
            self._begin_round(self.round + 1, now)


# --------------------------------------------------------------------------
# Entanglement-based one-way QDB
# --------------------------------------------------------------------------


class EqdbOneWayProver(ProverSideBase):
    role = Role.PROVER

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.nonce = crypto.random_bits(self.rng, self.cfg.nonce_bits)
        self.measured: dict[int, int] = {}

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg) and self.phase is Phase.INIT:
            self._emit(NonceMsg(self.nonce), now)
            self.registers = self._derive(msg.bits, self.nonce, 2)
            self.phase = Phase.RAPID
            self.round = 1
            if self.cfg.n == 0:
                self._finish_prover()
        elif isinstance(msg, EprHalf) and self.phase is Phase.RAPID:
            if msg.round != self.round:
                self._violation(msg, now)
            outcome = self.registry.measure(msg.handle, self._bases_a[msg.round - 1])
            self.measured[msg.round] = outcome
            reply = self.registry.new_single(encode(outcome, self._bases_b[msg.round - 1]))
            self._emit(QubitMsg(msg.round, reply), now)
            if self.round == self.cfg.n:
                self._finish_prover()
            else:
                self.round += 1
        else:
            self._violation(msg, now)


class EqdbOneWayVerifier(NonceInitiatorMixin):
    role = Role.VERIFIER

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.local_bits: dict[int, int] = {}
        self._held_local: dict[int, QuantumHandle] = {}

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg) and self.phase is Phase.INIT:
            self._handle_nonce(msg, now)
        elif isinstance(msg, QubitMsg) and self.phase is Phase.RAPID:
            if msg.round != self.round:
                self._violation(msg, now)
            self._close_round(msg, now)
        else:
            self._violation(msg, now)

    def _begin_round(self, index: int, now: int) -> None:
        self.round = index
        local, challenge = self.registry.make_bell(self.cfg.bell_label)
        record = self._record(index)
        depart = self._emit(EprHalf(index, challenge), now)
        record.t_send_ps = depart
        self._set_round_timer(index, depart)
        if record.is_test:
            self._held_local[index] = local
        else:
            self.local_bits[index] = self.registry.measure(local, self._bases_a[index - 1])
            record.local_bit = self.local_bits[index]

    def _close_round(self, msg: QubitMsg, now: int) -> None:
        record = self.records[msg.round]
        record.t_recv_ps = now
        if record.is_test:
            self.retained_pairs.append((self._held_local.pop(msg.round), msg.handle))
        else:
            decoded = self.registry.measure(msg.handle, self._bases_b[msg.round - 1])
            record.decoded_bit = decoded
            expected = self.local_bits[msg.round] ^ self._flips_a[msg.round - 1]
            record.check_ok = decoded == expected
            if not record.check_ok and not self._note_mismatch():
                return
        if not self._check_round_timing(record):
            self._abort(FailureReason.TIMING_EXCEEDED)
            return
        if self.round == self.cfg.n:
            self._finalize_checks()
        else:
            self._begin_round(self.round + 1, now)


# --------------------------------------------------------------------------
# Entanglement-based mutual QDB
# --------------------------------------------------------------------------


class EqdbMutualPartyA(NonceInitiatorMixin):
    """Initiator: emits Bell halves, answers with the |r'_i> echo, verifies
    the opened commitment and the recomputed measurement string at the end."""

    role = Role.PARTY_A

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.register_count = 3
        self.commitment: Commitment | None = None
        self.local_bits: dict[int, int] = {}
        self.decoded_bits: dict[int, int] = {}
        self._held_local: dict[int, QuantumHandle] = {}
        self._peer_nonce: Bits | None = None

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg) and self.phase is Phase.INIT and self._peer_nonce is None:
            self._peer_nonce = msg.bits
            self.registers = self._derive(self.nonce, msg.bits, 3)
        elif isinstance(msg, CommitMsg) and self.phase is Phase.INIT and self._peer_nonce is not None:
            self.commitment = msg.commitment
            if self.cfg.n == 0:
                self.phase = Phase.FINAL
                self._set_final_timer(now)
                return
            self.phase = Phase.RAPID
            self._begin_round(1, now)
        elif isinstance(msg, QubitMsg) and self.phase is Phase.RAPID:
            if msg.round != self.round:
                self._violation(msg, now)
            self._close_round(msg, now)
        elif isinstance(msg, FinalReveal) and self.phase is Phase.FINAL:
            self._final_check(msg)
        else:
            self._violation(msg, now)

    def _begin_round(self, index: int, now: int) -> None:
        self.round = index
        local, challenge = self.registry.make_bell(self.cfg.bell_label)
        record = self._record(index)
        depart = self._emit(EprHalf(index, challenge), now)
        record.t_send_ps = depart
        self._set_round_timer(index, depart)
        if record.is_test:
            self._held_local[index] = local
        else:
            self.local_bits[index] = self.registry.measure(local, self._bases_a[index - 1])
            record.local_bit = self.local_bits[index]

    def _close_round(self, msg: QubitMsg, now: int) -> None:
        record = self.records[msg.round]
        record.t_recv_ps = now
        if record.is_test:
            # the local half went unmeasured, so r'_i cannot be computed;
            # a fresh random bit keeps the round moving (see module notes)
            self.retained_pairs.append((self._held_local.pop(msg.round), msg.handle))
            echo_bit = self.rng.getrandbits(1)
        else:
            decoded = self.registry.measure(msg.handle, self._bases_b[msg.round - 1])
            self.decoded_bits[msg.round] = decoded
            record.decoded_bit = decoded
            # the label's same-basis correlation is folded in so the echo
            # equals r_i for every Bell label, not just B00
            echo_bit = decoded ^ self.local_bits[msg.round] ^ self._flips_a[msg.round - 1]
        echo = self.registry.new_single(encode(echo_bit, self._bases_c[msg.round - 1]))
        self._emit(QubitMsg(msg.round, echo), now)
        if not self._check_round_timing(record):
            self._abort(FailureReason.TIMING_EXCEEDED)
            return
        if self.round == self.cfg.n:
            self.phase = Phase.FINAL
            self._set_final_timer(now)
        else:
            self._begin_round(self.round + 1, now)

    def _final_check(self, msg: FinalReveal) -> None:
        assert self.commitment is not None and self.registers is not None
        if len(msg.r_bits) != self.cfg.n or not crypto.open_commitment(
            self.commitment, msg.r_bits, msg.salt
        ):
            self._abort(FailureReason.COMMITMENT_INVALID)
            return
        # recompute what the peer's measurement string must have been from
        # the decoded responses and the opened r, then compare with the
        # local Bell outcomes (test rounds carry no decoded bit and are
        # excluded, as they are from every bit check)
        for i in range(1, self.cfg.n + 1):
            record = self.records[i]
            if record.is_test:
                continue
            recomputed = self.decoded_bits[i] ^ msg.r_bits[i - 1]
            expected = self.local_bits[i] ^ self._flips_a[i - 1]
            record.check_ok = recomputed == expected
            if not record.check_ok:
                self._abort(FailureReason.FINAL_CHECK_FAILED)
                return
        self._finalize_checks()


class EqdbMutualPartyB(PartyBase):
    """Responder: commits to r, answers Bell halves with |m'_i xor r_i>,
    checks the echoed r'_i each round, and opens the commitment at the end.

    B is a verifier in its own right: it times the step-5 -> step-6 round
    trip and gates acceptance on its own distance budget.
    """

    role = Role.PARTY_B

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.nonce = crypto.random_bits(self.rng, self.cfg.nonce_bits)
        self.r_bits: Bits = crypto.random_bits(self.rng, self.cfg.n)
        self.salt = self.rng.randbytes(16)
        self.measured: dict[int, int] = {}
        self._awaiting_echo = False

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg) and self.phase is Phase.INIT:
            self._emit(NonceMsg(self.nonce), now)
            self._emit(CommitMsg(crypto.commit(self.r_bits, self.salt)), now)
            self.registers = self._derive(msg.bits, self.nonce, 3)
            self.phase = Phase.RAPID
            self.round = 1
            if self.cfg.n == 0:
                self._emit(FinalReveal((), self.r_bits, self.salt), now)
                self._finalize_checks()
        elif isinstance(msg, EprHalf) and self.phase is Phase.RAPID and not self._awaiting_echo:
            if msg.round != self.round:
                self._violation(msg, now)
            self._respond(msg, now)
        elif isinstance(msg, QubitMsg) and self.phase is Phase.RAPID and self._awaiting_echo:
            if msg.round != self.round:
                self._violation(msg, now)
            self._check_echo(msg, now)
        else:
            self._violation(msg, now)

    def _respond(self, msg: EprHalf, now: int) -> None:
        outcome = self.registry.measure(msg.handle, self._bases_a[msg.round - 1])
        self.measured[msg.round] = outcome
        reply = self.registry.new_single(
            encode(outcome ^ self.r_bits[msg.round - 1], self._bases_b[msg.round - 1])
        )
        record = self._record(msg.round)
        record.local_bit = outcome
        depart = self._emit(QubitMsg(msg.round, reply), now)
        record.t_send_ps = depart
        self._set_round_timer(msg.round, depart)
        self._awaiting_echo = True

    def _check_echo(self, msg: QubitMsg, now: int) -> None:
        record = self.records[msg.round]
        record.t_recv_ps = now
        decoded = self.registry.measure(msg.handle, self._bases_c[msg.round - 1])
        record.decoded_bit = decoded
        is_a_test_round = record.is_test
        if is_a_test_round:
            # the peer could not have produced a meaningful echo
            record.check_ok = None
        else:
            record.check_ok = decoded == self.r_bits[msg.round - 1]
            if not record.check_ok and not self._note_mismatch():
                return
        if not self._check_round_timing(record):
            self._abort(FailureReason.TIMING_EXCEEDED)
            return
        self._awaiting_echo = False
        if self.round == self.cfg.n:
            self._emit(
                FinalReveal(
                    tuple(self.measured[i] for i in range(1, self.cfg.n + 1)),
                    self.r_bits,
                    self.salt,
                ),
                now,
            )
            self._finalize_checks()
        else:
            self.round += 1


# --------------------------------------------------------------------------
# Session factory
# --------------------------------------------------------------------------


_PARTY_CLASSES: dict[tuple[ProtocolId, Role], type[PartyBase]] = {
    (ProtocolId.BRANDS_CHAUM, Role.VERIFIER): BrandsChaumVerifier,
    (ProtocolId.BRANDS_CHAUM, Role.PROVER): BrandsChaumProver,
    (ProtocolId.HANCKE_KUHN, Role.VERIFIER): HanckeKuhnVerifier,
    (ProtocolId.HANCKE_KUHN, Role.PROVER): HanckeKuhnProver,
    (ProtocolId.QDB_PRIOR, Role.VERIFIER): QdbPriorVerifier,
    (ProtocolId.QDB_PRIOR, Role.PROVER): QdbPriorProver,
    (ProtocolId.EQDB_ONE_WAY, Role.VERIFIER): EqdbOneWayVerifier,
    (ProtocolId.EQDB_ONE_WAY, Role.PROVER): EqdbOneWayProver,
    (ProtocolId.EQDB_MUTUAL, Role.PARTY_A): EqdbMutualPartyA,
    (ProtocolId.EQDB_MUTUAL, Role.PARTY_B): EqdbMutualPartyB,
}


def init_session(
    protocol: ProtocolId,
    role: Role,
    name: str,
    peer: str,
    cfg: ProtocolConfig,
    rng: Random,
    registry: QuantumRegistry,
    processing_ps: int = 0,
) -> PartyBase:
    """Create one party of a session; rejects invalid (protocol, role) pairs."""
    cls = _PARTY_CLASSES.get((protocol, role))
    if cls is None:
        raise ConfigError(f"role {role.value!r} is not defined for {protocol.value!r}")
    if cfg.protocol is not protocol:
        raise ConfigError("config protocol does not match requested session")
    return cls(name, peer, cfg, rng, registry, processing_ps)
