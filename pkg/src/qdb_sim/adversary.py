"""Attack strategies: dishonest parties, MITM relays, and reflection detection.

Distance-fraud parties replace the honest prover (or mutual Party A) and keep
the legitimate key material; their cheat is in *when* and *what* they emit.
Mafia parties interpose between honest endpoints: against a one-way protocol
the adversary drives the real far prover (pre-ask) or answers in its stead
(intercept-resend); against the mutual protocol it fully impersonates the
prover side towards the party it chose to authenticate to, fabricating its
own commitment, and ignores the remote honest party.

Reflection detection measures the pairs a verifier retained on its private
test rounds - its local Bell half and the returned "response" qubit - in a
fresh common basis per pair, and flags when the label-adjusted agreement rate
sits above the threshold.  A reflecting prover hands the verifier back its
own entangled sibling, so agreement is certain; an honest response qubit
agrees only 5/8 of the time.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from random import Random

from . import crypto
from .errors import InsufficientTestRounds, ProtocolViolation
from .protocol import (
    BrandsChaumProver,
    ChallengeBit,
    CommitMsg,
    EprHalf,
    EqdbMutualPartyA,
    EqdbMutualPartyB,
    EqdbOneWayProver,
    FailureReason,
    FinalReveal,
    HanckeKuhnProver,
    NonceMsg,
    PartyBase,
    Phase,
    ProtocolConfig,
    ProtocolId,
    QdbPriorProver,
    QubitMsg,
    ResponseBit,
    Verdict,
    WireMessage,
)
from .qstate import Basis, QuantumHandle, QuantumRegistry, encode, same_basis_flip


class StrategyId(Enum):
    HONEST_BASELINE = "honest"
    DISTANCE_FRAUD_GUESS = "distance_fraud_guess"
    DISTANCE_FRAUD_REFLECT = "distance_fraud_reflect"
    MUTUAL_FRAUD_UNENTANGLED = "mutual_fraud_unentangled"
    MAFIA_PREASK = "mafia_preask"
    MAFIA_INTERCEPT_RESEND = "mafia_intercept_resend"


DISTANCE_FRAUD_STRATEGIES = frozenset(
    {
        StrategyId.DISTANCE_FRAUD_GUESS,
        StrategyId.DISTANCE_FRAUD_REFLECT,
        StrategyId.MUTUAL_FRAUD_UNENTANGLED,
    }
)
MAFIA_STRATEGIES = frozenset({StrategyId.MAFIA_PREASK, StrategyId.MAFIA_INTERCEPT_RESEND})

_HONEST_DETECTION_RATE = 5.0 / 8.0


@dataclass(frozen=True)
class DetectionConfig:
    """Reflection-detection knobs.

    The threshold must separate the honest agreement rate (5/8) from the
    reflect rate (1).
    """

    test_round_fraction: float = 0.25
    equality_threshold: float = 0.85
    min_test_rounds: int = 32

    def __post_init__(self) -> None:
        if not 0.0 <= self.test_round_fraction <= 1.0:
            raise ValueError("test_round_fraction must lie in [0, 1]")
        if not _HONEST_DETECTION_RATE < self.equality_threshold < 1.0:
            raise ValueError("threshold must lie strictly between 5/8 and 1")
        if self.min_test_rounds < 1:
            raise ValueError("min_test_rounds must be positive")


@dataclass(frozen=True)
class AttackOutcome:
    succeeded: bool
    detected: bool
    claimed_distance_m: float | None
    true_distance_m: float


def designate_test_rounds(rng: Random, n: int, fraction: float) -> frozenset[int]:
    """The verifier's private choice of correlation-test rounds."""
    count = int(round(fraction * n))
    count = min(count, n)
    if count == 0:
        return frozenset()
    return frozenset(rng.sample(range(1, n + 1), count))


def reflection_detection(
    session: PartyBase, detection: DetectionConfig, registry: QuantumRegistry, rng: Random
) -> tuple[float, bool]:
    """Joint-measure the retained test pairs and compute the agreement rate.

    Each pair is measured in a fresh uniformly random common basis; agreement
    is counted relative to the Bell label's same-basis correlation, so the
    statistic reads 1.0 for a reflected sibling regardless of label.
    """
    pairs = session.retained_pairs
    if len(pairs) < detection.min_test_rounds:
        raise InsufficientTestRounds(
            f"{len(pairs)} test rounds < minimum {detection.min_test_rounds}"
        )
    label = session.cfg.bell_label
    matches = 0
    for local, returned in pairs:
        basis = Basis(rng.getrandbits(1))
        local_bit = registry.measure(local, basis)
        returned_bit = registry.measure(returned, basis)
        if returned_bit == local_bit ^ int(same_basis_flip(label, basis)):
            matches += 1
    rate = matches / len(pairs)
    return rate, rate >= detection.equality_threshold


# --------------------------------------------------------------------------
# Distance-fraud provers (legitimate key material, dishonest timing/content)
# --------------------------------------------------------------------------


class GuessingBrandsChaumProver(BrandsChaumProver):
    """Answers each challenge early with a uniformly guessed response bit."""

    def __init__(self, *args, advance_ps: int = 0, **kwargs):
        super().__init__(*args, **kwargs)
        self.advance_ps = advance_ps

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if not isinstance(msg, ChallengeBit) or msg.round != self.round:
            self._violation(msg, now)
        self._emit(ResponseBit(msg.round, self.rng.getrandbits(1)), now, -self.advance_ps)
        if self.round == self.cfg.n:
            self.phase = Phase.FINAL
            self._emit(FinalReveal((), self.nonce_n, self.salt), now)
            self._finish_prover()
        else:
            self.round += 1


class GuessingHanckeKuhnProver(HanckeKuhnProver):
    """Early responses using the register structure: rounds with a_i = b_i
    need no guess at all, the rest are coin flips."""

    def __init__(self, *args, advance_ps: int = 0, **kwargs):
        super().__init__(*args, **kwargs)
        self.advance_ps = advance_ps

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg):
            super().on_message(src, msg, now)
            return
        if not isinstance(msg, ChallengeBit) or msg.round != self.round:
            self._violation(msg, now)
        assert self.registers is not None
        a_i = self._register_bit(self.registers.a, msg.round)
        b_i = self._register_bit(self.registers.b, msg.round)
        reply = a_i if a_i == b_i else self.rng.getrandbits(1)
        self._emit(ResponseBit(msg.round, reply), now, -self.advance_ps)
        if self.round == self.cfg.n:
            self._finish_prover()
        else:
            self.round += 1


class _EarlyQuantumGuesser:
    """Shared body for quantum-protocol guessers: absorb the challenge
    unmeasured, pre-emit a uniformly guessed bit in a uniformly guessed
    basis."""

    rng: Random
    registry: QuantumRegistry
    advance_ps: int

    def _guess_reply(self) -> QuantumHandle:
        bit = self.rng.getrandbits(1)
        basis = Basis(self.rng.getrandbits(1))
        return self.registry.new_single(encode(bit, basis))


class GuessingQdbPriorProver(QdbPriorProver, _EarlyQuantumGuesser):
    def __init__(self, *args, advance_ps: int = 0, **kwargs):
        super().__init__(*args, **kwargs)
        self.advance_ps = advance_ps

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg):
            super().on_message(src, msg, now)
            return
        if not isinstance(msg, QubitMsg) or msg.round != self.round:
            self._violation(msg, now)
        self._emit(QubitMsg(msg.round, self._guess_reply()), now, -self.advance_ps)
        if self.round == self.cfg.n:
            self._finish_prover()
        else:
            self.round += 1


class GuessingEqdbOneWayProver(EqdbOneWayProver, _EarlyQuantumGuesser):
    def __init__(self, *args, advance_ps: int = 0, **kwargs):
        super().__init__(*args, **kwargs)
        self.advance_ps = advance_ps

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg):
            super().on_message(src, msg, now)
            return
        if not isinstance(msg, EprHalf) or msg.round != self.round:
            self._violation(msg, now)
        self._emit(QubitMsg(msg.round, self._guess_reply()), now, -self.advance_ps)
        if self.round == self.cfg.n:
            self._finish_prover()
        else:
            self.round += 1


class GuessingEqdbMutualPartyB(EqdbMutualPartyB, _EarlyQuantumGuesser):
    """Dishonest B shortening its distance: pre-emits guessed response
    qubits, ignores the echoes, opens its genuine commitment at the end."""

    def __init__(self, *args, advance_ps: int = 0, **kwargs):
        super().__init__(*args, **kwargs)
        self.advance_ps = advance_ps
        self._sent_bits: list[int] = []

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg):
            super().on_message(src, msg, now)
            return
        if isinstance(msg, EprHalf) and msg.round == self.round and not self._awaiting_echo:
            bit = self.rng.getrandbits(1)
            basis = Basis(self.rng.getrandbits(1))
            self._sent_bits.append(bit)
            self._emit(
                QubitMsg(msg.round, self.registry.new_single(encode(bit, basis))),
                now,
                -self.advance_ps,
            )
            self._awaiting_echo = True
            return
        if isinstance(msg, QubitMsg) and self._awaiting_echo:
            self._awaiting_echo = False
            if self.round == self.cfg.n:
                claimed = tuple(b ^ r for b, r in zip(self._sent_bits, self.r_bits))
                self._emit(FinalReveal(claimed, self.r_bits, self.salt), now)
                self._finish_attacker()
            else:
                self.round += 1
            return
        self._violation(msg, now)

    def _finish_attacker(self) -> None:
        self.phase = Phase.DONE
        self._verdict = Verdict(True, None, FailureReason.NONE)


class ReflectingQdbPriorProver(QdbPriorProver):
    """Bounces each challenge qubit back unmeasured, skipping processing."""

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg):
            super().on_message(src, msg, now)
            return
        if not isinstance(msg, QubitMsg) or msg.round != self.round:
            self._violation(msg, now)
        self._emit(QubitMsg(msg.round, msg.handle), now, 0)
        if self.round == self.cfg.n:
            self._finish_prover()
        else:
            self.round += 1


class ReflectingEqdbOneWayProver(EqdbOneWayProver):
    """Returns the verifier's own entangled half as the 'response'."""

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self.is_terminal:
            return
        if isinstance(msg, NonceMsg):
            super().on_message(src, msg, now)
            return
        if not isinstance(msg, EprHalf) or msg.round != self.round:
            self._violation(msg, now)
        self._emit(QubitMsg(msg.round, msg.handle), now, 0)
        if self.round == self.cfg.n:
            self._finish_prover()
        else:
            self.round += 1


class UnentangledEqdbMutualPartyA(EqdbMutualPartyA):
    """Party A's distance fraud from the security analysis: send unentangled
    |0> in basis a_i instead of a Bell half (pinning the peer's measurement
    to 0), then reflect the step-5 response straight back as the echo."""

    def _begin_round(self, index: int, now: int) -> None:
        self.round = index
        fake = self.registry.new_single(encode(0, self._bases_a[index - 1]))
        record = self._record(index)
        record.t_send_ps = self._emit(EprHalf(index, fake), now)
        self._set_round_timer(index, record.t_send_ps)

    def _close_round(self, msg: QubitMsg, now: int) -> None:
        record = self.records[msg.round]
        record.t_recv_ps = now
        self._emit(QubitMsg(msg.round, msg.handle), now, 0)
        if self.round == self.cfg.n:
            self.phase = Phase.FINAL
        else:
            self._begin_round(self.round + 1, now)

    def _final_check(self, msg: FinalReveal) -> None:
        self.phase = Phase.DONE
        self._verdict = Verdict(True, self._distance_bound(), FailureReason.NONE)


# --------------------------------------------------------------------------
# Mafia fraud (man in the middle)
# --------------------------------------------------------------------------


class MafiaMitm:
    """MITM between an honest verifier and an honest prover.

    Pre-ask mode withholds the prover's last initialization message from the
    verifier, runs the whole rapid phase against the prover with guessed
    challenges while the verifier still waits, then releases the held message
    and replays the pooled responses.  Intercept-resend answers the
    verifier's challenges itself (measuring challenge qubits in a random
    basis and re-encoding in a random basis).
    """

    def __init__(
        self,
        name: str,
        verifier: str,
        prover: str,
        protocol: ProtocolId,
        strategy: StrategyId,
        n: int,
        rng: Random,
        registry: QuantumRegistry,
    ):
        if strategy not in MAFIA_STRATEGIES:
            raise ValueError("MafiaMitm requires a mafia strategy")
        self.name = name
        self.verifier = verifier
        self.prover = prover
        self.protocol = protocol
        self.strategy = strategy
        self.n = n
        self.rng = rng
        self.registry = registry
        self.loop = None
        self._held_init: list[WireMessage] = []
        self._held_final: list[WireMessage] = []
        self._pool: dict[int, WireMessage] = {}
        self._pre_round = 0
        self._pre_phase_active = False
        self._verifier_round = 0

    def bind(self, loop) -> None:
        self.loop = loop

    def start(self, now: int) -> None:
        pass

    def on_timer(self, tag, now: int) -> None:
        pass

    @property
    def is_terminal(self) -> bool:
        return True  # never blocks loop termination

    def verdict(self) -> Verdict | None:
        return None

    def _forward(self, dst: str, msg: WireMessage, now: int) -> None:
        assert self.loop is not None
        self.loop.send(self.name, dst, msg, now)

    # -- prover-side pre-session ------------------------------------------

    def _fake_challenge(self, index: int) -> WireMessage:
        guess_bit = self.rng.getrandbits(1)
        if self.protocol in (ProtocolId.BRANDS_CHAUM, ProtocolId.HANCKE_KUHN):
            return ChallengeBit(index, guess_bit)
        guess_basis = Basis(self.rng.getrandbits(1))
        handle = self.registry.new_single(encode(guess_bit, guess_basis))
        if self.protocol is ProtocolId.QDB_PRIOR:
            return QubitMsg(index, handle)
        return EprHalf(index, handle)

    def _start_preask(self, now: int) -> None:
        self._pre_phase_active = True
        self._pre_round = 1
        self._forward(self.prover, self._fake_challenge(1), now)

    def _on_pre_response(self, msg: WireMessage, now: int) -> None:
        self._pool[self._pre_round] = msg
        if self._pre_round == self.n:
            self._pre_phase_active = False
            for held in self._held_init:
                self._forward(self.verifier, held, now)
            self._held_init.clear()
        else:
            self._pre_round += 1
            self._forward(self.prover, self._fake_challenge(self._pre_round), now)

    # -- message handling ---------------------------------------------------

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if src == self.verifier:
            self._from_verifier(msg, now)
        else:
            self._from_prover(msg, now)

    def _from_verifier(self, msg: WireMessage, now: int) -> None:
        if isinstance(msg, NonceMsg):
            self._forward(self.prover, msg, now)
            return
        if isinstance(msg, (ChallengeBit, QubitMsg, EprHalf)):
            self._verifier_round = getattr(msg, "round", self._verifier_round)
            self._answer_verifier(msg, now)
            return
        self._forward(self.prover, msg, now)

    def _from_prover(self, msg: WireMessage, now: int) -> None:
        preask = self.strategy is StrategyId.MAFIA_PREASK
        if isinstance(msg, (NonceMsg, CommitMsg)):
            if preask:
                self._held_init.append(msg)
                if not self._pre_phase_active:
                    self._start_preask(now)
            else:
                self._forward(self.verifier, msg, now)
            return
        if isinstance(msg, (ResponseBit, QubitMsg)):
            if self._pre_phase_active:
                self._on_pre_response(msg, now)
            # intercept-resend ignores the prover's (late) answers
            return
        if isinstance(msg, FinalReveal):
            if self._verifier_round >= self.n:
                self._forward(self.verifier, msg, now)
            else:
                self._held_final.append(msg)
            return

    def _answer_verifier(self, challenge: WireMessage, now: int) -> None:
        index = challenge.round
        if self.strategy is StrategyId.MAFIA_PREASK:
            pooled = self._pool.pop(index, None)
            if pooled is None:
                raise ProtocolViolation(f"pre-ask pool empty for round {index}")
            reply = pooled
        else:
            reply = self._intercept_reply(challenge, now)
        self._forward(self.verifier, reply, now)
        if index >= self.n:
            for held in self._held_final:
                self._forward(self.verifier, held, now)
            self._held_final.clear()

    def _intercept_reply(self, challenge: WireMessage, now: int) -> WireMessage:
        index = challenge.round
        if isinstance(challenge, ChallengeBit):
            if self.protocol is ProtocolId.BRANDS_CHAUM:
                # keep the real prover's state machine moving so that its
                # final commitment opening still arrives
                self._forward(self.prover, challenge, now)
            return ResponseBit(index, self.rng.getrandbits(1))
        measure_basis = Basis(self.rng.getrandbits(1))
        reencode_basis = Basis(self.rng.getrandbits(1))
        outcome = self.registry.measure(challenge.handle, measure_basis)
        return QubitMsg(index, self.registry.new_single(encode(outcome, reencode_basis)))


class MutualImpersonator:
    """Mafia against the mutual protocol: fully impersonates Party B towards
    Party A with its own committed r, per round either measuring A's Bell
    half in a random basis and re-encoding (intercept-resend) or answering
    with an outright guess (pre-ask); echoes are absorbed unchecked."""

    def __init__(
        self,
        name: str,
        peer: str,
        strategy: StrategyId,
        cfg: ProtocolConfig,
        rng: Random,
        registry: QuantumRegistry,
    ):
        if strategy not in MAFIA_STRATEGIES:
            raise ValueError("MutualImpersonator requires a mafia strategy")
        self.name = name
        self.peer = peer
        self.strategy = strategy
        self.cfg = cfg
        self.rng = rng
        self.registry = registry
        self.loop = None
        self.r_bits = crypto.random_bits(rng, cfg.n)
        self.salt = rng.randbytes(16)
        self.claimed_bits: list[int] = []
        self.round = 0
        self._awaiting_echo = False
        self._done = False

    def bind(self, loop) -> None:
        self.loop = loop

    def start(self, now: int) -> None:
        pass

    def on_timer(self, tag, now: int) -> None:
        pass

    @property
    def is_terminal(self) -> bool:
        return True

    def verdict(self) -> Verdict | None:
        return None

    def _emit(self, msg: WireMessage, now: int) -> None:
        assert self.loop is not None
        self.loop.send(self.name, self.peer, msg, now)

    def on_message(self, src: str, msg: WireMessage, now: int) -> None:
        if self._done:
            return
        if isinstance(msg, NonceMsg):
            self._emit(NonceMsg(crypto.random_bits(self.rng, self.cfg.nonce_bits)), now)
            self._emit(CommitMsg(crypto.commit(self.r_bits, self.salt)), now)
            self.round = 1
            return
        if isinstance(msg, EprHalf) and not self._awaiting_echo:
            r_i = self.r_bits[msg.round - 1]
            if self.strategy is StrategyId.MAFIA_INTERCEPT_RESEND:
                measure_basis = Basis(self.rng.getrandbits(1))
                outcome = self.registry.measure(msg.handle, measure_basis)
                bit = outcome ^ r_i
                basis = Basis(self.rng.getrandbits(1))
                self.claimed_bits.append(outcome)
            else:
                bit = self.rng.getrandbits(1)
                basis = Basis(self.rng.getrandbits(1))
                self.claimed_bits.append(bit ^ r_i)
            self._emit(QubitMsg(msg.round, self.registry.new_single(encode(bit, basis))), now)
            self._awaiting_echo = True
            return
        if isinstance(msg, QubitMsg) and self._awaiting_echo:
            self._awaiting_echo = False
            if self.round == self.cfg.n:
                self._emit(FinalReveal(tuple(self.claimed_bits), self.r_bits, self.salt), now)
                self._done = True
            else:
                self.round += 1
            return
        # anything else (stray finals, retries) is ignored
