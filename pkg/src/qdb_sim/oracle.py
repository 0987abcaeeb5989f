"""Exhaustive per-round enumeration oracle.

Every per-round success probability is computed by enumerating register
bits, challenge/guess values, bases and measurement branches, weighting each
branch by its amplitude-derived probability (rationalized: all branch
probabilities in these protocols are small dyadic rationals, asserted to
1e-12).  The oracle shares only the amplitude primitives with the simulator;
it never samples and never touches the event-driven path it is used to
check.

``register_relation`` narrows register-dependent strategies: ``True`` means
the two relevant register bits are equal in the round, ``False`` that they
differ, ``None`` averages over uniform bits.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import product

from .adversary import StrategyId
from .crypto import Registers
from .protocol import ProtocolId, brands_chaum_response, hancke_kuhn_response
from .qstate import (
    Basis,
    BellLabel,
    bell_state,
    distribution1,
    encode,
    joint_distribution,
    same_basis_flip,
)

_BASES = (Basis.COMPUTATIONAL, Basis.HADAMARD)
_HALF = Fraction(1, 2)
_QUARTER = Fraction(1, 4)

# strategies whose per-round success depends on a pair of register bits
RELATION_REGISTERS: dict[tuple[ProtocolId, StrategyId], tuple[str, str]] = {
    (ProtocolId.QDB_PRIOR, StrategyId.DISTANCE_FRAUD_REFLECT): ("a", "b"),
    (ProtocolId.EQDB_ONE_WAY, StrategyId.DISTANCE_FRAUD_REFLECT): ("a", "b"),
    (ProtocolId.HANCKE_KUHN, StrategyId.DISTANCE_FRAUD_GUESS): ("a", "b"),
    (ProtocolId.EQDB_MUTUAL, StrategyId.MUTUAL_FRAUD_UNENTANGLED): ("b", "c"),
}


def _rationalize(p: float, max_denominator: int = 64) -> Fraction:
    q = Fraction(p).limit_denominator(max_denominator)
    if abs(float(q) - p) > 1e-12:
        raise ValueError(f"probability {p!r} is not a small rational")
    return q


def decode_dist(bit: int, enc_basis: Basis, dec_basis: Basis) -> dict[int, Fraction]:
    """Exact outcome distribution of decoding |bit>_enc in dec_basis."""
    p0, p1 = distribution1(encode(bit, enc_basis), dec_basis)
    return {0: _rationalize(p0), 1: _rationalize(p1)}


def bell_joint(label: BellLabel, basis_first: Basis, basis_second: Basis) -> dict[tuple[int, int], Fraction]:
    """Exact joint distribution of measuring the two halves of a Bell pair."""
    raw = joint_distribution(bell_state(label), basis_first, basis_second)
    return {key: _rationalize(value) for key, value in raw.items()}


def _flip(label: BellLabel, basis: Basis) -> int:
    return int(same_basis_flip(label, basis))


def _register_pairs(relation: bool | None) -> list[tuple[int, int, Fraction]]:
    if relation is None:
        return [(x, y, _QUARTER) for x, y in product((0, 1), repeat=2)]
    if relation:
        return [(0, 0, _HALF), (1, 1, _HALF)]
    return [(0, 1, _HALF), (1, 0, _HALF)]


def _check_relation_arg(protocol: ProtocolId, strategy: StrategyId, relation: bool | None) -> None:
    if relation is not None and (protocol, strategy) not in RELATION_REGISTERS:
        raise ValueError(
            f"{protocol.value}/{strategy.value} has no register-relation conditioning"
        )


# --------------------------------------------------------------------------
# per-protocol round enumerations
# --------------------------------------------------------------------------


def _brands_chaum_round(strategy: StrategyId) -> Fraction:
    total = Fraction(0)
    for nonce_bit, challenge in product((0, 1), repeat=2):
        weight = _QUARTER
        expected = brands_chaum_response(nonce_bit, challenge)
        if strategy is StrategyId.HONEST_BASELINE:
            total += weight  # the honest reply is the expected one
        elif strategy in (
            StrategyId.DISTANCE_FRAUD_GUESS,
            StrategyId.MAFIA_INTERCEPT_RESEND,
        ):
            for guess in (0, 1):
                total += weight * _HALF * (guess == expected)
        elif strategy is StrategyId.MAFIA_PREASK:
            # replay of N_i xor guessed challenge
            for guessed_challenge in (0, 1):
                replay = brands_chaum_response(nonce_bit, guessed_challenge)
                total += weight * _HALF * (replay == expected)
        else:
            raise ValueError(f"no {strategy.value} enumeration for brands_chaum")
    return total


def _hancke_kuhn_round(strategy: StrategyId, relation: bool | None) -> Fraction:
    total = Fraction(0)
    for a_bit, b_bit, pair_weight in _register_pairs(relation):
        for challenge in (0, 1):
            weight = pair_weight * _HALF
            expected = hancke_kuhn_response(challenge, a_bit, b_bit)
            if strategy is StrategyId.HONEST_BASELINE:
                total += weight
            elif strategy is StrategyId.DISTANCE_FRAUD_GUESS:
                if a_bit == b_bit:
                    total += weight  # the response is challenge-independent
                else:
                    for guess in (0, 1):
                        total += weight * _HALF * (guess == expected)
            elif strategy is StrategyId.MAFIA_PREASK:
                for guessed_challenge in (0, 1):
                    replay = hancke_kuhn_response(guessed_challenge, a_bit, b_bit)
                    total += weight * _HALF * (replay == expected)
            elif strategy is StrategyId.MAFIA_INTERCEPT_RESEND:
                for guess in (0, 1):
                    total += weight * _HALF * (guess == expected)
            else:
                raise ValueError(f"no {strategy.value} enumeration for hancke_kuhn")
    return total


def _qdb_prior_round(strategy: StrategyId, relation: bool | None) -> Fraction:
    total = Fraction(0)
    for a_bit, b_bit, pair_weight in _register_pairs(relation):
        basis_a, basis_b = Basis(a_bit), Basis(b_bit)
        for challenge in (0, 1):
            weight = pair_weight * _HALF
            if strategy is StrategyId.HONEST_BASELINE:
                for c_prime, p1 in decode_dist(challenge, basis_a, basis_a).items():
                    for c_second, p2 in decode_dist(c_prime, basis_b, basis_b).items():
                        total += weight * p1 * p2 * (c_second == challenge)
            elif strategy is StrategyId.DISTANCE_FRAUD_GUESS:
                for guess in (0, 1):
                    for guess_basis in _BASES:
                        w = weight * _QUARTER
                        for z, pz in decode_dist(guess, guess_basis, basis_b).items():
                            total += w * pz * (z == challenge)
            elif strategy is StrategyId.DISTANCE_FRAUD_REFLECT:
                for z, pz in decode_dist(challenge, basis_a, basis_b).items():
                    total += weight * pz * (z == challenge)
            elif strategy is StrategyId.MAFIA_PREASK:
                for guess in (0, 1):
                    for guess_basis in _BASES:
                        w = weight * _QUARTER
                        for c_prime, p1 in decode_dist(guess, guess_basis, basis_a).items():
                            # replayed |c'>_b decodes deterministically
                            for z, p2 in decode_dist(c_prime, basis_b, basis_b).items():
                                total += w * p1 * p2 * (z == challenge)
            elif strategy is StrategyId.MAFIA_INTERCEPT_RESEND:
                for mb in _BASES:
                    for rb in _BASES:
                        w = weight * _QUARTER
                        for g, p1 in decode_dist(challenge, basis_a, mb).items():
                            for z, p2 in decode_dist(g, rb, basis_b).items():
                                total += w * p1 * p2 * (z == challenge)
            else:
                raise ValueError(f"no {strategy.value} enumeration for qdb_prior")
    return total


def _eqdb_one_way_round(strategy: StrategyId, relation: bool | None, label: BellLabel) -> Fraction:
    total = Fraction(0)
    for a_bit, b_bit, pair_weight in _register_pairs(relation):
        basis_a, basis_b = Basis(a_bit), Basis(b_bit)
        flip_a = _flip(label, basis_a)
        if strategy is StrategyId.HONEST_BASELINE:
            joint = bell_joint(label, basis_a, basis_a)
            for (m, m_prime), pj in joint.items():
                for z, pz in decode_dist(m_prime, basis_b, basis_b).items():
                    total += pair_weight * pj * pz * (z == m ^ flip_a)
        elif strategy is StrategyId.DISTANCE_FRAUD_GUESS:
            local = _local_marginal(label, basis_a)
            for m, pm in local.items():
                for guess in (0, 1):
                    for guess_basis in _BASES:
                        w = pair_weight * pm * _QUARTER
                        for z, pz in decode_dist(guess, guess_basis, basis_b).items():
                            total += w * pz * (z == m ^ flip_a)
        elif strategy is StrategyId.DISTANCE_FRAUD_REFLECT:
            joint = bell_joint(label, basis_a, basis_b)
            for (m, z), pj in joint.items():
                total += pair_weight * pj * (z == m ^ flip_a)
        elif strategy is StrategyId.MAFIA_PREASK:
            local = _local_marginal(label, basis_a)
            for guess in (0, 1):
                for guess_basis in _BASES:
                    for m_prime, p1 in decode_dist(guess, guess_basis, basis_a).items():
                        for z, p2 in decode_dist(m_prime, basis_b, basis_b).items():
                            for m, pm in local.items():
                                w = pair_weight * _QUARTER * p1 * p2 * pm
                                total += w * (z == m ^ flip_a)
        elif strategy is StrategyId.MAFIA_INTERCEPT_RESEND:
            for mb in _BASES:
                joint = bell_joint(label, basis_a, mb)
                for rb in _BASES:
                    for (m, g), pj in joint.items():
                        w = pair_weight * _QUARTER * pj
                        for z, pz in decode_dist(g, rb, basis_b).items():
                            total += w * pz * (z == m ^ flip_a)
        else:
            raise ValueError(f"no {strategy.value} enumeration for eqdb_one_way")
    return total


def _local_marginal(label: BellLabel, basis: Basis) -> dict[int, Fraction]:
    joint = bell_joint(label, basis, basis)
    return {
        m: joint[(m, 0)] + joint[(m, 1)]
        for m in (0, 1)
    }


def _eqdb_mutual_round(strategy: StrategyId, relation: bool | None, label: BellLabel) -> Fraction:
    total = Fraction(0)
    if strategy is StrategyId.MUTUAL_FRAUD_UNENTANGLED:
        # challenge is |0>_a so B measures 0 and responds |r_i>_b, which the
        # attacker reflects straight into B's decoder in basis c
        for b_bit, c_bit, pair_weight in _register_pairs(relation):
            basis_b, basis_c = Basis(b_bit), Basis(c_bit)
            for r_bit in (0, 1):
                w = pair_weight * _HALF
                for z, pz in decode_dist(r_bit, basis_b, basis_c).items():
                    total += w * pz * (z == r_bit)
        return total

    for a_bit, b_bit, pair_weight in _register_pairs(None):
        basis_a, basis_b = Basis(a_bit), Basis(b_bit)
        flip_a = _flip(label, basis_a)
        if strategy is StrategyId.HONEST_BASELINE:
            # A's recomputation check and B's echo check, both gated
            for c_bit in (0, 1):
                basis_c = Basis(c_bit)
                joint = bell_joint(label, basis_a, basis_a)
                for (m, m_prime), pj in joint.items():
                    for r_bit in (0, 1):
                        w = pair_weight * _HALF * _HALF * pj
                        for y, py in decode_dist(m_prime ^ r_bit, basis_b, basis_b).items():
                            recomputed_ok = (y ^ r_bit) == m ^ flip_a
                            echo = y ^ m ^ flip_a
                            for z, pz in decode_dist(echo, basis_c, basis_c).items():
                                total += w * py * pz * (recomputed_ok and z == r_bit)
        elif strategy is StrategyId.DISTANCE_FRAUD_GUESS:
            local = _local_marginal(label, basis_a)
            for m, pm in local.items():
                for r_bit in (0, 1):
                    for sent, sent_basis in product((0, 1), _BASES):
                        w = pair_weight * pm * _HALF * _QUARTER
                        for y, py in decode_dist(sent, sent_basis, basis_b).items():
                            total += w * py * ((y ^ r_bit) == m ^ flip_a)
        elif strategy is StrategyId.MAFIA_INTERCEPT_RESEND:
            for r_bit in (0, 1):
                for mb in _BASES:
                    joint = bell_joint(label, basis_a, mb)
                    for rb in _BASES:
                        for (m, g), pj in joint.items():
                            w = pair_weight * _HALF * _QUARTER * pj
                            for y, py in decode_dist(g ^ r_bit, rb, basis_b).items():
                                total += w * py * ((y ^ r_bit) == m ^ flip_a)
        elif strategy is StrategyId.MAFIA_PREASK:
            local = _local_marginal(label, basis_a)
            for m, pm in local.items():
                for r_bit in (0, 1):
                    for sent, sent_basis in product((0, 1), _BASES):
                        w = pair_weight * pm * _HALF * _QUARTER
                        for y, py in decode_dist(sent, sent_basis, basis_b).items():
                            total += w * py * ((y ^ r_bit) == m ^ flip_a)
        else:
            raise ValueError(f"no {strategy.value} enumeration for eqdb_mutual")
    return total


def per_round_oracle(
    protocol: ProtocolId,
    strategy: StrategyId,
    register_relation: bool | None = None,
    bell_label: BellLabel = BellLabel.B00,
) -> Fraction:
    """Exact per-round success probability of a strategy against a protocol."""
    _check_relation_arg(protocol, strategy, register_relation)
    if protocol is ProtocolId.BRANDS_CHAUM:
        return _brands_chaum_round(strategy)
    if protocol is ProtocolId.HANCKE_KUHN:
        return _hancke_kuhn_round(strategy, register_relation)
    if protocol is ProtocolId.QDB_PRIOR:
        return _qdb_prior_round(strategy, register_relation)
    if protocol is ProtocolId.EQDB_ONE_WAY:
        return _eqdb_one_way_round(strategy, register_relation, bell_label)
    if protocol is ProtocolId.EQDB_MUTUAL:
        return _eqdb_mutual_round(strategy, register_relation, bell_label)
    raise ValueError(f"unknown protocol {protocol!r}")


def expected_success_rate(
    protocol: ProtocolId,
    strategy: StrategyId,
    n: int,
    registers: Registers | None = None,
    bell_label: BellLabel = BellLabel.B00,
) -> Fraction:
    """n-round success probability implied by the per-round oracle.

    With explicit registers the product runs over the actual per-round
    relations (yielding the 2^-HD closed forms); without them the uniform
    average applies, rounds being independent.
    """
    if strategy is StrategyId.HONEST_BASELINE:
        return Fraction(1)
    key = (protocol, strategy)
    if key in RELATION_REGISTERS and registers is not None:
        reg_x, reg_y = RELATION_REGISTERS[key]
        x_bits = getattr(registers, reg_x)
        y_bits = getattr(registers, reg_y)
        rate = Fraction(1)
        for x, y in zip(x_bits, y_bits):
            rate *= per_round_oracle(protocol, strategy, x == y, bell_label)
        return rate
    return per_round_oracle(protocol, strategy, None, bell_label) ** n


def reflect_success_from_hd(
    protocol: ProtocolId, hd: int, bell_label: BellLabel = BellLabel.B00
) -> Fraction:
    """2^-HD shortcut via the conditioned oracle values."""
    strategy = (
        StrategyId.MUTUAL_FRAUD_UNENTANGLED
        if protocol is ProtocolId.EQDB_MUTUAL
        else StrategyId.DISTANCE_FRAUD_REFLECT
    )
    p_neq = per_round_oracle(protocol, strategy, False, bell_label)
    return p_neq**hd


def detection_equality_oracle(reflected: bool, label: BellLabel = BellLabel.B00) -> Fraction:
    """Exact label-adjusted agreement rate of the reflection-detection test.

    ``reflected=True`` models a prover returning the verifier's entangled
    half; ``False`` the honest response qubit.
    """
    total = Fraction(0)
    if reflected:
        for beta in _BASES:
            joint = bell_joint(label, beta, beta)
            flip_b = _flip(label, beta)
            for (e1, e2), pj in joint.items():
                total += _HALF * pj * (e2 == e1 ^ flip_b)
        return total
    for a_bit, b_bit, pair_weight in _register_pairs(None):
        basis_a, basis_b = Basis(a_bit), Basis(b_bit)
        flip_a = _flip(label, basis_a)
        local = _local_marginal(label, basis_a)
        for m_prime, pm in local.items():
            local_bit = m_prime ^ flip_a
            for beta in _BASES:
                w = pair_weight * pm * _HALF
                flip_beta = _flip(label, beta)
                for e1, p1 in decode_dist(local_bit, basis_a, beta).items():
                    for e2, p2 in decode_dist(m_prime, basis_b, beta).items():
                        total += w * p1 * p2 * (e2 == e1 ^ flip_beta)
    return total
