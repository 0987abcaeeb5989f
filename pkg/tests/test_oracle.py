"""Enumeration-oracle values and closed-form agreement."""

from fractions import Fraction

import pytest

from qdb_sim.adversary import StrategyId
from qdb_sim.crypto import Registers, hamming_distance
from qdb_sim.harness import FraudKind, Table2Row, closed_form
from qdb_sim.oracle import (
    _rationalize,
    detection_equality_oracle,
    expected_success_rate,
    per_round_oracle,
    reflect_success_from_hd,
)
from qdb_sim.protocol import ProtocolId
from qdb_sim.qstate import BellLabel

P = ProtocolId
S = StrategyId
F = Fraction


@pytest.mark.parametrize(
    "protocol,strategy,relation,expected",
    [
        (P.BRANDS_CHAUM, S.HONEST_BASELINE, None, F(1)),
        (P.BRANDS_CHAUM, S.DISTANCE_FRAUD_GUESS, None, F(1, 2)),
        (P.BRANDS_CHAUM, S.MAFIA_PREASK, None, F(1, 2)),
        (P.BRANDS_CHAUM, S.MAFIA_INTERCEPT_RESEND, None, F(1, 2)),
        (P.HANCKE_KUHN, S.HONEST_BASELINE, None, F(1)),
        (P.HANCKE_KUHN, S.DISTANCE_FRAUD_GUESS, None, F(3, 4)),
        (P.HANCKE_KUHN, S.DISTANCE_FRAUD_GUESS, True, F(1)),
        (P.HANCKE_KUHN, S.DISTANCE_FRAUD_GUESS, False, F(1, 2)),
        (P.HANCKE_KUHN, S.MAFIA_PREASK, None, F(3, 4)),
        (P.HANCKE_KUHN, S.MAFIA_INTERCEPT_RESEND, None, F(1, 2)),
        (P.QDB_PRIOR, S.HONEST_BASELINE, None, F(1)),
        (P.QDB_PRIOR, S.DISTANCE_FRAUD_GUESS, None, F(1, 2)),
        (P.QDB_PRIOR, S.DISTANCE_FRAUD_REFLECT, True, F(1)),
        (P.QDB_PRIOR, S.DISTANCE_FRAUD_REFLECT, False, F(1, 2)),
        (P.QDB_PRIOR, S.DISTANCE_FRAUD_REFLECT, None, F(3, 4)),
        (P.QDB_PRIOR, S.MAFIA_PREASK, None, F(1, 2)),
        (P.QDB_PRIOR, S.MAFIA_INTERCEPT_RESEND, None, F(5, 8)),
        (P.EQDB_ONE_WAY, S.HONEST_BASELINE, None, F(1)),
        (P.EQDB_ONE_WAY, S.DISTANCE_FRAUD_GUESS, None, F(1, 2)),
        (P.EQDB_ONE_WAY, S.DISTANCE_FRAUD_REFLECT, True, F(1)),
        (P.EQDB_ONE_WAY, S.DISTANCE_FRAUD_REFLECT, False, F(1, 2)),
        (P.EQDB_ONE_WAY, S.MAFIA_PREASK, None, F(1, 2)),
        (P.EQDB_ONE_WAY, S.MAFIA_INTERCEPT_RESEND, None, F(5, 8)),
        (P.EQDB_MUTUAL, S.HONEST_BASELINE, None, F(1)),
        (P.EQDB_MUTUAL, S.DISTANCE_FRAUD_GUESS, None, F(1, 2)),
        (P.EQDB_MUTUAL, S.MUTUAL_FRAUD_UNENTANGLED, True, F(1)),
        (P.EQDB_MUTUAL, S.MUTUAL_FRAUD_UNENTANGLED, False, F(1, 2)),
        (P.EQDB_MUTUAL, S.MAFIA_PREASK, None, F(1, 2)),
        (P.EQDB_MUTUAL, S.MAFIA_INTERCEPT_RESEND, None, F(5, 8)),
    ],
)
def test_per_round_values(protocol, strategy, relation, expected):
    assert per_round_oracle(protocol, strategy, relation) == expected


def test_relation_argument_rejected_when_meaningless():
    with pytest.raises(ValueError):
        per_round_oracle(P.BRANDS_CHAUM, S.DISTANCE_FRAUD_GUESS, True)


@pytest.mark.parametrize("label", list(BellLabel))
def test_oracle_is_label_invariant(label):
    assert per_round_oracle(P.EQDB_ONE_WAY, S.MAFIA_INTERCEPT_RESEND, bell_label=label) == F(5, 8)
    assert per_round_oracle(P.EQDB_MUTUAL, S.HONEST_BASELINE, bell_label=label) == F(1)
    assert detection_equality_oracle(True, label) == F(1)
    assert detection_equality_oracle(False, label) == F(5, 8)


def test_expected_rate_with_pinned_registers_is_hd_formula():
    a = (1, 0, 1, 0, 1, 1, 0, 0)
    b = (1, 0, 0, 1, 1, 1, 0, 0)  # HD 2
    regs = Registers(a, b)
    rate = expected_success_rate(P.QDB_PRIOR, S.DISTANCE_FRAUD_REFLECT, 8, regs)
    assert rate == F(1, 4)
    assert rate == reflect_success_from_hd(P.QDB_PRIOR, hamming_distance(a, b))


def test_expected_rate_mutual_unentangled_uses_b_c():
    regs = Registers((0,) * 4, (1, 1, 0, 0), (1, 1, 1, 1))  # HD(b,c) = 2
    rate = expected_success_rate(P.EQDB_MUTUAL, S.MUTUAL_FRAUD_UNENTANGLED, 4, regs)
    assert rate == F(1, 4)


def test_expected_rate_register_free_average():
    assert expected_success_rate(P.EQDB_ONE_WAY, S.MAFIA_INTERCEPT_RESEND, 8) == F(5, 8) ** 8
    assert expected_success_rate(P.QDB_PRIOR, S.DISTANCE_FRAUD_REFLECT, 8) == F(3, 4) ** 8


def test_rationalize_guards_non_dyadic():
    assert _rationalize(0.5) == F(1, 2)
    with pytest.raises(ValueError):
        _rationalize(0.123456789)


# -- closed forms ----------------------------------------------------------------


def test_closed_form_examples():
    assert closed_form(Table2Row.EQDB_MUTUAL, FraudKind.DISTANCE, 8, hd_bc=3) == F(1, 8)
    assert closed_form(Table2Row.HANCKE_KUHN, FraudKind.MAFIA, 4) == F(81, 256)
    assert float(closed_form(Table2Row.HANCKE_KUHN, FraudKind.MAFIA, 4)) == 0.31640625
    assert closed_form(Table2Row.EQDB_ONE_WAY, FraudKind.MAFIA, 1) == F(5, 8)


def test_closed_form_all_rows():
    n = 8
    assert closed_form(Table2Row.BRANDS_CHAUM, FraudKind.DISTANCE, n) == F(1, 2) ** n
    assert closed_form(Table2Row.BRANDS_CHAUM, FraudKind.MAFIA, n) == F(1, 2) ** n
    assert closed_form(Table2Row.HANCKE_KUHN, FraudKind.DISTANCE, n) == F(3, 4) ** n
    assert closed_form(Table2Row.QDB_PRIOR_MAC, FraudKind.DISTANCE, n) == F(3, 4) ** n
    assert closed_form(Table2Row.QDB_PRIOR_MAC, FraudKind.MAFIA, n) == F(3, 4) ** n
    assert closed_form(Table2Row.QDB_PRIOR, FraudKind.DISTANCE, n, hd_ab=3) == F(1, 8)
    assert closed_form(Table2Row.QDB_PRIOR, FraudKind.MAFIA, n, hd_ab=1) == F(1, 2)
    assert closed_form(Table2Row.QDB_PRIOR, FraudKind.MAFIA, n, hd_ab=8) == F(5, 8) ** n
    assert closed_form(Table2Row.HYBRID_DB, FraudKind.DISTANCE, n) == F(1, 2) ** n
    assert closed_form(Table2Row.HYBRID_DB, FraudKind.MAFIA, n) == F(3, 4) ** n
    assert closed_form(Table2Row.EQDB_ONE_WAY, FraudKind.DISTANCE, n, hd_ab=4) == F(1, 16)
    assert closed_form(Table2Row.EQDB_MUTUAL, FraudKind.MAFIA, n) == F(5, 8) ** n


def test_closed_form_requires_hd():
    with pytest.raises(ValueError):
        closed_form(Table2Row.EQDB_ONE_WAY, FraudKind.DISTANCE, 8)


def test_oracle_agrees_with_closed_form_per_round():
    """Every simulable comparison-table cell, reproduced from the branch
    enumeration alone."""
    # Brands-Chaum: (1/2)^n both columns
    assert per_round_oracle(P.BRANDS_CHAUM, S.DISTANCE_FRAUD_GUESS) == closed_form(
        Table2Row.BRANDS_CHAUM, FraudKind.DISTANCE, 1
    )
    assert per_round_oracle(P.BRANDS_CHAUM, S.MAFIA_PREASK) == closed_form(
        Table2Row.BRANDS_CHAUM, FraudKind.MAFIA, 1
    )
    # Hancke-Kuhn: (3/4)^n both columns
    assert per_round_oracle(P.HANCKE_KUHN, S.DISTANCE_FRAUD_GUESS) == closed_form(
        Table2Row.HANCKE_KUHN, FraudKind.DISTANCE, 1
    )
    assert per_round_oracle(P.HANCKE_KUHN, S.MAFIA_PREASK) == closed_form(
        Table2Row.HANCKE_KUHN, FraudKind.MAFIA, 1
    )
    # register-dependent reflect rows: the conditioned oracle values compose
    # to (1/2)^HD for any registers
    for row, protocol, strategy, hd_kw in [
        (Table2Row.QDB_PRIOR, P.QDB_PRIOR, S.DISTANCE_FRAUD_REFLECT, "hd_ab"),
        (Table2Row.EQDB_ONE_WAY, P.EQDB_ONE_WAY, S.DISTANCE_FRAUD_REFLECT, "hd_ab"),
        (Table2Row.EQDB_MUTUAL, P.EQDB_MUTUAL, S.MUTUAL_FRAUD_UNENTANGLED, "hd_bc"),
    ]:
        p_eq = per_round_oracle(protocol, strategy, True)
        p_neq = per_round_oracle(protocol, strategy, False)
        for hd in (0, 1, 2, 4):
            n = 8
            composed = p_eq ** (n - hd) * p_neq**hd
            assert composed == closed_form(row, FraudKind.DISTANCE, n, **{hd_kw: hd})
    # intercept-resend rows: (5/8)^n
    assert per_round_oracle(P.EQDB_ONE_WAY, S.MAFIA_INTERCEPT_RESEND) == closed_form(
        Table2Row.EQDB_ONE_WAY, FraudKind.MAFIA, 1
    )
    assert per_round_oracle(P.EQDB_MUTUAL, S.MAFIA_INTERCEPT_RESEND) == closed_form(
        Table2Row.EQDB_MUTUAL, FraudKind.MAFIA, 1
    )


def test_wrong_basis_prover_passes_half_the_time():
    # a one-way prover measuring the received half in the complement of a_i
    # and re-encoding honestly still reaches the verifier's check with a
    # coin-flip: its outcome is independent of the verifier's local bit
    from qdb_sim.oracle import _flip, _register_pairs, bell_joint, decode_dist
    from qdb_sim.qstate import BellLabel

    label = BellLabel.B00
    total = Fraction(0)
    for a_bit, b_bit, weight in _register_pairs(None):
        from qdb_sim.qstate import Basis

        basis_a, basis_b = Basis(a_bit), Basis(b_bit)
        joint = bell_joint(label, basis_a, basis_a.complement)
        for (m, m_prime), pj in joint.items():
            for z, pz in decode_dist(m_prime, basis_b, basis_b).items():
                total += weight * pj * pz * (z == m ^ _flip(label, basis_a))
    assert total == Fraction(1, 2)
