"""Experiment runner, emitters, table2, config handling, and the CLI."""

import json
import math
import subprocess
import sys

import pytest

from qdb_sim.adversary import DetectionConfig, StrategyId
from qdb_sim.cli import main as cli_main
from qdb_sim.crypto import Registers
from qdb_sim.errors import ConfigError
from qdb_sim.harness import (
    AttackStats,
    ExperimentConfig,
    FraudKind,
    Table2Row,
    binomial_z,
    config_from_dict,
    json_text_to_csv_text,
    load_config,
    run_single_trial,
    run_trials,
    sample_honest_detection_flags,
    stats_to_csv_text,
    stats_to_json_text,
    table2,
    table2_to_csv_text,
    trace_to_jsonl,
)
from qdb_sim.protocol import ProtocolId

P = ProtocolId
S = StrategyId


# -- configuration -----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(protocol=P.HANCKE_KUHN, trials=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(protocol=P.BRANDS_CHAUM, attack=S.DISTANCE_FRAUD_REFLECT)
    with pytest.raises(ConfigError):
        ExperimentConfig(protocol=P.EQDB_ONE_WAY, attack=S.MUTUAL_FRAUD_UNENTANGLED)
    with pytest.raises(ConfigError):
        ExperimentConfig(protocol=P.HANCKE_KUHN, role_reversal=True)
    with pytest.raises(ConfigError):
        ExperimentConfig(
            protocol=P.EQDB_ONE_WAY, n=4, registers=Registers((0, 1), (1, 0))
        )
    with pytest.raises(ConfigError):
        # mutual protocol needs register c when pinning
        ExperimentConfig(
            protocol=P.EQDB_MUTUAL, n=2, registers=Registers((0, 1), (1, 0))
        )


def test_config_from_dict_full_schema(tmp_path):
    raw = {
        "protocol": "eqdb_mutual",
        "attack": "mutual_fraud_unentangled",
        "n": 4,
        "seed": 9,
        "trials": 10,
        "topology": {"positions": {"party_a": 0.0, "party_b": 120.0}, "adversary": 2.0},
        "alpha_ps": 1000,
        "distance_budget_m": 110.0,
        "bell_label": "b00",
        "register_mode": "prf",
        "registers": {"a": "0101", "b": "1100", "c": "1111"},
        "detection": {"test_round_fraction": 0.5, "equality_threshold": 0.9},
    }
    config = config_from_dict(raw)
    assert config.protocol is P.EQDB_MUTUAL
    assert config.attack is S.MUTUAL_FRAUD_UNENTANGLED
    assert config.registers.c == (1, 1, 1, 1)
    assert config.detection.equality_threshold == 0.9
    assert config.honest_distance_m() == 120.0
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    assert load_config(str(path)) == config


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        config_from_dict({"protocol": "hancke_kuhn", "bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({})


# -- statistics ----------------------------------------------------------------------


def test_binomial_z():
    assert binomial_z(50, 100, 0.5) == 0.0
    assert binomial_z(60, 100, 0.5) == pytest.approx(2.0)
    assert binomial_z(100, 100, 1.0) == 0.0
    assert binomial_z(99, 100, 1.0) == math.inf
    assert binomial_z(0, 100, 0.0) == 0.0


def test_run_trials_deterministic():
    config = ExperimentConfig(
        protocol=P.EQDB_ONE_WAY, attack=S.MAFIA_INTERCEPT_RESEND, n=4, trials=500, seed=31
    )
    assert run_trials(config) == run_trials(config)


def test_honest_run_trials_shape():
    config = ExperimentConfig(protocol=P.EQDB_MUTUAL, n=4, trials=200, seed=8)
    stats = run_trials(config)
    assert stats.successes == 200
    assert stats.empirical_rate == 1.0
    assert stats.closed_form_rate == 1.0
    assert stats.z_score == 0.0
    assert stats.detection_flag_rate is None


# -- emission ---------------------------------------------------------------------


def _sample_stats():
    return AttackStats(
        protocol=P.EQDB_ONE_WAY,
        attack=S.MAFIA_INTERCEPT_RESEND,
        n=8,
        hd_ab=None,
        hd_bc=None,
        trials=1000,
        successes=23,
        empirical_rate=0.023,
        closed_form_rate=0.023282,
        z_score=-0.06,
        detection_flag_rate=None,
        seed=3,
    )


def test_csv_json_round_trip():
    stats = [_sample_stats()]
    csv_text = stats_to_csv_text(stats)
    json_text = stats_to_json_text(stats)
    assert json_text_to_csv_text(json_text) == csv_text
    assert csv_text.splitlines()[0] == (
        "protocol,attack,n,hd_ab,hd_bc,trials,successes,empirical,closed_form,z,"
        "detect_rate,seed"
    )


def test_empty_stats_header_only():
    text = stats_to_csv_text([])
    assert text.splitlines() == [
        "protocol,attack,n,hd_ab,hd_bc,trials,successes,empirical,closed_form,z,"
        "detect_rate,seed"
    ]


def test_trace_jsonl_fields():
    config = ExperimentConfig(
        protocol=P.HANCKE_KUHN, n=2, trials=1, seed=3, collect_trace=True
    )
    result = run_single_trial(config, 0)
    text = trace_to_jsonl(result.trace)
    lines = [json.loads(line) for line in text.splitlines()]
    assert len(lines) == result.messages_total
    assert set(lines[0]) == {"trial", "time_ps", "src", "dst", "kind", "round", "payload"}
    assert lines[0]["kind"] == "NonceMsg"
    kinds = {line["kind"] for line in lines}
    assert {"ChallengeBit", "ResponseBit"} <= kinds


# -- honest-detection fast path -----------------------------------------------------


def test_fast_detection_sampler_matches_full_simulation():
    detection = DetectionConfig(test_round_fraction=1.0)
    trials, test_rounds = 300, 200
    flags_fast, mean_fast = sample_honest_detection_flags(77, trials, test_rounds, detection)
    total = 0.0
    config = ExperimentConfig(
        protocol=P.EQDB_ONE_WAY, n=test_rounds, trials=1, seed=78, detection=detection
    )
    flags_full = 0
    for trial in range(trials):
        result = run_single_trial(config, trial)
        total += result.detection_rate
        flags_full += result.outcome.detected
    mean_full = total / trials
    assert flags_fast == 0 and flags_full == 0
    # both sample the same distribution: means agree within 3 joint sigma
    sigma = math.sqrt(2 * (0.625 * 0.375 / test_rounds) / trials)
    assert abs(mean_fast - mean_full) < 3 * sigma


# -- table2 -----------------------------------------------------------------------


def test_table2_rows_and_markers():
    cells = table2(n=4, trials=1500, seed=5)
    assert len(cells) == 14
    assert {cell.row for cell in cells} == set(Table2Row)
    analytic = {(c.row, c.fraud) for c in cells if c.empirical is None}
    assert analytic == {
        (Table2Row.QDB_PRIOR_MAC, FraudKind.DISTANCE),
        (Table2Row.QDB_PRIOR_MAC, FraudKind.MAFIA),
        (Table2Row.QDB_PRIOR, FraudKind.MAFIA),
        (Table2Row.HYBRID_DB, FraudKind.DISTANCE),
        (Table2Row.HYBRID_DB, FraudKind.MAFIA),
    }
    for cell in cells:
        if cell.empirical is not None:
            assert abs(cell.z_score) < 4.5, cell
    text = table2_to_csv_text(cells)
    assert text.count("analytic") == 5
    lines = text.splitlines()
    assert len(lines) == 8  # header + the seven protocol rows
    assert [line.split(",")[0] for line in lines[1:]] == [row.value for row in Table2Row]


# -- CLI -------------------------------------------------------------------------


def test_cli_run_and_check_pass(tmp_path, capsys):
    out = tmp_path / "stats.csv"
    code = cli_main(
        [
            "run", "--protocol", "eqdb_one_way", "--attack", "mafia_intercept_resend",
            "--rounds", "4", "--trials", "2000", "--seed", "11",
            "--format", "csv", "--out", str(out), "--check",
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("protocol,")


def test_cli_check_detects_band_violation(tmp_path, capsys):
    # pinned HD=0 reflect with alpha 0: bits always pass but no processing
    # is saved, so claimed == true and every trial fails -> z is infinite
    config = {
        "protocol": "qdb_prior",
        "attack": "distance_fraud_reflect",
        "n": 4,
        "trials": 50,
        "seed": 1,
        "registers": {"a": "0110", "b": "0110"},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    code = cli_main(["run", "--config", str(path), "--check", "--out", str(tmp_path / "x.csv")])
    assert code == 2


def test_cli_oracle_output(capsys):
    assert cli_main(["oracle", "--protocol", "eqdb_one_way"]) == 0
    rows = json.loads(capsys.readouterr().out)
    values = {row["attack"]: row["per_round"] for row in rows}
    assert values["mafia_intercept_resend"] == "5/8"
    assert values["distance_fraud_reflect"] == "3/4"
    reflect = next(row for row in rows if row["attack"] == "distance_fraud_reflect")
    assert reflect["per_round_equal"] == "1"
    assert reflect["per_round_differ"] == "1/2"


def test_cli_trace(tmp_path):
    out = tmp_path / "trace.jsonl"
    code = cli_main(
        ["trace", "--protocol", "brands_chaum", "--rounds", "2", "--seed", "4", "--out", str(out)]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2 * 2 + 2


def test_cli_table2(tmp_path):
    out = tmp_path / "table2.csv"
    code = cli_main(
        ["table2", "--rounds", "2", "--trials", "400", "--seed", "2", "--out", str(out)]
    )
    assert code == 0
    assert len(out.read_text().splitlines()) == 8


def test_cli_per_trial_outcomes(tmp_path):
    out = tmp_path / "stats.csv"
    outcomes = tmp_path / "outcomes.csv"
    code = cli_main(
        [
            "run", "--protocol", "eqdb_one_way", "--attack", "mafia_intercept_resend",
            "--rounds", "2", "--trials", "50", "--seed", "21",
            "--out", str(out), "--outcomes-out", str(outcomes),
        ]
    )
    assert code == 0
    lines = outcomes.read_text().splitlines()
    assert lines[0] == "trial,succeeded,detected,claimed_m,true_m"
    assert len(lines) == 51
    # the aggregate row must agree with the per-trial rows
    successes = sum(int(line.split(",")[1]) for line in lines[1:])
    assert f",{successes}," in out.read_text().splitlines()[1]


def test_cli_entry_point_subprocess(tmp_path):
    # the installed console script is exercised end to end
    result = subprocess.run(
        [sys.executable, "-m", "qdb_sim.cli", "oracle", "--protocol", "brands_chaum"],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert result.returncode == 0
    assert "brands_chaum" in result.stdout
