"""Monte Carlo experiment runner, Table-2 closed forms, and emitters.

`run_trials` drives independent trials of one (protocol, attack) pair, each
trial with its own quantum registry and RNG streams derived from
(seed, trial index), and compares the empirical success rate against the
oracle-derived expectation with a binomial z-score.  `closed_form` returns
the published comparison-table expression for all seven protocol rows,
including the two analytic-only rows that the simulator does not execute.
"""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Any

from . import rng as rng_mod
from .adversary import (
    DISTANCE_FRAUD_STRATEGIES,
    MAFIA_STRATEGIES,
    AttackOutcome,
    DetectionConfig,
    GuessingBrandsChaumProver,
    GuessingEqdbMutualPartyB,
    GuessingEqdbOneWayProver,
    GuessingHanckeKuhnProver,
    GuessingQdbPriorProver,
    MafiaMitm,
    MutualImpersonator,
    ReflectingEqdbOneWayProver,
    ReflectingQdbPriorProver,
    StrategyId,
    UnentangledEqdbMutualPartyA,
    designate_test_rounds,
    reflection_detection,
)
from .channel import ChannelConfig, EventLoop, Topology, TraceRecord, propagation_delay_ps
from .crypto import RegisterMode, Registers, hamming_distance, parse_bits, random_key
from .errors import ConfigError
from .oracle import expected_success_rate
from .protocol import (
    AbortPolicy,
    ProtocolConfig,
    ProtocolId,
    Role,
    Verdict,
    init_session,
)
from .qstate import BellLabel, QuantumRegistry


class FraudKind(Enum):
    DISTANCE = "distance_fraud"
    MAFIA = "mafia_fraud"


class Table2Row(Enum):
    """The comparison table's protocol rows (two are analytic-only)."""

    BRANDS_CHAUM = "brands_chaum"
    HANCKE_KUHN = "hancke_kuhn"
    QDB_PRIOR_MAC = "qdb_prior_mac"
    QDB_PRIOR = "qdb_prior"
    HYBRID_DB = "hybrid_db"
    EQDB_ONE_WAY = "eqdb_one_way"
    EQDB_MUTUAL = "eqdb_mutual"


_SIMULATED_ROW = {
    Table2Row.BRANDS_CHAUM: ProtocolId.BRANDS_CHAUM,
    Table2Row.HANCKE_KUHN: ProtocolId.HANCKE_KUHN,
    Table2Row.QDB_PRIOR: ProtocolId.QDB_PRIOR,
    Table2Row.EQDB_ONE_WAY: ProtocolId.EQDB_ONE_WAY,
    Table2Row.EQDB_MUTUAL: ProtocolId.EQDB_MUTUAL,
}

_HALF = Fraction(1, 2)


def closed_form(
    row: Table2Row,
    fraud: FraudKind,
    n: int,
    hd_ab: int | None = None,
    hd_bc: int | None = None,
) -> Fraction:
    """Published attack success probability for a comparison-table cell."""
    if n < 0:
        raise ValueError("n must be >= 0")

    def need(value: int | None, name: str) -> int:
        if value is None:
            raise ValueError(f"{row.value}/{fraud.value} needs {name}")
        return value

    if row is Table2Row.BRANDS_CHAUM:
        return _HALF**n
    if row is Table2Row.HANCKE_KUHN:
        return Fraction(3, 4) ** n
    if row is Table2Row.QDB_PRIOR_MAC:
        return Fraction(3, 4) ** n
    if row is Table2Row.QDB_PRIOR:
        if fraud is FraudKind.DISTANCE:
            return _HALF ** need(hd_ab, "hd_ab")
        return max(_HALF ** need(hd_ab, "hd_ab"), Fraction(5, 8) ** n)
    if row is Table2Row.HYBRID_DB:
        return _HALF**n if fraud is FraudKind.DISTANCE else Fraction(3, 4) ** n
    if row is Table2Row.EQDB_ONE_WAY:
        if fraud is FraudKind.DISTANCE:
            return _HALF ** need(hd_ab, "hd_ab")
        return Fraction(5, 8) ** n
    if row is Table2Row.EQDB_MUTUAL:
        if fraud is FraudKind.DISTANCE:
            return _HALF ** need(hd_bc, "hd_bc")
        return Fraction(5, 8) ** n
    raise ValueError(f"unknown table row {row!r}")


CLOSED_FORM_TEXT: dict[tuple[Table2Row, FraudKind], str] = {
    (Table2Row.BRANDS_CHAUM, FraudKind.DISTANCE): "(1/2)^n",
    (Table2Row.BRANDS_CHAUM, FraudKind.MAFIA): "(1/2)^n",
    (Table2Row.HANCKE_KUHN, FraudKind.DISTANCE): "(3/4)^n",
    (Table2Row.HANCKE_KUHN, FraudKind.MAFIA): "(3/4)^n",
    (Table2Row.QDB_PRIOR_MAC, FraudKind.DISTANCE): "(3/4)^n",
    (Table2Row.QDB_PRIOR_MAC, FraudKind.MAFIA): "(3/4)^n",
    (Table2Row.QDB_PRIOR, FraudKind.DISTANCE): "(1/2)^HD(a,b)",
    (Table2Row.QDB_PRIOR, FraudKind.MAFIA): "max((1/2)^HD(a,b), (5/8)^n)",
    (Table2Row.HYBRID_DB, FraudKind.DISTANCE): "(1/2)^n",
    (Table2Row.HYBRID_DB, FraudKind.MAFIA): "(3/4)^n",
    (Table2Row.EQDB_ONE_WAY, FraudKind.DISTANCE): "(1/2)^HD(a,b)",
    (Table2Row.EQDB_ONE_WAY, FraudKind.MAFIA): "(5/8)^n",
    (Table2Row.EQDB_MUTUAL, FraudKind.DISTANCE): "(1/2)^HD(b,c)",
    (Table2Row.EQDB_MUTUAL, FraudKind.MAFIA): "(5/8)^n",
}


def fraud_kind(strategy: StrategyId) -> FraudKind | None:
    if strategy in DISTANCE_FRAUD_STRATEGIES:
        return FraudKind.DISTANCE
    if strategy in MAFIA_STRATEGIES:
        return FraudKind.MAFIA
    return None


# --------------------------------------------------------------------------
# Experiment configuration
# --------------------------------------------------------------------------


def _party_names(protocol: ProtocolId) -> tuple[str, str]:
    if protocol is ProtocolId.EQDB_MUTUAL:
        return ("party_a", "party_b")
    return ("verifier", "prover")


@dataclass
class ExperimentConfig:
    protocol: ProtocolId
    attack: StrategyId = StrategyId.HONEST_BASELINE
    n: int = 16
    trials: int = 1
    seed: int = 0
    positions: dict[str, float] | None = None
    adversary_position: float | None = None
    alpha_ps: int = 0
    distance_budget_m: float | None = None
    bell_label: BellLabel = BellLabel.B00
    register_mode: RegisterMode = RegisterMode.PRF
    registers: Registers | None = None
    detection: DetectionConfig | None = None
    advance_ps: int | None = None
    timeout_ps: int | None = None
    role_reversal: bool = False
    loss_probability: float = 0.0
    abort_policy: AbortPolicy = AbortPolicy.IMMEDIATE
    collect_trace: bool = False

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n < 0:
            raise ConfigError("n must be >= 0")
        if self.registers is not None and self.registers.n != self.n:
            raise ConfigError("explicit registers must have length n")
        if self.role_reversal and self.protocol is not ProtocolId.EQDB_ONE_WAY:
            raise ConfigError("role reversal applies to the one-way protocol only")
        if self.attack is StrategyId.DISTANCE_FRAUD_REFLECT and self.protocol not in (
            ProtocolId.QDB_PRIOR,
            ProtocolId.EQDB_ONE_WAY,
        ):
            raise ConfigError("reflect targets qdb_prior or eqdb_one_way")
        if self.attack is StrategyId.MUTUAL_FRAUD_UNENTANGLED and self.protocol is not ProtocolId.EQDB_MUTUAL:
            raise ConfigError("unentangled fraud targets eqdb_mutual")
        if self.registers is not None:
            want_c = self.protocol is ProtocolId.EQDB_MUTUAL
            if want_c != (self.registers.c is not None):
                raise ConfigError("register c is present iff the protocol is mutual")

    # -- derived geometry ----------------------------------------------------

    def verifier_name(self) -> str:
        names = _party_names(self.protocol)
        if self.attack is StrategyId.MUTUAL_FRAUD_UNENTANGLED:
            return names[1]  # B is the defrauded verifier
        return names[0]

    def effective_positions(self) -> dict[str, float]:
        v_name, p_name = _party_names(self.protocol)
        positions = {v_name: 0.0, p_name: 150.0}
        if self.positions:
            positions.update(self.positions)
        return positions

    def honest_distance_m(self) -> float:
        v_name, p_name = _party_names(self.protocol)
        positions = self.effective_positions()
        return abs(positions[v_name] - positions[p_name])

    def effective_budget_m(self) -> float:
        if self.distance_budget_m is not None:
            return self.distance_budget_m
        return self.honest_distance_m() + 1.0

    def effective_adversary_position(self) -> float:
        if self.adversary_position is not None:
            return self.adversary_position
        positions = self.effective_positions()
        return positions[self.verifier_name()] + 1.0

    def effective_advance_ps(self) -> int:
        if self.advance_ps is not None:
            return self.advance_ps
        return propagation_delay_ps(self.honest_distance_m())

    def expected_rate(self) -> Fraction:
        return expected_success_rate(
            self.protocol, self.attack, self.n, self.registers, self.bell_label
        )


_JSON_KEYS = {
    "protocol", "attack", "n", "trials", "seed", "topology", "alpha_ps",
    "distance_budget_m", "bell_label", "register_mode", "registers",
    "detection", "advance_ps", "timeout_ps", "role_reversal",
    "loss_probability", "abort_policy", "output",
}


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Build a config from the JSON schema used by `qdb-sim run --config`."""
    unknown = set(raw) - _JSON_KEYS
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    try:
        protocol = ProtocolId(raw["protocol"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad or missing protocol: {exc}") from None
    kwargs: dict[str, Any] = {"protocol": protocol}
    if "attack" in raw:
        kwargs["attack"] = StrategyId(raw["attack"])
    for key in ("n", "trials", "seed", "alpha_ps", "advance_ps", "timeout_ps"):
        if key in raw and raw[key] is not None:
            kwargs[key] = int(raw[key])
    if "distance_budget_m" in raw and raw["distance_budget_m"] is not None:
        kwargs["distance_budget_m"] = float(raw["distance_budget_m"])
    if "loss_probability" in raw:
        kwargs["loss_probability"] = float(raw["loss_probability"])
    if "role_reversal" in raw:
        kwargs["role_reversal"] = bool(raw["role_reversal"])
    if "bell_label" in raw:
        kwargs["bell_label"] = BellLabel(raw["bell_label"])
    if "register_mode" in raw:
        kwargs["register_mode"] = RegisterMode(raw["register_mode"])
    if "abort_policy" in raw:
        kwargs["abort_policy"] = AbortPolicy(raw["abort_policy"])
    topology = raw.get("topology") or {}
    if "positions" in topology:
        kwargs["positions"] = {k: float(v) for k, v in topology["positions"].items()}
    if "adversary" in topology and topology["adversary"] is not None:
        kwargs["adversary_position"] = float(topology["adversary"])
    if raw.get("registers"):
        regs = raw["registers"]
        kwargs["registers"] = Registers(
            parse_bits(regs["a"]),
            parse_bits(regs["b"]),
            parse_bits(regs["c"]) if regs.get("c") else None,
        )
    if raw.get("detection"):
        kwargs["detection"] = DetectionConfig(**raw["detection"])
    return ExperimentConfig(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


# --------------------------------------------------------------------------
# Single-trial execution
# --------------------------------------------------------------------------


@dataclass
class TrialResult:
    verdict: Verdict
    outcome: AttackOutcome
    messages_total: int
    messages_rapid: int
    detection_rate: float | None = None
    reversed_verdict: Verdict | None = None
    trace: list[TraceRecord] = field(default_factory=list)
    party_verdicts: dict[str, Verdict | None] = field(default_factory=dict)
    round_estimates_m: list[float] = field(default_factory=list)


def _build_channel_config(config: ExperimentConfig) -> ChannelConfig:
    return ChannelConfig(
        distance_budget_m=config.effective_budget_m(),
        alpha_ps=config.alpha_ps,
        loss_probability=config.loss_probability,
        timeout_ps=config.timeout_ps,
    )


class TrialRunner:
    """Prebuilds everything shared across the trials of one experiment;
    per trial only RNG streams, registry, parties and the event loop are
    fresh.  Trials are independent and reproducible from (seed, trial)."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.v_name, self.p_name = _party_names(config.protocol)
        self.verdict_party_name = config.verifier_name()
        self.true_distance = config.honest_distance_m()
        self.channel_cfg = _build_channel_config(config)
        self.positions = config.effective_positions()
        self.routes: dict[tuple[str, str], str] = {}
        attack = config.attack
        if attack in MAFIA_STRATEGIES:
            if config.protocol is ProtocolId.EQDB_MUTUAL:
                self.positions[self.p_name] = config.effective_adversary_position()
            else:
                self.positions["adversary"] = config.effective_adversary_position()
                self.routes[(self.v_name, self.p_name)] = "adversary"
                self.routes[(self.p_name, self.v_name)] = "adversary"
        self.topology = Topology(self.positions)
        self.advance_ps = 0
        if attack is StrategyId.DISTANCE_FRAUD_GUESS:
            self.advance_ps = config.effective_advance_ps()
            slot = propagation_delay_ps(self.true_distance)
            if self.advance_ps > slot:
                raise ConfigError("advance_ps cannot exceed the propagation slot")
        # timers only matter when responses can fail to arrive
        use_timers = config.loss_probability > 0 or config.timeout_ps is not None
        self.cfg_template = ProtocolConfig(
            protocol=config.protocol,
            n=config.n,
            bell_label=config.bell_label,
            register_mode=config.register_mode,
            registers_override=config.registers,
            distance_budget_m=self.channel_cfg.distance_budget_m,
            alpha_nominal_ps=config.alpha_ps,
            timeout_ps=self.channel_cfg.effective_timeout_ps(),
            abort_policy=config.abort_policy,
            use_timers=use_timers,
        )
        self.max_events = 200_000 + 64 * max(config.n, 1)

    # -- per-trial construction --------------------------------------------

    def _parties(self, cfg: ProtocolConfig, registry, trial: int) -> dict[str, Any]:
        config = self.config
        attack = config.attack
        seed = config.seed
        v_name, p_name = self.v_name, self.p_name

        def party_rng(label: str):
            return rng_mod.trial_stream(seed, trial, label)

        verifier_role = (
            Role.PARTY_A if config.protocol is ProtocolId.EQDB_MUTUAL else Role.VERIFIER
        )
        prover_role = (
            Role.PARTY_B if config.protocol is ProtocolId.EQDB_MUTUAL else Role.PROVER
        )
        parties: dict[str, Any] = {}
        alpha = config.alpha_ps

        parties[v_name] = init_session(
            config.protocol, verifier_role, v_name, p_name, cfg, party_rng(v_name),
            registry, processing_ps=alpha,
        )
        if attack is StrategyId.HONEST_BASELINE:
            parties[p_name] = init_session(
                config.protocol, prover_role, p_name, v_name, cfg, party_rng(p_name),
                registry, processing_ps=alpha,
            )
            return parties
        adv_rng = party_rng("adversary")
        if attack is StrategyId.DISTANCE_FRAUD_GUESS:
            guesser_cls = {
                ProtocolId.BRANDS_CHAUM: GuessingBrandsChaumProver,
                ProtocolId.HANCKE_KUHN: GuessingHanckeKuhnProver,
                ProtocolId.QDB_PRIOR: GuessingQdbPriorProver,
                ProtocolId.EQDB_ONE_WAY: GuessingEqdbOneWayProver,
                ProtocolId.EQDB_MUTUAL: GuessingEqdbMutualPartyB,
            }[config.protocol]
            parties[p_name] = guesser_cls(
                p_name, v_name, cfg, adv_rng, registry,
                processing_ps=0, advance_ps=self.advance_ps,
            )
        elif attack is StrategyId.DISTANCE_FRAUD_REFLECT:
            reflect_cls = (
                ReflectingQdbPriorProver
                if config.protocol is ProtocolId.QDB_PRIOR
                else ReflectingEqdbOneWayProver
            )
            parties[p_name] = reflect_cls(
                p_name, v_name, cfg, adv_rng, registry, processing_ps=0
            )
        elif attack is StrategyId.MUTUAL_FRAUD_UNENTANGLED:
            # the attacker is Party A; honest B renders the verdict
            parties[v_name] = UnentangledEqdbMutualPartyA(
                v_name, p_name, cfg, adv_rng, registry, processing_ps=0
            )
            parties[p_name] = init_session(
                config.protocol, prover_role, p_name, v_name, cfg, party_rng(p_name),
                registry, processing_ps=alpha,
            )
        elif attack in MAFIA_STRATEGIES:
            if config.protocol is ProtocolId.EQDB_MUTUAL:
                parties[p_name] = MutualImpersonator(
                    p_name, v_name, attack, cfg, adv_rng, registry
                )
            else:
                parties[p_name] = init_session(
                    config.protocol, prover_role, p_name, v_name, cfg, party_rng(p_name),
                    registry, processing_ps=alpha,
                )
                parties["adversary"] = MafiaMitm(
                    "adversary", v_name, p_name, config.protocol, attack,
                    config.n, adv_rng, registry,
                )
        else:
            raise ConfigError(f"unsupported attack {attack!r}")
        return parties

    def run(self, trial: int) -> TrialResult:
        config = self.config
        seed = config.seed
        registry = QuantumRegistry(rng_mod.trial_stream(seed, trial, "registry"))
        key = random_key(rng_mod.trial_stream(seed, trial, "key"))
        test_rounds: frozenset[int] = frozenset()
        if config.detection is not None:
            test_rounds = designate_test_rounds(
                rng_mod.trial_stream(seed, trial, "detection-pick"),
                config.n,
                config.detection.test_round_fraction,
            )
        cfg = replace(
            self.cfg_template, key=key, test_rounds=test_rounds, derivation_cache={}
        )
        parties = self._parties(cfg, registry, trial)
        loss_rng = (
            rng_mod.trial_stream(seed, trial, "loss")
            if config.loss_probability > 0
            else None
        )
        loop = EventLoop(
            self.topology, self.channel_cfg, parties,
            loss_rng=loss_rng, routes=self.routes, trial=trial,
            collect_trace=config.collect_trace, max_events=self.max_events,
        )
        loop.run()
        loop.assert_settled(self.verdict_party_name)
        verdict_party = parties[self.verdict_party_name]
        verdict = verdict_party.verdict()
        assert verdict is not None

        reversed_verdict: Verdict | None = None
        messages_total = loop.messages_delivered
        messages_rapid = loop.rapid_messages_delivered
        trace = list(loop.trace)
        if config.role_reversal and config.attack is StrategyId.HONEST_BASELINE:
            reversed_verdict, extra_total, extra_rapid, extra_trace = self._reversed_leg(
                cfg, trial
            )
            messages_total += extra_total
            messages_rapid += extra_rapid
            trace.extend(extra_trace)

        detection_rate: float | None = None
        detected = False
        if config.detection is not None and verdict_party.retained_pairs:
            if len(verdict_party.retained_pairs) >= config.detection.min_test_rounds:
                detection_rate, detected = reflection_detection(
                    verdict_party, config.detection, registry,
                    rng_mod.trial_stream(seed, trial, "detection-measure"),
                )

        claimed = verdict.distance_bound_m
        kind = fraud_kind(config.attack)
        if kind is FraudKind.DISTANCE:
            succeeded = verdict.accepted and (
                claimed is None or claimed < self.true_distance - 1e-9
            )
        else:
            succeeded = verdict.accepted
            if reversed_verdict is not None:
                succeeded = succeeded and reversed_verdict.accepted

        outcome = AttackOutcome(
            succeeded=succeeded,
            detected=detected,
            claimed_distance_m=claimed,
            true_distance_m=self.true_distance,
        )
        estimates = [
            est
            for record in sorted(verdict_party.records.values(), key=lambda r: r.index)
            if (est := verdict_party._round_estimate_m(record)) is not None
        ]
        return TrialResult(
            verdict=verdict,
            outcome=outcome,
            messages_total=messages_total,
            messages_rapid=messages_rapid,
            detection_rate=detection_rate,
            reversed_verdict=reversed_verdict,
            trace=trace,
            party_verdicts={name: party.verdict() for name, party in parties.items()},
            round_estimates_m=estimates,
        )

    def _reversed_leg(
        self, cfg: ProtocolConfig, trial: int
    ) -> tuple[Verdict, int, int, list[TraceRecord]]:
        """Second independent one-way run with the roles swapped."""
        config = self.config
        seed = config.seed
        registry = QuantumRegistry(rng_mod.trial_stream(seed, trial, "registry-rev"))
        key = random_key(rng_mod.trial_stream(seed, trial, "key-rev"))
        rev_cfg = replace(cfg, key=key, derivation_cache={})
        verifier = init_session(
            ProtocolId.EQDB_ONE_WAY, Role.VERIFIER, "prover", "verifier", rev_cfg,
            rng_mod.trial_stream(seed, trial, "prover-rev"), registry,
            processing_ps=config.alpha_ps,
        )
        prover = init_session(
            ProtocolId.EQDB_ONE_WAY, Role.PROVER, "verifier", "prover", rev_cfg,
            rng_mod.trial_stream(seed, trial, "verifier-rev"), registry,
            processing_ps=config.alpha_ps,
        )
        loop = EventLoop(
            self.topology, self.channel_cfg,
            {"prover": verifier, "verifier": prover},
            trial=trial, collect_trace=config.collect_trace,
            max_events=self.max_events,
        )
        loop.run()
        loop.assert_settled("prover")
        verdict = verifier.verdict()
        assert verdict is not None
        return verdict, loop.messages_delivered, loop.rapid_messages_delivered, list(loop.trace)


def run_single_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    """One deterministic trial: build parties for the configured attack,
    drive the event loop, evaluate verdicts, detection, and the outcome."""
    return TrialRunner(config).run(trial)


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


@dataclass
class AttackStats:
    protocol: ProtocolId
    attack: StrategyId
    n: int
    hd_ab: int | None
    hd_bc: int | None
    trials: int
    successes: int
    empirical_rate: float
    closed_form_rate: float
    z_score: float
    detection_flag_rate: float | None
    seed: int

    def within_band(self, z_max: float = 3.29) -> bool:
        return abs(self.z_score) <= z_max

    def to_row(self) -> dict[str, Any]:
        return {
            "protocol": self.protocol.value,
            "attack": self.attack.value,
            "n": self.n,
            "hd_ab": self.hd_ab,
            "hd_bc": self.hd_bc,
            "trials": self.trials,
            "successes": self.successes,
            "empirical": self.empirical_rate,
            "closed_form": self.closed_form_rate,
            "z": self.z_score,
            "detect_rate": self.detection_flag_rate,
            "seed": self.seed,
        }


CSV_COLUMNS = [
    "protocol", "attack", "n", "hd_ab", "hd_bc", "trials", "successes",
    "empirical", "closed_form", "z", "detect_rate", "seed",
]


def binomial_z(successes: int, trials: int, p: Fraction | float) -> float:
    """z-score of an observed count against Binomial(trials, p)."""
    p = float(p)
    if trials <= 0:
        raise ValueError("trials must be positive")
    if p <= 0.0 or p >= 1.0:
        expected = p * trials
        return 0.0 if successes == expected else math.inf
    sigma = math.sqrt(trials * p * (1.0 - p))
    return (successes - trials * p) / sigma


def _run_trial_range(config: ExperimentConfig, lo: int, hi: int) -> tuple[int, int]:
    runner = TrialRunner(config)
    successes = 0
    flags = 0
    for trial in range(lo, hi):
        result = runner.run(trial)
        successes += result.outcome.succeeded
        flags += result.outcome.detected
    return successes, flags


def _worker_count(trials: int, workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    if trials < 50_000:
        return 1
    return min(2, os.cpu_count() or 1)


def run_trials(config: ExperimentConfig, workers: int | None = None) -> AttackStats:
    """Run `config.trials` independent trials and aggregate.

    Trials may run across processes: each trial's RNG streams derive from
    (seed, trial index) alone and success counts commute, so the result is
    identical for any worker split.
    """
    trials = config.trials
    nworkers = _worker_count(trials, workers)
    if nworkers > 1:
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:
            nworkers = 1
    if nworkers <= 1 or trials < 2 * nworkers:
        successes, flags = _run_trial_range(config, 0, trials)
    else:
        bounds = [round(i * trials / nworkers) for i in range(nworkers + 1)]
        spans = [(config, bounds[i], bounds[i + 1]) for i in range(nworkers)]
        with ctx.Pool(nworkers) as pool:
            parts = pool.starmap(_run_trial_range, spans)
        successes = sum(part[0] for part in parts)
        flags = sum(part[1] for part in parts)
    return stats_from_counts(config, successes, flags)


def stats_from_counts(config: ExperimentConfig, successes: int, flags: int) -> AttackStats:
    expected = config.expected_rate()
    flag_known = config.detection is not None
    return AttackStats(
        protocol=config.protocol,
        attack=config.attack,
        n=config.n,
        hd_ab=(
            hamming_distance(config.registers.a, config.registers.b)
            if config.registers is not None
            else None
        ),
        hd_bc=(
            hamming_distance(config.registers.b, config.registers.c)
            if config.registers is not None and config.registers.c is not None
            else None
        ),
        trials=config.trials,
        successes=successes,
        empirical_rate=successes / config.trials,
        closed_form_rate=float(expected),
        z_score=binomial_z(successes, config.trials, expected),
        detection_flag_rate=(flags / config.trials) if flag_known else None,
        seed=config.seed,
    )


def iter_outcomes(config: ExperimentConfig):
    """Per-trial AttackOutcome rows, in trial order (serial)."""
    runner = TrialRunner(config)
    for trial in range(config.trials):
        yield trial, runner.run(trial).outcome


def outcomes_to_csv_text(rows) -> str:
    """CSV of (trial, AttackOutcome) pairs as produced by iter_outcomes."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trial", "succeeded", "detected", "claimed_m", "true_m"])
    for trial, outcome in rows:
        writer.writerow(
            [
                trial,
                int(outcome.succeeded),
                int(outcome.detected),
                _cell(outcome.claimed_distance_m),
                outcome.true_distance_m,
            ]
        )
    return buf.getvalue()


# --------------------------------------------------------------------------
# Honest-detection fast path (exact-equivalent sampler)
# --------------------------------------------------------------------------


def sample_honest_detection_flags(
    seed: int, trials: int, test_rounds: int, detection: DetectionConfig
) -> tuple[int, float]:
    """Flag count over honest trials, sampling each trial's agreement count
    from its exact distribution.

    Per test round the agreement indicator is 1 when the fresh common basis
    matches both register bases (probability 1/4) and Bernoulli(1/2)
    otherwise - the enumeration oracle's branch decomposition - so the count
    is M + Binomial(N - M, 1/2) with M ~ Binomial(N, 1/4).  Statistically
    identical to running the full per-qubit simulation, at a draw per trial.
    """
    import numpy as np

    if test_rounds < detection.min_test_rounds:
        raise ConfigError("test_rounds below the detection minimum")
    gen = np.random.default_rng(rng_mod.stream_seed(seed, "honest-detection-fast"))
    certain = gen.binomial(test_rounds, 0.25, size=trials)
    rest = gen.binomial(test_rounds - certain, 0.5)
    rates = (certain + rest) / test_rounds
    flags = int(np.count_nonzero(rates >= detection.equality_threshold))
    mean_rate = float(rates.mean())
    return flags, mean_rate


# --------------------------------------------------------------------------
# Emission
# --------------------------------------------------------------------------


def _cell(value: Any) -> str:
    if value is None:
        return ""
    return str(value)


def stats_to_csv_text(stats: list[AttackStats]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for item in stats:
        row = item.to_row()
        writer.writerow([_cell(row[col]) for col in CSV_COLUMNS])
    return buf.getvalue()


def stats_to_json_text(stats: list[AttackStats]) -> str:
    return json.dumps([item.to_row() for item in stats], indent=2) + "\n"


def json_text_to_csv_text(text: str) -> str:
    """Re-emit a JSON stats dump as CSV (lossless round-trip)."""
    rows = json.loads(text)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_cell(row[col]) for col in CSV_COLUMNS])
    return buf.getvalue()


def emit(stats: list[AttackStats], fmt: str, path: str) -> None:
    if fmt == "csv":
        text = stats_to_csv_text(stats)
    elif fmt == "json":
        text = stats_to_json_text(stats)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def trace_to_jsonl(trace: list[TraceRecord]) -> str:
    lines = []
    for record in trace:
        lines.append(
            json.dumps(
                {
                    "trial": record.trial,
                    "time_ps": record.time_ps,
                    "src": record.src,
                    "dst": record.dst,
                    "kind": record.kind,
                    "round": record.round,
                    "payload": record.payload,
                },
                separators=(",", ":"),
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# Table-2 comparison runner
# --------------------------------------------------------------------------

_TABLE2_SIMULATION: dict[tuple[Table2Row, FraudKind], StrategyId] = {
    (Table2Row.BRANDS_CHAUM, FraudKind.DISTANCE): StrategyId.DISTANCE_FRAUD_GUESS,
    (Table2Row.BRANDS_CHAUM, FraudKind.MAFIA): StrategyId.MAFIA_PREASK,
    (Table2Row.HANCKE_KUHN, FraudKind.DISTANCE): StrategyId.DISTANCE_FRAUD_GUESS,
    (Table2Row.HANCKE_KUHN, FraudKind.MAFIA): StrategyId.MAFIA_PREASK,
    (Table2Row.QDB_PRIOR, FraudKind.DISTANCE): StrategyId.DISTANCE_FRAUD_REFLECT,
    (Table2Row.EQDB_ONE_WAY, FraudKind.DISTANCE): StrategyId.DISTANCE_FRAUD_REFLECT,
    (Table2Row.EQDB_ONE_WAY, FraudKind.MAFIA): StrategyId.MAFIA_INTERCEPT_RESEND,
    (Table2Row.EQDB_MUTUAL, FraudKind.DISTANCE): StrategyId.MUTUAL_FRAUD_UNENTANGLED,
    (Table2Row.EQDB_MUTUAL, FraudKind.MAFIA): StrategyId.MAFIA_INTERCEPT_RESEND,
}


@dataclass
class Table2Cell:
    row: Table2Row
    fraud: FraudKind
    formula: str
    expected: float
    empirical: float | None  # None marks an analytic-only cell
    trials: int
    z_score: float | None


def _attack_experiment(
    protocol: ProtocolId, strategy: StrategyId, n: int, trials: int, seed: int
) -> ExperimentConfig:
    """Standard geometry for table2 attack cells: far prover, tight budget."""
    fraud = fraud_kind(strategy)
    alpha = 100_000 if fraud is FraudKind.DISTANCE else 0
    budget = 140.0 if fraud is FraudKind.DISTANCE else 151.0
    return ExperimentConfig(
        protocol=protocol,
        attack=strategy,
        n=n,
        trials=trials,
        seed=seed,
        alpha_ps=alpha,
        distance_budget_m=budget,
    )


def table2(n: int, trials: int, seed: int) -> list[Table2Cell]:
    """All comparison rows, empirical where simulable, analytic otherwise.

    Register-dependent distance-fraud cells run in PRF mode, so the
    comparison value is the expectation over uniform registers of the
    2^-HD formula.
    """
    cells: list[Table2Cell] = []
    for row in Table2Row:
        for fraud in (FraudKind.DISTANCE, FraudKind.MAFIA):
            formula = CLOSED_FORM_TEXT[(row, fraud)]
            strategy = _TABLE2_SIMULATION.get((row, fraud))
            if strategy is None or row not in _SIMULATED_ROW:
                expected = _analytic_value(row, fraud, n)
                cells.append(Table2Cell(row, fraud, formula, expected, None, 0, None))
                continue
            protocol = _SIMULATED_ROW[row]
            config = _attack_experiment(protocol, strategy, n, trials, seed)
            stats = run_trials(config)
            cells.append(
                Table2Cell(
                    row, fraud, formula, stats.closed_form_rate,
                    stats.empirical_rate, stats.trials, stats.z_score,
                )
            )
    return cells


def _analytic_value(row: Table2Row, fraud: FraudKind, n: int) -> float:
    """Numeric value of an analytic-only cell; HD-bearing formulas are
    evaluated at their uniform-register expectation (3/4)^n."""
    if row is Table2Row.QDB_PRIOR_MAC:
        return float(Fraction(3, 4) ** n)
    if row is Table2Row.HYBRID_DB:
        return float(_HALF**n if fraud is FraudKind.DISTANCE else Fraction(3, 4) ** n)
    if row is Table2Row.QDB_PRIOR and fraud is FraudKind.MAFIA:
        return float(max(Fraction(3, 4) ** n, Fraction(5, 8) ** n))
    raise ValueError(f"{row}/{fraud} is not an analytic-only cell")


def table2_to_csv_text(cells: list[Table2Cell]) -> str:
    """One line per protocol row, distance-fraud and mafia-fraud columns
    side by side, mirroring the published table's shape."""
    by_row: dict[Table2Row, dict[FraudKind, Table2Cell]] = {}
    for cell in cells:
        by_row.setdefault(cell.row, {})[cell.fraud] = cell

    def fmt(cell: Table2Cell) -> list[Any]:
        empirical = "analytic" if cell.empirical is None else cell.empirical
        z = "" if cell.z_score is None else cell.z_score
        return [cell.formula, cell.expected, empirical, z]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "protocol",
            "df_formula", "df_expected", "df_empirical", "df_z",
            "mf_formula", "mf_expected", "mf_empirical", "mf_z",
            "trials",
        ]
    )
    for row in Table2Row:
        pair = by_row.get(row, {})
        df = pair.get(FraudKind.DISTANCE)
        mf = pair.get(FraudKind.MAFIA)
        trials = max((c.trials for c in pair.values()), default=0)
        writer.writerow(
            [row.value, *(fmt(df) if df else [""] * 4), *(fmt(mf) if mf else [""] * 4),
             trials or ""]
        )
    return buf.getvalue()
