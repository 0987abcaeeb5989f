"""Command-line interface.

Subcommands:
  run     Monte Carlo run of one (protocol, attack) experiment; CSV/JSON out.
  oracle  exact per-round success probabilities from the enumeration oracle.
  table2  the full comparison table, empirical where simulable.
  trace   JSON-lines message trace of a single trial.

`run --check` exits with status 2 when the empirical rate falls outside the
3.29-sigma binomial band around the oracle expectation.
"""

from __future__ import annotations

import argparse
import json
import sys

from .adversary import StrategyId
from .errors import QdbError
from .harness import (
    ExperimentConfig,
    config_from_dict,
    iter_outcomes,
    load_config,
    outcomes_to_csv_text,
    run_single_trial,
    run_trials,
    stats_from_counts,
    stats_to_csv_text,
    stats_to_json_text,
    table2,
    table2_to_csv_text,
    trace_to_jsonl,
)
from .oracle import RELATION_REGISTERS, per_round_oracle
from .protocol import ProtocolId

CHECK_FAILED_EXIT = 2


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config file")
    parser.add_argument("--protocol", choices=[p.value for p in ProtocolId])
    parser.add_argument("--attack", choices=[s.value for s in StrategyId])
    parser.add_argument("--rounds", type=int, help="rapid-exchange rounds n")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--distance-m", type=float, help="verifier-prover distance")
    parser.add_argument("--alpha-ps", type=int, help="per-party processing delay")
    parser.add_argument("--budget-m", type=float, help="distance acceptance budget")


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        config = load_config(args.config)
    else:
        if not args.protocol:
            raise QdbError("either --config or --protocol is required")
        config = config_from_dict({"protocol": args.protocol})
    if args.protocol:
        config.protocol = ProtocolId(args.protocol)
    if args.attack:
        config.attack = StrategyId(args.attack)
    if args.rounds is not None:
        config.n = args.rounds
    if args.trials is not None:
        config.trials = args.trials
    if args.seed is not None:
        config.seed = args.seed
    if args.distance_m is not None:
        names = ("party_a", "party_b") if config.protocol is ProtocolId.EQDB_MUTUAL else (
            "verifier", "prover")
        config.positions = {names[0]: 0.0, names[1]: args.distance_m}
    if args.alpha_ps is not None:
        config.alpha_ps = args.alpha_ps
    if args.budget_m is not None:
        config.distance_budget_m = args.budget_m
    config.__post_init__()  # re-validate after overrides
    return config


def _write_out(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if args.outcomes_out:
        rows = list(iter_outcomes(config))
        with open(args.outcomes_out, "w", encoding="utf-8") as fh:
            fh.write(outcomes_to_csv_text(rows))
        successes = sum(outcome.succeeded for _, outcome in rows)
        flags = sum(outcome.detected for _, outcome in rows)
        stats = stats_from_counts(config, successes, flags)
    else:
        stats = run_trials(config)
    text = stats_to_csv_text([stats]) if args.format == "csv" else stats_to_json_text([stats])
    _write_out(text, args.out)
    if args.check and not stats.within_band():
        print(
            f"check failed: empirical {stats.empirical_rate} vs expected "
            f"{stats.closed_form_rate} (z = {stats.z_score:.2f})",
            file=sys.stderr,
        )
        return CHECK_FAILED_EXIT
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    protocols = [ProtocolId(args.protocol)] if args.protocol else list(ProtocolId)
    strategies = [StrategyId(args.attack)] if args.attack else list(StrategyId)
    rows = []
    for protocol in protocols:
        for strategy in strategies:
            try:
                value = per_round_oracle(protocol, strategy)
            except ValueError:
                continue
            entry = {
                "protocol": protocol.value,
                "attack": strategy.value,
                "per_round": str(value),
            }
            if (protocol, strategy) in RELATION_REGISTERS:
                regs = RELATION_REGISTERS[(protocol, strategy)]
                entry["registers"] = "/".join(regs)
                entry["per_round_equal"] = str(per_round_oracle(protocol, strategy, True))
                entry["per_round_differ"] = str(per_round_oracle(protocol, strategy, False))
            rows.append(entry)
    _write_out(json.dumps(rows, indent=2) + "\n", args.out)
    return 0


def cmd_table2(args: argparse.Namespace) -> int:
    cells = table2(args.rounds, args.trials, args.seed)
    if args.format == "csv":
        text = table2_to_csv_text(cells)
    else:
        text = (
            json.dumps(
                [
                    {
                        "protocol": c.row.value,
                        "fraud": c.fraud.value,
                        "formula": c.formula,
                        "expected": c.expected,
                        "empirical": c.empirical if c.empirical is not None else "analytic",
                        "trials": c.trials,
                        "z": c.z_score,
                    }
                    for c in cells
                ],
                indent=2,
            )
            + "\n"
        )
    _write_out(text, args.out)
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    config.trials = 1
    config.collect_trace = True
    result = run_single_trial(config, 0)
    _write_out(trace_to_jsonl(result.trace), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdb-sim",
        description="Deterministic quantum distance-bounding protocol simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="Monte Carlo run of one experiment")
    _add_override_flags(run_p)
    run_p.add_argument("--format", choices=["csv", "json"], default="csv")
    run_p.add_argument("--out", help="output path (default: stdout)")
    run_p.add_argument(
        "--check", action="store_true",
        help="exit 2 if the empirical rate leaves the 3.29-sigma band",
    )
    run_p.add_argument(
        "--outcomes-out", help="also write one AttackOutcome row per trial (CSV)"
    )
    run_p.set_defaults(func=cmd_run)

    oracle_p = sub.add_parser("oracle", help="exact per-round probabilities")
    oracle_p.add_argument("--protocol", choices=[p.value for p in ProtocolId])
    oracle_p.add_argument("--attack", choices=[s.value for s in StrategyId])
    oracle_p.add_argument("--out")
    oracle_p.set_defaults(func=cmd_oracle)

    table_p = sub.add_parser("table2", help="comparison table, all rows")
    table_p.add_argument("--rounds", type=int, default=8)
    table_p.add_argument("--trials", type=int, default=20000)
    table_p.add_argument("--seed", type=int, default=0)
    table_p.add_argument("--format", choices=["csv", "json"], default="csv")
    table_p.add_argument("--out")
    table_p.set_defaults(func=cmd_table2)

    trace_p = sub.add_parser("trace", help="JSON-lines trace of one trial")
    _add_override_flags(trace_p)
    trace_p.add_argument("--out")
    trace_p.set_defaults(func=cmd_trace)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QdbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
