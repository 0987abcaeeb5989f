"""qdb-sim: deterministic simulator for quantum distance-bounding protocols.

Exact single-qubit/Bell-pair simulation, event-driven protocol state
machines over a picosecond-resolution timed channel, a library of attack
strategies, an exhaustive per-round enumeration oracle, and a Monte Carlo
harness that reproduces the published attack-success comparison table.
"""

from .adversary import AttackOutcome, DetectionConfig, StrategyId, reflection_detection
from .channel import ChannelConfig, EventLoop, Topology, propagation_delay_ps, rtt_to_distance
from .crypto import (
    RegisterMode,
    Registers,
    commit,
    derive_registers,
    open_commitment,
    prf_expand,
    recover_key,
)
from .errors import (
    AlreadyConsumed,
    ConfigError,
    DeadlockedTrial,
    InsufficientTestRounds,
    NegativeElapsed,
    ProtocolViolation,
    QdbError,
    UnknownHandle,
)
from .harness import (
    AttackStats,
    ExperimentConfig,
    FraudKind,
    Table2Row,
    closed_form,
    load_config,
    run_single_trial,
    run_trials,
    table2,
)
from .oracle import detection_equality_oracle, expected_success_rate, per_round_oracle
from .protocol import (
    FailureReason,
    Phase,
    ProtocolConfig,
    ProtocolId,
    Role,
    Verdict,
    init_session,
)
from .qstate import (
    Basis,
    BellLabel,
    PureState1,
    PureState2,
    QuantumHandle,
    QuantumRegistry,
    bell_state,
    distribution1,
    encode,
)

__version__ = "0.1.0"
