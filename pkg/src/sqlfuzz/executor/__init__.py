"""Target execution: drivers, crash evidence and coverage oracles."""

from .coverage import (
    MAP_SIZE,
    BehavioralOracle,
    MapUnavailable,
    SharedMapOracle,
    bucketize,
    coverage_delta,
    is_interesting,
)
from .drivers import (
    CLIENT_SERVER_PRELUDE,
    ClientServerDriver,
    Driver,
    DriverKind,
    EmbeddedDriver,
    SessionDead,
    TargetConfig,
    TargetUnavailable,
    make_driver,
)
from .outcome import CrashEvidence, ExecutionOutcome, StatementResult
from .simulated import CrashRule, SimulatedDriver

__all__ = [
    "MAP_SIZE",
    "BehavioralOracle",
    "MapUnavailable",
    "SharedMapOracle",
    "bucketize",
    "coverage_delta",
    "is_interesting",
    "CLIENT_SERVER_PRELUDE",
    "ClientServerDriver",
    "Driver",
    "DriverKind",
    "EmbeddedDriver",
    "SessionDead",
    "TargetConfig",
    "TargetUnavailable",
    "make_driver",
    "CrashEvidence",
    "ExecutionOutcome",
    "StatementResult",
    "CrashRule",
    "SimulatedDriver",
]
