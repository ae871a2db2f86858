from .anf_seq import EstimateTable, fixpoint_radius, hyperanf_seq, hyperanf_seq_async
from .errors import (
    ConsistencyError,
    FieldAnfError,
    IncompatibleSketchError,
    ParameterError,
    ParseError,
    SchedulerError,
    ScriptError,
)
from .field_runtime import ChurnScript, Context, NetworkState, Scheduler, Trace, fire, run
from .graph import Graph, SourceSet, bfs_neighbourhood, parse_edge_list
from .hll import CounterKind, ExactCounter, HllSketch
from .logger import setup_logger, get_log_level_from_env
from .programs import harmonic_centrality, hyperanf_field, leader_election

__all__ = [
    "EstimateTable",
    "fixpoint_radius",
    "hyperanf_seq",
    "hyperanf_seq_async",
    "ConsistencyError",
    "FieldAnfError",
    "IncompatibleSketchError",
    "ParameterError",
    "ParseError",
    "SchedulerError",
    "ScriptError",
    "ChurnScript",
    "Context",
    "NetworkState",
    "Scheduler",
    "Trace",
    "fire",
    "run",
    "Graph",
    "SourceSet",
    "bfs_neighbourhood",
    "parse_edge_list",
    "CounterKind",
    "ExactCounter",
    "HllSketch",
    "setup_logger",
    "get_log_level_from_env",
    "harmonic_centrality",
    "hyperanf_field",
    "leader_election",
]
