import argparse
import os
import re
from dataclasses import dataclass, fields
from typing import Optional

from .errors import ParameterError
from .field_runtime import Scheduler
from .graph import Graph, SourceSet, read_text
from .hll import CounterKind
from .logger import get_log_level_from_env, setup_logger

logger = setup_logger("fieldanf", get_log_level_from_env())

SCHEDULERS = {"rr": "round-robin", "random": "random-sweep"}


@dataclass
class RunConfig:
    command: str
    graph: Optional[str] = None
    directed: bool = False
    nodes: Optional[int] = None
    relabel: bool = False
    hmax: int = 4
    registers_log2: int = 8
    seed: int = 0
    kind: str = "hll"
    sources: str = "all"
    scheduler: str = "rr"
    events: Optional[int] = None
    churn: Optional[str] = None
    trace: Optional[str] = None
    program: str = "anf"
    grain: int = 2
    format: str = "csv"
    out: Optional[str] = None
    reflexive: bool = True
    dump_sketches: Optional[str] = None
    top_k: int = 10
    epsilon: Optional[float] = None
    workers: int = 1
    approx: Optional[str] = None
    exact: Optional[str] = None
    gen_kind: str = "path"
    width: Optional[int] = None
    height: Optional[int] = None
    p: float = 0.1
    verbose: bool = False

    @classmethod
    def from_namespace(cls, namespace: argparse.Namespace) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in vars(namespace).items() if k in known})

    def validate(self) -> None:
        """Reject flag values no subcommand can run with"""
        if self.hmax < 0:
            raise ParameterError(f"--hmax must be non-negative, got {self.hmax}")
        if self.kind not in ("hll", "exact"):
            raise ParameterError(f"--kind must be hll or exact, got {self.kind!r}")
        if self.kind == "hll":
            CounterKind.hyperloglog(self.registers_log2, self.seed)
        if self.scheduler not in SCHEDULERS:
            raise ParameterError(f"--scheduler must be rr or random, got {self.scheduler!r}")
        if self.format not in ("csv", "json"):
            raise ParameterError(f"--format must be csv or json, got {self.format!r}")
        if self.events is not None and self.events < 0:
            raise ParameterError(f"--events must be non-negative, got {self.events}")
        if self.grain < 1:
            raise ParameterError(f"--grain must be at least 1, got {self.grain}")
        if self.top_k < 1:
            raise ParameterError(f"--top-k must be at least 1, got {self.top_k}")
        if self.workers < 1:
            raise ParameterError(f"--workers must be at least 1, got {self.workers}")
        if self.epsilon is not None and self.epsilon < 0:
            raise ParameterError(f"--epsilon must be non-negative, got {self.epsilon}")
        if self.seed < 0:
            raise ParameterError(f"--seed must be non-negative, got {self.seed}")
        if self.command == "simulate" and self.program == "election" and self.hmax < 1:
            raise ParameterError("leader election needs --hmax of at least 1")

    def counter_kind(self) -> CounterKind:
        if self.kind == "exact":
            return CounterKind.exact()
        return CounterKind.hyperloglog(self.registers_log2, self.seed)

    def make_scheduler(self) -> Scheduler:
        return Scheduler(SCHEDULERS[self.scheduler], self.seed)

    def source_set(self, g: Graph) -> SourceSet:
        """Resolve --sources: `all`, a file of vertex ids, or an inline comma list"""
        text = self.sources.strip()
        if text == "all":
            return SourceSet.all(g.n)
        if os.path.isfile(text):
            text = "\n".join(
                line for line in read_text(text).splitlines() if not line.lstrip().startswith("#")
            )
            tokens = re.split(r"[\s,]+", text.strip())
        else:
            tokens = text.split(",")
        tokens = [token.strip() for token in tokens if token.strip()]
        sources = SourceSet.from_ids(g.n, [_source_id(g, token) for token in tokens])
        logger.debug("Resolved --sources %r to %d vertices", self.sources, sources.size)
        return sources


def _source_id(g: Graph, token: str) -> int:
    if g.labels is not None and token in g.labels:
        return g.labels.index(token)
    try:
        return int(token)
    except ValueError:
        raise ParameterError(f"--sources entry {token!r} is not a vertex id") from None
