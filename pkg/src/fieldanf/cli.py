"""Command line front end: `fieldanf {exact,anf,simulate,compare,gen}`.

Exit codes: 0 success, 2 I/O, 3 parse, 4 parameter, 5 script, 6 consistency.
"""

import argparse
import asyncio
import logging
import sys
from typing import Callable, Optional

import numpy as np

from .anf_seq import fixpoint_radius, hyperanf_seq, hyperanf_seq_async
from .config import RunConfig
from .errors import ConsistencyError, FieldAnfError, ParameterError
from .field_runtime import ChurnScript, NetworkState, read_churn_script, run
from .graph import (
    Graph,
    SourceSet,
    bfs_neighbourhood,
    exact_harmonic_classic,
    gen_graph,
    read_edge_list,
    serialize_edge_list,
    truncated_harmonic_oracle,
)
from .logger import get_log_level_from_env, setup_logger
from .programs import (
    AnfOutput,
    HyperAnfProgram,
    LeaderElectionProgram,
    harmonic_centrality,
    vulnerability_index,
)
from .report import Table, compare_tables, table_matrix, write_report, write_tables

logger = setup_logger("fieldanf", get_log_level_from_env())


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ParameterError(message)


def _vertex(g: Graph, v: int):
    return v if g.labels is None else g.labels[v]


def load_graph(cfg: RunConfig) -> Graph:
    if cfg.graph is None:
        raise ParameterError("--graph is required")
    g = read_edge_list(cfg.graph, cfg.directed, cfg.nodes, cfg.relabel)
    logger.info("Loaded %s: %d vertices, %d edges", cfg.graph, g.n, g.m)
    return g


def exact_matrix(g: Graph, hmax: int, sources: SourceSet) -> np.ndarray:
    return np.array(
        [bfs_neighbourhood(g, v, hmax, sources) for v in range(g.n)], dtype=np.float64
    ).reshape(g.n, hmax + 1)


def cmd_exact(cfg: RunConfig) -> int:
    g = load_graph(cfg)
    sources = cfg.source_set(g)
    counts = Table("counts", ["vertex", "h", "count"])
    harmonic = Table("harmonic", ["vertex", "harmonic_classic", "harmonic_truncated"])
    for v in range(g.n):
        row = bfs_neighbourhood(g, v, cfg.hmax, sources)
        counts.rows.extend([_vertex(g, v), h, count] for h, count in enumerate(row))
        truncated = truncated_harmonic_oracle(g, v, cfg.hmax) if cfg.hmax >= 1 else 0.0
        harmonic.rows.append([_vertex(g, v), exact_harmonic_classic(g, v), truncated])
    write_tables([counts, harmonic], cfg.format, cfg.out)
    return 0


def _dump_sketches(counters, path: str) -> None:
    with open(path, "wb") as file:
        for counter in counters:
            file.write(counter.to_bytes())
    logger.info("Wrote %d sketches to %s", len(counters), path)


def cmd_anf(cfg: RunConfig) -> int:
    g = load_graph(cfg)
    sources = cfg.source_set(g)
    kind = cfg.counter_kind()
    if cfg.dump_sketches and kind.is_exact:
        raise ParameterError("--dump-sketches needs --kind hll")
    hmax = cfg.hmax
    if cfg.epsilon is not None:
        _, hmax = fixpoint_radius(g, sources, kind, cfg.epsilon, cfg.reflexive)
    if cfg.workers > 1:
        table, counters = asyncio.run(
            hyperanf_seq_async(g, hmax, sources, kind, cfg.reflexive, cfg.workers)
        )
    else:
        table, counters = hyperanf_seq(g, hmax, sources, kind, cfg.reflexive)
    estimates = Table("estimates", ["vertex", "h", "estimate"])
    centrality = Table("centrality", ["vertex", "harmonic", "vulnerability"])
    for v in range(g.n):
        row = table.row(v)
        estimates.rows.extend([_vertex(g, v), h, value] for h, value in enumerate(row))
        largest_first = row[::-1]
        centrality.rows.append(
            [_vertex(g, v), harmonic_centrality(largest_first), vulnerability_index(largest_first)]
        )
    write_tables([estimates, centrality], cfg.format, cfg.out)
    if cfg.dump_sketches:
        _dump_sketches(counters, cfg.dump_sketches)
    return 0


def default_events(net: NetworkState, churn: ChurnScript, hmax: int, grain: int) -> int:
    """Enough firings for twice the stabilisation bound after the last churn event"""
    devices = len(net.live_uids()) + sum(
        1 for scheduled in churn.events if scheduled.event.kind == "add-device"
    )
    sweeps = 2 * ((hmax + 1) + grain + 1)
    return (churn.last_index or 0) + sweeps * max(devices, 1)


def cmd_simulate(cfg: RunConfig) -> int:
    g = load_graph(cfg)
    sources = cfg.source_set(g)
    kind = cfg.counter_kind()
    net = NetworkState.from_graph(g, sources)
    churn = read_churn_script(cfg.churn) if cfg.churn else ChurnScript()
    churn.validate(net)
    if cfg.program == "election":
        program = LeaderElectionProgram(cfg.grain, cfg.hmax, kind)
    else:
        program = HyperAnfProgram(cfg.hmax, kind)
    events = cfg.events
    if events is None:
        events = default_events(net, churn, cfg.hmax, cfg.grain)
    trace = run(net, program, cfg.make_scheduler(), churn, events)
    if trace.errors():
        logger.warning("%d firing(s) aborted during the simulation", len(trace.errors()))
    if cfg.trace:
        with open(cfg.trace, "w", encoding="utf-8", newline="\n") as file:
            file.write(trace.to_jsonl())
        logger.debug("Wrote %d trace entries to %s", len(trace.entries), cfg.trace)

    converged = trace.converged_at_sweep()
    estimates = Table("estimates", ["vertex", "h", "estimate"])
    columns = ["vertex", "converged_at_sweep", "harmonic", "vulnerability"]
    if cfg.program == "election":
        columns.append("leader")
    devices = Table("devices", columns)
    for uid, output in sorted(trace.final_outputs().items()):
        anf: AnfOutput = output if cfg.program == "anf" else output.anf
        vertex = _vertex(g, uid) if uid < g.n else uid
        estimates.rows.extend([vertex, h, anf.estimate_at(h)] for h in range(anf.H + 1))
        row = [
            vertex,
            converged[uid],
            harmonic_centrality(anf.estimates),
            vulnerability_index(anf.estimates),
        ]
        if cfg.program == "election":
            row.append(output.is_leader)
        devices.rows.append(row)
    logger.info(
        "Simulated %d firing events, %d sweeps after the last churn event",
        events,
        trace.sweeps_after_churn(),
    )
    write_tables([estimates, devices], cfg.format, cfg.out)
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    if cfg.approx or cfg.exact:
        if not (cfg.approx and cfg.exact):
            raise ParameterError("--approx and --exact must be given together")
        approx_vertices, approx = table_matrix(cfg.approx)
        exact_vertices, exact = table_matrix(cfg.exact)
        if approx_vertices != exact_vertices or approx.shape != exact.shape:
            raise ConsistencyError(
                f"{cfg.approx} and {cfg.exact} do not describe the same vertices and radii"
            )
    else:
        g = load_graph(cfg)
        sources = cfg.source_set(g)
        table, _ = hyperanf_seq(g, cfg.hmax, sources, cfg.counter_kind(), cfg.reflexive)
        approx = table.values
        exact = exact_matrix(g, cfg.hmax, sources)
    write_report(compare_tables(approx, exact, cfg.top_k), cfg.out)
    return 0


def cmd_gen(cfg: RunConfig) -> int:
    if cfg.gen_kind in ("path", "ring"):
        if cfg.nodes is None:
            raise ParameterError(f"--nodes is required for a {cfg.gen_kind} graph")
        g = gen_graph(cfg.gen_kind, n=cfg.nodes)
    elif cfg.gen_kind == "grid":
        if cfg.width is None or cfg.height is None:
            raise ParameterError("--width and --height are required for a grid graph")
        g = gen_graph("grid", width=cfg.width, height=cfg.height)
    else:
        if cfg.nodes is None:
            raise ParameterError("--nodes is required for a gnp graph")
        g = gen_graph("gnp", n=cfg.nodes, p=cfg.p, seed=cfg.seed, directed=cfg.directed)
    text = serialize_edge_list(g)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        with open(cfg.out, "w", encoding="utf-8", newline="\n") as file:
            file.write(text)
    return 0


COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "exact": cmd_exact,
    "anf": cmd_anf,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "gen": cmd_gen,
}


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--graph", help="edge-list file")
    common.add_argument("--directed", action="store_true")
    common.add_argument("--nodes", type=int, help="vertex count (overrides 1 + max id)")
    common.add_argument("--relabel", action="store_true", help="treat vertex tokens as labels")
    common.add_argument("--hmax", type=int, default=4)
    common.add_argument("--registers-log2", dest="registers_log2", type=int, default=8)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--kind", choices=("hll", "exact"), default="hll")
    common.add_argument("--sources", default="all", help="all, a file of ids, or a comma list")
    common.add_argument("--scheduler", choices=("rr", "random"), default="rr")
    common.add_argument("--events", type=int)
    common.add_argument("--churn", help="churn script file")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--no-reflexive", dest="reflexive", action="store_false")
    common.add_argument("--dump-sketches", dest="dump_sketches")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _ArgumentParser(prog="fieldanf", description=__doc__.splitlines()[0])
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("exact", parents=[common], help="exact BFS neighbourhood function")
    anf = subparsers.add_parser("anf", parents=[common], help="synchronous HyperANF")
    anf.add_argument("--epsilon", type=float, help="run to the fixpoint radius instead of --hmax")
    simulate = subparsers.add_parser("simulate", parents=[common], help="device network simulation")
    simulate.add_argument("--program", choices=("anf", "election"), default="anf")
    simulate.add_argument("--grain", type=int, default=2)
    simulate.add_argument("--trace", help="write the per-firing trace as JSON lines")
    compare = subparsers.add_parser("compare", parents=[common], help="approximate vs exact report")
    compare.add_argument("--top-k", dest="top_k", type=int, default=10)
    compare.add_argument("--approx", help="estimates table written by `anf`")
    compare.add_argument("--exact", help="counts table written by `exact`")
    gen = subparsers.add_parser("gen", parents=[common], help="write a generated graph")
    gen.add_argument("--shape", dest="gen_kind", choices=("path", "ring", "grid", "gnp"), default="path")
    gen.add_argument("--width", type=int)
    gen.add_argument("--height", type=int)
    gen.add_argument("--p", type=float, default=0.1)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    try:
        cfg = RunConfig.from_namespace(build_parser().parse_args(argv))
        if cfg.verbose:
            logger.setLevel(logging.DEBUG)
        cfg.validate()
        return COMMANDS[cfg.command](cfg)
    except OSError as err:
        logger.error("I/O error: %s", err)
        return 2
    except FieldAnfError as err:
        logger.error("%s: %s", type(err).__name__, err)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
