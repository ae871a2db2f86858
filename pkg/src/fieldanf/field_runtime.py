"""Aggregate-computing runtime: devices firing in asynchronous rounds.

A firing device evaluates a program against its sensors, its own `rep`
store and the latest exports of its current live neighbours. Exports are
keyed by slot paths, so a value observed with `nbr` is only matched with
neighbour values produced at the same place of the same program. Topology is
authoritative: a device never reads exports of non-neighbours or of dead
devices, and a device that never fired exports nothing.
"""

from __future__ import annotations

import asyncio
import copy
import json
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional

import numpy as np

from .errors import FieldAnfError, ParameterError, SchedulerError, ScriptError
from .graph import Graph, SourceSet, check_sources, read_text
from .logger import get_log_level_from_env, setup_logger

logger = setup_logger("fieldanf", get_log_level_from_env())

EVENT_KINDS = ("add-edge", "remove-edge", "add-device", "remove-device", "set-source")


@dataclass
class DeviceState:
    uid: int
    sensors: dict[str, Any] = field(default_factory=dict)
    export: Optional[dict[str, Any]] = None
    rep: dict[str, Any] = field(default_factory=dict)
    alive: bool = True
    output: Any = None

    def readable_export(self) -> Optional[dict[str, Any]]:
        return self.export if self.alive else None


class Context:
    """What a program sees during one firing of one device"""

    def __init__(
        self, device: DeviceState, neighbour_exports: dict[int, dict[str, Any]]
    ) -> None:
        self.uid: int = device.uid
        self._sensors = device.sensors
        self._neighbour_exports = neighbour_exports
        self._previous_rep = device.rep
        self.rep_store: dict[str, Any] = {}
        self.export: dict[str, Any] = {}
        self._path: list[str] = []

    def sensor(self, name: str, default: Any = None) -> Any:
        return self._sensors.get(name, default)

    @property
    def neighbours(self) -> list[int]:
        return sorted(self._neighbour_exports)

    def _key(self, slot: str) -> str:
        return "/".join([*self._path, slot])

    @contextmanager
    def scope(self, name: str) -> Iterator["Context"]:
        """Nest slot names, keeping repeated calls of a function aligned apart"""
        self._path.append(name)
        try:
            yield self
        finally:
            self._path.pop()

    def nbr(self, slot: str, value: Any) -> dict[int, Any]:
        """Export `value` and observe the neighbouring field at this slot.

        The result maps each neighbour that exported this slot in its latest
        firing to that value, plus this device to `value`, ordered by uid.
        """
        key = self._key(slot)
        if key in self.export:
            raise ParameterError(f"slot {key!r} observed twice in one evaluation")
        self.export[key] = value
        observed = {
            uid: exported[key]
            for uid, exported in self._neighbour_exports.items()
            if key in exported
        }
        observed[self.uid] = value
        return dict(sorted(observed.items()))

    def rep(self, slot: str, initial: Any, update: Callable[[Any], Any]) -> Any:
        """Apply `update` to last round's value (or `initial`) and keep the result"""
        key = self._key(slot)
        value = update(self._previous_rep.get(key, initial))
        self.rep_store[key] = value
        return value

    def branch(
        self,
        condition: bool,
        slot: str,
        then: Callable[[], Any],
        otherwise: Callable[[], Any],
    ) -> Any:
        """Domain restriction: `nbr` inside a branch only meets devices that took it"""
        with self.scope(f"{slot}[{bool(condition)}]"):
            return then() if condition else otherwise()


Program = Callable[[Context], Any]


@dataclass(frozen=True)
class ChurnEvent:
    kind: str
    u: int
    v: Optional[int] = None
    value: Optional[bool] = None

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ScriptError(f"unknown churn event {self.kind!r}")
        if self.kind in ("add-edge", "remove-edge") and self.v is None:
            raise ScriptError(f"{self.kind} needs two devices")
        if self.kind == "set-source" and self.value is None:
            raise ScriptError("set-source needs a value")

    def __str__(self) -> str:
        if self.kind in ("add-edge", "remove-edge"):
            return f"{self.kind} {self.u} {self.v}"
        if self.kind == "set-source":
            return f"{self.kind} {self.u} {int(bool(self.value))}"
        return f"{self.kind} {self.u}"


@dataclass(frozen=True)
class ScheduledEvent:
    at: int
    event: ChurnEvent
    line: Optional[int] = None


@dataclass
class ChurnScript:
    """Churn events to apply before the firing with the same event index"""

    events: list[ScheduledEvent] = field(default_factory=list)

    @classmethod
    def from_events(cls, events: list[tuple[int, ChurnEvent]]) -> "ChurnScript":
        script = cls([ScheduledEvent(at, event) for at, event in events])
        script.check_order()
        return script

    def __len__(self) -> int:
        return len(self.events)

    @property
    def last_index(self) -> Optional[int]:
        return self.events[-1].at if self.events else None

    def check_order(self) -> None:
        previous = 0
        for scheduled in self.events:
            if scheduled.at < previous:
                raise ScriptError(
                    f"event index {scheduled.at} after {previous}: indices must be "
                    "non-negative and non-decreasing",
                    scheduled.line,
                )
            previous = scheduled.at

    def validate(self, net: "NetworkState") -> None:
        """Replay the device lifecycle and reject events naming absent devices"""
        alive = set(net.live_uids())
        for scheduled in self.events:
            event, line = scheduled.event, scheduled.line
            if event.kind == "add-device":
                if event.u in alive:
                    raise ScriptError(f"device {event.u} already exists", line)
                alive.add(event.u)
                continue
            for uid in (event.u, event.v):
                if uid is not None and uid not in alive:
                    raise ScriptError(f"{event.kind} references unknown device {uid}", line)
            if event.kind in ("add-edge", "remove-edge") and event.u == event.v:
                raise ScriptError(f"{event.kind} needs two distinct devices", line)
            if event.kind == "remove-device":
                alive.discard(event.u)


def _device_id(token: str, line: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ScriptError(f"device id {token!r} is not an integer", line) from None
    if value < 0:
        raise ScriptError(f"device id {value} is negative", line)
    return value


def parse_churn_script(text: str) -> ChurnScript:
    """Parse `<event-index> <event> <args>` lines; '#' starts a comment line"""
    events = []
    arity = {
        "add-edge": 2,
        "remove-edge": 2,
        "add-device": 1,
        "remove-device": 1,
        "set-source": 2,
    }
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise ScriptError(f"expected '<event-index> <event> ...', got {line!r}", line_no)
        try:
            at = int(tokens[0])
        except ValueError:
            raise ScriptError(f"event index {tokens[0]!r} is not an integer", line_no) from None
        kind, args = tokens[1], tokens[2:]
        if kind not in arity:
            raise ScriptError(f"unknown churn event {kind!r}", line_no)
        if len(args) != arity[kind]:
            raise ScriptError(f"{kind} takes {arity[kind]} argument(s), got {len(args)}", line_no)
        if kind == "set-source":
            if args[1] not in ("0", "1"):
                raise ScriptError(f"set-source value must be 0 or 1, got {args[1]!r}", line_no)
            event = ChurnEvent(kind, _device_id(args[0], line_no), value=args[1] == "1")
        elif arity[kind] == 2:
            event = ChurnEvent(kind, _device_id(args[0], line_no), _device_id(args[1], line_no))
        else:
            event = ChurnEvent(kind, _device_id(args[0], line_no))
        events.append(ScheduledEvent(at, event, line_no))
    script = ChurnScript(events)
    script.check_order()
    return script


def read_churn_script(path: str) -> ChurnScript:
    return parse_churn_script(read_text(path, ScriptError))


@dataclass
class NetworkState:
    devices: dict[int, DeviceState] = field(default_factory=dict)
    topology: dict[int, set[int]] = field(default_factory=dict)
    clock: int = 0

    @classmethod
    def from_graph(cls, g: Graph, sources: Optional[SourceSet] = None) -> "NetworkState":
        if g.directed:
            raise ParameterError("device networks need an undirected graph")
        if sources is None:
            sources = SourceSet.all(g.n)
        check_sources(g, sources)
        net = cls()
        for v in range(g.n):
            net.devices[v] = DeviceState(v, {"source": v in sources})
            net.topology[v] = set(g.adjacency[v])
        return net

    def is_alive(self, uid: int) -> bool:
        device = self.devices.get(uid)
        return device is not None and device.alive

    def live_uids(self) -> list[int]:
        return sorted(uid for uid, device in self.devices.items() if device.alive)

    def neighbours(self, uid: int) -> list[int]:
        return sorted(nb for nb in self.topology.get(uid, ()) if self.is_alive(nb))

    def _require_alive(self, *uids: int) -> None:
        for uid in uids:
            if not self.is_alive(uid):
                raise ScriptError(f"device {uid} is not a live device")

    def add_edge(self, u: int, v: int) -> None:
        self._require_alive(u, v)
        if u == v:
            raise ScriptError(f"cannot link device {u} to itself")
        self.topology[u].add(v)
        self.topology[v].add(u)

    def remove_edge(self, u: int, v: int) -> None:
        self._require_alive(u, v)
        self.topology[u].discard(v)
        self.topology[v].discard(u)

    def add_device(self, uid: int, source: bool = False) -> None:
        if self.is_alive(uid):
            raise ScriptError(f"device {uid} already exists")
        self.devices[uid] = DeviceState(uid, {"source": source})
        self.topology[uid] = set()

    def remove_device(self, uid: int) -> None:
        self._require_alive(uid)
        device = self.devices[uid]
        device.alive = False
        device.export = None
        for nb in self.topology.pop(uid, set()):
            self.topology.get(nb, set()).discard(uid)
        self.topology[uid] = set()

    def set_sensor(self, uid: int, name: str, value: Any) -> None:
        self._require_alive(uid)
        self.devices[uid].sensors[name] = value

    def apply(self, event: ChurnEvent) -> None:
        logger.debug("Applying churn event '%s' at clock %d", event, self.clock)
        if event.kind == "add-edge":
            self.add_edge(event.u, event.v)
        elif event.kind == "remove-edge":
            self.remove_edge(event.u, event.v)
        elif event.kind == "add-device":
            self.add_device(event.u)
        elif event.kind == "remove-device":
            self.remove_device(event.u)
        else:
            self.set_sensor(event.u, "source", bool(event.value))

    def to_graph(self) -> tuple[Graph, SourceSet]:
        """Current live topology as a graph over uids 0..max; dead uids are isolated"""
        n = max(self.devices, default=-1) + 1
        edges = [
            (u, v)
            for u in self.live_uids()
            for v in self.neighbours(u)
            if u < v
        ]
        sources = SourceSet.from_ids(
            n,
            (uid for uid in self.live_uids() if self.devices[uid].sensors.get("source")),
        )
        return Graph.from_edges(n, edges), sources


def fire(net: NetworkState, uid: int, program: Program) -> NetworkState:
    """Evaluate `program` on device `uid` and atomically replace its export"""
    device = net.devices.get(uid)
    if device is None or not device.alive:
        raise SchedulerError(f"device {uid} is not alive and cannot fire")
    neighbour_exports = {}
    for nb in net.neighbours(uid):
        exported = net.devices[nb].readable_export()
        if exported is not None:
            neighbour_exports[nb] = exported
    context = Context(device, neighbour_exports)
    output = program(context)
    device.export = context.export
    device.rep = context.rep_store
    device.output = output
    return net


class Scheduler:
    """Fair firing order: devices fire in sweeps, each live device once per sweep.

    `round-robin` sweeps in uid order; `random-sweep` uses a fresh seeded
    permutation per sweep. Devices that die mid-sweep are skipped, devices
    added mid-sweep join the next one.
    """

    POLICIES = ("round-robin", "random-sweep")

    def __init__(self, policy: str = "round-robin", seed: int = 0) -> None:
        if policy not in self.POLICIES:
            raise ParameterError(f"unknown scheduler policy {policy!r}")
        self.policy = policy
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._queue: deque[int] = deque()
        self.sweep = 0

    def restart(self) -> None:
        """Drop the rest of the current sweep; the next firing opens a new one"""
        self._queue.clear()

    def next_device(self, net: NetworkState) -> Optional[int]:
        while True:
            if not self._queue:
                live = net.live_uids()
                if not live:
                    return None
                if self.policy == "random-sweep":
                    live = [live[i] for i in self._rng.permutation(len(live))]
                self._queue.extend(live)
                self.sweep += 1
            uid = self._queue.popleft()
            if net.is_alive(uid):
                return uid


@dataclass(frozen=True)
class TraceEntry:
    event: int
    sweep: int
    uid: int
    output: Any
    error: Optional[str] = None


def _summary(output: Any) -> Any:
    if hasattr(output, "summary"):
        return output.summary()
    return output


@dataclass
class Trace:
    entries: list[TraceEntry] = field(default_factory=list)
    churn_applied: list[tuple[int, ChurnEvent]] = field(default_factory=list)
    last_churn_sweep: int = 0
    final: dict[int, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def final_outputs(self) -> dict[int, Any]:
        return dict(self.final)

    def errors(self) -> list[TraceEntry]:
        return [entry for entry in self.entries if entry.error is not None]

    def sweeps_after_churn(self) -> int:
        if not self.entries:
            return 0
        return max(0, self.entries[-1].sweep - self.last_churn_sweep)

    def converged_at_sweep(self) -> dict[int, Optional[int]]:
        """Per live device, the first sweep after the last churn event from which
        its output never changes again (None if it never fired since)"""
        settled: dict[int, Optional[int]] = {uid: None for uid in self.final}
        changed: set[int] = set()
        for entry in reversed(self.entries):
            uid = entry.uid
            relative = entry.sweep - self.last_churn_sweep
            if relative < 1 or uid not in settled or uid in changed or entry.error:
                continue
            if entry.output == self.final[uid]:
                settled[uid] = relative
            else:
                changed.add(uid)
        return settled

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "event": entry.event,
                    "sweep": entry.sweep,
                    "uid": entry.uid,
                    "output": _summary(entry.output),
                    "error": entry.error,
                },
                sort_keys=True,
            )
            for entry in self.entries
        ]
        return "".join(line + "\n" for line in lines)


def run(
    net: NetworkState,
    program: Program,
    scheduler: Scheduler,
    churn: Optional[ChurnScript] = None,
    total_events: int = 0,
) -> Trace:
    """Interleave churn events with `total_events` scheduler-chosen firings.

    Events scheduled at index t are applied, in script order, before firing t.
    Applying churn restarts the scheduler sweep. A firing that raises a
    library error leaves the device's export untouched and is recorded in the
    trace with its error.
    """
    if total_events < 0:
        raise ParameterError(f"total_events must be non-negative, got {total_events}")
    churn = churn or ChurnScript()
    churn.validate(net)
    pending = deque(churn.events)
    trace = Trace()
    for t in range(total_events):
        applied = False
        while pending and pending[0].at <= t:
            scheduled = pending.popleft()
            net.apply(scheduled.event)
            trace.churn_applied.append((t, scheduled.event))
            applied = True
        if applied:
            scheduler.restart()
            trace.last_churn_sweep = scheduler.sweep
        uid = scheduler.next_device(net)
        net.clock = t + 1
        if uid is None:
            continue
        try:
            fire(net, uid, program)
        except FieldAnfError as err:
            logger.warning("Firing of device %d at event %d aborted: %s", uid, t, err)
            trace.entries.append(TraceEntry(t, scheduler.sweep, uid, None, str(err)))
            continue
        trace.entries.append(
            TraceEntry(t, scheduler.sweep, uid, net.devices[uid].output)
        )
    if pending:
        logger.warning("%d churn event(s) scheduled past the end of the run were not applied", len(pending))
    trace.final = {uid: net.devices[uid].output for uid in net.live_uids() if net.devices[uid].export is not None}
    return trace


@dataclass
class SimulationJob:
    net: NetworkState
    program: Program
    scheduler: Scheduler
    churn: Optional[ChurnScript] = None
    total_events: int = 0


def _run_job(job: SimulationJob) -> Trace:
    job = copy.deepcopy(job)
    return run(job.net, job.program, job.scheduler, job.churn, job.total_events)


async def simulate_many(jobs: list[SimulationJob]) -> list[Trace]:
    """Run independent simulations concurrently; traces come back in job order"""
    return list(await asyncio.gather(*(asyncio.to_thread(_run_job, job) for job in jobs)))


def sweeps_to_events(net: NetworkState, sweeps: int) -> int:
    """Firing events covering `sweeps` full sweeps of the current live devices"""
    return sweeps * len(net.live_uids())


