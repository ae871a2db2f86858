from unittest.mock import patch

import numpy as np
import pytest

from fieldanf.anf_seq import hyperanf_seq
from fieldanf.errors import ParameterError, SchedulerError, ScriptError
from fieldanf.field_runtime import (
    ChurnEvent,
    ChurnScript,
    Context,
    DeviceState,
    NetworkState,
    Scheduler,
    SimulationJob,
    fire,
    parse_churn_script,
    read_churn_script,
    run,
    simulate_many,
    sweeps_to_events,
)
from fieldanf.graph import Graph, SourceSet, gnp_graph, grid_graph, path_graph, ring_graph
from fieldanf.hll import CounterKind
from fieldanf.programs import HyperAnfProgram

EXACT = CounterKind.exact()


def sequential_counters(net: NetworkState, H: int, kind: CounterKind) -> dict:
    g, sources = net.to_graph()
    _, counters = hyperanf_seq(g, H, sources, kind)
    return {uid: counters[uid] for uid in net.live_uids()}


class TestContext:

    @pytest.fixture
    def ctx(self):
        neighbour_exports = {3: {"x": "three", "s/y": 30}, 1: {"x": "one"}}
        return Context(DeviceState(2, {"source": True}), neighbour_exports)

    def test_nbr_includes_self_in_uid_order(self, ctx):
        assert ctx.nbr("x", "two") == {1: "one", 2: "two", 3: "three"}
        assert list(ctx.nbr("z", 0)) == [2]
        assert ctx.export == {"x": "two", "z": 0}

    def test_scope_prefixes_slots(self, ctx):
        with ctx.scope("s"):
            assert ctx.nbr("y", 20) == {2: 20, 3: 30}
        assert "s/y" in ctx.export

    def test_slot_observed_twice(self, ctx):
        ctx.nbr("x", 1)
        with pytest.raises(ParameterError):
            ctx.nbr("x", 2)

    def test_sensor(self, ctx):
        assert ctx.sensor("source") is True
        assert ctx.sensor("missing", 5) == 5
        assert ctx.neighbours == [1, 3]

    def test_branch_restricts_domain(self):
        def program(ctx):
            return ctx.branch(
                ctx.sensor("source"),
                "src",
                lambda: sorted(ctx.nbr("who", ctx.uid)),
                lambda: sorted(ctx.nbr("who", ctx.uid)),
            )

        net = NetworkState.from_graph(path_graph(3), SourceSet.from_ids(3, [0, 2]))
        for _ in range(2):
            for uid in (0, 1, 2):
                fire(net, uid, program)

        assert net.devices[0].output == [0]
        assert net.devices[1].output == [1]
        assert net.devices[2].output == [2]

    def test_rep_keeps_state_between_firings(self):
        def counter(ctx):
            return ctx.rep("count", 0, lambda n: n + 1)

        net = NetworkState.from_graph(path_graph(1))
        for _ in range(3):
            fire(net, 0, counter)
        assert net.devices[0].output == 3


class TestFire:

    def test_isolated_device_sees_only_itself(self):
        net = NetworkState.from_graph(path_graph(1))
        fire(net, 0, HyperAnfProgram(2, EXACT))
        output = net.devices[0].output
        assert output.estimates == (1.0, 1.0, 1.0)

    def test_identical_context_identical_export(self):
        net = NetworkState.from_graph(path_graph(2))
        program = HyperAnfProgram(2, CounterKind.hyperloglog(8, 0))
        fire(net, 1, program)
        fire(net, 0, program)
        first = dict(net.devices[0].export)
        fire(net, 0, program)
        assert net.devices[0].export == first

    def test_removed_edge_is_not_read(self):
        net = NetworkState.from_graph(path_graph(2))
        program = HyperAnfProgram(1, EXACT)
        fire(net, 1, program)
        fire(net, 0, program)
        assert net.devices[0].output.estimates == (2.0, 1.0)

        net.apply(ChurnEvent("remove-edge", 0, 1))
        fire(net, 0, program)
        assert net.devices[0].output.estimates == (1.0, 1.0)

    def test_dead_device_cannot_fire(self):
        net = NetworkState.from_graph(path_graph(2))
        net.remove_device(1)
        with pytest.raises(SchedulerError):
            fire(net, 1, HyperAnfProgram(1, EXACT))
        with pytest.raises(SchedulerError):
            fire(net, 7, HyperAnfProgram(1, EXACT))

    def test_dead_device_export_is_unreadable(self):
        net = NetworkState.from_graph(path_graph(2))
        program = HyperAnfProgram(1, EXACT)
        fire(net, 1, program)
        net.apply(ChurnEvent("remove-device", 1))
        fire(net, 0, program)
        assert net.devices[0].output.estimates == (1.0, 1.0)
        assert net.devices[1].export is None


class TestNetworkState:

    def test_from_graph_rejects_directed(self):
        with pytest.raises(ParameterError):
            NetworkState.from_graph(Graph.from_edges(2, [(0, 1)], directed=True))

    def test_from_graph_rejects_short_source_set(self):
        with pytest.raises(ParameterError):
            NetworkState.from_graph(path_graph(3), SourceSet.from_ids(2, [0]))

    def test_from_graph_keeps_empty_source_set(self):
        net = NetworkState.from_graph(path_graph(2), SourceSet.from_ids(2, []))
        assert [net.devices[uid].sensors["source"] for uid in (0, 1)] == [False, False]

    def test_churn_and_back_to_graph(self):
        net = NetworkState.from_graph(path_graph(3))
        for event in (
            ChurnEvent("add-device", 3),
            ChurnEvent("add-edge", 2, 3),
            ChurnEvent("remove-device", 0),
            ChurnEvent("set-source", 3, value=False),
        ):
            net.apply(event)

        g, sources = net.to_graph()
        assert g.n == 4
        assert list(g.edges()) == [(1, 2), (2, 3)]
        assert sources.ids() == [1, 2]
        assert net.live_uids() == [1, 2, 3]

    def test_add_existing_device(self):
        net = NetworkState.from_graph(path_graph(2))
        with pytest.raises(ScriptError):
            net.add_device(1)

    def test_edge_to_self(self):
        net = NetworkState.from_graph(path_graph(2))
        with pytest.raises(ScriptError):
            net.add_edge(1, 1)


class TestChurnScript:

    def test_parse(self):
        script = parse_churn_script(
            "# churn\n0 remove-edge 0 1\n\n4 add-device 9\n4 set-source 9 1\n10 remove-device 2\n"
        )
        assert len(script) == 4
        assert script.last_index == 10
        assert str(script.events[0].event) == "remove-edge 0 1"
        assert script.events[2].event == ChurnEvent("set-source", 9, value=True)
        assert script.events[1].line == 4

    @pytest.mark.parametrize(
        "text,line",
        [
            ("0 explode 1", 1),
            ("0 add-edge 1", 1),
            ("x add-edge 0 1", 1),
            ("0 add-edge 0 1\nadd-edge", 2),
            ("0 set-source 1 yes", 1),
            ("5 add-edge 0 1\n3 add-edge 1 2", 2),
            ("0 add-device -4", 1),
        ],
    )
    def test_malformed(self, text, line):
        with pytest.raises(ScriptError) as excinfo:
            parse_churn_script(text)
        assert excinfo.value.line == line

    def test_validate_unknown_device(self):
        net = NetworkState.from_graph(path_graph(3))
        script = parse_churn_script("0 remove-device 2\n3 add-edge 1 2\n")
        with pytest.raises(ScriptError) as excinfo:
            script.validate(net)
        assert excinfo.value.line == 2

    def test_validate_replays_additions(self):
        net = NetworkState.from_graph(path_graph(3))
        parse_churn_script("0 add-device 5\n1 add-edge 2 5\n").validate(net)

    def test_validation_error_exit_code(self):
        assert ScriptError("bad").exit_code == 5

    def test_undecodable_file(self, tmp_path):
        path = tmp_path / "churn.txt"
        path.write_bytes(b"0 remove-edge 0 1\n1 add-\xe9dge 1 2\n")
        with pytest.raises(ScriptError) as excinfo:
            read_churn_script(str(path))
        assert excinfo.value.line == 2


class TestScheduler:

    def test_round_robin_order(self):
        net = NetworkState.from_graph(path_graph(3))
        scheduler = Scheduler("round-robin")
        order = [scheduler.next_device(net) for _ in range(7)]
        assert order == [0, 1, 2, 0, 1, 2, 0]
        assert scheduler.sweep == 3

    def test_random_sweep_is_fair_and_seeded(self):
        net = NetworkState.from_graph(ring_graph(10))
        scheduler = Scheduler("random-sweep", seed=4)
        order = [scheduler.next_device(net) for _ in range(50)]
        for start in range(0, 50, 10):
            assert sorted(order[start : start + 10]) == list(range(10))

        again = Scheduler("random-sweep", seed=4)
        assert [again.next_device(net) for _ in range(50)] == order

    def test_dead_devices_are_skipped(self):
        net = NetworkState.from_graph(path_graph(3))
        scheduler = Scheduler()
        assert scheduler.next_device(net) == 0
        net.remove_device(1)
        assert scheduler.next_device(net) == 2

    def test_empty_network(self):
        assert Scheduler().next_device(NetworkState()) is None

    def test_unknown_policy(self):
        with pytest.raises(ParameterError):
            Scheduler("lottery")


class TestRun:

    def test_p3_converges_within_three_sweeps(self):
        net = NetworkState.from_graph(path_graph(3))
        trace = run(net, HyperAnfProgram(2, EXACT), Scheduler(), total_events=18)

        table, _ = hyperanf_seq(path_graph(3), 2, SourceSet.all(3), EXACT)
        for uid, output in trace.final_outputs().items():
            assert list(output.estimates) == table.row(uid)[::-1]
        assert trace.final_outputs()[1].estimates == (3.0, 3.0, 1.0)
        assert all(sweep <= 3 for sweep in trace.converged_at_sweep().values())

    @pytest.mark.parametrize(
        "g",
        [path_graph(12), ring_graph(15), grid_graph(5, 4), gnp_graph(60, 0.06, seed=2)],
        ids=["path", "ring", "grid", "gnp"],
    )
    @pytest.mark.parametrize(
        "kind", [EXACT, CounterKind.hyperloglog(6, 77)], ids=["exact", "hll"]
    )
    def test_distributed_equals_sequential(self, g, kind):
        H = 4
        net = NetworkState.from_graph(g)
        trace = run(net, HyperAnfProgram(H, kind), Scheduler(), total_events=(H + 2) * g.n)

        expected = sequential_counters(net, H, kind)
        final = trace.final_outputs()
        assert {uid: output.counters[H] for uid, output in final.items()} == expected
        assert max(trace.converged_at_sweep().values()) <= H + 1

    @pytest.mark.parametrize("seed", range(20))
    def test_self_stabilises_after_churn(self, seed):
        rng = np.random.default_rng(seed)
        H, n = 3, 16
        g = gnp_graph(n, 0.15, seed=seed)
        sources = SourceSet.from_ids(n, np.flatnonzero(rng.random(n) < 0.6).tolist())
        events, at = [], 0
        for _ in range(8):
            at += int(rng.integers(0, 6))
            u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
            choice = rng.integers(0, 3)
            if choice == 0:
                events.append((at, ChurnEvent("add-edge", u, v)))
            elif choice == 1:
                events.append((at, ChurnEvent("remove-edge", u, v)))
            else:
                events.append((at, ChurnEvent("set-source", u, value=bool(rng.integers(0, 2)))))
        churn = ChurnScript.from_events(events)
        kind = CounterKind.hyperloglog(5, seed)
        policy = "random-sweep" if seed % 2 else "round-robin"

        net = NetworkState.from_graph(g, sources)
        total = at + 1 + (H + 2) * n
        trace = run(net, HyperAnfProgram(H, kind), Scheduler(policy, seed), churn, total)

        assert len(trace.churn_applied) == len(events)
        final = trace.final_outputs()
        assert {uid: output.counters[H] for uid, output in final.items()} == sequential_counters(
            net, H, kind
        )
        assert max(trace.converged_at_sweep().values()) <= H + 1

    def test_devices_added_by_churn_join(self):
        net = NetworkState.from_graph(path_graph(3))
        churn = parse_churn_script("5 add-device 3\n5 add-edge 2 3\n5 set-source 3 1\n")
        trace = run(net, HyperAnfProgram(3, EXACT), Scheduler(), churn, 5 + 5 * 4)

        assert trace.final_outputs()[3].estimates == (4.0, 3.0, 2.0, 1.0)
        assert trace.final_outputs()[0].estimates == (4.0, 3.0, 2.0, 1.0)

    def test_same_seed_same_trace(self):
        churn = parse_churn_script("4 remove-edge 0 1\n9 set-source 2 0\n")

        def trace_text():
            net = NetworkState.from_graph(ring_graph(6))
            program = HyperAnfProgram(3, CounterKind.hyperloglog(8, 1))
            return run(net, program, Scheduler("random-sweep", 11), churn, 60).to_jsonl()

        first = trace_text()
        assert first == trace_text()
        assert first.count("\n") == 60

    def test_empty_network(self):
        trace = run(NetworkState(), HyperAnfProgram(2, EXACT), Scheduler(), total_events=10)
        assert len(trace) == 0
        assert trace.final_outputs() == {}

    def test_negative_event_count(self):
        with pytest.raises(ParameterError):
            run(NetworkState(), HyperAnfProgram(2, EXACT), Scheduler(), total_events=-1)

    def test_unknown_device_in_script(self):
        net = NetworkState.from_graph(path_graph(2))
        with pytest.raises(ScriptError):
            run(net, HyperAnfProgram(1, EXACT), Scheduler(), parse_churn_script("0 add-edge 0 5"), 4)

    def test_incompatible_neighbour_aborts_firing(self):
        hll = CounterKind.hyperloglog(8, 0)

        def mixed(ctx):
            return HyperAnfProgram(1, EXACT if ctx.uid == 0 else hll)(ctx)

        net = NetworkState.from_graph(path_graph(2))
        with patch("fieldanf.field_runtime.logger") as mock_logger:
            trace = run(net, mixed, Scheduler(), total_events=4)

        assert trace.errors()
        assert all(entry.output is None for entry in trace.errors())
        mock_logger.warning.assert_called()

    def test_events_past_the_end_are_reported(self):
        net = NetworkState.from_graph(path_graph(2))
        with patch("fieldanf.field_runtime.logger") as mock_logger:
            trace = run(net, HyperAnfProgram(1, EXACT), Scheduler(), parse_churn_script("50 remove-edge 0 1"), 4)

        assert trace.churn_applied == []
        mock_logger.warning.assert_called_once()

    def test_sweeps_to_events(self):
        assert sweeps_to_events(NetworkState.from_graph(path_graph(5)), 3) == 15


class TestSimulateMany:

    @pytest.mark.asyncio
    async def test_jobs_run_independently_in_order(self):
        net = NetworkState.from_graph(ring_graph(6))
        jobs = [
            SimulationJob(net, HyperAnfProgram(2, EXACT), Scheduler("random-sweep", seed), None, 24)
            for seed in (1, 2, 1)
        ]

        traces = await simulate_many(jobs)

        assert len(traces) == 3
        assert traces[0].to_jsonl() == traces[2].to_jsonl()
        assert traces[0].to_jsonl() != traces[1].to_jsonl()
        assert net.devices[0].export is None
