import pytest
from hypothesis import given, strategies as st

from schaladb.errors import CycleError
from schaladb.model import (
    ActivitySpec,
    ClusterTopology,
    LEGAL_TRANSITIONS,
    Operator,
    RoleInstance,
    Task,
    TaskStatus,
    WorkflowSpec,
    render_command,
    template_placeholders,
    topo_order,
    validate_workflow,
)

from conftest import chain_workflow, make_activity


def wf(activities, edges):
    return WorkflowSpec("wf", tuple(activities), tuple(edges))


class TestValidateWorkflow:
    def test_seven_activity_linear_chain_is_ok(self):
        spec = chain_workflow(7)
        report = validate_workflow(spec)
        assert report.ok, report.errors

    def test_empty_activity_list(self):
        report = validate_workflow(wf([], []))
        assert not report.ok
        assert "no activities" in report.errors

    def test_two_cycle_is_named(self):
        spec = wf([make_activity("a"), make_activity("b")], [("a", "b"), ("b", "a")])
        report = validate_workflow(spec)
        assert not report.ok
        assert "cycle: a,b" in report.errors

    def test_duplicate_activity_ids(self):
        spec = wf([make_activity("a"), make_activity("a")], [])
        report = validate_workflow(spec)
        assert any("duplicate" in e for e in report.errors)

    def test_edge_to_undeclared_activity(self):
        spec = wf([make_activity("a")], [("a", "ghost")])
        report = validate_workflow(spec)
        assert any("ghost" in e for e in report.errors)

    def test_placeholder_must_be_in_input_schema(self):
        act = make_activity("a", ins=("a",), template="/run q={missing}")
        report = validate_workflow(wf([act], []))
        assert any("missing" in e for e in report.errors)

    def test_duplicate_output_fields(self):
        act = make_activity("a", outs=("x", "x"))
        report = validate_workflow(wf([act], []))
        assert any("output_schema" in e for e in report.errors)


class TestTopoOrder:
    def test_linear_chain(self):
        spec = wf([make_activity(a) for a in "abc"], [("a", "b"), ("b", "c")])
        assert topo_order(spec) == ["a", "b", "c"]

    def test_diamond_breaks_ties_lexicographically(self):
        spec = wf(
            [make_activity(a) for a in "abcd"],
            [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        )
        assert topo_order(spec) == ["a", "b", "c", "d"]

    def test_seven_activity_chain_in_order(self):
        spec = chain_workflow(7)
        assert topo_order(spec) == [f"a{i}" for i in range(1, 8)]

    def test_cycle_raises(self):
        spec = wf([make_activity(a) for a in "ab"], [("a", "b"), ("b", "a")])
        with pytest.raises(CycleError):
            topo_order(spec)

    @given(st.integers(min_value=1, max_value=8), st.data())
    def test_random_dag_order_consistent_with_edges(self, n, data):
        ids = [f"n{i}" for i in range(n)]
        edges = []
        for i in range(n):
            for j in range(i + 1, n):
                if data.draw(st.booleans()):
                    edges.append((ids[i], ids[j]))
        spec = wf([make_activity(a) for a in ids], edges)
        order = topo_order(spec)
        assert sorted(order) == sorted(ids)
        pos = {a: i for i, a in enumerate(order)}
        for (u, v) in edges:
            assert pos[u] < pos[v]


class TestTaskStateMachine:
    def test_legal_transitions(self):
        t = Task(task_id=1, activity_id="a", workflow_id="w", worker_id=1)
        running = t.with_status(TaskStatus.RUNNING, start_time=5)
        done = running.with_status(TaskStatus.FINISHED, end_time=9)
        assert done.status is TaskStatus.FINISHED

    @given(
        st.lists(
            st.sampled_from([TaskStatus.READY, TaskStatus.RUNNING, TaskStatus.FINISHED, TaskStatus.ABORTED]),
            max_size=6,
        )
    )
    def test_random_transition_sequences(self, seq):
        t = Task(task_id=1, activity_id="a", workflow_id="w", worker_id=1)
        for status in seq:
            if (t.status, status) in LEGAL_TRANSITIONS:
                t = t.with_status(status)
            else:
                with pytest.raises(ValueError):
                    t.with_status(status)
                return

    def test_row_round_trip(self):
        t = Task(task_id=7, activity_id="a2", workflow_id="w", worker_id=2,
                 command_line="/run a=1", start_time=10, end_time=None,
                 status=TaskStatus.RUNNING, input_tuple_ids=(4, 5))
        assert Task.from_row(t.to_row()) == t


class TestCommandTemplates:
    def test_placeholders(self):
        assert template_placeholders("/run a={a} b={bee} {a}") == ["a", "bee", "a"]

    def test_render(self):
        assert render_command("/run a={a} b={b}", {"a": 1.5, "b": "x"}) == "/run a=1.5 b=x"

    def test_render_missing_field_raises(self):
        with pytest.raises(KeyError):
            render_command("/run a={a}", {})


class TestTopology:
    def topo(self, secondary=True, same_node=False):
        return ClusterTopology(
            workers=(RoleInstance("worker", "1", "n1"), RoleInstance("worker", "2", "n2")),
            data_nodes=(RoleInstance("data", "d1", "n1" if same_node else "n3"),),
            connectors=(RoleInstance("connector", "c1", "n1"),),
            supervisor=RoleInstance("supervisor", "sup", "n1"),
            secondary_supervisor=RoleInstance("secondary_supervisor", "sup2", "n2") if secondary else None,
        )

    def test_valid_topology(self):
        errors, warnings = self.topo().validate()
        assert errors == []
        assert warnings == []

    def test_missing_roles_are_errors(self):
        t = ClusterTopology(workers=(), data_nodes=(), connectors=(), supervisor=None)
        errors, _ = t.validate()
        assert len(errors) >= 4

    def test_two_same_role_instances_on_one_node_warns(self):
        t = ClusterTopology(
            workers=(RoleInstance("worker", "1", "n1"), RoleInstance("worker", "2", "n1")),
            data_nodes=(RoleInstance("data", "d1", "n2"),),
            connectors=(RoleInstance("connector", "c1", "n1"),),
            supervisor=RoleInstance("supervisor", "sup", "n1"),
        )
        errors, warnings = t.validate()
        assert errors == []
        assert any("worker" in w for w in warnings)

    def test_json_round_trip_of_workflow(self):
        spec = chain_workflow(4)
        again = WorkflowSpec.from_json(spec.to_json())
        assert again == spec
