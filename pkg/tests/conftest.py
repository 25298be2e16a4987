import pytest

from schaladb.connector import LocalConnector
from schaladb.demo import build_demo_cluster
from schaladb.model import ActivitySpec, Operator, WorkflowSpec
from schaladb.store.client import StoreSession
from schaladb.store.cluster import StoreCluster
from schaladb.store.metrics import MetricsRegistry


def make_activity(aid, operator=Operator.MAP, ins=("a", "b", "c"), outs=("x", "y"),
                  template=None, fn="generic_map", mean_ms=10, name=None):
    return ActivitySpec(
        activity_id=aid,
        name=name or aid,
        operator=operator,
        command_template=template if template is not None else "/run " + " ".join(f"{f}={{{f}}}" for f in ins),
        input_schema=tuple(ins),
        output_schema=tuple(outs),
        mean_duration_ms=mean_ms,
        synthetic_fn=fn,
    )


def chain_workflow(n=3, mean_ms=10, workflow_id="wf-test"):
    """Linear chain alternating the generic and refresh stages."""
    acts = []
    for i in range(n):
        if i % 2 == 0:
            acts.append(make_activity(f"a{i+1}", ins=("a", "b", "c"), outs=("x", "y"),
                                      fn="generic_map", mean_ms=mean_ms))
        else:
            acts.append(make_activity(f"a{i+1}", ins=("x", "y"), outs=("a", "b", "c"),
                                      fn="refresh_inputs", mean_ms=mean_ms))
    edges = tuple((f"a{i}", f"a{i+1}") for i in range(1, n))
    return WorkflowSpec(workflow_id=workflow_id, activities=tuple(acts), edges=edges)


SAMPLE_INPUTS = [
    {"a": 1.3, "b": 27.75, "c": 16.21},
    {"a": 0.67, "b": 19.18, "c": 24.26},
    {"a": 1.49, "b": 6.64, "c": 9.22},
    {"a": 0.17, "b": 30.65, "c": 12.61},
]


@pytest.fixture
def demo_session():
    cluster = build_demo_cluster()
    return StoreSession("test-client", [LocalConnector("c1", cluster)])


@pytest.fixture
def demo_pair():
    cluster = build_demo_cluster()
    return cluster, StoreSession("test-client", [LocalConnector("c1", cluster)])


def session_for(cluster, node="test-client", registry=None, **kw):
    return StoreSession(node, [LocalConnector("c1", cluster)], registry or MetricsRegistry(), **kw)


def fresh_cluster(W=2, D=1, replicate=False):
    return StoreCluster.create(W=W, D=D, replicate=replicate)
