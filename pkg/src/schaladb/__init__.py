"""schaladb: a distributed in-memory work-queue engine for many-task
workflows, with runtime analytical queries and human steering built on the
same store that drives scheduling."""

from .engine import Engine, EngineConfig, simple_topology
from .errors import SchalaError, StoreError
from .model import (
    ActivitySpec,
    ClusterTopology,
    DomainTuple,
    Operator,
    ProvKind,
    ProvLink,
    SteeringAction,
    Task,
    TaskStatus,
    WorkflowSpec,
    topo_order,
    validate_workflow,
)

__version__ = "0.1.0"

__all__ = [
    "Engine",
    "EngineConfig",
    "simple_topology",
    "SchalaError",
    "StoreError",
    "ActivitySpec",
    "ClusterTopology",
    "DomainTuple",
    "Operator",
    "ProvKind",
    "ProvLink",
    "SteeringAction",
    "Task",
    "TaskStatus",
    "WorkflowSpec",
    "topo_order",
    "validate_workflow",
    "__version__",
]
