"""Exception types shared across the engine.

Store errors carry a short machine-readable ``code`` so they survive the
wire protocol round trip unchanged.
"""

from __future__ import annotations


class SchalaError(Exception):
    """Base class for all engine errors."""


class ConfigError(SchalaError):
    """Invalid topology, workload, or CLI configuration."""


class CycleError(SchalaError):
    """A workflow DAG contains a cycle."""


class StoreError(SchalaError):
    """An error produced by a store operation.

    Codes used by the store:
      bad_request, config, duplicate_task, unknown_task, unknown_table,
      unknown_tuple, out_of_range, illegal_transition, rejected,
      wrong_node, store_unavailable, partition_unavailable, state
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message

    def to_wire(self) -> dict:
        out = {"code": self.code, "message": self.message}
        node = getattr(self, "node", None)
        if node:
            out["node"] = node
        return out

    @staticmethod
    def from_wire(obj: dict) -> "StoreError":
        code = obj.get("code", "error")
        message = obj.get("message", "")
        if code == "store_unavailable":
            return StoreUnavailable(message, node=obj.get("node"))
        if code == "partition_unavailable":
            return PartitionUnavailable(message)
        return StoreError(code, message)


class StoreUnavailable(StoreError):
    """The data node owning the target partition cannot be reached."""

    def __init__(self, message: str, node: str | None = None):
        super().__init__("store_unavailable", message)
        self.node = node


class ConnectorsExhausted(StoreUnavailable):
    """Every configured connector is down; the client has nowhere to go."""


class PartitionUnavailable(StoreError):
    """A partition has neither a live primary nor a live replica."""

    def __init__(self, message: str):
        super().__init__("partition_unavailable", message)


class ConnectorDown(SchalaError):
    """The broker a client is talking to stopped answering."""
