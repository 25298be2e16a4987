"""Work-queue partitioning: one partition per worker, round-robin placement.

Partition ids, worker ids, and data-node indexes are all 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import StoreError


@dataclass(frozen=True)
class PartitionPlacement:
    partition_id: int
    primary_data_node: str
    replica_data_node: str | None

    def to_json(self) -> dict:
        return {
            "partition_id": self.partition_id,
            "primary": self.primary_data_node,
            "replica": self.replica_data_node,
        }

    @staticmethod
    def from_json(d: dict) -> "PartitionPlacement":
        return PartitionPlacement(d["partition_id"], d["primary"], d.get("replica"))


def data_node_name(index: int) -> str:
    return f"d{index}"


def allocate_partitions(
    W: int, D: int, replicate: bool
) -> tuple[list[PartitionPlacement], list[str]]:
    """Assigns the W partitions to D data nodes.

    Primaries go round-robin over data nodes; each replica lands on the next
    data node after its primary, so primary and replica never coincide.
    Returns (placements, warnings).
    """
    if W < 1 or D < 1:
        raise StoreError("config", f"need W >= 1 and D >= 1, got W={W} D={D}")
    warnings: list[str] = []
    if replicate and D < 2:
        warnings.append("replication requested with a single data node; no replicas placed")
    placements = []
    for p in range(1, W + 1):
        primary = ((p - 1) % D) + 1
        replica = (primary % D) + 1 if (replicate and D >= 2) else None
        placements.append(
            PartitionPlacement(
                partition_id=p,
                primary_data_node=data_node_name(primary),
                replica_data_node=data_node_name(replica) if replica else None,
            )
        )
    return placements, warnings


def partition_of(worker_id: int, W: int) -> int:
    """Identity hash: worker i owns partition i."""
    if not (1 <= worker_id <= W):
        raise StoreError("out_of_range", f"worker_id {worker_id} not in [1..{W}]")
    return worker_id
