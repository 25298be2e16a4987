from .partitioning import PartitionPlacement, allocate_partitions, partition_of
from .cluster import StoreCluster
from .client import StoreSession
from .metrics import AccessTimer, MetricsRegistry, CATEGORIES

__all__ = [
    "PartitionPlacement",
    "allocate_partitions",
    "partition_of",
    "StoreCluster",
    "StoreSession",
    "AccessTimer",
    "MetricsRegistry",
    "CATEGORIES",
]
