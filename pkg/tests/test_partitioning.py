import pytest
from hypothesis import given, strategies as st

from schaladb.errors import StoreError
from schaladb.store.partitioning import allocate_partitions, partition_of


class TestAllocatePartitions:
    def test_two_partitions_one_data_node(self):
        placements, warnings = allocate_partitions(2, 1, replicate=False)
        assert [(p.partition_id, p.primary_data_node, p.replica_data_node) for p in placements] == [
            (1, "d1", None),
            (2, "d1", None),
        ]
        assert warnings == []

    def test_four_partitions_two_nodes_replicated(self):
        placements, _ = allocate_partitions(4, 2, replicate=True)
        primaries = {p.partition_id: p.primary_data_node for p in placements}
        assert primaries == {1: "d1", 2: "d2", 3: "d1", 4: "d2"}
        for p in placements:
            assert p.replica_data_node is not None
            assert p.replica_data_node != p.primary_data_node

    def test_single_partition_three_nodes(self):
        placements, _ = allocate_partitions(1, 3, replicate=True)
        (p,) = placements
        assert (p.primary_data_node, p.replica_data_node) == ("d1", "d2")

    def test_replicate_with_one_node_warns(self):
        placements, warnings = allocate_partitions(3, 1, replicate=True)
        assert all(p.replica_data_node is None for p in placements)
        assert warnings

    @pytest.mark.parametrize("W,D", [(0, 1), (1, 0), (-1, 2)])
    def test_bad_sizes(self, W, D):
        with pytest.raises(StoreError):
            allocate_partitions(W, D, replicate=False)

    @given(st.integers(min_value=1, max_value=32), st.integers(min_value=1, max_value=8))
    def test_balance_and_distinct_replicas(self, W, D):
        placements, _ = allocate_partitions(W, D, replicate=True)
        assert len(placements) == W
        counts = {}
        for p in placements:
            counts[p.primary_data_node] = counts.get(p.primary_data_node, 0) + 1
            if p.replica_data_node is not None:
                assert p.replica_data_node != p.primary_data_node
            if D >= 2:
                assert p.replica_data_node is not None
        used = list(counts.values()) + [0] * (D - len(counts))
        assert max(used) - min(used) <= 1


class TestPartitionOf:
    def test_identity_hash(self):
        assert partition_of(1, 2) == 1
        assert partition_of(2, 2) == 2

    def test_out_of_range(self):
        with pytest.raises(StoreError):
            partition_of(3, 2)
        with pytest.raises(StoreError):
            partition_of(0, 2)
