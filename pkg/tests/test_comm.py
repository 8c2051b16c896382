"""
Tests for the virtual grid, simulated collectives, byte accounting and resharding
"""

import pytest
import numpy as np
import sys
import os
import time
from concurrent.futures import ThreadPoolExecutor

from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal

# Add the backend directory to the path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from backend.features.comm import (
    Communicator,
    LocalGroup,
    RankCoord,
    bf16_bits,
    bf16_round,
    build_grid,
    local_groups,
    parse_grid,
    run_ranks,
)
from backend.features.comm.reshard import reshard
from backend.features.pmm import EvenPartition, Layout, ShardedTensor
from backend.features.utils.errors import CollectiveTimeoutError, ContractViolation, InputError


def _run(dims, fn, **kwargs):
    comm = Communicator(build_grid(*dims), **kwargs)
    return comm, run_ranks(comm, fn)


class TestDeviceGrid:
    """Rank <-> coordinate mapping and axis groups"""

    def test_single_rank(self):
        grid = build_grid(1, 1, 1, 1)
        assert grid.size == 1
        for axis in ("D", "X", "Y", "Z"):
            assert grid.group(axis, 0).members == (0,)

    def test_lexicographic_ranks(self):
        grid = build_grid(2, 2, 2, 2)
        assert grid.rank_of(RankCoord(0, 0, 0, 0)) == 0
        assert grid.rank_of(RankCoord(1, 1, 1, 1)) == 15
        assert grid.coord_of(5) == RankCoord(0, 1, 0, 1)

    def test_axis_groups(self):
        grid = build_grid(1, 2, 2, 1)
        assert [g.members for g in grid.groups("X")] == [(0, 2), (1, 3)]
        assert [g.members for g in grid.groups("Y")] == [(0, 1), (2, 3)]
        assert [g.members for g in grid.groups("Z")] == [(0,), (1,), (2,), (3,)]

    def test_zero_dimension_rejected(self):
        with pytest.raises(InputError):
            build_grid(1, 0, 1, 1)

    def test_parse_grid(self):
        assert parse_grid("2x2x2x1").dims == (2, 2, 2, 1)
        with pytest.raises(InputError):
            parse_grid("2x2x2")
        with pytest.raises(InputError):
            parse_grid("1x1x0x1")

    @given(st.tuples(*[st.integers(1, 3)] * 4))
    @settings(max_examples=30, deadline=None)
    def test_mapping_is_bijection(self, dims):
        grid = build_grid(*dims)
        assert sorted(grid.rank_of(grid.coord_of(r)) for r in range(grid.size)) == list(range(grid.size))
        for axis in ("D", "X", "Y", "Z"):
            members = [m for g in grid.groups(axis) for m in g.members]
            assert sorted(members) == list(range(grid.size))


class TestAllReduce:
    """Sum, max and byte accounting"""

    def test_two_members(self):
        def fn(rc):
            buffer = np.array([1.0, 2.0], dtype=np.float32) if rc.coord.x == 0 else np.array([3.0, 4.0], dtype=np.float32)
            return rc.group("X").all_reduce(buffer)

        _, results = _run((1, 2, 1, 1), fn)
        for out in results:
            assert_array_equal(out, [4.0, 6.0])

    def test_singleton_is_identity_and_free(self):
        comm, results = _run((1, 1, 1, 1), lambda rc: rc.group("X").all_reduce(np.array([0.1], dtype=np.float32), "bf16comm"))
        assert results[0][0] == np.float32(0.1)
        assert comm.stats().total_bytes == 0

    def test_bf16_contribution_rounding(self):
        def fn(rc):
            value = 0.1 if rc.coord.x == 0 else 0.0
            return rc.group("X").all_reduce(np.array([value], dtype=np.float32), "bf16comm")

        comm, results = _run((1, 2, 1, 1), fn)
        assert float(results[0][0]) == 0.10009765625
        # 2-byte payload elements
        assert comm.stats().bytes_by_axis["X"] == 2.0

    def test_byte_rule(self):
        def fn(rc):
            with rc.phase("forward"):
                return rc.group("Y").all_reduce(np.ones(4, dtype=np.float32))

        comm, _ = _run((1, 1, 2, 1), fn)
        stats = comm.stats()
        assert stats.bytes_by_axis["Y"] == 16.0
        assert stats.bytes_by_phase["forward"] == 16.0
        assert stats.bytes_by_phase["sampling"] == 0.0
        assert stats.calls["all_reduce"] == 2

    def test_stats_start_at_zero(self):
        comm = Communicator(build_grid(2, 2, 1, 1))
        assert comm.stats().total_bytes == 0

    @pytest.mark.parametrize("size", [1, 2, 3, 4])
    def test_one_hot_linearity(self, size):
        def fn(rc):
            buffer = np.zeros(size, dtype=np.float32)
            buffer[rc.coord.z] = rc.coord.z + 1
            return rc.group("Z").all_reduce(buffer)

        _, results = _run((1, 1, 1, size), fn)
        for out in results:
            assert_array_equal(out, np.arange(1, size + 1, dtype=np.float32))

    def test_fixed_order_is_deterministic(self):
        rng = np.random.default_rng(3)
        parts = rng.standard_normal((3, 50)).astype(np.float32)

        def fn(rc):
            return rc.group("X").all_reduce(parts[rc.coord.x])

        first = _run((1, 3, 1, 1), fn)[1]
        second = _run((1, 3, 1, 1), fn, threads=1)[1]
        expected = (parts[0] + parts[1]) + parts[2]
        for a, b in zip(first, second):
            assert_array_equal(a, expected)
            assert_array_equal(b, expected)

    def test_max(self):
        def fn(rc):
            return rc.group("X").all_reduce_max(np.array([rc.coord.x, -rc.coord.x], dtype=np.float32))

        _, results = _run((1, 3, 1, 1), fn)
        assert_array_equal(results[0], [2.0, 0.0])

    def test_async_uses_phase_at_submission(self):
        def fn(rc):
            with rc.phase("backward"):
                future = rc.group("X").all_reduce_async(np.ones(2, dtype=np.float32))
            return future.result()

        comm, results = _run((1, 2, 1, 1), fn)
        assert_array_equal(results[0], [2.0, 2.0])
        assert comm.stats().bytes_by_phase["backward"] == 8.0

    def test_mismatched_lengths(self):
        def fn(rc):
            return rc.group("X").all_reduce(np.zeros(rc.coord.x + 1, dtype=np.float32))

        with pytest.raises(ContractViolation):
            _run((1, 2, 1, 1), fn)

    def test_unknown_phase(self):
        comm = Communicator(build_grid(1, 1, 1, 1))
        with pytest.raises(InputError):
            with comm.rank(0).phase("warmup"):
                pass

    def test_rank_bytes(self):
        def fn(rc):
            return rc.group("D").all_reduce(np.ones(8, dtype=np.float64))

        comm, _ = _run((2, 1, 1, 1), fn)
        assert comm.recorder.rank_bytes(0)["D"] == 32.0
        assert comm.stats().axis_bytes("D", dp_group=1) == 32.0


class TestAllGather:
    """Concatenation in coordinate order"""

    def test_two_members(self):
        def fn(rc):
            return rc.group("X").all_gather(np.array([10.0 + rc.coord.x]))

        comm, results = _run((1, 2, 1, 1), fn)
        for out in results:
            assert_array_equal(out, [10.0, 11.0])
        assert comm.stats().bytes_by_axis["X"] == 16.0

    def test_empty_shard(self):
        def fn(rc):
            shard = np.zeros((0, 2)) if rc.coord.y == 0 else np.ones((2, 2))
            return rc.group("Y").all_gather(shard, axis=0)

        _, results = _run((1, 1, 2, 1), fn)
        assert results[0].shape == (2, 2)

    def test_local_group(self):
        group = LocalGroup("X")
        assert_array_equal(group.all_gather(np.arange(3)), np.arange(3))
        assert set(local_groups()) == {"D", "X", "Y", "Z"}


class TestReshard:
    """Re-partitioning preserves the global matrix"""

    @pytest.mark.parametrize("dims", [(1, 1, 1), (2, 2, 1), (2, 1, 2), (3, 2, 1), (2, 3, 3)])
    @pytest.mark.parametrize("target", [Layout("Z", "X"), Layout("Y", "Z"), Layout("Y", "X")])
    def test_matches_direct_partition(self, dims, target):
        rng = np.random.default_rng(0)
        full = rng.standard_normal((7, 5)).astype(np.float32)
        rows, cols = EvenPartition(7), EvenPartition(5)

        def fn(rc):
            groups = rc.groups()
            tensor = ShardedTensor.from_global(full, Layout("X", "Y"), rows, cols, groups)
            moved = reshard(tensor, target, groups)
            expected = ShardedTensor.from_global(full, target, rows, cols, groups)
            return moved.local, expected.local

        _, results = _run((1,) + dims, fn)
        for moved, expected in results:
            assert_array_equal(moved, expected)

    def test_same_layout_is_free(self):
        full = np.arange(12, dtype=np.float32).reshape(4, 3)

        def fn(rc):
            groups = rc.groups()
            tensor = ShardedTensor.from_global(full, Layout("X", "Y"), EvenPartition(4), EvenPartition(3), groups)
            return reshard(tensor, Layout("X", "Y"), groups) is tensor

        comm, results = _run((1, 2, 2, 1), fn)
        assert all(results)
        assert comm.stats().total_bytes == 0


class TestFailureHandling:
    """Timeouts, aborts and the compute-slot cap"""

    def test_timeout(self):
        def fn(rc):
            if rc.coord.x == 0:
                return rc.group("X").all_reduce(np.ones(1, dtype=np.float32))
            return None

        with pytest.raises(CollectiveTimeoutError):
            _run((1, 2, 1, 1), fn, timeout=0.3)

    def test_peer_failure_aborts_waiters(self):
        def fn(rc):
            if rc.coord.x == 1:
                time.sleep(0.05)
                raise RuntimeError("boom")
            return rc.group("X").all_reduce(np.ones(1, dtype=np.float32))

        with pytest.raises(RuntimeError, match="boom"):
            _run((1, 2, 1, 1), fn, timeout=30)

    def test_fewer_threads_than_ranks(self):
        def fn(rc):
            x = rc.group("X").all_reduce(np.array([1.0], dtype=np.float32))
            return rc.group("Y").all_reduce(x)

        _, results = _run((1, 2, 2, 1), fn, threads=1, timeout=30)
        assert all(float(r[0]) == 4.0 for r in results)

    def test_async_pair_under_one_slot(self):
        def fn(rc):
            x, y = rc.group("X"), rc.group("Y")
            fx = x.all_reduce_async(np.array([1.0], dtype=np.float32))
            fy = y.all_reduce_async(np.array([2.0], dtype=np.float32))
            return float(x.wait(fx)[0]), float(y.wait(fy)[0])

        _, results = _run((1, 2, 2, 1), fn, threads=1, timeout=20)
        assert results == [(2.0, 4.0)] * 4

    def test_rank_handles_shared_across_threads(self):
        comm = Communicator(build_grid(1, 2, 2, 1))
        with ThreadPoolExecutor(max_workers=8) as pool:
            handles = list(pool.map(comm.rank, [r % 4 for r in range(64)]))
        assert all(handle is comm.rank(i % 4) for i, handle in enumerate(handles))

    def test_rank_outside_grid(self):
        comm = Communicator(build_grid(1, 2, 1, 1))
        with pytest.raises(InputError):
            comm.rank(5)


# largest magnitude drawn; exact in float32 and far from the bf16 overflow edge
_F32_LIMIT = float(np.float32(1e30))


def _bf16_oracle(value: np.float32) -> float:
    """Nearest bfloat16 by exhaustive comparison of the two neighbours, ties to even"""
    bits = int(np.array(value, dtype=np.float32).view(np.uint32))
    low = bits & 0xFFFF0000
    high = low + 0x10000
    candidates = [np.array(b, dtype=np.uint32).view(np.float32) for b in (low, high)]
    x = float(value)
    d_low, d_high = abs(float(candidates[0]) - x), abs(float(candidates[1]) - x)
    if d_low < d_high or (d_low == d_high and (low >> 16) % 2 == 0):
        return float(candidates[0])
    return float(candidates[1])


class TestBfloat16:
    """Round-to-nearest-even emulation"""

    def test_known_value(self):
        assert float(bf16_round(np.float32(0.1))) == 0.10009765625

    def test_special_values(self):
        out = bf16_round(np.array([np.inf, -np.inf, np.nan, 0.0, -0.0], dtype=np.float32))
        assert out[0] == np.inf and out[1] == -np.inf
        assert np.isnan(out[2])
        assert out[3] == 0.0 and np.signbit(out[4])

    def test_bits_dtype(self):
        assert bf16_bits(np.ones(3, dtype=np.float32)).dtype == np.uint16

    @given(st.floats(min_value=-_F32_LIMIT, max_value=_F32_LIMIT, width=32))
    @settings(max_examples=300, deadline=None)
    def test_matches_oracle(self, value):
        value = np.float32(value)
        assert float(bf16_round(value)) == _bf16_oracle(value)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
