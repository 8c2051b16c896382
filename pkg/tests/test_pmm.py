"""
Tests for plane layouts, the rotation schedule and the sharded operators
"""

import pytest
import numpy as np
import sys
import os

from numpy.testing import assert_allclose, assert_array_equal

# Add the backend directory to the path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from backend.features.comm import Communicator, build_grid, local_groups, run_ranks
from backend.features.graph import CsrMatrix, csr_transpose
from backend.features.pmm import (
    EvenPartition,
    Layout,
    RotationSchedule,
    ShardedTensor,
    assemble,
    dropout_keep_mask,
    fused_elementwise_bwd,
    fused_elementwise_fwd,
    parallel_cross_entropy,
    parallel_rmsnorm_fwd,
    rmsnorm_bwd,
    rotation_plane,
    sharded_gemm,
    sharded_gemm_bwd,
    sharded_spmm,
    sharded_spmm_bwd,
)
from backend.features.pmm.layout import param_block
from backend.features.comm.partition import block_range
from backend.features.utils.errors import ContractViolation, InputError

GRIDS = [(1, 1, 1), (2, 1, 1), (1, 2, 1), (1, 1, 2), (2, 2, 2), (3, 2, 1), (1, 3, 3)]


def _on_grid(dims, fn):
    comm = Communicator(build_grid(1, *dims), timeout=60)
    return run_ranks(comm, lambda rc: fn(rc.groups()))


def _adjacency_block(dense, layout, groups):
    n = dense.shape[0]
    rows, cols = groups[layout.row_axis], groups[layout.col_axis]
    r0, r1 = block_range(n, rows.size, rows.index)
    c0, c1 = block_range(n, cols.size, cols.index)
    return CsrMatrix.from_dense(dense[r0:r1, c0:c1])


@pytest.fixture
def sparse_dense():
    rng = np.random.default_rng(11)
    dense = rng.standard_normal((9, 9)).astype(np.float32)
    dense[rng.random((9, 9)) < 0.6] = 0.0
    return dense


class TestRotationSchedule:
    """Plane sequence and layout chaining"""

    def test_planes(self):
        assert [rotation_plane(l) for l in range(1, 5)] == ["ZX", "YZ", "XY", "ZX"]

    def test_period_three(self):
        for l in range(1, 10):
            assert rotation_plane(l + 3) == rotation_plane(l)

    def test_layouts_chain(self):
        schedule = RotationSchedule(5)
        plans = schedule.layers
        for prev, nxt in zip(plans, plans[1:]):
            assert prev.features_out == nxt.features_in
        for plan in plans:
            assert plan.adjacency.col_axis == plan.features_in.row_axis
            assert plan.weight.row_axis == plan.aggregated.col_axis
        assert schedule.logits.row_axis == schedule.output_features.row_axis
        assert len(schedule.adjacency_layouts) == 3

    def test_invalid_layer(self):
        with pytest.raises(InputError):
            rotation_plane(0)
        with pytest.raises(InputError):
            Layout("X", "X")

    def test_xy_and_yx_share_a_plane(self):
        assert Layout("X", "Y").plane == Layout("Y", "X").plane == "XY"


class TestShardedSpmm:
    """Aggregation equals the dense product"""

    def test_two_way_example(self):
        a = np.array([[1, 2], [3, 4]], dtype=np.float32)
        f = np.array([[1], [2]], dtype=np.float32)

        def fn(groups):
            f_t = ShardedTensor.from_global(f, Layout("X", "Y"), EvenPartition(2), EvenPartition(1), groups)
            h = sharded_spmm(_adjacency_block(a, Layout("Z", "X"), groups), f_t, groups)
            return h.local

        for out in _on_grid((2, 1, 1), fn):
            assert_array_equal(out, [[5], [11]])

    @pytest.mark.parametrize("dims", GRIDS)
    def test_forward_and_backward_oracle(self, dims, sparse_dense):
        rng = np.random.default_rng(2)
        f = rng.standard_normal((9, 4)).astype(np.float32)
        g = rng.standard_normal((9, 4)).astype(np.float32)
        f_layout = Layout("Y", "Z")
        a_layout = f_layout.adjacency()

        def fn(groups):
            rows, cols = EvenPartition(9), EvenPartition(4)
            a_loc = _adjacency_block(sparse_dense, a_layout, groups)
            h = sharded_spmm(a_loc, ShardedTensor.from_global(f, f_layout, rows, cols, groups), groups)
            grad_h = ShardedTensor.from_global(g, h.layout, rows, cols, groups)
            grad_f = sharded_spmm_bwd(csr_transpose(a_loc), grad_h, groups)
            return h, grad_f

        results = _on_grid(dims, fn)
        assert_allclose(assemble([h for h, _ in results]), sparse_dense @ f, rtol=1e-5, atol=1e-5)
        assert_allclose(assemble([gf for _, gf in results]), sparse_dense.T @ g, rtol=1e-5, atol=1e-5)
        assert all(gf.layout == f_layout for _, gf in results)

    def test_shape_mismatch(self):
        groups = local_groups()
        f = ShardedTensor.from_global(np.ones((3, 2)), Layout("X", "Y"), EvenPartition(3), EvenPartition(2), groups)
        with pytest.raises(ContractViolation):
            sharded_spmm(CsrMatrix.from_dense(np.eye(4)), f, groups)


class TestShardedGemm:
    """Projection and its two gradients"""

    @pytest.mark.parametrize("dims", GRIDS)
    @pytest.mark.parametrize("overlap", [False, True])
    def test_oracle(self, dims, overlap):
        rng = np.random.default_rng(5)
        h = rng.standard_normal((7, 6)).astype(np.float32)
        w = rng.standard_normal((6, 5)).astype(np.float32)
        g = rng.standard_normal((7, 5)).astype(np.float32)
        h_layout = Layout("Z", "Y")
        w_layout = Layout("Y", "X")

        def fn(groups):
            h_t = ShardedTensor.from_global(h, h_layout, EvenPartition(7), EvenPartition(6), groups)
            w_t = ShardedTensor.from_global(w, w_layout, EvenPartition(6), EvenPartition(5), groups)
            out = sharded_gemm(h_t, w_t, groups)
            grad_out = ShardedTensor.from_global(g, out.layout, EvenPartition(7), EvenPartition(5), groups)
            grad_w, grad_h = sharded_gemm_bwd(h_t, w_t, grad_out, groups, overlap=overlap)
            return out, w_t.like(grad_w), grad_h

        results = _on_grid(dims, fn)
        assert_allclose(assemble([r[0] for r in results]), h @ w, rtol=1e-5, atol=1e-5)
        assert_allclose(assemble([r[1] for r in results]), h.T @ g, rtol=1e-5, atol=1e-5)
        assert_allclose(assemble([r[2] for r in results]), g @ w.T, rtol=1e-5, atol=1e-5)

    @pytest.mark.parametrize("dims", [(1, 2, 1), (2, 2, 2), (1, 3, 3)])
    @pytest.mark.parametrize("overlap", [False, True])
    def test_bf16_contributions_stay_within_rounding_bound(self, dims, overlap):
        # each reduced contribution moves by at most 2^-8 of its magnitude
        rng = np.random.default_rng(8)
        h = rng.standard_normal((7, 6)).astype(np.float32)
        w = rng.standard_normal((6, 5)).astype(np.float32)
        g = rng.standard_normal((7, 5)).astype(np.float32)
        h_layout, w_layout = Layout("Z", "Y"), Layout("Y", "X")

        def fn(groups):
            h_t = ShardedTensor.from_global(h, h_layout, EvenPartition(7), EvenPartition(6), groups)
            w_t = ShardedTensor.from_global(w, w_layout, EvenPartition(6), EvenPartition(5), groups)
            out = sharded_gemm(h_t, w_t, groups, "bf16comm")
            grad_out = ShardedTensor.from_global(g, out.layout, EvenPartition(7), EvenPartition(5), groups)
            grad_w, grad_h = sharded_gemm_bwd(h_t, w_t, grad_out, groups, "bf16comm", overlap=overlap)
            return out, w_t.like(grad_w), grad_h

        results = _on_grid(dims, fn)
        unit = 2.0 ** -8
        checks = [
            (assemble([r[0] for r in results]), h @ w, np.abs(h) @ np.abs(w)),
            (assemble([r[1] for r in results]), h.T @ g, np.abs(h).T @ np.abs(g)),
            (assemble([r[2] for r in results]), g @ w.T, np.abs(g) @ np.abs(w).T),
        ]
        for got, exact, magnitude in checks:
            assert np.all(np.abs(got - exact) <= unit * magnitude + 1e-5)

    def test_identity_weight(self):
        groups = local_groups()
        h = np.arange(6, dtype=np.float32).reshape(2, 3)
        h_t = ShardedTensor.from_global(h, Layout("X", "Y"), EvenPartition(2), EvenPartition(3), groups)
        w_t = ShardedTensor.from_global(np.eye(3, dtype=np.float32), Layout("Y", "Z"), EvenPartition(3), EvenPartition(3), groups)
        assert_array_equal(sharded_gemm(h_t, w_t, groups).local, h)

    def test_zero_upstream_gradient(self):
        groups = local_groups()
        h_t = ShardedTensor.from_global(np.ones((2, 3)), Layout("X", "Y"), EvenPartition(2), EvenPartition(3), groups)
        w_t = ShardedTensor.from_global(np.ones((3, 2)), Layout("Y", "Z"), EvenPartition(3), EvenPartition(2), groups)
        zero = ShardedTensor.from_global(np.zeros((2, 2)), Layout("X", "Z"), EvenPartition(2), EvenPartition(2), groups)
        grad_w, grad_h = sharded_gemm_bwd(h_t, w_t, zero, groups)
        assert not grad_w.any() and not grad_h.local.any()


class TestRmsNorm:
    """Row-wise RMS normalisation with the sum of squares reduced across shards"""

    def test_known_row(self):
        groups = local_groups()
        x = ShardedTensor.from_global(np.array([[3.0, 4.0]]), Layout("X", "Y"), EvenPartition(1), EvenPartition(2), groups)
        y, _ = parallel_rmsnorm_fwd(x, np.ones(2), groups, eps=0.0)
        assert_allclose(y.local, [[0.848528, 1.131371]], atol=1e-6)

    def test_ones(self):
        groups = local_groups()
        x = ShardedTensor.from_global(np.ones((2, 4)), Layout("X", "Y"), EvenPartition(2), EvenPartition(4), groups)
        y, _ = parallel_rmsnorm_fwd(x, np.ones(4), groups)
        assert_allclose(y.local, np.ones((2, 4)) / np.sqrt(1 + 1e-6))

    def test_split_row_matches_serial(self):
        def fn(groups):
            x = ShardedTensor.from_global(np.array([[3.0, 4.0]]), Layout("X", "Y"), EvenPartition(1), EvenPartition(2), groups)
            y, _ = parallel_rmsnorm_fwd(x, np.ones(1), groups, eps=0.0)
            return y

        results = _on_grid((1, 2, 1), fn)
        assert_allclose(assemble(results), [[0.848528, 1.131371]], atol=1e-6)

    @pytest.mark.parametrize("dims", [(1, 1, 1), (2, 2, 1), (1, 2, 3)])
    def test_backward_matches_finite_differences(self, dims):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((5, 6))
        gamma = rng.uniform(0.5, 1.5, 6)
        upstream = rng.standard_normal((5, 6))
        layout = Layout("X", "Y")

        def loss(x_full, gamma_full):
            rms = np.sqrt(np.mean(x_full ** 2, axis=1, keepdims=True) + 1e-6)
            return float(np.sum(upstream * gamma_full * x_full / rms))

        def fn(groups):
            x_t = ShardedTensor.from_global(x, layout, EvenPartition(5), EvenPartition(6), groups)
            gamma_loc = gamma[param_block((6,), None, layout.col_axis, groups)]
            _, cache = parallel_rmsnorm_fwd(x_t, gamma_loc, groups)
            grad_y = ShardedTensor.from_global(upstream, layout, EvenPartition(5), EvenPartition(6), groups)
            grad_x, grad_gamma = rmsnorm_bwd(grad_y, cache, groups)
            return grad_x, (grad_gamma, x_t.col_range)

        results = _on_grid(dims, fn)
        grad_x = assemble([r[0] for r in results])
        grad_gamma = np.zeros(6)
        for _, (block, (c0, c1)) in results:
            grad_gamma[c0:c1] = block

        eps = 1e-6
        numeric_x = np.zeros_like(x)
        for i in range(5):
            for j in range(6):
                bumped = x.copy()
                bumped[i, j] += eps
                dipped = x.copy()
                dipped[i, j] -= eps
                numeric_x[i, j] = (loss(bumped, gamma) - loss(dipped, gamma)) / (2 * eps)
        numeric_gamma = np.array(
            [(loss(x, gamma + eps * np.eye(6)[j]) - loss(x, gamma - eps * np.eye(6)[j])) / (2 * eps) for j in range(6)]
        )
        assert_allclose(grad_x, numeric_x, rtol=1e-5, atol=1e-7)
        assert_allclose(grad_gamma, numeric_gamma, rtol=1e-5, atol=1e-7)

    def test_missing_cache(self):
        groups = local_groups()
        grad = ShardedTensor.from_global(np.ones((1, 2)), Layout("X", "Y"), EvenPartition(1), EvenPartition(2), groups)
        with pytest.raises(ContractViolation):
            rmsnorm_bwd(grad, None, groups)


class TestCrossEntropy:
    """Parallel log-sum-exp loss"""

    def _logits(self, values, groups, layout=Layout("X", "Y")):
        values = np.asarray(values, dtype=np.float64)
        return ShardedTensor.from_global(
            values, layout, EvenPartition(values.shape[0]), EvenPartition(values.shape[1]), groups
        )

    def test_symmetric_two_class(self):
        groups = local_groups()
        result = parallel_cross_entropy(self._logits([[0.0, 0.0]], groups), np.array([0]), groups)
        assert result.loss == pytest.approx(np.log(2.0))
        assert_allclose(result.grad.local, [[-0.5, 0.5]])

    def test_large_margin(self):
        groups = local_groups()
        result = parallel_cross_entropy(self._logits([[50.0, 0.0, 0.0]], groups), np.array([0]), groups)
        assert result.loss < 1e-12
        assert result.correct == 1

    def test_label_out_of_range(self):
        groups = local_groups()
        with pytest.raises(InputError):
            parallel_cross_entropy(self._logits([[0.0, 1.0]], groups), np.array([2]), groups)

    @pytest.mark.parametrize("dims", [(1, 2, 1), (2, 2, 1), (2, 3, 1)])
    def test_class_split_matches_serial(self, dims):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal((6, 5)) * 3
        labels = rng.integers(0, 5, 6)
        serial_groups = local_groups()
        serial = parallel_cross_entropy(self._logits(logits, serial_groups), labels, serial_groups)

        def fn(groups):
            o = self._logits(logits, groups)
            r0, r1 = o.row_range
            return parallel_cross_entropy(o, labels[r0:r1], groups)

        results = _on_grid(dims, fn)
        for result in results:
            assert result.loss == pytest.approx(serial.loss, abs=1e-6)
            assert result.correct == serial.correct
        assert_allclose(assemble([r.grad for r in results]), serial.grad.local, atol=1e-12)


class TestFusedElementwise:
    """ReLU, inverted dropout and residual in one pass"""

    def _tensor(self, values, groups=None):
        groups = groups or local_groups()
        values = np.asarray(values, dtype=np.float32)
        return ShardedTensor.from_global(
            values, Layout("X", "Y"), EvenPartition(values.shape[0]), EvenPartition(values.shape[1]), groups
        )

    def test_no_dropout(self):
        x = self._tensor([[-1.0, 2.0], [3.0, -4.0]])
        h = self._tensor([[1.0, 1.0], [1.0, 1.0]])
        out, _ = fused_elementwise_fwd(x, h, 0.0, (0, 0, 0, 1), training=True)
        assert_array_equal(out.local, [[1.0, 3.0], [4.0, 1.0]])

    def test_non_positive_input(self):
        x = self._tensor([[-1.0, 0.0]])
        out, _ = fused_elementwise_fwd(x, self._tensor([[0.0, 0.0]]), 0.5, (1, 0, 0, 1), training=True)
        assert not out.local.any()

    def test_eval_is_deterministic_identity(self):
        x = self._tensor(np.ones((3, 4)))
        first, _ = fused_elementwise_fwd(x, None, 0.7, (1, 0, 0, 1), training=False)
        second, _ = fused_elementwise_fwd(x, None, 0.7, (1, 0, 0, 1), training=False)
        assert_array_equal(first.local, np.ones((3, 4)))
        assert_array_equal(first.local, second.local)

    def test_invalid_rate(self):
        with pytest.raises(InputError):
            fused_elementwise_fwd(self._tensor([[1.0]]), None, 1.0, (0, 0, 0, 1), training=True)

    def test_dropout_preserves_expectation(self):
        x = self._tensor(np.ones((1, 100000)))
        out, _ = fused_elementwise_fwd(x, None, 0.5, (7, 0, 3, 2), training=True)
        assert abs(float(out.local.mean()) - 1.0) < 0.01

    def test_mask_blocks_tile_the_global_mask(self):
        key = (3, 1, 4, 1)
        full = dropout_keep_mask(key, (6, 8), (0, 6), (0, 8), 0.3)
        assert_array_equal(dropout_keep_mask(key, (6, 8), (2, 4), (3, 8), 0.3), full[2:4, 3:8])

    def test_replicas_apply_identical_masks(self):
        def fn(groups):
            x = self._tensor(np.ones((4, 6)), groups)
            out, _ = fused_elementwise_fwd(x, None, 0.5, (5, 0, 2, 1), training=True)
            return groups["Z"].index, out

        results = _on_grid((2, 1, 2), fn)
        replica0 = assemble([out for z, out in results if z == 0])
        replica1 = assemble([out for z, out in results if z == 1])
        assert_array_equal(replica0, replica1)

    def test_backward_replays_masks(self):
        x = self._tensor([[1.0, -1.0, 2.0, 3.0]])
        out, cache = fused_elementwise_fwd(x, self._tensor(np.zeros((1, 4))), 0.5, (2, 0, 0, 1), training=True)
        grad, residual = fused_elementwise_bwd(self._tensor(np.ones((1, 4))), cache)
        expected = np.where(out.local != 0, 2.0, 0.0)
        assert_array_equal(grad.local, expected)
        assert_array_equal(residual.local, np.ones((1, 4)))

    def test_missing_cache(self):
        with pytest.raises(ContractViolation):
            fused_elementwise_bwd(self._tensor([[1.0]]), None)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
