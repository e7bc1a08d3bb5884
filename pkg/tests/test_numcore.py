"""Tensor-op semantics, gradient checks against finite differences, Adam."""
import numpy as np
import pytest

import ubsdetect.numcore as nc
from ubsdetect.errors import BadMagic, NonFiniteInput, ShapeMismatch, TruncatedFile
from ubsdetect.numcore import (
    AdamState,
    Mat,
    Param,
    adam_step,
    backward,
    finite_difference_check,
    load_checkpoint,
    save_checkpoint,
)


def scalar_sum(m: Mat) -> Mat:
    """ones_row @ m @ ones_col: reduces any node to a 1x1 loss."""
    left = Mat(np.ones((1, m.rows)))
    right = Mat(np.ones((m.cols, 1)))
    return nc.matmul(nc.matmul(left, m), right)


class TestOpSemantics:
    def test_softmax_symmetry(self):
        out = nc.softmax_rows(Mat([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        x = Mat(rng.uniform(-50, 50, size=(40, 17)))
        out = nc.softmax_rows(x)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)

    def test_masked_softmax_matches_mask_then_softmax(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 9))
        keep = np.array([True, False, True, True, False, True, True, True, False])
        fused = nc.masked_softmax_rows(Mat(x), keep)
        composed = nc.softmax_rows(nc.mask_cols(Mat(x), keep))
        np.testing.assert_allclose(fused.data, composed.data, atol=1e-15)
        assert (fused.data[:, ~keep] == 0.0).all()

    def test_mse_masked_identity_is_zero(self):
        x = np.arange(6.0).reshape(2, 3)
        loss = nc.mse_masked(Mat(x), x, np.ones((2, 3), dtype=bool))
        assert loss.item() == 0.0

    def test_mse_masked_counts_only_true_cells(self):
        loss = nc.mse_masked(Mat([[1.0, 2.0]]), [[0.0, 0.0]], [[True, False]])
        assert loss.item() == 1.0

    def test_mse_masked_empty_mask_is_zero_loss_zero_grad(self):
        pred = Mat([[1.0, 2.0]])
        loss = nc.mse_masked(pred, [[0.0, 0.0]], [[False, False]])
        assert loss.item() == 0.0
        backward(loss)
        np.testing.assert_array_equal(pred.grad, [[0.0, 0.0]])

    def test_layer_norm_rows_centered(self):
        rng = np.random.default_rng(0)
        x = Mat(rng.standard_normal((11, 8)) * 5 + 3)
        out = nc.layer_norm_rows(x, Mat(np.ones((1, 8))), Mat(np.zeros((1, 8))))
        np.testing.assert_allclose(out.data.mean(axis=1), 0.0, atol=1e-9)

    def test_dropout_eval_is_identity(self):
        x = Mat([[1.0, 2.0, 3.0]])
        assert nc.dropout(x, 0.5, np.random.default_rng(0), train=False) is x

    def test_dropout_seeded_reproducible(self):
        x = Mat(np.ones((20, 20)))
        a = nc.dropout(x, 0.3, np.random.default_rng(99), train=True)
        b = nc.dropout(x, 0.3, np.random.default_rng(99), train=True)
        np.testing.assert_array_equal(a.data, b.data)

    def test_add_broadcast_bias(self):
        out = nc.add(Mat([[1.0, 2.0], [3.0, 4.0]]), Mat([[10.0, 20.0]]))
        np.testing.assert_array_equal(out.data, [[11.0, 22.0], [13.0, 24.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nc.matmul(Mat(np.ones((2, 3))), Mat(np.ones((2, 3))))
        with pytest.raises(ShapeMismatch):
            nc.add(Mat(np.ones((2, 3))), Mat(np.ones((3, 2))))

    def test_non_finite_rejected(self):
        bad = Mat(np.ones((2, 2)))
        bad.data[0, 0] = np.nan
        with pytest.raises(NonFiniteInput):
            nc.matmul(bad, Mat(np.ones((2, 2))))
        inf = Mat(np.ones((2, 2)))
        inf.data[1, 1] = np.inf
        with pytest.raises(NonFiniteInput):
            nc.relu(inf)

    def test_softmax_rejects_all_masked_row(self):
        x = Mat(np.zeros((2, 3)))
        with pytest.raises(NonFiniteInput):
            nc.softmax_rows(nc.mask_cols(x, np.array([False, False, False])))

    def test_slice_and_concat_roundtrip(self):
        rng = np.random.default_rng(5)
        x = Mat(rng.standard_normal((4, 6)))
        parts = [nc.slice_cols(x, 0, 2), nc.slice_cols(x, 2, 6)]
        out = nc.concat_cols(parts)
        np.testing.assert_array_equal(out.data, x.data)


class TestBackward:
    def test_sum_of_linear_map_gradient_is_outer_product(self):
        # loss = sum(W @ x): dL/dW[i, j] = x[j] exactly, checked two ways
        rng = np.random.default_rng(1)
        w = Param("w", rng.standard_normal((4, 3)))
        x_fixed = rng.standard_normal((3, 1))

        def build():
            return scalar_sum(nc.matmul(w, Mat(x_fixed)))

        err = finite_difference_check(build, [w])
        assert err < 1e-4
        w.zero_grad()
        backward(build())
        np.testing.assert_allclose(w.grad, np.tile(x_fixed.T, (4, 1)), atol=1e-12)

    def test_constant_loss_zero_gradients(self):
        w = Param("w", np.ones((2, 2)))
        loss = nc.mse_masked(Mat(np.zeros((2, 2))), np.zeros((2, 2)), np.ones((2, 2), dtype=bool))
        backward(loss)
        np.testing.assert_array_equal(w.grad, np.zeros((2, 2)))

    def test_reused_node_accumulates(self):
        # loss = sum(x + x) = 2*sum(x)
        x = Param("x", np.array([[1.0, 2.0]]))
        backward(scalar_sum(nc.add(x, x)))
        np.testing.assert_allclose(x.grad, [[2.0, 2.0]])

    @pytest.mark.parametrize("seed", range(6))
    def test_random_composite_graph_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        w1 = Param("w1", rng.standard_normal((5, 4)) * 0.5)
        b1 = Param("b1", rng.standard_normal((1, 4)) * 0.1)
        g = Param("g", np.ones((1, 4)))
        b = Param("b", np.zeros((1, 4)))
        w2 = Param("w2", rng.standard_normal((4, 3)) * 0.5)
        x = rng.standard_normal((6, 5))
        target = rng.standard_normal((6, 3))
        mask = rng.random((6, 3)) < 0.7
        keep = np.array([True] * 4)

        def build():
            h = nc.add(nc.matmul(Mat(x), w1), b1)
            h = nc.layer_norm_rows(h, g, b)
            h = nc.masked_softmax_rows(h, keep)
            h = nc.relu(nc.add(h, b1))
            out = nc.matmul(h, w2)
            return nc.mse_masked(out, target, mask)

        err = finite_difference_check(build, [w1, b1, g, b, w2])
        assert err < 1e-4, f"gradient mismatch {err}"


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        # grad 1 everywhere: bias correction gives m_hat=1, v_hat=1
        p = Param("p", np.zeros((2, 2)))
        state = AdamState([p], lr=0.01)
        p.grad[:] = 1.0
        adam_step(state)
        np.testing.assert_allclose(p.data, -0.01 * np.ones((2, 2)), rtol=1e-7)

    def test_zero_grad_keeps_params_increments_t(self):
        p = Param("p", np.array([[5.0]]))
        state = AdamState([p], lr=0.1)
        adam_step(state)
        assert state.t == 1
        assert p.data[0, 0] == 5.0

    def test_updates_bounded_by_lr_constant_grad(self):
        # scripted oracle of the same recurrence, plus the |update| <= ~lr bound
        lr, g = 0.05, 3.7
        p = Param("p", np.array([[0.0]]))
        state = AdamState([p], lr=lr)
        m = v = 0.0
        prev = 0.0
        for t in range(1, 6):
            p.grad[:] = g
            adam_step(state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            expected = prev - lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            np.testing.assert_allclose(p.data[0, 0], expected, rtol=1e-10)
            assert abs(p.data[0, 0] - prev) <= lr * (1 + 1e-6)
            prev = p.data[0, 0]

    def test_grads_zeroed_after_step(self):
        p = Param("p", np.ones((3, 1)))
        state = AdamState([p], lr=0.1)
        p.grad[:] = 2.0
        adam_step(state)
        np.testing.assert_array_equal(p.grad, np.zeros((3, 1)))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        params = [Param("a", rng.standard_normal((3, 4))), Param("b.c", rng.standard_normal((1, 2)))]
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"k": 1, "nested": {"x": [1, 2]}}, params)
        config, weights = load_checkpoint(path)
        assert config == {"k": 1, "nested": {"x": [1, 2]}}
        assert set(weights) == {"a", "b.c"}
        for p in params:
            np.testing.assert_array_equal(weights[p.name], p.data)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(BadMagic):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {}, [Param("w", np.ones((4, 4)))])
        data = path.read_bytes()
        path.write_bytes(data[:-9])
        with pytest.raises(TruncatedFile):
            load_checkpoint(path)
