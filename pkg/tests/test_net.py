import numpy as np
import pytest

from zslkit.checkpoint import load_checkpoint, save_checkpoint
from zslkit.errors import ConfigError, InputError, NumericError, ShapeError
from zslkit.net import (
    ArchSpec,
    BlockSpec,
    Hyper,
    adam_step,
    arch_for_model,
    backward_model,
    build_model,
    forward_model,
    gcn_layer_backward,
    gcn_layer_forward,
    init_state,
    mse_loss_masked,
    residual_block_forward,
)
from zslkit.tensor import Rng, SparseAdjacency


def two_node_ahat():
    return SparseAdjacency.from_coo(2, [0, 0, 1, 1], [0, 1, 0, 1], [0.5, 0.5, 0.5, 0.5])


def random_ahat(n, rng):
    """Random-walk-normalized random symmetric graph with self-loops."""
    mask = np.triu(rng.random((n, n)) < 0.35, k=1)
    r0, c0 = np.nonzero(mask)
    rows = np.concatenate([r0, c0, np.arange(n)])
    cols = np.concatenate([c0, r0, np.arange(n)])
    adj = SparseAdjacency.from_coo(n, rows, cols, np.ones(rows.size))
    adj = adj.with_values(np.ones(adj.nnz))
    deg = adj.row_sums()
    r, c, v = adj.coo()
    return adj.with_values(v / deg[r])


class TestArchSpec:
    def test_model_1_layout(self):
        arch = arch_for_model(1, input_dim=300, output_dim=64)
        assert arch.first_layer_dim == 1024
        assert [(b.shortcut, b.layer_dims) for b in arch.blocks] == [
            ("identity", (1024,)),
            ("projection", (2048,)),
        ]
        assert arch.weight_shapes() == [
            (300, 1024), (1024, 1024), (1024, 2048), (1024, 2048), (2048, 64),
        ]

    def test_model_4_layout(self):
        arch = arch_for_model(4, input_dim=300, output_dim=64)
        assert arch.first_layer_dim == 1024
        assert [(b.shortcut, b.layer_dims) for b in arch.blocks] == [
            ("identity", (1024, 1024, 1024)),
        ]
        assert arch.weight_shapes()[-1] == (1024, 64)

    def test_model_5_interior_widening_accepted(self):
        arch = arch_for_model(5, input_dim=16, output_dim=8)
        assert arch.blocks[0].layer_dims == (1024, 2048, 1024)

    def test_models_2_and_3_layouts(self):
        arch2 = arch_for_model(2, input_dim=16, output_dim=8)
        assert arch2.first_layer_dim == 2048
        assert [(b.shortcut, b.layer_dims) for b in arch2.blocks] == [
            ("projection", (2048, 1024)),
            ("identity", (1024, 1024)),
        ]
        arch3 = arch_for_model(3, input_dim=16, output_dim=8)
        assert [(b.shortcut, b.layer_dims) for b in arch3.blocks] == [
            ("identity", (2048, 2048)),
            ("projection", (2048, 1024)),
        ]

    def test_width_divisor(self):
        arch = arch_for_model(4, input_dim=16, output_dim=32, width_divisor=64)
        assert arch.first_layer_dim == 16
        assert arch.blocks[0].layer_dims == (16, 16, 16)

    def test_unknown_model(self):
        with pytest.raises(ConfigError, match="unknown model id"):
            arch_for_model(9, input_dim=4, output_dim=4)

    def test_identity_dim_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="identity block"):
            ArchSpec(input_dim=4, first_layer_dim=8,
                     blocks=(BlockSpec((16,), "identity"),), output_dim=4)

    def test_block_depth_limits(self):
        with pytest.raises(ConfigError):
            BlockSpec((8, 8, 8, 8), "identity")
        with pytest.raises(ConfigError):
            BlockSpec((8,), "teleport")

    def test_roundtrip_dict(self):
        arch = arch_for_model(3, input_dim=12, output_dim=6, width_divisor=64)
        assert ArchSpec.from_dict(arch.to_dict()) == arch


class TestGcnLayer:
    def test_identity_everything_passthrough(self):
        h = np.array([[1.0, -2.0], [3.0, 4.0]])
        z, _ = gcn_layer_forward(
            SparseAdjacency.identity(2), h, np.eye(2),
            activate=False, dropout_rate=0.0, rng=None, training=False,
        )
        assert np.array_equal(z, h)

    def test_two_node_hand_computed(self):
        z, _ = gcn_layer_forward(
            two_node_ahat(), np.eye(2), np.eye(2),
            activate=False, dropout_rate=0.0, rng=None, training=False,
        )
        assert np.array_equal(z, np.full((2, 2), 0.5))

    def test_negative_input_activation_scales(self):
        rng = Rng(0)
        adj = random_ahat(4, np.random.default_rng(1))
        h = -np.abs(np.random.default_rng(2).standard_normal((4, 3)))
        w = np.abs(np.random.default_rng(3).standard_normal((3, 2)))
        lin, _ = gcn_layer_forward(adj, h, w, activate=False,
                                   dropout_rate=0.0, rng=rng, training=False)
        act, _ = gcn_layer_forward(adj, h, w, activate=True,
                                   dropout_rate=0.0, rng=rng, training=False)
        # adj, W >= 0 and H < 0 keep the pre-activation negative everywhere
        assert np.array_equal(act, 0.2 * lin)

    def test_backward_matches_finite_differences(self):
        gen = np.random.default_rng(4)
        adj = random_ahat(6, gen)
        h = gen.standard_normal((6, 5))
        w = gen.standard_normal((5, 4))
        r = gen.standard_normal((6, 4))  # fixed projection: loss = sum(Z * r)
        z, cache = gcn_layer_forward(adj, h, w, activate=True,
                                     dropout_rate=0.0, rng=None, training=False)
        grad_h, grad_w = gcn_layer_backward(r, cache)

        def loss(hh, ww):
            zz, _ = gcn_layer_forward(adj, hh, ww, activate=True,
                                      dropout_rate=0.0, rng=None, training=False)
            return float(np.sum(zz * r))

        eps = 1e-6
        for arr, grad in ((h, grad_h), (w, grad_w)):
            flat = arr.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                up = loss(h, w)
                flat[j] = orig - eps
                down = loss(h, w)
                flat[j] = orig
                numeric = (up - down) / (2 * eps)
                analytic = grad.reshape(-1)[j]
                denom = max(abs(numeric), abs(analytic), 1e-8)
                assert abs(numeric - analytic) / denom < 1e-6

    def test_backward_reduces_to_matmul_adjoint(self):
        gen = np.random.default_rng(5)
        h = gen.standard_normal((4, 3))
        w = gen.standard_normal((3, 2))
        grad_z = gen.standard_normal((4, 2))
        _, cache = gcn_layer_forward(SparseAdjacency.identity(4), h, w,
                                     activate=False, dropout_rate=0.0,
                                     rng=None, training=False)
        grad_h, grad_w = gcn_layer_backward(grad_z, cache)
        assert np.allclose(grad_w, h.T @ grad_z, atol=1e-15)
        assert np.allclose(grad_h, grad_z @ w.T, atol=1e-15)

    def test_zero_gradient_propagates_zeros(self):
        gen = np.random.default_rng(6)
        _, cache = gcn_layer_forward(random_ahat(3, gen), gen.standard_normal((3, 2)),
                                     gen.standard_normal((2, 2)), activate=True,
                                     dropout_rate=0.0, rng=None, training=False)
        grad_h, grad_w = gcn_layer_backward(np.zeros((3, 2)), cache)
        assert not grad_h.any() and not grad_w.any()

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            gcn_layer_forward(SparseAdjacency.identity(2), np.ones((2, 3)),
                              np.ones((4, 2)), activate=False,
                              dropout_rate=0.0, rng=None, training=False)


class TestResidualBlocks:
    def test_zero_branch_identity_block_is_exact_identity(self):
        gen = np.random.default_rng(7)
        adj = random_ahat(5, gen)
        x = gen.standard_normal((5, 4))
        out, _ = residual_block_forward(
            adj, x, [np.zeros((4, 4)), np.zeros((4, 4))], "identity",
        )
        assert np.array_equal(out, x)

    def test_projection_with_identity_pieces_is_exact_identity(self):
        gen = np.random.default_rng(8)
        x = gen.standard_normal((4, 3))
        out, _ = residual_block_forward(
            SparseAdjacency.identity(4), x, [np.zeros((3, 3))], "projection",
            proj_weight=np.eye(3),
        )
        assert np.array_equal(out, x)

    def test_single_layer_block_matches_layer_plus_input(self):
        adj = two_node_ahat()
        x = np.eye(2)
        z, _ = gcn_layer_forward(adj, x, np.eye(2), activate=True,
                                 dropout_rate=0.0, rng=None, training=False)
        out, _ = residual_block_forward(adj, x, [np.eye(2)], "identity")
        assert np.array_equal(out, z + x)

    def test_projection_requires_weight(self):
        with pytest.raises(ConfigError):
            residual_block_forward(SparseAdjacency.identity(2), np.ones((2, 2)),
                                   [np.ones((2, 2))], "projection")

    def test_branch_shortcut_dim_mismatch(self):
        with pytest.raises(ShapeError):
            residual_block_forward(SparseAdjacency.identity(2), np.ones((2, 2)),
                                   [np.ones((2, 3))], "identity")


class TestModelForward:
    def test_output_rows_unit_norm(self):
        gen = np.random.default_rng(9)
        adj = random_ahat(8, gen)
        rng = Rng(1)
        arch, state = build_model(2, 6, 10, rng, width_divisor=64)
        out, _ = forward_model(arch, state, adj, gen.standard_normal((8, 6)),
                               training=False)
        norms = np.linalg.norm(out, axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-9

    def test_eval_forward_deterministic(self):
        gen = np.random.default_rng(10)
        adj = random_ahat(6, gen)
        p = gen.standard_normal((6, 4))
        arch, state = build_model(4, 4, 8, Rng(2), width_divisor=64)
        out1, _ = forward_model(arch, state, adj, p, training=False)
        out2, _ = forward_model(arch, state, adj, p, training=False)
        assert np.array_equal(out1, out2)

    def test_training_consumes_rng_eval_does_not(self):
        gen = np.random.default_rng(11)
        adj = random_ahat(6, gen)
        p = gen.standard_normal((6, 4))
        arch, state = build_model(4, 4, 8, Rng(3), width_divisor=64)
        rng = Rng(5)
        forward_model(arch, state, adj, p, training=False, rng=rng)
        probe_after_eval = rng.random((3,))
        assert np.array_equal(probe_after_eval, Rng(5).random((3,)))
        out_a, _ = forward_model(arch, state, adj, p, training=True, rng=Rng(6))
        out_b, _ = forward_model(arch, state, adj, p, training=True, rng=Rng(6))
        assert np.array_equal(out_a, out_b)

    def test_dimension_validation(self):
        arch, state = build_model(4, 4, 8, Rng(0), width_divisor=64)
        with pytest.raises(ShapeError):
            forward_model(arch, state, SparseAdjacency.identity(3),
                          np.ones((3, 7)), training=False)

    def test_final_activation_flag_changes_output(self):
        gen = np.random.default_rng(12)
        adj = random_ahat(6, gen)
        p = gen.standard_normal((6, 4))
        arch, state = build_model(4, 4, 8, Rng(4), width_divisor=64)
        plain, _ = forward_model(arch, state, adj, p, training=False)
        activated, _ = forward_model(arch, state, adj, p, training=False,
                                     final_activation=True)
        assert not np.array_equal(plain, activated)

    def test_backward_weight_count_and_shapes(self):
        gen = np.random.default_rng(13)
        adj = random_ahat(7, gen)
        p = gen.standard_normal((7, 5))
        for model_id in range(1, 6):
            arch, state = build_model(model_id, 5, 6, Rng(model_id), width_divisor=64)
            out, tape = forward_model(arch, state, adj, p, training=False)
            grads = backward_model(arch, gen.standard_normal(out.shape), tape)
            assert [g.shape for g in grads] == [w.shape for w in state.weights]


class TestMseLossMasked:
    def test_perfect_prediction(self):
        pred = np.array([[1.0, 0.0], [0.3, 0.4]])
        mask = np.array([True, False])
        loss, grad = mse_loss_masked(pred, np.array([[1.0, 0.0], [0.0, 0.0]]), mask)
        assert loss == 0.0
        assert not grad.any()

    def test_hand_computed_single_row(self):
        pred = np.array([[1.0, 0.0]])
        gt = np.array([[0.0, 1.0]])
        loss, grad = mse_loss_masked(pred, gt, np.array([True]))
        assert loss == 1.0
        assert np.array_equal(grad, np.array([[1.0, -1.0]]))

    def test_unseen_rows_do_not_matter(self):
        gen = np.random.default_rng(14)
        pred = gen.standard_normal((5, 3))
        gt = gen.standard_normal((5, 3))
        mask = np.array([True, True, False, False, False])
        loss1, _ = mse_loss_masked(pred, gt, mask)
        pred2 = pred.copy()
        pred2[2:] = 1e6
        loss2, grad2 = mse_loss_masked(pred2, gt, mask)
        assert loss1 == loss2
        assert not grad2[2:].any()

    def test_empty_mask_rejected(self):
        with pytest.raises(ConfigError):
            mse_loss_masked(np.ones((2, 2)), np.ones((2, 2)), np.array([False, False]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss_masked(np.ones((2, 2)), np.ones((2, 3)), np.array([True, True]))


class TestAdamStep:
    def test_zero_grads_no_decay_keeps_weights(self):
        arch, state = build_model(4, 4, 8, Rng(0), width_divisor=64,
                                  hyper=Hyper(weight_decay=0.0))
        before = [w.copy() for w in state.weights]
        adam_step(state, [np.zeros_like(w) for w in state.weights])
        assert all(np.array_equal(b, w) for b, w in zip(before, state.weights))
        assert state.step == 1

    def test_first_step_matches_hand_computation(self):
        state = init_state(
            ArchSpec(input_dim=1, first_layer_dim=1, blocks=(), output_dim=1),
            Rng(1), hyper=Hyper(lr=0.001, weight_decay=0.0),
        )
        before = [w.copy() for w in state.weights]
        adam_step(state, [np.ones((1, 1)), np.ones((1, 1))])
        for b, w in zip(before, state.weights):
            delta = (w - b)[0, 0]
            assert abs(delta + 0.001) < 1e-9  # bias-corrected m/sqrt(v) == 1

    def test_deterministic(self):
        arch, s1 = build_model(4, 4, 8, Rng(7), width_divisor=64)
        _, s2 = build_model(4, 4, 8, Rng(7), width_divisor=64)
        grads = [np.full_like(w, 0.01) for w in s1.weights]
        adam_step(s1, grads)
        adam_step(s2, grads)
        assert all(np.array_equal(a, b) for a, b in zip(s1.weights, s2.weights))

    def test_nonfinite_gradient_names_layer(self):
        arch, state = build_model(4, 4, 8, Rng(0), width_divisor=64)
        grads = [np.zeros_like(w) for w in state.weights]
        grads[2][0, 0] = np.nan
        with pytest.raises(NumericError, match="weight 2"):
            adam_step(state, grads)

    def test_weight_decay_pulls_toward_zero(self):
        state = init_state(
            ArchSpec(input_dim=1, first_layer_dim=1, blocks=(), output_dim=1),
            Rng(3), hyper=Hyper(lr=0.001, weight_decay=0.1),
        )
        state.weights[0][:] = 5.0
        state.weights[1][:] = 5.0
        adam_step(state, [np.zeros((1, 1)), np.zeros((1, 1))])
        assert all(w[0, 0] < 5.0 for w in state.weights)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        arch, state = build_model(3, 6, 10, Rng(5), width_divisor=64)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arch, state, seed=42)
        arch2, state2, seed = load_checkpoint(path)
        assert arch2 == arch
        assert seed == 42
        assert state2.step == state.step
        assert all(np.array_equal(a, b) for a, b in zip(state.weights, state2.weights))
        assert state2.hyper == state.hyper

    def test_rewrite_is_byte_identical(self, tmp_path):
        arch, state = build_model(1, 4, 6, Rng(6), width_divisor=64)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, arch, state, seed=1)
        save_checkpoint(p2, arch, state, seed=1)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_rejected(self, tmp_path):
        arch, state = build_model(4, 4, 8, Rng(7), width_divisor=64)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arch, state, seed=0)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(InputError, match="truncated"):
            load_checkpoint(path)

    def test_garbage_header_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"not json\n")
        with pytest.raises(InputError):
            load_checkpoint(path)
