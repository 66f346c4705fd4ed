import numpy as np
import pytest

from hsgf.gradcheck import grad_check
from hsgf.model import (
    ModelConfig,
    classify_head,
    config_hash,
    feature_geometry,
    init_params,
    model_forward,
    model_logits,
    stem_forward,
    tokenize,
    transformer_encode,
)
from hsgf.tensor import Tensor, cross_entropy_logits, softmax

from .conftest import TINY
from .oracles import softmax_rows


def pavia_config():
    return ModelConfig(num_classes=9)


class TestInit:
    def test_default_shapes(self):
        params = init_params(pavia_config(), seed=0)
        named = dict(params.named_tensors())
        assert named["tokenizer.wa"].shape == (64, 4)
        assert named["conv3d.kernel"].shape == (8, 1, 3, 3, 3)
        assert named["conv2d.kernel"].shape == (64, 224, 3, 3)
        assert named["cls_token"].shape == (1, 64)
        assert named["pos_embed"].shape == (5, 64)
        assert named["head.weight"].shape == (64, 9)

    def test_cls_token_is_zero(self):
        params = init_params(pavia_config(), seed=3)
        assert (params.cls_token.data == 0).all()

    def test_biases_zero_gains_one(self):
        params = init_params(pavia_config(), seed=4)
        named = dict(params.named_tensors())
        for name, tensor in named.items():
            if name.endswith(".bias") or name.endswith(".shift") or ".mlp.b" in name:
                assert (tensor.data == 0).all(), name
            if name.endswith(".gain"):
                assert (tensor.data == 1).all(), name

    def test_same_seed_bitwise_identical(self):
        a = init_params(pavia_config(), seed=11)
        b = init_params(pavia_config(), seed=11)
        for (name, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors()):
            np.testing.assert_array_equal(ta.data, tb.data, err_msg=name)

    def test_xavier_scale(self):
        # std of wq should be near sqrt(2/(64+64)) = 0.125
        params = init_params(pavia_config(), seed=5)
        measured = params.te_layers[0].wq.data.std()
        assert 0.10 < measured < 0.15

    def test_pos_embedding_scale(self):
        stds = [init_params(pavia_config(), seed=s).pos_embed.data.std()
                for s in range(4)]
        assert 0.01 < np.mean(stds) < 0.03


class TestStem:
    def test_pavia_feature_shape(self):
        params = init_params(pavia_config(), seed=0)
        patch = Tensor(np.random.default_rng(0).normal(size=(30, 13, 13)).astype(np.float32))
        x = stem_forward(patch, params, pavia_config())
        assert x.shape == (81, 64)

    def test_zero_patch_zero_features(self):
        params = init_params(pavia_config(), seed=1)
        x = stem_forward(Tensor(np.zeros((30, 13, 13), dtype=np.float32)),
                         params, pavia_config())
        np.testing.assert_allclose(x.data, 0.0, atol=1e-7)

    def test_wrong_patch_shape_rejected(self):
        from hsgf.tensor import ShapeError
        params = init_params(pavia_config(), seed=2)
        with pytest.raises(ShapeError):
            stem_forward(Tensor(np.zeros((30, 11, 11), dtype=np.float32)),
                         params, pavia_config())

    def test_batched_matches_per_sample(self, tiny_config):
        params = init_params(tiny_config, seed=3, dtype=np.float64)
        rng = np.random.default_rng(3)
        batch = rng.normal(size=(3, 4, 7, 7))
        stacked = stem_forward(Tensor(batch, dtype=np.float64), params, tiny_config)
        for i in range(3):
            one = stem_forward(Tensor(batch[i], dtype=np.float64), params, tiny_config)
            np.testing.assert_allclose(stacked.data[i], one.data, atol=1e-12)


class TestTokenizer:
    def test_shapes_and_column_sums(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(81, 64)), dtype=np.float64)
        wa = Tensor(rng.normal(size=(64, 4)), dtype=np.float64)
        a = softmax(Tensor(x.data @ wa.data, dtype=np.float64), axis=-2)
        np.testing.assert_allclose(a.data.sum(axis=0), 1.0, atol=1e-6)
        tokens = tokenize(x, wa)
        assert tokens.shape == (4, 64)

    def test_identical_rows_yield_that_row(self):
        row = np.random.default_rng(5).normal(size=8)
        x = Tensor(np.tile(row, (10, 1)), dtype=np.float64)
        wa = Tensor(np.random.default_rng(6).normal(size=(8, 3)), dtype=np.float64)
        tokens = tokenize(x, wa)
        for k in range(3):
            np.testing.assert_allclose(tokens.data[k], row, atol=1e-9)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 3))
        wa = rng.normal(size=(3, 2))
        tokens = tokenize(Tensor(x, dtype=np.float64), Tensor(wa, dtype=np.float64))
        a = softmax_rows((x @ wa).T).T          # softmax over the 5 positions
        want = np.zeros((2, 3))
        for k in range(2):
            for n_i in range(5):
                want[k] += a[n_i, k] * x[n_i]
        np.testing.assert_allclose(tokens.data, want, atol=1e-6)

    def test_tokens_in_convex_hull(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(12, 6))
        tokens = tokenize(Tensor(x, dtype=np.float64),
                          Tensor(rng.normal(size=(6, 3)), dtype=np.float64))
        lo, hi = x.min(axis=0), x.max(axis=0)
        assert (tokens.data >= lo - 1e-9).all()
        assert (tokens.data <= hi + 1e-9).all()


class TestTransformer:
    def test_output_shape(self):
        cfg = pavia_config()
        params = init_params(cfg, seed=9)
        tokens = Tensor(np.random.default_rng(9).normal(size=(4, 64)).astype(np.float32))
        out = transformer_encode(tokens, params, cfg)
        assert out.shape == (5, 64)

    def test_shape_for_varied_geometry(self):
        for w, z, h in [(1, 8, 2), (3, 12, 3), (6, 16, 4)]:
            cfg = ModelConfig(num_classes=3, patch_size=7, pca_bands=4, conv3d_out=2,
                              conv2d_out=z, tokens=w, heads=h, mlp_hidden=2 * z)
            params = init_params(cfg, seed=w)
            tokens = Tensor(np.random.default_rng(w).normal(size=(w, z)).astype(np.float32))
            assert transformer_encode(tokens, params, cfg).shape == (w + 1, z)

    def test_attention_rows_sum_to_one(self):
        # reproduce the per-head attention weights and check normalization
        cfg = pavia_config()
        params = init_params(cfg, seed=10)
        layer = params.te_layers[0]
        rng = np.random.default_rng(10)
        x = rng.normal(size=(5, 64))
        q = x @ layer.wq.data
        k = x @ layer.wk.data
        dk = 64 // cfg.heads
        for head in range(cfg.heads):
            qs = q[:, head * dk:(head + 1) * dk]
            ks = k[:, head * dk:(head + 1) * dk]
            weights = softmax_rows(qs @ ks.T / np.sqrt(dk))
            np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-6)

    def test_singleton_attention_is_identity_weight(self):
        cfg = ModelConfig(num_classes=2, patch_size=7, pca_bands=4, conv3d_out=2,
                          conv2d_out=4, tokens=1, heads=2, mlp_hidden=8)
        params = init_params(cfg, seed=11)
        tokens = Tensor(np.zeros((1, 4), dtype=np.float32))
        out = transformer_encode(tokens, params, cfg)
        assert out.shape == (2, 4)
        assert np.isfinite(out.data).all()

    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError, match="divide"):
            ModelConfig(num_classes=3, patch_size=7, pca_bands=4, conv3d_out=2,
                        conv2d_out=6, tokens=2, heads=4, mlp_hidden=8)


class TestHead:
    def test_zero_weights_uniform(self):
        cfg = pavia_config()
        params = init_params(cfg, seed=12)
        params.head_weight.data[:] = 0
        probs = classify_head(Tensor(np.random.default_rng(0).normal(size=(1, 64)),
                                     dtype=np.float32), params)
        np.testing.assert_allclose(probs.data, 1 / 9, atol=1e-7)

    def test_probabilities_sum_to_one(self):
        cfg = pavia_config()
        params = init_params(cfg, seed=13)
        probs = classify_head(Tensor(np.random.default_rng(1).normal(size=(6, 64)),
                                     dtype=np.float32), params)
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)

    def test_known_logits(self):
        cfg = ModelConfig(num_classes=3, patch_size=7, pca_bands=4, conv3d_out=2,
                          conv2d_out=4, tokens=2, heads=2, mlp_hidden=8)
        params = init_params(cfg, seed=14)
        params.head_weight.data = np.eye(4, 3, dtype=np.float32)
        params.head_bias.data[:] = 0
        probs = classify_head(Tensor(np.array([[2.0, 1.0, 0.0, 5.0]], dtype=np.float32)),
                              params)
        np.testing.assert_allclose(probs.data[0], softmax_rows(np.array([[2.0, 1.0, 0.0]]))[0],
                                   atol=1e-7)


class TestFullModel:
    def test_pavia_shape_ledger(self):
        cfg = pavia_config()
        params = init_params(cfg, seed=0)
        patch = Tensor(np.random.default_rng(0).normal(size=(30, 13, 13)).astype(np.float32))
        trace = {}
        probs = model_forward(patch, params, cfg, trace=trace)
        assert trace["conv3d"] == (8, 28, 11, 11)
        assert trace["gsf"] == (8, 28, 11, 11)
        assert trace["merge"] == (224, 11, 11)
        assert trace["conv2d"] == (64, 9, 9)
        assert trace["features"] == (81, 64)
        assert trace["attention"] == (81, 4)
        assert trace["tokens"] == (4, 64)
        assert trace["te_in"] == (5, 64)
        assert trace["te_out"] == (5, 64)
        assert probs.shape == (1, 9)

    def test_batch_of_pavia_patches(self):
        cfg = pavia_config()
        params = init_params(cfg, seed=1)
        batch = Tensor(np.random.default_rng(1).normal(size=(3, 30, 13, 13)).astype(np.float32))
        probs = model_forward(batch, params, cfg)
        assert probs.shape == (3, 9)
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)

    def test_duplicated_patch_identical_rows(self, tiny_config):
        params = init_params(tiny_config, seed=2)
        patch = np.random.default_rng(2).normal(size=(4, 7, 7)).astype(np.float32)
        batch = Tensor(np.stack([patch, patch]))
        probs = model_forward(batch, params, tiny_config)
        np.testing.assert_array_equal(probs.data[0], probs.data[1])

    def test_tiny_gradcheck(self, tiny_config):
        params = init_params(tiny_config, seed=3, dtype=np.float64)
        rng = np.random.default_rng(3)
        patch = Tensor(rng.normal(size=(2, 4, 7, 7)), requires_grad=True, dtype=np.float64)
        labels = np.array([1, 2])
        tensors = [patch] + params.tensors()

        def f(*ts):
            return cross_entropy_logits(model_logits(ts[0], params, tiny_config), labels)

        assert grad_check(f, tensors) < 1e-4


class TestAblationWiring:
    def base(self, **kw):
        merged = {**TINY, **kw}
        return ModelConfig(**merged)

    def test_no_gsf_removes_exactly_gate_fuse(self):
        full = {n for n, _ in init_params(self.base(), seed=0).named_tensors()}
        wo = {n for n, _ in init_params(self.base(gsf_enabled=False), seed=0).named_tensors()}
        assert full - wo == {f"gsf.{kind}.{g}.{part}" for kind in ("gate", "fuse")
                             for g in (0, 1) for part in ("kernel", "bias")}

    def test_no_te_removes_encoder_params(self):
        full = {n for n, _ in init_params(self.base(), seed=0).named_tensors()}
        wo = {n for n, _ in init_params(self.base(te_enabled=False), seed=0).named_tensors()}
        removed = full - wo
        assert "cls_token" in removed and "pos_embed" in removed
        assert all(n.startswith(("te.", "cls", "pos")) for n in removed)

    def test_no_conv3d_geometry(self):
        cfg = self.base(conv3d_enabled=False, gsf_enabled=False)
        assert feature_geometry(cfg) == (25, 4)        # (7-2)^2, conv2d_out
        params = init_params(cfg, seed=1)
        assert params.conv2d_kernel.shape == (4, 4, 3, 3)   # consumes raw bands
        patch = Tensor(np.random.default_rng(1).normal(size=(4, 7, 7)).astype(np.float32))
        assert model_forward(patch, params, cfg).shape == (1, 3)

    def test_no_conv2d_geometry(self):
        cfg = self.base(conv2d_enabled=False, mlp_hidden=0)
        n, z = feature_geometry(cfg)
        assert (n, z) == (25, 4)                        # conv3d_out*(b-2) = 2*2
        params = init_params(cfg, seed=2)
        patch = Tensor(np.random.default_rng(2).normal(size=(4, 7, 7)).astype(np.float32))
        assert model_forward(patch, params, cfg).shape == (1, 3)

    def test_spectra_only_pipeline(self):
        cfg = self.base(conv2d_enabled=False, conv3d_enabled=False,
                        gsf_enabled=False, mlp_hidden=0)
        assert feature_geometry(cfg) == (49, 4)         # s^2 rows, raw bands
        params = init_params(cfg, seed=3)
        patch = Tensor(np.random.default_rng(3).normal(size=(4, 7, 7)).astype(np.float32))
        assert model_forward(patch, params, cfg).shape == (1, 3)

    def test_spectra_only_head_divisibility_error(self):
        with pytest.raises(ValueError, match="divide"):
            self.base(conv2d_enabled=False, conv3d_enabled=False, gsf_enabled=False,
                      pca_bands=5, heads=2, mlp_hidden=0)

    def test_gsf_without_any_conv_rejected(self):
        with pytest.raises(ValueError, match="convolution"):
            self.base(conv2d_enabled=False, conv3d_enabled=False, mlp_hidden=0)

    def test_gsf_post2d_reshaped_runs(self):
        cfg = self.base(gsf_position="post2d-reshaped")
        params = init_params(cfg, seed=4)
        patch = Tensor(np.random.default_rng(4).normal(size=(4, 7, 7)).astype(np.float32))
        trace = {}
        probs = model_forward(patch, params, cfg, trace=trace)
        assert trace["gsf"] == (2, 2, 3, 3)             # grouped conv2d features
        assert probs.shape == (1, 3)

    def test_no_conv3d_with_gsf_falls_back_to_grouped_2d(self):
        cfg = self.base(conv3d_enabled=False)
        params = init_params(cfg, seed=5)
        patch = Tensor(np.random.default_rng(5).normal(size=(4, 7, 7)).astype(np.float32))
        trace = {}
        assert model_forward(patch, params, cfg, trace=trace).shape == (1, 3)
        assert "gsf" in trace

    def test_config_hash_stable_and_sensitive(self):
        a = config_hash(self.base())
        assert a == config_hash(self.base())
        assert a != config_hash(self.base(tokens=3))
