"""Adapter tests: identity start, gate arithmetic against a brute-force
convolution oracle, parameter ledger exactness, and base immutability.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from convadapt.adapter import (
    TaskAdapter,
    adapt_weight,
    adapted_forward_weights,
    base_task_model,
    count_task_params,
    init_adapter,
    materialize,
)
from convadapt.autodiff import Tape, Tensor, backward
from convadapt.backbone import BaseBackbone, ModelConfig, TokenizerStage
from convadapt.errors import ConfigError, UsageError
from tests.test_autodiff import conv_same_oracle
from tests.test_backbone import tiny_config


def frozen_backbone(**overrides):
    bb = BaseBackbone(tiny_config(**overrides), seed=0)
    bb.freeze()
    return bb


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestInitAdapter:
    def test_requires_frozen_backbone(self):
        bb = BaseBackbone(tiny_config(), seed=0)
        with pytest.raises(UsageError):
            init_adapter(bb, [2, 3], kernel_size=3)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            init_adapter(frozen_backbone(), [2, 3], kernel_size=4)

    def test_fresh_adapter_reproduces_base_weights_exactly(self):
        bb = frozen_backbone()
        adapter = init_adapter(bb, [2, 3], kernel_size=3)
        for l in range(bb.config.layers):
            for h in range(bb.config.heads):
                w2 = adapt_weight(bb.wq[l][h], adapter.kernels[l][h]["q"],
                                  adapter.gates[l][h]["q"], adapter.gate_mode)
                np.testing.assert_array_equal(w2.data, bb.wq[l][h].data)

    def test_same_seed_identical_heads(self):
        bb = frozen_backbone()
        a = init_adapter(bb, [2, 3], kernel_size=3, seed=11)
        b = init_adapter(bb, [2, 3], kernel_size=3, seed=11)
        np.testing.assert_array_equal(a.head_w.data, b.head_w.data)
        c = init_adapter(bb, [2, 3], kernel_size=3, seed=12)
        assert not np.array_equal(a.head_w.data, c.head_w.data)

    def test_layernorm_and_pool_copied_from_base(self):
        bb = frozen_backbone()
        adapter = init_adapter(bb, [2, 3], kernel_size=3)
        np.testing.assert_array_equal(adapter.ln1_g[0].data, bb.ln1_g[0].data)
        np.testing.assert_array_equal(adapter.pool_w.data, bb.pool_w.data)
        assert adapter.pool_w.data is not bb.pool_w.data


class TestAdaptWeight:
    def test_zero_kernel_zero_gate_halves_weight(self):
        rng = np.random.default_rng(0)
        w = Tensor(rng.normal(size=(6, 4)).astype(np.float32))
        out = adapt_weight(w, Tensor(np.zeros((3, 3), dtype=np.float32), requires_grad=True),
                           Tensor(np.zeros((), dtype=np.float32), requires_grad=True))
        np.testing.assert_allclose(out.data, 0.5 * w.data, atol=1e-7)

    @pytest.mark.parametrize("alpha", [-1.3, 0.0, 0.7])
    def test_delta_kernel_gives_one_plus_gate(self, alpha):
        rng = np.random.default_rng(1)
        w = Tensor(rng.normal(size=(5, 3)).astype(np.float32))
        delta = np.zeros((3, 3), dtype=np.float32)
        delta[1, 1] = 1.0
        out = adapt_weight(w, Tensor(delta), Tensor(np.float32(alpha)))
        np.testing.assert_allclose(
            out.data, (1.0 + sigmoid(alpha)) * w.data, atol=1e-6
        )

    def test_matches_bruteforce_oracle_single_case(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(4, 3))
        f = rng.normal(size=(3, 3))
        out = adapt_weight(Tensor(w), Tensor(f), Tensor(np.float64(0.7)))
        expected = conv_same_oracle(w, f) + sigmoid(0.7) * w
        np.testing.assert_allclose(out.data, expected, atol=1e-6)

    @pytest.mark.parametrize("batch", range(4))
    def test_matches_bruteforce_oracle_sweep(self, batch):
        # 50 random (W, F, alpha) triples per batch: 200 total
        rng = np.random.default_rng(100 + batch)
        for _ in range(50):
            r, c = rng.integers(2, 10, size=2)
            k = int(rng.choice([1, 3, 5]))
            w = rng.normal(size=(r, c))
            f = rng.normal(size=(k, k))
            alpha = float(rng.normal())
            out = adapt_weight(Tensor(w), Tensor(f), Tensor(np.float64(alpha)))
            expected = conv_same_oracle(w, f) + sigmoid(alpha) * w
            np.testing.assert_allclose(out.data, expected, atol=1e-6)

    def test_gate_mode_off_is_pure_convolution(self):
        rng = np.random.default_rng(3)
        w, f = rng.normal(size=(4, 4)), rng.normal(size=(3, 3))
        out = adapt_weight(Tensor(w), Tensor(f), Tensor(np.float64(5.0)), "off")
        np.testing.assert_allclose(out.data, conv_same_oracle(w, f), atol=1e-10)

    def test_gate_mode_always_on_adds_full_weight(self):
        rng = np.random.default_rng(4)
        w, f = rng.normal(size=(4, 4)), rng.normal(size=(3, 3))
        out = adapt_weight(Tensor(w), Tensor(f), Tensor(np.float64(-5.0)), "always_on")
        np.testing.assert_allclose(out.data, conv_same_oracle(w, f) + w, atol=1e-10)

    def test_large_negative_alpha_approaches_off_mode(self):
        rng = np.random.default_rng(5)
        w, f = rng.normal(size=(6, 4)), rng.normal(size=(5, 5))
        gated = adapt_weight(Tensor(w), Tensor(f), Tensor(np.float64(-30.0)))
        off = adapt_weight(Tensor(w), Tensor(f), Tensor(np.float64(0.0)), "off")
        np.testing.assert_allclose(gated.data, off.data, atol=1e-6)

    def test_affine_in_gate_value(self):
        # with F fixed, W'' is affine in sigmoid(alpha)
        rng = np.random.default_rng(6)
        w, f = rng.normal(size=(5, 5)), rng.normal(size=(3, 3))
        outs = {}
        for alpha in (-0.8, 0.3, 1.9):
            outs[alpha] = adapt_weight(Tensor(w), Tensor(f), Tensor(np.float64(alpha))).data
        conv = conv_same_oracle(w, f)
        for alpha, out in outs.items():
            np.testing.assert_allclose(out, conv + sigmoid(alpha) * w, atol=1e-10)

    def test_base_weight_receives_no_gradient(self):
        w = Tensor(np.ones((4, 4), dtype=np.float64), requires_grad=True)
        f = Tensor(np.zeros((3, 3), dtype=np.float64), requires_grad=True)
        a = Tensor(np.float64(0.0), requires_grad=True)
        with Tape():
            backward(adapt_weight(w, f, a).sum())
        assert w.grad is None
        assert f.grad is not None and a.grad is not None

    def test_unknown_gate_mode_rejected(self):
        with pytest.raises(ConfigError):
            adapt_weight(Tensor(np.ones((3, 3))), Tensor(np.zeros((1, 1))),
                         Tensor(np.float64(0.0)), "sometimes")


class TestMaterialize:
    def test_identity_start_matches_base_pooled_features(self):
        bb = frozen_backbone()
        adapter = init_adapter(bb, [2, 3], kernel_size=3)
        model = materialize(bb, adapter)
        base = base_task_model(bb)
        rng = np.random.default_rng(7)
        images = rng.random((100, 1, 8, 8)).astype(np.float32)
        diff = np.abs(model.pooled_features(images) - base.pooled_features(images))
        assert diff.max() <= 1e-6

    def test_materialize_twice_bit_identical(self):
        bb = frozen_backbone()
        adapter = init_adapter(bb, [2, 3], kernel_size=5, seed=3)
        m1 = materialize(bb, adapter)
        m2 = materialize(bb, adapter)
        for lw1, lw2 in zip(m1.weights.layers, m2.weights.layers):
            for t1, t2 in zip(lw1.wq + lw1.wk + lw1.wv, lw2.wq + lw2.wk + lw2.wv):
                np.testing.assert_array_equal(t1.data, t2.data)

    def test_materialized_model_is_isolated_from_later_adapter_edits(self):
        bb = frozen_backbone()
        adapter = init_adapter(bb, [2, 3], kernel_size=3)
        model = materialize(bb, adapter)
        before = model.predict_logits(np.zeros((1, 1, 8, 8), dtype=np.float32)).copy()
        adapter.head_w.data[:] += 1.0
        adapter.kernels[0][0]["q"].data[:] += 0.5
        after = model.predict_logits(np.zeros((1, 1, 8, 8), dtype=np.float32))
        np.testing.assert_array_equal(before, after)

    def test_config_mismatch_rejected(self):
        bb = frozen_backbone()
        other = BaseBackbone(tiny_config(embed_dim=16, heads=2,
                                         tokenizer=[TokenizerStage(out_channels=16)]),
                             seed=0)
        other.freeze()
        adapter = init_adapter(other, [2, 3], kernel_size=3)
        with pytest.raises(ConfigError):
            materialize(bb, adapter)

    def test_gate_mode_off_materializes_pure_convolution(self):
        bb = frozen_backbone()
        adapter = init_adapter(bb, [2, 3], kernel_size=3, gate_mode="off")
        model = materialize(bb, adapter)
        w = bb.wq[0][0].data
        f = adapter.kernels[0][0]["q"].data
        np.testing.assert_allclose(
            model.weights.layers[0].wq[0].data,
            conv_same_oracle(w.astype(np.float64), f.astype(np.float64)).astype(np.float32),
            atol=1e-6,
        )

    def test_training_view_shares_frozen_pieces(self):
        bb = frozen_backbone()
        adapter = init_adapter(bb, [2, 3], kernel_size=3)
        view = adapted_forward_weights(bb, adapter)
        assert view.layers[0].wo is bb.wo[0]
        assert view.layers[0].ffn_w1 is bb.ffn_w1[0]
        assert view.pool_w is adapter.pool_w


class TestParamLedger:
    def test_reference_profile_counts(self):
        cfg = SimpleNamespace(embed_dim=256, layers=6, heads=4)
        ledger = count_task_params(cfg, kernel_size=15, classes_t=10)
        assert ledger.kernels == 16200
        assert ledger.gates == 72
        assert ledger.layernorms == 6656
        assert ledger.pool == 257
        assert ledger.head == 2570
        assert ledger.total == 25755

    def test_small_profile_counts(self):
        cfg = SimpleNamespace(embed_dim=64, layers=2, heads=2)
        ledger = count_task_params(cfg, kernel_size=7, classes_t=2)
        assert (ledger.kernels, ledger.gates, ledger.layernorms,
                ledger.pool, ledger.head) == (588, 12, 640, 65, 130)
        assert ledger.total == 1435

    def test_degenerate_no_layers(self):
        cfg = SimpleNamespace(embed_dim=32, layers=0, heads=0)
        ledger = count_task_params(cfg, kernel_size=1, classes_t=4)
        assert ledger.kernels == 0 and ledger.gates == 0
        assert ledger.layernorms == 2 * 32
        assert ledger.pool == 33
        assert ledger.head == 32 * 4 + 4

    def test_ledger_matches_enumerated_parameters(self):
        for overrides, k, classes in [
            (dict(), 3, [0, 1]),
            (dict(embed_dim=16, heads=4, layers=2,
                  tokenizer=[TokenizerStage(out_channels=16)]), 5, [4, 5, 6]),
        ]:
            bb = frozen_backbone(**overrides)
            adapter = init_adapter(bb, classes, kernel_size=k)
            ledger = count_task_params(bb.config, k, len(classes))
            assert adapter.num_parameters() == ledger.total


class TestBaseImmutability:
    def test_adapter_construction_and_materialization_leave_digest_alone(self):
        bb = frozen_backbone()
        digest = bb.digest()
        adapter = init_adapter(bb, [2, 3], kernel_size=3)
        materialize(bb, adapter)
        adapted_forward_weights(bb, adapter)
        assert bb.digest() == digest
